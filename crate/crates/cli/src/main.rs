fn main() {
    std::process::exit(cunet_cli::run(std::env::args_os()));
}
