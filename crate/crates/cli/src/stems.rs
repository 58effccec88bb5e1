//! Directories holding one WAV per instrument.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cunet::dsp::resample;
use cunet::io::{read_wav, write_wav};
use cunet::{Instrument, Waveform, NUM_INSTRUMENTS, SAMPLE_RATE};

pub fn stem_path(dir: &Path, inst: Instrument) -> PathBuf {
    dir.join(format!("{}.wav", inst.name()))
}

/// Reads a WAV and resamples it to the working rate.
pub fn read_audio(path: &Path) -> Result<Waveform> {
    let w = read_wav(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(resample(&w, SAMPLE_RATE)?)
}

pub fn write_stems(dir: &Path, stems: &[Waveform]) -> Result<()> {
    if stems.len() != NUM_INSTRUMENTS {
        bail!("expected {NUM_INSTRUMENTS} stems, got {}", stems.len());
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (inst, w) in Instrument::ALL.iter().zip(stems) {
        let path = stem_path(dir, *inst);
        write_wav(&path, w).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// All instrument stems of `dir`. Missing files become silence of the
/// common length, or of `len` when given; lengths must agree.
pub fn read_stems(dir: &Path, len: Option<usize>) -> Result<Vec<Waveform>> {
    let mut found = Vec::with_capacity(NUM_INSTRUMENTS);
    for inst in Instrument::ALL {
        let path = stem_path(dir, inst);
        found.push(if path.exists() { Some(read_audio(&path)?) } else { None });
    }
    let len = match len.or_else(|| found.iter().flatten().map(Waveform::len).next()) {
        Some(n) => n,
        None => bail!("no instrument stems in {}", dir.display()),
    };
    Instrument::ALL
        .iter()
        .zip(found)
        .map(|(inst, w)| match w {
            Some(w) if w.len() != len => bail!("{} has {} samples, expected {len}", stem_path(dir, *inst).display(), w.len()),
            Some(w) => Ok(w),
            None => Ok(Waveform::zeros(len, SAMPLE_RATE)),
        })
        .collect()
}
