//! One gradient-check case per layer kind of the autodiff engine.
//!
//! Each case feeds its inputs through one layer and reduces the output with a
//! fixed non-uniform probe, so every output element reaches the loss with a
//! distinct weight.

use cunet::autodiff::gradcheck::{check_gradients, GradFn};
use cunet::autodiff::{ConvSpec, Graph, Real, Tensor, Var};
use cunet::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-3;
pub const TOL_F64: f64 = 1e-5;
pub const TOL_F32: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
pub enum Layer {
    ConvDown,
    ConvSame,
    BilinearUp2,
    BatchNormTrain,
    BatchNormEval,
    LeakyRelu,
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
    Dropout,
    Linear,
    LstmCell,
    Concat,
    Slice,
    Reshape,
    AdaptiveMaxPool1d,
    ChannelwiseMax,
    ChannelAffine,
    Add,
    Mul,
    WeightedBce,
    SquaredError,
}

pub struct Case {
    pub name: &'static str,
    pub layer: Layer,
    pub inputs: Vec<Tensor<f64>>,
    pub training: bool,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values bounded away from zero, so piecewise-linear kinks are never
/// within one finite-difference step.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Distinct values at least 0.01 apart, so max selections never tie.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    Tensor::from_fn(shape, |i| order[i] as f64 * 0.05 - 1.0)
}

fn probe<T: Real>(g: &mut Graph<T>, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = g.input(Tensor::from_fn(&shape, |i| T::of((0.7 * i as f64 + 0.3).sin() + 0.1)));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Targets are fixed per case and rebuilt identically at either precision.
fn target<T: Real>(shape: &[usize], binary: bool) -> Tensor<T> {
    Tensor::from_fn(shape, |i| {
        let u = ((i * 7919) % 13) as f64 / 13.0;
        T::of(if binary { (u > 0.5) as u8 as f64 } else { u })
    })
}

impl GradFn for Case {
    fn eval<T: Real>(&self, g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
        let y = match self.layer {
            Layer::ConvDown => g.conv2d(v[0], v[1], v[2], ConvSpec::DOWN)?,
            Layer::ConvSame => g.conv2d(v[0], v[1], v[2], ConvSpec::SAME)?,
            Layer::BilinearUp2 => g.upsample2(v[0])?,
            Layer::BatchNormTrain | Layer::BatchNormEval => {
                let c = g.shape(v[1])[0];
                let mean: Vec<T> = (0..c).map(|i| T::of(0.1 * i as f64)).collect();
                let var: Vec<T> = (0..c).map(|i| T::of(0.5 + 0.25 * i as f64)).collect();
                g.batch_norm(v[0], v[1], v[2], (&mean, &var))?
            }
            Layer::LeakyRelu => g.leaky_relu(v[0], 0.2),
            Layer::Relu => g.relu(v[0]),
            Layer::Sigmoid => g.sigmoid(v[0]),
            Layer::Tanh => g.tanh(v[0]),
            Layer::Softmax => g.softmax(v[0]),
            Layer::Dropout => g.dropout(v[0], 0.2),
            Layer::Linear => g.linear(v[0], v[1], v[2])?,
            Layer::LstmCell => {
                let (h, c) = g.lstm_cell(v[0], v[1], v[2], v[3], v[4], v[5], v[6])?;
                let hc = g.concat(&[h, c], 1)?;
                return probe(g, hc);
            }
            Layer::Concat => g.concat(&[v[0], v[1]], 1)?,
            Layer::Slice => g.slice(v[0], 1, 1, 2)?,
            Layer::Reshape => g.reshape(v[0], &[4, 6])?,
            Layer::AdaptiveMaxPool1d => g.adaptive_maxpool1d(v[0], 5)?,
            Layer::ChannelwiseMax => g.channelwise_max(v[0])?,
            Layer::ChannelAffine => g.channel_affine(v[0], v[1], Some(v[2]))?,
            Layer::Add => g.add(v[0], v[1])?,
            Layer::Mul => g.mul(v[0], v[1])?,
            Layer::WeightedBce => {
                let t = target(g.shape(v[0]), true);
                return g.weighted_bce(v[0], &t, 2.5, 1e-7);
            }
            Layer::SquaredError => {
                let t = target(g.shape(v[0]), false);
                return g.squared_error(v[0], &t);
            }
        };
        probe(g, y)
    }
}

pub fn cases() -> Vec<Case> {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let rng = &mut r;
    let case = |name, layer, inputs, training| Case {
        name,
        layer,
        inputs,
        training,
    };
    vec![
        case(
            "conv4x4_s2_p1",
            Layer::ConvDown,
            vec![uniform(rng, &[2, 2, 6, 4], -1.0, 1.0), uniform(rng, &[3, 2, 4, 4], -0.5, 0.5), uniform(rng, &[3], -0.5, 0.5)],
            false,
        ),
        case(
            "conv3x3_s1_p1",
            Layer::ConvSame,
            vec![uniform(rng, &[2, 3, 4, 5], -1.0, 1.0), uniform(rng, &[2, 3, 3, 3], -0.5, 0.5), uniform(rng, &[2], -0.5, 0.5)],
            false,
        ),
        case("bilinear_up2", Layer::BilinearUp2, vec![uniform(rng, &[2, 2, 3, 4], -1.0, 1.0)], false),
        case(
            "batchnorm (training)",
            Layer::BatchNormTrain,
            vec![uniform(rng, &[3, 2, 2, 3], -2.0, 2.0), uniform(rng, &[2], 0.5, 1.5), uniform(rng, &[2], -0.5, 0.5)],
            true,
        ),
        case(
            "batchnorm (eval)",
            Layer::BatchNormEval,
            vec![uniform(rng, &[2, 3, 2, 2], -2.0, 2.0), uniform(rng, &[3], 0.5, 1.5), uniform(rng, &[3], -0.5, 0.5)],
            false,
        ),
        case("leaky_relu(0.2)", Layer::LeakyRelu, vec![away_from_zero(rng, &[3, 7])], false),
        case("relu", Layer::Relu, vec![away_from_zero(rng, &[3, 7])], false),
        case("sigmoid", Layer::Sigmoid, vec![uniform(rng, &[3, 7], -4.0, 4.0)], false),
        case("tanh", Layer::Tanh, vec![uniform(rng, &[3, 7], -2.0, 2.0)], false),
        case("softmax", Layer::Softmax, vec![uniform(rng, &[3, 13], -2.0, 2.0)], false),
        case("dropout(0.2)", Layer::Dropout, vec![uniform(rng, &[4, 9], -1.0, 1.0)], true),
        case(
            "linear",
            Layer::Linear,
            vec![uniform(rng, &[3, 6], -1.0, 1.0), uniform(rng, &[4, 6], -0.5, 0.5), uniform(rng, &[4], -0.5, 0.5)],
            false,
        ),
        case(
            "lstm_cell",
            Layer::LstmCell,
            vec![
                uniform(rng, &[2, 3], -1.0, 1.0),
                uniform(rng, &[2, 4], -1.0, 1.0),
                uniform(rng, &[2, 4], -1.0, 1.0),
                uniform(rng, &[16, 3], -0.7, 0.7),
                uniform(rng, &[16, 4], -0.7, 0.7),
                uniform(rng, &[16], -0.3, 0.3),
                uniform(rng, &[16], -0.3, 0.3),
            ],
            false,
        ),
        case("concat", Layer::Concat, vec![uniform(rng, &[2, 3, 2], -1.0, 1.0), uniform(rng, &[2, 2, 2], -1.0, 1.0)], false),
        case("slice", Layer::Slice, vec![uniform(rng, &[2, 4, 3], -1.0, 1.0)], false),
        case("reshape", Layer::Reshape, vec![uniform(rng, &[2, 3, 4], -1.0, 1.0)], false),
        case("adaptive_maxpool_1d", Layer::AdaptiveMaxPool1d, vec![distinct(rng, &[2, 10])], false),
        case("channelwise_max", Layer::ChannelwiseMax, vec![distinct(rng, &[4, 6])], false),
        case(
            "channel_affine (FiLM)",
            Layer::ChannelAffine,
            vec![uniform(rng, &[2, 3, 2, 2], -1.0, 1.0), uniform(rng, &[2, 3], 0.5, 1.5), uniform(rng, &[2, 3], -0.5, 0.5)],
            false,
        ),
        case("add", Layer::Add, vec![uniform(rng, &[3, 4], -1.0, 1.0), uniform(rng, &[3, 4], -1.0, 1.0)], false),
        case("mul", Layer::Mul, vec![uniform(rng, &[3, 4], -1.0, 1.0), uniform(rng, &[3, 4], -1.0, 1.0)], false),
        // Mid-range probabilities keep the h^2 truncation error of ln p well below tolerance.
        case("weighted_bce", Layer::WeightedBce, vec![uniform(rng, &[2, 13], 0.35, 0.65)], false),
        case("squared_error", Layer::SquaredError, vec![uniform(rng, &[2, 13], 0.0, 1.0)], false),
    ]
}

/// Max relative error of one case at precision `T`.
pub fn max_rel_error<T: Real>(case: &Case) -> Result<f64> {
    Ok(check_gradients::<T>(case, &case.inputs, STEP, case.training, 11)?.max_rel_error())
}
