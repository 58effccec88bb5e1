use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::context::{motion_maxpool_var, visual_var, ContextInput, ContextVector};
use super::{Conditioning, ContextKind, Heads, MotionMode, UNetConfig, BN_MOMENTUM, CONTEXT_DIM, LEAKY_SLOPE, VISUAL_FEATURE_DIM};
use crate::autodiff::{ConvSpec, Graph, ParamId, ParamStore, Tensor, Var};
use crate::dsp::MagSpec;
use crate::error::{invalid, shape_err, Result};
use crate::masks::{Mask, MaskKind};

/// Where a FiLM layer modulates the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilmSite {
    /// After batch-norm of encoder block `j` (0-based).
    Encoder(usize),
    /// Output of the last decoder block, before the mask convolution.
    Final,
}

/// Generated FiLM coefficients of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FilmLayer {
    pub site: FilmSite,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilmParams {
    pub layers: Vec<FilmLayer>,
}

#[derive(Debug, Clone, Copy)]
struct ConvBn {
    w: ParamId,
    b: ParamId,
    gamma: ParamId,
    beta: ParamId,
    bn: usize,
}

#[derive(Debug, Clone)]
struct Decoder {
    blocks: Vec<ConvBn>,
    mask_w: ParamId,
    mask_b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct FilmGen {
    site: FilmSite,
    w: ParamId,
    b: ParamId,
    channels: usize,
}

#[derive(Debug, Clone, Copy)]
struct LstmIds {
    w_ih: ParamId,
    w_hh: ParamId,
    b_ih: ParamId,
    b_hh: ParamId,
}

/// Running batch-norm statistics of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub name: String,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

/// A built separator: parameters, batch-norm buffers and wiring.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: UNetConfig,
    params: ParamStore<f32>,
    running: Vec<RunningStats>,
    encoder: Vec<ConvBn>,
    decoders: Vec<Decoder>,
    film: Vec<FilmGen>,
    lstm: Option<LstmIds>,
    final_fc: Option<(ParamId, ParamId)>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound) as f32)
}

/// Kaiming-uniform bound for a ReLU-family layer with `fan_in` inputs.
fn kaiming(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

struct Builder {
    params: ParamStore<f32>,
    running: Vec<RunningStats>,
}

impl Builder {
    fn conv_bn(&mut self, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize, k: usize) -> ConvBn {
        let w = self.params.add(format!("{name}.conv.w"), uniform(rng, &[cout, cin, k, k], kaiming(cin * k * k)));
        let b = self.params.add(format!("{name}.conv.b"), Tensor::zeros(&[cout]));
        let gamma = self.params.add(format!("{name}.bn.gamma"), Tensor::full(&[cout], 1.0));
        let beta = self.params.add(format!("{name}.bn.beta"), Tensor::zeros(&[cout]));
        self.running.push(RunningStats {
            name: format!("{name}.bn"),
            mean: vec![0.0; cout],
            var: vec![1.0; cout],
        });
        ConvBn {
            w,
            b,
            gamma,
            beta,
            bn: self.running.len() - 1,
        }
    }

    fn linear(&mut self, rng: &mut ChaCha8Rng, name: &str, inp: usize, out: usize, bias: Tensor<f32>) -> (ParamId, ParamId) {
        let w = self.params.add(format!("{name}.w"), uniform(rng, &[out, inp], 1.0 / (inp as f64).sqrt()));
        let b = self.params.add(format!("{name}.b"), bias);
        (w, b)
    }
}

impl Model {
    /// Builds a model with seed-deterministic initialization. Parameters
    /// shared with the unconditioned network come from their own random
    /// stream, so conditioning never changes them.
    pub fn build(cfg: UNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut shared = ChaCha8Rng::seed_from_u64(seed);
        let mut cond = ChaCha8Rng::seed_from_u64(seed);
        cond.set_stream(1);
        let mut b = Builder {
            params: ParamStore::new(),
            running: Vec::new(),
        };

        let mut encoder = Vec::with_capacity(cfg.blocks);
        for j in 0..cfg.blocks {
            let cin = if j == 0 { 1 } else { cfg.channels(j - 1) };
            encoder.push(b.conv_bn(&mut shared, &format!("enc{j}"), cin, cfg.channels(j), ConvSpec::DOWN.kernel));
        }

        let (n_heads, per_head) = match cfg.heads {
            Heads::Single => (1, cfg.n_masks),
            Heads::Multi => (cfg.n_masks, 1),
        };
        let last = cfg.blocks - 1;
        let mut decoders = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let prefix = if n_heads == 1 { "dec".to_string() } else { format!("head{h}.dec") };
            let mut blocks = Vec::with_capacity(cfg.blocks);
            for k in 0..cfg.blocks {
                let cin = if k == 0 { cfg.channels(last) } else { 2 * cfg.channels(last - k) };
                let cout = cfg.channels(last.saturating_sub(k + 1));
                blocks.push(b.conv_bn(&mut shared, &format!("{prefix}{k}"), cin, cout, ConvSpec::SAME.kernel));
            }
            let c0 = cfg.channels(0);
            let mname = if n_heads == 1 { "mask".to_string() } else { format!("head{h}.mask") };
            let mask_w = b.params.add(format!("{mname}.w"), uniform(&mut shared, &[per_head, c0, 3, 3], kaiming(c0 * 9)));
            let mask_b = b.params.add(format!("{mname}.b"), Tensor::zeros(&[per_head]));
            decoders.push(Decoder { blocks, mask_w, mask_b });
        }

        let dim = cfg.context.dim();
        let sites: Vec<FilmSite> = match cfg.conditioning {
            Conditioning::FilmBottleneck => vec![FilmSite::Encoder(last)],
            Conditioning::FilmEncoder => (0..cfg.blocks).map(FilmSite::Encoder).collect(),
            Conditioning::FilmFinal => vec![FilmSite::Final],
            _ => Vec::new(),
        };
        let film = sites
            .into_iter()
            .map(|site| {
                let (channels, name) = match site {
                    FilmSite::Encoder(j) => (cfg.channels(j), format!("film.enc{j}")),
                    FilmSite::Final => (cfg.channels(0), "film.final".to_string()),
                };
                // Bias starts at gamma = 1, beta = 0.
                let bias = Tensor::from_fn(&[2 * channels], |i| if i < channels { 1.0 } else { 0.0 });
                let (w, bb) = b.linear(&mut cond, &name, dim, 2 * channels, bias);
                FilmGen { site, w, b: bb, channels }
            })
            .collect();

        let lstm = (cfg.context == ContextKind::Motion(MotionMode::Lstm)).then(|| {
            let bound = 1.0 / (CONTEXT_DIM as f64).sqrt();
            let h4 = 4 * CONTEXT_DIM;
            LstmIds {
                w_ih: b.params.add("lstm.w_ih", uniform(&mut cond, &[h4, VISUAL_FEATURE_DIM], bound)),
                w_hh: b.params.add("lstm.w_hh", uniform(&mut cond, &[h4, CONTEXT_DIM], bound)),
                b_ih: b.params.add("lstm.b_ih", uniform(&mut cond, &[h4], bound)),
                b_hh: b.params.add("lstm.b_hh", uniform(&mut cond, &[h4], bound)),
            }
        });
        let final_fc = (cfg.conditioning == Conditioning::FinalMultiply)
            .then(|| b.linear(&mut cond, "final_fc", dim, cfg.n_masks, Tensor::zeros(&[cfg.n_masks])));

        Ok(Self {
            cfg,
            params: b.params,
            running: b.running,
            encoder,
            decoders,
            film,
            lstm,
            final_fc,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.running
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Sets every FiLM generator to emit `gamma = 1, beta = 0` for any context.
    pub fn force_film_identity(&mut self) {
        self.force_film_constant(1.0, 0.0);
    }

    /// Overwrites the FiLM generators so they emit the given constants.
    pub fn force_film_constant(&mut self, gamma: f32, beta: f32) {
        for f in &self.film {
            self.params.value_mut(f.w).data_mut().fill(0.0);
            let c = f.channels;
            for (i, v) in self.params.value_mut(f.b).data_mut().iter_mut().enumerate() {
                *v = if i < c { gamma } else { beta };
            }
        }
    }

    fn context_var(&self, g: &mut Graph<f32>, ctx: &[ContextInput], n: usize) -> Result<Var> {
        if ctx.len() != n {
            return Err(invalid(format!("{} context inputs for a batch of {n}", ctx.len())));
        }
        let mut rows = Vec::with_capacity(n);
        for c in ctx {
            c.validate()?;
            if !c.matches(self.cfg.context) {
                return Err(invalid(format!("model expects {:?} context", self.cfg.context)));
            }
            let v = match (c, self.cfg.context) {
                (ContextInput::Label(l), _) => g.input(Tensor::new(vec![1, l.len()], l.clone())?),
                (ContextInput::Visual(frames), _) => visual_var(g, frames)?,
                (ContextInput::Motion(seqs), ContextKind::Motion(MotionMode::Maxpool)) => motion_maxpool_var(g, seqs)?,
                (ContextInput::Motion(seqs), _) => self.lstm_var(g, seqs)?,
            };
            rows.push(v);
        }
        if rows.len() == 1 {
            Ok(rows[0])
        } else {
            g.concat(&rows, 0)
        }
    }

    /// Shared LSTM over each source's frames; max of the last hidden states.
    fn lstm_var(&self, g: &mut Graph<f32>, seqs: &[Vec<Vec<f32>>]) -> Result<Var> {
        let ids = self.lstm.ok_or_else(|| invalid("model has no motion LSTM"))?;
        let w_ih = g.param(&self.params, ids.w_ih);
        let w_hh = g.param(&self.params, ids.w_hh);
        let b_ih = g.param(&self.params, ids.b_ih);
        let b_hh = g.param(&self.params, ids.b_hh);
        let mut last = Vec::with_capacity(seqs.len());
        for seq in seqs {
            let mut h = g.input(Tensor::zeros(&[1, CONTEXT_DIM]));
            let mut c = g.input(Tensor::zeros(&[1, CONTEXT_DIM]));
            for frame in seq {
                let x = g.input(Tensor::new(vec![1, frame.len()], frame.clone())?);
                (h, c) = g.lstm_cell(x, h, c, w_ih, w_hh, b_ih, b_hh)?;
            }
            last.push(h);
        }
        let stacked = if last.len() == 1 { last[0] } else { g.concat(&last, 0)? };
        g.channelwise_max(stacked)
    }

    /// `(gamma, beta)` vars of shape `(N, C)` for one generator.
    fn film_vars(&self, g: &mut Graph<f32>, gen: &FilmGen, ctx: Var) -> Result<(Var, Var)> {
        let w = g.param(&self.params, gen.w);
        let b = g.param(&self.params, gen.b);
        let lin = g.linear(ctx, w, b)?;
        let gamma = g.slice(lin, 1, 0, gen.channels)?;
        let beta = g.slice(lin, 1, gen.channels, gen.channels)?;
        Ok((gamma, beta))
    }

    fn conv_bn(&self, g: &mut Graph<f32>, x: Var, p: &ConvBn, spec: ConvSpec) -> Result<Var> {
        let w = g.param(&self.params, p.w);
        let b = g.param(&self.params, p.b);
        let h = g.conv2d(x, w, b, spec)?;
        let gamma = g.param(&self.params, p.gamma);
        let beta = g.param(&self.params, p.beta);
        let stats = &self.running[p.bn];
        g.batch_norm(h, gamma, beta, (&stats.mean, &stats.var))
    }

    /// Forward pass from `(N, 1, F, T)` inputs to `(N, n_masks, F, T)` masks.
    ///
    /// `ctx` holds one context per batch item and is ignored by
    /// unconditioned models.
    pub fn forward(&self, g: &mut Graph<f32>, x: Var, ctx: &[ContextInput]) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let m = self.cfg.size_multiple();
        if s.len() != 4 || s[1] != 1 || !s[2].is_multiple_of(m) || !s[3].is_multiple_of(m) || s[2] == 0 || s[3] == 0 {
            return Err(shape_err(format!("input must be (N, 1, F, T) with F, T multiples of {m}, got {s:?}")));
        }
        let n = s[0];
        let ctx_var = match self.cfg.conditioning {
            Conditioning::None => None,
            _ => Some(self.context_var(g, ctx, n)?),
        };
        let mut film = Vec::with_capacity(self.film.len());
        for gen in &self.film {
            film.push((gen.site, self.film_vars(g, gen, ctx_var.expect("conditioned model"))?));
        }
        let film_at = |site: FilmSite| film.iter().find(|(s, _)| *s == site).map(|&(_, c)| c);

        let mut skips = Vec::with_capacity(self.cfg.blocks);
        let mut h = x;
        for (j, p) in self.encoder.iter().enumerate() {
            h = self.conv_bn(g, h, p, ConvSpec::DOWN)?;
            if let Some((gamma, beta)) = film_at(FilmSite::Encoder(j)) {
                h = g.channel_affine(h, gamma, Some(beta))?;
            }
            h = g.leaky_relu(h, LEAKY_SLOPE);
            skips.push(h);
        }

        let last = self.cfg.blocks - 1;
        let mut heads = Vec::with_capacity(self.decoders.len());
        for dec in &self.decoders {
            let mut h = skips[last];
            for (k, p) in dec.blocks.iter().enumerate() {
                h = g.upsample2(h)?;
                h = self.conv_bn(g, h, p, ConvSpec::SAME)?;
                h = g.relu(h);
                h = g.dropout(h, self.cfg.dropout);
                if k < last {
                    h = g.concat(&[h, skips[last - 1 - k]], 1)?;
                }
            }
            if let Some((gamma, beta)) = film_at(FilmSite::Final) {
                h = g.channel_affine(h, gamma, Some(beta))?;
            }
            let w = g.param(&self.params, dec.mask_w);
            let b = g.param(&self.params, dec.mask_b);
            let logits = g.conv2d(h, w, b, ConvSpec::SAME)?;
            heads.push(g.sigmoid(logits));
        }
        let masks = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? };

        match (self.cfg.conditioning, ctx_var) {
            (Conditioning::LabelMultiply, Some(c)) => g.channel_affine(masks, c, None),
            (Conditioning::FinalMultiply, Some(c)) => {
                let (w, b) = self.final_fc.expect("final-multiply model has a classifier");
                let (w, b) = (g.param(&self.params, w), g.param(&self.params, b));
                let logits = g.linear(c, w, b)?;
                let weights = g.softmax(logits);
                g.channel_affine(masks, weights, None)
            }
            _ => Ok(masks),
        }
    }

    /// Folds the batch statistics of a training-mode forward pass into the
    /// running averages.
    pub fn update_running_stats(&mut self, g: &Graph<f32>) -> Result<()> {
        let stats = g.batch_stats();
        if stats.len() != self.running.len() {
            return Err(invalid(format!(
                "graph holds {} batch-norm calls, model has {} layers",
                stats.len(),
                self.running.len()
            )));
        }
        for (r, (_, s)) in self.running.iter_mut().zip(stats) {
            for (m, &b) in r.mean.iter_mut().zip(&s.mean) {
                *m = (1.0 - BN_MOMENTUM) * *m + BN_MOMENTUM * b;
            }
            for (v, &b) in r.var.iter_mut().zip(&s.var) {
                *v = (1.0 - BN_MOMENTUM) * *v + BN_MOMENTUM * b;
            }
        }
        Ok(())
    }

    /// Pools a context input into the vector the conditioning layers see.
    pub fn context_vector(&self, input: &ContextInput) -> Result<ContextVector> {
        if self.cfg.context == ContextKind::None {
            return Err(invalid("model takes no context"));
        }
        let mut g = Graph::<f32>::new(false, 0);
        let v = self.context_var(&mut g, std::slice::from_ref(input), 1)?;
        Ok(ContextVector {
            kind: self.cfg.context,
            payload: g.value(v).data().to_vec(),
        })
    }

    /// Motion context for `mode`; the LSTM mode uses this model's weights.
    pub fn motion_context(&self, seqs: &[Vec<Vec<f32>>], mode: MotionMode) -> Result<ContextVector> {
        let input = ContextInput::Motion(seqs.to_vec());
        input.validate()?;
        let mut g = Graph::<f32>::new(false, 0);
        let v = match mode {
            MotionMode::Maxpool => motion_maxpool_var(&mut g, seqs)?,
            MotionMode::Lstm => self.lstm_var(&mut g, seqs)?,
        };
        Ok(ContextVector {
            kind: ContextKind::Motion(mode),
            payload: g.value(v).data().to_vec(),
        })
    }

    /// FiLM coefficients generated for one context.
    pub fn film_params(&self, ctx: &ContextInput) -> Result<FilmParams> {
        if !self.cfg.conditioning.is_film() {
            return Err(invalid("model has no FiLM layers"));
        }
        let mut g = Graph::<f32>::new(false, 0);
        let c = self.context_var(&mut g, std::slice::from_ref(ctx), 1)?;
        let mut layers = Vec::with_capacity(self.film.len());
        for gen in &self.film {
            let (gamma, beta) = self.film_vars(&mut g, gen, c)?;
            layers.push(FilmLayer {
                site: gen.site,
                gamma: g.value(gamma).data().to_vec(),
                beta: g.value(beta).data().to_vec(),
            });
        }
        Ok(FilmParams { layers })
    }

    /// Per-instrument output weights of the multiplicative variants: the
    /// label vector, or the classifier's softmax probabilities.
    pub fn mask_weights(&self, ctx: &ContextInput) -> Result<Vec<f32>> {
        let mut g = Graph::<f32>::new(false, 0);
        let c = self.context_var(&mut g, std::slice::from_ref(ctx), 1)?;
        match self.cfg.conditioning {
            Conditioning::LabelMultiply => Ok(g.value(c).data().to_vec()),
            Conditioning::FinalMultiply => {
                let (w, b) = self.final_fc.expect("final-multiply model has a classifier");
                let (w, b) = (g.param(&self.params, w), g.param(&self.params, b));
                let logits = g.linear(c, w, b)?;
                let p = g.softmax(logits);
                Ok(g.value(p).data().to_vec())
            }
            other => Err(invalid(format!("{other:?} conditioning has no mask weights"))),
        }
    }

    /// Evaluation-mode masks for one scaled `(F, T)` magnitude spectrogram.
    pub fn predict(&self, mag: &MagSpec, ctx: Option<&ContextInput>) -> Result<Vec<Mask>> {
        let (f, t) = mag.shape();
        let input = Tensor::new(vec![1, 1, f, t], mag.values.iter().copied().collect())?;
        let mut g = Graph::<f32>::new(false, 0);
        let x = g.input(input);
        let ctx: &[ContextInput] = match ctx {
            Some(c) => std::slice::from_ref(c),
            None if self.cfg.conditioning != Conditioning::None => {
                return Err(invalid("model requires a context input"));
            }
            None => &[],
        };
        let out = self.forward(&mut g, x, ctx)?;
        let data = g.value(out).data();
        (0..self.cfg.n_masks)
            .map(|k| {
                let values = Array2::from_shape_vec((f, t), data[k * f * t..(k + 1) * f * t].to_vec())
                    .map_err(|e| shape_err(e.to_string()))?;
                Mask::new(values, MaskKind::Ratio, k)
            })
            .collect()
    }
}
