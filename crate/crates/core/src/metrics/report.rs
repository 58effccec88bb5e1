//! Per-piece evaluation and aggregate reporting.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{pes, sd_sdr, si_sdr, silent_frames, BssProjector, MetricConfig};
use crate::dsp::Waveform;
use crate::error::{invalid, Result};
use crate::mixgen::Instrument;
use crate::NUM_INSTRUMENTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "SDR")]
    Sdr,
    #[serde(rename = "SIR")]
    Sir,
    #[serde(rename = "SAR")]
    Sar,
    #[serde(rename = "SI-SDR")]
    SiSdr,
    #[serde(rename = "SD-SDR")]
    SdSdr,
    #[serde(rename = "PES")]
    Pes,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Sdr => "SDR",
            Metric::Sir => "SIR",
            Metric::Sar => "SAR",
            Metric::SiSdr => "SI-SDR",
            Metric::SdSdr => "SD-SDR",
            Metric::Pes => "PES",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub piece: String,
    pub instrument: Instrument,
    pub n_sources: usize,
    pub metric: Metric,
    pub value: f64,
}

/// Mean and population standard deviation of one metric over a group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Aggregate {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            count: values.len(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

#[derive(Serialize)]
struct AggregateJson {
    per_instrument: BTreeMap<String, BTreeMap<Metric, Aggregate>>,
    per_n_sources: BTreeMap<usize, BTreeMap<Metric, Aggregate>>,
}

fn group<K: Ord + Clone>(rows: &[EvalRow], key: impl Fn(&EvalRow) -> K) -> BTreeMap<K, BTreeMap<Metric, Aggregate>> {
    let mut buckets: BTreeMap<K, BTreeMap<Metric, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        buckets.entry(key(r)).or_default().entry(r.metric).or_default().push(r.value);
    }
    buckets
        .into_iter()
        .map(|(k, m)| (k, m.into_iter().map(|(metric, v)| (metric, Aggregate::of(&v))).collect()))
        .collect()
}

impl EvalReport {
    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
    }

    pub fn values(&self, instrument: Instrument, metric: Metric) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.instrument == instrument && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    pub fn per_instrument(&self) -> BTreeMap<Instrument, BTreeMap<Metric, Aggregate>> {
        group(&self.rows, |r| r.instrument)
    }

    pub fn per_n_sources(&self) -> BTreeMap<usize, BTreeMap<Metric, Aggregate>> {
        group(&self.rows, |r| r.n_sources)
    }

    /// `piece,instrument,n_sources,metric,value` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("piece,instrument,n_sources,metric,value\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{:.6}\n", r.piece, r.instrument, r.n_sources, r.metric, r.value));
        }
        out
    }

    pub fn aggregate_json(&self) -> Result<String> {
        let agg = AggregateJson {
            per_instrument: group(&self.rows, |r| r.instrument.name().to_string()),
            per_n_sources: self.per_n_sources(),
        };
        Ok(serde_json::to_string_pretty(&agg)?)
    }
}

/// Scores one piece. Instruments labelled present get SDR, SIR, SAR,
/// SI-SDR and SD-SDR against the references of all present instruments;
/// absent instruments get PES over the frames where their reference is
/// silent.
pub fn evaluate_piece(
    piece: &str,
    est_sources: &[Waveform],
    ref_sources: &[Waveform],
    labels: &[f32],
    cfg: &MetricConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if est_sources.len() != NUM_INSTRUMENTS || ref_sources.len() != NUM_INSTRUMENTS || labels.len() != NUM_INSTRUMENTS {
        return Err(invalid(format!("evaluation needs {NUM_INSTRUMENTS} estimates, references and labels")));
    }
    let len = ref_sources[0].len();
    if est_sources.iter().chain(ref_sources).any(|w| w.len() != len) {
        return Err(invalid("estimates and references must be equally long"));
    }
    let present: Vec<usize> = (0..NUM_INSTRUMENTS).filter(|&i| labels[i] > 0.0).collect();
    let n_sources = present.len();
    let mut rows = Vec::new();
    let mut push = |i: usize, metric: Metric, value: f64| {
        rows.push(EvalRow {
            piece: piece.to_string(),
            instrument: Instrument::ALL[i],
            n_sources,
            metric,
            value,
        })
    };

    if !present.is_empty() {
        let refs: Vec<Waveform> = present.iter().map(|&i| ref_sources[i].clone()).collect();
        let projector = BssProjector::new(&refs, cfg.proj_filter_len)?;
        for (t, &i) in present.iter().enumerate() {
            let est = &est_sources[i];
            let scores = projector.scores(est, t, cfg)?;
            push(i, Metric::Sdr, scores.sdr);
            push(i, Metric::Sir, scores.sir);
            push(i, Metric::Sar, scores.sar);
            push(i, Metric::SiSdr, si_sdr(est, &ref_sources[i], cfg)?);
            push(i, Metric::SdSdr, sd_sdr(est, &ref_sources[i], cfg)?);
        }
    }
    for i in (0..NUM_INSTRUMENTS).filter(|i| !present.contains(i)) {
        let frames = silent_frames(&ref_sources[i], cfg);
        if !frames.is_empty() {
            push(i, Metric::Pes, pes(&est_sources[i], &frames, cfg)?);
        }
    }
    Ok(EvalReport { rows })
}
