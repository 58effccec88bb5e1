use std::path::Path;

use super::{atomic_write, put_f32s, put_u32, to_u32, ByteReader};
use crate::error::{invalid, Error, Result};
use crate::model::VISUAL_FEATURE_DIM;

pub const FEATURE_MAGIC: &[u8; 4] = b"CUF1";
pub const FEATURE_VERSION: u32 = 1;

/// Per-frame visual feature vectors for each source of a piece, stored
/// source-major then frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub n_sources: usize,
    pub n_frames: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureFile {
    pub fn new(n_sources: usize, n_frames: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n_sources * n_frames * dim {
            return Err(invalid(format!(
                "feature data has {} values, expected {n_sources}x{n_frames}x{dim}",
                data.len()
            )));
        }
        Ok(Self { n_sources, n_frames, dim, data })
    }

    pub fn frame(&self, source: usize, frame: usize) -> &[f32] {
        assert!(source < self.n_sources && frame < self.n_frames);
        let at = (source * self.n_frames + frame) * self.dim;
        &self.data[at..at + self.dim]
    }

    /// All frames of one source.
    pub fn sequence(&self, source: usize) -> Vec<Vec<f32>> {
        (0..self.n_frames).map(|t| self.frame(source, t).to_vec()).collect()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(20 + self.data.len() * 4);
        out.extend_from_slice(FEATURE_MAGIC);
        put_u32(&mut out, FEATURE_VERSION);
        put_u32(&mut out, to_u32(self.n_sources, "n_sources")?);
        put_u32(&mut out, to_u32(self.n_frames, "n_frames")?);
        put_u32(&mut out, to_u32(self.dim, "dim")?);
        put_f32s(&mut out, &self.data);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "feature file");
        if r.take(4)? != FEATURE_MAGIC {
            return Err(Error::FormatError("bad feature file magic".into()));
        }
        let version = r.u32()?;
        if version != FEATURE_VERSION {
            return Err(Error::UnsupportedFormat(format!("feature file version {version}")));
        }
        let n_sources = r.u32()? as usize;
        let n_frames = r.u32()? as usize;
        let dim = r.u32()? as usize;
        if dim != VISUAL_FEATURE_DIM {
            return Err(Error::FormatError(format!("feature dim {dim}, expected {VISUAL_FEATURE_DIM}")));
        }
        let n = n_sources
            .checked_mul(n_frames)
            .and_then(|v| v.checked_mul(dim))
            .ok_or_else(|| Error::FormatError("feature shape overflow".into()))?;
        if r.remaining() != n * 4 {
            return Err(Error::FormatError(format!(
                "feature payload is {} bytes, expected {}",
                r.remaining(),
                n * 4
            )));
        }
        let data = r.f32s(n)?;
        Ok(Self { n_sources, n_frames, dim, data })
    }
}

pub fn write_features(path: &Path, f: &FeatureFile) -> Result<()> {
    atomic_write(path, &f.encode()?)
}

pub fn read_features(path: &Path) -> Result<FeatureFile> {
    FeatureFile::decode(&std::fs::read(path)?)
}
