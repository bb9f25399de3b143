//! `BTFT` feature, `BTLB` label and `BTMD` model files.
//!
//! All three start with a 4-byte magic and a u16 version and are
//! little-endian throughout. Standardization blocks are a presence byte
//! followed by `cols` f64 means and `cols` f64 standard deviations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::PlainMatrix;
use crate::wire::{put_f64, put_u16, put_u32, put_u64, Reader};

pub const FEATURE_MAGIC: &[u8; 4] = b"BTFT";
pub const LABEL_MAGIC: &[u8; 4] = b"BTLB";
pub const MODEL_MAGIC: &[u8; 4] = b"BTMD";
pub const FORMAT_VERSION: u16 = 1;

/// Standardized features are clipped to `±CLIP` and divided by `CLIP`.
pub const CLIP: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum Dtype {
    F32 = 1,
    F64 = 2,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Per-feature z-score parameters, fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardization {
    /// Population mean and standard deviation of each column. Constant
    /// columns get a deviation of 1.
    pub fn fit(x: &PlainMatrix) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Empty("cannot fit standardization on zero rows".into()));
        }
        let n = x.rows() as f64;
        let mut means = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            for (m, v) in means.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut stds = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            for ((s, v), m) in stds.iter_mut().zip(x.row(r)).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        for s in stds.iter_mut() {
            *s = (*s / n).sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Ok(Self { means, stds })
    }

    /// z-scores without clipping.
    pub fn standardize(&self, x: &PlainMatrix) -> Result<PlainMatrix> {
        if x.cols() != self.means.len() {
            return Err(Error::Shape(format!(
                "{} features, standardization has {}",
                x.cols(),
                self.means.len()
            )));
        }
        Ok(PlainMatrix::from_fn(x.rows(), x.cols(), |r, c| {
            (x.get(r, c) - self.means[c]) / self.stds[c]
        }))
    }

    /// z-scores clipped to `±CLIP`, scaled into `[-1, 1]`.
    pub fn apply(&self, x: &PlainMatrix) -> Result<PlainMatrix> {
        Ok(self.standardize(x)?.map(|v| v.clamp(-CLIP, CLIP) / CLIP))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub features: PlainMatrix,
    pub dtype: Dtype,
    pub stats: Option<Standardization>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelFile {
    pub labels: Vec<u16>,
    pub class_count: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    /// `k×d` weights.
    pub weights: PlainMatrix,
    pub dtype: Dtype,
    pub stats: Option<Standardization>,
    /// Digest of the scheme parameters the model was trained under.
    pub params_digest: [u8; 32],
}

fn put_values(out: &mut Vec<u8>, values: &[f64], dtype: Dtype) {
    for &v in values {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => put_f64(out, v),
        }
    }
}

fn put_stats(out: &mut Vec<u8>, stats: &Option<Standardization>) {
    match stats {
        None => out.push(0),
        Some(s) => {
            out.push(1);
            s.means.iter().chain(&s.stds).for_each(|&v| put_f64(out, v));
        }
    }
}

fn read_version(r: &mut Reader<'_>, magic: &[u8; 4]) -> Result<()> {
    r.expect_magic(magic)?;
    let at = r.offset();
    let v = r.u16()?;
    if v != FORMAT_VERSION {
        return Err(Error::format(at, format!("unsupported version {v}")));
    }
    Ok(())
}

fn read_dtype(r: &mut Reader<'_>) -> Result<Dtype> {
    let at = r.offset();
    match r.u8()? {
        1 => Ok(Dtype::F32),
        2 => Ok(Dtype::F64),
        t => Err(Error::format(at, format!("unknown dtype tag {t}"))),
    }
}

fn read_stats(r: &mut Reader<'_>, cols: usize) -> Result<Option<Standardization>> {
    let at = r.offset();
    match r.u8()? {
        0 => Ok(None),
        1 => {
            let mut v = Vec::with_capacity(2 * cols);
            for _ in 0..2 * cols {
                v.push(r.f64()?);
            }
            let stds = v.split_off(cols);
            if let Some(i) = stds.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::format(at + 1 + 8 * (cols + i), "standard deviation must be positive"));
            }
            Ok(Some(Standardization { means: v, stds }))
        }
        t => Err(Error::format(at, format!("invalid standardization flag {t}"))),
    }
}

fn read_values(r: &mut Reader<'_>, count: usize, dtype: Dtype) -> Result<Vec<f64>> {
    let at = r.offset();
    let expect = count
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::format(at, "payload size overflows"))?;
    if r.remaining() != expect {
        return Err(Error::format(
            at,
            format!("payload is {} bytes, header implies {expect}", r.remaining()),
        ));
    }
    let raw = r.take(expect)?;
    let values: Vec<f64> = match dtype {
        Dtype::F32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(at + i * dtype.size(), "non-finite value"));
    }
    Ok(values)
}

impl FeatureFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.features.data().len() * self.dtype.size());
        out.extend_from_slice(FEATURE_MAGIC);
        put_u16(&mut out, FORMAT_VERSION);
        put_u64(&mut out, self.features.rows() as u64);
        put_u32(&mut out, self.features.cols() as u32);
        out.push(self.dtype as u8);
        put_stats(&mut out, &self.stats);
        put_values(&mut out, self.features.data(), self.dtype);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        read_version(&mut r, FEATURE_MAGIC)?;
        let at = r.offset();
        let rows = r.u64()?;
        let cols = r.u32()? as usize;
        let rows = usize::try_from(rows).map_err(|_| Error::format(at, "row count too large"))?;
        if cols == 0 {
            return Err(Error::format(at + 8, "zero feature columns"));
        }
        let dtype = read_dtype(&mut r)?;
        let stats = read_stats(&mut r, cols)?;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::format(at, "shape overflows"))?;
        let data = read_values(&mut r, count, dtype)?;
        Ok(Self {
            features: PlainMatrix::from_vec(rows, cols, data)?,
            dtype,
            stats,
        })
    }
}

impl LabelFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + 2 * self.labels.len());
        out.extend_from_slice(LABEL_MAGIC);
        put_u16(&mut out, FORMAT_VERSION);
        put_u64(&mut out, self.labels.len() as u64);
        put_u32(&mut out, self.class_count);
        for &l in &self.labels {
            put_u16(&mut out, l);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        read_version(&mut r, LABEL_MAGIC)?;
        let rows = r.u64()?;
        let at = r.offset();
        let class_count = r.u32()?;
        if class_count == 0 || class_count > u16::MAX as u32 + 1 {
            return Err(Error::format(at, format!("invalid class count {class_count}")));
        }
        let at = r.offset();
        if (r.remaining() as u64) != rows.saturating_mul(2) {
            return Err(Error::format(
                at,
                format!("payload is {} bytes, header implies {}", r.remaining(), rows.saturating_mul(2)),
            ));
        }
        let mut labels = Vec::with_capacity(rows as usize);
        for _ in 0..rows {
            let at = r.offset();
            let l = r.u16()?;
            if l as u32 >= class_count {
                return Err(Error::format(at, format!("label {l} not below class count {class_count}")));
            }
            labels.push(l);
        }
        Ok(Self { labels, class_count })
    }

    /// `rows × class_count` one-hot matrix.
    pub fn one_hot(&self) -> PlainMatrix {
        let k = self.class_count as usize;
        let mut m = PlainMatrix::zeros(self.labels.len(), k);
        for (r, &l) in self.labels.iter().enumerate() {
            m.set(r, l as usize, 1.0);
        }
        m
    }
}

impl ModelFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        put_u16(&mut out, FORMAT_VERSION);
        put_u32(&mut out, self.weights.rows() as u32);
        put_u32(&mut out, self.weights.cols() as u32);
        out.push(self.dtype as u8);
        put_stats(&mut out, &self.stats);
        out.extend_from_slice(&self.params_digest);
        put_values(&mut out, self.weights.data(), self.dtype);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        read_version(&mut r, MODEL_MAGIC)?;
        let at = r.offset();
        let k = r.u32()? as usize;
        let d = r.u32()? as usize;
        if k == 0 || d == 0 {
            return Err(Error::format(at, format!("invalid model shape {k}x{d}")));
        }
        let dtype = read_dtype(&mut r)?;
        let stats = read_stats(&mut r, d)?;
        let params_digest = r.array::<32>()?;
        let data = read_values(&mut r, k * d, dtype)?;
        Ok(Self {
            weights: PlainMatrix::from_vec(k, d, data)?,
            dtype,
            stats,
            params_digest,
        })
    }

    /// Logits `X Wᵀ` for raw features, applying the stored transform first.
    pub fn logits(&self, raw: &PlainMatrix) -> Result<PlainMatrix> {
        let x = match &self.stats {
            Some(s) => s.apply(raw)?,
            None => raw.clone(),
        };
        x.matmul_abt(&self.weights)
    }
}

/// Writes through a temporary file and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureFile> {
    FeatureFile::from_bytes(&std::fs::read(path)?)
}

pub fn read_labels(path: &Path) -> Result<LabelFile> {
    LabelFile::from_bytes(&std::fs::read(path)?)
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    ModelFile::from_bytes(&std::fs::read(path)?)
}
