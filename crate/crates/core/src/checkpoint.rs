//! Versioned binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FCAECKPT"  u32 version  u8 kind (0 = auto-encoder, 1 = classifier)
//! u32 n_meta   { u32 len, key bytes, u32 len, value bytes }*
//! u32 n_params { u32 len, name bytes, u64 count, count × f64 }*
//! ```
//!
//! Metadata carries the architecture descriptors and shapes needed to rebuild
//! the model; parameters are stored in the model's layer order and matched by
//! name on load.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::genome::{DecodedArchitecture, GenomeError};
use crate::nn::{Classifier, Encoder, FcaeModel, NnError, Param};
use crate::rng::{stream, Purpose};

pub const MAGIC: &[u8; 8] = b"FCAECKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    Version(u32),
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    AutoEncoder = 0,
    Classifier = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub meta: Vec<(String, String)>,
    pub params: Vec<(String, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub enum Model {
    AutoEncoder(FcaeModel),
    Classifier(Classifier),
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            CheckpointError::Format(format!("truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| CheckpointError::Format(format!("invalid UTF-8 at byte {at}")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, values) in &self.params {
            put_str(&mut out, name);
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok() != Some(&MAGIC[..]) {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let kind = match r.take(1)?[0] {
            0 => ModelKind::AutoEncoder,
            1 => ModelKind::Classifier,
            k => return Err(CheckpointError::Format(format!("unknown model kind {k}"))),
        };
        let n_meta = r.u32()?;
        let mut meta = Vec::new();
        for _ in 0..n_meta {
            meta.push((r.string()?, r.string()?));
        }
        let n_params = r.u32()?;
        let mut params = Vec::new();
        for _ in 0..n_params {
            let name = r.string()?;
            let count = r.u64()? as usize;
            let raw = r.take(count.checked_mul(8).ok_or_else(|| CheckpointError::Format("parameter too large".into()))?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.push((name, values));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Format(format!("trailing bytes after offset {}", r.pos)));
        }
        Ok(Self { kind, meta, params })
    }

    pub fn meta(&self, key: &str) -> Result<&str, CheckpointError> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| CheckpointError::Format(format!("missing metadata `{key}`")))
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn hwc_string(hwc: [usize; 3]) -> String {
    format!("{} {} {}", hwc[0], hwc[1], hwc[2])
}

fn parse_hwc(s: &str) -> Result<[usize; 3], CheckpointError> {
    let v: Vec<usize> = s
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| CheckpointError::Format(format!("bad shape `{s}`")))?;
    v.try_into()
        .map_err(|_| CheckpointError::Format(format!("bad shape `{s}`")))
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, CheckpointError> {
    s.parse()
        .map_err(|_| CheckpointError::Format(format!("bad {what} `{s}`")))
}

fn collect(params: Vec<&Param>) -> Vec<(String, Vec<f64>)> {
    params
        .into_iter()
        .map(|p| (p.name.clone(), p.value.clone()))
        .collect()
}

fn restore(params: Vec<&mut Param>, stored: &[(String, Vec<f64>)]) -> Result<(), CheckpointError> {
    if params.len() != stored.len() {
        return Err(CheckpointError::Format(format!(
            "model has {} parameter tensors, checkpoint has {}",
            params.len(),
            stored.len()
        )));
    }
    for p in params {
        let (_, values) = stored
            .iter()
            .find(|(n, _)| *n == p.name)
            .ok_or_else(|| CheckpointError::Format(format!("missing parameter `{}`", p.name)))?;
        if values.len() != p.len() {
            return Err(CheckpointError::Format(format!(
                "parameter `{}` has {} values, expected {}",
                p.name,
                values.len(),
                p.len()
            )));
        }
        p.value.clone_from(values);
        p.zero_grad();
    }
    Ok(())
}

fn arch_from(desc: &str) -> Result<DecodedArchitecture, CheckpointError> {
    Ok(DecodedArchitecture::from_descriptor(desc)?)
}

impl From<&FcaeModel> for Checkpoint {
    fn from(m: &FcaeModel) -> Self {
        Self {
            kind: ModelKind::AutoEncoder,
            meta: vec![
                ("arch".into(), m.encoder.arch.to_descriptor()),
                ("input".into(), hwc_string(m.encoder.input_hwc)),
            ],
            params: collect(m.params()),
        }
    }
}

impl From<&Classifier> for Checkpoint {
    fn from(c: &Classifier) -> Self {
        let mut meta = vec![("blocks".into(), c.blocks.len().to_string())];
        for (i, b) in c.blocks.iter().enumerate() {
            meta.push((format!("block{i}.arch"), b.arch.to_descriptor()));
            meta.push((format!("block{i}.input"), hwc_string(b.input_hwc)));
        }
        meta.push(("fc_units".into(), c.hidden.d_out.to_string()));
        meta.push(("n_classes".into(), c.n_classes().to_string()));
        meta.push(("dropout_rate".into(), format!("{:?}", c.dropout_rate)));
        Self {
            kind: ModelKind::Classifier,
            meta,
            params: collect(c.params()),
        }
    }
}

impl Checkpoint {
    /// Rebuilds the stored model with its exact parameter values.
    pub fn into_model(&self) -> Result<Model, CheckpointError> {
        let mut rng = stream(0, Purpose::Weights, &[]);
        match self.kind {
            ModelKind::AutoEncoder => {
                let arch = arch_from(self.meta("arch")?)?;
                let mut m = FcaeModel::new(&arch, parse_hwc(self.meta("input")?)?, &mut rng)?;
                restore(m.params_mut(), &self.params)?;
                Ok(Model::AutoEncoder(m))
            }
            ModelKind::Classifier => {
                let n: usize = parse_num(self.meta("blocks")?, "block count")?;
                let blocks = (0..n)
                    .map(|i| {
                        let arch = arch_from(self.meta(&format!("block{i}.arch"))?)?;
                        let hwc = parse_hwc(self.meta(&format!("block{i}.input"))?)?;
                        Ok(Encoder::new(&format!("block{i}"), &arch, hwc, &mut rng)?)
                    })
                    .collect::<Result<Vec<_>, CheckpointError>>()?;
                let mut c = Classifier::new(
                    blocks,
                    parse_num(self.meta("fc_units")?, "fc_units")?,
                    parse_num(self.meta("n_classes")?, "n_classes")?,
                    parse_num(self.meta("dropout_rate")?, "dropout_rate")?,
                    &mut rng,
                )?;
                restore(c.params_mut(), &self.params)?;
                Ok(Model::Classifier(c))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{ConvLayer, DecodedArchitecture, PoolLayer};

    fn arch() -> DecodedArchitecture {
        DecodedArchitecture {
            conv: vec![ConvLayer {
                filter_w: 3,
                filter_h: 2,
                stride_w: 1,
                stride_h: 2,
                feature_maps: 5,
                l2: 0.0037,
            }],
            pool: vec![PoolLayer {
                kernel_w: 2,
                kernel_h: 2,
                stride_w: 2,
                stride_h: 2,
            }],
        }
    }

    #[test]
    fn autoencoder_round_trip_is_exact() {
        let mut rng = stream(9, Purpose::Weights, &[]);
        let m = FcaeModel::new(&arch(), [6, 5, 2], &mut rng).unwrap();
        let bytes = Checkpoint::from(&m).to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        match back.into_model().unwrap() {
            Model::AutoEncoder(r) => assert_eq!(r, m),
            Model::Classifier(_) => panic!("wrong kind"),
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
        let mut rng = stream(9, Purpose::Weights, &[]);
        let m = FcaeModel::new(&arch(), [6, 5, 2], &mut rng).unwrap();
        let bytes = Checkpoint::from(&m).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(CheckpointError::Version(2))));
    }
}
