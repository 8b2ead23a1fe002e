//! Dataset loading, synthesis, subsetting and batching.
//!
//! Pixels are scaled to `[0, 1]` by a plain division by 255. IDX files may be
//! gzip-compressed; compression is detected from the stream's magic bytes.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::nn::Tensor;
use crate::rng::{stream, Purpose};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: byte {offset}: {reason}")]
    Parse {
        path: String,
        offset: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Range(String),
    #[error("{0}")]
    Config(String),
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Images `(N, H, W, C)` in `[0, 1]` with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHandle {
    pub name: String,
    pub split: String,
    pub images: Tensor,
    pub labels: Option<Vec<u8>>,
    pub n_classes: Option<usize>,
}

impl DatasetHandle {
    pub fn new(name: impl Into<String>, split: impl Into<String>, images: Tensor) -> Self {
        Self {
            name: name.into(),
            split: split.into(),
            images,
            labels: None,
            n_classes: None,
        }
    }

    /// Attaches labels; every label must be below `n_classes`.
    pub fn with_labels(mut self, labels: Vec<u8>, n_classes: usize) -> Result<Self, DataError> {
        if labels.len() != self.len() {
            return Err(DataError::Range(format!(
                "{} labels for {} images",
                labels.len(),
                self.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= n_classes) {
            return Err(DataError::Range(format!("label {l} outside {n_classes} classes")));
        }
        self.labels = Some(labels);
        self.n_classes = Some(n_classes);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(height, width, channels)` of one image.
    pub fn image_hwc(&self) -> [usize; 3] {
        let [_, h, w, c] = self.images.shape();
        [h, w, c]
    }

    /// Items at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            split: self.split.clone(),
            images: self.images.gather(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            n_classes: self.n_classes,
        }
    }

    pub fn labels_for(&self, indices: &[usize]) -> Option<Vec<u8>> {
        self.labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect())
    }
}

/// Reads a file, transparently inflating gzip.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, DataError> {
    let raw = fs::read(path).map_err(|e| io_err(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| io_err(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

const IDX_UBYTE: u8 = 0x08;

/// A parsed unsigned-byte IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8], path: &str) -> Result<IdxArray, DataError> {
    let err = |offset: usize, reason: String| DataError::Parse {
        path: path.to_string(),
        offset,
        reason,
    };
    if bytes.len() < 4 {
        return Err(err(bytes.len(), "truncated magic number".into()));
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != IDX_UBYTE || bytes[3] == 0 {
        return Err(err(0, format!("bad magic number 0x{magic:08X}")));
    }
    let rank = bytes[3] as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(err(bytes.len(), format!("truncated header for {rank} dimensions")));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let expected: usize = dims.iter().product();
    let body = &bytes[header..];
    if body.len() < expected {
        return Err(err(
            bytes.len(),
            format!("truncated data: expected {expected} bytes after the header, found {}", body.len()),
        ));
    }
    if body.len() > expected {
        return Err(err(header + expected, "trailing bytes after data".into()));
    }
    Ok(IdxArray {
        dims,
        data: body.to_vec(),
    })
}

pub fn encode_idx(arr: &IdxArray) -> Vec<u8> {
    let mut out = vec![0, 0, IDX_UBYTE, arr.dims.len() as u8];
    for &d in &arr.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&arr.data);
    out
}

fn bytes_to_images(dims: &[usize], data: &[u8]) -> Option<Tensor> {
    let shape = match *dims {
        [n, h, w] => [n, h, w, 1],
        [n, h, w, c] => [n, h, w, c],
        _ => return None,
    };
    Tensor::from_vec(shape, data.iter().map(|&b| b as f64 / 255.0).collect()).ok()
}

/// Loads an IDX image file (`N×H×W` or `N×H×W×C`).
pub fn load_idx(path: &Path) -> Result<DatasetHandle, DataError> {
    let bytes = read_maybe_gz(path)?;
    let shown = path.display().to_string();
    let arr = parse_idx(&bytes, &shown)?;
    let images = bytes_to_images(&arr.dims, &arr.data).ok_or_else(|| DataError::Parse {
        path: shown.clone(),
        offset: 3,
        reason: format!("expected 3 or 4 image dimensions, found {}", arr.dims.len()),
    })?;
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(DatasetHandle::new(name, "", images))
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    let bytes = read_maybe_gz(path)?;
    let shown = path.display().to_string();
    let arr = parse_idx(&bytes, &shown)?;
    if arr.dims.len() != 1 {
        return Err(DataError::Parse {
            path: shown,
            offset: 3,
            reason: format!("expected a 1-dimensional label file, found {} dimensions", arr.dims.len()),
        });
    }
    Ok(arr.data)
}

fn to_bytes(images: &Tensor) -> Vec<u8> {
    images
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let gz = path.extension().is_some_and(|e| e == "gz");
    let out = if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::best());
        enc.write_all(bytes).map_err(|e| io_err(path, e))?;
        enc.finish().map_err(|e| io_err(path, e))?
    } else {
        bytes.to_vec()
    };
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Writes images as IDX (3 dimensions for one channel, 4 otherwise); a
/// `.gz` extension selects gzip.
pub fn write_idx_images(path: &Path, images: &Tensor) -> Result<(), DataError> {
    let [n, h, w, c] = images.shape();
    let dims = if c == 1 { vec![n, h, w] } else { vec![n, h, w, c] };
    write_bytes(
        path,
        &encode_idx(&IdxArray {
            dims,
            data: to_bytes(images),
        }),
    )
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<(), DataError> {
    write_bytes(
        path,
        &encode_idx(&IdxArray {
            dims: vec![labels.len()],
            data: labels.to_vec(),
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

fn find_file(dirs: &[PathBuf], stem: &str) -> Option<PathBuf> {
    dirs.iter()
        .flat_map(|d| [d.join(stem), d.join(format!("{stem}.gz"))])
        .find(|p| p.is_file())
}

/// Loads the standard MNIST file pair from `root` or `root/mnist`.
pub fn load_mnist(root: &Path, split: Split) -> Result<DatasetHandle, DataError> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let dirs = [root.join("mnist"), root.to_path_buf()];
    let missing = |what: &str| {
        DataError::Config(format!(
            "MNIST {split} {what} not found under {} (looked for {prefix}-{what}-idx*-ubyte[.gz])",
            root.display()
        ))
    };
    let images = find_file(&dirs, &format!("{prefix}-images-idx3-ubyte")).ok_or_else(|| missing("images"))?;
    let labels = find_file(&dirs, &format!("{prefix}-labels-idx1-ubyte")).ok_or_else(|| missing("labels"))?;
    let mut handle = load_idx(&images)?.with_labels(load_idx_labels(&labels)?, 10)?;
    handle.name = "mnist".into();
    handle.split = split.to_string();
    Ok(handle)
}

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Parses CIFAR-10 binary records: a label byte then 1024 R, 1024 G and
/// 1024 B bytes, each plane row-major.
pub fn parse_cifar10(bytes: &[u8], path: &str) -> Result<(Tensor, Vec<u8>), DataError> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(DataError::Parse {
            path: path.to_string(),
            offset: bytes.len() - bytes.len() % CIFAR_RECORD,
            reason: format!("file length {} is not a multiple of {CIFAR_RECORD}", bytes.len()),
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut data = vec![0.0; n * 3072];
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] >= 10 {
            return Err(DataError::Parse {
                path: path.to_string(),
                offset: i * CIFAR_RECORD,
                reason: format!("label {} outside 10 classes", rec[0]),
            });
        }
        labels.push(rec[0]);
        let out = &mut data[i * 3072..(i + 1) * 3072];
        for ch in 0..3 {
            for p in 0..1024 {
                out[p * 3 + ch] = rec[1 + ch * 1024 + p] as f64 / 255.0;
            }
        }
    }
    let images = Tensor::from_vec([n, 32, 32, 3], data).expect("sized above");
    Ok((images, labels))
}

pub fn load_cifar10_file(path: &Path) -> Result<DatasetHandle, DataError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let (images, labels) = parse_cifar10(&bytes, &path.display().to_string())?;
    DatasetHandle::new("cifar10", "", images).with_labels(labels, 10)
}

/// Loads `data_batch_{1..5}.bin` or `test_batch.bin` from `root`,
/// `root/cifar10` or `root/cifar-10-batches-bin`.
pub fn load_cifar10_binary(root: &Path, split: Split) -> Result<DatasetHandle, DataError> {
    let dirs = [
        root.join("cifar10"),
        root.join("cifar-10-batches-bin"),
        root.to_path_buf(),
    ];
    let names: Vec<String> = match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".into()],
    };
    let dir = dirs
        .iter()
        .find(|d| d.join(&names[0]).is_file())
        .ok_or_else(|| DataError::Config(format!("CIFAR-10 {split} batches not found under {}", root.display())))?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for name in &names {
        let h = load_cifar10_file(&dir.join(name))?;
        data.extend_from_slice(h.images.data());
        labels.extend(h.labels.expect("cifar files carry labels"));
    }
    let images = Tensor::from_vec([labels.len(), 32, 32, 3], data).expect("records are 32x32x3");
    let mut h = DatasetHandle::new("cifar10", split.to_string(), images).with_labels(labels, 10)?;
    h.split = split.to_string();
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthKind {
    /// Every pixel equals the value.
    Constant(f64),
    /// Linear ramps in a random direction per image, stretched to `[0, 1]`.
    Gradient,
    /// One Gaussian bump per image; the label is the quadrant of its centre.
    GaussianBlobs,
}

impl FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(Self::Constant(0.0)),
            "gradient" => Ok(Self::Gradient),
            "gaussian-blobs" | "blobs" => Ok(Self::GaussianBlobs),
            other => match other.strip_prefix("constant=") {
                Some(v) => match v.parse::<f64>() {
                    Ok(x) if (0.0..=1.0).contains(&x) => Ok(Self::Constant(x)),
                    _ => Err(format!("constant value `{v}` must be a number in [0, 1]")),
                },
                None => Err(format!(
                    "unknown synthetic kind `{other}` (expected constant, constant=<v>, gradient or gaussian-blobs)"
                )),
            },
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(v) if *v == 0.0 => f.write_str("constant"),
            Self::Constant(v) => write!(f, "constant={v}"),
            Self::Gradient => f.write_str("gradient"),
            Self::GaussianBlobs => f.write_str("gaussian-blobs"),
        }
    }
}

/// Deterministic synthetic images; image `i` draws from its own stream.
pub fn synth_dataset(kind: SynthKind, n: usize, h: usize, w: usize, c: usize, seed: u64) -> DatasetHandle {
    let item = h * w * c;
    let mut data = vec![0.0; n * item];
    let mut labels = Vec::new();
    for (i, img) in data.chunks_exact_mut(item.max(1)).take(n).enumerate() {
        let mut rng = stream(seed, Purpose::Synth, &[i as u64]);
        match kind {
            SynthKind::Constant(v) => img.fill(v),
            SynthKind::Gradient => fill_gradient(img, h, w, c, &mut rng),
            SynthKind::GaussianBlobs => labels.push(fill_blob(img, h, w, c, &mut rng)),
        }
    }
    let images = Tensor::from_vec([n, h, w, c], data).expect("sized above");
    let handle = DatasetHandle::new(format!("synth:{kind}"), "train", images);
    if kind == SynthKind::GaussianBlobs {
        handle.with_labels(labels, 4).expect("quadrant labels are below 4")
    } else {
        handle
    }
}

fn fill_gradient(img: &mut [f64], h: usize, w: usize, c: usize, rng: &mut impl Rng) {
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());
    let offsets: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..0.5)).collect();
    let raw = |y: usize, x: usize| dx * x as f64 / w.max(2).saturating_sub(1) as f64 + dy * y as f64 / h.max(2).saturating_sub(1) as f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for y in 0..h {
        for x in 0..w {
            lo = lo.min(raw(y, x));
            hi = hi.max(raw(y, x));
        }
    }
    let range = if hi > lo { hi - lo } else { 1.0 };
    for y in 0..h {
        for x in 0..w {
            let t = (raw(y, x) - lo) / range;
            for (ch, off) in offsets.iter().enumerate() {
                img[(y * w + x) * c + ch] = off + (1.0 - off) * t;
            }
        }
    }
}

fn fill_blob(img: &mut [f64], h: usize, w: usize, c: usize, rng: &mut impl Rng) -> u8 {
    let cy = rng.random_range(0.0..h as f64);
    let cx = rng.random_range(0.0..w as f64);
    let sigma = rng.random_range(0.1..0.25) * h.min(w) as f64;
    let amp = rng.random_range(0.5..1.0);
    let gains: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..1.0)).collect();
    for y in 0..h {
        for x in 0..w {
            let (py, px) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            let v = amp * (-(py * py + px * px) / (2.0 * sigma * sigma)).exp();
            for (ch, g) in gains.iter().enumerate() {
                img[(y * w + x) * c + ch] = v * g;
            }
        }
    }
    2 * u8::from(cy >= h as f64 / 2.0) + u8::from(cx >= w as f64 / 2.0)
}

/// `n` items; class-stratified when labels exist (equal per-class counts,
/// the remainder going to the lowest class indices), uniformly random
/// otherwise. The result is shuffled.
pub fn subset(handle: &DatasetHandle, n: usize, seed: u64) -> Result<DatasetHandle, DataError> {
    if n > handle.len() {
        return Err(DataError::Range(format!(
            "subset of {n} requested from {} items",
            handle.len()
        )));
    }
    let mut rng = stream(seed, Purpose::Subset, &[]);
    let mut chosen = match &handle.labels {
        None => {
            let mut idx: Vec<usize> = (0..handle.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(n);
            idx
        }
        Some(labels) => {
            let k = handle.n_classes.unwrap_or(0).max(labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0));
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
            for (i, &l) in labels.iter().enumerate() {
                by_class[l as usize].push(i);
            }
            let present: Vec<usize> = (0..k).filter(|&c| !by_class[c].is_empty()).collect();
            let mut chosen = Vec::with_capacity(n);
            if !present.is_empty() {
                let base = n / present.len();
                let extra = n % present.len();
                for (rank, &c) in present.iter().enumerate() {
                    let want = base + usize::from(rank < extra);
                    let pool = &mut by_class[c];
                    if pool.len() < want {
                        return Err(DataError::Range(format!(
                            "class {c} has {} items, {want} needed for a stratified subset of {n}",
                            pool.len()
                        )));
                    }
                    pool.shuffle(&mut rng);
                    chosen.extend_from_slice(&pool[..want]);
                }
            }
            chosen
        }
    };
    chosen.shuffle(&mut rng);
    Ok(handle.gather(&chosen))
}

/// Shuffled index batches for one epoch; the last short batch is kept.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, Purpose::Shuffle, &[epoch as u64]));
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// In-order index batches, used when measuring fitness.
pub fn sequential_indices(n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch size must be positive");
    (0..n).collect::<Vec<_>>().chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Image batches of one shuffled epoch.
pub fn batches(handle: &DatasetHandle, batch_size: usize, seed: u64, epoch: usize) -> impl Iterator<Item = Tensor> + '_ {
    batch_indices(handle.len(), batch_size, seed, epoch)
        .into_iter()
        .map(move |b| handle.images.gather(&b))
}

/// Average-pools every image by `factor` in both directions; the image size
/// must be divisible by `factor`.
pub fn downsample(handle: &DatasetHandle, factor: usize) -> Result<DatasetHandle, DataError> {
    let [n, h, w, c] = handle.images.shape();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(DataError::Range(format!(
            "cannot downsample {h}x{w} by {factor}"
        )));
    }
    if factor == 1 {
        return Ok(handle.clone());
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = Tensor::zeros([n, oh, ow, c]);
    let norm = 1.0 / (factor * factor) as f64;
    for b in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                for ch in 0..c {
                    let mut s = 0.0;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            s += handle.images.get(b, y * factor + dy, x * factor + dx, ch);
                        }
                    }
                    out.set(b, y, x, ch, s * norm);
                }
            }
        }
    }
    Ok(DatasetHandle {
        images: out,
        ..handle.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_header_errors() {
        let mut bad = vec![0xDE, 0xAD, 0xBE, 0xEF];
        bad.extend_from_slice(&[0; 8]);
        let e = parse_idx(&bad, "x").unwrap_err();
        assert!(e.to_string().contains("0xDEADBEEF"), "{e}");
        assert!(matches!(e, DataError::Parse { offset: 0, .. }));

        let truncated = [0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3];
        assert!(matches!(parse_idx(&truncated, "x"), Err(DataError::Parse { offset: 19, .. })));
    }

    #[test]
    fn cifar_length_must_be_whole_records() {
        assert!(parse_cifar10(&[0; 3074], "x").is_err());
        let (imgs, labels) = parse_cifar10(&[], "x").unwrap();
        assert_eq!((imgs.batch(), labels.len()), (0, 0));
    }

    #[test]
    fn synth_is_deterministic_and_bounded() {
        for kind in [SynthKind::Constant(0.25), SynthKind::Gradient, SynthKind::GaussianBlobs] {
            let a = synth_dataset(kind, 20, 9, 7, 2, 5);
            assert_eq!(a, synth_dataset(kind, 20, 9, 7, 2, 5));
            assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let c = synth_dataset(SynthKind::Constant(0.25), 3, 4, 4, 1, 0);
        assert!(c.images.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn synth_kind_names() {
        for s in ["constant", "constant=0.5", "gradient", "gaussian-blobs"] {
            assert_eq!(s.parse::<SynthKind>().unwrap().to_string(), s);
        }
        assert!("constant=2".parse::<SynthKind>().is_err());
        assert!("plaid".parse::<SynthKind>().is_err());
    }

    #[test]
    fn batch_sizes() {
        let b = batch_indices(100, 32, 1, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![32, 32, 32, 4]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_ne!(batch_indices(100, 32, 1, 0), batch_indices(100, 32, 1, 1));
    }

    #[test]
    fn downsample_averages_blocks() {
        let img = Tensor::from_vec([1, 2, 4, 1], vec![0.0, 1.0, 0.2, 0.2, 1.0, 0.0, 0.6, 0.2]).unwrap();
        let h = DatasetHandle::new("t", "train", img);
        let d = downsample(&h, 2).unwrap();
        assert_eq!(d.images.shape(), [1, 1, 2, 1]);
        assert!((d.images.data()[0] - 0.5).abs() < 1e-15);
        assert!((d.images.data()[1] - 0.3).abs() < 1e-15);
        assert!(downsample(&h, 3).is_err());
    }
}
