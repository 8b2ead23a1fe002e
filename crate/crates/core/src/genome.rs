//! Variable-length architecture encoding.
//!
//! A genome is the encoder half of an FCAE: a list of convolutional genes
//! followed by a list of pooling genes. Gene fields are continuous reals so
//! that the swarm arithmetic stays real-valued; integer layer settings only
//! appear when a genome is decoded (round to nearest, then clamp).
//!
//! The text descriptor is one record per layer, `key=value` tokens separated
//! by whitespace, records separated by newlines (or `;` for single-line use):
//!
//! ```text
//! type=conv filter_w=4 filter_h=4 stride_w=1 stride_h=1 feature_maps=36 l2=0.0001
//! type=pool kernel_w=2 kernel_h=2 stride_w=2 stride_h=2
//! ```

use std::fmt::{self, Write as _};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GenomeError {
    #[error("invalid gene bounds: {0}")]
    InvalidBounds(String),
    #[error("descriptor record {record}: field `{field}`: {reason}")]
    Parse {
        record: usize,
        field: String,
        reason: String,
    },
}

fn parse_err(record: usize, field: &str, reason: impl Into<String>) -> GenomeError {
    GenomeError::Parse {
        record,
        field: field.to_string(),
        reason: reason.into(),
    }
}

pub const CONV_FIELDS: [&str; 6] = [
    "filter_w",
    "filter_h",
    "stride_w",
    "stride_h",
    "feature_maps",
    "l2",
];
pub const POOL_FIELDS: [&str; 4] = ["kernel_w", "kernel_h", "stride_w", "stride_h"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvGene {
    pub filter_w: f64,
    pub filter_h: f64,
    pub stride_w: f64,
    pub stride_h: f64,
    pub feature_maps: f64,
    pub l2: f64,
}

impl ConvGene {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.filter_w,
            self.filter_h,
            self.stride_w,
            self.stride_h,
            self.feature_maps,
            self.l2,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            filter_w: a[0],
            filter_h: a[1],
            stride_w: a[2],
            stride_h: a[3],
            feature_maps: a[4],
            l2: a[5],
        }
    }
}

/// Max pooling is fixed; the pooling type is not a gene.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PoolGene {
    pub kernel_w: f64,
    pub kernel_h: f64,
    pub stride_w: f64,
    pub stride_h: f64,
}

impl PoolGene {
    pub fn to_array(&self) -> [f64; 4] {
        [self.kernel_w, self.kernel_h, self.stride_w, self.stride_h]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            kernel_w: a[0],
            kernel_h: a[1],
            stride_w: a[2],
            stride_h: a[3],
        }
    }
}

/// Conv genes first, pool genes second; the two kinds are never interleaved.
///
/// The same type doubles as the velocity of a particle, which always has the
/// shape of its position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchGenome {
    pub conv: Vec<ConvGene>,
    pub pool: Vec<PoolGene>,
}

impl ArchGenome {
    pub fn new(conv: Vec<ConvGene>, pool: Vec<PoolGene>) -> Self {
        Self { conv, pool }
    }

    /// `(n_conv, n_pool)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.conv.len(), self.pool.len())
    }

    /// Total scalar count, `6·n_c + 4·n_p`.
    pub fn scalar_len(&self) -> usize {
        6 * self.conv.len() + 4 * self.pool.len()
    }

    pub fn zeros(n_conv: usize, n_pool: usize) -> Self {
        Self {
            conv: vec![ConvGene::default(); n_conv],
            pool: vec![PoolGene::default(); n_pool],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.conv.len(), self.pool.len())
    }

    /// Pads with all-zero genes or truncates the tail so that the shape
    /// becomes `(n_conv, n_pool)`.
    pub fn fit_to(&self, n_conv: usize, n_pool: usize) -> Self {
        Self {
            conv: fit_len(&self.conv, n_conv),
            pool: fit_len(&self.pool, n_pool),
        }
    }

    pub fn scalars(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.scalar_len());
        for g in &self.conv {
            out.extend_from_slice(&g.to_array());
        }
        for g in &self.pool {
            out.extend_from_slice(&g.to_array());
        }
        out
    }

    /// Combines two same-shaped genomes field by field.
    ///
    /// Panics on a shape mismatch: every caller aligns shapes first.
    pub fn zip_with(&self, other: &Self, mut f: impl FnMut(GeneSlot, f64, f64) -> f64) -> Self {
        assert_eq!(
            self.shape(),
            other.shape(),
            "genome shape mismatch in element-wise operation"
        );
        let conv = self
            .conv
            .iter()
            .zip(&other.conv)
            .map(|(a, b)| {
                let (a, b) = (a.to_array(), b.to_array());
                ConvGene::from_array(std::array::from_fn(|i| {
                    f(GeneSlot::Conv(i), a[i], b[i])
                }))
            })
            .collect();
        let pool = self
            .pool
            .iter()
            .zip(&other.pool)
            .map(|(a, b)| {
                let (a, b) = (a.to_array(), b.to_array());
                PoolGene::from_array(std::array::from_fn(|i| {
                    f(GeneSlot::Pool(i), a[i], b[i])
                }))
            })
            .collect();
        Self { conv, pool }
    }

    pub fn map(&self, mut f: impl FnMut(GeneSlot, f64) -> f64) -> Self {
        self.zip_with(self, |slot, a, _| f(slot, a))
    }

    pub fn is_finite(&self) -> bool {
        self.scalars().iter().all(|v| v.is_finite())
    }

    pub fn to_descriptor(&self) -> String {
        let mut s = String::new();
        for g in &self.conv {
            let _ = writeln!(
                s,
                "type=conv filter_w={} filter_h={} stride_w={} stride_h={} feature_maps={} l2={}",
                g.filter_w, g.filter_h, g.stride_w, g.stride_h, g.feature_maps, g.l2
            );
        }
        for g in &self.pool {
            let _ = writeln!(
                s,
                "type=pool kernel_w={} kernel_h={} stride_w={} stride_h={}",
                g.kernel_w, g.kernel_h, g.stride_w, g.stride_h
            );
        }
        s
    }

    /// Same records as [`to_descriptor`](Self::to_descriptor) joined by `; `.
    pub fn to_compact_descriptor(&self) -> String {
        self.to_descriptor()
            .lines()
            .collect::<Vec<_>>()
            .join("; ")
    }

    pub fn from_descriptor(text: &str) -> Result<Self, GenomeError> {
        let mut conv = Vec::new();
        let mut pool = Vec::new();
        let records = text
            .split(['\n', ';'])
            .map(|r| r.split('#').next().unwrap_or("").trim())
            .filter(|r| !r.is_empty());
        for (idx, record) in records.enumerate() {
            let mut fields: Vec<(&str, &str)> = Vec::new();
            for token in record.split_whitespace() {
                let (k, v) = token
                    .split_once('=')
                    .ok_or_else(|| parse_err(idx, token, "expected key=value"))?;
                if fields.iter().any(|(seen, _)| *seen == k) {
                    return Err(parse_err(idx, k, "duplicate field"));
                }
                fields.push((k, v));
            }
            let kind = fields
                .iter()
                .find(|(k, _)| *k == "type")
                .map(|(_, v)| *v)
                .ok_or_else(|| parse_err(idx, "type", "missing"))?;
            match kind {
                "conv" => {
                    if !pool.is_empty() {
                        return Err(parse_err(
                            idx,
                            "type",
                            "conv layer after a pool layer (layer kinds may not interleave)",
                        ));
                    }
                    let vals = read_fields(idx, &fields, &CONV_FIELDS)?;
                    conv.push(ConvGene::from_array(vals));
                }
                "pool" => {
                    let vals = read_fields(idx, &fields, &POOL_FIELDS)?;
                    pool.push(PoolGene::from_array(vals));
                }
                other => {
                    return Err(parse_err(idx, "type", format!("unknown layer type `{other}`")))
                }
            }
        }
        if conv.is_empty() {
            return Err(parse_err(0, "type", "at least one conv layer is required"));
        }
        if pool.is_empty() {
            return Err(parse_err(conv.len(), "type", "at least one pool layer is required"));
        }
        Ok(Self { conv, pool })
    }
}

impl fmt::Display for ArchGenome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_compact_descriptor())
    }
}

fn read_fields<const N: usize>(
    record: usize,
    fields: &[(&str, &str)],
    names: &[&str; N],
) -> Result<[f64; N], GenomeError> {
    for (k, _) in fields {
        if *k != "type" && !names.contains(k) {
            return Err(parse_err(record, k, "unknown field"));
        }
    }
    let mut out = [0.0; N];
    for (slot, name) in out.iter_mut().zip(names) {
        let raw = fields
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| parse_err(record, name, "missing"))?;
        *slot = raw
            .parse::<f64>()
            .map_err(|e| parse_err(record, name, format!("`{raw}`: {e}")))?;
        if !slot.is_finite() {
            return Err(parse_err(record, name, "value must be finite"));
        }
    }
    Ok(out)
}

fn fit_len<T: Clone + Default>(src: &[T], len: usize) -> Vec<T> {
    let mut out: Vec<T> = src.iter().take(len).cloned().collect();
    out.resize(len, T::default());
    out
}

/// Identifies one scalar field of a genome, used for per-field bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneSlot {
    Conv(usize),
    Pool(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneRange {
    pub lo: f64,
    pub hi: f64,
}

impl GeneRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn span(&self) -> f64 {
        self.hi - self.lo
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        self.lo + self.span() * rng.random::<f64>()
    }

    fn clamp(&self, v: f64) -> f64 {
        if v.is_nan() {
            self.lo
        } else {
            v.clamp(self.lo, self.hi)
        }
    }
}

/// Search-space bounds. `conv` and `pool` are indexed like
/// [`CONV_FIELDS`] and [`POOL_FIELDS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneBounds {
    pub conv: [GeneRange; 6],
    pub pool: [GeneRange; 4],
    pub max_conv: usize,
    pub max_pool: usize,
    /// Decoded height copies decoded width, for filters, kernels and strides.
    pub square_mode: bool,
    /// Conv strides always decode to 1.
    pub fix_conv_stride: bool,
}

impl Default for GeneBounds {
    fn default() -> Self {
        let size = GeneRange::new(2.0, 5.0);
        let stride = GeneRange::new(1.0, 5.0);
        Self {
            conv: [
                size,
                size,
                stride,
                stride,
                GeneRange::new(20.0, 100.0),
                GeneRange::new(0.0001, 0.01),
            ],
            pool: [size, size, stride, stride],
            max_conv: 5,
            max_pool: 1,
            square_mode: true,
            fix_conv_stride: true,
        }
    }
}

impl GeneBounds {
    pub fn validate(&self) -> Result<(), GenomeError> {
        if self.max_conv < 1 || self.max_pool < 1 {
            return Err(GenomeError::InvalidBounds(format!(
                "max_conv and max_pool must be >= 1 (got {} and {})",
                self.max_conv, self.max_pool
            )));
        }
        let named = CONV_FIELDS
            .iter()
            .map(|n| ("conv", *n))
            .zip(self.conv.iter())
            .chain(POOL_FIELDS.iter().map(|n| ("pool", *n)).zip(self.pool.iter()));
        for ((kind, name), r) in named {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi) {
                return Err(GenomeError::InvalidBounds(format!(
                    "{kind}.{name}: need lo <= hi, got [{}, {}]",
                    r.lo, r.hi
                )));
            }
        }
        for (kind, ranges) in [("conv", &self.conv[..4]), ("pool", &self.pool[..])] {
            if ranges.iter().any(|r| r.lo < 1.0) {
                return Err(GenomeError::InvalidBounds(format!(
                    "{kind}: sizes and strides must be >= 1"
                )));
            }
        }
        if self.conv[4].lo < 1.0 {
            return Err(GenomeError::InvalidBounds(
                "conv.feature_maps must be >= 1".into(),
            ));
        }
        if self.conv[5].lo < 0.0 {
            return Err(GenomeError::InvalidBounds("conv.l2 must be >= 0".into()));
        }
        Ok(())
    }

    pub fn range(&self, slot: GeneSlot) -> GeneRange {
        match slot {
            GeneSlot::Conv(i) => self.conv[i],
            GeneSlot::Pool(i) => self.pool[i],
        }
    }

    pub fn span(&self, slot: GeneSlot) -> f64 {
        self.range(slot).span()
    }

    /// Whether a field can vary in the decoded architecture. Heights are
    /// inactive in square mode, conv strides when they are fixed, and any
    /// field whose range is a single value.
    pub fn is_active(&self, slot: GeneSlot) -> bool {
        if self.span(slot) == 0.0 {
            return false;
        }
        match slot {
            GeneSlot::Conv(1) | GeneSlot::Pool(1) | GeneSlot::Pool(3) => !self.square_mode,
            GeneSlot::Conv(3) => !self.square_mode && !self.fix_conv_stride,
            GeneSlot::Conv(2) => !self.fix_conv_stride,
            _ => true,
        }
    }
}

/// Draws a random genome: layer counts uniform over `[1, max]`, every field
/// uniform inside its range.
pub fn init_genome(bounds: &GeneBounds, rng: &mut impl Rng) -> Result<ArchGenome, GenomeError> {
    bounds.validate()?;
    let n_conv = rng.random_range(1..=bounds.max_conv);
    let n_pool = rng.random_range(1..=bounds.max_pool);
    let conv = (0..n_conv)
        .map(|_| {
            let mut a: [f64; 6] = std::array::from_fn(|i| bounds.conv[i].sample(rng));
            if bounds.square_mode {
                a[1] = a[0];
                a[3] = a[2];
            }
            if bounds.fix_conv_stride {
                a[2] = 1.0;
                a[3] = 1.0;
            }
            ConvGene::from_array(a)
        })
        .collect();
    let pool = (0..n_pool)
        .map(|_| {
            let mut a: [f64; 4] = std::array::from_fn(|i| bounds.pool[i].sample(rng));
            if bounds.square_mode {
                a[1] = a[0];
                a[3] = a[2];
            }
            PoolGene::from_array(a)
        })
        .collect();
    Ok(ArchGenome { conv, pool })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub filter_w: usize,
    pub filter_h: usize,
    pub stride_w: usize,
    pub stride_h: usize,
    pub feature_maps: usize,
    pub l2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolLayer {
    pub kernel_w: usize,
    pub kernel_h: usize,
    pub stride_w: usize,
    pub stride_h: usize,
}

/// Integer layer settings obtained from a genome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedArchitecture {
    pub conv: Vec<ConvLayer>,
    pub pool: Vec<PoolLayer>,
}

impl DecodedArchitecture {
    /// Re-encodes the integer settings as an exact real genome.
    pub fn to_genome(&self) -> ArchGenome {
        ArchGenome {
            conv: self
                .conv
                .iter()
                .map(|c| ConvGene {
                    filter_w: c.filter_w as f64,
                    filter_h: c.filter_h as f64,
                    stride_w: c.stride_w as f64,
                    stride_h: c.stride_h as f64,
                    feature_maps: c.feature_maps as f64,
                    l2: c.l2,
                })
                .collect(),
            pool: self
                .pool
                .iter()
                .map(|p| PoolGene {
                    kernel_w: p.kernel_w as f64,
                    kernel_h: p.kernel_h as f64,
                    stride_w: p.stride_w as f64,
                    stride_h: p.stride_h as f64,
                })
                .collect(),
        }
    }

    pub fn to_descriptor(&self) -> String {
        self.to_genome().to_descriptor()
    }

    /// Reads a descriptor without any bounds: sizes and counts must be
    /// positive integers, strides may not exceed the window, l2 must be >= 0.
    pub fn from_descriptor(text: &str) -> Result<Self, GenomeError> {
        let g = ArchGenome::from_descriptor(text)?;
        let int = |record: usize, field: &str, v: f64| -> Result<usize, GenomeError> {
            if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(parse_err(record, field, format!("`{v}` is not a positive integer")))
            }
        };
        let mut conv = Vec::with_capacity(g.conv.len());
        for (r, c) in g.conv.iter().enumerate() {
            let a = c.to_array();
            let v: Vec<usize> = (0..5)
                .map(|i| int(r, CONV_FIELDS[i], a[i]))
                .collect::<Result<_, _>>()?;
            if v[2] > v[0].min(v[1]) || v[3] > v[0].min(v[1]) {
                return Err(parse_err(r, "stride_w", "stride larger than the filter"));
            }
            if !(c.l2 >= 0.0) {
                return Err(parse_err(r, "l2", "must be >= 0"));
            }
            conv.push(ConvLayer {
                filter_w: v[0],
                filter_h: v[1],
                stride_w: v[2],
                stride_h: v[3],
                feature_maps: v[4],
                l2: c.l2,
            });
        }
        let mut pool = Vec::with_capacity(g.pool.len());
        for (i, p) in g.pool.iter().enumerate() {
            let r = conv.len() + i;
            let a = p.to_array();
            let v: Vec<usize> = (0..4)
                .map(|k| int(r, POOL_FIELDS[k], a[k]))
                .collect::<Result<_, _>>()?;
            if v[2] > v[0].min(v[1]) || v[3] > v[0].min(v[1]) {
                return Err(parse_err(r, "stride_w", "stride larger than the kernel"));
            }
            pool.push(PoolLayer {
                kernel_w: v[0],
                kernel_h: v[1],
                stride_w: v[2],
                stride_h: v[3],
            });
        }
        Ok(Self { conv, pool })
    }

    /// True when every field lies inside `bounds` and obeys its layout
    /// rules, so that decoding the re-encoded genome changes nothing.
    pub fn within(&self, bounds: &GeneBounds) -> bool {
        self.conv.len() <= bounds.max_conv
            && self.pool.len() <= bounds.max_pool
            && decode(&self.to_genome(), bounds) == *self
    }
}

fn round_clamp(v: f64, r: GeneRange) -> usize {
    // bounds are validated to be >= 1, so the cast is lossless
    r.clamp(v.round()).round() as usize
}

fn clamp_stride(v: f64, r: GeneRange, size: usize) -> usize {
    round_clamp(v, r).clamp(1, size.max(1))
}

/// Round-to-nearest then clamp; `l2` is clamped only. Total and deterministic.
///
/// Layer counts above the configured maxima are kept as they are; the bounds
/// only govern the per-field values.
pub fn decode(genome: &ArchGenome, bounds: &GeneBounds) -> DecodedArchitecture {
    let conv = genome
        .conv
        .iter()
        .map(|g| {
            let filter_w = round_clamp(g.filter_w, bounds.conv[0]);
            let filter_h = if bounds.square_mode {
                filter_w
            } else {
                round_clamp(g.filter_h, bounds.conv[1])
            };
            let limit = filter_w.min(filter_h);
            let (stride_w, stride_h) = if bounds.fix_conv_stride {
                (1, 1)
            } else {
                let sw = clamp_stride(g.stride_w, bounds.conv[2], limit);
                let sh = if bounds.square_mode {
                    sw
                } else {
                    clamp_stride(g.stride_h, bounds.conv[3], limit)
                };
                (sw, sh)
            };
            ConvLayer {
                filter_w,
                filter_h,
                stride_w,
                stride_h,
                feature_maps: round_clamp(g.feature_maps, bounds.conv[4]),
                l2: bounds.conv[5].clamp(g.l2),
            }
        })
        .collect();
    let pool = genome
        .pool
        .iter()
        .map(|g| {
            let kernel_w = round_clamp(g.kernel_w, bounds.pool[0]);
            let kernel_h = if bounds.square_mode {
                kernel_w
            } else {
                round_clamp(g.kernel_h, bounds.pool[1])
            };
            let limit = kernel_w.min(kernel_h);
            let stride_w = clamp_stride(g.stride_w, bounds.pool[2], limit);
            let stride_h = if bounds.square_mode {
                stride_w
            } else {
                clamp_stride(g.stride_h, bounds.pool[3], limit)
            };
            PoolLayer {
                kernel_w,
                kernel_h,
                stride_w,
                stride_h,
            }
        })
        .collect();
    DecodedArchitecture { conv, pool }
}
