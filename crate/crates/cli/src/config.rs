//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` are comments. Every key is dotted
//! (`pso.population_size`); unknown keys and malformed values are errors.
//! [`RunConfig::render`] writes every key in a fixed order with values that
//! parse back to the same configuration.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use fcae_core::data::SynthKind;
use fcae_core::fitness::CaeTrainConfig;
use fcae_core::genome::{GeneBounds, GeneRange};
use fcae_core::nn::AdamConfig;
use fcae_core::trainer::{ClassifierMode, DeepTrainConfig};
use fcae_core::{DecodedArchitecture, PsoConfig, ReferenceMode};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: invalid value `{value}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Cae,
    Surrogate,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cae" => Ok(Self::Cae),
            "surrogate" => Ok(Self::Surrogate),
            _ => Err("expected `cae` or `surrogate`".into()),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cae => "cae",
            Self::Surrogate => "surrogate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DatasetSpec {
    Mnist,
    Cifar10,
    Synth(SynthKind),
}

impl FromStr for DatasetSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mnist" => Ok(Self::Mnist),
            "cifar10" => Ok(Self::Cifar10),
            other => match other.strip_prefix("synth:") {
                Some(kind) => kind.parse().map(Self::Synth),
                None => Err("expected mnist, cifar10 or synth:<kind>".into()),
            },
        }
    }
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Mnist => f.write_str("mnist"),
            Self::Cifar10 => f.write_str("cifar10"),
            Self::Synth(k) => write!(f, "synth:{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub dataset: DatasetSpec,
    /// Empty means `FCAE_DATA_DIR`, then `./data`.
    pub root: String,
    /// Stratified subset sizes; 0 keeps the whole split.
    pub train_samples: usize,
    pub test_samples: usize,
    pub subset_seed: u64,
    /// Average-pooling factor applied after subsetting.
    pub downsample: usize,
    pub synth_n: usize,
    pub synth_size: usize,
    pub synth_channels: usize,
    pub synth_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub mode: Mode,
    pub data: DataConfig,
    pub pso: PsoConfig,
    pub bounds: GeneBounds,
    pub fitness: CaeTrainConfig,
    /// Images used for fitness evaluation (a prefix of the training split
    /// after subsetting); 0 uses all of them.
    pub fitness_train_samples: usize,
    pub surrogate_target: String,
    pub surrogate_l2_resolution: f64,
    pub trainer: DeepTrainConfig,
    /// Architectures for deep training, one per stacked block.
    pub trainer_arch: String,
    pub trainer_arch2: String,
    pub ablate_seeds: usize,
    pub log_svg: bool,
    pub log_wall_ms: bool,
}

pub const DEFAULT_TARGET: &str = "type=conv filter_w=3 filter_h=3 stride_w=1 stride_h=1 feature_maps=40 l2=0.001; \
type=conv filter_w=4 filter_h=4 stride_w=1 stride_h=1 feature_maps=60 l2=0.005; \
type=pool kernel_w=2 kernel_h=2 stride_w=2 stride_h=2";

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 1,
            mode: Mode::Cae,
            data: DataConfig {
                dataset: DatasetSpec::Mnist,
                root: String::new(),
                train_samples: 0,
                test_samples: 0,
                subset_seed: 0,
                downsample: 1,
                synth_n: 256,
                synth_size: 16,
                synth_channels: 1,
                synth_seed: 0,
            },
            pso: PsoConfig::default(),
            bounds: GeneBounds::default(),
            fitness: CaeTrainConfig::default(),
            fitness_train_samples: 0,
            surrogate_target: DEFAULT_TARGET.into(),
            surrogate_l2_resolution: 1e-4,
            trainer: DeepTrainConfig::default(),
            trainer_arch: String::new(),
            trainer_arch2: String::new(),
            ablate_seeds: 20,
            log_svg: true,
            log_wall_ms: false,
        }
    }
}

fn value_err(key: &str, value: &str, reason: impl fmt::Display) -> ConfigError {
    ConfigError::Value {
        key: key.into(),
        value: value.into(),
        reason: reason.to_string(),
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| value_err(key, value, e))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(value_err(key, value, "expected true or false")),
    }
}

/// `lo..hi`, or a single number for a pinned field.
fn parse_range(key: &str, value: &str) -> Result<GeneRange, ConfigError> {
    let (lo, hi) = match value.split_once("..") {
        Some((a, b)) => (parse::<f64>(key, a.trim())?, parse::<f64>(key, b.trim())?),
        None => {
            let v = parse::<f64>(key, value)?;
            (v, v)
        }
    };
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(value_err(key, value, "expected lo..hi with lo <= hi"));
    }
    Ok(GeneRange::new(lo, hi))
}

fn render_range(r: GeneRange) -> String {
    if r.lo == r.hi {
        r.lo.to_string()
    } else {
        format!("{}..{}", r.lo, r.hi)
    }
}

fn parse_classifier(key: &str, value: &str) -> Result<ClassifierMode, ConfigError> {
    match value {
        "none" => Ok(ClassifierMode::None),
        "fc_head" => Ok(ClassifierMode::FcHead),
        _ => Err(value_err(key, value, "expected none or fc_head")),
    }
}

fn render_classifier(m: ClassifierMode) -> &'static str {
    match m {
        ClassifierMode::None => "none",
        ClassifierMode::FcHead => "fc_head",
    }
}

impl RunConfig {
    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let b = &self.bounds;
        let d = &self.data;
        let t = &self.trainer;
        vec![
            ("run.seed", self.seed.to_string()),
            ("run.jobs", self.jobs.to_string()),
            ("run.mode", self.mode.to_string()),
            ("data.dataset", d.dataset.to_string()),
            ("data.root", d.root.clone()),
            ("data.train_samples", d.train_samples.to_string()),
            ("data.test_samples", d.test_samples.to_string()),
            ("data.subset_seed", d.subset_seed.to_string()),
            ("data.downsample", d.downsample.to_string()),
            ("data.synth_n", d.synth_n.to_string()),
            ("data.synth_size", d.synth_size.to_string()),
            ("data.synth_channels", d.synth_channels.to_string()),
            ("data.synth_seed", d.synth_seed.to_string()),
            ("pso.population_size", self.pso.population_size.to_string()),
            ("pso.generations", self.pso.max_generations.to_string()),
            ("pso.inertia_w", self.pso.inertia_w.to_string()),
            ("pso.c1", self.pso.c1.to_string()),
            ("pso.c2", self.pso.c2.to_string()),
            ("pso.v_max_fraction", self.pso.v_max_fraction.to_string()),
            ("pso.reference_mode", self.pso.reference_mode.to_string()),
            ("genome.filter_w", render_range(b.conv[0])),
            ("genome.filter_h", render_range(b.conv[1])),
            ("genome.conv_stride_w", render_range(b.conv[2])),
            ("genome.conv_stride_h", render_range(b.conv[3])),
            ("genome.feature_maps", render_range(b.conv[4])),
            ("genome.l2", render_range(b.conv[5])),
            ("genome.pool_kernel_w", render_range(b.pool[0])),
            ("genome.pool_kernel_h", render_range(b.pool[1])),
            ("genome.pool_stride_w", render_range(b.pool[2])),
            ("genome.pool_stride_h", render_range(b.pool[3])),
            ("genome.max_conv", b.max_conv.to_string()),
            ("genome.max_pool", b.max_pool.to_string()),
            ("genome.square_mode", b.square_mode.to_string()),
            ("genome.fix_conv_stride", b.fix_conv_stride.to_string()),
            ("fitness.epochs", self.fitness.epochs.to_string()),
            ("fitness.batch_size", self.fitness.batch_size.to_string()),
            ("fitness.learning_rate", self.fitness.adam.alpha.to_string()),
            ("fitness.train_samples", self.fitness_train_samples.to_string()),
            ("surrogate.target", self.surrogate_target.clone()),
            ("surrogate.l2_resolution", self.surrogate_l2_resolution.to_string()),
            ("trainer.arch", self.trainer_arch.clone()),
            ("trainer.arch2", self.trainer_arch2.clone()),
            ("trainer.epochs", t.epochs.to_string()),
            ("trainer.batch_size", t.batch_size.to_string()),
            ("trainer.learning_rate", t.adam.alpha.to_string()),
            ("trainer.classifier", render_classifier(t.classifier).into()),
            ("trainer.classifier_epochs", t.classifier_epochs.to_string()),
            ("trainer.fc_units", t.fc_units.to_string()),
            ("trainer.dropout_rate", t.dropout_rate.to_string()),
            ("trainer.runs", t.runs.to_string()),
            ("ablate.seeds", self.ablate_seeds.to_string()),
            ("log.svg", self.log_svg.to_string()),
            ("log.wall_ms", self.log_wall_ms.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let k = key.trim();
        let b = &mut self.bounds;
        let d = &mut self.data;
        let t = &mut self.trainer;
        match k {
            "run.seed" => self.seed = parse(k, v)?,
            "run.jobs" => self.jobs = parse(k, v)?,
            "run.mode" => self.mode = parse(k, v)?,
            "data.dataset" => d.dataset = parse(k, v)?,
            "data.root" => d.root = v.to_string(),
            "data.train_samples" => d.train_samples = parse(k, v)?,
            "data.test_samples" => d.test_samples = parse(k, v)?,
            "data.subset_seed" => d.subset_seed = parse(k, v)?,
            "data.downsample" => d.downsample = parse(k, v)?,
            "data.synth_n" => d.synth_n = parse(k, v)?,
            "data.synth_size" => d.synth_size = parse(k, v)?,
            "data.synth_channels" => d.synth_channels = parse(k, v)?,
            "data.synth_seed" => d.synth_seed = parse(k, v)?,
            "pso.population_size" => self.pso.population_size = parse(k, v)?,
            "pso.generations" => self.pso.max_generations = parse(k, v)?,
            "pso.inertia_w" => self.pso.inertia_w = parse(k, v)?,
            "pso.c1" => self.pso.c1 = parse(k, v)?,
            "pso.c2" => self.pso.c2 = parse(k, v)?,
            "pso.v_max_fraction" => self.pso.v_max_fraction = parse(k, v)?,
            "pso.reference_mode" => self.pso.reference_mode = parse::<ReferenceMode>(k, v)?,
            "genome.filter_w" => b.conv[0] = parse_range(k, v)?,
            "genome.filter_h" => b.conv[1] = parse_range(k, v)?,
            "genome.conv_stride_w" => b.conv[2] = parse_range(k, v)?,
            "genome.conv_stride_h" => b.conv[3] = parse_range(k, v)?,
            "genome.feature_maps" => b.conv[4] = parse_range(k, v)?,
            "genome.l2" => b.conv[5] = parse_range(k, v)?,
            "genome.pool_kernel_w" => b.pool[0] = parse_range(k, v)?,
            "genome.pool_kernel_h" => b.pool[1] = parse_range(k, v)?,
            "genome.pool_stride_w" => b.pool[2] = parse_range(k, v)?,
            "genome.pool_stride_h" => b.pool[3] = parse_range(k, v)?,
            "genome.max_conv" => b.max_conv = parse(k, v)?,
            "genome.max_pool" => b.max_pool = parse(k, v)?,
            "genome.square_mode" => b.square_mode = parse_bool(k, v)?,
            "genome.fix_conv_stride" => b.fix_conv_stride = parse_bool(k, v)?,
            "fitness.epochs" => self.fitness.epochs = parse(k, v)?,
            "fitness.batch_size" => self.fitness.batch_size = parse(k, v)?,
            "fitness.learning_rate" => self.fitness.adam.alpha = parse(k, v)?,
            "fitness.train_samples" => self.fitness_train_samples = parse(k, v)?,
            "surrogate.target" => self.surrogate_target = v.to_string(),
            "surrogate.l2_resolution" => self.surrogate_l2_resolution = parse(k, v)?,
            "trainer.arch" => self.trainer_arch = v.to_string(),
            "trainer.arch2" => self.trainer_arch2 = v.to_string(),
            "trainer.epochs" => t.epochs = parse(k, v)?,
            "trainer.batch_size" => t.batch_size = parse(k, v)?,
            "trainer.learning_rate" => t.adam = AdamConfig { alpha: parse(k, v)?, ..t.adam },
            "trainer.classifier" => t.classifier = parse_classifier(k, v)?,
            "trainer.classifier_epochs" => t.classifier_epochs = parse(k, v)?,
            "trainer.fc_units" => t.fc_units = parse(k, v)?,
            "trainer.dropout_rate" => t.dropout_rate = parse(k, v)?,
            "trainer.runs" => t.runs = parse(k, v)?,
            "ablate.seeds" => self.ablate_seeds = parse(k, v)?,
            "log.svg" => self.log_svg = parse_bool(k, v)?,
            "log.wall_ms" => self.log_wall_ms = parse_bool(k, v)?,
            _ => return Err(ConfigError::UnknownKey(k.to_string())),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(k, v).map_err(|e| match e {
                ConfigError::UnknownKey(_) | ConfigError::Value { .. } => ConfigError::Syntax {
                    line: i + 1,
                    reason: e.to_string(),
                },
                other => other,
            })?;
        }
        Ok(())
    }

    /// Applies a `key=value` override from the command line.
    pub fn apply_override(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            reason: format!("override `{pair}` is not key=value"),
        })?;
        self.set(k, v)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Copies the run seed into the sub-configurations and checks the
    /// combined invariants.
    pub fn finish(mut self) -> Result<Self, ConfigError> {
        self.pso.seed = self.seed;
        self.trainer.seed = self.seed;
        let inv = |e: &dyn fmt::Display| ConfigError::Invalid(e.to_string());
        self.pso.validate().map_err(|e| inv(&e))?;
        self.bounds.validate().map_err(|e| inv(&e))?;
        self.trainer.validate().map_err(|e| inv(&e))?;
        if self.jobs < 1 {
            return Err(ConfigError::Invalid("run.jobs must be >= 1".into()));
        }
        if self.fitness.epochs < 1 || self.fitness.batch_size < 1 {
            return Err(ConfigError::Invalid(
                "fitness.epochs and fitness.batch_size must be >= 1".into(),
            ));
        }
        if self.data.downsample < 1 {
            return Err(ConfigError::Invalid("data.downsample must be >= 1".into()));
        }
        Ok(self)
    }

    pub fn surrogate_target(&self) -> Result<DecodedArchitecture, ConfigError> {
        let arch = DecodedArchitecture::from_descriptor(&self.surrogate_target)
            .map_err(|e| value_err("surrogate.target", &self.surrogate_target, e))?;
        if !arch.within(&self.bounds) {
            return Err(value_err(
                "surrogate.target",
                &self.surrogate_target,
                "target lies outside the genome bounds",
            ));
        }
        Ok(arch)
    }

    /// Architectures named by `trainer.arch` and `trainer.arch2`.
    pub fn trainer_archs(&self) -> Result<Vec<DecodedArchitecture>, ConfigError> {
        let mut out = Vec::new();
        for (key, text) in [("trainer.arch", &self.trainer_arch), ("trainer.arch2", &self.trainer_arch2)] {
            if text.is_empty() {
                continue;
            }
            if key == "trainer.arch2" && out.is_empty() {
                return Err(ConfigError::Invalid("trainer.arch2 is set but trainer.arch is empty".into()));
            }
            out.push(DecodedArchitecture::from_descriptor(text).map_err(|e| value_err(key, text, e))?);
        }
        if out.is_empty() {
            return Err(ConfigError::Invalid(
                "no architecture given (use --arch or trainer.arch)".into(),
            ));
        }
        Ok(out)
    }

    /// `data.root`, else `FCAE_DATA_DIR`, else `data`.
    pub fn data_root(&self) -> PathBuf {
        if !self.data.root.is_empty() {
            return PathBuf::from(&self.data.root);
        }
        std::env::var_os("FCAE_DATA_DIR")
            .filter(|v| !v.is_empty())
            .map_or_else(|| PathBuf::from("data"), PathBuf::from)
    }
}
