//! The subcommands. Each loads and checks its inputs before it creates the
//! output directory, so a failed precondition leaves no files behind.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fcae_core::checkpoint::{Checkpoint, Model};
use fcae_core::data::{
    downsample, load_cifar10_binary, load_mnist, subset, synth_dataset, DatasetHandle, Split,
};
use fcae_core::fitness::{mean_reconstruction_error, CaeEvaluator, SurrogateEvaluator};
use fcae_core::pso::{run_search_with, FitnessEvaluator, SearchOutcome};
use fcae_core::rng::{derive_seed, Purpose};
use fcae_core::selfcheck::{self, CheckResult, SelfcheckOptions};
use fcae_core::trainer::{
    accuracy, deep_train_with, encode_dataset, train_classifier, AccuracyReport, ClassifierMode,
    DeepTrainConfig, TrainError,
};
use fcae_core::{DecodedArchitecture, ReferenceMode, TrajectoryRecord};

use crate::config::{ConfigError, DatasetSpec, Mode, RunConfig};
use crate::output::{
    fmt_f64, start_run_dir, trajectory_csv, trajectory_svg, write_file, TrajectoryWriter,
};

/// Loads one split with the configured subset size and downsampling.
pub fn load_split(cfg: &RunConfig, split: Split) -> Result<DatasetHandle> {
    let d = &cfg.data;
    let root = cfg.data_root();
    let full = match d.dataset {
        DatasetSpec::Mnist => load_mnist(&root, split)?,
        DatasetSpec::Cifar10 => load_cifar10_binary(&root, split)?,
        DatasetSpec::Synth(kind) => {
            let key = match split {
                Split::Train => 0,
                Split::Test => 1,
            };
            let mut h = synth_dataset(
                kind,
                d.synth_n,
                d.synth_size,
                d.synth_size,
                d.synth_channels,
                derive_seed(d.synth_seed, Purpose::Synth, &[key]),
            );
            h.split = split.to_string();
            h
        }
    };
    let n = match split {
        Split::Train => d.train_samples,
        Split::Test => d.test_samples,
    };
    let picked = if n > 0 { subset(&full, n, d.subset_seed)? } else { full };
    Ok(downsample(&picked, d.downsample)?)
}

/// Pins the dataset root actually used, so the resolved config replays it.
fn pin_root(cfg: &mut RunConfig) {
    if !matches!(cfg.data.dataset, DatasetSpec::Synth(_)) {
        cfg.data.root = cfg.data_root().display().to_string();
    }
}

fn fitness_data(cfg: &RunConfig, train: &DatasetHandle) -> Result<DatasetHandle> {
    let n = cfg.fitness_train_samples;
    if n == 0 || n >= train.len() {
        return Ok(train.clone());
    }
    Ok(subset(train, n, cfg.data.subset_seed)?)
}

fn summarize(records: &[TrajectoryRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let _ = writeln!(s, "generation {:>3}: gbest {}", r.generation, fmt_f64(r.gbest_fitness));
    }
    s
}

pub struct SearchReport {
    pub outcome: SearchOutcome,
    pub gbest: DecodedArchitecture,
}

/// Data the search evaluates against, prepared before any file is written.
enum Prepared {
    Cae(DatasetHandle),
    Surrogate(SurrogateEvaluator),
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    Ok(match cfg.mode {
        Mode::Cae => {
            let train = load_split(cfg, Split::Train)?;
            if train.is_empty() {
                bail!("training split of {} is empty", cfg.data.dataset);
            }
            Prepared::Cae(fitness_data(cfg, &train)?)
        }
        Mode::Surrogate => {
            let mut s = SurrogateEvaluator::new(cfg.surrogate_target()?, cfg.bounds.clone());
            s.l2_resolution = cfg.surrogate_l2_resolution;
            Prepared::Surrogate(s)
        }
    })
}

/// One search into `dir`, whose parent already exists or is created.
fn search_into(
    cfg: &RunConfig,
    prepared: &Prepared,
    reference_mode: ReferenceMode,
    seed: u64,
    jsonl: &Path,
    timing: Option<&Path>,
) -> Result<(SearchOutcome, Option<String>)> {
    let mut pso = cfg.pso.clone();
    pso.reference_mode = reference_mode;
    pso.seed = seed;
    let mut writer = TrajectoryWriter::create(jsonl, timing, cfg.log_wall_ms)?;
    let mut write_err = None;
    let cae = match prepared {
        Prepared::Cae(data) => Some(CaeEvaluator::new(data, cfg.fitness.clone())),
        Prepared::Surrogate(_) => None,
    };
    let evaluator: &dyn FitnessEvaluator = match (prepared, &cae) {
        (_, Some(c)) => c,
        (Prepared::Surrogate(s), None) => s,
        (Prepared::Cae(_), None) => unreachable!("cae evaluator is built above"),
    };
    let outcome = run_search_with(&pso, &cfg.bounds, evaluator, cfg.jobs, |rec| {
        log::info!(
            "seed {seed} generation {}/{}: gbest {}",
            rec.generation,
            pso.max_generations,
            fmt_f64(rec.gbest_fitness)
        );
        if write_err.is_none() {
            write_err = writer.record(rec).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let evaluations = match &cae {
        Some(cae) => {
            let mut s = String::from("generation,particle,fitness,param_count,diagnostic\n");
            for (ctx, r) in cae.take_reports() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},\"{}\"",
                    ctx.generation,
                    ctx.particle,
                    fmt_f64(r.fitness),
                    r.param_count,
                    r.diagnostic.unwrap_or_default().replace('"', "'")
                );
            }
            Some(s)
        }
        None => None,
    };
    Ok((outcome, evaluations))
}

pub fn search(mut cfg: RunConfig, out: &Path) -> Result<SearchReport> {
    let prepared = prepare(&cfg)?;
    pin_root(&mut cfg);
    start_run_dir(out, &cfg)?;
    let (outcome, evaluations) = search_into(
        &cfg,
        &prepared,
        cfg.pso.reference_mode,
        cfg.seed,
        &out.join("trajectory.jsonl"),
        Some(&out.join("timing.csv")),
    )?;
    let gbest = outcome.gbest_decoded(&cfg.bounds);
    write_file(&out.join("trajectory.csv"), &trajectory_csv(&outcome.trajectory))?;
    write_file(&out.join("gbest.arch"), &gbest.to_descriptor())?;
    if let Some(e) = evaluations {
        write_file(&out.join("evaluations.csv"), &e)?;
    }
    if cfg.log_svg {
        let title = format!("gBest fitness, {} mode, seed {}", cfg.mode, cfg.seed);
        write_file(&out.join("trajectory.svg"), &trajectory_svg(&outcome.trajectory, &title))?;
    }
    let mut summary = format!(
        "mode = {}\nseed = {}\nreference_mode = {}\npopulation_size = {}\ngenerations = {}\ngbest_fitness = {}\ngbest = {}\n",
        cfg.mode,
        cfg.seed,
        cfg.pso.reference_mode,
        cfg.pso.population_size,
        cfg.pso.max_generations,
        fmt_f64(outcome.gbest_fitness),
        gbest.to_genome().to_compact_descriptor(),
    );
    summary.push_str(&summarize(&outcome.trajectory));
    write_file(&out.join("summary.txt"), &summary)?;
    Ok(SearchReport { outcome, gbest })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub seed: u64,
    pub x_reference: f64,
    pub gbest_reference: f64,
    /// Every x-reference generation evaluated the initial particle lengths.
    pub x_lengths_preserved: bool,
    /// First generation from which all gbest-reference particles share one
    /// length, if any.
    pub gbest_collapse_generation: Option<usize>,
}

fn collapse_generation(records: &[TrajectoryRecord]) -> Option<usize> {
    let uniform = |r: &TrajectoryRecord| r.particle_lengths.windows(2).all(|w| w[0] == w[1]);
    let mut first = None;
    for r in records {
        if uniform(r) {
            first.get_or_insert(r.generation);
        } else {
            first = None;
        }
    }
    first
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn ablate_velocity(mut cfg: RunConfig, out: &Path) -> Result<Vec<AblationRow>> {
    if cfg.ablate_seeds < 2 {
        return Err(ConfigError::Invalid("ablate.seeds must be >= 2".into()).into());
    }
    let prepared = prepare(&cfg)?;
    pin_root(&mut cfg);
    start_run_dir(out, &cfg)?;
    let mut rows = Vec::with_capacity(cfg.ablate_seeds);
    for k in 0..cfg.ablate_seeds as u64 {
        let seed = cfg.seed + k;
        let mut finals = [0.0; 2];
        let mut trajectories = Vec::new();
        for (i, mode) in [ReferenceMode::XReference, ReferenceMode::GbestReference].into_iter().enumerate() {
            let dir = out.join(mode.to_string());
            std::fs::create_dir_all(&dir)?;
            let (outcome, _) = search_into(
                &cfg,
                &prepared,
                mode,
                seed,
                &dir.join(format!("trajectory_seed{seed}.jsonl")),
                None,
            )?;
            finals[i] = outcome.gbest_fitness;
            trajectories.push(outcome.trajectory);
        }
        let initial = &trajectories[0][0].particle_lengths;
        rows.push(AblationRow {
            seed,
            x_reference: finals[0],
            gbest_reference: finals[1],
            x_lengths_preserved: trajectories[0].iter().all(|r| &r.particle_lengths == initial),
            gbest_collapse_generation: collapse_generation(&trajectories[1]),
        });
    }
    let mut csv = String::from("seed,x_reference,gbest_reference,x_lengths_preserved,gbest_collapse_generation\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.seed,
            fmt_f64(r.x_reference),
            fmt_f64(r.gbest_reference),
            r.x_lengths_preserved,
            r.gbest_collapse_generation.map_or_else(|| "none".into(), |g| g.to_string())
        );
    }
    write_file(&out.join("ablation.csv"), &csv)?;
    let xs: Vec<f64> = rows.iter().map(|r| r.x_reference).collect();
    let gs: Vec<f64> = rows.iter().map(|r| r.gbest_reference).collect();
    let summary = format!(
        "seeds = {}\nmedian_x_reference = {}\nmedian_gbest_reference = {}\nx_lengths_preserved = {}/{}\ngbest_collapsed_by_generation_2 = {}/{}\n",
        rows.len(),
        fmt_f64(median(&xs)),
        fmt_f64(median(&gs)),
        rows.iter().filter(|r| r.x_lengths_preserved).count(),
        rows.len(),
        rows.iter().filter(|r| r.gbest_collapse_generation.is_some_and(|g| g <= 2)).count(),
        rows.len(),
    );
    write_file(&out.join("summary.txt"), &summary)?;
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct DeepTrainReport {
    pub final_recon_error: Vec<f64>,
    pub accuracy: Option<AccuracyReport>,
}

/// Seed of stacked block `i`; block 0 uses the run seed itself so that its
/// training replays the fitness evaluation with the same seed.
fn block_config(cfg: &DeepTrainConfig, i: usize) -> DeepTrainConfig {
    let mut c = cfg.clone();
    if i > 0 {
        c.seed = derive_seed(cfg.seed, Purpose::Weights, &[0x424c_4f43, i as u64]);
    }
    c
}

pub fn deep_train(mut cfg: RunConfig, arch_files: &[PathBuf], out: &Path) -> Result<DeepTrainReport> {
    if arch_files.len() > 2 {
        return Err(ConfigError::Invalid("at most two stacked blocks (--arch given more than twice)".into()).into());
    }
    for (i, path) in arch_files.iter().enumerate() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let arch = DecodedArchitecture::from_descriptor(&text)
            .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
        let compact = arch.to_genome().to_compact_descriptor();
        if i == 0 {
            cfg.trainer_arch = compact;
            cfg.trainer_arch2.clear();
        } else {
            cfg.trainer_arch2 = compact;
        }
    }
    let archs = cfg.trainer_archs()?;
    let train = load_split(&cfg, Split::Train)?;
    let with_head = cfg.trainer.classifier == ClassifierMode::FcHead;
    let test = if with_head {
        let test = load_split(&cfg, Split::Test)?;
        if train.labels.is_none() || test.labels.is_none() {
            return Err(ConfigError::Invalid(format!(
                "trainer.classifier = fc_head needs labelled data; {} has none",
                cfg.data.dataset
            ))
            .into());
        }
        Some(test)
    } else {
        None
    };
    if train.is_empty() {
        bail!("training split of {} is empty", cfg.data.dataset);
    }
    pin_root(&mut cfg);
    start_run_dir(out, &cfg)?;

    let mut encoders = Vec::new();
    let mut finals = Vec::new();
    let mut initials = Vec::new();
    let mut loss_csv = String::from("block,epoch,loss\n");
    let mut block_data = train.clone();
    for (i, arch) in archs.iter().enumerate() {
        if i > 0 {
            block_data = encode_dataset(encoders.last().expect("previous block"), &block_data, cfg.trainer.batch_size)?;
        }
        let bcfg = block_config(&cfg.trainer, i);
        let result = deep_train_with(arch, &block_data, &bcfg, |epoch, loss| {
            log::info!("block {i} epoch {}/{}: loss {loss:.6}", epoch + 1, bcfg.epochs);
        });
        match result {
            Ok(o) => {
                for (e, l) in o.loss_curve.iter().enumerate() {
                    let _ = writeln!(loss_csv, "{i},{},{}", e + 1, fmt_f64(*l));
                }
                Checkpoint::from(&o.model).save(&out.join(format!("block{i}.ckpt")))?;
                initials.push(o.initial_recon_error);
                finals.push(o.final_recon_error);
                encoders.push(o.model.encoder);
            }
            Err(TrainError::Diverged { epoch, source, last_good, loss_curve }) => {
                for (e, l) in loss_curve.iter().enumerate() {
                    let _ = writeln!(loss_csv, "{i},{},{}", e + 1, fmt_f64(*l));
                }
                write_file(&out.join("loss.csv"), &loss_csv)?;
                Checkpoint::from(&*last_good).save(&out.join("model.ckpt"))?;
                bail!("block {i} diverged in epoch {epoch}: {source}; last good model written to model.ckpt");
            }
            Err(e) => return Err(e.into()),
        }
    }
    write_file(&out.join("loss.csv"), &loss_csv)?;

    let accuracy = match &test {
        Some(test) => {
            let (report, clf) = train_classifier(&encoders, &train, test, &cfg.trainer)?;
            Checkpoint::from(&clf).save(&out.join("model.ckpt"))?;
            Some(report)
        }
        None => {
            let last = format!("block{}.ckpt", archs.len() - 1);
            std::fs::copy(out.join(&last), out.join("model.ckpt"))?;
            None
        }
    };

    let list = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",");
    let mut metrics = format!(
        "final_recon_error = {}\ninitial_recon_error = {}\nepochs = {}\nblocks = {}\n",
        list(&finals),
        list(&initials),
        cfg.trainer.epochs,
        archs.len()
    );
    if let Some(r) = &accuracy {
        let _ = write!(
            metrics,
            "accuracy_mean = {}\naccuracy_std = {}\naccuracies = {}\nclassifier_epochs = {}\nseeds = {}\n",
            fmt_f64(r.accuracy_mean),
            fmt_f64(r.accuracy_std),
            list(&r.accuracies),
            r.epochs,
            r.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
        );
    }
    write_file(&out.join("metrics.txt"), &metrics)?;
    Ok(DeepTrainReport {
        final_recon_error: finals,
        accuracy,
    })
}

/// Returns every check; the caller decides the exit status.
pub fn selfcheck(inject_fault: Option<String>) -> Result<Vec<CheckResult>> {
    if let Some(t) = &inject_fault {
        if !selfcheck::fault_targets().iter().any(|n| n == t) {
            return Err(ConfigError::Invalid(format!(
                "unknown fault target `{t}`; expected one of {}",
                selfcheck::fault_targets().join(", ")
            ))
            .into());
        }
    }
    Ok(selfcheck::run_all(&SelfcheckOptions { inject_fault })?)
}

/// Scores a checkpoint: reconstruction error for an auto-encoder, test
/// accuracy for a classifier. Returns `key = value` lines.
pub fn eval(cfg: RunConfig, checkpoint: &Path, split: Split, out: Option<&Path>) -> Result<String> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let data = load_split(&cfg, split)?;
    let model = ckpt.into_model()?;
    let batch = cfg.trainer.batch_size;
    let mut text = format!("checkpoint = {}\nsplit = {split}\nimages = {}\n", checkpoint.display(), data.len());
    match &model {
        Model::AutoEncoder(m) => {
            let e = mean_reconstruction_error(m, &data, batch)?;
            let _ = writeln!(text, "recon_error = {}", fmt_f64(e));
        }
        Model::Classifier(c) => {
            let a = accuracy(c, &data, batch)?;
            let _ = writeln!(text, "accuracy = {}", fmt_f64(a));
        }
    }
    if let Some(dir) = out {
        let mut cfg = cfg;
        pin_root(&mut cfg);
        start_run_dir(dir, &cfg)?;
        write_file(&dir.join("eval.txt"), &text)?;
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(g: usize, lens: &[(usize, usize)]) -> TrajectoryRecord {
        TrajectoryRecord {
            generation: g,
            gbest_fitness: 0.0,
            gbest_descriptor: String::new(),
            particle_lengths: lens.to_vec(),
            wall_ms: None,
        }
    }

    #[test]
    fn collapse_requires_uniform_lengths_to_persist() {
        let a = [rec(1, &[(1, 1), (2, 1)]), rec(2, &[(2, 1), (2, 1)]), rec(3, &[(2, 1), (2, 1)])];
        assert_eq!(collapse_generation(&a), Some(2));
        let b = [rec(1, &[(1, 1), (1, 1)]), rec(2, &[(2, 1), (1, 1)])];
        assert_eq!(collapse_generation(&b), None);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
