//! Fitness of a decoded architecture.
//!
//! The CAE evaluator builds the FCAE, trains it for a few epochs on
//! reconstruction + l2, then reports the mean reconstruction error over the
//! training batches with the weights frozen (l2 excluded). The surrogate
//! evaluator is a cheap distance to a known target architecture, used to
//! test the swarm.

use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::{batch_indices, sequential_indices, DatasetHandle};
use crate::genome::{DecodedArchitecture, GeneBounds, GeneSlot};
use crate::nn::{Adam, AdamConfig, FcaeModel, NnError};
use crate::pso::{EvalContext, EvalError, FitnessEvaluator};
use crate::rng::{derive_seed, Purpose, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for CaeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            adam: AdamConfig::default(),
        }
    }
}

/// Builds a freshly initialised model; every weight comes from `seed`.
pub fn build_model(arch: &DecodedArchitecture, data: &DatasetHandle, seed: u64) -> Result<FcaeModel, NnError> {
    let mut rng = StreamRng::seed_from_u64(seed);
    FcaeModel::new(arch, data.image_hwc(), &mut rng)
}

/// Trains `model` in place with Adam for `cfg.epochs` shuffled epochs.
///
/// Returns the mean total loss of every epoch. `on_epoch` sees the model
/// after each completed epoch. A non-finite loss stops training with the
/// offending layer named; the model is then left mid-epoch.
pub fn train_cae(
    model: &mut FcaeModel,
    data: &DatasetHandle,
    cfg: &CaeTrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(usize, f64, &FcaeModel),
) -> Result<Vec<f64>, NnError> {
    let mut adam = Adam::new(cfg.adam);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = batch_indices(data.len(), cfg.batch_size, seed, epoch);
        let mut total = 0.0;
        for b in &batches {
            let x = data.images.gather(b);
            let loss = model.forward_backward(&x)?;
            total += loss.total();
            adam.step(model.params_mut().into_iter().map(|p| (&mut p.value[..], &p.grad[..])))?;
        }
        let mean = total / batches.len().max(1) as f64;
        curve.push(mean);
        on_epoch(epoch, mean, model);
    }
    Ok(curve)
}

/// Mean over in-order batches of the batch reconstruction error; weights
/// are frozen and l2 is not included.
pub fn mean_reconstruction_error(model: &FcaeModel, data: &DatasetHandle, batch_size: usize) -> Result<f64, NnError> {
    let batches = sequential_indices(data.len(), batch_size);
    if batches.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for b in &batches {
        total += model.loss(&data.images.gather(b))?.reconstruction;
    }
    Ok(total / batches.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessReport {
    /// Mean reconstruction error, `+∞` for rejected or diverged models.
    pub fitness: f64,
    pub train_loss_curve: Vec<f64>,
    pub wall_ms: u64,
    pub param_count: usize,
    pub diagnostic: Option<String>,
}

/// Trains and scores one architecture. Never fails: degenerate shapes and
/// divergence give `+∞` with a diagnostic.
pub fn evaluate_cae(arch: &DecodedArchitecture, data: &DatasetHandle, cfg: &CaeTrainConfig, seed: u64) -> FitnessReport {
    let started = Instant::now();
    let mut report = FitnessReport {
        fitness: f64::INFINITY,
        train_loss_curve: Vec::new(),
        wall_ms: 0,
        param_count: 0,
        diagnostic: None,
    };
    let result = build_model(arch, data, seed).and_then(|mut model| {
        report.param_count = model.param_count();
        report.train_loss_curve = train_cae(&mut model, data, cfg, seed, |_, _, _| {})?;
        mean_reconstruction_error(&model, data, cfg.batch_size)
    });
    match result {
        Ok(f) if f.is_finite() => report.fitness = f,
        Ok(f) => report.diagnostic = Some(format!("non-finite fitness {f}")),
        Err(e) => report.diagnostic = Some(e.to_string()),
    }
    report.wall_ms = started.elapsed().as_millis() as u64;
    report
}

/// Seed of the weights and batch order for one particle evaluation.
pub fn evaluation_seed(ctx: &EvalContext) -> u64 {
    derive_seed(ctx.seed, Purpose::Weights, &[ctx.particle as u64, ctx.generation as u64])
}

/// Short-training reconstruction fitness on a shared read-only dataset.
pub struct CaeEvaluator<'a> {
    pub data: &'a DatasetHandle,
    pub cfg: CaeTrainConfig,
    reports: Mutex<Vec<(EvalContext, FitnessReport)>>,
}

impl<'a> CaeEvaluator<'a> {
    pub fn new(data: &'a DatasetHandle, cfg: CaeTrainConfig) -> Self {
        Self {
            data,
            cfg,
            reports: Mutex::new(Vec::new()),
        }
    }

    /// Every report so far, sorted by generation then particle.
    pub fn take_reports(&self) -> Vec<(EvalContext, FitnessReport)> {
        let mut r = std::mem::take(&mut *self.reports.lock().expect("report lock poisoned"));
        r.sort_by_key(|(c, _)| (c.generation, c.particle));
        r
    }
}

impl FitnessEvaluator for CaeEvaluator<'_> {
    fn evaluate(&self, arch: &DecodedArchitecture, ctx: &EvalContext) -> Result<f64, EvalError> {
        let report = evaluate_cae(arch, self.data, &self.cfg, evaluation_seed(ctx));
        if let Some(d) = &report.diagnostic {
            log::warn!(
                "generation {}, particle {}: fitness +inf: {d}",
                ctx.generation,
                ctx.particle
            );
        }
        let f = report.fitness;
        self.reports
            .lock()
            .expect("report lock poisoned")
            .push((*ctx, report));
        Ok(f)
    }
}

/// Distance to a target architecture.
///
/// Layer-count differences are divided by the count span (`max − 1`, at
/// least 1). Layer fields are compared after reshaping the candidate to the
/// target's lengths with zero layers, as in the x-reference alignment; each
/// active field contributes `|a − b| / span`. l2 values are snapped to a grid
/// of `l2_resolution` first so that the target can be hit exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEvaluator {
    pub target: DecodedArchitecture,
    pub bounds: GeneBounds,
    pub l2_resolution: f64,
}

impl SurrogateEvaluator {
    pub fn new(target: DecodedArchitecture, bounds: GeneBounds) -> Self {
        Self {
            target,
            bounds,
            l2_resolution: 1e-4,
        }
    }

    fn snap_l2(&self, l2: f64) -> f64 {
        if self.l2_resolution > 0.0 {
            (l2 / self.l2_resolution).round() * self.l2_resolution
        } else {
            l2
        }
    }

    pub fn distance(&self, arch: &DecodedArchitecture) -> f64 {
        let count_span = |max: usize| max.saturating_sub(1).max(1) as f64;
        let t = &self.target;
        let mut d = (arch.conv.len() as f64 - t.conv.len() as f64).abs() / count_span(self.bounds.max_conv)
            + (arch.pool.len() as f64 - t.pool.len() as f64).abs() / count_span(self.bounds.max_pool);
        let field = |slot: GeneSlot, a: f64, b: f64| {
            if self.bounds.is_active(slot) {
                (a - b).abs() / self.bounds.span(slot)
            } else {
                0.0
            }
        };
        let a = arch.to_genome().fit_to(t.conv.len(), t.pool.len());
        let b = t.to_genome();
        for (ga, gb) in a.conv.iter().zip(&b.conv) {
            let (mut fa, mut fb) = (ga.to_array(), gb.to_array());
            fa[5] = self.snap_l2(fa[5]);
            fb[5] = self.snap_l2(fb[5]);
            d += (0..6).map(|i| field(GeneSlot::Conv(i), fa[i], fb[i])).sum::<f64>();
        }
        for (ga, gb) in a.pool.iter().zip(&b.pool) {
            let (fa, fb) = (ga.to_array(), gb.to_array());
            d += (0..4).map(|i| field(GeneSlot::Pool(i), fa[i], fb[i])).sum::<f64>();
        }
        d
    }
}

impl FitnessEvaluator for SurrogateEvaluator {
    fn evaluate(&self, arch: &DecodedArchitecture, _: &EvalContext) -> Result<f64, EvalError> {
        Ok(self.distance(arch))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{ConvLayer, PoolLayer};

    fn layer(f: usize, maps: usize, l2: f64) -> ConvLayer {
        ConvLayer {
            filter_w: f,
            filter_h: f,
            stride_w: 1,
            stride_h: 1,
            feature_maps: maps,
            l2,
        }
    }

    fn pool(k: usize, s: usize) -> PoolLayer {
        PoolLayer {
            kernel_w: k,
            kernel_h: k,
            stride_w: s,
            stride_h: s,
        }
    }

    #[test]
    fn surrogate_identity_and_unit_contribution() {
        let bounds = GeneBounds::default();
        let target = DecodedArchitecture {
            conv: vec![layer(3, 40, 0.001)],
            pool: vec![pool(2, 2)],
        };
        let s = SurrogateEvaluator::new(target.clone(), bounds);
        assert_eq!(s.distance(&target), 0.0);
        let mut full = target.clone();
        full.conv[0].feature_maps = 100;
        assert_eq!(s.distance(&full), 60.0 / 80.0);
        let mut span = target.clone();
        span.pool[0] = pool(5, 2);
        assert_eq!(s.distance(&span), 1.0);
    }

    #[test]
    fn surrogate_ignores_inactive_fields() {
        let target = DecodedArchitecture {
            conv: vec![layer(3, 40, 0.001)],
            pool: vec![pool(2, 2)],
        };
        let s = SurrogateEvaluator::new(target.clone(), GeneBounds::default());
        let mut other = target.clone();
        other.conv[0].filter_h = 5;
        other.conv[0].stride_w = 3;
        assert_eq!(s.distance(&other), 0.0);
    }
}
