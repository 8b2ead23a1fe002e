//! Particle swarm over variable-length genomes.
//!
//! Two velocity rules are provided. The x-reference rule reshapes a copy of
//! gBest to the particle's own length (zero genes appended, surplus tail
//! genes dropped) and never changes a particle's shape. The gBest-reference
//! rule reshapes the particle, its velocity and its pBest to gBest's length
//! instead; it exists for the ablation harness.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{decode, init_genome, ArchGenome, ConvGene, DecodedArchitecture, GeneBounds, GenomeError, PoolGene};
use crate::rng::{stream, Purpose};

#[derive(Debug, Error)]
pub enum PsoError {
    #[error("invalid swarm configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Genome(#[from] GenomeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    #[default]
    XReference,
    GbestReference,
}

impl fmt::Display for ReferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::XReference => "x_reference",
            Self::GbestReference => "gbest_reference",
        })
    }
}

impl FromStr for ReferenceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "x_reference" => Ok(Self::XReference),
            "gbest_reference" => Ok(Self::GbestReference),
            other => Err(format!(
                "unknown reference mode `{other}` (expected x_reference or gbest_reference)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoConfig {
    pub inertia_w: f64,
    pub c1: f64,
    pub c2: f64,
    pub population_size: usize,
    pub max_generations: usize,
    /// Velocity clamp as a fraction of each gene's bound span.
    pub v_max_fraction: f64,
    pub reference_mode: ReferenceMode,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            inertia_w: 0.72984,
            c1: 1.496172,
            c2: 1.496172,
            population_size: 20,
            max_generations: 30,
            v_max_fraction: 0.5,
            reference_mode: ReferenceMode::XReference,
            seed: 0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<(), PsoError> {
        let bad = |m: String| Err(PsoError::InvalidConfig(m));
        if !(self.inertia_w > 0.0 && self.inertia_w.is_finite()) {
            return bad(format!("inertia_w must be > 0, got {}", self.inertia_w));
        }
        if !(self.c1 > 0.0 && self.c1.is_finite() && self.c2 > 0.0 && self.c2.is_finite()) {
            return bad(format!("c1 and c2 must be > 0, got {} and {}", self.c1, self.c2));
        }
        if self.population_size < 2 {
            return bad(format!("population_size must be >= 2, got {}", self.population_size));
        }
        if self.max_generations < 1 {
            return bad("max_generations must be >= 1".into());
        }
        if !(self.v_max_fraction > 0.0 && self.v_max_fraction <= 1.0) {
            return bad(format!("v_max_fraction must be in (0, 1], got {}", self.v_max_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: ArchGenome,
    pub velocity: ArchGenome,
    /// Fitness of the current position, `+∞` before the first evaluation.
    pub fitness: f64,
    pub pbest_position: ArchGenome,
    pub pbest_fitness: f64,
}

impl Particle {
    /// Zero velocity; pBest is the initial position with fitness `+∞`.
    pub fn new(position: ArchGenome) -> Self {
        Self {
            velocity: position.zeros_like(),
            pbest_position: position.clone(),
            position,
            fitness: f64::INFINITY,
            pbest_fitness: f64::INFINITY,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.position.shape()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Swarm {
    pub particles: Vec<Particle>,
    pub gbest_position: ArchGenome,
    pub gbest_fitness: f64,
    /// Particle whose pBest is the current gBest; `None` until one is finite.
    pub gbest_owner: Option<usize>,
    pub generation: usize,
}

impl Swarm {
    /// Random initial swarm; particle `i` draws from its own stream.
    pub fn init(cfg: &PsoConfig, bounds: &GeneBounds) -> Result<Self, PsoError> {
        cfg.validate()?;
        bounds.validate()?;
        let particles = (0..cfg.population_size)
            .map(|i| {
                let mut rng = stream(cfg.seed, Purpose::Init, &[i as u64]);
                init_genome(bounds, &mut rng).map(Particle::new)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_particles(particles))
    }

    pub fn from_particles(particles: Vec<Particle>) -> Self {
        Self {
            gbest_position: particles[0].position.clone(),
            gbest_fitness: f64::INFINITY,
            gbest_owner: None,
            generation: 0,
            particles,
        }
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.particles.iter().map(Particle::shape).collect()
    }
}

/// gBest reshaped to a particle's lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub aligned_gbest_conv: Vec<ConvGene>,
    pub aligned_gbest_pool: Vec<PoolGene>,
}

impl AlignedPair {
    pub fn into_genome(self) -> ArchGenome {
        ArchGenome::new(self.aligned_gbest_conv, self.aligned_gbest_pool)
    }
}

/// Pads gBest's conv and pool tails with zero genes, or truncates them, so
/// that both lengths match `x`.
pub fn align_to_x(gbest: &ArchGenome, x: &ArchGenome) -> AlignedPair {
    let (n_c, n_p) = x.shape();
    let g = gbest.fit_to(n_c, n_p);
    AlignedPair {
        aligned_gbest_conv: g.conv,
        aligned_gbest_pool: g.pool,
    }
}

/// Draws `r1, r2` once for the whole particle and updates its velocity.
pub fn velocity_update(p: &mut Particle, gbest: &ArchGenome, cfg: &PsoConfig, bounds: &GeneBounds, rng: &mut impl Rng) {
    let r1 = rng.random::<f64>();
    let r2 = rng.random::<f64>();
    velocity_update_with(p, gbest, cfg, bounds, r1, r2);
}

/// Velocity rule with pinned random coefficients:
/// `v' = w·v + c1·r1·(gbest − x) + c2·r2·(pbest − x)`, clamped per field to
/// `±v_max_fraction · span`.
pub fn velocity_update_with(p: &mut Particle, gbest: &ArchGenome, cfg: &PsoConfig, bounds: &GeneBounds, r1: f64, r2: f64) {
    assert_eq!(
        p.position.shape(),
        p.velocity.shape(),
        "particle velocity shape diverged from its position"
    );
    let target = match cfg.reference_mode {
        ReferenceMode::XReference => align_to_x(gbest, &p.position).into_genome(),
        ReferenceMode::GbestReference => {
            let (n_c, n_p) = gbest.shape();
            p.position = p.position.fit_to(n_c, n_p);
            p.velocity = p.velocity.fit_to(n_c, n_p);
            p.pbest_position = p.pbest_position.fit_to(n_c, n_p);
            gbest.clone()
        }
    };
    let x = &p.position;
    let social = target.zip_with(x, |_, g, xi| g - xi);
    let cognitive = p.pbest_position.zip_with(x, |_, pb, xi| pb - xi);
    let pull = social.zip_with(&cognitive, |_, s, c| cfg.c1 * r1 * s + cfg.c2 * r2 * c);
    p.velocity = p.velocity.zip_with(&pull, |slot, v, d| {
        let v_max = cfg.v_max_fraction * bounds.span(slot);
        (cfg.inertia_w * v + d).clamp(-v_max, v_max)
    });
}

/// `x ← x + v`, unclamped; decoding handles the bounds.
pub fn position_update(p: &mut Particle) {
    p.position = p.position.zip_with(&p.velocity, |_, x, v| x + v);
}

/// Records one fitness per particle and refreshes pBest and gBest.
///
/// Only strict improvements replace a best; among equal new minima the
/// lowest particle index wins. Non-finite fitness counts as `+∞`.
pub fn update_bests(swarm: &mut Swarm, fitnesses: &[f64]) {
    assert_eq!(
        fitnesses.len(),
        swarm.particles.len(),
        "one fitness per particle is required"
    );
    for (p, &f) in swarm.particles.iter_mut().zip(fitnesses) {
        let f = if f.is_finite() { f } else { f64::INFINITY };
        p.fitness = f;
        if f < p.pbest_fitness {
            p.pbest_fitness = f;
            p.pbest_position = p.position.clone();
        }
    }
    let mut best: Option<usize> = None;
    for (i, p) in swarm.particles.iter().enumerate() {
        if best.is_none_or(|b| p.pbest_fitness < swarm.particles[b].pbest_fitness) {
            best = Some(i);
        }
    }
    if let Some(b) = best {
        let p = &swarm.particles[b];
        if p.pbest_fitness < swarm.gbest_fitness {
            swarm.gbest_fitness = p.pbest_fitness;
            swarm.gbest_position = p.pbest_position.clone();
            swarm.gbest_owner = Some(b);
        }
    }
}

/// Identifies one fitness evaluation, for seeding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalContext {
    pub seed: u64,
    pub particle: usize,
    /// 1-based generation number.
    pub generation: usize,
}

pub type EvalError = Box<dyn std::error::Error + Send + Sync>;

/// Scores a decoded architecture; lower is better.
pub trait FitnessEvaluator: Sync {
    fn evaluate(&self, arch: &DecodedArchitecture, ctx: &EvalContext) -> Result<f64, EvalError>;
}

impl<F> FitnessEvaluator for F
where
    F: Fn(&DecodedArchitecture, &EvalContext) -> Result<f64, EvalError> + Sync,
{
    fn evaluate(&self, arch: &DecodedArchitecture, ctx: &EvalContext) -> Result<f64, EvalError> {
        self(arch, ctx)
    }
}

/// Per-generation snapshot of the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub generation: usize,
    pub gbest_fitness: f64,
    /// Decoded gBest in the single-line descriptor form.
    pub gbest_descriptor: String,
    /// `(n_conv, n_pool)` of every particle as evaluated this generation.
    pub particle_lengths: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
}

impl TrajectoryRecord {
    pub fn without_timing(&self) -> Self {
        Self {
            wall_ms: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub swarm: Swarm,
    pub gbest: ArchGenome,
    pub gbest_fitness: f64,
    pub trajectory: Vec<TrajectoryRecord>,
}

impl SearchOutcome {
    pub fn gbest_decoded(&self, bounds: &GeneBounds) -> DecodedArchitecture {
        decode(&self.gbest, bounds)
    }
}

/// Runs the search sequentially.
pub fn run_search(cfg: &PsoConfig, bounds: &GeneBounds, evaluator: &dyn FitnessEvaluator) -> Result<SearchOutcome, PsoError> {
    run_search_with(cfg, bounds, evaluator, 1, |_| {})
}

/// Runs the search with up to `jobs` concurrent evaluations and calls
/// `on_generation` after each generation's bests are updated.
///
/// Fitnesses are gathered by particle index and every random stream is keyed
/// by `(seed, particle, generation)`, so `jobs` never changes the result.
pub fn run_search_with(
    cfg: &PsoConfig,
    bounds: &GeneBounds,
    evaluator: &dyn FitnessEvaluator,
    jobs: usize,
    mut on_generation: impl FnMut(&TrajectoryRecord),
) -> Result<SearchOutcome, PsoError> {
    let mut swarm = Swarm::init(cfg, bounds)?;
    let pool = if jobs > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| PsoError::InvalidConfig(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    let mut trajectory = Vec::with_capacity(cfg.max_generations);
    for generation in 1..=cfg.max_generations {
        let started = Instant::now();
        swarm.generation = generation;
        let decoded: Vec<DecodedArchitecture> = swarm
            .particles
            .iter()
            .map(|p| decode(&p.position, bounds))
            .collect();
        let eval_one = |i: usize| {
            let ctx = EvalContext {
                seed: cfg.seed,
                particle: i,
                generation,
            };
            match evaluator.evaluate(&decoded[i], &ctx) {
                Ok(f) => f,
                Err(e) => {
                    log::warn!("generation {generation}, particle {i}: evaluation failed: {e}");
                    f64::INFINITY
                }
            }
        };
        let fitnesses: Vec<f64> = match &pool {
            Some(pool) => {
                use rayon::prelude::*;
                pool.install(|| (0..decoded.len()).into_par_iter().map(eval_one).collect())
            }
            None => (0..decoded.len()).map(eval_one).collect(),
        };
        let particle_lengths = swarm.shapes();
        update_bests(&mut swarm, &fitnesses);
        let record = TrajectoryRecord {
            generation,
            gbest_fitness: swarm.gbest_fitness,
            gbest_descriptor: decode(&swarm.gbest_position, bounds)
                .to_genome()
                .to_compact_descriptor(),
            particle_lengths,
            wall_ms: Some(started.elapsed().as_millis() as u64),
        };
        log::info!(
            "generation {generation}: gbest {:.6} [{}]",
            record.gbest_fitness,
            record.gbest_descriptor
        );
        on_generation(&record);
        trajectory.push(record);
        if generation < cfg.max_generations {
            let gbest = swarm.gbest_position.clone();
            for (i, p) in swarm.particles.iter_mut().enumerate() {
                let mut rng = stream(cfg.seed, Purpose::Velocity, &[i as u64, generation as u64]);
                velocity_update(p, &gbest, cfg, bounds, &mut rng);
                position_update(p);
            }
        }
    }
    Ok(SearchOutcome {
        gbest: swarm.gbest_position.clone(),
        gbest_fitness: swarm.gbest_fitness,
        swarm,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::GeneRange;

    fn conv(v: f64) -> ConvGene {
        ConvGene::from_array([v; 6])
    }

    fn pool(v: f64) -> PoolGene {
        PoolGene::from_array([v; 4])
    }

    #[test]
    fn fig5_alignment() {
        let gbest = ArchGenome::new(vec![conv(1.0), conv(2.0), conv(3.0)], vec![pool(4.0), pool(5.0)]);
        let x = ArchGenome::new(vec![conv(9.0); 2], vec![pool(9.0); 4]);
        let a = align_to_x(&gbest, &x);
        assert_eq!(a.aligned_gbest_conv, vec![conv(1.0), conv(2.0)]);
        assert_eq!(a.aligned_gbest_pool, vec![pool(4.0), pool(5.0), pool(0.0), pool(0.0)]);
        assert_eq!(x.shape(), (2, 4));
    }

    #[test]
    fn alignment_trivial_cases() {
        let g = ArchGenome::new(vec![conv(3.0)], vec![pool(2.0)]);
        assert_eq!(align_to_x(&g, &g).into_genome(), g);
        let x = ArchGenome::new(vec![conv(1.0); 5], vec![pool(1.0)]);
        let a = align_to_x(&g, &x);
        assert_eq!(a.aligned_gbest_conv[0], conv(3.0));
        assert!(a.aligned_gbest_conv[1..].iter().all(|c| *c == conv(0.0)));
    }

    fn scalar_bounds() -> GeneBounds {
        let wide = GeneRange::new(1.0, 101.0);
        GeneBounds {
            conv: [wide; 6],
            pool: [wide; 4],
            ..GeneBounds::default()
        }
    }

    #[test]
    fn scalar_velocity_and_position() {
        let cfg = PsoConfig::default();
        let mut p = Particle::new(ArchGenome::new(vec![conv(2.0)], vec![pool(2.0)]));
        let gbest = ArchGenome::new(vec![conv(4.0)], vec![pool(4.0)]);
        velocity_update_with(&mut p, &gbest, &cfg, &scalar_bounds(), 0.5, 0.5);
        assert!(p.velocity.scalars().iter().all(|&v| v == 1.496172));
        position_update(&mut p);
        assert!(p.position.scalars().iter().all(|&x| x == 3.496172));
    }

    #[test]
    fn zero_differences_give_zero_velocity() {
        let cfg = PsoConfig::default();
        let g = ArchGenome::new(vec![conv(3.0)], vec![pool(2.0)]);
        let mut p = Particle::new(g.clone());
        velocity_update_with(&mut p, &g, &cfg, &GeneBounds::default(), 0.9, 0.3);
        assert!(p.velocity.scalars().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_pad_pulls_toward_zero() {
        let cfg = PsoConfig::default();
        let bounds = scalar_bounds();
        let mut p = Particle::new(ArchGenome::new(vec![conv(2.0)], vec![pool(2.0), pool(3.0)]));
        let gbest = ArchGenome::new(vec![conv(2.0)], vec![pool(2.0)]);
        velocity_update_with(&mut p, &gbest, &cfg, &bounds, 0.5, 0.5);
        let v = p.velocity.pool[1].to_array();
        assert!(v.iter().all(|&c| c == cfg.c1 * 0.5 * (0.0 - 3.0)));
        assert_eq!(p.shape(), (1, 2));
    }

    #[test]
    fn velocity_is_clamped() {
        let cfg = PsoConfig::default();
        let bounds = GeneBounds::default();
        let mut p = Particle::new(ArchGenome::new(vec![conv(2.0)], vec![pool(2.0)]));
        let far = ArchGenome::new(vec![conv(1e6)], vec![pool(-1e6)]);
        velocity_update_with(&mut p, &far, &cfg, &bounds, 1.0, 1.0);
        let spans = far.map(|slot, _| bounds.span(slot));
        for (v, s) in p.velocity.scalars().iter().zip(spans.scalars()) {
            assert_eq!(v.abs(), 0.5 * s);
        }
    }

    #[test]
    fn gbest_reference_adopts_gbest_shape() {
        let cfg = PsoConfig {
            reference_mode: ReferenceMode::GbestReference,
            ..PsoConfig::default()
        };
        let mut p = Particle::new(ArchGenome::new(vec![conv(2.0); 4], vec![pool(2.0)]));
        let gbest = ArchGenome::new(vec![conv(3.0); 2], vec![pool(2.0); 3]);
        velocity_update_with(&mut p, &gbest, &cfg, &GeneBounds::default(), 0.4, 0.6);
        assert_eq!(p.position.shape(), (2, 3));
        assert_eq!(p.velocity.shape(), (2, 3));
        assert_eq!(p.pbest_position.shape(), (2, 3));
    }

    fn swarm_of(n: usize) -> Swarm {
        Swarm::from_particles(
            (0..n)
                .map(|i| Particle::new(ArchGenome::new(vec![conv(i as f64 + 2.0)], vec![pool(2.0)])))
                .collect(),
        )
    }

    #[test]
    fn bests_follow_strict_improvement() {
        let mut s = swarm_of(3);
        update_bests(&mut s, &[0.5, 0.3, 0.9]);
        assert_eq!((s.gbest_fitness, s.gbest_owner), (0.3, Some(1)));

        s.particles[0].position.conv[0].filter_w = 42.0;
        update_bests(&mut s, &[0.5, 0.4, 0.9]);
        assert_eq!(s.particles[0].pbest_position.conv[0].filter_w, 2.0, "tie keeps pBest");
        assert_eq!(s.particles[1].pbest_fitness, 0.3);

        update_bests(&mut s, &[0.3, 0.2, 0.2]);
        assert_eq!((s.gbest_fitness, s.gbest_owner), (0.2, Some(1)), "lowest index wins");

        update_bests(&mut s, &[f64::NAN; 3]);
        assert_eq!((s.gbest_fitness, s.gbest_owner), (0.2, Some(1)));
        assert!(s.particles.iter().all(|p| p.fitness == f64::INFINITY));
    }

    #[test]
    fn all_nan_first_generation_leaves_gbest_unset() {
        let mut s = swarm_of(2);
        update_bests(&mut s, &[f64::NAN, f64::INFINITY]);
        assert_eq!(s.gbest_owner, None);
        assert_eq!(s.gbest_fitness, f64::INFINITY);
    }

    #[test]
    fn config_validation() {
        assert!(PsoConfig::default().validate().is_ok());
        for bad in [
            PsoConfig { inertia_w: 0.0, ..Default::default() },
            PsoConfig { c2: -1.0, ..Default::default() },
            PsoConfig { population_size: 1, ..Default::default() },
            PsoConfig { max_generations: 0, ..Default::default() },
            PsoConfig { v_max_fraction: 1.5, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        assert_eq!("gbest_reference".parse::<ReferenceMode>(), Ok(ReferenceMode::GbestReference));
        assert!("sideways".parse::<ReferenceMode>().is_err());
    }

    #[test]
    fn single_generation_returns_best_initial() {
        let cfg = PsoConfig {
            max_generations: 1,
            population_size: 6,
            ..Default::default()
        };
        let bounds = GeneBounds::default();
        let eval = |a: &DecodedArchitecture, _: &EvalContext| -> Result<f64, EvalError> {
            Ok(a.conv.iter().map(|c| c.feature_maps as f64).sum())
        };
        let out = run_search(&cfg, &bounds, &eval).unwrap();
        assert_eq!(out.trajectory.len(), 1);
        let init = Swarm::init(&cfg, &bounds).unwrap();
        let best = init
            .particles
            .iter()
            .map(|p| eval(&decode(&p.position, &bounds), &EvalContext { seed: 0, particle: 0, generation: 1 }).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.gbest_fitness, best);
    }

    #[test]
    fn evaluator_errors_become_infinite() {
        let cfg = PsoConfig {
            max_generations: 3,
            population_size: 4,
            ..Default::default()
        };
        let eval = |_: &DecodedArchitecture, ctx: &EvalContext| -> Result<f64, EvalError> {
            if ctx.particle == 0 {
                Err("boom".into())
            } else {
                Ok(ctx.particle as f64)
            }
        };
        let out = run_search(&cfg, &GeneBounds::default(), &eval).unwrap();
        assert_eq!(out.gbest_fitness, 1.0);
        assert_eq!(out.swarm.particles[0].pbest_fitness, f64::INFINITY);
    }
}
