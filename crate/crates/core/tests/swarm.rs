//! Swarm behaviour on the surrogate objective.

use fcae_core::fitness::SurrogateEvaluator;
use fcae_core::genome::{decode, ConvLayer, GeneRange, PoolLayer};
use fcae_core::pso::{run_search, run_search_with, ReferenceMode};
use fcae_core::{DecodedArchitecture, GeneBounds, PsoConfig};

fn tiny_bounds() -> GeneBounds {
    let mut b = GeneBounds::default();
    b.conv[0] = GeneRange::new(2.0, 3.0);
    b.conv[1] = GeneRange::new(2.0, 3.0);
    b.conv[4] = GeneRange::new(20.0, 21.0);
    b.conv[5] = GeneRange::new(0.001, 0.001);
    b.pool = [GeneRange::new(2.0, 2.0); 4];
    b.max_conv = 2;
    b.max_pool = 1;
    b
}

fn conv(f: usize, maps: usize, l2: f64) -> ConvLayer {
    ConvLayer { filter_w: f, filter_h: f, stride_w: 1, stride_h: 1, feature_maps: maps, l2 }
}

fn tiny_target() -> DecodedArchitecture {
    DecodedArchitecture {
        conv: vec![conv(3, 21, 0.001), conv(2, 20, 0.001)],
        pool: vec![PoolLayer { kernel_w: 2, kernel_h: 2, stride_w: 2, stride_h: 2 }],
    }
}

/// Every decoded architecture reachable inside the tiny box.
fn enumerate_tiny() -> Vec<DecodedArchitecture> {
    let mut layers = Vec::new();
    for f in [2, 3] {
        for m in [20, 21] {
            layers.push(conv(f, m, 0.001));
        }
    }
    let pools = [PoolLayer { kernel_w: 2, kernel_h: 2, stride_w: 2, stride_h: 2 }];
    let mut convs: Vec<Vec<ConvLayer>> = layers.iter().map(|&l| vec![l]).collect();
    for &a in &layers {
        for &b in &layers {
            convs.push(vec![a, b]);
        }
    }
    let mut out = Vec::new();
    for c in &convs {
        for &p in &pools {
            out.push(DecodedArchitecture { conv: c.clone(), pool: vec![p] });
        }
    }
    out
}

#[test]
fn target_is_unique_minimum_of_tiny_box() {
    let all = enumerate_tiny();
    assert_eq!(all.len(), 20);
    let s = SurrogateEvaluator::new(tiny_target(), tiny_bounds());
    let zeros: Vec<_> = all.iter().filter(|a| s.distance(a) == 0.0).collect();
    assert_eq!(zeros, vec![&tiny_target()]);
    assert!(all.iter().all(|a| s.distance(a) >= 0.0));
}

#[test]
fn swarm_finds_tiny_target() {
    let bounds = tiny_bounds();
    let s = SurrogateEvaluator::new(tiny_target(), bounds.clone());
    let mut hits = 0;
    for seed in 0..20 {
        let cfg = PsoConfig { seed, ..PsoConfig::default() };
        let out = run_search(&cfg, &bounds, &s).unwrap();
        if s.distance(&decode(&out.gbest, &bounds)) == 0.0 {
            hits += 1;
        }
        for w in out.trajectory.windows(2) {
            assert!(w[1].gbest_fitness <= w[0].gbest_fitness);
        }
    }
    eprintln!("hits {hits}/20");
    assert!(hits >= 18, "target found in {hits}/20 seeds");
}

#[test]
fn jobs_do_not_change_results() {
    let bounds = GeneBounds::default();
    let s = SurrogateEvaluator::new(tiny_target(), bounds.clone());
    let cfg = PsoConfig { seed: 7, max_generations: 6, ..PsoConfig::default() };
    let strip = |v: Vec<fcae_core::TrajectoryRecord>| v.into_iter().map(|r| r.without_timing()).collect::<Vec<_>>();
    let a = run_search(&cfg, &bounds, &s).unwrap();
    let b = run_search_with(&cfg, &bounds, &s, 3, |_| {}).unwrap();
    assert_eq!(strip(a.trajectory), strip(b.trajectory));
    assert_eq!(a.gbest, b.gbest);
}

#[test]
fn reference_modes_and_lengths() {
    let bounds = GeneBounds::default();
    let s = SurrogateEvaluator::new(tiny_target(), bounds.clone());
    for seed in 0..5 {
        let x = run_search(&PsoConfig { seed, ..PsoConfig::default() }, &bounds, &s).unwrap();
        let first = &x.trajectory[0].particle_lengths;
        assert!(x.trajectory.iter().all(|r| &r.particle_lengths == first));

        let cfg = PsoConfig { seed, reference_mode: ReferenceMode::GbestReference, ..PsoConfig::default() };
        let g = run_search(&cfg, &bounds, &s).unwrap();
        for r in &g.trajectory[1..] {
            assert!(r.particle_lengths.windows(2).all(|w| w[0] == w[1]), "gen {}", r.generation);
        }
    }
}

