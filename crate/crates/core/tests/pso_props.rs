use fcae_core::genome::{init_genome, ArchGenome, GeneBounds, GeneRange};
use fcae_core::pso::{align_to_x, position_update, velocity_update, velocity_update_with, Particle, PsoConfig, ReferenceMode};
use fcae_core::rng::{stream, Purpose};
use proptest::prelude::*;
use rand::Rng;

fn wide_bounds() -> GeneBounds {
    GeneBounds {
        max_conv: 5,
        max_pool: 4,
        ..GeneBounds::default()
    }
}

#[test]
fn alignment_matches_x_lengths_on_10k_pairs() {
    let bounds = wide_bounds();
    let mut rng = stream(11, Purpose::Init, &[]);
    for _ in 0..10_000 {
        let g = init_genome(&bounds, &mut rng).unwrap();
        let x = init_genome(&bounds, &mut rng).unwrap();
        let x_before = x.clone();
        let a = align_to_x(&g, &x);
        assert_eq!((a.aligned_gbest_conv.len(), a.aligned_gbest_pool.len()), x.shape());
        let kept_c = g.conv.len().min(x.conv.len());
        let kept_p = g.pool.len().min(x.pool.len());
        assert_eq!(&a.aligned_gbest_conv[..kept_c], &g.conv[..kept_c]);
        assert_eq!(&a.aligned_gbest_pool[..kept_p], &g.pool[..kept_p]);
        assert!(a.aligned_gbest_conv[kept_c..].iter().all(|c| c.to_array() == [0.0; 6]));
        assert!(a.aligned_gbest_pool[kept_p..].iter().all(|p| p.to_array() == [0.0; 4]));
        assert_eq!(x, x_before);
    }
}

/// Bounds for a one-dimensional-per-field recurrence that never clamps.
fn huge_bounds() -> GeneBounds {
    let r = GeneRange::new(-1e6, 1e6);
    GeneBounds {
        conv: [r; 6],
        pool: [r; 4],
        max_conv: 1,
        max_pool: 1,
        square_mode: false,
        fix_conv_stride: false,
    }
}

#[test]
fn single_particle_follows_the_closed_form_recurrence() {
    // With c2 = 0 and r1 = 1 the error e = x - g and velocity obey
    //   v' = w v - c1 e,  e' = e + v'
    // whose matrix has trace 1 - c1 + w and determinant w. For the standard
    // constants the eigenvalues are complex with modulus sqrt(w), so
    //   e_t = rho^t (A cos(t theta) + B sin(t theta)).
    let (w, c1) = (0.72984, 1.496172);
    let cfg = PsoConfig {
        inertia_w: w,
        c1,
        c2: 0.0,
        v_max_fraction: 1.0,
        ..PsoConfig::default()
    };
    let bounds = huge_bounds();
    let x0 = ArchGenome::from_descriptor(
        "type=conv filter_w=10 filter_h=-3 stride_w=0 stride_h=7 feature_maps=40 l2=0.5\n\
         type=pool kernel_w=1 kernel_h=2 stride_w=3 stride_h=4",
    )
    .unwrap();
    let g = ArchGenome::from_descriptor(
        "type=conv filter_w=50 filter_h=5 stride_w=0 stride_h=-7 feature_maps=90 l2=0.25\n\
         type=pool kernel_w=11 kernel_h=2 stride_w=-3 stride_h=8",
    )
    .unwrap();
    let rho = w.sqrt();
    let trace = 1.0 - c1 + w;
    assert!(trace * trace < 4.0 * w);
    let theta = (trace / (2.0 * rho)).acos();
    let e0: Vec<f64> = x0.scalars().iter().zip(g.scalars()).map(|(x, g)| x - g).collect();
    // e_1 = (1 - c1) e_0 with zero initial velocity
    let a = e0.clone();
    let b: Vec<f64> = e0
        .iter()
        .map(|e| ((1.0 - c1) * e / rho - e * theta.cos()) / theta.sin())
        .collect();

    let mut p = Particle::new(x0);
    for t in 1..=80 {
        velocity_update_with(&mut p, &g, &cfg, &bounds, 1.0, 0.0);
        position_update(&mut p);
        let tf = t as f64;
        for (i, (x, gv)) in p.position.scalars().iter().zip(g.scalars()).enumerate() {
            let expect = rho.powi(t) * (a[i] * (tf * theta).cos() + b[i] * (tf * theta).sin());
            assert!(
                (x - gv - expect).abs() <= 1e-9 * (1.0 + e0[i].abs()),
                "step {t} component {i}: {} vs {expect}",
                x - gv
            );
        }
    }
    let max_err = p.position.scalars().iter().zip(g.scalars()).map(|(x, g)| (x - g).abs()).fold(0.0, f64::max);
    assert!(max_err < 1e-3, "did not converge: {max_err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn velocities_respect_the_clamp(seed in any::<u64>(), gbest_mode in any::<bool>(), steps in 1usize..30) {
        let bounds = wide_bounds();
        let cfg = PsoConfig {
            reference_mode: if gbest_mode { ReferenceMode::GbestReference } else { ReferenceMode::XReference },
            ..PsoConfig::default()
        };
        let mut rng = stream(seed, Purpose::Init, &[]);
        let mut p = Particle::new(init_genome(&bounds, &mut rng).unwrap());
        for _ in 0..steps {
            let mut g = init_genome(&bounds, &mut rng).unwrap();
            // gBest far outside the box to provoke large pulls
            g = g.map(|_, v| v * rng.random_range(-50.0..50.0));
            velocity_update(&mut p, &g, &cfg, &bounds, &mut rng);
            let limits = p.velocity.zip_with(&p.velocity, |slot, _, _| cfg.v_max_fraction * bounds.span(slot));
            for (v, lim) in p.velocity.scalars().iter().zip(limits.scalars()) {
                prop_assert!(v.abs() <= lim, "{v} exceeds {lim}");
            }
            prop_assert_eq!(p.velocity.shape(), p.position.shape());
            position_update(&mut p);
        }
    }
}

#[test]
fn x_reference_updates_never_change_shape() {
    let bounds = wide_bounds();
    let cfg = PsoConfig::default();
    let mut rng = stream(5, Purpose::Velocity, &[]);
    let mut p = Particle::new(init_genome(&bounds, &mut rng).unwrap());
    let shape = p.shape();
    for _ in 0..1000 {
        let g = init_genome(&bounds, &mut rng).unwrap();
        velocity_update(&mut p, &g, &cfg, &bounds, &mut rng);
        position_update(&mut p);
        assert_eq!(p.shape(), shape);
        assert_eq!(p.velocity.shape(), shape);
        assert_eq!(p.pbest_position.shape(), shape);
    }
}
