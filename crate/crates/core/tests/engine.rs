//! Engine-level checks against independent oracles.

use fcae_core::selfcheck::{self, SelfcheckOptions};

#[test]
fn selfcheck_passes() {
    let results = selfcheck::run_all(&SelfcheckOptions::default()).unwrap();
    for r in &results {
        eprintln!("{r}");
    }
    assert!(results.iter().all(|r| r.passed));
}

#[test]
fn injected_fault_is_reported() {
    for target in ["decoder.deconv0", "encoder.conv1", "head.hidden"] {
        let opts = SelfcheckOptions { inject_fault: Some(target.into()) };
        let results = selfcheck::run_all(&opts).unwrap();
        let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
        assert!(!failed.is_empty(), "{target}");
        assert!(failed.iter().all(|r| r.detail.contains(target)), "{failed:?}");
    }
}

#[test]
fn adam_on_a_scalar_quadratic() {
    use fcae_core::nn::{Adam, AdamConfig};
    let mut adam = Adam::new(AdamConfig::default());
    let mut w = [1.0f64];
    // independent recurrence for f(w) = w^2
    let (mut rw, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    let mut prev = w[0];
    for t in 1..=200 {
        let g = [2.0 * w[0]];
        adam.step_one(&mut w, &g).unwrap();
        let rg = 2.0 * rw;
        m = 0.9 * m + 0.1 * rg;
        v = 0.999 * v + 0.001 * rg * rg;
        let m_hat = m / (1.0 - 0.9f64.powi(t));
        let v_hat = v / (1.0 - 0.999f64.powi(t));
        rw -= 0.001 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((w[0] - rw).abs() <= 1e-12, "step {t}: {} vs {rw}", w[0]);
        assert!(w[0].abs() < 1.0 && w[0] < prev, "step {t}");
        prev = w[0];
    }
    assert_eq!(adam.steps(), 200);
}
