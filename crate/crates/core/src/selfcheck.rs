//! Numeric self-checks of the engine.
//!
//! Each check compares an engine result against an independent oracle
//! (nested-loop convolution, inner-product adjoint identity, central finite
//! differences, a scalar Adam recurrence) and reports the worst observed
//! error next to the allowed one.

use std::fmt;

use rand::Rng;

use crate::genome::{ConvLayer, DecodedArchitecture, PoolLayer};
use crate::nn::conv::{conv2d_same, deconv, FilterSpec};
use crate::nn::{Adam, AdamConfig, Classifier, Encoder, FcaeModel, NnError, Param, Tensor};
use crate::rng::{stream, Purpose, StreamRng};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub observed: f64,
    pub allowed: f64,
    pub passed: bool,
    /// Where the worst error occurred.
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<4} {:<28} observed {:.3e}  allowed {:.1e}  {}",
            if self.passed { "ok" } else { "FAIL" },
            self.name,
            self.observed,
            self.allowed,
            self.detail
        )
    }
}

fn result(name: &str, observed: f64, allowed: f64, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        observed,
        allowed,
        passed: observed.is_finite() && observed <= allowed,
        detail,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelfcheckOptions {
    /// Parameter-name prefix (e.g. `decoder.deconv0`) whose analytic
    /// gradient is deliberately corrupted before the gradient checks.
    pub inject_fault: Option<String>,
}

pub const CONV_TOLERANCE: f64 = 1e-10;
pub const ADJOINT_TOLERANCE: f64 = 1e-8;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative gradient error.
pub const GRADIENT_FLOOR: f64 = 1e-6;
pub const ADAM_TOLERANCE: f64 = 1e-12;

fn random_tensor(shape: [usize; 4], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("sized")
}

fn random_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Straightforward SAME convolution; the odd padding pixel goes bottom/right.
pub fn conv_oracle(x: &Tensor, w: &[f64], b: &[f64], spec: &FilterSpec) -> Tensor {
    let [n, h, wd, _] = x.shape();
    let oh = h.div_ceil(spec.s_h);
    let ow = wd.div_ceil(spec.s_w);
    let pad_h = ((oh - 1) * spec.s_h + spec.k_h).saturating_sub(h) / 2;
    let pad_w = ((ow - 1) * spec.s_w + spec.k_w).saturating_sub(wd) / 2;
    let mut out = Tensor::zeros([n, oh, ow, spec.c_out]);
    for bi in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..spec.c_out {
                    let mut s = b[co];
                    for ky in 0..spec.k_h {
                        for kx in 0..spec.k_w {
                            let iy = (oy * spec.s_h + ky) as isize - pad_h as isize;
                            let ix = (ox * spec.s_w + kx) as isize - pad_w as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            for ci in 0..spec.c_in {
                                let wi = ((ky * spec.k_w + kx) * spec.c_in + ci) * spec.c_out + co;
                                s += w[wi] * x.get(bi, iy as usize, ix as usize, ci);
                            }
                        }
                    }
                    out.set(bi, oy, ox, co, s);
                }
            }
        }
    }
    out
}

fn random_spec(rng: &mut impl Rng) -> (FilterSpec, [usize; 4]) {
    let spec = FilterSpec {
        k_h: rng.random_range(1..=5),
        k_w: rng.random_range(1..=5),
        c_in: rng.random_range(1..=3),
        c_out: rng.random_range(1..=3),
        s_h: rng.random_range(1..=3),
        s_w: rng.random_range(1..=3),
    };
    let shape = [
        rng.random_range(1..=2),
        rng.random_range(1..=8),
        rng.random_range(1..=8),
        spec.c_in,
    ];
    (spec, shape)
}

/// Engine convolution vs the nested-loop oracle over 50 random cases.
pub fn check_conv_oracle() -> Result<CheckResult, NnError> {
    let mut rng = stream(11, Purpose::Weights, &[]);
    let mut worst = (0.0, String::new());
    for case in 0..50 {
        let (spec, shape) = random_spec(&mut rng);
        let x = random_tensor(shape, &mut rng);
        let w = random_vec(spec.len(), &mut rng);
        let b = random_vec(spec.c_out, &mut rng);
        let got = conv2d_same(&x, &w, Some(&b), &spec)?;
        let err = got.max_abs_diff(&conv_oracle(&x, &w, &b, &spec));
        if err >= worst.0 {
            worst = (err, format!("case {case}: input {shape:?}, {spec:?}"));
        }
    }
    Ok(result("conv_oracle", worst.0, CONV_TOLERANCE, worst.1))
}

/// `⟨conv(X), Y⟩ = ⟨X, deconv(Y)⟩` with zero bias.
pub fn check_adjoint() -> Result<CheckResult, NnError> {
    let mut rng = stream(12, Purpose::Weights, &[]);
    let mut worst = (0.0, String::new());
    for case in 0..50 {
        let (spec, shape) = random_spec(&mut rng);
        let x = random_tensor(shape, &mut rng);
        let w = random_vec(spec.len(), &mut rng);
        let cx = conv2d_same(&x, &w, None, &spec)?;
        let y = random_tensor(cx.shape(), &mut rng);
        let dy = deconv(&y, &w, None, &spec, (shape[1], shape[2]))?;
        let err = (cx.dot(&y) - x.dot(&dy)).abs();
        if err >= worst.0 {
            worst = (err, format!("case {case}: input {shape:?}, {spec:?}"));
        }
    }
    Ok(result("conv_deconv_adjoint", worst.0, ADJOINT_TOLERANCE, worst.1))
}

fn corrupt(params: Vec<&mut Param>, prefix: &str) -> usize {
    let mut hit = 0;
    for p in params {
        if p.name.starts_with(prefix) {
            for g in &mut p.grad {
                *g += 1e-2 * (g.abs() + 1e-3);
            }
            hit += 1;
        }
    }
    hit
}

/// Central differences for every parameter of a model whose loss is given
/// by `loss`; `analytic` holds the gradients keyed like `params`.
fn finite_difference<M>(
    name: &str,
    model: &mut M,
    analytic: Vec<(String, Vec<f64>)>,
    params_mut: impl Fn(&mut M) -> Vec<&mut Param>,
    loss: impl Fn(&M) -> Result<f64, NnError>,
) -> Result<CheckResult, NnError> {
    let mut worst = (0.0, String::new());
    for (pi, (pname, grads)) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = params_mut(model)[pi].value[i];
            params_mut(model)[pi].value[i] = orig + FD_STEP;
            let up = loss(model)?;
            params_mut(model)[pi].value[i] = orig - FD_STEP;
            let down = loss(model)?;
            params_mut(model)[pi].value[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
            if err >= worst.0 || !err.is_finite() {
                worst = (
                    err,
                    format!("worst at {pname}[{i}]: analytic {a:.6e}, numeric {numeric:.6e}"),
                );
            }
        }
    }
    Ok(result(name, worst.0, GRADIENT_TOLERANCE, worst.1))
}

fn grads_of(params: Vec<&Param>) -> Vec<(String, Vec<f64>)> {
    params
        .into_iter()
        .map(|p| (p.name.clone(), p.grad.clone()))
        .collect()
}

fn conv(f: (usize, usize), s: (usize, usize), maps: usize, l2: f64) -> ConvLayer {
    ConvLayer {
        filter_w: f.1,
        filter_h: f.0,
        stride_w: s.1,
        stride_h: s.0,
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

/// Full reconstruction + l2 gradient of small FCAEs against central
/// differences.
pub fn check_fcae_gradients(opts: &SelfcheckOptions) -> Result<Vec<CheckResult>, NnError> {
    let cases = [
        (
            "fcae_gradient_8x8",
            DecodedArchitecture {
                conv: vec![conv((3, 3), (1, 1), 4, 0.01), conv((2, 2), (1, 1), 5, 0.003)],
                pool: vec![pool(2, 2)],
            },
            [8, 8, 1],
        ),
        (
            "fcae_gradient_strided",
            DecodedArchitecture {
                conv: vec![conv((2, 3), (2, 1), 3, 0.005), conv((3, 3), (2, 2), 4, 0.002)],
                pool: vec![pool(3, 2), pool(2, 1)],
            },
            [7, 9, 2],
        ),
    ];
    let mut out = Vec::new();
    for (i, (name, arch, hwc)) in cases.into_iter().enumerate() {
        let mut rng = stream(13, Purpose::Weights, &[i as u64]);
        let mut model = FcaeModel::new(&arch, hwc, &mut rng)?;
        for p in model.params_mut() {
            if p.name.ends_with("bias") {
                for v in &mut p.value {
                    *v = rng.random_range(-0.1..0.1);
                }
            }
        }
        let x = Tensor::from_vec(
            [2, hwc[0], hwc[1], hwc[2]],
            (0..2 * hwc.iter().product::<usize>())
                .map(|_| rng.random::<f64>())
                .collect(),
        )?;
        debug_assert!(model.param_count() <= 2000);
        model.forward_backward(&x)?;
        if let Some(prefix) = &opts.inject_fault {
            corrupt(model.params_mut(), prefix);
        }
        let analytic = grads_of(model.params());
        out.push(finite_difference(
            name,
            &mut model,
            analytic,
            |m| m.params_mut(),
            |m| m.loss(&x).map(|l| l.total()),
        )?);
    }
    Ok(out)
}

/// Cross-entropy gradient of a small classifier, dropout mask held fixed.
pub fn check_classifier_gradients(opts: &SelfcheckOptions) -> Result<CheckResult, NnError> {
    let mut rng = stream(14, Purpose::Weights, &[]);
    let arch = DecodedArchitecture {
        conv: vec![conv((3, 3), (1, 1), 3, 0.01)],
        pool: vec![pool(2, 2)],
    };
    let enc = Encoder::new("block0", &arch, [6, 6, 1], &mut rng)?;
    let mut clf = Classifier::new(vec![enc], 8, 3, 0.5, &mut rng)?;
    let x = Tensor::from_vec([4, 6, 6, 1], (0..144).map(|_| rng.random::<f64>()).collect())?;
    let labels = [0u8, 2, 1, 2];
    let mask_rng: StreamRng = stream(15, Purpose::Dropout, &[]);
    clf.forward_backward(&x, &labels, &mut mask_rng.clone())?;
    if let Some(prefix) = &opts.inject_fault {
        corrupt(clf.params_mut(), prefix);
    }
    let analytic = grads_of(clf.params());
    let loss = |c: &Classifier| {
        let mut c = c.clone();
        c.forward_backward(&x, &labels, &mut mask_rng.clone())
            .map(|s| s.cross_entropy + s.l2)
    };
    finite_difference("classifier_gradient", &mut clf, analytic, |c| c.params_mut(), loss)
}

/// Engine Adam vs an independent scalar recurrence on
/// `f(w) = Σ c_i w_i²`, 200 steps.
pub fn check_adam() -> Result<CheckResult, NnError> {
    let coef = [1.0, 0.3, 4.0];
    let cfg = AdamConfig::default();
    let mut w = vec![1.0, -2.0, 0.5];
    let mut adam = Adam::new(cfg);
    let mut reference = w.clone();
    let mut m = [0.0; 3];
    let mut v = [0.0; 3];
    let mut worst = 0.0f64;
    for t in 1..=200 {
        let g: Vec<f64> = w.iter().zip(&coef).map(|(w, c)| 2.0 * c * w).collect();
        adam.step_one(&mut w, &g)?;
        for i in 0..3 {
            let gi = 2.0 * coef[i] * reference[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mh = m[i] / (1.0 - cfg.beta1.powi(t));
            let vh = v[i] / (1.0 - cfg.beta2.powi(t));
            reference[i] -= cfg.alpha * mh / (vh.sqrt() + cfg.epsilon);
            worst = worst.max((reference[i] - w[i]).abs());
        }
    }
    Ok(result(
        "adam_reference",
        worst,
        ADAM_TOLERANCE,
        format!("200 steps, final {w:?}"),
    ))
}

/// Every check, in a fixed order. The fault prefix must name at least one
/// parameter of the checked models.
pub fn run_all(opts: &SelfcheckOptions) -> Result<Vec<CheckResult>, NnError> {
    let mut out = vec![check_conv_oracle()?, check_adjoint()?];
    out.extend(check_fcae_gradients(opts)?);
    out.push(check_classifier_gradients(opts)?);
    out.push(check_adam()?);
    Ok(out)
}

/// Parameter-name prefixes accepted by `inject_fault`.
pub fn fault_targets() -> Vec<String> {
    let mut names = vec![
        "encoder.conv0".to_string(),
        "encoder.conv1".into(),
        "decoder.deconv0".into(),
        "decoder.deconv1".into(),
        "block0.conv0".into(),
        "head.hidden".into(),
        "head.output".into(),
    ];
    names.sort();
    names
}
