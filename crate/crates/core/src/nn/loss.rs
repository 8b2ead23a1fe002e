use super::{NnError, Tensor};

/// Reconstruction error: squared error summed over every pixel and channel
/// of an image, averaged over the batch. Returns the loss and `∂L/∂x̂`.
pub fn reconstruction_error(recon: &Tensor, target: &Tensor) -> Result<(f64, Tensor), NnError> {
    if recon.shape() != target.shape() {
        return Err(NnError::Shape(format!(
            "reconstruction {:?} vs target {:?}",
            recon.shape(),
            target.shape()
        )));
    }
    let n = recon.batch().max(1) as f64;
    let mut grad = Tensor::zeros(recon.shape());
    let mut sum = 0.0;
    for ((g, &r), &t) in grad.data_mut().iter_mut().zip(recon.data()).zip(target.data()) {
        let d = r - t;
        sum += d * d;
        *g = 2.0 * d / n;
    }
    Ok((sum / n, grad))
}

/// `λ · Σ w²` and its gradient `2λw` (accumulated into `grad`).
pub fn l2_penalty(weights: &[f64], lambda: f64, grad: Option<&mut [f64]>) -> f64 {
    if let Some(g) = grad {
        for (gv, &w) in g.iter_mut().zip(weights) {
            *gv += 2.0 * lambda * w;
        }
    }
    lambda * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Row-wise softmax of an `n × k` logit matrix.
pub fn softmax(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut total = 0.0;
        for &z in row {
            let e = (z - max).exp();
            total += e;
            out.push(e);
        }
        for p in &mut out[start..] {
            *p /= total;
        }
    }
    out
}

/// Mean softmax cross-entropy over the batch and its logit gradient.
pub fn softmax_cross_entropy(logits: &[f64], k: usize, labels: &[u8]) -> Result<(f64, Vec<f64>), NnError> {
    let n = labels.len();
    if logits.len() != n * k {
        return Err(NnError::Shape(format!(
            "{} logits for {n} labels and {k} classes",
            logits.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
        return Err(NnError::Shape(format!("label {bad} outside {k} classes")));
    }
    let mut probs = softmax(logits, k);
    let mut loss = 0.0;
    let inv = 1.0 / n.max(1) as f64;
    for (row, &label) in probs.chunks_exact_mut(k).zip(labels) {
        loss -= row[label as usize].max(f64::MIN_POSITIVE).ln();
        row[label as usize] -= 1.0;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    Ok((loss * inv, probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_reconstruction_has_zero_loss_and_gradient() {
        let x = Tensor::from_vec([2, 2, 2, 1], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]).unwrap();
        let (l, g) = reconstruction_error(&x, &x).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sums_pixels_and_averages_images() {
        let x = Tensor::zeros([2, 2, 2, 1]);
        let y = Tensor::filled([2, 2, 2, 1], 0.5);
        let (l, _) = reconstruction_error(&y, &x).unwrap();
        // each image: 4 pixels × 0.25; mean over 2 images
        assert!((l - 1.0).abs() < 1e-15);
    }

    #[test]
    fn l2_gradient_is_two_lambda_w() {
        let mut g = [0.0];
        let l = l2_penalty(&[0.7], 0.003, Some(&mut g));
        assert!((l - 0.003 * 0.49).abs() < 1e-15);
        assert!((g[0] - 2.0 * 0.003 * 0.7).abs() < 1e-15);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = [1.0, 2.0, 3.0, -500.0, 0.0, 800.0];
        let p = softmax(&logits, 3);
        for row in p.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let (loss, grad) = softmax_cross_entropy(&logits, 3, &[2, 2]).unwrap();
        assert!(loss.is_finite());
        for row in grad.chunks(3) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
        assert!(softmax_cross_entropy(&logits, 3, &[3, 0]).is_err());
    }
}
