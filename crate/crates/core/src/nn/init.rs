//! Xavier (Glorot) uniform initialisation.

use rand::Rng;

/// `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn xavier_uniform(len: usize, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Vec<f64> {
    let a = xavier_limit(fan_in, fan_out);
    (0..len).map(|_| rng.random_range(-a..=a)).collect()
}

/// Fans of a `(kh, kw, c_in, c_out)` filter: receptive field times channels.
pub fn filter_fans(k_h: usize, k_w: usize, c_in: usize, c_out: usize) -> (usize, usize) {
    (k_h * k_w * c_in, k_h * k_w * c_out)
}

pub fn xavier_filter(k_h: usize, k_w: usize, c_in: usize, c_out: usize, rng: &mut impl Rng) -> Vec<f64> {
    let (fi, fo) = filter_fans(k_h, k_w, c_in, c_out);
    xavier_uniform(k_h * k_w * c_in * c_out, fi, fo, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn limit_from_filter_fans() {
        let (fi, fo) = filter_fans(3, 3, 8, 16);
        assert_eq!((fi, fo), (72, 144));
        assert_eq!(xavier_limit(fi, fo), (6.0f64 / 216.0).sqrt());
        assert_eq!(xavier_limit(1, 1), 3f64.sqrt());
    }

    #[test]
    fn sample_variance_matches_uniform() {
        let mut rng = stream(1, Purpose::Weights, &[]);
        let w = xavier_filter(3, 3, 8, 16, &mut rng);
        let a = xavier_limit(72, 144);
        assert!(w.iter().all(|v| v.abs() <= a));
        let many = xavier_uniform(100_000, 72, 144, &mut rng);
        let mean = many.iter().sum::<f64>() / many.len() as f64;
        let var = many.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / many.len() as f64;
        let expected = a * a / 3.0;
        assert!(((var - expected) / expected).abs() < 0.05, "var {var} vs {expected}");
    }
}
