use super::conv::Window;
use super::{NnError, Tensor};

/// Max pooling with SAME-style edges: output is `ceil(in / stride)` and
/// padded positions never win. Returns, per output element, the flat index
/// of the input element that produced it (first maximum in scan order).
pub fn maxpool(
    input: &Tensor,
    kernel: (usize, usize),
    stride: (usize, usize),
) -> Result<(Tensor, Vec<usize>), NnError> {
    let g = Window::same(input.height(), input.width(), kernel, stride)?;
    let c = input.channels();
    let mut out = Tensor::zeros([input.batch(), g.out_h, g.out_w, c]);
    let mut argmax = vec![0usize; out.len()];
    let data = input.data();
    let mut o = 0;
    for b in 0..input.batch() {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for ky in 0..g.k_h {
                        let Some(y) = g.src_y(oy, ky) else { continue };
                        for kx in 0..g.k_w {
                            let Some(x) = g.src_x(ox, kx) else { continue };
                            let i = input.index(b, y, x, ch);
                            let v = data[i];
                            // a NaN claims the slot so it propagates
                            if best_i == usize::MAX || v > best || (v.is_nan() && !best.is_nan()) {
                                best = v;
                                best_i = i;
                            }
                        }
                    }
                    out.data_mut()[o] = best;
                    argmax[o] = best_i;
                    o += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each output gradient to its argmax input position.
pub fn maxpool_backward(input_shape: [usize; 4], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        gd[i] += v;
    }
    g
}

fn nearest(dst: usize, dst_len: usize, src_len: usize) -> usize {
    (dst * src_len / dst_len).min(src_len - 1)
}

/// Nearest-neighbour resize of the spatial axes to `target_hw`.
pub fn upsample(input: &Tensor, target_hw: (usize, usize)) -> Result<Tensor, NnError> {
    let (th, tw) = target_hw;
    if th == 0 || tw == 0 || input.height() == 0 || input.width() == 0 {
        return Err(NnError::Degenerate(format!(
            "cannot upsample {}x{} to {th}x{tw}",
            input.height(),
            input.width()
        )));
    }
    let c = input.channels();
    let mut out = Tensor::zeros([input.batch(), th, tw, c]);
    for b in 0..input.batch() {
        for y in 0..th {
            let sy = nearest(y, th, input.height());
            for x in 0..tw {
                let sx = nearest(x, tw, input.width());
                let src = input.index(b, sy, sx, 0);
                let dst = out.index(b, y, x, 0);
                out.data_mut()[dst..dst + c].copy_from_slice(&input.data()[src..src + c]);
            }
        }
    }
    Ok(out)
}

pub fn upsample_backward(input_shape: [usize; 4], grad_out: &Tensor) -> Tensor {
    let mut g = Tensor::zeros(input_shape);
    let (ih, iw, c) = (input_shape[1], input_shape[2], input_shape[3]);
    let (th, tw) = (grad_out.height(), grad_out.width());
    for b in 0..grad_out.batch() {
        for y in 0..th {
            let sy = nearest(y, th, ih);
            for x in 0..tw {
                let sx = nearest(x, tw, iw);
                let src = grad_out.index(b, y, x, 0);
                let dst = g.index(b, sy, sx, 0);
                for ch in 0..c {
                    let v = grad_out.data()[src + ch];
                    g.data_mut()[dst + ch] += v;
                }
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: [usize; 4]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i * 37) % 101) as f64 / 101.0).collect()).unwrap()
    }

    #[test]
    fn halves_and_collapses() {
        let x = ramp([1, 32, 32, 2]);
        let (y, _) = maxpool(&x, (2, 2), (2, 2)).unwrap();
        assert_eq!(y.shape(), [1, 16, 16, 2]);
        let mut t = x;
        for _ in 0..5 {
            t = maxpool(&t, (2, 2), (2, 2)).unwrap().0;
        }
        assert_eq!(t.shape(), [1, 1, 1, 2]);
    }

    #[test]
    fn constant_in_constant_out() {
        let x = Tensor::filled([2, 7, 5, 3], 0.3);
        let (y, _) = maxpool(&x, (3, 3), (2, 2)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn picks_window_maximum() {
        let x = Tensor::from_vec([1, 2, 2, 1], vec![0.1, 0.9, 0.4, 0.2]).unwrap();
        let (y, arg) = maxpool(&x, (2, 2), (2, 2)).unwrap();
        assert_eq!(y.data(), &[0.9]);
        assert_eq!(arg, vec![1]);
    }

    #[test]
    fn backward_routes_to_argmax() {
        let x = ramp([2, 5, 6, 3]);
        let (y, arg) = maxpool(&x, (3, 3), (2, 2)).unwrap();
        let gy = ramp(y.shape());
        let gx = maxpool_backward(x.shape(), &arg, &gy);
        assert!((gx.sum() - gy.sum()).abs() < 1e-12);
        for (&i, &v) in arg.iter().zip(gy.data()) {
            assert!(gx.data()[i] >= v - 1e-15);
        }
    }

    #[test]
    fn upsample_cases() {
        let x = Tensor::filled([1, 1, 1, 1], 0.4);
        assert_eq!(upsample(&x, (2, 2)).unwrap().data(), &[0.4; 4]);

        let x = ramp([2, 3, 4, 2]);
        assert_eq!(upsample(&x, (3, 4)).unwrap(), x);

        let up = upsample(&x, (6, 8)).unwrap();
        let (back, _) = maxpool(&up, (2, 2), (2, 2)).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        let x = ramp([1, 4, 4, 2]);
        let y = ramp([1, 7, 7, 2]).map(|v| v - 0.5);
        let lhs = upsample(&x, (7, 7)).unwrap().dot(&y);
        let rhs = x.dot(&upsample_backward(x.shape(), &y));
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
