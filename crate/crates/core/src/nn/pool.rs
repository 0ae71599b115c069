//! 3x3 pooling with stride 1 and padding 1, which keeps the spatial shape.

use ndarray::{Array4, ArrayView4};

/// Box average over the 3x3 neighbourhood, always dividing by 9 (padding
/// counts as zeros). The operator is symmetric, so it is its own adjoint.
pub fn avg_pool3(x: ArrayView4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let mut out = Array4::zeros((n, c, h, w));
    let dst = out.as_slice_mut().expect("fresh array");
    let mut rows = vec![0.0; h * w];
    for (plane, out_plane) in src.chunks_exact(h * w).zip(dst.chunks_exact_mut(h * w)) {
        for y in 0..h {
            let r = &plane[y * w..(y + 1) * w];
            for xx in 0..w {
                let mut s = r[xx];
                if xx > 0 {
                    s += r[xx - 1];
                }
                if xx + 1 < w {
                    s += r[xx + 1];
                }
                rows[y * w + xx] = s;
            }
        }
        for y in 0..h {
            for xx in 0..w {
                let mut s = rows[y * w + xx];
                if y > 0 {
                    s += rows[(y - 1) * w + xx];
                }
                if y + 1 < h {
                    s += rows[(y + 1) * w + xx];
                }
                out_plane[y * w + xx] = s / 9.0;
            }
        }
    }
    out
}

pub fn avg_pool3_backward(dy: ArrayView4<f64>) -> Array4<f64> {
    avg_pool3(dy)
}

fn window_argmax(plane: &[f64], h: usize, w: usize, y: usize, x: usize) -> usize {
    let mut best = y * w + x;
    for sy in y.saturating_sub(1)..(y + 2).min(h) {
        for sx in x.saturating_sub(1)..(x + 2).min(w) {
            let i = sy * w + sx;
            if plane[i] > plane[best] {
                best = i;
            }
        }
    }
    best
}

/// Max over the 3x3 neighbourhood; padding never wins.
pub fn max_pool3(x: ArrayView4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let mut out = Array4::zeros((n, c, h, w));
    let dst = out.as_slice_mut().expect("fresh array");
    for (plane, out_plane) in src.chunks_exact(h * w).zip(dst.chunks_exact_mut(h * w)) {
        for y in 0..h {
            for xx in 0..w {
                out_plane[y * w + xx] = plane[window_argmax(plane, h, w, y, xx)];
            }
        }
    }
    out
}

pub fn max_pool3_backward(x: ArrayView4<f64>, dy: ArrayView4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let x = x.as_standard_layout();
    let dy = dy.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let grad = dy.as_slice().expect("standard layout");
    let mut dx = Array4::zeros((n, c, h, w));
    let dst = dx.as_slice_mut().expect("fresh array");
    for ((plane, g), d) in src
        .chunks_exact(h * w)
        .zip(grad.chunks_exact(h * w))
        .zip(dst.chunks_exact_mut(h * w))
    {
        for y in 0..h {
            for xx in 0..w {
                d[window_argmax(plane, h, w, y, xx)] += g[y * w + xx];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn average_keeps_shape_and_counts_padding() {
        let x = Array4::from_elem((1, 1, 3, 3), 9.0);
        let y = avg_pool3(x.view());
        assert_eq!(y.dim(), (1, 1, 3, 3));
        assert_eq!(y[[0, 0, 1, 1]], 9.0);
        assert_eq!(y[[0, 0, 0, 0]], 4.0);
        assert_eq!(y[[0, 0, 0, 1]], 6.0);
    }

    #[test]
    fn average_is_self_adjoint() {
        let x = Array4::from_shape_fn((1, 2, 4, 5), |(_, c, i, j)| (c * 20 + i * 5 + j) as f64 * 0.1);
        let d = Array4::from_shape_fn((1, 2, 4, 5), |(_, c, i, j)| ((c + i * j) % 7) as f64 - 3.0);
        let lhs = (&avg_pool3(x.view()) * &d).sum();
        let rhs = (&x * &avg_pool3_backward(d.view())).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn max_pool_routes_gradient() {
        let mut x = Array4::zeros((1, 1, 3, 3));
        x[[0, 0, 1, 1]] = 5.0;
        let y = max_pool3(x.view());
        assert!(y.iter().all(|&v| v == 5.0));
        let dx = max_pool3_backward(x.view(), Array4::ones((1, 1, 3, 3)).view());
        assert_eq!(dx[[0, 0, 1, 1]], 9.0);
        assert_eq!(dx.sum(), 9.0);
    }
}
