use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView3, ArrayView4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stride-1 "same" convolution with an odd square kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    /// `C_out x C_in x k x k`.
    pub weight: Array4<f64>,
    pub bias: Option<Array1<f64>>,
}

impl Conv2d {
    /// Fan-in scaled uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = 1.0 / fan_in.sqrt();
        Self {
            weight: Array4::from_shape_simple_fn((out_channels, in_channels, kernel, kernel), || {
                rng.random_range(-bound..=bound)
            }),
            bias: bias.then(|| Array1::zeros(out_channels)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Array4::zeros(self.weight.raw_dim()),
            bias: self.bias.as_ref().map(|b| Array1::zeros(b.len())),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.len_of(Axis(1))
    }

    pub fn out_channels(&self) -> usize {
        self.weight.len_of(Axis(0))
    }

    pub fn kernel(&self) -> usize {
        self.weight.len_of(Axis(2))
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f64> {
        let (o, i, k, _) = self.weight.dim();
        self.weight
            .view()
            .into_shape_with_order((o, i * k * k))
            .expect("weights are contiguous")
    }

    fn check_input(&self, x: ArrayView4<f64>) -> Result<()> {
        if x.len_of(Axis(1)) != self.in_channels() {
            return Err(Error::InvalidArgument(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels(),
                x.len_of(Axis(1))
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView4<f64>) -> Result<Array4<f64>> {
        self.check_input(x)?;
        let (n, _, h, w) = x.dim();
        let wm = self.weight_matrix();
        let mut out = Array4::zeros((n, self.out_channels(), h, w));
        for (sample, mut dst) in x.outer_iter().zip(out.outer_iter_mut()) {
            let cols = im2col(sample, self.kernel());
            let mut y = wm.dot(&cols);
            if let Some(b) = &self.bias {
                y += &b.view().insert_axis(Axis(1));
            }
            let dims = dst.raw_dim();
            dst.assign(&y.into_shape_with_order(dims).expect("same size"));
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(
        &self,
        x: ArrayView4<f64>,
        dy: ArrayView4<f64>,
        grad: &mut Conv2d,
    ) -> Array4<f64> {
        let (n, c_in, h, w) = x.dim();
        let k = self.kernel();
        let wm = self.weight_matrix();
        let c_out = self.out_channels();
        let mut dwm = Array2::<f64>::zeros(wm.raw_dim());
        let mut dx = Array4::zeros((n, c_in, h, w));
        for ((sample, dsample), mut dxs) in x.outer_iter().zip(dy.outer_iter()).zip(dx.outer_iter_mut()) {
            let cols = im2col(sample, k);
            let dy_mat = dsample
                .to_owned()
                .into_shape_with_order((c_out, h * w))
                .expect("contiguous");
            dwm += &dy_mat.dot(&cols.t());
            if let Some(gb) = &mut grad.bias {
                *gb += &dy_mat.sum_axis(Axis(1));
            }
            let dcols = wm.t().dot(&dy_mat);
            col2im_add(&dcols, &mut dxs, k);
        }
        let dims = grad.weight.raw_dim();
        grad.weight += &dwm.into_shape_with_order(dims).expect("same size");
        dx
    }
}

/// `(C*k*k) x (H*W)` patch matrix with zero padding of `k/2`.
fn im2col(x: ArrayView3<f64>, k: usize) -> Array2<f64> {
    let (c, h, w) = x.dim();
    if k == 1 {
        return x.to_owned().into_shape_with_order((c, h * w)).expect("contiguous");
    }
    let pad = (k / 2) as isize;
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let mut cols = Array2::zeros((c * k * k, h * w));
    let dst = cols.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let out = &mut dst[row * h * w..(row + 1) * h * w];
                let dx = kx as isize - pad;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    out[y * w + x0..y * w + x1]
                        .copy_from_slice(&plane[sy * w + sx0..sy * w + sx0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`], accumulated into `dx`.
fn col2im_add(cols: &Array2<f64>, dx: &mut ndarray::ArrayViewMut3<f64>, k: usize) {
    let (c, h, w) = dx.dim();
    if k == 1 {
        let view = cols.view().into_shape_with_order((c, h, w)).expect("same size");
        *dx += &view;
        return;
    }
    let pad = (k / 2) as isize;
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    let mut acc = vec![0.0; c * h * w];
    for ci in 0..c {
        let plane = &mut acc[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let grad = &src[row * h * w..(row + 1) * h * w];
                let dxo = kx as isize - pad;
                let x0 = (-dxo).max(0) as usize;
                let x1 = (w as isize - dxo).min(w as isize) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let sx0 = (x0 as isize + dxo) as usize;
                    let target = &mut plane[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                    for (t, g) in target.iter_mut().zip(&grad[y * w + x0..y * w + x1]) {
                        *t += g;
                    }
                }
            }
        }
    }
    let acc = ndarray::ArrayView3::from_shape((c, h, w), &acc).expect("same size");
    *dx += &acc;
}
