//! Gaussian smoothing with reflective boundaries.
//!
//! The same kernel machinery backs the image-quality metrics, the
//! low/high-frequency loss split, and the differentiable blur used during
//! training, so the arithmetic is defined exactly once here.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::RealImage;

/// Truncated normalized 1-D Gaussian, radius `ceil(3σ)`.
pub fn gaussian_kernel_1d(sigma: f64) -> Result<Vec<f64>> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    Ok(k)
}

/// Mirror-without-duplication index folding: `-1 -> 1`, `n -> n-2`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

fn blur_rows(a: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    let (h, w) = a.dim();
    let r = kernel.len() / 2;
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (k, &g) in kernel.iter().enumerate() {
                let jj = reflect_index(j as isize + k as isize - r as isize, w);
                acc += g * a[[i, jj]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

fn blur_cols(a: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    let (h, w) = a.dim();
    let r = kernel.len() / 2;
    let mut out = Array2::zeros((h, w));
    for j in 0..w {
        for i in 0..h {
            let mut acc = 0.0;
            for (k, &g) in kernel.iter().enumerate() {
                let ii = reflect_index(i as isize + k as isize - r as isize, h);
                acc += g * a[[ii, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Separable Gaussian blur of a raw array (equals the full 2-D product-kernel
/// convolution because reflection along one axis commutes with convolution
/// along the other).
pub fn gaussian_blur_raw(a: &Array2<f64>, sigma: f64) -> Result<Array2<f64>> {
    let kernel = gaussian_kernel_1d(sigma)?;
    Ok(blur_cols(&blur_rows(a, &kernel), &kernel))
}

/// Blur with a precomputed 1-D kernel (used by the differentiable loss path).
pub fn blur_with_kernel(a: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    blur_cols(&blur_rows(a, kernel), kernel)
}

/// Adjoint of [`blur_with_kernel`] under the standard inner product; needed
/// for backpropagation through the loss split.
pub fn blur_with_kernel_adjoint(grad: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    let (h, w) = grad.dim();
    let r = kernel.len() / 2;
    // Adjoint of the column pass.
    let mut gc = Array2::<f64>::zeros((h, w));
    for j in 0..w {
        for i in 0..h {
            let g_out = grad[[i, j]];
            for (k, &g) in kernel.iter().enumerate() {
                let ii = reflect_index(i as isize + k as isize - r as isize, h);
                gc[[ii, j]] += g * g_out;
            }
        }
    }
    // Adjoint of the row pass.
    let mut gr = Array2::<f64>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let g_out = gc[[i, j]];
            for (k, &g) in kernel.iter().enumerate() {
                let jj = reflect_index(j as isize + k as isize - r as isize, w);
                gr[[i, jj]] += g * g_out;
            }
        }
    }
    gr
}

/// Gaussian blur of a [`RealImage`].
pub fn gaussian_blur(img: &RealImage, sigma: f64) -> Result<RealImage> {
    RealImage::new(gaussian_blur_raw(img.data(), sigma)?)
}
