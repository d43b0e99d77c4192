//! Complex image/k-space grids and the centered orthonormal 2-D Fourier pair.
//!
//! Every operator in the pipeline moves data through these two types. The
//! transform convention is fixed once here: `fft2c` is the unitary DFT with
//! the zero-frequency component at the grid center (fftshift applied on both
//! sides), so dense low-frequency sampling always means "the middle of the
//! mask".

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{ensure_same_shape, Error, Result};

/// Which domain a [`ComplexGrid`] currently lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Image,
    Kspace,
}

/// H×W complex-valued grid, the common currency of all frequency-domain
/// operators.
#[derive(Debug, Clone)]
pub struct ComplexGrid {
    data: Array2<Complex64>,
    domain: Domain,
}

/// H×W real-valued image with intensities normalized to `[0,1]` on ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    data: Array2<f64>,
}

pub const MIN_GRID_DIM: usize = 4;

fn check_dims(h: usize, w: usize) -> Result<()> {
    if h < MIN_GRID_DIM || w < MIN_GRID_DIM {
        return Err(Error::invalid(format!(
            "grid must be at least {MIN_GRID_DIM}x{MIN_GRID_DIM}, got {h}x{w}"
        )));
    }
    Ok(())
}

impl ComplexGrid {
    pub fn new(data: Array2<Complex64>, domain: Domain) -> Result<Self> {
        let (h, w) = data.dim();
        check_dims(h, w)?;
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::invalid("complex grid contains non-finite values"));
        }
        Ok(Self { data, domain })
    }

    /// Wraps a real array as an image-domain grid with zero imaginary part.
    pub fn from_real(data: &Array2<f64>) -> Result<Self> {
        Self::new(data.mapv(|v| Complex64::new(v, 0.0)), Domain::Image)
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    /// Element-wise magnitude.
    pub fn magnitude(&self) -> Array2<f64> {
        self.data.mapv(|c| c.norm())
    }

    /// ℓ2 norm over all entries.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn into_data(self) -> Array2<Complex64> {
        self.data
    }
}

impl RealImage {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (h, w) = data.dim();
        check_dims(h, w)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    /// Min-max normalization onto `[0,1]`; constant inputs map to all zeros.
    pub fn normalized(&self) -> RealImage {
        RealImage {
            data: normalize_unit(&self.data),
        }
    }
}

/// Min-max rescale onto `[0,1]`; a constant array maps to all zeros.
pub fn normalize_unit(data: &Array2<f64>) -> Array2<f64> {
    let min = data.iter().copied().fold(f64::INFINITY, f64::min);
    let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range <= 0.0 {
        Array2::zeros(data.dim())
    } else {
        data.mapv(|v| (v - min) / range)
    }
}

// Cached FFT plans, keyed by (length, forward?). rustfft plans are Arc'd and
// cheap to clone out of the cache.
thread_local! {
    static PLAN_CACHE: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> =
        RefCell::new(HashMap::new());
}

fn plan(len: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    PLAN_CACHE.with(|cache| {
        cache
            .borrow_mut()
            .entry((len, forward))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if forward {
                    planner.plan_fft_forward(len)
                } else {
                    planner.plan_fft_inverse(len)
                }
            })
            .clone()
    })
}

/// Circularly rolls the array so `out[(i+sr) % H][(j+sc) % W] = in[i][j]`.
fn roll(a: &Array2<Complex64>, sr: usize, sc: usize) -> Array2<Complex64> {
    let (h, w) = a.dim();
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        let ti = (i + sr) % h;
        for j in 0..w {
            out[[ti, (j + sc) % w]] = a[[i, j]];
        }
    }
    out
}

fn fftshift(a: &Array2<Complex64>) -> Array2<Complex64> {
    let (h, w) = a.dim();
    roll(a, h / 2, w / 2)
}

fn ifftshift(a: &Array2<Complex64>) -> Array2<Complex64> {
    let (h, w) = a.dim();
    roll(a, h - h / 2, w - w / 2)
}

fn fft_axes(a: &mut Array2<Complex64>, forward: bool) {
    let (h, w) = a.dim();
    let row_plan = plan(w, forward);
    let mut scratch = vec![Complex64::default(); row_plan.get_inplace_scratch_len()];
    for mut row in a.rows_mut() {
        let slice = row.as_slice_mut().expect("rows of a standard-layout array");
        row_plan.process_with_scratch(slice, &mut scratch);
    }
    let col_plan = plan(h, forward);
    let mut scratch = vec![Complex64::default(); col_plan.get_inplace_scratch_len()];
    let mut col_buf = vec![Complex64::default(); h];
    for j in 0..w {
        for i in 0..h {
            col_buf[i] = a[[i, j]];
        }
        col_plan.process_with_scratch(&mut col_buf, &mut scratch);
        for i in 0..h {
            a[[i, j]] = col_buf[i];
        }
    }
}

/// Centered orthonormal 2-D DFT on a raw complex array.
///
/// `ifft2c_raw(fft2c_raw(x)) == x` to machine precision and
/// `‖fft2c_raw(x)‖₂ == ‖x‖₂` (unitary).
pub fn fft2c_raw(a: &Array2<Complex64>) -> Array2<Complex64> {
    let (h, w) = a.dim();
    let mut shifted = ifftshift(a);
    fft_axes(&mut shifted, true);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = fftshift(&shifted);
    out.mapv_inplace(|c| c * scale);
    out
}

/// Inverse of [`fft2c_raw`].
pub fn ifft2c_raw(a: &Array2<Complex64>) -> Array2<Complex64> {
    let (h, w) = a.dim();
    let mut shifted = ifftshift(a);
    fft_axes(&mut shifted, false);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = fftshift(&shifted);
    out.mapv_inplace(|c| c * scale);
    out
}

/// Centered orthonormal FFT of an image-domain grid.
pub fn fft2c(g: &ComplexGrid) -> Result<ComplexGrid> {
    if g.domain != Domain::Image {
        return Err(Error::invalid("fft2c expects an image-domain grid"));
    }
    ComplexGrid::new(fft2c_raw(&g.data), Domain::Kspace)
}

/// Centered orthonormal inverse FFT of a k-space grid.
pub fn ifft2c(k: &ComplexGrid) -> Result<ComplexGrid> {
    if k.domain != Domain::Kspace {
        return Err(Error::invalid("ifft2c expects a k-space grid"));
    }
    ComplexGrid::new(ifft2c_raw(&k.data), Domain::Image)
}

/// Index of the zero-frequency entry after centering: `floor(n/2)`.
pub fn dc_index(n: usize) -> usize {
    n / 2
}

/// Element-wise complex difference `a - b` of two same-shape arrays.
pub fn sub_complex(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    ensure_same_shape(a.dim(), b.dim())?;
    let mut out = a.clone();
    Zip::from(&mut out).and(b).for_each(|o, &v| *o -= v);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_grid(h: usize, w: usize, seed: u64) -> Array2<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((h, w), |_| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    /// Direct O(N²) DFT matching the centered orthonormal convention.
    fn dft2c_naive(a: &Array2<Complex64>) -> Array2<Complex64> {
        let (h, w) = a.dim();
        let (ch, cw) = (dc_index(h) as isize, dc_index(w) as isize);
        let mut out = Array2::zeros((h, w));
        for ku in 0..h {
            for kv in 0..w {
                let fu = ku as isize - ch;
                let fv = kv as isize - cw;
                let mut acc = Complex64::default();
                for x in 0..h {
                    for y in 0..w {
                        let px = x as isize - ch;
                        let py = y as isize - cw;
                        let phase = -2.0 * std::f64::consts::PI
                            * (fu * px) as f64 / h as f64
                            - 2.0 * std::f64::consts::PI * (fv * py) as f64 / w as f64;
                        acc += a[[x, y]] * Complex64::new(phase.cos(), phase.sin());
                    }
                }
                out[[ku, kv]] = acc / ((h * w) as f64).sqrt();
            }
        }
        out
    }

    #[test]
    fn impulse_at_center_gives_flat_spectrum() {
        // 4x4 grid, single 1 at the centered DC position: |K| = 1/4 everywhere.
        let mut a = Array2::zeros((4, 4));
        a[[dc_index(4), dc_index(4)]] = Complex64::new(1.0, 0.0);
        let k = fft2c_raw(&a);
        for c in k.iter() {
            assert!((c.norm() - 0.25).abs() < 1e-12, "got magnitude {}", c.norm());
        }
        // Cross-check against the direct summation oracle.
        let oracle = dft2c_naive(&a);
        for (x, y) in k.iter().zip(oracle.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_dft_on_random_grids() {
        for (h, w, seed) in [(4, 4, 1u64), (5, 7, 2), (8, 8, 3)] {
            let a = random_grid(h, w, seed);
            let fast = fft2c_raw(&a);
            let naive = dft2c_naive(&a);
            let err: f64 = fast
                .iter()
                .zip(naive.iter())
                .map(|(x, y)| (x - y).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-10, "{h}x{w}: naive mismatch {err}");
        }
    }

    #[test]
    fn zero_grid_maps_to_zero() {
        let a = Array2::<Complex64>::zeros((8, 8));
        assert!(fft2c_raw(&a).iter().all(|c| c.norm() == 0.0));
        assert!(ifft2c_raw(&a).iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn unitarity_on_random_grid() {
        let a = random_grid(8, 8, 7);
        let k = fft2c_raw(&a);
        let ea: f64 = a.iter().map(|c| c.norm_sqr()).sum();
        let ek: f64 = k.iter().map(|c| c.norm_sqr()).sum();
        assert!((ea - ek).abs() / ea < 1e-10);
    }

    #[test]
    fn round_trip_16x16() {
        let a = random_grid(16, 16, 11);
        let back = ifft2c_raw(&fft2c_raw(&a));
        let num: f64 = a
            .iter()
            .zip(back.iter())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let den: f64 = a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        assert!(num / den < 1e-10);
    }

    #[test]
    fn constant_kspace_is_centered_impulse() {
        // Constant k-space of value c inverse-transforms to an impulse of
        // c·√(HW) at the centered DC pixel.
        let (h, w) = (6, 8);
        let c = Complex64::new(0.3, -0.1);
        let k = Array2::from_elem((h, w), c);
        let img = ifft2c_raw(&k);
        let expect = c * ((h * w) as f64).sqrt();
        for i in 0..h {
            for j in 0..w {
                let want = if (i, j) == (dc_index(h), dc_index(w)) {
                    expect
                } else {
                    Complex64::default()
                };
                assert!((img[[i, j]] - want).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn domain_tags_are_enforced() {
        let g = ComplexGrid::from_real(&Array2::zeros((4, 4))).unwrap();
        let k = fft2c(&g).unwrap();
        assert_eq!(k.domain(), Domain::Kspace);
        assert!(fft2c(&k).is_err());
        assert!(ifft2c(&g).is_err());
    }

    #[test]
    fn rejects_non_finite_and_tiny_grids() {
        let mut a = Array2::<f64>::zeros((4, 4));
        a[[0, 0]] = f64::NAN;
        assert!(ComplexGrid::from_real(&a).is_err());
        assert!(RealImage::new(a).is_err());
        assert!(ComplexGrid::from_real(&Array2::zeros((2, 4))).is_err());
    }

    #[test]
    fn normalize_unit_handles_constant_input() {
        let a = Array2::from_elem((4, 4), 3.7);
        assert!(normalize_unit(&a).iter().all(|&v| v == 0.0));
        let b = Array2::from_shape_fn((4, 4), |(i, j)| (i + j) as f64);
        let n = normalize_unit(&b);
        let min = n.iter().copied().fold(f64::INFINITY, f64::min);
        let max = n.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((min, max), (0.0, 1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn prop_round_trip_and_unitarity(seed in 0u64..1000, h in 4usize..20, w in 4usize..20) {
            let a = random_grid(h, w, seed);
            let k = fft2c_raw(&a);
            let ea: f64 = a.iter().map(|c| c.norm_sqr()).sum();
            let ek: f64 = k.iter().map(|c| c.norm_sqr()).sum();
            prop_assert!((ea - ek).abs() <= 1e-10 * ea.max(1e-300));
            let back = ifft2c_raw(&k);
            let err: f64 = a.iter().zip(back.iter()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
            let den: f64 = ea.sqrt();
            prop_assert!(err <= 1e-10 * den.max(1e-300));
        }
    }
}
