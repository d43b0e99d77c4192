//! Under-sampling mask machinery.
//!
//! Fixed baselines (1-D equispaced, 2-D variable density), the learnable
//! continuous sampling mask built from a normalized frequency error prior and
//! a trainable modulation grid, threshold binarization, and mask application
//! to ground-truth images.

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{ensure_same_shape, Error, Result};
use crate::grid::{dc_index, fft2c, ComplexGrid, Domain, RealImage};

/// Acceleration rate and fully-sampled center fraction.
///
/// The standard rate/center pairings are 4×/0.084, 8×/0.042, 10×/0.032,
/// 30×/0.0125.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelerationSpec {
    pub rate: u32,
    pub center_fraction: f64,
}

impl AccelerationSpec {
    pub fn new(rate: u32, center_fraction: f64) -> Result<Self> {
        if rate == 0 {
            return Err(Error::invalid("acceleration rate must be >= 1"));
        }
        if !(0.0..1.0).contains(&center_fraction) {
            return Err(Error::invalid("center_fraction must be in [0,1)"));
        }
        let gamma = 1.0 / rate as f64;
        if rate > 1 && center_fraction >= gamma {
            return Err(Error::invalid(format!(
                "center_fraction {center_fraction} must be below the sampling fraction {gamma}"
            )));
        }
        Ok(Self { rate, center_fraction })
    }

    /// The published rate/center-fraction pairings.
    pub fn standard(rate: u32) -> Result<Self> {
        let cf = match rate {
            4 => 0.084,
            8 => 0.042,
            10 => 0.032,
            30 => 0.0125,
            _ => {
                return Err(Error::invalid(format!(
                    "no standard center fraction for rate {rate}; use AccelerationSpec::new"
                )))
            }
        };
        Self::new(rate, cf)
    }

    /// Target sampling fraction γ = 1/R.
    pub fn gamma(&self) -> f64 {
        1.0 / self.rate as f64
    }
}

/// Whether a mask selects whole k-space columns (line acquisition) or
/// individual points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskKind {
    Column1D,
    Point2D,
}

/// Trainable sampling modulation grid, initialized uniform on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct ProbabilityMaskParams {
    pub values: Array2<f64>,
}

impl ProbabilityMaskParams {
    pub fn init_uniform(shape: (usize, usize), rng: &mut impl Rng) -> Self {
        ProbabilityMaskParams {
            values: Array2::from_shape_fn(shape, |_| rng.random::<f64>() * 2.0 - 1.0),
        }
    }
}

/// Relaxed mask with entries in `[0,1]`.
#[derive(Debug, Clone)]
pub struct ContinuousMask {
    pub values: Array2<f64>,
}

impl ContinuousMask {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("continuous mask entries must lie in [0,1]"));
        }
        Ok(ContinuousMask { values })
    }
}

/// Binary mask together with its realized sampling fraction.
#[derive(Debug, Clone)]
pub struct DiscreteMask {
    pub values: Array2<f64>,
    pub gamma_achieved: f64,
}

impl DiscreteMask {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("discrete mask entries must be 0 or 1"));
        }
        let gamma_achieved = values.iter().sum::<f64>() / values.len() as f64;
        Ok(DiscreteMask { values, gamma_achieved })
    }
}

/// Sigmoid slopes of the continuous-mask relaxation: a gentle slope turns
/// logits into probabilities, a steep one approximates the threshold
/// indicator while staying differentiable.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SigmoidSlopes {
    pub prob: f64,
    pub thresh: f64,
}

impl Default for SigmoidSlopes {
    fn default() -> Self {
        SigmoidSlopes { prob: 5.0, thresh: 200.0 }
    }
}

fn center_cols(w: usize, center_fraction: f64) -> usize {
    if center_fraction == 0.0 {
        0
    } else {
        ((center_fraction * w as f64).round() as usize).max(1)
    }
}

/// Indicator grid of the always-sampled low-frequency region: a centered
/// column block for 1-D masks, a centered square holding ≈ `cf·H·W` points
/// for 2-D masks.
pub fn center_region(shape: (usize, usize), spec: &AccelerationSpec, kind: MaskKind) -> Array2<f64> {
    let (h, w) = shape;
    let mut out = Array2::zeros((h, w));
    match kind {
        MaskKind::Column1D => {
            let n = center_cols(w, spec.center_fraction);
            if n > 0 {
                let start = dc_index(w).saturating_sub(n / 2);
                for j in start..(start + n).min(w) {
                    out.column_mut(j).fill(1.0);
                }
            }
        }
        MaskKind::Point2D => {
            if spec.center_fraction > 0.0 {
                let side = ((spec.center_fraction * (h * w) as f64).sqrt().round() as usize).max(1);
                let r0 = dc_index(h).saturating_sub(side / 2);
                let c0 = dc_index(w).saturating_sub(side / 2);
                for i in r0..(r0 + side).min(h) {
                    for j in c0..(c0 + side).min(w) {
                        out[[i, j]] = 1.0;
                    }
                }
            }
        }
    }
    out
}

fn check_center_budget(shape: (usize, usize), spec: &AccelerationSpec, center: &Array2<f64>) -> Result<()> {
    let budget = spec.gamma() * (shape.0 * shape.1) as f64;
    let used = center.iter().sum::<f64>();
    if used > budget + 1e-9 {
        return Err(Error::invalid(format!(
            "center region ({used} samples) exceeds the sampling budget ({budget:.1})"
        )));
    }
    Ok(())
}

/// 1-D equispaced column mask: the center block is fully sampled, the
/// remaining columns are taken every R-th, starting from the first
/// non-center column in raster order.
pub fn equispaced_mask(shape: (usize, usize), spec: &AccelerationSpec) -> Result<DiscreteMask> {
    let (h, w) = shape;
    let center = center_region(shape, spec, MaskKind::Column1D);
    check_center_budget(shape, spec, &center)?;
    let mut values = center.clone();
    let mut pos = 0usize;
    for j in 0..w {
        if center[[0, j]] == 1.0 {
            continue;
        }
        if pos % spec.rate as usize == 0 {
            for i in 0..h {
                values[[i, j]] = 1.0;
            }
        }
        pos += 1;
    }
    DiscreteMask::new(values)
}

/// 2-D variable-density baseline: a polynomial radial density sharpened to
/// the target fraction, realized by exact top-k selection of `p - U` so the
/// fraction is met exactly and the draw is reproducible.
pub fn variable_density_mask(
    shape: (usize, usize),
    spec: &AccelerationSpec,
    power: f64,
    rng: &mut impl Rng,
) -> Result<DiscreteMask> {
    let (h, w) = shape;
    let center = center_region(shape, spec, MaskKind::Point2D);
    check_center_budget(shape, spec, &center)?;
    let (ci, cj) = (dc_index(h) as f64, dc_index(w) as f64);
    let rmax = (ci.powi(2) + cj.powi(2)).sqrt().max(1.0);
    let density = Array2::from_shape_fn((h, w), |(i, j)| {
        let r = ((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)).sqrt() / rmax;
        (1.0 - r).max(0.0).powf(power)
    });
    let p = sparsify(&density, spec.gamma())?;
    let scores = Array2::from_shape_fn((h, w), |idx| p[idx] - rng.random::<f64>());
    select_top_k(&scores, target_count(spec.gamma(), h * w), Some(&center))
}

fn target_count(gamma: f64, total: usize) -> usize {
    ((gamma * total as f64).round() as usize).min(total)
}

/// Mean-preserving rescale onto target mean γ: `p·γ/mean(p)` when the mean
/// is above target, the complementary rescale otherwise. Order-preserving
/// and the output stays in `[0,1]`.
pub fn sparsify(p: &Array2<f64>, gamma: f64) -> Result<Array2<f64>> {
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::invalid(format!("gamma must lie in (0,1), got {gamma}")));
    }
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("sparsify input must lie in [0,1]"));
    }
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    let out = if mean >= gamma {
        p.mapv(|v| v * gamma / mean)
    } else {
        p.mapv(|v| 1.0 - (1.0 - v) * (1.0 - gamma) / (1.0 - mean))
    };
    Ok(out)
}

/// Tape version of [`sparsify`]; the branch is chosen on forward values and
/// gradients flow through the selected rescale.
pub fn sparsify_on_tape(t: &Tape, p: Var, gamma: f64) -> Var {
    let mean = t.mean(p);
    if t.scalar(mean) >= gamma {
        let factor = t.scale(t.recip(mean), gamma);
        t.mul_scalar_var(factor, p)
    } else {
        let one_minus_p = t.add_scalar(t.neg(p), 1.0);
        let denom = t.add_scalar(t.neg(mean), 1.0);
        let factor = t.scale(t.recip(denom), 1.0 - gamma);
        let scaled = t.mul_scalar_var(factor, one_minus_p);
        t.add_scalar(t.neg(scaled), 1.0)
    }
}

/// Continuous sampling mask:
/// `M_c = σ_b( S_γ( σ_a(norm(r) + P_mask) ) − U )`, with the center region
/// overridden to one.
pub fn continuous_mask(
    r_norm: &Array2<f64>,
    params: &ProbabilityMaskParams,
    spec: &AccelerationSpec,
    kind: MaskKind,
    u: &Array2<f64>,
    slopes: SigmoidSlopes,
) -> Result<ContinuousMask> {
    ensure_same_shape(r_norm.dim(), params.values.dim())?;
    ensure_same_shape(r_norm.dim(), u.dim())?;
    let logits = r_norm + &params.values;
    let probs = logits.mapv(|v| 1.0 / (1.0 + (-slopes.prob * v).exp()));
    let q = sparsify(&probs, spec.gamma())?;
    let center = center_region(r_norm.dim(), spec, kind);
    let mut m = Array2::zeros(r_norm.dim());
    Zip::from(&mut m).and(&q).and(u).and(&center).for_each(|m, &q, &u, &c| {
        let v = 1.0 / (1.0 + (-slopes.thresh * (q - u)).exp());
        *m = v * (1.0 - c) + c;
    });
    ContinuousMask::new(m)
}

/// Tape version of [`continuous_mask`]; differentiable with respect to the
/// `p_mask` variable (and anything else feeding it).
pub fn continuous_mask_on_tape(
    t: &Tape,
    r_norm: Var,
    p_mask: Var,
    spec: &AccelerationSpec,
    kind: MaskKind,
    u: Var,
    slopes: SigmoidSlopes,
) -> Var {
    let shape = t.shape(r_norm);
    let logits = t.add(r_norm, p_mask);
    let probs = t.sigmoid_slope(logits, slopes.prob);
    let q = sparsify_on_tape(t, probs, spec.gamma());
    let m = t.sigmoid_slope(t.sub(q, u), slopes.thresh);
    let center = center_region((shape[0], shape[1]), spec, kind);
    let keep = t.constant(center.mapv(|c| 1.0 - c).into_dyn());
    let center_c = t.constant(center.into_dyn());
    t.add(t.mul(m, keep), center_c)
}

/// Selects exactly `k` entries: every forced-center entry first, then the
/// highest-scoring remaining entries, ties broken toward lower raster index.
/// The threshold is located by bisection; the tied value at the boundary is
/// filled in raster order.
fn select_top_k(scores: &Array2<f64>, k: usize, center: Option<&Array2<f64>>) -> Result<DiscreteMask> {
    let (h, w) = scores.dim();
    let total = h * w;
    let mut values = Array2::zeros((h, w));
    let mut taken = 0usize;
    if let Some(c) = center {
        ensure_same_shape(scores.dim(), c.dim())?;
        Zip::from(&mut values).and(c).for_each(|v, &c| *v = c);
        taken = values.iter().filter(|&&v| v == 1.0).count();
    }
    if k < taken {
        return Err(Error::invalid(format!(
            "target count {k} is below the forced center size {taken}"
        )));
    }
    let remaining = k - taken;
    let free: Vec<(usize, usize)> = (0..h)
        .flat_map(|i| (0..w).map(move |j| (i, j)))
        .filter(|&(i, j)| values[[i, j]] == 0.0)
        .collect();
    if remaining >= free.len() {
        for &(i, j) in &free {
            values[[i, j]] = 1.0;
        }
        return DiscreteMask::new(values);
    }
    if remaining > 0 {
        // Bisect a threshold over the free entries until lo/hi are adjacent
        // floats; entries strictly above hi are definite picks, entries equal
        // to the boundary value fill the rest in raster order.
        let count_above = |t: f64| free.iter().filter(|&&(i, j)| scores[[i, j]] > t).count();
        let mut lo = free
            .iter()
            .map(|&(i, j)| scores[[i, j]])
            .fold(f64::INFINITY, f64::min)
            - 1.0;
        let mut hi = free
            .iter()
            .map(|&(i, j)| scores[[i, j]])
            .fold(f64::NEG_INFINITY, f64::max);
        if count_above(hi) > remaining {
            return Err(Error::invalid("non-finite scores in binarization"));
        }
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if count_above(mid) > remaining {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut taken_free = 0usize;
        for &(i, j) in &free {
            if scores[[i, j]] > hi {
                values[[i, j]] = 1.0;
                taken_free += 1;
            }
        }
        for &(i, j) in &free {
            if taken_free == remaining {
                break;
            }
            if values[[i, j]] == 0.0 && scores[[i, j]] > lo {
                values[[i, j]] = 1.0;
                taken_free += 1;
            }
        }
        debug_assert_eq!(taken_free, remaining);
    }
    let mask = DiscreteMask::new(values)?;
    debug_assert!((mask.gamma_achieved - k as f64 / total as f64).abs() < 1e-12);
    Ok(mask)
}

/// Averages the per-image continuous masks and thresholds the average to the
/// sampling fraction closest to γ (weighted averaging + binary search).
/// Deterministic, idempotent on its own output.
pub fn binarize_masks(
    masks: &[ContinuousMask],
    gamma: f64,
    center: Option<&Array2<f64>>,
) -> Result<DiscreteMask> {
    if masks.is_empty() {
        return Err(Error::invalid("binarize_masks needs at least one mask"));
    }
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::invalid(format!("gamma must lie in (0,1), got {gamma}")));
    }
    let shape = masks[0].values.dim();
    let mut avg = Array2::<f64>::zeros(shape);
    for m in masks {
        ensure_same_shape(shape, m.values.dim())?;
        avg += &m.values;
    }
    avg /= masks.len() as f64;
    select_top_k(&avg, target_count(gamma, shape.0 * shape.1), center)
}

/// Simulated acquisition: `k = M ⊙ F(x) (+ ε)`, zero-filled image
/// `x_u = |F⁻¹(k)|`. Works with both continuous and discrete mask grids.
pub fn apply_mask(
    x_gt: &RealImage,
    mask: &Array2<f64>,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> Result<(ComplexGrid, RealImage)> {
    ensure_same_shape(x_gt.dim(), mask.dim())?;
    if noise_sigma < 0.0 {
        return Err(Error::invalid("noise sigma must be nonnegative"));
    }
    let k_full = fft2c(&ComplexGrid::from_real(x_gt.data())?)?;
    let mut k = k_full.into_data();
    Zip::from(&mut k).and(mask).for_each(|kv, &m| *kv *= m);
    if noise_sigma > 0.0 {
        let dist = Normal::new(0.0, noise_sigma).unwrap();
        k.mapv_inplace(|kv| kv + Complex64::new(dist.sample(rng), dist.sample(rng)));
    }
    let k_meas = ComplexGrid::new(k, Domain::Kspace)?;
    let x_u = RealImage::new(crate::grid::ifft2c(&k_meas)?.magnitude())?;
    Ok((k_meas, x_u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equispaced_small_case_matches_enumeration() {
        let spec = AccelerationSpec::new(4, 0.0).unwrap();
        let m = equispaced_mask((4, 8), &spec).unwrap();
        for j in 0..8 {
            let want = if j == 0 || j == 4 { 1.0 } else { 0.0 };
            for i in 0..4 {
                assert_eq!(m.values[[i, j]], want, "col {j}");
            }
        }
        assert!((m.gamma_achieved - 0.25).abs() < 1e-12);
    }

    #[test]
    fn equispaced_rate_one_is_all_ones() {
        let spec = AccelerationSpec::new(1, 0.0).unwrap();
        let m = equispaced_mask((4, 6), &spec).unwrap();
        assert!(m.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn equispaced_standard_4x_center_block() {
        let spec = AccelerationSpec::standard(4).unwrap();
        // 0.084 * 256 = 21.504 -> 22 fully sampled central columns.
        let block = center_region((256, 256), &spec, MaskKind::Column1D);
        let cols: Vec<usize> = (0..256).filter(|&j| block[[0, j]] == 1.0).collect();
        assert_eq!(cols.len(), 22);
        assert!(cols.windows(2).all(|w| w[1] == w[0] + 1), "block not contiguous");
        assert!(cols.contains(&dc_index(256)));
        // The mask contains the block.
        let m = equispaced_mask((256, 256), &spec).unwrap();
        for j in &cols {
            assert!((0..256).all(|i| m.values[[i, *j]] == 1.0));
        }
    }

    #[test]
    fn spec_validation() {
        assert!(AccelerationSpec::new(0, 0.0).is_err());
        assert!(AccelerationSpec::new(4, 0.25).is_err());
        assert!(AccelerationSpec::new(4, 0.2).is_ok());
        assert!(AccelerationSpec::standard(7).is_err());
    }

    #[test]
    fn sparsify_closed_forms() {
        let g = 0.25;
        let p = Array2::from_elem((4, 4), g);
        let out = sparsify(&p, g).unwrap();
        assert!(out.iter().all(|&v| (v - g).abs() < 1e-15));

        let p = Array2::from_elem((4, 4), 0.5);
        let out = sparsify(&p, 0.25).unwrap();
        assert!(out.iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let out = sparsify(&p, 0.75).unwrap();
        assert!(out.iter().all(|&v| (v - 0.75).abs() < 1e-15));

        assert!(sparsify(&p, 0.0).is_err());
        assert!(sparsify(&p, 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn prop_sparsify_mean_and_order(seed in 0u64..500, gamma in 0.05f64..0.95) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = Array2::from_shape_fn((6, 7), |_| rng.random::<f64>());
            let out = sparsify(&p, gamma).unwrap();
            let mean = out.iter().sum::<f64>() / out.len() as f64;
            prop_assert!((mean - gamma).abs() < 1e-9);
            prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
            // Order preservation.
            let flat_in: Vec<f64> = p.iter().copied().collect();
            let flat_out: Vec<f64> = out.iter().copied().collect();
            for i in 0..flat_in.len() {
                for j in 0..flat_in.len() {
                    if flat_in[i] < flat_in[j] {
                        prop_assert!(flat_out[i] <= flat_out[j] + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn continuous_mask_saturation_and_midpoint() {
        let slopes = SigmoidSlopes::default();
        // q = 1, u = 0 -> sigmoid(200) ~ 1.
        let v = 1.0 / (1.0 + (-slopes.thresh * 1.0f64).exp());
        assert!((v - 1.0).abs() < 1e-8);
        // q == u -> exactly 0.5.
        let v = 1.0 / (1.0 + (-slopes.thresh * 0.0f64).exp());
        assert_eq!(v, 0.5);
    }

    #[test]
    fn continuous_mask_monte_carlo_mean_tracks_q() {
        // With fixed q, E_U[σ_b(q - U)] ≈ q for b = 200.
        let spec = AccelerationSpec::new(4, 0.0).unwrap();
        let slopes = SigmoidSlopes::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let r_norm = Array2::from_shape_fn((4, 4), |_| rng.random::<f64>());
        let params = ProbabilityMaskParams::init_uniform((4, 4), &mut rng);
        // Recover q by replaying the construction.
        let logits = &r_norm + &params.values;
        let probs = logits.mapv(|v: f64| 1.0 / (1.0 + (-slopes.prob * v).exp()));
        let q = sparsify(&probs, spec.gamma()).unwrap();

        let n = 100_000;
        let mut acc = Array2::<f64>::zeros((4, 4));
        for _ in 0..n {
            let u = Array2::from_shape_fn((4, 4), |_| rng.random::<f64>());
            let m = continuous_mask(&r_norm, &params, &spec, MaskKind::Point2D, &u, slopes).unwrap();
            acc += &m.values;
        }
        acc /= n as f64;
        for (a, b) in acc.iter().zip(q.iter()) {
            assert!((a - b).abs() < 0.01, "MC mean {a} vs q {b}");
        }
    }

    #[test]
    fn continuous_mask_gradient_matches_fd() {
        // d loss / d P_mask through the full Eq-9 construction, frozen U.
        let spec = AccelerationSpec::new(4, 0.0).unwrap();
        let slopes = SigmoidSlopes::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r_norm = Array2::from_shape_fn((6, 6), |_| rng.random::<f64>());
        let u = Array2::from_shape_fn((6, 6), |_| rng.random::<f64>());
        let target = Array2::from_shape_fn((6, 6), |_| rng.random::<f64>());
        let p0 = Array2::from_shape_fn((6, 6), |_| rng.random::<f64>() * 2.0 - 1.0);

        let eval = |p: &Array2<f64>, t: &Tape| -> (Var, Var) {
            let p_var = t.leaf(p.clone().into_dyn());
            let r = t.constant(r_norm.clone().into_dyn());
            let uu = t.constant(u.clone().into_dyn());
            let m = continuous_mask_on_tape(t, r, p_var, &spec, MaskKind::Point2D, uu, slopes);
            let tgt = t.constant(target.clone().into_dyn());
            let d = t.sub(m, tgt);
            (t.mean(t.mul(d, d)), p_var)
        };

        let tape = Tape::new();
        let (loss, p_var) = eval(&p0, &tape);
        let grads = tape.backward(loss);
        let analytic = grads.get(p_var).unwrap().clone();

        let h = 1e-6;
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for idx in 0..p0.len() {
            let mut pp = p0.clone();
            let mut pm = p0.clone();
            pp.as_slice_mut().unwrap()[idx] += h;
            pm.as_slice_mut().unwrap()[idx] -= h;
            let tp = Tape::new();
            let (lp, _) = eval(&pp, &tp);
            let tm = Tape::new();
            let (lm, _) = eval(&pm, &tm);
            let fd = (tp.scalar(lp) - tm.scalar(lm)) / (2.0 * h);
            let an = analytic.as_slice().unwrap()[idx];
            num += (an - fd) * (an - fd);
            den += fd * fd;
        }
        assert!(num.sqrt() <= 1e-5 * den.sqrt(), "rel err {}", num.sqrt() / den.sqrt());
    }

    #[test]
    fn binarize_selects_top_k_with_distinct_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals = Array2::from_shape_fn((5, 5), |_| rng.random::<f64>() * 0.999);
        let m = ContinuousMask::new(vals.clone()).unwrap();
        let gamma = 8.0 / 25.0;
        let d = binarize_masks(&[m], gamma, None).unwrap();
        // Oracle: sort entries, take the 8 largest.
        let mut entries: Vec<(f64, usize)> = vals.iter().copied().zip(0..25).collect();
        entries.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let top: std::collections::HashSet<usize> = entries[..8].iter().map(|e| e.1).collect();
        for (idx, &v) in d.values.iter().enumerate() {
            assert_eq!(v == 1.0, top.contains(&idx));
        }
        assert!((d.gamma_achieved - gamma).abs() <= 1.0 / 25.0);
    }

    #[test]
    fn binarize_is_idempotent_fixed_point() {
        let mut values = Array2::zeros((4, 4));
        for j in 0..4 {
            values[[0, j]] = 1.0;
        }
        let gamma = 0.25;
        let m = ContinuousMask::new(values.clone()).unwrap();
        let d = binarize_masks(&[m.clone(), m.clone()], gamma, None).unwrap();
        assert_eq!(d.values, values);
        let again = binarize_masks(&[ContinuousMask::new(d.values.clone()).unwrap()], gamma, None).unwrap();
        assert_eq!(again.values, d.values);
    }

    #[test]
    fn binarize_breaks_ties_in_raster_order() {
        // Four entries share the boundary value; the two earliest in raster
        // order must win.
        let mut vals = Array2::from_elem((4, 4), 0.1);
        vals[[0, 0]] = 0.9;
        vals[[1, 1]] = 0.5;
        vals[[1, 3]] = 0.5;
        vals[[2, 0]] = 0.5;
        vals[[3, 3]] = 0.5;
        let m = ContinuousMask::new(vals).unwrap();
        let d = binarize_masks(&[m], 3.0 / 16.0, None).unwrap();
        assert_eq!(d.values[[0, 0]], 1.0);
        assert_eq!(d.values[[1, 1]], 1.0);
        assert_eq!(d.values[[1, 3]], 1.0);
        assert_eq!(d.values[[2, 0]], 0.0);
        assert_eq!(d.values[[3, 3]], 0.0);
        assert!((d.gamma_achieved - 3.0 / 16.0).abs() <= 1.0 / 16.0);
        assert!(binarize_masks(&[], 0.5, None).is_err());
    }

    #[test]
    fn apply_mask_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = RealImage::new(Array2::from_shape_fn((8, 8), |_| rng.random::<f64>())).unwrap();
        let ones = Array2::from_elem((8, 8), 1.0);
        let (_, x_u) = apply_mask(&img, &ones, 0.0, &mut rng).unwrap();
        for (a, b) in x_u.data().iter().zip(img.data().iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        let zeros = Array2::zeros((8, 8));
        let (k, x_u) = apply_mask(&img, &zeros, 0.0, &mut rng).unwrap();
        assert!(k.data().iter().all(|c| c.norm() == 0.0));
        assert!(x_u.data().iter().all(|&v| v == 0.0));
        assert!(apply_mask(&img, &ones, -1.0, &mut rng).is_err());
    }

    #[test]
    fn apply_mask_center_row_matches_direct_dft() {
        // Keep only the DC row of k-space and compare against a direct
        // summation of the row-filtered spectrum.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let img = RealImage::new(Array2::from_shape_fn((8, 8), |_| rng.random::<f64>())).unwrap();
        let mut mask = Array2::zeros((8, 8));
        for j in 0..8 {
            mask[[dc_index(8), j]] = 1.0;
        }
        let (k_meas, x_u) = apply_mask(&img, &mask, 0.0, &mut rng).unwrap();
        // Direct inverse DFT of the masked spectrum.
        let back = crate::grid::ifft2c(&k_meas).unwrap();
        let naive = {
            let (h, w) = (8usize, 8usize);
            let (ch, cw) = (dc_index(h) as isize, dc_index(w) as isize);
            Array2::from_shape_fn((h, w), |(x, y)| {
                let mut acc = Complex64::default();
                for ku in 0..h {
                    for kv in 0..w {
                        let kc = k_meas.data()[[ku, kv]];
                        if kc.norm() == 0.0 {
                            continue;
                        }
                        let fu = ku as isize - ch;
                        let fv = kv as isize - cw;
                        let px = x as isize - ch;
                        let py = y as isize - cw;
                        let phase = 2.0 * std::f64::consts::PI
                            * ((fu * px) as f64 / h as f64 + (fv * py) as f64 / w as f64);
                        acc += kc * Complex64::new(phase.cos(), phase.sin());
                    }
                }
                acc / 8.0
            })
        };
        for ((a, b), m) in back.data().iter().zip(naive.iter()).zip(x_u.data().iter()) {
            assert!((a - b).norm() < 1e-10);
            assert!((a.norm() - m).abs() < 1e-12);
        }
    }

    #[test]
    fn center_region_budgets() {
        let spec = AccelerationSpec::standard(4).unwrap();
        let c = center_region((32, 32), &spec, MaskKind::Point2D);
        let count = c.iter().sum::<f64>();
        // ~0.084 * 1024 = 86 -> 9x9 = 81 points.
        assert_eq!(count, 81.0);
        let c1 = center_region((32, 32), &spec, MaskKind::Column1D);
        assert_eq!(c1.iter().sum::<f64>(), 3.0 * 32.0);
    }

    #[test]
    fn variable_density_hits_exact_fraction() {
        let spec = AccelerationSpec::standard(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = variable_density_mask((32, 32), &spec, 3.0, &mut rng).unwrap();
        assert!((m.gamma_achieved - 0.25).abs() <= 1.0 / 1024.0);
        // Center forced on.
        let c = center_region((32, 32), &spec, MaskKind::Point2D);
        for (mv, cv) in m.values.iter().zip(c.iter()) {
            if *cv == 1.0 {
                assert_eq!(*mv, 1.0);
            }
        }
    }
}
