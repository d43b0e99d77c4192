//! Image-quality metrics: PSNR, SSIM, and percent NRMSE.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_shape, Error, Result};
use crate::filter::{blur_with_kernel, gaussian_kernel_1d};
use crate::grid::RealImage;

/// PSNR values for perfect reconstructions are reported as this sentinel.
pub const PSNR_CAP_DB: f64 = 200.0;

/// SSIM window: 11×11 Gaussian, σ = 1.5.
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Peak signal-to-noise ratio in dB (capped at [`PSNR_CAP_DB`]).
    pub psnr: f64,
    /// Structural similarity in `[-1, 1]`.
    pub ssim: f64,
    /// Normalized root-mean-square error in percent.
    pub rmse: f64,
}

fn data_range(gt: &Array2<f64>) -> Result<f64> {
    let max = gt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= 0.0 {
        return Err(Error::invalid(
            "ground truth has no positive intensity; data range undefined",
        ));
    }
    Ok(max)
}

/// `20·log10(max(gt) / rms_error)`, capped at 200 dB for exact matches.
pub fn psnr(recon: &RealImage, gt: &RealImage) -> Result<f64> {
    ensure_same_shape(recon.dim(), gt.dim())?;
    let range = data_range(gt.data())?;
    let n = (gt.dim().0 * gt.dim().1) as f64;
    let mse: f64 = recon
        .data()
        .iter()
        .zip(gt.data().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((20.0 * (range / mse.sqrt()).log10()).min(PSNR_CAP_DB))
}

/// Mean SSIM with an 11×11 Gaussian window (σ=1.5) and the standard
/// stabilization constants `C1=(0.01 L)²`, `C2=(0.03 L)²`, `L = max(gt)`.
pub fn ssim(recon: &RealImage, gt: &RealImage) -> Result<f64> {
    ensure_same_shape(recon.dim(), gt.dim())?;
    let l = data_range(gt.data())?;
    let c1 = (SSIM_K1 * l).powi(2);
    let c2 = (SSIM_K2 * l).powi(2);
    let w = gaussian_kernel_1d(SSIM_SIGMA)?;
    let x = recon.data();
    let y = gt.data();
    let mu_x = blur_with_kernel(x, &w);
    let mu_y = blur_with_kernel(y, &w);
    let xx = blur_with_kernel(&(x * x), &w);
    let yy = blur_with_kernel(&(y * y), &w);
    let xy = blur_with_kernel(&(x * y), &w);
    let mut acc = 0.0;
    Zip::from(&mu_x)
        .and(&mu_y)
        .and(&xx)
        .and(&yy)
        .and(&xy)
        .for_each(|&mx, &my, &sxx, &syy, &sxy| {
            let var_x = sxx - mx * mx;
            let var_y = syy - my * my;
            let cov = sxy - mx * my;
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
        });
    Ok(acc / (x.len() as f64))
}

/// Percent normalized RMSE: `100·‖recon−gt‖₂ / ‖gt‖₂`.
pub fn rmse(recon: &RealImage, gt: &RealImage) -> Result<f64> {
    ensure_same_shape(recon.dim(), gt.dim())?;
    let gt_norm: f64 = gt.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    if gt_norm == 0.0 {
        return Err(Error::invalid("ground truth is identically zero"));
    }
    let err: f64 = recon
        .data()
        .iter()
        .zip(gt.data().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(100.0 * err / gt_norm)
}

/// All three metrics in one pass.
pub fn compute_metrics(recon: &RealImage, gt: &RealImage) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr: psnr(recon, gt)?,
        ssim: ssim(recon, gt)?,
        rmse: rmse(recon, gt)?,
    })
}

/// Mean and standard deviation of a metric column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Aggregate statistics over per-image reports, matching the `mean ± std`
/// presentation of the result tables (population standard deviation).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricSummary {
    pub psnr: MeanStd,
    pub ssim: MeanStd,
    pub rmse: MeanStd,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    if values.is_empty() {
        return MeanStd { mean: f64::NAN, std: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

pub fn summarize(reports: &[MetricReport]) -> MetricSummary {
    let col = |f: fn(&MetricReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
    MetricSummary {
        psnr: mean_std(&col(|r| r.psnr)),
        ssim: mean_std(&col(|r| r.ssim)),
        rmse: mean_std(&col(|r| r.rmse)),
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
