use crate::error::Result;
use crate::image::Image;
use crate::losses::{ssim, LossConfig};
use crate::scalar::Real;

/// Reported when the images agree to within `MSE < 1e-10`.
pub const PSNR_CAP: f64 = 99.0;

pub fn mse<T: Real>(img: &Image<T>, gt: &Image<T>) -> Result<f64> {
    img.check_same_shape(gt)?;
    let n = img.data.len().max(1) as f64;
    Ok(img.data.iter().zip(&gt.data).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum::<f64>() / n)
}

/// Peak signal-to-noise ratio for images in `[0, 1]`.
pub fn psnr<T: Real>(img: &Image<T>, gt: &Image<T>) -> Result<f64> {
    let m = mse(img, gt)?;
    if m < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Mean SSIM with the loss module's window and constants.
pub fn ssim_metric<T: Real>(img: &Image<T>, gt: &Image<T>) -> Result<f64> {
    let cfg = LossConfig::default();
    Ok(ssim(img, gt, cfg.ssim_window, T::lit(cfg.ssim_c1), T::lit(cfg.ssim_c2), false)?.mean.as_f64())
}
