//! Training objectives. Every term returns its unweighted value together with
//! the analytic gradient; [`total_loss`] applies the weights exactly once.

mod ssim;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use ssim::{effective_window, ssim, SsimResult};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::Vec3;
pub use crate::mesh::TriMesh;
use crate::scalar::Real;
use crate::skeleton::SkinWeights;
use crate::spatial::{NearestIndex, NnStrategy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_l1: f64,
    pub lambda_ssim: f64,
    pub lambda_lpips: f64,
    pub lambda_sim: f64,
    pub lambda_arap: f64,
    pub lambda_mask: f64,
    pub lambda_cloth_lbs: f64,
    /// Geman–McClure scale in meters.
    pub gm_scale: f64,
    pub ssim_window: usize,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_l1: 0.8,
            lambda_ssim: 0.2,
            lambda_lpips: 1.0,
            lambda_sim: 1.0,
            lambda_arap: 0.5,
            lambda_mask: 1.0,
            lambda_cloth_lbs: 1000.0,
            gm_scale: 0.05,
            ssim_window: 11,
            ssim_c1: 0.01 * 0.01,
            ssim_c2: 0.03 * 0.03,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            ("lambda_l1", self.lambda_l1),
            ("lambda_ssim", self.lambda_ssim),
            ("lambda_lpips", self.lambda_lpips),
            ("lambda_sim", self.lambda_sim),
            ("lambda_arap", self.lambda_arap),
            ("lambda_mask", self.lambda_mask),
            ("lambda_cloth_lbs", self.lambda_cloth_lbs),
        ];
        for (name, v) in lambdas {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("losses.{name} must be a nonnegative number")));
            }
        }
        if !(self.gm_scale > 0.0) {
            return Err(Error::InvalidConfig("losses.gm_scale must be positive".into()));
        }
        if self.ssim_window % 2 == 0 {
            return Err(Error::InvalidConfig("losses.ssim_window must be odd".into()));
        }
        if !(self.ssim_c1 > 0.0 && self.ssim_c2 > 0.0) {
            return Err(Error::InvalidConfig("losses.ssim_c1 and ssim_c2 must be positive".into()));
        }
        Ok(())
    }
}

/// Robust penalty `x² / (x² + σ²)`.
pub fn geman_mcclure<T: Real>(x: T, sigma: T) -> Result<T> {
    if !(sigma > T::zero()) {
        return Err(Error::InvalidConfig("Geman–McClure scale must be positive".into()));
    }
    Ok(gm_of_squared(x * x, sigma * sigma))
}

#[inline]
fn gm_of_squared<T: Real>(d2: T, s2: T) -> T {
    d2 / (d2 + s2)
}

/// `∂ρ/∂(d²)`.
#[inline]
fn gm_of_squared_grad<T: Real>(d2: T, s2: T) -> T {
    let den = d2 + s2;
    s2 / (den * den)
}

#[derive(Clone, Debug)]
pub struct ChamferOutput<T> {
    pub value: T,
    pub grad_pred: Vec<Vec3<T>>,
    pub grad_gt: Vec<Vec3<T>>,
}

/// Robust bidirectional Chamfer:
/// `½ [mean_pred ρ(min‖v − u‖) + mean_gt ρ(min‖u − v‖)]`.
pub fn chamfer_sim_loss<T: Real>(pred: &[Vec3<T>], gt: &[Vec3<T>], cfg: &LossConfig) -> Result<ChamferOutput<T>> {
    chamfer_sim_loss_with(pred, gt, T::lit(cfg.gm_scale), NnStrategy::Auto)
}

pub fn chamfer_sim_loss_with<T: Real>(
    pred: &[Vec3<T>],
    gt: &[Vec3<T>],
    sigma: T,
    strategy: NnStrategy,
) -> Result<ChamferOutput<T>> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if !(sigma > T::zero()) {
        return Err(Error::InvalidConfig("Geman–McClure scale must be positive".into()));
    }
    let s2 = sigma * sigma;
    let half = T::lit(0.5);
    let mut grad_pred = vec![Vec3::zero(); pred.len()];
    let mut grad_gt = vec![Vec3::zero(); gt.len()];

    let gt_index = NearestIndex::new(gt, strategy);
    let w_pred = half / T::count(pred.len());
    let mut sum_pred = T::zero();
    for (i, v) in pred.iter().enumerate() {
        let (j, d2) = gt_index.nearest(v).expect("non-empty");
        sum_pred = sum_pred + gm_of_squared(d2, s2);
        let g = (*v - gt[j]).scale(T::lit(2.0) * gm_of_squared_grad(d2, s2) * w_pred);
        grad_pred[i] += g;
        grad_gt[j] -= g;
    }

    let pred_index = NearestIndex::new(pred, strategy);
    let w_gt = half / T::count(gt.len());
    let mut sum_gt = T::zero();
    for (j, u) in gt.iter().enumerate() {
        let (i, d2) = pred_index.nearest(u).expect("non-empty");
        sum_gt = sum_gt + gm_of_squared(d2, s2);
        let g = (*u - pred[i]).scale(T::lit(2.0) * gm_of_squared_grad(d2, s2) * w_gt);
        grad_gt[j] += g;
        grad_pred[i] -= g;
    }

    let mean_pred = sum_pred / T::count(pred.len());
    let mean_gt = sum_gt / T::count(gt.len());
    Ok(ChamferOutput { value: half * (mean_pred + mean_gt), grad_pred, grad_gt })
}

/// Population variance of edge lengths. Lengths are summed in sorted order,
/// which makes the value independent of the edge-list order.
pub fn arap_loss<T: Real>(vertices: &[Vec3<T>], edges: &[(usize, usize)]) -> Result<(T, Vec<Vec3<T>>)> {
    if edges.is_empty() {
        return Err(Error::EmptyEdgeSet);
    }
    let lengths: Vec<T> = edges.iter().map(|&(i, j)| (vertices[i] - vertices[j]).norm()).collect();
    let mut sorted = lengths.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let m = T::count(edges.len());
    let mean = sorted.iter().cloned().sum::<T>() / m;
    let var = sorted.iter().map(|l| (*l - mean) * (*l - mean)).sum::<T>() / m;
    let mut grad = vec![Vec3::zero(); vertices.len()];
    let two_over_m = T::lit(2.0) / m;
    for (&(i, j), &l) in edges.iter().zip(&lengths) {
        if l == T::zero() {
            continue;
        }
        let d = (vertices[i] - vertices[j]).scale(two_over_m * (l - mean) / l);
        grad[i] += d;
        grad[j] -= d;
    }
    Ok((var, grad))
}

/// Per-pixel mean squared error between a rendered matte and a binary mask.
pub fn mask_loss<T: Real>(rendered: &Image<T>, gt: &Image<T>) -> Result<(T, Image<T>)> {
    mse_with_grad(rendered, gt)
}

fn mse_with_grad<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<(T, Image<T>)> {
    a.check_same_shape(b)?;
    let n = T::count(a.data.len().max(1));
    let mut grad = Image::new(a.width, a.height, a.channels);
    let mut sum = T::zero();
    for ((g, x), y) in grad.data.iter_mut().zip(&a.data).zip(&b.data) {
        let d = *x - *y;
        sum = sum + d * d;
        *g = T::lit(2.0) * d / n;
    }
    Ok((sum / n, grad))
}

/// Mean squared difference over all `N·J` skinning-weight entries.
pub fn cloth_lbs_loss<T: Real>(pred: &[T], gt: &[T]) -> Result<(T, Vec<T>)> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch { what: "skin weights", expected: gt.len(), got: pred.len() });
    }
    let n = T::count(pred.len().max(1));
    let mut sum = T::zero();
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let d = *p - *g;
            sum = sum + d * d;
            T::lit(2.0) * d / n
        })
        .collect();
    Ok((sum / n, grad))
}

pub fn cloth_lbs_loss_weights<T: Real>(pred: &SkinWeights<T>, gt: &SkinWeights<T>) -> Result<(T, Vec<T>)> {
    if pred.rows() != gt.rows() || pred.joints() != gt.joints() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{} skin weights",
            pred.rows(),
            pred.joints(),
            gt.rows(),
            gt.joints()
        )));
    }
    cloth_lbs_loss(pred.as_slice(), gt.as_slice())
}

/// Mean absolute difference over pixels and channels.
pub fn l1_loss<T: Real>(img: &Image<T>, gt: &Image<T>) -> Result<(T, Image<T>)> {
    img.check_same_shape(gt)?;
    let n = T::count(img.data.len().max(1));
    let mut grad = Image::new(img.width, img.height, img.channels);
    let mut sum = T::zero();
    for ((g, x), y) in grad.data.iter_mut().zip(&img.data).zip(&gt.data) {
        let d = *x - *y;
        sum = sum + d.abs();
        *g = if d > T::zero() {
            T::one() / n
        } else if d < T::zero() {
            -T::one() / n
        } else {
            T::zero()
        };
    }
    Ok((sum / n, grad))
}

/// `1 − mean SSIM` and its gradient.
pub fn ssim_loss<T: Real>(img: &Image<T>, gt: &Image<T>, cfg: &LossConfig) -> Result<(T, Image<T>)> {
    let r = ssim(img, gt, cfg.ssim_window, T::lit(cfg.ssim_c1), T::lit(cfg.ssim_c2), true)?;
    let mut g = r.grad.expect("gradient requested");
    g.data.iter_mut().for_each(|v| *v = -*v);
    Ok((T::one() - r.mean, g))
}

/// Plug-in seam for a perceptual metric such as LPIPS: returns the loss and
/// its gradient with respect to the rendered image.
pub trait PerceptualLoss<T>: Send + Sync {
    fn name(&self) -> &str;
    fn evaluate(&self, img: &Image<T>, gt: &Image<T>) -> Result<(T, Image<T>)>;
}

pub type PerceptualPlugin<T> = Option<Arc<dyn PerceptualLoss<T>>>;

/// Unweighted values of every loss term.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts<T> {
    pub l1: T,
    pub ssim: T,
    pub lpips: T,
    pub sim: T,
    pub arap: T,
    pub mask: T,
    pub cloth_lbs: T,
}

/// Weight applied to each term, in [`LossParts`] field order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights<T> {
    pub l1: T,
    pub ssim: T,
    pub lpips: T,
    pub sim: T,
    pub arap: T,
    pub mask: T,
    pub cloth_lbs: T,
}

impl<T: Real> LossWeights<T> {
    pub fn from_config(cfg: &LossConfig) -> Self {
        Self {
            l1: T::lit(cfg.lambda_l1),
            ssim: T::lit(cfg.lambda_ssim),
            lpips: T::lit(cfg.lambda_lpips),
            sim: T::lit(cfg.lambda_sim),
            arap: T::lit(cfg.lambda_arap),
            mask: T::lit(cfg.lambda_mask),
            cloth_lbs: T::lit(cfg.lambda_cloth_lbs),
        }
    }
}

/// `(λ_L1·L1 + λ_SSIM·SSIM + λ_LPIPS·LPIPS) + λ_clbs·L_clbs + λ_sim·L_sim + λ_ARAP·L_ARAP + λ_mask·L_mask`.
pub fn total_loss<T: Real>(parts: &LossParts<T>, cfg: &LossConfig) -> T {
    weighted_total(parts, &LossWeights::from_config(cfg))
}

pub fn weighted_total<T: Real>(p: &LossParts<T>, w: &LossWeights<T>) -> T {
    let rec = w.l1 * p.l1 + w.ssim * p.ssim + w.lpips * p.lpips;
    rec + w.cloth_lbs * p.cloth_lbs + w.sim * p.sim + w.arap * p.arap + w.mask * p.mask
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3<f64> {
        Vec3::new(x, y, z)
    }

    #[test]
    fn geman_mcclure_values() {
        assert_eq!(geman_mcclure(0.0, 0.3).unwrap(), 0.0);
        assert!((geman_mcclure(0.3f64, 0.3).unwrap() - 0.5).abs() < 1e-15);
        assert!((geman_mcclure(0.3e6f64, 0.3).unwrap() - 1.0).abs() < 1e-9);
        assert!(matches!(geman_mcclure(1.0, 0.0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn chamfer_examples() {
        let pts = [v(0.1, 0.2, 0.3), v(1.0, 0.0, -1.0)];
        assert_eq!(chamfer_sim_loss_with(&pts, &pts, 1.0, NnStrategy::BruteForce).unwrap().value, 0.0);
        let r = chamfer_sim_loss_with(&[v(0.0, 0.0, 0.0)], &[v(1.0, 0.0, 0.0)], 1.0, NnStrategy::BruteForce).unwrap();
        assert!((r.value - 0.5).abs() < 1e-15);
        let r = chamfer_sim_loss_with(&[v(0.0, 0.0, 0.0), v(2.0, 0.0, 0.0)], &[v(0.0, 0.0, 0.0)], 1.0, NnStrategy::BruteForce)
            .unwrap();
        assert!((r.value - 0.2).abs() < 1e-15);
        assert!(matches!(chamfer_sim_loss_with::<f64>(&[], &pts, 1.0, NnStrategy::Auto), Err(Error::EmptyPointSet)));
    }

    #[test]
    fn arap_examples() {
        let sq = [v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(1.0, 1.0, 0.0), v(0.0, 1.0, 0.0)];
        assert_eq!(arap_loss(&sq, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap().0, 0.0);
        let line = [v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(2.0, 0.0, 0.0), v(4.0, 0.0, 0.0)];
        let (var, _) = arap_loss(&line, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        assert!((var - 2.0 / 9.0).abs() < 1e-15);
        assert!(matches!(arap_loss(&line, &[]), Err(Error::EmptyEdgeSet)));
    }

    #[test]
    fn mask_examples() {
        let ones = Image::filled(4, 2, 1, 1.0);
        let zeros = Image::filled(4, 2, 1, 0.0f64);
        assert_eq!(mask_loss(&ones, &ones).unwrap().0, 0.0);
        assert_eq!(mask_loss(&ones, &zeros).unwrap().0, 1.0);
        let half = Image::from_fn(4, 2, 1, |x, _, _| if x < 2 { 0.5 } else { 0.0 });
        assert!((mask_loss(&half, &zeros).unwrap().0 - 0.125).abs() < 1e-15);
        assert!(mask_loss(&ones, &Image::filled(2, 2, 1, 1.0)).is_err());
    }

    #[test]
    fn cloth_lbs_examples() {
        let gt = SkinWeights::new(2, 2, vec![0.5, 0.5, 0.2, 0.8]).unwrap();
        assert_eq!(cloth_lbs_loss_weights(&gt, &gt).unwrap().0, 0.0);
        let pred = SkinWeights::new(2, 2, vec![0.6, 0.4, 0.2, 0.8]).unwrap();
        // two entries differ by 0.1 on a simplex row; the one-entry oracle is on raw slices
        let (l, _): (f64, _) = cloth_lbs_loss(&[0.6, 0.5, 0.2, 0.8], gt.as_slice()).unwrap();
        assert!((l - 0.0025).abs() < 1e-15);
        let (l, _): (f64, _) = cloth_lbs_loss_weights(&pred, &gt).unwrap();
        assert!((l - 0.005).abs() < 1e-15);
        let off = [0.3f64; 4];
        let (l, _) = cloth_lbs_loss(&off, &[0.1; 4]).unwrap();
        assert!((l - 0.04).abs() < 1e-15);
    }

    #[test]
    fn image_loss_examples() {
        let a = Image::filled(16, 16, 3, 0.25);
        let b = Image::filled(16, 16, 3, 0.75);
        let cfg = LossConfig::default();
        assert_eq!(l1_loss(&a, &a).unwrap().0, 0.0);
        assert_eq!(ssim_loss(&a, &a, &cfg).unwrap().0, 0.0);
        assert_eq!(l1_loss(&Image::filled(3, 3, 3, 0.0), &Image::filled(3, 3, 3, 1.0)).unwrap().0, 1.0);
        let c1 = cfg.ssim_c1;
        let expected = (2.0 * 0.25 * 0.75 + c1) / (0.25f64.powi(2) + 0.75f64.powi(2) + c1);
        let (l, _) = ssim_loss(&a, &b, &cfg).unwrap();
        assert!((1.0 - l - expected).abs() < 1e-12);
    }

    #[test]
    fn total_loss_examples() {
        let cfg = LossConfig::default();
        assert_eq!(total_loss(&LossParts::<f64>::default(), &cfg), 0.0);
        let p = LossParts { l1: 0.5f64, ..Default::default() };
        assert!((total_loss(&p, &cfg) - 0.4).abs() < 1e-15);
        let p = LossParts { l1: 0.1f64, ssim: 0.2, lpips: 0.0, sim: 0.3, arap: 0.2, mask: 0.1, cloth_lbs: 1e-4 };
        assert!((total_loss(&p, &cfg) - 0.72).abs() < 1e-9);
    }
}
