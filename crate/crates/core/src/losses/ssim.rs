//! Box-window SSIM over fully interior windows, with its analytic gradient.

use crate::error::Result;
use crate::image::Image;
use crate::scalar::Real;

/// Largest odd window not exceeding the image.
pub fn effective_window(requested: usize, width: usize, height: usize) -> usize {
    let m = requested.min(width).min(height).max(1);
    if m % 2 == 0 {
        m - 1
    } else {
        m
    }
}

/// Valid-mode box sum of a `w × h` plane: output `(w - win + 1) × (h - win + 1)`.
fn box_valid<T: Real>(src: &[T], w: usize, h: usize, win: usize) -> Vec<T> {
    let ow = w - win + 1;
    let oh = h - win + 1;
    let mut horiz = vec![T::zero(); ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x0 in 0..ow {
            horiz[y * ow + x0] = row[x0..x0 + win].iter().cloned().sum();
        }
    }
    let mut out = vec![T::zero(); ow * oh];
    for y0 in 0..oh {
        for x0 in 0..ow {
            let mut s = T::zero();
            for k in 0..win {
                s = s + horiz[(y0 + k) * ow + x0];
            }
            out[y0 * ow + x0] = s;
        }
    }
    out
}

/// Adjoint of [`box_valid`]: scatter window values back onto the pixels they cover.
fn box_valid_adjoint<T: Real>(win_vals: &[T], w: usize, h: usize, win: usize) -> Vec<T> {
    let ow = w - win + 1;
    let oh = h - win + 1;
    let mut vert = vec![T::zero(); ow * h];
    for y in 0..h {
        let lo = (y + 1).saturating_sub(win);
        let hi = y.min(oh - 1);
        for x0 in 0..ow {
            let mut s = T::zero();
            for y0 in lo..=hi {
                s = s + win_vals[y0 * ow + x0];
            }
            vert[y * ow + x0] = s;
        }
    }
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = (x + 1).saturating_sub(win);
            let hi = x.min(ow - 1);
            let mut s = T::zero();
            for x0 in lo..=hi {
                s = s + vert[y * ow + x0];
            }
            out[y * w + x] = s;
        }
    }
    out
}

pub struct SsimResult<T> {
    /// Mean SSIM over windows and channels.
    pub mean: T,
    /// `∂ mean / ∂ img`; present when requested.
    pub grad: Option<Image<T>>,
}

pub fn ssim<T: Real>(img: &Image<T>, gt: &Image<T>, window: usize, c1: T, c2: T, with_grad: bool) -> Result<SsimResult<T>> {
    img.check_same_shape(gt)?;
    let (w, h, ch) = (img.width, img.height, img.channels);
    let win = effective_window(window, w, h);
    let n = T::count(win * win);
    let ow = w - win + 1;
    let oh = h - win + 1;
    let windows = T::count(ow * oh * ch);
    let two = T::lit(2.0);
    let mut total = T::zero();
    let mut grad = with_grad.then(|| Image::new(w, h, ch));
    for c in 0..ch {
        let x: Vec<T> = (0..w * h).map(|i| img.data[i * ch + c]).collect();
        let y: Vec<T> = (0..w * h).map(|i| gt.data[i * ch + c]).collect();
        let sx = box_valid(&x, w, h, win);
        let sy = box_valid(&y, w, h, win);
        let sxx = box_valid(&x.iter().map(|v| *v * *v).collect::<Vec<_>>(), w, h, win);
        let syy = box_valid(&y.iter().map(|v| *v * *v).collect::<Vec<_>>(), w, h, win);
        let sxy = box_valid(&x.iter().zip(&y).map(|(a, b)| *a * *b).collect::<Vec<_>>(), w, h, win);
        let nw = ow * oh;
        let (mut alpha, mut beta, mut gamma) = if with_grad {
            (vec![T::zero(); nw], vec![T::zero(); nw], vec![T::zero(); nw])
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        for k in 0..nw {
            let mx = sx[k] / n;
            let my = sy[k] / n;
            let vx = sxx[k] / n - mx * mx;
            let vy = syy[k] / n - my * my;
            let cxy = sxy[k] / n - mx * my;
            let a1 = two * mx * my + c1;
            let a2 = two * cxy + c2;
            let b1 = mx * mx + my * my + c1;
            let b2 = vx + vy + c2;
            let s = (a1 * a2) / (b1 * b2);
            total = total + s;
            if with_grad {
                let d_mu = two * my * a2 / (b1 * b2) - s * two * mx / b1;
                let d_var = -s / b2;
                let d_cov = two * a1 / (b1 * b2);
                alpha[k] = d_mu - two * mx * d_var - my * d_cov;
                beta[k] = two * d_var;
                gamma[k] = d_cov;
            }
        }
        if let Some(g) = grad.as_mut() {
            let sa = box_valid_adjoint(&alpha, w, h, win);
            let sb = box_valid_adjoint(&beta, w, h, win);
            let sg = box_valid_adjoint(&gamma, w, h, win);
            let scale = T::one() / (n * windows);
            for i in 0..w * h {
                g.data[i * ch + c] = scale * (sa[i] + x[i] * sb[i] + y[i] * sg[i]);
            }
        }
    }
    Ok(SsimResult { mean: total / windows, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjoint_identity() {
        // <box(a), b> == <a, box_adjoint(b)>
        let (w, h, win) = (7, 5, 3);
        let a: Vec<f64> = (0..w * h).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..(w - win + 1) * (h - win + 1)).map(|i| (i as f64 * 0.91).cos()).collect();
        let lhs: f64 = box_valid(&a, w, h, win).iter().zip(&b).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.iter().zip(box_valid_adjoint(&b, w, h, win)).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn window_is_clamped_to_odd_image_size() {
        assert_eq!(effective_window(11, 16, 16), 11);
        assert_eq!(effective_window(11, 8, 20), 7);
        assert_eq!(effective_window(11, 4, 4), 3);
    }
}
