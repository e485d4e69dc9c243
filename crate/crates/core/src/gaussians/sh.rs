//! Real spherical harmonics up to degree 3 with the splatting `+0.5` DC offset.

use crate::math::Vec3;
use crate::scalar::Real;

pub const SH_COEFFS: usize = 16;

/// 16 coefficients × RGB; index `l² + l + m`.
pub type ShCoeffs<T> = [[T; 3]; SH_COEFFS];

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub fn zero_coeffs<T: Real>() -> ShCoeffs<T> {
    [[T::zero(); 3]; SH_COEFFS]
}

/// Basis values `Y_k(d)` for a unit direction.
pub fn sh_basis<T: Real>(d: &Vec3<T>) -> [T; SH_COEFFS] {
    let (x, y, z) = (d.x(), d.y(), d.z());
    let c = T::lit;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        c(SH_C0),
        -c(SH_C1) * y,
        c(SH_C1) * z,
        -c(SH_C1) * x,
        c(SH_C2[0]) * x * y,
        c(SH_C2[1]) * y * z,
        c(SH_C2[2]) * (c(2.0) * zz - xx - yy),
        c(SH_C2[3]) * x * z,
        c(SH_C2[4]) * (xx - yy),
        c(SH_C3[0]) * y * (c(3.0) * xx - yy),
        c(SH_C3[1]) * x * y * z,
        c(SH_C3[2]) * y * (c(4.0) * zz - xx - yy),
        c(SH_C3[3]) * z * (c(2.0) * zz - c(3.0) * xx - c(3.0) * yy),
        c(SH_C3[4]) * x * (c(4.0) * zz - xx - yy),
        c(SH_C3[5]) * z * (xx - yy),
        c(SH_C3[6]) * x * (xx - c(3.0) * yy),
    ]
}

/// `∂Y_k/∂(x, y, z)` treating the components as independent.
fn sh_basis_gradient<T: Real>(d: &Vec3<T>) -> [[T; 3]; SH_COEFFS] {
    let (x, y, z) = (d.x(), d.y(), d.z());
    let c = T::lit;
    let o = T::zero();
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let s = |k: f64, g: [T; 3]| g.map(|v| c(k) * v);
    [
        [o, o, o],
        [o, -c(SH_C1), o],
        [o, o, c(SH_C1)],
        [-c(SH_C1), o, o],
        s(SH_C2[0], [y, x, o]),
        s(SH_C2[1], [o, z, y]),
        s(SH_C2[2], [-c(2.0) * x, -c(2.0) * y, c(4.0) * z]),
        s(SH_C2[3], [z, o, x]),
        s(SH_C2[4], [c(2.0) * x, -c(2.0) * y, o]),
        s(SH_C3[0], [c(6.0) * x * y, c(3.0) * xx - c(3.0) * yy, o]),
        s(SH_C3[1], [y * z, x * z, x * y]),
        s(SH_C3[2], [-c(2.0) * x * y, c(4.0) * zz - xx - c(3.0) * yy, c(8.0) * y * z]),
        s(SH_C3[3], [-c(6.0) * x * z, -c(6.0) * y * z, c(6.0) * zz - c(3.0) * xx - c(3.0) * yy]),
        s(SH_C3[4], [c(4.0) * zz - c(3.0) * xx - yy, -c(2.0) * x * y, c(8.0) * x * z]),
        s(SH_C3[5], [c(2.0) * x * z, -c(2.0) * y * z, xx - yy]),
        s(SH_C3[6], [c(3.0) * xx - c(3.0) * yy, -c(6.0) * x * y, o]),
    ]
}

fn raw_rgb<T: Real>(coeffs: &ShCoeffs<T>, basis: &[T; SH_COEFFS]) -> [T; 3] {
    let mut rgb = [T::lit(0.5); 3];
    for (k, y) in basis.iter().enumerate() {
        for ch in 0..3 {
            rgb[ch] = rgb[ch] + coeffs[k][ch] * *y;
        }
    }
    rgb
}

/// View-dependent colour: `clamp(Σ c_k Y_k(d) + 0.5, 0, 1)` per channel.
pub fn eval_sh<T: Real>(coeffs: &ShCoeffs<T>, view_dir: &Vec3<T>) -> [T; 3] {
    raw_rgb(coeffs, &sh_basis(view_dir)).map(|v| v.clamp_to(T::zero(), T::one()))
}

/// DC coefficient producing colour `c` under [`eval_sh`].
pub fn rgb_to_dc<T: Real>(c: T) -> T {
    (c - T::lit(0.5)) / T::lit(SH_C0)
}

pub struct ShGrad<T> {
    pub coeffs: ShCoeffs<T>,
    /// Gradient with respect to the unnormalized direction passed to
    /// [`eval_sh_dir_backward`]; zero from [`eval_sh_backward`].
    pub dir: Vec3<T>,
}

/// Backward of [`eval_sh`] for a unit direction; `dir` receives the gradient
/// with respect to the unit-vector components.
pub fn eval_sh_backward<T: Real>(coeffs: &ShCoeffs<T>, view_dir: &Vec3<T>, d_rgb: &[T; 3]) -> ShGrad<T> {
    let basis = sh_basis(view_dir);
    let raw = raw_rgb(coeffs, &basis);
    let mut d_raw = [T::zero(); 3];
    for ch in 0..3 {
        if raw[ch] > T::zero() && raw[ch] < T::one() {
            d_raw[ch] = d_rgb[ch];
        }
    }
    let mut g = zero_coeffs();
    for k in 0..SH_COEFFS {
        for ch in 0..3 {
            g[k][ch] = d_raw[ch] * basis[k];
        }
    }
    let grad_basis = sh_basis_gradient(view_dir);
    let mut d_dir = Vec3::zero();
    for k in 0..SH_COEFFS {
        let dy = coeffs[k][0] * d_raw[0] + coeffs[k][1] * d_raw[1] + coeffs[k][2] * d_raw[2];
        for a in 0..3 {
            d_dir[a] = d_dir[a] + dy * grad_basis[k][a];
        }
    }
    ShGrad { coeffs: g, dir: d_dir }
}

/// Colour seen along `normalize(v)`, with the backward also chaining through
/// the normalization of `v`.
pub fn eval_sh_dir<T: Real>(coeffs: &ShCoeffs<T>, v: &Vec3<T>) -> [T; 3] {
    eval_sh(coeffs, &v.normalized().unwrap_or(Vec3::new(T::zero(), T::zero(), T::one())))
}

pub fn eval_sh_dir_backward<T: Real>(coeffs: &ShCoeffs<T>, v: &Vec3<T>, d_rgb: &[T; 3]) -> ShGrad<T> {
    let n = v.norm();
    let Some(d) = v.normalized() else {
        let mut g = eval_sh_backward(coeffs, &Vec3::new(T::zero(), T::zero(), T::one()), d_rgb);
        g.dir = Vec3::zero();
        return g;
    };
    let mut g = eval_sh_backward(coeffs, &d, d_rgb);
    // d(v/|v|)/dv = (I - d dᵀ)/|v|
    let along = g.dir.dot(&d);
    g.dir = (g.dir - d.scale(along)).scale(T::one() / n);
    g
}
