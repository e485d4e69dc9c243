//! MLP heads that turn triplane features into appearance, geometry
//! corrections and skinning deformation, plus the 6D rotation map.
//!
//! Head output layouts:
//! - appearance (49): 48 SH coefficients (coefficient-major, RGB inner), then the opacity logit
//! - geometry (12): `Δμ[0..3]`, `Δr6[3..9]`, `Δs[9..12]`
//! - deformation (`J + 27(J−1)`): `J` skinning logits, then `Δp` row-major `9(J−1) × 3`

mod mlp;

use rand::Rng;

pub use mlp::{Dense, Mlp, MlpCache, MlpShape};

use crate::error::{Error, Result};
use crate::gaussians::{zero_coeffs, GaussianPrimitive, ShCoeffs, SH_COEFFS};
use crate::math::{Mat3, Vec3};
use crate::scalar::Real;
use crate::skeleton::pose_feature_len;

pub const APPEARANCE_DIM: usize = 3 * SH_COEFFS + 1;
pub const GEOMETRY_DIM: usize = 12;
pub const IDENTITY_R6: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
const DEGENERATE_TOL: f64 = 1e-9;

pub fn deformation_dim(joints: usize) -> usize {
    joints + 3 * pose_feature_len(joints)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Appearance<T> {
    pub sh: ShCoeffs<T>,
    pub opacity_logit: T,
    pub opacity: T,
}

pub fn decode_appearance<T: Real>(raw: &[T]) -> Appearance<T> {
    assert_eq!(raw.len(), APPEARANCE_DIM);
    let mut sh = zero_coeffs();
    for (k, c) in sh.iter_mut().enumerate() {
        c.copy_from_slice(&raw[k * 3..k * 3 + 3]);
    }
    let opacity_logit = raw[3 * SH_COEFFS];
    Appearance { sh, opacity_logit, opacity: opacity_logit.sigmoid() }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometryCorrection<T> {
    pub d_mu: Vec3<T>,
    pub d_r6: [T; 6],
    pub d_s: Vec3<T>,
}

impl<T: Real> GeometryCorrection<T> {
    pub fn identity() -> Self {
        Self { d_mu: Vec3::zero(), d_r6: IDENTITY_R6.map(T::lit), d_s: Vec3::zero() }
    }

    pub fn from_raw(raw: &[T]) -> Self {
        assert_eq!(raw.len(), GEOMETRY_DIM);
        let mut d_r6 = [T::zero(); 6];
        d_r6.copy_from_slice(&raw[3..9]);
        Self { d_mu: Vec3::new(raw[0], raw[1], raw[2]), d_r6, d_s: Vec3::new(raw[9], raw[10], raw[11]) }
    }
}

/// Deformed canonical geometry: `μ + Δμ`, `R·R(Δr6)`, `exp(log s) ⊙ exp(Δs)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeformedGeometry<T> {
    pub center: Vec3<T>,
    pub rotation: Mat3<T>,
    pub scales: Vec3<T>,
}

pub fn apply_geometry<T: Real>(canon: &GaussianPrimitive<T>, corr: &GeometryCorrection<T>) -> Result<DeformedGeometry<T>> {
    let r = rot6d_to_matrix(&corr.d_r6)?;
    Ok(DeformedGeometry {
        center: canon.center + corr.d_mu,
        rotation: canon.rotation_matrix().mul_mat(&r),
        scales: (canon.log_scale + corr.d_s).map(|v| v.exp()),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeformationOutput<T> {
    pub weights: Vec<T>,
    /// Row-major `9(J−1) × 3`.
    pub offsets: Vec<T>,
}

pub fn decode_deformation<T: Real>(raw: &[T], joints: usize) -> DeformationOutput<T> {
    assert_eq!(raw.len(), deformation_dim(joints));
    DeformationOutput { weights: softmax(&raw[..joints]), offsets: raw[joints..].to_vec() }
}

/// Numerically stable softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().cloned().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: T = exps.iter().cloned().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax_backward<T: Real>(weights: &[T], d_weights: &[T]) -> Vec<T> {
    let dot: T = weights.iter().zip(d_weights).map(|(w, d)| *w * *d).sum();
    weights.iter().zip(d_weights).map(|(w, d)| *w * (*d - dot)).collect()
}

struct Rot6dParts<T> {
    c1: Vec3<T>,
    c2: Vec3<T>,
    a_norm: T,
    b_perp_norm: T,
}

fn rot6d_parts<T: Real>(r6: &[T; 6]) -> Result<Rot6dParts<T>> {
    let a = Vec3::new(r6[0], r6[1], r6[2]);
    let b = Vec3::new(r6[3], r6[4], r6[5]);
    let a_norm = a.norm();
    if !(a_norm > T::lit(DEGENERATE_TOL)) {
        return Err(Error::DegenerateRotation);
    }
    let c1 = a.scale(T::one() / a_norm);
    let b_perp = b - c1.scale(b.dot(&c1));
    let b_perp_norm = b_perp.norm();
    if !(b_perp_norm > T::lit(DEGENERATE_TOL)) {
        return Err(Error::DegenerateRotation);
    }
    Ok(Rot6dParts { c1, c2: b_perp.scale(T::one() / b_perp_norm), a_norm, b_perp_norm })
}

/// Gram–Schmidt of two 3-vectors into the columns of a rotation.
pub fn rot6d_to_matrix<T: Real>(r6: &[T; 6]) -> Result<Mat3<T>> {
    let p = rot6d_parts(r6)?;
    Ok(Mat3::from_cols(p.c1, p.c2, p.c1.cross(&p.c2)))
}

pub fn rot6d_backward<T: Real>(r6: &[T; 6], d_r: &Mat3<T>) -> Result<[T; 6]> {
    let p = rot6d_parts(r6)?;
    let b = Vec3::new(r6[3], r6[4], r6[5]);
    let (c1, c2) = (p.c1, p.c2);
    let dc3 = d_r.col(2);
    let mut dc1 = d_r.col(0) + c2.cross(&dc3);
    let dc2 = d_r.col(1) + dc3.cross(&c1);
    let db_perp = (dc2 - c2.scale(c2.dot(&dc2))).scale(T::one() / p.b_perp_norm);
    let bc1 = b.dot(&c1);
    let db = db_perp - c1.scale(c1.dot(&db_perp));
    dc1 = dc1 - db_perp.scale(bc1) - b.scale(c1.dot(&db_perp));
    let da = (dc1 - c1.scale(c1.dot(&dc1))).scale(T::one() / p.a_norm);
    Ok([da[0], da[1], da[2], db[0], db[1], db[2]])
}

/// Architecture shared by the three heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderShape<'a> {
    pub feature_len: usize,
    pub hidden: &'a [usize],
    pub joints: usize,
}

/// The appearance, geometry and deformation heads.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoders<T> {
    pub appearance: Mlp<T>,
    pub geometry: Mlp<T>,
    pub deformation: Mlp<T>,
    pub joints: usize,
}

impl<T: Real> Decoders<T> {
    /// Random hidden layers, zero output layers; the geometry bias starts at
    /// the identity correction so step 0 reproduces the canonical avatar.
    pub fn init<R: Rng>(shape: DecoderShape<'_>, rng: &mut R) -> Self {
        let mk = |out: usize, rng: &mut R| Mlp::init(MlpShape { input: shape.feature_len, hidden: shape.hidden, output: out }, rng);
        let appearance = mk(APPEARANCE_DIM, rng);
        let mut geometry = mk(GEOMETRY_DIM, rng);
        let deformation = mk(deformation_dim(shape.joints), rng);
        let last = geometry.layers.last_mut().unwrap();
        for (i, v) in IDENTITY_R6.iter().enumerate() {
            last.bias[3 + i] = T::lit(*v);
        }
        Self { appearance, geometry, deformation, joints: shape.joints }
    }

    pub fn heads(&self) -> [(&'static str, &Mlp<T>); 3] {
        [("D_A", &self.appearance), ("D_G", &self.geometry), ("D_D", &self.deformation)]
    }

    pub fn param_count(&self) -> usize {
        self.appearance.param_count() + self.geometry.param_count() + self.deformation.param_count()
    }

    /// Parameter offsets of the three heads inside the flat layout.
    pub fn offsets(&self) -> [usize; 3] {
        let a = self.appearance.param_count();
        [0, a, a + self.geometry.param_count()]
    }

    pub fn flatten_into(&self, out: &mut Vec<T>) {
        self.appearance.flatten_into(out);
        self.geometry.flatten_into(out);
        self.deformation.flatten_into(out);
    }

    pub fn load_flat(&mut self, flat: &[T]) {
        let [_, g, d] = self.offsets();
        self.appearance.load_flat(&flat[..g]);
        self.geometry.load_flat(&flat[g..d]);
        self.deformation.load_flat(&flat[d..]);
    }
}
