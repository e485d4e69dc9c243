//! Small fixed-size linear algebra: 3-vectors, 3×3 matrices, quaternions and
//! rigid transforms. Row-major throughout.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3<T>(pub [T; 3]);

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self([x, y, z])
    }

    #[inline]
    pub fn zero() -> Self {
        Self([T::zero(); 3])
    }

    #[inline]
    pub fn splat(v: T) -> Self {
        Self([v; 3])
    }

    #[inline]
    pub fn x(&self) -> T {
        self.0[0]
    }
    #[inline]
    pub fn y(&self) -> T {
        self.0[1]
    }
    #[inline]
    pub fn z(&self) -> T {
        self.0[2]
    }

    #[inline]
    pub fn dot(&self, o: &Self) -> T {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    #[inline]
    pub fn cross(&self, o: &Self) -> Self {
        let [a0, a1, a2] = self.0;
        let [b0, b1, b2] = o.0;
        Self([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0])
    }

    #[inline]
    pub fn norm_squared(&self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    #[inline]
    pub fn scale(&self, s: T) -> Self {
        Self([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    #[inline]
    pub fn hadamard(&self, o: &Self) -> Self {
        Self([self.0[0] * o.0[0], self.0[1] * o.0[1], self.0[2] * o.0[2]])
    }

    /// Unit vector, or `None` if the norm is zero or not finite.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(self.scale(T::one() / n))
        } else {
            None
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self([f(self.0[0]), f(self.0[1]), f(self.0[2])])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Outer product `self · oᵀ`.
    pub fn outer(&self, o: &Self) -> Mat3<T> {
        let mut m = Mat3::zero();
        for r in 0..3 {
            for c in 0..3 {
                m.0[r][c] = self.0[r] * o.0[c];
            }
        }
        m
    }

    pub fn cast<U: Real>(&self) -> Vec3<U> {
        Vec3(self.0.map(|v| U::lit(v.as_f64())))
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl<T: Real> SubAssign for Vec3<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

impl<T> Index<usize> for Vec3<T> {
    type Output = T;
    #[inline]
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T> IndexMut<usize> for Vec3<T> {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i]
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Mat3<T>(pub [[T; 3]; 3]);

impl<T: Real> Mat3<T> {
    pub fn zero() -> Self {
        Self([[T::zero(); 3]; 3])
    }

    pub fn identity() -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            m.0[i][i] = T::one();
        }
        m
    }

    pub fn from_cols(c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Self {
        let mut m = Self::zero();
        for r in 0..3 {
            m.0[r] = [c0.0[r], c1.0[r], c2.0[r]];
        }
        m
    }

    pub fn diag(d: Vec3<T>) -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            m.0[i][i] = d.0[i];
        }
        m
    }

    pub fn col(&self, c: usize) -> Vec3<T> {
        Vec3([self.0[0][c], self.0[1][c], self.0[2][c]])
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zero();
        for r in 0..3 {
            for c in 0..3 {
                t.0[c][r] = self.0[r][c];
            }
        }
        t
    }

    #[inline]
    pub fn mul_vec(&self, v: &Vec3<T>) -> Vec3<T> {
        let m = &self.0;
        Vec3([
            m[0][0] * v.0[0] + m[0][1] * v.0[1] + m[0][2] * v.0[2],
            m[1][0] * v.0[0] + m[1][1] * v.0[1] + m[1][2] * v.0[2],
            m[2][0] * v.0[0] + m[2][1] * v.0[1] + m[2][2] * v.0[2],
        ])
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut out = Self::zero();
        for r in 0..3 {
            for c in 0..3 {
                out.0[r][c] =
                    self.0[r][0] * o.0[0][c] + self.0[r][1] * o.0[1][c] + self.0[r][2] * o.0[2][c];
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = *self;
        for row in out.0.iter_mut() {
            for v in row.iter_mut() {
                *v = *v * s;
            }
        }
        out
    }

    pub fn determinant(&self) -> T {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Frobenius inner product `Σ aᵢⱼ bᵢⱼ`.
    pub fn frobenius_dot(&self, o: &Self) -> T {
        let mut s = T::zero();
        for r in 0..3 {
            for c in 0..3 {
                s = s + self.0[r][c] * o.0[r][c];
            }
        }
        s
    }

    pub fn flatten(&self) -> [T; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    /// Rodrigues' formula for an axis-angle vector.
    pub fn from_axis_angle(aa: &Vec3<T>) -> Self {
        let theta = aa.norm();
        if theta == T::zero() {
            return Self::identity();
        }
        let k = aa.scale(T::one() / theta);
        let (s, c) = theta.sin_cos();
        let one_c = T::one() - c;
        let [x, y, z] = k.0;
        Self([
            [c + x * x * one_c, x * y * one_c - z * s, x * z * one_c + y * s],
            [y * x * one_c + z * s, c + y * y * one_c, y * z * one_c - x * s],
            [z * x * one_c - y * s, z * y * one_c + x * s, c + z * z * one_c],
        ])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

impl<T: Real> Add for Mat3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut out = self;
        for r in 0..3 {
            for c in 0..3 {
                out.0[r][c] = out.0[r][c] + o.0[r][c];
            }
        }
        out
    }
}

impl<T: Real> AddAssign for Mat3<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Mat3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut out = self;
        for r in 0..3 {
            for c in 0..3 {
                out.0[r][c] = out.0[r][c] - o.0[r][c];
            }
        }
        out
    }
}

impl<T: Real> Mul for Mat3<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        self.mul_mat(&o)
    }
}

/// Quaternion stored as `(w, x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat<T>(pub [T; 4]);

impl<T: Real> Quat<T> {
    pub fn identity() -> Self {
        Self([T::one(), T::zero(), T::zero(), T::zero()])
    }

    pub fn norm(&self) -> T {
        self.0.iter().fold(T::zero(), |s, &v| s + v * v).sqrt()
    }

    /// Unit quaternion; falls back to identity for a zero quaternion.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Self(self.0.map(|v| v / n))
        } else {
            Self::identity()
        }
    }

    /// Rotation matrix of a unit quaternion.
    pub fn to_matrix(&self) -> Mat3<T> {
        let [w, x, y, z] = self.0;
        let two = T::lit(2.0);
        let one = T::one();
        Mat3([
            [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
            [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
            [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
        ])
    }

    /// Gradient of `L(to_matrix(q / |q|))` with respect to the four stored
    /// components, given `dR = ∂L/∂R`.
    pub fn to_matrix_backward(&self, d_r: &Mat3<T>) -> [T; 4] {
        let n = self.norm();
        let q = self.normalized();
        let [w, x, y, z] = q.0;
        let g = &d_r.0;
        let two = T::lit(2.0);
        // ∂L/∂(unit q)
        let dw = two * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]);
        let dx = two
            * (y * g[0][1] + z * g[0][2] + y * g[1][0] - two * x * g[1][1] - w * g[1][2]
                + z * g[2][0]
                + w * g[2][1]
                - two * x * g[2][2]);
        let dy = two
            * (-two * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2]
                - w * g[2][0]
                + z * g[2][1]
                - two * y * g[2][2]);
        let dz = two
            * (-two * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - two * z * g[1][1]
                + y * g[1][2]
                + x * g[2][0]
                + y * g[2][1]);
        let du = [dw, dx, dy, dz];
        // project out the radial component of the normalization
        let radial = du.iter().zip(q.0.iter()).fold(T::zero(), |s, (a, b)| s + *a * *b);
        let mut out = [T::zero(); 4];
        for i in 0..4 {
            out[i] = (du[i] - radial * q.0[i]) / n;
        }
        out
    }

    /// Shortest-arc rotation taking unit `from` onto unit `to`.
    pub fn from_two_unit_vectors(from: &Vec3<T>, to: &Vec3<T>) -> Self {
        let d = from.dot(to);
        if d < T::lit(-1.0 + 1e-12) {
            // antiparallel: rotate by π about any axis orthogonal to `from`
            let trial = if from.x().abs() < T::lit(0.9) {
                Vec3::new(T::one(), T::zero(), T::zero())
            } else {
                Vec3::new(T::zero(), T::one(), T::zero())
            };
            let axis = from.cross(&trial).normalized().expect("orthogonal axis");
            return Self([T::zero(), axis.x(), axis.y(), axis.z()]);
        }
        let c = from.cross(to);
        Self([T::one() + d, c.x(), c.y(), c.z()]).normalized()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Rigid transform `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rigid<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> Rigid<T> {
    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zero() }
    }

    pub fn new(rotation: Mat3<T>, translation: Vec3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vec3<T>) -> Self {
        Self { rotation: Mat3::identity(), translation: t }
    }

    pub fn from_rotation(r: Mat3<T>) -> Self {
        Self { rotation: r, translation: Vec3::zero() }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p) + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation.mul_mat(&other.rotation),
            translation: self.rotation.mul_vec(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -rt.mul_vec(&self.translation) }
    }
}
