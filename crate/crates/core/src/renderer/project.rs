use crate::math::{Mat3, Vec3};
use crate::scalar::Real;

use super::camera::Camera;

/// Low-pass dilation added to the projected covariance diagonal (px²).
pub const DILATION: f64 = 0.3;

/// Screen-space footprint of one Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection<T> {
    pub mean2d: [T; 2],
    /// `(a, b, c)` of the symmetric matrix `[[a, b], [b, c]]`.
    pub cov2d: [T; 3],
    pub depth: T,
}

/// `2 × 3` matrix `J W` mapping camera-space perturbations to pixels.
fn jacobian<T: Real>(cam: &Camera<T>, pc: &Vec3<T>) -> [[T; 3]; 2] {
    let (x, y, z) = (pc.x(), pc.y(), pc.z());
    let iz = T::one() / z;
    let iz2 = iz * iz;
    let j = [[cam.fx * iz, T::zero(), -cam.fx * x * iz2], [T::zero(), cam.fy * iz, -cam.fy * y * iz2]];
    let w = &cam.rotation().0;
    let mut t = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            t[r][c] = j[r][0] * w[0][c] + j[r][1] * w[1][c] + j[r][2] * w[2][c];
        }
    }
    t
}

/// Perspective projection of a world-space Gaussian; `None` when culled by the near plane.
pub fn project<T: Real>(mean: &Vec3<T>, cov3d: &Mat3<T>, cam: &Camera<T>) -> Option<Projection<T>> {
    let pc = cam.world_to_camera.apply(mean);
    let z = pc.z();
    if !(z > cam.near) {
        return None;
    }
    let mean2d = [cam.fx * pc.x() / z + cam.cx, cam.fy * pc.y() / z + cam.cy];
    let t = jacobian(cam, &pc);
    let s = &cov3d.0;
    // rows of T Σ
    let mut ts = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            ts[r][c] = t[r][0] * s[0][c] + t[r][1] * s[1][c] + t[r][2] * s[2][c];
        }
    }
    let dot = |a: &[T; 3], b: &[T; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let dil = T::lit(DILATION);
    let cov2d = [dot(&ts[0], &t[0]) + dil, dot(&ts[0], &t[1]), dot(&ts[1], &t[1]) + dil];
    Some(Projection { mean2d, cov2d, depth: z })
}

/// Reverse of [`project`]: from gradients on `mean2d` and on `(a, b, c)` of
/// `cov2d` (with `b` standing for both off-diagonal entries) to the world mean
/// and a symmetric gradient on the 3D covariance entries.
pub fn project_backward<T: Real>(
    mean: &Vec3<T>,
    cov3d: &Mat3<T>,
    cam: &Camera<T>,
    d_mean2d: [T; 2],
    d_cov2d: [T; 3],
) -> (Vec3<T>, Mat3<T>) {
    let pc = cam.world_to_camera.apply(mean);
    let (x, y, z) = (pc.x(), pc.y(), pc.z());
    let (fx, fy) = (cam.fx, cam.fy);
    let iz = T::one() / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let two = T::lit(2.0);
    let half = T::lit(0.5);
    let w = &cam.rotation().0;
    let t = jacobian(cam, &pc);
    let g = [[d_cov2d[0], half * d_cov2d[1]], [half * d_cov2d[1], d_cov2d[2]]];

    // dΣ = Tᵀ G T
    let mut d_cov3d = Mat3::zero();
    for i in 0..3 {
        for j in 0..3 {
            let mut v = T::zero();
            for a in 0..2 {
                for b in 0..2 {
                    v = v + t[a][i] * g[a][b] * t[b][j];
                }
            }
            d_cov3d.0[i][j] = v;
        }
    }

    // dT = (G + Gᵀ) T Σ = 2 G T Σ, then dJ = dT Wᵀ
    let s = &cov3d.0;
    let mut ts = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            ts[r][c] = t[r][0] * s[0][c] + t[r][1] * s[1][c] + t[r][2] * s[2][c];
        }
    }
    let mut d_t = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            d_t[r][c] = two * (g[r][0] * ts[0][c] + g[r][1] * ts[1][c]);
        }
    }
    let mut d_j = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for k in 0..3 {
            d_j[r][k] = d_t[r][0] * w[k][0] + d_t[r][1] * w[k][1] + d_t[r][2] * w[k][2];
        }
    }

    let dx = d_mean2d[0] * fx * iz - d_j[0][2] * fx * iz2;
    let dy = d_mean2d[1] * fy * iz - d_j[1][2] * fy * iz2;
    let dz = -d_mean2d[0] * fx * x * iz2 - d_mean2d[1] * fy * y * iz2 - d_j[0][0] * fx * iz2
        + d_j[0][2] * two * fx * x * iz3
        - d_j[1][1] * fy * iz2
        + d_j[1][2] * two * fy * y * iz3;
    let d_mean = cam.rotation().transpose().mul_vec(&Vec3::new(dx, dy, dz));
    (d_mean, d_cov3d)
}
