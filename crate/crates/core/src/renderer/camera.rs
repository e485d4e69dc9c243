use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Quat, Rigid, Vec3};
use crate::scalar::Real;
use crate::skeleton::matrix_to_quat;

/// Pinhole camera; camera space is x right, y down, z forward.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub world_to_camera: Rigid<T>,
    pub width: usize,
    pub height: usize,
    pub near: T,
}

/// On-disk camera description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// `[w, x, y, z]`.
    pub w2c_rotation_quat: [f64; 4],
    pub w2c_translation: [f64; 3],
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

impl<T: Real> Camera<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(fx: T, fy: T, cx: T, cy: T, world_to_camera: Rigid<T>, width: usize, height: usize, near: T) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy, world_to_camera, width, height, near };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::InvalidConfig("camera focal lengths must be positive".into()));
        }
        if !(self.near > T::zero()) {
            return Err(Error::InvalidConfig("camera near plane must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("camera image size must be nonzero".into()));
        }
        let in_range = |c: T, n: usize| c >= T::zero() && c < T::count(n);
        if !in_range(self.cx, self.width) || !in_range(self.cy, self.height) {
            return Err(Error::InvalidConfig("camera principal point lies outside the image".into()));
        }
        Ok(())
    }

    /// Camera looking from `eye` at `target`, with `up` pointing up in the image.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>, fx: T, fy: T, width: usize, height: usize, near: T) -> Result<Self> {
        let z = (target - eye).normalized().ok_or_else(|| Error::InvalidConfig("camera eye equals target".into()))?;
        let x = (-up).cross(&z).normalized().ok_or_else(|| Error::InvalidConfig("camera up is parallel to view".into()))?;
        let y = z.cross(&x);
        let r = Mat3([x.0, y.0, z.0]);
        let t = -r.mul_vec(&eye);
        let half = T::lit(0.5);
        Self::new(fx, fy, T::count(width) * half, T::count(height) * half, Rigid::new(r, t), width, height, near)
    }

    pub fn rotation(&self) -> &Mat3<T> {
        &self.world_to_camera.rotation
    }

    /// Camera centre in world space.
    pub fn center(&self) -> Vec3<T> {
        -self.rotation().transpose().mul_vec(&self.world_to_camera.translation)
    }

    pub fn to_record(&self) -> CameraRecord {
        let q = matrix_to_quat(self.rotation());
        let t = self.world_to_camera.translation;
        CameraRecord {
            fx: self.fx.as_f64(),
            fy: self.fy.as_f64(),
            cx: self.cx.as_f64(),
            cy: self.cy.as_f64(),
            w2c_rotation_quat: q.0.map(|v| v.as_f64()),
            w2c_translation: t.0.map(|v| v.as_f64()),
            width: self.width,
            height: self.height,
            near: self.near.as_f64(),
        }
    }

    pub fn from_record(r: &CameraRecord) -> Result<Self> {
        let q = Quat(r.w2c_rotation_quat.map(T::lit));
        if !q.is_finite() || q.norm() == T::zero() {
            return Err(Error::InvalidConfig("camera rotation quaternion is degenerate".into()));
        }
        let rot = q.normalized().to_matrix();
        let t = Vec3(r.w2c_translation.map(T::lit));
        Self::new(T::lit(r.fx), T::lit(r.fy), T::lit(r.cx), T::lit(r.cy), Rigid::new(rot, t), r.width, r.height, T::lit(r.near))
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        let c = |v: T| U::lit(v.as_f64());
        Camera {
            fx: c(self.fx),
            fy: c(self.fy),
            cx: c(self.cx),
            cy: c(self.cy),
            world_to_camera: Rigid::new(
                Mat3(self.rotation().0.map(|row| row.map(c))),
                self.world_to_camera.translation.cast(),
            ),
            width: self.width,
            height: self.height,
            near: c(self.near),
        }
    }
}

pub fn save_cameras<T: Real>(cameras: &[Camera<T>], path: &Path) -> Result<()> {
    let records: Vec<CameraRecord> = cameras.iter().map(Camera::to_record).collect();
    let json = serde_json::to_string_pretty(&records)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Reads either a single camera object or an array of them.
pub fn load_cameras<T: Real>(path: &Path) -> Result<Vec<Camera<T>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let records: Vec<CameraRecord> = if value.is_array() {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?]
    };
    records.iter().map(Camera::from_record).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_points_forward() {
        let cam = Camera::<f64>::look_at(Vec3::new(0.0, 0.0, -5.0), Vec3::zero(), Vec3::new(0.0, 1.0, 0.0), 100.0, 100.0, 64, 48, 0.1)
            .unwrap();
        let p = cam.world_to_camera.apply(&Vec3::zero());
        assert!((p.z() - 5.0).abs() < 1e-12 && p.x().abs() < 1e-12 && p.y().abs() < 1e-12);
        // world up maps to image up (negative camera y)
        assert!(cam.world_to_camera.apply(&Vec3::new(0.0, 1.0, 0.0)).y() < 0.0);
        let c = cam.center();
        assert!((c - Vec3::new(0.0, 0.0, -5.0)).norm() < 1e-12);
    }

    #[test]
    fn record_roundtrip() {
        let cam = Camera::<f64>::look_at(Vec3::new(1.0, 2.0, -3.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 1.0, 0.0), 90.0, 80.0, 32, 32, 0.05)
            .unwrap();
        let back = Camera::<f64>::from_record(&cam.to_record()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((back.rotation().0[i][j] - cam.rotation().0[i][j]).abs() < 1e-12);
            }
        }
        assert_eq!(back.world_to_camera.translation, cam.world_to_camera.translation);
    }

    #[test]
    fn invalid_cameras_rejected() {
        let id = Rigid::<f64>::identity();
        assert!(Camera::new(0.0, 1.0, 1.0, 1.0, id, 4, 4, 0.1).is_err());
        assert!(Camera::new(1.0, 1.0, 4.0, 1.0, id, 4, 4, 0.1).is_err());
        assert!(Camera::new(1.0, 1.0, 1.0, 1.0, id, 4, 4, 0.0).is_err());
    }
}
