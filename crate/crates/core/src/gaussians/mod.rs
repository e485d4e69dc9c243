//! Splat primitives, layers, mesh-based initialization and the `LGS1` layer file.

mod sh;

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

pub use sh::{
    eval_sh, eval_sh_backward, eval_sh_dir, eval_sh_dir_backward, rgb_to_dc, sh_basis, zero_coeffs, ShCoeffs,
    ShGrad, SH_C0, SH_COEFFS,
};

use crate::error::{Error, Result};
use crate::math::{Mat3, Quat, Vec3};
use crate::mesh::TriMesh;
use crate::scalar::{logit, Real};

/// Upper bound on `log_scale` keeping every axis below 10 m.
pub const MAX_LOG_SCALE: f64 = 2.302_585_092_994_045; // ln(10)
pub const INIT_OPACITY: f64 = 0.1;
/// Normal-axis scale as a fraction of the tangential scale.
pub const NORMAL_SCALE_RATIO: f64 = 0.1;
pub const FLOATS_PER_PRIMITIVE: usize = 3 + 4 + 3 + 1 + 3 * SH_COEFFS;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive<T> {
    pub center: Vec3<T>,
    rotation: Quat<T>,
    pub log_scale: Vec3<T>,
    pub opacity_logit: T,
    pub sh: ShCoeffs<T>,
}

impl<T: Real> GaussianPrimitive<T> {
    pub fn new(center: Vec3<T>, rotation: Quat<T>, log_scale: Vec3<T>, opacity_logit: T, sh: ShCoeffs<T>) -> Self {
        let mut g = Self { center, rotation: Quat::identity(), log_scale, opacity_logit, sh };
        g.set_rotation(rotation);
        g.clamp_log_scale();
        g
    }

    #[inline]
    pub fn rotation(&self) -> Quat<T> {
        self.rotation
    }

    /// Keeps `q` as stored when it is already unit length to within `1e-12`.
    pub(crate) fn set_rotation_exact(&mut self, q: Quat<T>) {
        if (q.norm() - T::one()).abs() < T::lit(1e-12) {
            self.rotation = q;
        } else {
            self.set_rotation(q);
        }
    }

    /// Stores the normalized quaternion.
    pub fn set_rotation(&mut self, q: Quat<T>) {
        self.rotation = q.normalized();
    }

    /// Clamp scales to stay finite and under 10 m.
    pub fn clamp_log_scale(&mut self) {
        let hi = T::lit(MAX_LOG_SCALE - 1e-9);
        self.log_scale = self.log_scale.map(|v| if v.is_nan() { hi } else { v.min(hi) });
    }

    pub fn opacity(&self) -> T {
        self.opacity_logit.sigmoid()
    }

    pub fn scales(&self) -> Vec3<T> {
        self.log_scale.map(|v| v.exp())
    }

    pub fn rotation_matrix(&self) -> Mat3<T> {
        self.rotation.to_matrix()
    }

    pub fn covariance(&self) -> Mat3<T> {
        scaled_covariance(&self.rotation_matrix(), &self.scales())
    }

    pub fn cast<U: Real>(&self) -> GaussianPrimitive<U> {
        GaussianPrimitive {
            center: self.center.cast(),
            rotation: Quat(self.rotation.0.map(|v| U::lit(v.as_f64()))),
            log_scale: self.log_scale.cast(),
            opacity_logit: U::lit(self.opacity_logit.as_f64()),
            sh: self.sh.map(|c| c.map(|v| U::lit(v.as_f64()))),
        }
    }
}

/// `(K diag(s)) (K diag(s))ᵀ` for a linear frame `K` and per-axis scales `s`.
pub fn scaled_covariance<T: Real>(frame: &Mat3<T>, scales: &Vec3<T>) -> Mat3<T> {
    let ks = frame.mul_mat(&Mat3::diag(*scales));
    ks.mul_mat(&ks.transpose())
}

/// Reverse of [`scaled_covariance`] for a full (not symmetrised) upstream
/// gradient `d_cov`: returns `(d_frame, d_scales)`.
pub fn scaled_covariance_backward<T: Real>(frame: &Mat3<T>, scales: &Vec3<T>, d_cov: &Mat3<T>) -> (Mat3<T>, Vec3<T>) {
    let ks = frame.mul_mat(&Mat3::diag(*scales));
    let d_ks = (*d_cov + d_cov.transpose()).mul_mat(&ks);
    let mut d_frame = Mat3::zero();
    let mut d_scales = Vec3::zero();
    for i in 0..3 {
        for j in 0..3 {
            d_frame.0[i][j] = d_ks.0[i][j] * scales[j];
            d_scales[j] = d_scales[j] + d_ks.0[i][j] * frame.0[i][j];
        }
    }
    (d_frame, d_scales)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerTag {
    Body,
    Cloth,
    Scene,
}

impl LayerTag {
    pub fn code(self) -> u8 {
        match self {
            LayerTag::Body => 0,
            LayerTag::Cloth => 1,
            LayerTag::Scene => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(LayerTag::Body),
            1 => Some(LayerTag::Cloth),
            2 => Some(LayerTag::Scene),
            _ => None,
        }
    }

    pub fn is_skinned(self) -> bool {
        !matches!(self, LayerTag::Scene)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLayer<T> {
    pub tag: LayerTag,
    pub primitives: Vec<GaussianPrimitive<T>>,
    skin_binding: Option<Vec<usize>>,
}

impl<T: Real> GaussianLayer<T> {
    /// Skinned layers bind primitive `i` to weight row `i`; scene layers carry no binding.
    pub fn new(tag: LayerTag, primitives: Vec<GaussianPrimitive<T>>) -> Self {
        let skin_binding = tag.is_skinned().then(|| (0..primitives.len()).collect());
        Self { tag, primitives, skin_binding }
    }

    pub fn with_binding(tag: LayerTag, primitives: Vec<GaussianPrimitive<T>>, binding: Option<Vec<usize>>) -> Result<Self> {
        match (&binding, tag.is_skinned()) {
            (Some(b), true) if b.len() == primitives.len() => {}
            (None, false) => {}
            (Some(b), true) => {
                return Err(Error::DimensionMismatch { what: "skin binding", expected: primitives.len(), got: b.len() })
            }
            (Some(_), false) => return Err(Error::InvalidConfig("scene layers cannot carry a skin binding".into())),
            (None, true) => return Err(Error::InvalidConfig(format!("{tag:?} layer needs a skin binding"))),
        }
        Ok(Self { tag, primitives, skin_binding: binding })
    }

    pub fn skin_binding(&self) -> Option<&[usize]> {
        self.skin_binding.as_deref()
    }

    /// Checks every binding index is a valid row of an `rows`-row weight matrix.
    pub fn check_binding(&self, rows: usize) -> Result<()> {
        if let Some(b) = &self.skin_binding {
            if let Some(&bad) = b.iter().find(|&&i| i >= rows) {
                return Err(Error::DimensionMismatch { what: "skin binding index", expected: rows, got: bad });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn cast<U: Real>(&self) -> GaussianLayer<U> {
        GaussianLayer {
            tag: self.tag,
            primitives: self.primitives.iter().map(|p| p.cast()).collect(),
            skin_binding: self.skin_binding.clone(),
        }
    }

    /// Serialize in the `LGS1` little-endian layer format (f32 payload).
    pub fn write_lgs<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(b"LGS1")?;
        w.write_u8(self.tag.code())?;
        w.write_u32::<LittleEndian>(self.primitives.len() as u32)?;
        for p in &self.primitives {
            for v in p.center.0 {
                w.write_f32::<LittleEndian>(v.as_f64() as f32)?;
            }
            for v in p.rotation.0 {
                w.write_f32::<LittleEndian>(v.as_f64() as f32)?;
            }
            for v in p.log_scale.0 {
                w.write_f32::<LittleEndian>(v.as_f64() as f32)?;
            }
            w.write_f32::<LittleEndian>(p.opacity_logit.as_f64() as f32)?;
            for c in p.sh.iter() {
                for v in c {
                    w.write_f32::<LittleEndian>(v.as_f64() as f32)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_lgs<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| Error::format("LGS1", m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != b"LGS1" {
            return Err(bad("bad magic"));
        }
        let tag = LayerTag::from_code(r.read_u8().map_err(|_| bad("truncated header"))?).ok_or_else(|| bad("unknown layer tag"))?;
        let count = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
        let mut buf = vec![0f32; FLOATS_PER_PRIMITIVE];
        let mut prims = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_f32_into::<LittleEndian>(&mut buf).map_err(|_| bad("truncated primitive data"))?;
            let f = |i: usize| T::lit(buf[i] as f64);
            let mut sh = zero_coeffs();
            for (k, c) in sh.iter_mut().enumerate() {
                for (ch, v) in c.iter_mut().enumerate() {
                    *v = f(11 + k * 3 + ch);
                }
            }
            prims.push(GaussianPrimitive::new(
                Vec3::new(f(0), f(1), f(2)),
                Quat([f(3), f(4), f(5), f(6)]),
                Vec3::new(f(7), f(8), f(9)),
                f(10),
                sh,
            ));
        }
        Ok(Self::new(tag, prims))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_lgs(std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_lgs(std::io::BufReader::new(f))
    }
}

/// One primitive per vertex: centred on the vertex, local +z along the
/// vertex normal, tangential scale half the mean incident edge length and
/// normal-axis scale a tenth of that. Opacity starts at 0.1 and the colour
/// at the vertex colour (mid-gray when the mesh has none).
pub fn init_from_mesh<T: Real>(mesh: &TriMesh<T>, tag: LayerTag) -> Result<GaussianLayer<T>> {
    if mesh.vertices.is_empty() {
        return Err(Error::InvalidMesh("mesh has no vertices".into()));
    }
    let normals = mesh.vertex_normals();
    let edge_means = mesh.mean_incident_edge_lengths();
    let z = Vec3::new(T::zero(), T::zero(), T::one());
    let opacity_logit = logit(T::lit(INIT_OPACITY));
    let mut prims = Vec::with_capacity(mesh.vertices.len());
    for (i, v) in mesh.vertices.iter().enumerate() {
        let n = normals[i]
            .normalized()
            .ok_or_else(|| Error::InvalidMesh(format!("vertex {i} has a zero-length normal")))?;
        let mean_edge =
            edge_means[i].ok_or_else(|| Error::InvalidMesh(format!("vertex {i} has no incident edge")))?;
        let tangential = mean_edge * T::lit(0.5);
        if !(tangential > T::zero()) {
            return Err(Error::InvalidMesh(format!("vertex {i} has zero-length incident edges")));
        }
        let normal_scale = tangential * T::lit(NORMAL_SCALE_RATIO);
        let rotation = Quat::from_two_unit_vectors(&z, &n);
        let color = mesh.colors.as_ref().map(|c| c[i]).unwrap_or(Vec3::splat(T::lit(0.5)));
        let mut sh = zero_coeffs();
        sh[0] = color.0.map(rgb_to_dc);
        prims.push(GaussianPrimitive::new(
            *v,
            rotation,
            Vec3::new(tangential.ln(), tangential.ln(), normal_scale.ln()),
            opacity_logit,
            sh,
        ));
    }
    Ok(GaussianLayer::new(tag, prims))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> TriMesh<f64> {
        TriMesh::from_faces(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
        .with_normals(vec![Vec3::new(0.0, 0.0, 1.0); 4])
        .unwrap()
    }

    #[test]
    fn unit_square_init() {
        // quad boundary only, so every vertex sees two edges of length 1
        let mut m = unit_square();
        m.edges = vec![(0, 1), (1, 2), (2, 3), (0, 3)];
        let layer = init_from_mesh(&m, LayerTag::Cloth).unwrap();
        assert_eq!(layer.len(), 4);
        for (p, v) in layer.primitives.iter().zip(&m.vertices) {
            assert_eq!(p.center, *v);
            let s = p.scales();
            assert!((s[0] - 0.5).abs() < 1e-12 && (s[1] - 0.5).abs() < 1e-12);
            assert!((s[2] - 0.05).abs() < 1e-12);
            assert_eq!(p.rotation(), Quat::identity());
            assert!((p.opacity() - 0.1).abs() < 1e-12);
            assert_eq!(eval_sh(&p.sh, &Vec3::new(0.0, 1.0, 0.0)), [0.5; 3]);
        }
        assert_eq!(layer.skin_binding(), Some(&[0, 1, 2, 3][..]));
    }

    #[test]
    fn empty_mesh_and_zero_normal_are_rejected() {
        let empty = TriMesh::<f64>::from_faces(vec![], vec![]).unwrap();
        assert!(matches!(init_from_mesh(&empty, LayerTag::Body), Err(Error::InvalidMesh(_))));
        let m = unit_square().with_normals(vec![Vec3::zero(); 4]).unwrap();
        assert!(matches!(init_from_mesh(&m, LayerTag::Body), Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn scene_layer_has_no_binding() {
        let layer = init_from_mesh(&unit_square(), LayerTag::Scene).unwrap();
        assert!(layer.skin_binding().is_none());
    }

    #[test]
    fn lgs_roundtrip_at_f32_precision() {
        let layer = init_from_mesh(&unit_square(), LayerTag::Body).unwrap().cast::<f32>();
        let mut bytes = Vec::new();
        layer.write_lgs(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 9 + 4 * FLOATS_PER_PRIMITIVE * 4);
        let back = GaussianLayer::<f32>::read_lgs(&bytes[..]).unwrap();
        assert_eq!(back, layer);
    }
}
