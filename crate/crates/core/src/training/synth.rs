//! Procedural stand-in for a captured sequence: a capsule humanoid on a
//! joint tree, a skirt with analytic swing, a ground plane with blobs, and
//! orbiting cameras. Ground-truth frames come from a hand-coloured splat scene.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussians::{init_from_mesh, rgb_to_dc, zero_coeffs, GaussianLayer, GaussianPrimitive, LayerTag};
use crate::image::Image;
use crate::math::{Quat, Rigid, Vec3};
use crate::mesh::TriMesh;
use crate::renderer::Camera;
use crate::scalar::{logit, Real};
use crate::skeleton::{forward_kinematics, lbs_apply, transfer_skin_weights, Pose, Skeleton, SkinWeights};

use super::avatar::{pose_layer_direct, render_frame, WorldPrimitive};

/// Opacity of every ground-truth splat.
pub const GT_OPACITY: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub joints: usize,
    pub frames: usize,
    pub train_cameras: usize,
    pub holdout_cameras: usize,
    pub resolution: usize,
    pub cloth_rings: usize,
    pub cloth_segments: usize,
    /// Ground vertices per side.
    pub ground_grid: usize,
    pub blobs: usize,
    /// Hem displacement of the skirt swing (meters).
    pub swing_amplitude: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            joints: 12,
            frames: 40,
            train_cameras: 30,
            holdout_cameras: 5,
            resolution: 128,
            cloth_rings: 10,
            cloth_segments: 40,
            ground_grid: 14,
            blobs: 104,
            swing_amplitude: 0.06,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synth.{m}")));
        if !(6..=24).contains(&self.joints) {
            return bad("joints must lie in 6..=24");
        }
        if !(1..=200).contains(&self.frames) {
            return bad("frames must lie in 1..=200");
        }
        if !(16..=512).contains(&self.resolution) {
            return bad("resolution must lie in 16..=512");
        }
        if self.train_cameras == 0 {
            return bad("train_cameras must be positive");
        }
        if self.cloth_rings < 2 || self.cloth_segments < 3 || self.ground_grid < 2 {
            return bad("cloth_rings ≥ 2, cloth_segments ≥ 3 and ground_grid ≥ 2 required");
        }
        if !(self.swing_amplitude.is_finite() && self.swing_amplitude >= 0.0) {
            return bad("swing_amplitude must be nonnegative");
        }
        Ok(())
    }
}

/// One observed frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame<T> {
    pub index: usize,
    pub pose: Pose<T>,
    pub camera: Camera<T>,
    /// Pseudo ground-truth cloth surface in world space.
    pub cloth_mesh: TriMesh<T>,
    pub image: Image<T>,
    /// Binary cloth mask, one channel.
    pub mask: Image<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene<T> {
    pub seed: u64,
    pub params: SynthParams,
    pub skeleton: Skeleton<T>,
    pub body_mesh: TriMesh<T>,
    pub cloth_mesh: TriMesh<T>,
    pub body_weights: SkinWeights<T>,
    /// Transferred from the body by nearest vertex.
    pub cloth_weights: SkinWeights<T>,
    pub gt_body: GaussianLayer<T>,
    pub gt_cloth: GaussianLayer<T>,
    pub gt_scene: GaussianLayer<T>,
    pub frames: Vec<Frame<T>>,
    /// Held-out views of training poses.
    pub holdout: Vec<Frame<T>>,
}

// 24-joint template in the usual body-model order: rest position, parent, bone end.
const TEMPLATE: [([f64; 3], Option<usize>, usize); 24] = [
    ([0.0, 0.93, 0.0], None, 3),
    ([0.09, 0.85, 0.0], Some(0), 4),
    ([-0.09, 0.85, 0.0], Some(0), 5),
    ([0.0, 1.03, 0.0], Some(0), 6),
    ([0.10, 0.48, 0.0], Some(1), 7),
    ([-0.10, 0.48, 0.0], Some(2), 8),
    ([0.0, 1.16, 0.0], Some(3), 9),
    ([0.10, 0.08, 0.0], Some(4), 10),
    ([-0.10, 0.08, 0.0], Some(5), 11),
    ([0.0, 1.26, 0.0], Some(6), 12),
    ([0.10, 0.02, 0.10], Some(7), 10),
    ([-0.10, 0.02, 0.10], Some(8), 11),
    ([0.0, 1.45, 0.0], Some(9), 15),
    ([0.08, 1.38, 0.0], Some(9), 16),
    ([-0.08, 1.38, 0.0], Some(9), 17),
    ([0.0, 1.60, 0.0], Some(12), 15),
    ([0.18, 1.40, 0.0], Some(13), 18),
    ([-0.18, 1.40, 0.0], Some(14), 19),
    ([0.45, 1.40, 0.0], Some(16), 20),
    ([-0.45, 1.40, 0.0], Some(17), 21),
    ([0.70, 1.40, 0.0], Some(18), 22),
    ([-0.70, 1.40, 0.0], Some(19), 23),
    ([0.78, 1.40, 0.0], Some(20), 22),
    ([-0.78, 1.40, 0.0], Some(21), 23),
];

/// Order in which template joints are kept as `joints` shrinks.
const PRIORITY: [usize; 24] = [0, 3, 1, 2, 6, 4, 5, 12, 16, 17, 18, 19, 9, 15, 7, 8, 20, 21, 13, 14, 10, 11, 22, 23];

const SKIN: [f64; 3] = [0.86, 0.66, 0.52];
const SHIRT: [f64; 3] = [0.18, 0.34, 0.72];
const TROUSERS: [f64; 3] = [0.28, 0.28, 0.33];
const HAIR: [f64; 3] = [0.25, 0.16, 0.1];
const SKIRT_A: [f64; 3] = [0.82, 0.2, 0.18];
const SKIRT_B: [f64; 3] = [0.95, 0.62, 0.2];
const GROUND_A: [f64; 3] = [0.35, 0.55, 0.3];
const GROUND_B: [f64; 3] = [0.6, 0.6, 0.55];

const SKIRT_TOP: (f64, f64) = (1.0, 0.17);
const SKIRT_HEM: (f64, f64) = (0.55, 0.30);
const BONE_SIGMA: f64 = 0.05;

fn v3<T: Real>(a: [f64; 3]) -> Vec3<T> {
    Vec3::new(T::lit(a[0]), T::lit(a[1]), T::lit(a[2]))
}

/// Template indices of the kept joints, ascending, with remapped parents.
fn joint_subset(joints: usize) -> (Vec<usize>, Vec<Option<usize>>) {
    let mut keep: Vec<usize> = PRIORITY[..joints].to_vec();
    keep.sort_unstable();
    let parents = keep
        .iter()
        .map(|&t| {
            let mut p = TEMPLATE[t].1;
            while let Some(q) = p {
                if let Some(i) = keep.iter().position(|&k| k == q) {
                    return Some(i);
                }
                p = TEMPLATE[q].1;
            }
            None
        })
        .collect();
    (keep, parents)
}

fn build_skeleton<T: Real>(keep: &[usize], parents: &[Option<usize>]) -> Result<Skeleton<T>> {
    let rest = keep
        .iter()
        .zip(parents)
        .map(|(&t, p)| {
            let here = v3::<T>(TEMPLATE[t].0);
            let base = p.map_or(Vec3::zero(), |p| v3::<T>(TEMPLATE[keep[p]].0));
            Rigid::from_translation(here - base)
        })
        .collect();
    Skeleton::new(parents.to_vec(), rest)
}

/// Closed capsule around segment `a → b`: two poles plus `rings × segments`.
fn capsule(a: [f64; 3], b: [f64; 3], r: f64, rings: usize, segments: usize, color: [f64; 3], mesh: &mut MeshBuilder) {
    let a = v3::<f64>(a);
    let b = v3::<f64>(b);
    let axis = b - a;
    let len = axis.norm();
    let d = axis.scale(1.0 / len);
    let helper = if d.x().abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
    let u = d.cross(&helper).normalized().expect("non-parallel helper");
    let w = d.cross(&u);
    let quarter = std::f64::consts::FRAC_PI_2 * r;
    let total = 2.0 * quarter + len;
    let base = mesh.vertices.len();
    // outline parameter s: cap at a, cylinder, cap at b
    let profile = |s: f64| -> (Vec3<f64>, f64, f64) {
        if s < quarter {
            let phi = s / r;
            (a - d.scale(r * phi.cos()), r * phi.sin(), -phi.cos())
        } else if s <= quarter + len {
            (a + d.scale(s - quarter), r, 0.0)
        } else {
            let phi = (s - quarter - len) / r;
            (b + d.scale(r * phi.sin()), r * phi.cos(), phi.sin())
        }
    };
    mesh.push(a - d.scale(r), -d, color);
    for i in 0..rings {
        let s = total * (i + 1) as f64 / (rings + 1) as f64;
        let (c, rho, along) = profile(s);
        let radial = (1.0 - along * along).max(0.0).sqrt();
        for k in 0..segments {
            let t = std::f64::consts::TAU * k as f64 / segments as f64;
            let dir = u.scale(t.cos()) + w.scale(t.sin());
            mesh.push(c + dir.scale(rho), dir.scale(radial) + d.scale(along), color);
        }
    }
    mesh.push(b + d.scale(r), d, color);
    let ring = |i: usize, k: usize| base + 1 + i * segments + k % segments;
    let top = base + 1 + rings * segments;
    for k in 0..segments {
        mesh.faces.push([base, ring(0, k + 1), ring(0, k)]);
        mesh.faces.push([top, ring(rings - 1, k), ring(rings - 1, k + 1)]);
        for i in 0..rings - 1 {
            mesh.faces.push([ring(i, k), ring(i, k + 1), ring(i + 1, k)]);
            mesh.faces.push([ring(i + 1, k), ring(i, k + 1), ring(i + 1, k + 1)]);
        }
    }
}

#[derive(Default)]
struct MeshBuilder {
    vertices: Vec<Vec3<f64>>,
    normals: Vec<Vec3<f64>>,
    colors: Vec<Vec3<f64>>,
    faces: Vec<[usize; 3]>,
}

impl MeshBuilder {
    fn push(&mut self, p: Vec3<f64>, n: Vec3<f64>, c: [f64; 3]) {
        self.vertices.push(p);
        self.normals.push(n.normalized().unwrap_or(Vec3::new(0.0, 1.0, 0.0)));
        self.colors.push(v3(c));
    }

    fn build<T: Real>(self) -> Result<TriMesh<T>> {
        TriMesh::from_faces(self.vertices.iter().map(Vec3::cast).collect(), self.faces)?
            .with_normals(self.normals.iter().map(Vec3::cast).collect())?
            .with_colors(self.colors.iter().map(Vec3::cast).collect())
    }
}

/// About 800 vertices of capsules in a T-pose.
pub fn body_mesh<T: Real>() -> Result<TriMesh<T>> {
    let mut m = MeshBuilder::default();
    capsule([0.0, 0.90, 0.0], [0.0, 1.42, 0.0], 0.14, 18, 11, SHIRT, &mut m);
    capsule([0.0, 1.57, 0.0], [0.0, 1.65, 0.0], 0.095, 6, 13, SKIN, &mut m);
    for s in [1.0, -1.0] {
        capsule([0.18 * s, 1.40, 0.0], [0.45 * s, 1.40, 0.0], 0.05, 7, 8, SHIRT, &mut m);
        capsule([0.45 * s, 1.40, 0.0], [0.72 * s, 1.40, 0.0], 0.04, 7, 8, SKIN, &mut m);
        capsule([0.10 * s, 0.85, 0.0], [0.10 * s, 0.48, 0.0], 0.07, 8, 8, TROUSERS, &mut m);
        capsule([0.10 * s, 0.48, 0.0], [0.10 * s, 0.08, 0.0], 0.05, 8, 8, TROUSERS, &mut m);
    }
    // hair cap on the upper half of the head
    let head_start = 200;
    for i in head_start..head_start + 80 {
        if m.vertices[i].y() > 1.66 {
            m.colors[i] = v3(HAIR);
        }
    }
    m.build()
}

/// Open frustum from the waist to the hem, rings top to bottom.
pub fn skirt_mesh<T: Real>(rings: usize, segments: usize) -> Result<TriMesh<T>> {
    let mut m = MeshBuilder::default();
    let slope = (SKIRT_HEM.1 - SKIRT_TOP.1) / (SKIRT_HEM.0 - SKIRT_TOP.0);
    for i in 0..rings {
        let f = i as f64 / (rings - 1) as f64;
        let y = SKIRT_TOP.0 + f * (SKIRT_HEM.0 - SKIRT_TOP.0);
        let r = SKIRT_TOP.1 + f * (SKIRT_HEM.1 - SKIRT_TOP.1);
        for k in 0..segments {
            let t = std::f64::consts::TAU * k as f64 / segments as f64;
            let color = if (k * 8 / segments) % 2 == 0 { SKIRT_A } else { SKIRT_B };
            m.push(Vec3::new(r * t.cos(), y, r * t.sin()), Vec3::new(t.cos(), -slope, t.sin()), color);
        }
    }
    let at = |i: usize, k: usize| i * segments + k % segments;
    for i in 0..rings - 1 {
        for k in 0..segments {
            m.faces.push([at(i, k), at(i + 1, k), at(i, k + 1)]);
            m.faces.push([at(i, k + 1), at(i + 1, k), at(i + 1, k + 1)]);
        }
    }
    m.build()
}

fn segment_distance(p: &Vec3<f64>, a: &Vec3<f64>, b: &Vec3<f64>) -> f64 {
    let ab = *b - *a;
    let l2 = ab.norm_squared();
    let t = if l2 > 0.0 { ((*p - *a).dot(&ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (*p - (*a + ab.scale(t))).norm()
}

/// Softmax of `−d²/2σ²` over distances to each kept joint's bone segment.
fn bone_weights<T: Real>(mesh: &TriMesh<T>, keep: &[usize]) -> Result<SkinWeights<T>> {
    let j = keep.len();
    let mut data = Vec::with_capacity(mesh.vertices.len() * j);
    for v in &mesh.vertices {
        let p = v.cast::<f64>();
        let logits: Vec<f64> = keep
            .iter()
            .map(|&t| {
                let d = segment_distance(&p, &v3(TEMPLATE[t].0), &v3(TEMPLATE[TEMPLATE[t].2].0));
                -d * d / (2.0 * BONE_SIGMA * BONE_SIGMA)
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        data.extend(e.iter().map(|x| T::lit(x / s)));
    }
    SkinWeights::new(mesh.vertices.len(), j, data)
}

fn sinusoid_pose<T: Real>(keep: &[usize], t: usize, frames: usize) -> Result<Pose<T>> {
    let w = std::f64::consts::TAU * 2.0 * t as f64 / frames.max(1) as f64;
    let (s, c) = (w.sin(), w.cos());
    let rot = keep
        .iter()
        .map(|&j| {
            let aa = match j {
                0 => [0.0, 0.25 * (0.5 * w).sin(), 0.0],
                1 => [0.35 * s, 0.0, 0.0],
                2 => [-0.35 * s, 0.0, 0.0],
                3 => [0.05 * s, 0.1 * s, 0.0],
                4 | 5 => [0.3 * (1.0 - c), 0.0, 0.0],
                6 => [0.0, -0.1 * s, 0.0],
                12 => [0.1 * s, 0.0, 0.0],
                16 => [0.0, 0.0, -0.45 * (1.0 - c)],
                17 => [0.0, 0.0, 0.45 * (1.0 - c)],
                18 => [0.0, 0.4 * s, 0.0],
                19 => [0.0, -0.4 * s, 0.0],
                _ => [0.0; 3],
            };
            v3::<T>(aa)
        })
        .collect();
    Pose::new(rot, Vec3::zero())
}

/// Rest-space skirt offsets for frame `t`: lateral swing growing as the
/// square of the distance below the waist, zero at `t = 0`.
pub fn skirt_swing<T: Real>(cloth: &TriMesh<T>, amplitude: f64, t: usize, frames: usize) -> Vec<Vec3<T>> {
    let w = std::f64::consts::TAU * 2.0 * t as f64 / frames.max(1) as f64;
    let (sx, sz) = (w.sin(), (2.0 * w).sin());
    cloth
        .vertices
        .iter()
        .map(|v| {
            let h = ((SKIRT_TOP.0 - v.y().as_f64()) / (SKIRT_TOP.0 - SKIRT_HEM.0)).clamp(0.0, 1.0);
            let a = amplitude * h * h;
            Vec3::new(T::lit(a * sx), T::zero(), T::lit(0.5 * a * sz))
        })
        .collect()
}

fn orbit_camera<T: Real>(azimuth: f64, res: usize) -> Result<Camera<T>> {
    let r = 3.2;
    let eye = Vec3::new(T::lit(r * azimuth.sin()), T::lit(1.3), T::lit(r * azimuth.cos()));
    let f = T::lit(170.0 * res as f64 / 128.0);
    Camera::look_at(eye, v3([0.0, 0.95, 0.0]), v3([0.0, 1.0, 0.0]), f, f, res, res, T::lit(0.05))
}

fn ground_and_blobs<T: Real>(p: &SynthParams, rng: &mut ChaCha8Rng) -> Result<GaussianLayer<T>> {
    let n = p.ground_grid;
    let half = 1.5;
    let mut m = MeshBuilder::default();
    for i in 0..n {
        for k in 0..n {
            let x = -half + 2.0 * half * i as f64 / (n - 1) as f64;
            let z = -half + 2.0 * half * k as f64 / (n - 1) as f64;
            let c = if (i / 2 + k / 2) % 2 == 0 { GROUND_A } else { GROUND_B };
            m.push(Vec3::new(x, 0.0, z), Vec3::new(0.0, 1.0, 0.0), c);
        }
    }
    for i in 0..n - 1 {
        for k in 0..n - 1 {
            let a = i * n + k;
            m.faces.push([a, a + 1, a + n]);
            m.faces.push([a + 1, a + n + 1, a + n]);
        }
    }
    let ground = m.build::<T>()?;
    let mut prims = gt_layer(&ground, LayerTag::Scene)?.primitives;
    for _ in 0..p.blobs {
        let az = rng.gen_range(0.0..std::f64::consts::TAU);
        let rad = rng.gen_range(1.7..2.5);
        let y = rng.gen_range(0.15..2.1);
        let center = Vec3::new(T::lit(rad * az.sin()), T::lit(y), T::lit(rad * az.cos()));
        let q = Quat([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .normalized();
        let q = Quat(q.0.map(T::lit));
        let s: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.05f64..0.12).ln());
        let col: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.1..0.9));
        let mut sh = zero_coeffs();
        sh[0] = col.map(|c| rgb_to_dc(T::lit(c)));
        prims.push(GaussianPrimitive::new(center, q, v3(s), logit(T::lit(GT_OPACITY)), sh));
    }
    Ok(GaussianLayer::new(LayerTag::Scene, prims))
}

fn gt_layer<T: Real>(mesh: &TriMesh<T>, tag: LayerTag) -> Result<GaussianLayer<T>> {
    let mut layer = init_from_mesh(mesh, tag)?;
    for p in layer.primitives.iter_mut() {
        p.opacity_logit = logit(T::lit(GT_OPACITY));
    }
    Ok(layer)
}

impl<T: Real> SyntheticScene<T> {
    pub fn train_cameras(&self) -> Vec<Camera<T>> {
        let n = self.params.train_cameras;
        (0..n).map(|k| orbit_camera(std::f64::consts::TAU * k as f64 / n as f64, self.params.resolution).expect("valid orbit")).collect()
    }

    /// Pseudo ground truth for a pose: world-space body, cloth and scene primitives.
    pub fn gt_world(&self, frame: usize, pose: &Pose<T>) -> Result<[Vec<WorldPrimitive<T>>; 3]> {
        let kin = forward_kinematics(&self.skeleton, pose)?;
        let swing = skirt_swing(&self.cloth_mesh, self.params.swing_amplitude, frame, self.params.frames);
        Ok([
            pose_layer_direct(&self.gt_body, &self.body_weights, &kin, None)?,
            pose_layer_direct(&self.gt_cloth, &self.cloth_weights, &kin, Some(&swing))?,
            self.gt_scene.primitives.iter().map(WorldPrimitive::canonical).collect(),
        ])
    }

    /// Scene layer the fit starts from: ground-truth geometry, mid-gray, low opacity.
    pub fn initial_scene(&self) -> GaussianLayer<T> {
        let mut layer = self.gt_scene.clone();
        for p in layer.primitives.iter_mut() {
            p.sh = zero_coeffs();
            p.opacity_logit = logit(T::lit(crate::gaussians::INIT_OPACITY));
        }
        layer
    }
}

pub fn synth_scene<T: Real>(seed: u64, params: &SynthParams) -> Result<SyntheticScene<T>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (keep, parents) = joint_subset(params.joints);
    let skeleton = build_skeleton::<T>(&keep, &parents)?;
    let body_mesh = body_mesh::<T>()?;
    let cloth_mesh = skirt_mesh::<T>(params.cloth_rings, params.cloth_segments)?;
    let body_weights = bone_weights(&body_mesh, &keep)?;
    let cloth_weights = transfer_skin_weights(&cloth_mesh, &body_mesh, &body_weights)?;
    let gt_body = gt_layer(&body_mesh, LayerTag::Body)?;
    let gt_cloth = gt_layer(&cloth_mesh, LayerTag::Cloth)?;
    let gt_scene = ground_and_blobs(params, &mut rng)?;
    let mut scene = SyntheticScene {
        seed,
        params: params.clone(),
        skeleton,
        body_mesh,
        cloth_mesh,
        body_weights,
        cloth_weights,
        gt_body,
        gt_cloth,
        gt_scene,
        frames: Vec::new(),
        holdout: Vec::new(),
    };
    let train = scene.train_cameras();
    let mut frames = Vec::with_capacity(params.frames);
    for t in 0..params.frames {
        let pose = sinusoid_pose(&keep, t, params.frames)?;
        frames.push(scene.render_frame(t, pose, train[t % train.len()].clone())?);
    }
    let mut holdout = Vec::with_capacity(params.holdout_cameras);
    let h = params.holdout_cameras;
    for k in 0..h {
        let az = std::f64::consts::TAU * (k as f64 * params.train_cameras as f64 / h as f64 + 0.5) / params.train_cameras as f64;
        let t = ((2 * k + 1) * params.frames) / (2 * h);
        let pose = frames[t].pose.clone();
        holdout.push(scene.render_frame(t, pose, orbit_camera(az, params.resolution)?)?);
    }
    scene.frames = frames;
    scene.holdout = holdout;
    Ok(scene)
}

impl<T: Real> SyntheticScene<T> {
    fn render_frame(&self, index: usize, pose: Pose<T>, camera: Camera<T>) -> Result<Frame<T>> {
        let [body, cloth, scene] = self.gt_world(index, &pose)?;
        let out = render_frame(&body, &cloth, &scene, &camera, [T::zero(); 3], false)?;
        let kin = forward_kinematics(&self.skeleton, &pose)?;
        let swing = skirt_swing(&self.cloth_mesh, self.params.swing_amplitude, index, self.params.frames);
        let rest: Vec<Vec3<T>> = self.cloth_mesh.vertices.iter().zip(&swing).map(|(v, s)| *v + *s).collect();
        let posed = lbs_apply(&rest, &self.cloth_weights, &kin.skinning)?;
        let mask = threshold_mask(&out.matte.values);
        Ok(Frame { index, pose, camera, cloth_mesh: self.cloth_mesh.with_vertices(posed), image: out.final_image, mask })
    }
}

/// `1` where the matte exceeds one half.
pub fn threshold_mask<T: Real>(matte: &Image<T>) -> Image<T> {
    let mut m = matte.clone();
    let half = T::lit(0.5);
    m.data.iter_mut().for_each(|v| *v = if *v > half { T::one() } else { T::zero() });
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthParams {
        SynthParams { frames: 3, train_cameras: 3, holdout_cameras: 1, resolution: 32, blobs: 10, ..Default::default() }
    }

    #[test]
    fn default_counts() {
        let body = body_mesh::<f64>().unwrap();
        let cloth = skirt_mesh::<f64>(10, 40).unwrap();
        assert!((700..=900).contains(&body.vertices.len()), "{}", body.vertices.len());
        assert_eq!(cloth.vertices.len(), 400);
        let (keep, parents) = joint_subset(12);
        assert_eq!(keep.len(), 12);
        assert_eq!(parents[0], None);
        assert!(parents.iter().enumerate().skip(1).all(|(i, p)| p.is_some_and(|p| p < i)));
    }

    #[test]
    fn skin_weights_on_simplex() {
        let body = body_mesh::<f64>().unwrap();
        let (keep, _) = joint_subset(12);
        let w = bone_weights(&body, &keep).unwrap();
        for r in 0..w.rows() {
            assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn first_frame_cloth_is_rest_mesh() {
        let s = synth_scene::<f64>(0, &SynthParams { frames: 1, ..small() }).unwrap();
        assert_eq!(s.frames[0].pose, Pose::rest(12));
        assert_eq!(s.frames[0].cloth_mesh.vertices, s.cloth_mesh.vertices);
    }

    #[test]
    fn same_seed_same_scene() {
        let a = synth_scene::<f64>(5, &small()).unwrap();
        let b = synth_scene::<f64>(5, &small()).unwrap();
        assert_eq!(a, b);
        let c = synth_scene::<f64>(6, &small()).unwrap();
        assert_ne!(a.gt_scene, c.gt_scene);
    }

    #[test]
    fn params_bounds() {
        assert!(SynthParams { resolution: 513, ..Default::default() }.validate().is_err());
        assert!(SynthParams { frames: 201, ..Default::default() }.validate().is_err());
        assert!(SynthParams { joints: 5, ..Default::default() }.validate().is_err());
        assert!(SynthParams::default().validate().is_ok());
    }
}
