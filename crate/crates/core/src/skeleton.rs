//! Kinematic tree, forward kinematics, linear blend skinning, pose-corrective
//! offsets and nearest-vertex skin-weight transfer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Quat, Rigid, Vec3};
use crate::mesh::TriMesh;
use crate::scalar::Real;
use crate::spatial::{NearestIndex, NnStrategy};

/// Joint count of the reference body rig.
pub const DEFAULT_JOINTS: usize = 24;
const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton<T> {
    parents: Vec<Option<usize>>,
    rest_local: Vec<Rigid<T>>,
}

impl<T: Real> Skeleton<T> {
    /// Joints must be topologically ordered (`parent < child`) with a single root at index 0.
    pub fn new(parents: Vec<Option<usize>>, rest_local: Vec<Rigid<T>>) -> Result<Self> {
        if parents.is_empty() {
            return Err(Error::InvalidSkeleton("no joints".into()));
        }
        if parents.len() != rest_local.len() {
            return Err(Error::DimensionMismatch { what: "rest transforms", expected: parents.len(), got: rest_local.len() });
        }
        for (j, p) in parents.iter().enumerate() {
            match (j, p) {
                (0, None) => {}
                (0, Some(_)) => return Err(Error::InvalidSkeleton("joint 0 must be the root".into())),
                (_, None) => return Err(Error::InvalidSkeleton(format!("joint {j} is a second root"))),
                (_, Some(p)) if *p >= j => {
                    return Err(Error::InvalidSkeleton(format!("joint {j} has parent {p} not before it")))
                }
                _ => {}
            }
        }
        Ok(Self { parents, rest_local })
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn rest_local(&self) -> &[Rigid<T>] {
        &self.rest_local
    }

    /// World transforms of every joint in the rest pose.
    pub fn rest_world(&self) -> Vec<Rigid<T>> {
        let mut world: Vec<Rigid<T>> = Vec::with_capacity(self.parents.len());
        for (j, local) in self.rest_local.iter().enumerate() {
            let w = match self.parents[j] {
                None => *local,
                Some(p) => world[p].compose(local),
            };
            world.push(w);
        }
        world
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pose<T> {
    pub joint_rotations: Vec<Vec3<T>>,
    pub root_translation: Vec3<T>,
}

impl<T: Real> Pose<T> {
    /// Axis-angle magnitudes are limited to π.
    pub fn new(joint_rotations: Vec<Vec3<T>>, root_translation: Vec3<T>) -> Result<Self> {
        if !root_translation.is_finite() {
            return Err(Error::InvalidPose("non-finite root translation".into()));
        }
        let limit = T::PI() * T::lit(1.0 + 1e-12);
        for (j, r) in joint_rotations.iter().enumerate() {
            if !r.is_finite() {
                return Err(Error::InvalidPose(format!("joint {j} rotation is not finite")));
            }
            if r.norm() > limit {
                return Err(Error::InvalidPose(format!("joint {j} rotation exceeds π")));
            }
        }
        Ok(Self { joint_rotations, root_translation })
    }

    pub fn rest(joints: usize) -> Self {
        Self { joint_rotations: vec![Vec3::zero(); joints], root_translation: Vec3::zero() }
    }

    pub fn joint_count(&self) -> usize {
        self.joint_rotations.len()
    }
}

/// Row-stochastic `N × J` matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinWeights<T> {
    rows: usize,
    joints: usize,
    data: Vec<T>,
}

impl<T: Real> SkinWeights<T> {
    pub fn new(rows: usize, joints: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * joints {
            return Err(Error::DimensionMismatch { what: "skin weights", expected: rows * joints, got: data.len() });
        }
        for r in 0..rows {
            check_simplex(&data[r * joints..(r + 1) * joints], r)?;
        }
        Ok(Self { rows, joints, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.joints..(i + 1) * self.joints]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

fn check_simplex<T: Real>(row: &[T], index: usize) -> Result<()> {
    let mut sum = T::zero();
    for &w in row {
        if !(w >= T::zero()) || !w.is_finite() {
            return Err(Error::InvalidWeights { row: index });
        }
        sum = sum + w;
    }
    if (sum - T::one()).abs() > T::lit(SIMPLEX_TOL) {
        return Err(Error::InvalidWeights { row: index });
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Kinematics<T> {
    pub world: Vec<Rigid<T>>,
    /// `world(pose) ∘ world(rest)⁻¹` per joint.
    pub skinning: Vec<Rigid<T>>,
}

pub fn forward_kinematics<T: Real>(skeleton: &Skeleton<T>, pose: &Pose<T>) -> Result<Kinematics<T>> {
    let j = skeleton.joint_count();
    if pose.joint_count() != j {
        return Err(Error::DimensionMismatch { what: "pose joints", expected: j, got: pose.joint_count() });
    }
    let rest = skeleton.rest_world();
    let mut world: Vec<Rigid<T>> = Vec::with_capacity(j);
    for k in 0..j {
        let local = skeleton.rest_local[k].compose(&Rigid::from_rotation(Mat3::from_axis_angle(&pose.joint_rotations[k])));
        let w = match skeleton.parents[k] {
            None => Rigid::from_translation(pose.root_translation).compose(&local),
            Some(p) => world[p].compose(&local),
        };
        world.push(w);
    }
    let skinning = world.iter().zip(&rest).map(|(w, r)| w.compose(&r.inverse())).collect();
    Ok(Kinematics { world, skinning })
}

/// Weighted blend of skinning transforms, `x ↦ linear·x + translation`.
///
/// Stored as `I + Σ wⱼ(Rⱼ − I)` so the rest pose blends to the exact identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlendedTransform<T> {
    pub linear: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> BlendedTransform<T> {
    pub fn apply(&self, p: &Vec3<T>) -> Vec3<T> {
        self.linear.mul_vec(p) + self.translation
    }
}

pub fn blend_transforms<T: Real>(weights: &[T], transforms: &[Rigid<T>]) -> BlendedTransform<T> {
    let ident = Mat3::identity();
    let mut linear = ident;
    let mut translation = Vec3::zero();
    for (w, a) in weights.iter().zip(transforms) {
        if *w == T::zero() {
            continue;
        }
        linear += (a.rotation - ident).scale(*w);
        translation += a.translation.scale(*w);
    }
    BlendedTransform { linear, translation }
}

/// Gradient of a loss with respect to blend weights given its gradients with
/// respect to the blended linear part and translation.
pub fn blend_transforms_backward<T: Real>(
    transforms: &[Rigid<T>],
    d_linear: &Mat3<T>,
    d_translation: &Vec3<T>,
) -> Vec<T> {
    let ident = Mat3::identity();
    transforms
        .iter()
        .map(|a| (a.rotation - ident).frobenius_dot(d_linear) + a.translation.dot(d_translation))
        .collect()
}

/// `p' = Σⱼ wⱼ Aⱼ p` for every point with its own weight row.
pub fn lbs_apply<T: Real>(points: &[Vec3<T>], weights: &SkinWeights<T>, skinning: &[Rigid<T>]) -> Result<Vec<Vec3<T>>> {
    if weights.rows() != points.len() {
        return Err(Error::DimensionMismatch { what: "weight rows", expected: points.len(), got: weights.rows() });
    }
    if weights.joints() != skinning.len() {
        return Err(Error::DimensionMismatch { what: "skinning transforms", expected: weights.joints(), got: skinning.len() });
    }
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let row = weights.row(i);
            check_simplex(row, i)?;
            Ok(blend_transforms(row, skinning).apply(p))
        })
        .collect()
}

/// Length of the pose feature for `joints` joints: `9·(J−1)`.
pub fn pose_feature_len(joints: usize) -> usize {
    9 * joints.saturating_sub(1)
}

/// Concatenated `flatten(R(θⱼ) − I)` over non-root joints.
pub fn pose_feature<T: Real>(pose: &Pose<T>) -> Vec<T> {
    let mut f = Vec::with_capacity(pose_feature_len(pose.joint_count()));
    for aa in pose.joint_rotations.iter().skip(1) {
        f.extend_from_slice(&rotation_feature_block(&Mat3::from_axis_angle(aa)));
    }
    f
}

pub fn rotation_feature_block<T: Real>(r: &Mat3<T>) -> [T; 9] {
    (*r - Mat3::identity()).flatten()
}

/// `point + featureᵀ·offsets`, with `offsets` row-major `F × 3`.
pub fn apply_pose_offsets<T: Real>(point: &Vec3<T>, offsets: &[T], feature: &[T]) -> Result<Vec3<T>> {
    if offsets.len() != feature.len() * 3 {
        return Err(Error::DimensionMismatch { what: "pose offsets", expected: feature.len() * 3, got: offsets.len() });
    }
    let mut out = *point;
    for (k, &f) in feature.iter().enumerate() {
        if f == T::zero() {
            continue;
        }
        for a in 0..3 {
            out[a] = out[a] + f * offsets[k * 3 + a];
        }
    }
    Ok(out)
}

/// Each cloth vertex copies the weight row of its nearest body vertex
/// (lowest index on ties).
pub fn transfer_skin_weights<T: Real>(
    cloth: &TriMesh<T>,
    body: &TriMesh<T>,
    body_weights: &SkinWeights<T>,
) -> Result<SkinWeights<T>> {
    if body.vertices.is_empty() {
        return Err(Error::InvalidMesh("body mesh has no vertices".into()));
    }
    if body_weights.rows() != body.vertices.len() {
        return Err(Error::DimensionMismatch { what: "body weight rows", expected: body.vertices.len(), got: body_weights.rows() });
    }
    let index = NearestIndex::new(&body.vertices, NnStrategy::Auto);
    let j = body_weights.joints();
    let mut data = Vec::with_capacity(cloth.vertices.len() * j);
    for v in &cloth.vertices {
        let (k, _) = index.nearest(v).expect("non-empty body");
        data.extend_from_slice(body_weights.row(k));
    }
    SkinWeights::new(cloth.vertices.len(), j, data)
}

/// JSON form of a rig and pose.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RigFile {
    pub joints: Vec<JointRecord>,
    pub pose: PoseRecord,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct JointRecord {
    pub parent: Option<usize>,
    /// `(w, x, y, z)`
    pub rest_rotation_quat: [f64; 4],
    pub rest_translation: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PoseRecord {
    pub axis_angles: Vec<[f64; 3]>,
    pub root_translation: [f64; 3],
}

impl RigFile {
    pub fn from_parts<T: Real>(skeleton: &Skeleton<T>, pose: &Pose<T>) -> Self {
        let joints = skeleton
            .parents
            .iter()
            .zip(&skeleton.rest_local)
            .map(|(p, r)| JointRecord {
                parent: *p,
                rest_rotation_quat: matrix_to_quat(&r.rotation).0.map(|v| v.as_f64()),
                rest_translation: r.translation.0.map(|v| v.as_f64()),
            })
            .collect();
        Self { joints, pose: PoseRecord::from_pose(pose) }
    }

    pub fn skeleton<T: Real>(&self) -> Result<Skeleton<T>> {
        let parents = self.joints.iter().map(|j| j.parent).collect();
        let rest = self
            .joints
            .iter()
            .map(|j| {
                Rigid::new(
                    Quat(j.rest_rotation_quat.map(T::lit)).normalized().to_matrix(),
                    Vec3(j.rest_translation.map(T::lit)),
                )
            })
            .collect();
        Skeleton::new(parents, rest)
    }

    pub fn pose<T: Real>(&self) -> Result<Pose<T>> {
        self.pose.to_pose()
    }
}

impl PoseRecord {
    pub fn from_pose<T: Real>(pose: &Pose<T>) -> Self {
        Self {
            axis_angles: pose.joint_rotations.iter().map(|v| v.0.map(|x| x.as_f64())).collect(),
            root_translation: pose.root_translation.0.map(|x| x.as_f64()),
        }
    }

    pub fn to_pose<T: Real>(&self) -> Result<Pose<T>> {
        Pose::new(
            self.axis_angles.iter().map(|v| Vec3(v.map(T::lit))).collect(),
            Vec3(self.root_translation.map(T::lit)),
        )
    }
}

/// Quaternion of a rotation matrix (Shepperd's method).
pub fn matrix_to_quat<T: Real>(m: &Mat3<T>) -> Quat<T> {
    let r = &m.0;
    let one = T::one();
    let quarter = T::lit(0.25);
    let trace = r[0][0] + r[1][1] + r[2][2];
    let q = if trace > T::zero() {
        let s = (trace + one).sqrt() * T::lit(2.0);
        [quarter * s, (r[2][1] - r[1][2]) / s, (r[0][2] - r[2][0]) / s, (r[1][0] - r[0][1]) / s]
    } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
        let s = (one + r[0][0] - r[1][1] - r[2][2]).sqrt() * T::lit(2.0);
        [(r[2][1] - r[1][2]) / s, quarter * s, (r[0][1] + r[1][0]) / s, (r[0][2] + r[2][0]) / s]
    } else if r[1][1] > r[2][2] {
        let s = (one + r[1][1] - r[0][0] - r[2][2]).sqrt() * T::lit(2.0);
        [(r[0][2] - r[2][0]) / s, (r[0][1] + r[1][0]) / s, quarter * s, (r[1][2] + r[2][1]) / s]
    } else {
        let s = (one + r[2][2] - r[0][0] - r[1][1]).sqrt() * T::lit(2.0);
        [(r[1][0] - r[0][1]) / s, (r[0][2] + r[2][0]) / s, (r[1][2] + r[2][1]) / s, quarter * s]
    };
    Quat(q).normalized()
}
