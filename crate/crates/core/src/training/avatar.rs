//! The layered avatar: canonical body/cloth/scene primitives, triplane fields
//! and decoders, posed into world space and rendered in three passes.

use rand::Rng;
use rayon::prelude::*;

use crate::decoders::{
    deformation_dim, rot6d_backward, rot6d_to_matrix, softmax, softmax_backward, DecoderShape, Decoders, GeometryCorrection,
    APPEARANCE_DIM, GEOMETRY_DIM,
};
use crate::decoders::MlpCache;
use crate::error::{Error, Result};
use crate::gaussians::{eval_sh_dir, eval_sh_dir_backward, zero_coeffs, ShCoeffs, SH_COEFFS};
use crate::gaussians::{init_from_mesh, scaled_covariance, scaled_covariance_backward, GaussianLayer, GaussianPrimitive, LayerTag};
use crate::image::Image;
use crate::math::{Mat3, Vec3};
use crate::mesh::TriMesh;
use crate::renderer::{
    composite_final, composite_final_backward, matte_splats, matte_upstream, project, project_backward, rasterize,
    rasterize_backward, Camera, Matte, RenderOutput, Splat2D, Splat2DGrad,
};
use crate::scalar::Real;
use crate::skeleton::{
    apply_pose_offsets, blend_transforms, blend_transforms_backward, forward_kinematics, pose_feature, BlendedTransform,
    Kinematics, Pose, Skeleton, SkinWeights,
};
use crate::triplane::{AvatarField, TriPlaneField};

use super::config::ModelConfig;
use super::optim::Group;

const PRIOR_FLOOR: f64 = 1e-9;
const CHUNK: usize = 128;

/// Skeleton plus the reference skinning weights of both skinned layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Rig<T> {
    pub skeleton: Skeleton<T>,
    pub body_weights: SkinWeights<T>,
    /// Transferred from the body; also the target of the cloth-LBS loss.
    pub cloth_weights: SkinWeights<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Avatar<T> {
    pub body: GaussianLayer<T>,
    pub cloth: GaussianLayer<T>,
    pub scene: GaussianLayer<T>,
    pub fields: AvatarField<T>,
    pub decoders: Decoders<T>,
    pub rig: Rig<T>,
}

/// A primitive in world space, ready for projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldPrimitive<T> {
    pub center: Vec3<T>,
    pub cov: Mat3<T>,
    pub sh: ShCoeffs<T>,
    pub opacity: T,
}

#[derive(Clone, Copy, Debug)]
pub struct WorldGrad<T> {
    pub center: Vec3<T>,
    /// Full 3×3 gradient; only its symmetric part matters.
    pub cov: Mat3<T>,
    pub sh: ShCoeffs<T>,
    pub opacity: T,
}

impl<T: Real> WorldGrad<T> {
    pub fn zero() -> Self {
        Self { center: Vec3::zero(), cov: Mat3::zero(), sh: zero_coeffs(), opacity: T::zero() }
    }
}

impl<T: Real> WorldPrimitive<T> {
    /// The canonical primitive placed as is.
    pub fn canonical(p: &GaussianPrimitive<T>) -> Self {
        Self { center: p.center, cov: p.covariance(), sh: p.sh, opacity: p.opacity() }
    }
}

struct SkinnedCache<T> {
    caches: [MlpCache<T>; 3],
    r6_raw: [T; 6],
    r6: Mat3<T>,
    rq: Mat3<T>,
    rdef: Mat3<T>,
    scales: Vec3<T>,
    point: Vec3<T>,
    blend: BlendedTransform<T>,
    frame: Mat3<T>,
    weights: Vec<T>,
}

/// Forward state of one layer for one pose.
pub struct LayerState<T> {
    pub world: Vec<WorldPrimitive<T>>,
    /// Predicted skinning weights, `N × J` row-major (empty for the scene).
    pub weights: Vec<T>,
    caches: Vec<SkinnedCache<T>>,
}

pub struct Posed<T> {
    pub body: LayerState<T>,
    pub cloth: LayerState<T>,
    pub scene: LayerState<T>,
    pub kinematics: Kinematics<T>,
    pub pose_feature: Vec<T>,
}

/// Gradients for every parameter group, indexed like [`Group::ALL`].
pub type GroupGrads<T> = [Vec<T>; 7];

fn prior_logits<T: Real>(row: &[T]) -> Vec<T> {
    let floor = T::lit(PRIOR_FLOOR);
    row.iter().map(|w| w.max(floor).ln()).collect()
}

/// Padded axis-aligned box around a point set.
pub fn padded_bbox<T: Real>(points: &[Vec3<T>], pad: T) -> (Vec3<T>, Vec3<T>) {
    let mut lo = Vec3::splat(T::infinity());
    let mut hi = Vec3::splat(T::neg_infinity());
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo - Vec3::splat(pad), hi + Vec3::splat(pad))
}

impl<T: Real> Avatar<T> {
    /// Layers from meshes, random triplanes, identity-output decoders.
    pub fn init<R: Rng>(
        body_mesh: &TriMesh<T>,
        cloth_mesh: &TriMesh<T>,
        scene: GaussianLayer<T>,
        rig: Rig<T>,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if scene.tag != LayerTag::Scene {
            return Err(Error::InvalidConfig("scene layer must carry the scene tag".into()));
        }
        let body = init_from_mesh(body_mesh, LayerTag::Body)?;
        let cloth = init_from_mesh(cloth_mesh, LayerTag::Cloth)?;
        let pad = T::lit(cfg.triplane_padding);
        let field = |mesh: &TriMesh<T>, rng: &mut R| {
            let (lo, hi) = padded_bbox(&mesh.vertices, pad);
            TriPlaneField::random(cfg.triplane_res, cfg.triplane_channels, lo, hi, cfg.triplane_init_scale, rng)
        };
        let fields = AvatarField { body: field(body_mesh, rng)?, cloth: field(cloth_mesh, rng)? };
        let joints = rig.skeleton.joint_count();
        let decoders = Decoders::init(DecoderShape { feature_len: 3 * cfg.triplane_channels, hidden: &cfg.hidden, joints }, rng);
        let avatar = Self { body, cloth, scene, fields, decoders, rig };
        avatar.validate()?;
        Ok(avatar)
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.rig.skeleton.joint_count();
        for w in [&self.rig.body_weights, &self.rig.cloth_weights] {
            if w.joints() != j {
                return Err(Error::DimensionMismatch { what: "skin weight joints", expected: j, got: w.joints() });
            }
        }
        self.body.check_binding(self.rig.body_weights.rows())?;
        self.cloth.check_binding(self.rig.cloth_weights.rows())?;
        if self.decoders.joints != j || self.decoders.deformation.output_dim() != deformation_dim(j) {
            return Err(Error::DimensionMismatch { what: "deformation head joints", expected: j, got: self.decoders.joints });
        }
        for f in [&self.fields.body, &self.fields.cloth] {
            if self.decoders.appearance.input_dim() != f.feature_len() {
                return Err(Error::DimensionMismatch {
                    what: "decoder input",
                    expected: f.feature_len(),
                    got: self.decoders.appearance.input_dim(),
                });
            }
        }
        Ok(())
    }

    fn layers(&self) -> [&GaussianLayer<T>; 3] {
        [&self.body, &self.cloth, &self.scene]
    }

    fn layers_mut(&mut self) -> [&mut GaussianLayer<T>; 3] {
        [&mut self.body, &mut self.cloth, &mut self.scene]
    }

    /// Number of scalars in each parameter group.
    pub fn group_sizes(&self) -> [usize; 7] {
        let n: usize = self.layers().iter().map(|l| l.len()).sum();
        [
            3 * n,
            4 * n,
            3 * n,
            n,
            3 * SH_COEFFS * n,
            self.fields.body.param_count() + self.fields.cloth.param_count(),
            self.decoders.param_count(),
        ]
    }

    pub fn params(&self) -> GroupGrads<T> {
        let mut g: GroupGrads<T> = Default::default();
        for layer in self.layers() {
            for p in &layer.primitives {
                g[0].extend_from_slice(&p.center.0);
                g[1].extend_from_slice(&p.rotation().0);
                g[2].extend_from_slice(&p.log_scale.0);
                g[3].push(p.opacity_logit);
                g[4].extend(p.sh.iter().flatten());
            }
        }
        self.fields.body.flatten_into(&mut g[5]);
        self.fields.cloth.flatten_into(&mut g[5]);
        self.decoders.flatten_into(&mut g[6]);
        g
    }

    /// Inverse of [`Avatar::params`]; renormalizes rotations and clamps scales.
    pub fn load_params(&mut self, g: &GroupGrads<T>) -> Result<()> {
        let sizes = self.group_sizes();
        for (k, group) in Group::ALL.iter().enumerate() {
            if g[k].len() != sizes[k] {
                return Err(Error::DimensionMismatch { what: group.name(), expected: sizes[k], got: g[k].len() });
            }
        }
        let mut i = 0;
        for layer in self.layers_mut() {
            for p in layer.primitives.iter_mut() {
                p.center = Vec3([g[0][3 * i], g[0][3 * i + 1], g[0][3 * i + 2]]);
                p.set_rotation(crate::math::Quat([g[1][4 * i], g[1][4 * i + 1], g[1][4 * i + 2], g[1][4 * i + 3]]));
                p.log_scale = Vec3([g[2][3 * i], g[2][3 * i + 1], g[2][3 * i + 2]]);
                p.clamp_log_scale();
                p.opacity_logit = g[3][i];
                for (k, c) in p.sh.iter_mut().enumerate() {
                    c.copy_from_slice(&g[4][48 * i + 3 * k..48 * i + 3 * k + 3]);
                }
                i += 1;
            }
        }
        let nb = self.fields.body.param_count();
        self.fields.body.load_flat(&g[5][..nb]);
        self.fields.cloth.load_flat(&g[5][nb..]);
        self.decoders.load_flat(&g[6]);
        Ok(())
    }

    /// Decode, deform and articulate every primitive for `pose`.
    pub fn pose(&self, pose: &Pose<T>) -> Result<Posed<T>> {
        let kinematics = forward_kinematics(&self.rig.skeleton, pose)?;
        let feature = pose_feature(pose);
        let body = self.pose_skinned(&self.body, &self.fields.body, &self.rig.body_weights, &kinematics, &feature)?;
        let cloth = self.pose_skinned(&self.cloth, &self.fields.cloth, &self.rig.cloth_weights, &kinematics, &feature)?;
        let scene = LayerState { world: self.scene.primitives.iter().map(WorldPrimitive::canonical).collect(), weights: Vec::new(), caches: Vec::new() };
        Ok(Posed { body, cloth, scene, kinematics, pose_feature: feature })
    }

    fn pose_skinned(
        &self,
        layer: &GaussianLayer<T>,
        field: &TriPlaneField<T>,
        prior: &SkinWeights<T>,
        kin: &Kinematics<T>,
        feature: &[T],
    ) -> Result<LayerState<T>> {
        let binding = layer.skin_binding().expect("skinned layer has a binding");
        let results: Vec<Result<(WorldPrimitive<T>, SkinnedCache<T>)>> = layer
            .primitives
            .par_iter()
            .zip(binding.par_iter())
            .map(|(p, &row)| self.skinned_forward(p, &prior_logits(prior.row(row)), field, kin, feature))
            .collect();
        let j = self.rig.skeleton.joint_count();
        let mut world = Vec::with_capacity(results.len());
        let mut caches = Vec::with_capacity(results.len());
        let mut weights = Vec::with_capacity(results.len() * j);
        for r in results {
            let (w, c) = r?;
            weights.extend_from_slice(&c.weights);
            world.push(w);
            caches.push(c);
        }
        Ok(LayerState { world, weights, caches })
    }

    fn skinned_forward(
        &self,
        prim: &GaussianPrimitive<T>,
        prior: &[T],
        field: &TriPlaneField<T>,
        kin: &Kinematics<T>,
        feature: &[T],
    ) -> Result<(WorldPrimitive<T>, SkinnedCache<T>)> {
        let j = self.decoders.joints;
        let f = field.sample(&prim.center);
        let (ya, ca) = self.decoders.appearance.forward(&f)?;
        let (yg, cg) = self.decoders.geometry.forward(&f)?;
        let (yd, cd) = self.decoders.deformation.forward(&f)?;

        let mut sh = prim.sh;
        for (k, c) in sh.iter_mut().enumerate() {
            for ch in 0..3 {
                c[ch] = c[ch] + ya[3 * k + ch];
            }
        }
        let opacity = (prim.opacity_logit + ya[3 * SH_COEFFS]).sigmoid();

        let corr = GeometryCorrection::from_raw(&yg);
        let r6 = rot6d_to_matrix(&corr.d_r6)?;
        let rq = prim.rotation_matrix();
        let rdef = rq.mul_mat(&r6);
        let scales = (prim.log_scale + corr.d_s).map(|v| v.exp());
        let center = prim.center + corr.d_mu;

        let logits: Vec<T> = prior.iter().zip(&yd[..j]).map(|(a, b)| *a + *b).collect();
        let weights = softmax(&logits);
        let point = apply_pose_offsets(&center, &yd[j..], feature)?;
        let blend = blend_transforms(&weights, &kin.skinning);
        let frame = blend.linear.mul_mat(&rdef);
        let world = WorldPrimitive { center: blend.apply(&point), cov: scaled_covariance(&frame, &scales), sh, opacity };
        let cache = SkinnedCache { caches: [ca, cg, cd], r6_raw: corr.d_r6, r6, rq, rdef, scales, point, blend, frame, weights };
        Ok((world, cache))
    }

    /// Chain world-space gradients back to every parameter group.
    /// `d_weights` optionally adds gradients on the predicted cloth weights.
    pub fn backward(&self, posed: &Posed<T>, d_world: &[Vec<WorldGrad<T>>; 3], d_cloth_weights: Option<&[T]>) -> Result<GroupGrads<T>> {
        let sizes = self.group_sizes();
        let mut g: GroupGrads<T> = std::array::from_fn(|k| vec![T::zero(); sizes[k]]);
        let nb = self.body.len();
        let nc = self.cloth.len();
        let nb_field = self.fields.body.param_count();
        let (prim_grads, field_grads) = g.split_at_mut(5);
        let (field_grads, dec_grads) = field_grads.split_at_mut(1);
        let (body_field, cloth_field) = field_grads[0].split_at_mut(nb_field);
        let dec = &mut dec_grads[0];

        self.skinned_backward(
            &self.body,
            &self.fields.body,
            &posed.body,
            &posed.kinematics,
            &posed.pose_feature,
            &d_world[0],
            None,
            0,
            prim_grads,
            body_field,
            dec,
        )?;
        self.skinned_backward(
            &self.cloth,
            &self.fields.cloth,
            &posed.cloth,
            &posed.kinematics,
            &posed.pose_feature,
            &d_world[1],
            d_cloth_weights,
            nb,
            prim_grads,
            cloth_field,
            dec,
        )?;
        for (k, (p, d)) in self.scene.primitives.iter().zip(&d_world[2]).enumerate() {
            let i = nb + nc + k;
            let (d_rot, d_scales) = scaled_covariance_backward(&p.rotation_matrix(), &p.scales(), &d.cov);
            let dq = p.rotation().to_matrix_backward(&d_rot);
            let s = p.scales();
            write_primitive_grads(prim_grads, i, d.center, dq, d_scales.hadamard(&s), d.opacity * p.opacity() * (T::one() - p.opacity()), &d.sh);
        }
        Ok(g)
    }

    #[allow(clippy::too_many_arguments)]
    fn skinned_backward(
        &self,
        layer: &GaussianLayer<T>,
        field: &TriPlaneField<T>,
        state: &LayerState<T>,
        kin: &Kinematics<T>,
        feature: &[T],
        d_world: &[WorldGrad<T>],
        d_weights: Option<&[T]>,
        offset: usize,
        prim_grads: &mut [Vec<T>],
        field_grad: &mut [T],
        dec_grad: &mut [T],
    ) -> Result<()> {
        let j = self.decoders.joints;
        let n = layer.len();
        let [_, og, od] = self.decoders.offsets();
        let dec_len = self.decoders.param_count();
        let chunks: Vec<(usize, usize)> = (0..n).step_by(CHUNK).map(|s| (s, (s + CHUNK).min(n))).collect();

        type ChunkOut<T> = (Vec<PrimGrad<T>>, Vec<T>, Vec<T>);
        let outs: Vec<Result<ChunkOut<T>>> = chunks
            .par_iter()
            .map(|&(s, e)| {
                let mut fgrad = vec![T::zero(); field.param_count()];
                let mut dgrad = vec![T::zero(); dec_len];
                let mut pgrads = Vec::with_capacity(e - s);
                for i in s..e {
                    let prim = &layer.primitives[i];
                    let c = &state.caches[i];
                    let d = &d_world[i];
                    let (dk, ds) = scaled_covariance_backward(&c.frame, &c.scales, &d.cov);
                    let d_linear = dk.mul_mat(&c.rdef.transpose()) + d.center.outer(&c.point);
                    let d_rdef = c.blend.linear.transpose().mul_mat(&dk);
                    let d_point = c.blend.linear.transpose().mul_vec(&d.center);
                    let mut dw = blend_transforms_backward(&kin.skinning, &d_linear, &d.center);
                    if let Some(extra) = d_weights {
                        for (a, b) in dw.iter_mut().zip(&extra[i * j..(i + 1) * j]) {
                            *a = *a + *b;
                        }
                    }
                    let mut yd = softmax_backward(&c.weights, &dw);
                    yd.reserve(3 * feature.len());
                    for f in feature {
                        for a in 0..3 {
                            yd.push(*f * d_point[a]);
                        }
                    }
                    let d_rq = d_rdef.mul_mat(&c.r6.transpose());
                    let d_r6 = c.rq.transpose().mul_mat(&d_rdef);
                    let dr6 = rot6d_backward(&c.r6_raw, &d_r6)?;
                    let d_log_scale = ds.hadamard(&c.scales);
                    let mut yg = vec![T::zero(); GEOMETRY_DIM];
                    yg[..3].copy_from_slice(&d_point.0);
                    yg[3..9].copy_from_slice(&dr6);
                    yg[9..].copy_from_slice(&d_log_scale.0);

                    let o = d.opacity;
                    let opacity = state.world[i].opacity;
                    let d_logit = o * opacity * (T::one() - opacity);
                    let mut ya = vec![T::zero(); APPEARANCE_DIM];
                    for (k, cc) in d.sh.iter().enumerate() {
                        ya[3 * k..3 * k + 3].copy_from_slice(cc);
                    }
                    ya[3 * SH_COEFFS] = d_logit;

                    let dfa = self.decoders.appearance.backward_accumulate(&c.caches[0], &ya, &mut dgrad[..og]);
                    let dfg = self.decoders.geometry.backward_accumulate(&c.caches[1], &yg, &mut dgrad[og..od]);
                    let dfd = self.decoders.deformation.backward_accumulate(&c.caches[2], &yd, &mut dgrad[od..]);
                    let df: Vec<T> = dfa.iter().zip(&dfg).zip(&dfd).map(|((a, b), c)| *a + *b + *c).collect();
                    field.accumulate_backward(&prim.center, &df, &mut fgrad);
                    let d_center = d_point + field.sample_point_grad(&prim.center, &df);

                    let dq = prim.rotation().to_matrix_backward(&d_rq);
                    pgrads.push(PrimGrad { center: d_center, rotation: dq, log_scale: d_log_scale, opacity_logit: d_logit, sh: d.sh });
                }
                Ok((pgrads, fgrad, dgrad))
            })
            .collect();

        let mut i = offset;
        for out in outs {
            let (pgrads, fgrad, dgrad) = out?;
            for p in pgrads {
                write_primitive_grads(prim_grads, i, p.center, p.rotation, p.log_scale, p.opacity_logit, &p.sh);
                i += 1;
            }
            for (a, b) in field_grad.iter_mut().zip(&fgrad) {
                *a = *a + *b;
            }
            for (a, b) in dec_grad.iter_mut().zip(&dgrad) {
                *a = *a + *b;
            }
        }
        Ok(())
    }
}

struct PrimGrad<T> {
    center: Vec3<T>,
    rotation: [T; 4],
    log_scale: Vec3<T>,
    opacity_logit: T,
    sh: ShCoeffs<T>,
}

fn write_primitive_grads<T: Real>(
    g: &mut [Vec<T>],
    i: usize,
    center: Vec3<T>,
    rotation: [T; 4],
    log_scale: Vec3<T>,
    opacity_logit: T,
    sh: &ShCoeffs<T>,
) {
    g[0][3 * i..3 * i + 3].copy_from_slice(&center.0);
    g[1][4 * i..4 * i + 4].copy_from_slice(&rotation);
    g[2][3 * i..3 * i + 3].copy_from_slice(&log_scale.0);
    g[3][i] = opacity_logit;
    for (k, c) in sh.iter().enumerate() {
        g[4][48 * i + 3 * k..48 * i + 3 * k + 3].copy_from_slice(c);
    }
}

/// Articulate a layer with fixed weights and optional rest-space offsets,
/// bypassing the decoders.
pub fn pose_layer_direct<T: Real>(
    layer: &GaussianLayer<T>,
    weights: &SkinWeights<T>,
    kin: &Kinematics<T>,
    offsets: Option<&[Vec3<T>]>,
) -> Result<Vec<WorldPrimitive<T>>> {
    let Some(binding) = layer.skin_binding() else {
        return Ok(layer.primitives.iter().map(WorldPrimitive::canonical).collect());
    };
    layer.check_binding(weights.rows())?;
    if let Some(o) = offsets {
        if o.len() != layer.len() {
            return Err(Error::DimensionMismatch { what: "rest offsets", expected: layer.len(), got: o.len() });
        }
    }
    Ok(layer
        .primitives
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let b = blend_transforms(weights.row(binding[i]), &kin.skinning);
            let rest = offsets.map_or(p.center, |o| p.center + o[i]);
            let frame = b.linear.mul_mat(&p.rotation_matrix());
            WorldPrimitive { center: b.apply(&rest), cov: scaled_covariance(&frame, &p.scales()), sh: p.sh, opacity: p.opacity() }
        })
        .collect())
}

/// Projected splats of one layer and the primitive each came from.
#[derive(Clone, Debug, Default)]
pub struct LayerSplats<T> {
    pub splats: Vec<Splat2D<T>>,
    pub source: Vec<usize>,
}

pub fn splat_layer<T: Real>(world: &[WorldPrimitive<T>], cam: &Camera<T>) -> LayerSplats<T> {
    let eye = cam.center();
    let mut out = LayerSplats::default();
    for (i, w) in world.iter().enumerate() {
        if let Some(p) = project(&w.center, &w.cov, cam) {
            let color = eval_sh_dir(&w.sh, &(w.center - eye));
            out.splats.push(Splat2D::from_projection(&p, color, w.opacity));
            out.source.push(i);
        }
    }
    out
}

/// Everything produced by the three render passes and the final composite.
pub struct FrameRender<T> {
    pub body: LayerSplats<T>,
    pub cloth: LayerSplats<T>,
    pub scene: LayerSplats<T>,
    pub base: RenderOutput<T>,
    pub cloth_pass: RenderOutput<T>,
    pub matte_pass: RenderOutput<T>,
    pub matte: Matte<T>,
    pub final_image: Image<T>,
    matte_body: bool,
}

pub fn render_frame<T: Real>(
    body: &[WorldPrimitive<T>],
    cloth: &[WorldPrimitive<T>],
    scene: &[WorldPrimitive<T>],
    cam: &Camera<T>,
    background: [T; 3],
    matte_includes_body: bool,
) -> Result<FrameRender<T>> {
    let body = splat_layer(body, cam);
    let cloth = splat_layer(cloth, cam);
    let scene = splat_layer(scene, cam);
    let (w, h) = (cam.width, cam.height);
    let mut base_list = body.splats.clone();
    base_list.extend_from_slice(&scene.splats);
    let base = rasterize(&base_list, background, w, h);
    let cloth_pass = rasterize(&cloth.splats, [T::zero(); 3], w, h);
    let occluding_body = matte_includes_body.then_some(body.splats.as_slice());
    let matte_pass = rasterize(&matte_splats(&cloth.splats, &scene.splats, occluding_body), [T::zero(); 3], w, h);
    let matte = Matte { values: matte_pass.rgb.channel(0) };
    let final_image = composite_final(&cloth_pass.rgb, &base.rgb, &matte)?;
    Ok(FrameRender { body, cloth, scene, base, cloth_pass, matte_pass, matte, final_image, matte_body: matte_includes_body })
}

/// Reverse of [`render_frame`] for gradients on the final image and on the
/// matte; returns per-primitive world gradients for body, cloth and scene.
pub fn render_frame_backward<T: Real>(
    r: &FrameRender<T>,
    world: [&[WorldPrimitive<T>]; 3],
    cam: &Camera<T>,
    d_final: &Image<T>,
    d_matte: Option<&Image<T>>,
) -> Result<[Vec<WorldGrad<T>>; 3]> {
    let cg = composite_final_backward(&r.cloth_pass.rgb, &r.base.rgb, &r.matte, d_final)?;
    let mut dm = cg.matte;
    if let Some(extra) = d_matte {
        extra.check_same_shape(&dm)?;
        for (a, b) in dm.data.iter_mut().zip(&extra.data) {
            *a = *a + *b;
        }
    }
    let mut out: [Vec<WorldGrad<T>>; 3] = std::array::from_fn(|k| vec![WorldGrad::zero(); world[k].len()]);
    let layers = [&r.body, &r.cloth, &r.scene];
    let eye = cam.center();

    let mut base_list = r.body.splats.clone();
    base_list.extend_from_slice(&r.scene.splats);
    let g_base = rasterize_backward(&base_list, &r.base, &cg.base);
    let nb = r.body.splats.len();
    let g_cloth = rasterize_backward(&r.cloth.splats, &r.cloth_pass, &cg.cloth);
    let ncl = r.cloth.splats.len();
    let ns = r.scene.splats.len();
    let matte_list = matte_splats(&r.cloth.splats, &r.scene.splats, r.matte_body.then_some(r.body.splats.as_slice()));
    let mut g_matte = rasterize_backward(&matte_list, &r.matte_pass, &matte_upstream(&dm));
    // matte colours are constants
    g_matte.iter_mut().for_each(|g| g.color = [T::zero(); 3]);

    let mut splat_grads: [Vec<Splat2DGrad<T>>; 3] = [g_base[..nb].to_vec(), g_cloth, g_base[nb..].to_vec()];
    let add = |dst: &mut [Splat2DGrad<T>], src: &[Splat2DGrad<T>]| {
        for (a, b) in dst.iter_mut().zip(src) {
            for k in 0..2 {
                a.mean2d[k] = a.mean2d[k] + b.mean2d[k];
            }
            for k in 0..3 {
                a.cov2d[k] = a.cov2d[k] + b.cov2d[k];
            }
            a.alpha_base = a.alpha_base + b.alpha_base;
        }
    };
    add(&mut splat_grads[1], &g_matte[..ncl]);
    add(&mut splat_grads[2], &g_matte[ncl..ncl + ns]);
    if r.matte_body {
        add(&mut splat_grads[0], &g_matte[ncl + ns..]);
    }

    for k in 0..3 {
        for (sg, &i) in splat_grads[k].iter().zip(&layers[k].source) {
            let w = &world[k][i];
            let (d_center, d_cov) = project_backward(&w.center, &w.cov, cam, sg.mean2d, sg.cov2d);
            let shg = eval_sh_dir_backward(&w.sh, &(w.center - eye), &sg.color);
            let o = &mut out[k][i];
            o.center = d_center + shg.dir;
            o.cov = d_cov;
            o.sh = shg.coeffs;
            o.opacity = sg.alpha_base;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{Quat, Rigid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_rig() -> Rig<f64> {
        let skel = Skeleton::new(
            vec![None, Some(0)],
            vec![Rigid::from_translation(Vec3::new(0.0, 0.0, 0.0)), Rigid::from_translation(Vec3::new(0.0, 0.5, 0.0))],
        )
        .unwrap();
        let body = SkinWeights::new(4, 2, vec![1.0, 0.0, 0.7, 0.3, 0.2, 0.8, 0.0, 1.0]).unwrap();
        let cloth = SkinWeights::new(4, 2, vec![0.5, 0.5, 0.9, 0.1, 0.3, 0.7, 0.6, 0.4]).unwrap();
        Rig { skeleton: skel, body_weights: body, cloth_weights: cloth }
    }

    fn tetra(offset: f64) -> TriMesh<f64> {
        TriMesh::from_faces(
            vec![
                Vec3::new(offset, 0.0, 0.0),
                Vec3::new(offset + 0.3, 0.0, 0.0),
                Vec3::new(offset, 0.3, 0.0),
                Vec3::new(offset, 0.0, 0.3),
            ],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
        .unwrap()
    }

    fn tiny_avatar() -> Avatar<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scene = GaussianLayer::new(
            LayerTag::Scene,
            vec![GaussianPrimitive::new(Vec3::new(0.0, 0.0, 1.0), Quat::identity(), Vec3::splat(-2.0), 0.0, zero_coeffs())],
        );
        let cfg = ModelConfig { triplane_res: 4, triplane_channels: 2, hidden: vec![5], ..Default::default() };
        Avatar::init(&tetra(0.0), &tetra(0.1), scene, tiny_rig(), &cfg, &mut rng).unwrap()
    }

    #[test]
    fn params_roundtrip() {
        let a = tiny_avatar();
        let p = a.params();
        assert_eq!(p.iter().map(Vec::len).collect::<Vec<_>>(), a.group_sizes().to_vec());
        let mut b = a.clone();
        b.load_params(&p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rest_pose_matches_direct_posing() {
        let a = tiny_avatar();
        let posed = a.pose(&Pose::rest(2)).unwrap();
        let kin = forward_kinematics(&a.rig.skeleton, &Pose::rest(2)).unwrap();
        let direct = pose_layer_direct(&a.body, &a.rig.body_weights, &kin, None).unwrap();
        assert_eq!(posed.body.world, direct);
        let canonical: Vec<_> = a.body.primitives.iter().map(WorldPrimitive::canonical).collect();
        assert_eq!(posed.body.world, canonical);
    }
}
