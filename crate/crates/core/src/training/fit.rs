use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{
    arap_loss, chamfer_sim_loss, cloth_lbs_loss, l1_loss, mask_loss, ssim_loss, weighted_total, LossParts, LossWeights,
    PerceptualPlugin,
};
use crate::math::Vec3;
use crate::renderer::Camera;
use crate::scalar::Real;
use crate::skeleton::Pose;

use super::avatar::{render_frame, render_frame_backward, Avatar, FrameRender, GroupGrads, Rig};
use super::checkpoint::Checkpoint;
use super::config::Config;
use super::metrics::{mse, psnr, ssim_metric};
use super::optim::{OptimizerState, ScheduleSpec};
use super::synth::{Frame, SyntheticScene};

pub const CSV_HEADER: &str = "iteration,frame,l1,ssim,lpips,sim,arap,mask,cloth_lbs,total";
pub const CHECKPOINT_FILE: &str = "checkpoint.lsck";
pub const LOSS_FILE: &str = "loss.csv";

/// Stream ids keep avatar initialisation and frame sampling independent.
const INIT_STREAM: u64 = 1;
const SAMPLER_STREAM: u64 = 2;

pub struct StepOutput<T> {
    pub parts: LossParts<T>,
    pub total: T,
    pub grads: GroupGrads<T>,
    pub render: FrameRender<T>,
}

/// Loss terms and parameter gradients for one frame. Terms with zero weight
/// are neither evaluated nor differentiated.
pub fn compute_step<T: Real>(
    avatar: &Avatar<T>,
    frame: &Frame<T>,
    cfg: &Config,
    lpips: &PerceptualPlugin<T>,
) -> Result<StepOutput<T>> {
    let w = LossWeights::<T>::from_config(&cfg.losses);
    let on = |x: T| x != T::zero();
    let posed = avatar.pose(&frame.pose)?;
    let cam = &frame.camera;
    let bg = cfg.train.background.map(T::lit);
    let render = render_frame(&posed.body.world, &posed.cloth.world, &posed.scene.world, cam, bg, cfg.model.matte_includes_body)?;

    let mut parts = LossParts::<T>::default();
    let img = &render.final_image;
    let mut d_final = Image::new(img.width, img.height, img.channels);
    let add_image = |dst: &mut Image<T>, g: &Image<T>, s: T| {
        for (a, b) in dst.data.iter_mut().zip(&g.data) {
            *a = *a + s * *b;
        }
    };
    if on(w.l1) {
        let (v, g) = l1_loss(img, &frame.image)?;
        parts.l1 = v;
        add_image(&mut d_final, &g, w.l1);
    }
    if on(w.ssim) {
        let (v, g) = ssim_loss(img, &frame.image, &cfg.losses)?;
        parts.ssim = v;
        add_image(&mut d_final, &g, w.ssim);
    }
    if on(w.lpips) {
        if let Some(p) = lpips {
            let (v, g) = p.evaluate(img, &frame.image)?;
            parts.lpips = v;
            add_image(&mut d_final, &g, w.lpips);
        }
    }
    let mut d_matte = Image::new(img.width, img.height, 1);
    if on(w.mask) {
        let (v, g) = mask_loss(&render.matte.values, &frame.mask)?;
        parts.mask = v;
        add_image(&mut d_matte, &g, w.mask);
    }

    let centers: Vec<Vec3<T>> = posed.cloth.world.iter().map(|p| p.center).collect();
    let mut d_centers = vec![Vec3::zero(); centers.len()];
    if on(w.sim) {
        let out = chamfer_sim_loss(&centers, &frame.cloth_mesh.vertices, &cfg.losses)?;
        parts.sim = out.value;
        for (d, g) in d_centers.iter_mut().zip(&out.grad_pred) {
            *d += g.scale(w.sim);
        }
    }
    if on(w.arap) {
        let (v, g) = arap_loss(&centers, &frame.cloth_mesh.edges)?;
        parts.arap = v;
        for (d, g) in d_centers.iter_mut().zip(&g) {
            *d += g.scale(w.arap);
        }
    }
    let mut d_weights = None;
    if on(w.cloth_lbs) {
        let (v, g) = cloth_lbs_loss(&posed.cloth.weights, avatar.rig.cloth_weights.as_slice())?;
        parts.cloth_lbs = v;
        d_weights = Some(g.into_iter().map(|x| x * w.cloth_lbs).collect::<Vec<T>>());
    }
    let total = weighted_total(&parts, &w);

    let mut d_world = render_frame_backward(
        &render,
        [&posed.body.world, &posed.cloth.world, &posed.scene.world],
        cam,
        &d_final,
        Some(&d_matte),
    )?;
    for (g, d) in d_world[1].iter_mut().zip(&d_centers) {
        g.center += *d;
    }
    let grads = avatar.backward(&posed, &d_world, d_weights.as_deref())?;
    Ok(StepOutput { parts, total, grads, render })
}

/// Avatar at iteration 0: every layer starts mid-gray, and the scene layer
/// keeps its ground-truth geometry.
pub fn initial_avatar(scene: &SyntheticScene<f64>, cfg: &Config) -> Result<Avatar<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(INIT_STREAM);
    let rig = Rig {
        skeleton: scene.skeleton.clone(),
        body_weights: scene.body_weights.clone(),
        cloth_weights: scene.cloth_weights.clone(),
    };
    let uncoloured = |m: &crate::mesh::TriMesh<f64>| crate::mesh::TriMesh { colors: None, ..m.clone() };
    Avatar::init(&uncoloured(&scene.body_mesh), &uncoloured(&scene.cloth_mesh), scene.initial_scene(), rig, &cfg.model, &mut rng)
}

pub fn initial_optimizer(avatar: &Avatar<f64>, cfg: &Config) -> OptimizerState {
    let o = &cfg.optim;
    let horizon = if o.lr_position_horizon == 0 { cfg.train.iterations } else { o.lr_position_horizon };
    let schedules = [
        ScheduleSpec { lr_init: o.lr_position_init, lr_final: o.lr_position_final, horizon },
        ScheduleSpec::constant(o.lr_rotation),
        ScheduleSpec::constant(o.lr_scale),
        ScheduleSpec::constant(o.lr_opacity),
        ScheduleSpec::constant(o.lr_sh),
        ScheduleSpec::constant(o.lr_triplane),
        ScheduleSpec::constant(o.lr_decoder),
    ];
    OptimizerState::new(avatar.group_sizes(), schedules, o.beta1, o.beta2, o.eps)
}

pub fn initial_checkpoint(scene: &SyntheticScene<f64>, cfg: &Config) -> Result<Checkpoint> {
    let avatar = initial_avatar(scene, cfg)?;
    let optimizer = initial_optimizer(&avatar, cfg);
    let mut sampler = ChaCha8Rng::seed_from_u64(cfg.seed);
    sampler.set_stream(SAMPLER_STREAM);
    Ok(Checkpoint { config: cfg.clone(), iteration: 0, avatar, optimizer, sampler })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub iteration: usize,
    pub frame: usize,
    pub parts: LossParts<f64>,
    pub total: f64,
}

impl LossRow {
    pub fn to_csv(&self) -> String {
        let p = &self.parts;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iteration, self.frame, p.l1, p.ssim, p.lpips, p.sim, p.arap, p.mask, p.cloth_lbs, self.total
        )
    }
}

pub struct FitOutcome {
    pub checkpoint: Checkpoint,
    pub rows: Vec<LossRow>,
}

/// Run the configured number of iterations from `start`. With `out_dir`, the
/// loss CSV and checkpoint are written there; on a non-finite loss or
/// gradient the last good state is saved before the error is returned.
pub fn fit_from(
    scene: &SyntheticScene<f64>,
    start: Checkpoint,
    out_dir: Option<&Path>,
    lpips: &PerceptualPlugin<f64>,
) -> Result<FitOutcome> {
    let cfg = start.config.clone();
    let mut state = start;
    let mut csv = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(LOSS_FILE);
            let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
            writeln!(w, "{CSV_HEADER}").map_err(|e| Error::io(&path, e))?;
            Some((w, path))
        }
        None => None,
    };
    let save = |state: &Checkpoint| -> Result<()> {
        match out_dir {
            Some(dir) => state.save(&dir.join(CHECKPOINT_FILE)),
            None => Ok(()),
        }
    };
    let mut rows = Vec::with_capacity(cfg.train.iterations);
    let mut params = state.avatar.params();
    while (state.iteration as usize) < cfg.train.iterations {
        let it = state.iteration as usize;
        let mut sampler = state.sampler.clone();
        let fi = sampler.gen_range(0..scene.frames.len());
        let step = compute_step(&state.avatar, &scene.frames[fi], &cfg, lpips)?;
        let row = LossRow { iteration: it, frame: fi, parts: step.parts, total: step.total };
        if let Some((w, path)) = csv.as_mut() {
            writeln!(w, "{}", row.to_csv()).map_err(|e| Error::io(&*path, e))?;
        }
        rows.push(row);
        if !step.total.is_finite() {
            save(&state)?;
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        let mut optimizer = state.optimizer.clone();
        if let Err(e) = optimizer.step(&mut params, &step.grads) {
            save(&state)?;
            return Err(e);
        }
        state.avatar.load_params(&params)?;
        params = state.avatar.params();
        state.optimizer = optimizer;
        state.sampler = sampler;
        state.iteration += 1;
        if cfg.train.checkpoint_every > 0 && state.iteration as usize % cfg.train.checkpoint_every == 0 {
            save(&state)?;
        }
    }
    if let Some((mut w, path)) = csv {
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    save(&state)?;
    Ok(FitOutcome { checkpoint: state, rows })
}

pub fn fit(scene: &SyntheticScene<f64>, cfg: &Config, out_dir: Option<&Path>, lpips: &PerceptualPlugin<f64>) -> Result<FitOutcome> {
    cfg.validate()?;
    fit_from(scene, initial_checkpoint(scene, cfg)?, out_dir, lpips)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViewMetrics {
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub mask_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_mask_mse: f64,
}

impl EvalReport {
    pub fn from_views(views: Vec<ViewMetrics>) -> Self {
        let n = views.len().max(1) as f64;
        let mean = |f: fn(&ViewMetrics) -> f64| views.iter().map(f).sum::<f64>() / n;
        Self { mean_psnr: mean(|v| v.psnr), mean_ssim: mean(|v| v.ssim), mean_mask_mse: mean(|v| v.mask_mse), views }
    }
}

/// Metrics of the avatar's final image and matte on the given frames.
pub fn evaluate(avatar: &Avatar<f64>, frames: &[Frame<f64>], cfg: &Config) -> Result<EvalReport> {
    let mut views = Vec::with_capacity(frames.len());
    for f in frames {
        let r = render_avatar(avatar, f, cfg)?;
        views.push(ViewMetrics {
            frame: f.index,
            psnr: psnr(&r.final_image, &f.image)?,
            ssim: ssim_metric(&r.final_image, &f.image)?,
            mask_mse: mse(&r.matte.values, &f.mask)?,
        });
    }
    Ok(EvalReport::from_views(views))
}

pub fn render_avatar<T: Real>(avatar: &Avatar<T>, frame: &Frame<T>, cfg: &Config) -> Result<FrameRender<T>> {
    render_avatar_at(avatar, &frame.pose, &frame.camera, cfg)
}

/// All render passes of the avatar in an arbitrary pose and view.
pub fn render_avatar_at<T: Real>(avatar: &Avatar<T>, pose: &Pose<T>, camera: &Camera<T>, cfg: &Config) -> Result<FrameRender<T>> {
    let posed = avatar.pose(pose)?;
    render_frame(
        &posed.body.world,
        &posed.cloth.world,
        &posed.scene.world,
        camera,
        cfg.train.background.map(T::lit),
        cfg.model.matte_includes_body,
    )
}
