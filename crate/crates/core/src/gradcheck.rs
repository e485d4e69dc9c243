//! Analytic gradients against central finite differences, at `f64`.
//!
//! Each check draws seeded random instances. The error of one instance is
//! `‖a − n‖ / max(‖a‖, ‖n‖, 1e-12)` over the whole gradient vector; a check
//! passes when the worst instance stays under its tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::decoders::{rot6d_backward, rot6d_to_matrix, Mlp, MlpShape};
use crate::error::Result;
use crate::gaussians::{eval_sh_dir, eval_sh_dir_backward, scaled_covariance, scaled_covariance_backward, ShCoeffs, SH_COEFFS};
use crate::image::Image;
use crate::losses::{
    arap_loss, chamfer_sim_loss_with, cloth_lbs_loss, l1_loss, mask_loss, ssim_loss, LossConfig, LossWeights,
};
use crate::math::{Mat3, Quat, Vec3};
use crate::renderer::{contribution_signature, project, project_backward, rasterize, rasterize_backward, Camera, Splat2D};
use crate::scalar::Real;
use crate::spatial::NnStrategy;
use crate::triplane::TriPlaneField;

pub const FD_STEP: f64 = 1e-5;
pub const LOSS_TOLERANCE: f64 = 1e-4;
pub const PIPELINE_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_INSTANCES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    /// Instances redrawn because a perturbation crossed a branch of the renderer.
    pub redrawn: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl GradReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    diff / norm(analytic).max(norm(numeric)).max(1e-12)
}

/// Central differences of `f` at `x` along every coordinate.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let a = f(&p);
            p[i] = x[i] - h;
            let b = f(&p);
            p[i] = x[i];
            (a - b) / (2.0 * h)
        })
        .collect()
}

pub const CHECK_NAMES: [&str; 10] =
    ["l1", "ssim", "chamfer_gm", "arap", "mask", "cloth_lbs", "triplane", "mlp_heads", "rot6d", "splat_pipeline"];

/// Run every check with `instances` random draws each.
pub fn run_suite(seed: u64, instances: usize) -> Result<GradReport> {
    let checks = CHECK_NAMES.iter().enumerate().map(|(k, name)| run_check(name, seed, k as u64, instances)).collect::<Result<_>>()?;
    Ok(GradReport { seed, checks })
}

pub fn run_check(name: &str, seed: u64, stream: u64, instances: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut worst: f64 = 0.0;
    let mut redrawn = 0;
    let tolerance = if name == "splat_pipeline" { PIPELINE_TOLERANCE } else { LOSS_TOLERANCE };
    let mut done = 0;
    while done < instances {
        let e = match name {
            "l1" => Some(check_l1(&mut rng)?),
            "ssim" => Some(check_ssim(&mut rng)?),
            "chamfer_gm" => Some(check_chamfer(&mut rng)?),
            "arap" => Some(check_arap(&mut rng)?),
            "mask" => Some(check_mask(&mut rng)?),
            "cloth_lbs" => Some(check_cloth_lbs(&mut rng)?),
            "triplane" => Some(check_triplane(&mut rng)?),
            "mlp_heads" => Some(check_mlp(&mut rng)?),
            "rot6d" => Some(check_rot6d(&mut rng)?),
            "splat_pipeline" => check_splat_pipeline(&mut rng)?,
            other => return Err(crate::Error::InvalidConfig(format!("unknown gradient check `{other}`"))),
        };
        match e {
            Some(e) => {
                worst = worst.max(e);
                done += 1;
            }
            None => {
                redrawn += 1;
                if redrawn > 20 * instances.max(1) {
                    return Err(crate::Error::InvalidConfig(format!("{name}: could not draw smooth instances")));
                }
            }
        }
    }
    Ok(CheckResult { name: name.to_string(), instances, redrawn, max_rel_err: worst, tolerance, passed: worst < tolerance })
}

fn image_with(w: usize, h: usize, c: usize, mut f: impl FnMut(usize) -> f64) -> Image<f64> {
    let mut img = Image::new(w, h, c);
    img.data.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
    img
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image<f64> {
    image_with(w, h, c, |_| rng.gen_range(0.0..1.0))
}

fn with_data(shape: &Image<f64>, data: &[f64]) -> Image<f64> {
    Image { data: data.to_vec(), ..shape.clone() }
}

fn random_vec(rng: &mut ChaCha8Rng, s: f64) -> Vec3<f64> {
    Vec3::new(rng.gen_range(-s..s), rng.gen_range(-s..s), rng.gen_range(-s..s))
}

fn flatten(v: &[Vec3<f64>]) -> Vec<f64> {
    v.iter().flat_map(|p| p.0).collect()
}

fn unflatten(x: &[f64]) -> Vec<Vec3<f64>> {
    x.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

fn check_l1(rng: &mut ChaCha8Rng) -> Result<f64> {
    let gt = random_image(rng, 6, 5, 3);
    // keep every residual away from the kink at zero
    let img = image_with(6, 5, 3, |i| {
        let s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        gt.data[i] + s * rng.gen_range(0.01..0.3)
    });
    let (_, g) = l1_loss(&img, &gt)?;
    let n = central_diff(&img.data, FD_STEP, |d| l1_loss(&with_data(&img, d), &gt).unwrap().0);
    Ok(rel_err(&g.data, &n))
}

fn check_ssim(rng: &mut ChaCha8Rng) -> Result<f64> {
    let gt = random_image(rng, 12, 12, 3);
    let img = random_image(rng, 12, 12, 3);
    let cfg = LossConfig::default();
    let (_, g) = ssim_loss(&img, &gt, &cfg)?;
    let n = central_diff(&img.data, FD_STEP, |d| ssim_loss(&with_data(&img, d), &gt, &cfg).unwrap().0);
    Ok(rel_err(&g.data, &n))
}

fn check_chamfer(rng: &mut ChaCha8Rng) -> Result<f64> {
    let pred: Vec<_> = (0..8).map(|_| random_vec(rng, 1.0)).collect();
    let gt: Vec<_> = (0..10).map(|_| random_vec(rng, 1.0)).collect();
    let sigma = rng.gen_range(0.2..1.0);
    let out = chamfer_sim_loss_with(&pred, &gt, sigma, NnStrategy::BruteForce)?;
    let mut a = flatten(&out.grad_pred);
    a.extend(flatten(&out.grad_gt));
    let mut x = flatten(&pred);
    x.extend(flatten(&gt));
    let n = central_diff(&x, FD_STEP, |x| {
        chamfer_sim_loss_with(&unflatten(&x[..24]), &unflatten(&x[24..]), sigma, NnStrategy::BruteForce).unwrap().value
    });
    Ok(rel_err(&a, &n))
}

fn check_arap(rng: &mut ChaCha8Rng) -> Result<f64> {
    let v: Vec<_> = (0..8).map(|_| random_vec(rng, 1.0)).collect();
    let mut edges: Vec<(usize, usize)> = (0..7).map(|i| (i, i + 1)).collect();
    for _ in 0..5 {
        let a = rng.gen_range(0..8);
        let b = rng.gen_range(0..8);
        if a != b {
            edges.push((a.min(b), a.max(b)));
        }
    }
    let (_, g) = arap_loss(&v, &edges)?;
    let n = central_diff(&flatten(&v), FD_STEP, |x| arap_loss(&unflatten(x), &edges).unwrap().0);
    Ok(rel_err(&flatten(&g), &n))
}

fn check_mask(rng: &mut ChaCha8Rng) -> Result<f64> {
    let matte = random_image(rng, 7, 6, 1);
    let gt = image_with(7, 6, 1, |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
    let (_, g) = mask_loss(&matte, &gt)?;
    let n = central_diff(&matte.data, FD_STEP, |d| mask_loss(&with_data(&matte, d), &gt).unwrap().0);
    Ok(rel_err(&g.data, &n))
}

fn check_cloth_lbs(rng: &mut ChaCha8Rng) -> Result<f64> {
    let pred: Vec<f64> = (0..5 * 4).map(|_| rng.gen_range(0.0..1.0)).collect();
    let gt: Vec<f64> = (0..5 * 4).map(|_| rng.gen_range(0.0..1.0)).collect();
    let (_, g) = cloth_lbs_loss(&pred, &gt)?;
    let n = central_diff(&pred, FD_STEP, |p| cloth_lbs_loss(p, &gt).unwrap().0);
    Ok(rel_err(&g, &n))
}

fn check_triplane(rng: &mut ChaCha8Rng) -> Result<f64> {
    let lo = Vec3::new(-1.0, -0.5, -0.8);
    let hi = Vec3::new(1.0, 0.7, 0.6);
    let mut field = TriPlaneField::random(5, 3, lo, hi, 1.0, rng)?;
    let p = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.7), rng.gen_range(-0.8..0.6));
    let up: Vec<f64> = (0..field.feature_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut dense = vec![0.0; field.param_count()];
    field.accumulate_backward(&p, &up, &mut dense);
    let mut flat = Vec::new();
    field.flatten_into(&mut flat);
    let n = central_diff(&flat, FD_STEP, |x| {
        field.load_flat(x);
        field.sample(&p).iter().zip(&up).map(|(a, b)| a * b).sum()
    });
    Ok(rel_err(&dense, &n))
}

fn check_mlp(rng: &mut ChaCha8Rng) -> Result<f64> {
    let input = rng.gen_range(3..7);
    let hidden = [rng.gen_range(4..9), rng.gen_range(4..9)];
    let output = rng.gen_range(2..6);
    let mut mlp = Mlp::<f64>::init(MlpShape { input, hidden: &hidden, output }, rng);
    // the output layer starts at zero; give it random weights too
    for l in mlp.layers.iter_mut() {
        l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|w| *w = rng.gen_range(-0.8..0.8));
    }
    let x: Vec<f64> = (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let up: Vec<f64> = (0..output).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (_, cache) = mlp.forward(&x)?;
    let (dp, dx) = mlp.backward(&cache, &up);
    let mut flat = Vec::new();
    mlp.flatten_into(&mut flat);
    let dot = |y: Vec<f64>| y.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
    let nx = central_diff(&x, FD_STEP, |x| dot(mlp.forward(x).unwrap().0));
    let np = central_diff(&flat, FD_STEP, |p| {
        let mut m = mlp.clone();
        m.load_flat(p);
        dot(m.forward(&x).unwrap().0)
    });
    Ok(rel_err(&dx, &nx).max(rel_err(&dp, &np)))
}

fn check_rot6d(rng: &mut ChaCha8Rng) -> Result<f64> {
    let r6: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    let g = Mat3(std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))));
    let a = rot6d_backward(&r6, &g)?;
    let n = central_diff(&r6, FD_STEP, |x| {
        let x: [f64; 6] = x.try_into().unwrap();
        rot6d_to_matrix(&x).unwrap().frobenius_dot(&g)
    });
    Ok(rel_err(&a, &n))
}

const PIPE_SPLATS: usize = 5;
const PIPE_FLOATS: usize = 3 + 4 + 3 + 1 + 3 * SH_COEFFS;
const PIPE_SIZE: usize = 16;

struct PipePrim {
    center: Vec3<f64>,
    q: Quat<f64>,
    log_scale: Vec3<f64>,
    logit: f64,
    sh: ShCoeffs<f64>,
}

fn unpack(x: &[f64]) -> Vec<PipePrim> {
    x.chunks(PIPE_FLOATS)
        .map(|f| {
            let mut sh = [[0.0; 3]; SH_COEFFS];
            for (k, c) in sh.iter_mut().enumerate() {
                c.copy_from_slice(&f[11 + 3 * k..14 + 3 * k]);
            }
            PipePrim {
                center: Vec3::new(f[0], f[1], f[2]),
                q: Quat([f[3], f[4], f[5], f[6]]),
                log_scale: Vec3::new(f[7], f[8], f[9]),
                logit: f[10],
                sh,
            }
        })
        .collect()
}

struct PipeForward {
    splats: Vec<Splat2D<f64>>,
    covs: Vec<Mat3<f64>>,
    raw_ok: bool,
}

fn pipe_forward(prims: &[PipePrim], cam: &Camera<f64>) -> PipeForward {
    let eye = cam.center();
    let mut splats = Vec::with_capacity(prims.len());
    let mut covs = Vec::with_capacity(prims.len());
    let mut raw_ok = true;
    for p in prims {
        let cov = scaled_covariance(&p.q.normalized().to_matrix(), &p.log_scale.map(f64::exp));
        let proj = project(&p.center, &cov, cam).expect("instances sit in front of the camera");
        let color = eval_sh_dir(&p.sh, &(p.center - eye));
        raw_ok &= color.iter().all(|c| *c > 0.02 && *c < 0.98);
        splats.push(Splat2D::from_projection(&proj, color, p.logit.sigmoid()));
        covs.push(cov);
    }
    PipeForward { splats, covs, raw_ok }
}

fn pipe_loss(splats: &[Splat2D<f64>], gt: &Image<f64>, w: &LossWeights<f64>, cfg: &LossConfig) -> (f64, Vec<bool>) {
    let img = rasterize(splats, [0.1, 0.2, 0.3], PIPE_SIZE, PIPE_SIZE).rgb;
    let signs = img.data.iter().zip(&gt.data).map(|(a, b)| a > b).collect();
    (w.l1 * l1_loss(&img, gt).unwrap().0 + w.ssim * ssim_loss(&img, gt, cfg).unwrap().0, signs)
}

/// Reconstruction loss of a 16×16 render against all parameters of five
/// 3D Gaussians. Returns `None` when any perturbation changes which splats
/// contribute where, pushes a colour into the clamp, or flips the sign of
/// an L1 residual.
fn check_splat_pipeline(rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
    let cam = Camera::look_at(
        Vec3::new(0.0, 0.0, -3.0),
        Vec3::zero(),
        Vec3::new(0.0, 1.0, 0.0),
        20.0,
        20.0,
        PIPE_SIZE,
        PIPE_SIZE,
        0.1,
    )?;
    let mut x = Vec::with_capacity(PIPE_SPLATS * PIPE_FLOATS);
    for _ in 0..PIPE_SPLATS {
        x.extend(random_vec(rng, 0.6).0);
        let q = Quat(std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).normalized();
        x.extend(q.0);
        x.extend((0..3).map(|_| rng.gen_range(0.1f64..0.35).ln()));
        x.push(rng.gen_range(-1.0..2.0));
        for k in 0..SH_COEFFS {
            for _ in 0..3 {
                x.push(if k == 0 { rng.gen_range(-0.8..0.8) } else { rng.gen_range(-0.05..0.05) });
            }
        }
    }
    let gt = random_image(rng, PIPE_SIZE, PIPE_SIZE, 3);
    let cfg = LossConfig::default();
    let w = LossWeights::<f64>::from_config(&cfg);
    let prims = unpack(&x);
    let fwd = pipe_forward(&prims, &cam);
    if !fwd.raw_ok {
        return Ok(None);
    }
    let sig = contribution_signature(&fwd.splats, PIPE_SIZE, PIPE_SIZE);
    let (_, signs) = pipe_loss(&fwd.splats, &gt, &w, &cfg);

    let out = rasterize(&fwd.splats, [0.1, 0.2, 0.3], PIPE_SIZE, PIPE_SIZE);
    let (_, g1) = l1_loss(&out.rgb, &gt)?;
    let (_, g2) = ssim_loss(&out.rgb, &gt, &cfg)?;
    let d_rgb = Image { data: g1.data.iter().zip(&g2.data).map(|(a, b)| w.l1 * a + w.ssim * b).collect(), ..g1 };
    let sg = rasterize_backward(&fwd.splats, &out, &d_rgb);
    let eye = cam.center();
    let mut analytic = Vec::with_capacity(x.len());
    for (i, p) in prims.iter().enumerate() {
        let s = p.log_scale.map(f64::exp);
        let r = p.q.normalized().to_matrix();
        let (d_center, d_cov) = project_backward(&p.center, &fwd.covs[i], &cam, sg[i].mean2d, sg[i].cov2d);
        let shg = eval_sh_dir_backward(&p.sh, &(p.center - eye), &sg[i].color);
        let (d_r, d_s) = scaled_covariance_backward(&r, &s, &d_cov);
        analytic.extend((d_center + shg.dir).0);
        analytic.extend(p.q.to_matrix_backward(&d_r));
        analytic.extend(d_s.hadamard(&s).0);
        let a = p.logit.sigmoid();
        analytic.push(sg[i].alpha_base * a * (1.0 - a));
        analytic.extend(shg.coeffs.iter().flatten());
    }

    let mut smooth = true;
    let numeric = central_diff(&x, FD_STEP, |x| {
        let f = pipe_forward(&unpack(x), &cam);
        let (loss, s) = pipe_loss(&f.splats, &gt, &w, &cfg);
        smooth &= f.raw_ok && s == signs && contribution_signature(&f.splats, PIPE_SIZE, PIPE_SIZE) == sig;
        loss
    });
    if !smooth {
        return Ok(None);
    }
    Ok(Some(rel_err(&analytic, &numeric)))
}

/// Directional finite-difference check of any scalar function with a known gradient.
pub fn directional_check<T: Real>(x: &[f64], grad: &[f64], dir: &[f64], h: f64, f: impl Fn(&[f64]) -> T) -> f64 {
    let step = |s: f64| -> Vec<f64> { x.iter().zip(dir).map(|(a, d)| a + s * d).collect() };
    let n = (f(&step(h)).as_f64() - f(&step(-h)).as_f64()) / (2.0 * h);
    let a: f64 = grad.iter().zip(dir).map(|(g, d)| g * d).sum();
    (a - n).abs() / a.abs().max(n.abs()).max(1e-12)
}
