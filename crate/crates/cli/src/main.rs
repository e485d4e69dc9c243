use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use layersplat::gradcheck::{run_check, run_suite, GradReport, CHECK_NAMES, DEFAULT_INSTANCES};
use layersplat::image::Image;
use layersplat::renderer::{load_cameras, save_cameras};
use layersplat::skeleton::{Pose, RigFile};
use layersplat::training::fit::{render_avatar_at, CHECKPOINT_FILE, LOSS_FILE};
use layersplat::training::metrics::{psnr, ssim_metric};
use layersplat::training::{evaluate, fit, fit_from, synth_scene, Checkpoint, Config, SyntheticScene};
use layersplat::Error;
use serde::Serialize;

/// Depth PNGs map `[0, DEPTH_RANGE_M]` meters onto the 16-bit range.
const DEPTH_RANGE_M: f64 = 10.0;

/// Layered Gaussian-splat avatars: synthesize scenes, fit, render, evaluate.
#[derive(Parser, Debug)]
#[command(name = "layersplat", version)]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic scene: frames, masks, cameras, poses, meshes and GT splat layers.
    Synth(SynthArgs),
    /// Fit an avatar to the synthetic scene described by the config.
    Fit(FitArgs),
    /// Render final, base, cloth and matte images from a checkpoint.
    Render(RenderArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Held-out metrics of a checkpoint, or of a directory of predictions.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// JSON config file; unspecified keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,

    /// Dotted-key override, e.g. `losses.lambda_sim=2.0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// Output directory.
    #[arg(long)]
    out: PathBuf,

    /// Number of training frames (shorthand for `synth.frames`).
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// Output directory for the checkpoint, loss CSV and held-out renders.
    #[arg(long)]
    out: PathBuf,

    /// Continue from the checkpoint already in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Checkpoint written by `fit`.
    #[arg(long)]
    checkpoint: PathBuf,

    /// Camera JSON (one camera or an array).
    #[arg(long)]
    camera: PathBuf,

    /// Which camera of an array to use.
    #[arg(long, default_value_t = 0)]
    camera_index: usize,

    /// Skeleton/pose JSON; the rest pose when omitted.
    #[arg(long)]
    pose: Option<PathBuf>,

    /// Output directory for final.png, base.png, cloth.png, matte.png and depth.png.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Random instances per check.
    #[arg(long, default_value_t = DEFAULT_INSTANCES)]
    instances: usize,

    /// Run one check only.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(CHECK_NAMES))]
    check: Option<String>,

    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Evaluate this checkpoint on the held-out views of its config's scene.
    #[arg(long, conflicts_with_all = ["pred", "gt"])]
    checkpoint: Option<PathBuf>,

    /// Directory of predicted PNGs, matched by file name against --gt.
    #[arg(long, requires = "gt")]
    pred: Option<PathBuf>,

    #[arg(long, requires = "pred")]
    gt: Option<PathBuf>,

    /// Metrics JSON path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes and their exit codes.
enum Failure {
    Usage(String),
    Validation(anyhow::Error),
    Numerical(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        if e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_numerical)) {
            Failure::Numerical(e)
        } else {
            Failure::Validation(e)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(a).map_err(Failure::from),
        Command::Fit(a) => cmd_fit(a).map_err(Failure::from),
        Command::Render(a) => cmd_render(a).map_err(Failure::from),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn mkdir(p: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn write_text(p: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))
}

fn write_views(scene: &SyntheticScene<f64>, frames: &[layersplat::training::synth::Frame<f64>], dir: &Path) -> anyhow::Result<()> {
    for sub in ["frames", "masks", "poses", "meshes"] {
        mkdir(&dir.join(sub))?;
    }
    for (i, f) in frames.iter().enumerate() {
        f.image.save_png8(&dir.join(format!("frames/frame_{i:04}.png")))?;
        f.mask.save_png16_gray(&dir.join(format!("masks/mask_{i:04}.png")))?;
        let rig = RigFile::from_parts(&scene.skeleton, &f.pose);
        write_text(&dir.join(format!("poses/pose_{i:04}.json")), &serde_json::to_string_pretty(&rig)?)?;
        f.cloth_mesh.save_obj(&dir.join(format!("meshes/cloth_{i:04}.obj")))?;
    }
    let cams: Vec<_> = frames.iter().map(|f| f.camera.clone()).collect();
    save_cameras(&cams, &dir.join("cameras.json"))?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<()> {
    let mut cfg = a.config.resolve()?;
    if let Some(n) = a.frames {
        cfg.apply_override(&format!("synth.frames={n}"))?;
    }
    let scene: SyntheticScene<f64> = synth_scene(cfg.seed, &cfg.synth)?;
    mkdir(&a.out)?;
    write_text(&a.out.join("config.json"), &cfg.to_json())?;
    write_views(&scene, &scene.frames, &a.out)?;
    write_views(&scene, &scene.holdout, &a.out.join("holdout"))?;
    let meshes = a.out.join("meshes");
    scene.body_mesh.save_obj(&meshes.join("body_rest.obj"))?;
    scene.cloth_mesh.save_obj(&meshes.join("cloth_rest.obj"))?;
    let layers = a.out.join("layers");
    mkdir(&layers)?;
    scene.gt_body.save(&layers.join("body.lgs"))?;
    scene.gt_cloth.save(&layers.join("cloth.lgs"))?;
    scene.gt_scene.save(&layers.join("scene.lgs"))?;
    let rig = RigFile::from_parts(&scene.skeleton, &Pose::rest(scene.skeleton.joint_count()));
    write_text(&a.out.join("skeleton.json"), &serde_json::to_string_pretty(&rig)?)?;
    eprintln!(
        "wrote {} frames and {} held-out views to {}",
        scene.frames.len(),
        scene.holdout.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_fit(a: FitArgs) -> anyhow::Result<()> {
    mkdir(&a.out)?;
    let ck_path = a.out.join(CHECKPOINT_FILE);
    let (cfg, outcome) = if a.resume {
        let start = Checkpoint::load(&ck_path)?;
        let cfg = start.config.clone();
        let scene: SyntheticScene<f64> = synth_scene(cfg.seed, &cfg.synth)?;
        let out = fit_from(&scene, start, Some(&a.out), &None)?;
        (cfg, (scene, out))
    } else {
        let cfg = a.config.resolve()?;
        let scene: SyntheticScene<f64> = synth_scene(cfg.seed, &cfg.synth)?;
        write_text(&a.out.join("config.json"), &cfg.to_json())?;
        let out = fit(&scene, &cfg, Some(&a.out), &None)?;
        (cfg, (scene, out))
    };
    let (scene, out) = outcome;
    let renders = a.out.join("renders");
    mkdir(&renders)?;
    for (i, f) in scene.holdout.iter().enumerate() {
        let r = render_avatar_at(&out.checkpoint.avatar, &f.pose, &f.camera, &cfg)?;
        r.final_image.save_png8(&renders.join(format!("frame_{i:04}.png")))?;
    }
    let report = evaluate(&out.checkpoint.avatar, &scene.holdout, &cfg)?;
    write_text(&a.out.join("eval.json"), &serde_json::to_string_pretty(&report)?)?;
    eprintln!(
        "{} iterations; held-out PSNR {:.2} dB, SSIM {:.4}, matte MSE {:.5}; wrote {} and {}",
        out.checkpoint.iteration,
        report.mean_psnr,
        report.mean_ssim,
        report.mean_mask_mse,
        ck_path.display(),
        a.out.join(LOSS_FILE).display()
    );
    Ok(())
}

fn cmd_render(a: RenderArgs) -> anyhow::Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let cams = load_cameras::<f64>(&a.camera)?;
    let cam = cams
        .get(a.camera_index)
        .ok_or_else(|| anyhow!("{} has {} cameras; index {} requested", a.camera.display(), cams.len(), a.camera_index))?;
    let joints = ck.avatar.rig.skeleton.joint_count();
    let pose = match &a.pose {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let rig: RigFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            let pose: Pose<f64> = rig.pose()?;
            if pose.joint_count() != joints {
                bail!("{}: pose has {} joints, checkpoint skeleton has {joints}", p.display(), pose.joint_count());
            }
            pose
        }
        None => Pose::rest(joints),
    };
    let r = render_avatar_at(&ck.avatar, &pose, cam, &ck.config)?;
    mkdir(&a.out)?;
    r.final_image.save_png8(&a.out.join("final.png"))?;
    r.base.rgb.save_png8(&a.out.join("base.png"))?;
    r.cloth_pass.rgb.save_png8(&a.out.join("cloth.png"))?;
    r.matte.values.save_png16_gray(&a.out.join("matte.png"))?;
    let depth = Image { data: r.base.depth.data.iter().map(|d| d / DEPTH_RANGE_M).collect(), ..r.base.depth };
    depth.save_png16_gray(&a.out.join("depth.png"))?;
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let report = match &a.check {
        Some(name) => {
            let stream = CHECK_NAMES.iter().position(|n| n == name).expect("validated by clap") as u64;
            let r = run_check(name, a.seed, stream, a.instances).map_err(|e| Failure::from(anyhow!(e)))?;
            GradReport { seed: a.seed, checks: vec![r] }
        }
        None => run_suite(a.seed, a.instances).map_err(|e| Failure::from(anyhow!(e)))?,
    };
    for c in &report.checks {
        println!(
            "{:<15} {} max rel err {:.3e} (tol {:.0e}, {} instances, {} redrawn)",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.max_rel_err,
            c.tolerance,
            c.instances,
            c.redrawn
        );
    }
    if let Some(p) = &a.out {
        let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Validation(e.into()))?;
        write_text(p, &json).map_err(Failure::Validation)?;
    }
    if report.all_passed() {
        Ok(())
    } else {
        let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(Failure::Numerical(anyhow!("gradient checks failed: {}", failed.join(", "))))
    }
}

#[derive(Serialize)]
struct ImageMetrics {
    name: String,
    psnr: f64,
    ssim: f64,
}

#[derive(Serialize)]
struct DirReport {
    views: Vec<ImageMetrics>,
    mean_psnr: f64,
    mean_ssim: f64,
}

fn png_names(dir: &Path) -> anyhow::Result<Vec<String>> {
    let mut names = Vec::new();
    for e in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let name = e?.file_name().to_string_lossy().into_owned();
        if name.ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn eval_dirs(pred: &Path, gt: &Path) -> anyhow::Result<DirReport> {
    let names = png_names(gt)?;
    if names.is_empty() {
        bail!("{} contains no PNG files", gt.display());
    }
    let mut views = Vec::with_capacity(names.len());
    for name in names {
        let g = Image::<f64>::load_png(&gt.join(&name))?;
        let p_path = pred.join(&name);
        if !p_path.exists() {
            bail!("{} has no counterpart for {name}", pred.display());
        }
        let p = Image::<f64>::load_png(&p_path)?;
        views.push(ImageMetrics { psnr: psnr(&p, &g)?, ssim: ssim_metric(&p, &g)?, name });
    }
    let n = views.len() as f64;
    Ok(DirReport {
        mean_psnr: views.iter().map(|v| v.psnr).sum::<f64>() / n,
        mean_ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
        views,
    })
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let json = match (&a.checkpoint, &a.pred, &a.gt) {
        (Some(ck), None, None) => (|| -> anyhow::Result<String> {
            let ck = Checkpoint::load(ck)?;
            let scene: SyntheticScene<f64> = synth_scene(ck.config.seed, &ck.config.synth)?;
            let report = evaluate(&ck.avatar, &scene.holdout, &ck.config)?;
            Ok(serde_json::to_string_pretty(&report)?)
        })()?,
        (None, Some(p), Some(g)) => serde_json::to_string_pretty(&eval_dirs(p, g)?).map_err(anyhow::Error::from)?,
        _ => return Err(Failure::Usage("eval needs --checkpoint, or both --pred and --gt".into())),
    };
    match &a.out {
        Some(p) => write_text(p, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}
