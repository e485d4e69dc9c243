use layersplat::gaussians::{eval_sh_dir, scaled_covariance};
use layersplat::renderer::{project, rasterize, Splat2D};
use layersplat::skeleton::Pose;
use layersplat::training::checkpoint::SECTIONS;
use layersplat::training::fit::{render_avatar_at, CSV_HEADER, LOSS_FILE};
use layersplat::training::{fit, initial_checkpoint, synth_scene, Checkpoint, Config, SyntheticScene};
use layersplat::Error;

fn small_config() -> Config {
    let mut c = Config::default();
    for o in [
        "synth.frames=3",
        "synth.train_cameras=3",
        "synth.holdout_cameras=1",
        "synth.resolution=32",
        "synth.joints=6",
        "synth.cloth_rings=4",
        "synth.cloth_segments=12",
        "synth.ground_grid=4",
        "synth.blobs=6",
        "model.triplane_res=6",
        "model.triplane_channels=3",
        "model.hidden=[12,12]",
        "train.iterations=4",
        "train.checkpoint_every=2",
    ] {
        c.apply_override(o).unwrap();
    }
    c
}

fn scene(cfg: &Config) -> SyntheticScene<f64> {
    synth_scene(cfg.seed, &cfg.synth).unwrap()
}

fn read_rows(dir: &std::path::Path) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(dir.join(LOSS_FILE)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

/// `(start, len)` of each section payload, walking the container table.
fn payload_spans(bytes: &[u8]) -> Vec<(String, usize, usize)> {
    let mut at = 12;
    let mut spans = Vec::new();
    while at < bytes.len() {
        let nl = u16::from_le_bytes([bytes[at], bytes[at + 1]]) as usize;
        let name = String::from_utf8(bytes[at + 2..at + 2 + nl].to_vec()).unwrap();
        at += 2 + nl;
        let len = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize;
        at += 12;
        spans.push((name, at, len));
        at += len;
    }
    spans
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let cfg = small_config();
    let s = scene(&cfg);
    let out = fit(&s, &cfg, None, &None).unwrap();
    let ck = out.checkpoint;
    assert_eq!(ck.iteration, 4);
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.lsck");
    ck.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);
}

#[test]
fn corrupt_sections_are_named() {
    let cfg = small_config();
    let bytes = initial_checkpoint(&scene(&cfg), &cfg).unwrap().to_bytes();
    let spans = payload_spans(&bytes);
    assert_eq!(spans.iter().map(|s| s.0.as_str()).collect::<Vec<_>>(), SECTIONS);
    for (name, start, len) in &spans {
        let mut bad = bytes.clone();
        bad[start + len / 2] ^= 0x5a;
        match Checkpoint::from_bytes(&bad) {
            Err(Error::Checkpoint { section, .. }) => assert_eq!(&section, name),
            other => panic!("{name}: expected a checkpoint error, got {:?}", other.map(|_| ())),
        }
    }
    let truncated = &bytes[..bytes.len() - 3];
    assert!(matches!(Checkpoint::from_bytes(truncated), Err(Error::Checkpoint { section, .. }) if section == "rng-state"));
    assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(Error::Checkpoint { section, .. }) if section == "header"));
    let err = Checkpoint::load(std::path::Path::new("/nonexistent/c.lsck")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}

#[test]
fn zero_iterations_leave_the_initialization() {
    let mut cfg = small_config();
    cfg.apply_override("train.iterations=0").unwrap();
    let s = scene(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let out = fit(&s, &cfg, Some(dir.path()), &None).unwrap();
    let init = initial_checkpoint(&s, &cfg).unwrap();
    assert_eq!(out.checkpoint, init);
    assert!(out.rows.is_empty());
    assert_eq!(Checkpoint::load(&dir.path().join("checkpoint.lsck")).unwrap(), init);
    assert!(read_rows(dir.path()).is_empty());
}

#[test]
fn csv_total_is_the_weighted_sum() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    fit(&scene(&cfg), &cfg, Some(dir.path()), &None).unwrap();
    let l = &cfg.losses;
    let lambdas =
        [l.lambda_l1, l.lambda_ssim, l.lambda_lpips, l.lambda_sim, l.lambda_arap, l.lambda_mask, l.lambda_cloth_lbs];
    let rows = read_rows(dir.path());
    assert_eq!(rows.len(), 4);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], i as f64);
        let sum: f64 = lambdas.iter().zip(&r[2..9]).map(|(a, b)| a * b).sum();
        assert!((sum - r[9]).abs() <= 1e-12, "row {i}: {sum} vs {}", r[9]);
        assert!(r[2..9].iter().all(|v| *v >= 0.0));
        assert!(r[3] > 0.0 && r[5] > 0.0 && r[8] > 0.0);
    }
}

#[test]
fn only_l1_when_other_weights_are_zero() {
    let mut cfg = small_config();
    for k in ["ssim", "lpips", "sim", "arap", "mask", "cloth_lbs"] {
        cfg.apply_override(&format!("losses.lambda_{k}=0")).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    fit(&scene(&cfg), &cfg, Some(dir.path()), &None).unwrap();
    for r in read_rows(dir.path()) {
        assert!(r[2] > 0.0);
        assert!(r[3..9].iter().all(|v| *v == 0.0), "{r:?}");
        assert_eq!(r[9], 0.8 * r[2]);
    }
}

#[test]
fn fit_is_deterministic() {
    let cfg = small_config();
    let s = scene(&cfg);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    fit(&s, &cfg, Some(a.path()), &None).unwrap();
    fit(&s, &cfg, Some(b.path()), &None).unwrap();
    for f in [LOSS_FILE, "checkpoint.lsck"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let cfg = small_config();
    let s = scene(&cfg);
    let full = fit(&s, &cfg, None, &None).unwrap();
    let mut half = cfg.clone();
    half.train.iterations = 2;
    let mut start = initial_checkpoint(&s, &cfg).unwrap();
    start.config = half;
    let mid = layersplat::training::fit_from(&s, start, None, &None).unwrap();
    let mut resumed = Checkpoint::from_bytes(&mid.checkpoint.to_bytes()).unwrap();
    resumed.config = cfg.clone();
    let end = layersplat::training::fit_from(&s, resumed, None, &None).unwrap();
    assert_eq!(end.checkpoint, full.checkpoint);
    assert_eq!([mid.rows, end.rows].concat(), full.rows);
}

#[test]
fn rest_pose_render_equals_direct_render_of_initial_layers() {
    let cfg = small_config();
    let s = scene(&cfg);
    let avatar = initial_checkpoint(&s, &cfg).unwrap().avatar;
    let cam = &s.frames[0].camera;
    let r = render_avatar_at(&avatar, &Pose::rest(s.skeleton.joint_count()), cam, &cfg).unwrap();

    let eye = cam.center();
    let splats = |layer: &layersplat::gaussians::GaussianLayer<f64>| -> Vec<Splat2D<f64>> {
        layer
            .primitives
            .iter()
            .filter_map(|p| {
                let cov = scaled_covariance(&p.rotation_matrix(), &p.scales());
                let proj = project(&p.center, &cov, cam)?;
                Some(Splat2D::from_projection(&proj, eval_sh_dir(&p.sh, &(p.center - eye)), p.opacity()))
            })
            .collect()
    };
    let (w, h) = (cam.width, cam.height);
    let body_scene = [splats(&avatar.body), splats(&avatar.scene)].concat();
    let base = rasterize(&body_scene, cfg.train.background, w, h);
    let cloth = rasterize(&splats(&avatar.cloth), [0.0; 3], w, h);
    assert_eq!(r.base.rgb, base.rgb);
    assert_eq!(r.cloth_pass.rgb, cloth.rgb);
    let body_only = rasterize(&splats(&avatar.body), [0.0; 3], w, h);
    let avatar_body = layersplat::training::avatar::render_frame(
        &avatar.pose(&Pose::rest(s.skeleton.joint_count())).unwrap().body.world,
        &[],
        &[],
        cam,
        [0.0; 3],
        false,
    )
    .unwrap();
    assert_eq!(avatar_body.base.rgb, body_only.rgb);
}

#[test]
fn step_gradient_matches_finite_differences_per_group() {
    use layersplat::training::compute_step;
    use rand::{Rng, SeedableRng};

    let mut cfg = small_config();
    cfg.apply_override("model.triplane_init_scale=0.1").unwrap();
    let s = scene(&cfg);
    let mut avatar = initial_checkpoint(&s, &cfg).unwrap().avatar;
    // Move the decoders off their zero-initialized heads so every path carries gradient.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let mut p = avatar.params();
    for v in p[6].iter_mut() {
        *v += rng.gen_range(-0.02..0.02);
    }
    avatar.load_params(&p).unwrap();
    let frame = &s.frames[1];
    let step = compute_step(&avatar, frame, &cfg, &None).unwrap();
    let base = avatar.params();

    let loss_at = |group: usize, dir: &[f64], t: f64| -> f64 {
        let mut q = base.clone();
        for (x, d) in q[group].iter_mut().zip(dir) {
            *x += t * d;
        }
        let mut a = avatar.clone();
        a.load_params(&q).unwrap();
        compute_step(&a, frame, &cfg, &None).unwrap().total
    };
    for group in 0..7 {
        let n = base[group].len();
        let mut checked = 0;
        for _ in 0..20 {
            let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            let dir: Vec<f64> = dir.iter().map(|d| d / norm).collect();
            let fd = |h: f64| (loss_at(group, &dir, h) - loss_at(group, &dir, -h)) / (2.0 * h);
            let (n1, n2) = (fd(1e-6), fd(5e-7));
            if (n1 - n2).abs() > 1e-4 * n1.abs().max(n2.abs()).max(1e-9) {
                continue;
            }
            let a: f64 = step.grads[group].iter().zip(&dir).map(|(g, d)| g * d).sum();
            let rel = (a - n1).abs() / a.abs().max(n1.abs()).max(1e-12);
            assert!(rel < 1e-4, "group {group}: analytic {a:e} numeric {n1:e} rel {rel:e}");
            checked += 1;
            if checked == 2 {
                break;
            }
        }
        assert!(checked > 0, "group {group}: every direction hit a kink");
    }
}
