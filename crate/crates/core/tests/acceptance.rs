//! One line per acceptance criterion, written straight to stderr so it shows
//! up in captured test runs.

use std::io::Write;
use std::time::Instant;

use layersplat::decoders::{rot6d_to_matrix, softmax};
use layersplat::gradcheck::run_suite;
use layersplat::image::Image;
use layersplat::losses::{
    arap_loss, chamfer_sim_loss_with, cloth_lbs_loss, geman_mcclure, mask_loss, ssim_loss, total_loss, LossConfig,
    LossParts,
};
use layersplat::math::{Mat3, Vec3};
use layersplat::renderer::{composite_final, rasterize, render_matte, Camera, Matte, Splat2D};
use layersplat::skeleton::Pose;
use layersplat::spatial::NnStrategy;
use layersplat::training::fit::{render_avatar_at, LOSS_FILE};
use layersplat::training::{
    evaluate, fit, initial_checkpoint, lr_at, synth_scene, Config, ScheduleSpec, SyntheticScene,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: &str, pass: bool, detail: &str) {
    let line = format!("[acceptance] {} {criterion}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<Vec3<f64>> {
    (0..n).map(|_| Vec3::new(rng.gen_range(-extent..extent), rng.gen_range(-extent..extent), rng.gen_range(-extent..extent))).collect()
}

#[test]
fn gradient_suite() {
    let t = Instant::now();
    let r = run_suite(0, 100).unwrap();
    let secs = t.elapsed().as_secs_f64();
    for c in &r.checks {
        report(
            &format!("gradient {}", c.name),
            c.passed,
            &format!("max rel err {:.2e} < {:.0e} over {} instances ({} redrawn)", c.max_rel_err, c.tolerance, c.instances, c.redrawn),
        );
    }
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let pass = r.all_passed() && secs < 300.0;
    report("gradient suite", pass, &format!("all {} checks in {secs:.1} s on {cores} core(s), limit 300 s", r.checks.len()));
    assert!(pass);
}

#[test]
fn loss_value_oracles() {
    let cfg = LossConfig::default();
    let mut fails = Vec::new();
    let mut count = 0;
    let mut check = |name: &str, got: f64, want: f64| {
        count += 1;
        if !close(got, want, 1e-9) {
            fails.push(format!("{name}: {got} vs {want}"));
        }
    };
    check("geman_mcclure(1e6 σ)", geman_mcclure(1e6 * 0.05, 0.05).unwrap(), 1.0);
    let o = Vec3::zero();
    let chamfer = |a: &[Vec3<f64>], b: &[Vec3<f64>]| chamfer_sim_loss_with(a, b, 1.0, NnStrategy::Auto).unwrap().value;
    check("chamfer single pair", chamfer(&[o], &[Vec3::new(1.0, 0.0, 0.0)]), 0.5);
    check("chamfer two vs one", chamfer(&[o, Vec3::new(2.0, 0.0, 0.0)], &[o]), 0.2);
    let line = [o, Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0), Vec3::new(4.0, 0.0, 0.0)];
    check("arap lengths 1,1,2", arap_loss(&line, &[(0, 1), (1, 2), (2, 3)]).unwrap().0, 2.0 / 9.0);
    let a = Image::<f64>::from_fn(4, 4, 1, |x, _, _| if x < 2 { 0.5 } else { 0.0 });
    check("mask half pixels off by 0.5", mask_loss(&a, &Image::new(4, 4, 1)).unwrap().0, 0.125);
    check("cloth-lbs one entry off by 0.1", cloth_lbs_loss(&[0.6, 0.4, 0.5, 0.5], &[0.5, 0.4, 0.5, 0.5]).unwrap().0, 0.0025);
    let c1 = cfg.ssim_c1;
    let ssim = (2.0 * 0.25 * 0.75 + c1) / (0.25f64.powi(2) + 0.75f64.powi(2) + c1);
    let lo = Image::<f64>::filled(16, 16, 3, 0.25);
    let hi = Image::<f64>::filled(16, 16, 3, 0.75);
    check("ssim constant 0.25 vs 0.75", ssim_loss(&lo, &hi, &cfg).unwrap().0, 1.0 - ssim);
    let parts = LossParts { l1: 0.1, ssim: 0.2, lpips: 0.0, sim: 0.3, arap: 0.2, mask: 0.1, cloth_lbs: 1e-4 };
    check("total loss example", total_loss(&parts, &cfg), 0.72);
    let oracle_pass = fails.is_empty();
    report("loss oracles", oracle_pass, &if oracle_pass { format!("{count} examples within 1e-9") } else { fails.join("; ") });

    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut grid_pass = true;
    for _ in 0..50 {
        let n = rng.gen_range(1..=2000);
        let m = rng.gen_range(1..=2000);
        let p = random_points(&mut rng, n, 1.0);
        let g = random_points(&mut rng, m, 1.0);
        let brute = chamfer_sim_loss_with(&p, &g, 0.05, NnStrategy::BruteForce).unwrap();
        let grid = chamfer_sim_loss_with(&p, &g, 0.05, NnStrategy::HashGrid).unwrap();
        grid_pass &= brute.value == grid.value && brute.grad_pred == grid.grad_pred && brute.grad_gt == grid.grad_gt;
    }
    report("chamfer hash grid", grid_pass, "value and gradients bit-identical to brute force on 50 sets of ≤ 2000 points");
    assert!(oracle_pass && grid_pass);
}

#[test]
fn rest_pose_identity() {
    let cfg = Config::default();
    let s: SyntheticScene<f64> = synth_scene(cfg.seed, &cfg.synth).unwrap();
    let avatar = initial_checkpoint(&s, &cfg).unwrap().avatar;
    let rest = Pose::rest(s.skeleton.joint_count());
    let posed = avatar.pose(&rest).unwrap();
    let canonical: Vec<_> =
        avatar.body.primitives.iter().map(layersplat::training::avatar::WorldPrimitive::canonical).collect();
    let mut max_diff = 0.0f64;
    for cam in s.train_cameras().iter().take(4) {
        let via_model = layersplat::training::avatar::render_frame(&posed.body.world, &[], &[], cam, [0.0; 3], false).unwrap();
        let direct = layersplat::training::avatar::render_frame(&canonical, &[], &[], cam, [0.0; 3], false).unwrap();
        for (a, b) in via_model.base.rgb.data.iter().zip(&direct.base.rgb.data) {
            max_diff = max_diff.max((a - b).abs());
        }
        let full = render_avatar_at(&avatar, &rest, cam, &cfg).unwrap();
        let canon_cloth: Vec<_> =
            avatar.cloth.primitives.iter().map(layersplat::training::avatar::WorldPrimitive::canonical).collect();
        let canon_scene: Vec<_> =
            avatar.scene.primitives.iter().map(layersplat::training::avatar::WorldPrimitive::canonical).collect();
        let direct_full = layersplat::training::avatar::render_frame(
            &canonical,
            &canon_cloth,
            &canon_scene,
            cam,
            cfg.train.background,
            cfg.model.matte_includes_body,
        )
        .unwrap();
        for (a, b) in full.final_image.data.iter().zip(&direct_full.final_image.data) {
            max_diff = max_diff.max((a - b).abs());
        }
    }
    let pass = max_diff == 0.0;
    report("rest-pose identity", pass, &format!("max pixel diff {max_diff:e} over 4 views (body pass and final image)"));
    assert!(pass);
}

fn splat(x: f64, y: f64, cov: f64, depth: f64, alpha: f64) -> Splat2D<f64> {
    Splat2D { mean2d: [x, y], cov2d: [cov, 0.0, cov], depth, color: [0.5; 3], alpha_base: alpha }
}

#[test]
fn compositing_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cloth = Image { data: (0..16 * 12 * 3).map(|_| rng.gen::<f64>()).collect(), ..Image::new(16, 12, 3) };
    let base = Image { data: (0..16 * 12 * 3).map(|_| rng.gen::<f64>()).collect(), ..Image::new(16, 12, 3) };
    let zero = composite_final(&cloth, &base, &Matte::constant(16, 12, 0.0)).unwrap();
    let one = composite_final(&cloth, &base, &Matte::constant(16, 12, 1.0)).unwrap();
    let edges = zero == base && one == cloth;
    report("composite edge cases", edges, "V≡0 gives I_base and V≡1 gives I_cloth bit-exactly");

    let cam = Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::zero(), Vec3::new(0.0, 1.0, 0.0), 30.0, 30.0, 32, 32, 0.1).unwrap();
    let cloth_splat = splat(16.0, 16.0, 30.0, 2.0, 0.9);
    let scene_splat = splat(16.0, 16.0, 1e4, 1.0, 0.999);
    let (m, _) = render_matte(&[cloth_splat], &[scene_splat], None, &cam);
    let scene_alpha = rasterize(&[scene_splat], [0.0; 3], 32, 32).alpha;
    let cloth_alpha = rasterize(&[cloth_splat], [0.0; 3], 32, 32).alpha;
    let mut covered = 0;
    let mut worst = 0.0f64;
    for i in 0..32 * 32 {
        if scene_alpha.data[i] >= 0.99 && cloth_alpha.data[i] > 0.0 {
            covered += 1;
            worst = worst.max(m.values.data[i]);
        }
    }
    let occluded = covered > 0 && worst < 0.01;
    report("matte occlusion", occluded, &format!("max matte {worst:.4} < 0.01 over {covered} covered pixels"));

    let front = splat(16.0, 16.0, 30.0, 1.0, 0.95);
    let behind = splat(16.0, 16.0, 1e4, 2.0, 0.999);
    let (m, _) = render_matte(&[front], &[behind], None, &cam);
    let v = m.values.get(16, 16, 0);
    let visible = v > 0.94;
    report("matte cloth in front", visible, &format!("matte {v:.4} > 0.94 with α = 0.95"));
    assert!(edges && occluded && visible);
}

#[test]
fn invariance_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);

    // Lattice rotation and dyadic translation are exact in floating point.
    let verts: Vec<Vec3<f64>> = (0..60)
        .map(|_| Vec3::new(rng.gen_range(-512..512) as f64, rng.gen_range(-512..512) as f64, rng.gen_range(-512..512) as f64).scale(1.0 / 1024.0))
        .collect();
    let edges: Vec<(usize, usize)> = (0..120).map(|_| (rng.gen_range(0..60), rng.gen_range(0..60))).filter(|(a, b)| a != b).collect();
    let rot = Mat3::from_cols(Vec3::new(0.0, 0.0, 1.0), Vec3::new(-1.0, 0.0, 0.0), Vec3::new(0.0, -1.0, 0.0));
    let moved: Vec<_> = verts.iter().map(|v| rot.mul_vec(v) + Vec3::new(0.25, -1.5, 3.0)).collect();
    let mut shuffled = edges.clone();
    shuffled.shuffle(&mut rng);
    let a0 = arap_loss(&verts, &edges).unwrap().0;
    let arap_ok = a0 == arap_loss(&moved, &edges).unwrap().0 && a0 == arap_loss(&verts, &shuffled).unwrap().0;
    report("ARAP invariance", arap_ok, "identical under a rigid motion and under edge permutation");

    let mut sym_ok = true;
    for _ in 0..20 {
        let (n, m) = (rng.gen_range(1..300), rng.gen_range(1..300));
        let p = random_points(&mut rng, n, 1.0);
        let g = random_points(&mut rng, m, 1.0);
        sym_ok &= chamfer_sim_loss_with(&p, &g, 0.05, NnStrategy::Auto).unwrap().value
            == chamfer_sim_loss_with(&g, &p, 0.05, NnStrategy::Auto).unwrap().value;
    }
    report("Chamfer symmetry", sym_ok, "identical after swapping prediction and target, 20 sets");

    let mut order_ok = true;
    for _ in 0..10 {
        let mut splats: Vec<Splat2D<f64>> = (0..40)
            .enumerate()
            .map(|(i, _)| Splat2D {
                mean2d: [rng.gen_range(0.0..48.0), rng.gen_range(0.0..40.0)],
                cov2d: [rng.gen_range(2.0..30.0), rng.gen_range(-1.0..1.0), rng.gen_range(2.0..30.0)],
                depth: 1.0 + i as f64 * 0.01 + rng.gen_range(0.0..0.005),
                color: [rng.gen(), rng.gen(), rng.gen()],
                alpha_base: rng.gen_range(0.1..0.99),
            })
            .collect();
        let a = rasterize(&splats, [0.2, 0.3, 0.4], 48, 40);
        splats.shuffle(&mut rng);
        let b = rasterize(&splats, [0.2, 0.3, 0.4], 48, 40);
        order_ok &= a.rgb == b.rgb && a.alpha == b.alpha && a.depth == b.depth;
    }
    report("render order invariance", order_ok, "bit-identical images for 10 shuffled splat lists");

    let mut soft_ok = true;
    for _ in 0..1000 {
        let n = rng.gen_range(2..30);
        let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let w = softmax(&logits);
        let shift = rng.gen_range(-50.0..50.0);
        let ws = softmax(&logits.iter().map(|l| l + shift).collect::<Vec<_>>());
        let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        soft_ok &= close(w.iter().sum(), 1.0, 1e-6)
            && w.iter().all(|v| *v >= 0.0)
            && argmax(&w) == argmax(&ws)
            && w.iter().zip(&ws).all(|(a, b)| close(*a, *b, 1e-6));
    }
    report("softmax simplex and shift", soft_ok, "1000 logit vectors, sum and shift within 1e-6");

    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let r6: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        let Ok(r) = rot6d_to_matrix(&r6) else { continue };
        let rtr = r.transpose().mul_mat(&r);
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((rtr.0[i][j] - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        worst = worst.max((r.determinant() - 1.0).abs());
    }
    let rot_ok = worst <= 1e-9;
    report("rot6d orthonormality", rot_ok, &format!("max |RᵀR − I|, |det − 1| = {worst:.1e} over 1000 samples"));
    assert!(arap_ok && sym_ok && order_ok && soft_ok && rot_ok);
}

#[test]
fn synthetic_recovery() {
    let cfg = Config::default();
    let t = Instant::now();
    let s: SyntheticScene<f64> = synth_scene(cfg.seed, &cfg.synth).unwrap();
    let counts = (
        initial_checkpoint(&s, &cfg).unwrap().avatar.body.len(),
        s.gt_cloth.len(),
        s.gt_scene.len(),
    );
    let before = evaluate(&initial_checkpoint(&s, &cfg).unwrap().avatar, &s.holdout, &cfg).unwrap();
    let out = fit(&s, &cfg, None, &None).unwrap();
    let after = evaluate(&out.checkpoint.avatar, &s.holdout, &cfg).unwrap();
    let minutes = t.elapsed().as_secs_f64() / 60.0;
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let detail = format!(
        "{} iterations, {}/{}/{} body/cloth/scene Gaussians; held-out PSNR {:.2} dB (start {:.2}), SSIM {:.4}, matte MSE {:.5}; {minutes:.1} min on {cores} core(s)",
        out.checkpoint.iteration, counts.0, counts.1, counts.2, after.mean_psnr, before.mean_psnr, after.mean_ssim, after.mean_mask_mse
    );
    let pass = after.mean_psnr >= 28.0 && after.mean_ssim >= 0.90 && after.mean_mask_mse <= 0.01 && minutes < 30.0;
    report("synthetic recovery", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn schedule_check() {
    let cfg = Config::default();
    let spec = ScheduleSpec {
        lr_init: cfg.optim.lr_position_init,
        lr_final: cfg.optim.lr_position_final,
        horizon: cfg.train.iterations,
    };
    let ends = lr_at(&spec, 0) == 1.6e-4 && lr_at(&spec, spec.horizon) == 1.6e-6;
    let json: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
    let l = &json["losses"];
    let lambdas = [
        ("lambda_l1", 0.8),
        ("lambda_ssim", 0.2),
        ("lambda_lpips", 1.0),
        ("lambda_sim", 1.0),
        ("lambda_arap", 0.5),
        ("lambda_mask", 1.0),
        ("lambda_cloth_lbs", 1000.0),
    ];
    let weights = lambdas.iter().all(|(k, v)| l[*k].as_f64() == Some(*v));
    let pass = ends && weights;
    report(
        "schedule",
        pass,
        &format!(
            "lr(0) = {:e}, lr(T) = {:e}; default config serializes λ = 0.8/0.2/1/1/0.5/1/1000: {weights}",
            lr_at(&spec, 0),
            lr_at(&spec, spec.horizon)
        ),
    );
    assert!(pass);
}

#[test]
fn determinism() {
    let mut cfg = Config::default();
    cfg.apply_override("train.iterations=25").unwrap();
    let s: SyntheticScene<f64> = synth_scene(cfg.seed, &cfg.synth).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    fit(&s, &cfg, Some(a.path()), &None).unwrap();
    fit(&s, &cfg, Some(b.path()), &None).unwrap();
    let ca = std::fs::read(a.path().join(LOSS_FILE)).unwrap();
    let cb = std::fs::read(b.path().join(LOSS_FILE)).unwrap();
    let pass = ca == cb && !ca.is_empty();
    report("determinism", pass, &format!("two 25-iteration fits on the default scene give identical loss CSVs ({} bytes)", ca.len()));
    assert!(pass);
}
