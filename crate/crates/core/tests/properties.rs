use layersplat::decoders::{rot6d_to_matrix, softmax};
use layersplat::gaussians::{eval_sh, init_from_mesh, zero_coeffs, LayerTag};
use layersplat::image::Image;
use layersplat::losses::{arap_loss, chamfer_sim_loss, cloth_lbs_loss, l1_loss, mask_loss, ssim_loss, LossConfig};
use layersplat::math::{Mat3, Rigid, Vec3};
use layersplat::mesh::TriMesh;
use layersplat::renderer::{composite_final, rasterize, Matte, Splat2D};
use layersplat::skeleton::{lbs_apply, transfer_skin_weights, SkinWeights};
use layersplat::triplane::TriPlaneField;
use proptest::prelude::*;
use proptest::sample::subsequence;

fn v3() -> impl Strategy<Value = Vec3<f64>> {
    prop::array::uniform3(-1.0..1.0f64).prop_map(Vec3)
}

fn unit() -> impl Strategy<Value = Vec3<f64>> {
    v3().prop_filter_map("degenerate", |v| v.normalized().filter(|_| v.norm() > 0.1))
}

fn rotation() -> impl Strategy<Value = Mat3<f64>> {
    (unit(), 0.0..std::f64::consts::PI).prop_map(|(axis, angle)| Mat3::from_axis_angle(&axis.scale(angle)))
}

fn rigid() -> impl Strategy<Value = Rigid<f64>> {
    (rotation(), v3()).prop_map(|(r, t)| Rigid::new(r, t))
}

fn weight_rows(rows: usize, joints: usize) -> impl Strategy<Value = SkinWeights<f64>> {
    prop::collection::vec(0.01..1.0f64, rows * joints).prop_map(move |raw| {
        let data = raw
            .chunks(joints)
            .flat_map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(move |v| v / s).collect::<Vec<_>>()
            })
            .collect();
        SkinWeights::new(rows, joints, data).unwrap()
    })
}

fn image(w: usize, h: usize, c: usize) -> impl Strategy<Value = Image<f64>> {
    prop::collection::vec(0.0..1.0f64, w * h * c).prop_map(move |data| Image { width: w, height: h, channels: c, data })
}

fn splat() -> impl Strategy<Value = Splat2D<f64>> {
    (
        prop::array::uniform2(-4.0..36.0f64),
        (0.5..20.0f64, -0.9..0.9f64, 0.5..20.0f64),
        0.2..30.0f64,
        prop::array::uniform3(0.0..1.0f64),
        0.0..1.0f64,
    )
        .prop_map(|(mean2d, (a, r, c), depth, color, alpha_base)| Splat2D {
            mean2d,
            cov2d: [a, r * (a * c).sqrt(), c],
            depth,
            color,
            alpha_base,
        })
}

fn distinct_depths(mut s: Vec<Splat2D<f64>>) -> Vec<Splat2D<f64>> {
    for (i, p) in s.iter_mut().enumerate() {
        p.depth += i as f64 * 1e-3;
    }
    s
}

/// Random heightfield grid, so every vertex has a well-defined normal.
fn grid_mesh() -> impl Strategy<Value = TriMesh<f64>> {
    (2usize..5, 2usize..5).prop_flat_map(|(nx, ny)| {
        prop::collection::vec(-0.2..0.2f64, (nx + 1) * (ny + 1)).prop_map(move |h| {
            let mut v = Vec::new();
            for j in 0..=ny {
                for i in 0..=nx {
                    v.push(Vec3::new(i as f64 * 0.3, j as f64 * 0.3, h[j * (nx + 1) + i]));
                }
            }
            let mut f = Vec::new();
            for j in 0..ny {
                for i in 0..nx {
                    let a = j * (nx + 1) + i;
                    f.push([a, a + 1, a + nx + 2]);
                    f.push([a, a + nx + 2, a + nx + 1]);
                }
            }
            TriMesh::from_faces(v, f).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dc_only_sh_is_view_independent(dc in prop::array::uniform3(-2.0..2.0f64), a in unit(), b in unit()) {
        let mut sh = zero_coeffs();
        sh[0] = dc;
        prop_assert_eq!(eval_sh(&sh, &a), eval_sh(&sh, &b));
    }

    #[test]
    fn mesh_init_is_deterministic_and_aligned(mesh in grid_mesh()) {
        let a = init_from_mesh(&mesh, LayerTag::Cloth).unwrap();
        let b = init_from_mesh(&mesh, LayerTag::Cloth).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_lgs(&mut ba).unwrap();
        b.write_lgs(&mut bb).unwrap();
        prop_assert_eq!(ba, bb);
        let z = Vec3::new(0.0, 0.0, 1.0);
        for (p, n) in a.primitives.iter().zip(mesh.vertex_normals()) {
            let n = n.normalized().unwrap();
            prop_assert!((p.rotation_matrix().mul_vec(&z) - n).norm() < 1e-6);
        }
    }

    #[test]
    fn lbs_commutes_with_a_global_rigid_motion(
        g in rigid(),
        skin in prop::collection::vec(rigid(), 4),
        w in weight_rows(6, 4),
        pts in prop::collection::vec(v3(), 6),
    ) {
        let moved: Vec<_> = skin.iter().map(|a| g.compose(a)).collect();
        let lhs = lbs_apply(&pts, &w, &moved).unwrap();
        let rhs = lbs_apply(&pts, &w, &skin).unwrap();
        for (l, r) in lhs.iter().zip(&rhs) {
            prop_assert!((*l - g.apply(r)).norm() < 1e-12);
        }
    }

    #[test]
    fn weight_transfer_follows_cloth_permutation(
        body in prop::collection::vec(v3(), 1..30),
        cloth in prop::collection::vec(v3(), 1..30),
        seed in any::<u64>(),
    ) {
        let w = {
            let n = body.len();
            let data = (0..n * 3).map(|k| if k % 3 == (k / 3) % 3 { 1.0 } else { 0.0 }).collect();
            SkinWeights::new(n, 3, data).unwrap()
        };
        let body = TriMesh::from_faces(body, vec![]).unwrap();
        let mut perm: Vec<usize> = (0..cloth.len()).collect();
        let mut s = seed;
        for i in (1..perm.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled: Vec<_> = perm.iter().map(|&i| cloth[i]).collect();
        let a = transfer_skin_weights(&TriMesh::from_faces(cloth, vec![]).unwrap(), &body, &w).unwrap();
        let b = transfer_skin_weights(&TriMesh::from_faces(shuffled, vec![]).unwrap(), &body, &w).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(b.row(k), a.row(i));
        }
    }

    #[test]
    fn triplane_is_continuous_across_cell_edges(
        planes in prop::collection::vec(-1.0..1.0f64, 3 * 5 * 5 * 2),
        cell in 1usize..4,
        axis in 0usize..3,
        p in prop::array::uniform3(0.05..0.95f64),
    ) {
        let n = 5 * 5 * 2;
        let planes = [planes[..n].to_vec(), planes[n..2 * n].to_vec(), planes[2 * n..].to_vec()];
        let f = TriPlaneField::from_planes(5, 2, planes, Vec3::zero(), Vec3::splat(1.0)).unwrap();
        let eps = 1e-7;
        let mut lo = Vec3(p);
        lo[axis] = cell as f64 / 4.0 - eps / 2.0;
        let mut hi = lo;
        hi[axis] += eps;
        let (a, b) = (f.sample(&lo), f.sample(&hi));
        // Slope is at most 4 cells per unit times a feature span of 2, summed over two planes.
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 16.0 * eps + 1e-12);
        }
    }

    #[test]
    fn softmax_is_a_shift_invariant_simplex(
        ticks in prop::collection::vec(-20_000i32..20_000, 1..24),
        shift in -50i32..50,
        real_shift in -30.0..30.0f64,
    ) {
        let logits: Vec<f64> = ticks.iter().map(|t| *t as f64 / 1024.0).collect();
        let w = softmax(&logits);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(w.iter().all(|v| *v >= 0.0));
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift as f64).collect();
        prop_assert_eq!(&softmax(&shifted), &w);
        let argmax = |v: &[f64]| v.iter().enumerate().fold(0, |b, (i, x)| if *x > v[b] { i } else { b });
        let moved = softmax(&logits.iter().map(|l| l + real_shift).collect::<Vec<_>>());
        prop_assert_eq!(argmax(&moved), argmax(&w));
        for (a, b) in moved.iter().zip(&w) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rot6d_gives_a_proper_rotation(a in unit(), b in unit(), sa in 0.1..3.0f64, sb in 0.1..3.0f64) {
        prop_assume!(a.cross(&b).norm() > 0.1);
        let r6 = [a[0] * sa, a[1] * sa, a[2] * sa, b[0] * sb, b[1] * sb, b[2] * sb];
        let r = rot6d_to_matrix(&r6).unwrap();
        let rtr = r.transpose().mul_mat(&r);
        let id = Mat3::<f64>::identity();
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((rtr.0[i][j] - id.0[i][j]).abs() < 1e-9);
            }
        }
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn chamfer_is_symmetric_and_bounded(
        pred in prop::collection::vec(v3(), 1..40),
        gt in prop::collection::vec(v3(), 1..40),
    ) {
        let cfg = LossConfig::default();
        let ab = chamfer_sim_loss(&pred, &gt, &cfg).unwrap().value;
        let ba = chamfer_sim_loss(&gt, &pred, &cfg).unwrap().value;
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..1.0).contains(&ab));
        prop_assert_eq!(chamfer_sim_loss(&pred, &pred, &cfg).unwrap().value, 0.0);
    }

    #[test]
    fn arap_ignores_lattice_motions_and_edge_order(
        ticks in prop::collection::vec(prop::array::uniform3(-64i32..64), 4..16),
        edges in prop::collection::vec((0usize..16, 0usize..16), 1..30),
        axes in Just([0usize, 1, 2]).prop_shuffle(),
        signs in prop::array::uniform3(any::<bool>()),
        shift in prop::array::uniform3(-8i32..8),
        keep in subsequence((0..30).collect::<Vec<usize>>(), 0..30),
    ) {
        let n = ticks.len();
        let verts: Vec<Vec3<f64>> = ticks.iter().map(|t| Vec3(t.map(|v| v as f64 / 16.0))).collect();
        let edges: Vec<(usize, usize)> = edges.into_iter().map(|(i, j)| (i % n, j % n)).collect();
        let (base, _) = arap_loss(&verts, &edges).unwrap();
        prop_assert!(base >= 0.0);
        let moved: Vec<Vec3<f64>> = verts
            .iter()
            .map(|v| {
                Vec3(std::array::from_fn(|k| {
                    let x = v[axes[k]];
                    (if signs[k] { -x } else { x }) + shift[k] as f64 * 0.25
                }))
            })
            .collect();
        prop_assert_eq!(arap_loss(&moved, &edges).unwrap().0, base);
        let mut reordered: Vec<_> = keep.iter().filter(|&&k| k < edges.len()).map(|&k| edges[k]).collect();
        for (k, e) in edges.iter().enumerate() {
            if !keep.contains(&k) {
                reordered.push(*e);
            }
        }
        prop_assert_eq!(arap_loss(&verts, &reordered).unwrap().0, base);
    }

    #[test]
    fn image_losses_are_non_negative(a in image(8, 8, 3), b in image(8, 8, 3), m in image(8, 8, 1), g in image(8, 8, 1)) {
        let cfg = LossConfig::default();
        prop_assert!(l1_loss(&a, &b).unwrap().0 >= 0.0);
        prop_assert!(ssim_loss(&a, &b, &cfg).unwrap().0 >= 0.0);
        prop_assert!(mask_loss(&m, &g).unwrap().0 >= 0.0);
        prop_assert!(cloth_lbs_loss(&a.data, &b.data).unwrap().0 >= 0.0);
    }

    #[test]
    fn alpha_grows_with_each_deeper_splat(splats in prop::collection::vec(splat(), 1..12)) {
        let mut sorted = distinct_depths(splats);
        sorted.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap());
        let mut prev = rasterize(&[], [0.0; 3], 32, 32).alpha;
        for k in 1..=sorted.len() {
            let out = rasterize(&sorted[..k], [0.0; 3], 32, 32).alpha;
            for (p, q) in prev.data.iter().zip(&out.data) {
                prop_assert!(*q >= *p);
                prop_assert!((0.0..=1.0).contains(q));
            }
            prev = out;
        }
    }

    #[test]
    fn render_ignores_input_order(splats in prop::collection::vec(splat(), 2..16), seed in any::<u64>()) {
        let splats = distinct_depths(splats);
        let mut shuffled = splats.clone();
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = rasterize(&splats, [0.2, 0.3, 0.4], 32, 32);
        let b = rasterize(&shuffled, [0.2, 0.3, 0.4], 32, 32);
        prop_assert_eq!(a.rgb.data, b.rgb.data);
        prop_assert_eq!(a.alpha.data, b.alpha.data);
    }

    #[test]
    fn composite_stays_between_its_inputs(c in image(6, 5, 3), b in image(6, 5, 3), v in image(6, 5, 1)) {
        let out = composite_final(&c, &b, &Matte { values: v }).unwrap();
        for (i, o) in out.data.iter().enumerate() {
            let (x, y) = (c.data[i], b.data[i]);
            prop_assert!(*o >= x.min(y) && *o <= x.max(y));
        }
    }
}
