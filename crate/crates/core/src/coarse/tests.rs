use super::*;
use crate::sampler::{multi_view_surface_sample, MultiViewConfig};
use crate::sdf::SdfField;
use crate::transform::{euler_to_matrix, transform_error};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

fn boxy_object() -> SdfField {
    let part = |half: [f64; 3], at: [f64; 3]| {
        SdfField::posed(
            SdfField::cuboid(Vec3::from(half)).unwrap(),
            SimTransform::from_translation([-at[0], -at[1], -at[2]]),
        )
        .unwrap()
    };
    SdfField::union(vec![
        part([0.25, 0.25, 0.03], [0.0, 0.0, 0.0]),
        part([0.25, 0.03, 0.25], [0.0, 0.22, 0.25]),
        part([0.03, 0.03, 0.2], [0.2, -0.2, -0.2]),
        part([0.03, 0.03, 0.2], [-0.2, -0.2, -0.2]),
        part([0.03, 0.03, 0.2], [0.2, 0.2, -0.2]),
        part([0.08, 0.05, 0.05], [0.15, -0.1, 0.08]),
    ])
}

fn boxy_cloud() -> SurfacePointSet {
    let cfg = MultiViewConfig {
        width: 40,
        height: 40,
        ..Default::default()
    };
    multi_view_surface_sample(&boxy_object(), "boxy", Vec3::zeros(), 0.6, &cfg).unwrap()
}

fn transformed(set: &SurfacePointSet, g: &SimTransform) -> SurfacePointSet {
    let r = g.rotation();
    SurfacePointSet {
        points: set.points.iter().map(|p| g.apply(p)).collect(),
        source: set.source.clone(),
        normals: set.normals.as_ref().map(|ns| ns.iter().map(|n| r * n).collect()),
    }
}

fn test_cfg() -> CoarseConfig {
    CoarseConfig {
        voxel: 0.03,
        ..Default::default()
    }
}

#[test]
fn voxel_merges_to_midpoint() {
    let set = SurfacePointSet::new(vec![Vec3::new(0.1, 0.1, 0.1), Vec3::new(0.3, 0.1, 0.1)], "two");
    let down = voxel_downsample(&set, 1.0).unwrap();
    assert_eq!(down.points, vec![Vec3::new(0.2, 0.1, 0.1)]);
}

#[test]
fn voxel_sparse_set_unchanged() {
    let pts: Vec<Vec3> = (0..27)
        .map(|i| Vec3::new((i % 3) as f64 + 0.5, ((i / 3) % 3) as f64 + 0.5, (i / 9) as f64 + 0.5) * 0.2)
        .collect();
    let set = SurfacePointSet::new(pts.clone(), "grid");
    let down = voxel_downsample(&set, 0.2).unwrap();
    assert_eq!(down.points.len(), pts.len());
    for (a, b) in down.points.iter().zip(&pts) {
        assert!((a - b).norm() < 1e-15);
    }
}

#[test]
fn voxel_count_matches_occupancy() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pts: Vec<Vec3> = (0..10_000)
        .map(|_| {
            Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                .normalize()
        })
        .collect();
    let occupied: BTreeSet<[i64; 3]> = pts
        .iter()
        .map(|p| [(p.x / 0.1).floor() as i64, (p.y / 0.1).floor() as i64, (p.z / 0.1).floor() as i64])
        .collect();
    let down = voxel_downsample(&SurfacePointSet::new(pts, "s"), 0.1).unwrap();
    let n = down.points.len() as f64;
    assert!((n - occupied.len() as f64).abs() <= 0.1 * occupied.len() as f64);
}

#[test]
fn voxel_normals_renormalized() {
    let mut set = SurfacePointSet::new(vec![Vec3::zeros(), Vec3::repeat(0.01)], "n");
    set.normals = Some(vec![Vec3::x(), Vec3::y()]);
    let down = voxel_downsample(&set, 1.0).unwrap();
    let n = down.normals.unwrap()[0];
    assert!((n.norm() - 1.0).abs() < 1e-12);
    assert!((n - Vec3::new(1.0, 1.0, 0.0).normalize()).norm() < 1e-12);
}

#[test]
fn pca_normals_on_plane() {
    let pts: Vec<Vec3> = (0..100).map(|i| Vec3::new((i % 10) as f64 * 0.1, (i / 10) as f64 * 0.1, 2.0)).collect();
    let set = estimate_normals(&SurfacePointSet::new(pts, "plane"), 0.25).unwrap();
    for n in set.normals.unwrap() {
        assert!((n.z.abs() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn kabsch_recovers_exact_motion() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let src: Vec<Vec3> = (0..20)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let r = euler_to_matrix([0.4, -1.1, 2.5]);
    let t = Vec3::new(0.3, -2.0, 1.0);
    let dst: Vec<Vec3> = src.iter().map(|p| r * p + t).collect();
    let (rr, tt) = kabsch(&src, &dst).unwrap();
    assert!((rr - r).norm() < 1e-12);
    assert!((tt - t).norm() < 1e-12);
}

#[test]
fn fpfh_rigid_invariance() {
    let down = voxel_downsample(&boxy_cloud(), 0.03).unwrap();
    let g = SimTransform::new([0.5, -1.0, 2.0], [0.3, -0.7, 2.1], 1.0).unwrap();
    let a = compute_fpfh(&down, 0.15).unwrap();
    let b = compute_fpfh(&transformed(&down, &g), 0.15).unwrap();
    for (x, y) in a.iter().zip(&b) {
        for k in 0..FPFH_BINS {
            assert!(x.histogram[k] >= 0.0);
            assert!((x.histogram[k] - y.histogram[k]).abs() <= 1e-6);
        }
    }
}

#[test]
fn fpfh_separates_plane_from_sphere() {
    let n = 30;
    let mut plane = Vec::new();
    let mut sphere = Vec::new();
    for i in 0..n {
        for j in 0..n {
            plane.push(Vec3::new(i as f64 * 0.02, j as f64 * 0.02, 0.0));
            // same spacing on a sphere patch of radius 0.3
            let (u, v) = ((i as f64 - n as f64 / 2.0) * 0.02 / 0.3, (j as f64 - n as f64 / 2.0) * 0.02 / 0.3);
            sphere.push(Vec3::new(u.sin() * v.cos(), v.sin(), u.cos() * v.cos()) * 0.3);
        }
    }
    let mut pset = SurfacePointSet::new(plane, "plane");
    pset.normals = Some(vec![Vec3::z(); pset.len()]);
    let mut sset = SurfacePointSet::new(sphere.clone(), "sphere");
    sset.normals = Some(sphere.iter().map(|p| p.normalize()).collect());
    let mean = |d: &[FpfhDescriptor]| {
        let mut m = [0.0; FPFH_BINS];
        for x in d {
            for k in 0..FPFH_BINS {
                m[k] += x.histogram[k] / d.len() as f64;
            }
        }
        m
    };
    let a = mean(&compute_fpfh(&pset, 0.1).unwrap());
    let b = mean(&compute_fpfh(&sset, 0.1).unwrap());
    let l1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    assert!(l1 > 0.1, "l1 {l1}");
}

#[test]
fn fpfh_isolated_point_is_zero() {
    let mut set = SurfacePointSet::new(vec![Vec3::zeros(), Vec3::new(5.0, 0.0, 0.0)], "far");
    set.normals = Some(vec![Vec3::z(); 2]);
    let d = compute_fpfh(&set, 0.5).unwrap();
    assert!(d.iter().all(|x| x.isolated && x.histogram.iter().all(|&v| v == 0.0)));
}

#[test]
fn fpfh_needs_normals() {
    let set = SurfacePointSet::new(vec![Vec3::zeros()], "bare");
    assert!(compute_fpfh(&set, 0.5).is_err());
}

fn ransac_on(src: &SurfacePointSet, tgt: &SurfacePointSet, cfg: &CoarseConfig, seed: u64) -> CoarseResult {
    let sd = compute_fpfh(src, cfg.fpfh_radius_factor * cfg.voxel).unwrap();
    let td = compute_fpfh(tgt, cfg.fpfh_radius_factor * cfg.voxel).unwrap();
    ransac_align(src, tgt, &sd, &td, cfg, seed).unwrap()
}

#[test]
fn ransac_identical_clouds_give_identity() {
    let cfg = test_cfg();
    let down = voxel_downsample(&boxy_cloud(), cfg.voxel).unwrap();
    let res = ransac_on(&down, &down, &cfg, 3);
    assert!(res.converged);
    assert!(res.inlier_count <= res.correspondence_count);
    let err = transform_error(&res.transform, &SimTransform::identity());
    assert!(err.delta_t <= 1e-6 && err.delta_r <= 1e-6, "{err:?}");
}

#[test]
fn ransac_without_reranking_gives_identity() {
    let cfg = CoarseConfig {
        rerank_candidates: 0,
        ..test_cfg()
    };
    let down = voxel_downsample(&boxy_cloud(), cfg.voxel).unwrap();
    let res = ransac_on(&down, &down, &cfg, 3);
    assert!(res.converged);
    let err = transform_error(&res.transform, &SimTransform::identity());
    assert!(err.delta_t <= 1e-6 && err.delta_r <= 1e-6, "{err:?}");
}

#[test]
fn ransac_recovers_known_rigid_motion() {
    let cfg = test_cfg();
    let cloud = boxy_cloud();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut ok = 0;
    for seed in 0..5 {
        let g = SimTransform::new(
            [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3)],
            [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-3.1..3.1)],
            1.0,
        )
        .unwrap();
        let src = voxel_downsample(&cloud, cfg.voxel).unwrap();
        let tgt = voxel_downsample(&transformed(&cloud, &g), cfg.voxel).unwrap();
        let res = ransac_on(&src, &tgt, &cfg, seed);
        let err = transform_error(&res.transform, &g);
        if res.converged && err.delta_t <= 2.0 * cfg.voxel && err.delta_r <= 0.1 {
            ok += 1;
        }
    }
    assert!(ok >= 4, "{ok}/5");
}

#[test]
fn ransac_sphere_translation_only() {
    let cfg = test_cfg();
    let sphere = SdfField::sphere(0.5).unwrap();
    let mv = MultiViewConfig {
        width: 40,
        height: 40,
        ..Default::default()
    };
    let cloud = multi_view_surface_sample(&sphere, "s", Vec3::zeros(), 0.5, &mv).unwrap();
    let g = SimTransform::new([0.4, -0.2, 0.1], [0.0, 0.0, 0.8], 1.0).unwrap();
    let src = voxel_downsample(&cloud, cfg.voxel).unwrap();
    let tgt = voxel_downsample(&transformed(&cloud, &g), cfg.voxel).unwrap();
    let res = ransac_on(&src, &tgt, &cfg, 0);
    assert!(res.converged);
    // the sphere centre maps to the translation regardless of rotation
    let centre = res.transform.apply(&Vec3::zeros());
    assert!((centre - Vec3::from(g.translation)).norm() <= 2.0 * cfg.voxel, "{centre:?}");
}

#[test]
fn ransac_is_deterministic() {
    let cfg = test_cfg();
    let cloud = boxy_cloud();
    let g = SimTransform::new([0.2, 0.1, 0.0], [0.0, 0.0, 1.0], 1.0).unwrap();
    let src = voxel_downsample(&cloud, cfg.voxel).unwrap();
    let tgt = voxel_downsample(&transformed(&cloud, &g), cfg.voxel).unwrap();
    let a = ransac_on(&src, &tgt, &cfg, 5);
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap()
        .install(|| ransac_on(&src, &tgt, &cfg, 5));
    assert_eq!(a, b);
}

#[test]
fn ransac_too_few_points() {
    let cfg = test_cfg();
    let set = SurfacePointSet::new(vec![Vec3::zeros(); 3], "tiny");
    assert!(ransac_align(&set, &set, &[], &[], &cfg, 0).is_err());
}

#[test]
fn icp_identical_clouds() {
    let cfg = test_cfg();
    let cloud = boxy_cloud();
    let res = icp_refine(&cloud, &cloud, &SimTransform::identity(), &cfg).unwrap();
    assert!(res.converged);
    assert!(res.inlier_rmse <= 1e-12);
    let err = transform_error(&res.transform, &SimTransform::identity());
    assert!(err.delta_t < 1e-12 && err.delta_r < 1e-12);
}

#[test]
fn icp_recovers_small_perturbation() {
    let cfg = test_cfg();
    let cloud = boxy_cloud();
    let g = SimTransform::new([0.05, 0.0, 0.0], [0.0, 0.0, 5f64.to_radians()], 1.0).unwrap();
    let target = transformed(&cloud, &g);
    let res = icp_refine(&cloud, &target, &SimTransform::identity(), &cfg).unwrap();
    let err = transform_error(&res.transform, &g);
    assert!(err.delta_t <= 1e-3 && err.delta_r <= 1e-3, "{err:?}");
    for w in res.rmse_history.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{:?}", res.rmse_history);
    }
}

#[test]
fn icp_disjoint_clouds_not_converged() {
    let cfg = test_cfg();
    let cloud = boxy_cloud();
    let far = transformed(&cloud, &SimTransform::from_translation([10.0, 0.0, 0.0]));
    let init = SimTransform::new([0.0, 0.0, 0.1], [0.0, 0.0, 0.2], 1.0).unwrap();
    let res = icp_refine(&cloud, &far, &init, &cfg).unwrap();
    assert!(!res.converged);
    assert_eq!(res.transform, init);
}

#[test]
fn icp_keeps_init_scale() {
    let cfg = test_cfg();
    let cloud = boxy_cloud();
    let init = SimTransform::from_scale(1.02).unwrap();
    let res = icp_refine(&cloud, &cloud, &init, &cfg).unwrap();
    assert_eq!(res.transform.scale, 1.02);
}

#[test]
fn result_serializes() {
    let res = CoarseResult::failed(SimTransform::identity(), 3);
    let json = serde_json::to_string(&res).unwrap();
    let back: CoarseResult = serde_json::from_str(&json).unwrap();
    assert_eq!(back, res);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]
    #[test]
    fn alignment_is_equivariant(yaw in -3.0..3.0f64, roll in -0.5..0.5f64,
                                tx in -1.0..1.0f64, seed in 0u64..100) {
        let cfg = test_cfg();
        let cloud = boxy_cloud();
        let g = SimTransform::new([0.2, -0.1, 0.05], [0.0, 0.1, 0.9], 1.0).unwrap();
        let src = voxel_downsample(&cloud, cfg.voxel).unwrap();
        let tgt = voxel_downsample(&transformed(&cloud, &g), cfg.voxel).unwrap();
        let base = ransac_on(&src, &tgt, &cfg, seed);
        let base = icp_refine(&src, &tgt, &base.transform, &cfg).unwrap();

        let big_g = SimTransform::new([tx, 0.3, -0.2], [roll, 0.2, yaw], 1.0).unwrap();
        let moved = ransac_on(&transformed(&src, &big_g), &transformed(&tgt, &big_g), &cfg, seed);
        let moved = icp_refine(&transformed(&src, &big_g), &transformed(&tgt, &big_g), &moved.transform, &cfg).unwrap();
        let expected = big_g.compose(&base.transform).unwrap().compose(&big_g.inverse().unwrap()).unwrap();
        let err = transform_error(&moved.transform, &expected);
        prop_assert!(err.delta_t <= 1e-4 && err.delta_r <= 1e-4, "{:?}", err);
    }
}
