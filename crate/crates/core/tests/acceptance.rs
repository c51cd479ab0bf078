//! End-to-end acceptance criteria. Each criterion prints one PASS/FAIL line
//! (written straight to stdout so it shows up without `--nocapture`); the
//! test fails if any criterion fails.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, Matrix6, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rgbdslam::descriptors::{describe_keypoints, CShotDescriptor, DescriptorParams};
use rgbdslam::evaluation::{fit_plane, Region};
use rgbdslam::frontend::{LossReason, TrackState};
use rgbdslam::geometry::lie::{self, Twist};
use rgbdslam::geometry::{transform_cloud, CameraIntrinsics, KdTree, PointCloud, RigidTransform};
use rgbdslam::io::config::PipelineConfig;
use rgbdslam::io::sequence::GROUNDTRUTH_FILE;
use rgbdslam::io::{read_sequence, read_trajectory, StampedPose};
use rgbdslam::pipeline::{evaluate_map, reconstruct_frames, write_json, write_run, Evaluation, Reconstruction};
use rgbdslam::posegraph::{edge_jacobians, optimize_graph, EdgeKind, OptimizeParams, PoseEdge, PoseGraph};
use rgbdslam::registration::{
    estimate_transform_svd, icp_point_to_plane, prepare_frame, register_pair, FrameFeatures, IcpParams,
    RegistrationParams,
};
use rgbdslam::sim::{
    generate_sequence, look_at, room_preset, simulate_frames, wall_preset, NoiseModel, SceneModel, TrajectorySpec,
};

const SEED: u64 = 7;
const ORBIT_POSES: usize = 60;
const WALLS: [&str; 2] = ["wall_34", "wall_41"];

fn report(id: &str, pass: bool, detail: &str) -> bool {
    let line = format!("acceptance {id}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    pass
}

fn wall_regions(scene: &SceneModel) -> Vec<(String, Region)> {
    WALLS
        .iter()
        .map(|name| (name.to_string(), Region::from(scene.region(name).expect("room wall region"))))
        .collect()
}

struct Run {
    rec: Reconstruction,
    eval: Evaluation,
    ground_truth: Vec<StampedPose>,
    elapsed: Duration,
}

/// Simulates the room orbit to disk, reconstructs it, evaluates the two
/// walls and writes every artifact under `dir`.
fn disk_run(dir: &Path, cfg: &PipelineConfig) -> Run {
    let start = Instant::now();
    let scene = room_preset();
    let seq_dir = dir.join("seq");
    let run_dir = dir.join("run");
    generate_sequence(
        &scene,
        &TrajectorySpec::room_orbit(ORBIT_POSES),
        &cfg.noise,
        &CameraIntrinsics::kinect_v2(),
        false,
        &seq_dir,
    )
    .unwrap();
    let seq = read_sequence(&seq_dir).unwrap();
    let rec = reconstruct_frames(seq.frames(), cfg).unwrap();
    write_run(&run_dir, &rec, cfg).unwrap();
    let ground_truth = read_trajectory(&seq_dir.join(GROUNDTRUTH_FILE)).unwrap();
    let estimated = read_trajectory(&run_dir.join("trajectory.txt")).unwrap();
    let eval = evaluate_map(&rec.map, &wall_regions(&scene), Some(&estimated), Some(&ground_truth)).unwrap();
    write_json(&run_dir.join("evaluation.json"), &eval.report).unwrap();
    Run {
        rec,
        eval,
        ground_truth,
        elapsed: start.elapsed(),
    }
}

fn memory_run(noise: &NoiseModel, darkness: bool) -> (Reconstruction, Evaluation) {
    let scene = room_preset();
    let cfg = PipelineConfig::default().with_seed(SEED);
    let sim = simulate_frames(
        &scene,
        &TrajectorySpec::room_orbit(ORBIT_POSES),
        noise,
        &CameraIntrinsics::kinect_v2(),
        darkness,
    );
    let gt: Vec<StampedPose> = sim
        .iter()
        .map(|f| StampedPose {
            timestamp: f.frame.depth.timestamp,
            pose: f.ground_truth,
        })
        .collect();
    let rec = reconstruct_frames(sim.into_iter().map(|f| Ok(f.frame)), &cfg).unwrap();
    let eval = evaluate_map(&rec.map, &wall_regions(&scene), Some(&rec.trajectory()), Some(&gt)).unwrap();
    (rec, eval)
}

fn wall_errors(eval: &Evaluation) -> Vec<f64> {
    WALLS
        .iter()
        .map(|w| eval.report.planes.iter().find(|p| p.region == *w).unwrap().mean_abs_distance)
        .collect()
}

fn perpendicular_deviation(eval: &Evaluation) -> f64 {
    eval.report.angles[0].deviation_from_perpendicular_deg
}

/// Expected mean |error| of one on-axis observation of each wall from the
/// closest camera that saw it: σ(z)·sqrt(2/π).
fn noise_floor(eval: &Evaluation, ground_truth: &[StampedPose], noise: &NoiseModel) -> Vec<f64> {
    let k = CameraIntrinsics::kinect_v2();
    let centers: Vec<Vector3<f64>> = ground_truth.iter().map(|p| p.pose.translation()).collect();
    WALLS
        .iter()
        .map(|w| {
            let (_, sel, _) = eval.error_maps.iter().find(|(name, _, _)| name == w).unwrap();
            let mut depths: Vec<f64> = sel
                .points
                .iter()
                .map(|p| centers.iter().map(|c| (p.coords - c).norm()).fold(f64::INFINITY, f64::min))
                .collect();
            depths.sort_by(f64::total_cmp);
            let z = depths[depths.len() / 2];
            noise.sigma(z, k.depth_min, 0.0) * (2.0 / std::f64::consts::PI).sqrt()
        })
        .collect()
}

fn mm(v: &[f64]) -> String {
    v.iter().map(|x| format!("{:.2}", x * 1e3)).collect::<Vec<_>>().join("/")
}

fn files_equal(a: &Path, b: &Path, name: &str) -> bool {
    std::fs::read(a.join(name)).unwrap() == std::fs::read(b.join(name)).unwrap()
}

fn run_report_without_timings(dir: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timings");
    v
}

fn sequences_equal(a: &Path, b: &Path) -> bool {
    let list = |d: &Path| {
        let mut files = Vec::new();
        for sub in ["", "depth", "color"] {
            let dir = d.join(sub);
            if let Ok(entries) = std::fs::read_dir(&dir) {
                for e in entries.flatten() {
                    if e.path().is_file() {
                        files.push(e.path().strip_prefix(d).unwrap().to_path_buf());
                    }
                }
            }
        }
        files.sort();
        files
    };
    let (fa, fb) = (list(a), list(b));
    fa == fb && fa.iter().all(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap())
}

fn random_motion(rng: &mut ChaCha8Rng, max_translation: f64, max_angle: f64) -> RigidTransform {
    let dir: [f64; 3] = UnitSphere.sample(rng);
    let axis: [f64; 3] = UnitSphere.sample(rng);
    RigidTransform::from_axis_angle(
        &Vector3::from(axis),
        rng.random_range(0.0..max_angle),
        Vector3::from(dir) * rng.random_range(0.0..max_translation),
    )
}

/// The frame's features as seen from a camera displaced by `motion`: every
/// point is moved exactly and the descriptors are recomputed on the moved cloud.
fn moved_features(features: &FrameFeatures, motion: &RigidTransform, params: &DescriptorParams) -> FrameFeatures {
    let to_source = motion.inverse();
    let cloud = transform_cloud(&features.cloud, &to_source);
    let mut keypoints = features.keypoints.clone();
    for k in &mut keypoints {
        k.position = to_source.apply(&k.position);
    }
    let positions: Vec<Point3<f64>> = keypoints.iter().map(|k| k.position).collect();
    let described = describe_keypoints(&positions, &cloud, params).unwrap();
    let (keypoints, descriptors) = keypoints
        .into_iter()
        .zip(described)
        .filter_map(|(k, d)| d.map(|d| (k, d)))
        .unzip();
    FrameFeatures {
        cloud,
        keypoints,
        descriptors,
        detected: features.detected,
    }
}

fn criterion_3() -> bool {
    let params = RegistrationParams::default();
    let k = CameraIntrinsics::kinect_v2();
    let scene = room_preset();
    let orbit = TrajectorySpec::room_orbit(ORBIT_POSES).poses();
    let max_angle = 5f64.to_radians();
    let mut noisy_ok = 0;
    let mut worst_noisy = (0.0f64, 0.0f64);
    let mut exact_worst = (0.0f64, 0.0f64);
    let mut exact_ok = 0;
    let mut rendered_worst = (0.0f64, 0.0f64);
    let mut noisy_failed = 0;
    let mut rendered_failed = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let base = orbit[rng.random_range(0..orbit.len())];
        let motion = random_motion(&mut rng, 0.10, max_angle);
        let poses = TrajectorySpec::Poses {
            poses: vec![base, base.compose(&motion)],
        };

        let noisy = simulate_frames(&scene, &poses, &NoiseModel::default().with_seed(seed), &k, false);
        let target = prepare_frame(&noisy[0].frame, &params).unwrap();
        let source = prepare_frame(&noisy[1].frame, &params).unwrap();
        match register_pair(&source, &target, &params) {
            Ok(r) => {
                let (dt, dr) = r.result.transform.distance_to(&motion);
                if dt <= 0.005 && dr <= 0.5f64.to_radians() {
                    noisy_ok += 1;
                }
                worst_noisy = (worst_noisy.0.max(dt), worst_noisy.1.max(dr));
            }
            Err(_) => noisy_failed += 1,
        }

        let clean = simulate_frames(&scene, &poses, &NoiseModel::none(), &k, false);
        let target = prepare_frame(&clean[0].frame, &params).unwrap();
        let source = moved_features(&target, &motion, &params.descriptor);
        let (dt, dr) = match register_pair(&source, &target, &params) {
            Ok(r) => r.result.transform.distance_to(&motion),
            Err(_) => (f64::INFINITY, f64::INFINITY),
        };
        if dt <= 1e-6 && dr <= 1e-6 {
            exact_ok += 1;
        }
        exact_worst = (exact_worst.0.max(dt), exact_worst.1.max(dr));

        let rendered = prepare_frame(&clean[1].frame, &params).unwrap();
        if let Ok(r) = register_pair(&rendered, &target, &params) {
            let (dt, dr) = r.result.transform.distance_to(&motion);
            rendered_worst = (rendered_worst.0.max(dt), rendered_worst.1.max(dr));
        } else {
            rendered_failed += 1;
        }
    }
    let pass = noisy_ok >= 48 && exact_ok == 50;
    report(
        "3 pairwise registration",
        pass,
        &format!(
            "noisy {noisy_ok}/50 within 5 mm/0.5 deg ({noisy_failed} failed to register, worst registered {:.2} mm, {:.3} deg); exact-motion noise-free {exact_ok}/50 within 1e-6 (worst {:.1e} m, {:.1e} rad); rendered noise-free {rendered_failed} failed to register, worst registered {:.3} mm, {:.4} deg (mm depth quantization)",
            worst_noisy.0 * 1e3,
            worst_noisy.1.to_degrees(),
            exact_worst.0,
            exact_worst.1,
            rendered_worst.0 * 1e3,
            rendered_worst.1.to_degrees()
        ),
    )
}

fn criterion_5() -> bool {
    let k = CameraIntrinsics::kinect_v2();
    let noise = NoiseModel::default().with_seed(SEED);
    let cfg = PipelineConfig::default().with_seed(SEED);
    let prefix: Vec<_> = simulate_frames(&room_preset(), &TrajectorySpec::room_orbit(6), &noise, &k, false)
        .into_iter()
        .map(|f| f.frame)
        .collect();
    let wall_poses: Vec<RigidTransform> = (0..6)
        .map(|i| {
            let x = -0.3 + 0.1 * i as f64;
            look_at(Point3::new(x, 1.5, 1.5), Point3::new(x, 3.0, 1.5))
        })
        .collect();
    let wall: Vec<_> = simulate_frames(&wall_preset(), &TrajectorySpec::Poses { poses: wall_poses }, &noise, &k, false)
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let mut frame = f.frame;
            frame.frame_index = prefix.len() + i;
            frame.depth.timestamp = prefix[0].depth.timestamp + (prefix.len() + i) as f64 / 30.0;
            frame
        })
        .collect();
    let mixed = reconstruct_frames(prefix.iter().chain(&wall).cloned().map(Ok), &cfg).unwrap();
    let reference = reconstruct_frames(prefix.iter().cloned().map(Ok), &cfg).unwrap();

    let segment = &mixed.records[prefix.len()..];
    let lost_with_reason = segment.iter().all(|r| {
        r.status.state == TrackState::Lost
            && matches!(r.status.reason, Some(LossReason::NoKeypoints | LossReason::MatchFailure))
            && r.pose.is_none()
    });
    let prefix_tracked = mixed.records[..prefix.len()].iter().all(|r| r.status.is_tracking());
    let map_excludes = mixed.map == reference.map && mixed.poses[prefix.len()..].iter().all(Option::is_none);
    let reasons: Vec<String> = segment.iter().map(|r| format!("{:?}", r.status.reason)).collect();
    report(
        "5 track loss",
        lost_with_reason && prefix_tracked && map_excludes,
        &format!(
            "room prefix tracked: {prefix_tracked}; plane segment reasons {}; map identical to prefix-only map: {map_excludes} ({} points)",
            reasons.join(","),
            mixed.map.len()
        ),
    )
}

fn ring(n: usize) -> Vec<RigidTransform> {
    (0..n)
        .map(|i| {
            let a = i as f64 / n as f64 * std::f64::consts::TAU;
            let eye = Point3::new(1.3 * a.cos(), 1.3 * a.sin(), 1.45);
            look_at(eye, Point3::new(0.0, 0.0, 0.9))
        })
        .collect()
}

fn noisy_relative(rng: &mut ChaCha8Rng, a: &RigidTransform, b: &RigidTransform, sigma_t: f64, sigma_r: f64) -> RigidTransform {
    let nt = Normal::new(0.0, sigma_t).unwrap();
    let nr = Normal::new(0.0, sigma_r).unwrap();
    let xi = Twist::new(nt.sample(rng), nt.sample(rng), nt.sample(rng), nr.sample(rng), nr.sample(rng), nr.sample(rng));
    a.inverse().compose(b).compose(&lie::exp(&xi))
}

fn criterion_6a() -> bool {
    const N: usize = 30;
    let truth = ring(N);
    let mut improved = 0;
    let mut ratios = Vec::new();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = PoseGraph::default();
        let mut pose = truth[0];
        g.add_node(0, pose);
        for i in 1..N {
            let z = noisy_relative(&mut rng, &truth[i - 1], &truth[i], 0.003, 0.2f64.to_radians());
            pose = pose.compose(&z);
            g.add_node(i, pose);
            g.add_edge(PoseEdge::new(i - 1, i, z, Matrix6::identity(), EdgeKind::Odometry)).unwrap();
        }
        let z = noisy_relative(&mut rng, &truth[N - 1], &truth[0], 0.003, 0.2f64.to_radians());
        g.add_edge(PoseEdge::new(N - 1, 0, z, Matrix6::identity(), EdgeKind::LoopClosure)).unwrap();
        let (opt, _) = optimize_graph(&g, &OptimizeParams::default()).unwrap();
        let before = (g.nodes[N - 1].pose.translation() - truth[N - 1].translation()).norm();
        let after = (opt.nodes[N - 1].pose.translation() - truth[N - 1].translation()).norm();
        if after < before {
            improved += 1;
        }
        ratios.push(after / before);
    }
    ratios.sort_by(f64::total_cmp);
    report(
        "6a loop closure benefit",
        improved >= 95,
        &format!("final-keyframe error reduced in {improved}/100 seeds (median after/before {:.3})", ratios[50]),
    )
}

fn criterion_6b() -> bool {
    const N: usize = 10;
    const BAD: usize = 3;
    let truth: Vec<RigidTransform> = (0..N)
        .map(|i| {
            let a = i as f64 / N as f64 * std::f64::consts::TAU;
            RigidTransform::from_axis_angle(&Vector3::z(), a, Vector3::new(2.0 * a.cos(), 2.0 * a.sin(), 0.0))
        })
        .collect();
    let build = |bad: Option<RigidTransform>| {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let mut g = PoseGraph::default();
        for (i, p) in truth.iter().enumerate() {
            g.add_node(i, *p);
        }
        for i in 0..N - 1 {
            let mut z = noisy_relative(&mut rng, &truth[i], &truth[i + 1], 0.002, 0.002);
            if i == BAD {
                if let Some(err) = bad {
                    z = z.compose(&err);
                }
            }
            g.add_edge(PoseEdge::new(i, i + 1, z, Matrix6::identity(), EdgeKind::Odometry)).unwrap();
            if i + 2 < N {
                let z = noisy_relative(&mut rng, &truth[i], &truth[i + 2], 0.002, 0.002);
                g.add_edge(PoseEdge::new(i, i + 2, z, Matrix6::identity(), EdgeKind::Odometry)).unwrap();
            }
        }
        let closure = truth[N - 1].inverse().compose(&truth[0]);
        g.add_edge(PoseEdge::new(N - 1, 0, closure, Matrix6::identity() * 0.5, EdgeKind::LoopClosure))
            .unwrap();
        g
    };
    let displacement = |a: &PoseGraph, b: &PoseGraph| -> Vec<f64> {
        a.nodes
            .iter()
            .zip(&b.nodes)
            .map(|(x, y)| (x.pose.translation() - y.pose.translation()).norm())
            .collect()
    };
    let bad = RigidTransform::from_axis_angle(&Vector3::z(), 0.2, Vector3::new(0.8, -0.6, 0.0));
    let magnitude = lie::log(&bad).norm();
    let plain = OptimizeParams {
        robust: false,
        ..OptimizeParams::default()
    };
    let clean = build(None);
    let clean_max = displacement(&clean, &optimize_graph(&clean, &plain).unwrap().0)
        .into_iter()
        .fold(0.0, f64::max);
    let g = build(Some(bad));
    let plain_max = displacement(&g, &optimize_graph(&g, &plain).unwrap().0)
        .into_iter()
        .fold(0.0, f64::max);
    let (huber_out, huber_report) = optimize_graph(&g, &OptimizeParams::default()).unwrap();
    let far_max = displacement(&g, &huber_out)
        .into_iter()
        .enumerate()
        .filter(|(i, _)| *i != BAD && *i != BAD + 1)
        .map(|(_, d)| d)
        .fold(0.0, f64::max);
    let bad_edge = g.edges.iter().position(|e| e.from == BAD && e.to == BAD + 1);
    let pass = plain_max > 5.0 * clean_max && far_max < magnitude && huber_report.max_residual_edge == bad_edge;
    report(
        "6b bad edge",
        pass,
        &format!(
            "plain max displacement {plain_max:.3} m vs clean {clean_max:.5} m; Huber non-adjacent max {far_max:.3} m < bad edge error {magnitude:.3}; max-residual edge {:?} (bad edge {bad_edge:?})",
            huber_report.max_residual_edge
        ),
    )
}

fn random_pose(rng: &mut ChaCha8Rng, scale: f64) -> RigidTransform {
    let xi = Twist::from_fn(|_, _| rng.random_range(-scale..scale));
    lie::exp(&xi)
}

fn oracle_plane(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n = rng.random_range(3..80);
    let frame = random_pose(rng, 2.0);
    let pts: Vec<Point3<f64>> = (0..n)
        .map(|_| {
            frame.apply(&Point3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.1..0.1),
            ))
        })
        .collect();
    let cloud = PointCloud::from_points(pts);
    let fit = fit_plane(&cloud).map_err(|e| e.to_string())?;
    let c = cloud.points.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n as f64;
    let m = DMatrix::from_fn(n, 3, |i, k| cloud.points[i][k] - c[k]);
    let svd = m.svd(false, true);
    let vt = svd.v_t.unwrap();
    let k = svd.singular_values.imin();
    let oracle = Vector3::new(vt[(k, 0)], vt[(k, 1)], vt[(k, 2)]);
    let sign = fit.normal.dot(&oracle).signum();
    let dn = (fit.normal - oracle * sign).norm();
    let doff = (fit.offset - sign * oracle.dot(&c)).abs();
    if dn < 1e-9 && doff < 1e-9 {
        Ok(())
    } else {
        Err(format!("normal diff {dn:e}, offset diff {doff:e}"))
    }
}

fn oracle_knn(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n = rng.random_range(1..800);
    let pts: Vec<Point3<f64>> = (0..n)
        .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let tree = KdTree::new(&pts);
    for _ in 0..10 {
        let q = Point3::new(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2));
        let k = rng.random_range(1..25);
        let mut brute: Vec<(f64, usize)> = pts.iter().enumerate().map(|(i, p)| ((p - q).norm_squared(), i)).collect();
        brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        brute.truncate(k);
        let got: Vec<(f64, usize)> = tree.knn(&q, k).into_iter().map(|n| (n.dist_sq, n.index)).collect();
        if got != brute {
            return Err(format!("k={k}: {got:?} vs {brute:?}"));
        }
    }
    Ok(())
}

fn oracle_svd_transform(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n = rng.random_range(3..60);
    let planted = random_pose(rng, 3.0);
    let src: Vec<Point3<f64>> = (0..n)
        .map(|_| Point3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
        .collect();
    let dst: Vec<Point3<f64>> = src.iter().map(|p| planted.apply(p)).collect();
    let est = estimate_transform_svd(&src, &dst).map_err(|e| e.to_string())?;
    let dr = (est.rotation_matrix() - planted.rotation_matrix()).abs().max();
    let dt = (est.translation() - planted.translation()).abs().max();
    if dr < 1e-9 && dt < 1e-9 {
        Ok(())
    } else {
        Err(format!("rotation diff {dr:e}, translation diff {dt:e}"))
    }
}

fn oracle_jacobians(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let xi = random_pose(rng, 1.0);
    let xj = random_pose(rng, 1.0);
    let z = xi.inverse().compose(&xj).compose(&random_pose(rng, 0.3));
    let edge = PoseEdge::new(0, 1, z, Matrix6::identity(), EdgeKind::Odometry);
    let (af, at) = edge_jacobians(&edge, &xi, &xj);
    let h = 1e-6;
    let mut nf = Matrix6::zeros();
    let mut nt = Matrix6::zeros();
    for k in 0..6 {
        let mut d = Twist::zeros();
        d[k] = h;
        let diff = |a: Twist, b: Twist| (a - b) / (2.0 * h);
        nf.set_column(
            k,
            &diff(edge.residual(&xi.compose(&lie::exp(&d)), &xj), edge.residual(&xi.compose(&lie::exp(&-d)), &xj)),
        );
        nt.set_column(
            k,
            &diff(edge.residual(&xi, &xj.compose(&lie::exp(&d))), edge.residual(&xi, &xj.compose(&lie::exp(&-d)))),
        );
    }
    let rf = (af - nf).norm() / nf.norm();
    let rt = (at - nt).norm() / nt.norm();
    if rf < 1e-5 && rt < 1e-5 {
        Ok(())
    } else {
        Err(format!("relative errors {rf:e} {rt:e}"))
    }
}

/// Three randomly tilted colored patches meeting near the origin.
fn random_corner(rng: &mut ChaCha8Rng) -> PointCloud {
    let mut cloud = PointCloud {
        points: Vec::new(),
        colors: Some(Vec::new()),
        normals: Some(Vec::new()),
    };
    let base = random_pose(rng, 3.0).rotation_matrix();
    for axis in 0..3 {
        let tilt = RigidTransform::from_axis_angle(
            &Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0),
            rng.random_range(-0.2..0.2),
            Vector3::zeros(),
        )
        .rotation_matrix();
        let frame = base * tilt;
        let (u, v, normal) = (frame.column((axis + 1) % 3), frame.column((axis + 2) % 3), frame.column(axis));
        let color = [rng.random_range(0..=255u8), rng.random_range(0..=255u8), rng.random_range(0..=255u8)];
        for _ in 0..rng.random_range(150..300) {
            let p = u * rng.random_range(0.0..0.3) + v * rng.random_range(0.0..0.3);
            cloud.points.push(Point3::from(p));
            cloud.normals.as_mut().unwrap().push(normal.into_owned());
            cloud.colors.as_mut().unwrap().push(color);
        }
    }
    cloud
}

fn descriptor_gap(a: &CShotDescriptor, b: &CShotDescriptor) -> f64 {
    let l2 = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    l2(&a.geometric, &b.geometric).max(l2(&a.color, &b.color))
}

fn oracle_descriptor(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let cloud = random_corner(rng);
    let kp = Point3::new(rng.random_range(0.02..0.08), rng.random_range(0.02..0.08), rng.random_range(0.02..0.08));
    let kp = cloud.points[KdTree::new(&cloud.points).nearest(&kp).unwrap().index];
    let motion = random_pose(rng, 3.0);
    let params = DescriptorParams::default();
    let a = describe_keypoints(&[kp], &cloud, &params).map_err(|e| e.to_string())?;
    let b = describe_keypoints(&[motion.apply(&kp)], &transform_cloud(&cloud, &motion), &params).map_err(|e| e.to_string())?;
    match (&a[0], &b[0]) {
        (Some(a), Some(b)) if descriptor_gap(a, b) < 1e-6 => Ok(()),
        (Some(a), Some(b)) => Err(format!("descriptor gap {:e}", descriptor_gap(a, b))),
        _ => Err("keypoint not described".into()),
    }
}

fn oracle_icp(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let target = random_corner(rng);
    let perturb = random_motion(rng, 0.05, 5f64.to_radians());
    let noise = Normal::new(0.0, 0.002).unwrap();
    let mut source = transform_cloud(&target, &perturb.inverse());
    for p in &mut source.points {
        *p += Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
    }
    let r = icp_point_to_plane(&source, &target, &RigidTransform::identity(), &IcpParams::default())
        .map_err(|e| e.to_string())?;
    match r.objective_history.windows(2).position(|w| w[1] > w[0]) {
        None if r.objective_history.len() >= 2 => Ok(()),
        None => Err("no objective history".into()),
        Some(i) => Err(format!("objective rose at iteration {}: {:?}", i + 1, r.objective_history)),
    }
}

fn criterion_7() -> bool {
    type Oracle = fn(&mut ChaCha8Rng) -> Result<(), String>;
    let suites: [(&str, Oracle); 6] = [
        ("plane fit vs SVD", oracle_plane),
        ("k-NN vs brute force", oracle_knn),
        ("SVD transform vs planted", oracle_svd_transform),
        ("Jacobians vs finite differences", oracle_jacobians),
        ("descriptor rotation invariance", oracle_descriptor),
        ("ICP objective monotone", oracle_icp),
    ];
    let mut all = true;
    let mut parts = Vec::new();
    for (name, oracle) in suites {
        let failures: Vec<String> = (0..100u64)
            .filter_map(|seed| oracle(&mut ChaCha8Rng::seed_from_u64(seed)).err().map(|e| format!("seed {seed}: {e}")))
            .collect();
        all &= failures.is_empty();
        parts.push(format!("{name} {}/100", 100 - failures.len()));
        if let Some(first) = failures.first() {
            parts.push(format!("(first failure {first})"));
        }
    }
    report("7 oracle suites", all, &parts.join("; "))
}

#[test]
fn acceptance_criteria() {
    let mut results = Vec::new();
    let cfg = PipelineConfig::default().with_seed(SEED);
    let noise = cfg.noise.clone();

    let first_dir = tempfile::tempdir().unwrap();
    let first = disk_run(first_dir.path(), &cfg);
    let errors = wall_errors(&first.eval);
    let floor = noise_floor(&first.eval, &first.ground_truth, &noise);
    let within = errors.iter().zip(&floor).all(|(e, f)| *e <= 0.015 && e >= f);
    let fast = first.elapsed <= Duration::from_secs(300);
    results.push(report(
        "1 planarity",
        within && fast,
        &format!(
            "mean |d| {} mm (limit 15, noise floor {} mm); tracked {:.0}%, ATE {:.2} mm; runtime {:.0} s (limit 300)",
            mm(&errors),
            mm(&floor),
            first.rec.tracked_fraction() * 100.0,
            first.eval.report.trajectory.as_ref().unwrap().ate_rmse * 1e3,
            first.elapsed.as_secs_f64()
        ),
    ));

    let noisy_dev = perpendicular_deviation(&first.eval);
    let (_, clean_eval) = memory_run(&NoiseModel::none(), false);
    let clean_dev = perpendicular_deviation(&clean_eval);
    results.push(report(
        "2 perpendicularity",
        noisy_dev <= 3.0 && clean_dev <= 0.3,
        &format!("noisy {noisy_dev:.3} deg (limit 3.0), noise-free {clean_dev:.3} deg (limit 0.3)"),
    ));

    results.push(criterion_3());

    let (dark_rec, dark_eval) = memory_run(&noise, true);
    let dark_errors = wall_errors(&dark_eval);
    let tracked = dark_rec.tracked_fraction();
    results.push(report(
        "4 darkness",
        tracked >= 0.9 && dark_errors.iter().zip(&errors).all(|(d, c)| *d <= 2.0 * c),
        &format!(
            "tracked {:.0}% (limit 90); wall mean |d| {} mm vs colored {} mm (limit 2x)",
            tracked * 100.0,
            mm(&dark_errors),
            mm(&errors)
        ),
    ));

    results.push(criterion_5());
    results.push(criterion_6a());
    results.push(criterion_6b());
    results.push(criterion_7());

    let second_dir = tempfile::tempdir().unwrap();
    disk_run(second_dir.path(), &cfg);
    let (a, b) = (first_dir.path(), second_dir.path());
    let (ra, rb) = (a.join("run"), b.join("run"));
    let same_sequence = sequences_equal(&a.join("seq"), &b.join("seq"));
    let same_outputs = ["trajectory.txt", "graph.txt", "map.ply", "evaluation.json"]
        .iter()
        .all(|f| files_equal(&ra, &rb, f));
    let same_report = run_report_without_timings(&ra) == run_report_without_timings(&rb);
    results.push(report(
        "8 determinism",
        same_sequence && same_outputs && same_report,
        &format!(
            "sequence identical: {same_sequence}; trajectory/graph/map/evaluation identical: {same_outputs}; run report identical without timings: {same_report}"
        ),
    ));

    let failed = results.iter().filter(|p| !**p).count();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
