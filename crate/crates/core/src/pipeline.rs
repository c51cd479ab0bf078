//! End-to-end runs tying the modules together: simulate a sequence,
//! reconstruct it, optimize the keyframe graph and evaluate the result.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::Matrix6;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{
    align_trajectories, fit_plane, planarity_error_map, select_region, trajectory_ate, AngleReport, ErrorMap,
    EvaluationReport, PlaneReport, Region, TrajectoryReport,
};
use crate::frontend::{FrameRecord, LossReason, MapState, TrackState};
use crate::geometry::{transform_cloud, PointCloud, RgbdFrame, RigidTransform, VoxelAccumulator};
use crate::io::config::PipelineConfig;
use crate::io::sequence::frame_timestamp;
use crate::io::trajectory::StampedPose;
use crate::posegraph::{detect_loop_closures, optimize_graph, EdgeKind, OptimizeReport, PoseEdge, PoseGraph};
use crate::registration::{prepare_frame, register_pair, FrameFeatures, RegistrationResult};

/// File names inside a run directory.
pub const MAP_FILE: &str = "map.ply";
pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const GRAPH_FILE: &str = "graph.txt";
pub const REPORT_FILE: &str = "report.json";

/// Version tag written into every report.
pub const REPORT_VERSION: u32 = 1;

/// Output of a reconstruction.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    /// Frontend record per frame.
    pub records: Vec<FrameRecord>,
    /// Final pose per frame (after graph optimization when enabled).
    pub poses: Vec<Option<RigidTransform>>,
    /// Keyframe graph, optimized when enabled.
    pub graph: PoseGraph,
    pub optimization: Option<OptimizeReport>,
    pub map: PointCloud,
    pub timings: Timings,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: f64,
    pub graph_ms: f64,
    pub frame_ms: Vec<f64>,
}

impl Reconstruction {
    pub fn tracked_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.status.is_tracking()).count() as f64 / self.records.len() as f64
    }

    /// Poses of tracked frames, stamped with their frame timestamps.
    pub fn trajectory(&self) -> Vec<StampedPose> {
        self.records
            .iter()
            .zip(&self.poses)
            .filter_map(|(r, p)| {
                p.map(|pose| StampedPose {
                    timestamp: frame_timestamp(r.frame_index),
                    pose,
                })
            })
            .collect()
    }

    /// Frontend (unoptimized) poses of tracked frames.
    pub fn frontend_trajectory(&self) -> Vec<StampedPose> {
        self.records
            .iter()
            .filter_map(|r| {
                r.pose.map(|pose| StampedPose {
                    timestamp: frame_timestamp(r.frame_index),
                    pose,
                })
            })
            .collect()
    }
}

fn odometry_information(cfg: &PipelineConfig) -> Matrix6<f64> {
    Matrix6::identity() * cfg.graph.loop_closure.odometry_information_scale
}

/// Runs the frontend over `frames` in order, then (if enabled) builds and
/// optimizes the keyframe graph and rebuilds the map from the optimized poses.
/// Frames are preprocessed in parallel batches; tracking is sequential.
pub fn reconstruct_frames<I>(frames: I, cfg: &PipelineConfig) -> Result<Reconstruction>
where
    I: IntoIterator<Item = Result<RgbdFrame>>,
{
    cfg.validate()?;
    let start = Instant::now();
    let mut state = MapState::new(cfg.frontend.clone(), cfg.registration.clone())?;
    let batch = rayon::current_num_threads().max(1) * 2;
    let mut clouds: Vec<Option<PointCloud>> = Vec::new();
    let mut iter = frames.into_iter();
    loop {
        let chunk: Vec<RgbdFrame> = iter.by_ref().take(batch).collect::<Result<_>>()?;
        if chunk.is_empty() {
            break;
        }
        let prepared: Vec<(usize, f64, FrameFeatures)> = chunk
            .par_iter()
            .map(|f| {
                let t = Instant::now();
                prepare_frame(f, &cfg.registration).map(|feat| (f.frame_index, t.elapsed().as_secs_f64() * 1e3, feat))
            })
            .collect::<Result<_>>()?;
        for (index, ms, features) in prepared {
            let cloud = features.cloud.clone();
            let record = state.process_prepared(index, features, ms)?;
            clouds.push(record.status.is_tracking().then_some(cloud));
        }
    }
    if state.trajectory.is_empty() {
        return Err(Error::EmptySelection("sequence has no frames".into()));
    }
    let graph_start = Instant::now();
    let mut graph = PoseGraph::default();
    for kf in &state.keyframes {
        graph.add_node(kf.frame_index, kf.pose);
    }
    let info = odometry_information(cfg);
    for k in 1..state.keyframes.len() {
        let (a, b) = (&state.keyframes[k - 1], &state.keyframes[k]);
        graph.add_edge(PoseEdge::new(k - 1, k, a.pose.inverse().compose(&b.pose), info, EdgeKind::Odometry))?;
    }

    let mut optimization = None;
    let mut poses: Vec<Option<RigidTransform>> = state.trajectory.iter().map(|r| r.pose).collect();
    let mut map = state.map_cloud();
    if cfg.graph.optimize && state.keyframes.len() >= 2 {
        if cfg.graph.second_order_edges {
            let extra: Vec<PoseEdge> = (2..state.keyframes.len())
                .into_par_iter()
                .filter_map(|k| {
                    let (a, b) = (&state.keyframes[k - 2], &state.keyframes[k]);
                    let reg = register_pair(&b.features, &a.features, &cfg.registration).ok()?;
                    consistent(&reg.result, &a.pose.inverse().compose(&b.pose), cfg)
                        .then(|| PoseEdge::new(k - 2, k, reg.result.transform, info, EdgeKind::Odometry))
                })
                .collect();
            for e in extra {
                graph.add_edge(e)?;
            }
        }
        let closures = detect_loop_closures(&state.keyframes, &cfg.graph.loop_closure, &cfg.registration)?;
        log::info!("{} loop closures among {} keyframes", closures.len(), state.keyframes.len());
        for e in closures {
            graph.add_edge(e)?;
        }
        let (optimized, report) = optimize_graph(&graph, &cfg.graph.optimizer)?;
        poses = reanchor(&state.trajectory, &graph, &optimized);
        graph = optimized;
        optimization = Some(report);
        let mut acc = VoxelAccumulator::new(cfg.frontend.map_voxel)?;
        for (cloud, pose) in clouds.iter().zip(&poses) {
            if let (Some(c), Some(p)) = (cloud, pose) {
                acc.insert(&transform_cloud(c, p));
            }
        }
        map = acc.to_cloud();
    }
    let graph_ms = graph_start.elapsed().as_secs_f64() * 1e3;
    let timings = Timings {
        total_ms: start.elapsed().as_secs_f64() * 1e3,
        graph_ms,
        frame_ms: state.trajectory.iter().map(|r| r.elapsed_ms).collect(),
    };
    Ok(Reconstruction {
        records: state.trajectory,
        poses,
        graph,
        optimization,
        map,
        timings,
    })
}

/// A second-order registration is only trusted if it roughly agrees with the
/// chained frontend estimate.
fn consistent(result: &RegistrationResult, chained: &RigidTransform, cfg: &PipelineConfig) -> bool {
    let (dt, dr) = result.transform.distance_to(chained);
    result.converged && dt <= cfg.graph.consistency_translation && dr <= cfg.graph.consistency_rotation_deg.to_radians()
}

/// Moves every tracked frame rigidly with its reference keyframe.
fn reanchor(records: &[FrameRecord], before: &PoseGraph, after: &PoseGraph) -> Vec<Option<RigidTransform>> {
    let nodes: HashMap<usize, usize> = before.nodes.iter().enumerate().map(|(i, n)| (n.keyframe_index, i)).collect();
    records
        .iter()
        .map(|r| {
            let pose = r.pose?;
            let anchor = if r.is_keyframe { Some(r.frame_index) } else { r.reference_keyframe };
            match anchor.and_then(|a| nodes.get(&a)) {
                Some(&i) => {
                    let rel = before.nodes[i].pose.inverse().compose(&pose);
                    Some(after.nodes[i].pose.compose(&rel))
                }
                None => Some(pose),
            }
        })
        .collect()
}

/// Loss-reason counts and per-frame status used in the run report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame_index: usize,
    pub timestamp: f64,
    pub status: TrackState,
    pub reason: Option<LossReason>,
    pub is_keyframe: bool,
    pub reference_keyframe: Option<usize>,
    pub keypoints: usize,
    pub described: usize,
    pub matches: usize,
    pub inliers: usize,
    /// Final camera-to-world pose.
    pub pose: Option<RigidTransform>,
    /// Pose as estimated by the frontend before graph optimization.
    pub frontend_pose: Option<RigidTransform>,
    pub registration: Option<RegistrationResult>,
    pub coarse_registration: Option<RegistrationResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub nodes: usize,
    pub odometry_edges: usize,
    pub loop_closures: usize,
    pub optimization: Option<OptimizeReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub config: PipelineConfig,
    pub frame_count: usize,
    pub tracked_frames: usize,
    pub keyframes: usize,
    pub map_points: usize,
    pub frames: Vec<FrameReport>,
    pub graph: GraphSummary,
    /// Wall-clock measurements; the only non-deterministic part of a report.
    pub timings: Timings,
}

impl RunReport {
    pub fn new(rec: &Reconstruction, cfg: &PipelineConfig) -> Self {
        let frames = rec
            .records
            .iter()
            .zip(&rec.poses)
            .map(|(r, pose)| FrameReport {
                frame_index: r.frame_index,
                timestamp: frame_timestamp(r.frame_index),
                status: r.status.state,
                reason: r.status.reason,
                is_keyframe: r.is_keyframe,
                reference_keyframe: r.reference_keyframe,
                keypoints: r.keypoints,
                described: r.described,
                matches: r.matches,
                inliers: r.inliers,
                pose: *pose,
                frontend_pose: r.pose,
                registration: r.registration.as_ref().map(|p| p.result.clone()),
                coarse_registration: r.registration.as_ref().map(|p| p.coarse.clone()),
            })
            .collect();
        let count = |k: EdgeKind| rec.graph.edges.iter().filter(|e| e.kind == k).count();
        RunReport {
            version: REPORT_VERSION,
            config: cfg.clone(),
            frame_count: rec.records.len(),
            tracked_frames: rec.records.iter().filter(|r| r.status.is_tracking()).count(),
            keyframes: rec.graph.nodes.len(),
            map_points: rec.map.len(),
            frames,
            graph: GraphSummary {
                nodes: rec.graph.nodes.len(),
                odometry_edges: count(EdgeKind::Odometry),
                loop_closures: count(EdgeKind::LoopClosure),
                optimization: rec.optimization.clone(),
            },
            timings: rec.timings.clone(),
        }
    }
}

/// Writes map, trajectory, graph and report into `out`.
pub fn write_run(out: &Path, rec: &Reconstruction, cfg: &PipelineConfig) -> Result<RunReport> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    crate::io::write_ply(&rec.map, &out.join(MAP_FILE))?;
    crate::io::write_trajectory(&out.join(TRAJECTORY_FILE), &rec.trajectory())?;
    crate::posegraph::write_graph(&out.join(GRAPH_FILE), &rec.graph)?;
    let report = RunReport::new(rec, cfg);
    write_json(&out.join(REPORT_FILE), &report)?;
    Ok(report)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_run_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Pairs estimated and ground-truth poses with matching timestamps.
pub fn associate(estimated: &[StampedPose], ground_truth: &[StampedPose]) -> (Vec<RigidTransform>, Vec<RigidTransform>) {
    const TOLERANCE: f64 = 1e-4;
    let mut est = Vec::new();
    let mut gt = Vec::new();
    for e in estimated {
        let i = ground_truth.partition_point(|g| g.timestamp < e.timestamp - TOLERANCE);
        if let Some(g) = ground_truth.get(i).filter(|g| (g.timestamp - e.timestamp).abs() <= TOLERANCE) {
            est.push(e.pose);
            gt.push(g.pose);
        }
    }
    (est, gt)
}

/// Result of evaluating a map.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvaluationReport,
    /// Per-region selection (in the evaluation frame) and its error map.
    pub error_maps: Vec<(String, PointCloud, ErrorMap)>,
    /// Transform applied to the map before region selection.
    pub map_to_world: RigidTransform,
}

pub const DISTANCE_POPULATION: &str = "all points inside each region";

/// Fits a plane per region and reports planarity, pairwise angles and, with
/// ground truth, the ATE. With ground truth the map is first moved into the
/// world frame by the trajectory alignment; otherwise regions are taken in
/// map coordinates.
pub fn evaluate_map(
    map: &PointCloud,
    regions: &[(String, Region)],
    estimated: Option<&[StampedPose]>,
    ground_truth: Option<&[StampedPose]>,
) -> Result<Evaluation> {
    evaluate_map_with(map, regions, estimated, ground_truth, false)
}

/// Like [`evaluate_map`], but with `skip_sparse` a region holding fewer than
/// three map points is listed in `skipped_regions` instead of failing.
pub fn evaluate_map_with(
    map: &PointCloud,
    regions: &[(String, Region)],
    estimated: Option<&[StampedPose]>,
    ground_truth: Option<&[StampedPose]>,
    skip_sparse: bool,
) -> Result<Evaluation> {
    let mut report = EvaluationReport {
        distance_population: DISTANCE_POPULATION.into(),
        ..EvaluationReport::default()
    };
    let mut map_to_world = RigidTransform::identity();
    if let (Some(est), Some(gt)) = (estimated, ground_truth) {
        let (e, g) = associate(est, gt);
        if e.is_empty() {
            return Err(Error::AlignmentFailed("no estimated pose matches a ground-truth timestamp".into()));
        }
        map_to_world = align_trajectories(&e, &g)?;
        report.trajectory = Some(TrajectoryReport {
            pose_count: e.len(),
            ate_rmse: trajectory_ate(&e, &g)?,
        });
    }
    let world = transform_cloud(map, &map_to_world);
    let mut fits = Vec::new();
    let mut error_maps = Vec::new();
    for (name, region) in regions {
        if skip_sparse && select_region(&world, region).map_or(true, |s| s.len() < 3) {
            log::warn!("region {name} has too few map points; skipped");
            report.skipped_regions.push(name.clone());
            continue;
        }
        let sel = select_region(&world, region).map_err(|e| match e {
            Error::EmptySelection(_) => Error::EmptySelection(format!("region {name} contains no map points")),
            other => other,
        })?;
        let fit = fit_plane(&sel)?;
        let em = planarity_error_map(&sel, &fit);
        report.planes.push(PlaneReport::new(name, &fit, &em));
        fits.push((name.clone(), fit));
        error_maps.push((name.clone(), sel, em));
    }
    for i in 0..fits.len() {
        for j in i + 1..fits.len() {
            report.angles.push(AngleReport::new((&fits[i].0, &fits[i].1), (&fits[j].0, &fits[j].1)));
        }
    }
    Ok(Evaluation {
        report,
        error_maps,
        map_to_world,
    })
}

/// Re-anchors a saved run after graph optimization: every frame keeps its
/// pose relative to its reference keyframe.
pub fn reanchor_report(report: &RunReport, before: &PoseGraph, after: &PoseGraph) -> Vec<StampedPose> {
    let nodes: HashMap<usize, usize> = before.nodes.iter().enumerate().map(|(i, n)| (n.keyframe_index, i)).collect();
    report
        .frames
        .iter()
        .filter_map(|f| {
            let pose = f.pose?;
            let anchor = if f.is_keyframe { Some(f.frame_index) } else { f.reference_keyframe };
            let moved = match anchor.and_then(|a| nodes.get(&a)) {
                Some(&i) => after.nodes[i].pose.compose(&before.nodes[i].pose.inverse().compose(&pose)),
                None => pose,
            };
            Some(StampedPose {
                timestamp: f.timestamp,
                pose: moved,
            })
        })
        .collect()
}

/// Registers frame `to` against frame `from` of a sequence and returns the
/// loop-closure edge between their graph nodes.
pub fn manual_closure(
    graph: &PoseGraph,
    from_frame: &RgbdFrame,
    to_frame: &RgbdFrame,
    cfg: &PipelineConfig,
) -> Result<PoseEdge> {
    let lookup = |f: &RgbdFrame| {
        graph
            .node_by_keyframe(f.frame_index)
            .ok_or_else(|| Error::Parameter(format!("frame {} is not a keyframe in the graph", f.frame_index)))
    };
    let (a, b) = (lookup(from_frame)?, lookup(to_frame)?);
    let fa = prepare_frame(from_frame, &cfg.registration)?;
    let fb = prepare_frame(to_frame, &cfg.registration)?;
    let reg = register_pair(&fb, &fa, &cfg.registration)?;
    if !reg.result.converged {
        return Err(Error::AlignmentFailed(format!(
            "closure {}-{} did not converge",
            from_frame.frame_index, to_frame.frame_index
        )));
    }
    Ok(PoseEdge::new(
        a,
        b,
        reg.result.transform,
        Matrix6::identity() * cfg.graph.loop_closure.information_scale,
        EdgeKind::LoopClosure,
    ))
}
