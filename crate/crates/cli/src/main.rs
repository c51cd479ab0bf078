use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rgbdslam::evaluation::{write_error_map_csv, Region};
use rgbdslam::geometry::{backproject, CameraIntrinsics, PointCloud};
use rgbdslam::io::config::PipelineConfig;
use rgbdslam::io::sequence::{frame_timestamp, read_sequence, SCENE_FILE};
use rgbdslam::io::{read_ply, read_trajectory, write_ply, write_trajectory, StampedPose};
use rgbdslam::pipeline::{self, evaluate_map_with, manual_closure, reanchor_report, reconstruct_frames, write_json, write_run};
use rgbdslam::posegraph::{optimize_graph, read_graph, write_graph};
use rgbdslam::sim::{generate_sequence, preset, NoiseModel, SceneModel, TrajectorySpec, PRESET_NAMES};
use rgbdslam::{Error, Result};

/// Environment variable holding the log filter (e.g. `debug`).
const LOG_ENV: &str = "RGBDSLAM_LOG";

#[derive(Parser)]
#[command(name = "rgbdslam", version, about = "Offline RGB-D reconstruction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic sequence with ground truth.
    Simulate(SimulateArgs),
    /// Track a sequence and write map.ply, trajectory.txt, graph.txt and report.json.
    Reconstruct(ReconstructArgs),
    /// Re-optimize a saved keyframe graph, optionally with manual loop closures.
    Optimize(OptimizeArgs),
    /// Plane, perpendicularity and trajectory metrics for a reconstruction.
    Evaluate(EvaluateArgs),
    /// Format conversions.
    #[command(subcommand)]
    Export(ExportCommand),
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline configuration (TOML); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        let cfg = match self.seed {
            Some(s) => cfg.with_seed(s),
            None => cfg,
        };
        log::info!("resolved configuration:\n{}", cfg.to_toml());
        log::info!("seed: ransac {} noise {}", cfg.registration.ransac.seed, cfg.noise.seed);
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in scene.
    #[arg(long, conflicts_with = "scene")]
    preset: Option<String>,
    /// Scene description (JSON).
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Inward-looking orbit with this many poses.
    #[arg(long, conflicts_with = "trajectory")]
    orbit: Option<usize>,
    /// Camera-to-world poses to render (TUM format).
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Render without sensor noise.
    #[arg(long)]
    no_noise: bool,
    /// Omit color frames.
    #[arg(long)]
    darkness: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ReconstructArgs {
    sequence: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Skip loop closures and graph optimization.
    #[arg(long)]
    no_optimize: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Run directory written by `reconstruct`.
    run: PathBuf,
    /// Manual loop closure between two keyframes, as `FROM:TO` frame indices.
    #[arg(long = "closure", value_parser = parse_pair)]
    closures: Vec<(usize, usize)>,
    /// Sequence the run was reconstructed from (needed for closures).
    #[arg(long)]
    sequence: Option<PathBuf>,
    /// Plain least squares instead of the Huber kernel.
    #[arg(long)]
    no_robust: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run directory or a PLY map.
    input: PathBuf,
    /// Ground-truth trajectory (TUM); enables ATE and world-frame regions.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Estimated trajectory; defaults to trajectory.txt in the run directory.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Scene description with named regions; defaults to scene.json next to the ground truth.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Named scene region to evaluate (repeatable); all scene regions by default.
    #[arg(long = "region")]
    regions: Vec<String>,
    /// Extra box region `NAME:minx,miny,minz,maxx,maxy,maxz`.
    #[arg(long = "box", value_parser = parse_box)]
    boxes: Vec<(String, Region)>,
    /// Output directory; defaults to `evaluation/` inside the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExportCommand {
    /// Convert a PLY cloud to PLY, XYZ or CSV (by output extension).
    Cloud { input: PathBuf, output: PathBuf },
    /// Back-project one sequence frame into a PLY cloud in camera coordinates.
    Frame { sequence: PathBuf, index: usize, output: PathBuf },
    /// Write the vertex poses of a graph file as a TUM trajectory.
    GraphTrajectory { graph: PathBuf, output: PathBuf },
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected FROM:TO")?;
    Ok((
        a.trim().parse().map_err(|_| format!("bad frame index '{a}'"))?,
        b.trim().parse().map_err(|_| format!("bad frame index '{b}'"))?,
    ))
}

fn parse_box(s: &str) -> std::result::Result<(String, Region), String> {
    let (name, rest) = s.split_once(':').ok_or("expected NAME:minx,miny,minz,maxx,maxy,maxz")?;
    let v: Vec<f64> = rest
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("bad number '{x}'")))
        .collect::<std::result::Result<_, _>>()?;
    if v.len() != 6 {
        return Err("box needs six numbers".into());
    }
    Ok((
        name.to_string(),
        Region::Box {
            min: [v[0], v[1], v[2]],
            max: [v[3], v[4], v[5]],
        },
    ))
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let scene = match (&args.preset, &args.scene) {
        (Some(name), _) => preset(name).ok_or_else(|| {
            Error::Parameter(format!("unknown preset '{name}'; known presets: {}", PRESET_NAMES.join(", ")))
        })?,
        (None, Some(path)) => SceneModel::load(path)?,
        (None, None) => return Err(Error::Parameter("one of --preset or --scene is required".into())),
    };
    let trajectory = match (args.orbit, &args.trajectory) {
        (Some(n), _) => TrajectorySpec::room_orbit(n),
        (None, Some(path)) => TrajectorySpec::Poses {
            poses: read_trajectory(path)?.into_iter().map(|p| p.pose).collect(),
        },
        (None, None) => return Err(Error::Parameter("one of --orbit or --trajectory is required".into())),
    };
    let noise = if args.no_noise { NoiseModel::none() } else { cfg.noise.clone() };
    let n = generate_sequence(&scene, &trajectory, &noise, &CameraIntrinsics::kinect_v2(), args.darkness, &args.out)?;
    log::info!("wrote {n} frames to {}", args.out.display());
    Ok(())
}

fn reconstruct(args: &ReconstructArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    if args.no_optimize {
        cfg.graph.optimize = false;
    }
    let seq = read_sequence(&args.sequence)?;
    log::info!("{} frames from {}", seq.frame_count, args.sequence.display());
    let rec = reconstruct_frames(seq.frames(), &cfg)?;
    let report = write_run(&args.out, &rec, &cfg)?;
    log::info!(
        "tracked {}/{} frames, {} keyframes, {} map points",
        report.tracked_frames,
        report.frame_count,
        report.keyframes,
        report.map_points
    );
    Ok(())
}

fn optimize(args: &OptimizeArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    if args.no_robust {
        cfg.graph.optimizer.robust = false;
    }
    let graph = read_graph(&args.run.join(pipeline::GRAPH_FILE))?;
    let report = pipeline::read_run_report(&args.run.join(pipeline::REPORT_FILE))?;
    let mut with_closures = graph.clone();
    if !args.closures.is_empty() {
        let seq_path = args
            .sequence
            .as_ref()
            .ok_or_else(|| Error::Parameter("--closure needs --sequence".into()))?;
        let seq = read_sequence(seq_path)?;
        for &(a, b) in &args.closures {
            for i in [a, b] {
                if i >= seq.frame_count {
                    return Err(Error::Parameter(format!("frame {i} is outside the sequence")));
                }
            }
            let edge = manual_closure(&graph, &seq.read_frame(a)?, &seq.read_frame(b)?, &cfg)?;
            log::info!("closure {a}:{b} added");
            with_closures.add_edge(edge)?;
        }
    }
    let (optimized, opt_report) = optimize_graph(&with_closures, &cfg.graph.optimizer)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    write_graph(&args.out.join(pipeline::GRAPH_FILE), &optimized)?;
    let trajectory = reanchor_report(&report, &graph, &optimized);
    write_trajectory(&args.out.join(pipeline::TRAJECTORY_FILE), &trajectory)?;
    write_json(&args.out.join("optimize.json"), &opt_report)?;
    log::info!(
        "cost {:.6e} -> {:.6e} in {} iterations",
        opt_report.initial_cost,
        opt_report.final_cost,
        opt_report.iterations
    );
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let (map_path, run_dir) = if args.input.is_dir() {
        (args.input.join(pipeline::MAP_FILE), Some(args.input.clone()))
    } else {
        (args.input.clone(), None)
    };
    let map = read_ply(&map_path)?;
    let gt = args.gt.as_ref().map(|p| read_trajectory(p)).transpose()?;
    let est_path = args
        .trajectory
        .clone()
        .or_else(|| run_dir.as_ref().map(|d| d.join(pipeline::TRAJECTORY_FILE)).filter(|p| p.is_file()));
    let est = est_path.as_ref().map(|p| read_trajectory(p)).transpose()?;
    if gt.is_some() && est.is_none() {
        return Err(Error::Parameter("--gt needs an estimated trajectory (--trajectory)".into()));
    }

    let scene_path = args
        .scene
        .clone()
        .or_else(|| args.gt.as_ref().and_then(|g| g.parent()).map(|d| d.join(SCENE_FILE)).filter(|p| p.is_file()));
    let scene = scene_path.as_ref().map(|p| SceneModel::load(p)).transpose()?;
    let mut regions: Vec<(String, Region)> = Vec::new();
    let implicit = args.regions.is_empty();
    if implicit {
        if let Some(scene) = &scene {
            regions.extend(scene.regions.iter().map(|r| (r.name.clone(), Region::from(r))));
        }
    } else {
        let known: Vec<&str> = scene.as_ref().map(|s| s.region_names()).unwrap_or_default();
        for name in &args.regions {
            let region = scene.as_ref().and_then(|s| s.region(name)).ok_or_else(|| {
                Error::Parameter(format!(
                    "unknown region '{name}'; known regions: {}",
                    if known.is_empty() { "(none)".to_string() } else { known.join(", ") }
                ))
            })?;
            regions.push((name.clone(), Region::from(region)));
        }
    }
    regions.extend(args.boxes.iter().cloned());

    let eval = evaluate_map_with(&map, &regions, est.as_deref(), gt.as_deref(), implicit)?;
    let out = match (&args.out, &run_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(d)) => d.join("evaluation"),
        (None, None) => map_path.parent().unwrap_or(Path::new(".")).join("evaluation"),
    };
    std::fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    for (name, cloud, em) in &eval.error_maps {
        write_error_map_csv(&out.join(format!("error_map_{name}.csv")), cloud, em)?;
    }
    write_json(&out.join(pipeline::REPORT_FILE), &eval.report)?;
    for p in &eval.report.planes {
        log::info!("{}: mean |d| {:.2} mm over {} points", p.region, p.mean_abs_distance * 1e3, p.point_count);
    }
    if let Some(t) = &eval.report.trajectory {
        log::info!("ATE {:.2} mm over {} poses", t.ate_rmse * 1e3, t.pose_count);
    }
    Ok(())
}

fn write_cloud_text(path: &Path, cloud: &PointCloud, csv: bool) -> Result<()> {
    use std::fmt::Write as _;
    let mut text = String::new();
    if csv {
        text.push_str("x,y,z\n");
    }
    let sep = if csv { "," } else { " " };
    for p in &cloud.points {
        let _ = writeln!(text, "{}{sep}{}{sep}{}", p.x, p.y, p.z);
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn export(cmd: &ExportCommand) -> Result<()> {
    match cmd {
        ExportCommand::Cloud { input, output } => {
            let cloud = read_ply(input)?;
            match output.extension().and_then(|e| e.to_str()) {
                Some("ply") => write_ply(&cloud, output),
                Some("xyz") => write_cloud_text(output, &cloud, false),
                Some("csv") => write_cloud_text(output, &cloud, true),
                _ => Err(Error::Parameter("output must end in .ply, .xyz or .csv".into())),
            }
        }
        ExportCommand::Frame {
            sequence,
            index,
            output,
        } => {
            let seq = read_sequence(sequence)?;
            if *index >= seq.frame_count {
                return Err(Error::Parameter(format!("frame {index} is outside the sequence")));
            }
            let frame = seq.read_frame(*index)?;
            write_ply(&backproject(&frame.depth, frame.color.as_ref())?, output)
        }
        ExportCommand::GraphTrajectory { graph, output } => {
            let g = read_graph(graph)?;
            let poses: Vec<StampedPose> = g
                .nodes
                .iter()
                .map(|n| StampedPose {
                    timestamp: frame_timestamp(n.keyframe_index),
                    pose: n.pose,
                })
                .collect();
            write_trajectory(output, &poses)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Optimize(a) => optimize(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Export(c) => export(c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("ERROR usage {first}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("ERROR {} {msg}", e.category());
            ExitCode::from(1)
        }
    }
}

