use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use posekit::graph::{gcn_network_forward, graph_unpool, read_features, write_features, GcnNetworkWeights, MeshGraph};
use posekit::image::{load_depth, load_mask};
use posekit::learn::{argmax_rotation, sphere_cnn_forward, train_final_filter, SphereCnnStack, StackConfig};
use posekit::metrics::PointSet;
use posekit::pipeline::{evaluate, GraphMode, Pipeline, RunConfig};
use posekit::sampling::{init_graph_depth, init_graph_plane, CameraIntrinsics};
use posekit::scene::{load_poses, poses_to_json, resolve_mesh, synth_scene, write_atomic, SceneArtifacts, SceneSpec};
use posekit::selftest::selftest;
use posekit::so3::{so3_grid, Rotation};
use posekit::sphere::{dh_grid, raycast_sphere, read_spherical_signal, rotate_signal, write_spherical_signal};
use posekit::{Error, Result};

#[derive(Parser)]
#[command(name = "posekit", version, about = "6D pose estimation toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Maximum scenes processed at once.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene directory.
    Synth {
        /// Random scene with this many objects when no --config is given.
        #[arg(long, default_value_t = 3)]
        objects: usize,
    },
    /// Build, run and unpool mesh graphs.
    #[command(subcommand)]
    Graph(GraphCommand),
    /// Ray-cast, train and infer with spherical correlation stacks.
    #[command(subcommand)]
    Sphere(SphereCommand),
    /// Estimate poses for one or more scene directories.
    Estimate {
        /// Scene directories written by `synth`.
        #[arg(long, required = true, num_args = 1..)]
        scene: Vec<PathBuf>,
        /// Also write per-stage timings as JSON here.
        #[arg(long)]
        stages: Option<PathBuf>,
    },
    /// Score predicted poses against ground truth.
    Eval {
        /// Predicted poses (JSON).
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth poses (JSON), e.g. a scene's `gt.json`.
        #[arg(long)]
        gt: PathBuf,
        /// Directory holding `<object_id>.obj` models.
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value_t = posekit::metrics::AUC_MAX_THRESHOLD)]
        threshold: f64,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Initial graph from a mask, written as OBJ.
    Build {
        /// Binary PGM mask.
        #[arg(long)]
        mask: PathBuf,
        /// JSON camera intrinsics (`fx`, `fy`, `cx`, `cy`).
        #[arg(long)]
        intrinsics: PathBuf,
        /// Depth map (16-bit PGM, millimeters); required in depth mode.
        #[arg(long)]
        depth: Option<PathBuf>,
        /// `depth` back-projects vertices; `plane` places them at --avg-depth.
        #[arg(long, value_parser = parse_mode, default_value = "depth")]
        mode: GraphMode,
        #[arg(long, default_value_t = 20)]
        grid_side: usize,
        #[arg(long, default_value_t = 0.6)]
        avg_depth: f64,
    },
    /// Network forward with seeded random weights; writes offsets as JSON.
    Forward {
        /// Graph OBJ.
        #[arg(long)]
        graph: PathBuf,
        /// Vertex features (`.gft`).
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 8)]
        keypoints: usize,
    },
    /// One unpooling step; writes `<out>.obj` and `<out>.gft`.
    Unpool {
        /// Graph OBJ with parent 2D coordinates.
        #[arg(long)]
        graph: PathBuf,
        /// Vertex features (`.gft`); zero-width when omitted.
        #[arg(long)]
        features: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SphereCommand {
    /// Ray-cast a mesh from its centroid onto a sphere grid.
    Raycast {
        /// Built-in name (blob, cylinder, cube) or OBJ path.
        #[arg(long)]
        mesh: String,
        #[arg(long, default_value_t = 20)]
        b: usize,
    },
    /// Train a stack to recover rotations of a mesh's ray-cast signal.
    Train {
        #[arg(long)]
        mesh: String,
        #[arg(long, default_value_t = 20)]
        b: usize,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 500)]
        samples: usize,
        /// Gradient steps, at most; training may stop earlier.
        #[arg(long, default_value_t = 40)]
        steps: usize,
        #[arg(long, default_value_t = 10.0)]
        rate: f64,
    },
    /// Coarse rotation of a spherical signal under a trained stack.
    Infer {
        /// Stack file written by `sphere train`.
        #[arg(long)]
        stack: PathBuf,
        /// Spherical signal written by `sphere raycast`.
        #[arg(long)]
        signal: PathBuf,
    },
}

fn parse_mode(s: &str) -> std::result::Result<GraphMode, String> {
    match s {
        "depth" => Ok(GraphMode::Depth),
        "plane" => Ok(GraphMode::Plane),
        _ => Err(format!("expected depth or plane, got {s:?}")),
    }
}

fn need_out(c: &Common) -> Result<&Path> {
    c.out.as_deref().ok_or_else(|| Error::InvalidArgument("--out is required".into()))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

fn in_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Format { path: path.display().to_string(), message: e.to_string() })
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    write_atomic(path, (serde_json::to_string_pretty(v).expect("json") + "\n").as_bytes())
}

fn load_graph(graph: &Path, features: Option<&Path>) -> Result<MeshGraph> {
    let feats = match features {
        Some(p) => Some(in_file(p, read_features(&mut read(p)?.as_slice()))?),
        None => None,
    };
    in_file(graph, MeshGraph::from_obj(&String::from_utf8_lossy(&read(graph)?), feats))
}

fn save_graph(g: &MeshGraph, out: &Path) -> Result<()> {
    write_atomic(&out.with_extension("obj"), g.to_obj().as_bytes())?;
    let mut buf = Vec::new();
    write_features(&mut buf, g.features())?;
    write_atomic(&out.with_extension("gft"), &buf)
}

fn run_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn synth(c: &Common, objects: usize) -> Result<()> {
    let mut spec = match &c.config {
        Some(p) => SceneSpec::load(p)?,
        None => SceneSpec::random(objects, c.seed.unwrap_or(0)),
    };
    if let (Some(s), Some(_)) = (c.seed, &c.config) {
        spec.seed = s;
    }
    let out = need_out(c)?;
    synth_scene(&spec)?.write_dir(out)?;
    println!("wrote {} objects to {}", spec.objects.len(), out.display());
    Ok(())
}

fn graph(c: &Common, cmd: GraphCommand) -> Result<()> {
    let out = need_out(c)?;
    match cmd {
        GraphCommand::Build { mask, intrinsics, depth, mode, grid_side, avg_depth } => {
            let m = load_mask(&mask)?;
            let k = CameraIntrinsics::load(&intrinsics)?;
            let g = match (mode, depth) {
                (GraphMode::Depth, Some(d)) => init_graph_depth(&m, &load_depth(&d)?, &k, grid_side)?,
                (GraphMode::Depth, None) => return Err(Error::InvalidArgument("depth mode needs --depth".into())),
                (GraphMode::Plane, _) => init_graph_plane(&m, avg_depth, &k, grid_side)?,
            };
            write_atomic(out, g.to_obj().as_bytes())?;
            println!("{} vertices, {} edges", g.len(), g.edges().len());
        }
        GraphCommand::Forward { graph, features, keypoints } => {
            let g = load_graph(&graph, Some(&features))?;
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed.unwrap_or(0));
            let w = GcnNetworkWeights::random(g.feature_width(), keypoints, &mut rng);
            let o = gcn_network_forward(&g, &w)?;
            let v: Vec<[f64; 3]> = o.graph.vertices().iter().map(|p| [p.x, p.y, p.z]).collect();
            let d: Vec<[f64; 3]> = o.deformation.iter().map(|p| [p.x, p.y, p.z]).collect();
            let k: Vec<Vec<[f64; 3]>> = o.keypoints.iter().map(|r| r.iter().map(|p| [p.x, p.y, p.z]).collect()).collect();
            write_json(out, &json!({"stage_sizes": o.stage_sizes, "vertices": v, "deformation": d, "keypoint_offsets": k}))?;
        }
        GraphCommand::Unpool { graph, features } => {
            let g = graph_unpool(&load_graph(&graph, features.as_deref())?)?;
            save_graph(&g, out)?;
            println!("{} vertices, {} edges", g.len(), g.edges().len());
        }
    }
    Ok(())
}

fn sphere(c: &Common, cmd: SphereCommand) -> Result<()> {
    let out = need_out(c)?;
    match cmd {
        SphereCommand::Raycast { mesh, b } => {
            let m = resolve_mesh(&mesh)?;
            let s = raycast_sphere(&m, &m.centroid(), &dh_grid(b)?)?;
            let mut buf = Vec::new();
            write_spherical_signal(&mut buf, &s)?;
            write_atomic(out, &buf)?;
        }
        SphereCommand::Train { mesh, b, n, samples, steps, rate } => {
            let m = resolve_mesh(&mesh)?;
            let reference = raycast_sphere(&m, &m.centroid(), &dh_grid(b)?)?;
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed.unwrap_or(0));
            let stack = SphereCnnStack::for_reference(&reference, so3_grid(n)?, &StackConfig::recovery(), &mut rng)?;
            let data: Vec<_> = (0..samples)
                .map(|_| {
                    let r = Rotation::random(&mut rng);
                    (rotate_signal(&r, &reference), r)
                })
                .collect();
            let (trained, report) = train_final_filter(&data, &stack, steps, rate)?;
            let mut buf = Vec::new();
            trained.write(&mut buf)?;
            write_atomic(out, &buf)?;
            let first = report.losses.first().copied().unwrap_or(f64::NAN);
            let last = report.losses.last().copied().unwrap_or(f64::NAN);
            println!("{} steps, loss {first:.4} -> {last:.4}", report.step_sizes.len());
        }
        SphereCommand::Infer { stack, signal } => {
            let s = in_file(&stack, SphereCnnStack::read(&mut read(&stack)?.as_slice()))?;
            let f = in_file(&signal, read_spherical_signal(&mut read(&signal)?.as_slice()))?;
            let c = argmax_rotation(&sphere_cnn_forward(&f, &s, s.rotation_grid())?)?;
            write_json(out, &json!({"R": c.rotation, "confidence": c.confidence, "node": c.node}))?;
        }
    }
    Ok(())
}

fn estimate(c: &Common, scenes: &[PathBuf], stages: Option<&Path>) -> Result<()> {
    let out = need_out(c)?;
    let pipeline = Pipeline::new(run_config(c)?)?;
    let many = scenes.len() > 1;
    if many {
        std::fs::create_dir_all(out).map_err(|source| Error::Io { path: out.display().to_string(), source })?;
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<serde_json::Value>)>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..c.jobs.clamp(1, scenes.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(dir) = scenes.get(i) else { break };
                let r = SceneArtifacts::read_dir(dir).and_then(|a| pipeline.run(&a)).and_then(|o| {
                    let name = dir.file_name().map_or("scene".into(), |n| n.to_string_lossy().into_owned());
                    let target = if many { out.join(format!("{name}.json")) } else { out.to_path_buf() };
                    write_atomic(&target, poses_to_json(&o.poses).as_bytes())?;
                    Ok(json!({"scene": dir.display().to_string(), "stages": o.stages}))
                });
                results.lock().expect("no poisoned lock").push((i, r));
            });
        }
    });
    let mut results = results.into_inner().expect("no poisoned lock");
    results.sort_by_key(|(i, _)| *i);
    let mut records = Vec::new();
    for (i, r) in results {
        records.push(r.map_err(|e| Error::Format { path: scenes[i].display().to_string(), message: e.to_string() })?);
    }
    if let Some(p) = stages {
        write_json(p, &serde_json::Value::Array(records))?;
    }
    println!("estimated {} scene(s)", scenes.len());
    Ok(())
}

fn eval(c: &Common, pred: &Path, gt: &Path, models: &Path, threshold: f64) -> Result<()> {
    let p = load_poses(pred)?;
    let g = load_poses(gt)?;
    let models = g
        .iter()
        .map(|r| {
            let path = models.join(format!("{}.obj", r.object_id));
            let mesh = posekit::mesh::TriMesh::load_obj(&path)?;
            Ok((r.object_id.clone(), PointSet::new(mesh.vertices().to_vec())?))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(&p, &g, &models, threshold)?;
    let text = serde_json::to_value(&report).expect("report serializes");
    match &c.out {
        Some(out) => write_json(out, &text)?,
        None => println!("{}", serde_json::to_string_pretty(&text).expect("json")),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let c = &cli.common;
    match cli.command {
        Command::Synth { objects } => synth(c, objects)?,
        Command::Graph(g) => graph(c, g)?,
        Command::Sphere(s) => sphere(c, s)?,
        Command::Estimate { scene, stages } => estimate(c, &scene, stages.as_deref())?,
        Command::Eval { pred, gt, models, threshold } => eval(c, &pred, &gt, &models, threshold)?,
        Command::Selftest => {
            let r = selftest();
            println!("{r}");
            return Ok(r.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
