//! End-to-end pose estimation over a synthetic scene, plus evaluation.
//!
//! Per object: hemisphere projection, spherical forward and coarse rotation;
//! Poisson sampling, graph initialization, candidate edges, matching and
//! graph filling; GCN forward, keypoint voting and rigid fitting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{gcn_network_forward, GcnLayerWeights, GcnNetworkWeights, GCN_HIDDEN, GCN_INPUT};
use crate::image::{in_file, read_file, FeatureMap, Mask};
use crate::learn::{argmax_rotation, so3_maxpool, sphere_cnn_forward, CoarseRotation, SphereCnnStack, StackConfig};
use crate::metrics::{add_metric, adds_metric, auc, PointSet, PoseRecord, AUC_MAX_THRESHOLD};
use crate::pose::{estimate_pose, select_keypoints_fps, GraphPrediction, KeypointSet};
use crate::sampling::{
    candidate_edges, fill_graph, init_graph_depth, init_graph_plane, match_assign, multiscale_sample,
    poisson_disc_fill,
};
use crate::scene::{SceneArtifacts, CONV_FEATURE_WIDTH, POSE_CHANNELS, SHAPE_CHANNELS};
use crate::so3::so3_grid;
use crate::sphere::{dh_grid, project_hemisphere};

/// Width of the per-sample spherical feature vector.
pub const SPHERE_FEATURE_WIDTH: usize = GCN_INPUT - 3 - CONV_FEATURE_WIDTH;

/// Sphere feature slot that is 1 on every matched sample.
const PRESENCE: usize = 13;

/// Gate slope of the oracle's presence test.
const GATE: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    Depth,
    Plane,
}

/// Pipeline settings, read from TOML. Missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Sphere grid bandwidth, 2..=64.
    pub b: usize,
    /// Rotation grid cells per Euler axis, 2..=64.
    pub n: usize,
    /// Graph grid side, 2..=64.
    pub grid_side: usize,
    /// Candidate samples per vertex, 1..=16.
    pub top_n: usize,
    /// Keypoints besides the centroid, 1..=32.
    pub keypoints: usize,
    /// AUC upper threshold in meters, (0, 1].
    pub auc_threshold: f64,
    pub mode: GraphMode,
    pub seed: u64,
    /// Plane-mode depth in meters, (0, 100].
    pub avg_depth: f64,
    /// SO(3) max-pooling factor applied before the argmax; must divide `n`.
    pub pooling: usize,
    /// Fraction of vertices whose keypoint offsets are replaced by noise, [0, 1).
    pub vote_corruption: f64,
    /// Trained stack file; a random seeded stack otherwise.
    pub stack: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            b: 20,
            n: 20,
            grid_side: 20,
            top_n: 3,
            keypoints: 8,
            auc_threshold: AUC_MAX_THRESHOLD,
            mode: GraphMode::Depth,
            seed: 0,
            avg_depth: 0.6,
            pooling: 1,
            vote_corruption: 0.0,
            stack: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, v: usize, lo: usize, hi: usize| {
            if v < lo || v > hi {
                Err(Error::invalid(format!("{name} = {v} outside {lo}..={hi}")))
            } else {
                Ok(())
            }
        };
        range("b", self.b, 2, 64)?;
        range("n", self.n, 2, 64)?;
        range("grid_side", self.grid_side, 2, 64)?;
        range("top_n", self.top_n, 1, 16)?;
        range("keypoints", self.keypoints, 1, 32)?;
        range("pooling", self.pooling, 1, self.n)?;
        if !self.n.is_multiple_of(self.pooling) {
            return Err(Error::invalid(format!("pooling = {} does not divide n = {}", self.pooling, self.n)));
        }
        if !(self.auc_threshold > 0.0 && self.auc_threshold <= 1.0) {
            return Err(Error::invalid("auc_threshold outside (0, 1]"));
        }
        if !(self.avg_depth > 0.0 && self.avg_depth <= 100.0) {
            return Err(Error::invalid("avg_depth outside (0, 100]"));
        }
        if !(0.0..1.0).contains(&self.vote_corruption) {
            return Err(Error::invalid("vote_corruption outside [0, 1)"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::invalid(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Loads a TOML config; a relative `stack` path is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8_lossy(&read_file(path)?).into_owned();
        let mut c = in_file(path, Self::from_toml(&text))?;
        if let Some(s) = &c.stack {
            if s.is_relative() {
                c.stack = Some(path.parent().unwrap_or(Path::new(".")).join(s));
            }
        }
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// GCN weights that turn pose-encoding input channels into exact keypoint
/// offsets. Layer 1 splits the 12 pose values and the vertex coordinates
/// into positive and negative parts, the hidden layers pass them through,
/// and the output layer forms `R m_j + t − xyz` for every model keypoint.
///
/// Vertices without a matched sample have zero pose channels; a presence
/// gate adds `2 xyz` to their offsets so their votes scatter instead of
/// piling up at the camera origin.
pub fn oracle_gcn_weights(model_kps: &KeypointSet) -> GcnNetworkWeights {
    let h = GCN_HIDDEN;
    let k = model_kps.len();
    let gate = 2 * (POSE_CHANNELS + 3);
    let carried = gate + 6;
    let xyz = GCN_INPUT - 3;
    let presence = CONV_FEATURE_WIDTH + PRESENCE;
    let mut w0 = DMatrix::zeros(GCN_INPUT, h);
    for i in 0..POSE_CHANNELS {
        w0[(i, 2 * i)] = 1.0;
        w0[(i, 2 * i + 1)] = -1.0;
    }
    for c in 0..3 {
        w0[(xyz + c, 2 * (POSE_CHANNELS + c))] = 1.0;
        w0[(xyz + c, 2 * (POSE_CHANNELS + c) + 1)] = -1.0;
        // relu(±x − GATE·presence)
        w0[(xyz + c, gate + 2 * c)] = 1.0;
        w0[(xyz + c, gate + 2 * c + 1)] = -1.0;
        w0[(presence, gate + 2 * c)] = -GATE;
        w0[(presence, gate + 2 * c + 1)] = -GATE;
    }
    let mut layers = vec![GcnLayerWeights::new(w0, DMatrix::zeros(GCN_INPUT, h)).expect("matching shapes")];
    let pass = DMatrix::from_fn(h, h, |r, c| if r == c && r < carried { 1.0 } else { 0.0 });
    for _ in 0..4 {
        layers.push(GcnLayerWeights::new(pass.clone(), DMatrix::zeros(h, h)).expect("matching shapes"));
    }
    let mut out = DMatrix::zeros(h, 3 + 3 * k);
    let mut signed = |col: usize, channel: usize, w: f64| {
        out[(2 * channel, col)] += w;
        out[(2 * channel + 1, col)] -= w;
    };
    for (j, m) in model_kps.points().iter().enumerate() {
        for c in 0..3 {
            let col = 3 + 3 * j + c;
            for d in 0..3 {
                signed(col, 3 * c + d, m[d]);
            }
            signed(col, 9 + c, 1.0);
            signed(col, POSE_CHANNELS + c, -1.0);
            signed(col, POSE_CHANNELS + 3 + c, 2.0);
        }
    }
    layers.push(GcnLayerWeights::new(out, DMatrix::zeros(h, 3 + 3 * k)).expect("matching shapes"));
    GcnNetworkWeights::new(layers, k).expect("oracle widths are consistent")
}

/// Timing and a short note for one stage of one object.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub object_id: String,
    pub stage: &'static str,
    pub seconds: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub poses: Vec<PoseRecord>,
    pub stages: Vec<StageRecord>,
}

/// Shared state for repeated runs with one configuration.
#[derive(Debug)]
pub struct Pipeline {
    config: RunConfig,
    stack: SphereCnnStack,
}

fn timed<T>(stages: &mut Vec<StageRecord>, id: &str, stage: &'static str, f: impl FnOnce() -> Result<(T, String)>) -> Result<T> {
    let start = Instant::now();
    let (v, detail) = f().map_err(|e| e.in_stage(stage))?;
    stages.push(StageRecord { object_id: id.to_string(), stage, seconds: start.elapsed().as_secs_f64(), detail });
    Ok(v)
}

fn object_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let sphere = dh_grid(config.b)?;
        let rot = so3_grid(config.n)?;
        let in_channels = SHAPE_CHANNELS.len();
        let stack = match &config.stack {
            Some(path) => {
                let bytes = read_file(path)?;
                let s = in_file(path, SphereCnnStack::read(&mut bytes.as_slice()))?;
                if s.sphere_grid() != &sphere || s.rotation_grid() != &rot || s.in_channels() != in_channels {
                    return Err(Error::Format {
                        path: path.display().to_string(),
                        message: format!("stack grids or channels differ from b = {}, n = {}, {in_channels} channels", config.b, config.n),
                    });
                }
                s
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                SphereCnnStack::random(sphere, rot, in_channels, &StackConfig::default(), &mut rng)?
            }
        };
        Ok(Pipeline { config, stack })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn run(&self, scene: &SceneArtifacts) -> Result<PipelineOutput> {
        scene.check()?;
        let mut out = PipelineOutput { poses: Vec::new(), stages: Vec::new() };
        let shape = FeatureMap::from_fn(scene.spec.width, scene.spec.height, SHAPE_CHANNELS.len(), 1, |x, y, px| {
            px.copy_from_slice(&scene.features[0].pixel(x, y)[SHAPE_CHANNELS]);
        });
        for i in 0..scene.spec.objects.len() {
            if scene.masks[i].is_empty() {
                continue;
            }
            let pose = self.run_object(scene, i, &shape, &mut out.stages)?;
            out.poses.push(pose);
        }
        Ok(out)
    }

    fn run_object(&self, scene: &SceneArtifacts, i: usize, shape: &FeatureMap, stages: &mut Vec<StageRecord>) -> Result<PoseRecord> {
        let cfg = &self.config;
        let id = scene.spec.objects[i].id.as_str();
        let mask = &scene.masks[i];
        let k = &scene.spec.camera;
        let mut rng = ChaCha8Rng::seed_from_u64(object_seed(cfg.seed, i));

        let coarse = timed(stages, id, "coarse rotation", || {
            let signal = project_hemisphere(shape, mask, self.stack.sphere_grid())?;
            let c = sphere_cnn_forward(&signal, &self.stack, self.stack.rotation_grid())?;
            let c = argmax_rotation(&so3_maxpool(&c, cfg.pooling)?)?;
            Ok((c, format!("node {} confidence {:.3e}", c.node, c.confidence)))
        })?;

        let samples = timed(stages, id, "sampling", || {
            let inner = mask.eroded();
            let region = if inner.is_empty() { mask } else { &inner };
            // maximal Bridson sets hold about 0.7 / r² points per pixel
            let target = (2 * cfg.grid_side * cfg.grid_side) as f64;
            let radius = (0.7 * region.count() as f64 / target).sqrt();
            let s = poisson_disc_fill(region, radius, &mut rng);
            let n = s.len();
            Ok((s, format!("{n} samples")))
        })?;

        let graph = timed(stages, id, "graph init", || {
            let g = match cfg.mode {
                GraphMode::Depth => init_graph_depth(mask, &scene.depth, k, cfg.grid_side)?,
                GraphMode::Plane => init_graph_plane(mask, cfg.avg_depth, k, cfg.grid_side)?,
            };
            let n = g.len();
            Ok((g, format!("{n} vertices")))
        })?;

        let assignment = timed(stages, id, "matching", || {
            let coords = graph.coords2d().expect("image graphs carry pixel coordinates");
            let a = match_assign(&candidate_edges(coords, &samples, cfg.top_n));
            let detail = format!("{} pairs, cost {:.4}", a.pairs.len(), a.total_cost);
            Ok((a, detail))
        })?;

        let filled = timed(stages, id, "graph fill", || {
            let conv = samples.iter().map(|&p| multiscale_sample(&scene.features, p)).collect::<Result<Vec<_>>>()?;
            if conv.first().is_some_and(|c| c.len() != CONV_FEATURE_WIDTH) {
                return Err(Error::shape(format!("feature maps give {} channels, expected {CONV_FEATURE_WIDTH}", conv[0].len())));
            }
            let sphere: Vec<Vec<f64>> = samples.iter().map(|&p| sphere_features(&coarse, mask, p)).collect();
            Ok((fill_graph(&graph, &assignment, &conv, &sphere)?, String::new()))
        })?;

        let keypoints = timed(stages, id, "keypoints", || {
            let model = PointSet::new(scene.meshes[i].surface_points())?;
            Ok((select_keypoints_fps(&model, cfg.keypoints + 1)?, String::new()))
        })?;

        let mut prediction = timed(stages, id, "graph network", || {
            let net = gcn_network_forward(&filled, &oracle_gcn_weights(&keypoints))?;
            let detail = format!("stages {:?}", net.stage_sizes);
            Ok((GraphPrediction::from_network(&net)?, detail))
        })?;

        if cfg.vote_corruption > 0.0 {
            for (v, row) in prediction.vertices.points().iter().zip(&mut prediction.keypoint_offsets) {
                if rng.gen_bool(cfg.vote_corruption) {
                    for o in row.iter_mut() {
                        let noise = Vector3::from_fn(|_, _| rng.gen_range(-0.5..0.5));
                        *o = noise - v;
                    }
                }
            }
        }

        let pose = timed(stages, id, "pose fit", || {
            let p = estimate_pose(&prediction, &coarse, &keypoints)?;
            Ok((p, format!("{:?}", p.source).to_lowercase()))
        })?;
        Ok(PoseRecord { object_id: id.to_string(), pose })
    }
}

/// Coarse rotation, its confidence, the sample's hemisphere direction and a
/// presence flag, zero-padded to [`SPHERE_FEATURE_WIDTH`].
fn sphere_features(coarse: &CoarseRotation, mask: &Mask, p: [f64; 2]) -> Vec<f64> {
    let mut f = vec![0.0; SPHERE_FEATURE_WIDTH];
    f[..9].copy_from_slice(&coarse.rotation.to_row_major());
    f[9] = coarse.confidence;
    f[PRESENCE] = 1.0;
    if let Some((x0, y0, x1, y1)) = mask.bounding_box() {
        let rho = ((x1 - x0 + 1).max(y1 - y0 + 1)) as f64 / 2.0;
        let u = (p[0] - (x0 + x1) as f64 / 2.0) / rho;
        let v = (p[1] - (y0 + y1) as f64 / 2.0) / rho;
        let s = (u * u + v * v).sqrt().min(1.0);
        f[10] = s;
        f[11] = (1.0 - s * s).sqrt();
        f[12] = v.atan2(u);
    }
    f
}

pub fn run_pipeline(scene: &SceneArtifacts, config: &RunConfig) -> Result<PipelineOutput> {
    Pipeline::new(config.clone())?.run(scene)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectScore {
    pub object_id: String,
    /// `None` when the object has no prediction.
    pub add: Option<f64>,
    pub adds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSummary {
    pub add_auc: f64,
    pub adds_auc: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub add_auc: f64,
    pub adds_auc: f64,
    /// AUCs over the records of each object id.
    pub per_object: BTreeMap<String, ObjectSummary>,
    pub objects: Vec<ObjectScore>,
}

/// Scores predictions against ground truth; `models` pairs object ids with
/// model points. Missing predictions count as failures.
pub fn evaluate(predicted: &[PoseRecord], ground_truth: &[PoseRecord], models: &[(String, PointSet)], threshold: f64) -> Result<EvalReport> {
    let mut objects = Vec::new();
    for gt in ground_truth {
        let model = models
            .iter()
            .find(|(id, _)| *id == gt.object_id)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::invalid(format!("no model for object {:?}", gt.object_id)))?;
        let pred = predicted.iter().find(|p| p.object_id == gt.object_id);
        objects.push(ObjectScore {
            object_id: gt.object_id.clone(),
            add: pred.map(|p| add_metric(&gt.pose, &p.pose, model)),
            adds: pred.map(|p| adds_metric(&gt.pose, &p.pose, model)),
        });
    }
    let dist = |rows: &[&ObjectScore], f: fn(&ObjectScore) -> Option<f64>| {
        rows.iter().map(|o| f(o).unwrap_or(f64::INFINITY)).collect::<Vec<_>>()
    };
    let summarize = |rows: &[&ObjectScore]| ObjectSummary {
        add_auc: auc(&dist(rows, |o| o.add), threshold),
        adds_auc: auc(&dist(rows, |o| o.adds), threshold),
        n: rows.len(),
    };
    let mut groups: BTreeMap<String, Vec<&ObjectScore>> = BTreeMap::new();
    for o in &objects {
        groups.entry(o.object_id.clone()).or_default().push(o);
    }
    let per_object = groups.iter().map(|(id, rows)| (id.clone(), summarize(rows))).collect();
    let all = summarize(&objects.iter().collect::<Vec<_>>());
    Ok(EvalReport { threshold, add_auc: all.add_auc, adds_auc: all.adds_auc, per_object, objects })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{synth_scene, SceneSpec};

    fn small() -> RunConfig {
        RunConfig { b: 6, n: 6, grid_side: 10, ..RunConfig::default() }
    }

    #[test]
    fn config_ranges() {
        assert!(RunConfig::default().validate().is_ok());
        assert!(RunConfig::from_toml("b = 1").is_err());
        assert!(RunConfig::from_toml("n = 20\npooling = 3").is_err());
        assert!(RunConfig::from_toml("colour = 1").is_err());
        let c = RunConfig::from_toml("mode = \"plane\"\nseed = 4").unwrap();
        assert_eq!(c.mode, GraphMode::Plane);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn empty_scene() {
        let a = synth_scene(&SceneSpec::empty(3)).unwrap();
        let out = run_pipeline(&a, &small()).unwrap();
        assert!(out.poses.is_empty());
    }

    #[test]
    fn oracle_recovers_poses() {
        let a = synth_scene(&SceneSpec::random(2, 5)).unwrap();
        for mode in [GraphMode::Depth, GraphMode::Plane] {
            let out = run_pipeline(&a, &RunConfig { mode, ..small() }).unwrap();
            assert_eq!(out.poses.len(), 2);
            let models: Vec<(String, PointSet)> = a
                .spec
                .objects
                .iter()
                .zip(&a.meshes)
                .map(|(o, m)| (o.id.clone(), PointSet::new(m.vertices().to_vec()).unwrap()))
                .collect();
            let r = evaluate(&out.poses, &a.ground_truth, &models, 0.1).unwrap();
            for o in &r.objects {
                assert!(o.add.unwrap() < 1e-6, "{mode:?} {o:?}");
            }
        }
    }

    #[test]
    fn missing_prediction_scores_zero() {
        let m = PointSet::new(vec![Vector3::zeros(), Vector3::x()]).unwrap();
        let gt = SceneSpec::random(1, 0).objects[0].clone();
        let rec = PoseRecord { object_id: gt.id.clone(), pose: gt.pose() };
        let r = evaluate(&[], &[rec.clone()], &[(gt.id.clone(), m.clone())], 0.1).unwrap();
        assert_eq!(r.add_auc, 0.0);
        let r = evaluate(&[rec.clone()], &[rec], &[(gt.id, m)], 0.1).unwrap();
        assert_eq!(r.add_auc, 1.0);
    }
}
