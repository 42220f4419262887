//! Synthetic scenes: posed built-in or OBJ meshes rendered into a depth map,
//! per-object masks and a stack of multi-scale feature maps.
//!
//! The feature maps stand in for a learned image backbone. The first map
//! (full resolution) holds, per pixel of each object, the object's pose
//! (`R` row-major then `t`), the surface normal, depth, depth gradient and an
//! object-id embedding. The half, quarter and eighth resolution maps hold box
//! averages of the geometric channels; the last is zero-padded so that the
//! concatenated sample width is [`CONV_FEATURE_WIDTH`].

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{in_file, load_depth, load_feature_map, load_mask, read_file, DepthMap, FeatureMap, Mask};
use crate::mesh::TriMesh;
use crate::metrics::{PoseEstimate, PoseRecord, PoseSource};
use crate::sampling::CameraIntrinsics;
use crate::so3::Rotation;

/// Width of one multi-scale sample of the synthetic feature maps.
pub const CONV_FEATURE_WIDTH: usize = 448;
/// Channels `0..12` of the full-resolution map: pose `R` (row-major) and `t`.
pub const POSE_CHANNELS: usize = 12;
/// Full-resolution channels `12..16`: normal `xyz` and depth.
pub const SHAPE_CHANNELS: std::ops::Range<usize> = 12..16;
const ID_EMBEDDING: usize = 8;
const GEOMETRY: usize = 3 + 1 + 2 + ID_EMBEDDING;
const FULL_CHANNELS: usize = POSE_CHANNELS + GEOMETRY;
const SCALES: [usize; 4] = [1, 2, 4, 8];
const NEAR: f64 = 1e-3;

/// Names accepted as mesh references besides OBJ paths.
pub const BUILTIN_MESHES: [&str; 3] = ["blob", "cylinder", "cube"];

pub fn builtin_mesh(name: &str) -> Option<TriMesh> {
    match name {
        "blob" => Some(TriMesh::asymmetric_blob(0.05)),
        "cylinder" => Some(TriMesh::cylinder(0.035, 0.05, 12)),
        "cube" => Some(TriMesh::cube(0.035)),
        _ => None,
    }
}

/// A built-in name, or else a path to an OBJ file.
pub fn resolve_mesh(reference: &str) -> Result<TriMesh> {
    if let Some(m) = builtin_mesh(reference) {
        return Ok(m);
    }
    let path = Path::new(reference);
    if path.extension().and_then(|e| e.to_str()) != Some("obj") {
        return Err(Error::invalid(format!(
            "unknown mesh {reference:?}; expected one of {BUILTIN_MESHES:?} or an .obj path"
        )));
    }
    TriMesh::load_obj(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub id: String,
    pub mesh: String,
    #[serde(rename = "R")]
    pub rotation: Rotation,
    pub t: Vector3<f64>,
}

impl SceneObject {
    pub fn pose(&self) -> PoseEstimate {
        PoseEstimate::new(self.rotation, self.t, PoseSource::Fitted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub camera: CameraIntrinsics,
    pub seed: u64,
    /// Standard deviation of additive depth noise, meters.
    #[serde(default)]
    pub depth_noise: f64,
    #[serde(default, rename = "object")]
    pub objects: Vec<SceneObject>,
}

impl SceneSpec {
    pub fn empty(seed: u64) -> Self {
        SceneSpec {
            width: 320,
            height: 240,
            camera: CameraIntrinsics { fx: 420.0, fy: 420.0, cx: 159.5, cy: 119.5 },
            seed,
            depth_noise: 0.0,
            objects: Vec::new(),
        }
    }

    /// `n` objects cycling through the built-in meshes, spread along the
    /// image x axis about 0.6 m away, with random rotations.
    pub fn random(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = SceneSpec::empty(seed);
        for i in 0..n {
            let mesh = BUILTIN_MESHES[i % BUILTIN_MESHES.len()];
            let x = (i as f64 - (n as f64 - 1.0) / 2.0) * 0.13;
            let t = Vector3::new(x, rng.gen_range(-0.03..0.03), 0.6 + rng.gen_range(-0.05..0.05));
            spec.objects.push(SceneObject { id: format!("{mesh}_{i}"), mesh: mesh.into(), rotation: Rotation::random(&mut rng), t });
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 || self.width > 8192 || self.height > 8192 {
            return Err(Error::invalid(format!("image size {}x{} outside 2..=8192", self.width, self.height)));
        }
        CameraIntrinsics::new(self.camera.fx, self.camera.fy, self.camera.cx, self.camera.cy)?;
        if !(self.depth_noise >= 0.0 && self.depth_noise.is_finite()) {
            return Err(Error::invalid("depth_noise must be a nonnegative number"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            let ok = !o.id.is_empty() && o.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !ok {
                return Err(Error::invalid(format!("object id {:?} must be nonempty [A-Za-z0-9_-]", o.id)));
            }
            if self.objects[..i].iter().any(|p| p.id == o.id) {
                return Err(Error::invalid(format!("duplicate object id {:?}", o.id)));
            }
            if !o.t.iter().all(|c| c.is_finite()) || o.t.z <= NEAR {
                return Err(Error::invalid(format!("object {:?} must lie in front of the camera", o.id)));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: SceneSpec = toml::from_str(text).map_err(|e| Error::invalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Loads a TOML scene; relative OBJ paths are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8_lossy(&read_file(path)?).into_owned();
        let mut s = in_file(path, Self::from_toml(&text))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for o in &mut s.objects {
            if builtin_mesh(&o.mesh).is_none() && Path::new(&o.mesh).is_relative() {
                o.mesh = dir.join(&o.mesh).display().to_string();
            }
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec serializes")
    }
}

/// Everything the pose pipeline consumes for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneArtifacts {
    pub spec: SceneSpec,
    pub meshes: Vec<TriMesh>,
    pub depth: DepthMap,
    pub masks: Vec<Mask>,
    pub features: Vec<FeatureMap>,
    pub ground_truth: Vec<PoseRecord>,
}

struct Hit {
    depth: f64,
    owner: usize,
    normal: Vector3<f64>,
}

fn rasterize(spec: &SceneSpec, meshes: &[TriMesh]) -> Vec<Option<Hit>> {
    let (w, h) = (spec.width, spec.height);
    let k = &spec.camera;
    let mut buf: Vec<Option<Hit>> = (0..w * h).map(|_| None).collect();
    for (oi, (obj, mesh)) in spec.objects.iter().zip(meshes).enumerate() {
        let posed = mesh.transformed(&obj.rotation, &obj.t);
        for f in 0..posed.faces().len() {
            let tri = posed.triangle(f);
            if tri.iter().any(|v| v.z <= NEAR) {
                continue;
            }
            let px = tri.map(|v| k.project(&v).expect("in front of the camera"));
            let area = (px[1][0] - px[0][0]) * (px[2][1] - px[0][1]) - (px[1][1] - px[0][1]) * (px[2][0] - px[0][0]);
            if area.abs() < 1e-12 {
                continue;
            }
            let mut normal = (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).normalize();
            if normal.dot(&tri[0]) > 0.0 {
                normal = -normal;
            }
            let lo = |i: usize| px.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min).ceil().max(0.0) as usize;
            let hi = |i: usize, n: usize| px.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max).floor().min(n as f64 - 1.0);
            let (x1, y1) = (hi(0, w), hi(1, h));
            if x1 < 0.0 || y1 < 0.0 {
                continue;
            }
            for y in lo(1)..=y1 as usize {
                for x in lo(0)..=x1 as usize {
                    let q = [x as f64, y as f64];
                    let edge = |a: [f64; 2], b: [f64; 2]| ((b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0])) / area;
                    let l = [edge(px[1], px[2]), edge(px[2], px[0]), edge(px[0], px[1])];
                    if l.iter().any(|&c| c < 0.0) {
                        continue;
                    }
                    let depth = 1.0 / (l[0] / tri[0].z + l[1] / tri[1].z + l[2] / tri[2].z);
                    let slot = &mut buf[y * w + x];
                    if slot.as_ref().is_none_or(|hit| depth < hit.depth) {
                        *slot = Some(Hit { depth, owner: oi, normal });
                    }
                }
            }
        }
    }
    buf
}

fn id_embedding(i: usize) -> [f64; ID_EMBEDDING] {
    std::array::from_fn(|c| (std::f64::consts::PI * (i + 1) as f64 * (c + 1) as f64 / 9.0).cos())
}

fn full_resolution_map(spec: &SceneSpec, buf: &[Option<Hit>], depth: &DepthMap) -> FeatureMap {
    let (w, h) = (spec.width, spec.height);
    let owner = |x: usize, y: usize| buf[y * w + x].as_ref().map(|hit| hit.owner);
    FeatureMap::from_fn(w, h, FULL_CHANNELS, 1, |x, y, px| {
        let Some(hit) = &buf[y * w + x] else { return };
        let o = &spec.objects[hit.owner];
        px[..9].copy_from_slice(&o.rotation.to_row_major());
        px[9..12].copy_from_slice(o.t.as_slice());
        px[12..15].copy_from_slice(hit.normal.as_slice());
        px[15] = depth.get(x, y);
        let same = |xx: usize, yy: usize| owner(xx, yy) == Some(hit.owner);
        if x > 0 && x + 1 < w && same(x - 1, y) && same(x + 1, y) {
            px[16] = 0.5 * (depth.get(x + 1, y) - depth.get(x - 1, y));
        }
        if y > 0 && y + 1 < h && same(x, y - 1) && same(x, y + 1) {
            px[17] = 0.5 * (depth.get(x, y + 1) - depth.get(x, y - 1));
        }
        px[18..].copy_from_slice(&id_embedding(hit.owner));
    })
}

fn pooled_map(full: &FeatureMap, scale: usize, channels: usize) -> FeatureMap {
    let (w, h) = (full.width().div_ceil(scale), full.height().div_ceil(scale));
    FeatureMap::from_fn(w, h, channels, scale, |x, y, px| {
        let mut n = 0.0;
        for yy in y * scale..((y + 1) * scale).min(full.height()) {
            for xx in x * scale..((x + 1) * scale).min(full.width()) {
                for (o, v) in px.iter_mut().zip(&full.pixel(xx, yy)[POSE_CHANNELS..]) {
                    *o += v;
                }
                n += 1.0;
            }
        }
        for o in px.iter_mut() {
            *o /= n;
        }
    })
}

/// Renders the scene. Identical specs give identical artifacts.
pub fn synth_scene(spec: &SceneSpec) -> Result<SceneArtifacts> {
    spec.validate()?;
    let meshes = spec
        .objects
        .iter()
        .map(|o| resolve_mesh(&o.mesh).map_err(|e| Error::invalid(format!("object {:?}: {e}", o.id))))
        .collect::<Result<Vec<_>>>()?;
    let buf = rasterize(spec, &meshes);
    let (w, h) = (spec.width, spec.height);
    let mut depth = DepthMap::from_fn(w, h, |x, y| buf[y * w + x].as_ref().map_or(0.0, |hit| hit.depth));
    if spec.depth_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let noise = Normal::new(0.0, spec.depth_noise).map_err(|e| Error::invalid(e.to_string()))?;
        for y in 0..h {
            for x in 0..w {
                let d = depth.get(x, y);
                if d > 0.0 {
                    depth.set(x, y, (d + noise.sample(&mut rng)).max(NEAR));
                }
            }
        }
    }
    let masks = (0..spec.objects.len())
        .map(|i| Mask::from_fn(w, h, |x, y| buf[y * w + x].as_ref().is_some_and(|hit| hit.owner == i)))
        .collect();
    let full = full_resolution_map(spec, &buf, &depth);
    let mut features = vec![full];
    let mut used = FULL_CHANNELS;
    for (i, &s) in SCALES[1..].iter().enumerate() {
        let channels = if i + 2 == SCALES.len() { CONV_FEATURE_WIDTH - used } else { GEOMETRY };
        features.push(pooled_map(&features[0], s, channels.max(GEOMETRY)));
        used += channels;
    }
    let ground_truth = spec.objects.iter().map(|o| PoseRecord { object_id: o.id.clone(), pose: o.pose() }).collect();
    Ok(SceneArtifacts { spec: spec.clone(), meshes, depth, masks, features, ground_truth })
}

/// Writes `bytes` through a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io { path: path.display().to_string(), source };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn poses_to_json(poses: &[PoseRecord]) -> String {
    serde_json::to_string_pretty(poses).expect("poses serialize") + "\n"
}

pub fn load_poses(path: &Path) -> Result<Vec<PoseRecord>> {
    let text = read_file(path)?;
    in_file(path, serde_json::from_slice(&text).map_err(|e| Error::invalid(e.to_string())))
}

impl SceneArtifacts {
    /// Directory layout: `scene.toml`, `depth.pgm`, `gt.json`,
    /// `masks/<id>.pgm`, `models/<id>.obj` and `features/s<scale>.fmp`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let mut spec = self.spec.clone();
        for o in &mut spec.objects {
            o.mesh = format!("models/{}.obj", o.id);
        }
        for sub in ["masks", "models", "features"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|source| Error::Io { path: p.display().to_string(), source })?;
        }
        write_atomic(&dir.join("scene.toml"), spec.to_toml().as_bytes())?;
        write_atomic(&dir.join("depth.pgm"), &self.depth.to_pgm_mm())?;
        write_atomic(&dir.join("gt.json"), poses_to_json(&self.ground_truth).as_bytes())?;
        for ((o, m), mesh) in self.spec.objects.iter().zip(&self.masks).zip(&self.meshes) {
            write_atomic(&dir.join(format!("masks/{}.pgm", o.id)), &m.to_pgm())?;
            write_atomic(&dir.join(format!("models/{}.obj", o.id)), mesh.to_obj().as_bytes())?;
        }
        for f in &self.features {
            write_atomic(&dir.join(format!("features/s{}.fmp", f.scale())), &f.to_blob())?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let spec = SceneSpec::load(&dir.join("scene.toml"))?;
        let meshes = spec.objects.iter().map(|o| TriMesh::load_obj(Path::new(&o.mesh))).collect::<Result<Vec<_>>>()?;
        let depth = load_depth(&dir.join("depth.pgm"))?;
        let masks = spec
            .objects
            .iter()
            .map(|o| load_mask(&dir.join(format!("masks/{}.pgm", o.id))))
            .collect::<Result<Vec<_>>>()?;
        let features = SCALES
            .iter()
            .map(|s| load_feature_map(&dir.join(format!("features/s{s}.fmp"))))
            .collect::<Result<Vec<_>>>()?;
        let ground_truth = load_poses(&dir.join("gt.json"))?;
        let a = SceneArtifacts { spec, meshes, depth, masks, features, ground_truth };
        a.check().map_err(|e| Error::Format { path: dir.display().to_string(), message: e.to_string() })?;
        Ok(a)
    }

    /// Consistency of sizes and counts across the artifacts.
    pub fn check(&self) -> Result<()> {
        let (w, h) = (self.spec.width, self.spec.height);
        let n = self.spec.objects.len();
        if self.meshes.len() != n || self.masks.len() != n {
            return Err(Error::shape(format!("{n} objects but {} meshes and {} masks", self.meshes.len(), self.masks.len())));
        }
        if self.depth.width() != w || self.depth.height() != h {
            return Err(Error::shape("depth map size differs from the scene size"));
        }
        if self.masks.iter().any(|m| m.width() != w || m.height() != h) {
            return Err(Error::shape("mask size differs from the scene size"));
        }
        if self.features.is_empty() || self.features[0].scale() != 1 || self.features[0].channels() < SHAPE_CHANNELS.end {
            return Err(Error::shape("first feature map must be full resolution with pose and shape channels"));
        }
        for f in &self.features {
            if f.width() * f.scale() < w || f.height() * f.scale() < h {
                return Err(Error::shape(format!("feature map at scale {} does not cover the image", f.scale())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(mesh: &str, t: Vector3<f64>) -> SceneObject {
        SceneObject { id: mesh.into(), mesh: mesh.into(), rotation: Rotation::rx(0.4), t }
    }

    #[test]
    fn centered_cube() {
        let mut spec = SceneSpec::empty(1);
        spec.objects.push(one("cube", Vector3::new(0.0, 0.0, 0.6)));
        let a = synth_scene(&spec).unwrap();
        assert!(!a.masks[0].is_empty());
        let r = 0.035 * 3f64.sqrt();
        for (x, y) in a.masks[0].pixels() {
            let d = a.depth.get(x, y);
            assert!(d >= 0.6 - r && d <= 0.6 + r, "{d}");
        }
        let width: usize = a.features.iter().map(|f| f.channels()).sum();
        assert_eq!(width, CONV_FEATURE_WIDTH);
    }

    #[test]
    fn nearer_object_owns_overlap() {
        let mut spec = SceneSpec::empty(1);
        spec.objects.push(one("cube", Vector3::new(0.0, 0.0, 0.8)));
        let mut near = one("blob", Vector3::new(0.01, 0.0, 0.5));
        near.id = "near".into();
        spec.objects.push(near);
        let a = synth_scene(&spec).unwrap();
        let c = (160, 120);
        assert!(a.masks[1].get(c.0, c.1) && !a.masks[0].get(c.0, c.1));
        for (x, y) in a.masks[0].pixels() {
            assert!(!a.masks[1].get(x, y));
        }
    }

    #[test]
    fn deterministic_and_roundtrip() {
        let mut spec = SceneSpec::random(2, 9);
        spec.depth_noise = 0.001;
        let a = synth_scene(&spec).unwrap();
        let b = synth_scene(&spec).unwrap();
        assert_eq!(a, b);
        let dir = std::env::temp_dir().join(format!("posekit-scene-{}", std::process::id()));
        a.write_dir(&dir).unwrap();
        let back = SceneArtifacts::read_dir(&dir).unwrap();
        assert_eq!(back.masks, a.masks);
        assert_eq!(back.ground_truth.len(), 2);
        let e = back.features[0].pixel(0, 0).len();
        assert_eq!(e, a.features[0].channels());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn bad_specs() {
        let mut spec = SceneSpec::empty(0);
        spec.objects.push(one("teapot", Vector3::new(0.0, 0.0, 0.6)));
        assert!(synth_scene(&spec).is_err());
        spec.objects[0] = one("cube", Vector3::new(0.0, 0.0, -1.0));
        assert!(synth_scene(&spec).is_err());
        assert!(SceneSpec::from_toml("width = 3").is_err());
        let text = SceneSpec::random(3, 4).to_toml();
        assert_eq!(SceneSpec::from_toml(&text).unwrap(), SceneSpec::random(3, 4));
    }
}
