//! Keypoint selection, robust keypoint voting and rigid pose fitting.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::graph::GcnOutput;
use crate::learn::CoarseRotation;
use crate::metrics::{PointSet, PoseEstimate, PoseSource};
use crate::so3::Rotation;

/// Model-frame keypoints; keypoint 0 is the model centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet(Vec<Vector3<f64>>);

/// Minimum separation between keypoints, meters.
const DISTINCT: f64 = 1e-6;

impl KeypointSet {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("keypoint set is empty"));
        }
        for i in 0..points.len() {
            for j in 0..i {
                if (points[i] - points[j]).norm() < DISTINCT {
                    return Err(Error::invalid(format!("keypoints {j} and {i} coincide")));
                }
            }
        }
        Ok(KeypointSet(points))
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn transformed(&self, r: &Rotation, t: &Vector3<f64>) -> Vec<Vector3<f64>> {
        self.0.iter().map(|p| r.apply(p) + t).collect()
    }
}

/// The centroid followed by `k − 1` farthest-point samples, starting from
/// the model point farthest from the centroid. Ties go to the lower index.
pub fn select_keypoints_fps(model: &PointSet, k: usize) -> Result<KeypointSet> {
    if k == 0 {
        return Err(Error::invalid("need at least one keypoint"));
    }
    if model.len() < k {
        return Err(Error::invalid(format!("{} model points cannot give {k} keypoints", model.len())));
    }
    let c = model.centroid();
    let pts = model.points();
    let mut out = vec![c];
    if k == 1 {
        return KeypointSet::new(out);
    }
    let eligible: Vec<bool> = pts.iter().map(|p| (p - c).norm() >= DISTINCT).collect();
    let mut score: Vec<f64> = pts.iter().map(|p| (p - c).norm()).collect();
    let mut seeded = false;
    for _ in 1..k {
        let mut best: Option<usize> = None;
        for i in 0..pts.len() {
            if eligible[i] && score[i] >= DISTINCT && best.is_none_or(|b| score[i] > score[b]) {
                best = Some(i);
            }
        }
        let b = best.ok_or_else(|| Error::invalid("model has too few distinct points for the keypoint count"))?;
        out.push(pts[b]);
        for (i, p) in pts.iter().enumerate() {
            let d = (p - pts[b]).norm();
            score[i] = if seeded { score[i].min(d) } else { d };
        }
        seeded = true;
    }
    KeypointSet::new(out)
}

/// Voted location of one keypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoteResult {
    pub location: Vector3<f64>,
    pub inliers: usize,
    pub inlier_fraction: f64,
}

/// Inlier gate floor, meters.
pub const VOTE_GATE_FLOOR: f64 = 0.005;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per keypoint, the mean of the candidates `vertex + offset` that lie
/// within `max(3·MAD, 5 mm)` of their coordinatewise median.
pub fn vote_keypoints(vertices: &PointSet, predicted: &[Vec<Vector3<f64>>]) -> Result<Vec<VoteResult>> {
    if vertices.len() < 4 {
        return Err(Error::invalid(format!("voting needs at least 4 vertices, got {}", vertices.len())));
    }
    if predicted.len() != vertices.len() {
        return Err(Error::shape(format!("{} offset rows for {} vertices", predicted.len(), vertices.len())));
    }
    let k = predicted[0].len();
    if k == 0 || predicted.iter().any(|r| r.len() != k) {
        return Err(Error::shape("every vertex needs the same nonzero number of keypoint offsets"));
    }
    let n = vertices.len();
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        let cand: Vec<Vector3<f64>> = vertices.points().iter().zip(predicted).map(|(v, r)| v + r[j]).collect();
        let mut centre = Vector3::zeros();
        for c in 0..3 {
            let mut col: Vec<f64> = cand.iter().map(|p| p[c]).collect();
            centre[c] = median(&mut col);
        }
        let dist: Vec<f64> = cand.iter().map(|p| (p - centre).norm()).collect();
        let mad = median(&mut dist.clone());
        let gate = (3.0 * mad).max(VOTE_GATE_FLOOR);
        let mut inl: Vec<Vector3<f64>> = cand.iter().zip(&dist).filter(|(_, &d)| d <= gate).map(|(p, _)| *p).collect();
        // order-free summation
        inl.sort_by(|a, b| {
            a.x.partial_cmp(&b.x).unwrap().then(a.y.partial_cmp(&b.y).unwrap()).then(a.z.partial_cmp(&b.z).unwrap())
        });
        let location = inl.iter().sum::<Vector3<f64>>() / inl.len() as f64;
        out.push(VoteResult { location, inliers: inl.len(), inlier_fraction: inl.len() as f64 / n as f64 });
    }
    Ok(out)
}

/// Weighted least-squares rigid fit `v ≈ R m + t` with a proper rotation.
pub fn fit_rigid(model_kps: &KeypointSet, voted: &[VoteResult], weights: &[f64]) -> Result<PoseEstimate> {
    let m = model_kps.points();
    if voted.len() != m.len() || weights.len() != m.len() {
        return Err(Error::shape(format!(
            "{} model keypoints, {} votes, {} weights",
            m.len(),
            voted.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    let used: Vec<usize> = (0..m.len()).filter(|&i| weights[i] > 0.0).collect();
    if used.len() < 3 {
        return Err(Error::degenerate("fewer than 3 keypoints carry weight"));
    }
    let wsum: f64 = used.iter().map(|&i| weights[i]).sum();
    let mc = used.iter().map(|&i| m[i] * weights[i]).sum::<Vector3<f64>>() / wsum;
    let vc = used.iter().map(|&i| voted[i].location * weights[i]).sum::<Vector3<f64>>() / wsum;
    let mut h = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    for &i in &used {
        let a = m[i] - mc;
        let b = voted[i].location - vc;
        h += weights[i] * a * b.transpose();
        scatter += weights[i] * a * a.transpose();
    }
    let rank2 = |s: &nalgebra::Vector3<f64>| {
        let mut v = [s[0], s[1], s[2]];
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v[0] > 0.0 && v[1] > 1e-12 * v[0]
    };
    if !rank2(&scatter.singular_values()) {
        return Err(Error::degenerate("model keypoints are collinear"));
    }
    let svd = h.svd(true, true);
    if !rank2(&svd.singular_values) {
        return Err(Error::degenerate("voted keypoints are collinear or coincident"));
    }
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let rotation = Rotation::from_matrix(r)?;
    let translation = vc - rotation.apply(&mc);
    Ok(PoseEstimate::new(rotation, translation, PoseSource::Fitted))
}

/// Deformed vertices and their keypoint offsets.
#[derive(Debug, Clone)]
pub struct GraphPrediction {
    pub vertices: PointSet,
    pub keypoint_offsets: Vec<Vec<Vector3<f64>>>,
}

impl GraphPrediction {
    pub fn from_network(out: &GcnOutput) -> Result<Self> {
        let vertices = out.graph.vertices().iter().zip(&out.deformation).map(|(v, d)| v + d).collect();
        Ok(GraphPrediction { vertices: PointSet::new(vertices)?, keypoint_offsets: out.keypoints.clone() })
    }
}

/// Fitted pose from voted keypoints; when the fit degenerates, the coarse
/// rotation with the translation that puts the model centroid on its vote.
pub fn estimate_pose(pred: &GraphPrediction, coarse: &CoarseRotation, model_kps: &KeypointSet) -> Result<PoseEstimate> {
    let votes = vote_keypoints(&pred.vertices, &pred.keypoint_offsets)
        .map_err(|e| e.in_stage("keypoint voting"))?;
    if votes.len() != model_kps.len() {
        return Err(Error::shape(format!("{} votes for {} model keypoints", votes.len(), model_kps.len())));
    }
    let weights: Vec<f64> = votes.iter().map(|v| v.inlier_fraction).collect();
    match fit_rigid(model_kps, &votes, &weights) {
        Ok(p) => Ok(p),
        Err(Error::DegenerateGeometry(_)) => {
            let r = coarse.rotation;
            let t = votes[0].location - r.apply(&model_kps.points()[0]);
            Ok(PoseEstimate::new(r, t, PoseSource::Coarse))
        }
        Err(e) => Err(e.in_stage("rigid fit")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn cube() -> PointSet {
        PointSet::new(
            (0..8)
                .map(|i| Vector3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
                .collect(),
        )
        .unwrap()
    }

    fn votes(points: &[Vector3<f64>]) -> Vec<VoteResult> {
        points.iter().map(|&location| VoteResult { location, inliers: 1, inlier_fraction: 1.0 }).collect()
    }

    #[test]
    fn fps_examples() {
        let c = cube();
        let one = select_keypoints_fps(&c, 1).unwrap();
        assert_eq!(one.points(), &[Vector3::new(0.5, 0.5, 0.5)]);
        let three = select_keypoints_fps(&c, 3).unwrap();
        assert_eq!(three.points()[1] + three.points()[2], Vector3::new(1.0, 1.0, 1.0));
        let five = select_keypoints_fps(&c, 5).unwrap();
        assert!(five.points()[1..].iter().all(|p| c.points().contains(p)));
        assert!(select_keypoints_fps(&c, 9).is_err());
    }

    #[test]
    fn vote_examples() {
        let verts = PointSet::new((0..20).map(|i| Vector3::new(i as f64 * 0.1, 0.0, 0.0)).collect()).unwrap();
        let target = Vector3::new(0.3, -0.2, 0.9);
        let mut offsets: Vec<Vec<Vector3<f64>>> = verts.points().iter().map(|v| vec![target - v]).collect();
        let r = vote_keypoints(&verts, &offsets).unwrap();
        assert!((r[0].location - target).norm() < 1e-12);
        assert_eq!(r[0].inlier_fraction, 1.0);
        offsets[7][0] += Vector3::new(5.0, 5.0, 5.0);
        let r = vote_keypoints(&verts, &offsets).unwrap();
        assert!((r[0].location - target).norm() < 1e-9);
        assert_eq!(r[0].inliers, 19);
        let few = PointSet::new(verts.points()[..3].to_vec()).unwrap();
        assert!(vote_keypoints(&few, &offsets[..3]).is_err());
    }

    #[test]
    fn fit_examples() {
        let kps = select_keypoints_fps(&cube(), 4).unwrap();
        let w = vec![1.0; 4];
        let id = fit_rigid(&kps, &votes(kps.points()), &w).unwrap();
        assert!(id.rotation.geodesic_distance(&Rotation::identity()) < 1e-9);
        assert!(id.translation.norm() < 1e-9);
        let r = Rotation::rz(FRAC_PI_4);
        let t = Vector3::new(0.1, 0.0, 0.0);
        let moved = votes(&kps.transformed(&r, &t));
        let fit = fit_rigid(&kps, &moved, &w).unwrap();
        assert!(fit.rotation.geodesic_distance(&r) < 1e-9);
        assert!((fit.translation - t).norm() < 1e-9);
        let shifted = votes(&kps.transformed(&r, &(t + Vector3::new(1.0, 2.0, 3.0))));
        let fit2 = fit_rigid(&kps, &shifted, &w).unwrap();
        assert!(fit2.rotation.geodesic_distance(&fit.rotation) < 1e-9);
        let line = KeypointSet::new((0..4).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect()).unwrap();
        assert!(matches!(fit_rigid(&line, &votes(line.points()), &w), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn reflection_is_corrected() {
        let kps = select_keypoints_fps(&cube(), 5).unwrap();
        let mirrored: Vec<Vector3<f64>> = kps.points().iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        let fit = fit_rigid(&kps, &votes(&mirrored), &[1.0; 5]).unwrap();
        assert!((fit.rotation.matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn estimate_falls_back_to_coarse() {
        let kps = select_keypoints_fps(&cube(), 4).unwrap();
        let verts = PointSet::new((0..6).map(|i| Vector3::new(i as f64, 1.0, 0.0)).collect()).unwrap();
        let same = Vector3::new(0.2, 0.3, 1.0);
        let offsets: Vec<Vec<Vector3<f64>>> = verts.points().iter().map(|v| vec![same - v; 4]).collect();
        let pred = GraphPrediction { vertices: verts, keypoint_offsets: offsets };
        let coarse = CoarseRotation { rotation: Rotation::rz(0.4), confidence: 0.9, node: 0 };
        let est = estimate_pose(&pred, &coarse, &kps).unwrap();
        assert_eq!(est.source, PoseSource::Coarse);
        assert!((est.rotation.apply(&kps.points()[0]) + est.translation - same).norm() < 1e-12);
    }
}
