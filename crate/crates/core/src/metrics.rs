//! Point-set losses and pose accuracy metrics.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::Rotation;

/// Nonempty set of finite 3D points in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet(Vec<Vector3<f64>>);

impl PointSet {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point set is empty"));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("point set has non-finite coordinates"));
        }
        Ok(PointSet(points))
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

    pub fn centroid(&self) -> Vector3<f64> {
        self.0.iter().sum::<Vector3<f64>>() / self.0.len() as f64
    }

    pub fn transformed(&self, r: &Rotation, t: &Vector3<f64>) -> PointSet {
        PointSet(self.0.iter().map(|p| r.apply(p) + t).collect())
    }
}

/// Which estimator produced a pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseSource {
    Coarse,
    Fitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    #[serde(rename = "R")]
    pub rotation: Rotation,
    #[serde(rename = "t")]
    pub translation: Vector3<f64>,
    pub source: PoseSource,
}

impl PoseEstimate {
    pub fn new(rotation: Rotation, translation: Vector3<f64>, source: PoseSource) -> Self {
        PoseEstimate { rotation, translation, source }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(p) + self.translation
    }
}

/// Pose with the object it belongs to, as stored in pose JSON files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub object_id: String,
    #[serde(flatten)]
    pub pose: PoseEstimate,
}

fn nearest(p: &Vector3<f64>, set: &[Vector3<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, q) in set.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    (best.0, best.1.sqrt())
}

fn mean_min(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().map(|p| nearest(p, b).1).sum::<f64>() / a.len() as f64
}

/// Sum of the mean nearest-neighbour distances in both directions.
pub fn chamfer(a: &PointSet, b: &PointSet) -> f64 {
    let ab = mean_min(a.points(), b.points());
    let ba = mean_min(b.points(), a.points());
    ab + ba
}

/// Chamfer distance of the deformed vertices `p_init + offsets` against the
/// target, with its gradient with respect to the offsets.
pub fn chamfer_loss(p_init: &PointSet, offsets: &[Vector3<f64>], target: &PointSet) -> Result<(f64, Vec<Vector3<f64>>)> {
    if offsets.len() != p_init.len() {
        return Err(Error::shape(format!("{} offsets for {} points", offsets.len(), p_init.len())));
    }
    let moved: Vec<Vector3<f64>> = p_init.points().iter().zip(offsets).map(|(p, o)| p + o).collect();
    let t = target.points();
    let (na, nb) = (moved.len() as f64, t.len() as f64);
    let mut grad = vec![Vector3::zeros(); moved.len()];
    let mut ab = 0.0;
    for (i, p) in moved.iter().enumerate() {
        let (j, d) = nearest(p, t);
        ab += d;
        if d > 0.0 {
            grad[i] += (p - t[j]) / (d * na);
        }
    }
    let mut ba = 0.0;
    for q in t {
        let (i, d) = nearest(q, &moved);
        ba += d;
        if d > 0.0 {
            grad[i] += (moved[i] - q) / (d * nb);
        }
    }
    Ok((ab / na + ba / nb, grad))
}

/// Mean L1 error of predicted point-to-keypoint offsets, with its
/// subgradient (zero where a component error is exactly zero).
pub fn keypoint_offset_loss(
    points: &PointSet,
    predicted: &[Vec<Vector3<f64>>],
    gt_keypoints: &PointSet,
) -> Result<(f64, Vec<Vec<Vector3<f64>>>)> {
    let k = gt_keypoints.len();
    if predicted.len() != points.len() || predicted.iter().any(|p| p.len() != k) {
        return Err(Error::shape(format!(
            "expected {} rows of {k} predicted offsets",
            points.len()
        )));
    }
    let n = (points.len() * k) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(predicted.len());
    for (p, row) in points.points().iter().zip(predicted) {
        let mut g_row = Vec::with_capacity(k);
        for (pred, kp) in row.iter().zip(gt_keypoints.points()) {
            let e = pred - (kp - p);
            loss += e.abs().sum();
            g_row.push(e.map(|c| if c > 0.0 { 1.0 / n } else if c < 0.0 { -1.0 / n } else { 0.0 }));
        }
        grad.push(g_row);
    }
    Ok((loss / n, grad))
}

/// Mean distance between corresponding model points under the two poses.
pub fn add_metric(gt: &PoseEstimate, pred: &PoseEstimate, model: &PointSet) -> f64 {
    let m = model.points();
    m.iter().map(|p| (gt.apply(p) - pred.apply(p)).norm()).sum::<f64>() / m.len() as f64
}

/// Mean over ground-truth-posed points of the distance to the closest
/// prediction-posed point.
pub fn adds_metric(gt: &PoseEstimate, pred: &PoseEstimate, model: &PointSet) -> f64 {
    let a: Vec<Vector3<f64>> = model.points().iter().map(|p| gt.apply(p)).collect();
    let b: Vec<Vector3<f64>> = model.points().iter().map(|p| pred.apply(p)).collect();
    mean_min(&a, &b)
}

/// Default upper threshold of the accuracy curve, meters.
pub const AUC_MAX_THRESHOLD: f64 = 0.1;

/// Area under the accuracy-vs-threshold step curve on `[0, max_threshold]`,
/// normalised to `[0, 1]`. An empty list scores 0.
pub fn auc(distances: &[f64], max_threshold: f64) -> f64 {
    if distances.is_empty() || !(max_threshold > 0.0) {
        return 0.0;
    }
    // accuracy(t) = #{d ≤ t} / n, so each distance d adds (T − d)⁺ / (T n)
    let area: f64 = distances
        .iter()
        .map(|&d| if d.is_nan() { 0.0 } else { ((max_threshold - d.max(0.0)) / max_threshold).max(0.0) })
        .sum();
    (area / distances.len() as f64).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ring(n: usize) -> PointSet {
        PointSet::new(
            (0..n)
                .map(|i| {
                    let a = 2.0 * PI * i as f64 / n as f64;
                    Vector3::new(a.cos(), a.sin(), 0.0)
                })
                .collect(),
        )
        .unwrap()
    }

    fn pose(r: Rotation, t: Vector3<f64>) -> PoseEstimate {
        PoseEstimate::new(r, t, PoseSource::Fitted)
    }

    #[test]
    fn chamfer_examples() {
        let a = ring(7);
        assert_eq!(chamfer(&a, &a), 0.0);
        let p = PointSet::new(vec![Vector3::zeros()]).unwrap();
        let q = PointSet::new(vec![Vector3::new(3.0, 4.0, 0.0)]).unwrap();
        assert_eq!(chamfer(&p, &q), 10.0);
        assert!(PointSet::new(vec![]).is_err());
    }

    #[test]
    fn chamfer_loss_examples() {
        let a = ring(5);
        let zero = vec![Vector3::zeros(); 5];
        assert_eq!(chamfer_loss(&a, &zero, &a).unwrap().0, 0.0);
        let target = a.transformed(&Rotation::identity(), &Vector3::new(0.0, 0.0, 0.3));
        let lift = vec![Vector3::new(0.0, 0.0, 0.3); 5];
        assert!(chamfer_loss(&a, &lift, &target).unwrap().0 < 1e-15);
        assert!(chamfer_loss(&a, &zero[..4], &a).is_err());
    }

    #[test]
    fn keypoint_loss_examples() {
        let pts = PointSet::new(vec![Vector3::new(1.0, 0.0, 0.0)]).unwrap();
        let kps = PointSet::new(vec![Vector3::new(1.0, 2.0, 0.0)]).unwrap();
        let exact = vec![vec![Vector3::new(0.0, 2.0, 0.0)]];
        assert_eq!(keypoint_offset_loss(&pts, &exact, &kps).unwrap().0, 0.0);
        let off = vec![vec![Vector3::new(0.1, 2.0, 0.0)]];
        assert!((keypoint_offset_loss(&pts, &off, &kps).unwrap().0 - 0.1).abs() < 1e-15);
        assert!(keypoint_offset_loss(&pts, &[], &kps).is_err());
    }

    #[test]
    fn add_examples() {
        let m = ring(16);
        let id = pose(Rotation::identity(), Vector3::zeros());
        assert_eq!(add_metric(&id, &id, &m), 0.0);
        let up = pose(Rotation::identity(), Vector3::new(0.0, 0.0, 0.02));
        assert!((add_metric(&id, &up, &m) - 0.02).abs() < 1e-15);
        let flip = pose(Rotation::rz(PI), Vector3::zeros());
        assert!((add_metric(&id, &flip, &m) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn adds_examples() {
        let m = ring(12);
        let id = pose(Rotation::identity(), Vector3::zeros());
        assert_eq!(adds_metric(&id, &id, &m), 0.0);
        let step = pose(Rotation::rz(2.0 * PI / 12.0), Vector3::zeros());
        assert!(adds_metric(&id, &step, &m) <= 1e-12);
        assert!(add_metric(&id, &step, &m) > 0.1);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.0; 4], 0.1), 1.0);
        assert_eq!(auc(&[0.2, 0.5], 0.1), 0.0);
        assert!((auc(&[0.05], 0.1) - 0.5).abs() < 1e-15);
        assert_eq!(auc(&[], 0.1), 0.0);
    }

    #[test]
    fn pose_json_shape() {
        let rec = PoseRecord { object_id: "mug".into(), pose: pose(Rotation::rz(0.3), Vector3::new(0.1, 0.2, 0.3)) };
        let v: serde_json::Value = serde_json::to_value(&rec).unwrap();
        assert_eq!(v["R"].as_array().unwrap().len(), 9);
        assert_eq!(v["t"].as_array().unwrap().len(), 3);
        assert_eq!(v["source"], "fitted");
        let back: PoseRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back.object_id, "mug");
        assert!(back.pose.rotation.geodesic_distance(&rec.pose.rotation) < 1e-12);
    }
}
