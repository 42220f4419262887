//! Quick invariant suite run by `posekit selftest`: each check reports the
//! measured error against its tolerance and its wall-clock time.

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{chebyshev_forward, delaunay_edges, gcn_layer_forward, graph_unpool, laplacian_lambda_max, GcnLayerWeights, MeshGraph};
use crate::learn::correlation_loss_and_gradient;
use crate::learn::{SphereCnnStack, StackConfig};
use crate::metrics::{add_metric, adds_metric, auc, chamfer, chamfer_loss, PointSet, PoseEstimate, PoseSource};
use crate::pipeline::{evaluate, run_pipeline, RunConfig};
use crate::pose::{fit_rigid, KeypointSet, VoteResult};
use crate::sampling::{match_assign, Candidate};
use crate::scene::{synth_scene, SceneSpec};
use crate::so3::{so3_grid, Rotation};
use crate::sphere::{dh_grid, rotate_signal, s2_correlate, so3_correlate, RotationGridSignal, SphericalSignal};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            write!(f, "{status} {:<34} measured {:.3e} tol {:.1e} ({:.3} s)", c.name, c.measured, c.tolerance, c.seconds)?;
            if let Some(e) = &c.error {
                write!(f, " error: {e}")?;
            }
            writeln!(f)?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        write!(f, "{} checks, {failed} failed", self.checks.len())
    }
}

type Check = fn() -> Result<(f64, f64)>;

/// Runs every check; a check that errors counts as failed.
pub fn selftest() -> SelftestReport {
    let checks: [(&'static str, Check); 11] = [
        ("s2 correlation vs nested loops", s2_oracle),
        ("so3 correlation vs nested loops", so3_oracle),
        ("grid-aligned equivariance", equivariance),
        ("gcn layer and chebyshev", gcn_oracle),
        ("unpooling counts and midpoints", unpooling),
        ("matching optimality", matching),
        ("chamfer symmetry", chamfer_symmetry),
        ("add/adds identities", add_identities),
        ("gradient checks", gradients),
        ("rigid fit recovery", rigid_fit),
        ("end-to-end oracle scene", end_to_end),
    ];
    let mut report = SelftestReport::default();
    for (name, check) in checks {
        let start = Instant::now();
        let r = check();
        let seconds = start.elapsed().as_secs_f64();
        report.checks.push(match r {
            Ok((measured, tolerance)) => CheckResult { name, passed: measured <= tolerance, measured, tolerance, seconds, error: None },
            Err(e) => CheckResult { name, passed: false, measured: f64::NAN, tolerance: f64::NAN, seconds, error: Some(e.to_string()) },
        });
    }
    report
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn smooth_sphere(b: usize, seed: f64) -> SphericalSignal {
    SphericalSignal::from_fn(dh_grid(b).expect("b ≥ 2"), 1, |v, o| {
        o[0] = (seed * v.x + 0.5 * v.y).sin() + v.z * v.x * seed.cos() + 0.3;
    })
}

fn smooth_so3(n: usize, s: f64) -> RotationGridSignal {
    RotationGridSignal::from_fn(so3_grid(n).expect("n ≥ 2"), 1, |r, o| {
        let m = r.matrix();
        o[0] = m[(0, 0)] * s + m[(1, 2)] - 0.5 * m[(2, 1)] * m[(0, 2)] + 0.2;
    })
}

fn s2_oracle() -> Result<(f64, f64)> {
    let (phi, f) = (smooth_sphere(4, 0.3), smooth_sphere(4, 1.7));
    let g = so3_grid(4)?;
    let fast = s2_correlate(&phi, &f, &g)?;
    let grid = f.grid();
    let slow: Vec<f64> = (0..g.len())
        .map(|node| {
            let rinv = g.rotation(node).inverse();
            (0..grid.len()).map(|x| grid.weight(x) * phi.interpolate(&rinv.apply(&grid.direction(x)), 0) * f.get(x, 0)).sum()
        })
        .collect();
    Ok((max_diff(fast.values(), &slow), 1e-12))
}

fn so3_oracle() -> Result<(f64, f64)> {
    let (phi, f) = (smooth_so3(4, 0.4), smooth_so3(4, -1.1));
    let g = f.grid();
    let fast = so3_correlate(&phi, &f)?;
    let slow: Vec<f64> = (0..g.len())
        .map(|node| {
            let rinv = g.rotation(node).inverse();
            (0..g.len()).map(|q| g.weight(q) * phi.interpolate(&rinv.compose(&g.rotation(q)), 0) * f.get(q, 0)).sum()
        })
        .collect();
    Ok((max_diff(fast.values(), &slow), 1e-12))
}

fn equivariance() -> Result<(f64, f64)> {
    let (phi, f) = (smooth_sphere(6, 0.9), smooth_sphere(6, 2.2));
    let g = so3_grid(6)?;
    let mut worst = 0.0f64;
    for k in 1..3 {
        let q = Rotation::rz(k as f64 * g.d_alpha());
        let lhs = s2_correlate(&phi, &rotate_signal(&q, &f), &g)?;
        let rhs = s2_correlate(&phi, &f, &g)?.shift_alpha(k);
        worst = worst.max(max_diff(lhs.values(), rhs.values()));
    }
    Ok((worst, 1e-9))
}

fn gcn_oracle() -> Result<(f64, f64)> {
    let g = MeshGraph::new(
        vec![Vector3::zeros(), Vector3::x(), Vector3::y()],
        DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]),
        vec![(0, 1), (1, 2)],
        None,
    )?;
    let w = GcnLayerWeights::new(DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 1.0))?;
    let out = gcn_layer_forward(&g, &w, false)?;
    let mut worst = max_diff(out.as_slice(), &[4.0, 8.0, 8.0]);
    // dense Chebyshev polynomial on a random graph
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts: Vec<[f64; 2]> = (0..8).map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
    let edges = delaunay_edges(&pts)?;
    let feats = DMatrix::from_fn(8, 2, |_, _| rng.gen_range(-1.0..1.0));
    let g = MeshGraph::new(pts.iter().map(|p| Vector3::new(p[0], p[1], 0.0)).collect(), feats.clone(), edges.clone(), Some(pts))?;
    let coeffs: Vec<DMatrix<f64>> = (0..3).map(|_| DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0))).collect();
    let fast = chebyshev_forward(&g, &coeffs, 3)?;
    let mut a = DMatrix::<f64>::zeros(8, 8);
    for &(i, j) in &edges {
        a[(i as usize, j as usize)] = 1.0;
        a[(j as usize, i as usize)] = 1.0;
    }
    let d: Vec<f64> = (0..8).map(|i| a.row(i).sum()).collect();
    let lap = DMatrix::from_fn(8, 8, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        if d[i] > 0.0 && d[j] > 0.0 {
            id - a[(i, j)] / (d[i] * d[j]).sqrt()
        } else {
            id
        }
    });
    let scaled = &lap * (2.0 / laplacian_lambda_max(&g)) - DMatrix::identity(8, 8);
    let t2 = &scaled * &scaled * 2.0 - DMatrix::identity(8, 8);
    let dense = &feats * &coeffs[0] + &scaled * &feats * &coeffs[1] + &t2 * &feats * &coeffs[2];
    worst = worst.max(max_diff(fast.as_slice(), dense.as_slice()));
    Ok((worst, 1e-9))
}

fn unpooling() -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pts: Vec<[f64; 2]> = (0..12).map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
    let edges = delaunay_edges(&pts)?;
    let feats = DMatrix::from_fn(12, 3, |_, _| rng.gen_range(-1.0..1.0));
    let g = MeshGraph::new(pts.iter().map(|p| Vector3::new(p[0], p[1], 0.3)).collect(), feats, edges, Some(pts))?;
    let u = graph_unpool(&g)?;
    let mut err = (u.len() as f64 - (g.len() + g.edges().len()) as f64).abs();
    for (e, &(a, b)) in g.edges().iter().enumerate() {
        let (a, b) = (a as usize, b as usize);
        let v = g.len() + e;
        err = err.max((u.vertices()[v] - (g.vertices()[a] + g.vertices()[b]) * 0.5).norm());
        for c in 0..3 {
            err = err.max((u.features()[(v, c)] - 0.5 * (g.features()[(a, c)] + g.features()[(b, c)])).abs());
        }
    }
    for i in 0..g.len() {
        err = err.max((u.vertices()[i] - g.vertices()[i]).norm());
    }
    Ok((err, 0.0))
}

fn brute_force(n_v: usize, n_s: usize, cost: &[Vec<Option<f64>>]) -> (usize, f64) {
    fn go(v: usize, used: &mut Vec<bool>, cost: &[Vec<Option<f64>>], n_v: usize, acc: (usize, f64), best: &mut (usize, f64)) {
        if v == n_v {
            if acc.0 > best.0 || (acc.0 == best.0 && acc.1 < best.1) {
                *best = acc;
            }
            return;
        }
        go(v + 1, used, cost, n_v, acc, best);
        for s in 0..used.len() {
            if let (false, Some(c)) = (used[s], cost[v][s]) {
                used[s] = true;
                go(v + 1, used, cost, n_v, (acc.0 + 1, acc.1 + c), best);
                used[s] = false;
            }
        }
    }
    let mut best = (0, 0.0);
    go(0, &mut vec![false; n_s], cost, n_v, (0, 0.0), &mut best);
    best
}

fn matching() -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let (n_v, n_s) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let cost: Vec<Vec<Option<f64>>> =
            (0..n_v).map(|_| (0..n_s).map(|_| rng.gen_bool(0.7).then(|| rng.gen_range(0..20) as f64)).collect()).collect();
        let cands: Vec<Candidate> = (0..n_v)
            .flat_map(|v| (0..n_s).map(move |s| (v, s)))
            .filter_map(|(v, s)| cost[v][s].map(|c| Candidate { vertex: v, sample: s, cost: c }))
            .collect();
        let a = match_assign(&cands);
        let (size, total) = brute_force(n_v, n_s, &cost);
        worst = worst.max((a.pairs.len() as f64 - size as f64).abs()).max((a.total_cost - total).abs());
    }
    Ok((worst, 0.0))
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointSet {
    PointSet::new((0..n).map(|_| Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0))).collect()).expect("finite")
}

fn chamfer_symmetry() -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (a, b) = (random_cloud(&mut rng, 15), random_cloud(&mut rng, 9));
        worst = worst.max((chamfer(&a, &b) - chamfer(&b, &a)).abs());
    }
    Ok((worst, 0.0))
}

fn add_identities() -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ring = PointSet::new(
        (0..16).map(|i| {
            let a = std::f64::consts::TAU * i as f64 / 16.0;
            Vector3::new(a.cos(), a.sin(), 0.0)
        })
        .collect(),
    )?;
    let id = PoseEstimate::new(Rotation::identity(), Vector3::zeros(), PoseSource::Fitted);
    let flip = PoseEstimate::new(Rotation::rz(std::f64::consts::PI), Vector3::zeros(), PoseSource::Fitted);
    let step = PoseEstimate::new(Rotation::rz(std::f64::consts::TAU / 16.0), Vector3::zeros(), PoseSource::Fitted);
    let mut worst = (add_metric(&id, &flip, &ring) - 2.0).abs();
    worst = worst.max(adds_metric(&id, &step, &ring) * 1e-3);
    worst = worst.max((auc(&[0.0; 5], 0.1) - 1.0).abs());
    let model = random_cloud(&mut rng, 40);
    for _ in 0..100 {
        let p = |rng: &mut ChaCha8Rng| PoseEstimate::new(Rotation::random(rng), Vector3::from_fn(|_, _| rng.gen_range(-0.1..0.1)), PoseSource::Fitted);
        let (a, b) = (p(&mut rng), p(&mut rng));
        worst = worst.max(adds_metric(&a, &b, &model) - add_metric(&a, &b, &model));
    }
    Ok((worst, 1e-9))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn gradients() -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let p = random_cloud(&mut rng, 6);
    let target = random_cloud(&mut rng, 5);
    let offsets: Vec<Vector3<f64>> = (0..6).map(|_| Vector3::from_fn(|_, _| rng.gen_range(-0.1..0.1))).collect();
    let (_, grad) = chamfer_loss(&p, &offsets, &target)?;
    for i in 0..6 {
        for c in 0..3 {
            let mut plus = offsets.clone();
            plus[i][c] += h;
            let mut minus = offsets.clone();
            minus[i][c] -= h;
            let fd = (chamfer_loss(&p, &plus, &target)?.0 - chamfer_loss(&p, &minus, &target)?.0) / (2.0 * h);
            worst = worst.max(rel_err(fd, grad[i][c]));
        }
    }
    let cfg = StackConfig { widths: [2, 2, 2, 2, 1], hidden_radius: 0.9, final_radius: 0.9, ..StackConfig::default() };
    let mut stack = SphereCnnStack::random(dh_grid(3)?, so3_grid(3)?, 1, &cfg, &mut rng)?;
    let theta: Vec<f64> = (0..stack.final_parameters().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    stack.set_final_parameters(&theta)?;
    let input = smooth_sphere(3, 0.7);
    let r = Rotation::random(&mut rng);
    let (_, grad) = correlation_loss_and_gradient(&stack, &input, &r)?;
    for i in 0..theta.len().min(12) {
        let mut s = stack.clone();
        let mut t = theta.clone();
        t[i] += h;
        s.set_final_parameters(&t)?;
        let up = correlation_loss_and_gradient(&s, &input, &r)?.0;
        t[i] -= 2.0 * h;
        s.set_final_parameters(&t)?;
        let down = correlation_loss_and_gradient(&s, &input, &r)?.0;
        worst = worst.max(rel_err((up - down) / (2.0 * h), grad[i]));
    }
    Ok((worst, 1e-4))
}

fn rigid_fit() -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = KeypointSet::new((0..9).map(|_| Vector3::from_fn(|_, _| rng.gen_range(-0.1..0.1))).collect())?;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let r = Rotation::random(&mut rng);
        let t = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let voted: Vec<VoteResult> = model
            .transformed(&r, &t)
            .into_iter()
            .map(|location| VoteResult { location, inliers: 1, inlier_fraction: 1.0 })
            .collect();
        let p = fit_rigid(&model, &voted, &[1.0; 9])?;
        worst = worst.max(p.rotation.geodesic_distance(&r)).max((p.translation - t).norm());
        worst = worst.max((p.rotation.matrix().determinant() - 1.0).abs());
    }
    Ok((worst, 1e-8))
}

fn end_to_end() -> Result<(f64, f64)> {
    let scene = synth_scene(&SceneSpec::random(2, 12))?;
    let out = run_pipeline(&scene, &RunConfig { b: 4, n: 4, grid_side: 10, ..RunConfig::default() })?;
    let models: Vec<(String, PointSet)> = scene
        .spec
        .objects
        .iter()
        .zip(&scene.meshes)
        .map(|(o, m)| Ok((o.id.clone(), PointSet::new(m.vertices().to_vec())?)))
        .collect::<Result<_>>()?;
    let r = evaluate(&out.poses, &scene.ground_truth, &models, 0.1)?;
    Ok((r.objects.iter().map(|o| o.add.unwrap_or(f64::INFINITY)).fold(0.0, f64::max), 1e-3))
}
