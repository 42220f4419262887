//! Feature sampling inside masks, camera back-projection, graph
//! initialisation and the optimal assignment of samples to graph vertices.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{delaunay_edges, MeshGraph};
use crate::image::{DepthMap, FeatureMap, Mask};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = CameraIntrinsics { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::invalid("focal lengths must be positive and the principal point finite"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let k: CameraIntrinsics =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("bad intrinsics: {e}")))?;
        k.validate()?;
        Ok(k)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = crate::image::read_file(path)?;
        crate::image::in_file(path, Self::from_json(&String::from_utf8_lossy(&bytes)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("intrinsics serialize")
    }

    /// Pixel of a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        (p.z > 0.0).then(|| [self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy])
    }
}

pub fn backproject(pixel: [f64; 2], depth: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::invalid(format!("depth must be positive, got {depth}")));
    }
    Ok(Vector3::new((pixel[0] - k.cx) * depth / k.fx, (pixel[1] - k.cy) * depth / k.fy, depth))
}

/// Candidate attempts per active sample.
const BRIDSON_K: usize = 30;
const MAX_HALVINGS: usize = 5;

/// Bridson sampling restricted to the mask. Every output point lies on a
/// mask pixel and keeps at least the final radius from the others. When
/// fewer than `target` points fit, the radius is halved (up to five times).
pub fn poisson_disc_sample<R: Rng>(mask: &Mask, radius: f64, target: usize, rng: &mut R) -> Result<Vec<[f64; 2]>> {
    if mask.is_empty() {
        return Err(Error::invalid("cannot sample an empty mask"));
    }
    if !(radius > 0.0) || target == 0 {
        return Err(Error::invalid("radius and target count must be positive"));
    }
    let mut r = radius;
    let mut best = 0;
    for _ in 0..=MAX_HALVINGS {
        let mut pts = poisson_disc_fill(mask, r, rng);
        best = best.max(pts.len());
        if pts.len() >= target {
            pts.truncate(target);
            return Ok(pts);
        }
        r *= 0.5;
    }
    Err(Error::TargetUnreachable { wanted: target, found: best })
}

/// Maximal Bridson point set over the mask: every mask pixel ends up within
/// `2r` of some point, and no two points are closer than `r`.
pub fn poisson_disc_fill<R: Rng>(mask: &Mask, r: f64, rng: &mut R) -> Vec<[f64; 2]> {
    let cell = r / std::f64::consts::SQRT_2;
    let gw = (mask.width() as f64 / cell).ceil() as usize + 1;
    let gh = (mask.height() as f64 / cell).ceil() as usize + 1;
    let mut grid: Vec<Option<u32>> = vec![None; gw * gh];
    let mut pts: Vec<[f64; 2]> = Vec::new();
    let cell_of = |p: [f64; 2]| (((p[0] + 0.5) / cell) as usize, ((p[1] + 0.5) / cell) as usize);
    let fits = |p: [f64; 2], pts: &[[f64; 2]], grid: &[Option<u32>]| -> bool {
        if !mask.contains(p[0], p[1]) {
            return false;
        }
        let (cx, cy) = cell_of(p);
        for y in cy.saturating_sub(2)..(cy + 3).min(gh) {
            for x in cx.saturating_sub(2)..(cx + 3).min(gw) {
                if let Some(i) = grid[y * gw + x] {
                    let q = pts[i as usize];
                    if (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) < r * r {
                        return false;
                    }
                }
            }
        }
        true
    };
    let mut seeds: Vec<(usize, usize)> = mask.pixels().collect();
    seeds.shuffle(rng);
    let mut active = VecDeque::new();
    for (sx, sy) in seeds {
        let s = [sx as f64, sy as f64];
        if !fits(s, &pts, &grid) {
            continue;
        }
        let (cx, cy) = cell_of(s);
        grid[cy * gw + cx] = Some(pts.len() as u32);
        active.push_back(pts.len());
        pts.push(s);
        while let Some(&i) = active.front() {
            let base = pts[i];
            let mut placed = false;
            for _ in 0..BRIDSON_K {
                let rad = rng.gen_range(r..2.0 * r);
                let ang = rng.gen_range(0.0..std::f64::consts::TAU);
                let p = [base[0] + rad * ang.cos(), base[1] + rad * ang.sin()];
                if fits(p, &pts, &grid) {
                    let (cx, cy) = cell_of(p);
                    grid[cy * gw + cx] = Some(pts.len() as u32);
                    active.push_back(pts.len());
                    pts.push(p);
                    placed = true;
                    break;
                }
            }
            if !placed {
                active.pop_front();
            }
        }
    }
    pts
}

/// Concatenated bilinear features of every map at an image-space point.
pub fn multiscale_sample(maps: &[FeatureMap], point: [f64; 2]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(maps.iter().map(|m| m.channels()).sum());
    for m in maps {
        let s = m.scale() as f64;
        let (w, h) = ((m.width() * m.scale()) as f64, (m.height() * m.scale()) as f64);
        if !(point[0] >= 0.0 && point[1] >= 0.0 && point[0] <= w - 1.0 && point[1] <= h - 1.0) {
            return Err(Error::invalid(format!("point ({}, {}) is outside the image", point[0], point[1])));
        }
        let start = out.len();
        out.resize(start + m.channels(), 0.0);
        m.bilinear_into(point[0] / s, point[1] / s, &mut out[start..]);
    }
    Ok(out)
}

/// Regular `side × side` pixel grid spanning the mask's bounding box.
fn grid_pixels(mask: &Mask, side: usize) -> Result<Vec<[f64; 2]>> {
    if side < 2 {
        return Err(Error::invalid("graph grid side must be at least 2"));
    }
    let (x0, y0, x1, y1) = mask.bounding_box().ok_or_else(|| Error::invalid("mask is empty"))?;
    let span = |lo: usize, hi: usize| {
        let (lo, hi) = (lo as f64, hi as f64);
        if hi - lo < 1.0 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (ux, vx) = span(x0, x1);
    let (uy, vy) = span(y0, y1);
    let t = |i: usize| i as f64 / (side - 1) as f64;
    Ok((0..side * side)
        .map(|i| [ux + (vx - ux) * t(i % side), uy + (vy - uy) * t(i / side)])
        .collect())
}

fn graph_from(pixels: Vec<[f64; 2]>, vertices: Vec<Vector3<f64>>, edges: Vec<(u32, u32)>) -> Result<MeshGraph> {
    let n = vertices.len();
    MeshGraph::new(vertices, DMatrix::zeros(n, 0), edges, Some(pixels))
}

/// Plane graph: grid vertices back-projected at a common depth.
pub fn init_graph_plane(mask: &Mask, avg_depth: f64, k: &CameraIntrinsics, grid_side: usize) -> Result<MeshGraph> {
    let pixels = grid_pixels(mask, grid_side)?;
    let vertices = pixels.iter().map(|&p| backproject(p, avg_depth, k)).collect::<Result<Vec<_>>>()?;
    let edges = delaunay_edges(&pixels)?;
    graph_from(pixels, vertices, edges)
}

/// Depth graph: grid vertices back-projected at the interpolated depth;
/// vertices over invalid depth take the mean of their valid neighbours (or
/// of all valid vertices when no neighbour is valid).
pub fn init_graph_depth(mask: &Mask, depth: &DepthMap, k: &CameraIntrinsics, grid_side: usize) -> Result<MeshGraph> {
    if depth.width() != mask.width() || depth.height() != mask.height() {
        return Err(Error::shape("mask and depth map sizes differ"));
    }
    if !mask.pixels().any(|(x, y)| depth.get(x, y) > 0.0) {
        return Err(Error::invalid("no valid depth under the mask"));
    }
    let pixels = grid_pixels(mask, grid_side)?;
    let edges = delaunay_edges(&pixels)?;
    let sampled: Vec<Option<f64>> = pixels.iter().map(|p| depth.bilinear(p[0], p[1])).collect();
    let valid: Vec<f64> = sampled.iter().flatten().cloned().collect();
    let global = if valid.is_empty() {
        let d: Vec<f64> = mask.pixels().map(|(x, y)| depth.get(x, y)).filter(|&d| d > 0.0).collect();
        d.iter().sum::<f64>() / d.len() as f64
    } else {
        valid.iter().sum::<f64>() / valid.len() as f64
    };
    let mut sums = vec![(0.0, 0usize); pixels.len()];
    for &(a, b) in &edges {
        let (a, b) = (a as usize, b as usize);
        if let Some(d) = sampled[b] {
            sums[a].0 += d;
            sums[a].1 += 1;
        }
        if let Some(d) = sampled[a] {
            sums[b].0 += d;
            sums[b].1 += 1;
        }
    }
    let vertices = pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let d = sampled[i].unwrap_or(if sums[i].1 > 0 { sums[i].0 / sums[i].1 as f64 } else { global });
            backproject(p, d, k)
        })
        .collect::<Result<Vec<_>>>()?;
    graph_from(pixels, vertices, edges)
}

/// Bipartite edge between a graph vertex and a 2D sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub vertex: usize,
    pub sample: usize,
    pub cost: f64,
}

/// For each vertex, its `n` nearest samples (ties by sample index).
pub fn candidate_edges(vertices: &[[f64; 2]], samples: &[[f64; 2]], n: usize) -> Vec<Candidate> {
    let mut out = Vec::with_capacity(vertices.len() * n.min(samples.len()));
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(samples.len());
    for (vi, v) in vertices.iter().enumerate() {
        order.clear();
        order.extend(samples.iter().enumerate().map(|(si, s)| (((v[0] - s[0]).powi(2) + (v[1] - s[1]).powi(2)).sqrt(), si)));
        let take = n.min(order.len());
        if take < order.len() {
            order.select_nth_unstable_by(take, |a, b| a.partial_cmp(b).unwrap());
        }
        order[..take].sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.extend(order[..take].iter().map(|&(cost, sample)| Candidate { vertex: vi, sample, cost }));
    }
    out
}

/// One-to-one vertex/sample pairs sorted by vertex.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    /// Sum of pair costs accumulated in vertex order.
    pub total_cost: f64,
}

/// Minimum-cost matching among the maximum-cardinality matchings of the
/// candidate graph, by successive shortest augmenting paths.
pub fn match_assign(candidates: &[Candidate]) -> Assignment {
    if candidates.is_empty() {
        return Assignment::default();
    }
    let nv = candidates.iter().map(|c| c.vertex).max().unwrap() + 1;
    let ns = candidates.iter().map(|c| c.sample).max().unwrap() + 1;
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nv];
    for c in candidates {
        adj[c.vertex].push((c.sample, c.cost));
    }
    for a in &mut adj {
        a.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.partial_cmp(&y.1).unwrap()));
        // keep the cheapest of parallel edges
        a.dedup_by_key(|e| e.0);
    }
    let mut vertex_match: Vec<Option<(usize, f64)>> = vec![None; nv];
    let mut sample_match: Vec<Option<usize>> = vec![None; ns];
    loop {
        // Bellman–Ford (queue based) over the residual graph from all free vertices.
        let mut dist_v = vec![f64::INFINITY; nv];
        let mut dist_s = vec![f64::INFINITY; ns];
        let mut prev_s: Vec<usize> = vec![usize::MAX; ns];
        let mut queue = VecDeque::new();
        let mut queued = vec![false; nv];
        for v in 0..nv {
            if vertex_match[v].is_none() && !adj[v].is_empty() {
                dist_v[v] = 0.0;
                queue.push_back(v);
                queued[v] = true;
            }
        }
        while let Some(v) = queue.pop_front() {
            queued[v] = false;
            for &(s, c) in &adj[v] {
                if vertex_match[v].map(|m| m.0) == Some(s) {
                    continue;
                }
                let d = dist_v[v] + c;
                if d < dist_s[s] - 1e-15 * d.abs().max(1.0) {
                    dist_s[s] = d;
                    prev_s[s] = v;
                    if let Some(u) = sample_match[s] {
                        let back = vertex_match[u].unwrap().1;
                        let du = d - back;
                        if du < dist_v[u] {
                            dist_v[u] = du;
                            if !queued[u] {
                                queued[u] = true;
                                queue.push_back(u);
                            }
                        }
                    }
                }
            }
        }
        let end = (0..ns)
            .filter(|&s| sample_match[s].is_none() && dist_s[s].is_finite())
            .min_by(|&a, &b| dist_s[a].partial_cmp(&dist_s[b]).unwrap().then(a.cmp(&b)));
        let Some(mut s) = end else { break };
        loop {
            let v = prev_s[s];
            let cost = adj[v].iter().find(|e| e.0 == s).unwrap().1;
            let old = vertex_match[v].map(|m| m.0);
            vertex_match[v] = Some((s, cost));
            sample_match[s] = Some(v);
            match old {
                Some(o) => s = o,
                None => break,
            }
        }
    }
    let mut pairs = Vec::new();
    let mut total_cost = 0.0;
    for (v, m) in vertex_match.iter().enumerate() {
        if let Some((s, c)) = m {
            pairs.push((v, *s));
            total_cost += c;
        }
    }
    Assignment { pairs, total_cost }
}

/// Feature rows `[conv ‖ sphere ‖ xyz]`; unmatched vertices carry zeros
/// before their coordinates.
pub fn fill_graph(
    g: &MeshGraph,
    a: &Assignment,
    conv_features: &[Vec<f64>],
    sphere_features: &[Vec<f64>],
) -> Result<MeshGraph> {
    if conv_features.len() != sphere_features.len() {
        return Err(Error::shape("conv and sphere feature lists differ in length"));
    }
    let cw = conv_features.first().map_or(0, |f| f.len());
    let sw = sphere_features.first().map_or(0, |f| f.len());
    if conv_features.iter().any(|f| f.len() != cw) || sphere_features.iter().any(|f| f.len() != sw) {
        return Err(Error::shape("feature vectors have inconsistent widths"));
    }
    let width = cw + sw + 3;
    let mut feats = DMatrix::zeros(g.len(), width);
    let mut seen_v = vec![false; g.len()];
    let mut seen_s = vec![false; conv_features.len()];
    for &(v, s) in &a.pairs {
        if v >= g.len() || s >= conv_features.len() {
            return Err(Error::invalid(format!("assignment pair ({v}, {s}) out of range")));
        }
        if std::mem::replace(&mut seen_v[v], true) || std::mem::replace(&mut seen_s[s], true) {
            return Err(Error::invalid("assignment reuses a vertex or sample"));
        }
        for (j, x) in conv_features[s].iter().chain(&sphere_features[s]).enumerate() {
            feats[(v, j)] = *x;
        }
    }
    for (v, p) in g.vertices().iter().enumerate() {
        for c in 0..3 {
            feats[(v, cw + sw + c)] = p[c];
        }
    }
    g.with_features(feats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0).unwrap()
    }

    #[test]
    fn poisson_examples() {
        let mask = Mask::full(100, 100);
        let pts = poisson_disc_sample(&mask, 10.0, 20, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(pts.len(), 20);
        for i in 0..pts.len() {
            assert!(mask.contains(pts[i][0], pts[i][1]));
            for j in 0..i {
                let d = ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt();
                assert!(d >= 10.0);
            }
        }
        let again = poisson_disc_sample(&mask, 10.0, 20, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(pts, again);
        let mut one = Mask::empty(9, 9);
        one.set(4, 6, true);
        let p = poisson_disc_sample(&one, 3.0, 1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(p, vec![[4.0, 6.0]]);
        assert!(matches!(
            poisson_disc_sample(&one, 3.0, 10_000, &mut ChaCha8Rng::seed_from_u64(2)),
            Err(Error::TargetUnreachable { .. })
        ));
        assert!(poisson_disc_sample(&Mask::empty(4, 4), 1.0, 1, &mut ChaCha8Rng::seed_from_u64(2)).is_err());
    }

    #[test]
    fn poisson_halves_radius() {
        let mask = Mask::full(20, 20);
        let pts = poisson_disc_sample(&mask, 15.0, 30, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(pts.len(), 30);
    }

    #[test]
    fn multiscale_examples() {
        let constant = FeatureMap::from_fn(8, 8, 2, 2, |_, _, o| o.copy_from_slice(&[1.5, -2.0]));
        assert_eq!(multiscale_sample(&[constant.clone()], [3.3, 7.9]).unwrap(), vec![1.5, -2.0]);
        let ramp = FeatureMap::from_fn(4, 3, 1, 1, |x, y, o| o[0] = (x * 4 + y) as f64);
        assert_eq!(multiscale_sample(&[ramp.clone()], [2.0, 1.0]).unwrap(), vec![9.0]);
        assert_eq!(multiscale_sample(&[ramp.clone()], [0.5, 0.0]).unwrap(), vec![2.0]);
        assert_eq!(multiscale_sample(&[ramp.clone(), constant], [1.0, 1.0]).unwrap().len(), 3);
        assert!(multiscale_sample(&[ramp], [4.0, 0.0]).is_err());
    }

    #[test]
    fn backprojection_examples() {
        let k = cam();
        let p = backproject([320.0, 240.0], 2.0, &k).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 2.0));
        let q = backproject([820.0, 240.0], 1.0, &k).unwrap();
        assert!((q - Vector3::new(1.0, 0.0, 1.0)).norm() < 1e-12);
        let px = k.project(&backproject([13.25, 401.5], 0.73, &k).unwrap()).unwrap();
        assert!((px[0] - 13.25).abs() < 1e-9 && (px[1] - 401.5).abs() < 1e-9);
        assert!(backproject([0.0, 0.0], 0.0, &k).is_err());
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        let back = CameraIntrinsics::from_json(&k.to_json()).unwrap();
        assert_eq!(back, k);
    }

    #[test]
    fn plane_graph_examples() {
        let mask = Mask::from_fn(64, 48, |x, y| (10..50).contains(&x) && (5..40).contains(&y));
        let g = init_graph_plane(&mask, 0.6, &cam(), 20).unwrap();
        assert_eq!(g.len(), 400);
        assert!(g.vertices().iter().all(|v| v.z == 0.6));
        let small = init_graph_plane(&mask, 0.6, &cam(), 2).unwrap();
        assert_eq!((small.len(), small.edges().len()), (4, 5));
        assert!(init_graph_plane(&Mask::empty(4, 4), 0.6, &cam(), 3).is_err());
    }

    #[test]
    fn depth_graph_examples() {
        let mask = Mask::from_fn(40, 30, |x, y| (4..36).contains(&x) && (2..28).contains(&y));
        let k = cam();
        let flat = DepthMap::from_fn(40, 30, |_, _| 0.8);
        let a = init_graph_depth(&mask, &flat, &k, 5).unwrap();
        let b = init_graph_plane(&mask, 0.8, &k, 5).unwrap();
        for (p, q) in a.vertices().iter().zip(b.vertices()) {
            assert!((p - q).norm() < 1e-12);
        }
        let ramp = DepthMap::from_fn(40, 30, |x, y| 0.5 + 0.01 * x as f64 + 0.002 * y as f64);
        let g = init_graph_depth(&mask, &ramp, &k, 7).unwrap();
        for (v, px) in g.vertices().iter().zip(g.coords2d().unwrap()) {
            assert!((v.z - (0.5 + 0.01 * px[0] + 0.002 * px[1])).abs() < 1e-6);
        }
        // grid side 5 over x 4..=35, y 2..=27 puts vertex 6 at pixel (11.75, 8.25);
        // use side 2 so vertex 0 sits exactly on pixel (4, 2)
        let mut holed = flat.clone();
        holed.set(4, 2, 0.0);
        let h = init_graph_depth(&mask, &holed, &k, 2).unwrap();
        assert!((h.vertices()[0].z - 0.8).abs() < 1e-12);
        assert!(init_graph_depth(&mask, &DepthMap::zeros(40, 30), &k, 3).is_err());
    }

    #[test]
    fn candidate_examples() {
        let v = [[0.0, 0.0], [5.0, 5.0]];
        let s = [[1.0, 0.0], [4.0, 4.0], [10.0, 10.0]];
        assert_eq!(candidate_edges(&v, &s, 5).len(), 6);
        let nn = candidate_edges(&v, &s, 1);
        assert_eq!(nn.iter().map(|c| (c.vertex, c.sample)).collect::<Vec<_>>(), vec![(0, 0), (1, 1)]);
        let shift = |p: &[[f64; 2]]| p.iter().map(|q| [q[0] + 7.0, q[1] - 3.0]).collect::<Vec<_>>();
        let moved = candidate_edges(&shift(&v), &shift(&s), 2);
        for (a, b) in moved.iter().zip(candidate_edges(&v, &s, 2)) {
            assert!((a.cost - b.cost).abs() < 1e-12);
        }
    }

    #[test]
    fn matching_examples() {
        let one = match_assign(&[Candidate { vertex: 0, sample: 0, cost: 0.5 }]);
        assert_eq!(one.pairs, vec![(0, 0)]);
        let c = |vertex, sample, cost| Candidate { vertex, sample, cost };
        let two = match_assign(&[c(0, 0, 1.0), c(0, 1, 2.0), c(1, 0, 2.0), c(1, 1, 1.0)]);
        assert_eq!(two.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(two.total_cost, 2.0);
        // greedy would take (0, 0) at 1 and leave vertex 1 unmatched
        let aug = match_assign(&[c(0, 0, 1.0), c(0, 1, 5.0), c(1, 0, 2.0)]);
        assert_eq!(aug.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(match_assign(&[]), Assignment::default());
    }

    #[test]
    fn fill_examples() {
        let mask = Mask::full(10, 10);
        let g = init_graph_plane(&mask, 0.5, &cam(), 2).unwrap();
        let conv = vec![vec![1.0, 2.0]; 3];
        let sph = vec![vec![9.0]; 3];
        let empty = fill_graph(&g, &Assignment::default(), &conv, &sph).unwrap();
        assert_eq!(empty.feature_width(), 6);
        for v in 0..4 {
            assert_eq!(empty.features().row(v).columns(0, 3).iter().sum::<f64>(), 0.0);
            assert_eq!(empty.features()[(v, 5)], g.vertices()[v].z);
        }
        let a = Assignment { pairs: vec![(1, 2), (3, 0)], total_cost: 0.0 };
        let full = fill_graph(&g, &a, &conv, &sph).unwrap();
        assert_eq!(full.features()[(1, 2)], 9.0);
        let dup = Assignment { pairs: vec![(1, 2), (3, 2)], total_cost: 0.0 };
        assert!(fill_graph(&g, &dup, &conv, &sph).is_err());
        assert!(fill_graph(&g, &a, &conv, &sph[..2]).is_err());
    }
}
