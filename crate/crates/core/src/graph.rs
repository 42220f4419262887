//! Mesh graphs: Delaunay edge construction, graph convolution layers, a
//! Chebyshev graph filter and edge-midpoint unpooling.

use std::io::{Read, Write};

use nalgebra::{DMatrix, Vector3};
use rand::Rng;
use spade::{DelaunayTriangulation, Point2, Triangulation};

use crate::error::{Error, Result};

/// Undirected graph over 3D vertices with a feature row per vertex and,
/// optionally, the 2D image coordinates each vertex was generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshGraph {
    vertices: Vec<Vector3<f64>>,
    features: DMatrix<f64>,
    edges: Vec<(u32, u32)>,
    coords2d: Option<Vec<[f64; 2]>>,
}

impl MeshGraph {
    /// Edges are normalised to `(low, high)` and sorted.
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        features: DMatrix<f64>,
        edges: Vec<(u32, u32)>,
        coords2d: Option<Vec<[f64; 2]>>,
    ) -> Result<Self> {
        let v = vertices.len();
        if features.nrows() != v {
            return Err(Error::shape(format!("{} feature rows for {v} vertices", features.nrows())));
        }
        if let Some(c) = &coords2d {
            if c.len() != v {
                return Err(Error::shape(format!("{} 2D coordinates for {v} vertices", c.len())));
            }
        }
        if features.iter().any(|x| !x.is_finite()) || vertices.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("graph has non-finite positions or features"));
        }
        let mut norm: Vec<(u32, u32)> = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a == b {
                return Err(Error::invalid(format!("self-loop at vertex {a}")));
            }
            if a as usize >= v || b as usize >= v {
                return Err(Error::invalid(format!("edge ({a}, {b}) out of range")));
            }
            norm.push((a.min(b), a.max(b)));
        }
        norm.sort_unstable();
        if norm.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate edge"));
        }
        Ok(MeshGraph { vertices, features, edges: norm, coords2d })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn coords2d(&self) -> Option<&[[f64; 2]]> {
        self.coords2d.as_deref()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn feature_width(&self) -> usize {
        self.features.ncols()
    }

    /// Same topology with a new feature matrix.
    pub fn with_features(&self, features: DMatrix<f64>) -> Result<Self> {
        if features.nrows() != self.len() {
            return Err(Error::shape(format!("{} feature rows for {} vertices", features.nrows(), self.len())));
        }
        Ok(MeshGraph { features, ..self.clone() })
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.len()];
        for &(a, b) in &self.edges {
            d[a as usize] += 1;
            d[b as usize] += 1;
        }
        d
    }

    /// `A · M` for the adjacency matrix `A`.
    fn adjacency_times(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for c in 0..m.ncols() {
            let src = m.column(c);
            let mut dst = out.column_mut(c);
            for &(a, b) in &self.edges {
                let (a, b) = (a as usize, b as usize);
                dst[a] += src[b];
                dst[b] += src[a];
            }
        }
        out
    }

    /// Positions as OBJ `v` lines, 2D coordinates as `vt` lines and edges as
    /// `l` polylines.
    pub fn to_obj(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        if let Some(c) = &self.coords2d {
            for p in c {
                let _ = writeln!(s, "vt {} {}", p[0], p[1]);
            }
        }
        for &(a, b) in &self.edges {
            let _ = writeln!(s, "l {} {}", a + 1, b + 1);
        }
        s
    }

    /// Reads the format of [`Self::to_obj`]; `f` records contribute their
    /// three sides as edges. Features come from `features` (or are empty).
    pub fn from_obj(text: &str, features: Option<DMatrix<f64>>) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut coords = Vec::new();
        let mut edges = std::collections::BTreeSet::new();
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            let bad = |what: &str| Error::invalid(format!("line {}: bad {what}", ln + 1));
            let nums = |it: std::str::SplitWhitespace, what: &str| -> Result<Vec<f64>> {
                it.map(|t| t.parse::<f64>().map_err(|_| bad(what))).collect()
            };
            match it.next() {
                Some("v") => {
                    let c = nums(it, "vertex")?;
                    if c.len() < 3 {
                        return Err(bad("vertex"));
                    }
                    vertices.push(Vector3::new(c[0], c[1], c[2]));
                }
                Some("vt") => {
                    let c = nums(it, "2D coordinate")?;
                    if c.len() < 2 {
                        return Err(bad("2D coordinate"));
                    }
                    coords.push([c[0], c[1]]);
                }
                Some(tag @ ("l" | "f")) => {
                    let idx: Vec<u32> = it
                        .map(|t| {
                            t.split('/')
                                .next()
                                .and_then(|h| h.parse::<u32>().ok())
                                .filter(|&i| i >= 1)
                                .map(|i| i - 1)
                                .ok_or_else(|| bad("index"))
                        })
                        .collect::<Result<_>>()?;
                    let mut pairs: Vec<(u32, u32)> = idx.windows(2).map(|w| (w[0], w[1])).collect();
                    if tag == "f" && idx.len() > 2 {
                        pairs.push((idx[idx.len() - 1], idx[0]));
                    }
                    for (a, b) in pairs {
                        edges.insert((a.min(b), a.max(b)));
                    }
                }
                _ => {}
            }
        }
        let v = vertices.len();
        let features = features.unwrap_or_else(|| DMatrix::zeros(v, 0));
        let coords2d = if coords.is_empty() { None } else { Some(coords) };
        MeshGraph::new(vertices, features, edges.into_iter().collect(), coords2d)
    }
}

const FEATURE_MAGIC: &[u8; 4] = b"GFT1";

/// Feature sidecar: `GFT1`, u32 rows, u32 columns, u32 0, then row-major
/// little-endian f32 values.
pub fn write_features<W: Write>(w: &mut W, features: &DMatrix<f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * features.len());
    buf.extend(FEATURE_MAGIC);
    for v in [features.nrows() as u32, features.ncols() as u32, 0] {
        buf.extend(v.to_le_bytes());
    }
    for r in 0..features.nrows() {
        for c in 0..features.ncols() {
            buf.extend((features[(r, c)] as f32).to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|source| Error::Io { path: "<features>".into(), source })
}

pub fn read_features<R: Read>(r: &mut R) -> Result<DMatrix<f64>> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head).map_err(|_| Error::invalid("truncated feature header"))?;
    if &head[..4] != FEATURE_MAGIC {
        return Err(Error::invalid("bad feature magic, expected GFT1"));
    }
    let word = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap()) as usize;
    let (rows, cols) = (word(4), word(8));
    let mut body = vec![0u8; rows * cols * 4];
    r.read_exact(&mut body).map_err(|_| Error::invalid("truncated feature values"))?;
    let vals: Vec<f64> = body.chunks(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

/// Edges of the 2D Delaunay triangulation. Coincident points share the
/// first occurrence's vertex; later duplicates get no edges.
pub fn delaunay_edges(points: &[[f64; 2]]) -> Result<Vec<(u32, u32)>> {
    if points.len() < 3 {
        return Err(Error::invalid(format!("Delaunay needs at least 3 points, got {}", points.len())));
    }
    let mut tri: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    let mut owner: Vec<Option<u32>> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let h = tri
            .insert(Point2::new(p[0], p[1]))
            .map_err(|e| Error::invalid(format!("point {i} rejected: {e:?}")))?;
        let slot = h.index();
        if slot >= owner.len() {
            owner.resize(slot + 1, None);
        }
        owner[slot].get_or_insert(i as u32);
    }
    if tri.num_inner_faces() == 0 {
        return Err(Error::invalid("points are collinear"));
    }
    let mut edges: Vec<(u32, u32)> = tri
        .undirected_edges()
        .map(|e| {
            let [a, b] = e.vertices().map(|v| owner[v.fix().index()].expect("inserted vertex"));
            (a.min(b), a.max(b))
        })
        .collect();
    edges.sort_unstable();
    Ok(edges)
}

/// Weights of one graph convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayerWeights {
    pub w0: DMatrix<f64>,
    pub w1: DMatrix<f64>,
}

impl GcnLayerWeights {
    pub fn new(w0: DMatrix<f64>, w1: DMatrix<f64>) -> Result<Self> {
        if w0.shape() != w1.shape() {
            return Err(Error::shape(format!("w0 is {:?} but w1 is {:?}", w0.shape(), w1.shape())));
        }
        if w0.iter().chain(w1.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite layer weights"));
        }
        Ok(GcnLayerWeights { w0, w1 })
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        GcnLayerWeights { w0: DMatrix::zeros(d_in, d_out), w1: DMatrix::zeros(d_in, d_out) }
    }

    /// Uniform Glorot initialisation.
    pub fn random<R: Rng>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let a = (6.0 / (d_in + d_out) as f64).sqrt();
        let mut draw = || DMatrix::from_fn(d_in, d_out, |_, _| rng.gen_range(-a..a));
        let w0 = draw();
        let w1 = draw();
        GcnLayerWeights { w0, w1 }
    }

    pub fn d_in(&self) -> usize {
        self.w0.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.w0.ncols()
    }
}

/// `σ(H w0 + A H w1)` with `σ` the rectifier when `activate` is set.
pub fn gcn_layer_forward(g: &MeshGraph, w: &GcnLayerWeights, activate: bool) -> Result<DMatrix<f64>> {
    if w.d_in() != g.feature_width() {
        return Err(Error::shape(format!(
            "layer expects {} input features, graph has {}",
            w.d_in(),
            g.feature_width()
        )));
    }
    let h = g.features();
    let mut out = h * &w.w0 + g.adjacency_times(h) * &w.w1;
    if activate {
        out.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    Ok(out)
}

/// `L = I − D^{-1/2} A D^{-1/2}` applied to `m`; isolated vertices have a
/// zero `D^{-1/2}` entry.
fn laplacian_times(g: &MeshGraph, inv_sqrt_deg: &[f64], m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut scaled = m.clone();
    for (r, s) in inv_sqrt_deg.iter().enumerate() {
        scaled.row_mut(r).scale_mut(*s);
    }
    let mut a = g.adjacency_times(&scaled);
    for (r, s) in inv_sqrt_deg.iter().enumerate() {
        a.row_mut(r).scale_mut(*s);
    }
    m - a
}

fn inv_sqrt_degrees(g: &MeshGraph) -> Vec<f64> {
    g.degrees().into_iter().map(|d| if d > 0 { 1.0 / (d as f64).sqrt() } else { 0.0 }).collect()
}

/// Largest eigenvalue of the normalised Laplacian by power iteration
/// (at most 50 iterations, stopping when the estimate moves by < 1e-6).
pub fn laplacian_lambda_max(g: &MeshGraph) -> f64 {
    let n = g.len();
    if n == 0 {
        return 2.0;
    }
    let d = inv_sqrt_degrees(g);
    // fixed start vector with no special alignment to the spectrum
    let mut v = DMatrix::from_fn(n, 1, |i, _| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_7).fract());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..50 {
        let w = laplacian_times(g, &d, &v);
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            break;
        }
        v = w / norm;
        let done = (next - lambda).abs() < 1e-6;
        lambda = next;
        if done {
            break;
        }
    }
    if lambda > 0.0 {
        lambda
    } else {
        2.0
    }
}

/// `Σ_{k<K} T_k(L̃) H θ_k` with `L̃ = 2L/λ_max − I`.
pub fn chebyshev_forward(g: &MeshGraph, coeffs: &[DMatrix<f64>], order: usize) -> Result<DMatrix<f64>> {
    if order == 0 {
        return Err(Error::invalid("Chebyshev order must be at least 1"));
    }
    if coeffs.len() < order {
        return Err(Error::shape(format!("order {order} needs {order} coefficient matrices, got {}", coeffs.len())));
    }
    let d_in = g.feature_width();
    let d_out = coeffs[0].ncols();
    if coeffs[..order].iter().any(|c| c.nrows() != d_in || c.ncols() != d_out) {
        return Err(Error::shape(format!("coefficients must all be {d_in} × {d_out}")));
    }
    let lambda = laplacian_lambda_max(g);
    let d = inv_sqrt_degrees(g);
    let apply = |m: &DMatrix<f64>| laplacian_times(g, &d, m) * (2.0 / lambda) - m;
    let h = g.features().clone();
    let mut out = &h * &coeffs[0];
    if order == 1 {
        return Ok(out);
    }
    let mut prev = h;
    let mut cur = apply(&prev);
    out += &cur * &coeffs[1];
    for c in &coeffs[2..order] {
        let next = apply(&cur) * 2.0 - &prev;
        out += &next * c;
        prev = cur;
        cur = next;
    }
    Ok(out)
}

/// Inserts a vertex at every edge midpoint carrying the mean of the two
/// endpoint features, then rebuilds edges by Delaunay triangulation of all
/// 2D coordinates. Original vertices keep their indices.
pub fn graph_unpool(g: &MeshGraph) -> Result<MeshGraph> {
    let coords = g
        .coords2d()
        .ok_or_else(|| Error::invalid("unpooling needs 2D coordinates on every vertex"))?;
    let (v, e) = (g.len(), g.edges().len());
    let mut vertices = g.vertices().to_vec();
    let mut c2 = coords.to_vec();
    let f = g.features();
    let mut features = DMatrix::zeros(v + e, f.ncols());
    features.rows_mut(0, v).copy_from(f);
    for (i, &(a, b)) in g.edges().iter().enumerate() {
        let (a, b) = (a as usize, b as usize);
        vertices.push((g.vertices()[a] + g.vertices()[b]) * 0.5);
        c2.push([(coords[a][0] + coords[b][0]) * 0.5, (coords[a][1] + coords[b][1]) * 0.5]);
        let mean = (f.row(a) + f.row(b)) * 0.5;
        features.row_mut(v + i).copy_from(&mean);
    }
    let edges = delaunay_edges(&c2)?;
    MeshGraph::new(vertices, features, edges, Some(c2))
}

/// Hidden width of the network layers.
pub const GCN_HIDDEN: usize = 192;
/// Input width: 512 image/spherical features plus 3 coordinates.
pub const GCN_INPUT: usize = 515;

/// Six graph convolution layers: three before the first unpooling, two
/// before the second and one output layer of width `3 + 3·K_kp`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnNetworkWeights {
    layers: Vec<GcnLayerWeights>,
    keypoints: usize,
}

impl GcnNetworkWeights {
    fn widths(d_in: usize, keypoints: usize) -> [(usize, usize); 6] {
        let h = GCN_HIDDEN;
        [(d_in, h), (h, h), (h, h), (h, h), (h, h), (h, 3 + 3 * keypoints)]
    }

    pub fn new(layers: Vec<GcnLayerWeights>, keypoints: usize) -> Result<Self> {
        if layers.len() != 6 {
            return Err(Error::shape(format!("expected 6 layers, got {}", layers.len())));
        }
        let want = Self::widths(layers[0].d_in(), keypoints);
        for (i, (l, w)) in layers.iter().zip(want).enumerate() {
            if (l.d_in(), l.d_out()) != w {
                return Err(Error::shape(format!(
                    "layer {} is {} × {}, expected {} × {}",
                    i + 1,
                    l.d_in(),
                    l.d_out(),
                    w.0,
                    w.1
                )));
            }
        }
        Ok(GcnNetworkWeights { layers, keypoints })
    }

    pub fn zeros(d_in: usize, keypoints: usize) -> Self {
        let layers = Self::widths(d_in, keypoints).iter().map(|&(a, b)| GcnLayerWeights::zeros(a, b)).collect();
        GcnNetworkWeights { layers, keypoints }
    }

    pub fn random<R: Rng>(d_in: usize, keypoints: usize, rng: &mut R) -> Self {
        let layers = Self::widths(d_in, keypoints)
            .iter()
            .map(|&(a, b)| GcnLayerWeights::random(a, b, rng))
            .collect();
        GcnNetworkWeights { layers, keypoints }
    }

    pub fn layers(&self) -> &[GcnLayerWeights] {
        &self.layers
    }

    pub fn keypoints(&self) -> usize {
        self.keypoints
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].d_in()
    }
}

/// Network output on the twice-unpooled graph.
#[derive(Debug, Clone)]
pub struct GcnOutput {
    /// Final graph; its features are the hidden activations feeding the last layer.
    pub graph: MeshGraph,
    /// Per-vertex coordinate offsets.
    pub deformation: Vec<Vector3<f64>>,
    /// Per-vertex offsets to each keypoint, `keypoints[v][k]`.
    pub keypoints: Vec<Vec<Vector3<f64>>>,
    /// Vertex counts after the input, first and second unpooling stages.
    pub stage_sizes: [usize; 3],
}

pub fn gcn_network_forward(g: &MeshGraph, weights: &GcnNetworkWeights) -> Result<GcnOutput> {
    if g.feature_width() != weights.input_width() {
        return Err(Error::shape(format!(
            "network expects {} input features, graph has {}",
            weights.input_width(),
            g.feature_width()
        )));
    }
    let l = weights.layers();
    let mut cur = g.clone();
    for w in &l[..3] {
        cur = cur.with_features(gcn_layer_forward(&cur, w, true)?)?;
    }
    let first = cur.len();
    cur = graph_unpool(&cur)?;
    let second = cur.len();
    for w in &l[3..5] {
        cur = cur.with_features(gcn_layer_forward(&cur, w, true)?)?;
    }
    cur = graph_unpool(&cur)?;
    let out = gcn_layer_forward(&cur, &l[5], false)?;
    let k = weights.keypoints();
    let deformation = (0..cur.len()).map(|r| Vector3::new(out[(r, 0)], out[(r, 1)], out[(r, 2)])).collect();
    let keypoints = (0..cur.len())
        .map(|r| {
            (0..k)
                .map(|j| Vector3::new(out[(r, 3 + 3 * j)], out[(r, 4 + 3 * j)], out[(r, 5 + 3 * j)]))
                .collect()
        })
        .collect();
    Ok(GcnOutput { stage_sizes: [first, second, cur.len()], graph: cur, deformation, keypoints })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path() -> MeshGraph {
        MeshGraph::new(
            vec![Vector3::zeros(), Vector3::x(), Vector3::y()],
            DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]),
            vec![(0, 1), (1, 2)],
            None,
        )
        .unwrap()
    }

    fn grid_graph(side: usize, d: usize) -> MeshGraph {
        let pts: Vec<[f64; 2]> = (0..side * side).map(|i| [(i % side) as f64, (i / side) as f64]).collect();
        let edges = delaunay_edges(&pts).unwrap();
        let verts = pts.iter().map(|p| Vector3::new(p[0], p[1], 0.0)).collect();
        let feats = DMatrix::from_fn(side * side, d, |r, c| (r * 3 + c) as f64 * 0.1);
        MeshGraph::new(verts, feats, edges, Some(pts)).unwrap()
    }

    #[test]
    fn graph_validation() {
        let v = vec![Vector3::zeros(), Vector3::x()];
        let f = DMatrix::zeros(2, 1);
        assert!(MeshGraph::new(v.clone(), f.clone(), vec![(0, 0)], None).is_err());
        assert!(MeshGraph::new(v.clone(), f.clone(), vec![(0, 1), (1, 0)], None).is_err());
        assert!(MeshGraph::new(v.clone(), f.clone(), vec![(0, 2)], None).is_err());
        assert!(MeshGraph::new(v, DMatrix::zeros(3, 1), vec![], None).is_err());
    }

    #[test]
    fn delaunay_examples() {
        assert_eq!(delaunay_edges(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap().len(), 3);
        assert_eq!(delaunay_edges(&[[0.0, 0.0], [1.0, 0.1], [1.1, 1.0], [-0.1, 0.9]]).unwrap().len(), 5);
        let grid: Vec<[f64; 2]> = (0..9).map(|i| [(i % 3) as f64, (i / 3) as f64]).collect();
        assert_eq!(delaunay_edges(&grid).unwrap().len(), 16);
        assert!(delaunay_edges(&[[0.0, 0.0], [1.0, 1.0]]).is_err());
        assert!(delaunay_edges(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]).is_err());
    }

    #[test]
    fn layer_examples() {
        let g = path();
        let id = GcnLayerWeights::new(DMatrix::identity(1, 1), DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(gcn_layer_forward(&g, &id, false).unwrap(), *g.features());
        let ones = GcnLayerWeights::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let out = gcn_layer_forward(&g, &ones, false).unwrap();
        assert_eq!(out.as_slice(), &[3.0, 6.0, 5.0]);
        let iso = MeshGraph::new(vec![Vector3::zeros()], DMatrix::from_element(1, 1, 2.0), vec![], None).unwrap();
        let w = GcnLayerWeights::new(DMatrix::from_element(1, 1, 3.0), DMatrix::from_element(1, 1, 100.0)).unwrap();
        assert_eq!(gcn_layer_forward(&iso, &w, false).unwrap()[(0, 0)], 6.0);
        let neg = GcnLayerWeights::new(DMatrix::from_element(1, 1, -1.0), DMatrix::zeros(1, 1)).unwrap();
        assert!(gcn_layer_forward(&g, &neg, true).unwrap().iter().all(|&v| v == 0.0));
        assert!(gcn_layer_forward(&g, &GcnLayerWeights::zeros(2, 1), false).is_err());
    }

    #[test]
    fn chebyshev_two_vertex_example() {
        let g = MeshGraph::new(
            vec![Vector3::zeros(), Vector3::x()],
            DMatrix::from_column_slice(2, 1, &[1.0, 3.0]),
            vec![(0, 1)],
            None,
        )
        .unwrap();
        // L = [[1, -1], [-1, 1]] with λ_max = 2, so L̃ = L − I = [[0, -1], [-1, 0]]
        assert!((laplacian_lambda_max(&g) - 2.0).abs() < 1e-6);
        let t0 = DMatrix::from_element(1, 1, 0.5);
        let t1 = DMatrix::from_element(1, 1, 2.0);
        let out = chebyshev_forward(&g, &[t0.clone(), t1], 2).unwrap();
        let lam = laplacian_lambda_max(&g);
        let s = 2.0 / lam;
        let lt = nalgebra::Matrix2::new(s - 1.0, -s, -s, s - 1.0);
        let h = nalgebra::Vector2::new(1.0, 3.0);
        let want = h * 0.5 + lt * h * 2.0;
        assert!((out[(0, 0)] - want[0]).abs() < 1e-9 && (out[(1, 0)] - want[1]).abs() < 1e-9);
        let k1 = chebyshev_forward(&g, &[t0], 1).unwrap();
        assert_eq!(k1.as_slice(), &[0.5, 1.5]);
        assert!(chebyshev_forward(&g, &[], 1).is_err());
    }

    #[test]
    fn unpool_single_triangle() {
        let pts = [[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]];
        let g = MeshGraph::new(
            pts.iter().map(|p| Vector3::new(p[0], p[1], 1.0)).collect(),
            DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]),
            delaunay_edges(&pts).unwrap(),
            Some(pts.to_vec()),
        )
        .unwrap();
        let u = graph_unpool(&g).unwrap();
        assert_eq!(u.len(), 6);
        assert_eq!(u.edges().len(), 9);
        for (i, &(a, b)) in g.edges().iter().enumerate() {
            let mean = (g.features().row(a as usize) + g.features().row(b as usize)) * 0.5;
            assert_eq!(u.features().row(3 + i), mean);
        }
        let bare = MeshGraph::new(g.vertices().to_vec(), g.features().clone(), g.edges().to_vec(), None).unwrap();
        assert!(graph_unpool(&bare).is_err());
    }

    #[test]
    fn network_shapes_and_zero_weights() {
        let g = grid_graph(5, 6);
        let w = GcnNetworkWeights::zeros(6, 2);
        let out = gcn_network_forward(&g, &w).unwrap();
        let once = graph_unpool(&g).unwrap();
        let twice = graph_unpool(&once).unwrap();
        assert_eq!(out.stage_sizes, [25, once.len(), twice.len()]);
        assert_eq!(out.graph.len(), g.len() + g.edges().len() + once.edges().len());
        assert!(out.deformation.iter().all(|d| d.norm() == 0.0));
        assert_eq!(out.keypoints[0].len(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = GcnNetworkWeights::random(6, 2, &mut rng);
        assert!(gcn_network_forward(&g, &r).unwrap().deformation.iter().any(|d| d.norm() > 0.0));
        assert!(gcn_network_forward(&grid_graph(4, 5), &w).is_err());
    }

    #[test]
    fn obj_and_feature_roundtrip() {
        let g = grid_graph(3, 2);
        let mut buf = Vec::new();
        write_features(&mut buf, g.features()).unwrap();
        let f = read_features(&mut buf.as_slice()).unwrap();
        let back = MeshGraph::from_obj(&g.to_obj(), Some(f)).unwrap();
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.coords2d(), g.coords2d());
        for (a, b) in back.features().iter().zip(g.features().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
