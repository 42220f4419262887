//! Triangle meshes: validation, OBJ I/O and the built-in synthetic shapes.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::so3::Rotation;

/// Indexed triangle mesh with vertex positions in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[u32; 3]>) -> Result<Self> {
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("mesh has non-finite vertex coordinates"));
        }
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i as usize >= vertices.len()) {
                return Err(Error::invalid(format!("face {fi} references a missing vertex")));
            }
            let [a, b, c] = f.map(|i| vertices[i as usize]);
            if 0.5 * (b - a).cross(&(c - a)).norm() <= 1e-12 {
                return Err(Error::invalid(format!("face {fi} is degenerate")));
            }
        }
        Ok(TriMesh { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Vector3<f64>; 3] {
        self.faces[f].map(|i| self.vertices[i as usize])
    }

    /// Applies `v ↦ R v + t` to every vertex.
    pub fn transformed(&self, r: &Rotation, t: &Vector3<f64>) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| r.apply(v) + t).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Vertices followed by face centroids.
    pub fn surface_points(&self) -> Vec<Vector3<f64>> {
        let mut pts = self.vertices.clone();
        pts.extend((0..self.faces.len()).map(|f| self.triangle(f).iter().sum::<Vector3<f64>>() / 3.0));
        pts
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let n = self.vertices.len().max(1) as f64;
        self.vertices.iter().sum::<Vector3<f64>>() / n
    }

    /// Axis-aligned cube with the given half edge length, centred at the origin.
    pub fn cube(half: f64) -> TriMesh {
        let h = half;
        let vertices = (0..8)
            .map(|i| {
                Vector3::new(
                    if i & 1 == 0 { -h } else { h },
                    if i & 2 == 0 { -h } else { h },
                    if i & 4 == 0 { -h } else { h },
                )
            })
            .collect();
        let faces = vec![
            [0, 2, 1], [1, 2, 3], // z-
            [4, 5, 6], [5, 7, 6], // z+
            [0, 1, 4], [1, 5, 4], // y-
            [2, 6, 3], [3, 6, 7], // y+
            [0, 4, 2], [2, 4, 6], // x-
            [1, 3, 5], [3, 7, 5], // x+
        ];
        TriMesh { vertices, faces }
    }

    /// UV sphere whose radius in direction `d` is `radius(d)`.
    pub fn radial(n_lat: usize, n_lon: usize, radius: impl Fn(&Vector3<f64>) -> f64) -> TriMesh {
        let n_lat = n_lat.max(2);
        let n_lon = n_lon.max(3);
        let mut vertices = vec![Vector3::new(0.0, 0.0, radius(&Vector3::z()))];
        for i in 1..n_lat {
            let beta = PI * i as f64 / n_lat as f64;
            for j in 0..n_lon {
                let alpha = TAU * j as f64 / n_lon as f64;
                let d = Vector3::new(beta.sin() * alpha.cos(), beta.sin() * alpha.sin(), beta.cos());
                vertices.push(d * radius(&d));
            }
        }
        vertices.push(Vector3::new(0.0, 0.0, -radius(&-Vector3::z())));
        let south = (vertices.len() - 1) as u32;
        let ring = |i: usize, j: usize| (1 + (i - 1) * n_lon + j % n_lon) as u32;
        let mut faces = Vec::new();
        for j in 0..n_lon {
            faces.push([0, ring(1, j), ring(1, j + 1)]);
        }
        for i in 1..n_lat - 1 {
            for j in 0..n_lon {
                faces.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
                faces.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
            }
        }
        for j in 0..n_lon {
            faces.push([ring(n_lat - 1, j), south, ring(n_lat - 1, j + 1)]);
        }
        TriMesh { vertices, faces }
    }

    pub fn uv_sphere(radius: f64, n_lat: usize, n_lon: usize) -> TriMesh {
        Self::radial(n_lat, n_lon, |_| radius)
    }

    /// Closed cylinder about the z axis with `segments` side facets; it is
    /// symmetric under z-rotations by multiples of `2π / segments`.
    pub fn cylinder(radius: f64, half_height: f64, segments: usize) -> TriMesh {
        let s = segments.max(3);
        let mut vertices = Vec::with_capacity(2 * s + 2);
        for z in [-half_height, half_height] {
            for j in 0..s {
                let a = TAU * j as f64 / s as f64;
                vertices.push(Vector3::new(radius * a.cos(), radius * a.sin(), z));
            }
        }
        vertices.push(Vector3::new(0.0, 0.0, -half_height));
        vertices.push(Vector3::new(0.0, 0.0, half_height));
        let (bot, top) = ((2 * s) as u32, (2 * s + 1) as u32);
        let lo = |j: usize| (j % s) as u32;
        let hi = |j: usize| (s + j % s) as u32;
        let mut faces = Vec::new();
        for j in 0..s {
            faces.push([lo(j), lo(j + 1), hi(j + 1)]);
            faces.push([lo(j), hi(j + 1), hi(j)]);
            faces.push([bot, lo(j + 1), lo(j)]);
            faces.push([top, hi(j), hi(j + 1)]);
        }
        TriMesh { vertices, faces }
    }

    /// Star-shaped blob with no rotational symmetry, radius roughly `scale`.
    pub fn asymmetric_blob(scale: f64) -> TriMesh {
        let lobes = [
            (Vector3::new(-0.3960, -0.0826, -0.9145), 0.3420, 5.9558),
            (Vector3::new(0.2909, -0.7137, -0.6372), 0.3971, 4.0050),
            (Vector3::new(-0.2996, 0.6534, 0.6952), 0.1643, 4.8939),
            (Vector3::new(-0.5944, 0.4835, -0.6425), 0.3723, 5.4688),
            (Vector3::new(-0.6119, 0.1951, 0.7665), 0.2916, 4.6342),
            (Vector3::new(-0.7017, 0.0184, -0.7122), 0.1971, 5.6814),
            (Vector3::new(0.4071, -0.9133, -0.0113), 0.2329, 4.5167),
            (Vector3::new(-0.0377, -0.4154, -0.9089), 0.3308, 4.0440),
            (Vector3::new(-0.0148, 0.7075, 0.7066), 0.3983, 4.3785),
            (Vector3::new(0.2011, -0.5738, 0.7939), 0.3037, 7.0344),
        ];
        Self::radial(24, 48, |d| {
            let mut r = 1.0;
            for (axis, amp, sharp) in &lobes {
                let c = d.dot(&axis.normalize());
                r += amp * (sharp * (c - 1.0)).exp();
            }
            scale * r * 0.7
        })
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }

    /// Parses `v` and `f` records; polygons are fan-triangulated and
    /// texture/normal indices are ignored.
    pub fn from_obj(text: &str) -> Result<TriMesh> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it
                        .take(3)
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::invalid(format!("line {}: bad vertex: {e}", ln + 1)))?;
                    if c.len() != 3 {
                        return Err(Error::invalid(format!("line {}: vertex needs 3 coordinates", ln + 1)));
                    }
                    vertices.push(Vector3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<u32> = it
                        .map(|t| {
                            let head = t.split('/').next().unwrap_or("");
                            head.parse::<i64>().ok().and_then(|i| {
                                let n = vertices.len() as i64;
                                let i = if i < 0 { n + i } else { i - 1 };
                                (0..n).contains(&i).then_some(i as u32)
                            })
                        })
                        .collect::<Option<_>>()
                        .ok_or_else(|| Error::invalid(format!("line {}: bad face index", ln + 1)))?;
                    if idx.len() < 3 {
                        return Err(Error::invalid(format!("line {}: face needs 3 vertices", ln + 1)));
                    }
                    for w in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[w], idx[w + 1]]);
                    }
                }
                _ => {}
            }
        }
        TriMesh::new(vertices, faces)
    }

    pub fn load_obj(path: &Path) -> Result<TriMesh> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_obj(&text).map_err(|e| Error::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_valid() {
        for m in [
            TriMesh::cube(0.5),
            TriMesh::uv_sphere(1.0, 8, 16),
            TriMesh::cylinder(0.3, 0.5, 12),
            TriMesh::asymmetric_blob(0.1),
        ] {
            TriMesh::new(m.vertices().to_vec(), m.faces().to_vec()).unwrap();
        }
    }

    #[test]
    fn rejects_bad_faces() {
        let v = vec![Vector3::zeros(), Vector3::x(), Vector3::y()];
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriMesh::new(v, vec![[0, 1, 1]]).is_err());
    }

    #[test]
    fn obj_roundtrip() {
        let m = TriMesh::cube(0.25);
        let back = TriMesh::from_obj(&m.to_obj()).unwrap();
        assert_eq!(back, m);
        let quad = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n";
        assert_eq!(TriMesh::from_obj(quad).unwrap().faces().len(), 2);
        assert!(TriMesh::from_obj("v 0 0\n").is_err());
    }
}
