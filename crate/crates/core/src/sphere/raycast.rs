use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

use super::{SphereGrid, SphericalSignal};

/// Möller–Trumbore ray/triangle test; returns the ray parameter of the hit.
pub(crate) fn ray_triangle(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    tri: &[Vector3<f64>; 3],
) -> Option<f64> {
    const EPS: f64 = 1e-12;
    // tolerance on barycentric bounds so rays through shared edges never slip between faces
    const EDGE: f64 = 1e-9;
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < EPS {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(-EDGE..=1.0 + EDGE).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < -EDGE || u + v > 1.0 + EDGE {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > EPS).then_some(t)
}

/// Casts a ray from `origin` through every grid direction and records the
/// first hit as two channels: distance to the surface and the absolute
/// cosine between ray and face normal. Misses read `(0, 0)`.
pub fn raycast_sphere(mesh: &TriMesh, origin: &Vector3<f64>, grid: &SphereGrid) -> Result<SphericalSignal> {
    if mesh.is_empty() {
        return Err(Error::invalid("cannot ray cast an empty mesh"));
    }
    let tris: Vec<[Vector3<f64>; 3]> = (0..mesh.faces().len()).map(|f| mesh.triangle(f)).collect();
    let normals: Vec<Vector3<f64>> = tris
        .iter()
        .map(|t| (t[1] - t[0]).cross(&(t[2] - t[0])).normalize())
        .collect();
    Ok(SphericalSignal::from_fn(grid.clone(), 2, |d, out| {
        let mut best: Option<(f64, usize)> = None;
        for (fi, tri) in tris.iter().enumerate() {
            if let Some(t) = ray_triangle(origin, d, tri) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, fi));
                }
            }
        }
        if let Some((t, fi)) = best {
            out[0] = t;
            out[1] = d.dot(&normals[fi]).abs();
        } else {
            out[0] = 0.0;
            out[1] = 0.0;
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::Rotation;
    use crate::sphere::{dh_grid, rotate_signal};

    #[test]
    fn unit_sphere_lengths() {
        let mesh = TriMesh::uv_sphere(1.0, 32, 64);
        let sig = raycast_sphere(&mesh, &Vector3::zeros(), &dh_grid(8).unwrap()).unwrap();
        for idx in 0..sig.grid().len() {
            let len = sig.get(idx, 0);
            assert!((len - 1.0).abs() <= 0.02, "{len}");
            assert!(sig.get(idx, 1) > 0.95);
        }
    }

    #[test]
    fn cube_lengths_between_half_edge_and_half_diagonal() {
        let mesh = TriMesh::cube(0.5);
        let sig = raycast_sphere(&mesh, &Vector3::zeros(), &dh_grid(10).unwrap()).unwrap();
        let lens: Vec<f64> = (0..sig.grid().len()).map(|i| sig.get(i, 0)).collect();
        let min = lens.iter().cloned().fold(f64::MAX, f64::min);
        let max = lens.iter().cloned().fold(0.0, f64::max);
        assert!(min >= 0.5 - 1e-9 && max <= 0.75f64.sqrt() + 1e-9);
        assert!(max - min > 0.2);
    }

    #[test]
    fn miss_encodes_zero() {
        let mesh = TriMesh::cube(0.1);
        let sig = raycast_sphere(&mesh, &Vector3::new(5.0, 0.0, 0.0), &dh_grid(4).unwrap()).unwrap();
        assert!(sig.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rotation_covariance() {
        let mesh = TriMesh::asymmetric_blob(1.0);
        let grid = dh_grid(12).unwrap();
        let r = Rotation::from_axis_angle(Vector3::new(0.3, -1.0, 0.5), 0.8).unwrap();
        let a = raycast_sphere(&mesh.transformed(&r, &Vector3::zeros()), &Vector3::zeros(), &grid).unwrap();
        let b = rotate_signal(&r, &raycast_sphere(&mesh, &Vector3::zeros(), &grid).unwrap());
        let mean_len: f64 = a.values().iter().step_by(2).sum::<f64>() / grid.len() as f64;
        let mean_err: f64 = a
            .values()
            .iter()
            .zip(b.values())
            .step_by(2)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / grid.len() as f64;
        assert!(mean_err < 0.03 * mean_len, "{mean_err} vs {mean_len}");
    }

    #[test]
    fn empty_mesh_errors() {
        let m = TriMesh::new(vec![], vec![]).unwrap();
        assert!(raycast_sphere(&m, &Vector3::zeros(), &dh_grid(2).unwrap()).is_err());
    }
}
