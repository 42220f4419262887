//! Spherical signals on the Driscoll–Healy grid, functions on the SO(3)
//! grid, and the correlations between them.

mod blob;
mod correlate;
mod hemisphere;
mod raycast;

pub use blob::{
    read_rotation_signal, read_spherical_signal, write_rotation_signal, write_spherical_signal,
};
pub use correlate::{
    s2_correlate, s2_correlate_at, so3_correlate, S2Correlator, So3Correlator,
};
pub use hemisphere::{project_hemisphere, FeatureImage};
pub use raycast::raycast_sphere;

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::so3::{clamp_coord, wrap_angle, wrap_coord, Rotation, RotationGrid};

/// Equiangular `2b × 2b` sampling of the sphere with samples at cell centres.
/// Sample `(ib, ia)` (beta row, alpha column) has flat index `ib * 2b + ia`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereGrid {
    b: usize,
    row_weights: Vec<f64>,
}

pub fn dh_grid(b: usize) -> Result<SphereGrid> {
    SphereGrid::new(b)
}

impl SphereGrid {
    pub fn new(b: usize) -> Result<Self> {
        if b < 2 {
            return Err(Error::invalid(format!("sphere grid bandwidth must be >= 2, got {b}")));
        }
        let n = 2 * b;
        let db = PI / n as f64;
        let row_weights = (0..n)
            .map(|j| {
                let lo = j as f64 * db;
                let hi = (j + 1) as f64 * db;
                (lo.cos() - hi.cos()) / 2.0 / n as f64
            })
            .collect();
        Ok(SphereGrid { b, row_weights })
    }

    pub fn bandwidth(&self) -> usize {
        self.b
    }

    /// Samples per axis (`2b`).
    pub fn side(&self) -> usize {
        2 * self.b
    }

    pub fn len(&self) -> usize {
        self.side() * self.side()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn d_alpha(&self) -> f64 {
        TAU / self.side() as f64
    }

    pub fn d_beta(&self) -> f64 {
        PI / self.side() as f64
    }

    pub fn index(&self, ib: usize, ia: usize) -> usize {
        ib * self.side() + ia
    }

    /// `(alpha, beta)` of a sample.
    pub fn coords(&self, idx: usize) -> (f64, f64) {
        let n = self.side();
        let (ib, ia) = (idx / n, idx % n);
        ((ia as f64 + 0.5) * self.d_alpha(), (ib as f64 + 0.5) * self.d_beta())
    }

    pub fn direction(&self, idx: usize) -> Vector3<f64> {
        let (a, b) = self.coords(idx);
        direction(a, b)
    }

    pub fn weight(&self, idx: usize) -> f64 {
        self.row_weights[idx / self.side()]
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    /// Index of the sample shifted by `shift` steps along alpha.
    pub fn shift_alpha(&self, idx: usize, shift: isize) -> usize {
        let n = self.side();
        let (ib, ia) = (idx / n, idx % n);
        ib * n + (ia as isize + shift).rem_euclid(n as isize) as usize
    }

    /// Bilinear stencil at a unit direction, alpha wrapping, beta clamped
    /// to the outermost sample rows.
    pub(crate) fn stencil(&self, v: &Vector3<f64>) -> [(u32, f64); 4] {
        let (a, b) = angles(v);
        self.stencil_angles(a, b)
    }

    pub(crate) fn stencil_angles(&self, alpha: f64, beta: f64) -> [(u32, f64); 4] {
        let n = self.side();
        let (a0, a1, fa) = wrap_coord(alpha / self.d_alpha() - 0.5, n);
        let (b0, b1, fb) = clamp_coord(beta / self.d_beta() - 0.5, n);
        [
            (self.index(b0, a0) as u32, (1.0 - fb) * (1.0 - fa)),
            (self.index(b0, a1) as u32, (1.0 - fb) * fa),
            (self.index(b1, a0) as u32, fb * (1.0 - fa)),
            (self.index(b1, a1) as u32, fb * fa),
        ]
    }
}

pub(crate) fn direction(alpha: f64, beta: f64) -> Vector3<f64> {
    let (sb, cb) = beta.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    Vector3::new(sb * ca, sb * sa, cb)
}

/// `(alpha, beta)` of a unit vector.
pub(crate) fn angles(v: &Vector3<f64>) -> (f64, f64) {
    let beta = v.z.clamp(-1.0, 1.0).acos();
    let alpha = if v.x == 0.0 && v.y == 0.0 { 0.0 } else { wrap_angle(v.y.atan2(v.x)) };
    (alpha, beta)
}

/// A `K`-channel real function sampled on a [`SphereGrid`]; values are stored
/// sample-major, `values[sample * K + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalSignal {
    grid: SphereGrid,
    channels: usize,
    values: Vec<f64>,
}

impl SphericalSignal {
    pub fn new(grid: SphereGrid, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("signal needs at least one channel"));
        }
        if values.len() != channels * grid.len() {
            return Err(Error::shape(format!(
                "spherical signal expects {} values, got {}",
                channels * grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("spherical signal contains non-finite values"));
        }
        Ok(SphericalSignal { grid, channels, values })
    }

    pub fn zeros(grid: SphereGrid, channels: usize) -> Self {
        let n = grid.len() * channels;
        SphericalSignal { grid, channels, values: vec![0.0; n] }
    }

    pub fn constant(grid: SphereGrid, channels: usize, value: f64) -> Self {
        let n = grid.len() * channels;
        SphericalSignal { grid, channels, values: vec![value; n] }
    }

    /// Samples `f(direction)` at every grid point; `f` fills one slice of
    /// `channels` values.
    pub fn from_fn(
        grid: SphereGrid,
        channels: usize,
        mut f: impl FnMut(&Vector3<f64>, &mut [f64]),
    ) -> Self {
        let mut values = vec![0.0; grid.len() * channels];
        for (idx, chunk) in values.chunks_mut(channels).enumerate() {
            f(&grid.direction(idx), chunk);
        }
        SphericalSignal { grid, channels, values }
    }

    pub fn grid(&self) -> &SphereGrid {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn sample(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.channels..(idx + 1) * self.channels]
    }

    pub fn get(&self, idx: usize, k: usize) -> f64 {
        self.values[idx * self.channels + k]
    }

    /// Bilinearly interpolated value of channel `k` in direction `v`.
    pub fn interpolate(&self, v: &Vector3<f64>, k: usize) -> f64 {
        self.grid
            .stencil(v)
            .iter()
            .map(|&(i, w)| w * self.values[i as usize * self.channels + k])
            .sum()
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    /// `a · self + other`, channel-wise.
    pub fn axpy(&self, a: f64, other: &SphericalSignal) -> Result<SphericalSignal> {
        check_same_sphere(self, other)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + y).collect();
        Ok(SphericalSignal { grid: self.grid.clone(), channels: self.channels, values })
    }
}

pub(crate) fn check_same_sphere(a: &SphericalSignal, b: &SphericalSignal) -> Result<()> {
    if a.grid != b.grid {
        return Err(Error::invalid(format!(
            "sphere grid mismatch: b={} vs b={}",
            a.grid.b, b.grid.b
        )));
    }
    if a.channels != b.channels {
        return Err(Error::invalid(format!(
            "channel mismatch: {} vs {}",
            a.channels, b.channels
        )));
    }
    Ok(())
}

/// Rotates a signal: `out(x) = f(R⁻¹x)`, read off the source grid bilinearly.
pub fn rotate_signal(r: &Rotation, f: &SphericalSignal) -> SphericalSignal {
    let grid = f.grid.clone();
    let k = f.channels;
    let rinv = r.inverse();
    let mut values = vec![0.0; f.values.len()];
    for idx in 0..grid.len() {
        let src = rinv.apply(&grid.direction(idx));
        let out = &mut values[idx * k..(idx + 1) * k];
        for (i, w) in grid.stencil(&src) {
            if w == 0.0 {
                continue;
            }
            let s = &f.values[i as usize * k..(i as usize + 1) * k];
            for c in 0..k {
                out[c] += w * s[c];
            }
        }
    }
    SphericalSignal { grid, channels: k, values }
}

/// Quadrature inner product `Σ_x w(x) Σ_k φ_k(x) f_k(x)`.
pub fn sphere_inner(phi: &SphericalSignal, f: &SphericalSignal) -> Result<f64> {
    check_same_sphere(phi, f)?;
    let mut total = 0.0;
    for idx in 0..phi.grid.len() {
        let w = phi.grid.weight(idx);
        let s: f64 = phi.sample(idx).iter().zip(f.sample(idx)).map(|(a, b)| a * b).sum();
        total += w * s;
    }
    Ok(total)
}

/// A `K`-channel real function on the nodes of a [`RotationGrid`], stored
/// node-major, `values[node * K + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationGridSignal {
    grid: RotationGrid,
    channels: usize,
    values: Vec<f64>,
}

impl RotationGridSignal {
    pub fn new(grid: RotationGrid, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("signal needs at least one channel"));
        }
        if values.len() != channels * grid.len() {
            return Err(Error::shape(format!(
                "rotation signal expects {} values, got {}",
                channels * grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("rotation signal contains non-finite values"));
        }
        Ok(RotationGridSignal { grid, channels, values })
    }

    pub fn zeros(grid: RotationGrid, channels: usize) -> Self {
        let n = grid.len() * channels;
        RotationGridSignal { grid, channels, values: vec![0.0; n] }
    }

    pub fn constant(grid: RotationGrid, channels: usize, value: f64) -> Self {
        let n = grid.len() * channels;
        RotationGridSignal { grid, channels, values: vec![value; n] }
    }

    pub fn from_fn(
        grid: RotationGrid,
        channels: usize,
        mut f: impl FnMut(&Rotation, &mut [f64]),
    ) -> Self {
        let mut values = vec![0.0; grid.len() * channels];
        for (idx, chunk) in values.chunks_mut(channels).enumerate() {
            f(&grid.rotation(idx), chunk);
        }
        RotationGridSignal { grid, channels, values }
    }

    pub(crate) fn from_parts_unchecked(grid: RotationGrid, channels: usize, values: Vec<f64>) -> Self {
        RotationGridSignal { grid, channels, values }
    }

    pub fn grid(&self) -> &RotationGrid {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn node(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.channels..(idx + 1) * self.channels]
    }

    pub fn get(&self, idx: usize, k: usize) -> f64 {
        self.values[idx * self.channels + k]
    }

    /// Trilinearly interpolated value of channel `k` at rotation `r`.
    pub fn interpolate(&self, r: &Rotation, k: usize) -> f64 {
        self.grid
            .stencil(r)
            .iter()
            .map(|&(i, w)| w * self.values[i as usize * self.channels + k])
            .sum()
    }

    /// Sum over channels, yielding a single-channel signal.
    pub fn sum_channels(&self) -> RotationGridSignal {
        let values = self.values.chunks(self.channels).map(|c| c.iter().sum()).collect();
        RotationGridSignal { grid: self.grid.clone(), channels: 1, values }
    }

    /// Channel `k` as a single-channel signal.
    pub fn channel(&self, k: usize) -> RotationGridSignal {
        let values = self.values.iter().skip(k).step_by(self.channels).copied().collect();
        RotationGridSignal { grid: self.grid.clone(), channels: 1, values }
    }

    /// Stacks single-channel signals on the same grid into one multi-channel signal.
    pub fn stack(parts: &[RotationGridSignal]) -> Result<RotationGridSignal> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to stack"))?;
        let grid = first.grid.clone();
        let total: usize = parts.iter().map(|p| p.channels).sum();
        let mut values = vec![0.0; grid.len() * total];
        let mut offset = 0;
        for p in parts {
            if p.grid != grid {
                return Err(Error::invalid("cannot stack signals on different grids"));
            }
            for node in 0..grid.len() {
                values[node * total + offset..node * total + offset + p.channels]
                    .copy_from_slice(p.node(node));
            }
            offset += p.channels;
        }
        Ok(RotationGridSignal { grid, channels: total, values })
    }

    /// Left-multiplies the index by a z-rotation of `steps` alpha cells:
    /// `out(R) = self(Rz(-steps·Δα)·R)`.
    pub fn shift_alpha(&self, steps: isize) -> RotationGridSignal {
        let mut values = vec![0.0; self.values.len()];
        let k = self.channels;
        for idx in 0..self.grid.len() {
            let src = self.grid.shift_alpha(idx, -steps);
            values[idx * k..(idx + 1) * k].copy_from_slice(self.node(src));
        }
        RotationGridSignal { grid: self.grid.clone(), channels: k, values }
    }

    pub fn relu(&mut self) {
        self.values.iter_mut().for_each(|v| *v = v.max(0.0));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dh_grid_counts() {
        assert_eq!(dh_grid(10).unwrap().len(), 400);
        assert_eq!(dh_grid(2).unwrap().len(), 16);
        assert!(dh_grid(1).is_err());
        for b in [2, 4, 10, 20, 32] {
            let s: f64 = dh_grid(b).unwrap().weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn equator_has_largest_weight() {
        let g = dh_grid(10).unwrap();
        let w = g.weights();
        let max = w.iter().cloned().fold(0.0, f64::max);
        let eq = g.index(g.side() / 2, 0);
        assert_eq!(w[eq], max);
    }

    #[test]
    fn rotate_identity_and_constant() {
        let g = dh_grid(6).unwrap();
        let f = SphericalSignal::from_fn(g.clone(), 2, |v, out| {
            out[0] = v.x * v.y + v.z;
            out[1] = v.z * v.z;
        });
        let same = rotate_signal(&Rotation::identity(), &f);
        for (a, b) in same.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = SphericalSignal::constant(g, 1, 2.5);
        let rc = rotate_signal(&Rotation::from_axis_angle(Vector3::new(1.0, 2.0, 3.0), 0.9).unwrap(), &c);
        assert!(rc.values().iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn grid_aligned_z_rotation_is_a_cyclic_shift() {
        let g = dh_grid(8).unwrap();
        let f = SphericalSignal::from_fn(g.clone(), 1, |v, out| out[0] = v.x + 0.3 * v.y * v.z);
        let r = rotate_signal(&Rotation::rz(g.d_alpha()), &f);
        for idx in 0..g.len() {
            let src = g.shift_alpha(idx, -1);
            assert!((r.get(idx, 0) - f.get(src, 0)).abs() < 1e-14);
        }
    }

    #[test]
    fn inner_product_examples() {
        let g = dh_grid(5).unwrap();
        let one = SphericalSignal::constant(g.clone(), 1, 1.0);
        assert!((sphere_inner(&one, &one).unwrap() - 1.0).abs() < 1e-9);
        let f = SphericalSignal::from_fn(g.clone(), 1, |v, o| o[0] = v.x - v.z);
        assert!(sphere_inner(&f, &f).unwrap() >= 0.0);
        let two = SphericalSignal::constant(g, 2, 1.0);
        assert!(sphere_inner(&one, &two).is_err());
        let other = SphericalSignal::constant(dh_grid(4).unwrap(), 1, 1.0);
        assert!(sphere_inner(&one, &other).is_err());
    }

    #[test]
    fn inner_product_bilinear() {
        let g = dh_grid(6).unwrap();
        let p1 = SphericalSignal::from_fn(g.clone(), 1, |v, o| o[0] = v.x * v.z + 0.2);
        let p2 = SphericalSignal::from_fn(g.clone(), 1, |v, o| o[0] = v.y - v.x * v.x);
        let f = SphericalSignal::from_fn(g, 1, |v, o| o[0] = 1.0 + v.z);
        let a = -1.7;
        let lhs = sphere_inner(&p1.axpy(a, &p2).unwrap(), &f).unwrap();
        let rhs = a * sphere_inner(&p1, &f).unwrap() + sphere_inner(&p2, &f).unwrap();
        assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
    }

    #[test]
    fn rotation_signal_shift_alpha() {
        let g = RotationGrid::new(4, 3, 4).unwrap();
        let s = RotationGridSignal::from_fn(g.clone(), 1, |r, o| o[0] = r.matrix()[(0, 1)]);
        let sh = s.shift_alpha(1);
        let idx = g.index(2, 1, 3);
        assert_eq!(sh.get(idx, 0), s.get(g.index(1, 1, 3), 0));
    }
}
