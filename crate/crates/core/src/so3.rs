//! Rotations, ZYZ Euler angles and the discrete SO(3) grid that indexes
//! correlation outputs.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A proper rotation of 3D space, stored as an orthonormal matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix after checking orthonormality and a positive determinant.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("rotation matrix has non-finite entries"));
        }
        let err = (m.transpose() * m - Matrix3::identity()).amax();
        if err > 1e-6 {
            return Err(Error::invalid(format!(
                "matrix is not orthonormal (max deviation {err:e})"
            )));
        }
        if m.determinant() < 0.0 {
            return Err(Error::invalid("matrix is a reflection (det < 0)"));
        }
        Ok(Rotation(m))
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_row_slice(v))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Rotation about the z axis.
    pub fn rz(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Rotation(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rotation about the y axis.
    pub fn ry(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Rotation(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn rx(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Rotation(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n.is_finite() && n > 0.0) || !angle.is_finite() {
            return Err(Error::invalid("axis must be finite and nonzero"));
        }
        let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        Ok(Rotation(*r.matrix()))
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        Rotation(*q.to_rotation_matrix().matrix())
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.0))
    }

    /// Uniformly distributed random rotation (Haar measure).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        // Shoemake's subgroup algorithm.
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen::<f64>() * TAU;
        let u3: f64 = rng.gen::<f64>() * TAU;
        let a = (1.0 - u1).sqrt();
        let b = u1.sqrt();
        let q = nalgebra::Quaternion::new(b * u3.cos(), a * u2.sin(), a * u2.cos(), b * u3.sin());
        Self::from_quaternion(&UnitQuaternion::from_quaternion(q))
    }

    /// Matrix product `self · other`.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Rotation angle of `selfᵀ · other`, in `[0, π]`.
    pub fn geodesic_distance(&self, other: &Rotation) -> f64 {
        geodesic_distance(self, other)
    }

    pub fn to_euler_zyz(&self) -> EulerZYZ {
        euler_from_matrix(&self.0)
    }
}

impl Serialize for Rotation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = <[f64; 9]>::deserialize(d)?;
        Rotation::from_row_major(&v).map_err(serde::de::Error::custom)
    }
}

/// ZYZ Euler angles: `Rz(alpha) · Ry(beta) · Rz(gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerZYZ {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl EulerZYZ {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        EulerZYZ { alpha, beta, gamma }
    }
}

pub fn rotation_from_euler_zyz(e: &EulerZYZ) -> Result<Rotation> {
    if !(e.alpha.is_finite() && e.beta.is_finite() && e.gamma.is_finite()) {
        return Err(Error::invalid("euler angles must be finite"));
    }
    Ok(euler_matrix(e.alpha, e.beta, e.gamma))
}

pub(crate) fn euler_matrix(alpha: f64, beta: f64, gamma: f64) -> Rotation {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    Rotation(Matrix3::new(
        ca * cb * cg - sa * sg,
        -ca * cb * sg - sa * cg,
        ca * sb,
        sa * cb * cg + ca * sg,
        -sa * cb * sg + ca * cg,
        sa * sb,
        -sb * cg,
        sb * sg,
        cb,
    ))
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU
    if w >= TAU {
        0.0
    } else {
        w
    }
}

fn euler_from_matrix(m: &Matrix3<f64>) -> EulerZYZ {
    let sb = m[(0, 2)].hypot(m[(1, 2)]);
    if sb < 1e-12 {
        // gimbal lock: only alpha + gamma (or alpha - gamma) is defined
        if m[(2, 2)] > 0.0 {
            EulerZYZ::new(wrap_angle(m[(1, 0)].atan2(m[(0, 0)])), 0.0, 0.0)
        } else {
            EulerZYZ::new(wrap_angle((-m[(0, 1)]).atan2(-m[(0, 0)])), PI, 0.0)
        }
    } else {
        EulerZYZ::new(
            wrap_angle(m[(1, 2)].atan2(m[(0, 2)])),
            sb.atan2(m[(2, 2)]),
            wrap_angle(m[(2, 1)].atan2(-m[(2, 0)])),
        )
    }
}

pub fn compose(a: &Rotation, b: &Rotation) -> Rotation {
    a.compose(b)
}

pub fn inverse(r: &Rotation) -> Rotation {
    r.inverse()
}

pub fn geodesic_distance(a: &Rotation, b: &Rotation) -> f64 {
    let m = a.0.transpose() * b.0;
    // atan2 of (sin θ, cos θ) stays accurate near 0 and π, unlike acos
    let s = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm() / 2.0;
    let c = (m.trace() - 1.0) / 2.0;
    s.atan2(c)
}

/// Equiangular grid over SO(3) in ZYZ Euler coordinates with nodes at cell
/// centres. Node `(ia, ib, ig)` has flat index `(ia * n_beta + ib) * n_gamma + ig`,
/// so flat order is lexicographic in `(alpha, beta, gamma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationGrid {
    n_alpha: usize,
    n_beta: usize,
    n_gamma: usize,
    beta_weights: Vec<f64>,
}

pub fn so3_grid(n: usize) -> Result<RotationGrid> {
    RotationGrid::new(n, n, n)
}

impl RotationGrid {
    pub fn new(n_alpha: usize, n_beta: usize, n_gamma: usize) -> Result<Self> {
        if n_alpha < 2 || n_beta < 2 || n_gamma < 2 {
            return Err(Error::invalid(format!(
                "rotation grid needs at least 2 nodes per axis, got ({n_alpha}, {n_beta}, {n_gamma})"
            )));
        }
        let db = PI / n_beta as f64;
        let per_row = (n_alpha * n_gamma) as f64;
        // integral of sin(beta) over the cell is cos(lo) - cos(hi); whole range integrates to 2
        let beta_weights = (0..n_beta)
            .map(|j| {
                let lo = j as f64 * db;
                let hi = (j + 1) as f64 * db;
                (lo.cos() - hi.cos()) / 2.0 / per_row
            })
            .collect();
        Ok(RotationGrid {
            n_alpha,
            n_beta,
            n_gamma,
            beta_weights,
        })
    }

    pub fn n_alpha(&self) -> usize {
        self.n_alpha
    }
    pub fn n_beta(&self) -> usize {
        self.n_beta
    }
    pub fn n_gamma(&self) -> usize {
        self.n_gamma
    }

    /// Side length when the grid is cubic.
    pub fn n(&self) -> Option<usize> {
        (self.n_alpha == self.n_beta && self.n_beta == self.n_gamma).then_some(self.n_alpha)
    }

    pub fn len(&self) -> usize {
        self.n_alpha * self.n_beta * self.n_gamma
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_alpha(&self) -> f64 {
        TAU / self.n_alpha as f64
    }
    pub fn d_beta(&self) -> f64 {
        PI / self.n_beta as f64
    }
    pub fn d_gamma(&self) -> f64 {
        TAU / self.n_gamma as f64
    }

    pub fn index(&self, ia: usize, ib: usize, ig: usize) -> usize {
        (ia * self.n_beta + ib) * self.n_gamma + ig
    }

    pub fn unravel(&self, idx: usize) -> (usize, usize, usize) {
        let ig = idx % self.n_gamma;
        let rest = idx / self.n_gamma;
        (rest / self.n_beta, rest % self.n_beta, ig)
    }

    pub fn euler(&self, idx: usize) -> EulerZYZ {
        let (ia, ib, ig) = self.unravel(idx);
        EulerZYZ::new(
            (ia as f64 + 0.5) * self.d_alpha(),
            (ib as f64 + 0.5) * self.d_beta(),
            (ig as f64 + 0.5) * self.d_gamma(),
        )
    }

    pub fn rotation(&self, idx: usize) -> Rotation {
        let e = self.euler(idx);
        euler_matrix(e.alpha, e.beta, e.gamma)
    }

    pub fn rotations(&self) -> Vec<Rotation> {
        (0..self.len()).map(|i| self.rotation(i)).collect()
    }

    pub fn weight(&self, idx: usize) -> f64 {
        let (_, ib, _) = self.unravel(idx);
        self.beta_weights[ib]
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    /// Index of the node with the smallest geodesic distance to `r`
    /// (lowest index on ties).
    pub fn nearest(&self, r: &Rotation) -> usize {
        let mut best = 0;
        let mut best_tr = f64::NEG_INFINITY;
        let rt = r.0.transpose();
        for idx in 0..self.len() {
            // larger trace of rᵀ·node means smaller angle
            let tr = (rt * self.rotation(idx).0).trace();
            if tr > best_tr {
                best_tr = tr;
                best = idx;
            }
        }
        best
    }

    /// Flat index of the node shifted by `shift` steps along alpha.
    pub fn shift_alpha(&self, idx: usize, shift: isize) -> usize {
        let (ia, ib, ig) = self.unravel(idx);
        let na = self.n_alpha as isize;
        let ia = (ia as isize + shift).rem_euclid(na) as usize;
        self.index(ia, ib, ig)
    }

    /// Flat index of the node shifted by `shift` steps along gamma.
    pub fn shift_gamma(&self, idx: usize, shift: isize) -> usize {
        let (ia, ib, ig) = self.unravel(idx);
        let ng = self.n_gamma as isize;
        let ig = (ig as isize + shift).rem_euclid(ng) as usize;
        self.index(ia, ib, ig)
    }

    /// Trilinear interpolation stencil at a rotation, wrapping alpha and
    /// gamma and clamping beta to the outermost node rows.
    pub(crate) fn stencil(&self, r: &Rotation) -> [(u32, f64); 8] {
        let e = r.to_euler_zyz();
        self.stencil_euler(e.alpha, e.beta, e.gamma)
    }

    pub(crate) fn stencil_euler(&self, alpha: f64, beta: f64, gamma: f64) -> [(u32, f64); 8] {
        let (a0, a1, fa) = wrap_coord(alpha / self.d_alpha() - 0.5, self.n_alpha);
        let (b0, b1, fb) = clamp_coord(beta / self.d_beta() - 0.5, self.n_beta);
        let (g0, g1, fg) = wrap_coord(gamma / self.d_gamma() - 0.5, self.n_gamma);
        let mut out = [(0u32, 0.0); 8];
        let mut k = 0;
        for (ia, wa) in [(a0, 1.0 - fa), (a1, fa)] {
            for (ib, wb) in [(b0, 1.0 - fb), (b1, fb)] {
                for (ig, wg) in [(g0, 1.0 - fg), (g1, fg)] {
                    out[k] = (self.index(ia, ib, ig) as u32, wa * wb * wg);
                    k += 1;
                }
            }
        }
        out
    }
}

/// Splits a periodic continuous index into neighbouring cells and a fraction.
pub(crate) fn wrap_coord(t: f64, n: usize) -> (usize, usize, f64) {
    let nf = n as f64;
    let t = t.rem_euclid(nf);
    let i0 = t.floor();
    let frac = t - i0;
    let i0 = (i0 as usize) % n;
    (i0, (i0 + 1) % n, frac)
}

/// Same as [`wrap_coord`] for a non-periodic axis; values beyond the
/// outermost nodes take the outermost node's value.
pub(crate) fn clamp_coord(t: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    if t <= 0.0 {
        (0, 0, 0.0)
    } else if t >= max {
        (n - 1, n - 1, 0.0)
    } else {
        let i0 = t.floor();
        let i = i0 as usize;
        (i, (i + 1).min(n - 1), t - i0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn max_abs(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        (a - b).amax()
    }

    #[test]
    fn euler_identity() {
        let r = rotation_from_euler_zyz(&EulerZYZ::new(0.0, 0.0, 0.0)).unwrap();
        assert!(max_abs(r.matrix(), &Matrix3::identity()) < 1e-15);
    }

    #[test]
    fn euler_half_turn_about_z() {
        let r = rotation_from_euler_zyz(&EulerZYZ::new(PI, 0.0, 0.0)).unwrap();
        let expect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(max_abs(r.matrix(), &expect) < 1e-15);
    }

    #[test]
    fn euler_gimbal_degeneracy() {
        let a = rotation_from_euler_zyz(&EulerZYZ::new(0.3, 0.0, 1.1)).unwrap();
        let b = rotation_from_euler_zyz(&EulerZYZ::new(1.4, 0.0, 0.0)).unwrap();
        assert!(max_abs(a.matrix(), b.matrix()) < 1e-15);
    }

    #[test]
    fn euler_rejects_nan() {
        assert!(rotation_from_euler_zyz(&EulerZYZ::new(f64::NAN, 0.0, 0.0)).is_err());
        assert!(rotation_from_euler_zyz(&EulerZYZ::new(0.0, f64::INFINITY, 0.0)).is_err());
    }

    #[test]
    fn compose_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Rotation::random(&mut rng);
        let b = Rotation::random(&mut rng);
        let c = Rotation::random(&mut rng);
        assert!(max_abs(a.compose(&a.inverse()).matrix(), &Matrix3::identity()) < 1e-12);
        assert_eq!(Rotation::identity().compose(&a), a);
        let l = a.compose(&b).compose(&c);
        let r = a.compose(&b.compose(&c));
        assert!(max_abs(l.matrix(), r.matrix()) < 1e-12);
        let rz = Rotation::rz(0.7).inverse();
        assert!(max_abs(rz.matrix(), Rotation::rz(-0.7).matrix()) < 1e-15);
        assert_eq!(Rotation::identity().inverse(), Rotation::identity());
    }

    #[test]
    fn geodesic_examples() {
        let r = Rotation::rx(0.4);
        assert!(geodesic_distance(&r, &r).abs() < 1e-7);
        let d = geodesic_distance(&Rotation::identity(), &Rotation::rz(PI / 2.0));
        assert!((d - PI / 2.0).abs() < 1e-12);
        let a = Rotation::ry(0.2);
        let b = Rotation::rx(1.3);
        assert_eq!(geodesic_distance(&a, &b), geodesic_distance(&b, &a));
    }

    #[test]
    fn grid_counts_and_weights() {
        let g = so3_grid(20).unwrap();
        assert_eq!(g.len(), 8000);
        for n in [2, 10, 20, 60] {
            let g = so3_grid(n).unwrap();
            let s: f64 = g.weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "n={n} sum={s}");
        }
        assert_eq!(so3_grid(2).unwrap().len(), 8);
        assert!(so3_grid(1).is_err());
        let w = so3_grid(10).unwrap().weights();
        let max = w.iter().cloned().fold(f64::MIN, f64::max);
        let min = w.iter().cloned().fold(f64::MAX, f64::min);
        assert!(min > 0.0 && (max / min).is_finite() && max / min > 1.0);
    }

    #[test]
    fn grid_index_roundtrip() {
        let g = RotationGrid::new(3, 4, 5).unwrap();
        for i in 0..g.len() {
            let (a, b, c) = g.unravel(i);
            assert_eq!(g.index(a, b, c), i);
        }
    }

    #[test]
    fn stencil_on_node_is_exact() {
        let g = so3_grid(6).unwrap();
        for idx in [0, 17, 100, 215] {
            let st = g.stencil(&g.rotation(idx));
            let w: f64 = st.iter().filter(|(i, _)| *i as usize == idx).map(|p| p.1).sum();
            assert!((w - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_json_is_row_major() {
        let r = Rotation::rz(PI / 2.0);
        let s = serde_json::to_string(&r).unwrap();
        let v: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert!((v[1] + 1.0).abs() < 1e-15 && (v[3] - 1.0).abs() < 1e-15);
        let back: Rotation = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
        let e = serde_json::to_value(EulerZYZ::new(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(e["beta"], 2.0);
    }
}
