//! Direct-quadrature correlations on S² and SO(3).
//!
//! Both correlations rotate the first argument (the filter) and integrate it
//! against the second (the input):
//!
//! ```text
//! S²:    out(R) = Σ_x  w(x) Σ_k φ_k(R⁻¹x) f_k(x)
//! SO(3): out(R) = Σ_Q  w(Q) Σ_k φ_k(R⁻¹Q) f_k(Q)
//! ```
//!
//! so rotating the input by `Q` shifts the output to `out(Q⁻¹R)`.
//!
//! Interpolation stencils only depend on the output node through its
//! `(beta, gamma)` coordinates once the alpha rotation is factored out:
//! with `R = Rz(iΔα)·R₀` and `x = Rz(iΔα)·x'`, `R⁻¹x = R₀⁻¹x'`. The
//! correlators precompute stencils for the `alpha = ½Δα` slice and reuse them
//! for every alpha by cyclically shifting the input.

use crate::error::{Error, Result};
use crate::so3::{Rotation, RotationGrid};

use super::{check_same_sphere, RotationGridSignal, SphereGrid, SphericalSignal};

type Tap = (u32, f64);

/// One input sample paired with the filter taps its rotated position reads.
#[derive(Debug, Clone, Copy)]
struct PlanPoint {
    input: u32,
    taps_start: u32,
    taps_len: u8,
}

/// Stencil table for the alpha-index-0 slice of output nodes.
#[derive(Debug, Clone)]
struct Plan {
    /// `bases[base]` is the range of `points` for base node `(ib, ig)`.
    bases: Vec<(usize, usize)>,
    points: Vec<PlanPoint>,
    taps: Vec<Tap>,
}

impl Plan {
    fn build<F>(n_bases: usize, n_inputs: usize, mut stencil: F, support: Option<&[bool]>) -> Plan
    where
        F: FnMut(usize, usize, &mut Vec<Tap>),
    {
        let mut bases = Vec::with_capacity(n_bases);
        let mut points = Vec::new();
        let mut taps = Vec::new();
        let mut scratch = Vec::with_capacity(8);
        for base in 0..n_bases {
            let start = points.len();
            for input in 0..n_inputs {
                scratch.clear();
                stencil(base, input, &mut scratch);
                let taps_start = taps.len();
                for &(node, w) in &scratch {
                    if w == 0.0 {
                        continue;
                    }
                    if let Some(mask) = support {
                        if !mask[node as usize] {
                            continue;
                        }
                    }
                    // merge repeated nodes produced by clamped rows
                    if let Some(t) = taps[taps_start..].iter_mut().find(|t: &&mut Tap| t.0 == node) {
                        t.1 += w;
                    } else {
                        taps.push((node, w));
                    }
                }
                let len = taps.len() - taps_start;
                if len > 0 {
                    points.push(PlanPoint {
                        input: input as u32,
                        taps_start: taps_start as u32,
                        taps_len: len as u8,
                    });
                }
            }
            bases.push((start, points.len()));
        }
        Plan { bases, points, taps }
    }

    fn taps(&self, p: &PlanPoint) -> &[Tap] {
        let s = p.taps_start as usize;
        &self.taps[s..s + p.taps_len as usize]
    }
}

/// Interleaves a filter bank as `[node][filter][channel]`.
fn interleave<'a>(nodes: usize, k: usize, filters: impl Iterator<Item = &'a [f64]>) -> (Vec<f64>, usize) {
    let filters: Vec<&[f64]> = filters.collect();
    let c = filters.len();
    let mut out = vec![0.0; nodes * c * k];
    for (ci, vals) in filters.iter().enumerate() {
        for node in 0..nodes {
            for kk in 0..k {
                out[(node * c + ci) * k + kk] = vals[node * k + kk];
            }
        }
    }
    (out, c)
}

/// Correlates banks of spherical filters against spherical inputs, producing
/// signals on a rotation grid.
#[derive(Debug, Clone)]
pub struct S2Correlator {
    sphere: SphereGrid,
    rot: RotationGrid,
    /// Input samples per alpha step of the rotation grid, when the grids align.
    alpha_ratio: Option<usize>,
    plan: Option<Plan>,
}

impl S2Correlator {
    pub fn new(sphere: SphereGrid, rot: RotationGrid) -> Self {
        Self::build(sphere, rot, None)
    }

    /// Restricts the stencil table to filter samples flagged in `support`;
    /// filters used with this correlator must vanish elsewhere.
    pub fn with_support(sphere: SphereGrid, rot: RotationGrid, support: &[bool]) -> Result<Self> {
        if support.len() != sphere.len() {
            return Err(Error::shape("support mask length differs from sphere grid size"));
        }
        Ok(Self::build(sphere, rot, Some(support)))
    }

    fn build(sphere: SphereGrid, rot: RotationGrid, support: Option<&[bool]>) -> Self {
        let side = sphere.side();
        let alpha_ratio = side.is_multiple_of(rot.n_alpha()).then(|| side / rot.n_alpha());
        let plan = alpha_ratio.map(|_| {
            let n_g = rot.n_gamma();
            let bases: Vec<Rotation> = (0..rot.n_beta() * n_g)
                .map(|b| rot.rotation(rot.index(0, b / n_g, b % n_g)).inverse())
                .collect();
            let dirs: Vec<_> = (0..sphere.len()).map(|i| sphere.direction(i)).collect();
            Plan::build(
                bases.len(),
                sphere.len(),
                |base, x, out| out.extend(sphere.stencil(&bases[base].apply(&dirs[x]))),
                support,
            )
        });
        S2Correlator { sphere, rot, alpha_ratio, plan }
    }

    pub fn sphere_grid(&self) -> &SphereGrid {
        &self.sphere
    }

    pub fn rotation_grid(&self) -> &RotationGrid {
        &self.rot
    }

    /// Correlates every filter with `f`; output channel `c` belongs to filter `c`.
    pub fn correlate_bank(
        &self,
        filters: &[SphericalSignal],
        f: &SphericalSignal,
    ) -> Result<RotationGridSignal> {
        if filters.is_empty() {
            return Err(Error::invalid("empty filter bank"));
        }
        if f.grid() != &self.sphere {
            return Err(Error::invalid("input signal is not on the correlator's sphere grid"));
        }
        for phi in filters {
            check_same_sphere(phi, f)?;
        }
        let k = f.channels();
        let (bank, c) = interleave(self.sphere.len(), k, filters.iter().map(|p| p.values()));
        let rot = &self.rot;
        let mut out = vec![0.0; rot.len() * c];
        match (&self.plan, self.alpha_ratio) {
            (Some(plan), Some(ratio)) => {
                let n_g = rot.n_gamma();
                let mut fw = vec![0.0; k];
                for (base, &(start, end)) in plan.bases.iter().enumerate() {
                    let (ib, ig) = (base / n_g, base % n_g);
                    for ia in 0..rot.n_alpha() {
                        let node = rot.index(ia, ib, ig);
                        let acc = &mut out[node * c..(node + 1) * c];
                        let shift = (ia * ratio) as isize;
                        for p in &plan.points[start..end] {
                            let x = p.input as usize;
                            let src = self.sphere.shift_alpha(x, shift);
                            let w = self.sphere.weight(x);
                            for (kk, v) in fw.iter_mut().enumerate() {
                                *v = w * f.get(src, kk);
                            }
                            accumulate(acc, &bank, c, k, plan.taps(p), &fw);
                        }
                    }
                }
            }
            _ => {
                let mut fw = vec![0.0; k];
                for node in 0..rot.len() {
                    let rinv = rot.rotation(node).inverse();
                    let acc = &mut out[node * c..(node + 1) * c];
                    for x in 0..self.sphere.len() {
                        let taps = self.sphere.stencil(&rinv.apply(&self.sphere.direction(x)));
                        let w = self.sphere.weight(x);
                        for (kk, v) in fw.iter_mut().enumerate() {
                            *v = w * f.get(x, kk);
                        }
                        accumulate(acc, &bank, c, k, &taps, &fw);
                    }
                }
            }
        }
        Ok(RotationGridSignal::from_parts_unchecked(rot.clone(), c, out))
    }

    pub fn correlate(&self, phi: &SphericalSignal, f: &SphericalSignal) -> Result<RotationGridSignal> {
        self.correlate_bank(std::slice::from_ref(phi), f)
    }
}

#[inline]
fn accumulate(acc: &mut [f64], bank: &[f64], c: usize, k: usize, taps: &[Tap], fw: &[f64]) {
    for &(node, t) in taps {
        let row = &bank[node as usize * c * k..(node as usize + 1) * c * k];
        for (ci, a) in acc.iter_mut().enumerate() {
            let filt = &row[ci * k..(ci + 1) * k];
            let mut s = 0.0;
            for kk in 0..k {
                s += filt[kk] * fw[kk];
            }
            *a += t * s;
        }
    }
}

/// S² correlation of filter `phi` with input `f`, sampled on the nodes of `g`.
pub fn s2_correlate(
    phi: &SphericalSignal,
    f: &SphericalSignal,
    g: &RotationGrid,
) -> Result<RotationGridSignal> {
    check_same_sphere(phi, f)?;
    S2Correlator::new(f.grid().clone(), g.clone()).correlate(phi, f)
}

/// S² correlation evaluated at arbitrary rotations (one value per rotation).
pub fn s2_correlate_at(
    phi: &SphericalSignal,
    f: &SphericalSignal,
    rotations: &[Rotation],
) -> Result<Vec<f64>> {
    check_same_sphere(phi, f)?;
    let grid = f.grid();
    let k = f.channels();
    let dirs: Vec<_> = (0..grid.len()).map(|i| grid.direction(i)).collect();
    Ok(rotations
        .iter()
        .map(|r| {
            let rinv = r.inverse();
            let mut total = 0.0;
            for (x, d) in dirs.iter().enumerate() {
                let taps = grid.stencil(&rinv.apply(d));
                let mut s = 0.0;
                for kk in 0..k {
                    let v: f64 = taps.iter().map(|&(i, t)| t * phi.get(i as usize, kk)).sum();
                    s += v * f.get(x, kk);
                }
                total += grid.weight(x) * s;
            }
            total
        })
        .collect())
}

/// Correlates banks of SO(3) filters against SO(3) inputs on one grid.
#[derive(Debug, Clone)]
pub struct So3Correlator {
    grid: RotationGrid,
    plan: Option<Plan>,
    support: Option<Vec<u32>>,
}

/// Above this many stored taps the dense correlator recomputes stencils on
/// the fly instead of caching them.
const MAX_CACHED_TAPS: usize = 8_000_000;

impl So3Correlator {
    pub fn new(grid: RotationGrid) -> Self {
        let n = grid.len();
        let plan = (n * grid.n_beta() * grid.n_gamma() * 8 <= MAX_CACHED_TAPS)
            .then(|| Self::plan(&grid, None));
        So3Correlator { grid, plan, support: None }
    }

    /// Correlator for filters that vanish outside `support`.
    pub fn with_support(grid: RotationGrid, support: &[bool]) -> Result<Self> {
        if support.len() != grid.len() {
            return Err(Error::shape("support mask length differs from rotation grid size"));
        }
        let plan = Some(Self::plan(&grid, Some(support)));
        let nodes = (0..grid.len()).filter(|&i| support[i]).map(|i| i as u32).collect();
        Ok(So3Correlator { grid, plan, support: Some(nodes) })
    }

    fn plan(grid: &RotationGrid, support: Option<&[bool]>) -> Plan {
        let n_g = grid.n_gamma();
        let bases: Vec<Rotation> = (0..grid.n_beta() * n_g)
            .map(|b| grid.rotation(grid.index(0, b / n_g, b % n_g)).inverse())
            .collect();
        let nodes = grid.rotations();
        Plan::build(
            bases.len(),
            grid.len(),
            |base, q, out| out.extend(grid.stencil(&bases[base].compose(&nodes[q]))),
            support,
        )
    }

    pub fn grid(&self) -> &RotationGrid {
        &self.grid
    }

    /// Support nodes, in increasing order, when built with a support mask.
    pub fn support(&self) -> Option<&[u32]> {
        self.support.as_deref()
    }

    pub fn correlate_bank(
        &self,
        filters: &[RotationGridSignal],
        f: &RotationGridSignal,
    ) -> Result<RotationGridSignal> {
        if filters.is_empty() {
            return Err(Error::invalid("empty filter bank"));
        }
        if f.grid() != &self.grid {
            return Err(Error::invalid("input signal is not on the correlator's grid"));
        }
        let k = f.channels();
        for phi in filters {
            if phi.grid() != f.grid() || phi.channels() != k {
                return Err(Error::invalid(format!(
                    "filter/input mismatch: {} vs {} channels",
                    phi.channels(),
                    k
                )));
            }
        }
        let (bank, c) = interleave(self.grid.len(), k, filters.iter().map(|p| p.values()));
        let grid = &self.grid;
        let n_g = grid.n_gamma();
        let mut out = vec![0.0; grid.len() * c];
        let mut fw = vec![0.0; k];
        let mut run = |acc: &mut [f64], q: usize, ia: usize, taps: &[Tap]| {
            let src = grid.shift_alpha(q, ia as isize);
            let w = grid.weight(q);
            for (kk, v) in fw.iter_mut().enumerate() {
                *v = w * f.get(src, kk);
            }
            accumulate(acc, &bank, c, k, taps, &fw);
        };
        match &self.plan {
            Some(plan) => {
                for (base, &(start, end)) in plan.bases.iter().enumerate() {
                    let (ib, ig) = (base / n_g, base % n_g);
                    for ia in 0..grid.n_alpha() {
                        let node = grid.index(ia, ib, ig);
                        let acc = &mut out[node * c..(node + 1) * c];
                        for p in &plan.points[start..end] {
                            run(acc, p.input as usize, ia, plan.taps(p));
                        }
                    }
                }
            }
            None => {
                let nodes = grid.rotations();
                for base in 0..grid.n_beta() * n_g {
                    let (ib, ig) = (base / n_g, base % n_g);
                    let binv = grid.rotation(grid.index(0, ib, ig)).inverse();
                    let stencils: Vec<[Tap; 8]> =
                        nodes.iter().map(|q| grid.stencil(&binv.compose(q))).collect();
                    for ia in 0..grid.n_alpha() {
                        let node = grid.index(ia, ib, ig);
                        let acc = &mut out[node * c..(node + 1) * c];
                        for (q, taps) in stencils.iter().enumerate() {
                            run(acc, q, ia, taps);
                        }
                    }
                }
            }
        }
        Ok(RotationGridSignal::from_parts_unchecked(grid.clone(), c, out))
    }

    pub fn correlate(
        &self,
        phi: &RotationGridSignal,
        f: &RotationGridSignal,
    ) -> Result<RotationGridSignal> {
        self.correlate_bank(std::slice::from_ref(phi), f)
    }

    /// Linear features of a single-filter correlation with input `f`: returns
    /// `A` with `A[(node * S + j) * K + k]` such that
    /// `out(node) = Σ_{j,k} A[..] · φ_k(support[j])` for any filter `φ`
    /// supported on this correlator's support.
    pub fn filter_features(&self, f: &RotationGridSignal) -> Result<Vec<f64>> {
        let support = self
            .support
            .as_ref()
            .ok_or_else(|| Error::invalid("filter features need a support-restricted correlator"))?;
        if f.grid() != &self.grid {
            return Err(Error::invalid("input signal is not on the correlator's grid"));
        }
        let plan = self.plan.as_ref().expect("support correlators always carry a plan");
        let grid = &self.grid;
        let k = f.channels();
        let s = support.len();
        let mut slot = vec![u32::MAX; grid.len()];
        for (j, &node) in support.iter().enumerate() {
            slot[node as usize] = j as u32;
        }
        let n_g = grid.n_gamma();
        let mut out = vec![0.0; grid.len() * s * k];
        for (base, &(start, end)) in plan.bases.iter().enumerate() {
            let (ib, ig) = (base / n_g, base % n_g);
            for ia in 0..grid.n_alpha() {
                let node = grid.index(ia, ib, ig);
                let acc = &mut out[node * s * k..(node + 1) * s * k];
                for p in &plan.points[start..end] {
                    let q = p.input as usize;
                    let src = grid.shift_alpha(q, ia as isize);
                    let w = grid.weight(q);
                    let fv = f.node(src);
                    for &(tn, t) in plan.taps(p) {
                        let j = slot[tn as usize] as usize;
                        for kk in 0..k {
                            acc[j * k + kk] += t * w * fv[kk];
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// SO(3) correlation of filter `phi` with input `f` on their shared grid.
pub fn so3_correlate(phi: &RotationGridSignal, f: &RotationGridSignal) -> Result<RotationGridSignal> {
    if phi.grid() != f.grid() {
        return Err(Error::invalid("rotation grid mismatch"));
    }
    if phi.channels() != f.channels() {
        return Err(Error::invalid(format!(
            "channel mismatch: {} vs {}",
            phi.channels(),
            f.channels()
        )));
    }
    So3Correlator::new(f.grid().clone()).correlate(phi, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::so3_grid;
    use crate::sphere::{dh_grid, rotate_signal};

    /// Nested-loop reference for the S² correlation.
    fn s2_reference(phi: &SphericalSignal, f: &SphericalSignal, g: &RotationGrid) -> Vec<f64> {
        let grid = f.grid();
        (0..g.len())
            .map(|node| {
                let rinv = g.rotation(node).inverse();
                let mut total = 0.0;
                for x in 0..grid.len() {
                    let v = rinv.apply(&grid.direction(x));
                    for k in 0..f.channels() {
                        total += grid.weight(x) * phi.interpolate(&v, k) * f.get(x, k);
                    }
                }
                total
            })
            .collect()
    }

    fn so3_reference(phi: &RotationGridSignal, f: &RotationGridSignal) -> Vec<f64> {
        let g = f.grid();
        (0..g.len())
            .map(|node| {
                let rinv = g.rotation(node).inverse();
                let mut total = 0.0;
                for q in 0..g.len() {
                    let p = rinv.compose(&g.rotation(q));
                    for k in 0..f.channels() {
                        total += g.weight(q) * phi.interpolate(&p, k) * f.get(q, k);
                    }
                }
                total
            })
            .collect()
    }

    fn smooth_sphere(b: usize, k: usize, seed: f64) -> SphericalSignal {
        SphericalSignal::from_fn(dh_grid(b).unwrap(), k, |v, o| {
            for (c, x) in o.iter_mut().enumerate() {
                let s = seed + c as f64;
                *x = (s * v.x + 0.5 * v.y).sin() + v.z * v.x * s.cos() + 0.3;
            }
        })
    }

    #[test]
    fn s2_matches_reference_aligned_and_generic() {
        let phi = smooth_sphere(4, 2, 0.3);
        let f = smooth_sphere(4, 2, 1.7);
        for g in [so3_grid(4).unwrap(), so3_grid(3).unwrap()] {
            let fast = s2_correlate(&phi, &f, &g).unwrap();
            let slow = s2_reference(&phi, &f, &g);
            for (a, b) in fast.values().iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
            let at = s2_correlate_at(&phi, &f, &g.rotations()).unwrap();
            for (a, b) in at.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn s2_constant_signals() {
        let g = so3_grid(4).unwrap();
        let a = SphericalSignal::constant(dh_grid(4).unwrap(), 1, 2.0);
        let b = SphericalSignal::constant(dh_grid(4).unwrap(), 1, 3.0);
        let out = s2_correlate(&a, &b, &g).unwrap();
        assert!(out.values().iter().all(|v| (v - 6.0).abs() < 1e-9));
    }

    #[test]
    fn s2_one_hot_autocorrelation_peaks_at_identity_like_node() {
        let grid = dh_grid(4).unwrap();
        let g = so3_grid(4).unwrap();
        let mut bump = SphericalSignal::zeros(grid.clone(), 1);
        let idx = grid.index(3, 2);
        bump.values_mut()[idx] = 1.0;
        let out = s2_correlate(&bump, &bump, &g).unwrap();
        let best = (0..g.len())
            .max_by(|&a, &b| out.get(a, 0).partial_cmp(&out.get(b, 0)).unwrap())
            .unwrap();
        // the best node must map the bump onto itself
        let moved = g.rotation(best).apply(&grid.direction(idx));
        assert!((moved - grid.direction(idx)).norm() < 0.6);
    }

    #[test]
    fn s2_rejects_mismatch() {
        let g = so3_grid(2).unwrap();
        let a = SphericalSignal::constant(dh_grid(4).unwrap(), 1, 1.0);
        let b = SphericalSignal::constant(dh_grid(4).unwrap(), 2, 1.0);
        assert!(s2_correlate(&a, &b, &g).is_err());
    }

    #[test]
    fn s2_grid_aligned_equivariance() {
        let phi = smooth_sphere(4, 1, 0.9);
        let f = smooth_sphere(4, 1, 2.2);
        let g = so3_grid(4).unwrap();
        let q = Rotation::rz(g.d_alpha());
        let lhs = s2_correlate(&phi, &rotate_signal(&q, &f), &g).unwrap();
        let rhs = s2_correlate(&phi, &f, &g).unwrap().shift_alpha(1);
        for (a, b) in lhs.values().iter().zip(rhs.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    fn smooth_so3(n: usize, k: usize, s: f64) -> RotationGridSignal {
        RotationGridSignal::from_fn(so3_grid(n).unwrap(), k, |r, o| {
            let m = r.matrix();
            for (c, x) in o.iter_mut().enumerate() {
                *x = m[(0, 0)] * (s + c as f64) + m[(1, 2)] - 0.5 * m[(2, 1)] * m[(0, 2)] + 0.2;
            }
        })
    }

    #[test]
    fn so3_matches_reference() {
        let phi = smooth_so3(4, 2, 0.4);
        let f = smooth_so3(4, 2, -1.1);
        let fast = so3_correlate(&phi, &f).unwrap();
        let slow = so3_reference(&phi, &f);
        for (a, b) in fast.values().iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn so3_constant_and_equivariance() {
        let g = so3_grid(4).unwrap();
        let a = RotationGridSignal::constant(g.clone(), 1, 0.5);
        let out = so3_correlate(&a, &a).unwrap();
        assert!(out.values().iter().all(|v| (v - 0.25).abs() < 1e-12));

        let phi = smooth_so3(4, 1, 0.7);
        let f = smooth_so3(4, 1, 1.9);
        let lhs = so3_correlate(&phi, &f.shift_alpha(1)).unwrap();
        let rhs = so3_correlate(&phi, &f).unwrap().shift_alpha(1);
        for (a, b) in lhs.values().iter().zip(rhs.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn so3_one_hot_peaks_at_identity() {
        let g = so3_grid(4).unwrap();
        let mut f = RotationGridSignal::zeros(g.clone(), 1);
        let hot = g.index(1, 2, 3);
        f.values_mut()[hot] = 1.0;
        let out = so3_correlate(&f, &f).unwrap();
        let best = (0..g.len())
            .max_by(|&a, &b| out.get(a, 0).partial_cmp(&out.get(b, 0)).unwrap())
            .unwrap();
        let d = g.rotation(best).geodesic_distance(&Rotation::identity());
        let dmin = (0..g.len())
            .map(|i| g.rotation(i).geodesic_distance(&Rotation::identity()))
            .fold(f64::MAX, f64::min);
        assert!((d - dmin).abs() < 1e-9, "best node at {d}, nearest {dmin}");
    }

    #[test]
    fn support_restricted_matches_dense() {
        let g = so3_grid(4).unwrap();
        let support: Vec<bool> = (0..g.len()).map(|i| i % 7 == 0 || i % 5 == 1).collect();
        let mut phi = smooth_so3(4, 2, 0.3);
        let vals = phi.values_mut();
        for node in 0..g.len() {
            if !support[node] {
                vals[node * 2] = 0.0;
                vals[node * 2 + 1] = 0.0;
            }
        }
        let f = smooth_so3(4, 2, 1.2);
        let sparse = So3Correlator::with_support(g.clone(), &support).unwrap();
        let a = sparse.correlate(&phi, &f).unwrap();
        let b = so3_correlate(&phi, &f).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
        let feats = sparse.filter_features(&f).unwrap();
        let sup = sparse.support().unwrap();
        for node in 0..g.len() {
            let mut v = 0.0;
            for (j, &s) in sup.iter().enumerate() {
                for k in 0..2 {
                    v += feats[(node * sup.len() + j) * 2 + k] * phi.get(s as usize, k);
                }
            }
            assert!((v - b.get(node, 0)).abs() < 1e-12);
        }
    }
}
