//! The learnable spherical representation: a correlation stack of one S²
//! layer and four SO(3) layers, its softmax cross-entropy loss, argmax
//! rotation extraction, SO(3) max-pooling and training of the final filter.

use std::io::{Read, Write};
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::so3::{Rotation, RotationGrid};
use crate::sphere::{
    RotationGridSignal, S2Correlator, So3Correlator, SphereGrid, SphericalSignal,
};

/// Pointwise nonlinearity applied after every layer but the last.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

/// Shape of a correlation stack.
#[derive(Debug, Clone, PartialEq)]
pub struct StackConfig {
    /// Output filters of the five layers; the last is usually 1.
    pub widths: [usize; 5],
    /// Maximum polynomial degree of the random S² filters.
    pub s2_degree: usize,
    /// Geodesic radius (radians) of the hidden SO(3) filters' support around the identity.
    pub hidden_radius: f64,
    /// Geodesic radius of the trainable final filter's support.
    pub final_radius: f64,
}

impl Default for StackConfig {
    fn default() -> Self {
        StackConfig {
            widths: [8, 8, 8, 8, 1],
            s2_degree: 3,
            hidden_radius: 0.4,
            final_radius: 0.1,
        }
    }
}

impl StackConfig {
    /// Narrow stack used for rotation recovery of a single reference object.
    pub fn recovery() -> Self {
        StackConfig {
            widths: [1, 1, 1, 1, 1],
            s2_degree: 3,
            hidden_radius: 0.6,
            final_radius: 0.4,
        }
    }
}

/// Upper bound of the random cross-channel weights in hidden filters.
const MIX: f64 = 0.2;

#[derive(Debug)]
struct Correlators {
    s2: S2Correlator,
    hidden: So3Correlator,
    last: So3Correlator,
}

/// Five-layer correlation stack: layer 1 correlates S² filters with the
/// spherical input, layers 2–5 correlate SO(3) filters with the previous
/// layer's output.
#[derive(Debug)]
pub struct SphereCnnStack {
    sphere: SphereGrid,
    rot: RotationGrid,
    in_channels: usize,
    activation: Activation,
    s2_filters: Vec<SphericalSignal>,
    /// Layers 2–5; layer `i` holds `widths[i]` filters of `widths[i - 1]` channels.
    so3_filters: Vec<Vec<RotationGridSignal>>,
    hidden_support: Vec<bool>,
    final_support: Vec<bool>,
    symmetry: Option<usize>,
    cache: OnceLock<Correlators>,
}

impl Clone for SphereCnnStack {
    fn clone(&self) -> Self {
        SphereCnnStack {
            sphere: self.sphere.clone(),
            rot: self.rot.clone(),
            in_channels: self.in_channels,
            activation: self.activation,
            s2_filters: self.s2_filters.clone(),
            so3_filters: self.so3_filters.clone(),
            hidden_support: self.hidden_support.clone(),
            final_support: self.final_support.clone(),
            symmetry: self.symmetry,
            cache: OnceLock::new(),
        }
    }
}

impl PartialEq for SphereCnnStack {
    fn eq(&self, o: &Self) -> bool {
        self.sphere == o.sphere
            && self.rot == o.rot
            && self.in_channels == o.in_channels
            && self.s2_filters == o.s2_filters
            && self.so3_filters == o.so3_filters
            && self.hidden_support == o.hidden_support
            && self.final_support == o.final_support
            && self.symmetry == o.symmetry
    }
}

fn support_mask(grid: &RotationGrid, radius: f64) -> Vec<bool> {
    let id = Rotation::identity();
    let dists: Vec<f64> = (0..grid.len()).map(|i| grid.rotation(i).geodesic_distance(&id)).collect();
    let nearest = dists.iter().cloned().fold(f64::MAX, f64::min);
    // always keep the nodes closest to the identity
    let r = radius.max(nearest + 1e-9);
    dists.iter().map(|&d| d <= r).collect()
}

/// Random polynomial in the direction coordinates with zero mean and unit norm.
fn random_s2_filter<R: Rng>(grid: &SphereGrid, channels: usize, degree: usize, rng: &mut R) -> SphericalSignal {
    let mut monomials = Vec::new();
    for a in 0..=degree {
        for b in 0..=degree - a {
            for c in 0..=degree - a - b {
                monomials.push((a as i32, b as i32, c as i32));
            }
        }
    }
    let coeffs: Vec<f64> = (0..monomials.len() * channels).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let s = SphericalSignal::from_fn(grid.clone(), channels, |v, out| {
        for (k, o) in out.iter_mut().enumerate() {
            *o = monomials
                .iter()
                .enumerate()
                .map(|(m, &(a, b, c))| coeffs[k * monomials.len() + m] * v.x.powi(a) * v.y.powi(b) * v.z.powi(c))
                .sum();
        }
    });
    reference_template(&s)
}

/// Isotropic bump around the identity scaled by a nonnegative weight per
/// input channel: 1 for the filter's own channel index, a small random value
/// for the others. Normalised to unit mass under the grid measure.
fn random_so3_filter<R: Rng>(
    grid: &RotationGrid,
    support: &[bool],
    radius: f64,
    channels: usize,
    own: usize,
    rng: &mut R,
) -> RotationGridSignal {
    let id = Rotation::identity();
    let mix: Vec<f64> = (0..channels)
        .map(|k| if k == own { 1.0 } else { rng.gen_range(0.0..MIX) })
        .collect();
    let total: f64 = mix.iter().sum();
    let mut f = RotationGridSignal::zeros(grid.clone(), channels);
    let mut mass = 0.0;
    let mut bump = vec![0.0; grid.len()];
    let reach = (0..grid.len())
        .filter(|&node| support[node])
        .map(|node| grid.rotation(node).geodesic_distance(&id))
        .fold(radius, f64::max);
    for node in 0..grid.len() {
        if support[node] {
            let d = grid.rotation(node).geodesic_distance(&id);
            bump[node] = (std::f64::consts::FRAC_PI_2 * d / (reach * 1.5)).cos().powi(2);
            mass += grid.weight(node) * bump[node];
        }
    }
    for node in 0..grid.len() {
        for (k, m) in mix.iter().enumerate() {
            f.values_mut()[node * channels + k] = bump[node] * m / (mass * total);
        }
    }
    f
}

impl SphereCnnStack {
    /// Random stack: band-limited S² filters and localised SO(3) filters; the
    /// final filter starts at zero.
    pub fn random<R: Rng>(
        sphere: SphereGrid,
        rot: RotationGrid,
        in_channels: usize,
        config: &StackConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if in_channels == 0 || config.widths.contains(&0) {
            return Err(Error::invalid("stack channel counts must be positive"));
        }
        let hidden_support = support_mask(&rot, config.hidden_radius);
        let final_support = support_mask(&rot, config.final_radius);
        let s2_filters = (0..config.widths[0])
            .map(|_| random_s2_filter(&sphere, in_channels, config.s2_degree, rng))
            .collect();
        let mut so3_filters = Vec::new();
        for layer in 1..5 {
            let k = config.widths[layer - 1];
            let bank = (0..config.widths[layer])
                .map(|c| {
                    if layer == 4 {
                        RotationGridSignal::zeros(rot.clone(), k)
                    } else {
                        random_so3_filter(&rot, &hidden_support, config.hidden_radius, k, c, rng)
                    }
                })
                .collect();
            so3_filters.push(bank);
        }
        Ok(SphereCnnStack {
            sphere,
            rot,
            in_channels,
            activation: Activation::Relu,
            s2_filters,
            so3_filters,
            hidden_support,
            final_support,
            symmetry: None,
            cache: OnceLock::new(),
        })
    }

    /// Random stack seeded for one reference signal: the first S² filter is
    /// [`reference_template`] of it and the final filter starts as a box over
    /// its support on hidden channel 0, so the untrained output already
    /// peaks near `R` for the reference rotated by `R`.
    pub fn for_reference<R: Rng>(
        reference: &SphericalSignal,
        rot: RotationGrid,
        config: &StackConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut s = Self::random(reference.grid().clone(), rot, reference.channels(), config, rng)?;
        s.set_s2_filter(0, reference_template(reference))?;
        let k = config.widths[3];
        let p: Vec<f64> = (0..s.final_parameters().len()).map(|i| if i % k == 0 { 1.0 } else { 0.0 }).collect();
        s.set_final_parameters(&p)?;
        Ok(s)
    }

    /// Builds a stack from explicit filters. SO(3) filters must vanish outside
    /// the given supports (hidden layers 2–4 and final layer 5 respectively).
    pub fn from_filters(
        s2_filters: Vec<SphericalSignal>,
        so3_filters: Vec<Vec<RotationGridSignal>>,
        hidden_support: Vec<bool>,
        final_support: Vec<bool>,
    ) -> Result<Self> {
        let first = s2_filters.first().ok_or_else(|| Error::invalid("layer 1 has no filters"))?;
        let sphere = first.grid().clone();
        let in_channels = first.channels();
        if s2_filters.iter().any(|f| f.grid() != &sphere || f.channels() != in_channels) {
            return Err(Error::shape("layer 1 filters disagree on grid or channels"));
        }
        if so3_filters.len() != 4 {
            return Err(Error::shape(format!("expected 4 SO(3) layers, got {}", so3_filters.len())));
        }
        let rot = so3_filters[0]
            .first()
            .ok_or_else(|| Error::invalid("layer 2 has no filters"))?
            .grid()
            .clone();
        if hidden_support.len() != rot.len() || final_support.len() != rot.len() {
            return Err(Error::shape("support mask size differs from rotation grid"));
        }
        let mut prev = s2_filters.len();
        for (i, bank) in so3_filters.iter().enumerate() {
            let support = if i == 3 { &final_support } else { &hidden_support };
            if bank.is_empty() {
                return Err(Error::invalid(format!("layer {} has no filters", i + 2)));
            }
            for f in bank {
                if f.grid() != &rot || f.channels() != prev {
                    return Err(Error::shape(format!(
                        "layer {} filter has {} channels, previous layer outputs {prev}",
                        i + 2,
                        f.channels()
                    )));
                }
                if (0..rot.len()).any(|n| !support[n] && f.node(n).iter().any(|&v| v != 0.0)) {
                    return Err(Error::invalid(format!("layer {} filter leaves its support", i + 2)));
                }
            }
            prev = bank.len();
        }
        Ok(SphereCnnStack {
            sphere,
            rot,
            in_channels,
            activation: Activation::Relu,
            s2_filters,
            so3_filters,
            hidden_support,
            final_support,
            symmetry: None,
            cache: OnceLock::new(),
        })
    }

    pub fn sphere_grid(&self) -> &SphereGrid {
        &self.sphere
    }

    pub fn rotation_grid(&self) -> &RotationGrid {
        &self.rot
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn widths(&self) -> [usize; 5] {
        let mut w = [self.s2_filters.len(), 0, 0, 0, 0];
        for (i, bank) in self.so3_filters.iter().enumerate() {
            w[i + 1] = bank.len();
        }
        w
    }

    pub fn s2_filters(&self) -> &[SphericalSignal] {
        &self.s2_filters
    }

    pub fn so3_filters(&self, layer: usize) -> &[RotationGridSignal] {
        &self.so3_filters[layer - 2]
    }

    pub fn final_filters(&self) -> &[RotationGridSignal] {
        &self.so3_filters[3]
    }

    /// Symmetry order the filters were projected onto, if any.
    pub fn symmetry(&self) -> Option<usize> {
        self.symmetry
    }

    /// Nodes carrying trainable final-filter values, in increasing order.
    pub fn final_support_nodes(&self) -> Vec<usize> {
        (0..self.rot.len()).filter(|&n| self.final_support[n]).collect()
    }

    pub fn hidden_support(&self) -> &[bool] {
        &self.hidden_support
    }

    pub fn final_support(&self) -> &[bool] {
        &self.final_support
    }

    /// Replaces the S² filter at `index`, e.g. with a reference template.
    pub fn set_s2_filter(&mut self, index: usize, filter: SphericalSignal) -> Result<()> {
        if filter.grid() != &self.sphere || filter.channels() != self.in_channels {
            return Err(Error::shape("replacement filter has the wrong grid or channel count"));
        }
        let slot = self
            .s2_filters
            .get_mut(index)
            .ok_or_else(|| Error::invalid(format!("no layer 1 filter {index}")))?;
        *slot = filter;
        Ok(())
    }

    fn correlators(&self) -> &Correlators {
        self.cache.get_or_init(|| Correlators {
            s2: S2Correlator::new(self.sphere.clone(), self.rot.clone()),
            hidden: So3Correlator::with_support(self.rot.clone(), &self.hidden_support)
                .expect("support sized to grid"),
            last: So3Correlator::with_support(self.rot.clone(), &self.final_support)
                .expect("support sized to grid"),
        })
    }

    /// Layer-4 activations (input to the final correlation).
    pub fn hidden_features(&self, input: &SphericalSignal) -> Result<RotationGridSignal> {
        if input.grid() != &self.sphere {
            return Err(Error::invalid("input is not on the stack's sphere grid"));
        }
        if input.channels() != self.in_channels {
            return Err(Error::invalid(format!(
                "input has {} channels, stack expects {}",
                input.channels(),
                self.in_channels
            )));
        }
        let c = self.correlators();
        let mut h = c.s2.correlate_bank(&self.s2_filters, input)?;
        h.relu();
        for bank in &self.so3_filters[..3] {
            h = c.hidden.correlate_bank(bank, &h)?;
            h.relu();
        }
        Ok(h)
    }

    fn final_layer(&self, h: &RotationGridSignal) -> Result<RotationGridSignal> {
        Ok(self.correlators().last.correlate_bank(&self.so3_filters[3], h)?.sum_channels())
    }

    /// Linear features of the final layer: `out(node) = Σ_p A[node][p] θ[p]`
    /// where `θ` are the parameters in [`Self::final_parameters`] order.
    pub fn final_features(&self, input: &SphericalSignal) -> Result<Vec<f64>> {
        let h = self.hidden_features(input)?;
        self.correlators().last.filter_features(&h)
    }

    /// Trainable values: for each final filter, support node, channel.
    pub fn final_parameters(&self) -> Vec<f64> {
        let nodes = self.final_support_nodes();
        let mut p = Vec::new();
        for f in &self.so3_filters[3] {
            for &n in &nodes {
                p.extend_from_slice(f.node(n));
            }
        }
        p
    }

    pub fn set_final_parameters(&mut self, params: &[f64]) -> Result<()> {
        let nodes = self.final_support_nodes();
        let k = self.widths()[3];
        let need = self.so3_filters[3].len() * nodes.len() * k;
        if params.len() != need {
            return Err(Error::shape(format!("expected {need} final parameters, got {}", params.len())));
        }
        let mut it = params.iter();
        for f in &mut self.so3_filters[3] {
            let vals = f.values_mut();
            for &n in &nodes {
                for kk in 0..k {
                    vals[n * k + kk] = *it.next().unwrap();
                }
            }
        }
        Ok(())
    }

    /// Projects every filter onto signals invariant under z-rotations by
    /// `2π / m`: S² filters are averaged over alpha shifts of the sphere grid
    /// and SO(3) filters over left multiplication by those rotations. The
    /// stack output then satisfies `out(R · Rz(2π/m)) = out(R)` for any input.
    pub fn symmetrize(&mut self, m: usize) -> Result<()> {
        if m == 0 || !self.sphere.side().is_multiple_of(m) || !self.rot.n_alpha().is_multiple_of(m) {
            return Err(Error::invalid(format!(
                "symmetry order {m} must divide both alpha resolutions"
            )));
        }
        let ss = (self.sphere.side() / m) as isize;
        for f in &mut self.s2_filters {
            let k = f.channels();
            let src = f.clone();
            for idx in 0..self.sphere.len() {
                for kk in 0..k {
                    let mean: f64 = (0..m as isize)
                        .map(|j| src.get(self.sphere.shift_alpha(idx, j * ss), kk))
                        .sum::<f64>()
                        / m as f64;
                    f.values_mut()[idx * k + kk] = mean;
                }
            }
        }
        let rs = (self.rot.n_alpha() / m) as isize;
        let orbit = |mask: &[bool]| -> Vec<bool> {
            (0..self.rot.len())
                .map(|n| (0..m as isize).any(|j| mask[self.rot.shift_alpha(n, j * rs)]))
                .collect()
        };
        self.hidden_support = orbit(&self.hidden_support);
        self.final_support = orbit(&self.final_support);
        for bank in &mut self.so3_filters {
            for f in bank.iter_mut() {
                let k = f.channels();
                let src = f.clone();
                for n in 0..self.rot.len() {
                    for kk in 0..k {
                        let mean: f64 = (0..m as isize)
                            .map(|j| src.get(self.rot.shift_alpha(n, j * rs), kk))
                            .sum::<f64>()
                            / m as f64;
                        f.values_mut()[n * k + kk] = mean;
                    }
                }
            }
        }
        self.symmetry = Some(m);
        self.cache = OnceLock::new();
        Ok(())
    }

    /// Averages a gradient over the symmetry orbit of the final support.
    fn project_gradient(&self, grad: &mut [f64]) {
        let Some(m) = self.symmetry else { return };
        let nodes = self.final_support_nodes();
        let mut slot = vec![usize::MAX; self.rot.len()];
        for (j, &n) in nodes.iter().enumerate() {
            slot[n] = j;
        }
        let k = self.widths()[3];
        let rs = (self.rot.n_alpha() / m) as isize;
        let per_filter = nodes.len() * k;
        for chunk in grad.chunks_mut(per_filter) {
            let src = chunk.to_vec();
            for (j, &n) in nodes.iter().enumerate() {
                for kk in 0..k {
                    let mean: f64 = (0..m as isize)
                        .map(|s| src[slot[self.rot.shift_alpha(n, s * rs)] * k + kk])
                        .sum::<f64>()
                        / m as f64;
                    chunk[j * k + kk] = mean;
                }
            }
        }
    }

    /// Serializes the stack: an `SCNN` header with a layer manifest, the two
    /// support masks as node lists, then every filter as a sphere/SO(3) blob.
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let io = |e| Error::Io { path: "<stack>".into(), source: e };
        let mut head = Vec::new();
        head.extend(b"SCNN");
        let n = self.rot.n().ok_or_else(|| Error::invalid("only cubic rotation grids can be serialized"))?;
        for v in [5u32, self.symmetry.unwrap_or(0) as u32, 0] {
            head.extend(v.to_le_bytes());
        }
        let widths = self.widths();
        let mut k_in = self.in_channels;
        for (layer, &c) in widths.iter().enumerate() {
            let (kind, res) = if layer == 0 { (0u32, self.sphere.bandwidth()) } else { (1, n) };
            for v in [kind, res as u32, k_in as u32, c as u32] {
                head.extend(v.to_le_bytes());
            }
            k_in = c;
        }
        for mask in [&self.hidden_support, &self.final_support] {
            let nodes: Vec<u32> = (0..mask.len()).filter(|&i| mask[i]).map(|i| i as u32).collect();
            head.extend((nodes.len() as u32).to_le_bytes());
            for i in nodes {
                head.extend(i.to_le_bytes());
            }
        }
        w.write_all(&head).map_err(io)?;
        for f in &self.s2_filters {
            crate::sphere::write_spherical_signal(w, f)?;
        }
        for bank in &self.so3_filters {
            for f in bank {
                crate::sphere::write_rotation_signal(w, f)?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut u32s = |n: usize| -> Result<Vec<u32>> {
            let mut buf = vec![0u8; 4 * n];
            r.read_exact(&mut buf).map_err(|_| Error::invalid("truncated stack header"))?;
            Ok(buf.chunks(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let head = u32s(4)?;
        if head[0].to_le_bytes() != *b"SCNN" {
            return Err(Error::invalid("bad stack magic, expected SCNN"));
        }
        if head[1] != 5 {
            return Err(Error::invalid(format!("expected 5 layers, found {}", head[1])));
        }
        let symmetry = (head[2] != 0).then_some(head[2] as usize);
        let manifest = u32s(20)?;
        let mut masks = Vec::new();
        let n = manifest[5] as usize;
        let grid_len = n * n * n;
        for _ in 0..2 {
            let count = u32s(1)?[0] as usize;
            let nodes = u32s(count)?;
            let mut mask = vec![false; grid_len];
            for i in nodes {
                *mask.get_mut(i as usize).ok_or_else(|| Error::invalid("support node out of range"))? = true;
            }
            masks.push(mask);
        }
        let widths: Vec<usize> = (0..5).map(|l| manifest[l * 4 + 3] as usize).collect();
        let s2 = (0..widths[0])
            .map(|_| crate::sphere::read_spherical_signal(r))
            .collect::<Result<Vec<_>>>()?;
        let mut so3 = Vec::new();
        for &w in &widths[1..] {
            so3.push((0..w).map(|_| crate::sphere::read_rotation_signal(r)).collect::<Result<Vec<_>>>()?);
        }
        let final_support = masks.pop().unwrap();
        let hidden_support = masks.pop().unwrap();
        let mut stack = Self::from_filters(s2, so3, hidden_support, final_support)?;
        stack.symmetry = symmetry;
        Ok(stack)
    }
}

/// Zero-mean, unit-norm copy of a reference signal, each channel treated
/// separately; correlating it with a rotated copy of the reference peaks at
/// the rotation.
pub fn reference_template(reference: &SphericalSignal) -> SphericalSignal {
    let grid = reference.grid();
    let k = reference.channels();
    let mut t = reference.clone();
    let total: f64 = grid.weights().iter().sum();
    for kk in 0..k {
        let mean = (0..grid.len()).map(|i| grid.weight(i) * reference.get(i, kk)).sum::<f64>() / total;
        let var: f64 = (0..grid.len()).map(|i| grid.weight(i) * (reference.get(i, kk) - mean).powi(2)).sum();
        let norm = if var > 0.0 { var.sqrt() * (k as f64).sqrt() } else { 1.0 };
        for i in 0..grid.len() {
            t.values_mut()[i * k + kk] = (reference.get(i, kk) - mean) / norm;
        }
    }
    t
}

/// Runs the full stack; the final layer's channels are summed into one.
pub fn sphere_cnn_forward(
    input: &SphericalSignal,
    stack: &SphereCnnStack,
    g: &RotationGrid,
) -> Result<RotationGridSignal> {
    if g != &stack.rot {
        return Err(Error::invalid("requested rotation grid differs from the stack's grid"));
    }
    let h = stack.hidden_features(input)?;
    stack.final_layer(&h)
}

fn single_channel(c: &RotationGridSignal) -> Result<()> {
    if c.channels() != 1 {
        return Err(Error::invalid(format!("expected a single-channel signal, got {}", c.channels())));
    }
    Ok(())
}

/// Softmax over all rotation nodes.
pub fn normalize_correlation(c: &RotationGridSignal) -> Result<RotationGridSignal> {
    single_channel(c)?;
    let p = softmax(c.values());
    RotationGridSignal::new(c.grid().clone(), 1, p)
}

pub(crate) fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn log_softmax_at(v: &[f64], idx: usize) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v[idx] - lse
}

/// Cross-entropy of the normalised correlation at the grid node nearest to
/// the ground-truth rotation.
pub fn correlation_loss(c: &RotationGridSignal, r_g: &Rotation) -> Result<f64> {
    single_channel(c)?;
    let node = c.grid().nearest(r_g);
    Ok((-log_softmax_at(c.values(), node)).max(0.0))
}

/// Rotation at the maximal node with its softmax probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseRotation {
    pub rotation: Rotation,
    pub confidence: f64,
    pub node: usize,
}

/// Ties go to the lowest flat index, which is lexicographic in `(α, β, γ)`.
pub fn argmax_rotation(c: &RotationGridSignal) -> Result<CoarseRotation> {
    single_channel(c)?;
    let v = c.values();
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    let confidence = log_softmax_at(v, best).exp().clamp(0.0, 1.0);
    Ok(CoarseRotation { rotation: c.grid().rotation(best), confidence, node: best })
}

/// Block maximum over `factor³` cells.
pub fn so3_maxpool(c: &RotationGridSignal, factor: usize) -> Result<RotationGridSignal> {
    let g = c.grid();
    if factor == 0 || !g.n_alpha().is_multiple_of(factor) || !g.n_beta().is_multiple_of(factor) || !g.n_gamma().is_multiple_of(factor) {
        return Err(Error::invalid(format!("pooling factor {factor} does not divide the grid")));
    }
    if factor == 1 {
        return Ok(c.clone());
    }
    let out_grid = RotationGrid::new(g.n_alpha() / factor, g.n_beta() / factor, g.n_gamma() / factor)?;
    let k = c.channels();
    let mut values = vec![f64::NEG_INFINITY; out_grid.len() * k];
    for idx in 0..g.len() {
        let (a, b, gg) = g.unravel(idx);
        let o = out_grid.index(a / factor, b / factor, gg / factor);
        for kk in 0..k {
            let slot = &mut values[o * k + kk];
            *slot = slot.max(c.get(idx, kk));
        }
    }
    RotationGridSignal::new(out_grid, k, values)
}

/// Loss and gradient over the final-filter parameters for one sample.
pub fn correlation_loss_and_gradient(
    stack: &SphereCnnStack,
    input: &SphericalSignal,
    r_g: &Rotation,
) -> Result<(f64, Vec<f64>)> {
    let feats = stack.final_features(input)?;
    let theta = stack.final_parameters();
    let label = stack.rot.nearest(r_g);
    let mut grad = vec![0.0; theta.len()];
    let loss = sample_loss_grad(&feats, stack.final_feature_width(), stack.widths()[4], &theta, label, &mut grad, 1.0);
    stack.project_gradient(&mut grad);
    Ok((loss, grad))
}

impl SphereCnnStack {
    /// Number of linear features per node per final filter.
    fn final_feature_width(&self) -> usize {
        self.final_support_nodes().len() * self.widths()[3]
    }
}

/// Softmax cross-entropy through the linear final layer. `feats` holds the
/// per-node features (shared by all final filters since their outputs are
/// summed); `theta` is `filters × width`.
fn sample_loss_grad<T: Copy + Into<f64>>(
    feats: &[T],
    width: usize,
    filters: usize,
    theta: &[f64],
    label: usize,
    grad: &mut [f64],
    scale: f64,
) -> f64 {
    let nodes = feats.len() / width;
    // summing filter outputs equals one filter with the summed parameters
    let mut eff = vec![0.0; width];
    for f in 0..filters {
        for (e, t) in eff.iter_mut().zip(&theta[f * width..(f + 1) * width]) {
            *e += t;
        }
    }
    let logits: Vec<f64> = (0..nodes)
        .map(|n| feats[n * width..(n + 1) * width].iter().zip(&eff).map(|(a, t)| (*a).into() * t).sum())
        .collect();
    let p = softmax(&logits);
    let loss = -log_softmax_at(&logits, label);
    let mut g_eff = vec![0.0; width];
    for n in 0..nodes {
        let d = p[n] - if n == label { 1.0 } else { 0.0 };
        if d == 0.0 {
            continue;
        }
        for (g, a) in g_eff.iter_mut().zip(&feats[n * width..(n + 1) * width]) {
            *g += d * (*a).into();
        }
    }
    for f in 0..filters {
        for (g, e) in grad[f * width..(f + 1) * width].iter_mut().zip(&g_eff) {
            *g += scale * e;
        }
    }
    loss
}

/// Per-step training record.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub step_sizes: Vec<f64>,
}

/// Gradient descent on the mean correlation loss over `samples`, updating
/// only the final filter. The first step tries `learning_rate`; every step
/// halves its size until the Armijo condition holds and the next step starts
/// from twice the accepted size, so the recorded losses are non-increasing.
/// Stops early once a backtracked step improves the loss by less than a
/// relative 1e-6.
pub fn train_final_filter(
    samples: &[(SphericalSignal, Rotation)],
    stack: &SphereCnnStack,
    steps: usize,
    learning_rate: f64,
) -> Result<(SphereCnnStack, TrainReport)> {
    if samples.is_empty() {
        return Err(Error::invalid("training needs at least one sample"));
    }
    if !(learning_rate > 0.0) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let mut out = stack.clone();
    let mut report = TrainReport::default();
    if steps == 0 {
        return Ok((out, report));
    }
    let width = stack.final_feature_width();
    let filters = stack.widths()[4];
    // Features are centred across nodes per sample (softmax ignores a
    // per-sample constant) and scaled to unit RMS per parameter; training
    // runs on `θ' = θ · scale` and maps back at the end.
    let nodes = stack.rot.len();
    let mut data: Vec<(Vec<f32>, usize)> = Vec::with_capacity(samples.len());
    let mut sq = vec![0.0f64; width];
    for (input, label) in samples {
        let mut feats = stack.final_features(input)?;
        let mut mean = vec![0.0; width];
        for row in feats.chunks(width) {
            for (m, a) in mean.iter_mut().zip(row) {
                *m += a / nodes as f64;
            }
        }
        for row in feats.chunks_mut(width) {
            for ((a, m), q) in row.iter_mut().zip(&mean).zip(sq.iter_mut()) {
                *a -= m;
                *q += *a * *a;
            }
        }
        data.push((feats.into_iter().map(|v| v as f32).collect(), stack.rot.nearest(label)));
    }
    let total = (nodes * data.len()) as f64;
    let mut scale: Vec<f64> = sq.iter().map(|q| (q / total).sqrt()).collect();
    stack.project_gradient(&mut scale);
    let scale: Vec<f64> = scale.into_iter().map(|v| if v > 0.0 { v } else { 1.0 }).collect();
    let inv: Vec<f32> = scale.iter().map(|v| (1.0 / v) as f32).collect();
    for (feats, _) in &mut data {
        for row in feats.chunks_mut(width) {
            for (a, i) in row.iter_mut().zip(&inv) {
                *a *= i;
            }
        }
    }
    let n = data.len() as f64;
    let eval = |theta: &[f64], grad: Option<&mut Vec<f64>>| -> f64 {
        let mut scratch = vec![0.0; theta.len()];
        let want = grad.is_some();
        let mut loss = 0.0;
        for (feats, label) in &data {
            loss += sample_loss_grad(feats, width, filters, theta, *label, &mut scratch, if want { 1.0 / n } else { 0.0 });
        }
        if let Some(g) = grad {
            *g = scratch;
        }
        loss / n
    };
    let tolerance = 1e-6;
    let mut theta = out.final_parameters();
    for chunk in theta.chunks_mut(width) {
        chunk.iter_mut().zip(&scale).for_each(|(t, s)| *t *= s);
    }
    let mut grad = Vec::new();
    let mut loss = eval(&theta, Some(&mut grad));
    out.project_gradient(&mut grad);
    report.losses.push(loss);
    let mut step = learning_rate;
    for _ in 0..steps {
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2 < 1e-20 {
            break;
        }
        let mut accepted = None;
        let tried = step;
        for _ in 0..40 {
            let trial: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            let l = eval(&trial, None);
            // Armijo sufficient decrease
            if l <= loss - 1e-4 * step * gnorm2 {
                accepted = Some((trial, l));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, _)) = accepted else { break };
        theta = trial;
        let prev = loss;
        loss = eval(&theta, Some(&mut grad));
        out.project_gradient(&mut grad);
        report.losses.push(loss);
        report.step_sizes.push(step);
        if step < tried && prev - loss <= tolerance * prev.abs().max(1e-12) {
            break;
        }
        step *= 2.0;
    }
    for chunk in theta.chunks_mut(width) {
        chunk.iter_mut().zip(&scale).for_each(|(t, s)| *t /= s);
    }
    out.set_final_parameters(&theta)?;
    Ok((out, report))
}
