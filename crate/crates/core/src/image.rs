//! Raster types shared across the pipeline: binary masks, depth maps and
//! multi-channel feature maps, plus PGM I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// Binary image; `true` marks object pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::shape(format!(
                "mask of {width}x{height} needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Mask { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Mask { width, height, data: vec![false; width * height] }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Mask { width, height, data: vec![true; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..width * height).map(|i| f(i % width, i / width)).collect();
        Mask { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    /// Value at a continuous pixel position (nearest pixel); outside is `false`.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (xi, yi) = (x.round(), y.round());
        if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
            return false;
        }
        self.get(xi as usize, yi as usize)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Inclusive pixel bounds `(x_min, y_min, x_max, y_max)` of the set pixels.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bb = Some(match bb {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bb
    }

    /// Pixels whose whole 8-neighbourhood is set; the image border counts as unset.
    pub fn eroded(&self) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| {
            x > 0
                && y > 0
                && x + 1 < self.width
                && y + 1 < self.height
                && (y - 1..=y + 1).all(|yy| (x - 1..=x + 1).all(|xx| self.get(xx, yy)))
        })
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.data.len()).filter(|&i| self.data[i]).map(|i| (i % self.width, i / self.width))
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&b| if b { 255u8 } else { 0 }));
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let pgm = Pgm::parse(bytes)?;
        if pgm.maxval > 255 {
            return Err(Error::invalid("mask PGM must be 8-bit"));
        }
        let data = pgm.samples.iter().map(|&v| v > 0).collect();
        Mask::new(pgm.width, pgm.height, data)
    }
}

/// Depth in meters; `0` marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::shape("depth map size does not match its dimensions"));
        }
        if data.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::invalid("depth values must be finite and non-negative"));
        }
        Ok(DepthMap { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        DepthMap { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..width * height).map(|i| f(i % width, i / width)).collect();
        DepthMap { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, d: f64) {
        self.data[y * self.width + x] = d;
    }

    /// Bilinear depth over the valid corner pixels; `None` when every corner
    /// is invalid or the point lies outside the image.
    pub fn bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if x < 0.0 || y < 0.0 || x > (self.width - 1) as f64 || y > (self.height - 1) as f64 {
            return None;
        }
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let corners = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ];
        let mut sum = 0.0;
        let mut wsum = 0.0;
        for (cx, cy, w) in corners {
            let d = self.get(cx, cy);
            if d > 0.0 && w > 0.0 {
                sum += w * d;
                wsum += w;
            }
        }
        (wsum > 1e-12).then(|| sum / wsum)
    }

    /// 16-bit PGM in millimeters.
    pub fn to_pgm_mm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        for &d in &self.data {
            let mm = (d * 1000.0).round().clamp(0.0, 65535.0) as u16;
            out.extend(mm.to_be_bytes());
        }
        out
    }

    pub fn from_pgm_mm(bytes: &[u8]) -> Result<Self> {
        let pgm = Pgm::parse(bytes)?;
        let data = pgm.samples.iter().map(|&v| v as f64 / 1000.0).collect();
        DepthMap::new(pgm.width, pgm.height, data)
    }
}

/// Multi-channel feature raster at `1 / scale` of the input image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    channels: usize,
    scale: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, channels: usize, scale: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::invalid("feature map dimensions must be positive"));
        }
        if !scale.is_power_of_two() {
            return Err(Error::invalid(format!("feature map scale {scale} is not a power of two")));
        }
        if values.len() != width * height * channels {
            return Err(Error::shape("feature map size does not match its dimensions"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature map contains non-finite values"));
        }
        Ok(FeatureMap { width, height, channels, scale, values })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        scale: usize,
        f: impl Fn(usize, usize, &mut [f64]),
    ) -> Self {
        let mut values = vec![0.0; width * height * channels];
        for (i, px) in values.chunks_mut(channels).enumerate() {
            f(i % width, i / width, px);
        }
        FeatureMap { width, height, channels, scale: scale.max(1), values }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.values[i..i + self.channels]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Binary blob: `FMP1`, then little-endian `u32` width, height, channels
    /// and scale, then `f32` values pixel-major.
    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.values.len());
        out.extend_from_slice(FEATURE_MAGIC);
        for v in [self.width, self.height, self.channels, self.scale] {
            out.extend((v as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend((*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..4] != FEATURE_MAGIC {
            return Err(Error::invalid("not a feature map blob"));
        }
        let u = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (width, height, channels, scale) = (u(4), u(8), u(12), u(16));
        let n = width
            .checked_mul(height)
            .and_then(|p| p.checked_mul(channels))
            .ok_or_else(|| Error::invalid("feature map dimensions overflow"))?;
        let body = &bytes[20..];
        if body.len() != 4 * n {
            return Err(Error::shape(format!("feature map body holds {} bytes, expected {}", body.len(), 4 * n)));
        }
        let values = body.chunks(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        FeatureMap::new(width, height, channels, scale, values)
    }

    /// Bilinear sample in this map's own pixel coordinates, clamped to the
    /// border; adds into `out`.
    pub(crate) fn bilinear_into(&self, x: f64, y: f64, out: &mut [f64]) {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        for (px, py, w) in [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ] {
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.pixel(px, py)) {
                *o += w * v;
            }
        }
    }
}

const FEATURE_MAGIC: &[u8; 4] = b"FMP1";

struct Pgm {
    width: usize,
    height: usize,
    maxval: usize,
    samples: Vec<u16>,
}

impl Pgm {
    fn parse(bytes: &[u8]) -> Result<Pgm> {
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::invalid("truncated PGM header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        pos += 1;
        if fields[0] != "P5" {
            return Err(Error::invalid(format!("unsupported PGM magic {:?}", fields[0])));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<usize>().map_err(|_| Error::invalid(format!("bad PGM {what}: {s:?}")))
        };
        let width = parse(&fields[1], "width")?;
        let height = parse(&fields[2], "height")?;
        let maxval = parse(&fields[3], "maxval")?;
        if maxval == 0 || maxval > 65535 {
            return Err(Error::invalid("PGM maxval out of range"));
        }
        let bps = if maxval > 255 { 2 } else { 1 };
        let need = width * height * bps;
        let body = bytes.get(pos..pos + need).ok_or_else(|| Error::invalid("truncated PGM data"))?;
        let samples = if bps == 1 {
            body.iter().map(|&b| b as u16).collect()
        } else {
            body.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        };
        Ok(Pgm { width, height, maxval, samples })
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

/// Attaches the file name to a parse error.
pub(crate) fn in_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Format { path: path.display().to_string(), message: e.to_string() })
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    in_file(path, Mask::from_pgm(&read_file(path)?))
}

pub fn load_depth(path: &Path) -> Result<DepthMap> {
    in_file(path, DepthMap::from_pgm_mm(&read_file(path)?))
}

pub fn load_feature_map(path: &Path) -> Result<FeatureMap> {
    in_file(path, FeatureMap::from_blob(&read_file(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_roundtrips() {
        let m = Mask::from_fn(5, 3, |x, y| (x + y) % 2 == 0);
        assert_eq!(Mask::from_pgm(&m.to_pgm()).unwrap(), m);
        let d = DepthMap::from_fn(4, 2, |x, y| 0.5 + 0.001 * (x + 3 * y) as f64);
        let back = DepthMap::from_pgm_mm(&d.to_pgm_mm()).unwrap();
        for y in 0..2 {
            for x in 0..4 {
                assert!((back.get(x, y) - d.get(x, y)).abs() < 1e-9);
            }
        }
        assert!(Mask::from_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(Mask::from_pgm(b"P5\n4 4\n255\n\x00").is_err());
    }

    #[test]
    fn erosion_and_blob() {
        let m = Mask::from_fn(6, 5, |x, y| (1..5).contains(&x) && (1..4).contains(&y));
        let e = m.eroded();
        assert_eq!(e.pixels().collect::<Vec<_>>(), vec![(2, 2), (3, 2)]);
        let f = FeatureMap::from_fn(3, 2, 2, 4, |x, y, px| {
            px[0] = x as f64;
            px[1] = 0.5 * y as f64;
        });
        assert_eq!(FeatureMap::from_blob(&f.to_blob()).unwrap(), f);
        assert!(FeatureMap::from_blob(&f.to_blob()[..30]).is_err());
    }

    #[test]
    fn bounding_box() {
        let mut m = Mask::empty(10, 10);
        assert!(m.bounding_box().is_none());
        m.set(2, 3, true);
        m.set(7, 5, true);
        assert_eq!(m.bounding_box(), Some((2, 3, 7, 5)));
    }

    #[test]
    fn depth_bilinear_skips_invalid() {
        let mut d = DepthMap::from_fn(3, 3, |_, _| 1.0);
        d.set(1, 1, 0.0);
        assert!(d.bilinear(1.0, 1.0).is_none());
        assert!((d.bilinear(0.5, 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert!(d.bilinear(-1.0, 0.0).is_none());
    }
}
