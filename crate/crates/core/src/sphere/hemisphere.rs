use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::image::{FeatureMap, Mask};

use super::{SphereGrid, SphericalSignal};

pub type FeatureImage = FeatureMap;

/// Warps the masked bounding square of a feature map onto the front
/// hemisphere by orthographic inverse mapping.
///
/// The sample at `(alpha, beta)` with `beta < π/2` reads the image at
/// `(cx + ρ sinβ cosα, cy + ρ sinβ sinα)` where `(cx, cy)` is the centre of
/// the mask's bounding box and `ρ` half the side of its bounding square.
/// Features outside the mask read as zero, as does the back hemisphere.
/// Both maps are expected at the same resolution.
pub fn project_hemisphere(
    features: &FeatureMap,
    mask: &Mask,
    grid: &SphereGrid,
) -> Result<SphericalSignal> {
    if mask.width() != features.width() || mask.height() != features.height() {
        return Err(Error::shape("mask and feature map sizes differ"));
    }
    let (x0, y0, x1, y1) = mask
        .bounding_box()
        .ok_or_else(|| Error::invalid("cannot project an empty mask"))?;
    let cx = (x0 + x1) as f64 / 2.0;
    let cy = (y0 + y1) as f64 / 2.0;
    let rho = ((x1 - x0 + 1).max(y1 - y0 + 1)) as f64 / 2.0;
    let c = features.channels();
    let masked = FeatureMap::from_fn(features.width(), features.height(), c, features.scale(), |x, y, px| {
        if mask.get(x, y) {
            px.copy_from_slice(features.pixel(x, y));
        }
    });
    let mut values = vec![0.0; grid.len() * c];
    for idx in 0..grid.len() {
        let (alpha, beta) = grid.coords(idx);
        if beta >= FRAC_PI_2 {
            continue;
        }
        let r = rho * beta.sin();
        let u = cx + r * alpha.cos();
        let v = cy + r * alpha.sin();
        masked.bilinear_into(u, v, &mut values[idx * c..(idx + 1) * c]);
    }
    SphericalSignal::new(grid.clone(), c, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::dh_grid;

    #[test]
    fn constant_map_full_mask() {
        let f = FeatureMap::from_fn(32, 32, 2, 1, |_, _, px| {
            px[0] = 1.5;
            px[1] = -2.0;
        });
        let grid = dh_grid(8).unwrap();
        let s = project_hemisphere(&f, &Mask::full(32, 32), &grid).unwrap();
        for idx in 0..grid.len() {
            let (_, beta) = grid.coords(idx);
            let expect = if beta < FRAC_PI_2 { [1.5, -2.0] } else { [0.0, 0.0] };
            assert!((s.get(idx, 0) - expect[0]).abs() < 1e-12);
            assert!((s.get(idx, 1) - expect[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_mask_errors() {
        let f = FeatureMap::from_fn(8, 8, 1, 1, |_, _, px| px[0] = 1.0);
        assert!(project_hemisphere(&f, &Mask::empty(8, 8), &dh_grid(4).unwrap()).is_err());
    }

    #[test]
    fn in_plane_rotation_becomes_alpha_shift() {
        let grid = dh_grid(16).unwrap();
        let size = 129;
        let c = 64.0;
        let pattern = |u: f64, v: f64| {
            let (du, dv) = (u / 30.0, v / 30.0);
            (1.3 * du).sin() + 0.5 * (du * dv) + (0.7 * dv).cos()
        };
        // rotate the content by exactly one alpha step
        let theta = grid.d_alpha();
        let base = FeatureMap::from_fn(size, size, 1, 1, |x, y, px| {
            px[0] = pattern(x as f64 - c, y as f64 - c)
        });
        let rotated = FeatureMap::from_fn(size, size, 1, 1, |x, y, px| {
            let (u, v) = (x as f64 - c, y as f64 - c);
            let (s, co) = theta.sin_cos();
            px[0] = pattern(co * u + s * v, -s * u + co * v)
        });
        let mask = Mask::full(size, size);
        let a = project_hemisphere(&base, &mask, &grid).unwrap();
        let b = project_hemisphere(&rotated, &mask, &grid).unwrap();
        let mut worst: f64 = 0.0;
        for idx in 0..grid.len() {
            let src = grid.shift_alpha(idx, -1);
            worst = worst.max((b.get(idx, 0) - a.get(src, 0)).abs());
        }
        assert!(worst < 0.02, "max deviation {worst}");
    }
}
