//! Bilinear and nearest-neighbour resampling on corner-aligned grids.
//!
//! Output sample `i` of `n_out` maps to source coordinate `i * (n_in - 1) / (n_out - 1)`,
//! so the first and last rows/columns line up exactly and a unit factor is the identity.

use crate::error::{Error, Result};
use crate::types::{ImageGrid, MapKind, PixelMap};

/// Largest grid any resampling call may produce.
pub const DEFAULT_PIXEL_BUDGET: usize = 50_000_000;

/// Output size for a linear zoom: `round(factor * n)`, at least 1.
pub fn scaled_len(n: usize, factor: f64) -> usize {
    ((n as f64) * factor).round().max(1.0) as usize
}

fn source_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    if n_out <= 1 {
        (n_in as f64 - 1.0) / 2.0
    } else {
        i as f64 * (n_in as f64 - 1.0) / (n_out as f64 - 1.0)
    }
}

fn check_budget(width: usize, height: usize, budget: usize) -> Result<()> {
    if width.saturating_mul(height) > budget {
        return Err(Error::PixelBudget {
            width,
            height,
            budget,
        });
    }
    Ok(())
}

/// Precomputed `(lo, hi, frac)` taps for one axis.
fn linear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            let s = source_coord(i, n_in, n_out);
            let lo = s.floor().clamp(0.0, (n_in - 1) as f64) as usize;
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

pub(crate) fn nearest_taps(n_in: usize, n_out: usize) -> Vec<usize> {
    (0..n_out)
        .map(|i| {
            let s = source_coord(i, n_in, n_out);
            ((s + 0.5).floor() as usize).min(n_in - 1)
        })
        .collect()
}

fn bilinear_plane(
    src: &[f64],
    stride: usize,
    offset: usize,
    (w_in, h_in): (usize, usize),
    (w_out, h_out): (usize, usize),
    out: &mut [f64],
    out_stride: usize,
) {
    let xs = linear_taps(w_in, w_out);
    let ys = linear_taps(h_in, h_out);
    let at = |r: usize, c: usize| src[(r * w_in + c) * stride + offset];
    for (row, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (col, &(x0, x1, fx)) in xs.iter().enumerate() {
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            out[(row * w_out + col) * out_stride + offset] = top * (1.0 - fy) + bottom * fy;
        }
    }
}

/// Resizes to an explicit target size with bilinear weights.
pub fn resize_bilinear(img: &ImageGrid, width: usize, height: usize, budget: usize) -> Result<ImageGrid> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("resize", "target dimensions must be positive"));
    }
    check_budget(width, height, budget)?;
    if width == img.width() && height == img.height() {
        return Ok(img.clone());
    }
    let ch = img.channels();
    let mut out = vec![0.0; width * height * ch];
    for c in 0..ch {
        bilinear_plane(
            img.data(),
            ch,
            c,
            (img.width(), img.height()),
            (width, height),
            &mut out,
            ch,
        );
    }
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    ImageGrid::new(width, height, ch, out)
}

/// Bilinear zoom by a linear factor; output dims are `round(factor * dims)`.
pub fn interpolate(img: &ImageGrid, factor: f64) -> Result<ImageGrid> {
    interpolate_with_budget(img, factor, DEFAULT_PIXEL_BUDGET)
}

pub fn interpolate_with_budget(img: &ImageGrid, factor: f64, budget: usize) -> Result<ImageGrid> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Domain {
            what: "zoom factor",
            value: factor,
        });
    }
    resize_bilinear(
        img,
        scaled_len(img.width(), factor),
        scaled_len(img.height(), factor),
        budget,
    )
}

/// Resizes a map to an explicit size. Binary maps use nearest neighbour so
/// they stay in `{0, 1}`; other kinds use bilinear weights.
pub fn resize_map(map: &PixelMap, width: usize, height: usize) -> Result<PixelMap> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("resize", "target dimensions must be positive"));
    }
    check_budget(width, height, DEFAULT_PIXEL_BUDGET)?;
    if width == map.width() && height == map.height() {
        return Ok(map.clone());
    }
    let data = match map.kind() {
        MapKind::Binary => {
            let xs = nearest_taps(map.width(), width);
            let ys = nearest_taps(map.height(), height);
            let mut out = Vec::with_capacity(width * height);
            for &r in &ys {
                for &c in &xs {
                    out.push(map.get(r, c));
                }
            }
            out
        }
        MapKind::Confidence | MapKind::Threshold => {
            let mut out = vec![0.0; width * height];
            bilinear_plane(
                map.data(),
                1,
                0,
                (map.width(), map.height()),
                (width, height),
                &mut out,
                1,
            );
            out
        }
    };
    Ok(PixelMap::new_unchecked(width, height, map.kind(), data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_factor_is_identity() {
        let img = ImageGrid::new(3, 2, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(interpolate(&img, 1.0).unwrap(), img);
    }

    #[test]
    fn two_by_two_ramp() {
        // rows {0,0} / {1,1}; corner-aligned sampling at rows 0, 1/3, 2/3, 1
        let img = ImageGrid::new(2, 2, 1, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let out = interpolate(&img, 2.0).unwrap();
        assert_eq!((out.width(), out.height()), (4, 4));
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for r in 0..4 {
            for c in 0..4 {
                assert!((out.data()[r * 4 + c] - expected[r]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constants_survive_any_factor() {
        let img = ImageGrid::filled(7, 5, 0.37).unwrap();
        for f in [0.3, 0.5, 1.7, 3.0] {
            let out = interpolate(&img, f).unwrap();
            assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn budget_is_enforced() {
        let img = ImageGrid::filled(100, 100, 0.0).unwrap();
        assert!(matches!(
            interpolate_with_budget(&img, 10.0, 500_000),
            Err(Error::PixelBudget { .. })
        ));
        assert!(interpolate(&img, 0.0).is_err());
    }

    #[test]
    fn binary_maps_stay_binary() {
        let m = PixelMap::new(3, 1, MapKind::Binary, vec![0.0, 1.0, 0.0]).unwrap();
        let up = resize_map(&m, 7, 3).unwrap();
        assert!(up.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(up.data()[3], 1.0);
    }

    #[test]
    fn rgb_planes_resample_independently() {
        let img = ImageGrid::new(1, 1, 3, vec![0.2, 0.4, 0.6]).unwrap();
        let out = interpolate(&img, 3.0).unwrap();
        assert_eq!(out.data().len(), 27);
        assert!(out.data().chunks(3).all(|p| p == [0.2, 0.4, 0.6]));
    }
}
