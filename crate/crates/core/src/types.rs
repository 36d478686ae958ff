//! Shared domain types: images, instance annotations, scenes and pixel maps.
//!
//! Coordinates are continuous and zero-indexed: pixel `(row, col)` covers
//! `[col, col + 1) x [row, row + 1)`, so its center sits at `(col + 0.5, row + 0.5)`.
//! `cx` is a column position, `cy` a row position.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A row-major image with 1 or 3 channels and intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(
                "image",
                format!("dimensions must be positive, got {width}x{height}"),
            ));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(
                "image",
                format!("channels must be 1 or 3, got {channels}"),
            ));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(
                "image",
                format!(
                    "data length {} does not match {width}x{height}x{channels}",
                    data.len()
                ),
            ));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(
                "image",
                format!("intensity {bad} outside [0, 1]"),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Single-channel image filled with `value` (clamped to `[0, 1]`).
    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, 1, vec![value.clamp(0.0, 1.0); width * height])
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Rec. 601 luminance for colour images; a copy of the plane for grey ones.
    pub fn luminance(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.data.clone();
        }
        self.data
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
            .collect()
    }

    /// Copy of rows `[row_lo, row_hi)` as a new image.
    pub fn crop_rows(&self, row_lo: usize, row_hi: usize) -> Result<Self> {
        if row_lo >= row_hi || row_hi > self.height {
            return Err(Error::invalid(
                "crop",
                format!("rows [{row_lo}, {row_hi}) outside height {}", self.height),
            ));
        }
        let stride = self.width * self.channels;
        Self::new(
            self.width,
            row_hi - row_lo,
            self.channels,
            self.data[row_lo * stride..row_hi * stride].to_vec(),
        )
    }
}

/// One annotated head: box center, box size and the derived area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceAnnotation {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    scale: f64,
}

impl InstanceAnnotation {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(Error::invalid(
                "annotation",
                format!("box size must be positive, got w={w} h={h}"),
            ));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::invalid(
                "annotation",
                format!("non-finite center ({cx}, {cy})"),
            ));
        }
        Ok(Self {
            cx,
            cy,
            w,
            h,
            scale: w * h,
        })
    }

    /// Box area in pixels², always `w * h`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Half the box diagonal: the center-distance radius used when matching.
    pub fn match_radius(&self) -> f64 {
        (self.w * self.w + self.h * self.h).sqrt() / 2.0
    }

    /// Pixel bounds `[x0, x1) x [y0, y1)` of the rasterized box, clipped to the grid.
    pub fn pixel_bounds(&self, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let clip = |v: f64, hi: usize| -> usize { v.round().clamp(0.0, hi as f64) as usize };
        let x0 = clip(self.cx - self.w / 2.0, width);
        let x1 = clip(self.cx + self.w / 2.0, width);
        let y0 = clip(self.cy - self.h / 2.0, height);
        let y1 = clip(self.cy + self.h / 2.0, height);
        (x0, x1, y0, y1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub image: ImageGrid,
    pub annotations: Vec<InstanceAnnotation>,
}

impl Scene {
    /// Builds a scene, rejecting annotations whose centers fall outside the grid.
    pub fn new(
        id: impl Into<String>,
        image: ImageGrid,
        annotations: Vec<InstanceAnnotation>,
    ) -> Result<Self> {
        let (w, h) = (image.width() as f64, image.height() as f64);
        if let Some(a) = annotations
            .iter()
            .find(|a| !(0.0..w).contains(&a.cx) || !(0.0..h).contains(&a.cy))
        {
            return Err(Error::invalid(
                "scene",
                format!(
                    "annotation center ({}, {}) outside {}x{} grid",
                    a.cx,
                    a.cy,
                    image.width(),
                    image.height()
                ),
            ));
        }
        Ok(Self {
            id: id.into(),
            image,
            annotations,
        })
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Confidence,
    Threshold,
    Binary,
}

/// A single-channel per-pixel map produced by (or supervising) the locator.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMap {
    width: usize,
    height: usize,
    kind: MapKind,
    data: Vec<f64>,
}

impl PixelMap {
    pub fn new(width: usize, height: usize, kind: MapKind, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::invalid(
                "pixel map",
                format!("{} values for a {width}x{height} grid", data.len()),
            ));
        }
        let ok = match kind {
            MapKind::Confidence => data.iter().all(|v| (0.0..=1.0).contains(v)),
            MapKind::Binary => data.iter().all(|&v| v == 0.0 || v == 1.0),
            MapKind::Threshold => data.iter().all(|v| v.is_finite()),
        };
        if !ok {
            return Err(Error::invalid(
                "pixel map",
                format!("values violate the {kind:?} range"),
            ));
        }
        Ok(Self {
            width,
            height,
            kind,
            data,
        })
    }

    pub(crate) fn new_unchecked(width: usize, height: usize, kind: MapKind, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            kind,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize, kind: MapKind) -> Self {
        Self::new_unchecked(width, height, kind, vec![0.0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn same_shape(&self, other: &PixelMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.5).count()
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_is_area() {
        let a = InstanceAnnotation::new(5.0, 5.0, 4.0, 2.5).unwrap();
        assert_eq!(a.scale(), 10.0);
    }

    #[test]
    fn zero_width_rejected() {
        assert!(InstanceAnnotation::new(5.0, 5.0, 0.0, 2.0).is_err());
        assert!(InstanceAnnotation::new(5.0, 5.0, 3.0, -1.0).is_err());
    }

    #[test]
    fn image_invariants() {
        assert!(ImageGrid::new(0, 2, 1, vec![]).is_err());
        assert!(ImageGrid::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(ImageGrid::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageGrid::new(2, 1, 1, vec![0.0, 1.5]).is_err());
        let rgb = ImageGrid::new(1, 1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        assert!((rgb.luminance()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scene_rejects_outside_centers() {
        let img = ImageGrid::filled(10, 10, 0.0).unwrap();
        let inside = InstanceAnnotation::new(9.5, 0.0, 2.0, 2.0).unwrap();
        let outside = InstanceAnnotation::new(10.0, 3.0, 2.0, 2.0).unwrap();
        assert!(Scene::new("a", img.clone(), vec![inside]).is_ok());
        assert!(Scene::new("b", img, vec![outside]).is_err());
    }

    #[test]
    fn binary_map_rejects_fractional() {
        assert!(PixelMap::new(2, 1, MapKind::Binary, vec![0.0, 0.5]).is_err());
        assert!(PixelMap::new(2, 1, MapKind::Confidence, vec![0.0, 1.5]).is_err());
        assert!(PixelMap::new(2, 1, MapKind::Binary, vec![1.0, 0.0]).is_ok());
    }

    #[test]
    fn pixel_bounds_cover_exact_box() {
        let a = InstanceAnnotation::new(14.0, 6.0, 8.0, 4.0).unwrap();
        assert_eq!(a.pixel_bounds(100, 100), (10, 18, 4, 8));
        assert_eq!(a.pixel_bounds(12, 5), (10, 12, 4, 5));
    }
}
