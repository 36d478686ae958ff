//! Scope plans and scoped prediction.
//!
//! Each band of a decoupled mixture gets a linear zoom factor that brings its
//! mean box area to the optimal scale. Scoped prediction then zooms the whole
//! image once per distinct factor, runs the locator, maps the binary output
//! back to the original grid and copies each band's rows from its own level.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::locator::{extract_features, FeatureStack, Locator};
use crate::resample::{interpolate, nearest_taps, resize_map, scaled_len, DEFAULT_PIXEL_BUDGET};
use crate::types::{ImageGrid, MapKind, PixelMap};

pub const DEFAULT_OPTIMAL_SCALE: f64 = 250.0;
pub const DEFAULT_GAMMA_MIN: f64 = 0.25;
pub const DEFAULT_GAMMA_MAX: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubDistributionBand {
    pub component_index: usize,
    /// First row of the band.
    pub v_lo: usize,
    /// One past the last row of the band.
    pub v_hi: usize,
    pub member_indices: Vec<usize>,
    /// Mean raw box area of the members, in pixels².
    pub mean_scale: f64,
}

impl SubDistributionBand {
    pub fn rows(&self) -> usize {
        self.v_hi - self.v_lo
    }
}

/// How a band's mean area becomes a zoom factor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorRule {
    /// `sqrt(optimal / mean)`: the linear zoom that maps the mean area onto the optimum.
    #[default]
    AreaToLinear,
    /// `sum(areas) / (optimal * (N - 1))`, taken literally.
    Verbatim,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScopeOptions {
    pub optimal_scale: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub rule: FactorRule,
}

impl Default for ScopeOptions {
    fn default() -> Self {
        Self {
            optimal_scale: DEFAULT_OPTIMAL_SCALE,
            gamma_min: DEFAULT_GAMMA_MIN,
            gamma_max: DEFAULT_GAMMA_MAX,
            rule: FactorRule::AreaToLinear,
        }
    }
}

impl ScopeOptions {
    pub fn with_optimal_scale(optimal_scale: f64) -> Self {
        Self {
            optimal_scale,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScopePlan {
    pub bands: Vec<SubDistributionBand>,
    pub factors: Vec<f64>,
    pub optimal_scale: f64,
}

pub fn zoom_factor(mean_scale: f64, optimal_scale: f64, gamma_min: f64, gamma_max: f64) -> Result<f64> {
    if !(mean_scale > 0.0) {
        return Err(Error::Domain {
            what: "mean scale",
            value: mean_scale,
        });
    }
    if !(optimal_scale > 0.0) {
        return Err(Error::Domain {
            what: "optimal scale",
            value: optimal_scale,
        });
    }
    Ok((optimal_scale / mean_scale).sqrt().clamp(gamma_min, gamma_max))
}

/// The literal `sum(areas) / (optimal * (N - 1))` factor, clamped like [`zoom_factor`].
pub fn verbatim_factor(areas: &[f64], optimal_scale: f64, gamma_min: f64, gamma_max: f64) -> Result<f64> {
    if areas.len() < 2 {
        return Err(Error::invalid(
            "verbatim factor",
            format!("needs at least two instances, got {}", areas.len()),
        ));
    }
    if !(optimal_scale > 0.0) {
        return Err(Error::Domain {
            what: "optimal scale",
            value: optimal_scale,
        });
    }
    let sum: f64 = areas.iter().sum();
    Ok((sum / (optimal_scale * (areas.len() as f64 - 1.0))).clamp(gamma_min, gamma_max))
}

fn validate_partition(bands: &[SubDistributionBand]) -> Result<usize> {
    let first = bands
        .first()
        .ok_or_else(|| Error::invalid("scope plan", "no bands"))?;
    if first.v_lo != 0 {
        return Err(Error::invalid("scope plan", "first band must start at row 0"));
    }
    for pair in bands.windows(2) {
        if pair[0].v_hi != pair[1].v_lo {
            return Err(Error::invalid(
                "scope plan",
                format!("gap or overlap between rows {} and {}", pair[0].v_hi, pair[1].v_lo),
            ));
        }
    }
    if let Some(b) = bands.iter().find(|b| b.v_lo >= b.v_hi || !(b.mean_scale > 0.0)) {
        return Err(Error::invalid(
            "scope plan",
            format!("band [{}, {}) with mean scale {} is invalid", b.v_lo, b.v_hi, b.mean_scale),
        ));
    }
    Ok(bands.last().map(|b| b.v_hi).unwrap_or(0))
}

/// One factor per band with the default clamp and rule.
pub fn plan_scope(bands: Vec<SubDistributionBand>, optimal_scale: f64) -> Result<ScopePlan> {
    plan_scope_with(bands, ScopeOptions::with_optimal_scale(optimal_scale), None)
}

/// As [`plan_scope`]; `member_areas` is required by [`FactorRule::Verbatim`].
pub fn plan_scope_with(
    bands: Vec<SubDistributionBand>,
    opts: ScopeOptions,
    member_areas: Option<&[f64]>,
) -> Result<ScopePlan> {
    validate_partition(&bands)?;
    let factors = bands
        .iter()
        .map(|b| match opts.rule {
            FactorRule::AreaToLinear => {
                zoom_factor(b.mean_scale, opts.optimal_scale, opts.gamma_min, opts.gamma_max)
            }
            FactorRule::Verbatim => {
                let all = member_areas.ok_or_else(|| {
                    Error::invalid("scope plan", "verbatim rule needs instance areas")
                })?;
                let areas: Vec<f64> = b.member_indices.iter().map(|&i| all[i]).collect();
                verbatim_factor(&areas, opts.optimal_scale, opts.gamma_min, opts.gamma_max)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScopePlan {
        bands,
        factors,
        optimal_scale: opts.optimal_scale,
    })
}

impl ScopePlan {
    /// A plan that leaves every band at its original resolution.
    pub fn identity(height: usize) -> Self {
        Self {
            bands: vec![SubDistributionBand {
                component_index: 0,
                v_lo: 0,
                v_hi: height,
                member_indices: Vec::new(),
                mean_scale: DEFAULT_OPTIMAL_SCALE,
            }],
            factors: vec![1.0],
            optimal_scale: DEFAULT_OPTIMAL_SCALE,
        }
    }

    pub fn height(&self) -> usize {
        self.bands.last().map_or(0, |b| b.v_hi)
    }

    /// Distinct factors in first-seen order, compared bitwise.
    pub fn distinct_factors(&self) -> Vec<f64> {
        let mut seen: Vec<f64> = Vec::new();
        for &f in &self.factors {
            if !seen.iter().any(|s| s.to_bits() == f.to_bits()) {
                seen.push(f);
            }
        }
        seen
    }

    pub fn with_unit_factors(&self) -> Self {
        Self {
            factors: vec![1.0; self.factors.len()],
            ..self.clone()
        }
    }

    pub fn to_file(&self) -> ScopePlanFile {
        ScopePlanFile {
            optimal_scale: self.optimal_scale,
            bands: self
                .bands
                .iter()
                .zip(&self.factors)
                .map(|(b, &factor)| PlanBandRecord {
                    v_lo: b.v_lo,
                    v_hi: b.v_hi,
                    mean_scale: b.mean_scale,
                    factor,
                })
                .collect(),
        }
    }

    /// Rebuilds a plan from its serialized form; member lists are not stored.
    pub fn from_file(file: &ScopePlanFile) -> Result<Self> {
        let bands: Vec<SubDistributionBand> = file
            .bands
            .iter()
            .enumerate()
            .map(|(k, b)| SubDistributionBand {
                component_index: k,
                v_lo: b.v_lo,
                v_hi: b.v_hi,
                member_indices: Vec::new(),
                mean_scale: b.mean_scale,
            })
            .collect();
        validate_partition(&bands)?;
        Ok(Self {
            bands,
            factors: file.bands.iter().map(|b| b.factor).collect(),
            optimal_scale: file.optimal_scale,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanBandRecord {
    pub v_lo: usize,
    pub v_hi: usize,
    pub mean_scale: f64,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopePlanFile {
    pub optimal_scale: f64,
    pub bands: Vec<PlanBandRecord>,
}

/// Predicts on the whole image at the band's factor and maps the binary output back.
fn level_prediction<L: Locator + ?Sized>(img: &ImageGrid, factor: f64, locator: &L) -> Result<PixelMap> {
    if factor == 1.0 {
        return Ok(locator.predict_binary(img));
    }
    let zoomed = interpolate(img, factor)?;
    let pred = locator.predict_binary(&zoomed);
    resize_map(&pred, img.width(), img.height())
}

/// Scoped prediction with sub-distribution re-aggregation.
///
/// The locator is invoked once per distinct factor, always on the whole
/// (zoomed) image; each band's rows come from its own level only.
pub fn scope_predict<L: Locator + ?Sized>(img: &ImageGrid, plan: &ScopePlan, locator: &L) -> Result<PixelMap> {
    let height = validate_partition(&plan.bands)?;
    if height != img.height() || plan.factors.len() != plan.bands.len() {
        return Err(Error::Shape(format!(
            "plan covers {height} rows with {} factors for {} bands; image has {} rows",
            plan.factors.len(),
            plan.bands.len(),
            img.height()
        )));
    }
    let width = img.width();
    let mut levels: BTreeMap<u64, PixelMap> = BTreeMap::new();
    for f in plan.distinct_factors() {
        levels.insert(f.to_bits(), level_prediction(img, f, locator)?);
    }
    let mut out = PixelMap::zeros(width, img.height(), MapKind::Binary);
    for (band, f) in plan.bands.iter().zip(&plan.factors) {
        let src = &levels[&f.to_bits()];
        let range = band.v_lo * width..band.v_hi * width;
        out.data_mut()[range.clone()].copy_from_slice(&src.data()[range]);
    }
    Ok(out)
}

/// Features that make pointwise prediction reproduce [`scope_predict`] for
/// any parameter set: pixel `i` carries the features of the zoomed-level
/// pixel that the binary resize would sample for it.
///
/// Zoomed images depend only on the plan, so training can compute these once
/// per scene and re-evaluate a changing teacher cheaply.
pub fn scope_features(img: &ImageGrid, plan: &ScopePlan) -> Result<FeatureStack> {
    let height = validate_partition(&plan.bands)?;
    if height != img.height() || plan.factors.len() != plan.bands.len() {
        return Err(Error::Shape(format!(
            "plan covers {height} rows with {} factors for {} bands; image has {} rows",
            plan.factors.len(),
            plan.bands.len(),
            img.height()
        )));
    }
    let width = img.width();
    let mut levels: BTreeMap<u64, FeatureStack> = BTreeMap::new();
    for f in plan.distinct_factors() {
        let level = if f == 1.0 {
            extract_features(img)
        } else {
            extract_features(&interpolate(img, f)?)
        };
        levels.insert(f.to_bits(), level);
    }
    let mut sources = Vec::with_capacity(width * img.height());
    for (band, f) in plan.bands.iter().zip(&plan.factors) {
        let level = &levels[&f.to_bits()];
        let (lw, lh) = (level.width(), level.height());
        let (xs, ys): (Vec<usize>, Vec<usize>) = if lw == width && lh == img.height() {
            ((0..width).collect(), (0..lh).collect())
        } else {
            (nearest_taps(lw, width), nearest_taps(lh, img.height()))
        };
        for &r in &ys[band.v_lo..band.v_hi] {
            sources.extend(xs.iter().map(|&c| (level, r * lw + c)));
        }
    }
    Ok(FeatureStack::gather(width, img.height(), &sources))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchMode {
    /// Crop, zoom, predict and stitch each band on its own.
    Divide,
    /// Splice the zoomed bands into one padded canvas and predict once.
    Whole,
}

/// Placement of one zoomed band inside the spliced canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CanvasSlot {
    pub top: usize,
    pub width: usize,
    pub height: usize,
}

/// Vertical stacking of zoomed bands, left-aligned; width is the widest band.
pub fn whole_canvas_layout(width: usize, plan: &ScopePlan) -> (usize, usize, Vec<CanvasSlot>) {
    let mut top = 0;
    let mut slots = Vec::with_capacity(plan.bands.len());
    for (b, &f) in plan.bands.iter().zip(&plan.factors) {
        let slot = CanvasSlot {
            top,
            width: scaled_len(width, f),
            height: scaled_len(b.rows(), f),
        };
        top += slot.height;
        slots.push(slot);
    }
    let canvas_w = slots.iter().map(|s| s.width).max().unwrap_or(0);
    (canvas_w, top, slots)
}

fn paste_rows(out: &mut PixelMap, band: &SubDistributionBand, patch: &PixelMap) {
    let width = out.width();
    out.data_mut()[band.v_lo * width..band.v_hi * width].copy_from_slice(patch.data());
}

/// Patch-based baselines that process each band's pixels in isolation.
pub fn predict_patchwise<L: Locator + ?Sized>(
    img: &ImageGrid,
    plan: &ScopePlan,
    locator: &L,
    mode: PatchMode,
) -> Result<PixelMap> {
    let height = validate_partition(&plan.bands)?;
    if height != img.height() || plan.factors.len() != plan.bands.len() {
        return Err(Error::Shape("plan does not match image".into()));
    }
    let width = img.width();
    let mut out = PixelMap::zeros(width, img.height(), MapKind::Binary);
    match mode {
        PatchMode::Divide => {
            for (band, &f) in plan.bands.iter().zip(&plan.factors) {
                let crop = img.crop_rows(band.v_lo, band.v_hi)?;
                let pred = level_prediction(&crop, f, locator)?;
                paste_rows(&mut out, band, &pred);
            }
        }
        PatchMode::Whole => {
            let (cw, ch, slots) = whole_canvas_layout(width, plan);
            if cw.saturating_mul(ch) > DEFAULT_PIXEL_BUDGET {
                return Err(Error::PixelBudget {
                    width: cw,
                    height: ch,
                    budget: DEFAULT_PIXEL_BUDGET,
                });
            }
            let channels = img.channels();
            let mut canvas = vec![0.0; cw * ch * channels];
            for (band, slot) in plan.bands.iter().zip(&slots) {
                let crop = img.crop_rows(band.v_lo, band.v_hi)?;
                let zoomed =
                    crate::resample::resize_bilinear(&crop, slot.width, slot.height, DEFAULT_PIXEL_BUDGET)?;
                for r in 0..slot.height {
                    let dst = ((slot.top + r) * cw) * channels;
                    let src = r * slot.width * channels;
                    canvas[dst..dst + slot.width * channels]
                        .copy_from_slice(&zoomed.data()[src..src + slot.width * channels]);
                }
            }
            let canvas = ImageGrid::new(cw, ch, channels, canvas)?;
            let pred = locator.predict_binary(&canvas);
            for (band, slot) in plan.bands.iter().zip(&slots) {
                let mut patch = Vec::with_capacity(slot.width * slot.height);
                for r in 0..slot.height {
                    let row = (slot.top + r) * cw;
                    patch.extend_from_slice(&pred.data()[row..row + slot.width]);
                }
                let patch = PixelMap::new_unchecked(slot.width, slot.height, MapKind::Binary, patch);
                let back = resize_map(&patch, width, band.rows())?;
                paste_rows(&mut out, band, &back);
            }
        }
    }
    Ok(out)
}
