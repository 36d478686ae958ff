//! A small trainable instance-segmentation locator.
//!
//! Features are border-normalized box means and center-surround differences at a
//! fixed set of pixel radii, so the same weights respond differently when the
//! image is zoomed. Two logistic heads produce the confidence map and a
//! per-pixel threshold map; the binary map is `F >= T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ImageGrid, MapKind, PixelMap, Scene};

pub const RADII: [usize; 5] = [1, 2, 4, 8, 16];
/// Feature channels: one box mean and one center-surround response per radius.
pub const FEATURE_COUNT: usize = 2 * RADII.len();
pub const THRESHOLD_MIN: f64 = 0.25;
pub const THRESHOLD_MAX: f64 = 0.90;
pub const PARAMS_SCHEMA_VERSION: u32 = 1;

/// Anything that maps an image of arbitrary size to a same-size binary map.
pub trait Locator {
    fn predict_binary(&self, img: &ImageGrid) -> PixelMap;
}

impl<F: Fn(&ImageGrid) -> PixelMap> Locator for F {
    fn predict_binary(&self, img: &ImageGrid) -> PixelMap {
        self(img)
    }
}

/// Per-pixel standardized features, stored pixel-major (`K` values per pixel).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FeatureStack {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * FEATURE_COUNT..(i + 1) * FEATURE_COUNT]
    }

    /// Stack whose pixel `i` is `sources[i].0`'s pixel `sources[i].1`.
    pub fn gather(width: usize, height: usize, sources: &[(&FeatureStack, usize)]) -> Self {
        assert_eq!(sources.len(), width * height, "one source per pixel");
        let mut data = Vec::with_capacity(sources.len() * FEATURE_COUNT);
        for (stack, i) in sources {
            data.extend_from_slice(stack.pixel(*i));
        }
        Self { width, height, data }
    }

    pub fn channel(&self, k: usize) -> Vec<f64> {
        self.data.iter().skip(k).step_by(FEATURE_COUNT).copied().collect()
    }
}

struct Integral {
    width: usize,
    height: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(plane: &[f64], width: usize, height: usize) -> Self {
        let stride = width + 1;
        let mut sums = vec![0.0; stride * (height + 1)];
        for r in 0..height {
            let mut row = 0.0;
            for c in 0..width {
                row += plane[r * width + c];
                sums[(r + 1) * stride + c + 1] = sums[r * stride + c + 1] + row;
            }
        }
        Self { width, height, sums }
    }

    /// Mean over the `(2r+1)²` window centered at each pixel, restricted to
    /// the pixels that lie inside the grid.
    fn box_mean(&self, radius: usize) -> Vec<f64> {
        let stride = self.width + 1;
        let mut out = Vec::with_capacity(self.width * self.height);
        for r in 0..self.height {
            let r0 = r.saturating_sub(radius);
            let r1 = (r + radius + 1).min(self.height);
            for c in 0..self.width {
                let c0 = c.saturating_sub(radius);
                let c1 = (c + radius + 1).min(self.width);
                let s = self.sums[r1 * stride + c1] - self.sums[r0 * stride + c1]
                    - self.sums[r1 * stride + c0]
                    + self.sums[r0 * stride + c0];
                out.push(s / ((r1 - r0) * (c1 - c0)) as f64);
            }
        }
        out
    }
}

/// Raw (unstandardized) channels: box means at each radius, then
/// `mean(r) - mean(2r)` for each radius.
pub fn raw_feature_channels(img: &ImageGrid) -> Vec<Vec<f64>> {
    let lum = img.luminance();
    let integral = Integral::new(&lum, img.width(), img.height());
    let means: Vec<Vec<f64>> = RADII.iter().map(|&r| integral.box_mean(r)).collect();
    let mut channels = means.clone();
    for (k, &r) in RADII.iter().enumerate() {
        let outer = match RADII.get(k + 1) {
            Some(&next) if next == 2 * r => means[k + 1].clone(),
            _ => integral.box_mean(2 * r),
        };
        channels.push(means[k].iter().zip(&outer).map(|(a, b)| a - b).collect());
    }
    channels
}

pub fn extract_features(img: &ImageGrid) -> FeatureStack {
    let channels = raw_feature_channels(img);
    let n = img.width() * img.height();
    let mut data = vec![0.0; n * FEATURE_COUNT];
    for (k, ch) in channels.iter().enumerate() {
        let mean = ch.iter().sum::<f64>() / n as f64;
        let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd < 1e-12 {
            continue;
        }
        for (i, v) in ch.iter().enumerate() {
            data[i * FEATURE_COUNT + k] = (v - mean) / sd;
        }
    }
    FeatureStack {
        width: img.width(),
        height: img.height(),
        data,
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn affine(weights: &[f64], f: &[f64]) -> f64 {
    let (w, bias) = weights.split_at(FEATURE_COUNT);
    w.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() + bias[0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocatorParams {
    pub schema_version: u32,
    /// `K` linear weights followed by the bias.
    pub conf_weights: Vec<f64>,
    pub thr_weights: Vec<f64>,
    pub version: u64,
}

impl Default for LocatorParams {
    fn default() -> Self {
        Self::zeros()
    }
}

impl LocatorParams {
    pub fn zeros() -> Self {
        Self {
            schema_version: PARAMS_SCHEMA_VERSION,
            conf_weights: vec![0.0; FEATURE_COUNT + 1],
            thr_weights: vec![0.0; FEATURE_COUNT + 1],
            version: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conf_weights.len() != FEATURE_COUNT + 1 || self.thr_weights.len() != FEATURE_COUNT + 1 {
            return Err(Error::Shape(format!(
                "expected {} weights per head, got {} and {}",
                FEATURE_COUNT + 1,
                self.conf_weights.len(),
                self.thr_weights.len()
            )));
        }
        if self.flat().any(|v| !v.is_finite()) {
            return Err(Error::invalid("locator params", "non-finite weight"));
        }
        Ok(())
    }

    /// All weights, confidence head first.
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.conf_weights.iter().chain(&self.thr_weights).copied()
    }

    pub fn predict(&self, img: &ImageGrid) -> Prediction {
        let f = extract_features(img);
        Prediction {
            confidence: predict_confidence(self, &f),
            threshold: predict_threshold(self, &f),
        }
    }
}

impl Locator for LocatorParams {
    fn predict_binary(&self, img: &ImageGrid) -> PixelMap {
        predict_binary_from(self, &extract_features(img))
    }
}

/// Binary map from precomputed features; equals `predict_binary` on the image they came from.
pub fn predict_binary_from(params: &LocatorParams, features: &FeatureStack) -> PixelMap {
    binarize(&predict_confidence(params, features), &predict_threshold(params, features))
        .expect("maps share the feature shape")
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub confidence: PixelMap,
    pub threshold: PixelMap,
}

impl Prediction {
    pub fn binary(&self) -> PixelMap {
        binarize(&self.confidence, &self.threshold).expect("maps share the image shape")
    }
}

pub fn predict_confidence(params: &LocatorParams, features: &FeatureStack) -> PixelMap {
    let data = (0..features.pixels())
        .map(|i| sigmoid(affine(&params.conf_weights, features.pixel(i))))
        .collect();
    PixelMap::new_unchecked(features.width, features.height, MapKind::Confidence, data)
}

fn threshold_from_logit(z: f64) -> f64 {
    THRESHOLD_MIN + (THRESHOLD_MAX - THRESHOLD_MIN) * sigmoid(z)
}

pub fn predict_threshold(params: &LocatorParams, features: &FeatureStack) -> PixelMap {
    let data = (0..features.pixels())
        .map(|i| threshold_from_logit(affine(&params.thr_weights, features.pixel(i))))
        .collect();
    PixelMap::new_unchecked(features.width, features.height, MapKind::Threshold, data)
}

/// `B = 1` where `F >= T`; ties go to foreground.
pub fn binarize(confidence: &PixelMap, threshold: &PixelMap) -> Result<PixelMap> {
    if !confidence.same_shape(threshold) {
        return Err(Error::Shape("confidence and threshold maps differ in size".into()));
    }
    let data = confidence
        .data()
        .iter()
        .zip(threshold.data())
        .map(|(f, t)| if f >= t { 1.0 } else { 0.0 })
        .collect();
    Ok(PixelMap::new_unchecked(
        confidence.width(),
        confidence.height(),
        MapKind::Binary,
        data,
    ))
}

/// Fixed global threshold: `B = 1` where `F >= epsilon`.
pub fn binarize_fixed(confidence: &PixelMap, epsilon: f64) -> PixelMap {
    let data = confidence
        .data()
        .iter()
        .map(|&f| if f >= epsilon { 1.0 } else { 0.0 })
        .collect();
    PixelMap::new_unchecked(
        confidence.width(),
        confidence.height(),
        MapKind::Binary,
        data,
    )
}

/// Ground-truth foreground: every annotation box rasterized and unioned.
pub fn gt_binary_map(scene: &Scene) -> PixelMap {
    let (w, h) = (scene.width(), scene.height());
    let mut map = PixelMap::zeros(w, h, MapKind::Binary);
    let data = map.data_mut();
    for a in &scene.annotations {
        let (x0, x1, y0, y1) = a.pixel_bounds(w, h);
        for r in y0..y1 {
            data[r * w + x0..r * w + x1].fill(1.0);
        }
    }
    map
}

fn check_same(maps: &[&PixelMap]) -> Result<()> {
    if maps.windows(2).any(|w| !w[0].same_shape(w[1])) {
        return Err(Error::Shape("maps differ in size".into()));
    }
    Ok(())
}

/// Mean squared confidence error plus mean absolute binary error against `target`.
fn paired_loss(confidence: &PixelMap, binary: &PixelMap, target: &PixelMap) -> Result<f64> {
    check_same(&[confidence, binary, target])?;
    let n = confidence.data().len() as f64;
    let sum: f64 = confidence
        .data()
        .iter()
        .zip(binary.data())
        .zip(target.data())
        .map(|((f, b), t)| (f - t) * (f - t) + (b - t).abs())
        .sum();
    Ok(sum / n)
}

/// `mean((F - B̂)² + |B - B̂|)`.
pub fn seg_loss(confidence: &PixelMap, binary: &PixelMap, gt: &PixelMap) -> Result<f64> {
    paired_loss(confidence, binary, gt)
}

/// `mean((F_ori - B_scp)² + |B_ori - B_scp|)`.
pub fn consistency_loss(confidence: &PixelMap, binary: &PixelMap, scoped: &PixelMap) -> Result<f64> {
    paired_loss(confidence, binary, scoped)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub seg_loss: f64,
    pub consis_loss: f64,
    pub total: f64,
}

/// One supervised scene: its image, ground-truth foreground and, for teacher
/// training, the teacher's scoped binary map.
#[derive(Debug, Clone)]
pub struct TrainExample<'a> {
    pub id: &'a str,
    pub image: &'a ImageGrid,
    pub gt: &'a PixelMap,
    pub scoped: Option<&'a PixelMap>,
}

/// Loss and gradients for one scene.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub conf: Vec<f64>,
    pub thr: Vec<f64>,
    pub loss: LossReport,
}

impl Gradients {
    fn zeros() -> Self {
        Self {
            conf: vec![0.0; FEATURE_COUNT + 1],
            thr: vec![0.0; FEATURE_COUNT + 1],
            loss: LossReport::default(),
        }
    }

    fn is_finite(&self) -> bool {
        self.conf.iter().chain(&self.thr).all(|v| v.is_finite())
    }

    fn accumulate(&mut self, other: &Gradients, weight: f64) {
        for (a, b) in self.conf.iter_mut().zip(&other.conf) {
            *a += weight * b;
        }
        for (a, b) in self.thr.iter_mut().zip(&other.thr) {
            *a += weight * b;
        }
        self.loss.seg_loss += weight * other.loss.seg_loss;
        self.loss.consis_loss += weight * other.loss.consis_loss;
        self.loss.total += weight * other.loss.total;
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss and gradients of `seg + consistency_weight * consis` for one scene.
///
/// The confidence head gets the exact gradient of the squared terms. The
/// threshold head gets the straight-through gradient: `dL/dB = sign(B - target)`
/// is passed to `T` with flipped sign (raising `T` lowers `B`), then through
/// the logistic range map into the threshold weights.
pub fn scene_gradients(
    params: &LocatorParams,
    features: &FeatureStack,
    gt: &PixelMap,
    scoped: Option<&PixelMap>,
    consistency_weight: f64,
) -> Result<Gradients> {
    let n = features.pixels();
    if gt.width() != features.width || gt.height() != features.height {
        return Err(Error::Shape("ground truth does not match the image".into()));
    }
    if let Some(s) = scoped {
        check_same(&[gt, s])?;
    }
    let inv_n = 1.0 / n as f64;
    let range = THRESHOLD_MAX - THRESHOLD_MIN;
    let mut g = Gradients::zeros();
    let (mut seg, mut consis) = (0.0, 0.0);
    for i in 0..n {
        let f_vec = features.pixel(i);
        let f = sigmoid(affine(&params.conf_weights, f_vec));
        let s = sigmoid(affine(&params.thr_weights, f_vec));
        let t = THRESHOLD_MIN + range * s;
        let b = if f >= t { 1.0 } else { 0.0 };
        let target = gt.data()[i];
        seg += (f - target).powi(2) + (b - target).abs();
        let mut dl_df = 2.0 * (f - target);
        let mut dl_db = sign(b - target);
        if let Some(sc) = scoped {
            let ts = sc.data()[i];
            consis += (f - ts).powi(2) + (b - ts).abs();
            dl_df += consistency_weight * 2.0 * (f - ts);
            dl_db += consistency_weight * sign(b - ts);
        }
        let dz_conf = dl_df * f * (1.0 - f) * inv_n;
        let dz_thr = -dl_db * range * s * (1.0 - s) * inv_n;
        if dz_conf != 0.0 {
            for k in 0..FEATURE_COUNT {
                g.conf[k] += dz_conf * f_vec[k];
            }
            g.conf[FEATURE_COUNT] += dz_conf;
        }
        if dz_thr != 0.0 {
            for k in 0..FEATURE_COUNT {
                g.thr[k] += dz_thr * f_vec[k];
            }
            g.thr[FEATURE_COUNT] += dz_thr;
        }
    }
    g.loss.seg_loss = seg * inv_n;
    g.loss.consis_loss = consis * inv_n;
    g.loss.total = g.loss.seg_loss + consistency_weight * g.loss.consis_loss;
    Ok(g)
}

/// Batch-mean gradients; a non-finite gradient names the offending scene.
pub fn batch_gradients(
    params: &LocatorParams,
    batch: &[TrainExample<'_>],
    consistency_weight: f64,
) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::invalid("batch", "empty"));
    }
    params.validate()?;
    let mut total = Gradients::zeros();
    let w = 1.0 / batch.len() as f64;
    for ex in batch {
        let features = extract_features(ex.image);
        let g = scene_gradients(params, &features, ex.gt, ex.scoped, consistency_weight)?;
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(ex.id.to_string()));
        }
        total.accumulate(&g, w);
    }
    Ok(total)
}

/// Plain gradient-descent step on the segmentation loss with separate rates per head.
pub fn train_step(
    params: &LocatorParams,
    batch: &[TrainExample<'_>],
    lr_conf: f64,
    lr_thr: f64,
) -> Result<(LocatorParams, LossReport)> {
    let g = batch_gradients(params, batch, 0.0)?;
    let mut next = params.clone();
    for (w, d) in next.conf_weights.iter_mut().zip(&g.conf) {
        *w -= lr_conf * d;
    }
    for (w, d) in next.thr_weights.iter_mut().zip(&g.thr) {
        *w -= lr_thr * d;
    }
    next.version += 1;
    Ok((next, g.loss))
}

/// Adam moments for both heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; 2 * (FEATURE_COUNT + 1)],
            v: vec![0.0; 2 * (FEATURE_COUNT + 1)],
        }
    }
}

impl AdamState {
    /// Applies one Adam update in place and bumps the parameter version.
    pub fn apply(&mut self, params: &mut LocatorParams, grads: &Gradients, lr_conf: f64, lr_thr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let k = FEATURE_COUNT + 1;
        let heads = [
            (&mut params.conf_weights, &grads.conf, lr_conf, 0),
            (&mut params.thr_weights, &grads.thr, lr_thr, k),
        ];
        for (weights, g, lr, offset) in heads {
            for j in 0..k {
                let idx = offset + j;
                self.m[idx] = self.beta1 * self.m[idx] + (1.0 - self.beta1) * g[j];
                self.v[idx] = self.beta2 * self.v[idx] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = self.m[idx] / bc1;
                let v_hat = self.v[idx] / bc2;
                weights[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        params.version += 1;
    }
}
