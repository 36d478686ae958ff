//! Gaussian mixture over per-instance (scale, vertical position) observations.
//!
//! Components use diagonal covariance and every density is evaluated in log
//! space. After fitting, [`decouple`] turns the mixture into horizontal bands
//! that partition the image rows.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scope::SubDistributionBand;
use crate::types::Scene;

pub const VARIANCE_FLOOR: f64 = 1e-6;
/// Lower clamp on per-observation log densities before exponentiation.
pub const LOG_DENSITY_FLOOR: f64 = -745.0;
const DEGENERATE_MASS: f64 = 1e-12;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// How box areas are mapped onto the scale axis of the mixture.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaTransform {
    #[default]
    LogArea,
    RawArea,
}

impl AlphaTransform {
    pub fn apply(self, area: f64) -> f64 {
        match self {
            AlphaTransform::LogArea => area.ln(),
            AlphaTransform::RawArea => area,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleObservation {
    pub alpha: f64,
    pub v: f64,
    pub index: usize,
}

impl ScaleObservation {
    fn coords(&self) -> [f64; 2] {
        [self.alpha, self.v]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub pi: f64,
    pub mean: [f64; 2],
    pub var: [f64; 2],
}

impl GaussianComponent {
    /// `ln N(x | mean, diag(var))`.
    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        (0..2)
            .map(|d| {
                let diff = x[d] - self.mean[d];
                -0.5 * (LN_2PI + self.var[d].ln() + diff * diff / self.var[d])
            })
            .sum()
    }

    /// `ln(pi * N_v(v))` using only the vertical marginal.
    pub fn log_weighted_v_density(&self, v: f64) -> f64 {
        let diff = v - self.mean[1];
        self.pi.ln() - 0.5 * (LN_2PI + self.var[1].ln() + diff * diff / self.var[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub components: Vec<GaussianComponent>,
    #[serde(rename = "loglik")]
    pub loglik_history: Vec<f64>,
}

impl MixtureModel {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn log_likelihood(&self, obs: &[ScaleObservation]) -> f64 {
        obs.iter()
            .map(|o| log_sum_exp(&self.weighted_log_densities(o.coords())))
            .sum()
    }

    fn weighted_log_densities(&self, x: [f64; 2]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| (c.pi.ln() + c.log_density(x)).max(LOG_DENSITY_FLOOR))
            .collect()
    }

    /// Free parameters of a diagonal 2-D mixture: `C - 1` weights plus 4 per component.
    pub fn parameter_count(&self) -> usize {
        5 * self.components.len() - 1
    }

    pub fn bic(&self, obs: &[ScaleObservation]) -> f64 {
        -2.0 * self.log_likelihood(obs) + self.parameter_count() as f64 * (obs.len() as f64).ln()
    }
}

/// Row-stochastic `N x C` matrix of posterior component memberships.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Responsibilities {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.cols..(n + 1) * self.cols]
    }

    pub fn get(&self, n: usize, c: usize) -> f64 {
        self.data[n * self.cols + c]
    }

    /// Index of the largest entry in row `n`; the lowest index wins ties.
    pub fn argmax(&self, n: usize) -> usize {
        let row = self.row(n);
        let mut best = 0;
        for (c, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = c;
            }
        }
        best
    }

    /// Builds responsibilities from explicit rows, e.g. hard one-hot assignments.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("responsibility rows must be non-empty and equal length".into()));
        }
        for r in &rows {
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > 1e-9 || r.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid("responsibilities", format!("row {r:?} is not a distribution")));
            }
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// One observation per annotation: `alpha = transform(w * h)`, `v = cy / height`.
pub fn collect_observations(scene: &Scene, transform: AlphaTransform) -> Result<Vec<ScaleObservation>> {
    if scene.annotations.is_empty() {
        return Err(Error::EmptyScene(scene.id.clone()));
    }
    let height = scene.height() as f64;
    Ok(scene
        .annotations
        .iter()
        .enumerate()
        .map(|(index, a)| ScaleObservation {
            alpha: transform.apply(a.scale()),
            v: (a.cy / height).clamp(0.0, 1.0),
            index,
        })
        .collect())
}

fn global_stats(obs: &[ScaleObservation]) -> ([f64; 2], [f64; 2]) {
    let n = obs.len() as f64;
    let mut mean = [0.0; 2];
    for o in obs {
        let x = o.coords();
        mean[0] += x[0] / n;
        mean[1] += x[1] / n;
    }
    let mut var = [0.0; 2];
    for o in obs {
        let x = o.coords();
        for d in 0..2 {
            var[d] += (x[d] - mean[d]).powi(2) / n;
        }
    }
    (mean, var.map(|v| v.max(VARIANCE_FLOOR)))
}

/// Quantile initialisation: observations sorted by `v` are split into `C`
/// equal-count runs and each run's mean seeds one component. The seed only
/// shuffles the order among observations that share the same `v`.
pub fn init_mixture(obs: &[ScaleObservation], components: usize, seed: u64) -> Result<MixtureModel> {
    if components == 0 {
        return Err(Error::invalid("component count", "must be at least 1"));
    }
    if obs.len() < components {
        return Err(Error::InsufficientData {
            needed: components,
            got: obs.len(),
        });
    }
    let mut order: Vec<usize> = (0..obs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|&a, &b| obs[a].v.total_cmp(&obs[b].v));

    let (_, global_var) = global_stats(obs);
    let n = obs.len();
    let components = (0..components)
        .map(|c| {
            let lo = c * n / components;
            let hi = (c + 1) * n / components;
            let chunk: Vec<ScaleObservation> = order[lo..hi].iter().map(|&i| obs[i]).collect();
            let (mean, _) = global_stats(&chunk);
            GaussianComponent {
                pi: 1.0 / components as f64,
                mean,
                var: global_var,
            }
        })
        .collect();
    Ok(MixtureModel {
        components,
        loglik_history: Vec::new(),
    })
}

pub fn e_step(model: &MixtureModel, obs: &[ScaleObservation]) -> Responsibilities {
    let cols = model.components.len();
    let mut data = Vec::with_capacity(obs.len() * cols);
    for o in obs {
        let logs = model.weighted_log_densities(o.coords());
        let lse = log_sum_exp(&logs);
        let row: Vec<f64> = logs.iter().map(|l| (l - lse).exp()).collect();
        let sum: f64 = row.iter().sum();
        data.extend(row.iter().map(|r| r / sum));
    }
    Responsibilities {
        rows: obs.len(),
        cols,
        data,
    }
}

/// Closed-form maximiser of the expected complete-data log likelihood.
///
/// A component whose total responsibility falls below `1e-12` is re-seeded at
/// the observation the current model explains worst (lowest maximum
/// responsibility), with the global variance and weight `1/N`.
pub fn m_step(obs: &[ScaleObservation], resp: &Responsibilities) -> Result<MixtureModel> {
    if resp.rows != obs.len() {
        return Err(Error::Shape(format!(
            "{} responsibility rows for {} observations",
            resp.rows,
            obs.len()
        )));
    }
    let n = obs.len() as f64;
    let (_, global_var) = global_stats(obs);
    let mut components = Vec::with_capacity(resp.cols);
    let mut reseeded = Vec::new();
    for c in 0..resp.cols {
        let mass: f64 = (0..obs.len()).map(|i| resp.get(i, c)).sum();
        if mass < DEGENERATE_MASS {
            reseeded.push(c);
            components.push(GaussianComponent {
                pi: 0.0,
                mean: [0.0; 2],
                var: global_var,
            });
            continue;
        }
        let mut mean = [0.0; 2];
        for (i, o) in obs.iter().enumerate() {
            let w = resp.get(i, c) / mass;
            let x = o.coords();
            mean[0] += w * x[0];
            mean[1] += w * x[1];
        }
        let mut var = [0.0; 2];
        for (i, o) in obs.iter().enumerate() {
            let w = resp.get(i, c) / mass;
            let x = o.coords();
            for d in 0..2 {
                var[d] += w * (x[d] - mean[d]).powi(2);
            }
        }
        components.push(GaussianComponent {
            pi: mass / n,
            mean,
            var: var.map(|v| v.max(VARIANCE_FLOOR)),
        });
    }
    if !reseeded.is_empty() {
        let mut by_fit: Vec<usize> = (0..obs.len()).collect();
        by_fit.sort_by(|&a, &b| {
            let ma = resp.row(a).iter().copied().fold(0.0, f64::max);
            let mb = resp.row(b).iter().copied().fold(0.0, f64::max);
            ma.total_cmp(&mb).then(a.cmp(&b))
        });
        for (k, &c) in reseeded.iter().enumerate() {
            let o = obs[by_fit[k % by_fit.len()]];
            log::debug!("re-seeding empty mixture component {c} at observation {}", o.index);
            components[c].mean = o.coords();
            components[c].pi = 1.0 / n;
        }
        let total: f64 = components.iter().map(|c| c.pi).sum();
        for comp in &mut components {
            comp.pi /= total;
        }
    }
    Ok(MixtureModel {
        components,
        loglik_history: Vec::new(),
    })
}

/// Stopping rule and iteration budget for [`fit_em`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 200,
        }
    }
}

/// Alternates E and M steps until the log-likelihood gain drops below `tol`.
///
/// `loglik_history[i]` is the log-likelihood after the `i`-th M step, so its
/// length equals the number of iterations performed. Components come back
/// sorted by mean `v`.
pub fn fit_em(
    obs: &[ScaleObservation],
    components: usize,
    opts: EmOptions,
    seed: u64,
) -> Result<(MixtureModel, Responsibilities)> {
    let mut model = init_mixture(obs, components, seed)?;
    let mut prev = model.log_likelihood(obs);
    let mut history = Vec::new();
    for _ in 0..opts.max_iter.max(1) {
        let resp = e_step(&model, obs);
        model = m_step(obs, &resp)?;
        let ll = model.log_likelihood(obs);
        history.push(ll);
        let gain = ll - prev;
        prev = ll;
        if gain < opts.tol {
            break;
        }
    }
    model
        .components
        .sort_by(|a, b| a.mean[1].total_cmp(&b.mean[1]));
    model.loglik_history = history;
    let resp = e_step(&model, obs);
    Ok((model, resp))
}

/// BIC-minimising component count over `1..=min(c_max, N)`; ties go to fewer components.
pub fn select_component_count(
    obs: &[ScaleObservation],
    c_max: usize,
    opts: EmOptions,
    seed: u64,
) -> Result<usize> {
    if c_max == 0 {
        return Err(Error::invalid("c_max", "must be at least 1"));
    }
    let mut best = (1, f64::INFINITY);
    for c in 1..=c_max.min(obs.len()) {
        let (model, _) = fit_em(obs, c, opts, seed)?;
        let bic = model.bic(obs);
        if bic < best.1 {
            best = (c, bic);
        }
    }
    Ok(best.0)
}

/// Normalised row where the weighted vertical marginals of two adjacent
/// components cross, searched on the open interval between their means.
/// Falls back to the midpoint of the means when there is no sign change.
pub fn band_boundary(lower: &GaussianComponent, upper: &GaussianComponent) -> f64 {
    let (a, b) = (lower.mean[1], upper.mean[1]);
    let mid = 0.5 * (a + b);
    if !(b > a) {
        return mid;
    }
    let diff = |v: f64| lower.log_weighted_v_density(v) - upper.log_weighted_v_density(v);
    let (mut lo, mut hi) = (a, b);
    let (f_lo, f_hi) = (diff(lo), diff(hi));
    if f_lo == 0.0 && f_hi == 0.0 {
        return mid;
    }
    if !(f_lo > 0.0 && f_hi < 0.0) {
        return mid;
    }
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if diff(m) > 0.0 {
            lo = m;
        } else {
            hi = m;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Splits the mixture into row bands that partition `[0, H)`.
///
/// Members follow each instance's argmax responsibility. A band without
/// members borrows the mean scale of its nearest populated band.
pub fn decouple(
    model: &MixtureModel,
    resp: &Responsibilities,
    scene: &Scene,
) -> Result<Vec<SubDistributionBand>> {
    let c = model.components.len();
    let height = scene.height();
    if c == 0 {
        return Err(Error::invalid("mixture", "no components"));
    }
    if resp.cols != c || resp.rows != scene.annotations.len() {
        return Err(Error::Shape(format!(
            "responsibilities {}x{} do not match {} annotations and {c} components",
            resp.rows,
            resp.cols,
            scene.annotations.len()
        )));
    }
    if height < c {
        return Err(Error::invalid(
            "decouple",
            format!("{c} bands cannot partition {height} rows"),
        ));
    }
    if model
        .components
        .windows(2)
        .any(|w| w[0].mean[1] > w[1].mean[1])
    {
        return Err(Error::invalid("decouple", "components must be ordered by mean v"));
    }

    let mut cuts = Vec::with_capacity(c + 1);
    cuts.push(0usize);
    for k in 0..c - 1 {
        let v = band_boundary(&model.components[k], &model.components[k + 1]);
        let row = (v * height as f64).round().clamp(0.0, height as f64) as usize;
        // keep every band at least one row tall
        let min_row = cuts[k] + 1;
        let max_row = height - (c - 1 - k);
        cuts.push(row.clamp(min_row, max_row));
    }
    cuts.push(height);

    let mut members = vec![Vec::new(); c];
    for n in 0..resp.rows {
        members[resp.argmax(n)].push(n);
    }
    let mean_scales: Vec<Option<f64>> = members
        .iter()
        .map(|m| {
            (!m.is_empty()).then(|| {
                m.iter().map(|&i| scene.annotations[i].scale()).sum::<f64>() / m.len() as f64
            })
        })
        .collect();

    (0..c)
        .map(|k| {
            let mean_scale = match mean_scales[k] {
                Some(s) => s,
                None => nearest_populated(&mean_scales, k)
                    .ok_or_else(|| Error::invalid("decouple", "no populated component"))?,
            };
            Ok(SubDistributionBand {
                component_index: k,
                v_lo: cuts[k],
                v_hi: cuts[k + 1],
                member_indices: members[k].clone(),
                mean_scale,
            })
        })
        .collect()
}

fn nearest_populated(scales: &[Option<f64>], k: usize) -> Option<f64> {
    (1..scales.len()).find_map(|d| {
        let below = k.checked_sub(d).and_then(|i| scales[i]);
        let above = scales.get(k + d).copied().flatten();
        below.or(above)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ImageGrid, InstanceAnnotation};

    fn obs(points: &[(f64, f64)]) -> Vec<ScaleObservation> {
        points
            .iter()
            .enumerate()
            .map(|(index, &(alpha, v))| ScaleObservation { alpha, v, index })
            .collect()
    }

    #[test]
    fn observation_formula() {
        let img = ImageGrid::filled(100, 100, 0.0).unwrap();
        let scene = Scene::new(
            "s",
            img,
            vec![
                InstanceAnnotation::new(20.0, 50.0, 10.0, 10.0).unwrap(),
                InstanceAnnotation::new(20.0, 80.0, 10.0, 10.0).unwrap(),
            ],
        )
        .unwrap();
        let o = collect_observations(&scene, AlphaTransform::LogArea).unwrap();
        assert_eq!(o[0].alpha, 100f64.ln());
        assert_eq!(o[0].v, 0.5);
        assert_eq!(o[0].alpha, o[1].alpha);
        assert_ne!(o[0].v, o[1].v);
        let raw = collect_observations(&scene, AlphaTransform::RawArea).unwrap();
        assert_eq!(raw[0].alpha, 100.0);
    }

    #[test]
    fn empty_scene_is_an_error() {
        let scene = Scene::new("e", ImageGrid::filled(4, 4, 0.0).unwrap(), vec![]).unwrap();
        assert!(matches!(
            collect_observations(&scene, AlphaTransform::LogArea),
            Err(Error::EmptyScene(_))
        ));
    }

    #[test]
    fn single_component_init_is_sample_mean() {
        let o = obs(&[(1.0, 0.1), (3.0, 0.5), (5.0, 0.9)]);
        let m = init_mixture(&o, 1, 0).unwrap();
        assert_eq!(m.components[0].pi, 1.0);
        assert!((m.components[0].mean[0] - 3.0).abs() < 1e-12);
        assert!((m.components[0].mean[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn too_many_components_is_insufficient_data() {
        let o = obs(&[(1.0, 0.1)]);
        assert!(matches!(
            init_mixture(&o, 2, 0),
            Err(Error::InsufficientData { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn identical_components_split_evenly() {
        let comp = GaussianComponent {
            pi: 0.5,
            mean: [1.0, 0.5],
            var: [1.0, 0.1],
        };
        let model = MixtureModel {
            components: vec![comp.clone(), comp],
            loglik_history: vec![],
        };
        let r = e_step(&model, &obs(&[(0.0, 0.0), (4.0, 0.9)]));
        for n in 0..2 {
            assert_eq!(r.row(n), &[0.5, 0.5]);
        }
    }

    #[test]
    fn far_observations_do_not_underflow() {
        let model = MixtureModel {
            components: vec![
                GaussianComponent {
                    pi: 0.5,
                    mean: [0.0, 0.0],
                    var: [1e-6, 1e-6],
                },
                GaussianComponent {
                    pi: 0.5,
                    mean: [1.0, 1.0],
                    var: [1e-6, 1e-6],
                },
            ],
            loglik_history: vec![],
        };
        let r = e_step(&model, &obs(&[(500.0, 0.7)]));
        let s: f64 = r.row(0).iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        assert!(r.row(0).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn uniform_responsibilities_give_global_statistics() {
        let o = obs(&[(1.0, 0.1), (2.0, 0.4), (6.0, 0.8), (3.0, 0.3)]);
        let resp = Responsibilities::from_rows(vec![vec![0.5, 0.5]; 4]).unwrap();
        let m = m_step(&o, &resp).unwrap();
        let (mean, var) = global_stats(&o);
        for c in &m.components {
            assert!((c.pi - 0.5).abs() < 1e-12);
            for d in 0..2 {
                assert!((c.mean[d] - mean[d]).abs() < 1e-12);
                assert!((c.var[d] - var[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_component_is_reseeded() {
        let o = obs(&[(1.0, 0.1), (1.1, 0.2), (5.0, 0.9)]);
        let resp =
            Responsibilities::from_rows(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]])
                .unwrap();
        let m = m_step(&o, &resp).unwrap();
        let total: f64 = m.components.iter().map(|c| c.pi).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(m.components[1].pi > 0.0);
    }

    #[test]
    fn single_component_converges_quickly() {
        let o = obs(&[(1.0, 0.1), (2.0, 0.4), (6.0, 0.8), (3.0, 0.3)]);
        let (m, r) = fit_em(&o, 1, EmOptions::default(), 0).unwrap();
        assert!(m.loglik_history.len() <= 2);
        assert!(r.data.iter().all(|&v| v == 1.0));
        let (mean, _) = global_stats(&o);
        assert!((m.components[0].mean[0] - mean[0]).abs() < 1e-12);
    }

    #[test]
    fn infinite_tolerance_runs_one_iteration() {
        let o = obs(&[(1.0, 0.1), (2.0, 0.4), (6.0, 0.8), (3.0, 0.3)]);
        let opts = EmOptions {
            tol: f64::INFINITY,
            max_iter: 100,
        };
        let (m, _) = fit_em(&o, 2, opts, 0).unwrap();
        assert_eq!(m.loglik_history.len(), 1);
    }

    #[test]
    fn one_observation_selects_one_component() {
        let o = obs(&[(1.0, 0.1)]);
        assert_eq!(select_component_count(&o, 6, EmOptions::default(), 0).unwrap(), 1);
    }

    #[test]
    fn symmetric_components_cut_at_midpoint() {
        let a = GaussianComponent {
            pi: 0.5,
            mean: [0.0, 0.2],
            var: [1.0, 0.01],
        };
        let b = GaussianComponent {
            pi: 0.5,
            mean: [0.0, 0.6],
            var: [1.0, 0.01],
        };
        assert!((band_boundary(&a, &b) - 0.4).abs() < 1e-9);
    }

    #[test]
    fn weighted_boundary_moves_toward_lighter_component() {
        let heavy = GaussianComponent {
            pi: 0.8,
            mean: [0.0, 0.2],
            var: [1.0, 0.01],
        };
        let light = GaussianComponent {
            pi: 0.2,
            mean: [0.0, 0.6],
            var: [1.0, 0.01],
        };
        let v = band_boundary(&heavy, &light);
        assert!(v > 0.4 && v < 0.6);
        let lhs = heavy.log_weighted_v_density(v);
        let rhs = light.log_weighted_v_density(v);
        assert!((lhs - rhs).abs() < 1e-6);
    }

    #[test]
    fn single_band_covers_everything() {
        let img = ImageGrid::filled(10, 40, 0.0).unwrap();
        let anns = vec![
            InstanceAnnotation::new(2.0, 5.0, 2.0, 2.0).unwrap(),
            InstanceAnnotation::new(4.0, 30.0, 4.0, 4.0).unwrap(),
        ];
        let scene = Scene::new("s", img, anns).unwrap();
        let o = collect_observations(&scene, AlphaTransform::LogArea).unwrap();
        let (m, r) = fit_em(&o, 1, EmOptions::default(), 0).unwrap();
        let bands = decouple(&m, &r, &scene).unwrap();
        assert_eq!(bands.len(), 1);
        assert_eq!((bands[0].v_lo, bands[0].v_hi), (0, 40));
        assert_eq!(bands[0].member_indices, vec![0, 1]);
        assert_eq!(bands[0].mean_scale, 10.0);
    }

    #[test]
    fn empty_band_borrows_nearest_scale() {
        let img = ImageGrid::filled(10, 30, 0.0).unwrap();
        let anns = vec![
            InstanceAnnotation::new(2.0, 5.0, 2.0, 2.0).unwrap(),
            InstanceAnnotation::new(4.0, 25.0, 4.0, 4.0).unwrap(),
        ];
        let scene = Scene::new("s", img, anns).unwrap();
        let model = MixtureModel {
            components: (0..3)
                .map(|k| GaussianComponent {
                    pi: 1.0 / 3.0,
                    mean: [1.0, 0.2 + 0.3 * k as f64],
                    var: [1.0, 0.01],
                })
                .collect(),
            loglik_history: vec![],
        };
        let resp =
            Responsibilities::from_rows(vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let bands = decouple(&model, &resp, &scene).unwrap();
        assert_eq!(bands.len(), 3);
        assert!(bands[1].member_indices.is_empty());
        assert_eq!(bands[1].mean_scale, 4.0);
        assert_eq!(bands.iter().map(|b| b.v_hi - b.v_lo).sum::<usize>(), 30);
    }
}
