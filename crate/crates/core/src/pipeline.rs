//! Glue between fitting, planning, prediction and evaluation for whole scenes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{aggregate, evaluate_scene, EvalOptions, MetricsReport, SceneEval};
use crate::gmm::{
    collect_observations, decouple, fit_em, select_component_count, AlphaTransform, EmOptions,
    MixtureModel, Responsibilities,
};
use crate::locator::Locator;
use crate::scope::{plan_scope_with, scope_predict, FactorRule, ScopeOptions, ScopePlan};
use crate::seed::derive_seed;
use crate::types::{PixelMap, Scene};

pub const DEFAULT_C_MAX: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    /// Fixed component count; `None` selects by BIC up to `c_max`.
    pub components: Option<usize>,
    pub c_max: usize,
    pub transform: AlphaTransform,
    pub tol: f64,
    pub max_iter: usize,
    pub scope: ScopeOptions,
    pub seed: u64,
}

impl Default for PlanOptions {
    fn default() -> Self {
        let em = EmOptions::default();
        Self {
            components: None,
            c_max: DEFAULT_C_MAX,
            transform: AlphaTransform::LogArea,
            tol: em.tol,
            max_iter: em.max_iter,
            scope: ScopeOptions::default(),
            seed: 0,
        }
    }
}

impl PlanOptions {
    pub fn em(&self) -> EmOptions {
        EmOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

/// Fits the scene's scale mixture, picking the component count by BIC unless pinned.
pub fn fit_scene(scene: &Scene, opts: &PlanOptions) -> Result<(MixtureModel, Responsibilities)> {
    let obs = collect_observations(scene, opts.transform)?;
    let seed = derive_seed(opts.seed, &scene.id, "em");
    let c = match opts.components {
        Some(c) => c.min(obs.len()),
        None => select_component_count(&obs, opts.c_max, opts.em(), seed)?,
    };
    fit_em(&obs, c, opts.em(), seed)
}

#[derive(Debug, Clone)]
pub struct ScenePlan {
    pub mixture: MixtureModel,
    pub plan: ScopePlan,
}

pub fn plan_scene(scene: &Scene, opts: &PlanOptions) -> Result<ScenePlan> {
    let (mixture, resp) = fit_scene(scene, opts)?;
    let bands = decouple(&mixture, &resp, scene)?;
    let areas: Vec<f64> = scene.annotations.iter().map(|a| a.scale()).collect();
    let member_areas = (opts.scope.rule == FactorRule::Verbatim).then_some(areas.as_slice());
    let plan = plan_scope_with(bands, opts.scope, member_areas)?;
    Ok(ScenePlan { mixture, plan })
}

/// Binary prediction for a scene, optionally through a scope plan.
pub fn predict_scene<L: Locator + ?Sized>(locator: &L, scene: &Scene, plan: Option<&ScopePlan>) -> Result<PixelMap> {
    match plan {
        Some(p) => scope_predict(&scene.image, p, locator),
        None => Ok(locator.predict_binary(&scene.image)),
    }
}

/// Evaluates a locator on scenes; `plans[i]` (when given) scopes scene `i`.
pub fn evaluate_locator<L: Locator + Sync + ?Sized>(
    locator: &L,
    scenes: &[Scene],
    plans: Option<&[ScopePlan]>,
    opts: &EvalOptions,
) -> Result<(MetricsReport, Vec<SceneEval>)> {
    let per_scene: Vec<SceneEval> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let binary = predict_scene(locator, scene, plans.map(|p| &p[i]))?;
            evaluate_scene(&scene.id, &binary, &scene.annotations, opts)
        })
        .collect::<Result<_>>()?;
    Ok((aggregate(&per_scene)?, per_scene))
}

/// Plans for every scene, in order.
pub fn plan_scenes(scenes: &[Scene], opts: &PlanOptions) -> Result<Vec<ScopePlan>> {
    scenes
        .par_iter()
        .map(|s| plan_scene(s, opts).map(|p| p.plan))
        .collect()
}
