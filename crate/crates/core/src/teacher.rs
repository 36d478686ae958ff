//! Student/teacher training.
//!
//! The student sees original images. In the teacher arms an EMA copy of the
//! student predicts a binary target for every training scene (through the
//! scene's scope plan in the scoped arm) and the student is additionally
//! pulled toward that target by the consistency loss.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::locator::{
    extract_features, gt_binary_map, predict_binary_from, scene_gradients, AdamState, FeatureStack, Gradients,
    LocatorParams, LossReport, FEATURE_COUNT,
};
use crate::pipeline::{evaluate_locator, plan_scene, PlanOptions};
use crate::scope::{scope_features, ScopeOptions};
use crate::seed::derive_seed;
use crate::types::{ImageGrid, PixelMap, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    Baseline,
    PlainTeacher,
    /// Baseline training; scope plans are applied only when evaluating.
    GmsInference,
    Scoped,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Baseline, Arm::PlainTeacher, Arm::GmsInference, Arm::Scoped];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::PlainTeacher => "plain-teacher",
            Arm::GmsInference => "gms-inference",
            Arm::Scoped => "scoped",
        }
    }

    pub fn uses_teacher(self) -> bool {
        matches!(self, Arm::PlainTeacher | Arm::Scoped)
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid("arm", format!("unknown arm {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalWith {
    #[default]
    Teacher,
    Student,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_conf: f64,
    pub lr_thr: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub lr_decay: f64,
    pub ema_m: f64,
    pub optimal_scale: f64,
    pub c_max: usize,
    /// Pins the mixture component count instead of selecting it by BIC.
    pub components: Option<usize>,
    pub consistency_weight: f64,
    pub optimizer: Optimizer,
    /// Standard deviation of the random initial weights.
    pub init_scale: f64,
    pub seed: u64,
    pub eval_with: EvalWith,
    pub min_area: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            lr_conf: 0.05,
            lr_thr: 0.005,
            lr_decay: 0.99,
            ema_m: 0.999,
            optimal_scale: crate::scope::DEFAULT_OPTIMAL_SCALE,
            c_max: crate::pipeline::DEFAULT_C_MAX,
            components: None,
            consistency_weight: 1.0,
            optimizer: Optimizer::Adam,
            init_scale: 0.01,
            seed: 0,
            eval_with: EvalWith::Teacher,
            min_area: crate::eval::DEFAULT_MIN_AREA,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ema_m) {
            return Err(Error::Domain {
                what: "ema_m",
                value: self.ema_m,
            });
        }
        for (what, v) in [
            ("lr_conf", self.lr_conf),
            ("lr_thr", self.lr_thr),
            ("lr_decay", self.lr_decay),
            ("optimal_scale", self.optimal_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain { what, value: v });
            }
        }
        if self.epochs == 0 || self.batch_size == 0 || self.c_max == 0 {
            return Err(Error::invalid("train config", "epochs, batch_size and c_max must be positive"));
        }
        if !(self.consistency_weight >= 0.0) || !(self.init_scale >= 0.0) {
            return Err(Error::invalid("train config", "weights must be non-negative"));
        }
        Ok(())
    }

    pub fn plan_options(&self) -> PlanOptions {
        PlanOptions {
            components: self.components,
            c_max: self.c_max,
            scope: ScopeOptions::with_optimal_scale(self.optimal_scale),
            seed: self.seed,
            ..PlanOptions::default()
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            min_area: self.min_area,
            ..EvalOptions::default()
        }
    }
}

/// `m * teacher + (1 - m) * student`, element-wise; bumps the teacher's version.
pub fn ema_update(teacher: &LocatorParams, student: &LocatorParams, m: f64) -> Result<LocatorParams> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::Domain { what: "ema_m", value: m });
    }
    if teacher.conf_weights.len() != student.conf_weights.len()
        || teacher.thr_weights.len() != student.thr_weights.len()
    {
        return Err(Error::Shape("teacher and student weight vectors differ".into()));
    }
    let mix = |t: &[f64], s: &[f64]| -> Vec<f64> { t.iter().zip(s).map(|(a, b)| m * a + (1.0 - m) * b).collect() };
    Ok(LocatorParams {
        schema_version: teacher.schema_version,
        conf_weights: mix(&teacher.conf_weights, &student.conf_weights),
        thr_weights: mix(&teacher.thr_weights, &student.thr_weights),
        version: teacher.version + 1,
    })
}

/// Single forward pass at the original resolution.
pub fn infer(params: &LocatorParams, img: &ImageGrid) -> PixelMap {
    use crate::locator::Locator;
    params.predict_binary(img)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub seg: f64,
    pub consis: f64,
    pub total: f64,
    pub val_f1: f64,
    pub student_version: u64,
    pub teacher_version: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub arm: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,seg,consis,total,val_f1\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{:.9},{:.9},{:.9},{:.6}", e.epoch, e.seg, e.consis, e.total, e.val_f1);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation checkpoint.
    pub student: LocatorParams,
    pub teacher: LocatorParams,
    pub history: TrainHistory,
}

impl TrainOutcome {
    pub fn eval_params(&self, with: EvalWith) -> &LocatorParams {
        match with {
            EvalWith::Teacher => &self.teacher,
            EvalWith::Student => &self.student,
        }
    }
}

pub fn initial_params(cfg: &TrainConfig) -> LocatorParams {
    let mut p = LocatorParams::zeros();
    if cfg.init_scale > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "", "init"));
        let normal = Normal::new(0.0, cfg.init_scale).expect("positive scale");
        for w in p.conf_weights[..FEATURE_COUNT].iter_mut().chain(&mut p.thr_weights[..FEATURE_COUNT]) {
            *w = normal.sample(&mut rng);
        }
    }
    p
}

struct Prepared<'a> {
    scene: &'a Scene,
    gt: PixelMap,
    features: FeatureStack,
    /// Teacher input features: `None` outside the teacher arms, the scene's
    /// own features for the plain teacher, scoped features otherwise.
    teacher: Option<TeacherInput>,
}

enum TeacherInput {
    Direct,
    Scoped(FeatureStack),
}

fn prepare<'a>(arm: Arm, train: &'a [Scene], cfg: &TrainConfig) -> Result<Vec<Prepared<'a>>> {
    let opts = cfg.plan_options();
    let usable: Vec<&Scene> = train
        .iter()
        .filter(|s| {
            let skip = arm.uses_teacher() && s.annotations.is_empty();
            if skip {
                log::warn!("{}: no annotations, excluded from teacher training", s.id);
            }
            !skip
        })
        .collect();
    let out: Vec<Prepared<'a>> = usable
        .par_iter()
        .map(|&scene| {
            let teacher = match arm {
                Arm::PlainTeacher => Some(TeacherInput::Direct),
                Arm::Scoped => {
                    let plan = plan_scene(scene, &opts)?.plan;
                    Some(TeacherInput::Scoped(scope_features(&scene.image, &plan)?))
                }
                _ => None,
            };
            Ok(Prepared {
                scene,
                gt: gt_binary_map(scene),
                features: extract_features(&scene.image),
                teacher,
            })
        })
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::invalid("training split", "no usable scenes"));
    }
    Ok(out)
}

fn batch_step(
    student: &LocatorParams,
    teacher: &LocatorParams,
    batch: &[&Prepared<'_>],
    weight: f64,
) -> Result<Gradients> {
    let per_scene: Vec<Gradients> = batch
        .par_iter()
        .map(|p| {
            // teacher features are fixed, so this equals scope_predict with the current teacher
            let target = p.teacher.as_ref().map(|t| match t {
                TeacherInput::Direct => predict_binary_from(teacher, &p.features),
                TeacherInput::Scoped(f) => predict_binary_from(teacher, f),
            });
            let g = scene_gradients(student, &p.features, &p.gt, target.as_ref(), weight)?;
            if !g.conf.iter().chain(&g.thr).all(|v| v.is_finite()) {
                return Err(Error::NonFiniteGradient(p.scene.id.clone()));
            }
            Ok(g)
        })
        .collect::<Result<_>>()?;
    let n = per_scene.len() as f64;
    let mut total = Gradients {
        conf: vec![0.0; FEATURE_COUNT + 1],
        thr: vec![0.0; FEATURE_COUNT + 1],
        loss: LossReport::default(),
    };
    for g in &per_scene {
        for (a, b) in total.conf.iter_mut().zip(&g.conf) {
            *a += b / n;
        }
        for (a, b) in total.thr.iter_mut().zip(&g.thr) {
            *a += b / n;
        }
        total.loss.seg_loss += g.loss.seg_loss / n;
        total.loss.consis_loss += g.loss.consis_loss / n;
        total.loss.total += g.loss.total / n;
    }
    Ok(total)
}

/// Trains one ablation arm and returns the checkpoint with the best validation F1.
pub fn train_arm(arm: Arm, train: &[Scene], val: &[Scene], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_arm_with(arm, train, val, cfg, |_, _, _| Ok(()))
}

/// As [`train_arm`], calling `on_epoch(record, student, teacher)` after every epoch.
pub fn train_arm_with<F>(
    arm: Arm,
    train: &[Scene],
    val: &[Scene],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord, &LocatorParams, &LocatorParams) -> Result<()>,
{
    cfg.validate()?;
    if val.is_empty() {
        return Err(Error::invalid("validation split", "empty"));
    }
    let prepared = prepare(arm, train, cfg)?;
    let weight = if arm.uses_teacher() { cfg.consistency_weight } else { 0.0 };
    let mut student = initial_params(cfg);
    let mut teacher = student.clone();
    let mut adam = AdamState::default();
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let eval_opts = cfg.eval_options();
    let mut history = TrainHistory {
        arm: arm.name().to_string(),
        ..TrainHistory::default()
    };
    let mut best: Option<(f64, LocatorParams, LocatorParams)> = None;
    for epoch in 0..cfg.epochs {
        let decay = cfg.lr_decay.powi(epoch as i32);
        let (lr_conf, lr_thr) = (cfg.lr_conf * decay, cfg.lr_thr * decay);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &epoch.to_string(), "shuffle"));
        order.shuffle(&mut rng);
        let mut sums = LossReport::default();
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Prepared<'_>> = chunk.iter().map(|&i| &prepared[i]).collect();
            let g = batch_step(&student, &teacher, &batch, weight)?;
            match cfg.optimizer {
                Optimizer::Adam => adam.apply(&mut student, &g, lr_conf, lr_thr),
                Optimizer::Sgd => {
                    for (w, d) in student.conf_weights.iter_mut().zip(&g.conf) {
                        *w -= lr_conf * d;
                    }
                    for (w, d) in student.thr_weights.iter_mut().zip(&g.thr) {
                        *w -= lr_thr * d;
                    }
                    student.version += 1;
                }
            }
            if arm.uses_teacher() {
                teacher = ema_update(&teacher, &student, cfg.ema_m)?;
            }
            sums.seg_loss += g.loss.seg_loss;
            sums.consis_loss += g.loss.consis_loss;
            sums.total += g.loss.total;
            batches += 1;
        }
        if !arm.uses_teacher() {
            // without a teacher the "teacher" slot tracks the student
            teacher = LocatorParams {
                version: teacher.version,
                ..student.clone()
            };
        }
        let eval_params = match cfg.eval_with {
            EvalWith::Teacher => &teacher,
            EvalWith::Student => &student,
        };
        let (report, _) = evaluate_locator(eval_params, val, None, &eval_opts)?;
        let val_f1 = report.rates.f1;
        let n = batches as f64;
        history.epochs.push(EpochRecord {
            epoch,
            seg: sums.seg_loss / n,
            consis: sums.consis_loss / n,
            total: sums.total / n,
            val_f1,
            student_version: student.version,
            teacher_version: teacher.version,
        });
        log::info!(
            "{} epoch {epoch}: seg {:.5} consis {:.5} val F1 {:.4}",
            arm.name(),
            sums.seg_loss / n,
            sums.consis_loss / n,
            val_f1
        );
        on_epoch(history.epochs.last().expect("just pushed"), &student, &teacher)?;
        if best.as_ref().is_none_or(|b| val_f1 > b.0) {
            best = Some((val_f1, student.clone(), teacher.clone()));
            history.best_epoch = epoch;
        }
    }
    let (_, student, teacher) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        student,
        teacher,
        history,
    })
}

pub fn train_baseline(train: &[Scene], val: &[Scene], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_arm(Arm::Baseline, train, val, cfg)
}

pub fn train_scoped(train: &[Scene], val: &[Scene], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_arm(Arm::Scoped, train, val, cfg)
}
