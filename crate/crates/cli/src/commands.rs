use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use gmscope::eval::{
    EvalOptions, MatchStrategy, MetricsReport, SceneEval, MATCH_RADIUS_CONVENTION, SCALE_BIN_EDGES,
};
use gmscope::gmm::{AlphaTransform, MixtureModel};
use gmscope::io::{load_scenes, read_json, write_json};
use gmscope::locator::LocatorParams;
use gmscope::pipeline::{evaluate_locator, fit_scene, plan_scene, plan_scenes, PlanOptions};
use gmscope::scope::{FactorRule, ScopeOptions, ScopePlan};
use gmscope::synth::{build_benchmark, write_benchmark, Splits, SynthConfig};
use gmscope::teacher::{train_arm_with, Arm, EvalWith, Optimizer, TrainConfig};
use gmscope::Scene;

use crate::{
    ArmArg, Command, EvalArgs, FitArgs, MixtureArgs, OptimizerArg, PlanArgs, Preset, ReportArgs,
    SceneSelection, SynthArgs, TrainArgs, WhichParams,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or config values; nothing was run.
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<gmscope::Error> for Failure {
    fn from(e: gmscope::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Fit(a) => fit(a),
        Command::Plan(a) => plan(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
    }
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> CmdResult<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(usage("--jobs must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .context("building worker pool")?;
            Ok(pool.install(f))
        }
    }
}

fn synth(a: SynthArgs) -> CmdResult {
    let mut cfg = match &a.config {
        Some(path) => read_json::<SynthConfig>(path).map_err(|e| usage(e.to_string()))?,
        None => match a.preset {
            Preset::StrongShift => SynthConfig::strong_shift(),
            Preset::Perspective => SynthConfig::perspective(),
        },
    };
    if let Some(noise) = a.noise {
        cfg.noise = noise;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let splits = Splits::new(a.n_train, a.n_val, a.n_test);
    let bench = with_jobs(a.jobs, || build_benchmark(&cfg, &splits, a.seed))??;
    write_benchmark(&a.out, &cfg, &bench)?;
    log::info!(
        "wrote {} scenes to {}",
        splits.all().count(),
        a.out.display()
    );
    Ok(())
}

fn load_selection(sel: &SceneSelection) -> CmdResult<Vec<Scene>> {
    let splits = Splits::load(&sel.data)?;
    let ids: Vec<String> = if sel.split == "all" {
        splits.all().cloned().collect()
    } else {
        splits.get(&sel.split).map_err(|e| usage(e.to_string()))?.to_vec()
    };
    Ok(load_scenes(&sel.data, &ids)?)
}

fn plan_options(m: &MixtureArgs, scope: ScopeOptions) -> CmdResult<PlanOptions> {
    if m.components == Some(0) || m.c_max == 0 {
        return Err(usage("component counts must be at least 1"));
    }
    Ok(PlanOptions {
        components: m.components,
        c_max: m.c_max,
        transform: if m.raw_alpha {
            AlphaTransform::RawArea
        } else {
            AlphaTransform::LogArea
        },
        scope,
        seed: m.seed,
        ..PlanOptions::default()
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct FitRecord {
    schema_version: u32,
    id: String,
    alpha_transform: AlphaTransform,
    component_count: usize,
    bic: f64,
    mixture: MixtureModel,
}

fn fit(a: FitArgs) -> CmdResult {
    let opts = plan_options(&a.mixture, ScopeOptions::default())?;
    let scenes = load_selection(&a.scenes)?;
    let records: Vec<Option<FitRecord>> = with_jobs(a.scenes.jobs, || {
        scenes
            .par_iter()
            .map(|s| {
                if s.annotations.is_empty() {
                    log::warn!("{}: no annotations, skipped", s.id);
                    return Ok(None);
                }
                let (mixture, _) = fit_scene(s, &opts)?;
                let obs = gmscope::gmm::collect_observations(s, opts.transform)?;
                Ok(Some(FitRecord {
                    schema_version: SCHEMA_VERSION,
                    id: s.id.clone(),
                    alpha_transform: opts.transform,
                    component_count: mixture.len(),
                    bic: mixture.bic(&obs),
                    mixture,
                }))
            })
            .collect::<gmscope::Result<_>>()
    })??;
    for r in records.iter().flatten() {
        write_json(&a.out.join(format!("{}.json", r.id)), r)?;
    }
    Ok(())
}

fn plan(a: PlanArgs) -> CmdResult {
    if !(a.optimal_scale > 0.0 && a.optimal_scale.is_finite()) {
        return Err(usage("--optimal-scale must be positive"));
    }
    let scope = ScopeOptions {
        rule: if a.verbatim_factor {
            FactorRule::Verbatim
        } else {
            FactorRule::AreaToLinear
        },
        ..ScopeOptions::with_optimal_scale(a.optimal_scale)
    };
    let opts = plan_options(&a.mixture, scope)?;
    let scenes = load_selection(&a.scenes)?;
    let plans: Vec<ScopePlan> = with_jobs(a.scenes.jobs, || {
        scenes
            .par_iter()
            .map(|s| {
                if s.annotations.is_empty() {
                    log::warn!("{}: no annotations, identity plan", s.id);
                    let mut p = ScopePlan::identity(s.height());
                    p.optimal_scale = a.optimal_scale;
                    return Ok(p);
                }
                plan_scene(s, &opts).map(|p| p.plan)
            })
            .collect::<gmscope::Result<_>>()
    })??;
    for (s, p) in scenes.iter().zip(&plans) {
        let file = p.to_file();
        // reject anything that does not tile the image before it reaches disk
        let back = ScopePlan::from_file(&file)?;
        if back.height() != s.height() {
            return Err(anyhow::anyhow!("{}: plan covers {} of {} rows", s.id, back.height(), s.height()).into());
        }
        write_json(&a.out.join(format!("{}.json", s.id)), &file)?;
    }
    Ok(())
}

fn arm_of(a: ArmArg) -> Arm {
    match a {
        ArmArg::Baseline => Arm::Baseline,
        ArmArg::PlainTeacher => Arm::PlainTeacher,
        ArmArg::GmsInference => Arm::GmsInference,
        ArmArg::Scoped => Arm::Scoped,
    }
}

fn which(w: WhichParams) -> EvalWith {
    match w {
        WhichParams::Teacher => EvalWith::Teacher,
        WhichParams::Student => EvalWith::Student,
    }
}

/// What `train` leaves in a run directory besides weights and history.
#[derive(Debug, Serialize, Deserialize)]
struct RunRecord {
    schema_version: u32,
    arm: Arm,
    config: TrainConfig,
    best_epoch: usize,
}

fn resolve_train_config(a: &TrainArgs) -> CmdResult<TrainConfig> {
    let mut cfg = match &a.config {
        Some(path) => read_json::<TrainConfig>(path).map_err(|e| usage(e.to_string()))?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { cfg.$field = v; } )* };
    }
    set!(seed, epochs, batch_size, lr_conf, lr_thr, lr_decay, ema_m, optimal_scale, c_max, consistency_weight);
    if a.components.is_some() {
        cfg.components = a.components;
    }
    if let Some(o) = a.optimizer {
        cfg.optimizer = match o {
            OptimizerArg::Sgd => Optimizer::Sgd,
            OptimizerArg::Adam => Optimizer::Adam,
        };
    }
    if let Some(w) = a.eval_with {
        cfg.eval_with = which(w);
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if cfg.components == Some(0) {
        return Err(usage("--components must be at least 1"));
    }
    if a.checkpoint_every == Some(0) {
        return Err(usage("--checkpoint-every must be at least 1"));
    }
    Ok(cfg)
}

fn train(a: TrainArgs) -> CmdResult {
    let cfg = resolve_train_config(&a)?;
    let arm = arm_of(a.arm);
    let splits = Splits::load(&a.data)?;
    let train = load_scenes(&a.data, &splits.train)?;
    let val = load_scenes(&a.data, &splits.val)?;
    let ckpt_dir = a.out.join("checkpoints");
    let outcome = train_arm_with(arm, &train, &val, &cfg, |rec, student, teacher| {
        if let Some(n) = a.checkpoint_every {
            if (rec.epoch + 1) % n == 0 {
                write_json(&ckpt_dir.join(format!("epoch_{:04}_student.json", rec.epoch)), student)?;
                write_json(&ckpt_dir.join(format!("epoch_{:04}_teacher.json", rec.epoch)), teacher)?;
            }
        }
        Ok(())
    })?;
    write_json(&a.out.join("student.json"), &outcome.student)?;
    write_json(&a.out.join("teacher.json"), &outcome.teacher)?;
    write_json(&a.out.join("history.json"), &outcome.history)?;
    fs::write(a.out.join("history.csv"), outcome.history.to_csv())
        .with_context(|| format!("writing {}", a.out.join("history.csv").display()))?;
    write_json(
        &a.out.join("run.json"),
        &RunRecord {
            schema_version: SCHEMA_VERSION,
            arm,
            config: cfg,
            best_epoch: outcome.history.best_epoch,
        },
    )?;
    Ok(())
}

struct LoadedRun {
    record: RunRecord,
    student: LocatorParams,
    teacher: LocatorParams,
}

impl LoadedRun {
    fn load(dir: &Path) -> CmdResult<Self> {
        let record: RunRecord = read_json(&dir.join("run.json"))?;
        let student: LocatorParams = read_json(&dir.join("student.json"))?;
        let teacher: LocatorParams = read_json(&dir.join("teacher.json"))?;
        student.validate()?;
        teacher.validate()?;
        Ok(Self {
            record,
            student,
            teacher,
        })
    }

    fn params(&self, with: EvalWith) -> &LocatorParams {
        match with {
            EvalWith::Teacher => &self.teacher,
            EvalWith::Student => &self.student,
        }
    }

    fn plan_options(&self, optimal_scale: f64) -> PlanOptions {
        let mut opts = self.record.config.plan_options();
        opts.scope = ScopeOptions::with_optimal_scale(optimal_scale);
        opts
    }
}

fn load_split(data: &Path, split: &str) -> CmdResult<Vec<Scene>> {
    let splits = Splits::load(data)?;
    let ids = splits.get(split).map_err(|e| usage(e.to_string()))?;
    Ok(load_scenes(data, ids)?)
}

fn evaluate(
    run: &LoadedRun,
    with: EvalWith,
    scenes: &[Scene],
    gms_scale: Option<f64>,
    opts: &EvalOptions,
) -> gmscope::Result<(MetricsReport, Vec<SceneEval>)> {
    let plans = match gms_scale {
        Some(scale) => Some(plan_scenes(scenes, &run.plan_options(scale))?),
        None => None,
    };
    evaluate_locator(run.params(with), scenes, plans.as_deref(), opts)
}

#[derive(Debug, Serialize)]
struct EvalReport {
    schema_version: u32,
    arm: Arm,
    split: String,
    with_gms: bool,
    optimal_scale: Option<f64>,
    eval_with: EvalWith,
    match_strategy: MatchStrategy,
    match_radius: &'static str,
    min_area: usize,
    scale_bin_edges: [f64; 5],
    scale_bin_labels: [&'static str; 6],
    metrics: MetricsReport,
    bin_recall: Vec<Option<f64>>,
}

const BIN_LABELS: [&str; 6] = [
    "A0 [1,10]",
    "A1 (10,100]",
    "A2 (100,1e3]",
    "A3 (1e3,1e4]",
    "A4 (1e4,1e5]",
    "A5 >1e5",
];

fn scene_csv(rows: &[SceneEval]) -> String {
    let mut out = String::from("id,gt,pred,tp,fp,fn,precision,recall,f1\n");
    for r in rows {
        let rates = r.rates();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{:.6},{:.6}",
            r.id, r.gt_count, r.pred_count, r.tp, r.fp, r.fn_, rates.precision, rates.recall, rates.f1
        );
    }
    out
}

fn eval(a: EvalArgs) -> CmdResult {
    if a.optimal_scale.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
        return Err(usage("--optimal-scale must be positive"));
    }
    let run = LoadedRun::load(&a.run)?;
    let with = a.eval_with.map(which).unwrap_or(run.record.config.eval_with);
    let with_gms = a.with_gms || run.record.arm == Arm::GmsInference;
    let scale = a.optimal_scale.unwrap_or(run.record.config.optimal_scale);
    let opts = EvalOptions {
        min_area: a.min_area.unwrap_or(run.record.config.min_area),
        strategy: if a.optimal_assignment {
            MatchStrategy::Optimal
        } else {
            MatchStrategy::Greedy
        },
    };
    let scenes = load_split(&a.data, &a.split)?;
    let gms_scale = with_gms.then_some(scale);
    let (metrics, per_scene) = with_jobs(a.jobs, || evaluate(&run, with, &scenes, gms_scale, &opts))??;
    let report = EvalReport {
        schema_version: SCHEMA_VERSION,
        arm: run.record.arm,
        split: a.split.clone(),
        with_gms,
        optimal_scale: gms_scale,
        eval_with: with,
        match_strategy: opts.strategy,
        match_radius: MATCH_RADIUS_CONVENTION,
        min_area: opts.min_area,
        scale_bin_edges: SCALE_BIN_EDGES,
        scale_bin_labels: BIN_LABELS,
        bin_recall: metrics.bin_recalls().to_vec(),
        metrics,
    };
    match &a.out {
        Some(path) => write_json(path, &report)?,
        None => {
            use std::io::Write as _;
            let text = serde_json::to_string_pretty(&report).context("serializing report")?;
            let mut out = std::io::stdout().lock();
            if let Err(e) = writeln!(out, "{text}") {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(anyhow::Error::from(e).context("writing report").into());
                }
            }
        }
    }
    if let Some(path) = &a.csv {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(path, scene_csv(&per_scene)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn report(a: ReportArgs) -> CmdResult {
    if a.sweep.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(usage("sweep scales must be positive"));
    }
    let scenes = load_split(&a.data, &a.split)?;
    let runs: Vec<(PathBuf, LoadedRun)> = a
        .runs
        .iter()
        .map(|d| LoadedRun::load(d).map(|r| (d.clone(), r)))
        .collect::<CmdResult<_>>()?;
    let opts = EvalOptions::default();
    let mut md = String::new();
    let _ = writeln!(md, "# Ablation on `{}` ({} scenes)\n", a.split, scenes.len());
    let _ = writeln!(
        md,
        "F1, precision and recall in percent. Matching: greedy, {MATCH_RADIUS_CONVENTION}.\n"
    );
    md.push_str("| run | arm | seed | F1 | Pre | Rec | F1 direct | F1 +GMS | dF1 |\n");
    md.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for (dir, run) in &runs {
        let with = run.record.config.eval_with;
        let scale = run.record.config.optimal_scale;
        let (direct, gms) = with_jobs(a.jobs, || -> gmscope::Result<_> {
            let d = evaluate(run, with, &scenes, None, &opts)?.0;
            let g = evaluate(run, with, &scenes, Some(scale), &opts)?.0;
            Ok((d, g))
        })??;
        let own = if run.record.arm == Arm::GmsInference { &gms } else { &direct };
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let _ = writeln!(
            md,
            "| {name} | {} | {} | {} | {} | {} | {} | {} | {:+.2} |",
            run.record.arm.name(),
            run.record.config.seed,
            pct(own.rates.f1),
            pct(own.rates.precision),
            pct(own.rates.recall),
            pct(direct.rates.f1),
            pct(gms.rates.f1),
            100.0 * (gms.rates.f1 - direct.rates.f1)
        );
    }
    let sweep_idx = match &a.sweep_run {
        Some(p) => runs
            .iter()
            .position(|(d, _)| d == p)
            .ok_or_else(|| usage(format!("--sweep-run {} is not among --runs", p.display())))?,
        None => runs
            .iter()
            .position(|(_, r)| matches!(r.record.arm, Arm::Baseline | Arm::GmsInference))
            .unwrap_or(0),
    };
    let (sweep_dir, sweep_run) = &runs[sweep_idx];
    let _ = writeln!(
        md,
        "\n# Optimal-scale sweep\n\nModel from `{}` evaluated through scope plans built at each optimal scale.\n",
        sweep_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    );
    md.push_str("| optimal scale | F1 | Pre | Rec |\n|---|---|---|---|\n");
    for &scale in &a.sweep {
        let with = sweep_run.record.config.eval_with;
        let (m, _) = with_jobs(a.jobs, || evaluate(sweep_run, with, &scenes, Some(scale), &opts))??;
        let _ = writeln!(
            md,
            "| {scale} | {} | {} | {} |",
            pct(m.rates.f1),
            pct(m.rates.precision),
            pct(m.rates.recall)
        );
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(&a.out, md).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}
