use gmscope::eval::{evaluate_scene, EvalOptions};
use gmscope::io::load_scenes;
use gmscope::locator::gt_binary_map;
use gmscope::pipeline::{evaluate_locator, plan_scene, PlanOptions};
use gmscope::scope::{scope_predict, ScopePlan};
use gmscope::synth::{build_benchmark, generate_benchmark, generate_scene, Splits, SynthConfig};
use gmscope::{ImageGrid, PixelMap, Scene};

fn oracle_for(scene: &Scene) -> impl Fn(&ImageGrid) -> PixelMap + Sync + '_ {
    let gt = gt_binary_map(scene);
    move |_img: &ImageGrid| gt.clone()
}

#[test]
fn ground_truth_map_scores_near_perfect() {
    let (scene, _) = generate_scene(&SynthConfig::strong_shift(), "s", 3).unwrap();
    let gt = gt_binary_map(&scene);
    let e = evaluate_scene(&scene.id, &gt, &scene.annotations, &EvalOptions::default()).unwrap();
    // overlapping boxes can merge into one component
    assert!(e.rates().precision > 0.95, "{:?}", e);
    assert!(e.rates().recall > 0.85, "{:?}", e);
}

#[test]
fn strong_shift_plan_orders_factors_by_band() {
    let (scene, _) = generate_scene(&SynthConfig::strong_shift(), "s", 5).unwrap();
    let plan = plan_scene(&scene, &PlanOptions::default()).unwrap().plan;
    assert_eq!(plan.height(), scene.height());
    assert!(plan.bands.len() >= 2);
    // small heads sit at the top, so their band is zoomed in and the bottom band zoomed out
    assert!(plan.factors[0] > 1.0);
    assert!(*plan.factors.last().unwrap() < 1.0);
    let back = ScopePlan::from_file(&plan.to_file()).unwrap();
    assert_eq!(back.factors, plan.factors);
}

#[test]
fn benchmark_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::strong_shift();
    let bench = generate_benchmark(dir.path(), &cfg, 2, 1, 1, 42).unwrap();
    let splits = Splits::load(dir.path()).unwrap();
    assert_eq!(splits, bench.splits);
    let loaded = load_scenes(dir.path(), &splits.train).unwrap();
    for (a, b) in loaded.iter().zip(&bench.train) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.image, b.image);
        assert_eq!(a.annotations.len(), b.annotations.len());
        for (x, y) in a.annotations.iter().zip(&b.annotations) {
            assert_eq!((x.cx, x.cy, x.w, x.h), (y.cx, y.cy, y.w, y.h));
        }
    }
    let again = build_benchmark(&cfg, &bench.splits, 42).unwrap();
    assert_eq!(again.test[0].image, bench.test[0].image);
}

#[test]
fn evaluation_through_identity_plans_matches_direct() {
    let cfg = SynthConfig::strong_shift();
    let bench = build_benchmark(&cfg, &Splits::new(0, 0, 3), 8).unwrap();
    for scene in &bench.test {
        let loc = oracle_for(scene);
        let direct = evaluate_locator(&loc, std::slice::from_ref(scene), None, &EvalOptions::default()).unwrap();
        let plans = vec![ScopePlan::identity(scene.height())];
        let scoped = evaluate_locator(&loc, std::slice::from_ref(scene), Some(&plans), &EvalOptions::default()).unwrap();
        assert_eq!(direct.0, scoped.0);
        let via = scope_predict(&scene.image, &plans[0], &loc).unwrap();
        assert_eq!(via, gt_binary_map(scene));
    }
}
