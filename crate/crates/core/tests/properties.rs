use gmscope::eval::{extract_instances, f1_metrics, match_points, MatchStrategy};
use gmscope::gmm::{collect_observations, decouple, e_step, fit_em, init_mixture, AlphaTransform, EmOptions};
use gmscope::locator::{binarize, LocatorParams, THRESHOLD_MAX, THRESHOLD_MIN};
use gmscope::resample::{interpolate, resize_map};
use gmscope::scope::{scope_predict, zoom_factor, ScopePlan, SubDistributionBand};
use gmscope::teacher::ema_update;
use gmscope::{ImageGrid, InstanceAnnotation, MapKind, PixelMap, Scene};
use proptest::prelude::*;

fn image_strategy() -> impl Strategy<Value = ImageGrid> {
    (4usize..24, 4usize..24).prop_flat_map(|(w, h)| {
        prop::collection::vec(0.0f64..1.0, w * h).prop_map(move |d| ImageGrid::new(w, h, 1, d).unwrap())
    })
}

fn threshold_locator(img: &ImageGrid) -> PixelMap {
    let data = img.luminance().iter().map(|&v| f64::from(v > 0.5)).collect();
    PixelMap::new(img.width(), img.height(), MapKind::Binary, data).unwrap()
}

fn partition(height: usize, cuts: &[usize]) -> Vec<SubDistributionBand> {
    let mut edges: Vec<usize> = cuts.iter().map(|c| 1 + c % (height - 1)).collect();
    edges.push(0);
    edges.push(height);
    edges.sort_unstable();
    edges.dedup();
    edges
        .windows(2)
        .enumerate()
        .map(|(k, w)| SubDistributionBand {
            component_index: k,
            v_lo: w[0],
            v_hi: w[1],
            member_indices: vec![],
            mean_scale: 100.0,
        })
        .collect()
}

fn scene_strategy() -> impl Strategy<Value = Scene> {
    prop::collection::vec((0.0f64..64.0, 0.0f64..64.0, 1.0f64..20.0), 3..40).prop_map(|heads| {
        let anns = heads
            .into_iter()
            .map(|(x, y, s)| InstanceAnnotation::new(x, y, s, s).unwrap())
            .collect();
        Scene::new("p", ImageGrid::filled(64, 64, 0.0).unwrap(), anns).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unit_factor_plan_reproduces_direct_prediction(img in image_strategy(), cuts in prop::collection::vec(0usize..1000, 0..4)) {
        let bands = partition(img.height(), &cuts);
        let plan = ScopePlan { factors: vec![1.0; bands.len()], bands, optimal_scale: 250.0 };
        let scoped = scope_predict(&img, &plan, &threshold_locator).unwrap();
        let direct = threshold_locator(&img);
        prop_assert_eq!(scoped.data(), direct.data());
    }

    #[test]
    fn scope_output_keeps_the_image_shape(img in image_strategy(), cuts in prop::collection::vec(0usize..1000, 0..4), f in prop::collection::vec(0.3f64..3.0, 5)) {
        let bands = partition(img.height(), &cuts);
        let factors = f[..bands.len()].to_vec();
        let plan = ScopePlan { factors, bands, optimal_scale: 250.0 };
        let out = scope_predict(&img, &plan, &threshold_locator).unwrap();
        prop_assert_eq!((out.width(), out.height()), (img.width(), img.height()));
        prop_assert_eq!(out.kind(), MapKind::Binary);
    }

    #[test]
    fn decoupled_bands_tile_the_rows(scene in scene_strategy(), c in 1usize..4, seed in 0u64..100) {
        let obs = collect_observations(&scene, AlphaTransform::LogArea).unwrap();
        let (model, resp) = fit_em(&obs, c.min(obs.len()), EmOptions::default(), seed).unwrap();
        let bands = decouple(&model, &resp, &scene).unwrap();
        prop_assert_eq!(bands[0].v_lo, 0);
        prop_assert_eq!(bands.last().unwrap().v_hi, scene.height());
        for w in bands.windows(2) {
            prop_assert_eq!(w[0].v_hi, w[1].v_lo);
        }
        prop_assert!(bands.iter().all(|b| b.rows() > 0 && b.mean_scale > 0.0));
        let members: usize = bands.iter().map(|b| b.member_indices.len()).sum();
        prop_assert_eq!(members, scene.annotations.len());
    }

    #[test]
    fn responsibilities_are_distributions(scene in scene_strategy(), c in 1usize..5, seed in 0u64..100) {
        let obs = collect_observations(&scene, AlphaTransform::LogArea).unwrap();
        let model = init_mixture(&obs, c.min(obs.len()), seed).unwrap();
        let resp = e_step(&model, &obs);
        for n in 0..resp.rows() {
            let s: f64 = resp.row(n).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(resp.row(n).iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn em_log_likelihood_never_drops(scene in scene_strategy(), c in 1usize..4, seed in 0u64..100) {
        let obs = collect_observations(&scene, AlphaTransform::LogArea).unwrap();
        let (model, _) = fit_em(&obs, c.min(obs.len()), EmOptions::default(), seed).unwrap();
        for w in model.loglik_history.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-7);
        }
    }

    #[test]
    fn matching_accounts_for_every_point(
        preds in prop::collection::vec((0.0f64..50.0, 0.0f64..50.0), 0..30),
        gts in prop::collection::vec((0.0f64..50.0, 0.0f64..50.0, 1.0f64..10.0), 0..30),
    ) {
        let preds: Vec<[f64; 2]> = preds.into_iter().map(|(x, y)| [x, y]).collect();
        let gts: Vec<InstanceAnnotation> = gts.into_iter().map(|(x, y, s)| InstanceAnnotation::new(x, y, s, s).unwrap()).collect();
        let greedy = match_points(&preds, &gts, MatchStrategy::Greedy);
        let optimal = match_points(&preds, &gts, MatchStrategy::Optimal);
        for m in [&greedy, &optimal] {
            prop_assert_eq!(m.tp() + m.fp.len(), preds.len());
            prop_assert_eq!(m.tp() + m.fn_.len(), gts.len());
            let r = f1_metrics(m);
            prop_assert!((0.0..=1.0).contains(&r.f1));
            for &(p, g) in &m.tp_pairs {
                let d = ((preds[p][0] - gts[g].cx).powi(2) + (preds[p][1] - gts[g].cy).powi(2)).sqrt();
                prop_assert!(d <= gts[g].match_radius());
            }
        }
        prop_assert!(optimal.tp() >= greedy.tp());
    }

    #[test]
    fn binarize_is_f_at_least_t(f in prop::collection::vec(0.0f64..1.0, 16), t in prop::collection::vec(THRESHOLD_MIN..THRESHOLD_MAX, 16)) {
        let fm = PixelMap::new(4, 4, MapKind::Confidence, f.clone()).unwrap();
        let tm = PixelMap::new(4, 4, MapKind::Threshold, t.clone()).unwrap();
        let b = binarize(&fm, &tm).unwrap();
        for i in 0..16 {
            prop_assert_eq!(b.data()[i] == 1.0, f[i] >= t[i]);
        }
    }

    #[test]
    fn instances_cover_at_most_the_foreground(bits in prop::collection::vec(any::<bool>(), 100), min_area in 1usize..4) {
        let map = PixelMap::new(10, 10, MapKind::Binary, bits.iter().map(|&b| f64::from(b)).collect()).unwrap();
        let inst = extract_instances(&map, min_area);
        let area: usize = inst.iter().map(|i| i.area).sum();
        prop_assert!(area <= map.foreground_count());
        if min_area == 1 {
            prop_assert_eq!(area, map.foreground_count());
        }
        for i in &inst {
            prop_assert!(i.area >= min_area);
            prop_assert!((0.0..=10.0).contains(&i.cx) && (0.0..=10.0).contains(&i.cy));
        }
    }

    #[test]
    fn unit_resampling_is_identity(img in image_strategy()) {
        prop_assert_eq!(interpolate(&img, 1.0).unwrap(), img.clone());
        let map = threshold_locator(&img);
        prop_assert_eq!(resize_map(&map, img.width(), img.height()).unwrap(), map);
    }

    #[test]
    fn zoom_factor_stays_in_range(mean in 1.0f64..1e5, opt in 1.0f64..1e4) {
        let g = zoom_factor(mean, opt, 0.25, 4.0).unwrap();
        prop_assert!((0.25..=4.0).contains(&g));
    }

    #[test]
    fn ema_stays_between_teacher_and_student(t in prop::collection::vec(-5.0f64..5.0, 22), s in prop::collection::vec(-5.0f64..5.0, 22), m in 0.0f64..=1.0) {
        let mk = |v: &[f64]| LocatorParams { conf_weights: v[..11].to_vec(), thr_weights: v[11..].to_vec(), ..LocatorParams::zeros() };
        let (tp, sp) = (mk(&t), mk(&s));
        let out = ema_update(&tp, &sp, m).unwrap();
        for ((o, a), b) in out.flat().zip(tp.flat()).zip(sp.flat()) {
            prop_assert!(o >= a.min(b) - 1e-12 && o <= a.max(b) + 1e-12);
        }
    }
}
