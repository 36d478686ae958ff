use gmscope::synth::{build_benchmark, BandSpec, Benchmark, ScaleLayout, Splits, SynthConfig};
use gmscope::teacher::{infer, train_arm, train_arm_with, Arm, EvalWith, TrainConfig};

fn small_bench(seed: u64) -> Benchmark {
    let band = |lo: f64, hi: f64, area: f64, n: usize| BandSpec {
        v_lo: lo,
        v_hi: hi,
        mean_area: area,
        jitter: 0.1,
        count: (n, n + 2),
    };
    let cfg = SynthConfig {
        width: 128,
        height: 128,
        layout: ScaleLayout::Bands(vec![
            band(0.0, 1.0 / 3.0, 40.0, 12),
            band(1.0 / 3.0, 2.0 / 3.0, 150.0, 5),
            band(2.0 / 3.0, 1.0, 400.0, 2),
        ]),
        ..SynthConfig::strong_shift()
    };
    build_benchmark(&cfg, &Splits::new(4, 2, 0), seed).unwrap()
}

fn quick(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 6,
        batch_size: 2,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn baseline_loss_decreases() {
    let b = small_bench(1);
    let out = train_arm(Arm::Baseline, &b.train, &b.val, &quick(1)).unwrap();
    let e = &out.history.epochs;
    assert_eq!(e.len(), 6);
    assert!(e.last().unwrap().seg < e[0].seg, "{e:?}");
    assert!(e.iter().all(|r| r.consis == 0.0));
}

#[test]
fn same_seed_same_history() {
    let b = small_bench(2);
    let a = train_arm(Arm::Scoped, &b.train, &b.val, &quick(3)).unwrap();
    let c = train_arm(Arm::Scoped, &b.train, &b.val, &quick(3)).unwrap();
    assert_eq!(a.history, c.history);
    assert_eq!(a.student, c.student);
    assert_eq!(a.teacher, c.teacher);
}

#[test]
fn zero_consistency_weight_reduces_to_baseline_student() {
    let b = small_bench(3);
    let cfg = TrainConfig {
        consistency_weight: 0.0,
        eval_with: EvalWith::Student,
        ..quick(4)
    };
    let base = train_arm(Arm::Baseline, &b.train, &b.val, &cfg).unwrap();
    let scoped = train_arm(Arm::Scoped, &b.train, &b.val, &cfg).unwrap();
    assert_eq!(base.student.conf_weights, scoped.student.conf_weights);
    assert_eq!(base.student.thr_weights, scoped.student.thr_weights);
}

#[test]
fn teacher_moves_only_through_ema() {
    let b = small_bench(4);
    let cfg = quick(5);
    let steps_per_epoch = b.train.len().div_ceil(cfg.batch_size) as u64;
    let mut seen = Vec::new();
    train_arm_with(Arm::Scoped, &b.train, &b.val, &cfg, |rec, student, teacher| {
        seen.push((rec.student_version, rec.teacher_version, student.clone(), teacher.clone()));
        Ok(())
    })
    .unwrap();
    for (k, (sv, tv, _, _)) in seen.iter().enumerate() {
        // one optimizer step and one EMA update per batch, nothing else
        assert_eq!(*sv, steps_per_epoch * (k as u64 + 1));
        assert_eq!(sv, tv);
    }
}

#[test]
fn zero_decay_teacher_equals_student() {
    let b = small_bench(5);
    let cfg = TrainConfig {
        ema_m: 0.0,
        ..quick(6)
    };
    train_arm_with(Arm::PlainTeacher, &b.train, &b.val, &cfg, |_, student, teacher| {
        assert_eq!(student.conf_weights, teacher.conf_weights);
        assert_eq!(student.thr_weights, teacher.thr_weights);
        Ok(())
    })
    .unwrap();
    let out = train_arm(Arm::Scoped, &b.train, &b.val, &cfg).unwrap();
    assert_eq!(infer(&out.teacher, &b.val[0].image), infer(&out.student, &b.val[0].image));
}
