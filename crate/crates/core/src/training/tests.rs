use super::*;
use crate::physics::QuadraticDrift1D;
use crate::score::MlpScore;
use crate::sde::{generate_dataset, Categorical, TimeGrid};

fn toy_data(n: usize, steps: usize) -> TrajectorySet {
    let spec = QuadraticDrift1D::default();
    let grid = TimeGrid::new(0.0, 0.02, steps).unwrap();
    generate_dataset(&spec, &Categorical(vec![-1.0, 1.0]), n, &grid, 3).unwrap().0
}

fn plan(loss: LossKind) -> TrainPlan {
    TrainPlan {
        loss,
        phases: vec![Phase { epochs: 2, batch: 32, lr: 1e-3, ..Phase::default() }],
        seed: 11,
        ..TrainPlan::default()
    }
}

#[test]
fn window_schedule_and_lr_decay() {
    let p = Phase { window: 2, window_max: Some(10), window_step: 1, window_every: 1000, lr: 1e-4, lr_decay: 0.5, lr_decay_every: 20, ..Phase::default() };
    assert_eq!(p.window_at(0), 2);
    assert_eq!(p.window_at(999), 2);
    assert_eq!(p.window_at(1000), 3);
    assert_eq!(p.window_at(50_000), 10);
    assert_eq!(p.lr_at(19), 1e-4);
    assert_eq!(p.lr_at(45), 2.5e-5);
    let heat = Phase { window: 6, window_max: Some(32), window_step: 2, window_every: 2, ..Phase::default() };
    assert_eq!((0..30).map(|e| heat.window_at(e)).max(), Some(32));
    assert_eq!(heat.window_at(3), 8);
}

#[test]
fn validation_rejects_bad_plans() {
    let mut p = plan(LossKind::OneStep);
    p.phases[0].window = 4;
    assert!(matches!(p.validate(), Err(Error::Config(_))));
    let mut p = plan(LossKind::MultiStep);
    p.phases[0].window = 1;
    assert!(p.validate().is_err());
    let mut p = plan(LossKind::MultiStep);
    p.phases.clear();
    assert!(p.validate().is_err());
}

#[test]
fn training_is_reproducible_and_thread_independent() {
    let data = toy_data(6, 40);
    let spec = QuadraticDrift1D::default();
    let mut p = plan(LossKind::MultiStep);
    p.phases[0].window = 3;
    p.shard = 16;
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut m = MlpScore::new(1, 5).unwrap();
            let h = run_training(&p, &mut m, &spec, &data).unwrap();
            (m.params().clone(), h)
        })
    };
    let (a, ha) = run(1);
    let (b, hb) = run(3);
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    assert_eq!(ha.epochs.len(), 2);
    assert_ne!(&a, MlpScore::new(1, 5).unwrap().params());
}

#[test]
fn every_loss_kind_trains() {
    let data = toy_data(4, 20);
    let spec = QuadraticDrift1D::default();
    for kind in [LossKind::OneStep, LossKind::MultiStep, LossKind::Ism, LossKind::SsmVr, LossKind::Dsm] {
        let mut m = MlpScore::new(1, 1).unwrap();
        let h = run_training(&plan(kind), &mut m, &spec, &data).unwrap();
        assert!(h.epochs.iter().all(|e| e.loss.is_finite()), "{kind:?}");
        assert_eq!(h.epochs[0].floor.is_some(), matches!(kind, LossKind::OneStep | LossKind::MultiStep));
    }
}

#[test]
fn windows_per_epoch_caps_steps() {
    let data = toy_data(4, 50);
    let spec = QuadraticDrift1D::default();
    let mut p = plan(LossKind::OneStep);
    p.phases[0].windows_per_epoch = Some(64);
    let mut m = MlpScore::new(1, 1).unwrap();
    let h = run_training(&p, &mut m, &spec, &data).unwrap();
    assert_eq!(h.steps, 4);
}

#[test]
fn stride_and_jitter_change_the_step() {
    let data = toy_data(3, 30);
    let spec = QuadraticDrift1D::default();
    let mut p = plan(LossKind::MultiStep);
    p.phases[0].stride = 5;
    p.phases[0].window = 4;
    let mut a = MlpScore::new(1, 1).unwrap();
    run_training(&p, &mut a, &spec, &data).unwrap();
    p.time_jitter = true;
    let mut b = MlpScore::new(1, 1).unwrap();
    run_training(&p, &mut b, &spec, &data).unwrap();
    assert_ne!(a.params(), b.params());
    p.phases[0].window = 8;
    let mut c = MlpScore::new(1, 1).unwrap();
    assert!(matches!(run_training(&p, &mut c, &spec, &data), Err(Error::Config(_))));
}

#[test]
fn diverging_training_aborts_with_context() {
    let data = toy_data(4, 20);
    let spec = QuadraticDrift1D::default();
    let mut p = plan(LossKind::OneStep);
    p.phases.push(Phase { epochs: 3, lr: 1e6, batch: 8, ..Phase::default() });
    p.clip_norm = None;
    let mut m = MlpScore::new(1, 1).unwrap();
    match run_training(&p, &mut m, &spec, &data) {
        Err(Error::TrainingAborted { phase, .. }) => assert_eq!(phase, 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn csv_has_header_and_rows() {
    let h = History {
        epochs: vec![EpochRecord { epoch: 0, phase: 0, window: 2, lr: 1e-3, loss: 0.5, floor: Some(1.8e-5) }],
        steps: 1,
    };
    let mut buf = Vec::new();
    h.write_csv(&mut buf).unwrap();
    let s = String::from_utf8(buf).unwrap();
    let mut lines = s.lines();
    assert_eq!(lines.next(), Some("epoch,phase,S,lr,train_loss,loss_floor"));
    assert_eq!(lines.next(), Some("0,0,2,1e-3,5e-1,1.8e-5"));
}
