//! Training, tracking and checkpoints end to end on small synthetic data.

mod common;

use common::tiny_config;
use ptt_core::eval::{
    gen_corpus, gen_tracklet, Category, DensityLevel, DensityMix, Frame, MotionProfile, Tracklet, TrackletSpec,
};
use ptt_core::geom::{Box3D, Point3};
use ptt_core::tracker::checkpoint::{check_compatible, load, save};
use ptt_core::tracker::{
    evaluate, evaluate_loss, track, train, Predictor, TemplateMode, TrackOptions, TrackerConfig, TrackerModel, Wiring,
};

fn moving(name: &str, seed: u64, frames: usize) -> Tracklet {
    gen_tracklet(&TrackletSpec {
        density: DensityLevel::Dense,
        motion: MotionProfile { speed: 0.4, yaw_rate: 0.02, noise: 0.02 },
        ..TrackletSpec::new(name, Category::Rigid, frames, seed)
    })
    .unwrap()
}

#[test]
fn zero_epochs_returns_the_initialisation() {
    let cfg = TrackerConfig { epochs: 0, ..tiny_config(3) };
    let t = moving("a", 1, 4);
    let out = train(&cfg, &[&t]).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.model.store, TrackerModel::new(&cfg).unwrap().store);
}

#[test]
fn a_step_moves_exactly_the_parameters_with_gradient() {
    // the baseline wiring never touches either PTT block
    let cfg = TrackerConfig { epochs: 1, samples_per_epoch: 4, batch_size: 4, wiring: Wiring::BASELINE, ..tiny_config(4) };
    let t = moving("a", 2, 4);
    let init = TrackerModel::new(&cfg).unwrap();
    let trained = train(&cfg, &[&t]).unwrap().model;
    for ((_, a), (_, b)) in init.store.iter().zip(trained.store.iter()) {
        let is_ptt = a.name.starts_with("ptt_");
        let moved = a.values != b.values;
        assert_eq!(moved, !is_ptt, "{}", a.name);
    }
}

#[test]
fn single_frame_dataset_cannot_train() {
    let t = moving("a", 2, 1);
    assert!(train(&tiny_config(0), &[&t]).is_err());
}

#[test]
fn training_is_reproducible() {
    let cfg = tiny_config(5);
    let ts = [moving("a", 3, 5), moving("b", 4, 5)];
    let refs: Vec<&Tracklet> = ts.iter().collect();
    let a = train(&cfg, &refs).unwrap();
    let b = train(&cfg, &refs).unwrap();
    assert_eq!(a.model.store, b.model.store);
    assert_eq!(a.log, b.log);
    assert_eq!(a.log.len(), cfg.epochs);
}

#[test]
fn learning_rate_follows_the_step_schedule() {
    let cfg = TrackerConfig { epochs: 5, samples_per_epoch: 2, batch_size: 2, lr: 1e-3, lr_drop_every: 2, ..tiny_config(6) };
    let t = moving("a", 5, 3);
    let log = train(&cfg, &[&t]).unwrap().log;
    let lrs: Vec<f64> = log.iter().map(|e| e.lr).collect();
    let want = [1e-3, 1e-3, 2e-4, 2e-4, 4e-5];
    assert!(lrs.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15), "{lrs:?}");
}

#[test]
fn single_frame_tracklet_reports_its_initial_box() {
    let model = TrackerModel::new(&tiny_config(7)).unwrap();
    let t = moving("a", 6, 1);
    let r = track(&t, Predictor::Model(&model), &TrackOptions::default()).unwrap();
    assert_eq!(r.boxes, t.gt_boxes());
}

#[test]
fn oracle_predictor_scores_perfectly() {
    let ts = gen_corpus(4, 6, &[Category::Rigid, Category::Nonrigid], DensityMix::Mixed, 8).unwrap();
    let refs: Vec<&Tracklet> = ts.iter().collect();
    for (score, r) in evaluate(&refs, Predictor::Oracle, &TrackOptions::default()).unwrap() {
        assert_eq!((score.success, score.precision), (100.0, 100.0));
        assert!(r.boxes.iter().all(|b| b.center().x.is_finite()));
    }
}

#[test]
fn empty_search_area_carries_the_previous_box() {
    let base = moving("a", 9, 3);
    let mut frames = base.frames().to_vec();
    frames[1].points = vec![Point3::new(500.0, 500.0, 0.0)];
    let t = Tracklet::new(base.meta().clone(), frames).unwrap();
    let model = TrackerModel::new(&tiny_config(9)).unwrap();
    let r = track(&t, Predictor::Model(&model), &TrackOptions::default()).unwrap();
    assert_eq!(r.boxes[1], r.boxes[0]);
    assert_eq!(r.empty_search, vec![false, true, false]);
}

#[test]
fn every_template_mode_tracks() {
    let model = TrackerModel::new(&tiny_config(10)).unwrap();
    let t = moving("a", 10, 5);
    for mode in TemplateMode::ALL {
        let opts = TrackOptions { template_mode: mode, ..Default::default() };
        assert_eq!(track(&t, Predictor::Model(&model), &opts).unwrap().boxes.len(), 5);
    }
}

#[test]
fn attention_dumps_follow_the_wiring() {
    let model = TrackerModel::new(&tiny_config(11)).unwrap();
    let t = moving("a", 11, 3);
    let k = model.config.ptt.k;
    for (wiring, stages) in [(Wiring::BASELINE, 0), (Wiring::VOTE, 1), (Wiring::BOTH, 2)] {
        let opts = TrackOptions { wiring: Some(wiring), dump_attention: true, ..Default::default() };
        let r = track(&t, Predictor::Model(&model), &opts).unwrap();
        assert_eq!(r.attention.len(), 2 * stages);
        for d in &r.attention {
            assert_eq!(d.weights.rows(), d.coords.len() * k);
        }
    }
}

/// A copy of `t` whose boxes sit on a 1/64 grid, so shifting by a dyadic
/// offset keeps every coordinate difference exact.
fn on_grid(t: &Tracklet, shift: Point3) -> Tracklet {
    let snap = |v: f64| (v * 64.0).round() / 64.0;
    let frames = t
        .frames()
        .iter()
        .map(|f| {
            let c = f.gt.center();
            let (w, h, l) = f.gt.size();
            let gt = Box3D::new(Point3::new(snap(c.x), snap(c.y), snap(c.z)) + shift, w, h, l, f.gt.ry()).unwrap();
            Frame { points: f.points.iter().map(|&p| p + shift).collect(), gt }
        })
        .collect();
    Tracklet::new(t.meta().clone(), frames).unwrap()
}

#[test]
fn tracking_is_translation_equivariant() {
    let model = TrackerModel::new(&TrackerConfig { wiring: Wiring::BOTH, ..tiny_config(12) }).unwrap();
    let base = moving("a", 12, 2);
    let shift = Point3::new(64.0, -32.0, 0.5);
    let a = track(&on_grid(&base, Point3::ORIGIN), Predictor::Model(&model), &TrackOptions::default()).unwrap();
    let b = track(&on_grid(&base, shift), Predictor::Model(&model), &TrackOptions::default()).unwrap();
    let (pa, pb) = (a.boxes[1], b.boxes[1]);
    assert!((pa.center() + shift).dist(pb.center()) < 1e-9);
    assert_eq!(pa.ry(), pb.ry());
    assert_eq!(pa.size(), pb.size());
}

#[test]
fn checkpoint_round_trip_keeps_weights_and_wiring() {
    let cfg = TrackerConfig { wiring: Wiring::VOTE, ..tiny_config(13) };
    let t = moving("a", 13, 3);
    let model = train(&TrackerConfig { epochs: 1, samples_per_epoch: 4, ..cfg.clone() }, &[&t]).unwrap().model;
    let mut buf = Vec::new();
    save(&model, &mut buf).unwrap();
    let back = load(buf.as_slice()).unwrap();
    assert_eq!(back.store, model.store);
    assert_eq!(back.config, model.config);
    assert_eq!(back.config.wiring, Wiring::VOTE);

    check_compatible(&back, &cfg).unwrap();
    let mut other = cfg.clone();
    other.ptt.d = 16;
    assert!(check_compatible(&back, &other).is_err());
    assert!(load(&b"not a checkpoint\n"[..]).is_err());
}

#[test]
fn short_training_lowers_the_loss_for_nearly_every_seed() {
    let ts = gen_corpus(6, 5, &[Category::Rigid, Category::Nonrigid], DensityMix::DenseHeavy, 77).unwrap();
    let refs: Vec<&Tracklet> = ts.iter().collect();
    let mut improved = 0;
    for seed in 0..100 {
        let cfg = TrackerConfig { epochs: 3, samples_per_epoch: 32, batch_size: 8, lr: 3e-3, ..tiny_config(seed) };
        let before = evaluate_loss(&TrackerModel::new(&cfg).unwrap(), &refs, 32, 1000 + seed).unwrap();
        let after = evaluate_loss(&train(&cfg, &refs).unwrap().model, &refs, 32, 1000 + seed).unwrap();
        improved += usize::from(after.l_all < before.l_all);
    }
    assert!(improved >= 95, "loss fell for {improved} of 100 seeds");
}
