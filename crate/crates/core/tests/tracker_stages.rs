//! Each tracker stage against a hand-written oracle, the loss against a hand
//! computation, and end-to-end gradients against finite differences.

mod common;

use common::{blob, lin, mlp, perturb_params, tiny_config};
use ptt_core::eval::{gen_tracklet, Category, TrackletSpec};
use ptt_core::geom::{Box3D, Point3};
use ptt_core::ptt::{ptt_forward, SeedSet};
use ptt_core::rng::SplitMix64;
use ptt_core::sampling::{ball_query, farthest_point_sample, pad_group};
use ptt_core::tensornn::{fd_check, FdOptions, Graph, Matrix, NnError};
use ptt_core::tracker::{
    loss_graph, read_proposals, select, select_index, train_sample, LossReport, LossWeights, Proposal, ProposalNodes,
    TrackerModel, VoteNodes, Wiring,
};

fn model(seed: u64) -> TrackerModel {
    let mut m = TrackerModel::new(&tiny_config(seed)).unwrap();
    perturb_params(&mut m.store, seed + 100, 0.1);
    m
}

fn rows(g: &Graph, id: ptt_core::tensornn::NodeId) -> Vec<Vec<f64>> {
    g.value(id).to_rows()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn backbone_is_group_mlp_max() {
    let m = model(1);
    let cfg = &m.config;
    let pts = blob(40, Point3::ORIGIN, 1.0, 2);
    let mut g = Graph::new();
    let seeds = m.net().backbone(&mut g, &pts, cfg.search_seeds, &mut SplitMix64::new(0)).unwrap();
    let picked = farthest_point_sample(&pts, cfg.search_seeds, 0).unwrap();
    let centres: Vec<Point3> = picked.iter().map(|&i| pts[i]).collect();
    assert_eq!(seeds.coords, centres);
    let groups = ball_query(&centres, &pts, cfg.backbone_radius, cfg.backbone_group).unwrap();
    let got = rows(&g, seeds.feats);
    for (i, grp) in groups.iter().enumerate() {
        let mut want = vec![f64::NEG_INFINITY; cfg.ptt.d];
        for j in pad_group(grp, cfg.backbone_group) {
            let rel = (pts[j] - centres[i]) * (1.0 / cfg.backbone_radius);
            for (w, v) in want.iter_mut().zip(mlp(&m.store, &m.layers.backbone, &rel.to_array())) {
                *w = w.max(v);
            }
        }
        assert!(close(&got[i], &want, 1e-12), "seed {i}");
    }
}

#[test]
fn backbone_on_coincident_points_gives_identical_seeds() {
    let m = model(3);
    let pts = vec![Point3::new(1.5, -2.0, 0.25); 20];
    let mut g = Graph::new();
    let s = m.net().backbone(&mut g, &pts, 8, &mut SplitMix64::new(0)).unwrap();
    let f = rows(&g, s.feats);
    let want = mlp(&m.store, &m.layers.backbone, &[0.0, 0.0, 0.0]);
    assert!(f.iter().all(|r| r == &want));
}

#[test]
fn backbone_features_ignore_dyadic_translation() {
    let m = model(4);
    let mut r = SplitMix64::new(5);
    let pts: Vec<Point3> =
        (0..48).map(|_| Point3::new(r.below(40) as f64 / 16.0, r.below(40) as f64 / 16.0, r.below(8) as f64 / 16.0)).collect();
    let moved: Vec<Point3> = pts.iter().map(|&p| p + Point3::new(32.0, -8.5, 0.75)).collect();
    let (mut g1, mut g2) = (Graph::new(), Graph::new());
    let a = m.net().backbone(&mut g1, &pts, 16, &mut SplitMix64::new(0)).unwrap();
    let b = m.net().backbone(&mut g2, &moved, 16, &mut SplitMix64::new(0)).unwrap();
    assert_eq!(g1.value(a.feats), g2.value(b.feats));
}

#[test]
fn backbone_needs_enough_points() {
    let m = model(6);
    let mut g = Graph::new();
    assert!(m.net().backbone(&mut g, &blob(5, Point3::ORIGIN, 1.0, 1), 16, &mut SplitMix64::new(0)).is_err());
}

#[test]
fn augment_concatenates_the_template_maximum() {
    let m = model(7);
    let d = m.config.ptt.d;
    let mut g = Graph::new();
    let mut r = SplitMix64::new(8);
    let t = blob(30, Point3::ORIGIN, 1.0, 9);
    let s = blob(40, Point3::ORIGIN, 2.0, 10);
    let tn = m.net().backbone(&mut g, &t, 8, &mut r).unwrap();
    let sn = m.net().backbone(&mut g, &s, 16, &mut r).unwrap();
    let out = m.net().augment(&mut g, &tn, &sn).unwrap();
    let tf = rows(&g, tn.feats);
    let summary: Vec<f64> = (0..d).map(|c| tf.iter().map(|row| row[c]).fold(f64::NEG_INFINITY, f64::max)).collect();
    for (i, srow) in rows(&g, sn.feats).iter().enumerate() {
        let cat: Vec<f64> = srow.iter().chain(&summary).copied().collect();
        assert!(close(&rows(&g, out)[i], &lin(&m.store, &m.layers.augment, &cat), 1e-12));
    }

    // a one-seed template summary is that seed's feature
    let mut g = Graph::new();
    let one = m.net().backbone(&mut g, &t, 1, &mut r).unwrap();
    let sn = m.net().backbone(&mut g, &s, 16, &mut r).unwrap();
    let out = m.net().augment(&mut g, &one, &sn).unwrap();
    let cat: Vec<f64> = rows(&g, sn.feats)[3].iter().chain(&rows(&g, one.feats)[0]).copied().collect();
    assert!(close(&rows(&g, out)[3], &lin(&m.store, &m.layers.augment, &cat), 1e-12));
}

fn seed_input(g: &mut Graph, n: usize, d: usize, seed: u64) -> (Vec<Point3>, ptt_core::tensornn::NodeId) {
    let coords = blob(n, Point3::ORIGIN, 1.5, seed);
    let mut r = SplitMix64::new(seed + 1);
    let feats = g.input(Matrix::from_vec(n, d, (0..n * d).map(|_| r.uniform(-1.0, 1.0)).collect()).unwrap());
    (coords, feats)
}

#[test]
fn zeroed_vote_head_leaves_seeds_in_place() {
    let mut m = model(11);
    m.layers.vote_head.second.zero(&mut m.store);
    let mut g = Graph::new();
    let (coords, feats) = seed_input(&mut g, 16, 8, 12);
    let v = m.net().vote_stage(&mut g, &coords, feats, true).unwrap();
    for (row, c) in rows(&g, v.centers).iter().zip(&coords) {
        assert_eq!(row.as_slice(), &c.to_array());
    }
    assert!(g.value(v.logits).data().iter().all(|&l| l == 0.0));
}

#[test]
fn vote_stage_is_ptt_then_head() {
    let m = model(13);
    let mut g = Graph::new();
    let (coords, feats) = seed_input(&mut g, 16, 8, 14);
    let v = m.net().vote_stage(&mut g, &coords, feats, true).unwrap();
    let refined = ptt_forward(&m.layers.ptt_vote, &m.store, &SeedSet::from_parts(&coords, g.value(feats)).unwrap()).unwrap();
    let centers = rows(&g, v.centers);
    for (i, s) in refined.seeds().iter().enumerate() {
        let h = mlp(&m.store, &m.layers.vote_head, &s.feat);
        let want = [coords[i].x + h[0], coords[i].y + h[1], coords[i].z + h[2]];
        assert!(close(&centers[i], &want, 1e-12));
        assert!((g.value(v.logits).get(i, 0) - h[3]).abs() < 1e-12);
    }
    assert!(v.attention.is_some());
    let plain = m.net().vote_stage(&mut g, &coords, feats, false).unwrap();
    assert!(plain.attention.is_none());
    assert_eq!(plain.feats, feats);
}

#[test]
fn single_cluster_proposal_matches_oracle() {
    let mut cfg = tiny_config(15);
    cfg.clusters = 1;
    cfg.ptt.k = 1;
    let mut m = TrackerModel::new(&cfg).unwrap();
    perturb_params(&mut m.store, 16, 0.1);
    let mut g = Graph::new();
    let (coords, feats) = seed_input(&mut g, 16, 8, 17);
    let v = m.net().vote_stage(&mut g, &coords, feats, false).unwrap();
    let p = m.net().propose_stage(&mut g, &v, false).unwrap();

    let centers = rows(&g, v.centers);
    let pts: Vec<Point3> = centers.iter().map(|r| Point3::new(r[0], r[1], r[2])).collect();
    // the first vote seeds FPS
    let c = pts[0];
    assert_eq!(p.cluster_coords, vec![c]);
    let grp = ball_query(&[c], &pts, cfg.cluster_radius, cfg.cluster_group).unwrap();
    let vf = rows(&g, v.feats);
    let mut pooled = vec![f64::NEG_INFINITY; cfg.ptt.d];
    for j in pad_group(&grp[0], cfg.cluster_group) {
        let rel = (pts[j] - c) * (1.0 / cfg.cluster_radius);
        let x: Vec<f64> = rel.to_array().iter().chain(&vf[j]).copied().collect();
        for (p, v) in pooled.iter_mut().zip(mlp(&m.store, &m.layers.cluster_mlp, &x)) {
            *p = p.max(v);
        }
    }
    let h = mlp(&m.store, &m.layers.prop_head, &pooled);
    let reg = rows(&g, p.regression);
    assert!(close(&reg[0], &[c.x + h[0], c.y + h[1], c.z + h[2], h[3]], 1e-12));
    assert!((g.value(p.scores).get(0, 0) - h[4]).abs() < 1e-12);

    let props = read_proposals(&g, &p, (1.0, 2.0, 3.0)).unwrap();
    assert_eq!(props[0].bbox.size(), (1.0, 2.0, 3.0));
}

#[test]
fn zeroed_score_head_selects_the_first_proposal() {
    let mut m = model(18);
    // zero only the score row of the last proposal-head layer
    let l = m.layers.prop_head.second;
    let w = &mut m.store.get_mut(l.weight).values;
    for v in &mut w[4 * l.in_dim..5 * l.in_dim] {
        *v = 0.0;
    }
    m.store.get_mut(l.bias).values[4] = 0.0;
    let mut g = Graph::new();
    let (coords, feats) = seed_input(&mut g, 16, 8, 19);
    let v = m.net().vote_stage(&mut g, &coords, feats, true).unwrap();
    let p = m.net().propose_stage(&mut g, &v, true).unwrap();
    let props = read_proposals(&g, &p, (1.0, 1.0, 1.0)).unwrap();
    assert!(props.iter().all(|p| p.score_logit == 0.0));
    assert_eq!(select_index(&props).unwrap(), 0);
}

#[test]
fn selection_takes_the_highest_score() {
    let bx = |x: f64| Box3D::new(Point3::new(x, 0.0, 0.0), 1.0, 1.0, 1.0, 0.0).unwrap();
    let props: Vec<Proposal> =
        [0.1, 0.9, 0.3].iter().enumerate().map(|(i, &s)| Proposal { bbox: bx(i as f64), score_logit: s }).collect();
    assert_eq!(select_index(&props).unwrap(), 1);
    assert_eq!(select(&props).unwrap(), bx(1.0));
    let tied: Vec<Proposal> = (0..3).map(|i| Proposal { bbox: bx(i as f64), score_logit: 0.5 }).collect();
    assert_eq!(select_index(&tied).unwrap(), 0);
    assert!(select_index(&[]).is_err());
}

// ---- loss ----

fn bce(z: f64, y: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
}

fn huber(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

struct Fixture {
    g: Graph,
    votes: VoteNodes,
    props: ProposalNodes,
    gt: Box3D,
}

fn fixture(logits: [f64; 3], scores: [f64; 2], vote0: [f64; 3], reg0: [f64; 4]) -> Fixture {
    let gt = Box3D::new(Point3::ORIGIN, 2.0, 1.5, 4.0, 0.1).unwrap();
    let seeds = vec![Point3::new(0.5, 0.3, 0.0), Point3::new(3.0, 0.0, 0.0), Point3::new(0.0, 1.5, 0.0)];
    let mut g = Graph::new();
    let centers = g.input(Matrix::from_rows(&[vote0.to_vec(), vec![3.0, 0.0, 0.0], vec![0.0, 1.5, 0.0]]).unwrap());
    let feats = g.input(Matrix::zeros(3, 2));
    let logits = g.input(Matrix::column_vector(&logits));
    let clusters = vec![Point3::new(0.1, 0.1, 0.0), Point3::new(1.0, 0.0, 0.0)];
    let cluster_centers = g.input(Matrix::from_rows(&[clusters[0].to_array().to_vec(), clusters[1].to_array().to_vec()]).unwrap());
    let regression = g.input(Matrix::from_rows(&[reg0.to_vec(), vec![5.0, 5.0, 5.0, 2.0]]).unwrap());
    let scores = g.input(Matrix::column_vector(&scores));
    Fixture {
        votes: VoteNodes { seed_coords: seeds, centers, feats, logits, attention: None },
        props: ProposalNodes { cluster_coords: clusters, cluster_centers, regression, scores, attention: None },
        gt,
        g,
    }
}

#[test]
fn loss_matches_hand_computation() {
    let mut f = fixture([2.0, -1.0, 0.5], [0.3, -0.2], [0.2, -0.1, 1.5], [0.1, 0.2, -0.1, 0.5]);
    let w = LossWeights::new(0.5, 2.0, 3.0).unwrap();
    let (_, rep) = loss_graph(&mut f.g, &f.votes, &f.props, &f.gt, &w, 0.3).unwrap();
    // seed 0 is the only foreground seed, cluster 0 the only positive cluster
    let cv = (bce(2.0, 1.0) + bce(-1.0, 0.0) + bce(0.5, 0.0)) / 3.0;
    let cb = (bce(0.3, 1.0) + bce(-0.2, 0.0)) / 2.0;
    let rv = huber(0.2) + huber(-0.1) + huber(1.5);
    let rb = huber(0.1) + huber(0.2) + huber(-0.1) + huber(0.5 - 0.1);
    assert!((rep.l_cv - cv).abs() < 1e-12);
    assert!((rep.l_cb - cb).abs() < 1e-12);
    assert!((rep.l_rv - rv).abs() < 1e-12);
    assert!((rep.l_rb - rb).abs() < 1e-12);
    assert!((rep.l_all - (cv + 0.5 * cb + 2.0 * rv + 3.0 * rb)).abs() < 1e-12);
    assert_eq!(rep.l_all, LossReport::combine(rep.l_cv, rep.l_cb, rep.l_rv, rep.l_rb, &w));
    assert!(!rep.no_foreground && !rep.no_positive);
}

#[test]
fn zero_weights_leave_only_seed_classification() {
    let mut f = fixture([2.0, -1.0, 0.5], [0.3, -0.2], [0.2, -0.1, 1.5], [0.1, 0.2, -0.1, 0.5]);
    let (_, rep) = loss_graph(&mut f.g, &f.votes, &f.props, &f.gt, &LossWeights::new(0.0, 0.0, 0.0).unwrap(), 0.3).unwrap();
    assert_eq!(rep.l_all, rep.l_cv);
}

#[test]
fn saturated_correct_predictions_cost_almost_nothing() {
    let mut f = fixture([30.0, -30.0, -30.0], [30.0, -30.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.1]);
    let (_, rep) = loss_graph(&mut f.g, &f.votes, &f.props, &f.gt, &LossWeights::default(), 0.3).unwrap();
    assert!(rep.l_all < 1e-3, "{rep:?}");
}

#[test]
fn missing_positives_zero_the_regression_terms() {
    let mut f = fixture([0.0; 3], [0.0; 2], [0.2, -0.1, 1.5], [0.1, 0.2, -0.1, 0.5]);
    // a far-away box: no seed inside, no cluster near
    f.gt = Box3D::new(Point3::new(40.0, 0.0, 0.0), 1.0, 1.0, 1.0, 0.0).unwrap();
    let (_, rep) = loss_graph(&mut f.g, &f.votes, &f.props, &f.gt, &LossWeights::default(), 0.3).unwrap();
    assert!(rep.no_foreground && rep.no_positive);
    assert_eq!((rep.l_rv, rep.l_rb), (0.0, 0.0));
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let mut m = model(21);
    m.config.wiring = Wiring::BOTH;
    let spec = TrackletSpec { density: ptt_core::eval::DensityLevel::Dense, ..TrackletSpec::new("fd", Category::Rigid, 3, 22) };
    let t = gen_tracklet(&spec).unwrap();
    let sample = train_sample(&t, 1, &m.config, &mut SplitMix64::new(23)).unwrap();
    let cfg = m.config.clone();
    let layers = m.layers;
    // a wide positive radius so the box terms carry gradient
    let positive = 1.5;
    let report = fd_check(&mut m.store, FdOptions { step: 1e-6, max_entries_per_param: Some(6) }, |g, st| {
        let net = ptt_core::tracker::Net::new(&cfg, &layers, st);
        let tr = net.forward(g, &sample.input, Wiring::BOTH, &mut SplitMix64::new(0)).map_err(|e| NnError::Shape(e.to_string()))?;
        let (nodes, _) = loss_graph(g, &tr.votes, &tr.proposals, &sample.gt, &LossWeights::default(), positive)
            .map_err(|e| NnError::Shape(e.to_string()))?;
        Ok(nodes.all)
    })
    .unwrap();
    assert!(report.entries_checked > 100);
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}
