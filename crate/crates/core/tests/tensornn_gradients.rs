//! Tape gradients against central finite differences, one op at a time, plus
//! optimiser behaviour.

use ptt_core::rng::SplitMix64;
use ptt_core::tensornn::{
    fd_check, AdamState, FdOptions, Graph, LinearLayer, LrSchedule, Matrix, Mlp2, NnError, NodeId, ParamId,
    ParamStore, ParamTensor,
};

const TOL: f64 = 1e-4;

fn random_param(store: &mut ParamStore, name: &str, rows: usize, cols: usize, rng: &mut SplitMix64) -> ParamId {
    let mut t = ParamTensor::zeros(name, vec![rows, cols]);
    for v in &mut t.values {
        *v = rng.uniform(-2.0, 2.0);
    }
    store.add(t).unwrap()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut SplitMix64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

/// `sum(y ⊙ R)` for a fixed random `R`, so every output entry gets a distinct weight.
fn project(g: &mut Graph, y: NodeId, seed: u64) -> Result<NodeId, NnError> {
    let (r, c) = g.value(y).shape();
    let w = g.input(random_matrix(r, c, &mut SplitMix64::new(seed)));
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn check<F>(store: &mut ParamStore, build: F) -> f64
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId, NnError>,
{
    let report = fd_check(store, FdOptions::default(), build).unwrap();
    assert!(report.entries_checked > 0);
    assert!(
        report.max_rel_error < TOL,
        "worst {} [{}]: analytic {} numeric {} (rel {})",
        report.worst_param,
        report.worst_index,
        report.analytic,
        report.numeric,
        report.max_rel_error
    );
    report.max_rel_error
}

fn two_params(seed: u64, shape_a: (usize, usize), shape_b: (usize, usize)) -> (ParamStore, ParamId, ParamId) {
    let mut rng = SplitMix64::new(seed);
    let mut s = ParamStore::new();
    let a = random_param(&mut s, "a", shape_a.0, shape_a.1, &mut rng);
    let b = random_param(&mut s, "b", shape_b.0, shape_b.1, &mut rng);
    (s, a, b)
}

#[test]
fn linear_matches_finite_differences() {
    let mut rng = SplitMix64::new(1);
    let mut s = ParamStore::new();
    let x = random_param(&mut s, "x", 5, 4, &mut rng);
    let w = random_param(&mut s, "w", 3, 4, &mut rng);
    let b = random_param(&mut s, "b", 1, 3, &mut rng);
    check(&mut s, |g, st| {
        let (x, w, b) = (g.param(st, x), g.param(st, w), g.param(st, b));
        let y = g.linear(x, w, Some(b))?;
        project(g, y, 10)
    });
}

#[test]
fn elementwise_ops_match_finite_differences() {
    let (mut s, a, b) = two_params(2, (4, 3), (4, 3));
    check(&mut s, |g, st| {
        let (a, b) = (g.param(st, a), g.param(st, b));
        let sum = g.add(a, b)?;
        let diff = g.sub(sum, b)?;
        let diff = g.sub(diff, b)?;
        let prod = g.mul(diff, a)?;
        let scaled = g.scale(prod, -1.7)?;
        let r = g.relu(scaled)?;
        let out = g.add(r, prod)?;
        project(g, out, 11)
    });
}

#[test]
fn gather_matches_finite_differences() {
    let (mut s, a, _) = two_params(3, (4, 3), (1, 1));
    check(&mut s, |g, st| {
        let a = g.param(st, a);
        let y = g.gather(a, vec![2, 0, 2, 3, 3, 3, 1])?;
        project(g, y, 12)
    });
}

#[test]
fn group_reductions_match_finite_differences() {
    let (mut s, a, _) = two_params(4, (12, 3), (1, 1));
    check(&mut s, |g, st| {
        let a = g.param(st, a);
        let sm = g.group_softmax(a, 4)?;
        let gs = g.group_sum(sm, 4)?;
        let gm = g.group_max(a, 3)?;
        let l = project(g, gs, 13)?;
        let r = project(g, gm, 14)?;
        g.add(l, r)
    });
}

#[test]
fn column_ops_match_finite_differences() {
    let (mut s, a, b) = two_params(5, (3, 2), (3, 4));
    check(&mut s, |g, st| {
        let (a, b) = (g.param(st, a), g.param(st, b));
        let c = g.concat_cols(a, b)?;
        let mid = g.slice_cols(c, 1, 3)?;
        project(g, mid, 15)
    });
}

#[test]
fn losses_match_finite_differences() {
    let (mut s, a, b) = two_params(6, (6, 1), (5, 3));
    let mut rng = SplitMix64::new(60);
    // spread the targets so both smooth-L1 branches are exercised
    let target = Matrix::from_vec(5, 3, (0..15).map(|_| rng.uniform(-4.0, 4.0)).collect()).unwrap();
    check(&mut s, move |g, st| {
        let (a, b) = (g.param(st, a), g.param(st, b));
        let bce = g.bce_with_logits(a, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0])?;
        let sl = g.smooth_l1(b, &target, vec![true, false, true, true, true])?;
        let sl = g.scale(sl, 0.7)?;
        g.add(bce, sl)
    });
}

#[test]
fn layers_match_finite_differences() {
    let rng = SplitMix64::new(7);
    let mut s = ParamStore::new();
    let mlp = Mlp2::new(&mut s, "mlp", 3, 6, 4, &rng).unwrap();
    let lin = LinearLayer::new(&mut s, "lin", 4, 2, &rng).unwrap();
    // biases start at zero; move them off so the ReLU pattern is generic
    let mut r = SplitMix64::new(70);
    for p in s.iter_mut() {
        for v in &mut p.values {
            *v += r.uniform(-0.3, 0.3);
        }
    }
    let x = random_matrix(7, 3, &mut SplitMix64::new(71));
    check(&mut s, move |g, st| {
        let xi = g.input(x.clone());
        let h = mlp.forward(g, st, xi)?;
        let y = lin.forward(g, st, h)?;
        project(g, y, 16)
    });
}

#[test]
fn adam_converges_on_a_quadratic_and_respects_the_schedule() {
    let mut s = ParamStore::new();
    let id = random_param(&mut s, "w", 1, 4, &mut SplitMix64::new(8));
    let sched = LrSchedule { base_lr: 0.05, drop_every: 200, factor: 5.0 };
    let mut adam = AdamState::new(&s, sched.base_lr);
    for epoch in 0..600 {
        adam.on_epoch(&sched, epoch);
        let mut g = Graph::new();
        let w = g.param(&s, id);
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq).unwrap();
        s.zero_grad();
        g.backward(loss).unwrap().accumulate_into(&mut s);
        adam.step(&mut s).unwrap();
    }
    assert!((adam.lr - 0.05 / 25.0).abs() < 1e-15);
    assert!(s.get(id).values.iter().all(|v| v.abs() < 1e-2), "{:?}", s.get(id).values);
}
