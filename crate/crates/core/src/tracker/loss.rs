//! Four-term tracking loss.
//!
//! * `cv`: BCE of seed logits; a seed is foreground when it lies inside the
//!   ground-truth footprint.
//! * `rv`: smooth-L1 of vote centres against the box centre, foreground seeds only.
//! * `cb`: BCE of proposal scores; a cluster is positive when its centre is
//!   within `positive_dist` of the box centre.
//! * `rb`: smooth-L1 of `(x, y, z, θ)` against the box, positive clusters only.
//!
//! `all = cv + λ1·cb + λ2·rv + λ3·rb`, evaluated left to right both on the
//! tape and in [`LossReport::combine`], so the two agree bit for bit.

use crate::geom::Box3D;
use crate::tensornn::{Graph, Matrix, NodeId};

use super::model::{ProposalNodes, VoteNodes};
use super::TrackerError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self, TrackerError> {
        if [lambda1, lambda2, lambda3].iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(TrackerError::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(Self { lambda1, lambda2, lambda3 })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 1.0, lambda3: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub l_cv: f64,
    pub l_cb: f64,
    pub l_rv: f64,
    pub l_rb: f64,
    pub l_all: f64,
    /// No seed fell inside the box; `l_rv` is 0.
    pub no_foreground: bool,
    /// No cluster was positive; `l_rb` is 0.
    pub no_positive: bool,
}

impl LossReport {
    pub fn combine(l_cv: f64, l_cb: f64, l_rv: f64, l_rb: f64, w: &LossWeights) -> f64 {
        l_cv + w.lambda1 * l_cb + w.lambda2 * l_rv + w.lambda3 * l_rb
    }

    /// Term-wise mean; flags become "any".
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let avg = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        LossReport {
            l_cv: avg(|r| r.l_cv),
            l_cb: avg(|r| r.l_cb),
            l_rv: avg(|r| r.l_rv),
            l_rb: avg(|r| r.l_rb),
            l_all: avg(|r| r.l_all),
            no_foreground: reports.iter().any(|r| r.no_foreground),
            no_positive: reports.iter().any(|r| r.no_positive),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub cv: NodeId,
    pub cb: NodeId,
    pub rv: NodeId,
    pub rb: NodeId,
    pub all: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub foreground: Vec<bool>,
    pub positive: Vec<bool>,
}

pub fn labels(votes: &VoteNodes, props: &ProposalNodes, gt: &Box3D, positive_dist: f64) -> Labels {
    Labels {
        foreground: votes.seed_coords.iter().map(|&c| gt.footprint_contains(c)).collect(),
        positive: props.cluster_coords.iter().map(|&c| c.dist(gt.center()) < positive_dist).collect(),
    }
}

fn as_targets(flags: &[bool]) -> Vec<f64> {
    flags.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

fn repeat_row(row: &[f64], rows: usize) -> Matrix {
    Matrix::from_vec(rows, row.len(), row.iter().copied().cycle().take(rows * row.len()).collect()).expect("shape")
}

/// Records the loss on the tape; `gt` is in the same frame as the votes.
pub fn loss_graph(
    g: &mut Graph,
    votes: &VoteNodes,
    props: &ProposalNodes,
    gt: &Box3D,
    weights: &LossWeights,
    positive_dist: f64,
) -> Result<(LossNodes, LossReport), TrackerError> {
    let lab = labels(votes, props, gt, positive_dist);
    let c = gt.center();
    let cv = g.bce_with_logits(votes.logits, as_targets(&lab.foreground))?;
    let target = repeat_row(&c.to_array(), lab.foreground.len());
    let rv = g.smooth_l1(votes.centers, &target, lab.foreground.clone())?;
    let cb = g.bce_with_logits(props.scores, as_targets(&lab.positive))?;
    let target = repeat_row(&[c.x, c.y, c.z, gt.ry()], lab.positive.len());
    let rb = g.smooth_l1(props.regression, &target, lab.positive.clone())?;

    let t1 = g.scale(cb, weights.lambda1)?;
    let t2 = g.scale(rv, weights.lambda2)?;
    let t3 = g.scale(rb, weights.lambda3)?;
    let all = g.add(cv, t1)?;
    let all = g.add(all, t2)?;
    let all = g.add(all, t3)?;

    let v = |id: NodeId| g.value(id).item();
    let report = LossReport {
        l_cv: v(cv),
        l_cb: v(cb),
        l_rv: v(rv),
        l_rb: v(rb),
        l_all: v(all),
        no_foreground: !lab.foreground.iter().any(|&b| b),
        no_positive: !lab.positive.iter().any(|&b| b),
    };
    Ok((LossNodes { cv, cb, rv, rb, all }, report))
}
