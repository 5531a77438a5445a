use rayon::prelude::*;

use crate::eval::Tracklet;
use crate::rng::SplitMix64;
use crate::tensornn::{accumulate_param_grads, AdamState, Graph, Matrix, NnError, ParamId, ParamStore};

use super::config::TrackerConfig;
use super::data::{train_sample, TrainSample};
use super::loss::{loss_graph, LossReport, LossWeights};
use super::model::{Net, TrackerModel};
use super::TrackerError;

const SAMPLE_ATTEMPTS: u64 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub samples: usize,
    /// Term-wise mean over the epoch's samples, measured before each update.
    pub mean: LossReport,
    pub no_foreground: usize,
    pub no_positive: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrackerModel,
    pub log: Vec<EpochLog>,
}

impl TrackerConfig {
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { lambda1: self.lambda1, lambda2: self.lambda2, lambda3: self.lambda3 }
    }
}

/// Loss and parameter gradients of one sample under the model's wiring.
pub fn sample_gradients(
    net: Net<'_>,
    sample: &TrainSample,
    rng: &mut SplitMix64,
) -> Result<(LossReport, Vec<(ParamId, Matrix)>), TrackerError> {
    let mut g = Graph::new();
    let trace = net.forward(&mut g, &sample.input, net.cfg.wiring, rng)?;
    let weights = net.cfg.loss_weights();
    let (nodes, report) = loss_graph(&mut g, &trace.votes, &trace.proposals, &sample.gt, &weights, net.cfg.positive_dist)?;
    if !report.l_all.is_finite() {
        return Err(TrackerError::Nn(NnError::NonFiniteLoss(report.l_all)));
    }
    Ok((report, g.backward(nodes.all)?.into_params()))
}

/// Deterministic list of `(tracklet, frame, rng seed)` draws for one epoch.
fn epoch_plan(pool: &[(usize, usize)], count: usize, rng: &mut SplitMix64) -> Vec<(usize, u64)> {
    (0..count).map(|_| (rng.below(pool.len()), rng.next_u64())).collect()
}

fn build_sample(tracklet: &Tracklet, frame: usize, cfg: &TrackerConfig, seed: u64) -> Option<(TrainSample, SplitMix64)> {
    let root = SplitMix64::new(seed);
    (0..SAMPLE_ATTEMPTS).find_map(|a| {
        let mut rng = root.substream_index(a);
        train_sample(tracklet, frame, cfg, &mut rng).map(|s| (s, rng))
    })
}

/// Trains from the initialisation given by `config.seed`. Batches are
/// evaluated in parallel and their gradients summed in sample order, so the
/// result does not depend on the thread count.
pub fn train(config: &TrackerConfig, tracklets: &[&Tracklet]) -> Result<TrainOutcome, TrackerError> {
    train_with(config, tracklets, |_| {})
}

pub fn train_with(
    config: &TrackerConfig,
    tracklets: &[&Tracklet],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrackerError> {
    let mut model = TrackerModel::new(config)?;
    if config.epochs == 0 {
        return Ok(TrainOutcome { model, log: Vec::new() });
    }
    let pool: Vec<(usize, usize)> = tracklets
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (1..t.len()).map(move |f| (i, f)))
        .collect();
    if pool.is_empty() {
        return Err(TrackerError::EmptyDataset);
    }
    let schedule = config.schedule();
    let mut adam = AdamState::new(&model.store, config.lr);
    let data_rng = SplitMix64::new(config.seed).substream("data");
    let mut log = Vec::with_capacity(config.epochs);
    let mut batch_id = 0usize;
    for epoch in 0..config.epochs {
        adam.on_epoch(&schedule, epoch);
        let plan = epoch_plan(&pool, config.samples_per_epoch, &mut data_rng.substream_index(epoch as u64));
        let mut reports = Vec::with_capacity(plan.len());
        for chunk in plan.chunks(config.batch_size) {
            let net = model.net();
            let results: Vec<Option<Result<(LossReport, Vec<(ParamId, Matrix)>), TrackerError>>> = chunk
                .par_iter()
                .map(|&(slot, seed)| {
                    let (ti, frame) = pool[slot];
                    build_sample(tracklets[ti], frame, config, seed).map(|(s, mut rng)| sample_gradients(net, &s, &mut rng))
                })
                .collect();
            let mut used = 0usize;
            model.store.zero_grad();
            for r in results.into_iter().flatten() {
                let (report, grads) = r.map_err(|e| match e {
                    TrackerError::Nn(NnError::NonFiniteLoss(_)) => TrackerError::Divergence { epoch, batch: batch_id },
                    other => other,
                })?;
                accumulate_param_grads(&grads, &mut model.store);
                reports.push(report);
                used += 1;
            }
            if used > 0 {
                scale_grads(&mut model.store, 1.0 / used as f64);
                adam.step(&mut model.store).map_err(|e| match e {
                    NnError::NonFiniteGrad(_) => TrackerError::Divergence { epoch, batch: batch_id },
                    other => TrackerError::Nn(other),
                })?;
            }
            batch_id += 1;
        }
        let entry = EpochLog {
            epoch,
            lr: adam.lr,
            samples: reports.len(),
            mean: LossReport::mean(&reports),
            no_foreground: reports.iter().filter(|r| r.no_foreground).count(),
            no_positive: reports.iter().filter(|r| r.no_positive).count(),
        };
        on_epoch(&entry);
        log.push(entry);
    }
    model.store.zero_grad();
    Ok(TrainOutcome { model, log })
}

fn scale_grads(store: &mut ParamStore, s: f64) {
    for p in store.iter_mut() {
        for g in &mut p.grad {
            *g *= s;
        }
    }
}

/// Mean loss of the model on a fixed set of samples (no updates).
pub fn evaluate_loss(model: &TrackerModel, tracklets: &[&Tracklet], count: usize, seed: u64) -> Result<LossReport, TrackerError> {
    let pool: Vec<(usize, usize)> = tracklets
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (1..t.len()).map(move |f| (i, f)))
        .collect();
    if pool.is_empty() {
        return Err(TrackerError::EmptyDataset);
    }
    let plan = epoch_plan(&pool, count, &mut SplitMix64::new(seed).substream("eval-loss"));
    let net = model.net();
    let reports = plan
        .par_iter()
        .filter_map(|&(slot, seed)| {
            let (ti, frame) = pool[slot];
            build_sample(tracklets[ti], frame, &model.config, seed).map(|(s, mut rng)| {
                let mut g = Graph::new();
                let trace = net.forward(&mut g, &s.input, model.config.wiring, &mut rng)?;
                let w = model.config.loss_weights();
                Ok(loss_graph(&mut g, &trace.votes, &trace.proposals, &s.gt, &w, model.config.positive_dist)?.1)
            })
        })
        .collect::<Result<Vec<_>, TrackerError>>()?;
    Ok(LossReport::mean(&reports))
}
