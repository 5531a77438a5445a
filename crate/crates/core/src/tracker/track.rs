use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::eval::{precision_auc, success_auc, Tracklet, TrackletScore};
use crate::geom::{Box3D, Point3};
use crate::rng::SplitMix64;
use crate::sampling::IndexSet;
use crate::tensornn::{Graph, Matrix};

use super::config::Wiring;
use super::data::{canonical_crop, frame_input, TemplateMode};
use super::model::{read_proposals, select_index, TrackerModel};
use super::TrackerError;

#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    Model(&'a TrackerModel),
    /// Returns the ground truth of every frame.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrackOptions {
    pub template_mode: TemplateMode,
    /// Overrides the wiring stored with the model.
    pub wiring: Option<Wiring>,
    pub dump_attention: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrameTiming {
    pub prepare: Duration,
    pub forward: Duration,
    pub post: Duration,
}

impl FrameTiming {
    pub fn total(&self) -> Duration {
        self.prepare + self.forward + self.post
    }
}

/// Attention weights of one PTT application: `neighbors[i]` lists the seeds
/// that seed `i` attends to; `weights` is `(N·K)×M`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    pub frame: usize,
    pub stage: &'static str,
    pub coords: Vec<Point3>,
    pub neighbors: Vec<IndexSet>,
    pub weights: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub boxes: Vec<Box3D>,
    /// Frames whose search area was empty; the previous box was carried forward.
    pub empty_search: Vec<bool>,
    pub timings: Vec<FrameTiming>,
    pub attention: Vec<AttentionDump>,
}

fn template_sources(tracklet: &Tracklet, boxes: &[Box3D], t: usize, mode: TemplateMode, margin: f64) -> Vec<Vec<Point3>> {
    let frames = tracklet.frames();
    let crop = |s: usize| canonical_crop(&frames[s].points, &boxes[s], margin);
    match mode {
        TemplateMode::First => vec![crop(0)],
        TemplateMode::Previous => vec![crop(t - 1)],
        TemplateMode::FirstPrevious => vec![crop(0), crop(t - 1)],
        TemplateMode::AllPrevious => (0..t).map(crop).collect(),
    }
}

/// One-pass tracking. Frame 0 reports the given ground truth; each later
/// frame searches around the previous output.
pub fn track(tracklet: &Tracklet, predictor: Predictor<'_>, opts: &TrackOptions) -> Result<TrackResult, TrackerError> {
    let frames = tracklet.frames();
    let mut result = TrackResult {
        boxes: vec![frames[0].gt],
        empty_search: vec![false],
        timings: vec![FrameTiming::default()],
        attention: Vec::new(),
    };
    let model = match predictor {
        Predictor::Oracle => {
            result.boxes = tracklet.gt_boxes();
            result.empty_search = vec![false; frames.len()];
            result.timings = vec![FrameTiming::default(); frames.len()];
            return Ok(result);
        }
        Predictor::Model(m) => m,
    };
    let cfg = &model.config;
    let wiring = opts.wiring.unwrap_or(cfg.wiring);
    let net = model.net();
    let size = frames[0].gt.size();
    let stream = SplitMix64::new(tracklet.meta().seed).substream("track");
    for t in 1..frames.len() {
        let t0 = Instant::now();
        let reference = result.boxes[t - 1];
        let mut rng = stream.substream_index(t as u64);
        let sources = template_sources(tracklet, &result.boxes, t, opts.template_mode, cfg.template_margin);
        let Some(input) = frame_input(&frames[t].points, &reference, &sources, size, cfg, &mut rng) else {
            result.boxes.push(reference);
            result.empty_search.push(true);
            result.timings.push(FrameTiming { prepare: t0.elapsed(), ..Default::default() });
            continue;
        };
        let t1 = Instant::now();
        let mut g = Graph::new();
        let trace = net.forward(&mut g, &input, wiring, &mut rng)?;
        let t2 = Instant::now();
        let proposals = read_proposals(&g, &trace.proposals, size)?;
        let best = proposals[select_index(&proposals)?].bbox;
        result.boxes.push(reference.box_to_world(&best));
        result.empty_search.push(false);
        if opts.dump_attention {
            for (stage, tr, coords) in [
                ("vote", &trace.votes.attention, &trace.search.coords),
                ("prop", &trace.proposals.attention, &trace.proposals.cluster_coords),
            ] {
                if let Some(tr) = tr {
                    result.attention.push(AttentionDump {
                        frame: t,
                        stage,
                        coords: coords.clone(),
                        neighbors: tr.neighbors.clone(),
                        weights: g.value(tr.weights).clone(),
                    });
                }
            }
        }
        let t3 = Instant::now();
        result.timings.push(FrameTiming { prepare: t1 - t0, forward: t2 - t1, post: t3 - t2 });
    }
    Ok(result)
}

/// Tracks every tracklet (in parallel) and scores it.
pub fn evaluate(
    tracklets: &[&Tracklet],
    predictor: Predictor<'_>,
    opts: &TrackOptions,
) -> Result<Vec<(TrackletScore, TrackResult)>, TrackerError> {
    tracklets
        .par_iter()
        .map(|t| {
            let r = track(t, predictor, opts)?;
            let gt = t.gt_boxes();
            let score = TrackletScore {
                name: t.meta().name.clone(),
                frames: t.len(),
                success: success_auc(&r.boxes, &gt)?,
                precision: precision_auc(&r.boxes, &gt)?,
                empty_frames: r.empty_search.iter().filter(|&&e| e).count(),
            };
            Ok((score, r))
        })
        .collect()
}
