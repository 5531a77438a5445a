//! Turning tracklet frames into network inputs.
//!
//! The search area is cropped around a reference box and expressed in that
//! box's frame; each template source is cropped around its own box and
//! expressed in that box's frame, so the network only ever sees
//! object-centred coordinates.

use std::str::FromStr;

use crate::eval::Tracklet;
use crate::geom::{crop_points, Box3D, Point3};
use crate::rng::SplitMix64;
use crate::sampling::random_sample_with;

use super::config::TrackerConfig;
use super::model::FrameInput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TemplateMode {
    First,
    Previous,
    #[default]
    FirstPrevious,
    AllPrevious,
}

impl TemplateMode {
    pub const ALL: [TemplateMode; 4] = [Self::First, Self::Previous, Self::FirstPrevious, Self::AllPrevious];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateMode::First => "first",
            TemplateMode::Previous => "previous",
            TemplateMode::FirstPrevious => "first+previous",
            TemplateMode::AllPrevious => "all-previous",
        }
    }
}

impl FromStr for TemplateMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown template mode {s:?} (first|previous|first+previous|all-previous)"))
    }
}

impl std::fmt::Display for TemplateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Points within `margin` of `b`, in the frame of `b`.
pub fn canonical_crop(cloud: &[Point3], b: &Box3D, margin: f64) -> Vec<Point3> {
    crop_points(cloud, b, margin).points.into_iter().map(|p| b.to_local(p)).collect()
}

/// Random resampling to exactly `budget` points (with replacement only when
/// short). `None` for an empty input.
pub fn resample(points: &[Point3], budget: usize, rng: &mut SplitMix64) -> Option<Vec<Point3>> {
    let s = random_sample_with(points.len(), budget, rng).ok()?;
    Some(s.indices.into_iter().map(|i| points[i]).collect())
}

/// Union of template sources with the budget split evenly over the non-empty
/// ones (earlier sources take the remainder). With no points at all the
/// template degenerates to the box centre.
pub fn merge_template(sources: &[Vec<Point3>], budget: usize, rng: &mut SplitMix64) -> Vec<Point3> {
    let live: Vec<&Vec<Point3>> = sources.iter().filter(|s| !s.is_empty()).collect();
    if live.is_empty() {
        return vec![Point3::ORIGIN; budget];
    }
    let share = budget / live.len();
    let extra = budget % live.len();
    let mut out = Vec::with_capacity(budget);
    for (i, src) in live.iter().enumerate() {
        let n = share + usize::from(i < extra);
        if n > 0 {
            out.extend(resample(src, n, rng).expect("non-empty source"));
        }
    }
    out
}

/// Jitters a box in its own frame by Gaussian offsets.
pub fn perturb(b: &Box3D, sigma_xy: f64, sigma_z: f64, sigma_theta: f64, rng: &mut SplitMix64) -> Box3D {
    let local = Point3::new(rng.gaussian(0.0, sigma_xy), rng.gaussian(0.0, sigma_xy), rng.gaussian(0.0, sigma_z));
    let (w, h, l) = b.size();
    Box3D::new(b.to_world(local), w, h, l, b.ry() + rng.gaussian(0.0, sigma_theta)).expect("size unchanged")
}

/// Builds the network input for a search area around `reference`, or `None`
/// when the search area holds no points.
pub fn frame_input(
    cloud: &[Point3],
    reference: &Box3D,
    template_sources: &[Vec<Point3>],
    size: (f64, f64, f64),
    cfg: &TrackerConfig,
    rng: &mut SplitMix64,
) -> Option<FrameInput> {
    let search = canonical_crop(cloud, reference, cfg.search_margin);
    let search = resample(&search, cfg.search_points, rng)?;
    let template = merge_template(template_sources, cfg.template_points, rng);
    Some(FrameInput { template, search, size })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: FrameInput,
    /// Ground truth in the search frame.
    pub gt: Box3D,
}

/// A training pair for frame `t ≥ 1`: first and (jittered) previous
/// ground-truth templates, search area around a jittered previous box.
pub fn train_sample(tracklet: &Tracklet, t: usize, cfg: &TrackerConfig, rng: &mut SplitMix64) -> Option<TrainSample> {
    let frames = tracklet.frames();
    if t == 0 || t >= frames.len() {
        return None;
    }
    let first = &frames[0];
    let prev = &frames[t - 1];
    let cur = &frames[t];
    let reference = perturb(&prev.gt, cfg.offset_xy, cfg.offset_z, cfg.offset_theta, rng);
    let prev_ref = perturb(&prev.gt, cfg.offset_xy / 2.0, cfg.offset_z / 2.0, cfg.offset_theta / 2.0, rng);
    let sources = [
        canonical_crop(&first.points, &first.gt, cfg.template_margin),
        canonical_crop(&prev.points, &prev_ref, cfg.template_margin),
    ];
    let input = frame_input(&cur.points, &reference, &sources, first.gt.size(), cfg, rng)?;
    Some(TrainSample { input, gt: reference.box_to_local(&cur.gt) })
}
