//! One-pass-evaluation Success and Precision.
//!
//! Success counts frames whose overlap is at least each threshold in
//! `0, 0.05, …, 1`; Precision counts frames whose centre error is at most each
//! threshold in `0, 0.1, …, 2` m. Each AUC is the mean of its 21 curve values,
//! as a percentage.

use std::fmt::Write as _;

use super::{EvalError, Tracklet};
use crate::geom::{center_error, Box3D, IouKind};

pub const GRID_POINTS: usize = 21;
/// First-frame point counts below this are flagged in density reports.
pub const LOW_POINT_FLAG: usize = 20;

/// Fraction of frames passing each threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct OpeCurve {
    pub thresholds: Vec<f64>,
    pub rates: Vec<f64>,
}

impl OpeCurve {
    pub fn auc(&self) -> f64 {
        self.rates.iter().sum::<f64>() / self.rates.len() as f64 * 100.0
    }
}

fn check_lengths(pred: &[Box3D], gt: &[Box3D]) -> Result<(), EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch { pred: pred.len(), gt: gt.len() });
    }
    if gt.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

fn curve(values: &[f64], thresholds: Vec<f64>, pass: impl Fn(f64, f64) -> bool) -> OpeCurve {
    let n = values.len() as f64;
    let rates = thresholds
        .iter()
        .map(|&t| values.iter().filter(|&&v| pass(v, t)).count() as f64 / n)
        .collect();
    OpeCurve { thresholds, rates }
}

pub fn success_curve(pred: &[Box3D], gt: &[Box3D], kind: IouKind) -> Result<OpeCurve, EvalError> {
    check_lengths(pred, gt)?;
    let overlaps: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| kind.eval(p, g)).collect();
    let thresholds = (0..GRID_POINTS).map(|i| i as f64 / 20.0).collect();
    Ok(curve(&overlaps, thresholds, |v, t| v >= t))
}

pub fn precision_curve(pred: &[Box3D], gt: &[Box3D]) -> Result<OpeCurve, EvalError> {
    check_lengths(pred, gt)?;
    let errors: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| center_error(p, g)).collect();
    let thresholds = (0..GRID_POINTS).map(|i| i as f64 / 10.0).collect();
    Ok(curve(&errors, thresholds, |v, t| v <= t))
}

/// Success AUC with volumetric IoU, in `[0, 100]`.
pub fn success_auc(pred: &[Box3D], gt: &[Box3D]) -> Result<f64, EvalError> {
    Ok(success_curve(pred, gt, IouKind::Volumetric)?.auc())
}

/// Precision AUC, in `[0, 100]`.
pub fn precision_auc(pred: &[Box3D], gt: &[Box3D]) -> Result<f64, EvalError> {
    Ok(precision_curve(pred, gt)?.auc())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityEntry {
    pub name: String,
    pub points: usize,
    pub success: f64,
    pub flagged: bool,
}

/// Pairs each tracklet's first-frame in-box point count with its Success.
pub fn density_report(tracklets: &[&Tracklet], success: &[f64]) -> Result<Vec<DensityEntry>, EvalError> {
    if tracklets.len() != success.len() {
        return Err(EvalError::LengthMismatch { pred: success.len(), gt: tracklets.len() });
    }
    Ok(tracklets
        .iter()
        .zip(success)
        .map(|(t, &s)| {
            let points = t.first_frame_in_box();
            DensityEntry { name: t.meta().name.clone(), points, success: s, flagged: points < LOW_POINT_FLAG }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackletScore {
    pub name: String,
    pub frames: usize,
    pub success: f64,
    pub precision: f64,
    /// Frames where the search area held no points.
    pub empty_frames: usize,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Mean over tracklets (each tracklet weighs the same).
pub fn mean_scores(scores: &[TrackletScore]) -> Option<(f64, f64)> {
    Some((mean(scores.iter().map(|s| s.success))?, mean(scores.iter().map(|s| s.precision))?))
}

pub fn format_report(scores: &[TrackletScore], density: &[DensityEntry]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<12} {:>6} {:>9} {:>9} {:>6}", "tracklet", "frames", "success", "precision", "empty");
    for s in scores {
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>9.2} {:>9.2} {:>6}",
            s.name, s.frames, s.success, s.precision, s.empty_frames
        );
    }
    match mean_scores(scores) {
        Some((su, pr)) => {
            let _ = writeln!(out, "{:<12} {:>6} {:>9.2} {:>9.2}", "mean", scores.len(), su, pr);
        }
        None => out.push_str("mean: no tracklets\n"),
    }
    if !density.is_empty() {
        out.push_str("\ndensity (first-frame points, success)\n");
        for d in density {
            let flag = if d.flagged { "  low-points" } else { "" };
            let _ = writeln!(out, "{:<12} {:>6} {:>9.2}{flag}", d.name, d.points, d.success);
        }
    }
    out
}

pub fn format_report_kv(scores: &[TrackletScore], density: &[DensityEntry]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "tracklets={}", scores.len());
    if let Some((su, pr)) = mean_scores(scores) {
        let _ = writeln!(out, "mean.success={su:.6}");
        let _ = writeln!(out, "mean.precision={pr:.6}");
    }
    for s in scores {
        let _ = writeln!(out, "{}.success={:.6}", s.name, s.success);
        let _ = writeln!(out, "{}.precision={:.6}", s.name, s.precision);
        let _ = writeln!(out, "{}.empty_frames={}", s.name, s.empty_frames);
    }
    for d in density {
        let _ = writeln!(out, "{}.first_frame_points={}", d.name, d.points);
        let _ = writeln!(out, "{}.low_points={}", d.name, d.flagged);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point3;

    fn unit(x: f64) -> Box3D {
        Box3D::new(Point3::new(x, 0.0, 0.0), 1.0, 1.0, 1.0, 0.0).unwrap()
    }

    #[test]
    fn perfect_and_disjoint() {
        let gt = vec![unit(0.0), unit(5.0)];
        assert_eq!(success_auc(&gt, &gt).unwrap(), 100.0);
        assert_eq!(precision_auc(&gt, &gt).unwrap(), 100.0);
        let far: Vec<Box3D> = gt.iter().map(|b| unit(b.center().x + 10.0)).collect();
        assert!((success_auc(&far, &gt).unwrap() - 100.0 / 21.0).abs() < 1e-12);
        assert_eq!(precision_auc(&far, &gt).unwrap(), 0.0);
    }

    #[test]
    fn half_overlap_and_unit_error() {
        // shifting a unit cube by 1/3 along x gives IoU (2/3)/(4/3) = 1/2
        let gt = vec![unit(0.0)];
        let pred = vec![unit(1.0 / 3.0)];
        let iou = crate::geom::iou3d(&pred[0], &gt[0]);
        assert!((iou - 0.5).abs() < 1e-12);
        let pred = vec![unit(1.0)];
        assert!((precision_auc(&pred, &gt).unwrap() - 1100.0 / 21.0).abs() < 1e-9);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(matches!(success_auc(&[unit(0.0)], &[]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(precision_auc(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn report_formats() {
        let scores = vec![TrackletScore { name: "t0000".into(), frames: 3, success: 50.0, precision: 60.0, empty_frames: 0 }];
        let kv = format_report_kv(&scores, &[]);
        assert!(kv.contains("mean.success=50.000000"));
        assert!(format_report(&[], &[]).contains("no tracklets"));
    }
}
