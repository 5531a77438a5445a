//! Synthetic tracklets, OPE metrics and the on-disk corpus format.

mod io;
mod metrics;
mod synth;

pub use io::{read_corpus, read_tracklet, write_corpus, write_tracklet, Corpus, CorpusManifest, Split};
pub use metrics::{
    density_report, format_report, format_report_kv, mean_scores, precision_auc, precision_curve, success_auc, success_curve,
    DensityEntry, OpeCurve, TrackletScore, LOW_POINT_FLAG,
};
pub use synth::{gen_corpus, gen_tracklet, DensityMix, MotionProfile, TrackletSpec};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::geom::{crop_points, Box3D, GeomError, Point3};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction has {pred} frames, ground truth {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("no frames to evaluate")]
    Empty,
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

macro_rules! tag_enum {
    ($name:ident { $($variant:ident => $text:literal),* $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name { $($variant),* }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),*];
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),* }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)*
                    other => Err(format!("unknown {} {other:?}", stringify!($name))),
                }
            }
        }
    };
}

tag_enum!(Category { Rigid => "rigid", Nonrigid => "nonrigid" });
tag_enum!(DensityLevel { Sparse => "sparse", Medium => "medium", Dense => "dense" });
tag_enum!(ClutterLevel { Clean => "none", Low => "low", High => "high" });

#[derive(Debug, Clone, PartialEq)]
pub struct TrackletMeta {
    pub name: String,
    pub category: Category,
    pub density: DensityLevel,
    pub clutter: ClutterLevel,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub points: Vec<Point3>,
    pub gt: Box3D,
}

/// One object's frame sequence. Never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    meta: TrackletMeta,
    frames: Vec<Frame>,
}

impl Tracklet {
    pub fn new(meta: TrackletMeta, frames: Vec<Frame>) -> Result<Self, EvalError> {
        if frames.is_empty() {
            return Err(EvalError::Empty);
        }
        if frames.iter().any(|f| f.points.iter().any(|p| !p.is_finite())) {
            return Err(EvalError::Format("non-finite point".into()));
        }
        Ok(Self { meta, frames })
    }

    pub fn meta(&self) -> &TrackletMeta {
        &self.meta
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn gt_boxes(&self) -> Vec<Box3D> {
        self.frames.iter().map(|f| f.gt).collect()
    }

    /// Points inside the first ground-truth box.
    pub fn first_frame_in_box(&self) -> usize {
        let f = &self.frames[0];
        crop_points(&f.points, &f.gt, 0.0).len()
    }
}
