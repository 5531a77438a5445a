//! Vote-and-propose single-object tracker with optional PTT blocks in the
//! voting and proposal stages.
//!
//! Per frame: backbone seeds for template and search area, template-augmented
//! search features, per-seed votes toward the object centre, clusters of votes
//! pooled into scored box proposals, and the best proposal.

pub mod checkpoint;
mod config;
mod data;
mod loss;
mod model;
mod track;
mod train;

pub use config::{parse_on_off, Sampler, TrackerConfig, Wiring};
pub use data::{canonical_crop, frame_input, merge_template, perturb, resample, train_sample, TemplateMode, TrainSample};
pub use loss::{labels, loss_graph, Labels, LossNodes, LossReport, LossWeights};
pub use model::{
    read_proposals, read_votes, select, select_index, ForwardTrace, FrameInput, Net, Proposal, ProposalNodes,
    SeedNodes, TrackerLayers, TrackerModel, Vote, VoteNodes,
};
pub use track::{evaluate, track, AttentionDump, FrameTiming, Predictor, TrackOptions, TrackResult};
pub use train::{evaluate_loss, sample_gradients, train, train_with, EpochLog, TrainOutcome};

use thiserror::Error;

use crate::eval::EvalError;
use crate::geom::GeomError;
use crate::ptt::PttError;
use crate::sampling::SamplingError;
use crate::tensornn::NnError;

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("config: {0}")]
    Config(String),
    #[error("{got} points, need at least {need}")]
    TooFewPoints { got: usize, need: usize },
    #[error("no proposals to select from")]
    NoProposals,
    #[error("no training frames (every tracklet has a single frame)")]
    EmptyDataset,
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Ptt(#[from] PttError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
