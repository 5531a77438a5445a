//! Point-track transformer: local vector self-attention over point-cloud
//! seeds, and a vote-and-propose single-object tracker built around it.

pub mod geom;
pub mod rng;
pub mod sampling;
pub mod tensornn;
pub mod ptt;
pub mod eval;
pub mod tracker;
