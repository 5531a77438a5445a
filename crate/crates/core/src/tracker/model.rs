use crate::geom::{Box3D, Point3};
use crate::ptt::{PttParams, PttTrace};
use crate::rng::SplitMix64;
use crate::sampling::{ball_query, farthest_point_sample, pad_group, random_sample_with};
use crate::tensornn::{Graph, LinearLayer, Matrix, Mlp2, NodeId, ParamStore};

use super::config::{Sampler, TrackerConfig, Wiring};
use super::TrackerError;

/// Layer handles. Both PTT blocks are always allocated so every wiring
/// shares one parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackerLayers {
    /// Per-point group encoder, `3 → hidden → D`.
    pub backbone: Mlp2,
    /// `[search ‖ template summary]`, `2D → D`.
    pub augment: LinearLayer,
    pub ptt_vote: PttParams,
    /// `D → hidden → (Δx, Δy, Δz, logit)`.
    pub vote_head: Mlp2,
    /// `[(vote − centre)/r ‖ feature]`, `3 + D → hidden → D`.
    pub cluster_mlp: Mlp2,
    pub ptt_prop: PttParams,
    /// `D → hidden → (dx, dy, dz, θ, logit)`.
    pub prop_head: Mlp2,
}

impl TrackerLayers {
    pub fn new(store: &mut ParamStore, cfg: &TrackerConfig, rng: &SplitMix64) -> Result<Self, TrackerError> {
        let d = cfg.ptt.d;
        let (bh, hh) = (cfg.backbone_hidden, cfg.head_hidden);
        Ok(Self {
            backbone: Mlp2::new(store, "backbone", 3, bh, d, rng)?,
            augment: LinearLayer::new(store, "augment", 2 * d, d, rng)?,
            ptt_vote: PttParams::new(store, "ptt_vote", cfg.ptt, rng)?,
            vote_head: Mlp2::new(store, "vote_head", d, hh, 4, rng)?,
            cluster_mlp: Mlp2::new(store, "cluster", 3 + d, hh, d, rng)?,
            ptt_prop: PttParams::new(store, "ptt_prop", cfg.ptt, rng)?,
            prop_head: Mlp2::new(store, "prop_head", d, hh, 5, rng)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrackerModel {
    pub config: TrackerConfig,
    pub store: ParamStore,
    pub layers: TrackerLayers,
}

impl TrackerModel {
    /// Fresh parameters drawn from the `init` substream of `config.seed`.
    pub fn new(config: &TrackerConfig) -> Result<Self, TrackerError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let rng = SplitMix64::new(config.seed).substream("init");
        let layers = TrackerLayers::new(&mut store, config, &rng)?;
        Ok(Self { config: config.clone(), store, layers })
    }

    pub fn net(&self) -> Net<'_> {
        Net { cfg: &self.config, layers: &self.layers, store: &self.store }
    }
}

/// Point sets for one frame, already canonicalised and resampled.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub template: Vec<Point3>,
    pub search: Vec<Point3>,
    /// `(w, h, l)` given to every proposal.
    pub size: (f64, f64, f64),
}

#[derive(Debug, Clone)]
pub struct SeedNodes {
    pub coords: Vec<Point3>,
    /// `N×D`.
    pub feats: NodeId,
}

#[derive(Debug, Clone)]
pub struct VoteNodes {
    pub seed_coords: Vec<Point3>,
    /// `N×3`: seed coordinate plus predicted offset.
    pub centers: NodeId,
    /// `N×D`, after the optional PTT block.
    pub feats: NodeId,
    /// `N×1` foreground logits.
    pub logits: NodeId,
    pub attention: Option<PttTrace>,
}

#[derive(Debug, Clone)]
pub struct ProposalNodes {
    pub cluster_coords: Vec<Point3>,
    /// `C×3`, differentiable with respect to the votes.
    pub cluster_centers: NodeId,
    /// `C×4`: box centre and yaw.
    pub regression: NodeId,
    /// `C×1`.
    pub scores: NodeId,
    pub attention: Option<PttTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vote {
    pub center: Point3,
    pub seed_cls_logit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: Box3D,
    pub score_logit: f64,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub template: SeedNodes,
    pub search: SeedNodes,
    pub augmented: NodeId,
    pub votes: VoteNodes,
    pub proposals: ProposalNodes,
}

fn point_rows(m: &Matrix) -> Vec<Point3> {
    (0..m.rows()).map(|r| Point3::new(m.get(r, 0), m.get(r, 1), m.get(r, 2))).collect()
}

fn points_matrix(points: &[Point3]) -> Matrix {
    Matrix::from_vec(points.len(), 3, points.iter().flat_map(|p| p.to_array()).collect()).expect("3 columns")
}

/// Borrowed view used to record the tracker on a tape.
#[derive(Clone, Copy)]
pub struct Net<'a> {
    pub cfg: &'a TrackerConfig,
    pub layers: &'a TrackerLayers,
    pub store: &'a ParamStore,
}

impl<'a> Net<'a> {
    pub fn new(cfg: &'a TrackerConfig, layers: &'a TrackerLayers, store: &'a ParamStore) -> Self {
        Self { cfg, layers, store }
    }

    /// Picks `n` seeds, groups neighbours by ball query and max-pools a shared
    /// MLP over coordinates relative to each seed, scaled by the radius.
    pub fn backbone(&self, g: &mut Graph, points: &[Point3], n: usize, rng: &mut SplitMix64) -> Result<SeedNodes, TrackerError> {
        if points.len() < n {
            return Err(TrackerError::TooFewPoints { got: points.len(), need: n });
        }
        let picked = match self.cfg.sampler {
            Sampler::Fps => farthest_point_sample(points, n, 0)?.into_vec(),
            Sampler::Random => random_sample_with(points.len(), n, rng)?.indices,
        };
        let coords: Vec<Point3> = picked.iter().map(|&i| points[i]).collect();
        let group = self.cfg.backbone_group;
        let radius = self.cfg.backbone_radius;
        let groups = ball_query(&coords, points, radius, group)?;
        let mut rel = Matrix::zeros(n * group, 3);
        for (i, grp) in groups.iter().enumerate() {
            for (j, &p) in pad_group(grp, group).iter().enumerate() {
                let d = (points[p] - coords[i]) * (1.0 / radius);
                rel.row_mut(i * group + j).copy_from_slice(&d.to_array());
            }
        }
        let x = g.input(rel);
        let h = self.layers.backbone.forward(g, self.store, x)?;
        let feats = g.group_max(h, group)?;
        Ok(SeedNodes { coords, feats })
    }

    /// Concatenates each search feature with the channel-wise max over the
    /// template features and projects back to `D`.
    pub fn augment(&self, g: &mut Graph, template: &SeedNodes, search: &SeedNodes) -> Result<NodeId, TrackerError> {
        let d = self.cfg.ptt.d;
        let (nt, dt) = g.value(template.feats).shape();
        let (ns, ds) = g.value(search.feats).shape();
        if dt != d || ds != d {
            return Err(TrackerError::Ptt(crate::ptt::PttError::DimMismatch { expected: d, got: if dt != d { dt } else { ds } }));
        }
        if nt == 0 || ns == 0 {
            return Err(TrackerError::TooFewPoints { got: 0, need: 1 });
        }
        let summary = g.group_max(template.feats, nt)?;
        let rep = g.gather(summary, vec![0; ns])?;
        let cat = g.concat_cols(search.feats, rep)?;
        Ok(self.layers.augment.forward(g, self.store, cat)?)
    }

    pub fn vote_stage(&self, g: &mut Graph, coords: &[Point3], feats: NodeId, use_ptt: bool) -> Result<VoteNodes, TrackerError> {
        let (feats, attention) = if use_ptt {
            let trace = self.layers.ptt_vote.forward_graph(g, self.store, coords, feats)?;
            (trace.output, Some(trace))
        } else {
            (feats, None)
        };
        let head = self.layers.vote_head.forward(g, self.store, feats)?;
        let offsets = g.slice_cols(head, 0, 3)?;
        let logits = g.slice_cols(head, 3, 1)?;
        let base = g.input(points_matrix(coords));
        let centers = g.add(base, offsets)?;
        Ok(VoteNodes { seed_coords: coords.to_vec(), centers, feats, logits, attention })
    }

    pub fn propose_stage(&self, g: &mut Graph, votes: &VoteNodes, use_ptt: bool) -> Result<ProposalNodes, TrackerError> {
        let c = self.cfg.clusters;
        let vote_pts = point_rows(g.value(votes.centers));
        if vote_pts.len() < c {
            return Err(TrackerError::TooFewPoints { got: vote_pts.len(), need: c });
        }
        let picked = farthest_point_sample(&vote_pts, c, 0)?.into_vec();
        let cluster_coords: Vec<Point3> = picked.iter().map(|&i| vote_pts[i]).collect();
        let cluster_centers = g.gather(votes.centers, picked)?;

        let group = self.cfg.cluster_group;
        let groups = ball_query(&cluster_coords, &vote_pts, self.cfg.cluster_radius, group)?;
        let members: Vec<usize> = groups.iter().flat_map(|grp| pad_group(grp, group)).collect();
        let owner: Vec<usize> = (0..c * group).map(|r| r / group).collect();
        let member_pts = g.gather(votes.centers, members.clone())?;
        let owner_pts = g.gather(cluster_centers, owner)?;
        let rel = g.sub(member_pts, owner_pts)?;
        let rel = g.scale(rel, 1.0 / self.cfg.cluster_radius)?;
        let member_feats = g.gather(votes.feats, members)?;
        let x = g.concat_cols(rel, member_feats)?;
        let h = self.layers.cluster_mlp.forward(g, self.store, x)?;
        let pooled = g.group_max(h, group)?;

        let (pooled, attention) = if use_ptt {
            let trace = self.layers.ptt_prop.forward_graph_at(g, self.store, &cluster_coords, cluster_centers, pooled)?;
            (trace.output, Some(trace))
        } else {
            (pooled, None)
        };
        let head = self.layers.prop_head.forward(g, self.store, pooled)?;
        let offsets = g.slice_cols(head, 0, 3)?;
        let centers = g.add(cluster_centers, offsets)?;
        let theta = g.slice_cols(head, 3, 1)?;
        let regression = g.concat_cols(centers, theta)?;
        let scores = g.slice_cols(head, 4, 1)?;
        Ok(ProposalNodes { cluster_coords, cluster_centers, regression, scores, attention })
    }

    pub fn forward(&self, g: &mut Graph, input: &FrameInput, wiring: Wiring, rng: &mut SplitMix64) -> Result<ForwardTrace, TrackerError> {
        let template = self.backbone(g, &input.template, self.cfg.template_seeds, rng)?;
        let search = self.backbone(g, &input.search, self.cfg.search_seeds, rng)?;
        let augmented = self.augment(g, &template, &search)?;
        let votes = self.vote_stage(g, &search.coords, augmented, wiring.ptt_vote)?;
        let proposals = self.propose_stage(g, &votes, wiring.ptt_prop)?;
        Ok(ForwardTrace { template, search, augmented, votes, proposals })
    }
}

pub fn read_votes(g: &Graph, votes: &VoteNodes) -> Vec<Vote> {
    let centers = point_rows(g.value(votes.centers));
    let logits = g.value(votes.logits);
    centers.into_iter().enumerate().map(|(i, center)| Vote { center, seed_cls_logit: logits.get(i, 0) }).collect()
}

/// Materialises proposals with the given box size.
pub fn read_proposals(g: &Graph, props: &ProposalNodes, size: (f64, f64, f64)) -> Result<Vec<Proposal>, TrackerError> {
    let reg = g.value(props.regression);
    let scores = g.value(props.scores);
    let (w, h, l) = size;
    (0..reg.rows())
        .map(|r| {
            let center = Point3::new(reg.get(r, 0), reg.get(r, 1), reg.get(r, 2));
            let bbox = Box3D::new(center, w, h, l, reg.get(r, 3))?;
            Ok(Proposal { bbox, score_logit: scores.get(r, 0) })
        })
        .collect()
}

/// Index of the highest score; ties go to the lowest index.
pub fn select_index(proposals: &[Proposal]) -> Result<usize, TrackerError> {
    if proposals.is_empty() {
        return Err(TrackerError::NoProposals);
    }
    let mut best = 0;
    for (i, p) in proposals.iter().enumerate().skip(1) {
        if p.score_logit > proposals[best].score_logit {
            best = i;
        }
    }
    Ok(best)
}

pub fn select(proposals: &[Proposal]) -> Result<Box3D, TrackerError> {
    Ok(proposals[select_index(proposals)?].bbox)
}
