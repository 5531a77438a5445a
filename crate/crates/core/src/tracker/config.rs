//! Line-oriented `key = value` configuration. `#` starts a comment; unknown
//! keys and malformed values are errors.

use std::fmt::Write as _;
use std::str::FromStr;

use super::TrackerError;
use crate::ptt::PttConfig;
use crate::tensornn::LrSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampler {
    #[default]
    Fps,
    Random,
}

impl FromStr for Sampler {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fps" => Ok(Sampler::Fps),
            "rs" => Ok(Sampler::Random),
            other => Err(format!("unknown sampler {other:?} (expected fps or rs)")),
        }
    }
}

impl std::fmt::Display for Sampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sampler::Fps => "fps",
            Sampler::Random => "rs",
        })
    }
}

/// Which stages run their PTT block. All four combinations share one parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Wiring {
    pub ptt_vote: bool,
    pub ptt_prop: bool,
}

impl Wiring {
    pub const BASELINE: Wiring = Wiring { ptt_vote: false, ptt_prop: false };
    pub const VOTE: Wiring = Wiring { ptt_vote: true, ptt_prop: false };
    pub const PROP: Wiring = Wiring { ptt_vote: false, ptt_prop: true };
    pub const BOTH: Wiring = Wiring { ptt_vote: true, ptt_prop: true };
    pub const ALL: [Wiring; 4] = [Self::BASELINE, Self::VOTE, Self::PROP, Self::BOTH];

    pub fn label(&self) -> &'static str {
        match (self.ptt_vote, self.ptt_prop) {
            (false, false) => "baseline",
            (true, false) => "ptt-vote",
            (false, true) => "ptt-prop",
            (true, true) => "ptt-both",
        }
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

pub fn parse_on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => Err(format!("expected on/off, got {other:?}")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub ptt: PttConfig,
    pub search_seeds: usize,
    pub template_seeds: usize,
    pub backbone_radius: f64,
    pub backbone_group: usize,
    pub backbone_hidden: usize,
    pub search_points: usize,
    pub template_points: usize,
    pub search_margin: f64,
    pub template_margin: f64,
    pub clusters: usize,
    pub cluster_radius: f64,
    pub cluster_group: usize,
    pub head_hidden: usize,
    pub positive_dist: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub samples_per_epoch: usize,
    pub lr: f64,
    pub lr_drop_every: usize,
    pub lr_factor: f64,
    pub offset_xy: f64,
    pub offset_z: f64,
    pub offset_theta: f64,
    pub wiring: Wiring,
    pub sampler: Sampler,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            ptt: PttConfig::default(),
            search_seeds: 64,
            template_seeds: 32,
            backbone_radius: 0.6,
            backbone_group: 16,
            backbone_hidden: 32,
            search_points: 512,
            template_points: 512,
            search_margin: 2.0,
            template_margin: 0.2,
            clusters: 16,
            cluster_radius: 0.5,
            cluster_group: 8,
            head_hidden: 32,
            positive_dist: 0.3,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            epochs: 30,
            batch_size: 16,
            samples_per_epoch: 256,
            lr: 1e-3,
            lr_drop_every: 12,
            lr_factor: 5.0,
            offset_xy: 0.3,
            offset_z: 0.05,
            offset_theta: 5f64.to_radians(),
            wiring: Wiring::BOTH,
            sampler: Sampler::Fps,
            seed: 0,
        }
    }
}

fn parse_num<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| e.to_string())
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+ : $kind:ident),* $(,)?) => {
        impl TrackerConfig {
            /// Every recognised key, in serialisation order.
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrackerError> {
                let bad = |e: String| TrackerError::Config(format!("{key}: {e}"));
                match key {
                    $($key => { self.$($field).+ = config_keys!(@parse $kind, value, bad); })*
                    other => return Err(TrackerError::Config(format!("unknown key {other:?}"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($key => Some(config_keys!(@show $kind, self.$($field).+)),)*
                    _ => None,
                }
            }
        }
    };
    (@parse num, $v:expr, $bad:expr) => { parse_num($v).map_err($bad)? };
    (@parse onoff, $v:expr, $bad:expr) => { parse_on_off($v).map_err($bad)? };
    (@parse sampler, $v:expr, $bad:expr) => { $v.parse::<Sampler>().map_err($bad)? };
    (@show num, $e:expr) => { format!("{:?}", $e) };
    (@show onoff, $e:expr) => { on_off($e).to_string() };
    (@show sampler, $e:expr) => { $e.to_string() };
}

config_keys! {
    "ptt.d" => ptt.d: num,
    "ptt.m" => ptt.m: num,
    "ptt.k" => ptt.k: num,
    "backbone.search_seeds" => search_seeds: num,
    "backbone.template_seeds" => template_seeds: num,
    "backbone.radius" => backbone_radius: num,
    "backbone.group_size" => backbone_group: num,
    "backbone.hidden" => backbone_hidden: num,
    "search.points" => search_points: num,
    "template.points" => template_points: num,
    "search.margin" => search_margin: num,
    "template.margin" => template_margin: num,
    "proposal.clusters" => clusters: num,
    "proposal.radius" => cluster_radius: num,
    "proposal.group_size" => cluster_group: num,
    "head.hidden" => head_hidden: num,
    "label.positive_dist" => positive_dist: num,
    "loss.lambda1" => lambda1: num,
    "loss.lambda2" => lambda2: num,
    "loss.lambda3" => lambda3: num,
    "train.epochs" => epochs: num,
    "train.batch_size" => batch_size: num,
    "train.samples_per_epoch" => samples_per_epoch: num,
    "train.lr" => lr: num,
    "train.lr_drop_every" => lr_drop_every: num,
    "train.lr_factor" => lr_factor: num,
    "train.offset_xy" => offset_xy: num,
    "train.offset_z" => offset_z: num,
    "train.offset_theta" => offset_theta: num,
    "wiring.ptt_vote" => wiring.ptt_vote: onoff,
    "wiring.ptt_prop" => wiring.ptt_prop: onoff,
    "sampler" => sampler: sampler,
    "seed" => seed: num,
}

impl TrackerConfig {
    pub fn parse(text: &str) -> Result<Self, TrackerError> {
        let mut cfg = Self::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    /// Overrides fields from `key = value` lines.
    pub fn apply(&mut self, text: &str) -> Result<(), TrackerError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrackerError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("known key"));
        }
        s
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule { base_lr: self.lr, drop_every: self.lr_drop_every, factor: self.lr_factor }
    }

    pub fn validate(&self) -> Result<(), TrackerError> {
        let err = |m: &str| Err(TrackerError::Config(m.to_string()));
        if self.ptt.d == 0 || self.ptt.m == 0 || self.ptt.k == 0 {
            return err("ptt dimensions must be at least 1");
        }
        if self.search_seeds < self.ptt.k {
            return err("backbone.search_seeds must be at least ptt.k");
        }
        if self.clusters < self.ptt.k {
            return err("proposal.clusters must be at least ptt.k");
        }
        if self.clusters > self.search_seeds {
            return err("proposal.clusters cannot exceed backbone.search_seeds");
        }
        if self.template_seeds == 0 || self.template_points < self.template_seeds || self.search_points < self.search_seeds {
            return err("point budgets must cover the seed counts");
        }
        if self.backbone_group == 0 || self.cluster_group == 0 || self.backbone_hidden == 0 || self.head_hidden == 0 {
            return err("group sizes and hidden widths must be at least 1");
        }
        let positive = [self.backbone_radius, self.cluster_radius, self.positive_dist];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return err("radii and label thresholds must be positive");
        }
        if !(self.search_margin >= 0.0 && self.template_margin >= 0.0) {
            return err("margins must be non-negative");
        }
        if [self.lambda1, self.lambda2, self.lambda3].iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return err("loss weights must be finite and non-negative");
        }
        if self.batch_size == 0 || !(self.lr > 0.0) || !(self.lr_factor > 0.0) {
            return err("batch size, learning rate and decay factor must be positive");
        }
        Ok(())
    }

    /// Settings that fix the parameter layout; a checkpoint is only usable
    /// with a config that agrees on all of them.
    pub fn shape_keys() -> &'static [&'static str] {
        &[
            "ptt.d",
            "ptt.m",
            "ptt.k",
            "backbone.hidden",
            "head.hidden",
        ]
    }
}
