#![allow(dead_code)]

use ptt_core::geom::Point3;
use ptt_core::ptt::PttConfig;
use ptt_core::rng::SplitMix64;
use ptt_core::tensornn::{LinearLayer, Mlp2, ParamStore};
use ptt_core::tracker::TrackerConfig;

/// A tracker small enough to train in milliseconds.
pub fn tiny_config(seed: u64) -> TrackerConfig {
    TrackerConfig {
        ptt: PttConfig { d: 8, m: 8, k: 4 },
        search_seeds: 16,
        template_seeds: 8,
        backbone_group: 4,
        backbone_hidden: 8,
        search_points: 64,
        template_points: 32,
        clusters: 4,
        cluster_group: 4,
        head_hidden: 8,
        epochs: 3,
        batch_size: 8,
        samples_per_epoch: 32,
        lr: 3e-3,
        seed,
        ..TrackerConfig::default()
    }
}

/// Moves every parameter (biases included) off its initial value.
pub fn perturb_params(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut r = SplitMix64::new(seed);
    for t in store.iter_mut() {
        for v in &mut t.values {
            *v += r.uniform(-scale, scale);
        }
    }
}

pub fn lin(store: &ParamStore, l: &LinearLayer, x: &[f64]) -> Vec<f64> {
    let w = &store.get(l.weight).values;
    let b = &store.get(l.bias).values;
    (0..l.out_dim).map(|o| b[o] + (0..l.in_dim).map(|i| w[o * l.in_dim + i] * x[i]).sum::<f64>()).collect()
}

pub fn mlp(store: &ParamStore, m: &Mlp2, x: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = lin(store, &m.first, x).into_iter().map(|v| v.max(0.0)).collect();
    lin(store, &m.second, &h)
}

pub fn blob(n: usize, center: Point3, spread: f64, seed: u64) -> Vec<Point3> {
    let mut r = SplitMix64::new(seed);
    (0..n)
        .map(|_| center + Point3::new(r.uniform(-spread, spread), r.uniform(-spread, spread), r.uniform(-spread, spread) * 0.5))
        .collect()
}
