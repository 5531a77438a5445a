//! Tracker checkpoint: one text line `PTTMANIFEST key=value …` holding the
//! full configuration (PTT sizes and wiring included), followed by the
//! tensor file.

use std::io::{BufRead, BufReader, Read, Write};

use crate::tensornn::checkpoint::{read_params, write_params};

use super::config::TrackerConfig;
use super::model::TrackerModel;
use super::TrackerError;

pub const MANIFEST_TAG: &str = "PTTMANIFEST";

pub fn manifest_line(cfg: &TrackerConfig) -> String {
    let mut line = String::from(MANIFEST_TAG);
    for key in TrackerConfig::KEYS {
        line.push(' ');
        line.push_str(key);
        line.push('=');
        line.push_str(&cfg.get(key).expect("known key"));
    }
    line
}

pub fn parse_manifest_line(line: &str) -> Result<TrackerConfig, TrackerError> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(MANIFEST_TAG) {
        return Err(TrackerError::Checkpoint("missing manifest line".into()));
    }
    let mut cfg = TrackerConfig::default();
    for kv in parts {
        let (k, v) = kv.split_once('=').ok_or_else(|| TrackerError::Checkpoint(format!("bad manifest entry {kv:?}")))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn save<W: Write>(model: &TrackerModel, mut w: W) -> Result<(), TrackerError> {
    writeln!(w, "{}", manifest_line(&model.config))?;
    write_params(&model.store, &mut w)?;
    Ok(())
}

pub fn load<R: Read>(r: R) -> Result<TrackerModel, TrackerError> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let cfg = parse_manifest_line(line.trim_end())?;
    let stored = read_params(r)?;
    let mut model = TrackerModel::new(&cfg)?;
    if stored.len() != model.store.len() {
        return Err(TrackerError::Checkpoint(format!("{} tensors, expected {}", stored.len(), model.store.len())));
    }
    model.store.load_values_from(&stored)?;
    Ok(model)
}

/// Rejects a config whose layout-defining keys differ from the checkpoint's.
pub fn check_compatible(model: &TrackerModel, cfg: &TrackerConfig) -> Result<(), TrackerError> {
    for key in TrackerConfig::shape_keys() {
        let (a, b) = (model.config.get(key), cfg.get(key));
        if a != b {
            return Err(TrackerError::Checkpoint(format!(
                "{key} is {} in the checkpoint but {} in the config",
                a.unwrap_or_default(),
                b.unwrap_or_default()
            )));
        }
    }
    Ok(())
}
