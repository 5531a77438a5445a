//! Run manifest: enough to re-run a command and get the same outputs.
//!
//! ```text
//! version=0.1.0
//! command=train
//! arg=train            (one line per argv entry, program name excluded)
//! seed=7
//! config.ptt.d=32      (effective tracker config, when the command uses one)
//! started_unix=…
//! finished_unix=…      (appended on success)
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ptt_core::tracker::TrackerConfig;

use crate::CliError;

pub const FILE_NAME: &str = "run_manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub config: Option<TrackerConfig>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, args: &[String], seed: u64, config: Option<TrackerConfig>) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args: args.to_vec(),
            seed,
            config,
            started_unix: now(),
            finished_unix: None,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("version={}\ncommand={}\n", self.version, self.command);
        for a in &self.args {
            s.push_str(&format!("arg={a}\n"));
        }
        s.push_str(&format!("seed={}\n", self.seed));
        if let Some(cfg) = &self.config {
            for key in TrackerConfig::KEYS {
                s.push_str(&format!("config.{key}={}\n", cfg.get(key).expect("known key")));
            }
        }
        s.push_str(&format!("started_unix={}\n", self.started_unix));
        if let Some(f) = self.finished_unix {
            s.push_str(&format!("finished_unix={f}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let bad = |m: String| CliError::Data(format!("run manifest: {m}"));
        let mut m = RunManifest {
            version: String::new(),
            command: String::new(),
            args: Vec::new(),
            seed: 0,
            config: None,
            started_unix: 0,
            finished_unix: None,
        };
        let mut cfg_lines = String::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad line {line:?}")))?;
            match k {
                "version" => m.version = v.to_string(),
                "command" => m.command = v.to_string(),
                "arg" => m.args.push(v.to_string()),
                "seed" => m.seed = v.parse().map_err(|_| bad("seed".into()))?,
                "started_unix" => m.started_unix = v.parse().map_err(|_| bad("started_unix".into()))?,
                "finished_unix" => m.finished_unix = Some(v.parse().map_err(|_| bad("finished_unix".into()))?),
                _ => match k.strip_prefix("config.") {
                    Some(key) => cfg_lines.push_str(&format!("{key} = {v}\n")),
                    None => return Err(bad(format!("unknown key {k:?}"))),
                },
            }
        }
        if m.command.is_empty() || m.args.is_empty() {
            return Err(bad("no command recorded".into()));
        }
        if !cfg_lines.is_empty() {
            m.config = Some(TrackerConfig::parse(&cfg_lines)?);
        }
        Ok(m)
    }

    /// Writes the manifest into `out_dir` (created if needed).
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf, CliError> {
        fs::create_dir_all(out_dir)?;
        let path = out_dir.join(FILE_NAME);
        fs::write(&path, self.to_text())?;
        Ok(path)
    }

    pub fn mark_finished(&mut self, out_dir: &Path) -> Result<(), CliError> {
        let t = now();
        self.finished_unix = Some(t);
        let mut f = fs::OpenOptions::new().append(true).open(out_dir.join(FILE_NAME))?;
        writeln!(f, "finished_unix={t}")?;
        Ok(())
    }

    /// The recorded argv with `--out` pointed at `out` and, when a config
    /// snapshot exists, `--config` pointed at `config_path`.
    pub fn replay_args(&self, out: &Path, config_path: Option<&Path>) -> Vec<String> {
        let mut args = Vec::with_capacity(self.args.len() + 2);
        let mut it = self.args.iter();
        let mut saw_config = false;
        while let Some(a) = it.next() {
            match a.as_str() {
                "--out" => {
                    it.next();
                    args.push("--out".into());
                    args.push(out.display().to_string());
                }
                "--config" => {
                    it.next();
                    if let Some(c) = config_path {
                        args.push("--config".into());
                        args.push(c.display().to_string());
                        saw_config = true;
                    }
                }
                _ => args.push(a.clone()),
            }
        }
        if let (Some(c), false) = (config_path, saw_config) {
            args.push("--config".into());
            args.push(c.display().to_string());
        }
        args
    }
}
