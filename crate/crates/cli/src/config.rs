//! Run configuration: plain `key = value` lines grouped under `[section]`
//! headers. `#` starts a comment. Unknown sections or keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use prospect_core::features::{TargetParams, DEFAULT_THRESHOLD};
use prospect_core::model::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub lr: f64,
    pub marginal_steps: usize,
    pub joint_steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { lr: 1e-3, marginal_steps: 2000, joint_steps: 2000, batch: 4, seed: 0, log_every: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSettings {
    pub scenes: Option<PathBuf>,
    pub threshold: f64,
}

impl Default for DataSettings {
    fn default() -> Self {
        Self { scenes: None, threshold: DEFAULT_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainSettings,
    pub data: DataSettings,
    pub overlap_threshold: f64,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| anyhow!("invalid value {value:?} for {key}: {e}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !["model", "targets", "train", "data", "eval"].contains(&section.as_str()) {
                    bail!("line {}: unknown section [{section}]", i + 1);
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
            cfg.set(&section, key.trim(), value.trim()).with_context(|| format!("line {}", i + 1))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match (section, key) {
            ("model", "embed_dim") => m.embed_dim = parse(key, v)?,
            ("model", "hidden") => m.hidden = parse(key, v)?,
            ("model", "gru_hidden") => m.gru_hidden = parse(key, v)?,
            ("model", "n_candidates") => m.n_candidates = parse(key, v)?,
            ("model", "top_k") => m.top_k = parse(key, v)?,
            ("model", "stack_q") => m.q_stack = parse(key, v)?,
            ("model", "alpha") => m.alpha = parse(key, v)?,
            ("model", "nms_eps0") => m.nms_eps0 = parse(key, v)?,
            ("model", "nms_gamma") => m.nms_gamma = parse(key, v)?,
            ("model", "coord_scale") => m.coord_scale = parse(key, v)?,
            ("model", "map_radius") => m.map_radius = parse(key, v)?,
            ("model", "huber_delta") => m.huber_delta = parse(key, v)?,
            ("model", "history_tokens") => m.history_tokens = parse(key, v)?,
            ("model", "history_len") => m.history_len = parse(key, v)?,
            ("model", "horizon") => m.horizon = parse(key, v)?,
            ("targets", "preset") => m.target_preset = parse(key, v)?,
            ("targets", "spacing") => m.target_spacing = parse(key, v)?,
            ("train", "lr") => t.lr = parse(key, v)?,
            ("train", "marginal_steps") => t.marginal_steps = parse(key, v)?,
            ("train", "joint_steps") => t.joint_steps = parse(key, v)?,
            ("train", "batch") => t.batch = parse(key, v)?,
            ("train", "seed") => t.seed = parse(key, v)?,
            ("train", "log_every") => t.log_every = parse(key, v)?,
            ("data", "scenes") => self.data.scenes = Some(PathBuf::from(v)),
            ("data", "threshold") => self.data.threshold = parse(key, v)?,
            ("eval", "overlap_threshold") => self.overlap_threshold = parse(key, v)?,
            ("", _) => bail!("key {key} appears before any [section]"),
            _ => bail!("unknown key {key} in [{section}]"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        TargetParams::preset(self.model.target_preset)?;
        if !(self.train.lr > 0.0) || self.train.batch == 0 {
            bail!("train.lr and train.batch must be positive");
        }
        if !(self.data.threshold > 0.0) {
            bail!("data.threshold must be positive");
        }
        if !(0.0..1.0).contains(&self.overlap_threshold) {
            bail!("eval.overlap_threshold must lie in [0, 1)");
        }
        Ok(())
    }

    /// Renders the configuration in the format `parse` reads back.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        let _ = writeln!(s, "[model]");
        for (k, v) in [
            ("embed_dim", m.embed_dim.to_string()),
            ("hidden", m.hidden.to_string()),
            ("gru_hidden", m.gru_hidden.to_string()),
            ("n_candidates", m.n_candidates.to_string()),
            ("top_k", m.top_k.to_string()),
            ("stack_q", m.q_stack.to_string()),
            ("alpha", m.alpha.to_string()),
            ("nms_eps0", m.nms_eps0.to_string()),
            ("nms_gamma", m.nms_gamma.to_string()),
            ("coord_scale", m.coord_scale.to_string()),
            ("map_radius", m.map_radius.to_string()),
            ("huber_delta", m.huber_delta.to_string()),
            ("history_tokens", m.history_tokens.to_string()),
            ("history_len", m.history_len.to_string()),
            ("horizon", m.horizon.to_string()),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "\n[targets]\npreset = {}\nspacing = {}", m.target_preset, m.target_spacing);
        let _ = writeln!(
            s,
            "\n[train]\nlr = {}\nmarginal_steps = {}\njoint_steps = {}\nbatch = {}\nseed = {}\nlog_every = {}",
            t.lr, t.marginal_steps, t.joint_steps, t.batch, t.seed, t.log_every
        );
        let _ = writeln!(s, "\n[data]");
        if let Some(p) = &self.data.scenes {
            let _ = writeln!(s, "scenes = {}", p.display());
        }
        let _ = writeln!(s, "threshold = {}", self.data.threshold);
        let _ = writeln!(s, "\n[eval]\noverlap_threshold = {}", self.overlap_threshold);
        s
    }
}
