use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::denoiser::UNetConfig;
use crate::diffusion::{BiasSpace, GuidanceConfig, NoiseSchedule, ReverseMode, ScheduleKind};
use crate::grids::{SyntheticSpec, DOWNSCALE_FACTOR};
use crate::numerics::AdamW;
use crate::preprocess::DEFAULT_GAMMA;
use crate::{Error, Result};

/// Every knob of a run. Text form is `key = value` lines with dotted keys;
/// see [`RunConfig::KEYS`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Dataset manifest; when unset a synthetic set is generated under
    /// `out_dir/data` from `size`, `count` and `eval_count`.
    pub manifest: Option<PathBuf>,
    pub size: usize,
    pub count: usize,
    pub eval_count: usize,
    pub gamma: f64,
    pub base_channels: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
    pub groups: usize,
    pub use_topo: bool,
    pub diffusion_steps: usize,
    pub schedule: ScheduleKind,
    pub reverse: ReverseMode,
    pub lr: f64,
    pub batch_size: usize,
    pub train_steps: usize,
    pub weight_decay: f64,
    pub checkpoint_every: usize,
    pub save_optimizer: bool,
    pub guidance_w: f64,
    pub guidance_enabled: bool,
    pub bias_space: BiasSpace,
    pub guidance_eps: f64,
    pub srcnn_steps: usize,
    pub srcnn_lr: f64,
    pub srcnn_batch_size: usize,
    pub eval_batch: usize,
    pub eval_panels: usize,
    pub eval_sweep: Vec<f64>,
    pub eval_sweep_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            manifest: None,
            size: 32,
            count: 512,
            eval_count: 64,
            gamma: DEFAULT_GAMMA,
            base_channels: 32,
            depth: 2,
            time_embed_dim: 128,
            groups: 8,
            use_topo: true,
            diffusion_steps: 200,
            schedule: ScheduleKind::Linear,
            reverse: ReverseMode::Ancestral,
            lr: 3e-4,
            batch_size: 16,
            train_steps: 3000,
            weight_decay: 0.0,
            checkpoint_every: 500,
            save_optimizer: true,
            guidance_w: 100.0,
            guidance_enabled: true,
            bias_space: BiasSpace::Hr,
            guidance_eps: 1e-8,
            srcnn_steps: 1000,
            srcnn_lr: 3e-4,
            srcnn_batch_size: 16,
            eval_batch: 64,
            eval_panels: 4,
            eval_sweep: vec![0.0, 1.0, 10.0, 100.0],
            eval_sweep_count: 20,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::config_key(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::config_key(key, format!("expected a boolean, got `{value}`"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| parse(key, v.trim()))
        .collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Copy with the run location reset, as stored in checkpoints.
    pub fn portable(&self) -> RunConfig {
        RunConfig {
            out_dir: RunConfig::default().out_dir,
            ..self.clone()
        }
    }

    pub const KEYS: [&'static str; 32] = [
        "seed",
        "out_dir",
        "data.manifest",
        "data.size",
        "data.count",
        "data.eval_count",
        "preprocess.gamma",
        "model.base_channels",
        "model.depth",
        "model.time_embed_dim",
        "model.groups",
        "model.use_topo",
        "diffusion.steps",
        "diffusion.schedule",
        "diffusion.reverse",
        "train.lr",
        "train.batch_size",
        "train.steps",
        "train.weight_decay",
        "train.checkpoint_every",
        "train.save_optimizer",
        "guidance.w",
        "guidance.enabled",
        "guidance.bias_space",
        "guidance.eps",
        "srcnn.steps",
        "srcnn.lr",
        "srcnn.batch_size",
        "eval.batch",
        "eval.panels",
        "eval.sweep",
        "eval.sweep_count",
    ];

    /// Sets one key. Hyphens in key names are read as underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let canonical = key.trim().replace('-', "_");
        let k = canonical.as_str();
        let v = value.trim();
        match k {
            "seed" => self.seed = parse(k, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "data.manifest" => {
                self.manifest = match v {
                    "" | "none" => None,
                    p => Some(PathBuf::from(p)),
                }
            }
            "data.size" => self.size = parse(k, v)?,
            "data.count" => self.count = parse(k, v)?,
            "data.eval_count" => self.eval_count = parse(k, v)?,
            "preprocess.gamma" => self.gamma = parse(k, v)?,
            "model.base_channels" => self.base_channels = parse(k, v)?,
            "model.depth" => self.depth = parse(k, v)?,
            "model.time_embed_dim" => self.time_embed_dim = parse(k, v)?,
            "model.groups" => self.groups = parse(k, v)?,
            "model.use_topo" => self.use_topo = parse_bool(k, v)?,
            "diffusion.steps" => self.diffusion_steps = parse(k, v)?,
            "diffusion.schedule" => self.schedule = parse(k, v)?,
            "diffusion.reverse" => self.reverse = parse(k, v)?,
            "train.lr" => self.lr = parse(k, v)?,
            "train.batch_size" => self.batch_size = parse(k, v)?,
            "train.steps" => self.train_steps = parse(k, v)?,
            "train.weight_decay" => self.weight_decay = parse(k, v)?,
            "train.checkpoint_every" => self.checkpoint_every = parse(k, v)?,
            "train.save_optimizer" => self.save_optimizer = parse_bool(k, v)?,
            "guidance.w" => self.guidance_w = parse(k, v)?,
            "guidance.enabled" => self.guidance_enabled = parse_bool(k, v)?,
            "guidance.bias_space" => self.bias_space = parse(k, v)?,
            "guidance.eps" => self.guidance_eps = parse(k, v)?,
            "srcnn.steps" => self.srcnn_steps = parse(k, v)?,
            "srcnn.lr" => self.srcnn_lr = parse(k, v)?,
            "srcnn.batch_size" => self.srcnn_batch_size = parse(k, v)?,
            "eval.batch" => self.eval_batch = parse(k, v)?,
            "eval.panels" => self.eval_panels = parse(k, v)?,
            "eval.sweep" => self.eval_sweep = parse_list(k, v)?,
            "eval.sweep_count" => self.eval_sweep_count = parse(k, v)?,
            _ => return Err(Error::config_key(key.trim(), "unknown key")),
        }
        Ok(())
    }

    /// Every key with its current value, in [`RunConfig::KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Path| p.display().to_string();
        vec![
            ("seed", self.seed.to_string()),
            ("out_dir", path(&self.out_dir)),
            (
                "data.manifest",
                self.manifest.as_deref().map_or("none".into(), path),
            ),
            ("data.size", self.size.to_string()),
            ("data.count", self.count.to_string()),
            ("data.eval_count", self.eval_count.to_string()),
            ("preprocess.gamma", self.gamma.to_string()),
            ("model.base_channels", self.base_channels.to_string()),
            ("model.depth", self.depth.to_string()),
            ("model.time_embed_dim", self.time_embed_dim.to_string()),
            ("model.groups", self.groups.to_string()),
            ("model.use_topo", self.use_topo.to_string()),
            ("diffusion.steps", self.diffusion_steps.to_string()),
            ("diffusion.schedule", self.schedule.to_string()),
            ("diffusion.reverse", self.reverse.to_string()),
            ("train.lr", self.lr.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.steps", self.train_steps.to_string()),
            ("train.weight_decay", self.weight_decay.to_string()),
            ("train.checkpoint_every", self.checkpoint_every.to_string()),
            ("train.save_optimizer", self.save_optimizer.to_string()),
            ("guidance.w", self.guidance_w.to_string()),
            ("guidance.enabled", self.guidance_enabled.to_string()),
            ("guidance.bias_space", self.bias_space.to_string()),
            ("guidance.eps", self.guidance_eps.to_string()),
            ("srcnn.steps", self.srcnn_steps.to_string()),
            ("srcnn.lr", self.srcnn_lr.to_string()),
            ("srcnn.batch_size", self.srcnn_batch_size.to_string()),
            ("eval.batch", self.eval_batch.to_string()),
            ("eval.panels", self.eval_panels.to_string()),
            ("eval.sweep", fmt_list(&self.eval_sweep)),
            ("eval.sweep_count", self.eval_sweep_count.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Parses config text on top of the defaults. A key may appear once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find(" #").or_else(|| raw.trim_start().starts_with('#').then_some(0)) {
                Some(0) => "",
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            let key = key.trim();
            if !seen.insert(key.replace('-', "_")) {
                return Err(Error::config_key(key, format!("repeated on line {}", lineno + 1)));
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not `key=value`")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, reason: &str| Err(Error::config_key(key, reason));
        if self.size == 0 || !self.size.is_multiple_of(DOWNSCALE_FACTOR) {
            return fail("data.size", "must be a positive multiple of 8");
        }
        if !self.size.is_multiple_of(1 << self.depth.min(16)) {
            return fail("data.size", "must be divisible by 2^model.depth");
        }
        if self.manifest.is_none() {
            self.synthetic_spec().validate()?;
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail("preprocess.gamma", "must lie in (0, 1]");
        }
        self.unet_config().validate()?;
        if self.diffusion_steps < 2 {
            return fail("diffusion.steps", "must be at least 2");
        }
        for (key, v) in [("train.lr", self.lr), ("srcnn.lr", self.srcnn_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return fail(key, "must be positive");
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail("train.weight_decay", "must be non-negative");
        }
        for (key, v) in [
            ("train.batch_size", self.batch_size),
            ("train.steps", self.train_steps),
            ("train.checkpoint_every", self.checkpoint_every),
            ("srcnn.batch_size", self.srcnn_batch_size),
            ("eval.batch", self.eval_batch),
            ("eval.sweep_count", self.eval_sweep_count),
        ] {
            if v == 0 {
                return fail(key, "must be positive");
            }
        }
        self.guidance().validate()?;
        if self.eval_sweep.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return fail("eval.sweep", "weights must be finite and non-negative");
        }
        Ok(())
    }

    pub fn unet_config(&self) -> UNetConfig {
        UNetConfig {
            base_channels: self.base_channels,
            depth: self.depth,
            time_embed_dim: self.time_embed_dim,
            in_channels: if self.use_topo { 3 } else { 2 },
            groups: self.groups,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.diffusion_steps, self.schedule)
    }

    pub fn guidance(&self) -> GuidanceConfig {
        GuidanceConfig {
            w: self.guidance_w,
            eps_num: self.guidance_eps,
            enabled: self.guidance_enabled,
            space: self.bias_space,
        }
    }

    pub fn adamw(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamW::default()
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            seed: self.seed,
            count: self.count,
            eval_count: self.eval_count,
            size: self.size,
        }
    }
}
