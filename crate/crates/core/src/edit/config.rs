//! `key = value` edit configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::EditError;
use crate::retrieval::DEFAULT_TAU;

/// How the four views of each step are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewMode {
    /// Fresh ring of look-at cameras around the object every step.
    Ring,
    /// Four distinct dataset cameras every step. Needed when guidance is
    /// keyed by camera pose, as with precomputed target files.
    Dataset,
}

impl FromStr for ViewMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ring" => Ok(ViewMode::Ring),
            "dataset" => Ok(ViewMode::Dataset),
            _ => Err(format!("expected `ring` or `dataset`, got `{s}`")),
        }
    }
}

impl std::fmt::Display for ViewMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ViewMode::Ring => "ring",
            ViewMode::Dataset => "dataset",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditConfig {
    pub prompt: String,
    /// Scene description forwarded to multi-view backends.
    pub description: String,
    /// Retrieval threshold selecting the object.
    pub tau: f64,
    pub tau_low: f64,
    pub tau_high: f64,
    pub lambda_ip0: f64,
    pub lambda_mv0: f64,
    pub mv_zero_fraction: f64,
    pub steps: usize,
    pub t_min: f32,
    pub t_max: f32,
    pub densify_interval: usize,
    pub densify_fraction: f64,
    pub prune_opacity: f64,
    pub checkpoint_interval: usize,
    pub seed: u64,
    pub views: ViewMode,
    pub image_guidance: f64,
    pub text_guidance: f64,
    pub sigma_scale: f64,
    pub lr_position: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_color: f64,
    pub lr_opacity: f64,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig {
            prompt: String::new(),
            description: String::new(),
            tau: DEFAULT_TAU,
            tau_low: 0.4,
            tau_high: 0.7,
            lambda_ip0: 1.0,
            lambda_mv0: 0.5,
            mv_zero_fraction: 0.75,
            steps: 2000,
            t_min: crate::guidance::T_MIN,
            t_max: crate::guidance::T_MAX,
            densify_interval: 100,
            densify_fraction: 0.01,
            prune_opacity: 0.005,
            checkpoint_interval: 500,
            seed: 0,
            views: ViewMode::Ring,
            image_guidance: 1.5,
            text_guidance: 7.5,
            sigma_scale: 1.0,
            // Standard reconstruction rates scaled by 0.1.
            lr_position: 1.6e-5,
            lr_scale: 5e-4,
            lr_rotation: 1e-4,
            lr_color: 2.5e-4,
            lr_opacity: 5e-3,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, EditError> {
    value.parse().map_err(|_| EditError::Config(format!("bad value `{value}` for `{key}`")))
}

impl EditConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), EditError> {
        let v = value.trim();
        match key.trim() {
            "prompt" => self.prompt = v.to_string(),
            "description" => self.description = v.to_string(),
            "tau" => self.tau = parse(key, v)?,
            "tau_low" => self.tau_low = parse(key, v)?,
            "tau_high" => self.tau_high = parse(key, v)?,
            "lambda_ip0" => self.lambda_ip0 = parse(key, v)?,
            "lambda_mv0" => self.lambda_mv0 = parse(key, v)?,
            "mv_zero_fraction" => self.mv_zero_fraction = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "t_min" => self.t_min = parse(key, v)?,
            "t_max" => self.t_max = parse(key, v)?,
            "densify_interval" => self.densify_interval = parse(key, v)?,
            "densify_fraction" => self.densify_fraction = parse(key, v)?,
            "prune_opacity" => self.prune_opacity = parse(key, v)?,
            "checkpoint_interval" => self.checkpoint_interval = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "views" => self.views = v.parse().map_err(EditError::Config)?,
            "image_guidance" => self.image_guidance = parse(key, v)?,
            "text_guidance" => self.text_guidance = parse(key, v)?,
            "sigma_scale" => self.sigma_scale = parse(key, v)?,
            "lr_position" => self.lr_position = parse(key, v)?,
            "lr_scale" => self.lr_scale = parse(key, v)?,
            "lr_rotation" => self.lr_rotation = parse(key, v)?,
            "lr_color" => self.lr_color = parse(key, v)?,
            "lr_opacity" => self.lr_opacity = parse(key, v)?,
            k => return Err(EditError::Config(format!("unknown key `{k}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), EditError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| EditError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k, v).map_err(|e| EditError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, EditError> {
        let mut cfg = EditConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EditError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), EditError> {
        let bad = |m: &str| Err(EditError::Config(m.to_string()));
        if !(0.0 <= self.tau_low && self.tau_low < self.tau_high && self.tau_high <= 1.0) {
            return bad("need 0 <= tau_low < tau_high <= 1");
        }
        if !(self.mv_zero_fraction > 0.0 && self.mv_zero_fraction <= 1.0) {
            return bad("mv_zero_fraction must lie in (0, 1]");
        }
        if !(self.densify_fraction > 0.0 && self.densify_fraction <= 1.0) {
            return bad("densify_fraction must lie in (0, 1]");
        }
        if !(crate::guidance::T_MIN <= self.t_min && self.t_min <= self.t_max && self.t_max <= crate::guidance::T_MAX) {
            return bad("need 0.02 <= t_min <= t_max <= 0.2");
        }
        if !(self.tau.is_finite() && (-1.0..=1.0).contains(&self.tau)) {
            return bad("tau must lie in [-1, 1]");
        }
        if self.steps == 0 {
            return bad("steps must be positive");
        }
        let rates = [self.lr_position, self.lr_scale, self.lr_rotation, self.lr_color, self.lr_opacity];
        let weights = [self.lambda_ip0, self.lambda_mv0, self.image_guidance, self.text_guidance, self.sigma_scale, self.prune_opacity];
        if rates.iter().chain(&weights).any(|v| !v.is_finite() || *v < 0.0) {
            return bad("rates, weights and thresholds must be finite and non-negative");
        }
        Ok(())
    }

    /// Every key with its resolved value, in a form [`EditConfig::parse`]
    /// reads back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("prompt", &self.prompt);
        kv("description", &self.description);
        kv("tau", &self.tau);
        kv("tau_low", &self.tau_low);
        kv("tau_high", &self.tau_high);
        kv("lambda_ip0", &self.lambda_ip0);
        kv("lambda_mv0", &self.lambda_mv0);
        kv("mv_zero_fraction", &self.mv_zero_fraction);
        kv("steps", &self.steps);
        kv("t_min", &self.t_min);
        kv("t_max", &self.t_max);
        kv("densify_interval", &self.densify_interval);
        kv("densify_fraction", &self.densify_fraction);
        kv("prune_opacity", &self.prune_opacity);
        kv("checkpoint_interval", &self.checkpoint_interval);
        kv("seed", &self.seed);
        kv("views", &self.views);
        kv("image_guidance", &self.image_guidance);
        kv("text_guidance", &self.text_guidance);
        kv("sigma_scale", &self.sigma_scale);
        kv("lr_position", &self.lr_position);
        kv("lr_scale", &self.lr_scale);
        kv("lr_rotation", &self.lr_rotation);
        kv("lr_color", &self.lr_color);
        kv("lr_opacity", &self.lr_opacity);
        s
    }
}
