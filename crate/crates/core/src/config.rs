//! Plain-text `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Keys match the field names of
//! [`TrainConfig`] and [`LossConfig`], plus the dataset and evaluation keys
//! of [`RunConfig`]. Later assignments win, so command-line overrides are
//! applied after the file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub classes: usize,
    /// Total synthetic samples generated, train and validation together.
    pub count: usize,
    pub val_count: usize,
    pub size: usize,
    pub trimap_widths: Vec<usize>,
    pub edge_checkpoint: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            classes: 5,
            count: 600,
            val_count: 100,
            size: 64,
            trimap_widths: vec![1, 2, 5, 10],
            edge_checkpoint: None,
            checkpoint: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("`{key}`: cannot parse `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Splits configuration text into `(key, value)` pairs, reporting the line
/// number of anything that is not an assignment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("config line {}: expected `key = value`, got `{line}`", n + 1)))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::InvalidArgument(format!("config line {}: missing key", n + 1)));
        }
        pairs.push((key.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "batch" => t.batch = parse(key, value)?,
            "edge_epochs" => t.edge_epochs = parse(key, value)?,
            "seg_epochs" => t.seg_epochs = parse(key, value)?,
            "edge_lr" => t.edge_lr = parse(key, value)?,
            "seg_lr" => t.seg_lr = parse(key, value)?,
            "momentum" => t.momentum = parse(key, value)?,
            "sigma" => t.sigma = parse(key, value)?,
            "clip_norm" => t.clip_norm = if value.is_empty() { None } else { Some(parse(key, value)?) },
            "seed" => t.seed = parse(key, value)?,
            "mirror" => t.mirror = parse(key, value)?,
            "crop" => t.crop = if value.is_empty() { None } else { Some(parse(key, value)?) },
            "lr_multipliers" => t.lr_multipliers = parse_list(key, value)?,
            "record_wall_time" => t.record_wall_time = parse(key, value)?,
            "strategy" => t.loss.strategy = parse(key, value)?,
            "lambda1" => t.loss.lambdas[0] = parse(key, value)?,
            "lambda2" => t.loss.lambdas[1] = parse(key, value)?,
            "lambda3" => t.loss.lambdas[2] = parse(key, value)?,
            "lambdas" => {
                let l: Vec<f64> = parse_list(key, value)?;
                t.loss.lambdas = l
                    .try_into()
                    .map_err(|_| Error::InvalidArgument(format!("`lambdas` needs three values, got `{value}`")))?;
            }
            "match_point" => t.loss.match_point = parse(key, value)?,
            "distance" => t.loss.distance = parse(key, value)?,
            "reduction" => t.loss.reduction = parse(key, value)?,
            "layer3" => t.loss.layer3 = parse(key, value)?,
            "void_id" => t.loss.void_id = parse(key, value)?,
            "classes" => self.classes = parse(key, value)?,
            "count" => self.count = parse(key, value)?,
            "val_count" => self.val_count = parse(key, value)?,
            "size" => self.size = parse(key, value)?,
            "trimap_widths" => self.trimap_widths = parse_list(key, value)?,
            "edge_checkpoint" => self.edge_checkpoint = parse_optional_path(value),
            "checkpoint" => self.checkpoint = parse_optional_path(value),
            other => return Err(Error::InvalidArgument(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_pairs(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.classes < 2 || self.classes > 254 {
            return Err(Error::InvalidArgument(format!("classes must lie in 2..=254, got {}", self.classes)));
        }
        if let Some(w) = self.trimap_widths.iter().find(|&&w| w == 0) {
            return Err(Error::InvalidArgument(format!("trimap widths must be at least 1, got {w}")));
        }
        Ok(())
    }

    /// Every key with its resolved value; feeding this back through
    /// [`RunConfig::apply_text`] reproduces the config.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("batch", t.batch.to_string());
        kv("edge_epochs", t.edge_epochs.to_string());
        kv("seg_epochs", t.seg_epochs.to_string());
        kv("edge_lr", t.edge_lr.to_string());
        kv("seg_lr", t.seg_lr.to_string());
        kv("momentum", t.momentum.to_string());
        kv("clip_norm", t.clip_norm.map(|c| c.to_string()).unwrap_or_default());
        kv("sigma", t.sigma.to_string());
        kv("seed", t.seed.to_string());
        kv("mirror", t.mirror.to_string());
        kv("crop", t.crop.map(|c| c.to_string()).unwrap_or_default());
        kv("lr_multipliers", join(&t.lr_multipliers));
        kv("record_wall_time", t.record_wall_time.to_string());
        kv("strategy", t.loss.strategy.to_string());
        kv("lambdas", join(&t.loss.lambdas));
        kv("match_point", t.loss.match_point.to_string());
        kv("distance", t.loss.distance.to_string());
        kv("reduction", t.loss.reduction.to_string());
        kv("layer3", t.loss.layer3.to_string());
        kv("void_id", t.loss.void_id.to_string());
        kv("classes", self.classes.to_string());
        kv("count", self.count.to_string());
        kv("val_count", self.val_count.to_string());
        kv("size", self.size.to_string());
        kv("trimap_widths", join(&self.trimap_widths));
        kv("edge_checkpoint", path(&self.edge_checkpoint));
        kv("checkpoint", path(&self.checkpoint));
        out
    }
}
