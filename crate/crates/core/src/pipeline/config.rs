//! Flat `key=value` model configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::spectral::ThresholdLadder;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub stages: usize,
    pub channels: usize,
    pub experts: usize,
    pub queries: usize,
    pub classes: usize,
    pub ladder: ThresholdLadder,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Groups of the pointwise preprocessing convolution.
    pub groups: usize,
    /// Channel reduction inside the attention gates.
    pub reduction: usize,
    pub stc_kernel: usize,
    pub force_dense: bool,
    pub enhance: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stages: 3,
            channels: 32,
            experts: 4,
            queries: 8,
            classes: 2,
            ladder: ThresholdLadder::default(),
            height: 64,
            width: 64,
            seed: 42,
            groups: 4,
            reduction: 4,
            stc_kernel: 3,
            force_dense: false,
            enhance: true,
        }
    }
}

const KEYS: &[&str] = &[
    "stages",
    "channels",
    "experts",
    "queries",
    "classes",
    "tau",
    "height",
    "width",
    "seed",
    "groups",
    "reduction",
    "stc_kernel",
    "force_dense",
    "enhance",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key}={value:?}")))
}

impl ModelConfig {
    /// Parses `key=value` lines; blank lines and `#` comments are skipped,
    /// unknown or repeated keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("unknown key {key:?}")));
            }
            if seen.contains(&key) {
                return Err(Error::Config(format!("duplicate key {key:?}")));
            }
            seen.push(key);
            match key {
                "stages" => cfg.stages = parse(key, value)?,
                "channels" => cfg.channels = parse(key, value)?,
                "experts" => cfg.experts = parse(key, value)?,
                "queries" => cfg.queries = parse(key, value)?,
                "classes" => cfg.classes = parse(key, value)?,
                "tau" => cfg.ladder = ThresholdLadder::parse(value).map_err(|e| Error::Config(e.to_string()))?,
                "height" => cfg.height = parse(key, value)?,
                "width" => cfg.width = parse(key, value)?,
                "seed" => cfg.seed = parse(key, value)?,
                "groups" => cfg.groups = parse(key, value)?,
                "reduction" => cfg.reduction = parse(key, value)?,
                "stc_kernel" => cfg.stc_kernel = parse(key, value)?,
                "force_dense" => cfg.force_dense = parse(key, value)?,
                "enhance" => cfg.enhance = parse(key, value)?,
                _ => unreachable!(),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.stages == 0 || self.experts == 0 || self.queries == 0 || self.classes == 0 {
            return fail("stages, experts, queries and classes must be >= 1".into());
        }
        if self.channels < 2 || !self.channels.is_multiple_of(2) {
            return fail(format!("channels {} must be even", self.channels));
        }
        if self.groups == 0 || !self.channels.is_multiple_of(self.groups) {
            return fail(format!("groups {} must divide channels {}", self.groups, self.channels));
        }
        if self.reduction == 0 || !self.channels.is_multiple_of(self.reduction) {
            return fail(format!(
                "reduction {} must divide channels {}",
                self.reduction, self.channels
            ));
        }
        if self.stc_kernel.is_multiple_of(2) {
            return fail(format!("stc_kernel {} must be odd", self.stc_kernel));
        }
        let div = 1usize.checked_shl(self.stages as u32 + 1).unwrap_or(0);
        if div == 0 || !self.height.is_multiple_of(div) || !self.width.is_multiple_of(div) {
            return fail(format!(
                "{}x{} is not divisible by 2^{} for {} stages",
                self.height,
                self.width,
                self.stages + 1,
                self.stages
            ));
        }
        Ok(())
    }

    /// Spatial extent of stage `i` (1-based): `(H, W) / 2^(i+1)`.
    pub fn stage_resolution(&self, i: usize) -> (usize, usize) {
        (self.height >> (i + 1), self.width >> (i + 1))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "stages={}", self.stages);
        let _ = writeln!(s, "channels={}", self.channels);
        let _ = writeln!(s, "experts={}", self.experts);
        let _ = writeln!(s, "queries={}", self.queries);
        let _ = writeln!(s, "classes={}", self.classes);
        let _ = writeln!(s, "tau={}", self.ladder);
        let _ = writeln!(s, "height={}", self.height);
        let _ = writeln!(s, "width={}", self.width);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "groups={}", self.groups);
        let _ = writeln!(s, "reduction={}", self.reduction);
        let _ = writeln!(s, "stc_kernel={}", self.stc_kernel);
        let _ = writeln!(s, "force_dense={}", self.force_dense);
        let _ = writeln!(s, "enhance={}", self.enhance);
        s
    }
}
