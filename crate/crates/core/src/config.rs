//! Model, training and evaluation settings, with dotted-path overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{DataConfig, Layout};
use crate::error::{Error, Result};

/// Ablation ladder. `B` and `I` align context features with a fixed warp,
/// `D` with flow-driven deformable convolution, `Full` adds patch matching.
/// `B` also hands the LR frame warped by the reverse flow to the fusion stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "b")]
    B,
    #[serde(rename = "i")]
    I,
    #[serde(rename = "d")]
    D,
    #[serde(rename = "full")]
    Full,
}

impl Variant {
    pub fn deformable(self) -> bool {
        matches!(self, Variant::D | Variant::Full)
    }

    pub fn patch_matching(self) -> bool {
        self == Variant::Full
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::B => "b",
            Variant::I => "i",
            Variant::D => "d",
            Variant::Full => "full",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "b" => Ok(Variant::B),
            "i" => Ok(Variant::I),
            "d" => Ok(Variant::D),
            "full" => Ok(Variant::Full),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionConfig {
    /// Hidden width of each of the three blocks.
    pub widths: [usize; 3],
    /// Prescale factor of each block.
    pub scales: [usize; 3],
    /// Append LR and REF to the inputs of blocks 1 and 2.
    pub feed_frames: bool,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self { widths: [240, 150, 90], scales: [4, 2, 1], feed_frames: false }
    }
}

impl MotionConfig {
    pub fn in_channels(&self, block: usize) -> usize {
        match (block, self.feed_frames) {
            (0, _) => 6,
            (_, false) => 7,
            (_, true) => 13,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContextConfig {
    pub channels: [usize; 4],
    /// Learned per-tap offset corrections added to the flow (deformable
    /// variants only).
    pub learned_offsets: bool,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self { channels: [16, 32, 64, 128], learned_offsets: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchMatchConfig {
    /// Token width of the first group; doubles at each merge.
    pub dim: usize,
    pub patch: usize,
    pub window: usize,
    pub heads: usize,
    /// Literal triple product without normalisation, scaling or bias.
    pub raw_product: bool,
    /// Share the LR-stream parameters with the REF stream.
    pub tie_qk: bool,
}

impl Default for PatchMatchConfig {
    fn default() -> Self {
        Self { dim: 48, patch: 4, window: 3, heads: 1, raw_product: false, tie_qk: false }
    }
}

impl PatchMatchConfig {
    pub fn dims(&self) -> [usize; 3] {
        [self.dim, 2 * self.dim, 4 * self.dim]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub down: [usize; 4],
    pub up: [usize; 4],
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { down: [32, 64, 144, 304], up: [128, 64, 32, 16] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub motion: MotionConfig,
    pub context: ContextConfig,
    pub patchmatch: PatchMatchConfig,
    pub fusion: FusionConfig,
    /// Spatial multiple inputs are padded to.
    pub pad_multiple: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            motion: MotionConfig::default(),
            context: ContextConfig::default(),
            patchmatch: PatchMatchConfig::default(),
            fusion: FusionConfig::default(),
            pad_multiple: 16,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self { variant, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.motion.widths.contains(&0) {
            return bad("motion.widths must be positive".into());
        }
        if self.motion.scales != [4, 2, 1] {
            return bad(format!("motion.scales must be [4, 2, 1], got {:?}", self.motion.scales));
        }
        if self.context.channels.contains(&0) || self.fusion.down.contains(&0) || self.fusion.up.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.context.learned_offsets && !self.variant.deformable() {
            return bad(format!("context.learned_offsets needs a deformable variant, not {}", self.variant));
        }
        let pm = &self.patchmatch;
        if pm.dim == 0 || pm.window == 0 || pm.heads == 0 || pm.dim % pm.heads != 0 {
            return bad(format!("patchmatch.dim {} must be a positive multiple of heads {}", pm.dim, pm.heads));
        }
        if pm.patch != 4 {
            return bad("patchmatch.patch must be 4".into());
        }
        if self.pad_multiple == 0 || self.pad_multiple % 16 != 0 {
            return bad("pad_multiple must be a multiple of 16".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Samples per optimiser step.
    pub batch_size: usize,
    /// Stops early once this many optimiser steps have run.
    pub max_steps: Option<usize>,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub train_index: Option<PathBuf>,
    /// Keep decoded frames in memory between epochs.
    pub cache_frames: bool,
    /// Bounded queue depth between the data thread and the optimiser.
    pub queue_depth: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            epochs: 62,
            batch_size: 16,
            max_steps: None,
            checkpoint_interval: 0,
            clip_norm: Some(1.0),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            train_index: None,
            cache_frames: false,
            queue_depth: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("train.learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.queue_depth == 0 {
            return Err(Error::Config("train.epochs, batch_size and queue_depth must be >= 1".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("train.clip_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricSpace {
    Rgb,
    Y,
}

impl FromStr for MetricSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(MetricSpace::Rgb),
            "y" => Ok(MetricSpace::Y),
            other => Err(Error::Config(format!("unknown metric space {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub protocol: Layout,
    pub metric_space: MetricSpace,
    pub index: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { protocol: Layout::Septuplet, metric_space: MetricSpace::Rgb, index: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub height: usize,
    pub width: usize,
    pub iterations: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { height: 256, width: 448, iterations: 10 }
    }
}

/// Every effective setting of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Settings {
    pub seed: u64,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl Settings {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.factor == 0 || self.data.crop == 0 || self.data.crop % self.model.pad_multiple != 0 {
            return Err(Error::Config(format!(
                "data.crop {} must be a positive multiple of {}",
                self.data.crop, self.model.pad_multiple
            )));
        }
        if !(0.0..=1.0).contains(&self.data.flip_prob) || !(0.0..=1.0).contains(&self.data.ref_prev_prob) {
            return Err(Error::Config("data probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Reads an optional file, applies `key=value` overrides and validates.
    /// Unknown keys are rejected in both places.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(Settings::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut patch: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            // A resolved-config echo nests the settings next to the run record.
            if let Some(inner) = patch.get("settings").filter(|_| patch.get("run").is_some()) {
                patch = inner.clone();
            }
            merge(&mut value, patch, "")?;
        }
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let settings: Settings =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("settings: {e}")))?;
        settings.validate()?;
        Ok(settings)
    }
}

fn merge(base: &mut Value, patch: Value, path: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let full = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &full)?,
                    Some(slot) => *slot = v,
                    None => return Err(Error::Config(format!("unknown key {full:?}"))),
                }
            }
            Ok(())
        }
        (b, p) => {
            *b = p;
            Ok(())
        }
    }
}

/// Sets a dotted path such as `train.learning_rate=1e-3`. The value is parsed
/// as JSON, falling back to a plain string.
pub fn apply_override(root: &mut Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = root;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
    }
    *slot = parsed;
    Ok(())
}
