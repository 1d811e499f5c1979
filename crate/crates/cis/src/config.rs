//! Run configuration: defaults, then a JSON file, then `CIS_SEED`, then
//! command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use cis_core::models::{BlockConfig, GeneratorConfig, InpainterConfig, Norm, Skip};
use cis_core::synth::{MotionCenter, MotionConfig, ShapeConfig, ShapeKind, SynthConfig};
use cis_core::training::{TrainConfig, WarmupMasks};

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "CIS_SEED";
pub const ECHO_FILE: &str = "config.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormName {
    Batch,
    Affine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipName {
    Add,
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeName {
    Ellipse,
    Polygon,
    Blobs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterName {
    Image,
    MaskCentroid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmupName {
    Generator,
    RandomShapes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    pub base_channels: usize,
    pub encoder_depth: usize,
    pub atrous_rates: Vec<usize>,
    pub norm: NormName,
    pub skip: SkipName,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl NetSection {
    fn from_parts(base_channels: usize, encoder_depth: usize, atrous_rates: Vec<usize>, b: BlockConfig) -> Self {
        Self {
            base_channels,
            encoder_depth,
            atrous_rates,
            norm: match b.norm {
                Norm::Batch => NormName::Batch,
                Norm::Affine => NormName::Affine,
            },
            skip: match b.skip {
                Skip::Add => SkipName::Add,
                Skip::Concat => SkipName::Concat,
            },
            leaky_slope: b.leaky_slope,
            bn_momentum: b.bn_momentum,
            bn_eps: b.bn_eps,
        }
    }

    fn block(&self) -> BlockConfig {
        BlockConfig {
            norm: match self.norm {
                NormName::Batch => Norm::Batch,
                NormName::Affine => Norm::Affine,
            },
            skip: match self.skip {
                SkipName::Add => Skip::Add,
                SkipName::Concat => Skip::Concat,
            },
            leaky_slope: self.leaky_slope,
            bn_momentum: self.bn_momentum,
            bn_eps: self.bn_eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    /// Number of scenes written by `synth`.
    pub count: usize,
    pub shapes: Vec<ShapeName>,
    pub min_area: f64,
    pub max_area: f64,
    pub max_attempts: u32,
    pub max_rotation: f64,
    pub max_translation: f64,
    pub reference_width: f64,
    pub motion_center: CenterName,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            count: 500,
            shapes: s
                .shape
                .kinds
                .iter()
                .map(|k| match k {
                    ShapeKind::Ellipse => ShapeName::Ellipse,
                    ShapeKind::Polygon => ShapeName::Polygon,
                    ShapeKind::Blobs => ShapeName::Blobs,
                })
                .collect(),
            min_area: s.shape.min_area,
            max_area: s.shape.max_area,
            max_attempts: s.shape.max_attempts,
            max_rotation: s.motion.max_rotation,
            max_translation: s.motion.max_translation,
            reference_width: s.motion.reference_width,
            motion_center: match s.motion.center {
                MotionCenter::Image => CenterName::Image,
                MotionCenter::MaskCentroid => CenterName::MaskCentroid,
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Manifest of training or inference inputs.
    pub dataset: Option<PathBuf>,
    /// The only directory any command writes to.
    pub out: Option<PathBuf>,
    /// Generator checkpoint used by `infer`.
    pub checkpoint: Option<PathBuf>,
    /// Prediction manifest read by `eval`.
    pub predictions: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub pixels: usize,
    pub trials: usize,
    pub object_size: usize,
    pub samples: usize,
    pub motion_scale: f64,
    pub noise: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { pixels: 9, trials: 20, object_size: 3, samples: 2000, motion_scale: 10.0, noise: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IrrSection {
    pub foreground: usize,
    pub background: usize,
    pub variance: f64,
    pub rho_foreground: f64,
    pub rho_background: f64,
    pub cross: f64,
}

impl Default for IrrSection {
    fn default() -> Self {
        Self { foreground: 4, background: 4, variance: 1.0, rho_foreground: 0.5, rho_background: 0.5, cross: 0.0 }
    }
}

/// Every knob of every command. Unknown keys are rejected at any depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub generator: NetSection,
    pub inpainter: NetSection,
    pub synth: SynthSection,
    pub eps: f64,
    pub lr_inpainter: f64,
    pub lr_generator: f64,
    pub steps_inpainter_per_generator: usize,
    pub batch_size: usize,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub warmup_masks: WarmupName,
    pub random_mask_fraction: f64,
    pub resample_motion: bool,
    pub delta_t_range: (i32, i32),
    pub binarize_threshold: f32,
    pub border_orientation: bool,
    pub checkpoint_every: usize,
    pub train_j_every: usize,
    /// Soft clamp on generator logits; `null` disables it.
    pub generator_logit_bound: Option<f64>,
    /// Boundary tolerance in pixels for `eval`; `null` picks the default.
    pub boundary_tolerance: Option<f64>,
    pub paths: Paths,
    pub oracle: OracleSection,
    pub irr: IrrSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let (g, i) = (&t.generator, &t.inpainter);
        Self {
            seed: t.seed,
            width: g.width,
            height: g.height,
            generator: NetSection::from_parts(g.base_channels, g.encoder_depth, g.atrous_rates.clone(), g.block),
            inpainter: NetSection::from_parts(i.base_channels, i.encoder_depth, i.atrous_rates.clone(), i.block),
            synth: SynthSection::default(),
            eps: t.eps,
            lr_inpainter: t.lr_inpainter,
            lr_generator: t.lr_generator,
            steps_inpainter_per_generator: t.steps_inpainter_per_generator,
            batch_size: t.batch_size,
            total_steps: t.total_steps,
            warmup_steps: t.warmup_steps,
            warmup_masks: match t.warmup_masks {
                WarmupMasks::Generator => WarmupName::Generator,
                WarmupMasks::RandomShapes => WarmupName::RandomShapes,
            },
            random_mask_fraction: t.random_mask_fraction,
            resample_motion: t.resample_motion,
            delta_t_range: t.delta_t_range,
            binarize_threshold: t.binarize_threshold,
            border_orientation: t.border_orientation,
            checkpoint_every: t.checkpoint_every,
            train_j_every: t.train_j_every,
            generator_logit_bound: g.logit_bound,
            boundary_tolerance: None,
            paths: Paths::default(),
            oracle: OracleSection::default(),
            irr: IrrSection::default(),
        }
    }
}

impl RunConfig {
    pub fn synth_config(&self) -> SynthConfig {
        let s = &self.synth;
        SynthConfig {
            width: self.width,
            height: self.height,
            shape: ShapeConfig {
                kinds: s
                    .shapes
                    .iter()
                    .map(|k| match k {
                        ShapeName::Ellipse => ShapeKind::Ellipse,
                        ShapeName::Polygon => ShapeKind::Polygon,
                        ShapeName::Blobs => ShapeKind::Blobs,
                    })
                    .collect(),
                min_area: s.min_area,
                max_area: s.max_area,
                max_attempts: s.max_attempts,
            },
            motion: MotionConfig {
                max_rotation: s.max_rotation,
                max_translation: s.max_translation,
                reference_width: s.reference_width,
                center: match s.motion_center {
                    CenterName::Image => MotionCenter::Image,
                    CenterName::MaskCentroid => MotionCenter::MaskCentroid,
                },
            },
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        let n = &self.generator;
        GeneratorConfig {
            height: self.height,
            width: self.width,
            base_channels: n.base_channels,
            encoder_depth: n.encoder_depth,
            atrous_rates: n.atrous_rates.clone(),
            block: n.block(),
            logit_bound: self.generator_logit_bound,
        }
    }

    pub fn inpainter_config(&self) -> InpainterConfig {
        let n = &self.inpainter;
        InpainterConfig {
            height: self.height,
            width: self.width,
            base_channels: n.base_channels,
            encoder_depth: n.encoder_depth,
            atrous_rates: n.atrous_rates.clone(),
            block: n.block(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            generator: self.generator_config(),
            inpainter: self.inpainter_config(),
            eps: self.eps,
            lr_inpainter: self.lr_inpainter,
            lr_generator: self.lr_generator,
            steps_inpainter_per_generator: self.steps_inpainter_per_generator,
            batch_size: self.batch_size,
            total_steps: self.total_steps,
            warmup_steps: self.warmup_steps,
            warmup_masks: match self.warmup_masks {
                WarmupName::Generator => WarmupMasks::Generator,
                WarmupName::RandomShapes => WarmupMasks::RandomShapes,
            },
            random_mask_fraction: self.random_mask_fraction,
            resample_motion: self.resample_motion,
            synth: self.synth_config(),
            seed: self.seed,
            delta_t_range: self.delta_t_range,
            binarize_threshold: self.binarize_threshold,
            border_orientation: self.border_orientation,
            checkpoint_every: self.checkpoint_every,
            train_j_every: self.train_j_every,
        }
    }

    /// The output directory, which must be set.
    pub fn out_dir(&self) -> Result<&Path> {
        self.paths.out.as_deref().ok_or_else(|| CliError::config("paths.out", "an output directory is required"))
    }

    /// An input path that must be set and exist.
    pub fn existing(&self, key: &str, path: Option<&Path>) -> Result<PathBuf> {
        let p = path.ok_or_else(|| CliError::config(key, "required by this command"))?;
        if !p.exists() {
            return Err(CliError::config(key, format!("{} does not exist", p.display())));
        }
        Ok(p.to_path_buf())
    }

    /// Writes the resolved configuration to `<out>/config.json`.
    pub fn echo(&self) -> Result<PathBuf> {
        let path = self.out_dir()?.join(ECHO_FILE);
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        crate::codec::write_bytes(&path, format!("{text}\n").as_bytes())?;
        Ok(path)
    }
}

/// One `key=value` override. Dotted keys address nested sections; the value
/// is parsed as JSON and falls back to a plain string.
pub fn parse_override(text: &str) -> Result<(String, Value)> {
    let (key, raw) = text.split_once('=').ok_or_else(|| CliError::Usage(format!("override `{text}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| CliError::config(parts[..i].join("."), "is not a section"))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        node = obj.entry(*part).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Resolves a configuration from an optional JSON file, the environment
/// seed (if given) and ordered overrides.
pub fn resolve(file: Option<&str>, env_seed: Option<&str>, overrides: &[(String, Value)]) -> Result<RunConfig> {
    let mut value = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    if let Some(text) = file {
        let patch: Value = serde_json::from_str(text).map_err(|e| CliError::config("<file>", e.to_string()))?;
        if !patch.is_object() {
            return Err(CliError::config("<file>", "config file must hold a JSON object"));
        }
        merge(&mut value, patch);
    }
    if let Some(seed) = env_seed {
        let seed: u64 = seed.trim().parse().map_err(|_| CliError::config(SEED_ENV, format!("`{seed}` is not an unsigned integer")))?;
        set_path(&mut value, "seed", seed.into())?;
    }
    for (key, v) in overrides {
        set_path(&mut value, key, v.clone())?;
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let key = e.path().to_string();
        CliError::config(if key == "." { "<root>".to_string() } else { key }, e.into_inner().to_string())
    })
}

/// Reads `path` (if any), consults `CIS_SEED` and applies `overrides`.
pub fn parse_config(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?),
        None => None,
    };
    let env = std::env::var(SEED_ENV).ok();
    resolve(text.as_deref(), env.as_deref(), overrides)
}
