use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::labels::AutoLabelConfig;
use crate::context::Target;
use crate::dbn::TrainConfig;
use crate::evaluation::SsimParams;
use crate::fusion::{StreamEntry, DEFAULT_CF_THRESHOLD, DEFAULT_TIME_WINDOW};
use crate::iic::TreeConfig;
use crate::synthetic::SceneSpec;
use crate::tracking::{Connectivity, DEFAULT_IOU_MIN};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub run_id: String,
    /// Global seed; every stochastic stage derives its own stream from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub sampling: SamplingConfig,
    pub encoder: EncoderConfig,
    pub tree: TreeConfig,
    pub context: ContextConfig,
    pub evaluation: EvaluationConfig,
    pub fusion: FusionConfig,
    pub tracking: TrackingConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            run_id: "run".into(),
            seed: 0,
            output_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            sampling: SamplingConfig::default(),
            encoder: EncoderConfig::default(),
            tree: TreeConfig::default(),
            context: ContextConfig::default(),
            evaluation: EvaluationConfig::default(),
            fusion: FusionConfig::default(),
            tracking: TrackingConfig::default(),
        }
    }
}

/// Scenes come either from the generator (`synthetic`, written by `gen`)
/// or from existing raster paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Its `seed` field is replaced by a stream of the global seed.
    pub synthetic: Option<SceneSpec>,
    /// Sequence length for the generator.
    pub steps: usize,
    /// Pixels per step, (dx, dy).
    pub advection: (f64, f64),
    pub scenes: Vec<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            synthetic: None,
            steps: 1,
            advection: (1.0, 0.0),
            scenes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub radius: usize,
    pub bands: Option<Vec<usize>>,
    /// Cap on the pooled samples used for training (uniform subset).
    pub max_train_samples: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            radius: 0,
            bands: None,
            max_train_samples: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Hidden widths; the input width comes from the samples.
    pub hidden: Vec<usize>,
    /// Shared by all layers unless `layers` is given.
    pub train: TrainConfig,
    pub layers: Vec<TrainConfig>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: vec![64, 32],
            train: TrainConfig::default(),
            layers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextConfig {
    pub tau: f64,
    pub min_support: usize,
    /// Scene indices used for context assignment; all when absent.
    pub scenes: Option<Vec<usize>>,
    /// GeoJSON label files, one per context scene. Synthetic runs generate
    /// their own when this is empty.
    pub labels: Vec<PathBuf>,
    pub auto: AutoLabelConfig,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig {
            tau: 0.5,
            min_support: 20,
            scenes: None,
            labels: Vec::new(),
            auto: AutoLabelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceEntry {
    pub scene: usize,
    pub target: Target,
    /// Single-band raster, values above 0.5 set.
    pub path: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub ssim: SsimParams,
    /// Extra references; synthetic runs always score against generator truth.
    pub references: Vec<ReferenceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub target: Target,
    /// Empty: every predicted scene mask of `target` is a stream.
    pub streams: Vec<StreamEntry>,
    /// Scene whose grid and timestamp the fused product uses.
    pub reference_scene: usize,
    pub cf_threshold: f64,
    pub theta: f64,
    pub time_window: i64,
    /// Two-band retrieval raster (value, cloud fraction) to restore.
    /// Synthetic runs generate one when absent.
    pub retrieval: Option<PathBuf>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            target: Target::Smoke,
            streams: Vec::new(),
            reference_scene: 0,
            cf_threshold: DEFAULT_CF_THRESHOLD,
            theta: 0.5,
            time_window: DEFAULT_TIME_WINDOW,
            retrieval: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    pub target: Target,
    pub connectivity: u32,
    pub iou_min: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        TrackingConfig {
            target: Target::Smoke,
            connectivity: 8,
            iou_min: DEFAULT_IOU_MIN,
        }
    }
}

impl TrackingConfig {
    pub fn connectivity(&self) -> Result<Connectivity> {
        Connectivity::from_count(self.connectivity)
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies `section.key=value` overrides in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed: PipelineConfig = serde_json::from_str(&text)?;
        let mut value = serde_json::to_value(&parsed)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: PipelineConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) || self.run_id == ".." {
            return bad("run_id must be a plain, non-empty name");
        }
        if self.data.synthetic.is_none() && self.data.scenes.is_empty() {
            return bad("data needs a synthetic spec or scene paths");
        }
        if let Some(spec) = &self.data.synthetic {
            spec.validate()?;
        }
        if self.data.steps == 0 {
            return bad("data.steps must be >= 1");
        }
        if self.encoder.hidden.is_empty() || self.encoder.hidden.len() > 3 || self.encoder.hidden.contains(&0) {
            return bad("encoder.hidden needs 1-3 positive widths");
        }
        if !self.encoder.layers.is_empty() && self.encoder.layers.len() != self.encoder.hidden.len() {
            return bad("encoder.layers needs one entry per hidden layer");
        }
        self.encoder.train.validate()?;
        for l in &self.encoder.layers {
            l.validate()?;
        }
        if self.tree.k < 2 || self.tree.max_depth == 0 {
            return bad("tree needs k >= 2 and max_depth >= 1");
        }
        self.tree.head.validate()?;
        if !(self.context.tau > 0.0 && self.context.tau <= 1.0) {
            return bad("context.tau must be in (0, 1]");
        }
        self.evaluation.ssim.validate()?;
        if !(0.0..=1.0).contains(&self.fusion.theta) || !(0.0..=1.0).contains(&self.fusion.cf_threshold) {
            return bad("fusion.theta and fusion.cf_threshold must be in [0, 1]");
        }
        if self.fusion.time_window < 0 {
            return bad("fusion.time_window must be >= 0");
        }
        self.tracking.connectivity()?;
        if !(self.tracking.iou_min > 0.0 && self.tracking.iou_min <= 1.0) {
            return bad("tracking.iou_min must be in (0, 1]");
        }
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }

    /// Canonical JSON text; its SHA-256 identifies the run configuration.
    /// The output location is left out so a run can be moved or repeated
    /// elsewhere with the same identity.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            map.remove("output_dir");
        }
        v.to_string()
    }
}

/// Sets `a.b.c=value` in a JSON document. The value is parsed as JSON when
/// possible and taken as a string otherwise. Intermediate `null`s become
/// objects; any other missing key is an error so typos surface.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Invalid(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Invalid(format!("bad override key `{key}`")));
    }
    let mut node = doc;
    for (i, part) in parts.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let last = i + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                if !map.contains_key(*part) {
                    if !last {
                        return Err(Error::Invalid(format!("unknown config key `{key}`")));
                    }
                    // absent optional fields may be added; serde rejects typos
                    map.insert(part.to_string(), Value::Null);
                }
                map.get_mut(*part).expect("inserted above")
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::Invalid(format!("`{part}` in `{key}` is not an index")))?;
                items
                    .get_mut(idx)
                    .ok_or_else(|| Error::Invalid(format!("index {idx} out of range in `{key}`")))?
            }
            _ => return Err(Error::Invalid(format!("`{key}` does not name a config field"))),
        };
    }
    *node = value;
    Ok(())
}
