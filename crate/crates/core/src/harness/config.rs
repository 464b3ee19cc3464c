// SPDX-License-Identifier: MIT OR Apache-2.0

//! TOML experiment configuration.
//!
//! Unknown keys anywhere are rejected. See `configs/` in the crate root and
//! the README for complete examples. Relative paths resolve against the
//! directory of the config file.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchgen::{Distractor, TaskFamily, TrainingSetSpec, VocabSchema};
use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};
use crate::intervention::{
    HeadSet, InterventionKind, InterventionSpec, LayerScope, DEFAULT_ADHH_THRESHOLD, DEFAULT_PAI_ALPHA,
    DEFAULT_PAI_GAMMA, DEFAULT_PAI_IMAGE_SCALE, DEFAULT_SCALE_FACTOR,
};
use crate::modality::Modality;
use crate::trainer::{Optimizer, TrainConfig};

/// Decoder shape. Vocabulary size and answer tokens come from the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub layer_count: usize,
    pub head_count: usize,
    pub model_dim: usize,
    pub feedforward_dim: usize,
    pub max_seq_len: usize,
    /// Load this checkpoint instead of training.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            layer_count: 8,
            head_count: 4,
            model_dim: 64,
            feedforward_dim: 128,
            max_seq_len: 32,
            checkpoint: None,
        }
    }
}

/// Training data and optimiser settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub size: usize,
    pub yes_fraction: f64,
    pub task_mix: f64,
    pub image_len: usize,
    pub distractor: Distractor,
    /// Training-set generation seed; defaults to the global seed + 1.
    pub data_seed: Option<u64>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epoch_count: usize,
    pub optimizer: Optimizer,
    pub gradient_clip_norm: Option<f64>,
    /// Path to a pre-generated training set; overrides generation.
    pub path: Option<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let d = TrainingSetSpec::default();
        Self {
            size: d.size,
            yes_fraction: d.yes_fraction,
            task_mix: d.task_mix,
            image_len: d.image_len,
            distractor: d.distractor,
            data_seed: None,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epoch_count: t.epoch_count,
            optimizer: t.optimizer,
            gradient_clip_norm: t.gradient_clip_norm,
            path: None,
        }
    }
}

impl TrainSection {
    pub fn set_spec(&self) -> TrainingSetSpec {
        TrainingSetSpec {
            size: self.size,
            yes_fraction: self.yes_fraction,
            task_mix: self.task_mix,
            image_len: self.image_len,
            distractor: self.distractor,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epoch_count: self.epoch_count,
            seed,
            optimizer: self.optimizer,
            gradient_clip_norm: self.gradient_clip_norm,
        }
    }
}

/// One evaluation dataset, generated or loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub name: String,
    #[serde(default)]
    pub family: Option<TaskFamily>,
    #[serde(default)]
    pub pairs: Option<usize>,
    #[serde(default)]
    pub image_len: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub distractor: Option<Distractor>,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

/// Kind names accepted in intervention entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    None,
    Proportional,
    Pairwise,
    Ablation,
    Scale,
    Adhh,
    Pai,
}

/// Flat, serialisable form of an [`InterventionSpec`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionEntry {
    pub name: String,
    pub kind: Option<KindName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Modality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipient: Option<Modality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Modality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<Vec<usize>>,
}

impl InterventionEntry {
    fn kind_name(&self) -> Result<KindName> {
        self.kind
            .ok_or_else(|| Error::Config(format!("intervention `{}` has no kind", self.name)))
    }

    fn reject_extra(&self, allowed: &[&str]) -> Result<()> {
        let present = [
            ("source", self.source.is_some()),
            ("recipient", self.recipient.is_some()),
            ("target", self.target.is_some()),
            ("fraction", self.fraction.is_some()),
            ("factor", self.factor.is_some()),
            ("threshold", self.threshold.is_some()),
            ("alpha", self.alpha.is_some()),
            ("image_scale", self.image_scale.is_some()),
            ("gamma", self.gamma.is_some()),
        ];
        for (field, set) in present {
            if set && !allowed.contains(&field) {
                return Err(Error::Config(format!(
                    "intervention `{}`: `{field}` does not apply to kind {:?}",
                    self.name,
                    self.kind_name()?
                )));
            }
        }
        Ok(())
    }

    fn require<T: Copy>(&self, value: Option<T>, field: &str) -> Result<T> {
        value.ok_or_else(|| Error::Config(format!("intervention `{}` needs `{field}`", self.name)))
    }

    /// The kind without its scope.
    pub fn to_kind(&self) -> Result<InterventionKind> {
        let kind = match self.kind_name()? {
            KindName::None => {
                self.reject_extra(&[])?;
                InterventionKind::None
            }
            KindName::Proportional => {
                self.reject_extra(&["source", "fraction"])?;
                InterventionKind::Proportional {
                    source: self.require(self.source, "source")?,
                    fraction: self.fraction.unwrap_or(1.0),
                }
            }
            KindName::Pairwise => {
                self.reject_extra(&["source", "recipient", "fraction"])?;
                InterventionKind::Pairwise {
                    source: self.require(self.source, "source")?,
                    recipient: self.require(self.recipient, "recipient")?,
                    fraction: self.fraction.unwrap_or(1.0),
                }
            }
            KindName::Ablation => {
                self.reject_extra(&["source"])?;
                InterventionKind::Ablation {
                    source: self.require(self.source, "source")?,
                }
            }
            KindName::Scale => {
                self.reject_extra(&["target", "factor"])?;
                InterventionKind::Scale {
                    target: self.target.unwrap_or(Modality::Image),
                    factor: self.factor.unwrap_or(DEFAULT_SCALE_FACTOR),
                }
            }
            KindName::Adhh => {
                self.reject_extra(&["threshold"])?;
                InterventionKind::AdHh {
                    threshold: self.threshold.unwrap_or(DEFAULT_ADHH_THRESHOLD),
                }
            }
            KindName::Pai => {
                self.reject_extra(&["alpha", "image_scale", "gamma"])?;
                InterventionKind::Pai {
                    alpha: self.alpha.unwrap_or(DEFAULT_PAI_ALPHA),
                    image_scale: self.image_scale.unwrap_or(DEFAULT_PAI_IMAGE_SCALE),
                    gamma: self.gamma.unwrap_or(DEFAULT_PAI_GAMMA),
                }
            }
        };
        Ok(kind)
    }

    fn head_set(&self) -> HeadSet {
        self.heads.clone().map_or(HeadSet::All, HeadSet::Explicit)
    }

    /// Full spec. The scope is required for every kind except `none`.
    pub fn to_spec(&self) -> Result<InterventionSpec> {
        let kind = self.to_kind()?;
        let layers = match (&self.scope, &kind) {
            (Some(s), _) => s.parse()?,
            (None, InterventionKind::None) => crate::intervention::LayerSelector::Global,
            (None, _) => {
                return Err(Error::Config(format!("intervention `{}` needs a `scope`", self.name)))
            }
        };
        let spec = InterventionSpec::new(
            kind,
            LayerScope {
                layers,
                heads: self.head_set(),
            },
        );
        spec.validate()?;
        Ok(spec)
    }

    /// Inverse of [`InterventionEntry::to_spec`].
    pub fn from_spec(name: impl Into<String>, spec: &InterventionSpec) -> Self {
        let mut e = InterventionEntry {
            name: name.into(),
            scope: Some(spec.scope.layers.to_string()),
            heads: match &spec.scope.heads {
                HeadSet::All => None,
                HeadSet::Explicit(h) => Some(h.clone()),
            },
            ..Default::default()
        };
        match spec.kind {
            InterventionKind::None => e.kind = Some(KindName::None),
            InterventionKind::Proportional { source, fraction } => {
                e.kind = Some(KindName::Proportional);
                e.source = Some(source);
                e.fraction = Some(fraction);
            }
            InterventionKind::Pairwise {
                source,
                recipient,
                fraction,
            } => {
                e.kind = Some(KindName::Pairwise);
                e.source = Some(source);
                e.recipient = Some(recipient);
                e.fraction = Some(fraction);
            }
            InterventionKind::Ablation { source } => {
                e.kind = Some(KindName::Ablation);
                e.source = Some(source);
            }
            InterventionKind::Scale { target, factor } => {
                e.kind = Some(KindName::Scale);
                e.target = Some(target);
                e.factor = Some(factor);
            }
            InterventionKind::AdHh { threshold } => {
                e.kind = Some(KindName::Adhh);
                e.threshold = Some(threshold);
            }
            InterventionKind::Pai {
                alpha,
                image_scale,
                gamma,
            } => {
                e.kind = Some(KindName::Pai);
                e.alpha = Some(alpha);
                e.image_scale = Some(image_scale);
                e.gamma = Some(gamma);
            }
        }
        e
    }
}

/// Template for [`sweep_quarters`](super::sweep_quarters): an intervention
/// entry without a scope plus which expansions to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub template: InterventionEntry,
    /// Expand over Q1..Q4 at the template's fraction.
    #[serde(default = "yes")]
    pub quarters: bool,
    /// Add global transfers at each of [`GRADUATED_FRACTIONS`](super::GRADUATED_FRACTIONS).
    #[serde(default)]
    pub graduated: bool,
}

fn yes() -> bool {
    true
}

/// A whole experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads for prompt evaluation.
    #[serde(default = "one")]
    pub jobs: usize,
    /// Output prefix for reports.
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub schema: VocabSchema,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default, rename = "dataset")]
    pub datasets: Vec<DatasetSection>,
    #[serde(default, rename = "intervention")]
    pub interventions: Vec<InterventionEntry>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    /// Directory relative paths resolve against; not serialised.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 over the canonical serialisation, first 16 hex digits.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml_string()?.as_bytes());
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        let m = &self.model;
        self.schema
            .decoder_config(m.layer_count, m.head_count, m.model_dim, m.feedforward_dim, m.max_seq_len)
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        self.decoder_config().validate()?;
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        if self.model.checkpoint.is_none() && self.train.is_none() {
            return Err(Error::Config("need either model.checkpoint or a [train] section".into()));
        }
        if let Some(train) = &self.train {
            train.train_config(0).validate()?;
        }
        let mut names = HashSet::new();
        for d in &self.datasets {
            if !names.insert(d.name.as_str()) {
                return Err(Error::Config(format!("duplicate dataset name `{}`", d.name)));
            }
            if d.path.is_none() && (d.family.is_none() || d.pairs.is_none()) {
                return Err(Error::Config(format!(
                    "dataset `{}` needs either `path` or `family` and `pairs`",
                    d.name
                )));
            }
        }
        let mut names = HashSet::new();
        for e in &self.interventions {
            if !names.insert(e.name.as_str()) {
                return Err(Error::Config(format!("duplicate intervention name `{}`", e.name)));
            }
            e.to_spec()?;
        }
        Ok(())
    }
}
