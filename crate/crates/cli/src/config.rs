//! Run configuration: one TOML file that pins every knob of a run, with
//! CLI flags layered on top. The resolved form is written next to each
//! command's outputs so a run can be replayed bit for bit.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use teprompt_core::backbone::ToyBackboneConfig;
use teprompt_core::corpus::CorpusFormat;
use teprompt_core::eval::AblationVariant;
use teprompt_core::template::TemplateConfig;
use teprompt_core::train::TrainingConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(format!("unknown precision {other:?}; use f32 or f64")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusSource {
    Synthetic,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub source: CorpusSource,
    /// Corpus file for `source = "file"`.
    pub path: Option<PathBuf>,
    pub format: CorpusFormat,
    pub num_train: usize,
    pub num_test: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            source: CorpusSource::Synthetic,
            path: None,
            format: CorpusFormat::Jsonl,
            num_train: 2000,
            num_test: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Toy,
    Pretrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    /// Exported-backbone directory for `kind = "pretrained"`.
    pub pretrained_dir: Option<PathBuf>,
    pub d_h: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: Option<usize>,
    pub dropout: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        let toy = ToyBackboneConfig::default();
        BackboneConfig {
            kind: BackboneKind::Toy,
            pretrained_dir: None,
            d_h: toy.d_h,
            layers: toy.layers,
            heads: toy.heads,
            ff_dim: toy.ff_dim,
            dropout: toy.dropout,
        }
    }
}

/// Serialized training knobs; the master seed lives at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSection {
    pub variant: AblationVariant,
    pub beta: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        TrainingSection {
            variant: t.variant,
            beta: t.beta,
            gamma: t.gamma,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            weight_decay: t.weight_decay,
        }
    }
}

/// The complete run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub precision: Precision,
    pub output_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub template: TemplateConfig,
    pub backbone: BackboneConfig,
    pub training: TrainingSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed: 7,
            precision: Precision::F32,
            output_dir: PathBuf::from("runs/default"),
            corpus: CorpusConfig::default(),
            template: TemplateConfig::default(),
            backbone: BackboneConfig::default(),
            training: TrainingSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if cfg.version != CONFIG_VERSION {
            bail!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                cfg.version
            );
        }
        Ok(cfg)
    }

    /// Path checks and cross-field constraints.
    pub fn validate(&self) -> Result<()> {
        match self.corpus.source {
            CorpusSource::File => {
                let path = self
                    .corpus
                    .path
                    .as_ref()
                    .context("corpus.source is \"file\" but corpus.path is unset")?;
                if !path.exists() {
                    bail!("corpus file {} does not exist", path.display());
                }
            }
            CorpusSource::Synthetic => {
                if self.corpus.num_train == 0 || self.corpus.num_test == 0 {
                    bail!("synthetic corpus sizes must be positive");
                }
            }
        }
        if self.backbone.kind == BackboneKind::Pretrained {
            let dir = self
                .backbone
                .pretrained_dir
                .as_ref()
                .context("backbone.kind is \"pretrained\" but backbone.pretrained_dir is unset")?;
            if !dir.exists() {
                bail!("pretrained backbone directory {} does not exist", dir.display());
            }
        }
        self.template
            .validate()
            .map_err(|e| anyhow::anyhow!(e.to_string()))?;
        self.training_config().validate().map_err(|e| anyhow::anyhow!(e.to_string()))?;
        self.toy_config().validate().map_err(|e| anyhow::anyhow!(e.to_string()))?;
        Ok(())
    }

    pub fn toy_config(&self) -> ToyBackboneConfig {
        ToyBackboneConfig {
            d_h: self.backbone.d_h,
            layers: self.backbone.layers,
            heads: self.backbone.heads,
            ff_dim: self.backbone.ff_dim,
            dropout: self.backbone.dropout,
            seed: self.seed,
        }
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            beta: self.training.beta,
            gamma: self.training.gamma,
            learning_rate: self.training.learning_rate,
            batch_size: self.training.batch_size,
            epochs: self.training.epochs,
            weight_decay: self.training.weight_decay,
            seed: self.seed,
            variant: self.training.variant,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("serializing config")
    }

    /// FNV-1a hash of the canonical serialized form.
    pub fn hash(&self) -> Result<String> {
        let text = self.to_toml()?;
        let mut h: u64 = 0xcbf29ce484222325;
        for b in text.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x100000001b3);
        }
        Ok(format!("{h:016x}"))
    }

    /// Writes the fully resolved config next to a command's outputs.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output dir {}", dir.display()))?;
        let path = dir.join("resolved_config.toml");
        std::fs::write(&path, self.to_toml()?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_losslessly() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.hash().unwrap(), cfg.hash().unwrap());
        let mut other = cfg.clone();
        other.seed = 8;
        assert_ne!(cfg.hash().unwrap(), other.hash().unwrap());
    }

    #[test]
    fn partial_sections_fall_back_to_defaults() {
        let cfg: RunConfig = toml::from_str(
            "seed = 3\n[training]\nepochs = 2\n[backbone]\nd_h = 16\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.training.epochs, 2);
        assert_eq!(cfg.training.beta, 0.3);
        assert_eq!(cfg.backbone.d_h, 16);
        assert_eq!(cfg.backbone.layers, 2);
    }

    #[test]
    fn readme_style_full_config_parses() {
        let text = r#"
version = 1
seed = 7
precision = "f32"
output_dir = "runs/demo"

[corpus]
source = "synthetic"
format = "jsonl"
num_train = 2000
num_test = 400

[template]
max_total_tokens = 150
max_arg_tokens = 70
ssc_text = "The sense between [Arg1] and [Arg2] is [MASK]"
acp_text = "The implicit connective word is [MASK]"

[backbone]
kind = "toy"
d_h = 32
layers = 2
heads = 2
dropout = 0.1

[training]
variant = "teprompt"
beta = 0.3
gamma = 0.4
learning_rate = 1e-5
batch_size = 32
epochs = 10
weight_decay = 0.01
"#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.training.variant.name(), "teprompt");
    }

    #[test]
    fn missing_corpus_file_fails_validation() {
        let mut cfg = RunConfig::default();
        cfg.corpus.source = CorpusSource::File;
        cfg.corpus.path = Some(PathBuf::from("/nonexistent/corpus.jsonl"));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn defaults_follow_reference_settings() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.training.beta, 0.3);
        assert_eq!(cfg.training.gamma, 0.4);
        assert_eq!(cfg.training.learning_rate, 1e-5);
        assert_eq!(cfg.training.batch_size, 32);
        assert_eq!(cfg.template.max_total_tokens, 150);
        assert_eq!(cfg.template.max_arg_tokens, 70);
    }
}
