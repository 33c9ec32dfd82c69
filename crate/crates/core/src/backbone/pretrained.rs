//! Adapter for externally exported masked language models.
//!
//! Any MLM with token-level hidden states and a weight-tied head can be run
//! here once its weights are exported into the directory format below. The
//! repository stays free of model downloads and heavyweight runtimes; a
//! holder of the original model exports once and points the CLI at the
//! directory.
//!
//! Layout:
//!   backbone.json     manifest: dimensions, vocabulary, tokenizer kind
//!   backbone.weights  tensor payload keyed by the canonical parameter names

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::vocab::{TokenizerKind, Vocab};
use crate::backbone::{BackboneDims, TransformerBackbone};
use crate::checkpoint::{read_json, read_tensors, write_json, write_tensors};
use crate::error::{Error, Result};
use crate::float::Float;

pub const MANIFEST_FILE: &str = "backbone.json";
pub const WEIGHTS_FILE: &str = "backbone.weights";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackboneManifest {
    pub dims: BackboneDims,
    pub dtype: String,
    /// Ordered vocabulary; index is the token id.
    pub vocab: Vec<String>,
    /// "word-level" or "wordpiece".
    pub tokenizer: String,
    /// Continuation prefix for wordpiece vocabularies.
    #[serde(default)]
    pub continuation: Option<String>,
    pub lowercase: bool,
    /// Surfaces tokenized atomically (control tokens plus registered ones).
    pub special_tokens: Vec<String>,
    pub seed: u64,
}

/// Writes a backbone into the exported-model format. Serves both as the
/// checkpoint writer and as the reference for external export scripts.
pub fn save_backbone<F: Float>(dir: &Path, backbone: &TransformerBackbone<F>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let vocab = backbone.vocab();
    let (tokenizer, continuation) = match vocab.kind() {
        TokenizerKind::WordLevel => ("word-level".to_string(), None),
        TokenizerKind::WordPiece { continuation } => {
            ("wordpiece".to_string(), Some(continuation.clone()))
        }
    };
    let manifest = BackboneManifest {
        dims: backbone.dims().clone(),
        dtype: F::DTYPE.to_string(),
        vocab: vocab.tokens().to_vec(),
        tokenizer,
        continuation,
        lowercase: vocab.lowercase(),
        special_tokens: vocab.special_surfaces(),
        seed: backbone.seed(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    let mut tensors = std::collections::BTreeMap::new();
    backbone.visit_params(&mut |name, m| {
        tensors.insert(name.to_string(), m.clone());
    });
    write_tensors(&dir.join(WEIGHTS_FILE), &tensors)
}

/// Loads an exported backbone, verifying the manifest dimensions against
/// the weight payload.
pub fn load_backbone<F: Float>(dir: &Path) -> Result<TransformerBackbone<F>> {
    let manifest: BackboneManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let kind = match manifest.tokenizer.as_str() {
        "word-level" => TokenizerKind::WordLevel,
        "wordpiece" => TokenizerKind::WordPiece {
            continuation: manifest
                .continuation
                .clone()
                .unwrap_or_else(|| "##".to_string()),
        },
        other => {
            return Err(Error::Checkpoint(format!("unknown tokenizer kind {other:?}")));
        }
    };
    let vocab_size = manifest.vocab.len();
    let vocab = Vocab::from_token_list(
        manifest.vocab,
        kind,
        manifest.lowercase,
        &manifest.special_tokens,
    )?;
    let mut backbone = TransformerBackbone::<F>::new(manifest.dims.clone(), vocab, manifest.seed);

    let tensors = read_tensors::<F>(&dir.join(WEIGHTS_FILE))?;
    let mut missing = Vec::new();
    backbone.visit_params_mut(&mut |name, param| {
        match tensors.get(name) {
            Some(stored) if stored.shape() == param.shape() => *param = stored.clone(),
            Some(stored) => missing.push(format!(
                "{name}: shape {:?} in payload vs {:?} expected",
                stored.shape(),
                param.shape()
            )),
            None => missing.push(format!("{name}: absent from payload")),
        }
    });
    if !missing.is_empty() {
        return Err(Error::Checkpoint(format!(
            "weight payload does not match manifest dims (d_h {}, vocab {}): {}",
            manifest.dims.d_h,
            vocab_size,
            missing.join("; ")
        )));
    }
    Ok(backbone)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::vocab::{CLS, MASK, SEP, UNK};
    use crate::backbone::{Backbone, PromptTokenizer, ToyBackboneConfig};

    fn wordpiece_backbone() -> TransformerBackbone<f64> {
        let tokens: Vec<String> = [
            UNK, CLS, SEP, MASK, "the", "commit", "##tee", "plan", "so", "[Arg1]", "[Arg2]",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let vocab = Vocab::from_token_list(
            tokens,
            TokenizerKind::WordPiece {
                continuation: "##".into(),
            },
            true,
            &["[Arg1]".to_string(), "[Arg2]".to_string()],
        )
        .unwrap();
        let dims = BackboneDims {
            d_h: 8,
            layers: 1,
            heads: 2,
            ff_dim: 16,
            max_positions: 32,
            dropout: 0.0,
            ln_eps: 1e-12,
        };
        TransformerBackbone::new(dims, vocab, 21)
    }

    #[test]
    fn export_and_reload_reproduces_the_model() {
        let dir = tempfile::tempdir().unwrap();
        let original = wordpiece_backbone();
        save_backbone(dir.path(), &original).unwrap();
        let loaded: TransformerBackbone<f64> = load_backbone(dir.path()).unwrap();

        assert_eq!(loaded.vocab_size(), original.vocab_size());
        assert_eq!(loaded.hidden_dim(), original.hidden_dim());
        let ids = original.tokenize("the committee plan");
        assert_eq!(ids, loaded.tokenize("the committee plan"));
        assert_eq!(original.encode(&ids).unwrap(), loaded.encode(&ids).unwrap());
    }

    #[test]
    fn wordpiece_adapter_splits_subwords() {
        let bk = wordpiece_backbone();
        let ids = bk.tokenize("committee");
        assert_eq!(bk.decode(&ids), vec!["commit", "##tee"]);
    }

    #[test]
    fn manifest_weight_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let original = wordpiece_backbone();
        save_backbone(dir.path(), &original).unwrap();

        // Corrupt the manifest dims so the payload no longer matches.
        let mut manifest: BackboneManifest = read_json(&dir.path().join(MANIFEST_FILE)).unwrap();
        manifest.dims.d_h = 16;
        write_json(&dir.path().join(MANIFEST_FILE), &manifest).unwrap();
        let err = load_backbone::<f64>(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn toy_backbone_survives_the_same_container() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ToyBackboneConfig {
            d_h: 8,
            layers: 1,
            heads: 2,
            seed: 3,
            dropout: 0.0,
            ff_dim: None,
        };
        let mut bk =
            TransformerBackbone::<f32>::toy(&cfg, ["alpha".to_string(), "beta".to_string()], 16)
                .unwrap();
        bk.register_special_tokens(&["[Arg1]", "[Arg2]"]).unwrap();
        save_backbone(dir.path(), &bk).unwrap();
        let loaded: TransformerBackbone<f32> = load_backbone(dir.path()).unwrap();
        let ids = bk.tokenize("alpha [Arg1] beta");
        assert_eq!(loaded.tokenize("alpha [Arg1] beta"), ids);
        assert_eq!(bk.encode(&ids).unwrap(), loaded.encode(&ids).unwrap());
    }
}
