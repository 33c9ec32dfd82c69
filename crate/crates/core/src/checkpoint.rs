//! Checkpoint containers: a binary tensor payload plus JSON manifests.
//!
//! Weight payloads store every scalar as little-endian f64, which round
//! trips both supported precisions exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::float::Float;
use crate::math::Matrix;

const MAGIC: &[u8; 8] = b"TEPTNSR1";

pub fn write_tensors<F: Float>(
    path: &Path,
    tensors: &BTreeMap<String, Matrix<F>>,
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(tensor.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(tensor.cols() as u64).to_le_bytes());
        for &v in tensor.as_slice() {
            buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_tensors<F: Float>(path: &Path) -> Result<BTreeMap<String, Matrix<F>>> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut cursor = 0usize;

    let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
        if *cursor + n > buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} is truncated at byte {}",
                path.display(),
                cursor
            )));
        }
        let slice = &buf[*cursor..*cursor + n];
        *cursor += n;
        Ok(slice)
    };

    if take(&mut cursor, 8)? != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a tensor payload (bad magic)",
            path.display()
        )));
    }
    let count = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut cursor, name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rows = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
        let raw = take(&mut cursor, rows * cols * 8)?;
        let data: Vec<F> = raw
            .chunks_exact(8)
            .map(|c| F::of_f64(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        out.insert(name, Matrix::from_vec(rows, cols, data));
    }
    Ok(out)
}

/// Writes a JSON document with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Other(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    let mut file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Metadata manifest of a trained-model checkpoint.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ModelMeta {
    pub format_version: u32,
    pub dtype: String,
    pub variant: crate::eval::AblationVariant,
    pub seed: u64,
    pub config_hash: String,
    pub step_count: u64,
    pub best_epoch: Option<usize>,
    pub template: crate::template::TemplateConfig,
    pub spaces: crate::verbalizer::TaskSpaces,
}

pub const MODEL_MANIFEST_FILE: &str = "model.json";
pub const FUSION_WEIGHTS_FILE: &str = "fusion.weights";
const FORMAT_VERSION: u32 = 1;

/// Saves a model checkpoint directory: model manifest, backbone manifest
/// and the two weight payloads.
pub fn save_model<F: Float>(
    dir: &Path,
    model: &crate::model::PromptModel<F>,
    step_count: u64,
    best_epoch: Option<usize>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let meta = ModelMeta {
        format_version: FORMAT_VERSION,
        dtype: F::DTYPE.to_string(),
        variant: model.variant,
        seed: model.seed,
        config_hash: model.config_hash.clone(),
        step_count,
        best_epoch,
        template: model.template.clone(),
        spaces: model.spaces.clone(),
    };
    write_json(&dir.join(MODEL_MANIFEST_FILE), &meta)?;
    crate::backbone::pretrained::save_backbone(dir, &model.backbone)?;
    let mut fusion = BTreeMap::new();
    model.fusion.visit_params(&mut |name, m| {
        fusion.insert(name.to_string(), m.clone());
    });
    write_tensors(&dir.join(FUSION_WEIGHTS_FILE), &fusion)
}

/// Reads just the stored dtype so callers can dispatch on precision.
pub fn model_dtype(dir: &Path) -> Result<String> {
    let meta: ModelMeta = read_json(&dir.join(MODEL_MANIFEST_FILE))?;
    Ok(meta.dtype)
}

/// Loads a model checkpoint, verifying dtype, hidden width and vocabulary
/// size consistency across the manifest and payloads.
pub fn load_model<F: Float>(dir: &Path) -> Result<(crate::model::PromptModel<F>, ModelMeta)> {
    if !dir.join(MODEL_MANIFEST_FILE).exists() {
        return Err(Error::Checkpoint(format!(
            "{} is not a model checkpoint (missing {MODEL_MANIFEST_FILE})",
            dir.display()
        )));
    }
    let meta: ModelMeta = read_json(&dir.join(MODEL_MANIFEST_FILE))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint format {} unsupported (expected {FORMAT_VERSION})",
            meta.format_version
        )));
    }
    if meta.dtype != F::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint stores {} weights but {} was requested",
            meta.dtype,
            F::DTYPE
        )));
    }
    let backbone = crate::backbone::pretrained::load_backbone::<F>(dir)?;
    let d_h = crate::backbone::Backbone::hidden_dim(&backbone);
    let vocab_size = crate::backbone::Backbone::vocab_size(&backbone);

    let fusion_tensors = read_tensors::<F>(&dir.join(FUSION_WEIGHTS_FILE))?;
    let mut fusion = crate::fusion::FusionParameters::<F>::zeros(d_h);
    let mut problems = Vec::new();
    fusion.visit_params_mut(&mut |name, param| match fusion_tensors.get(name) {
        Some(stored) if stored.shape() == param.shape() => *param = stored.clone(),
        Some(stored) => problems.push(format!(
            "{name}: stored {:?}, backbone d_h is {d_h}",
            stored.shape()
        )),
        None => problems.push(format!("{name}: missing")),
    });
    if !problems.is_empty() {
        return Err(Error::Checkpoint(format!(
            "gate weights inconsistent with backbone: {}",
            problems.join("; ")
        )));
    }
    for space in [&meta.spaces.drr, &meta.spaces.ssc, &meta.spaces.acp] {
        for entry in &space.entries {
            if entry.token_id as usize >= vocab_size {
                return Err(Error::Checkpoint(format!(
                    "answer token {} ({:?}) outside vocabulary of {vocab_size}",
                    entry.token_id, entry.surface
                )));
            }
        }
    }
    let model = crate::model::PromptModel {
        backbone,
        fusion,
        spaces: meta.spaces.clone(),
        template: meta.template.clone(),
        variant: meta.variant,
        seed: meta.seed,
        config_hash: meta.config_hash.clone(),
    };
    Ok((model, meta))
}
