//! Joint training: per-head cross entropy, the weighted joint loss, gold
//! target selection and the decoupled-weight-decay optimizer loop.

use serde::{Deserialize, Serialize};

use crate::backbone::PromptTokenizer;
use crate::corpus::{CorpusSplit, DiscourseInstance};
use crate::error::{Error, Result};
use crate::eval::{evaluate, AblationVariant};
use crate::float::Float;
use crate::math::tape::{Gradients, Tape};
use crate::math::Matrix;
use crate::model::PromptModel;
use crate::rng::Rng;
use crate::template::PromptEncoding;
use crate::verbalizer::{AnswerLabel, TaskSpaces};

/// Joint-training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Weight of the sense-classification loss.
    pub beta: f64,
    /// Weight of the connective-prediction loss.
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub variant: AblationVariant,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            beta: 0.3,
            gamma: 0.4,
            learning_rate: 1e-5,
            batch_size: 32,
            epochs: 10,
            weight_decay: 0.01,
            seed: 0,
            variant: AblationVariant::TePrompt,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 || self.gamma < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// Cross entropy of a normalized probability vector at the gold index.
/// A zero probability is clamped to 1e-12 with a warning.
pub fn task_loss<F: Float>(probs: &[F], gold: usize) -> F {
    let floor = F::of_f64(1e-12);
    let mut p = probs[gold];
    if p < floor {
        log::warn!("gold-answer probability {p} clamped to 1e-12 in loss");
        p = floor;
    }
    -p.ln()
}

/// Weighted joint loss over the three task losses.
pub fn joint_loss<F: Float>(l_d: F, l_s: F, l_c: F, cfg: &TrainingConfig) -> F {
    l_d + F::of_f64(cfg.beta) * l_s + F::of_f64(cfg.gamma) * l_c
}

/// Gold answer-space indices for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoldTargets {
    pub drr: usize,
    pub ssc: usize,
    /// Absent when the annotated connective is not in the connective space
    /// (unseen on dev/test); that head's loss is masked out.
    pub acp: Option<usize>,
}

/// Resolves the gold entries: the sense label word for the sense head, the
/// annotated connective for the connective head, and for the relation head
/// the annotated connective when it is an answer word of the instance's
/// sense, else the first answer word of that sense group.
pub fn gold_targets(
    instance: &DiscourseInstance,
    spaces: &TaskSpaces,
    tok: &impl PromptTokenizer,
) -> GoldTargets {
    let connective = instance.connective.trim().to_lowercase();

    let drr = spaces
        .drr
        .entries
        .iter()
        .position(|e| e.label == AnswerLabel::Sense(instance.sense) && e.surface == connective)
        .or_else(|| {
            spaces
                .drr
                .entries
                .iter()
                .position(|e| e.label == AnswerLabel::Sense(instance.sense))
        })
        .expect("every sense has answer words");

    let ssc = spaces
        .ssc
        .entries
        .iter()
        .position(|e| e.label == AnswerLabel::Sense(instance.sense))
        .expect("every sense has a label word");

    let acp = tok
        .tokenize(&connective)
        .first()
        .and_then(|&t| spaces.acp.index_of_token(t));
    if acp.is_none() {
        log::debug!(
            "connective {:?} of {} is outside the connective space; loss masked",
            instance.connective,
            instance.instance_id
        );
    }

    GoldTargets { drr, ssc, acp }
}

/// Adam with decoupled weight decay. Optimizer state is keyed by parameter
/// name; parameters without a gradient in a step are left untouched.
pub struct AdamW<F> {
    pub learning_rate: f64,
    pub weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    state: std::collections::BTreeMap<String, (Matrix<F>, Matrix<F>)>,
}

impl<F: Float> AdamW<F> {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamW {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            state: std::collections::BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over every visited parameter that has a gradient.
    pub fn step<V>(&mut self, grads: &Gradients<F>, mut visit: V)
    where
        V: FnMut(&mut dyn FnMut(&str, &mut Matrix<F>)),
    {
        self.t += 1;
        let lr = F::of_f64(self.learning_rate);
        let wd = F::of_f64(self.weight_decay);
        let b1 = F::of_f64(self.beta1);
        let b2 = F::of_f64(self.beta2);
        let eps = F::of_f64(self.eps);
        let one = F::one();
        let bias1 = F::of_f64(1.0 - self.beta1.powi(self.t as i32));
        let bias2 = F::of_f64(1.0 - self.beta2.powi(self.t as i32));
        let t_state = &mut self.state;

        visit(&mut |name, param| {
            let Some(grad) = grads.get(name) else {
                return;
            };
            let (m, v) = t_state.entry(name.to_string()).or_insert_with(|| {
                (
                    Matrix::zeros(param.rows(), param.cols()),
                    Matrix::zeros(param.rows(), param.cols()),
                )
            });
            let pm = param.as_mut_slice();
            let gm = grad.as_slice();
            let ms = m.as_mut_slice();
            let vs = v.as_mut_slice();
            for i in 0..pm.len() {
                let g = gm[i];
                ms[i] = b1 * ms[i] + (one - b1) * g;
                vs[i] = b2 * vs[i] + (one - b2) * g * g;
                let m_hat = ms[i] / bias1;
                let v_hat = vs[i] / bias2;
                pm[i] = pm[i] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * pm[i]);
            }
        });
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_drr: f64,
    pub loss_ssc: f64,
    pub loss_acp: f64,
    pub loss_total: f64,
    pub dev_accuracy: Option<f64>,
    pub dev_macro_f1: Option<f64>,
}

pub struct TrainOutcome<F> {
    pub model: PromptModel<F>,
    pub records: Vec<EpochRecord>,
    /// Epoch whose weights were kept (best dev macro F1), 1-based.
    pub best_epoch: Option<usize>,
    pub steps: u64,
}

struct Snapshot<F> {
    params: Vec<Matrix<F>>,
}

fn snapshot<F: Float>(model: &PromptModel<F>) -> Snapshot<F> {
    let mut params = Vec::new();
    model.visit_params(&mut |_, m| params.push(m.clone()));
    Snapshot { params }
}

fn restore<F: Float>(model: &mut PromptModel<F>, snap: &Snapshot<F>) {
    let mut i = 0;
    model.visit_params_mut(&mut |_, m| {
        *m = snap.params[i].clone();
        i += 1;
    });
}

/// Jointly trains the model on the split's training part, evaluating the
/// dev part every epoch and keeping the weights of the best dev macro F1.
pub fn train<F: Float>(
    split: &CorpusSplit,
    cfg: &TrainingConfig,
    mut model: PromptModel<F>,
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    if cfg.variant != model.variant {
        return Err(Error::VariantMismatch {
            requested: cfg.variant.name().into(),
            found: model.variant.name().into(),
        });
    }
    if split.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let (w_drr, w_ssc, w_acp) = cfg.variant.loss_weights(cfg.beta, cfg.gamma);

    // Prompt encodings and gold targets are fixed; compute them once.
    let mut encodings: Vec<(PromptEncoding, GoldTargets)> = Vec::with_capacity(split.train.len());
    for inst in &split.train {
        let enc = model.encode_instance(inst)?;
        let gold = gold_targets(inst, &model.spaces, &model.backbone);
        encodings.push((enc, gold));
    }

    let mut optimizer = AdamW::<F>::new(cfg.learning_rate, cfg.weight_decay);
    let mut shuffle_rng = Rng::derive(cfg.seed, "batch-shuffle");
    let mut dropout_rng = Rng::derive(cfg.seed, "dropout");
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Snapshot<F>)> = None;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..encodings.len()).collect();
        shuffle_rng.shuffle(&mut order);

        let mut sums = [0.0f64; 3];
        let mut counts = [0usize; 3];
        let mut total_sum = 0.0f64;

        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let n = chunk.len();
            let acp_present = chunk
                .iter()
                .filter(|&&i| encodings[i].1.acp.is_some())
                .count();

            let mut parts: Vec<(crate::math::tape::NodeId, F)> = Vec::new();
            for &i in chunk {
                let (enc, gold) = &encodings[i];
                let losses = model.instance_losses_on_tape(
                    &mut tape,
                    &bound,
                    enc,
                    w_drr.map(|_| gold.drr),
                    w_ssc.map(|_| gold.ssc),
                    if w_acp.is_some() { gold.acp } else { None },
                    true,
                    &mut dropout_rng,
                )?;
                if let (Some(node), Some(w)) = (losses.drr, w_drr) {
                    parts.push((node, F::of_f64(w / n as f64)));
                    sums[0] += tape.value(node).get(0, 0).to_f64_lossy();
                    counts[0] += 1;
                }
                if let (Some(node), Some(w)) = (losses.ssc, w_ssc) {
                    parts.push((node, F::of_f64(w / n as f64)));
                    sums[1] += tape.value(node).get(0, 0).to_f64_lossy();
                    counts[1] += 1;
                }
                if let (Some(node), Some(w)) = (losses.acp, w_acp) {
                    parts.push((node, F::of_f64(w / acp_present.max(1) as f64)));
                    sums[2] += tape.value(node).get(0, 0).to_f64_lossy();
                    counts[2] += 1;
                }
            }
            if parts.is_empty() {
                continue;
            }
            let loss = tape.weighted_sum(&parts);
            let loss_value = tape.value(loss).get(0, 0).to_f64_lossy();
            if !loss_value.is_finite() {
                let ids: Vec<&str> = chunk
                    .iter()
                    .map(|&i| split.train[i].instance_id.as_str())
                    .collect();
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    detail: format!("instances [{}]", ids.join(", ")),
                });
            }
            total_sum += loss_value * n as f64;
            let grads = tape.backward(loss);
            apply_step(&mut optimizer, &grads, &mut model);
        }

        let mean = |sum: f64, count: usize| if count == 0 { 0.0 } else { sum / count as f64 };
        let mut record = EpochRecord {
            epoch,
            loss_drr: mean(sums[0], counts[0]),
            loss_ssc: mean(sums[1], counts[1]),
            loss_acp: mean(sums[2], counts[2]),
            loss_total: total_sum / encodings.len() as f64,
            dev_accuracy: None,
            dev_macro_f1: None,
        };

        if !split.dev.is_empty() {
            let report = evaluate(&split.dev, &model, cfg.variant)?;
            record.dev_accuracy = Some(report.accuracy);
            record.dev_macro_f1 = Some(report.macro_f1);
            let better = best
                .as_ref()
                .map(|(f1, _, _)| report.macro_f1 > *f1)
                .unwrap_or(true);
            if better {
                best = Some((report.macro_f1, epoch, snapshot(&model)));
            }
        }
        log::info!(
            "epoch {epoch}: loss {:.4} (drr {:.4} ssc {:.4} acp {:.4}) dev F1 {:?}",
            record.loss_total,
            record.loss_drr,
            record.loss_ssc,
            record.loss_acp,
            record.dev_macro_f1
        );
        records.push(record);
    }

    let mut best_epoch = None;
    if let Some((_, epoch, snap)) = &best {
        restore(&mut model, snap);
        best_epoch = Some(*epoch);
    }
    Ok(TrainOutcome {
        model,
        records,
        best_epoch,
        steps: optimizer.steps_taken(),
    })
}

fn apply_step<F: Float>(optimizer: &mut AdamW<F>, grads: &Gradients<F>, model: &mut PromptModel<F>) {
    let PromptModel {
        backbone, fusion, ..
    } = model;
    optimizer.step(grads, |f| {
        backbone.visit_params_mut(f);
        fusion.visit_params_mut(f);
    });
}

/// Writes the per-epoch records as line-delimited JSON.
pub fn write_training_log(path: &std::path::Path, records: &[EpochRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(
            &serde_json::to_string(r).map_err(|e| Error::Other(format!("serialize log: {e}")))?,
        );
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::ToyBackboneConfig;
    use crate::corpus::{synthetic::generate_synthetic, Sense};
    use crate::model::build_toy_model;
    use crate::template::TemplateConfig;

    #[test]
    fn task_loss_closed_forms() {
        let uniform = vec![1.0f64 / 16.0; 16];
        let loss = task_loss(&uniform, 3);
        assert!((loss - (16.0f64).ln()).abs() < 1e-12);

        let mut one_hot = vec![0.0f64; 4];
        one_hot[2] = 1.0;
        assert_eq!(task_loss(&one_hot, 2), 0.0);

        let two = vec![1.0 / 3.0, 2.0 / 3.0];
        assert!((task_loss(&two, 1) - (1.5f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn task_loss_clamps_zero_probability() {
        let probs = vec![1.0f64, 0.0];
        let loss = task_loss(&probs, 1);
        assert!((loss - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn joint_loss_weighted_sum_exact() {
        let cfg = TrainingConfig::default();
        let l64 = joint_loss(1.0f64, 0.5, 0.25, &cfg);
        assert_eq!(l64, 1.25);
        let l32 = joint_loss(1.0f32, 0.5, 0.25, &cfg);
        assert_eq!(l32, 1.25);
    }

    #[test]
    fn joint_loss_degenerate_weights_is_drr_bitwise() {
        let cfg = TrainingConfig {
            beta: 0.0,
            gamma: 0.0,
            ..TrainingConfig::default()
        };
        let l_d = 0.123456789f64;
        assert_eq!(joint_loss(l_d, 7.7, 3.3, &cfg).to_bits(), l_d.to_bits());
        assert_eq!(joint_loss(0.0f64, 0.0, 0.0, &TrainingConfig::default()), 0.0);
    }

    fn tiny_model(variant: AblationVariant, seed: u64) -> (crate::corpus::CorpusSplit, PromptModel<f64>) {
        let split = generate_synthetic(24, 8, 5);
        let toy = ToyBackboneConfig {
            d_h: 8,
            layers: 1,
            heads: 2,
            ff_dim: None,
            dropout: 0.0,
            seed,
        };
        let model = build_toy_model::<f64>(
            &split.train,
            &toy,
            &TemplateConfig::default(),
            variant,
            "test".into(),
        )
        .unwrap();
        (split, model)
    }

    #[test]
    fn gold_targets_resolve_connective_and_fallback() {
        let (split, model) = tiny_model(AblationVariant::TePrompt, 1);
        let mut inst = split.train[0].clone();
        inst.sense = Sense::Contingency;
        inst.connective = "so".into();
        let gold = gold_targets(&inst, &model.spaces, &model.backbone);
        assert_eq!(model.spaces.drr.entries[gold.drr].surface, "so");
        assert_eq!(model.spaces.ssc.entries[gold.ssc].surface, "Contingency");

        // A connective outside the answer table falls back to the first
        // word of its sense group.
        inst.sense = Sense::Temporal;
        inst.connective = "meanwhile".into();
        let gold = gold_targets(&inst, &model.spaces, &model.backbone);
        assert_eq!(model.spaces.drr.entries[gold.drr].surface, "simultaneously");
        assert!(gold.acp.is_none(), "unseen connective is masked");
    }

    #[test]
    fn synthetic_targets_match_generator_oracle() {
        let (split, model) = tiny_model(AblationVariant::TePrompt, 2);
        for inst in &split.train {
            let gold = gold_targets(inst, &model.spaces, &model.backbone);
            let planted = crate::corpus::synthetic::recover_connective(inst).unwrap();
            assert_eq!(model.spaces.drr.entries[gold.drr].surface, planted);
            assert_eq!(
                model.spaces.ssc.entries[gold.ssc].surface,
                inst.sense.label()
            );
            let acp = gold.acp.expect("training connectives are in the space");
            assert_eq!(model.spaces.acp.entries[acp].surface, planted);
        }
    }

    #[test]
    fn adamw_zero_learning_rate_is_bitwise_noop() {
        let (split, mut model) = tiny_model(AblationVariant::TePrompt, 3);
        let mut before = Vec::new();
        model.visit_params(&mut |_, m| before.push(m.clone()));

        let inst = &split.train[0];
        let enc = model.encode_instance(inst).unwrap();
        let gold = gold_targets(inst, &model.spaces, &model.backbone);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let mut rng = Rng::new(0);
        let losses = model
            .instance_losses_on_tape(
                &mut tape,
                &bound,
                &enc,
                Some(gold.drr),
                Some(gold.ssc),
                gold.acp,
                false,
                &mut rng,
            )
            .unwrap();
        let loss = tape.weighted_sum(&[
            (losses.drr.unwrap(), 1.0),
            (losses.ssc.unwrap(), 0.3),
            (losses.acp.unwrap(), 0.4),
        ]);
        let grads = tape.backward(loss);

        let mut optimizer = AdamW::<f64>::new(0.0, 0.01);
        apply_step(&mut optimizer, &grads, &mut model);

        let mut i = 0;
        model.visit_params(&mut |name, m| {
            let prev = &before[i];
            assert_eq!(m.shape(), prev.shape());
            for (a, b) in m.as_slice().iter().zip(prev.as_slice().iter()) {
                assert_eq!(a.to_bits(), b.to_bits(), "{name} changed");
            }
            i += 1;
        });
    }

    #[test]
    fn masked_connective_contributes_zero_gradient() {
        let (split, model) = tiny_model(AblationVariant::TePrompt, 4);
        let mut inst = split.train[0].clone();
        inst.connective = "meanwhile".into(); // unseen, so the head masks out

        let run = |gamma_active: bool| -> Gradients<f64> {
            let enc = model.encode_instance(&inst).unwrap();
            let gold = gold_targets(&inst, &model.spaces, &model.backbone);
            assert!(gold.acp.is_none());
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let mut rng = Rng::new(0);
            let losses = model
                .instance_losses_on_tape(
                    &mut tape,
                    &bound,
                    &enc,
                    Some(gold.drr),
                    Some(gold.ssc),
                    if gamma_active { gold.acp } else { None },
                    false,
                    &mut rng,
                )
                .unwrap();
            assert!(losses.acp.is_none());
            let loss = tape.weighted_sum(&[
                (losses.drr.unwrap(), 1.0),
                (losses.ssc.unwrap(), 0.3),
            ]);
            tape.backward(loss)
        };

        let with_gamma = run(true);
        let without_gamma = run(false);
        assert_eq!(with_gamma.len(), without_gamma.len());
        for (name, g) in &with_gamma {
            let other = &without_gamma[name];
            assert_eq!(g, other, "{name} gradient differs");
        }
    }

    #[test]
    fn training_loss_drops_and_dev_improves() {
        let split = generate_synthetic(160, 40, 11);
        let toy = ToyBackboneConfig {
            d_h: 16,
            layers: 1,
            heads: 2,
            ff_dim: None,
            dropout: 0.0,
            seed: 11,
        };
        let model = build_toy_model::<f32>(
            &split.train,
            &toy,
            &TemplateConfig::default(),
            AblationVariant::TePrompt,
            "trend".into(),
        )
        .unwrap();
        let cfg = TrainingConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 5,
            seed: 11,
            ..TrainingConfig::default()
        };
        let outcome = train(&split, &cfg, model).unwrap();
        assert_eq!(outcome.records.len(), 5);
        assert!(
            outcome.records[1].loss_total < outcome.records[0].loss_total,
            "epoch-mean loss should drop: {:?}",
            outcome.records.iter().map(|r| r.loss_total).collect::<Vec<_>>()
        );
        let first = outcome.records[0].dev_macro_f1.unwrap();
        let best_later = outcome.records[1..]
            .iter()
            .filter_map(|r| r.dev_macro_f1)
            .fold(f64::MIN, f64::max);
        assert!(best_later > first, "dev macro F1 should improve over epoch 1");
        assert!(outcome.best_epoch.is_some());
    }

    #[test]
    fn drr_only_trains_without_auxiliary_losses() {
        let split = generate_synthetic(32, 8, 6);
        let toy = ToyBackboneConfig {
            d_h: 8,
            layers: 1,
            heads: 2,
            ff_dim: None,
            dropout: 0.0,
            seed: 6,
        };
        let model = build_toy_model::<f64>(
            &split.train,
            &toy,
            &TemplateConfig::default(),
            AblationVariant::DrrOnly,
            "drr".into(),
        )
        .unwrap();
        let cfg = TrainingConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 1,
            variant: AblationVariant::DrrOnly,
            seed: 6,
            ..TrainingConfig::default()
        };
        let outcome = train(&split, &cfg, model).unwrap();
        assert_eq!(outcome.records[0].loss_ssc, 0.0);
        assert_eq!(outcome.records[0].loss_acp, 0.0);
        assert!(outcome.records[0].loss_drr > 0.0);
    }

    #[test]
    fn corrupted_parameters_abort_with_batch_diagnostic() {
        let (split, mut model) = tiny_model(AblationVariant::TePrompt, 9);
        model.visit_params_mut(&mut |name, m| {
            if name == "embed.word" {
                m.as_mut_slice()[0] = f64::NAN;
            }
        });
        let cfg = TrainingConfig {
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 1,
            seed: 9,
            ..TrainingConfig::default()
        };
        let err = match train(&split, &cfg, model) {
            Ok(_) => panic!("training should abort on non-finite loss"),
            Err(e) => e,
        };
        match err {
            Error::NonFiniteLoss { epoch, detail, .. } => {
                assert_eq!(epoch, 1);
                assert!(detail.contains("syn-train"), "{detail}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn drr_only_predictions_ignore_loss_weights() {
        let split = generate_synthetic(48, 12, 10);
        let toy = ToyBackboneConfig {
            d_h: 8,
            layers: 1,
            heads: 2,
            ff_dim: None,
            dropout: 0.0,
            seed: 10,
        };
        let run = |beta: f64, gamma: f64| {
            let model = build_toy_model::<f64>(
                &split.train,
                &toy,
                &TemplateConfig::default(),
                AblationVariant::DrrOnly,
                "bg".into(),
            )
            .unwrap();
            let cfg = TrainingConfig {
                learning_rate: 1e-3,
                batch_size: 16,
                epochs: 2,
                seed: 10,
                variant: AblationVariant::DrrOnly,
                beta,
                gamma,
                ..TrainingConfig::default()
            };
            let outcome = train(&split, &cfg, model).unwrap();
            crate::eval::evaluate(&split.test, &outcome.model, AblationVariant::DrrOnly).unwrap()
        };
        assert_eq!(run(0.3, 0.4), run(0.9, 0.05));
    }

    #[test]
    fn same_seed_reproduces_metrics() {
        let split = generate_synthetic(48, 12, 8);
        let toy = ToyBackboneConfig {
            d_h: 8,
            layers: 1,
            heads: 2,
            ff_dim: None,
            dropout: 0.1,
            seed: 8,
        };
        let cfg = TrainingConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 2,
            seed: 8,
            ..TrainingConfig::default()
        };
        let run = || {
            let model = build_toy_model::<f32>(
                &split.train,
                &toy,
                &TemplateConfig::default(),
                AblationVariant::TePrompt,
                "det".into(),
            )
            .unwrap();
            train(&split, &cfg, model).unwrap().records
        };
        assert_eq!(run(), run());
    }
}
