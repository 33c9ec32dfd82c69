//! Prediction, metrics and the ablation variant definitions.
//!
//! The final relation decision comes from the fused relation head; ablation
//! variants swap the decision head, drop segments or bypass the gates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::corpus::{DiscourseInstance, Sense, ALL_SENSES};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::fusion::{fuse_auxiliary, fuse_main, restrict_scores};
use crate::math::{argmax, softmax, Matrix};
use crate::model::PromptModel;
use crate::template::{PromptEncoding, PromptLayout};
use crate::verbalizer::{verbalize, AnswerLabel};

/// The nine trained configurations of the ablation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationVariant {
    #[serde(rename = "teprompt")]
    TePrompt,
    #[serde(rename = "drr-only")]
    DrrOnly,
    #[serde(rename = "ssc-only")]
    SscOnly,
    #[serde(rename = "acp-only")]
    AcpOnly,
    #[serde(rename = "teprompt-ssc-head")]
    TePromptSscHead,
    #[serde(rename = "teprompt-acp-head")]
    TePromptAcpHead,
    #[serde(rename = "teprompt-no-gate")]
    TePromptNoGate,
    #[serde(rename = "drr-plus-ssc")]
    DrrPlusSsc,
    #[serde(rename = "drr-plus-acp")]
    DrrPlusAcp,
}

/// How the relation-decision state is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Both auxiliary begin states, two gates.
    TwoGate,
    /// Only the sense begin state, second gate only.
    SingleSsc,
    /// Only the connective begin state, second gate only.
    SingleAcp,
    /// Raw relation mask state.
    None,
}

/// Which head produces the final sense.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionHead {
    FusedDrr,
    RawDrr,
    Ssc,
    Acp,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 9] = [
        AblationVariant::TePrompt,
        AblationVariant::DrrOnly,
        AblationVariant::SscOnly,
        AblationVariant::AcpOnly,
        AblationVariant::TePromptSscHead,
        AblationVariant::TePromptAcpHead,
        AblationVariant::TePromptNoGate,
        AblationVariant::DrrPlusSsc,
        AblationVariant::DrrPlusAcp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::TePrompt => "teprompt",
            AblationVariant::DrrOnly => "drr-only",
            AblationVariant::SscOnly => "ssc-only",
            AblationVariant::AcpOnly => "acp-only",
            AblationVariant::TePromptSscHead => "teprompt-ssc-head",
            AblationVariant::TePromptAcpHead => "teprompt-acp-head",
            AblationVariant::TePromptNoGate => "teprompt-no-gate",
            AblationVariant::DrrPlusSsc => "drr-plus-ssc",
            AblationVariant::DrrPlusAcp => "drr-plus-acp",
        }
    }

    pub fn layout(self) -> PromptLayout {
        match self {
            AblationVariant::TePrompt
            | AblationVariant::TePromptSscHead
            | AblationVariant::TePromptAcpHead
            | AblationVariant::TePromptNoGate => PromptLayout::FULL,
            AblationVariant::DrrOnly => PromptLayout {
                drr: true,
                ssc: false,
                acp: false,
                arg_prefix: false,
            },
            AblationVariant::SscOnly => PromptLayout {
                drr: false,
                ssc: true,
                acp: false,
                arg_prefix: true,
            },
            AblationVariant::AcpOnly => PromptLayout {
                drr: false,
                ssc: false,
                acp: true,
                arg_prefix: true,
            },
            AblationVariant::DrrPlusSsc => PromptLayout {
                drr: true,
                ssc: true,
                acp: false,
                arg_prefix: false,
            },
            AblationVariant::DrrPlusAcp => PromptLayout {
                drr: true,
                ssc: false,
                acp: true,
                arg_prefix: false,
            },
        }
    }

    pub fn fusion_mode(self) -> FusionMode {
        match self {
            AblationVariant::TePrompt
            | AblationVariant::TePromptSscHead
            | AblationVariant::TePromptAcpHead => FusionMode::TwoGate,
            AblationVariant::DrrPlusSsc => FusionMode::SingleSsc,
            AblationVariant::DrrPlusAcp => FusionMode::SingleAcp,
            AblationVariant::DrrOnly
            | AblationVariant::SscOnly
            | AblationVariant::AcpOnly
            | AblationVariant::TePromptNoGate => FusionMode::None,
        }
    }

    pub fn decision_head(self) -> DecisionHead {
        match self {
            AblationVariant::TePrompt
            | AblationVariant::DrrPlusSsc
            | AblationVariant::DrrPlusAcp => DecisionHead::FusedDrr,
            AblationVariant::DrrOnly | AblationVariant::TePromptNoGate => DecisionHead::RawDrr,
            AblationVariant::SscOnly | AblationVariant::TePromptSscHead => DecisionHead::Ssc,
            AblationVariant::AcpOnly | AblationVariant::TePromptAcpHead => DecisionHead::Acp,
        }
    }

    /// Loss weights (relation, sense, connective). A head that is the
    /// variant's sole task trains at weight one.
    pub fn loss_weights(self, beta: f64, gamma: f64) -> (Option<f64>, Option<f64>, Option<f64>) {
        let layout = self.layout();
        let drr = layout.drr.then_some(1.0);
        let ssc = layout.ssc.then_some(if layout.drr { beta } else { 1.0 });
        let acp = layout.acp.then_some(if layout.drr { gamma } else { 1.0 });
        (drr, ssc, acp)
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = AblationVariant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!(
                    "unknown variant {s:?}; expected one of: {}",
                    names.join(", ")
                ))
            })
    }
}

/// Computed states and head tables for one instance, as used by prediction
/// and the inspection command.
#[derive(Debug, Clone)]
pub struct InstanceOutputs<F> {
    pub encoding: PromptEncoding,
    pub drr_probs: Option<Vec<F>>,
    pub ssc_probs: Option<Vec<F>>,
    pub acp_probs: Option<Vec<F>>,
    pub raw_drr_state: Option<Vec<F>>,
    pub fused_state: Option<Vec<F>>,
}

/// Full inference pass for one instance under the model's variant.
pub fn instance_outputs<F: Float>(
    model: &PromptModel<F>,
    instance: &DiscourseInstance,
) -> Result<InstanceOutputs<F>> {
    let layout = model.variant.layout();
    let enc = model.encode_instance(instance)?;
    let hidden: Matrix<F> = model.backbone.encode_prompt(&enc)?;

    let state = |pos: Option<usize>, what: &str| -> Result<&[F]> {
        let p = pos.ok_or_else(|| Error::Config(format!("prompt encoding lacks the {what} position")))?;
        Ok(hidden.row(p))
    };

    let mut out = InstanceOutputs {
        encoding: enc.clone(),
        drr_probs: None,
        ssc_probs: None,
        acp_probs: None,
        raw_drr_state: None,
        fused_state: None,
    };

    if layout.ssc {
        let h = state(enc.ssc_mask_pos, "sense mask")?;
        let scores = restrict_scores(&model.backbone.mlm_score(h)?, &model.spaces.ssc)?;
        out.ssc_probs = Some(softmax(&scores));
    }
    if layout.acp {
        let h = state(enc.acp_mask_pos, "connective mask")?;
        let scores = restrict_scores(&model.backbone.mlm_score(h)?, &model.spaces.acp)?;
        out.acp_probs = Some(softmax(&scores));
    }
    if layout.drr {
        let raw = state(enc.drr_mask_pos, "relation mask")?.to_vec();
        let decision: Vec<F> = match model.variant.fusion_mode() {
            FusionMode::TwoGate => {
                let ssc_c = state(enc.ssc_cls_pos, "sense begin")?;
                let acp_c = state(enc.acp_cls_pos, "connective begin")?;
                let (_, aux) = fuse_auxiliary(ssc_c, acp_c, &model.fusion)?;
                let (_, fused) = fuse_main(&raw, &aux, &model.fusion)?;
                fused
            }
            FusionMode::SingleSsc => {
                let ssc_c = state(enc.ssc_cls_pos, "sense begin")?;
                let (_, fused) = fuse_main(&raw, ssc_c, &model.fusion)?;
                fused
            }
            FusionMode::SingleAcp => {
                let acp_c = state(enc.acp_cls_pos, "connective begin")?;
                let (_, fused) = fuse_main(&raw, acp_c, &model.fusion)?;
                fused
            }
            FusionMode::None => raw.clone(),
        };
        let scores = restrict_scores(&model.backbone.mlm_score(&decision)?, &model.spaces.drr)?;
        out.drr_probs = Some(softmax(&scores));
        out.fused_state = Some(decision);
        out.raw_drr_state = Some(raw);
    }
    Ok(out)
}

/// Aggregates per-answer probabilities into per-sense mass.
pub fn sense_aggregate<F: Float>(
    probs: &[F],
    space: &crate::verbalizer::AnswerSpace,
    map: &crate::verbalizer::ConnectiveSenseMap,
) -> [f64; 4] {
    let mut agg = [0.0f64; 4];
    for (p, entry) in probs.iter().zip(space.entries.iter()) {
        let sense = match &entry.label {
            AnswerLabel::Sense(s) => Some(*s),
            AnswerLabel::Connective(c) => map.sense_of(c),
        };
        if let Some(s) = sense {
            agg[s.index()] += p.to_f64_lossy();
        }
    }
    agg
}

/// Predicts the relation sense of one instance. The checkpointed variant
/// must match the requested one.
pub fn predict<F: Float>(
    instance: &DiscourseInstance,
    model: &PromptModel<F>,
    variant: AblationVariant,
) -> Result<(Sense, Vec<F>)> {
    if variant != model.variant {
        return Err(Error::VariantMismatch {
            requested: variant.name().into(),
            found: model.variant.name().into(),
        });
    }
    let outputs = instance_outputs(model, instance)?;
    let (probs, space) = match model.variant.decision_head() {
        DecisionHead::FusedDrr | DecisionHead::RawDrr => {
            (outputs.drr_probs.as_ref(), &model.spaces.drr)
        }
        DecisionHead::Ssc => (outputs.ssc_probs.as_ref(), &model.spaces.ssc),
        DecisionHead::Acp => (outputs.acp_probs.as_ref(), &model.spaces.acp),
    };
    let probs = probs
        .ok_or_else(|| Error::Config("decision head has no probabilities for this layout".into()))?
        .clone();
    let winner = argmax(&probs);
    let sense = verbalize(
        &space.entries[winner].surface,
        space,
        Some(&model.spaces.map),
    )?;
    Ok((sense, probs))
}

/// Four-way classification metrics for one model variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub variant: AblationVariant,
    pub seed: u64,
    pub config_hash: String,
    pub test_size: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Indexed by sense; zero for classes absent from gold and predictions.
    pub per_class_f1: [f64; 4],
    /// Rows gold, columns predicted, sense order.
    pub confusion: [[usize; 4]; 4],
    /// Classes included in the macro average: present in gold or predictions.
    pub macro_classes: Vec<Sense>,
}

impl EvaluationReport {
    /// Computes every metric from aligned gold/prediction lists. Classes
    /// absent from both gold and predictions leave the macro average;
    /// classes with gold but no correct hits score zero.
    pub fn from_predictions(
        gold: &[Sense],
        pred: &[Sense],
        variant: AblationVariant,
        seed: u64,
        config_hash: String,
    ) -> EvaluationReport {
        assert_eq!(gold.len(), pred.len(), "gold and predictions align");
        let mut confusion = [[0usize; 4]; 4];
        for (g, p) in gold.iter().zip(pred.iter()) {
            confusion[g.index()][p.index()] += 1;
        }
        let total = gold.len();
        let correct: usize = (0..4).map(|i| confusion[i][i]).sum();
        let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };

        let mut per_class_f1 = [0.0f64; 4];
        let mut macro_classes = Vec::new();
        let mut macro_sum = 0.0;
        for i in 0..4 {
            let tp = confusion[i][i];
            let gold_count: usize = confusion[i].iter().sum();
            let pred_count: usize = (0..4).map(|r| confusion[r][i]).sum();
            if gold_count == 0 && pred_count == 0 {
                continue;
            }
            let f1 = if tp == 0 {
                0.0
            } else {
                let precision = tp as f64 / pred_count as f64;
                let recall = tp as f64 / gold_count as f64;
                2.0 * precision * recall / (precision + recall)
            };
            per_class_f1[i] = f1;
            macro_classes.push(ALL_SENSES[i]);
            macro_sum += f1;
        }
        let macro_f1 = if macro_classes.is_empty() {
            0.0
        } else {
            macro_sum / macro_classes.len() as f64
        };

        EvaluationReport {
            variant,
            seed,
            config_hash,
            test_size: total,
            accuracy,
            macro_f1,
            per_class_f1,
            confusion,
            macro_classes,
        }
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "variant {}  seed {}  test size {}\n",
            self.variant, self.seed, self.test_size
        ));
        out.push_str(&format!(
            "accuracy {:.4}  macro F1 {:.4}\n",
            self.accuracy, self.macro_f1
        ));
        out.push_str("per-class F1:\n");
        for s in ALL_SENSES {
            let marker = if self.macro_classes.contains(&s) { "" } else { "  (absent)" };
            out.push_str(&format!(
                "  {:<12} {:.4}{marker}\n",
                s.label(),
                self.per_class_f1[s.index()]
            ));
        }
        out.push_str("confusion (rows gold, cols predicted):\n");
        out.push_str("              Comp  Cont  Expa  Temp\n");
        for g in ALL_SENSES {
            out.push_str(&format!("  {:<12}", g.label()));
            for p in ALL_SENSES {
                out.push_str(&format!("{:6}", self.confusion[g.index()][p.index()]));
            }
            out.push('\n');
        }
        out
    }
}

/// Evaluates a model over a test list.
pub fn evaluate<F: Float>(
    test: &[DiscourseInstance],
    model: &PromptModel<F>,
    variant: AblationVariant,
) -> Result<EvaluationReport> {
    if test.is_empty() {
        return Err(Error::Config("evaluation needs a non-empty test list".into()));
    }
    let mut gold = Vec::with_capacity(test.len());
    let mut pred = Vec::with_capacity(test.len());
    for inst in test {
        let (sense, _) = predict(inst, model, variant)?;
        gold.push(inst.sense);
        pred.push(sense);
    }
    Ok(EvaluationReport::from_predictions(
        &gold,
        &pred,
        variant,
        model.seed,
        model.config_hash.clone(),
    ))
}
