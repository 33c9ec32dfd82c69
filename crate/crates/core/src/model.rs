//! The assembled prompt model: backbone, fusion gates, answer spaces and
//! template, plus the per-instance loss graph used in training.

use crate::backbone::{Backbone, PromptTokenizer, ToyBackboneConfig, TransformerBackbone};
use crate::corpus::DiscourseInstance;
use crate::error::{Error, Result};
use crate::eval::{AblationVariant, FusionMode};
use crate::float::Float;
use crate::fusion::{self, BoundFusion, FusionParameters};
use crate::math::tape::{NodeId, Tape};
use crate::rng::Rng;
use crate::template::{
    build_prompt_with_layout, PromptEncoding, TemplateConfig, ARG1_TOKEN, ARG2_TOKEN,
};
use crate::verbalizer::{answer_vocabulary_words, TaskSpaces};

/// A trainable or trained model for one ablation variant.
#[derive(Debug, Clone)]
pub struct PromptModel<F> {
    pub backbone: TransformerBackbone<F>,
    pub fusion: FusionParameters<F>,
    pub spaces: TaskSpaces,
    pub template: TemplateConfig,
    pub variant: AblationVariant,
    pub seed: u64,
    pub config_hash: String,
}

/// Words the toy vocabulary needs beyond the training text itself.
pub fn toy_vocabulary(
    train: &[DiscourseInstance],
    template: &TemplateConfig,
) -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    for inst in train {
        words.extend(inst.arg1_text.split_whitespace().map(str::to_string));
        words.extend(inst.arg2_text.split_whitespace().map(str::to_string));
        words.extend(inst.connective.split_whitespace().map(str::to_string));
    }
    for text in [&template.ssc_text, &template.acp_text] {
        for w in text.split_whitespace() {
            if w != "[MASK]" && w != ARG1_TOKEN && w != ARG2_TOKEN {
                words.push(w.to_string());
            }
        }
    }
    words.extend(answer_vocabulary_words());
    words
}

/// Builds a fresh toy model over the training split.
pub fn build_toy_model<F: Float>(
    train: &[DiscourseInstance],
    toy_cfg: &ToyBackboneConfig,
    template: &TemplateConfig,
    variant: AblationVariant,
    config_hash: String,
) -> Result<PromptModel<F>> {
    template.validate()?;
    let words = toy_vocabulary(train, template);
    let mut backbone =
        TransformerBackbone::<F>::toy(toy_cfg, words, template.max_total_tokens)?;
    backbone.register_special_tokens(&[ARG1_TOKEN, ARG2_TOKEN])?;
    let spaces = TaskSpaces::build(train, &backbone)?;
    let fusion = FusionParameters::new(backbone.hidden_dim(), toy_cfg.seed);
    Ok(PromptModel {
        fusion,
        spaces,
        template: template.clone(),
        variant,
        seed: toy_cfg.seed,
        config_hash,
        backbone,
    })
}

/// Wraps an exported pretrained backbone into a model, registering the
/// argument markers if the export does not carry them yet.
pub fn build_pretrained_model<F: Float>(
    mut backbone: TransformerBackbone<F>,
    train: &[DiscourseInstance],
    template: &TemplateConfig,
    variant: AblationVariant,
    seed: u64,
    config_hash: String,
) -> Result<PromptModel<F>> {
    template.validate()?;
    if backbone.token_id(ARG1_TOKEN).is_none() {
        backbone.register_special_tokens(&[ARG1_TOKEN, ARG2_TOKEN])?;
    }
    let spaces = TaskSpaces::build(train, &backbone)?;
    let fusion = FusionParameters::new(backbone.hidden_dim(), seed);
    Ok(PromptModel {
        fusion,
        spaces,
        template: template.clone(),
        variant,
        seed,
        config_hash,
        backbone,
    })
}

/// Loss nodes for one instance; absent heads carry no node.
pub struct InstanceLosses {
    pub drr: Option<NodeId>,
    pub ssc: Option<NodeId>,
    pub acp: Option<NodeId>,
}

pub struct BoundModel {
    pub backbone: crate::backbone::BoundBackbone,
    pub fusion: BoundFusion,
}

impl<F: Float> PromptModel<F> {
    pub fn encode_instance(&self, instance: &DiscourseInstance) -> Result<PromptEncoding> {
        build_prompt_with_layout(instance, &self.template, &self.backbone, self.variant.layout())
    }

    pub fn bind(&self, tape: &mut Tape<F>) -> BoundModel {
        BoundModel {
            backbone: self.backbone.bind(tape),
            fusion: self.fusion.bind(tape),
        }
    }

    /// Visits backbone plus gate parameters in one canonical order.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut crate::math::Matrix<F>)) {
        self.backbone.visit_params_mut(f);
        self.fusion.visit_params_mut(f);
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &crate::math::Matrix<F>)) {
        self.backbone.visit_params(f);
        self.fusion.visit_params(f);
    }

    /// Builds the forward graph for one instance and returns its per-task
    /// cross-entropy nodes. Gold indices refer to answer-space entries;
    /// a missing connective gold masks that head out.
    #[allow(clippy::too_many_arguments)]
    pub fn instance_losses_on_tape(
        &self,
        tape: &mut Tape<F>,
        bound: &BoundModel,
        enc: &PromptEncoding,
        drr_gold: Option<usize>,
        ssc_gold: Option<usize>,
        acp_gold: Option<usize>,
        train_mode: bool,
        rng: &mut Rng,
    ) -> Result<InstanceLosses> {
        let layout = self.variant.layout();
        let hidden =
            self.backbone
                .forward_on_tape(tape, &bound.backbone, &enc.token_ids, train_mode, rng)?;

        let row = |tape: &mut Tape<F>, pos: Option<usize>, what: &str| -> Result<NodeId> {
            let p = pos.ok_or_else(|| {
                Error::Config(format!("prompt encoding lacks the {what} position"))
            })?;
            Ok(tape.select_row(hidden, p))
        };

        let mut losses = InstanceLosses {
            drr: None,
            ssc: None,
            acp: None,
        };

        if layout.ssc {
            let h_ssc_m = row(tape, enc.ssc_mask_pos, "sense mask")?;
            if let Some(gold) = ssc_gold {
                let scores = self.backbone.mlm_on_tape(tape, &bound.backbone, h_ssc_m);
                let ssc_ids: Vec<usize> =
                    self.spaces.ssc.token_ids().iter().map(|&t| t as usize).collect();
                let restricted = tape.select_cols(scores, &ssc_ids);
                losses.ssc = Some(tape.cross_entropy_logits(restricted, gold));
            }
        }
        if layout.acp {
            let h_acp_m = row(tape, enc.acp_mask_pos, "connective mask")?;
            if let Some(gold) = acp_gold {
                let scores = self.backbone.mlm_on_tape(tape, &bound.backbone, h_acp_m);
                let acp_ids: Vec<usize> =
                    self.spaces.acp.token_ids().iter().map(|&t| t as usize).collect();
                let restricted = tape.select_cols(scores, &acp_ids);
                losses.acp = Some(tape.cross_entropy_logits(restricted, gold));
            }
        }
        if layout.drr {
            let h_drr_m = row(tape, enc.drr_mask_pos, "relation mask")?;
            let decision = match self.variant.fusion_mode() {
                FusionMode::TwoGate => {
                    let h_ssc_c = row(tape, enc.ssc_cls_pos, "sense begin")?;
                    let h_acp_c = row(tape, enc.acp_cls_pos, "connective begin")?;
                    let (_, h_aux) =
                        fusion::fuse_auxiliary_on_tape(tape, &bound.fusion, h_ssc_c, h_acp_c);
                    let (_, fused) = fusion::fuse_main_on_tape(tape, &bound.fusion, h_drr_m, h_aux);
                    fused
                }
                FusionMode::SingleSsc => {
                    let h_ssc_c = row(tape, enc.ssc_cls_pos, "sense begin")?;
                    let (_, fused) =
                        fusion::fuse_main_on_tape(tape, &bound.fusion, h_drr_m, h_ssc_c);
                    fused
                }
                FusionMode::SingleAcp => {
                    let h_acp_c = row(tape, enc.acp_cls_pos, "connective begin")?;
                    let (_, fused) =
                        fusion::fuse_main_on_tape(tape, &bound.fusion, h_drr_m, h_acp_c);
                    fused
                }
                FusionMode::None => h_drr_m,
            };
            if let Some(gold) = drr_gold {
                let scores = self.backbone.mlm_on_tape(tape, &bound.backbone, decision);
                let drr_ids: Vec<usize> =
                    self.spaces.drr.token_ids().iter().map(|&t| t as usize).collect();
                let restricted = tape.select_cols(scores, &drr_ids);
                losses.drr = Some(tape.cross_entropy_logits(restricted, gold));
            }
        }
        Ok(losses)
    }
}
