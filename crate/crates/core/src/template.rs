//! Prompt templating: turns an argument pair into one concatenated token
//! sequence covering the main relation-cloze segment and the two auxiliary
//! task segments, recording every mask and begin-token position needed
//! downstream.

use serde::{Deserialize, Serialize};

use crate::backbone::PromptTokenizer;
use crate::corpus::DiscourseInstance;
use crate::error::{Error, Result};

/// Special surface marking the first argument; shared across segments.
pub const ARG1_TOKEN: &str = "[Arg1]";
/// Special surface marking the second argument.
pub const ARG2_TOKEN: &str = "[Arg2]";

pub const DEFAULT_SSC_TEXT: &str = "The sense between [Arg1] and [Arg2] is [MASK]";
pub const DEFAULT_ACP_TEXT: &str = "The implicit connective word is [MASK]";

/// Template wording and length caps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateConfig {
    pub max_total_tokens: usize,
    pub max_arg_tokens: usize,
    /// Sense-classification segment text; must contain one `[Arg1]`, one
    /// `[Arg2]` and one `[MASK]` slot.
    pub ssc_text: String,
    /// Connective-prediction segment text; must contain one `[MASK]` slot.
    pub acp_text: String,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig {
            max_total_tokens: 150,
            max_arg_tokens: 70,
            ssc_text: DEFAULT_SSC_TEXT.into(),
            acp_text: DEFAULT_ACP_TEXT.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Mask,
    Arg1,
    Arg2,
    Word,
}

fn slot_of(word: &str) -> Slot {
    match word {
        "[MASK]" => Slot::Mask,
        ARG1_TOKEN => Slot::Arg1,
        ARG2_TOKEN => Slot::Arg2,
        _ => Slot::Word,
    }
}

fn count_slots(text: &str) -> (usize, usize, usize) {
    let mut mask = 0;
    let mut a1 = 0;
    let mut a2 = 0;
    for w in text.split_whitespace() {
        match slot_of(w) {
            Slot::Mask => mask += 1,
            Slot::Arg1 => a1 += 1,
            Slot::Arg2 => a2 += 1,
            Slot::Word => {}
        }
    }
    (mask, a1, a2)
}

impl TemplateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_arg_tokens * 2 >= self.max_total_tokens {
            return Err(Error::Config(format!(
                "max_arg_tokens {} x 2 must stay below max_total_tokens {} to leave room for template scaffolding",
                self.max_arg_tokens, self.max_total_tokens
            )));
        }
        let (mask, a1, a2) = count_slots(&self.ssc_text);
        if mask != 1 || a1 != 1 || a2 != 1 {
            return Err(Error::Config(format!(
                "ssc_text needs exactly one [MASK], one [Arg1] and one [Arg2] slot (found {mask}/{a1}/{a2})"
            )));
        }
        let (mask, _, _) = count_slots(&self.acp_text);
        if mask != 1 {
            return Err(Error::Config(format!(
                "acp_text needs exactly one [MASK] slot (found {mask})"
            )));
        }
        Ok(())
    }
}

/// Which segments a prompt contains. The argument prefix replaces the
/// relation-cloze segment for single-auxiliary-task prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptLayout {
    pub drr: bool,
    pub ssc: bool,
    pub acp: bool,
    pub arg_prefix: bool,
}

impl PromptLayout {
    pub const FULL: PromptLayout = PromptLayout {
        drr: true,
        ssc: true,
        acp: true,
        arg_prefix: false,
    };
}

/// Tokenized prompt with its bookkeeping positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEncoding {
    pub token_ids: Vec<u32>,
    pub drr_mask_pos: Option<usize>,
    pub ssc_mask_pos: Option<usize>,
    pub acp_mask_pos: Option<usize>,
    pub ssc_cls_pos: Option<usize>,
    pub acp_cls_pos: Option<usize>,
    pub arg1_tok_pos: Option<usize>,
    pub arg2_tok_pos: Option<usize>,
}

impl PromptEncoding {
    pub fn length(&self) -> usize {
        self.token_ids.len()
    }

    fn recorded_positions(&self) -> Vec<usize> {
        [
            self.drr_mask_pos,
            self.ssc_mask_pos,
            self.acp_mask_pos,
            self.ssc_cls_pos,
            self.acp_cls_pos,
            self.arg1_tok_pos,
            self.arg2_tok_pos,
        ]
        .into_iter()
        .flatten()
        .collect()
    }

    /// Structural checks: recorded positions are distinct, in range and
    /// hold the token they claim to.
    pub fn validate(&self, tok: &impl PromptTokenizer) -> Result<()> {
        let len = self.length();
        let positions = self.recorded_positions();
        let mut seen = std::collections::BTreeSet::new();
        for &p in &positions {
            if p >= len {
                return Err(Error::Config(format!("recorded position {p} outside prompt of length {len}")));
            }
            if !seen.insert(p) {
                return Err(Error::Config(format!("recorded position {p} duplicated")));
            }
        }
        for pos in [self.drr_mask_pos, self.ssc_mask_pos, self.acp_mask_pos].into_iter().flatten() {
            if self.token_ids[pos] != tok.mask_token_id() {
                return Err(Error::Config(format!("token at mask position {pos} is not the mask token")));
            }
        }
        for pos in [self.ssc_cls_pos, self.acp_cls_pos].into_iter().flatten() {
            if self.token_ids[pos] != tok.begin_token_id() {
                return Err(Error::Config(format!("token at begin position {pos} is not the begin token")));
            }
        }
        Ok(())
    }
}

struct Assembler {
    ids: Vec<u32>,
}

impl Assembler {
    fn push(&mut self, id: u32) -> usize {
        self.ids.push(id);
        self.ids.len() - 1
    }
}

fn parsed_template(text: &str, tok: &impl PromptTokenizer) -> Vec<(Slot, Vec<u32>)> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let slot = slot_of(word);
        match slot {
            Slot::Word => {
                let ids = tok.tokenize(word);
                if !ids.is_empty() {
                    out.push((Slot::Word, ids));
                }
            }
            other => out.push((other, Vec::new())),
        }
    }
    out
}

fn template_token_count(parsed: &[(Slot, Vec<u32>)]) -> usize {
    parsed
        .iter()
        .map(|(slot, ids)| if *slot == Slot::Word { ids.len() } else { 1 })
        .sum()
}

/// Builds the full three-segment prompt.
pub fn build_prompt(
    instance: &DiscourseInstance,
    cfg: &TemplateConfig,
    tok: &impl PromptTokenizer,
) -> Result<PromptEncoding> {
    build_prompt_with_layout(instance, cfg, tok, PromptLayout::FULL)
}

/// Builds a prompt containing only the segments the layout asks for.
pub fn build_prompt_with_layout(
    instance: &DiscourseInstance,
    cfg: &TemplateConfig,
    tok: &impl PromptTokenizer,
    layout: PromptLayout,
) -> Result<PromptEncoding> {
    cfg.validate()?;
    if layout.drr && layout.arg_prefix {
        return Err(Error::Config("arg_prefix layouts exclude the relation-cloze segment".into()));
    }
    if !(layout.drr || layout.arg_prefix) {
        return Err(Error::Config("prompt layout carries no argument segment".into()));
    }
    let arg1_id = tok
        .token_id(ARG1_TOKEN)
        .ok_or_else(|| Error::Config(format!("special token {ARG1_TOKEN} is not registered")))?;
    let arg2_id = tok
        .token_id(ARG2_TOKEN)
        .ok_or_else(|| Error::Config(format!("special token {ARG2_TOKEN} is not registered")))?;
    let cls = tok.begin_token_id();
    let sep = tok.end_token_id();
    let mask = tok.mask_token_id();

    let mut arg1 = tok.tokenize(&instance.arg1_text);
    let mut arg2 = tok.tokenize(&instance.arg2_text);

    let ssc = parsed_template(&cfg.ssc_text, tok);
    let acp = parsed_template(&cfg.acp_text, tok);

    // Everything that is not argument text.
    let mut scaffold = 0;
    if layout.drr {
        scaffold += 5; // CLS [Arg1] [MASK] [Arg2] SEP
    }
    if layout.arg_prefix {
        scaffold += 4; // CLS [Arg1] [Arg2] SEP
    }
    if layout.ssc {
        scaffold += 2 + template_token_count(&ssc);
    }
    if layout.acp {
        scaffold += 2 + template_token_count(&acp);
    }
    if scaffold + 2 > cfg.max_total_tokens {
        return Err(Error::Config(format!(
            "template scaffolding of {scaffold} tokens leaves no argument room within max_total_tokens {}",
            cfg.max_total_tokens
        )));
    }
    // Arguments are capped independently and then shrunk further if the
    // configured total cannot fit both at full width.
    let arg_budget = cfg.max_arg_tokens.min((cfg.max_total_tokens - scaffold) / 2);
    arg1.truncate(arg_budget);
    arg2.truncate(arg_budget);

    let mut asm = Assembler { ids: Vec::new() };
    let mut enc = PromptEncoding {
        token_ids: Vec::new(),
        drr_mask_pos: None,
        ssc_mask_pos: None,
        acp_mask_pos: None,
        ssc_cls_pos: None,
        acp_cls_pos: None,
        arg1_tok_pos: None,
        arg2_tok_pos: None,
    };

    if layout.drr {
        asm.push(cls);
        enc.arg1_tok_pos = Some(asm.push(arg1_id));
        for &id in &arg1 {
            asm.push(id);
        }
        enc.drr_mask_pos = Some(asm.push(mask));
        enc.arg2_tok_pos = Some(asm.push(arg2_id));
        for &id in &arg2 {
            asm.push(id);
        }
        asm.push(sep);
    } else if layout.arg_prefix {
        asm.push(cls);
        enc.arg1_tok_pos = Some(asm.push(arg1_id));
        for &id in &arg1 {
            asm.push(id);
        }
        enc.arg2_tok_pos = Some(asm.push(arg2_id));
        for &id in &arg2 {
            asm.push(id);
        }
        asm.push(sep);
    }

    let mut emit_segment = |parsed: &[(Slot, Vec<u32>)]| -> (usize, usize) {
        let cls_pos = asm.push(cls);
        let mut mask_pos = 0;
        for (slot, ids) in parsed {
            match slot {
                Slot::Mask => mask_pos = asm.push(mask),
                Slot::Arg1 => {
                    asm.push(arg1_id);
                }
                Slot::Arg2 => {
                    asm.push(arg2_id);
                }
                Slot::Word => {
                    for &id in ids {
                        asm.push(id);
                    }
                }
            }
        }
        asm.push(sep);
        (cls_pos, mask_pos)
    };

    if layout.ssc {
        let (cls_pos, mask_pos) = emit_segment(&ssc);
        enc.ssc_cls_pos = Some(cls_pos);
        enc.ssc_mask_pos = Some(mask_pos);
    }
    if layout.acp {
        let (cls_pos, mask_pos) = emit_segment(&acp);
        enc.acp_cls_pos = Some(cls_pos);
        enc.acp_mask_pos = Some(mask_pos);
    }

    enc.token_ids = asm.ids;
    if enc.length() > cfg.max_total_tokens {
        // Unreachable when the budget arithmetic above is right.
        return Err(Error::PromptOverflow {
            length: enc.length(),
            max: cfg.max_total_tokens,
        });
    }
    enc.validate(tok)?;
    Ok(enc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::vocab::Vocab;
    use crate::corpus::Sense;

    fn vocab() -> Vocab {
        let words = "the sense between and is implicit connective word committee approved plan because report was late they hesitate to bid lower"
            .split_whitespace()
            .map(|s| s.to_string());
        let mut v = Vocab::word_level(words);
        v.add_special(ARG1_TOKEN).unwrap();
        v.add_special(ARG2_TOKEN).unwrap();
        v
    }

    fn instance(arg1: &str, arg2: &str) -> DiscourseInstance {
        DiscourseInstance {
            arg1_text: arg1.into(),
            arg2_text: arg2.into(),
            sense: Sense::Contingency,
            connective: "so".into(),
            section: 2,
            instance_id: "t-0".into(),
        }
    }

    #[test]
    fn full_prompt_structure() {
        let v = vocab();
        let cfg = TemplateConfig::default();
        let inst = instance("the committee approved the plan", "they hesitate to bid lower");
        let enc = build_prompt(&inst, &cfg, &v).unwrap();

        // Three mask tokens and three begin tokens.
        let masks = enc.token_ids.iter().filter(|&&t| t == v.mask_id()).count();
        let begins = enc.token_ids.iter().filter(|&&t| t == v.cls_id()).count();
        assert_eq!(masks, 3);
        assert_eq!(begins, 3);

        // Relation segment reads CLS [Arg1] .. MASK [Arg2] .. SEP.
        assert_eq!(enc.token_ids[0], v.cls_id());
        assert_eq!(enc.arg1_tok_pos, Some(1));
        let drr_mask = enc.drr_mask_pos.unwrap();
        assert_eq!(enc.token_ids[drr_mask], v.mask_id());
        assert_eq!(enc.token_ids[enc.arg2_tok_pos.unwrap()], v.token_id(ARG2_TOKEN).unwrap());

        // Segment ordering.
        assert!(drr_mask < enc.ssc_cls_pos.unwrap());
        assert!(enc.ssc_cls_pos.unwrap() < enc.ssc_mask_pos.unwrap());
        assert!(enc.ssc_mask_pos.unwrap() < enc.acp_cls_pos.unwrap());
        assert!(enc.acp_cls_pos.unwrap() < enc.acp_mask_pos.unwrap());
        assert!(enc.length() <= cfg.max_total_tokens);
    }

    #[test]
    fn one_word_arguments_keep_positions_ordered() {
        let v = vocab();
        let enc = build_prompt(&instance("report", "late"), &TemplateConfig::default(), &v).unwrap();
        let drr = enc.drr_mask_pos.unwrap();
        assert!(drr < enc.ssc_cls_pos.unwrap());
        assert!(enc.ssc_mask_pos.unwrap() < enc.acp_cls_pos.unwrap());
        enc.validate(&v).unwrap();
    }

    #[test]
    fn long_arguments_truncate_within_caps() {
        let v = vocab();
        let word = "committee ";
        let long = word.repeat(100);
        let cfg = TemplateConfig {
            max_total_tokens: 180,
            max_arg_tokens: 70,
            ..TemplateConfig::default()
        };
        let enc = build_prompt(&instance(&long, &long), &cfg, &v).unwrap();
        let a1 = enc.arg1_tok_pos.unwrap();
        let m = enc.drr_mask_pos.unwrap();
        assert_eq!(m - a1 - 1, 70, "first argument truncated to the cap");
        assert!(enc.length() <= 180);

        // At the default 150-token total the scaffold forces a smaller
        // equal budget per argument, never an overflow.
        let tight = TemplateConfig::default();
        let enc = build_prompt(&instance(&long, &long), &tight, &v).unwrap();
        let width = enc.drr_mask_pos.unwrap() - enc.arg1_tok_pos.unwrap() - 1;
        assert!(width <= 70);
        assert!(enc.length() <= 150);
    }

    #[test]
    fn drr_segment_decodes_back_to_truncated_arguments() {
        let v = vocab();
        let cfg = TemplateConfig::default();
        let inst = instance("The committee approved, the plan.", "they hesitate to bid lower");
        let enc = build_prompt(&inst, &cfg, &v).unwrap();
        let a1 = enc.arg1_tok_pos.unwrap();
        let m = enc.drr_mask_pos.unwrap();
        let decoded = v.decode(&enc.token_ids[a1 + 1..m]);
        assert_eq!(decoded.join(" "), "the committee approved the plan");
    }

    #[test]
    fn truncation_is_idempotent() {
        let v = vocab();
        let cfg = TemplateConfig {
            max_total_tokens: 40,
            max_arg_tokens: 6,
            ..TemplateConfig::default()
        };
        let long = "committee approved plan because report was late they hesitate to bid lower";
        let first = build_prompt(&instance(long, long), &cfg, &v).unwrap();

        let a1 = first.arg1_tok_pos.unwrap();
        let m = first.drr_mask_pos.unwrap();
        let a2 = first.arg2_tok_pos.unwrap();
        let sep_end = first.token_ids.len();
        let arg1_text = v.decode(&first.token_ids[a1 + 1..m]).join(" ");
        let arg2_text = v
            .decode(&first.token_ids[a2 + 1..sep_end])
            .iter()
            .filter(|t| *t != "[SEP]")
            .cloned()
            .collect::<Vec<_>>()
            .join(" ");
        let second = build_prompt(&instance(&arg1_text, &arg2_text), &cfg, &v).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn layout_without_relation_segment_uses_arg_prefix() {
        let v = vocab();
        let layout = PromptLayout {
            drr: false,
            ssc: true,
            acp: false,
            arg_prefix: true,
        };
        let enc = build_prompt_with_layout(
            &instance("committee approved", "report was late"),
            &TemplateConfig::default(),
            &v,
            layout,
        )
        .unwrap();
        assert!(enc.drr_mask_pos.is_none());
        assert!(enc.acp_mask_pos.is_none());
        assert!(enc.ssc_mask_pos.is_some());
        // Prefix is CLS [Arg1] .. [Arg2] .. SEP with no mask inside.
        let ssc_cls = enc.ssc_cls_pos.unwrap();
        let masks_before = enc.token_ids[..ssc_cls]
            .iter()
            .filter(|&&t| t == v.mask_id())
            .count();
        assert_eq!(masks_before, 0);
        enc.validate(&v).unwrap();
    }

    #[test]
    fn missing_special_tokens_is_config_error() {
        let plain = Vocab::word_level(["plan".to_string()]);
        let err = build_prompt(&instance("plan", "plan"), &TemplateConfig::default(), &plain).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn template_slot_counts_validated() {
        let bad = TemplateConfig {
            ssc_text: "no slots here".into(),
            ..TemplateConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TemplateConfig {
            acp_text: "two [MASK] slots [MASK]".into(),
            ..TemplateConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TemplateConfig {
            max_total_tokens: 100,
            max_arg_tokens: 50,
            ..TemplateConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
