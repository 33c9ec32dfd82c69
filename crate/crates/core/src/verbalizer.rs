//! Answer spaces and the projection from predicted answer words to relation
//! senses.
//!
//! The relation-cloze head scores sixteen fixed answer words, the sense
//! head the four label words, and the connective head every connective
//! observed in training. Connectives that tokenize to several pieces are
//! scored by their first piece; pieces shared between connectives merge
//! into one entry with pooled counts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backbone::PromptTokenizer;
use crate::corpus::{DiscourseInstance, Sense, ALL_SENSES};
use crate::error::{Error, Result};

/// The sixteen relation-cloze answer words and their sense groups, in
/// answer-space order.
pub const DRR_ANSWER_WORDS: [(Sense, &[&str]); 4] = [
    (Sense::Comparison, &["similarly", "but", "however", "although"]),
    (Sense::Contingency, &["for", "if", "because", "so"]),
    (
        Sense::Expansion,
        &["instead", "by", "thereby", "specifically", "and"],
    ),
    (
        Sense::Temporal,
        &["simultaneously", "previously", "then"],
    ),
];

/// Every word any head may need in its vocabulary.
pub fn answer_vocabulary_words() -> Vec<String> {
    let mut words: Vec<String> = DRR_ANSWER_WORDS
        .iter()
        .flat_map(|(_, ws)| ws.iter().map(|w| w.to_string()))
        .collect();
    words.extend(ALL_SENSES.iter().map(|s| s.label().to_lowercase()));
    words
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Drr,
    Ssc,
    Acp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AnswerLabel {
    Sense(Sense),
    Connective(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerEntry {
    pub token_id: u32,
    pub surface: String,
    pub label: AnswerLabel,
}

/// Ordered answer list for one task head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSpace {
    pub task: TaskKind,
    pub entries: Vec<AnswerEntry>,
}

impl AnswerSpace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn token_ids(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.token_id).collect()
    }

    pub fn index_of_surface(&self, surface: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.surface == surface)
    }

    pub fn index_of_token(&self, token_id: u32) -> Option<usize> {
        self.entries.iter().position(|e| e.token_id == token_id)
    }
}

/// Connective-to-sense projection learned from training counts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConnectiveSenseMap {
    /// Argmax sense per key; keys are full connectives plus merged entry
    /// surfaces.
    pub mapping: BTreeMap<String, Sense>,
    /// The counts each mapping entry is the argmax of.
    pub frequencies: BTreeMap<String, [usize; 4]>,
    /// Connectives that were merged because they share a first token:
    /// (entry surface, connectives).
    pub collisions: Vec<(String, Vec<String>)>,
}

impl ConnectiveSenseMap {
    pub fn sense_of(&self, connective: &str) -> Option<Sense> {
        self.mapping.get(&normalize(connective)).copied()
    }
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Argmax sense with the documented tie-break: per-key count, then corpus
/// global sense count, then label order.
fn argmax_sense(counts: &[usize; 4], global: &[usize; 4]) -> Sense {
    let mut best = 0usize;
    for i in 1..4 {
        let better = (counts[i], global[i], std::cmp::Reverse(ALL_SENSES[i].label()))
            > (counts[best], global[best], std::cmp::Reverse(ALL_SENSES[best].label()));
        if better {
            best = i;
        }
    }
    ALL_SENSES[best]
}

/// Builds the sixteen-word relation-cloze answer space. Every word must
/// map to exactly one vocabulary token.
pub fn build_drr_space(tok: &impl PromptTokenizer) -> Result<AnswerSpace> {
    let mut entries = Vec::with_capacity(16);
    let mut seen = BTreeMap::new();
    for (sense, words) in DRR_ANSWER_WORDS.iter() {
        for word in words.iter() {
            let ids = tok.tokenize(word);
            let pieces = tok.decode(&ids);
            if ids.len() != 1 || pieces[0] != *word {
                return Err(Error::MultiTokenAnswerWord {
                    word: word.to_string(),
                    pieces,
                });
            }
            if let Some(prev) = seen.insert(ids[0], word) {
                return Err(Error::Config(format!(
                    "answer words {prev:?} and {word:?} share token id {}",
                    ids[0]
                )));
            }
            entries.push(AnswerEntry {
                token_id: ids[0],
                surface: word.to_string(),
                label: AnswerLabel::Sense(*sense),
            });
        }
    }
    Ok(AnswerSpace {
        task: TaskKind::Drr,
        entries,
    })
}

/// Builds the four-label sense answer space. Labels that tokenize to
/// several pieces are scored by their first piece.
pub fn build_ssc_space(tok: &impl PromptTokenizer) -> Result<AnswerSpace> {
    let mut entries = Vec::with_capacity(4);
    let mut seen = BTreeMap::new();
    for sense in ALL_SENSES {
        let ids = tok.tokenize(sense.label());
        if ids.is_empty() {
            return Err(Error::Config(format!(
                "label word {:?} tokenizes to nothing",
                sense.label()
            )));
        }
        if ids.len() > 1 {
            log::info!(
                "label word {:?} spans {} pieces; scoring its first piece",
                sense.label(),
                ids.len()
            );
        }
        if let Some(prev) = seen.insert(ids[0], sense) {
            return Err(Error::Config(format!(
                "label words {} and {} collapse to the same token; vocabulary cannot separate them",
                prev.label(),
                sense.label()
            )));
        }
        entries.push(AnswerEntry {
            token_id: ids[0],
            surface: sense.label().to_string(),
            label: AnswerLabel::Sense(sense),
        });
    }
    Ok(AnswerSpace {
        task: TaskKind::Ssc,
        entries,
    })
}

/// Builds the connective answer space from training instances, together
/// with the connective-to-sense map.
pub fn build_acp_space(
    train: &[DiscourseInstance],
    tok: &impl PromptTokenizer,
) -> Result<(AnswerSpace, ConnectiveSenseMap)> {
    if train.is_empty() {
        return Err(Error::Config("connective answer space needs a non-empty training set".into()));
    }
    let mut global = [0usize; 4];
    let mut per_connective: BTreeMap<String, [usize; 4]> = BTreeMap::new();
    for inst in train {
        let key = normalize(&inst.connective);
        per_connective.entry(key).or_default()[inst.sense.index()] += 1;
        global[inst.sense.index()] += 1;
    }

    // Group connectives by the token that will be scored.
    let mut groups: BTreeMap<String, (u32, Vec<String>, [usize; 4])> = BTreeMap::new();
    for (connective, counts) in &per_connective {
        let ids = tok.tokenize(connective);
        if ids.is_empty() {
            log::warn!("connective {connective:?} tokenizes to nothing; skipped");
            continue;
        }
        let token_id = ids[0];
        let surface = tok.decode(&ids[..1]).remove(0);
        let group = groups.entry(surface).or_insert((token_id, Vec::new(), [0; 4]));
        group.1.push(connective.clone());
        for (pooled, count) in group.2.iter_mut().zip(counts.iter()) {
            *pooled += count;
        }
    }

    let mut map = ConnectiveSenseMap::default();
    for (connective, counts) in &per_connective {
        map.mapping
            .insert(connective.clone(), argmax_sense(counts, &global));
        map.frequencies.insert(connective.clone(), *counts);
    }

    let mut entries = Vec::with_capacity(groups.len());
    for (surface, (token_id, members, pooled)) in groups {
        if members.len() > 1 {
            log::warn!(
                "connectives {members:?} share first token {surface:?}; merged with pooled counts"
            );
            map.collisions.push((surface.clone(), members.clone()));
        }
        map.mapping.insert(surface.clone(), argmax_sense(&pooled, &global));
        map.frequencies.insert(surface.clone(), pooled);
        entries.push(AnswerEntry {
            token_id,
            surface: surface.clone(),
            label: AnswerLabel::Connective(surface),
        });
    }

    Ok((
        AnswerSpace {
            task: TaskKind::Acp,
            entries,
        },
        map,
    ))
}

/// The three answer spaces plus the connective map, built once per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpaces {
    pub drr: AnswerSpace,
    pub ssc: AnswerSpace,
    pub acp: AnswerSpace,
    pub map: ConnectiveSenseMap,
}

impl TaskSpaces {
    pub fn build(train: &[DiscourseInstance], tok: &impl PromptTokenizer) -> Result<TaskSpaces> {
        let drr = build_drr_space(tok)?;
        let ssc = build_ssc_space(tok)?;
        let (acp, map) = build_acp_space(train, tok)?;
        Ok(TaskSpaces { drr, ssc, acp, map })
    }

    pub fn listing(&self) -> String {
        render_listing(&self.drr, &self.ssc, &self.acp, &self.map)
    }
}

/// Projects a predicted answer surface to its relation sense.
pub fn verbalize(
    prediction: &str,
    space: &AnswerSpace,
    map: Option<&ConnectiveSenseMap>,
) -> Result<Sense> {
    let entry = space
        .entries
        .iter()
        .find(|e| e.surface == prediction)
        .ok_or_else(|| Error::NotInAnswerSpace(prediction.to_string()))?;
    match (&entry.label, space.task) {
        (AnswerLabel::Sense(sense), _) => Ok(*sense),
        (AnswerLabel::Connective(conn), TaskKind::Acp) => {
            let map = map.ok_or_else(|| {
                Error::Config("connective head needs a connective-sense map to verbalize".into())
            })?;
            map.sense_of(conn)
                .ok_or_else(|| Error::NotInAnswerSpace(conn.clone()))
        }
        (AnswerLabel::Connective(_), _) => Err(Error::Config(
            "connective label on a non-connective answer space".into(),
        )),
    }
}

/// Human-readable listing of the three answer spaces, written next to
/// checkpoints for audit.
pub fn render_listing(
    drr: &AnswerSpace,
    ssc: &AnswerSpace,
    acp: &AnswerSpace,
    map: &ConnectiveSenseMap,
) -> String {
    let mut out = String::new();
    for (title, space) in [
        ("relation-cloze answer space", drr),
        ("sense answer space", ssc),
        ("connective answer space", acp),
    ] {
        out.push_str(&format!("# {title} ({} entries)\n", space.len()));
        for (i, e) in space.entries.iter().enumerate() {
            let label = match &e.label {
                AnswerLabel::Sense(s) => s.label().to_string(),
                AnswerLabel::Connective(c) => map
                    .sense_of(c)
                    .map(|s| format!("{c} -> {}", s.label()))
                    .unwrap_or_else(|| c.clone()),
            };
            out.push_str(&format!("{i:4}  {:<18} token {:<6} {label}\n", e.surface, e.token_id));
        }
        out.push('\n');
    }
    if !map.collisions.is_empty() {
        out.push_str("# merged connectives (shared first token)\n");
        for (surface, members) in &map.collisions {
            out.push_str(&format!("{surface}: {}\n", members.join(", ")));
        }
    }
    out
}
