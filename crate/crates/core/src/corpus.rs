//! Labeled argument-pair corpus: portable file formats, section splits and
//! a synthetic planted-cue generator for desk-scale runs.

pub mod synthetic;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Top-level relation sense.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sense {
    Comparison,
    Contingency,
    Expansion,
    Temporal,
}

pub const ALL_SENSES: [Sense; 4] = [
    Sense::Comparison,
    Sense::Contingency,
    Sense::Expansion,
    Sense::Temporal,
];

/// Per-sense instance counts of the standard PDTB 3.0 four-way section
/// splits (train 2-20, dev 0-1, test 21-22), indexed `[part][sense]` in the
/// order of [`ALL_SENSES`]. Prepared corpora are diffed against these as an
/// informational check.
pub const PDTB3_SPLIT_COUNTS: [[usize; 4]; 3] = [
    [1937, 5916, 8645, 1447],
    [190, 579, 748, 136],
    [154, 529, 643, 148],
];

impl Sense {
    pub fn label(self) -> &'static str {
        match self {
            Sense::Comparison => "Comparison",
            Sense::Contingency => "Contingency",
            Sense::Expansion => "Expansion",
            Sense::Temporal => "Temporal",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Sense::Comparison => 0,
            Sense::Contingency => 1,
            Sense::Expansion => 2,
            Sense::Temporal => 3,
        }
    }

    pub fn from_index(i: usize) -> Sense {
        ALL_SENSES[i]
    }
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Sense {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "Comparison" => Ok(Sense::Comparison),
            "Contingency" => Ok(Sense::Contingency),
            "Expansion" => Ok(Sense::Expansion),
            "Temporal" => Ok(Sense::Temporal),
            other => Err(format!(
                "unknown sense {other:?}; legal labels are Comparison, Contingency, Expansion, Temporal"
            )),
        }
    }
}

/// One implicit discourse relation instance: an argument pair with its gold
/// sense and the annotator-inserted connective.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscourseInstance {
    #[serde(rename = "arg1")]
    pub arg1_text: String,
    #[serde(rename = "arg2")]
    pub arg2_text: String,
    pub sense: Sense,
    pub connective: String,
    pub section: u8,
    #[serde(rename = "id")]
    pub instance_id: String,
}

impl DiscourseInstance {
    /// Checks the record-level invariants shared by every loader.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.arg1_text.trim().is_empty() {
            return Err("arg1 is empty".into());
        }
        if self.arg2_text.trim().is_empty() {
            return Err("arg2 is empty".into());
        }
        if self.connective.trim().is_empty() {
            return Err("connective is empty".into());
        }
        if self.section > 24 {
            return Err(format!("section {} outside 0-24", self.section));
        }
        Ok(())
    }
}

/// Train/dev/test partition.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<DiscourseInstance>,
    pub dev: Vec<DiscourseInstance>,
    pub test: Vec<DiscourseInstance>,
    /// Instances dropped because their section lies outside the split ranges.
    #[serde(default)]
    pub excluded: usize,
}

impl CorpusSplit {
    pub fn total(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    /// Instance ids must be unique across the three parts.
    pub fn check_unique_ids(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for inst in self.train.iter().chain(&self.dev).chain(&self.test) {
            if !seen.insert(inst.instance_id.as_str()) {
                return Err(Error::Config(format!(
                    "instance id {:?} appears more than once in the corpus",
                    inst.instance_id
                )));
            }
        }
        Ok(())
    }

    /// Per-class counts as [train, dev, test] rows indexed by sense.
    pub fn class_counts(&self) -> [[usize; 4]; 3] {
        let mut counts = [[0usize; 4]; 3];
        for (i, part) in [&self.train, &self.dev, &self.test].iter().enumerate() {
            for inst in part.iter() {
                counts[i][inst.sense.index()] += 1;
            }
        }
        counts
    }
}

/// On-disk corpus format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Tsv,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "tsv" => Ok(CorpusFormat::Tsv),
            other => Err(format!("unknown corpus format {other:?}; use jsonl or tsv")),
        }
    }
}

const TSV_FIELDS: usize = 6;

fn parse_tsv_line(line: &str, line_no: usize) -> Result<DiscourseInstance> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != TSV_FIELDS {
        return Err(Error::Record {
            line: line_no,
            message: format!(
                "expected {TSV_FIELDS} tab-separated fields (id, arg1, arg2, sense, connective, section), got {}",
                fields.len()
            ),
        });
    }
    let sense = Sense::from_str(fields[3]).map_err(|_| Error::UnknownSense {
        value: fields[3].to_string(),
        line: line_no,
    })?;
    let section: u8 = fields[5].trim().parse().map_err(|_| Error::Record {
        line: line_no,
        message: format!("section {:?} is not an integer", fields[5]),
    })?;
    let inst = DiscourseInstance {
        instance_id: fields[0].to_string(),
        arg1_text: fields[1].to_string(),
        arg2_text: fields[2].to_string(),
        sense,
        connective: fields[4].to_string(),
        section,
    };
    inst.validate().map_err(|message| Error::Record {
        line: line_no,
        message,
    })?;
    Ok(inst)
}

fn parse_jsonl_line(line: &str, line_no: usize) -> Result<DiscourseInstance> {
    // Decode into a loose value first so sense errors name the bad label.
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Record {
        line: line_no,
        message: format!("invalid JSON: {e}"),
    })?;
    let obj = value.as_object().ok_or_else(|| Error::Record {
        line: line_no,
        message: "record is not a JSON object".into(),
    })?;
    for field in ["arg1", "arg2", "sense", "connective", "section", "id"] {
        if !obj.contains_key(field) {
            return Err(Error::Record {
                line: line_no,
                message: format!("missing field {field:?}"),
            });
        }
    }
    if let Some(s) = obj["sense"].as_str() {
        if Sense::from_str(s).is_err() {
            return Err(Error::UnknownSense {
                value: s.to_string(),
                line: line_no,
            });
        }
    }
    let inst: DiscourseInstance =
        serde_json::from_value(value).map_err(|e| Error::Record {
            line: line_no,
            message: e.to_string(),
        })?;
    inst.validate().map_err(|message| Error::Record {
        line: line_no,
        message,
    })?;
    Ok(inst)
}

/// Loads instances from a line-delimited corpus file, order preserved.
pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Vec<DiscourseInstance>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let inst = match format {
            CorpusFormat::Jsonl => parse_jsonl_line(line, line_no)?,
            CorpusFormat::Tsv => parse_tsv_line(line, line_no)?,
        };
        out.push(inst);
    }
    Ok(out)
}

/// Writes instances in the given format; inverse of [`load_corpus`].
pub fn save_corpus(
    path: impl AsRef<Path>,
    instances: &[DiscourseInstance],
    format: CorpusFormat,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for inst in instances {
        match format {
            CorpusFormat::Jsonl => {
                serde_json::to_writer(&mut buf, inst)
                    .map_err(|e| Error::Other(format!("serialize record: {e}")))?;
                buf.push(b'\n');
            }
            CorpusFormat::Tsv => {
                for text in [&inst.arg1_text, &inst.arg2_text, &inst.connective, &inst.instance_id] {
                    if text.contains('\t') || text.contains('\n') {
                        return Err(Error::Config(format!(
                            "instance {} contains a tab or newline; use the jsonl format",
                            inst.instance_id
                        )));
                    }
                }
                writeln!(
                    buf,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    inst.instance_id,
                    inst.arg1_text,
                    inst.arg2_text,
                    inst.sense,
                    inst.connective,
                    inst.section
                )
                .expect("write to vec");
            }
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Partitions instances by section: train 2-20, dev 0-1, test 21-22.
/// Sections 23-24 are dropped; the count of dropped instances is recorded
/// and logged.
pub fn split_by_sections(instances: Vec<DiscourseInstance>) -> CorpusSplit {
    let mut split = CorpusSplit::default();
    for inst in instances {
        match inst.section {
            0..=1 => split.dev.push(inst),
            2..=20 => split.train.push(inst),
            21..=22 => split.test.push(inst),
            _ => split.excluded += 1,
        }
    }
    if split.excluded > 0 {
        log::warn!(
            "excluded {} instance(s) from sections 23-24, outside the split ranges",
            split.excluded
        );
    }
    split
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(id: &str, sense: Sense, section: u8) -> DiscourseInstance {
        DiscourseInstance {
            arg1_text: format!("first argument text for {id}"),
            arg2_text: format!("second argument text for {id}"),
            sense,
            connective: "so".into(),
            section,
            instance_id: id.into(),
        }
    }

    #[test]
    fn load_jsonl_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        std::fs::write(
            &path,
            r#"{"arg1":"confident of getting the contract","arg2":"they hesitate to bid lower","sense":"Contingency","connective":"so","section":2,"id":"wsj-1"}"#,
        )
        .unwrap();
        let got = load_corpus(&path, CorpusFormat::Jsonl).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].sense, Sense::Contingency);
        assert_eq!(got[0].connective, "so");
    }

    #[test]
    fn empty_file_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_corpus(&path, CorpusFormat::Jsonl).unwrap().is_empty());
    }

    #[test]
    fn unknown_sense_names_value_and_legal_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            r#"{"arg1":"a","arg2":"b","sense":"Cause","connective":"so","section":2,"id":"x"}"#,
        )
        .unwrap();
        let err = load_corpus(&path, CorpusFormat::Jsonl).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("Cause"), "{msg}");
        assert!(msg.contains("Comparison"), "{msg}");
        assert!(msg.contains("Temporal"), "{msg}");
    }

    #[test]
    fn missing_field_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing.jsonl");
        std::fs::write(
            &path,
            "{\"arg1\":\"a\",\"arg2\":\"b\",\"sense\":\"Expansion\",\"connective\":\"and\",\"section\":2,\"id\":\"ok\"}\n{\"arg1\":\"a\",\"arg2\":\"b\",\"sense\":\"Expansion\",\"section\":2,\"id\":\"bad\"}\n",
        )
        .unwrap();
        let err = load_corpus(&path, CorpusFormat::Jsonl).unwrap_err();
        match err {
            Error::Record { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("connective"), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn roundtrip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let instances = vec![
            inst("a", Sense::Comparison, 0),
            inst("b", Sense::Expansion, 5),
            inst("c", Sense::Temporal, 22),
        ];
        for (name, format) in [("c.jsonl", CorpusFormat::Jsonl), ("c.tsv", CorpusFormat::Tsv)] {
            let path = dir.path().join(name);
            save_corpus(&path, &instances, format).unwrap();
            let back = load_corpus(&path, format).unwrap();
            assert_eq!(back, instances);
        }
    }

    #[test]
    fn split_partitions_by_section_ranges() {
        let instances = vec![
            inst("d1", Sense::Comparison, 0),
            inst("d2", Sense::Comparison, 1),
            inst("t1", Sense::Contingency, 2),
            inst("t2", Sense::Expansion, 20),
            inst("e1", Sense::Temporal, 21),
            inst("e2", Sense::Temporal, 22),
            inst("x1", Sense::Expansion, 23),
            inst("x2", Sense::Expansion, 24),
        ];
        let split = split_by_sections(instances);
        assert_eq!(split.dev.len(), 2);
        assert_eq!(split.train.len(), 2);
        assert_eq!(split.test.len(), 2);
        assert_eq!(split.excluded, 2);
    }

    #[test]
    fn single_section_21_instance_goes_to_test() {
        let split = split_by_sections(vec![inst("only", Sense::Expansion, 21)]);
        assert!(split.train.is_empty());
        assert!(split.dev.is_empty());
        assert_eq!(split.test.len(), 1);
    }

    #[test]
    fn split_is_a_partition() {
        let mut rng = crate::rng::Rng::new(5);
        let instances: Vec<_> = (0..500)
            .map(|i| {
                inst(
                    &format!("i{i}"),
                    ALL_SENSES[rng.next_below(4)],
                    rng.next_below(25) as u8,
                )
            })
            .collect();
        let n = instances.len();
        let ids: std::collections::BTreeSet<String> =
            instances.iter().map(|i| i.instance_id.clone()).collect();
        let split = split_by_sections(instances);
        assert_eq!(split.total() + split.excluded, n);
        let mut seen = std::collections::BTreeSet::new();
        for part in [&split.train, &split.dev, &split.test] {
            for i in part.iter() {
                assert!(seen.insert(i.instance_id.clone()), "duplicate {}", i.instance_id);
                assert!(ids.contains(&i.instance_id));
            }
        }
    }

    #[test]
    fn duplicate_instance_ids_are_rejected() {
        let split = split_by_sections(vec![
            inst("dup", Sense::Expansion, 2),
            inst("dup", Sense::Temporal, 21),
        ]);
        assert!(split.check_unique_ids().is_err());
        let ok = split_by_sections(vec![
            inst("a", Sense::Expansion, 2),
            inst("b", Sense::Temporal, 21),
        ]);
        ok.check_unique_ids().unwrap();
    }

    #[test]
    fn tsv_rejects_wrong_field_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "id\tonly three\tfields\n").unwrap();
        let err = load_corpus(&path, CorpusFormat::Tsv).unwrap_err();
        assert!(matches!(err, Error::Record { line: 1, .. }));
    }
}
