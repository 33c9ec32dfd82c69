//! Seeded synthetic corpus with planted lexical cues.
//!
//! Each generated argument pair carries a cue phrase at the head of the
//! second argument that determines both the sense and the annotated
//! connective, so a desk-scale model can learn the task and tests can
//! recover the gold label independently of any classifier.

use crate::corpus::{CorpusSplit, DiscourseInstance, Sense, ALL_SENSES};
use crate::rng::Rng;

/// Four-way class weights matching the real train-split distribution
/// (Comparison, Contingency, Expansion, Temporal).
const CLASS_WEIGHTS: [usize; 4] = [1937, 5916, 8645, 1447];

/// Cue phrase planted at the start of the second argument, with the
/// connective it implies. Cues are disjoint across senses.
const CUES: [(Sense, &[(&str, &str)]); 4] = [
    (
        Sense::Comparison,
        &[
            ("quite similarly", "similarly"),
            ("in sharp contrast", "but"),
            ("contrary to expectations", "however"),
            ("despite earlier doubts", "although"),
        ],
    ),
    (
        Sense::Contingency,
        &[
            ("owing to that decision", "for"),
            ("in that scenario", "if"),
            ("driven by that pressure", "because"),
            ("as a direct consequence", "so"),
        ],
    ),
    (
        Sense::Expansion,
        &[
            ("as an alternative", "instead"),
            ("through that channel", "by"),
            ("to that effect", "thereby"),
            ("to be precise", "specifically"),
            ("on a related note", "and"),
        ],
    ),
    (
        Sense::Temporal,
        &[
            ("at the very same moment", "simultaneously"),
            ("in the months before", "previously"),
            ("shortly afterward", "then"),
        ],
    ),
];

const SUBJECTS: [&str; 10] = [
    "the committee",
    "the analysts",
    "local firms",
    "the investors",
    "the board",
    "many workers",
    "the suppliers",
    "several banks",
    "the regulators",
    "the managers",
];

const PREDICATES: [&str; 10] = [
    "reviewed the quarterly report",
    "approved the spending plan",
    "raised their growth forecast",
    "cut the research budget",
    "signed the trade agreement",
    "delayed the housing project",
    "expanded the training program",
    "questioned the survey results",
    "published the audit findings",
    "revised the cost estimate",
];

const TAILS: [&str; 6] = [
    "last quarter",
    "in march",
    "after the meeting",
    "across the region",
    "without much debate",
    "under the new rules",
];

/// Largest-remainder allocation of `n` instances to the four classes.
fn class_quota(n: usize) -> [usize; 4] {
    let total: usize = CLASS_WEIGHTS.iter().sum();
    let mut counts = [0usize; 4];
    let mut remainders: Vec<(usize, f64)> = Vec::new();
    let mut assigned = 0;
    for (i, &w) in CLASS_WEIGHTS.iter().enumerate() {
        let exact = n as f64 * w as f64 / total as f64;
        counts[i] = exact.floor() as usize;
        assigned += counts[i];
        remainders.push((i, exact - exact.floor()));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in 0..n - assigned {
        counts[remainders[k % 4].0] += 1;
    }
    counts
}

fn make_arg1(rng: &mut Rng) -> String {
    let subj = rng.choose(&SUBJECTS);
    let pred = rng.choose(&PREDICATES);
    if rng.next_f64() < 0.5 {
        format!("{subj} {pred} {}", rng.choose(&TAILS))
    } else {
        format!("{subj} {pred}")
    }
}

fn make_arg2(sense: Sense, cue_idx: usize, rng: &mut Rng) -> String {
    let cue = CUES[sense.index()].1[cue_idx].0;
    let subj = rng.choose(&SUBJECTS);
    let pred = rng.choose(&PREDICATES);
    format!("{cue} {subj} {pred}")
}

fn generate_part(
    tag: &str,
    count: usize,
    sections: std::ops::RangeInclusive<u8>,
    rng: &mut Rng,
) -> Vec<DiscourseInstance> {
    let quota = class_quota(count);
    let mut senses = Vec::with_capacity(count);
    for (i, &q) in quota.iter().enumerate() {
        senses.extend(std::iter::repeat_n(ALL_SENSES[i], q));
    }
    rng.shuffle(&mut senses);

    let section_span: Vec<u8> = sections.collect();
    senses
        .into_iter()
        .enumerate()
        .map(|(i, sense)| {
            let cues = CUES[sense.index()].1;
            let cue_idx = rng.next_below(cues.len());
            let connective = cues[cue_idx].1;
            DiscourseInstance {
                arg1_text: make_arg1(rng),
                arg2_text: make_arg2(sense, cue_idx, rng),
                sense,
                connective: connective.to_string(),
                section: section_span[i % section_span.len()],
                instance_id: format!("syn-{tag}-{i:05}"),
            }
        })
        .collect()
}

/// Generates a reproducible synthetic corpus. The dev part is sized like
/// the test part so per-epoch model selection has data to work with.
pub fn generate_synthetic(num_train: usize, num_test: usize, seed: u64) -> CorpusSplit {
    assert!(num_train > 0 && num_test > 0, "counts must be positive");
    let mut rng = Rng::derive(seed, "synthetic-corpus");
    let train = generate_part("train", num_train, 2..=20, &mut rng);
    let dev = generate_part("dev", num_test, 0..=1, &mut rng);
    let test = generate_part("test", num_test, 21..=22, &mut rng);
    CorpusSplit {
        train,
        dev,
        test,
        excluded: 0,
    }
}

/// The generator's inverse map: recovers the planted sense from the cue
/// phrase, independent of the `sense` field.
pub fn recover_sense(instance: &DiscourseInstance) -> Option<Sense> {
    for (sense, cues) in CUES.iter() {
        for (cue, _) in cues.iter() {
            if instance.arg2_text.starts_with(cue) {
                return Some(*sense);
            }
        }
    }
    None
}

/// The planted connective for a cue phrase, if any.
pub fn recover_connective(instance: &DiscourseInstance) -> Option<&'static str> {
    for (_, cues) in CUES.iter() {
        for (cue, conn) in cues.iter() {
            if instance.arg2_text.starts_with(cue) {
                return Some(conn);
            }
        }
    }
    None
}
