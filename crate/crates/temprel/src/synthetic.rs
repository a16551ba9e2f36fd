//! Deterministic synthetic data: a linearly separable pair-classification
//! corpus and a matching verb co-occurrence table. Used by smoke tests and
//! the demo configs to exercise the full pipeline without external data.
//!
//! Two verb families share a global order: every `x*` verb precedes every
//! `y*` verb. The co-occurrence table holds most (x, y) combinations out
//! of its rows, so a model fit to it must generalize the family structure
//! to score the held-out combinations.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{Corpus, Document, Event, Label, RelationInstance};
use crate::cse::{TemProbEntry, TemProbTable};
use crate::neural::seeded_rng;

fn lemma(family: char, i: usize) -> String {
    format!("{family}{i:02}")
}

/// One single-sentence document per instance:
/// `the <v1> <connective> <v2> today`, events at tokens 1 and 3.
fn make_doc(id: String, v1: &str, connective: &str, v2: &str) -> Document {
    Document {
        id,
        sentences: vec![vec![
            "the".into(),
            v1.into(),
            connective.into(),
            v2.into(),
            "today".into(),
        ]],
        events: vec![
            Event { eid: "e1".into(), sent: 0, tok: 1, lemma: v1.into() },
            Event { eid: "e2".into(), sent: 0, tok: 3, lemma: v2.into() },
        ],
    }
}

/// Verbs per family in the generated data.
pub const FAMILY_SIZE: usize = 10;

/// A corpus of `n` labeled instances where the connective token determines
/// the label, so any sequence encoder can reach perfect accuracy.
/// Instances alternate labels: BEFORE sentences read `x zzbefore y`,
/// AFTER sentences `y zzafter x`, with family indices drawn from the seed.
pub fn separable_corpus(n: usize, prefix: &str, seed: u64) -> Corpus {
    let mut rng = seeded_rng(seed);
    let mut documents = Vec::with_capacity(n);
    let mut relations = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("{prefix}{i:04}");
        let a = rng.gen_range(0..FAMILY_SIZE);
        let b = rng.gen_range(0..FAMILY_SIZE);
        let (doc, label) = if i % 2 == 0 {
            (
                make_doc(id.clone(), &lemma('x', a), "zzbefore", &lemma('y', b)),
                Label::Before,
            )
        } else {
            (
                make_doc(id.clone(), &lemma('y', b), "zzafter", &lemma('x', a)),
                Label::After,
            )
        };
        relations.push(RelationInstance {
            doc_id: id,
            src: "e1".into(),
            dst: "e2".into(),
            label: Some(label),
        });
        documents.push(doc);
    }
    Corpus { documents, relations }
}

/// Whether the (x_i, y_j) combination is withheld from the table.
fn held_out(i: usize, j: usize) -> bool {
    (i + j) % 5 == 0
}

/// The (v1, v2, label) tuples present in [`synthetic_temprob`]: both
/// orientations of every non-held-out (x_i, y_j) combination.
pub fn temprob_train_pairs() -> Vec<(String, String, Label)> {
    let mut out = Vec::new();
    for i in 0..FAMILY_SIZE {
        for j in 0..FAMILY_SIZE {
            if held_out(i, j) {
                continue;
            }
            out.push((lemma('x', i), lemma('y', j), Label::Before));
            out.push((lemma('y', j), lemma('x', i), Label::After));
        }
    }
    out
}

/// Combinations of in-vocabulary lemmas deliberately absent from the
/// table, for generalization checks. Each (x, y) pair should score near 1
/// in the x-before-y direction and near 0 reversed.
pub fn temprob_held_out_pairs() -> Vec<(String, String)> {
    let mut out = Vec::new();
    for i in 0..FAMILY_SIZE {
        for j in 0..FAMILY_SIZE {
            if held_out(i, j) {
                out.push((lemma('x', i), lemma('y', j)));
            }
        }
    }
    out
}

/// A co-occurrence table putting all mass of each training pair on its
/// family-order label, in a seed-determined row order.
pub fn synthetic_temprob(count: u64, seed: u64) -> TemProbTable {
    let mut entries: Vec<TemProbEntry> = temprob_train_pairs()
        .into_iter()
        .map(|(v1, v2, r)| TemProbEntry { v1, v2, r, count })
        .collect();
    let mut rng = seeded_rng(seed);
    entries.shuffle(&mut rng);
    TemProbTable::from_entries(entries).expect("generated tuples are unique")
}
