//! Data model and ingestion for documents, events and gold temporal
//! relations, plus deterministic document-level train/dev splitting.
//!
//! The on-disk format is JSON lines, one document object per line:
//!
//! ```text
//! {"id": "...", "sentences": [["tok",...],...],
//!  "events": [{"eid","sent","tok","lemma"},...],
//!  "relations": [{"src","dst","label"},...]}
//! ```
//!
//! `relations` may be omitted for prediction-only input and each relation's
//! `label` may be absent.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The four temporal relations over event start points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "BEFORE")]
    Before,
    #[serde(rename = "AFTER")]
    After,
    #[serde(rename = "EQUAL")]
    Equal,
    #[serde(rename = "VAGUE")]
    Vague,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::Before, Label::After, Label::Equal, Label::Vague];

    /// Label on (b, a) given this label on (a, b).
    pub fn reverse(self) -> Label {
        match self {
            Label::Before => Label::After,
            Label::After => Label::Before,
            Label::Equal => Label::Equal,
            Label::Vague => Label::Vague,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Label::Before => 0,
            Label::After => 1,
            Label::Equal => 2,
            Label::Vague => 3,
        }
    }

    pub fn from_index(i: usize) -> Label {
        Label::ALL[i]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Before => "BEFORE",
            Label::After => "AFTER",
            Label::Equal => "EQUAL",
            Label::Vague => "VAGUE",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "BEFORE" => Some(Label::Before),
            "AFTER" => Some(Label::After),
            "EQUAL" => Some(Label::Equal),
            "VAGUE" => Some(Label::Vague),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single-token event mention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub eid: String,
    pub sent: usize,
    pub tok: usize,
    pub lemma: String,
}

/// A directed gold or predicted relation between two events of one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub doc_id: String,
    pub src: String,
    pub dst: String,
    pub label: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Vec<String>>,
    pub events: Vec<Event>,
}

impl Document {
    pub fn event(&self, eid: &str) -> Option<&Event> {
        self.events.iter().find(|e| e.eid == eid)
    }

    pub fn n_tokens(&self) -> usize {
        self.sentences.iter().map(|s| s.len()).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub relations: Vec<RelationInstance>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error reading corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: parse error: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: duplicate document id {id:?}")]
    DuplicateDoc { line: usize, id: String },
    #[error("document {doc:?}: empty sentence list or empty sentence")]
    EmptySentence { doc: String },
    #[error("document {doc:?}: duplicate event id {eid:?}")]
    DuplicateEvent { doc: String, eid: String },
    #[error("document {doc:?}: event {eid:?} addresses token ({sent}, {tok}) out of range")]
    TokenOutOfRange {
        doc: String,
        eid: String,
        sent: usize,
        tok: usize,
    },
    #[error("document {doc:?}: relation references unknown event id {eid:?}")]
    DanglingEid { doc: String, eid: String },
    #[error("document {doc:?}: relation with identical endpoints {eid:?}")]
    SelfRelation { doc: String, eid: String },
    #[error("document {doc:?}: more than one relation for event pair ({a:?}, {b:?})")]
    DuplicatePair { doc: String, a: String, b: String },
    #[error("dev fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("corpus has {0} documents, need at least 2 to split")]
    TooFewDocuments(usize),
}

/// One line of the corpus file. Relations are stored inline per document.
#[derive(Debug, Serialize, Deserialize)]
struct DocumentLine {
    id: String,
    sentences: Vec<Vec<String>>,
    events: Vec<Event>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    relations: Vec<RelationLine>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RelationLine {
    src: String,
    dst: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<Label>,
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut corpus = Corpus::default();
    let mut seen_docs: HashSet<String> = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc_line: DocumentLine =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
        if !seen_docs.insert(doc_line.id.clone()) {
            return Err(CorpusError::DuplicateDoc {
                line: lineno,
                id: doc_line.id,
            });
        }
        let (doc, rels) = validate_document(doc_line)?;
        corpus.documents.push(doc);
        corpus.relations.extend(rels);
    }
    Ok(corpus)
}

fn validate_document(
    line: DocumentLine,
) -> Result<(Document, Vec<RelationInstance>), CorpusError> {
    let doc_id = line.id.clone();
    if line.sentences.is_empty() || line.sentences.iter().any(|s| s.is_empty()) {
        return Err(CorpusError::EmptySentence { doc: doc_id });
    }
    let mut eids: HashSet<&str> = HashSet::new();
    for ev in &line.events {
        if !eids.insert(ev.eid.as_str()) {
            return Err(CorpusError::DuplicateEvent {
                doc: doc_id,
                eid: ev.eid.clone(),
            });
        }
        let in_range = line
            .sentences
            .get(ev.sent)
            .map(|s| ev.tok < s.len())
            .unwrap_or(false);
        if !in_range {
            return Err(CorpusError::TokenOutOfRange {
                doc: doc_id,
                eid: ev.eid.clone(),
                sent: ev.sent,
                tok: ev.tok,
            });
        }
    }
    let mut pairs: HashSet<(String, String)> = HashSet::new();
    let mut relations = Vec::with_capacity(line.relations.len());
    for rel in line.relations {
        for eid in [&rel.src, &rel.dst] {
            if !eids.contains(eid.as_str()) {
                return Err(CorpusError::DanglingEid {
                    doc: doc_id,
                    eid: eid.clone(),
                });
            }
        }
        if rel.src == rel.dst {
            return Err(CorpusError::SelfRelation {
                doc: doc_id,
                eid: rel.src,
            });
        }
        let key = if rel.src <= rel.dst {
            (rel.src.clone(), rel.dst.clone())
        } else {
            (rel.dst.clone(), rel.src.clone())
        };
        if !pairs.insert(key.clone()) {
            return Err(CorpusError::DuplicatePair {
                doc: doc_id,
                a: key.0,
                b: key.1,
            });
        }
        relations.push(RelationInstance {
            doc_id: doc_id.clone(),
            src: rel.src,
            dst: rel.dst,
            label: rel.label,
        });
    }
    Ok((
        Document {
            id: line.id,
            sentences: line.sentences,
            events: line.events,
        },
        relations,
    ))
}

/// Re-checks an in-memory corpus against the same rules enforced at load
/// time. Relations must also reference known documents.
pub fn validate_corpus(corpus: &Corpus) -> Result<(), CorpusError> {
    let mut seen_docs: HashSet<&str> = HashSet::new();
    for doc in &corpus.documents {
        if !seen_docs.insert(doc.id.as_str()) {
            return Err(CorpusError::DuplicateDoc {
                line: 0,
                id: doc.id.clone(),
            });
        }
    }
    let mut by_doc: HashMap<&str, Vec<RelationLine>> = HashMap::new();
    for rel in &corpus.relations {
        if !seen_docs.contains(rel.doc_id.as_str()) {
            return Err(CorpusError::DanglingEid {
                doc: rel.doc_id.clone(),
                eid: rel.src.clone(),
            });
        }
        by_doc.entry(&rel.doc_id).or_default().push(RelationLine {
            src: rel.src.clone(),
            dst: rel.dst.clone(),
            label: rel.label,
        });
    }
    for doc in &corpus.documents {
        validate_document(DocumentLine {
            id: doc.id.clone(),
            sentences: doc.sentences.clone(),
            events: doc.events.clone(),
            relations: by_doc.remove(doc.id.as_str()).unwrap_or_default(),
        })?;
    }
    Ok(())
}

/// Serializes to the same JSON-lines format accepted by [`load_corpus`].
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let mut by_doc: HashMap<&str, Vec<&RelationInstance>> = HashMap::new();
    for rel in &corpus.relations {
        by_doc.entry(&rel.doc_id).or_default().push(rel);
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for doc in &corpus.documents {
        let line = DocumentLine {
            id: doc.id.clone(),
            sentences: doc.sentences.clone(),
            events: doc.events.clone(),
            relations: by_doc
                .get(doc.id.as_str())
                .into_iter()
                .flatten()
                .map(|r| RelationLine {
                    src: r.src.clone(),
                    dst: r.dst.clone(),
                    label: r.label,
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| CorpusError::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

impl Corpus {
    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Gold-labeled relations only.
    pub fn labeled(&self) -> impl Iterator<Item = (&RelationInstance, Label)> {
        self.relations
            .iter()
            .filter_map(|r| r.label.map(|l| (r, l)))
    }
}

/// Splits off `round(dev_fraction * n_docs)` whole documents as a dev set.
/// Membership is a seeded shuffle of document ids, so the split is
/// deterministic for a given seed.
pub fn split_dev(
    corpus: &Corpus,
    dev_fraction: f64,
    seed: u64,
) -> Result<(Corpus, Corpus), CorpusError> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(CorpusError::BadFraction(dev_fraction));
    }
    let n = corpus.documents.len();
    if n < 2 {
        return Err(CorpusError::TooFewDocuments(n));
    }
    let n_dev = (dev_fraction * n as f64).round() as usize;
    let mut ids: Vec<&str> = corpus.documents.iter().map(|d| d.id.as_str()).collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let dev_ids: HashSet<&str> = ids.into_iter().take(n_dev).collect();
    let mut train = Corpus::default();
    let mut dev = Corpus::default();
    for doc in &corpus.documents {
        if dev_ids.contains(doc.id.as_str()) {
            dev.documents.push(doc.clone());
        } else {
            train.documents.push(doc.clone());
        }
    }
    for rel in &corpus.relations {
        if dev_ids.contains(rel.doc_id.as_str()) {
            dev.relations.push(rel.clone());
        } else {
            train.relations.push(rel.clone());
        }
    }
    Ok((train, dev))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub n_events: usize,
    pub n_relations: usize,
    pub label_histogram: BTreeMap<String, usize>,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut hist: BTreeMap<String, usize> = Label::ALL
        .iter()
        .map(|l| (l.as_str().to_string(), 0))
        .collect();
    for (_, label) in corpus.labeled() {
        *hist.get_mut(label.as_str()).unwrap() += 1;
    }
    CorpusStats {
        n_docs: corpus.documents.len(),
        n_events: corpus.documents.iter().map(|d| d.events.len()).sum(),
        n_relations: corpus.relations.len(),
        label_histogram: hist,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    const MINIMAL: &str = r#"{"id":"d1","sentences":[["he","ran","then","fell"]],"events":[{"eid":"e1","sent":0,"tok":1,"lemma":"run"},{"eid":"e2","sent":0,"tok":3,"lemma":"fall"}],"relations":[{"src":"e1","dst":"e2","label":"BEFORE"}]}"#;

    #[test]
    fn minimal_document_loads() {
        let f = write_lines(&[MINIMAL]);
        let c = load_corpus(f.path()).unwrap();
        assert_eq!(c.documents.len(), 1);
        assert_eq!(c.documents[0].events.len(), 2);
        assert_eq!(c.relations.len(), 1);
        assert_eq!(c.relations[0].label, Some(Label::Before));
    }

    #[test]
    fn dangling_eid_is_reported() {
        let line = r#"{"id":"d1","sentences":[["a"]],"events":[{"eid":"e1","sent":0,"tok":0,"lemma":"a"}],"relations":[{"src":"e1","dst":"e9","label":"BEFORE"}]}"#;
        let f = write_lines(&[line]);
        match load_corpus(f.path()) {
            Err(CorpusError::DanglingEid { eid, .. }) => assert_eq!(eid, "e9"),
            other => panic!("expected dangling eid, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_carries_line_number() {
        let f = write_lines(&[MINIMAL, "{not json"]);
        match load_corpus(f.path()) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_pair_rejected_regardless_of_direction() {
        let line = r#"{"id":"d1","sentences":[["a","b"]],"events":[{"eid":"e1","sent":0,"tok":0,"lemma":"a"},{"eid":"e2","sent":0,"tok":1,"lemma":"b"}],"relations":[{"src":"e1","dst":"e2","label":"BEFORE"},{"src":"e2","dst":"e1","label":"AFTER"}]}"#;
        let f = write_lines(&[line]);
        assert!(matches!(
            load_corpus(f.path()),
            Err(CorpusError::DuplicatePair { .. })
        ));
    }

    #[test]
    fn out_of_range_token_rejected() {
        let line = r#"{"id":"d1","sentences":[["a"]],"events":[{"eid":"e1","sent":0,"tok":5,"lemma":"a"}]}"#;
        let f = write_lines(&[line]);
        assert!(matches!(
            load_corpus(f.path()),
            Err(CorpusError::TokenOutOfRange { tok: 5, .. })
        ));
    }

    #[test]
    fn label_reverse_involution() {
        for l in Label::ALL {
            assert_eq!(l.reverse().reverse(), l);
        }
        assert_eq!(Label::Before.reverse(), Label::After);
        assert_eq!(Label::Equal.reverse(), Label::Equal);
        assert_eq!(Label::Vague.reverse(), Label::Vague);
    }

    fn synthetic_docs(n: usize) -> Corpus {
        let mut c = Corpus::default();
        for i in 0..n {
            c.documents.push(Document {
                id: format!("d{i}"),
                sentences: vec![vec!["a".into(), "b".into()]],
                events: vec![
                    Event { eid: "e1".into(), sent: 0, tok: 0, lemma: "a".into() },
                    Event { eid: "e2".into(), sent: 0, tok: 1, lemma: "b".into() },
                ],
            });
            c.relations.push(RelationInstance {
                doc_id: format!("d{i}"),
                src: "e1".into(),
                dst: "e2".into(),
                label: Some(Label::Before),
            });
        }
        c
    }

    #[test]
    fn split_sizes_and_determinism() {
        let c = synthetic_docs(10);
        let (train, dev) = split_dev(&c, 0.2, 7).unwrap();
        assert_eq!(dev.documents.len(), 2);
        assert_eq!(train.documents.len(), 8);
        let (train2, dev2) = split_dev(&c, 0.2, 7).unwrap();
        assert_eq!(dev, dev2);
        assert_eq!(train, train2);
    }

    #[test]
    fn split_255_docs_fraction_02_gives_51() {
        let c = synthetic_docs(255);
        let (_, dev) = split_dev(&c, 0.2, 0).unwrap();
        assert_eq!(dev.documents.len(), 51);
    }

    #[test]
    fn split_requires_two_documents() {
        let c = synthetic_docs(1);
        assert!(matches!(
            split_dev(&c, 0.2, 0),
            Err(CorpusError::TooFewDocuments(1))
        ));
        let c = synthetic_docs(4);
        assert!(matches!(
            split_dev(&c, 1.5, 0),
            Err(CorpusError::BadFraction(_))
        ));
    }

    #[test]
    fn split_is_a_partition() {
        let c = synthetic_docs(9);
        let (train, dev) = split_dev(&c, 0.3, 3).unwrap();
        let mut ids: Vec<_> = train
            .documents
            .iter()
            .chain(dev.documents.iter())
            .map(|d| d.id.clone())
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 9);
        assert_eq!(train.relations.len() + dev.relations.len(), c.relations.len());
    }

    #[test]
    fn stats_histogram_sums_to_relations() {
        let f = write_lines(&[MINIMAL]);
        let c = load_corpus(f.path()).unwrap();
        let s = corpus_stats(&c);
        assert_eq!(s.n_docs, 1);
        assert_eq!(s.n_events, 2);
        assert_eq!(s.n_relations, 1);
        assert_eq!(s.label_histogram.values().sum::<usize>(), s.n_relations);
        assert_eq!(s.label_histogram["BEFORE"], 1);
    }

    #[test]
    fn round_trip_through_file() {
        let f = write_lines(&[MINIMAL]);
        let c = load_corpus(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_corpus(&c, out.path()).unwrap();
        let c2 = load_corpus(out.path()).unwrap();
        assert_eq!(c, c2);
    }
}
