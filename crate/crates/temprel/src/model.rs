//! The event-pair classifier: builds the token window around an event pair,
//! encodes it with a BiLSTM under either position scheme (marker insertion
//! or hidden-state concatenation), fuses the discretized common-sense score,
//! and emits four confidence scores through an FFNN head. Also owns the
//! training loop and batch prediction.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Document, Event, Label};
use crate::cse::{discretize, CseError, SiameseModel};
use crate::embeddings::{embed_sequence, EmbeddingError, Provider};
use crate::inference::{ConfidenceRow, ConfidenceTable};
use crate::neural::{
    clip_global_norm, ffnn_forward, init_uniform, lstm_forward, seeded_rng, softmax, step_lr,
    AdamState, Checkpoint, CheckpointError, Direction, FfnnParams, LstmParams, ParamSet, Tape,
    Tensor, TrainConfig, Var,
};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderKind {
    /// Marker tokens inserted around each event; the pair representation is
    /// the final state of each LSTM direction.
    #[serde(rename = "pi")]
    Pi,
    /// Hidden states at the two event positions, concatenated.
    #[serde(rename = "concat")]
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub lstm_hidden: usize,
    pub ffnn_hidden: usize,
    pub cse_bins: usize,
    pub cse_bin_dim: usize,
    pub max_tokens: usize,
    pub train: TrainConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderKind::Concat,
            lstm_hidden: 64,
            ffnn_hidden: 64,
            cse_bins: 10,
            cse_bin_dim: 32,
            max_tokens: 100,
            train: TrainConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Length of the pair representation for this encoder.
    pub fn rep_len(&self) -> usize {
        match self.encoder {
            EncoderKind::Concat => 4 * self.lstm_hidden,
            EncoderKind::Pi => 2 * self.lstm_hidden,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("embedding error: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("cse error: {0}")]
    Cse(#[from] CseError),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error("unknown event {eid:?} in document {doc:?}")]
    UnknownEvent { doc: String, eid: String },
    #[error("events {e1:?} and {e2:?} span {span} tokens, beyond the {max}-token window")]
    EventsTooFar {
        e1: String,
        e2: String,
        span: usize,
        max: usize,
    },
    #[error("events {e1:?} and {e2:?} share one token position")]
    OverlappingEvents { e1: String, e2: String },
    #[error("bin {bin} out of range for {bins} bins")]
    BinOutOfRange { bin: usize, bins: usize },
    #[error("training set has no labeled instances")]
    EmptyTrainingSet,
    #[error("bad checkpoint payload: {0}")]
    BadCheckpoint(String),
}

/// One row of the classifier input: either a fixed embedding vector or one
/// of the four trainable marker vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum InputRow {
    Embedding(Vec<f64>),
    Marker(usize),
}

pub const MARKER_E1_OPEN: usize = 0;
pub const MARKER_E1_CLOSE: usize = 1;
pub const MARKER_E2_OPEN: usize = 2;
pub const MARKER_E2_CLOSE: usize = 3;

/// Builds the classifier input for an event pair: the sentences spanning
/// both events, truncated symmetrically to `max_tokens` while keeping both
/// events. Under PI, marker rows are inserted around each event token and
/// the returned positions point at the event tokens themselves.
pub fn build_input(
    document: &Document,
    e1: &Event,
    e2: &Event,
    provider: &Provider,
    config: &ModelConfig,
) -> Result<(Vec<InputRow>, usize, usize), ModelError> {
    let lo = e1.sent.min(e2.sent);
    let hi = e1.sent.max(e2.sent);
    let rows = embed_sequence(provider, document, lo..hi + 1)?;
    let offset = |ev: &Event| -> usize {
        document.sentences[lo..ev.sent]
            .iter()
            .map(|s| s.len())
            .sum::<usize>()
            + ev.tok
    };
    let mut pos1 = offset(e1);
    let mut pos2 = offset(e2);
    if pos1 == pos2 {
        return Err(ModelError::OverlappingEvents {
            e1: e1.eid.clone(),
            e2: e2.eid.clone(),
        });
    }

    let (pmin, pmax) = (pos1.min(pos2), pos1.max(pos2));
    let span = pmax - pmin + 1;
    if span > config.max_tokens {
        return Err(ModelError::EventsTooFar {
            e1: e1.eid.clone(),
            e2: e2.eid.clone(),
            span,
            max: config.max_tokens,
        });
    }
    let mut rows = rows;
    if rows.len() > config.max_tokens {
        let slack = config.max_tokens - span;
        let mut start = pmin.saturating_sub(slack / 2);
        let mut end = start + config.max_tokens;
        if end > rows.len() {
            end = rows.len();
            start = end - config.max_tokens;
        }
        rows = rows[start..end].to_vec();
        pos1 -= start;
        pos2 -= start;
    }

    let mut input: Vec<InputRow> = rows.into_iter().map(InputRow::Embedding).collect();
    if config.encoder == EncoderKind::Pi {
        // insert around the later event first so earlier indices stay valid
        let (later, later_open, later_close, earlier, earlier_open, earlier_close) =
            if pos1 < pos2 {
                (pos2, MARKER_E2_OPEN, MARKER_E2_CLOSE, pos1, MARKER_E1_OPEN, MARKER_E1_CLOSE)
            } else {
                (pos1, MARKER_E1_OPEN, MARKER_E1_CLOSE, pos2, MARKER_E2_OPEN, MARKER_E2_CLOSE)
            };
        input.insert(later + 1, InputRow::Marker(later_close));
        input.insert(later, InputRow::Marker(later_open));
        input.insert(earlier + 1, InputRow::Marker(earlier_close));
        input.insert(earlier, InputRow::Marker(earlier_open));
        let shift = |p: usize| if p == later { p + 3 } else { p + 1 };
        pos1 = shift(pos1);
        pos2 = shift(pos2);
    }
    Ok((input, pos1, pos2))
}

#[derive(Debug, Clone)]
pub struct PairClassifier {
    pub config: ModelConfig,
    pub emb_dim: usize,
    pub params: ParamSet,
    lstm_fwd: LstmParams,
    lstm_bwd: LstmParams,
    markers: usize, // 4 x emb_dim
    bin_emb: usize, // cse_bins x cse_bin_dim
    scorer: FfnnParams,
}

impl PairClassifier {
    pub fn new(config: ModelConfig, emb_dim: usize, seed: u64) -> PairClassifier {
        let mut rng = seeded_rng(seed);
        let mut params = ParamSet::new();
        let lstm_fwd = LstmParams::init(&mut params, "lstm.fwd", emb_dim, config.lstm_hidden, &mut rng);
        let lstm_bwd = LstmParams::init(&mut params, "lstm.bwd", emb_dim, config.lstm_hidden, &mut rng);
        let markers = params.add("markers", init_uniform(&[4, emb_dim], emb_dim, &mut rng));
        let bin_emb = params.add(
            "bin_emb",
            init_uniform(&[config.cse_bins, config.cse_bin_dim], config.cse_bin_dim, &mut rng),
        );
        let scorer = FfnnParams::init(
            &mut params,
            "scorer",
            config.rep_len() + config.cse_bin_dim,
            config.ffnn_hidden,
            4,
            &mut rng,
        );
        PairClassifier {
            config,
            emb_dim,
            params,
            lstm_fwd,
            lstm_bwd,
            markers,
            bin_emb,
            scorer,
        }
    }

    fn input_vars(&self, tape: &mut Tape, params: &ParamSet, input: &[InputRow]) -> Vec<Var> {
        input
            .iter()
            .map(|row| match row {
                InputRow::Embedding(v) => tape.constant(Tensor::vector(v.clone())),
                InputRow::Marker(m) => tape.param_row(params, self.markers, *m),
            })
            .collect()
    }

    /// BiLSTM pair representation on the tape.
    fn encode_on_tape(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        input: &[InputRow],
        pos1: usize,
        pos2: usize,
    ) -> Var {
        let xs = self.input_vars(tape, params, input);
        let fwd = lstm_forward(tape, params, &self.lstm_fwd, &xs, Direction::Forward);
        let bwd = lstm_forward(tape, params, &self.lstm_bwd, &xs, Direction::Reversed);
        match self.config.encoder {
            EncoderKind::Concat => tape.concat(&[fwd[pos1], bwd[pos1], fwd[pos2], bwd[pos2]]),
            EncoderKind::Pi => tape.concat(&[*fwd.last().unwrap(), bwd[0]]),
        }
    }

    fn logits_on_tape(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        rep: Var,
        bin: Option<usize>,
    ) -> Var {
        let bin_vec = match bin {
            Some(b) => tape.param_row(params, self.bin_emb, b),
            None => tape.constant(Tensor::zeros(&[self.config.cse_bin_dim])),
        };
        let joined = tape.concat(&[rep, bin_vec]);
        ffnn_forward(tape, params, &self.scorer, joined)
    }

    /// Cross-entropy loss for one instance on an external tape; mirrors
    /// the training loss term so gradients can be validated end to end.
    pub fn pair_loss(
        &self,
        tape: &mut Tape,
        input: &[InputRow],
        pos1: usize,
        pos2: usize,
        bin: Option<usize>,
        target: &[f64; 4],
    ) -> Var {
        let rep = self.encode_on_tape(tape, &self.params, input, pos1, pos2);
        let logits = self.logits_on_tape(tape, &self.params, rep, bin);
        tape.softmax_ce(logits, target)
    }

    /// Forward-only pair representation.
    pub fn encode_pair(&self, input: &[InputRow], pos1: usize, pos2: usize) -> Vec<f64> {
        let mut tape = Tape::new();
        let rep = self.encode_on_tape(&mut tape, &self.params, input, pos1, pos2);
        tape.value(rep).data.clone()
    }

    /// Softmax confidence scores from a pair representation and an optional
    /// common-sense bin.
    pub fn score_labels(&self, rep: &[f64], bin: Option<usize>) -> Result<[f64; 4], ModelError> {
        if let Some(b) = bin {
            if b >= self.config.cse_bins {
                return Err(ModelError::BinOutOfRange {
                    bin: b,
                    bins: self.config.cse_bins,
                });
            }
        }
        let mut tape = Tape::new();
        let rep_var = tape.constant(Tensor::vector(rep.to_vec()));
        let logits = self.logits_on_tape(&mut tape, &self.params, rep_var, bin);
        let probs = softmax(&tape.value(logits).data);
        Ok([probs[0], probs[1], probs[2], probs[3]])
    }

    fn cse_bin(
        &self,
        cse: Option<&SiameseModel>,
        e1: &Event,
        e2: &Event,
    ) -> Result<Option<usize>, ModelError> {
        match cse {
            None => Ok(None),
            Some(m) => {
                let score = m.cse_score(&e1.lemma, &e2.lemma);
                Ok(Some(discretize(score, self.config.cse_bins)?))
            }
        }
    }

    /// One 4-vector of probabilities per relation instance, in canonical
    /// (doc_id, src, dst) order. The local argmax label is recoverable per
    /// row; global inference may overwrite it later.
    pub fn predict(
        &self,
        corpus: &Corpus,
        provider: &Provider,
        cse: Option<&SiameseModel>,
    ) -> Result<ConfidenceTable, ModelError> {
        let mut refs: Vec<&crate::corpus::RelationInstance> = corpus.relations.iter().collect();
        refs.sort_by(|a, b| (&a.doc_id, &a.src, &a.dst).cmp(&(&b.doc_id, &b.src, &b.dst)));
        let score_one = |rel: &crate::corpus::RelationInstance| -> Result<ConfidenceRow, ModelError> {
            let (doc, e1, e2) = resolve(corpus, rel)?;
            let (input, pos1, pos2) = build_input(doc, e1, e2, provider, &self.config)?;
            let bin = self.cse_bin(cse, e1, e2)?;
            let mut tape = Tape::new();
            let rep = self.encode_on_tape(&mut tape, &self.params, &input, pos1, pos2);
            let logits = self.logits_on_tape(&mut tape, &self.params, rep, bin);
            let probs = softmax(&tape.value(logits).data);
            Ok(ConfidenceRow {
                doc_id: rel.doc_id.clone(),
                src: rel.src.clone(),
                dst: rel.dst.clone(),
                scores: [probs[0], probs[1], probs[2], probs[3]],
            })
        };
        #[cfg(feature = "parallel")]
        let rows: Result<Vec<_>, _> = refs.par_iter().map(|r| score_one(r)).collect();
        #[cfg(not(feature = "parallel"))]
        let rows: Result<Vec<_>, _> = refs.iter().map(|r| score_one(r)).collect();
        Ok(ConfidenceTable { rows: rows? })
    }

    pub fn checkpoint(&self, seed: u64) -> Checkpoint {
        let hyper = serde_json::json!({
            "config": self.config,
            "emb_dim": self.emb_dim,
        });
        Checkpoint::from_params("classifier", seed, hyper, &self.params)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<PairClassifier, ModelError> {
        let config: ModelConfig = serde_json::from_value(ckpt.hyper["config"].clone())
            .map_err(|e| ModelError::BadCheckpoint(e.to_string()))?;
        let emb_dim: usize = serde_json::from_value(ckpt.hyper["emb_dim"].clone())
            .map_err(|e| ModelError::BadCheckpoint(e.to_string()))?;
        let mut model = PairClassifier::new(config, emb_dim, ckpt.seed);
        let params = ckpt.to_params()?;
        if params.params.len() != model.params.params.len() {
            return Err(ModelError::BadCheckpoint(format!(
                "expected {} parameters, found {}",
                model.params.params.len(),
                params.params.len()
            )));
        }
        model.params = params;
        Ok(model)
    }
}

fn resolve<'c>(
    corpus: &'c Corpus,
    rel: &crate::corpus::RelationInstance,
) -> Result<(&'c Document, &'c Event, &'c Event), ModelError> {
    let doc = corpus
        .document(&rel.doc_id)
        .ok_or_else(|| ModelError::UnknownDocument(rel.doc_id.clone()))?;
    let find = |eid: &str| {
        doc.event(eid).ok_or_else(|| ModelError::UnknownEvent {
            doc: rel.doc_id.clone(),
            eid: eid.to_string(),
        })
    };
    Ok((doc, find(&rel.src)?, find(&rel.dst)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
    pub lr: f64,
}

struct PreparedInstance {
    input: Vec<InputRow>,
    pos1: usize,
    pos2: usize,
    bin: Option<usize>,
    target: [f64; 4],
}

/// Trains the classifier on gold-labeled pairs against mean cross-entropy.
/// Epoch shuffling and everything downstream is seeded; the returned model
/// carries the checkpoint with the best dev accuracy (ties go earlier).
pub fn train(
    model: &mut PairClassifier,
    train_corpus: &Corpus,
    dev_corpus: &Corpus,
    provider: &Provider,
    cse: Option<&SiameseModel>,
) -> Result<Vec<EpochStats>, ModelError> {
    let cfg = model.config.train;
    let mut instances = prepare(model, train_corpus, provider, cse)?;
    if instances.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let mut rng = seeded_rng(cfg.seed);
    let mut adam = AdamState::new(&model.params);
    let mut history = Vec::new();
    let mut best: Option<(f64, ParamSet)> = None;
    for epoch in 0..cfg.epochs {
        let lr = step_lr(&cfg, epoch);
        instances.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in instances.chunks(cfg.batch_size.max(1)) {
            model.params.zero_grad();
            let mut tape = Tape::new();
            let mut losses = Vec::with_capacity(batch.len());
            for inst in batch {
                let rep =
                    model.encode_on_tape(&mut tape, &model.params, &inst.input, inst.pos1, inst.pos2);
                let logits = model.logits_on_tape(&mut tape, &model.params, rep, inst.bin);
                losses.push(tape.softmax_ce(logits, &inst.target));
            }
            let total = tape.sum(&losses);
            let loss = tape.scale(total, 1.0 / batch.len() as f64);
            epoch_loss += tape.value(total).item();
            tape.backward(loss, &mut model.params);
            clip_global_norm(&mut model.params, 5.0);
            adam.step(&mut model.params, lr);
        }
        let train_loss = epoch_loss / instances.len() as f64;
        let dev_accuracy = accuracy_on(model, dev_corpus, provider, cse)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            dev_accuracy,
            lr,
        });
        let improved = match &best {
            None => true,
            Some((b, _)) => dev_accuracy > *b,
        };
        if improved {
            best = Some((dev_accuracy, model.params.clone()));
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(history)
}

fn prepare(
    model: &PairClassifier,
    corpus: &Corpus,
    provider: &Provider,
    cse: Option<&SiameseModel>,
) -> Result<Vec<PreparedInstance>, ModelError> {
    let mut out = Vec::new();
    let mut refs: Vec<(&crate::corpus::RelationInstance, Label)> = corpus.labeled().collect();
    refs.sort_by(|a, b| (&a.0.doc_id, &a.0.src, &a.0.dst).cmp(&(&b.0.doc_id, &b.0.src, &b.0.dst)));
    for (rel, label) in refs {
        let (doc, e1, e2) = resolve(corpus, rel)?;
        let (input, pos1, pos2) = build_input(doc, e1, e2, provider, &model.config)?;
        let bin = model.cse_bin(cse, e1, e2)?;
        let mut target = [0.0; 4];
        target[label.index()] = 1.0;
        out.push(PreparedInstance {
            input,
            pos1,
            pos2,
            bin,
            target,
        });
    }
    Ok(out)
}

/// Local argmax accuracy of the model on a corpus (pre-inference).
pub fn accuracy_on(
    model: &PairClassifier,
    corpus: &Corpus,
    provider: &Provider,
    cse: Option<&SiameseModel>,
) -> Result<f64, ModelError> {
    let gold: std::collections::HashMap<(String, String, String), Label> = corpus
        .labeled()
        .map(|(r, l)| ((r.doc_id.clone(), r.src.clone(), r.dst.clone()), l))
        .collect();
    if gold.is_empty() {
        return Ok(0.0);
    }
    let table = model.predict(corpus, provider, cse)?;
    let mut correct = 0usize;
    let mut total = 0usize;
    for row in &table.rows {
        let key = (row.doc_id.clone(), row.src.clone(), row.dst.clone());
        let Some(&label) = gold.get(&key) else { continue };
        let mut argmax = 0;
        for i in 1..4 {
            if row.scores[i] > row.scores[argmax] {
                argmax = i;
            }
        }
        total += 1;
        if argmax == label.index() {
            correct += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Event};
    use crate::embeddings::HashFallback;

    fn provider(dim: usize) -> Provider {
        Provider::Hash(HashFallback { dim, seed: 0 })
    }

    fn paper_sentence_doc() -> Document {
        Document {
            id: "d1".into(),
            sentences: vec![
                "After eating dinner , he slept comfortably"
                    .split(' ')
                    .map(str::to_string)
                    .collect(),
            ],
            events: vec![
                Event { eid: "e1".into(), sent: 0, tok: 1, lemma: "eat".into() },
                Event { eid: "e2".into(), sent: 0, tok: 5, lemma: "sleep".into() },
            ],
        }
    }

    fn config(encoder: EncoderKind) -> ModelConfig {
        ModelConfig {
            encoder,
            lstm_hidden: 4,
            ffnn_hidden: 4,
            cse_bins: 10,
            cse_bin_dim: 3,
            max_tokens: 100,
            ..Default::default()
        }
    }

    #[test]
    fn pi_inserts_markers_around_both_events() {
        let doc = paper_sentence_doc();
        let (input, pos1, pos2) = build_input(
            &doc,
            doc.event("e1").unwrap(),
            doc.event("e2").unwrap(),
            &provider(3),
            &config(EncoderKind::Pi),
        )
        .unwrap();
        assert_eq!(input.len(), 7 + 4);
        // After <e1> eating </e1> dinner , he <e2> slept </e2> comfortably
        assert_eq!(input[1], InputRow::Marker(MARKER_E1_OPEN));
        assert_eq!(input[3], InputRow::Marker(MARKER_E1_CLOSE));
        assert_eq!(input[7], InputRow::Marker(MARKER_E2_OPEN));
        assert_eq!(input[9], InputRow::Marker(MARKER_E2_CLOSE));
        // positions still index the event tokens
        assert_eq!(pos1, 2);
        assert_eq!(pos2, 8);
        assert!(matches!(input[pos1], InputRow::Embedding(_)));
        assert!(matches!(input[pos2], InputRow::Embedding(_)));
    }

    #[test]
    fn concat_positions_are_token_indices() {
        let doc = paper_sentence_doc();
        let (input, pos1, pos2) = build_input(
            &doc,
            doc.event("e1").unwrap(),
            doc.event("e2").unwrap(),
            &provider(3),
            &config(EncoderKind::Concat),
        )
        .unwrap();
        assert_eq!(input.len(), 7);
        assert_eq!((pos1, pos2), (1, 5));
    }

    #[test]
    fn cross_sentence_offsets() {
        let doc = Document {
            id: "d".into(),
            sentences: vec![
                vec!["s0".into()],
                vec!["a".into(), "ran".into(), "b".into()],
                vec!["fell".into(), "c".into()],
                vec!["s3".into()],
            ],
            events: vec![
                Event { eid: "e1".into(), sent: 1, tok: 1, lemma: "run".into() },
                Event { eid: "e2".into(), sent: 2, tok: 0, lemma: "fall".into() },
            ],
        };
        let (input, pos1, pos2) = build_input(
            &doc,
            doc.event("e1").unwrap(),
            doc.event("e2").unwrap(),
            &provider(3),
            &config(EncoderKind::Concat),
        )
        .unwrap();
        // only sentences 1 and 2 are covered
        assert_eq!(input.len(), 5);
        assert_eq!((pos1, pos2), (1, 3));
    }

    #[test]
    fn truncation_keeps_both_events() {
        let mut sentence: Vec<String> = (0..300).map(|i| format!("t{i}")).collect();
        sentence[150] = "ev1".into();
        sentence[170] = "ev2".into();
        let doc = Document {
            id: "d".into(),
            sentences: vec![sentence],
            events: vec![
                Event { eid: "e1".into(), sent: 0, tok: 150, lemma: "a".into() },
                Event { eid: "e2".into(), sent: 0, tok: 170, lemma: "b".into() },
            ],
        };
        let cfg = config(EncoderKind::Concat);
        let (input, pos1, pos2) = build_input(
            &doc,
            doc.event("e1").unwrap(),
            doc.event("e2").unwrap(),
            &provider(3),
            &cfg,
        )
        .unwrap();
        assert_eq!(input.len(), cfg.max_tokens);
        assert_eq!(pos2 - pos1, 20);
        assert!(pos2 < cfg.max_tokens);
    }

    #[test]
    fn too_distant_events_error() {
        let sentence: Vec<String> = (0..300).map(|i| format!("t{i}")).collect();
        let doc = Document {
            id: "d".into(),
            sentences: vec![sentence],
            events: vec![
                Event { eid: "e1".into(), sent: 0, tok: 0, lemma: "a".into() },
                Event { eid: "e2".into(), sent: 0, tok: 299, lemma: "b".into() },
            ],
        };
        assert!(matches!(
            build_input(
                &doc,
                doc.event("e1").unwrap(),
                doc.event("e2").unwrap(),
                &provider(3),
                &config(EncoderKind::Concat),
            ),
            Err(ModelError::EventsTooFar { span: 300, .. })
        ));
    }

    #[test]
    fn representation_lengths() {
        let doc = paper_sentence_doc();
        for h in [1usize, 2, 4, 64] {
            for (encoder, factor) in [(EncoderKind::Concat, 4), (EncoderKind::Pi, 2)] {
                let mut cfg = config(encoder);
                cfg.lstm_hidden = h;
                let model = PairClassifier::new(cfg, 3, 0);
                let (input, p1, p2) = build_input(
                    &doc,
                    doc.event("e1").unwrap(),
                    doc.event("e2").unwrap(),
                    &provider(3),
                    &cfg,
                )
                .unwrap();
                assert_eq!(model.encode_pair(&input, p1, p2).len(), factor * h);
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_representation_and_uniform_scores() {
        let doc = paper_sentence_doc();
        for encoder in [EncoderKind::Concat, EncoderKind::Pi] {
            let cfg = config(encoder);
            let mut model = PairClassifier::new(cfg, 3, 0);
            for p in &mut model.params.params {
                p.value.fill(0.0);
            }
            let (input, p1, p2) = build_input(
                &doc,
                doc.event("e1").unwrap(),
                doc.event("e2").unwrap(),
                &provider(3),
                &cfg,
            )
            .unwrap();
            let rep = model.encode_pair(&input, p1, p2);
            assert!(rep.iter().all(|&x| x == 0.0));
            let scores = model.score_labels(&rep, Some(3)).unwrap();
            for s in scores {
                assert!((s - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scores_form_a_simplex_point() {
        let model = PairClassifier::new(config(EncoderKind::Concat), 3, 1);
        let rep: Vec<f64> = (0..16).map(|i| (i as f64) * 0.1 - 0.8).collect();
        let scores = model.score_labels(&rep, Some(0)).unwrap();
        let sum: f64 = scores.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(scores.iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn bin_out_of_range_rejected_and_bins_change_logits() {
        let model = PairClassifier::new(config(EncoderKind::Concat), 3, 5);
        let rep = vec![0.1; 16];
        assert!(matches!(
            model.score_labels(&rep, Some(10)),
            Err(ModelError::BinOutOfRange { bin: 10, bins: 10 })
        ));
        let a = model.score_labels(&rep, Some(0)).unwrap();
        let b = model.score_labels(&rep, Some(7)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn checkpoint_round_trip_preserves_scores() {
        let model = PairClassifier::new(config(EncoderKind::Pi), 3, 8);
        let ckpt = model.checkpoint(8);
        let f = tempfile::NamedTempFile::new().unwrap();
        ckpt.save(f.path()).unwrap();
        let restored =
            PairClassifier::from_checkpoint(&Checkpoint::load(f.path(), "classifier").unwrap())
                .unwrap();
        let rep = vec![0.2; 8];
        assert_eq!(
            model.score_labels(&rep, Some(2)).unwrap(),
            restored.score_labels(&rep, Some(2)).unwrap()
        );
    }
}
