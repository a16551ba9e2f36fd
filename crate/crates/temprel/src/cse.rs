//! Common-sense encoder: a Siamese network fit to (verb1, verb2, relation)
//! frequency records. Both branches share one verb embedding table and one
//! branch FFNN; the combiner emits a single logit whose sigmoid is the
//! probability that verb1 starts before verb2. The scalar is discretized
//! into a categorical bin for the pair classifier.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::neural::{
    seeded_rng, sigmoid, init_uniform, ffnn_forward, Checkpoint, CheckpointError, FfnnParams,
    ParamSet, Tape, Tensor, TrainConfig, AdamState, clip_global_norm, step_lr, Var,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemProbEntry {
    pub v1: String,
    pub v2: String,
    pub r: Label,
    pub count: u64,
}

#[derive(Debug, Clone, Default)]
pub struct TemProbTable {
    pub entries: Vec<TemProbEntry>,
    counts: HashMap<(String, String, Label), u64>,
}

#[derive(Debug, Error)]
pub enum CseError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected 4 tab-separated fields, found {found}")]
    BadRecord { line: usize, found: usize },
    #[error("line {line}: bad label {label:?}")]
    BadLabel { line: usize, label: String },
    #[error("line {line}: bad count {count:?}")]
    BadCount { line: usize, count: String },
    #[error("line {line}: duplicate tuple ({v1:?}, {v2:?}, {r})")]
    DuplicateTuple {
        line: usize,
        v1: String,
        v2: String,
        r: Label,
    },
    #[error("no pair in the table has BEFORE/AFTER mass to train on")]
    NoTrainablePairs,
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("bad checkpoint payload: {0}")]
    BadCheckpoint(String),
}

impl TemProbTable {
    pub fn from_entries(entries: Vec<TemProbEntry>) -> Result<TemProbTable, CseError> {
        let mut table = TemProbTable::default();
        for (i, e) in entries.into_iter().enumerate() {
            table.insert(e, i + 1)?;
        }
        Ok(table)
    }

    fn insert(&mut self, e: TemProbEntry, line: usize) -> Result<(), CseError> {
        let key = (e.v1.clone(), e.v2.clone(), e.r);
        if self.counts.contains_key(&key) {
            return Err(CseError::DuplicateTuple {
                line,
                v1: e.v1,
                v2: e.v2,
                r: e.r,
            });
        }
        self.counts.insert(key, e.count);
        self.entries.push(e);
        Ok(())
    }

    pub fn count(&self, v1: &str, v2: &str, r: Label) -> u64 {
        self.counts
            .get(&(v1.to_string(), v2.to_string(), r))
            .copied()
            .unwrap_or(0)
    }

    /// All lemmas appearing in the table, sorted.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut vocab: Vec<String> = self
            .entries
            .iter()
            .flat_map(|e| [e.v1.clone(), e.v2.clone()])
            .collect();
        vocab.sort();
        vocab.dedup();
        vocab
    }

    /// Ordered (v1, v2) pairs present in the table, sorted.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut pairs: Vec<(String, String)> = self
            .entries
            .iter()
            .map(|e| (e.v1.clone(), e.v2.clone()))
            .collect();
        pairs.sort();
        pairs.dedup();
        pairs
    }
}

/// TSV lines "v1<TAB>v2<TAB>label<TAB>count".
pub fn load_temprob(path: impl AsRef<Path>) -> Result<TemProbTable, CseError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut table = TemProbTable::default();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(CseError::BadRecord {
                line: lineno,
                found: fields.len(),
            });
        }
        let r = Label::parse(fields[2]).ok_or_else(|| CseError::BadLabel {
            line: lineno,
            label: fields[2].to_string(),
        })?;
        let count: u64 = fields[3].parse().map_err(|_| CseError::BadCount {
            line: lineno,
            count: fields[3].to_string(),
        })?;
        table.insert(
            TemProbEntry {
                v1: fields[0].to_string(),
                v2: fields[1].to_string(),
                r,
                count,
            },
            lineno,
        )?;
    }
    Ok(table)
}

/// count(BEFORE) / (count(BEFORE) + count(AFTER)); None when the pair has
/// no BEFORE/AFTER mass.
pub fn target_before_prob(table: &TemProbTable, v1: &str, v2: &str) -> Option<f64> {
    let b = table.count(v1, v2, Label::Before);
    let a = table.count(v1, v2, Label::After);
    if b + a == 0 {
        None
    } else {
        Some(b as f64 / (b + a) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CseConfig {
    pub emb_dim: usize,
    pub branch_hidden: usize,
    pub combiner_hidden: usize,
}

impl Default for CseConfig {
    fn default() -> Self {
        CseConfig {
            emb_dim: 64,
            branch_hidden: 32,
            combiner_hidden: 32,
        }
    }
}

/// Paper default training schedule for the encoder.
pub fn default_cse_train() -> TrainConfig {
    TrainConfig {
        lr: 1e-4,
        epochs: 20,
        batch_size: 500,
        ..Default::default()
    }
}

#[derive(Debug, Clone)]
pub struct SiameseModel {
    pub config: CseConfig,
    pub params: ParamSet,
    vocab: Vec<String>,
    vocab_index: HashMap<String, usize>,
    emb: usize, // (vocab + 1) x emb_dim; last row is UNK
    branch_w: usize,
    branch_b: usize,
    combiner: FfnnParams,
}

impl SiameseModel {
    pub fn new(vocab: Vec<String>, config: CseConfig, seed: u64) -> SiameseModel {
        let mut rng = seeded_rng(seed);
        let mut params = ParamSet::new();
        let emb = params.add(
            "cse.emb",
            init_uniform(&[vocab.len() + 1, config.emb_dim], config.emb_dim, &mut rng),
        );
        let branch_w = params.add(
            "cse.branch.w",
            init_uniform(&[config.branch_hidden, config.emb_dim], config.emb_dim, &mut rng),
        );
        let branch_b = params.add("cse.branch.b", Tensor::zeros(&[config.branch_hidden]));
        let combiner = FfnnParams::init(
            &mut params,
            "cse.combiner",
            2 * config.branch_hidden,
            config.combiner_hidden,
            1,
            &mut rng,
        );
        let vocab_index = vocab
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i))
            .collect();
        SiameseModel {
            config,
            params,
            vocab,
            vocab_index,
            emb,
            branch_w,
            branch_b,
            combiner,
        }
    }

    fn lemma_row(&self, lemma: &str) -> usize {
        self.vocab_index
            .get(lemma)
            .copied()
            .unwrap_or(self.vocab.len())
    }

    /// Builds the combiner logit for (v1, v2) as embedding rows.
    fn forward_logit(&self, tape: &mut Tape, row1: usize, row2: usize) -> Var {
        let branch = |tape: &mut Tape, model: &SiameseModel, row: usize| {
            let e = tape.param_row(&model.params, model.emb, row);
            let w = tape.param(&model.params, model.branch_w);
            let b = tape.param(&model.params, model.branch_b);
            let z = tape.matvec(w, e);
            let zb = tape.add(z, b);
            tape.tanh(zb)
        };
        let b1 = branch(tape, self, row1);
        let b2 = branch(tape, self, row2);
        let joined = tape.concat(&[b1, b2]);
        let logit = ffnn_forward(tape, &self.params, &self.combiner, joined);
        tape.slice(logit, 0, 1)
    }

    /// Weighted binary cross-entropy for one lemma pair on an external
    /// tape; mirrors the training loss term so gradients can be validated
    /// end to end from outside this module.
    pub fn pair_loss(&self, tape: &mut Tape, v1: &str, v2: &str, target: f64, weight: f64) -> Var {
        let logit = self.forward_logit(tape, self.lemma_row(v1), self.lemma_row(v2));
        tape.sigmoid_bce(logit, target, weight)
    }

    /// Sigmoid of the combiner logit; unknown lemmas use the UNK row.
    pub fn cse_score(&self, v1: &str, v2: &str) -> f64 {
        let mut tape = Tape::new();
        let logit = self.forward_logit(&mut tape, self.lemma_row(v1), self.lemma_row(v2));
        sigmoid(tape.value(logit).item())
    }

    pub fn checkpoint(&self, seed: u64) -> Checkpoint {
        let hyper = serde_json::json!({
            "config": self.config,
            "vocab": self.vocab,
        });
        Checkpoint::from_params("cse", seed, hyper, &self.params)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<SiameseModel, CseError> {
        let config: CseConfig = serde_json::from_value(ckpt.hyper["config"].clone())
            .map_err(|e| CseError::BadCheckpoint(e.to_string()))?;
        let vocab: Vec<String> = serde_json::from_value(ckpt.hyper["vocab"].clone())
            .map_err(|e| CseError::BadCheckpoint(e.to_string()))?;
        let mut model = SiameseModel::new(vocab, config, ckpt.seed);
        let params = ckpt.to_params()?;
        if params.params.len() != model.params.params.len() {
            return Err(CseError::BadCheckpoint(format!(
                "expected {} parameters, found {}",
                model.params.params.len(),
                params.params.len()
            )));
        }
        model.params = params;
        Ok(model)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CseEpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

struct PairExample {
    row1: usize,
    row2: usize,
    target: f64,
    weight: f64,
}

/// Trains the Siamese encoder on every (v1, v2) pair with BEFORE/AFTER
/// mass, weighted by that mass, against weighted binary cross-entropy.
/// Pairs are split 80/20 into train/validation by the seed; the checkpoint
/// with the best validation loss is returned (ties go to the earlier epoch).
pub fn train_cse(
    table: &TemProbTable,
    config: CseConfig,
    train_cfg: TrainConfig,
) -> Result<(SiameseModel, Vec<CseEpochStats>), CseError> {
    let vocab = table.vocabulary();
    let mut model = SiameseModel::new(vocab, config, train_cfg.seed);
    let mut pairs: Vec<(String, String, f64, f64)> = table
        .pairs()
        .into_iter()
        .filter_map(|(v1, v2)| {
            target_before_prob(table, &v1, &v2).map(|t| {
                let w = (table.count(&v1, &v2, Label::Before)
                    + table.count(&v1, &v2, Label::After)) as f64;
                (v1, v2, t, w)
            })
        })
        .collect();
    if pairs.is_empty() {
        return Err(CseError::NoTrainablePairs);
    }

    let mut rng = seeded_rng(train_cfg.seed);
    pairs.shuffle(&mut rng);
    let n_val = pairs.len() / 5;
    let to_example = |(v1, v2, target, weight): &(String, String, f64, f64)| PairExample {
        row1: model.lemma_row(v1),
        row2: model.lemma_row(v2),
        target: *target,
        weight: *weight,
    };
    let val: Vec<PairExample> = pairs[..n_val].iter().map(to_example).collect();
    let mut train: Vec<PairExample> = pairs[n_val..].iter().map(to_example).collect();

    let mut adam = AdamState::new(&model.params);
    let mut history = Vec::new();
    let mut best: Option<(f64, ParamSet)> = None;
    for epoch in 0..train_cfg.epochs {
        let lr = step_lr(&train_cfg, epoch);
        train.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_weight = 0.0;
        for batch in train.chunks(train_cfg.batch_size.max(1)) {
            model.params.zero_grad();
            let mut tape = Tape::new();
            let total_weight: f64 = batch.iter().map(|e| e.weight).sum();
            let mut losses = Vec::with_capacity(batch.len());
            for ex in batch {
                let logit = model.forward_logit(&mut tape, ex.row1, ex.row2);
                losses.push(tape.sigmoid_bce(logit, ex.target, ex.weight));
            }
            let total = tape.sum(&losses);
            let loss = tape.scale(total, 1.0 / total_weight.max(f64::MIN_POSITIVE));
            epoch_loss += tape.value(total).item();
            epoch_weight += total_weight;
            tape.backward(loss, &mut model.params);
            clip_global_norm(&mut model.params, 5.0);
            adam.step(&mut model.params, lr);
        }
        let train_loss = epoch_loss / epoch_weight.max(f64::MIN_POSITIVE);
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            weighted_loss(&model, &val)
        };
        history.push(CseEpochStats {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        let improved = match &best {
            None => true,
            Some((b, _)) => val_loss < *b,
        };
        if improved {
            best = Some((val_loss, model.params.clone()));
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, history))
}

fn weighted_loss(model: &SiameseModel, examples: &[PairExample]) -> f64 {
    let mut total = 0.0;
    let mut weight = 0.0;
    for ex in examples {
        let mut tape = Tape::new();
        let logit = model.forward_logit(&mut tape, ex.row1, ex.row2);
        let loss = tape.sigmoid_bce(logit, ex.target, ex.weight);
        total += tape.value(loss).item();
        weight += ex.weight;
    }
    total / weight.max(f64::MIN_POSITIVE)
}

/// Writes the TSV format accepted by [`load_temprob`].
pub fn save_temprob(table: &TemProbTable, path: impl AsRef<Path>) -> Result<(), CseError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in &table.entries {
        writeln!(out, "{}\t{}\t{}\t{}", e.v1, e.v2, e.r.as_str(), e.count)?;
    }
    out.flush()?;
    Ok(())
}

/// floor(score * n_bins) clamped to n_bins - 1.
pub fn discretize(score: f64, n_bins: usize) -> Result<usize, CseError> {
    assert!(n_bins >= 2, "need at least 2 bins");
    if !(0.0..=1.0).contains(&score) {
        return Err(CseError::BadCheckpoint(format!(
            "score {score} outside [0, 1]"
        )));
    }
    Ok(((score * n_bins as f64) as usize).min(n_bins - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::grad_check;


    fn toy_table() -> TemProbTable {
        TemProbTable::from_entries(vec![
            TemProbEntry {
                v1: "explode".into(),
                v2: "die".into(),
                r: Label::Before,
                count: 80,
            },
            TemProbEntry {
                v1: "explode".into(),
                v2: "die".into(),
                r: Label::After,
                count: 20,
            },
        ])
        .unwrap()
    }

    #[test]
    fn tsv_loads_and_vocab_is_derived() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "explode\tdie\tBEFORE\t80").unwrap();
        writeln!(f, "explode\tdie\tAFTER\t20").unwrap();
        let t = load_temprob(f.path()).unwrap();
        assert_eq!(t.entries.len(), 2);
        assert_eq!(t.vocabulary(), vec!["die".to_string(), "explode".to_string()]);
    }

    #[test]
    fn duplicate_tuple_names_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a\tb\tBEFORE\t1").unwrap();
        writeln!(f, "a\tb\tBEFORE\t2").unwrap();
        match load_temprob(f.path()) {
            Err(CseError::DuplicateTuple { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected duplicate tuple, got {other:?}"),
        }
    }

    #[test]
    fn bad_label_and_count_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a\tb\tSOMETIME\t1").unwrap();
        assert!(matches!(
            load_temprob(f.path()),
            Err(CseError::BadLabel { .. })
        ));
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a\tb\tBEFORE\t-5").unwrap();
        assert!(matches!(
            load_temprob(f.path()),
            Err(CseError::BadCount { .. })
        ));
    }

    #[test]
    fn empty_file_is_a_valid_empty_table() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let t = load_temprob(f.path()).unwrap();
        assert!(t.entries.is_empty());
        assert!(matches!(
            train_cse(&t, CseConfig::default(), TrainConfig::default()),
            Err(CseError::NoTrainablePairs)
        ));
    }

    #[test]
    fn before_prob_arithmetic() {
        let t = toy_table();
        assert_eq!(target_before_prob(&t, "explode", "die"), Some(0.8));
        assert_eq!(target_before_prob(&t, "die", "explode"), None);
        let even = TemProbTable::from_entries(vec![
            TemProbEntry { v1: "a".into(), v2: "b".into(), r: Label::Before, count: 5 },
            TemProbEntry { v1: "a".into(), v2: "b".into(), r: Label::After, count: 5 },
        ])
        .unwrap();
        assert_eq!(target_before_prob(&even, "a", "b"), Some(0.5));
    }

    #[test]
    fn zero_weight_model_scores_half() {
        let mut model = SiameseModel::new(vec!["a".into(), "b".into()], CseConfig::default(), 0);
        for p in &mut model.params.params {
            p.value.fill(0.0);
        }
        assert_eq!(model.cse_score("a", "b"), 0.5);
    }

    #[test]
    fn unseen_lemmas_score_in_open_interval() {
        let model = SiameseModel::new(vec!["a".into()], CseConfig::default(), 1);
        let s = model.cse_score("neverseen", "alsonew");
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn zero_epochs_returns_initialized_model() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (trained, history) = train_cse(&toy_table(), CseConfig::default(), cfg).unwrap();
        let fresh = SiameseModel::new(toy_table().vocabulary(), CseConfig::default(), cfg.seed);
        assert!(history.is_empty());
        for (a, b) in trained.params.params.iter().zip(&fresh.params.params) {
            assert_eq!(a.value.data, b.value.data);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let small = CseConfig {
            emb_dim: 8,
            branch_hidden: 4,
            combiner_hidden: 4,
        };
        let (_, h1) = train_cse(&toy_table(), small, cfg).unwrap();
        let (_, h2) = train_cse(&toy_table(), small, cfg).unwrap();
        for (a, b) in h1.iter().zip(&h2) {
            assert_eq!(a.val_loss.to_bits(), b.val_loss.to_bits());
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
        }
    }

    #[test]
    fn gradient_flows_into_both_branches() {
        let model = SiameseModel::new(vec!["a".into(), "b".into()], CseConfig::default(), 2);
        let mut params = model.params.clone();
        params.zero_grad();
        let mut tape = Tape::new();
        let logit = model.forward_logit(&mut tape, 0, 1);
        let loss = tape.sigmoid_bce(logit, 1.0, 1.0);
        tape.backward(loss, &mut params);
        let emb_grad = &params.params[model.emb].grad;
        let row_norm = |r: usize| emb_grad.row(r).iter().map(|x| x * x).sum::<f64>();
        assert!(row_norm(0) > 0.0);
        assert!(row_norm(1) > 0.0);
    }

    #[test]
    fn siamese_loss_gradient_check() {
        let small = CseConfig {
            emb_dim: 6,
            branch_hidden: 4,
            combiner_hidden: 4,
        };
        let model = SiameseModel::new(vec!["a".into(), "b".into(), "c".into()], small, 3);
        let mut params = model.params.clone();
        let model_ref = &model;
        let err = grad_check(
            &mut params,
            |ps, accumulate| {
                let probe = SiameseModel {
                    params: ps.clone(),
                    ..model_ref.clone()
                };
                let mut tape = Tape::new();
                let l1 = probe.forward_logit(&mut tape, 0, 1);
                let loss1 = tape.sigmoid_bce(l1, 0.8, 2.0);
                let l2 = probe.forward_logit(&mut tape, 2, 3); // includes UNK row
                let loss2 = tape.sigmoid_bce(l2, 0.1, 1.0);
                let loss = tape.sum(&[loss1, loss2]);
                let value = tape.value(loss).item();
                if accumulate {
                    tape.backward(loss, ps);
                }
                value
            },
            1e-5,
        );
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn discretize_bins() {
        assert_eq!(discretize(0.0, 10).unwrap(), 0);
        assert_eq!(discretize(1.0, 10).unwrap(), 9);
        assert_eq!(discretize(0.35, 10).unwrap(), 3);
        assert!(discretize(1.5, 10).is_err());
        // monotone, all bins reachable
        let mut prev = 0;
        let mut seen = std::collections::HashSet::new();
        for i in 0..=1000 {
            let b = discretize(i as f64 / 1000.0, 10).unwrap();
            assert!(b >= prev);
            prev = b;
            seen.insert(b);
        }
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn checkpoint_round_trip() {
        let small = CseConfig {
            emb_dim: 4,
            branch_hidden: 3,
            combiner_hidden: 3,
        };
        let model = SiameseModel::new(vec!["x".into(), "y".into()], small, 9);
        let ckpt = model.checkpoint(9);
        let f = tempfile::NamedTempFile::new().unwrap();
        ckpt.save(f.path()).unwrap();
        let restored = SiameseModel::from_checkpoint(&Checkpoint::load(f.path(), "cse").unwrap())
            .unwrap();
        assert_eq!(model.cse_score("x", "y"), restored.cse_score("x", "y"));
        assert_eq!(model.cse_score("q", "y"), restored.cse_score("q", "y"));
    }
}
