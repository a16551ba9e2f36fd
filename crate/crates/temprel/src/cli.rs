//! Command-line surface: each subcommand reads a JSON config (plus
//! `--set key=value` overrides), runs one pipeline stage, and writes its
//! artifacts into the configured output directory. Exit codes: 0 success,
//! 2 config error, 3 data error, 4 runtime error.

use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{echo_config, parse_config, with_overrides, ConfigError, GraphOp, RunConfig};
use crate::corpus::{corpus_stats, load_corpus, split_dev, Corpus, CorpusError, Label};
use crate::cse::{load_temprob, train_cse, CseError, SiameseModel};
use crate::inference::{verify_transitivity, Assignment, ConfidenceRow, ConfidenceTable};
use crate::metrics::{confusion, eval_report, mcnemar, EvalReport, MetricsError};
use crate::model::{train, ModelError, PairClassifier};
use crate::neural::{Checkpoint, CheckpointError};
use crate::tempgraph::{closure, is_consistent, load_graph, reduce, save_graph, GraphError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Corpus(#[from] CorpusError),
    #[error("{0}")]
    Cse(#[from] CseError),
    #[error("{0}")]
    Graph(#[from] GraphError),
    #[error("{0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Metrics(#[from] MetricsError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: bad prediction record: {msg}")]
    BadPrediction {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("prediction files disagree on instances at {0:?}")]
    MismatchedPredictions(PathBuf),
}

impl CliError {
    /// 2 config, 3 data, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Corpus(_)
            | CliError::Cse(CseError::Io(_))
            | CliError::Cse(CseError::BadRecord { .. })
            | CliError::Cse(CseError::BadLabel { .. })
            | CliError::Cse(CseError::BadCount { .. })
            | CliError::Cse(CseError::DuplicateTuple { .. })
            | CliError::Graph(_)
            | CliError::BadPrediction { .. }
            | CliError::MismatchedPredictions(_)
            | CliError::Checkpoint(_) => 3,
            _ => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "temprel", about = "Event-pair temporal relation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// JSON run configuration
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config key, e.g. --set lstm_hidden=32 or --set embeddings.dim=50
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the common-sense encoder on a verb co-occurrence table
    TrainCse(CommonArgs),
    /// Train the pair classifier
    Train(CommonArgs),
    /// Score event pairs with a trained classifier
    Predict(CommonArgs),
    /// Re-label predictions with exact global inference
    Infer(CommonArgs),
    /// Score a prediction file against gold labels
    Evaluate(CommonArgs),
    /// McNemar's test between two prediction files
    Compare(CommonArgs),
    /// Closure / reduction / consistency check of a temporal graph dump
    Graph(CommonArgs),
    /// Corpus summary counts
    Stats(CommonArgs),
    /// Run every grid entry end to end and emit a combined results table
    Grid(CommonArgs),
}

/// One line of a prediction file. Score keys serialize in label order.
#[derive(Debug, Serialize, Deserialize)]
struct PredictionLine {
    doc: String,
    src: String,
    dst: String,
    scores: PredictionScores,
    label: Label,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionScores {
    #[serde(rename = "BEFORE")]
    before: f64,
    #[serde(rename = "AFTER")]
    after: f64,
    #[serde(rename = "EQUAL")]
    equal: f64,
    #[serde(rename = "VAGUE")]
    vague: f64,
}

pub fn save_predictions(
    path: impl AsRef<Path>,
    table: &ConfidenceTable,
    label_of: impl Fn(&ConfidenceRow) -> Label,
) -> Result<(), CliError> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for row in &table.rows {
        let line = PredictionLine {
            doc: row.doc_id.clone(),
            src: row.src.clone(),
            dst: row.dst.clone(),
            scores: PredictionScores {
                before: row.scores[0],
                after: row.scores[1],
                equal: row.scores[2],
                vague: row.scores[3],
            },
            label: label_of(row),
        };
        serde_json::to_writer(&mut out, &line).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

type LabelMap = BTreeMap<(String, String, String), Label>;

pub fn load_predictions(path: impl AsRef<Path>) -> Result<(ConfidenceTable, LabelMap), CliError> {
    let path = path.as_ref();
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut table = ConfidenceTable::default();
    let mut labels = LabelMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionLine =
            serde_json::from_str(&line).map_err(|e| CliError::BadPrediction {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        table.rows.push(ConfidenceRow {
            doc_id: rec.doc.clone(),
            src: rec.src.clone(),
            dst: rec.dst.clone(),
            scores: [
                rec.scores.before,
                rec.scores.after,
                rec.scores.equal,
                rec.scores.vague,
            ],
        });
        labels.insert((rec.doc, rec.src, rec.dst), rec.label);
    }
    table.sort();
    Ok((table, labels))
}

fn load_required_corpus(
    config: &RunConfig,
    field: &Option<PathBuf>,
    name: &'static str,
) -> Result<Corpus, CliError> {
    let path = config.require(field.as_ref(), name)?;
    Ok(load_corpus(path)?)
}

/// The corpus a prediction-side command scores against: `eval_corpus` when
/// set, else the training corpus.
fn eval_corpus(config: &RunConfig) -> Result<Corpus, CliError> {
    if config.eval_corpus.is_some() {
        load_required_corpus(config, &config.eval_corpus, "eval_corpus")
    } else {
        load_required_corpus(config, &config.corpus, "corpus")
    }
}

fn load_cse(config: &RunConfig) -> Result<Option<SiameseModel>, CliError> {
    if !config.use_cse {
        return Ok(None);
    }
    let path = config.artifact(&config.cse_checkpoint);
    let ckpt = Checkpoint::load(path, "cse")?;
    Ok(Some(SiameseModel::from_checkpoint(&ckpt)?))
}

fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::from)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_stats(config: &RunConfig, out: &mut impl Write) -> Result<(), CliError> {
    let corpus = load_required_corpus(config, &config.corpus, "corpus")?;
    let stats = corpus_stats(&corpus);
    writeln!(out, "({}, {}, {})", stats.n_docs, stats.n_events, stats.n_relations)?;
    for (label, n) in &stats.label_histogram {
        writeln!(out, "{label}: {n}")?;
    }
    Ok(())
}

fn cmd_train_cse(config: &RunConfig, out: &mut impl Write) -> Result<(), CliError> {
    let table = load_temprob(config.require(config.temprob.as_ref(), "temprob")?)?;
    let (model, history) = train_cse(&table, config.cse_config(), config.cse_train_config())?;
    std::fs::create_dir_all(&config.output_dir)?;
    let ckpt_path = config.artifact(&config.cse_checkpoint);
    model.checkpoint(config.seed).save(&ckpt_path)?;
    write_json(config.output_dir.join("cse-history.json"), &history)?;
    if let Some(last) = history.last() {
        writeln!(
            out,
            "cse trained: {} epochs, final val loss {:.6}",
            history.len(),
            last.val_loss
        )?;
    }
    writeln!(out, "checkpoint: {}", ckpt_path.display())?;
    Ok(())
}

fn cmd_train(config: &RunConfig, out: &mut impl Write) -> Result<(), CliError> {
    let corpus = load_required_corpus(config, &config.corpus, "corpus")?;
    let (train_set, dev_set) = split_dev(&corpus, config.dev_fraction, config.seed)?;
    let provider = config.provider()?;
    let cse = load_cse(config)?;
    let mut model = PairClassifier::new(config.model_config(), provider.dim(), config.seed);
    let history = train(&mut model, &train_set, &dev_set, &provider, cse.as_ref())?;
    std::fs::create_dir_all(&config.output_dir)?;
    let ckpt_path = config.artifact(&config.checkpoint);
    model.checkpoint(config.seed).save(&ckpt_path)?;
    write_json(config.output_dir.join("train-history.json"), &history)?;
    if let Some(best) = history
        .iter()
        .max_by(|a, b| a.dev_accuracy.partial_cmp(&b.dev_accuracy).unwrap())
    {
        writeln!(
            out,
            "trained {} epochs; best dev accuracy {:.4} at epoch {}",
            history.len(),
            best.dev_accuracy,
            best.epoch
        )?;
    }
    writeln!(out, "checkpoint: {}", ckpt_path.display())?;
    Ok(())
}

fn cmd_predict(config: &RunConfig, out: &mut impl Write) -> Result<(), CliError> {
    let corpus = eval_corpus(config)?;
    let provider = config.provider()?;
    let cse = load_cse(config)?;
    let ckpt = Checkpoint::load(config.artifact(&config.checkpoint), "classifier")?;
    let model = PairClassifier::from_checkpoint(&ckpt)?;
    let table = model.predict(&corpus, &provider, cse.as_ref())?;
    std::fs::create_dir_all(&config.output_dir)?;
    let path = config.artifact(&config.predictions);
    save_predictions(&path, &table, argmax_label)?;
    writeln!(out, "{} predictions: {}", table.rows.len(), path.display())?;
    Ok(())
}

fn argmax_label(row: &ConfidenceRow) -> Label {
    let mut best = 0;
    for i in 1..4 {
        if row.scores[i] > row.scores[best] {
            best = i;
        }
    }
    Label::from_index(best)
}

#[derive(Debug, Serialize)]
struct ObjectiveReport {
    objective: f64,
    per_doc_objective: BTreeMap<String, f64>,
    violations: usize,
}

fn cmd_infer(config: &RunConfig, out: &mut impl Write) -> Result<(), CliError> {
    let (table, _) = load_predictions(config.artifact(&config.predictions))?;
    let objective_table = if config.log_scores {
        let mut t = table.clone();
        for row in &mut t.rows {
            for s in &mut row.scores {
                *s = s.max(1e-300).ln();
            }
        }
        t
    } else {
        table.clone()
    };
    let assignment = crate::inference::ilp_infer(&objective_table);
    let violations = verify_transitivity(&assignment);
    std::fs::create_dir_all(&config.output_dir)?;
    let path = config.artifact(&config.inferred);
    save_predictions(&path, &table, |row| {
        assignment
            .label(&row.doc_id, &row.src, &row.dst)
            .expect("assignment covers every input pair")
    })?;
    write_json(
        config.output_dir.join("objective.json"),
        &ObjectiveReport {
            objective: assignment.objective,
            per_doc_objective: assignment.per_doc_objective.clone(),
            violations: violations.len(),
        },
    )?;
    writeln!(
        out,
        "objective {:.6}; {} transitivity violations; {}",
        assignment.objective,
        violations.len(),
        path.display()
    )?;
    Ok(())
}

fn gold_triples(corpus: &Corpus) -> Vec<(String, String, String, Label)> {
    let mut triples: Vec<_> = corpus
        .labeled()
        .map(|(r, l)| (r.doc_id.clone(), r.src.clone(), r.dst.clone(), l))
        .collect();
    triples.sort();
    triples
}

fn assignment_from_labels(table: &ConfidenceTable, labels: &LabelMap) -> Assignment {
    let mut assignment = Assignment::default();
    for row in &table.rows {
        let key = (row.doc_id.clone(), row.src.clone(), row.dst.clone());
        let label = labels[&key];
        let gain = row.scores[label.index()];
        assignment.objective += gain;
        *assignment
            .per_doc_objective
            .entry(row.doc_id.clone())
            .or_default() += gain;
        assignment.labels.insert(key, label);
    }
    assignment
}

fn evaluate_predictions(
    corpus: &Corpus,
    table: &ConfidenceTable,
    labels: &LabelMap,
) -> Result<EvalReport, CliError> {
    let gold = gold_triples(corpus);
    let assignment = assignment_from_labels(table, labels);
    let m = confusion(&gold, &assignment)?;
    let pred_graphs = assignment.graphs();
    let mut gold_graphs: BTreeMap<String, crate::tempgraph::TemporalGraph> = BTreeMap::new();
    for (doc, src, dst, label) in &gold {
        gold_graphs
            .entry(doc.clone())
            .or_default()
            .set_edge(src, dst, *label)
            .expect("gold relations have distinct endpoints");
    }
    let graphs: Vec<_> = gold_graphs
        .into_iter()
        .map(|(doc, gold_graph)| {
            let pred_graph = pred_graphs.get(&doc).cloned().unwrap_or_default();
            (doc, gold_graph, pred_graph)
        })
        .collect();
    Ok(eval_report(&m, &graphs)?)
}

fn cmd_evaluate(config: &RunConfig, out: &mut impl Write) -> Result<(), CliError> {
    let corpus = eval_corpus(config)?;
    let (table, labels) = load_predictions(config.artifact(&config.predictions))?;
    let report = evaluate_predictions(&corpus, &table, &labels)?;
    std::fs::create_dir_all(&config.output_dir)?;
    write_json(config.artifact(&config.report), &report)?;
    writeln!(
        out,
        "acc={:.1} f1={:.1} f_aware={:.1} avg={:.1}",
        report.acc, report.f1, report.f_aware, report.avg
    )?;
    Ok(())
}

fn cmd_compare(config: &RunConfig, out: &mut impl Write) -> Result<(), CliError> {
    let corpus = eval_corpus(config)?;
    let path_a = config.require(config.compare_a.as_ref(), "compare_a")?;
    let path_b = config.require(config.compare_b.as_ref(), "compare_b")?;
    let (_, labels_a) = load_predictions(path_a)?;
    let (_, labels_b) = load_predictions(path_b)?;
    let gold = gold_triples(&corpus);
    let mut correct_a = Vec::with_capacity(gold.len());
    let mut correct_b = Vec::with_capacity(gold.len());
    for (doc, src, dst, label) in &gold {
        let key = (doc.clone(), src.clone(), dst.clone());
        let a = labels_a
            .get(&key)
            .ok_or_else(|| CliError::MismatchedPredictions(path_a.clone()))?;
        let b = labels_b
            .get(&key)
            .ok_or_else(|| CliError::MismatchedPredictions(path_b.clone()))?;
        correct_a.push(a == label);
        correct_b.push(b == label);
    }
    let report = mcnemar(&correct_a, &correct_b)?;
    std::fs::create_dir_all(&config.output_dir)?;
    write_json(config.output_dir.join("compare.json"), &report)?;
    writeln!(
        out,
        "mcnemar: statistic={:.6} p={:.6} n={}",
        report.statistic, report.p, report.n
    )?;
    Ok(())
}

fn cmd_graph(config: &RunConfig, out: &mut impl Write) -> Result<(), CliError> {
    let graph = load_graph(config.require(config.graph.as_ref(), "graph")?)?;
    match config.graph_op {
        GraphOp::Check => {
            writeln!(
                out,
                "consistent: {}",
                if is_consistent(&graph) { "true" } else { "false" }
            )?;
        }
        GraphOp::Closure | GraphOp::Reduce => {
            let result = match config.graph_op {
                GraphOp::Closure => closure(&graph),
                _ => reduce(&graph),
            }
            .map_err(GraphError::Inconsistent)?;
            std::fs::create_dir_all(&config.output_dir)?;
            let default_out = PathBuf::from("graph-out.json");
            let path = config.artifact(config.graph_out.as_deref().unwrap_or(&default_out));
            save_graph(&result, &path)?;
            writeln!(out, "{} edges: {}", result.edges().count(), path.display())?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct GridRow {
    name: String,
    acc: f64,
    f1: f64,
    f_aware: f64,
    avg: f64,
}

/// Runs each grid entry's full pipeline (optional CSE training, classifier
/// training, prediction, inference, evaluation) in a per-entry output
/// directory, then prints one results row per entry.
fn cmd_grid(config: &RunConfig, out: &mut impl Write) -> Result<(), CliError> {
    let entries = config.grid.clone().unwrap_or_default();
    if entries.is_empty() {
        return Err(ConfigError::MissingPath("grid").into());
    }
    let mut rows = Vec::new();
    for entry in &entries {
        let mut variant = with_overrides(config, &entry.overrides)?;
        variant.grid = None;
        variant.output_dir = config.output_dir.join(&entry.name);
        echo_config(&variant)?;
        if variant.use_cse {
            cmd_train_cse(&variant, out)?;
        }
        cmd_train(&variant, out)?;
        cmd_predict(&variant, out)?;
        {
            // inference reads the predict output and feeds evaluation
            let mut infer_cfg = variant.clone();
            cmd_infer(&infer_cfg, out)?;
            infer_cfg.predictions = infer_cfg.inferred.clone();
            cmd_evaluate(&infer_cfg, out)?;
        }
        let report_text = std::fs::read_to_string(variant.artifact(&variant.report))?;
        let report: serde_json::Value =
            serde_json::from_str(&report_text).map_err(std::io::Error::from)?;
        rows.push(GridRow {
            name: entry.name.clone(),
            acc: report["acc"].as_f64().unwrap_or(f64::NAN),
            f1: report["f1"].as_f64().unwrap_or(f64::NAN),
            f_aware: report["f_aware"].as_f64().unwrap_or(f64::NAN),
            avg: report["avg"].as_f64().unwrap_or(f64::NAN),
        });
    }
    std::fs::create_dir_all(&config.output_dir)?;
    write_json(config.output_dir.join("grid-report.json"), &rows)?;
    writeln!(out, "{:<24} {:>6} {:>6} {:>8} {:>6}", "system", "acc", "f1", "f_aware", "avg")?;
    for row in &rows {
        writeln!(
            out,
            "{:<24} {:>6.1} {:>6.1} {:>8.1} {:>6.1}",
            row.name, row.acc, row.f1, row.f_aware, row.avg
        )?;
    }
    Ok(())
}

/// Dispatches one parsed command, writing human-readable progress to `out`.
pub fn run(command: &Command, out: &mut impl Write) -> Result<(), CliError> {
    let args = match command {
        Command::TrainCse(a)
        | Command::Train(a)
        | Command::Predict(a)
        | Command::Infer(a)
        | Command::Evaluate(a)
        | Command::Compare(a)
        | Command::Graph(a)
        | Command::Stats(a)
        | Command::Grid(a) => a,
    };
    let config = parse_config(&args.config, &args.sets)?;
    echo_config(&config)?;
    match command {
        Command::TrainCse(_) => cmd_train_cse(&config, out),
        Command::Train(_) => cmd_train(&config, out),
        Command::Predict(_) => cmd_predict(&config, out),
        Command::Infer(_) => cmd_infer(&config, out),
        Command::Evaluate(_) => cmd_evaluate(&config, out),
        Command::Compare(_) => cmd_compare(&config, out),
        Command::Graph(_) => cmd_graph(&config, out),
        Command::Stats(_) => cmd_stats(&config, out),
        Command::Grid(_) => cmd_grid(&config, out),
    }
}

/// Binary entry point: parse, run, map errors to exit codes with one
/// machine-readable error line on stderr.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    let mut out = std::io::stdout();
    match run(&cli.command, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            let line = serde_json::json!({"error": e.to_string(), "exit_code": e.exit_code()});
            eprintln!("{line}");
            e.exit_code()
        }
    }
}
