//! Evaluation: classification accuracy, precision/recall/F1 with VAGUE
//! treated as "no relation", the temporal awareness score over closed and
//! reduced graphs, their average, and significance tests (McNemar's test
//! and the paired t-test).

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::corpus::Label;
use crate::inference::Assignment;
use crate::tempgraph::{closure, reduce, Inconsistency, TemporalGraph};

/// 4x4 counts, rows gold, columns predicted, label order (b, a, e, v).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 4]; 4],
}

impl ConfusionMatrix {
    pub fn add(&mut self, gold: Label, pred: Label) {
        self.counts[gold.index()][pred.index()] += 1;
    }

    /// Total count.
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Predictions with a non-VAGUE label (columns b, a, e).
    pub fn predicted_definite(&self) -> u64 {
        self.counts
            .iter()
            .map(|row| row[0] + row[1] + row[2])
            .sum()
    }

    /// Gold instances with a non-VAGUE label (rows b, a, e).
    pub fn gold_definite(&self) -> u64 {
        self.counts[0..3].iter().flatten().sum()
    }

    fn correct_definite(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1] + self.counts[2][2]
    }
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no prediction for gold pair ({doc:?}, {src:?}, {dst:?})")]
    MissingPrediction {
        doc: String,
        src: String,
        dst: String,
    },
    #[error("empty confusion matrix")]
    EmptyMatrix,
    #[error("correctness vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("paired t-test needs at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("inconsistent {side} graph for document {doc:?}: {report}")]
    InconsistentGraph {
        side: &'static str,
        doc: String,
        report: Inconsistency,
    },
}

/// Fills a confusion matrix from gold instances and a prediction
/// assignment. Gold triples are (doc_id, src, dst, label).
pub fn confusion(
    gold: &[(String, String, String, Label)],
    pred: &Assignment,
) -> Result<ConfusionMatrix, MetricsError> {
    let mut m = ConfusionMatrix::default();
    for (doc, src, dst, gold_label) in gold {
        let predicted =
            pred.label(doc, src, dst)
                .ok_or_else(|| MetricsError::MissingPrediction {
                    doc: doc.clone(),
                    src: src.clone(),
                    dst: dst.clone(),
                })?;
        m.add(*gold_label, predicted);
    }
    Ok(m)
}

pub fn accuracy(m: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = m.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let diag: u64 = (0..4).map(|i| m.counts[i][i]).sum();
    Ok(diag as f64 / total as f64)
}

/// Precision, recall and F1 with VAGUE as "no relation". Zero denominators
/// yield zero by convention.
pub fn relation_f1(m: &ConfusionMatrix) -> (f64, f64, f64) {
    let numerator = m.correct_definite() as f64;
    let s1 = m.predicted_definite();
    let s2 = m.gold_definite();
    let p = if s1 == 0 { 0.0 } else { numerator / s1 as f64 };
    let r = if s2 == 0 { 0.0 } else { numerator / s2 as f64 };
    let f1 = harmonic(p, r);
    (p, r, f1)
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Temporal awareness over per-document (gold, predicted) graph pairs.
///
/// Precision counts reduced predicted edges found with identical label in
/// the closed gold graph; recall swaps the roles. Counts are pooled across
/// documents before dividing (micro-average); only non-VAGUE edges count.
pub fn awareness(
    graphs: &[(String, TemporalGraph, TemporalGraph)],
) -> Result<(f64, f64, f64), MetricsError> {
    let mut p_hit = 0u64;
    let mut p_total = 0u64;
    let mut r_hit = 0u64;
    let mut r_total = 0u64;
    for (doc, gold, pred) in graphs {
        let side = |err_side, report| MetricsError::InconsistentGraph {
            side: err_side,
            doc: doc.clone(),
            report,
        };
        let gold_closed = closure(gold).map_err(|e| side("gold", e))?;
        let pred_reduced = reduce(pred).map_err(|e| side("predicted", e))?;
        let gold_reduced = reduce(gold).map_err(|e| side("gold", e))?;
        let pred_closed = closure(pred).map_err(|e| side("predicted", e))?;
        for (a, b, l) in pred_reduced.definite_edges() {
            p_total += 1;
            if gold_closed.get(a, b) == Some(l) {
                p_hit += 1;
            }
        }
        for (a, b, l) in gold_reduced.definite_edges() {
            r_total += 1;
            if pred_closed.get(a, b) == Some(l) {
                r_hit += 1;
            }
        }
    }
    let p = if p_total == 0 {
        0.0
    } else {
        p_hit as f64 / p_total as f64
    };
    let r = if r_total == 0 {
        0.0
    } else {
        r_hit as f64 / r_total as f64
    };
    Ok((p, r, harmonic(p, r)))
}

pub fn three_metric_average(acc: f64, f1: f64, f_aware: f64) -> f64 {
    (acc + f1 + f_aware) / 3.0
}

/// Full evaluation report. Values are percentages (x100).
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub acc: f64,
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub p_aware: f64,
    pub r_aware: f64,
    pub f_aware: f64,
    pub avg: f64,
    pub n_instances: u64,
    pub per_label: std::collections::BTreeMap<String, LabelReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LabelReport {
    pub gold: u64,
    pub predicted: u64,
    pub correct: u64,
}

pub fn eval_report(
    m: &ConfusionMatrix,
    graphs: &[(String, TemporalGraph, TemporalGraph)],
) -> Result<EvalReport, MetricsError> {
    let acc = accuracy(m)?;
    let (p, r, f1) = relation_f1(m);
    let (p_aware, r_aware, f_aware) = awareness(graphs)?;
    let mut per_label = std::collections::BTreeMap::new();
    for l in Label::ALL {
        let i = l.index();
        per_label.insert(
            l.as_str().to_string(),
            LabelReport {
                gold: m.counts[i].iter().sum(),
                predicted: (0..4).map(|g| m.counts[g][i]).sum(),
                correct: m.counts[i][i],
            },
        );
    }
    Ok(EvalReport {
        acc: acc * 100.0,
        p: p * 100.0,
        r: r * 100.0,
        f1: f1 * 100.0,
        p_aware: p_aware * 100.0,
        r_aware: r_aware * 100.0,
        f_aware: f_aware * 100.0,
        avg: three_metric_average(acc, f1, f_aware) * 100.0,
        n_instances: m.total(),
        per_label,
    })
}

/// Which approximation a significance test used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TestBranch {
    #[serde(rename = "exact")]
    Exact,
    #[serde(rename = "chi2")]
    ChiSquare,
}

#[derive(Debug, Clone, Serialize)]
pub struct SignificanceReport {
    pub test: String,
    pub statistic: f64,
    pub p: f64,
    pub n: usize,
    pub branch: TestBranch,
}

/// McNemar's test on per-instance correctness of two systems. Below 25
/// discordant pairs the exact two-sided binomial is used; above, the
/// chi-square approximation with continuity correction.
pub fn mcnemar(correct_a: &[bool], correct_b: &[bool]) -> Result<SignificanceReport, MetricsError> {
    if correct_a.len() != correct_b.len() {
        return Err(MetricsError::LengthMismatch(correct_a.len(), correct_b.len()));
    }
    let mut n01 = 0u64; // a wrong, b right
    let mut n10 = 0u64; // a right, b wrong
    for (&a, &b) in correct_a.iter().zip(correct_b) {
        match (a, b) {
            (false, true) => n01 += 1,
            (true, false) => n10 += 1,
            _ => {}
        }
    }
    let n = n01 + n10;
    if n == 0 {
        return Ok(SignificanceReport {
            test: "mcnemar".into(),
            statistic: 0.0,
            p: 1.0,
            n: correct_a.len(),
            branch: TestBranch::Exact,
        });
    }
    if n < 25 {
        let k = n01.min(n10);
        let p = (2.0 * binomial_cdf_half(k, n)).min(1.0);
        Ok(SignificanceReport {
            test: "mcnemar".into(),
            statistic: k as f64,
            p,
            n: correct_a.len(),
            branch: TestBranch::Exact,
        })
    } else {
        let diff = n01.abs_diff(n10) as f64;
        let stat = (diff - 1.0).powi(2) / n as f64;
        let chi2 = ChiSquared::new(1.0).expect("df 1 is valid");
        let p = 1.0 - chi2.cdf(stat);
        Ok(SignificanceReport {
            test: "mcnemar".into(),
            statistic: stat,
            p,
            n: correct_a.len(),
            branch: TestBranch::ChiSquare,
        })
    }
}

/// P(X <= k) for X ~ Binomial(n, 1/2), n < 64.
fn binomial_cdf_half(k: u64, n: u64) -> f64 {
    let mut sum = 0.0f64;
    let mut coeff = 1.0f64; // C(n, 0)
    for i in 0..=k {
        if i > 0 {
            coeff = coeff * (n - i + 1) as f64 / i as f64;
        }
        sum += coeff;
    }
    sum / 2f64.powi(n as i32)
}

/// Two-sided paired t-test on `xs - ys`, with the p-value from the Student
/// t distribution via the regularized incomplete beta function.
pub fn paired_t(xs: &[f64], ys: &[f64]) -> Result<SignificanceReport, MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(MetricsError::TooFewObservations(n));
    }
    let d: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let sd = var.sqrt();
    if sd == 0.0 {
        let p = if mean == 0.0 { 1.0 } else { 0.0 };
        return Ok(SignificanceReport {
            test: "paired_t".into(),
            statistic: if mean == 0.0 { 0.0 } else { f64::INFINITY },
            p,
            n,
            branch: TestBranch::Exact,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let df = (n - 1) as f64;
    // two-sided tail: I_{df/(df+t^2)}(df/2, 1/2)
    let p = beta_reg(df / 2.0, 0.5, df / (df + t * t));
    Ok(SignificanceReport {
        test: "paired_t".into(),
        statistic: t,
        p,
        n,
        branch: TestBranch::Exact,
    })
}
