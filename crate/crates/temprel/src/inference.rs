//! Global inference: pick one label per event pair per document maximizing
//! total confidence subject to temporal transitivity. Solved exactly by
//! depth-first branch-and-bound with constraint propagation; a greedy
//! baseline and an exhaustive oracle are provided for comparison.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::corpus::Label;
use crate::tempgraph::{compose, is_consistent, TemporalGraph};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Per-pair per-label confidence scores, one row per relation instance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfidenceTable {
    pub rows: Vec<ConfidenceRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceRow {
    pub doc_id: String,
    pub src: String,
    pub dst: String,
    pub scores: [f64; 4],
}

impl ConfidenceTable {
    /// Canonical order: (doc_id, src, dst).
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            (&a.doc_id, &a.src, &a.dst).cmp(&(&b.doc_id, &b.src, &b.dst))
        });
    }

    fn by_document(&self) -> Vec<(String, Vec<&ConfidenceRow>)> {
        let mut docs: BTreeMap<&str, Vec<&ConfidenceRow>> = BTreeMap::new();
        for row in &self.rows {
            docs.entry(&row.doc_id).or_default().push(row);
        }
        docs.into_iter()
            .map(|(id, rows)| (id.to_string(), rows))
            .collect()
    }
}

/// One label per pair plus the achieved objective, per document and total.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Assignment {
    pub labels: BTreeMap<(String, String, String), Label>,
    pub objective: f64,
    pub per_doc_objective: BTreeMap<String, f64>,
}

impl Assignment {
    pub fn label(&self, doc: &str, src: &str, dst: &str) -> Option<Label> {
        self.labels
            .get(&(doc.to_string(), src.to_string(), dst.to_string()))
            .copied()
            .or_else(|| {
                self.labels
                    .get(&(doc.to_string(), dst.to_string(), src.to_string()))
                    .map(|l| l.reverse())
            })
    }

    /// Per-document graphs of the assigned labels.
    pub fn graphs(&self) -> BTreeMap<String, TemporalGraph> {
        let mut graphs: BTreeMap<String, TemporalGraph> = BTreeMap::new();
        for ((doc, src, dst), label) in &self.labels {
            graphs
                .entry(doc.clone())
                .or_default()
                .set_edge(src, dst, *label)
                .expect("src != dst by corpus invariant");
        }
        graphs
    }
}

#[derive(Debug, Error)]
pub enum InferError {
    #[error("document {doc:?} has {n_pairs} pairs; brute force is capped at {cap}")]
    TooLarge {
        doc: String,
        n_pairs: usize,
        cap: usize,
    },
}

/// Per-pair argmax with ties broken by label order BEFORE < AFTER < EQUAL <
/// VAGUE. Transitivity is not guaranteed.
pub fn greedy_assign(conf: &ConfidenceTable) -> Assignment {
    let mut assignment = Assignment::default();
    for row in &conf.rows {
        let mut best = 0;
        for i in 1..4 {
            if row.scores[i] > row.scores[best] {
                best = i;
            }
        }
        assignment.labels.insert(
            (row.doc_id.clone(), row.src.clone(), row.dst.clone()),
            Label::from_index(best),
        );
        assignment.objective += row.scores[best];
        *assignment
            .per_doc_objective
            .entry(row.doc_id.clone())
            .or_insert(0.0) += row.scores[best];
    }
    assignment
}

/// Exact global inference. Each document is solved independently (in
/// parallel when the `parallel` feature is on) and results are merged in
/// document order.
pub fn ilp_infer(conf: &ConfidenceTable) -> Assignment {
    let docs = conf.by_document();
    #[cfg(feature = "parallel")]
    let solved: Vec<_> = docs
        .par_iter()
        .map(|(id, rows)| (id.clone(), solve_document(rows)))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let solved: Vec<_> = docs
        .iter()
        .map(|(id, rows)| (id.clone(), solve_document(rows)))
        .collect();
    merge(solved)
}

/// Sequential solve regardless of the `parallel` feature; used by the
/// benchmark suite to compare against the parallel path.
pub fn ilp_infer_sequential(conf: &ConfidenceTable) -> Assignment {
    let docs = conf.by_document();
    let solved: Vec<_> = docs
        .iter()
        .map(|(id, rows)| (id.clone(), solve_document(rows)))
        .collect();
    merge(solved)
}

fn merge(solved: Vec<(String, (Vec<(String, String, Label)>, f64))>) -> Assignment {
    let mut assignment = Assignment::default();
    for (doc, (labels, objective)) in solved {
        for (src, dst, label) in labels {
            assignment.labels.insert((doc.clone(), src, dst), label);
        }
        assignment.objective += objective;
        assignment.per_doc_objective.insert(doc, objective);
    }
    assignment
}

/// A triangle of pair indices over events (i, j, k), with flags telling
/// whether each stored pair direction matches the orientation i->j, j->k,
/// i->k.
struct Triangle {
    ij: (usize, bool),
    jk: (usize, bool),
    ik: (usize, bool),
}

impl Triangle {
    fn oriented(&self, labels: [Label; 3]) -> (Label, Label, Label) {
        let orient = |(idx, fwd): (usize, bool), slot: usize| {
            let l = labels[slot];
            let _ = idx;
            if fwd {
                l
            } else {
                l.reverse()
            }
        };
        (
            orient(self.ij, 0),
            orient(self.jk, 1),
            orient(self.ik, 2),
        )
    }
}

/// True iff the three oriented labels satisfy the composition table for all
/// three choices of middle vertex. Reversed orderings are covered by the
/// table's symmetry under global reversal.
fn triangle_ok(r_ij: Label, r_jk: Label, r_ik: Label) -> bool {
    compose(r_ij, r_jk).contains(&r_ik)
        && compose(r_ij.reverse(), r_ik).contains(&r_jk)
        && compose(r_ik, r_jk.reverse()).contains(&r_ij)
}

struct Problem {
    /// Pairs in search order (descending score margin).
    pairs: Vec<(String, String, [f64; 4])>,
    /// For each pair, the triangles it participates in, as (slot of this
    /// pair in the triangle, triangle index).
    membership: Vec<Vec<(usize, usize)>>,
    triangles: Vec<Triangle>,
    /// Label exploration order per pair: descending score, ties by label order.
    label_order: Vec<[usize; 4]>,
}

fn build_problem(rows: &[&ConfidenceRow]) -> Problem {
    let mut pairs: Vec<(String, String, [f64; 4])> = rows
        .iter()
        .map(|r| (r.src.clone(), r.dst.clone(), r.scores))
        .collect();
    let margin = |s: &[f64; 4]| {
        let mut v = *s;
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v[0] - v[1]
    };
    pairs.sort_by(|a, b| {
        margin(&b.2)
            .partial_cmp(&margin(&a.2))
            .unwrap()
            .then_with(|| (&a.0, &a.1).cmp(&(&b.0, &b.1)))
    });

    let mut index: HashMap<(&str, &str), (usize, bool)> = HashMap::new();
    for (p, (src, dst, _)) in pairs.iter().enumerate() {
        index.insert((src.as_str(), dst.as_str()), (p, true));
        index.insert((dst.as_str(), src.as_str()), (p, false));
    }
    let mut events: Vec<&str> = pairs
        .iter()
        .flat_map(|(s, d, _)| [s.as_str(), d.as_str()])
        .collect();
    events.sort_unstable();
    events.dedup();

    let mut triangles = Vec::new();
    let mut membership = vec![Vec::new(); pairs.len()];
    for a in 0..events.len() {
        for b in (a + 1)..events.len() {
            for c in (b + 1)..events.len() {
                let (i, j, k) = (events[a], events[b], events[c]);
                let (Some(&ij), Some(&jk), Some(&ik)) =
                    (index.get(&(i, j)), index.get(&(j, k)), index.get(&(i, k)))
                else {
                    continue;
                };
                let t = triangles.len();
                membership[ij.0].push((0, t));
                membership[jk.0].push((1, t));
                membership[ik.0].push((2, t));
                triangles.push(Triangle { ij, jk, ik });
            }
        }
    }
    let label_order = pairs
        .iter()
        .map(|(_, _, s)| {
            let mut order = [0usize, 1, 2, 3];
            order.sort_by(|&x, &y| {
                s[y].partial_cmp(&s[x]).unwrap().then(x.cmp(&y))
            });
            order
        })
        .collect();
    Problem {
        pairs,
        membership,
        triangles,
        label_order,
    }
}

impl Problem {
    /// Checks every triangle of `pair` whose other two pairs are fixed,
    /// with `pair` tentatively labeled `label`.
    fn compatible(&self, fixed: &[Option<Label>], pair: usize, label: Label) -> bool {
        for &(slot, t) in &self.membership[pair] {
            let tri = &self.triangles[t];
            let ids = [tri.ij.0, tri.jk.0, tri.ik.0];
            let mut labels = [Label::Vague; 3];
            let mut all_known = true;
            for s in 0..3 {
                let l = if ids[s] == pair {
                    Some(label)
                } else {
                    fixed[ids[s]]
                };
                match l {
                    Some(l) => labels[s] = l,
                    None => {
                        all_known = false;
                        break;
                    }
                }
            }
            let _ = slot;
            if !all_known {
                continue;
            }
            let (r_ij, r_jk, r_ik) = tri.oriented(labels);
            if !triangle_ok(r_ij, r_jk, r_ik) {
                return false;
            }
        }
        true
    }
}

struct Search<'a> {
    problem: &'a Problem,
    fixed: Vec<Option<Label>>,
    /// Feasible label set per pair given the fixed prefix.
    domains: Vec<[bool; 4]>,
    current: f64,
    best_value: f64,
    best_labels: Vec<Label>,
}

impl Search<'_> {
    /// Max attainable score for an unfixed pair under its current domain.
    fn domain_max(&self, pair: usize) -> f64 {
        let scores = &self.problem.pairs[pair].2;
        let mut best = f64::NEG_INFINITY;
        for l in 0..4 {
            if self.domains[pair][l] {
                best = best.max(scores[l]);
            }
        }
        best
    }

    fn dfs(&mut self, depth: usize) {
        let n = self.problem.pairs.len();
        if depth == n {
            if self.current > self.best_value {
                self.best_value = self.current;
                self.best_labels = self.fixed.iter().map(|l| l.unwrap()).collect();
            }
            return;
        }
        // upper bound from domain maxima of the remaining pairs
        if self.best_value.is_finite() {
            let mut bound = self.current;
            for p in depth..n {
                bound += self.domain_max(p);
            }
            if bound <= self.best_value {
                return;
            }
        }
        let order = self.problem.label_order[depth];
        for &l in &order {
            if !self.domains[depth][l] {
                continue;
            }
            let label = Label::from_index(l);
            debug_assert!(self.problem.compatible(&self.fixed, depth, label));
            self.fixed[depth] = Some(label);
            self.current += self.problem.pairs[depth].2[l];

            // propagate: shrink later domains against the new fixed pair
            let mut saved: Vec<(usize, [bool; 4])> = Vec::new();
            let mut dead_end = false;
            for q in (depth + 1)..n {
                let mut dom = self.domains[q];
                let mut shrunk = false;
                for cand in 0..4 {
                    if dom[cand]
                        && !self
                            .problem
                            .compatible(&self.fixed, q, Label::from_index(cand))
                    {
                        dom[cand] = false;
                        shrunk = true;
                    }
                }
                if shrunk {
                    saved.push((q, self.domains[q]));
                    self.domains[q] = dom;
                    if dom.iter().all(|&x| !x) {
                        dead_end = true;
                        break;
                    }
                }
            }
            if !dead_end {
                self.dfs(depth + 1);
            }
            for (q, dom) in saved.into_iter().rev() {
                self.domains[q] = dom;
            }
            self.current -= self.problem.pairs[depth].2[l];
            self.fixed[depth] = None;
        }
    }
}

fn solve_document(rows: &[&ConfidenceRow]) -> (Vec<(String, String, Label)>, f64) {
    let problem = build_problem(rows);
    let n = problem.pairs.len();
    let mut search = Search {
        problem: &problem,
        fixed: vec![None; n],
        domains: vec![[true; 4]; n],
        current: 0.0,
        best_value: f64::NEG_INFINITY,
        best_labels: Vec::new(),
    };
    // initial propagation is a no-op (nothing fixed); prune single-pair
    // domains against nothing
    search.dfs(0);
    let mut labels: Vec<(String, String, Label)> = problem
        .pairs
        .iter()
        .zip(&search.best_labels)
        .map(|((src, dst, _), &l)| (src.clone(), dst.clone(), l))
        .collect();
    // re-sum the objective over canonically ordered pairs so the reported
    // value is independent of the margin-based search order
    labels.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    let score_of: HashMap<(&str, &str), &[f64; 4]> = problem
        .pairs
        .iter()
        .map(|(s, d, scores)| ((s.as_str(), d.as_str()), scores))
        .collect();
    let objective = labels
        .iter()
        .map(|(s, d, l)| score_of[&(s.as_str(), d.as_str())][l.index()])
        .sum();
    (labels, objective)
}

/// Exhaustive enumeration over all 4^n labelings of each document, keeping
/// the transitivity-consistent maximum. Ties resolve to the
/// lexicographically first label sequence over pairs in canonical order.
pub fn brute_force_infer(conf: &ConfidenceTable) -> Result<Assignment, InferError> {
    const CAP: usize = 12;
    let mut assignment = Assignment::default();
    for (doc, rows) in conf.by_document() {
        let n = rows.len();
        if n > CAP {
            return Err(InferError::TooLarge {
                doc,
                n_pairs: n,
                cap: CAP,
            });
        }
        let mut pairs: Vec<&ConfidenceRow> = rows.clone();
        pairs.sort_by(|a, b| (&a.src, &a.dst).cmp(&(&b.src, &b.dst)));
        let problem = build_canonical_triangles(&pairs);
        let mut best: Option<(f64, Vec<Label>)> = None;
        let mut labels = vec![Label::Before; n];
        enumerate(&pairs, &problem, &mut labels, 0, 0.0, &mut best);
        let (objective, labels) = best.expect("all-VAGUE labeling is always consistent");
        for (row, label) in pairs.iter().zip(labels) {
            assignment
                .labels
                .insert((doc.clone(), row.src.clone(), row.dst.clone()), label);
        }
        assignment.objective += objective;
        assignment.per_doc_objective.insert(doc, objective);
    }
    Ok(assignment)
}

struct CanonicalTriangles {
    triangles: Vec<Triangle>,
}

fn build_canonical_triangles(pairs: &[&ConfidenceRow]) -> CanonicalTriangles {
    let mut index: HashMap<(&str, &str), (usize, bool)> = HashMap::new();
    for (p, row) in pairs.iter().enumerate() {
        index.insert((row.src.as_str(), row.dst.as_str()), (p, true));
        index.insert((row.dst.as_str(), row.src.as_str()), (p, false));
    }
    let mut events: Vec<&str> = pairs
        .iter()
        .flat_map(|r| [r.src.as_str(), r.dst.as_str()])
        .collect();
    events.sort_unstable();
    events.dedup();
    let mut triangles = Vec::new();
    for a in 0..events.len() {
        for b in (a + 1)..events.len() {
            for c in (b + 1)..events.len() {
                let (i, j, k) = (events[a], events[b], events[c]);
                let (Some(&ij), Some(&jk), Some(&ik)) =
                    (index.get(&(i, j)), index.get(&(j, k)), index.get(&(i, k)))
                else {
                    continue;
                };
                triangles.push(Triangle { ij, jk, ik });
            }
        }
    }
    CanonicalTriangles { triangles }
}

fn enumerate(
    pairs: &[&ConfidenceRow],
    problem: &CanonicalTriangles,
    labels: &mut Vec<Label>,
    depth: usize,
    value: f64,
    best: &mut Option<(f64, Vec<Label>)>,
) {
    if depth == pairs.len() {
        for tri in &problem.triangles {
            let ls = [labels[tri.ij.0], labels[tri.jk.0], labels[tri.ik.0]];
            let (r_ij, r_jk, r_ik) = tri.oriented(ls);
            if !triangle_ok(r_ij, r_jk, r_ik) {
                return;
            }
        }
        let better = match best {
            None => true,
            Some((v, _)) => value > *v,
        };
        if better {
            *best = Some((value, labels.clone()));
        }
        return;
    }
    for label in Label::ALL {
        labels[depth] = label;
        enumerate(
            pairs,
            problem,
            labels,
            depth + 1,
            value + pairs[depth].scores[label.index()],
            best,
        );
    }
}

/// A triple of events whose assigned labels violate the composition table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub doc_id: String,
    pub events: [String; 3],
}

/// All event triples (per document) whose labels break transitivity;
/// empty iff every per-document graph is consistent.
pub fn verify_transitivity(assignment: &Assignment) -> Vec<Violation> {
    let mut violations = Vec::new();
    for (doc, graph) in assignment.graphs() {
        let nodes: Vec<&str> = graph.nodes().collect();
        for a in 0..nodes.len() {
            for b in (a + 1)..nodes.len() {
                for c in (b + 1)..nodes.len() {
                    let (i, j, k) = (nodes[a], nodes[b], nodes[c]);
                    let (Some(r_ij), Some(r_jk), Some(r_ik)) =
                        (graph.get(i, j), graph.get(j, k), graph.get(i, k))
                    else {
                        continue;
                    };
                    if !triangle_ok(r_ij, r_jk, r_ik) {
                        violations.push(Violation {
                            doc_id: doc.clone(),
                            events: [i.to_string(), j.to_string(), k.to_string()],
                        });
                    }
                }
            }
        }
    }
    violations
}

/// Checks document-level closure consistency of an assignment.
pub fn assignment_consistent(assignment: &Assignment) -> bool {
    assignment.graphs().values().all(is_consistent)
}
