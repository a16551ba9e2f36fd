//! Embedding providers: a uniform way to turn token sequences into
//! real-vector sequences. Backed by a static text table, a precomputed
//! contextual store keyed by (doc, sentence), or a deterministic hash
//! fallback. Vectors are parsed at 32-bit precision and upcast to f64 on
//! use; providers are immutable after load.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::corpus::Document;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: bad header, expected \"N d\"")]
    BadHeader { line: usize },
    #[error("line {line}: expected {expected} components, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate token {token:?}")]
    DuplicateToken { line: usize, token: String },
    #[error("line {line}: entry count {found} does not match header {expected}")]
    CountMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: parse error: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: duplicate key ({doc:?}, {sent})")]
    DuplicateKey {
        line: usize,
        doc: String,
        sent: usize,
    },
    #[error("no contextual vectors stored for ({doc:?}, sentence {sent})")]
    MissingContext { doc: String, sent: usize },
    #[error("({doc:?}, sentence {sent}): stored {found} vectors for {expected} tokens")]
    LengthMismatch {
        doc: String,
        sent: usize,
        expected: usize,
        found: usize,
    },
    #[error("sentence range {start}..{end} out of bounds for document {doc:?}")]
    BadRange {
        doc: String,
        start: usize,
        end: usize,
    },
}

#[derive(Debug, Clone)]
pub struct StaticTable {
    dim: usize,
    entries: HashMap<String, Vec<f32>>,
    hash_seed: u64,
}

#[derive(Debug, Clone)]
pub struct ContextualStore {
    dim: usize,
    vectors: HashMap<(String, usize), Vec<Vec<f32>>>,
}

#[derive(Debug, Clone, Copy)]
pub struct HashFallback {
    pub dim: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub enum Provider {
    Static(StaticTable),
    Contextual(ContextualStore),
    Hash(HashFallback),
}

impl Provider {
    pub fn dim(&self) -> usize {
        match self {
            Provider::Static(t) => t.dim,
            Provider::Contextual(s) => s.dim,
            Provider::Hash(h) => h.dim,
        }
    }
}

/// Text format: first line "N d", then N lines "token f1 ... fd".
pub fn load_static(path: impl AsRef<Path>, hash_seed: u64) -> Result<StaticTable, EmbeddingError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or(EmbeddingError::BadHeader { line: 1 })??;
    let mut parts = header.split_whitespace();
    let (n, dim) = match (
        parts.next().and_then(|s| s.parse::<usize>().ok()),
        parts.next().and_then(|s| s.parse::<usize>().ok()),
        parts.next(),
    ) {
        (Some(n), Some(d), None) => (n, d),
        _ => return Err(EmbeddingError::BadHeader { line: 1 }),
    };
    let mut entries = HashMap::with_capacity(n);
    let mut lineno = 1;
    for line in lines {
        lineno += 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields
            .next()
            .ok_or(EmbeddingError::Parse {
                line: lineno,
                msg: "empty line".into(),
            })?
            .to_string();
        let vector: Vec<f32> = fields
            .map(|f| {
                f.parse::<f32>().map_err(|e| EmbeddingError::Parse {
                    line: lineno,
                    msg: format!("bad float {f:?}: {e}"),
                })
            })
            .collect::<Result<_, _>>()?;
        if vector.len() != dim {
            return Err(EmbeddingError::DimensionMismatch {
                line: lineno,
                expected: dim,
                found: vector.len(),
            });
        }
        if entries.contains_key(&token) {
            return Err(EmbeddingError::DuplicateToken { line: lineno, token });
        }
        entries.insert(token, vector);
    }
    if entries.len() != n {
        return Err(EmbeddingError::CountMismatch {
            line: lineno,
            expected: n,
            found: entries.len(),
        });
    }
    Ok(StaticTable {
        dim,
        entries,
        hash_seed,
    })
}

#[derive(Deserialize)]
struct ContextualLine {
    doc: String,
    sent: usize,
    vectors: Vec<Vec<f32>>,
}

/// JSON-lines format: {"doc": str, "sent": int, "vectors": [[f,...],...]}.
pub fn load_contextual(path: impl AsRef<Path>) -> Result<ContextualStore, EmbeddingError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut dim: Option<usize> = None;
    let mut vectors = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ContextualLine =
            serde_json::from_str(&line).map_err(|e| EmbeddingError::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
        for v in &entry.vectors {
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d == v.len() => {}
                Some(d) => {
                    return Err(EmbeddingError::DimensionMismatch {
                        line: lineno,
                        expected: d,
                        found: v.len(),
                    })
                }
            }
        }
        let key = (entry.doc.clone(), entry.sent);
        if vectors.contains_key(&key) {
            return Err(EmbeddingError::DuplicateKey {
                line: lineno,
                doc: entry.doc,
                sent: entry.sent,
            });
        }
        vectors.insert(key, entry.vectors);
    }
    Ok(ContextualStore {
        dim: dim.unwrap_or(0),
        vectors,
    })
}

/// Deterministic pseudo-random vector for a token: a stable FNV-1a hash of
/// the token mixed with the seed drives a ChaCha stream; components are
/// uniform in [-0.5, 0.5].
pub fn hash_embed(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut h: u64 = 0xcbf29ce484222325;
    for byte in token.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h ^ seed.wrapping_mul(0x9e3779b97f4a7c15));
    (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect()
}

/// Embeds the tokens of `sentence_range` (concatenated) as a T x dim matrix
/// in row-major `Vec<Vec<f64>>` form.
pub fn embed_sequence(
    provider: &Provider,
    document: &Document,
    sentence_range: Range<usize>,
) -> Result<Vec<Vec<f64>>, EmbeddingError> {
    if sentence_range.end > document.sentences.len() || sentence_range.start >= sentence_range.end {
        return Err(EmbeddingError::BadRange {
            doc: document.id.clone(),
            start: sentence_range.start,
            end: sentence_range.end,
        });
    }
    let mut rows = Vec::new();
    for sent in sentence_range {
        let tokens = &document.sentences[sent];
        match provider {
            Provider::Static(table) => {
                for token in tokens {
                    rows.push(match table.entries.get(token) {
                        Some(v) => v.iter().map(|&x| f64::from(x)).collect(),
                        None => hash_embed(token, table.dim, table.hash_seed),
                    });
                }
            }
            Provider::Hash(h) => {
                for token in tokens {
                    rows.push(hash_embed(token, h.dim, h.seed));
                }
            }
            Provider::Contextual(store) => {
                let stored = store
                    .vectors
                    .get(&(document.id.clone(), sent))
                    .ok_or_else(|| EmbeddingError::MissingContext {
                        doc: document.id.clone(),
                        sent,
                    })?;
                if stored.len() != tokens.len() {
                    return Err(EmbeddingError::LengthMismatch {
                        doc: document.id.clone(),
                        sent,
                        expected: tokens.len(),
                        found: stored.len(),
                    });
                }
                for v in stored {
                    rows.push(v.iter().map(|&x| f64::from(x)).collect());
                }
            }
        }
    }
    Ok(rows)
}
