//! Trigram language model scoring.
//!
//! The scorer fits add-k smoothed trigram counts over a training corpus and
//! then assigns one score per token of any text: smoothed log-likelihood,
//! negated frequency rank among the context's continuations, or the Shannon
//! entropy of the context's continuation distribution. Entropy is computed
//! from the seen continuations plus a closed form for the unseen mass, so a
//! position costs time proportional to the context's observed fan-out, not
//! the vocabulary size.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved id for tokens outside the training vocabulary.
const UNK_ID: u32 = 0;
/// Reserved id for the two padding positions in front of each document.
const BOS_ID: u32 = 1;
const FIRST_TOKEN_ID: u32 = 2;

/// Per-token scoring rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    /// Smoothed trigram log-likelihood of the token.
    #[serde(rename = "ll")]
    #[default]
    LogLikelihood,
    /// Negated competition rank of the token among the context's observed
    /// continuations (most frequent continuation scores -1).
    #[serde(rename = "rank")]
    Rank,
    /// Shannon entropy of the smoothed continuation distribution at the
    /// token's position.
    #[serde(rename = "entropy")]
    Entropy,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Metric::LogLikelihood => "ll",
            Metric::Rank => "rank",
            Metric::Entropy => "entropy",
        };
        f.write_str(name)
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ll" => Ok(Metric::LogLikelihood),
            "rank" => Ok(Metric::Rank),
            "entropy" => Ok(Metric::Entropy),
            other => Err(Error::Parameter(format!(
                "unknown metric {other:?}, expected ll, rank, or entropy"
            ))),
        }
    }
}

/// Lowercased alphanumeric runs, in document order.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct ContextStats {
    total: u64,
    continuations: BTreeMap<u32, u64>,
}

/// Add-k smoothed trigram model with a single unknown-token type.
#[derive(Debug, Clone)]
pub struct TrigramScorer {
    k: f64,
    vocab: BTreeMap<String, u32>,
    contexts: BTreeMap<(u32, u32), ContextStats>,
}

impl TrigramScorer {
    /// Fits counts over the training texts. `k` is the smoothing constant
    /// added to every continuation count.
    pub fn fit<S: AsRef<str>>(texts: &[S], k: f64) -> Result<TrigramScorer> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::Parameter(format!(
                "smoothing constant must be a positive finite real, got {k}"
            )));
        }
        let mut vocab: BTreeMap<String, u32> = BTreeMap::new();
        let mut tokenized = Vec::with_capacity(texts.len());
        for text in texts {
            let tokens = tokenize(text.as_ref());
            for token in &tokens {
                let next_id = FIRST_TOKEN_ID + vocab.len() as u32;
                vocab.entry(token.clone()).or_insert(next_id);
            }
            tokenized.push(tokens);
        }
        if vocab.is_empty() {
            return Err(Error::DegenerateInput(
                "training corpus produced no tokens".into(),
            ));
        }

        let mut contexts: BTreeMap<(u32, u32), ContextStats> = BTreeMap::new();
        for tokens in &tokenized {
            let mut prev = (BOS_ID, BOS_ID);
            for token in tokens {
                let id = vocab[token.as_str()];
                let stats = contexts.entry(prev).or_default();
                stats.total += 1;
                *stats.continuations.entry(id).or_insert(0) += 1;
                prev = (prev.1, id);
            }
        }
        Ok(TrigramScorer {
            k,
            vocab,
            contexts,
        })
    }

    /// Number of predictable token types: training types plus the unknown
    /// type.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len() + 1
    }

    /// Number of distinct contexts observed in training.
    pub fn context_count(&self) -> usize {
        self.contexts.len()
    }

    fn token_id(&self, token: &str) -> u32 {
        self.vocab.get(token).copied().unwrap_or(UNK_ID)
    }

    fn smoothed_log_prob(&self, context: (u32, u32), token: u32) -> f64 {
        let v = self.vocab_size() as f64;
        let (count, total) = match self.contexts.get(&context) {
            Some(stats) => (
                stats.continuations.get(&token).copied().unwrap_or(0),
                stats.total,
            ),
            None => (0, 0),
        };
        ((count as f64 + self.k) / (total as f64 + self.k * v)).ln()
    }

    fn rank(&self, context: (u32, u32), token: u32) -> f64 {
        let Some(stats) = self.contexts.get(&context) else {
            return 1.0;
        };
        let own = stats.continuations.get(&token).copied().unwrap_or(0);
        let better = stats
            .continuations
            .values()
            .filter(|&&count| count > own)
            .count();
        (1 + better) as f64
    }

    fn entropy(&self, context: (u32, u32)) -> f64 {
        let v = self.vocab_size() as f64;
        let (total, seen): (f64, &BTreeMap<u32, u64>) = match self.contexts.get(&context) {
            Some(stats) => (stats.total as f64, &stats.continuations),
            None => return v.ln(),
        };
        let denom = total + self.k * v;
        let mut h = 0.0;
        for &count in seen.values() {
            let p = (count as f64 + self.k) / denom;
            h -= p * p.ln();
        }
        let unseen = v - seen.len() as f64;
        if unseen > 0.0 {
            let p = self.k / denom;
            h -= unseen * p * p.ln();
        }
        h
    }

    /// One score per token of `text` under `metric`. Fails on text that
    /// tokenizes to nothing.
    pub fn token_scores(&self, text: &str, metric: Metric) -> Result<Vec<f64>> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::DegenerateInput(
                "text has no tokens to score".into(),
            ));
        }
        let mut scores = Vec::with_capacity(tokens.len());
        let mut prev = (BOS_ID, BOS_ID);
        for token in &tokens {
            let id = self.token_id(token);
            let score = match metric {
                Metric::LogLikelihood => self.smoothed_log_prob(prev, id),
                Metric::Rank => -self.rank(prev, id),
                Metric::Entropy => self.entropy(prev),
            };
            scores.push(score);
            prev = (prev.1, id);
        }
        Ok(scores)
    }

    /// Mean of [`token_scores`](Self::token_scores).
    pub fn mean_score(&self, text: &str, metric: Metric) -> Result<f64> {
        let scores = self.token_scores(text, metric)?;
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }
}
