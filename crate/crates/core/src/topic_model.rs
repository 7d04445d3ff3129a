//! Collapsed Gibbs sampling for LDA over item texts.
//!
//! The fitted state exposes per-item topic mixtures `phi` (D×K) and per-topic
//! word distributions `beta` (K×M), both read off the smoothed counts of the
//! final sweep. Items without tokens get the uniform mixture.

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bundle::Bundle;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub num_topics: usize,
    /// Symmetric document-topic prior. `None` means `50 / K`.
    pub alpha: Option<f64>,
    /// Symmetric topic-word prior.
    pub beta: f64,
    pub iters: usize,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            num_topics: 100,
            alpha: None,
            beta: 0.01,
            iters: 500,
            seed: 0,
        }
    }
}

impl LdaConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.num_topics as f64)
    }
}

#[derive(Debug, Clone)]
pub struct TopicModelState {
    pub num_topics: usize,
    pub vocab_size: usize,
    pub alpha: f64,
    pub beta_prior: f64,
    /// Per-document topic assignment of each token.
    pub assignments: Vec<Vec<u16>>,
    pub doc_topic: Array2<u32>,
    pub topic_word: Array2<u32>,
    pub topic_totals: Vec<u32>,
    pub phi: Array2<f64>,
    pub beta: Array2<f64>,
}

fn sample_index(rng: &mut rng::Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        if u < w {
            return k;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Fits LDA on the corpus item texts.
pub fn fit_lda(corpus: &Corpus, config: &LdaConfig) -> Result<TopicModelState> {
    fit_lda_docs(corpus.all_item_tokens(), corpus.vocab_size(), config)
}

/// Fits LDA on raw token-index documents over a vocabulary of `vocab_size`.
pub fn fit_lda_docs(docs: &[Vec<u32>], vocab_size: usize, config: &LdaConfig) -> Result<TopicModelState> {
    let k = config.num_topics;
    if k < 2 || k > u16::MAX as usize {
        return Err(Error::InvalidParam(format!("topic count must be in [2, 65535], got {k}")));
    }
    if config.iters < 1 {
        return Err(Error::InvalidParam("LDA needs at least one sweep".into()));
    }
    let alpha = config.alpha();
    if !(alpha > 0.0 && config.beta > 0.0) {
        return Err(Error::InvalidParam("Dirichlet priors must be positive".into()));
    }
    if docs.iter().all(|d| d.is_empty()) {
        return Err(Error::EmptyDataset("every document is empty".into()));
    }
    if let Some(w) = docs.iter().flatten().find(|&&w| w as usize >= vocab_size) {
        return Err(Error::InvalidParam(format!("token {w} outside vocabulary of {vocab_size}")));
    }

    let d = docs.len();
    let m = vocab_size;
    let mut rng = rng::seeded(config.seed);
    let mut doc_topic = Array2::<u32>::zeros((d, k));
    let mut topic_word = Array2::<u32>::zeros((k, m));
    let mut topic_totals = vec![0u32; k];
    let mut assignments: Vec<Vec<u16>> = Vec::with_capacity(d);
    for (doc, words) in docs.iter().enumerate() {
        let z: Vec<u16> = words
            .iter()
            .map(|&w| {
                let t = rng.random_range(0..k);
                doc_topic[[doc, t]] += 1;
                topic_word[[t, w as usize]] += 1;
                topic_totals[t] += 1;
                t as u16
            })
            .collect();
        assignments.push(z);
    }

    let beta = config.beta;
    let m_beta = m as f64 * beta;
    let mut weights = vec![0.0; k];
    for _ in 0..config.iters {
        for (doc, words) in docs.iter().enumerate() {
            for (pos, &w) in words.iter().enumerate() {
                let w = w as usize;
                let old = assignments[doc][pos] as usize;
                doc_topic[[doc, old]] -= 1;
                topic_word[[old, w]] -= 1;
                topic_totals[old] -= 1;
                for (t, weight) in weights.iter_mut().enumerate() {
                    *weight = (doc_topic[[doc, t]] as f64 + alpha)
                        * (topic_word[[t, w]] as f64 + beta)
                        / (topic_totals[t] as f64 + m_beta);
                }
                let new = sample_index(&mut rng, &weights);
                doc_topic[[doc, new]] += 1;
                topic_word[[new, w]] += 1;
                topic_totals[new] += 1;
                assignments[doc][pos] = new as u16;
            }
        }
    }

    let mut state = TopicModelState {
        num_topics: k,
        vocab_size: m,
        alpha,
        beta_prior: beta,
        assignments,
        doc_topic,
        topic_word,
        topic_totals,
        phi: Array2::zeros((d, k)),
        beta: Array2::zeros((k, m)),
    };
    state.read_off_distributions();
    Ok(state)
}

impl TopicModelState {
    fn read_off_distributions(&mut self) {
        let k = self.num_topics;
        for doc in 0..self.doc_topic.nrows() {
            let n: u32 = self.doc_topic.row(doc).sum();
            if n == 0 {
                self.phi.row_mut(doc).fill(1.0 / k as f64);
                continue;
            }
            let denom = n as f64 + k as f64 * self.alpha;
            for t in 0..k {
                self.phi[[doc, t]] = (self.doc_topic[[doc, t]] as f64 + self.alpha) / denom;
            }
        }
        let m_beta = self.vocab_size as f64 * self.beta_prior;
        for t in 0..k {
            let denom = self.topic_totals[t] as f64 + m_beta;
            for w in 0..self.vocab_size {
                self.beta[[t, w]] = (self.topic_word[[t, w]] as f64 + self.beta_prior) / denom;
            }
        }
    }

    /// Recounts the tables from the assignments and compares.
    pub fn counts_consistent(&self, docs: &[Vec<u32>]) -> bool {
        let k = self.num_topics;
        let mut dt = Array2::<u32>::zeros((docs.len(), k));
        let mut tw = Array2::<u32>::zeros((k, self.vocab_size));
        let mut tt = vec![0u32; k];
        for (doc, words) in docs.iter().enumerate() {
            if words.len() != self.assignments[doc].len() {
                return false;
            }
            for (&w, &z) in words.iter().zip(&self.assignments[doc]) {
                dt[[doc, z as usize]] += 1;
                tw[[z as usize, w as usize]] += 1;
                tt[z as usize] += 1;
            }
        }
        dt == self.doc_topic && tw == self.topic_word && tt == self.topic_totals
    }

    /// `Σ_d Σ_w log Σ_k φ[d,k]·β[k,w]`; empty documents contribute zero.
    pub fn loglikelihood(&self, docs: &[Vec<u32>]) -> f64 {
        loglikelihood(&self.phi, &self.beta, docs)
    }

    /// The `n` highest-probability words of `topic`, ties broken by lower index.
    pub fn top_words(&self, topic: usize, n: usize) -> Result<Vec<u32>> {
        if topic >= self.num_topics {
            return Err(Error::InvalidParam(format!(
                "topic {topic} out of range for K={}",
                self.num_topics
            )));
        }
        Ok(top_words(&self.beta, topic, n))
    }

    pub fn to_bundle(&self) -> Bundle {
        let mut b = Bundle::new(
            "topics",
            serde_json::json!({
                "num_topics": self.num_topics,
                "vocab_size": self.vocab_size,
                "alpha": self.alpha,
                "beta_prior": self.beta_prior,
            }),
        );
        b.push_matrix("phi", self.phi.clone());
        b.push_matrix("beta", self.beta.clone());
        b
    }
}

pub fn loglikelihood(phi: &Array2<f64>, beta: &Array2<f64>, docs: &[Vec<u32>]) -> f64 {
    let k = phi.ncols();
    docs.iter()
        .enumerate()
        .map(|(d, words)| {
            words
                .iter()
                .map(|&w| {
                    (0..k)
                        .map(|t| phi[[d, t]] * beta[[t, w as usize]])
                        .sum::<f64>()
                        .ln()
                })
                .sum::<f64>()
        })
        .sum()
}

pub fn top_words(beta: &Array2<f64>, topic: usize, n: usize) -> Vec<u32> {
    let row = beta.row(topic);
    let mut idx: Vec<u32> = (0..row.len() as u32).collect();
    idx.sort_by(|&a, &b| {
        row[b as usize]
            .total_cmp(&row[a as usize])
            .then(a.cmp(&b))
    });
    idx.truncate(n);
    idx
}

/// Topic mixtures and word distributions as loaded back from a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicTables {
    pub phi: Array2<f64>,
    pub beta: Array2<f64>,
}

impl TopicTables {
    pub fn from_bundle(b: Bundle) -> Result<Self> {
        let b = b.expect_kind("topics")?;
        let phi = b.matrix("phi")?.clone();
        let beta = b.matrix("beta")?.clone();
        if phi.ncols() != beta.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "phi has {} topics, beta has {}",
                phi.ncols(),
                beta.nrows()
            )));
        }
        Ok(TopicTables { phi, beta })
    }

    pub fn num_topics(&self) -> usize {
        self.phi.ncols()
    }

    pub fn top_words(&self, topic: usize, n: usize) -> Vec<u32> {
        top_words(&self.beta, topic, n)
    }
}

impl From<&TopicModelState> for TopicTables {
    fn from(s: &TopicModelState) -> Self {
        TopicTables {
            phi: s.phi.clone(),
            beta: s.beta.clone(),
        }
    }
}

/// `topics.txt`: one line per topic with its top words.
pub fn format_topics(tables: &TopicTables, vocab: &crate::corpus::Vocabulary, n: usize) -> String {
    let mut out = String::new();
    for t in 0..tables.num_topics() {
        let words: Vec<&str> = tables
            .top_words(t, n)
            .into_iter()
            .map(|w| vocab.word(w))
            .collect();
        out.push_str(&format!("topic {t}\t{}\n", words.join(" ")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cfg(k: usize, iters: usize, seed: u64) -> LdaConfig {
        LdaConfig {
            num_topics: k,
            alpha: Some(0.1),
            beta: 0.01,
            iters,
            seed,
        }
    }

    #[test]
    fn single_document_rows_are_stochastic() {
        let docs = vec![vec![0, 0, 0]];
        let s = fit_lda_docs(&docs, 1, &cfg(2, 10, 1)).unwrap();
        assert!((s.phi.row(0).sum() - 1.0).abs() < 1e-9);
        for t in 0..2 {
            assert!((s.beta.row(t).sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_docs_get_uniform_mixture() {
        let docs = vec![vec![0, 1], vec![], vec![1]];
        let s = fit_lda_docs(&docs, 2, &cfg(4, 5, 3)).unwrap();
        for t in 0..4 {
            assert_eq!(s.phi[[1, t]], 0.25);
        }
        assert!(s.counts_consistent(&docs));
    }

    #[test]
    fn all_empty_is_an_error() {
        let docs = vec![vec![], vec![]];
        assert!(matches!(
            fit_lda_docs(&docs, 3, &cfg(2, 5, 0)),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn rejects_bad_config() {
        let docs = vec![vec![0]];
        assert!(fit_lda_docs(&docs, 1, &cfg(1, 5, 0)).is_err());
        assert!(fit_lda_docs(&docs, 1, &cfg(2, 0, 0)).is_err());
    }

    #[test]
    fn same_seed_same_output() {
        let docs = vec![vec![0, 1, 2, 1], vec![2, 2, 3], vec![0, 3]];
        let a = fit_lda_docs(&docs, 4, &cfg(3, 20, 9)).unwrap();
        let b = fit_lda_docs(&docs, 4, &cfg(3, 20, 9)).unwrap();
        assert_eq!(a.phi, b.phi);
        assert_eq!(a.beta, b.beta);
        assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn uniform_loglikelihood() {
        let phi = array![[0.5, 0.5]];
        let beta = array![[0.25, 0.25, 0.25, 0.25], [0.25, 0.25, 0.25, 0.25]];
        let ll = loglikelihood(&phi, &beta, &[vec![2]]);
        assert!((ll - (0.25f64).ln()).abs() < 1e-15);
        let ll_empty = loglikelihood(&array![[0.5, 0.5], [0.5, 0.5]], &beta, &[vec![2], vec![]]);
        assert_eq!(ll, ll_empty);
    }

    #[test]
    fn top_words_order_and_ties() {
        let beta = array![[0.0, 1.0, 0.0], [0.4, 0.2, 0.4]];
        assert_eq!(top_words(&beta, 0, 1), vec![1]);
        assert_eq!(top_words(&beta, 1, 3), vec![0, 2, 1]);
        assert_eq!(top_words(&beta, 1, 10).len(), 3);
    }
}
