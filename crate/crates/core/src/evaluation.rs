//! Held-out ranking evaluation.
//!
//! Each user's adoptions are split into folds. For a test fold the models
//! rank a candidate list made of the held-out positives plus non-adopted
//! items from the user's stream, and the top of the list is scored with
//! precision, recall and nDCG.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adoption::{self, HyperParams, ModelParams, TrainingSet, Variant};
use crate::corpus::{Corpus, ItemId, UserId};
use crate::error::{Error, Result};
use crate::rng;
use crate::visibility::VisibilityTable;

pub fn precision_at(ranked: &[ItemId], relevant: &BTreeSet<ItemId>, x: usize) -> f64 {
    if ranked.is_empty() || x == 0 {
        return 0.0;
    }
    hits(ranked, relevant, x) as f64 / x as f64
}

/// `None` when there is nothing to recall.
pub fn recall_at(ranked: &[ItemId], relevant: &BTreeSet<ItemId>, x: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    Some(hits(ranked, relevant, x) as f64 / relevant.len() as f64)
}

pub fn ndcg_at(ranked: &[ItemId], relevant: &BTreeSet<ItemId>, x: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let dcg: f64 = ranked
        .iter()
        .take(x)
        .enumerate()
        .filter(|(_, j)| relevant.contains(j))
        .map(|(r, _)| 1.0 / (r as f64 + 2.0).log2())
        .sum();
    let ideal: f64 = (0..relevant.len().min(x)).map(|r| 1.0 / (r as f64 + 2.0).log2()).sum();
    Some(if ideal > 0.0 { dcg / ideal } else { 0.0 })
}

fn hits(ranked: &[ItemId], relevant: &BTreeSet<ItemId>, x: usize) -> usize {
    ranked.iter().take(x).filter(|j| relevant.contains(j)).count()
}

/// Assignment of every adoption of every user to one of `num_folds` folds.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub num_folds: usize,
    pub seed: u64,
    /// Per user: `(item, is_original, fold)` sorted by item.
    assignments: Vec<Vec<(ItemId, bool, usize)>>,
}

impl FoldPlan {
    /// Shuffles each user's adoptions with a per-user seed and deals them
    /// round-robin, so a user with fewer adoptions than folds still fills the
    /// first folds.
    pub fn new(corpus: &Corpus, num_folds: usize, seed: u64) -> Result<Self> {
        if num_folds < 2 {
            return Err(Error::InvalidParam(format!("need at least 2 folds, got {num_folds}")));
        }
        let assignments = corpus
            .users()
            .map(|u| {
                let mut events: Vec<(ItemId, bool)> =
                    corpus.user_events(u).map(|e| (e.item, e.is_original)).collect();
                let mut r = rng::seeded(rng::derive(seed, &[0xF01D, u.0 as u64]));
                events.shuffle(&mut r);
                let mut dealt: Vec<(ItemId, bool, usize)> = events
                    .into_iter()
                    .enumerate()
                    .map(|(k, (j, orig))| (j, orig, k % num_folds))
                    .collect();
                dealt.sort_by_key(|&(j, _, _)| j);
                dealt
            })
            .collect();
        Ok(FoldPlan {
            num_folds,
            seed,
            assignments,
        })
    }

    pub fn num_users(&self) -> usize {
        self.assignments.len()
    }

    pub fn user_fold(&self, user: UserId) -> &[(ItemId, bool, usize)] {
        &self.assignments[user.index()]
    }

    /// Positives scored in `fold`. Originals are excluded unless requested.
    pub fn test_items(&self, user: UserId, fold: usize, include_originals: bool) -> BTreeSet<ItemId> {
        self.user_fold(user)
            .iter()
            .filter(|&&(_, orig, f)| f == fold && (include_originals || !orig))
            .map(|&(j, _, _)| j)
            .collect()
    }

    /// Everything not scored in `fold`, i.e. the other folds plus any
    /// original posts that are not evaluated.
    pub fn training_set(&self, num_items: usize, fold: usize, include_originals: bool) -> TrainingSet {
        let events = self.assignments.iter().enumerate().flat_map(|(u, list)| {
            list.iter()
                .filter(move |&&(_, orig, f)| f != fold || (orig && !include_originals))
                .map(move |&(j, orig, _)| (UserId(u as u32), j, orig))
        });
        TrainingSet::from_events(self.assignments.len(), num_items, events)
    }
}

/// How non-adopted items are added to the test positives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidatePolicy {
    /// `n` stream negatives per test positive.
    Sampled { per_positive: usize },
    /// Every non-adopted item in the stream.
    Full,
}

impl Default for CandidatePolicy {
    fn default() -> Self {
        CandidatePolicy::Sampled { per_positive: 19 }
    }
}

impl fmt::Display for CandidatePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CandidatePolicy::Sampled { per_positive } => write!(f, "1:{per_positive}"),
            CandidatePolicy::Full => f.write_str("full"),
        }
    }
}

impl FromStr for CandidatePolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(CandidatePolicy::Full);
        }
        let bad = || Error::InvalidParam(format!("candidate policy must be `full` or `1:N`, got `{s}`"));
        let (one, n) = s.split_once(':').ok_or_else(bad)?;
        if one.trim() != "1" {
            return Err(bad());
        }
        let per_positive: usize = n.trim().parse().map_err(|_| bad())?;
        if per_positive == 0 {
            return Err(bad());
        }
        Ok(CandidatePolicy::Sampled { per_positive })
    }
}

/// Candidate list for one user and fold, or `None` when the user's stream has
/// no non-adopted item.
pub fn candidates(
    corpus: &Corpus,
    user: UserId,
    positives: &BTreeSet<ItemId>,
    policy: CandidatePolicy,
    seed: u64,
    fold: usize,
) -> Result<Option<Vec<ItemId>>> {
    let adopted: BTreeSet<ItemId> = corpus.user_events(user).map(|e| e.item).collect();
    let pool: Vec<ItemId> = corpus
        .stream_of(user)?
        .into_iter()
        .filter(|j| !adopted.contains(j))
        .collect();
    if pool.is_empty() {
        return Ok(None);
    }
    let mut out: Vec<ItemId> = positives.iter().copied().collect();
    match policy {
        CandidatePolicy::Full => out.extend(pool),
        CandidatePolicy::Sampled { per_positive } => {
            let n = (per_positive * positives.len()).min(pool.len());
            let mut r = rng::seeded(rng::derive(seed, &[0xCA2D, user.0 as u64, fold as u64]));
            let mut picked = index::sample(&mut r, pool.len(), n).into_vec();
            picked.sort_unstable();
            out.extend(picked.into_iter().map(|k| pool[k]));
        }
    }
    Ok(Some(out))
}

/// Something that orders a candidate list for a user.
pub trait Ranker: Sync {
    fn name(&self) -> String;
    /// `rng_seed` is specific to the user and fold.
    fn rank(&self, user: UserId, candidates: &[ItemId], x: usize, rng_seed: u64) -> Vec<ItemId>;
}

impl Ranker for ModelParams {
    fn name(&self) -> String {
        self.variant.name().to_string()
    }
    fn rank(&self, user: UserId, candidates: &[ItemId], x: usize, _rng_seed: u64) -> Vec<ItemId> {
        self.predict_topx(user, candidates, x)
    }
}

/// Uniformly random order.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomRanker;

impl Ranker for RandomRanker {
    fn name(&self) -> String {
        "random".into()
    }
    fn rank(&self, _user: UserId, candidates: &[ItemId], x: usize, rng_seed: u64) -> Vec<ItemId> {
        let mut list = candidates.to_vec();
        list.shuffle(&mut rng::seeded(rng_seed));
        list.truncate(x);
        list
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub users: usize,
    pub skipped_no_positives: usize,
    pub skipped_no_stream: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub folds: Vec<FoldMetrics>,
    pub aggregate: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub x: usize,
    pub num_folds: usize,
    pub seed: u64,
    pub policy: String,
    pub include_originals: bool,
    pub models: Vec<ModelReport>,
}

impl EvalReport {
    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.model == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// `model,fold,metric,value` rows; the aggregate uses fold `all`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,fold,metric,value\n");
        for m in &self.models {
            let rows = m
                .folds
                .iter()
                .map(|f| (f.fold.to_string(), f.metrics))
                .chain(std::iter::once(("all".to_string(), m.aggregate)));
            for (fold, x) in rows {
                for (name, v) in [("precision", x.precision), ("recall", x.recall), ("ndcg", x.ndcg)] {
                    out.push_str(&format!("{},{},{},{}\n", m.model, fold, name, v));
                }
            }
        }
        out
    }
}

/// Scores every ranker on one fold. Output order follows `rankers`.
#[allow(clippy::too_many_arguments)]
pub fn score_fold(
    corpus: &Corpus,
    plan: &FoldPlan,
    fold: usize,
    rankers: &[&dyn Ranker],
    x: usize,
    policy: CandidatePolicy,
    include_originals: bool,
) -> Result<Vec<FoldMetrics>> {
    enum Outcome {
        NoPositives,
        NoStream,
        Scored(Vec<Metrics>),
    }
    let outcomes: Vec<Outcome> = corpus
        .users()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&u| -> Result<Outcome> {
            let positives = plan.test_items(u, fold, include_originals);
            if positives.is_empty() {
                return Ok(Outcome::NoPositives);
            }
            let Some(cands) = candidates(corpus, u, &positives, policy, plan.seed, fold)? else {
                return Ok(Outcome::NoStream);
            };
            let seed = rng::derive(plan.seed, &[0x5A4D, u.0 as u64, fold as u64]);
            let per_model = rankers
                .iter()
                .map(|r| {
                    let ranked = r.rank(u, &cands, x, seed);
                    Metrics {
                        precision: precision_at(&ranked, &positives, x),
                        recall: recall_at(&ranked, &positives, x).unwrap_or(0.0),
                        ndcg: ndcg_at(&ranked, &positives, x).unwrap_or(0.0),
                    }
                })
                .collect();
            Ok(Outcome::Scored(per_model))
        })
        .collect::<Result<_>>()?;

    let mut sums = vec![Metrics::default(); rankers.len()];
    let (mut users, mut no_pos, mut no_stream) = (0, 0, 0);
    for o in &outcomes {
        match o {
            Outcome::NoPositives => no_pos += 1,
            Outcome::NoStream => no_stream += 1,
            Outcome::Scored(ms) => {
                users += 1;
                for (s, m) in sums.iter_mut().zip(ms) {
                    s.precision += m.precision;
                    s.recall += m.recall;
                    s.ndcg += m.ndcg;
                }
            }
        }
    }
    let n = users.max(1) as f64;
    Ok(sums
        .into_iter()
        .map(|s| FoldMetrics {
            fold,
            users,
            skipped_no_positives: no_pos,
            skipped_no_stream: no_stream,
            metrics: Metrics {
                precision: s.precision / n,
                recall: s.recall / n,
                ndcg: s.ndcg / n,
            },
        })
        .collect())
}

/// A model in the comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Random,
    Trained(Variant),
}

impl ModelSpec {
    pub fn name(self) -> &'static str {
        match self {
            ModelSpec::Random => "random",
            ModelSpec::Trained(v) => v.name(),
        }
    }

    /// Random followed by every variant.
    pub fn all() -> Vec<ModelSpec> {
        std::iter::once(ModelSpec::Random)
            .chain(Variant::ALL.into_iter().map(ModelSpec::Trained))
            .collect()
    }
}

impl FromStr for ModelSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "random" {
            Ok(ModelSpec::Random)
        } else {
            s.parse().map(ModelSpec::Trained)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub x: usize,
    pub num_folds: usize,
    pub seed: u64,
    pub policy: CandidatePolicy,
    pub include_originals: bool,
    pub models: Vec<ModelSpec>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            x: 10,
            num_folds: 5,
            seed: 0,
            policy: CandidatePolicy::default(),
            include_originals: false,
            models: ModelSpec::all(),
        }
    }
}

/// Trains every requested model on each training split and scores it on the
/// matching test fold. Aggregates are means over users, then over folds.
pub fn run_eval(
    corpus: &Corpus,
    phi: &Array2<f64>,
    visibility: &VisibilityTable,
    hyper: &HyperParams,
    config: &EvalConfig,
) -> Result<EvalReport> {
    if config.x == 0 {
        return Err(Error::InvalidParam("x must be at least 1".into()));
    }
    if config.models.is_empty() {
        return Err(Error::InvalidParam("no models to evaluate".into()));
    }
    let plan = FoldPlan::new(corpus, config.num_folds, config.seed)?;
    let mut per_model: Vec<Vec<FoldMetrics>> = vec![Vec::new(); config.models.len()];
    for fold in 0..config.num_folds {
        let training = plan.training_set(corpus.num_items(), fold, config.include_originals);
        let hyper = HyperParams {
            seed: rng::derive(hyper.seed, &[fold as u64]),
            ..*hyper
        };
        let trained: Vec<Box<dyn Ranker>> = config
            .models
            .iter()
            .map(|spec| -> Result<Box<dyn Ranker>> {
                Ok(match *spec {
                    ModelSpec::Random => Box::new(RandomRanker),
                    ModelSpec::Trained(v) => {
                        Box::new(adoption::train_on(corpus, &training, phi, visibility, &hyper, v)?)
                    }
                })
            })
            .collect::<Result<_>>()?;
        let rankers: Vec<&dyn Ranker> = trained.iter().map(|b| b.as_ref()).collect();
        let scores = score_fold(
            corpus,
            &plan,
            fold,
            &rankers,
            config.x,
            config.policy,
            config.include_originals,
        )?;
        for (acc, s) in per_model.iter_mut().zip(scores) {
            acc.push(s);
        }
    }
    let models = config
        .models
        .iter()
        .zip(per_model)
        .map(|(spec, folds)| {
            let counted: Vec<&FoldMetrics> = folds.iter().filter(|f| f.users > 0).collect();
            let n = counted.len().max(1) as f64;
            let aggregate = Metrics {
                precision: counted.iter().map(|f| f.metrics.precision).sum::<f64>() / n,
                recall: counted.iter().map(|f| f.metrics.recall).sum::<f64>() / n,
                ndcg: counted.iter().map(|f| f.metrics.ndcg).sum::<f64>() / n,
            };
            ModelReport {
                model: spec.name().to_string(),
                folds,
                aggregate,
            }
        })
        .collect();
    Ok(EvalReport {
        x: config.x,
        num_folds: config.num_folds,
        seed: config.seed,
        policy: config.policy.to_string(),
        include_originals: config.include_originals,
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Vec<ItemId> {
        v.iter().map(|&j| ItemId(j)).collect()
    }

    fn set(v: &[u32]) -> BTreeSet<ItemId> {
        v.iter().map(|&j| ItemId(j)).collect()
    }

    #[test]
    fn metric_examples() {
        let ranked = ids(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert_eq!(precision_at(&ranked, &set(&[3, 7]), 10), 0.2);
        assert_eq!(precision_at(&ranked[..3], &set(&[0, 1, 2]), 3), 1.0);
        assert_eq!(precision_at(&ranked, &set(&[20]), 10), 0.0);
        assert_eq!(precision_at(&[], &set(&[1]), 10), 0.0);
        assert_eq!(recall_at(&ranked, &set(&[2]), 10), Some(1.0));
        assert_eq!(recall_at(&ranked, &set(&[0, 20]), 10), Some(0.5));
        assert_eq!(recall_at(&ranked, &set(&[]), 10), None);
        assert_eq!(ndcg_at(&ranked, &set(&[0, 1]), 10), Some(1.0));
        let v = ndcg_at(&ranked, &set(&[1]), 10).unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert_eq!(ndcg_at(&ranked, &set(&[30]), 10), Some(0.0));
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("1:19".parse::<CandidatePolicy>().unwrap(), CandidatePolicy::default());
        assert_eq!("full".parse::<CandidatePolicy>().unwrap(), CandidatePolicy::Full);
        assert!("2:19".parse::<CandidatePolicy>().is_err());
        assert!("1:0".parse::<CandidatePolicy>().is_err());
        assert_eq!(CandidatePolicy::default().to_string(), "1:19");
        assert_eq!("vip_like".parse::<ModelSpec>().unwrap(), ModelSpec::Trained(Variant::VipLike));
    }
}
