use ndarray::{Array1, Array2};

use super::ModelParams;
use crate::corpus::{ItemId, UserId};
use crate::error::{Error, Result};

/// One user's observed set `O_i`: adopted items followed by sampled negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub user: UserId,
    pub positives: Vec<ItemId>,
    /// Whether each positive is the user's own original post.
    pub original: Vec<bool>,
    pub negatives: Vec<ItemId>,
}

impl TrainingBatch {
    pub fn new(user: UserId, positives: Vec<ItemId>, negatives: Vec<ItemId>) -> Self {
        let original = vec![false; positives.len()];
        TrainingBatch {
            user,
            positives,
            original,
            negatives,
        }
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(item, is_positive, is_original)` over `O_i`, positives first.
    pub fn observed(&self) -> impl Iterator<Item = (ItemId, bool, bool)> + '_ {
        self.positives
            .iter()
            .zip(&self.original)
            .map(|(&j, &o)| (j, true, o))
            .chain(self.negatives.iter().map(|&j| (j, false, false)))
    }
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

fn batch_scores(params: &ModelParams, batch: &TrainingBatch) -> Vec<f64> {
    batch
        .observed()
        .map(|(j, _, orig)| params.score(batch.user, j, orig))
        .collect()
}

/// Probability that `item` is the adopted one among the batch's observed set.
pub fn adoption_prob(params: &ModelParams, batch: &TrainingBatch, item: ItemId) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidParam(format!("empty observed set for {}", batch.user)));
    }
    let pos = batch
        .observed()
        .position(|(j, _, _)| j == item)
        .ok_or_else(|| Error::InvalidParam(format!("{item} is not in the observed set")))?;
    Ok(softmax(&batch_scores(params, batch))[pos])
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveValue {
    pub user_prior: f64,
    pub fitness_prior: f64,
    pub item_prior: f64,
    pub likelihood: f64,
    /// `Σ_i ln v_i`; constant in the trainable parameters, reported only.
    pub visibility_log_term: f64,
}

impl ObjectiveValue {
    /// Priors plus likelihood (the optimized quantity).
    pub fn total(&self) -> f64 {
        self.user_prior + self.fitness_prior + self.item_prior + self.likelihood
    }
}

/// MAP objective over the given batches.
pub fn objective(params: &ModelParams, batches: &[TrainingBatch]) -> ObjectiveValue {
    let h = &params.hyper;
    let user_prior = -params.user.iter().map(|x| x * x).sum::<f64>() / (2.0 * h.sigma_u2);
    let fitness_prior = -params.fitness.iter().map(|x| x * x).sum::<f64>() / (2.0 * h.sigma_eta2);
    let item_prior = if params.variant.regularizes_theta() {
        -(&params.item - &params.prior_mean).iter().map(|x| x * x).sum::<f64>() / (2.0 * h.sigma_theta2)
    } else {
        0.0
    };
    let mut likelihood = 0.0;
    for batch in batches {
        if batch.is_empty() {
            continue;
        }
        let scores = batch_scores(params, batch);
        let lse = log_sum_exp(&scores);
        likelihood += scores[..batch.positives.len()].iter().map(|s| s - lse).sum::<f64>();
    }
    let visibility_log_term = params.visibility.v.iter().map(|v| v.ln()).sum();
    ObjectiveValue {
        user_prior,
        fitness_prior,
        item_prior,
        likelihood,
        visibility_log_term,
    }
}

/// Gradient of [`objective`] with respect to each trainable block.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub user: Array2<f64>,
    pub item: Array2<f64>,
    pub fitness: Array1<f64>,
}

/// Exact gradient of priors + likelihood. Frozen blocks get zero gradient.
pub fn objective_gradient(params: &ModelParams, batches: &[TrainingBatch]) -> Gradient {
    let h = &params.hyper;
    let variant = params.variant;
    let mut g_user = params.user.mapv(|x| -x / h.sigma_u2);
    let mut g_item = if variant.regularizes_theta() {
        (&params.prior_mean - &params.item).mapv(|x| x / h.sigma_theta2)
    } else {
        Array2::zeros(params.item.dim())
    };
    let mut g_fit = params.fitness.mapv(|x| -x / h.sigma_eta2);

    for batch in batches {
        if batch.is_empty() {
            continue;
        }
        let i = batch.user.index();
        let probs = softmax(&batch_scores(params, batch));
        let n_pos = batch.positives.len() as f64;
        for ((j, is_pos, orig), p) in batch.observed().zip(probs) {
            let v = params.effective_visibility(batch.user, orig);
            let w = v * ((is_pos as u8) as f64 - n_pos * p);
            let jx = j.index();
            g_user
                .row_mut(i)
                .scaled_add(w, &params.item.row(jx));
            g_item
                .row_mut(jx)
                .scaled_add(w, &params.user.row(i));
            g_fit[jx] += w;
        }
    }
    if !variant.learns_relevance() {
        g_user.fill(0.0);
        g_item.fill(0.0);
    }
    if !variant.learns_fitness() {
        g_fit.fill(0.0);
    }
    Gradient {
        user: g_user,
        item: g_item,
        fitness: g_fit,
    }
}

/// One deterministic full-batch gradient-ascent step on the objective.
pub fn full_batch_ascent(params: &mut ModelParams, batches: &[TrainingBatch], learn_rate: f64) {
    let g = objective_gradient(params, batches);
    params.user.scaled_add(learn_rate, &g.user);
    params.item.scaled_add(learn_rate, &g.item);
    params.fitness.scaled_add(learn_rate, &g.fitness);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adoption::{HyperParams, Variant};
    use crate::visibility::VisibilityTable;
    use ndarray::array;
    use proptest::prelude::*;

    fn zero_model() -> ModelParams {
        let phi = array![[0.5, 0.5], [0.2, 0.8], [0.9, 0.1]];
        let hyper = HyperParams {
            num_topics: 2,
            ..Default::default()
        };
        ModelParams::init(Variant::Full, hyper, &phi, 1, &VisibilityTable::uniform(1)).unwrap()
    }

    #[test]
    fn uniform_softmax() {
        assert_eq!(softmax(&[3.0; 4]), vec![0.25; 4]);
    }

    #[test]
    fn exact_two_way_softmax() {
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_survives_huge_scores() {
        let p = softmax(&[1e308, 1e308, -1e308]);
        assert!((p[0] - 0.5).abs() < 1e-15 && p[2] == 0.0);
    }

    #[test]
    fn adoption_prob_errors() {
        let m = zero_model();
        let empty = TrainingBatch::new(UserId(0), vec![], vec![]);
        assert!(adoption_prob(&m, &empty, ItemId(0)).is_err());
        let b = TrainingBatch::new(UserId(0), vec![ItemId(0)], vec![ItemId(1)]);
        assert!(adoption_prob(&m, &b, ItemId(2)).is_err());
        assert!((adoption_prob(&m, &b, ItemId(0)).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_model_priors_vanish() {
        let v = objective(&zero_model(), &[]);
        assert_eq!(v.user_prior, 0.0);
        assert_eq!(v.fitness_prior, 0.0);
        assert_eq!(v.item_prior, 0.0);
    }

    #[test]
    fn symmetric_pair_likelihood() {
        let m = zero_model();
        let b = TrainingBatch::new(UserId(0), vec![ItemId(0)], vec![ItemId(1)]);
        let v = objective(&m, &[b]);
        assert!((v.likelihood + 2f64.ln()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_shift_invariant(
            scores in prop::collection::vec(-50.0f64..50.0, 1..20),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&scores);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
