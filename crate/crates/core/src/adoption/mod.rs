//! Softmax adoption model with relevance, fitness and visibility.
//!
//! A user `i` adopts item `j` out of her observed set `O_i` with probability
//! `exp(s_ij) / Σ_l exp(s_il)` where `s_ij = v_i (u_i·θ_j + η_j)`. Item topic
//! vectors are anchored to the LDA mixture `φ_j` through a Gaussian prior.

mod objective;
mod train;

use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bundle::Bundle;
use crate::corpus::{ItemId, UserId};
use crate::error::{Error, Result};
use crate::rng;
use crate::visibility::VisibilityTable;

pub use objective::{
    adoption_prob, full_batch_ascent, log_sum_exp, objective, objective_gradient, softmax, Gradient, ObjectiveValue,
    TrainingBatch,
};
pub use train::{gradient_step, sample_negatives, train, train_on, TrainingSet};

/// Model family. All share the parameter layout; they differ in which blocks
/// are learned, whether visibility is used and what θ is anchored to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Relevance + fitness + visibility, θ anchored to the item's topic mixture.
    Full,
    /// PMF analog: `u·θ` only, no visibility, no fitness, θ prior centered at zero.
    RelevanceOnly,
    /// Item fitness only, learned with visibility; ranks by `η`.
    FitnessOnly,
    /// Relevance + fitness + visibility without text: θ is free.
    VipLike,
    /// Relevance + fitness with text, no visibility.
    SoftmaxCtr,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::RelevanceOnly,
        Variant::FitnessOnly,
        Variant::VipLike,
        Variant::SoftmaxCtr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::RelevanceOnly => "relevance_only",
            Variant::FitnessOnly => "fitness_only",
            Variant::VipLike => "vip_like",
            Variant::SoftmaxCtr => "softmax_ctr",
        }
    }

    pub fn uses_visibility(self) -> bool {
        matches!(self, Variant::Full | Variant::FitnessOnly | Variant::VipLike)
    }

    pub fn learns_relevance(self) -> bool {
        !matches!(self, Variant::FitnessOnly)
    }

    pub fn learns_fitness(self) -> bool {
        !matches!(self, Variant::RelevanceOnly)
    }

    pub fn uses_text(self) -> bool {
        matches!(self, Variant::Full | Variant::SoftmaxCtr | Variant::FitnessOnly)
    }

    /// Whether θ is pulled toward its prior mean.
    pub fn regularizes_theta(self) -> bool {
        !matches!(self, Variant::VipLike)
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s || v.name().replace('_', "-") == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown variant `{s}`")))
    }
}

/// Where sampled negatives come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSampling {
    /// Uniform over all items the user did not adopt.
    Global,
    /// Uniform over non-adopted items in the user's friend stream.
    Stream,
}

impl FromStr for NegativeSampling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(NegativeSampling::Global),
            "stream" => Ok(NegativeSampling::Stream),
            other => Err(Error::InvalidParam(format!("unknown negative sampling `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub num_topics: usize,
    pub sigma_u2: f64,
    pub sigma_theta2: f64,
    pub sigma_eta2: f64,
    pub learn_rate: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_discount: f64,
    pub epochs: usize,
    pub seed: u64,
    pub negatives: NegativeSampling,
    /// Std-dev of the θ perturbation used by the text-free variants.
    pub init_noise: f64,
    /// 1 runs the deterministic single-writer trainer.
    pub threads: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            num_topics: 100,
            sigma_u2: 1e4,
            sigma_theta2: 1e4,
            sigma_eta2: 10.0,
            learn_rate: 0.01,
            lr_discount: 0.9,
            epochs: 30,
            seed: 0,
            negatives: NegativeSampling::Global,
            init_noise: 0.1,
            threads: 1,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let variances = [self.sigma_u2, self.sigma_theta2, self.sigma_eta2];
        if variances.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParam("prior variances must be positive".into()));
        }
        if !(self.lr_discount > 0.0 && self.lr_discount <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "learning-rate discount must be in (0, 1], got {}",
                self.lr_discount
            )));
        }
        if !(self.learn_rate > 0.0 && self.learn_rate.is_finite()) {
            return Err(Error::InvalidParam("learning rate must be positive".into()));
        }
        if self.num_topics == 0 {
            return Err(Error::InvalidParam("K must be positive".into()));
        }
        if !(self.init_noise >= 0.0) {
            return Err(Error::InvalidParam("init noise must be non-negative".into()));
        }
        Ok(())
    }

    pub fn learn_rate_at(&self, epoch: usize) -> f64 {
        self.learn_rate * self.lr_discount.powi(epoch as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub variant: Variant,
    pub hyper: HyperParams,
    /// N×K user topic vectors.
    pub user: Array2<f64>,
    /// D×K item topic vectors θ.
    pub item: Array2<f64>,
    /// Item fitness η.
    pub fitness: Array1<f64>,
    /// D×K prior mean of θ (φ, uniform or zero depending on the variant).
    pub prior_mean: Array2<f64>,
    /// Visibility used by this model (all ones for variants without it).
    pub visibility: VisibilityTable,
}

impl ModelParams {
    /// `u = 0`, `η = 0`, `θ` at its prior mean. Text-free variants perturb θ
    /// so that the user and item factors can leave the symmetric point.
    pub fn init(
        variant: Variant,
        hyper: HyperParams,
        phi: &Array2<f64>,
        num_users: usize,
        visibility: &VisibilityTable,
    ) -> Result<Self> {
        hyper.validate()?;
        let (d, k) = phi.dim();
        if k != hyper.num_topics {
            return Err(Error::DimensionMismatch(format!(
                "topic mixtures have K={k}, hyperparameters say K={}",
                hyper.num_topics
            )));
        }
        if visibility.len() != num_users {
            return Err(Error::DimensionMismatch(format!(
                "visibility table has {} users, corpus has {num_users}",
                visibility.len()
            )));
        }
        let prior_mean = match variant {
            Variant::Full | Variant::SoftmaxCtr | Variant::FitnessOnly => phi.clone(),
            Variant::VipLike => Array2::from_elem((d, k), 1.0 / k as f64),
            Variant::RelevanceOnly => Array2::zeros((d, k)),
        };
        let mut item = prior_mean.clone();
        if !variant.uses_text() && hyper.init_noise > 0.0 {
            let mut r = rng::seeded(rng::derive(hyper.seed, &[0x1217]));
            let noise = Normal::new(0.0, hyper.init_noise).expect("valid std-dev");
            item.mapv_inplace(|x| x + noise.sample(&mut r));
        }
        let visibility = if variant.uses_visibility() {
            visibility.clone()
        } else {
            VisibilityTable::uniform(num_users)
        };
        Ok(ModelParams {
            variant,
            hyper,
            user: Array2::zeros((num_users, k)),
            item,
            fitness: Array1::zeros(d),
            prior_mean,
            visibility,
        })
    }

    pub fn num_users(&self) -> usize {
        self.user.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.item.nrows()
    }

    pub fn num_topics(&self) -> usize {
        self.item.ncols()
    }

    /// Relevance `u_i·θ_j`.
    pub fn relevance(&self, user: UserId, item: ItemId) -> f64 {
        self.user.row(user.index()).dot(&self.item.row(item.index()))
    }

    /// Visibility applied to a user-item event.
    pub fn effective_visibility(&self, user: UserId, is_original: bool) -> f64 {
        self.visibility.effective(user, is_original)
    }

    /// `v_eff (u_i·θ_j + η_j)`.
    pub fn score(&self, user: UserId, item: ItemId, is_original: bool) -> f64 {
        self.effective_visibility(user, is_original)
            * (self.relevance(user, item) + self.fitness[item.index()])
    }

    /// Top-`x` candidates by score, ties broken by ascending item id.
    pub fn predict_topx(&self, user: UserId, candidates: &[ItemId], x: usize) -> Vec<ItemId> {
        let scored: Vec<(ItemId, f64)> = candidates
            .iter()
            .map(|&j| (j, self.score(user, j, false)))
            .collect();
        rank_by_score(scored, x)
    }

    pub fn to_bundle(&self) -> Bundle {
        let mut b = Bundle::new(
            "model",
            serde_json::json!({
                "variant": self.variant,
                "hyper": self.hyper,
                "original_override": self.visibility.original_override,
            }),
        );
        b.push_matrix("user", self.user.clone());
        b.push_matrix("item", self.item.clone());
        b.push_vector("fitness", &self.fitness);
        b.push_matrix("prior_mean", self.prior_mean.clone());
        b.push_vector("visibility", &Array1::from(self.visibility.v.clone()));
        b.push_vector("backlog", &Array1::from(self.visibility.rho.clone()));
        b
    }

    pub fn from_bundle(b: Bundle) -> Result<Self> {
        let b = b.expect_kind("model")?;
        let variant: Variant = serde_json::from_value(b.meta["variant"].clone())?;
        let hyper: HyperParams = serde_json::from_value(b.meta["hyper"].clone())?;
        let original_override = b.meta["original_override"].as_bool().unwrap_or(false);
        let user = b.matrix("user")?.clone();
        let item = b.matrix("item")?.clone();
        let fitness = b.vector("fitness")?;
        let prior_mean = b.matrix("prior_mean")?.clone();
        let v = b.vector("visibility")?.to_vec();
        let rho = b.vector("backlog")?.to_vec();
        if user.ncols() != item.ncols()
            || item.dim() != prior_mean.dim()
            || fitness.len() != item.nrows()
            || v.len() != user.nrows()
            || rho.len() != user.nrows()
        {
            return Err(Error::DimensionMismatch("inconsistent model checkpoint".into()));
        }
        Ok(ModelParams {
            variant,
            hyper,
            user,
            item,
            fitness,
            prior_mean,
            visibility: VisibilityTable {
                rho,
                v,
                original_override,
            },
        })
    }

    /// Human-readable export of all parameters.
    pub fn to_json(&self) -> serde_json::Value {
        let rows = |m: &Array2<f64>| -> Vec<Vec<f64>> { m.rows().into_iter().map(|r| r.to_vec()).collect() };
        serde_json::json!({
            "variant": self.variant,
            "hyper": self.hyper,
            "original_override": self.visibility.original_override,
            "user": rows(&self.user),
            "item": rows(&self.item),
            "fitness": self.fitness.to_vec(),
            "visibility": self.visibility.v,
            "backlog": self.visibility.rho,
        })
    }
}

/// Sorts by descending score (ties: ascending id) and keeps the first `x`.
pub fn rank_by_score(mut scored: Vec<(ItemId, f64)>, x: usize) -> Vec<ItemId> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().take(x).map(|(j, _)| j).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn params() -> ModelParams {
        let phi = array![[0.5, 0.5], [1.0, 0.0], [0.0, 1.0]];
        let hyper = HyperParams {
            num_topics: 2,
            ..Default::default()
        };
        let vis = VisibilityTable {
            rho: vec![1.0, 1.0],
            v: vec![0.5, 1.0],
            original_override: false,
        };
        ModelParams::init(Variant::Full, hyper, &phi, 2, &vis).unwrap()
    }

    #[test]
    fn zero_parameters_score_zero() {
        let p = params();
        assert_eq!(p.score(UserId(0), ItemId(1), false), 0.0);
    }

    #[test]
    fn score_arithmetic() {
        let mut p = params();
        p.user.row_mut(0).assign(&array![2.0, 0.0]);
        p.fitness[1] = 1.0;
        // u·θ = 2, η = 1, v = 0.5
        assert!((p.score(UserId(0), ItemId(1), false) - 1.5).abs() < 1e-15);
        p.visibility.original_override = true;
        assert!((p.score(UserId(0), ItemId(1), true) - 3.0).abs() < 1e-15);
        assert!((p.score(UserId(0), ItemId(1), false) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn initialization() {
        let p = params();
        assert!(p.user.iter().all(|&x| x == 0.0));
        assert!(p.fitness.iter().all(|&x| x == 0.0));
        assert_eq!(p.item, p.prior_mean);
        let phi = array![[0.5, 0.5], [1.0, 0.0]];
        let hyper = HyperParams {
            num_topics: 2,
            ..Default::default()
        };
        let vis = VisibilityTable::uniform(1);
        let r = ModelParams::init(Variant::RelevanceOnly, hyper, &phi, 1, &vis).unwrap();
        assert!(r.prior_mean.iter().all(|&x| x == 0.0));
        assert!(r.item.iter().any(|&x| x != 0.0));
        let v = ModelParams::init(Variant::VipLike, hyper, &phi, 1, &vis).unwrap();
        assert!(v.prior_mean.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("nope".parse::<Variant>().is_err());
    }

    #[test]
    fn ranking_ties_and_single() {
        let mut p = params();
        p.fitness[0] = 1.0;
        assert_eq!(p.predict_topx(UserId(0), &[ItemId(2)], 10), vec![ItemId(2)]);
        assert_eq!(
            p.predict_topx(UserId(0), &[ItemId(2), ItemId(1)], 10),
            vec![ItemId(1), ItemId(2)]
        );
        assert_eq!(
            p.predict_topx(UserId(0), &[ItemId(2), ItemId(1), ItemId(0)], 1),
            vec![ItemId(0)]
        );
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut p = params();
        p.user[[1, 0]] = -3.25;
        p.fitness[2] = 0.125;
        let back = ModelParams::from_bundle(Bundle::from_bytes(&p.to_bundle().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn hyper_validation() {
        let bad = HyperParams {
            sigma_u2: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = HyperParams {
            lr_discount: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(HyperParams::default().validate().is_ok());
    }
}
