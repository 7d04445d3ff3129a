//! Stochastic optimization with negative sampling.
//!
//! Each epoch visits users in a seeded random order. For every user a fresh
//! set of `|r_i|` negatives is drawn, the softmax over `O_i = r_i ∪ S_i` is
//! evaluated once, and each `j ∈ O_i` applies the three updates to `u_i`,
//! `θ_j` and `η_j` with `∇ = p_ij − I(r_ij)` and rate `lr · discount^epoch`.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use rand::seq::{index, SliceRandom};

use super::objective::{softmax, TrainingBatch};
use super::{HyperParams, ModelParams, NegativeSampling, Variant};
use crate::corpus::{Corpus, ItemId, UserId};
use crate::error::{Error, Result};
use crate::rng;
use crate::visibility::VisibilityTable;

/// Per-user training positives and per-item adopter counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    num_items: usize,
    /// Sorted by item id.
    positives: Vec<Vec<(ItemId, bool)>>,
    adopters: Vec<usize>,
}

impl TrainingSet {
    pub fn from_events(
        num_users: usize,
        num_items: usize,
        events: impl IntoIterator<Item = (UserId, ItemId, bool)>,
    ) -> Self {
        let mut positives = vec![Vec::new(); num_users];
        let mut adopters = vec![0usize; num_items];
        for (u, j, orig) in events {
            positives[u.index()].push((j, orig));
        }
        for list in positives.iter_mut() {
            list.sort_by_key(|&(j, _)| j);
            list.dedup_by_key(|&mut (j, _)| j);
            for &(j, _) in list.iter() {
                adopters[j.index()] += 1;
            }
        }
        TrainingSet {
            num_items,
            positives,
            adopters,
        }
    }

    /// Every adoption in the corpus.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        Self::from_events(
            corpus.num_users(),
            corpus.num_items(),
            corpus.adoptions().iter().map(|a| (a.user, a.item, a.is_original)),
        )
    }

    pub fn num_users(&self) -> usize {
        self.positives.len()
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn positives(&self, user: UserId) -> &[(ItemId, bool)] {
        &self.positives[user.index()]
    }

    /// `|r_·j|` in this training set.
    pub fn adopters(&self, item: ItemId) -> usize {
        self.adopters[item.index()]
    }
}

/// Draws `count` distinct items uniformly from `0..num_items` minus `excluded`
/// (sorted), or from `pool` minus `excluded` when a pool is given.
pub fn sample_negatives(
    rng: &mut rng::Rng,
    num_items: usize,
    excluded: &[ItemId],
    count: usize,
    pool: Option<&[ItemId]>,
) -> Vec<ItemId> {
    match pool {
        Some(pool) => {
            let candidates: Vec<ItemId> = pool
                .iter()
                .copied()
                .filter(|j| excluded.binary_search(j).is_err())
                .collect();
            let n = count.min(candidates.len());
            index::sample(rng, candidates.len(), n)
                .into_iter()
                .map(|k| candidates[k])
                .collect()
        }
        None => {
            let free = num_items - excluded.len();
            let n = count.min(free);
            index::sample(rng, free, n)
                .into_iter()
                .map(|rank| {
                    // rank-th item not in `excluded`
                    let mut item = rank as u32;
                    for e in excluded {
                        if e.0 <= item {
                            item += 1;
                        } else {
                            break;
                        }
                    }
                    ItemId(item)
                })
                .collect()
        }
    }
}

/// Read/write access to the trainable tables, shared by the sequential and
/// the lock-free parallel trainer.
trait ParamStore {
    fn read_user(&self, i: usize, out: &mut [f64]);
    fn write_user(&mut self, i: usize, vals: &[f64]);
    fn read_item(&self, j: usize, out: &mut [f64]);
    fn write_item(&mut self, j: usize, vals: &[f64]);
    fn fitness(&self, j: usize) -> f64;
    fn set_fitness(&mut self, j: usize, x: f64);
}

impl ParamStore for ModelParams {
    fn read_user(&self, i: usize, out: &mut [f64]) {
        out.iter_mut().zip(self.user.row(i)).for_each(|(o, x)| *o = *x);
    }
    fn write_user(&mut self, i: usize, vals: &[f64]) {
        self.user.row_mut(i).iter_mut().zip(vals).for_each(|(o, x)| *o = *x);
    }
    fn read_item(&self, j: usize, out: &mut [f64]) {
        out.iter_mut().zip(self.item.row(j)).for_each(|(o, x)| *o = *x);
    }
    fn write_item(&mut self, j: usize, vals: &[f64]) {
        self.item.row_mut(j).iter_mut().zip(vals).for_each(|(o, x)| *o = *x);
    }
    fn fitness(&self, j: usize) -> f64 {
        self.fitness[j]
    }
    fn set_fitness(&mut self, j: usize, x: f64) {
        self.fitness[j] = x;
    }
}

struct AtomicTables {
    k: usize,
    user: Vec<AtomicU64>,
    item: Vec<AtomicU64>,
    fitness: Vec<AtomicU64>,
}

fn to_atomic<'a>(it: impl Iterator<Item = &'a f64>) -> Vec<AtomicU64> {
    it.map(|x| AtomicU64::new(x.to_bits())).collect()
}

impl AtomicTables {
    fn from_params(p: &ModelParams) -> Self {
        AtomicTables {
            k: p.num_topics(),
            user: to_atomic(p.user.iter()),
            item: to_atomic(p.item.iter()),
            fitness: to_atomic(p.fitness.iter()),
        }
    }

    fn write_back(&self, p: &mut ModelParams) {
        let load = |a: &AtomicU64| f64::from_bits(a.load(Ordering::Relaxed));
        p.user.iter_mut().zip(&self.user).for_each(|(x, a)| *x = load(a));
        p.item.iter_mut().zip(&self.item).for_each(|(x, a)| *x = load(a));
        p.fitness.iter_mut().zip(&self.fitness).for_each(|(x, a)| *x = load(a));
    }
}

/// A worker's handle onto the shared tables. Item rows may be updated by
/// several workers at once; their writes interleave without coordination.
struct AtomicView<'a>(&'a AtomicTables);

impl ParamStore for AtomicView<'_> {
    fn read_user(&self, i: usize, out: &mut [f64]) {
        let k = self.0.k;
        for (o, a) in out.iter_mut().zip(&self.0.user[i * k..(i + 1) * k]) {
            *o = f64::from_bits(a.load(Ordering::Relaxed));
        }
    }
    fn write_user(&mut self, i: usize, vals: &[f64]) {
        let k = self.0.k;
        for (a, x) in self.0.user[i * k..(i + 1) * k].iter().zip(vals) {
            a.store(x.to_bits(), Ordering::Relaxed);
        }
    }
    fn read_item(&self, j: usize, out: &mut [f64]) {
        let k = self.0.k;
        for (o, a) in out.iter_mut().zip(&self.0.item[j * k..(j + 1) * k]) {
            *o = f64::from_bits(a.load(Ordering::Relaxed));
        }
    }
    fn write_item(&mut self, j: usize, vals: &[f64]) {
        let k = self.0.k;
        for (a, x) in self.0.item[j * k..(j + 1) * k].iter().zip(vals) {
            a.store(x.to_bits(), Ordering::Relaxed);
        }
    }
    fn fitness(&self, j: usize) -> f64 {
        f64::from_bits(self.0.fitness[j].load(Ordering::Relaxed))
    }
    fn set_fitness(&mut self, j: usize, x: f64) {
        self.0.fitness[j].store(x.to_bits(), Ordering::Relaxed);
    }
}

/// Read-only inputs of an update step.
struct StepContext<'a> {
    variant: Variant,
    hyper: &'a HyperParams,
    prior_mean: &'a Array2<f64>,
    visibility: &'a VisibilityTable,
    training: &'a TrainingSet,
}

fn step_impl<P: ParamStore>(
    store: &mut P,
    ctx: &StepContext<'_>,
    batch: &TrainingBatch,
    epoch: usize,
) -> Result<()> {
    if batch.positives.is_empty() || batch.is_empty() {
        return Ok(());
    }
    let k = ctx.prior_mean.ncols();
    let i = batch.user.index();
    let h = ctx.hyper;
    let lr = h.learn_rate_at(epoch);
    let n_pos = batch.positives.len() as f64;
    let learns_relevance = ctx.variant.learns_relevance();
    let learns_fitness = ctx.variant.learns_fitness();
    let theta_reg = if ctx.variant.regularizes_theta() {
        1.0 / h.sigma_theta2
    } else {
        0.0
    };

    let mut u = vec![0.0; k];
    let mut theta = vec![0.0; k];
    store.read_user(i, &mut u);

    let observed: Vec<(ItemId, bool, bool)> = batch.observed().collect();
    let scores: Vec<f64> = observed
        .iter()
        .map(|&(j, _, orig)| {
            store.read_item(j.index(), &mut theta);
            let rel: f64 = u.iter().zip(&theta).map(|(a, b)| a * b).sum();
            ctx.visibility.effective(batch.user, orig) * (rel + store.fitness(j.index()))
        })
        .collect();
    let probs = softmax(&scores);

    let mut new_u = vec![0.0; k];
    let mut new_theta = vec![0.0; k];
    for (&(j, is_pos, orig), p) in observed.iter().zip(probs) {
        let jx = j.index();
        let grad = p - if is_pos { 1.0 } else { 0.0 };
        let v = ctx.visibility.effective(batch.user, orig);
        let item_scale = 2.0 * ctx.training.adopters(j).max(1) as f64;
        if learns_relevance {
            store.read_item(jx, &mut theta);
            let prior = ctx.prior_mean.row(jx);
            for t in 0..k {
                new_u[t] = u[t] - lr * (v * theta[t] * grad + u[t] / (2.0 * n_pos * h.sigma_u2));
                new_theta[t] = theta[t]
                    - lr * (v * u[t] * grad + theta_reg * (theta[t] - prior[t]) / item_scale);
            }
            if new_u.iter().chain(&new_theta).any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    user: i,
                    item: jx,
                    epoch,
                    learn_rate: lr,
                });
            }
            u.copy_from_slice(&new_u);
            store.write_item(jx, &new_theta);
        }
        if learns_fitness {
            let eta = store.fitness(jx);
            let new_eta = eta - lr * (v * grad + eta / (item_scale * h.sigma_eta2));
            if !new_eta.is_finite() {
                return Err(Error::NonFinite {
                    user: i,
                    item: jx,
                    epoch,
                    learn_rate: lr,
                });
            }
            store.set_fitness(jx, new_eta);
        }
    }
    if learns_relevance {
        store.write_user(i, &u);
    }
    Ok(())
}

/// Applies one user's batch of updates to `params` in place.
pub fn gradient_step(
    params: &mut ModelParams,
    training: &TrainingSet,
    batch: &TrainingBatch,
    epoch: usize,
) -> Result<()> {
    let prior_mean = params.prior_mean.clone();
    let visibility = params.visibility.clone();
    let hyper = params.hyper;
    let ctx = StepContext {
        variant: params.variant,
        hyper: &hyper,
        prior_mean: &prior_mean,
        visibility: &visibility,
        training,
    };
    step_impl(params, &ctx, batch, epoch)
}

fn make_batch(
    user: UserId,
    training: &TrainingSet,
    stream_pools: Option<&[Vec<ItemId>]>,
    seed: u64,
    epoch: usize,
) -> TrainingBatch {
    let pos = training.positives(user);
    let positives: Vec<ItemId> = pos.iter().map(|&(j, _)| j).collect();
    let original: Vec<bool> = pos.iter().map(|&(_, o)| o).collect();
    let mut r = rng::seeded(rng::derive(seed, &[epoch as u64, user.0 as u64]));
    let pool = stream_pools
        .map(|p| p[user.index()].as_slice())
        .filter(|p| p.iter().any(|j| positives.binary_search(j).is_err()));
    let negatives = sample_negatives(&mut r, training.num_items(), &positives, positives.len(), pool);
    TrainingBatch {
        user,
        positives,
        original,
        negatives,
    }
}

/// Trains on every adoption in the corpus.
pub fn train(
    corpus: &Corpus,
    phi: &Array2<f64>,
    visibility: &VisibilityTable,
    hyper: &HyperParams,
    variant: Variant,
) -> Result<ModelParams> {
    train_on(corpus, &TrainingSet::from_corpus(corpus), phi, visibility, hyper, variant)
}

/// Trains on an explicit training set (e.g. the training folds).
pub fn train_on(
    corpus: &Corpus,
    training: &TrainingSet,
    phi: &Array2<f64>,
    visibility: &VisibilityTable,
    hyper: &HyperParams,
    variant: Variant,
) -> Result<ModelParams> {
    if phi.nrows() != corpus.num_items() || training.num_items() != corpus.num_items() {
        return Err(Error::DimensionMismatch(format!(
            "corpus has {} items, topic table {}, training set {}",
            corpus.num_items(),
            phi.nrows(),
            training.num_items()
        )));
    }
    let mut params = ModelParams::init(variant, *hyper, phi, corpus.num_users(), visibility)?;
    let stream_pools: Option<Vec<Vec<ItemId>>> = match hyper.negatives {
        NegativeSampling::Global => None,
        NegativeSampling::Stream => Some(
            corpus
                .users()
                .map(|u| corpus.stream_of(u).map(|s| s.into_iter().collect()))
                .collect::<Result<_>>()?,
        ),
    };
    let active: Vec<UserId> = corpus
        .users()
        .filter(|&u| !training.positives(u).is_empty())
        .collect();
    let prior_mean = params.prior_mean.clone();
    let vis = params.visibility.clone();
    let ctx = StepContext {
        variant,
        hyper,
        prior_mean: &prior_mean,
        visibility: &vis,
        training,
    };

    let threads = hyper.threads.max(1);
    let shared = (threads > 1).then(|| AtomicTables::from_params(&params));
    for epoch in 0..hyper.epochs {
        let mut order = active.clone();
        order.shuffle(&mut rng::seeded(rng::derive(hyper.seed, &[0xE90C, epoch as u64])));
        match &shared {
            None => {
                for &u in &order {
                    let batch = make_batch(u, training, stream_pools.as_deref(), hyper.seed, epoch);
                    step_impl(&mut params, &ctx, &batch, epoch)?;
                }
            }
            Some(tables) => {
                let chunk = order.len().div_ceil(threads).max(1);
                let pools = stream_pools.as_deref();
                let ctx = &ctx;
                std::thread::scope(|s| {
                    let handles: Vec<_> = order
                        .chunks(chunk)
                        .map(|users| {
                            s.spawn(move || -> Result<()> {
                                let mut view = AtomicView(tables);
                                for &u in users {
                                    let batch = make_batch(u, training, pools, hyper.seed, epoch);
                                    step_impl(&mut view, ctx, &batch, epoch)?;
                                }
                                Ok(())
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .try_for_each(|h| h.join().expect("training worker panicked"))
                })?;
            }
        }
    }
    if let Some(tables) = &shared {
        tables.write_back(&mut params);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn model(variant: Variant, v: f64) -> ModelParams {
        let phi = array![[0.7, 0.3], [0.2, 0.8], [0.5, 0.5]];
        let hyper = HyperParams {
            num_topics: 2,
            learn_rate: 0.1,
            ..Default::default()
        };
        let vis = VisibilityTable {
            rho: vec![1.0],
            v: vec![v],
            original_override: false,
        };
        ModelParams::init(variant, hyper, &phi, 1, &vis).unwrap()
    }

    #[test]
    fn negatives_exclude_positives_and_are_distinct() {
        let mut r = rng::seeded(3);
        let excluded = vec![ItemId(1), ItemId(4), ItemId(5)];
        for _ in 0..50 {
            let s = sample_negatives(&mut r, 8, &excluded, 5, None);
            assert_eq!(s.len(), 5);
            let mut sorted = s.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted.len(), 5);
            assert!(s.iter().all(|j| !excluded.contains(j) && j.0 < 8));
        }
        let s = sample_negatives(&mut r, 4, &[ItemId(0), ItemId(1), ItemId(2)], 3, None);
        assert_eq!(s, vec![ItemId(3)]);
        let pool = [ItemId(1), ItemId(6), ItemId(7)];
        let s = sample_negatives(&mut r, 8, &excluded, 5, Some(&pool));
        let mut s = s;
        s.sort();
        assert_eq!(s, vec![ItemId(6), ItemId(7)]);
    }

    #[test]
    fn symmetric_pair_gradients() {
        let mut m = model(Variant::Full, 1.0);
        m.item.row_mut(0).assign(&array![1.0, 0.0]);
        m.item.row_mut(1).assign(&array![0.0, 1.0]);
        let training = TrainingSet::from_events(1, 3, [(UserId(0), ItemId(0), false)]);
        let batch = TrainingBatch::new(UserId(0), vec![ItemId(0)], vec![ItemId(1)]);
        gradient_step(&mut m, &training, &batch, 0).unwrap();
        // ∇ = -0.5 for the positive, +0.5 for the negative; η moves by -lr·∇ (up to the tiny prior pull)
        assert!((m.fitness[0] - 0.05).abs() < 1e-6);
        assert!((m.fitness[1] + 0.05).abs() < 1e-6);
        assert!(m.user[[0, 0]] > 0.0 && m.user[[0, 1]] < 0.0);
    }

    #[test]
    fn zero_visibility_leaves_only_regularizer() {
        let mut m = model(Variant::Full, 0.0);
        m.item.row_mut(0).assign(&array![2.0, 2.0]);
        m.fitness[0] = 1.0;
        let before = m.clone();
        let training = TrainingSet::from_events(1, 3, [(UserId(0), ItemId(0), false)]);
        let batch = TrainingBatch::new(UserId(0), vec![ItemId(0)], vec![ItemId(1)]);
        gradient_step(&mut m, &training, &batch, 0).unwrap();
        assert!(m.user.iter().all(|&x| x == 0.0));
        let lr = m.hyper.learn_rate;
        let expect_eta = 1.0 - lr * 1.0 / (2.0 * m.hyper.sigma_eta2);
        assert!((m.fitness[0] - expect_eta).abs() < 1e-15);
        for t in 0..2 {
            let d0 = before.item[[0, t]] - before.prior_mean[[0, t]];
            let d1 = m.item[[0, t]] - m.prior_mean[[0, t]];
            assert!(d1.abs() < d0.abs());
        }
        assert_eq!(m.item.row(1), before.item.row(1));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let mut b = crate::corpus::CorpusBuilder::new(Default::default());
        b.add_edge("a", "b");
        for it in ["x", "y", "z"] {
            b.add_item(it, "");
        }
        b.add_adoption("a", "x", 0, false).unwrap();
        b.add_adoption("b", "y", 5, true).unwrap();
        let corpus = b.finish().unwrap().0;
        let phi = array![[0.7, 0.3], [0.2, 0.8], [0.5, 0.5]];
        let hyper = HyperParams {
            num_topics: 2,
            epochs: 0,
            ..Default::default()
        };
        let vis = VisibilityTable::uniform(2);
        let m = train(&corpus, &phi, &vis, &hyper, Variant::Full).unwrap();
        assert_eq!(m, ModelParams::init(Variant::Full, hyper, &phi, 2, &vis).unwrap());
    }

    #[test]
    fn huge_learning_rate_is_reported() {
        let mut m = model(Variant::Full, 1.0);
        m.hyper.learn_rate = 1e300;
        m.item.fill(1e10);
        let training = TrainingSet::from_events(1, 3, [(UserId(0), ItemId(0), false)]);
        let batch = TrainingBatch::new(UserId(0), vec![ItemId(0)], vec![ItemId(1)]);
        let mut result = Ok(());
        for epoch in 0..5 {
            result = gradient_step(&mut m, &training, &batch, epoch);
            if result.is_err() {
                break;
            }
        }
        assert!(matches!(result, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn fitness_only_keeps_user_vectors_zero() {
        let mut m = model(Variant::FitnessOnly, 1.0);
        let training = TrainingSet::from_events(1, 3, [(UserId(0), ItemId(0), false)]);
        let batch = TrainingBatch::new(UserId(0), vec![ItemId(0)], vec![ItemId(1)]);
        gradient_step(&mut m, &training, &batch, 0).unwrap();
        assert!(m.user.iter().all(|&x| x == 0.0));
        assert!(m.fitness[0] > 0.0);
        let mut m = model(Variant::RelevanceOnly, 1.0);
        gradient_step(&mut m, &training, &batch, 0).unwrap();
        assert!(m.fitness.iter().all(|&x| x == 0.0));
    }
}
