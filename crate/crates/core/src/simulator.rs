//! Synthetic social streams with known parameters.
//!
//! Users sit in planted communities, each tied to one topic. Items get a
//! Dirichlet topic mixture, tokens from a block-diagonal topic-word table, a
//! latent topic vector `θ = φ + ε` and a fitness `η`. Each user looks at the
//! most recent items posted by her friends and adopts each one with a
//! Bernoulli whose mean is her activity level times the softmax share of
//! `v_i (u_i·θ_j + η_j)` over the viewed set.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::adoption::{log_sum_exp, ModelParams};
use crate::bundle::Bundle;
use crate::corpus::{
    Corpus, CorpusBuilder, IngestOptions, ItemId, ADOPTIONS_FILE, EDGES_FILE, ITEMS_FILE, SECONDS_PER_DAY,
};
use crate::error::{Error, Result};
use crate::evaluation::{self, CandidatePolicy, FoldPlan, RandomRanker, Ranker};
use crate::netinfo::pearson;
use crate::rng;
use crate::visibility::{visibility, RateModel, SurfingParams};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.bin";
pub const SIM_CONFIG_FILE: &str = "sim_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_topics: usize,
    pub vocab_size: usize,
    pub tokens_per_item: usize,
    /// Symmetric Dirichlet parameter of item topic mixtures.
    pub alpha: f64,
    /// Extra Dirichlet mass on the author's community topic.
    pub author_topic_boost: f64,
    /// Share of topic-word mass spread over the whole vocabulary.
    pub word_overlap: f64,
    pub sigma_u2: f64,
    pub sigma_theta2: f64,
    pub sigma_eta2: f64,
    /// Mean of `u_i` along the community topic.
    pub community_strength: f64,
    pub mu: f64,
    pub lambda: f64,
    pub communities: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    /// Per-user multiplier on `p_inter` is drawn from `U(1−h, 1+h)`.
    pub bridging: f64,
    pub items_viewed: usize,
    /// Mean adoptions per user before the activity multiplier.
    pub expected_adoptions: f64,
    /// Log-scale spread of per-user activity.
    pub activity_sigma: f64,
    pub window_days: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig::preset(Preset::Desk, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Tiny,
    Desk,
    Recovery,
    /// Denser planted communities for the network analysis.
    Communities,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Preset::Tiny),
            "desk" => Ok(Preset::Desk),
            "recovery" => Ok(Preset::Recovery),
            "communities" => Ok(Preset::Communities),
            other => Err(Error::InvalidParam(format!(
                "unknown preset `{other}` (expected tiny, desk, recovery or communities)"
            ))),
        }
    }
}

impl SimConfig {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        let desk = SimConfig {
            num_users: 500,
            num_items: 500,
            num_topics: 10,
            vocab_size: 1000,
            tokens_per_item: 40,
            alpha: 0.1,
            author_topic_boost: 1.0,
            word_overlap: 0.1,
            sigma_u2: 6.0,
            sigma_theta2: 0.01,
            sigma_eta2: 0.5,
            community_strength: 3.0,
            mu: 14.0,
            lambda: 14.0,
            communities: 5,
            p_intra: 0.1,
            p_inter: 0.005,
            bridging: 1.0,
            items_viewed: 50,
            expected_adoptions: 6.0,
            activity_sigma: 0.6,
            window_days: 30.0,
            seed,
        };
        match preset {
            Preset::Desk => desk,
            Preset::Tiny => SimConfig {
                num_users: 60,
                num_items: 120,
                num_topics: 4,
                vocab_size: 200,
                tokens_per_item: 20,
                communities: 2,
                p_intra: 0.5,
                p_inter: 0.05,
                items_viewed: 30,
                expected_adoptions: 4.0,
                ..desk
            },
            Preset::Recovery => SimConfig {
                num_items: 200,
                sigma_eta2: 2.0,
                community_strength: 0.5,
                sigma_u2: 0.01,
                expected_adoptions: 8.0,
                ..desk
            },
            Preset::Communities => SimConfig {
                p_intra: 0.2,
                p_inter: 0.02,
                sigma_u2: 1.0,
                ..desk
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_users", self.num_users),
            ("num_items", self.num_items),
            ("num_topics", self.num_topics),
            ("vocab_size", self.vocab_size),
            ("communities", self.communities),
            ("items_viewed", self.items_viewed),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidParam(format!("{name} must be at least 1")));
            }
        }
        if self.num_users < 2 {
            return Err(Error::InvalidParam("need at least 2 users".into()));
        }
        if self.num_topics > u16::MAX as usize {
            return Err(Error::InvalidParam("too many topics".into()));
        }
        for (name, p) in [
            ("p_intra", self.p_intra),
            ("p_inter", self.p_inter),
            ("word_overlap", self.word_overlap),
            ("bridging", self.bridging),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParam(format!("{name} must lie in [0,1], got {p}")));
            }
        }
        let nonneg = [
            ("sigma_u2", self.sigma_u2),
            ("sigma_theta2", self.sigma_theta2),
            ("sigma_eta2", self.sigma_eta2),
            ("activity_sigma", self.activity_sigma),
            ("expected_adoptions", self.expected_adoptions),
            ("author_topic_boost", self.author_topic_boost),
            ("community_strength", self.community_strength),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("window_days", self.window_days),
            ("mu", self.mu),
            ("lambda", self.lambda),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn community_of(&self, user: usize) -> usize {
        user * self.communities / self.num_users
    }

    pub fn community_topic(&self, community: usize) -> usize {
        community % self.num_topics
    }
}

/// Planted parameters, indexed like the simulator's own users and items.
/// Ids are zero-padded so the corpus's sorted order matches these indices.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub user: Array2<f64>,
    pub item: Array2<f64>,
    pub fitness: Array1<f64>,
    pub phi: Array2<f64>,
    pub beta: Array2<f64>,
    pub visibility: Array1<f64>,
    pub backlog: Array1<f64>,
    pub community: Vec<usize>,
    pub activity: Array1<f64>,
}

impl GroundTruth {
    pub fn to_bundle(&self, config: &SimConfig) -> Result<Bundle> {
        let mut b = Bundle::new("ground_truth", serde_json::to_value(config)?);
        b.push_matrix("user", self.user.clone());
        b.push_matrix("item", self.item.clone());
        b.push_vector("fitness", &self.fitness);
        b.push_matrix("phi", self.phi.clone());
        b.push_matrix("beta", self.beta.clone());
        b.push_vector("visibility", &self.visibility);
        b.push_vector("backlog", &self.backlog);
        b.push_vector("community", &self.community.iter().map(|&c| c as f64).collect());
        b.push_vector("activity", &self.activity);
        Ok(b)
    }

    pub fn from_bundle(b: Bundle) -> Result<(Self, SimConfig)> {
        let b = b.expect_kind("ground_truth")?;
        let config: SimConfig = serde_json::from_value(b.meta.clone())?;
        let gt = GroundTruth {
            user: b.matrix("user")?.clone(),
            item: b.matrix("item")?.clone(),
            fitness: b.vector("fitness")?,
            phi: b.matrix("phi")?.clone(),
            beta: b.matrix("beta")?.clone(),
            visibility: b.vector("visibility")?,
            backlog: b.vector("backlog")?,
            community: b.vector("community")?.iter().map(|&c| c as usize).collect(),
            activity: b.vector("activity")?,
        };
        Ok((gt, config))
    }
}

/// A generated dataset: the raw records plus the corpus built from them.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub config: SimConfig,
    pub corpus: Corpus,
    pub truth: GroundTruth,
    pub edges: Vec<(String, String)>,
    pub items: Vec<(String, String)>,
    /// `(user, item, time, is_original)`.
    pub adoptions: Vec<(String, String, i64, bool)>,
}

fn pad(prefix: char, k: usize, n: usize) -> String {
    let width = (n.saturating_sub(1)).to_string().len().max(4);
    format!("{prefix}{k:0width$}")
}

fn normal(sigma2: f64) -> Normal<f64> {
    Normal::new(0.0, sigma2.sqrt()).expect("non-negative variance")
}

fn dirichlet(r: &mut rng::Rng, alphas: &[f64]) -> Vec<f64> {
    let mut draws: Vec<f64> = alphas
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(r))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter_mut().for_each(|x| *x /= total);
    } else {
        // every gamma draw underflowed; fall back to the largest shape
        let best = (0..alphas.len())
            .max_by(|&a, &b| alphas[a].total_cmp(&alphas[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        draws.iter_mut().enumerate().for_each(|(k, x)| *x = (k == best) as u8 as f64);
    }
    draws
}

fn categorical(r: &mut rng::Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = r.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        if x < w {
            return k;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Block-diagonal topic-word table: topic `k` owns a contiguous slice of the
/// vocabulary and spreads `overlap` of its mass uniformly over all words.
pub fn planted_beta(num_topics: usize, vocab_size: usize, overlap: f64) -> Array2<f64> {
    let mut beta = Array2::from_elem((num_topics, vocab_size), overlap / vocab_size as f64);
    for k in 0..num_topics {
        let lo = k * vocab_size / num_topics;
        let hi = ((k + 1) * vocab_size / num_topics).max(lo + 1).min(vocab_size);
        let share = (1.0 - overlap) / (hi - lo) as f64;
        for w in lo..hi {
            beta[[k, w]] += share;
        }
    }
    let sums = beta.sum_axis(ndarray::Axis(1));
    for (mut row, s) in beta.rows_mut().into_iter().zip(sums) {
        row /= s;
    }
    beta
}

/// Draws a dataset. Each stage uses its own derived random stream.
pub fn simulate(config: &SimConfig) -> Result<Simulation> {
    config.validate()?;
    let (n, d, k) = (config.num_users, config.num_items, config.num_topics);
    let stream = |tag: u64| rng::seeded(rng::derive(config.seed, &[tag]));

    let community: Vec<usize> = (0..n).map(|i| config.community_of(i)).collect();

    // follower graph
    let mut r = stream(1);
    let mut friends: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, fr) in friends.iter_mut().enumerate() {
        let b = 1.0 + config.bridging * (2.0 * r.random::<f64>() - 1.0);
        let p_out = (config.p_inter * b).min(1.0);
        for j in 0..n {
            if j == i {
                continue;
            }
            let p = if community[i] == community[j] { config.p_intra } else { p_out };
            if r.random::<f64>() < p {
                fr.push(j);
            }
        }
        if fr.is_empty() {
            let j = (i + 1 + r.random_range(0..n - 1)) % n;
            fr.push(j);
        }
    }

    // users
    let mut r = stream(2);
    let nu = normal(config.sigma_u2);
    let mut user = Array2::zeros((n, k));
    for i in 0..n {
        for t in 0..k {
            user[[i, t]] = nu.sample(&mut r);
        }
        user[[i, config.community_topic(community[i])]] += config.community_strength;
    }
    let activity_dist = LogNormal::new(-config.activity_sigma.powi(2) / 2.0, config.activity_sigma)
        .expect("finite log-normal parameters");
    let activity: Array1<f64> = (0..n).map(|_| activity_dist.sample(&mut r)).collect();

    // items
    let mut r = stream(3);
    let beta = planted_beta(k, config.vocab_size, config.word_overlap);
    let ntheta = normal(config.sigma_theta2);
    let neta = normal(config.sigma_eta2);
    let window_secs = (config.window_days * SECONDS_PER_DAY) as i64;
    let mut author = Vec::with_capacity(d);
    let mut posted = Vec::with_capacity(d);
    let mut phi = Array2::zeros((d, k));
    let mut item = Array2::zeros((d, k));
    let mut fitness = Array1::zeros(d);
    let mut texts = Vec::with_capacity(d);
    for j in 0..d {
        let a = r.random_range(0..n);
        author.push(a);
        posted.push(r.random_range(0..window_secs.max(1)));
        let mut alphas = vec![config.alpha; k];
        alphas[config.community_topic(community[a])] += config.author_topic_boost;
        let mix = dirichlet(&mut r, &alphas);
        for t in 0..k {
            phi[[j, t]] = mix[t];
            item[[j, t]] = mix[t] + ntheta.sample(&mut r);
        }
        fitness[j] = neta.sample(&mut r);
        let mut words = Vec::with_capacity(config.tokens_per_item);
        for _ in 0..config.tokens_per_item {
            let z = categorical(&mut r, &mix);
            let w = categorical(&mut r, beta.row(z).as_slice().expect("standard layout"));
            words.push(pad('w', w, config.vocab_size));
        }
        texts.push(words.join(" "));
    }

    // visibility from the realized graph and the expected posting rate
    let rates = RateModel::default();
    let surf = SurfingParams {
        mu: config.mu,
        lambda: config.lambda,
        ..SurfingParams::default()
    };
    surf.validate()?;
    let mut authored = vec![0usize; n];
    for &a in &author {
        authored[a] += 1;
    }
    let backlog: Array1<f64> = (0..n)
        .map(|i| {
            let per_day = (authored[i] as f64 + config.expected_adoptions * activity[i]) / config.window_days;
            rates.backlog(friends[i].len(), per_day, config.window_days)
        })
        .collect();
    let vis: Array1<f64> = backlog.iter().map(|&rho| visibility(rho, &surf)).collect();

    // adoptions: items spread from their authors along follower edges in
    // time order; a user evaluates each item once, on its first arrival.
    let log_norm: Vec<f64> = (0..n)
        .map(|i| {
            let scores: Vec<f64> = (0..d)
                .map(|j| vis[i] * (user.row(i).dot(&item.row(j)) + fitness[j]))
                .collect();
            log_sum_exp(&scores) - (d as f64).ln() + (config.items_viewed as f64).ln()
        })
        .collect();
    let mut followers: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, fr) in friends.iter().enumerate() {
        for &f in fr {
            followers[f].push(i);
        }
    }
    let mut r = stream(4);
    let mut events: Vec<(usize, usize, i64, bool)> = Vec::new();
    let mut evaluated: HashSet<(usize, usize)> = HashSet::new();
    let mut viewed = vec![0usize; n];
    // (time, user, item, is_original): `user` adopts at `time`
    let mut queue: BinaryHeap<Reverse<(i64, usize, usize, bool)>> =
        (0..d).map(|j| Reverse((posted[j], author[j], j, true))).collect();
    while let Some(Reverse((t, i, j, orig))) = queue.pop() {
        events.push((i, j, t, orig));
        for &f in &followers[i] {
            if f == author[j] || viewed[f] >= config.items_viewed || !evaluated.insert((f, j)) {
                continue;
            }
            viewed[f] += 1;
            let score = vis[f] * (user.row(f).dot(&item.row(j)) + fitness[j]);
            let p = (config.expected_adoptions * activity[f] * (score - log_norm[f]).exp()).min(1.0);
            if r.random::<f64>() < p {
                let at = t + r.random_range(1..=SECONDS_PER_DAY as i64);
                if at <= window_secs {
                    queue.push(Reverse((at, f, j, false)));
                }
            }
        }
    }

    let uid = |i: usize| pad('u', i, n);
    let iid = |j: usize| pad('i', j, d);
    let edges: Vec<(String, String)> = friends
        .iter()
        .enumerate()
        .flat_map(|(i, fr)| fr.iter().map(move |&j| (i, j)))
        .map(|(i, j)| (uid(i), uid(j)))
        .collect();
    let items: Vec<(String, String)> = texts.into_iter().enumerate().map(|(j, t)| (iid(j), t)).collect();
    events.sort_by_key(|e| (e.2, e.0, e.1));
    let adoptions: Vec<(String, String, i64, bool)> =
        events.into_iter().map(|(i, j, t, o)| (uid(i), iid(j), t, o)).collect();

    let mut builder = CorpusBuilder::new(IngestOptions::default());
    for (id, text) in &items {
        builder.add_item(id, text);
    }
    for (a, b) in &edges {
        builder.add_edge(a, b);
    }
    for (u, j, t, o) in &adoptions {
        builder.add_adoption(u, j, *t, *o)?;
    }
    let (corpus, _) = builder.finish()?;
    if corpus.num_users() != n || corpus.num_items() != d {
        return Err(Error::EmptyDataset(format!(
            "simulated corpus kept {} of {n} users and {} of {d} items",
            corpus.num_users(),
            corpus.num_items()
        )));
    }

    Ok(Simulation {
        config: config.clone(),
        corpus,
        truth: GroundTruth {
            user,
            item,
            fitness,
            phi,
            beta,
            visibility: vis,
            backlog,
            community,
            activity,
        },
        edges,
        items,
        adoptions,
    })
}

impl Simulation {
    /// Writes the three corpus files, the ground-truth bundle and the config.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut edges = String::new();
        for (a, b) in &self.edges {
            let _ = writeln!(edges, "{a}\t{b}");
        }
        let mut items = String::new();
        for (id, text) in &self.items {
            items.push_str(&serde_json::to_string(&serde_json::json!({ "item": id, "text": text }))?);
            items.push('\n');
        }
        let mut adoptions = String::new();
        for (u, j, t, o) in &self.adoptions {
            adoptions.push_str(&serde_json::to_string(
                &serde_json::json!({ "user": u, "item": j, "t": t, "orig": o }),
            )?);
            adoptions.push('\n');
        }
        let write = |name: &str, body: &[u8]| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        write(EDGES_FILE, edges.as_bytes())?;
        write(ITEMS_FILE, items.as_bytes())?;
        write(ADOPTIONS_FILE, adoptions.as_bytes())?;
        write(GROUND_TRUTH_FILE, &self.truth.to_bundle(&self.config)?.to_bytes())?;
        write(SIM_CONFIG_FILE, (serde_json::to_string_pretty(&self.config)? + "\n").as_bytes())?;
        Ok(())
    }
}

/// Average ranks (ties share the mean rank).
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut s = 0;
    while s < order.len() {
        let mut e = s;
        while e + 1 < order.len() && xs[order[e + 1]] == xs[order[s]] {
            e += 1;
        }
        let r = (s + e) as f64 / 2.0;
        for &k in &order[s..=e] {
            out[k] = r;
        }
        s = e + 1;
    }
    out
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    pearson(&ranks(xs), &ranks(ys))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub fitness_spearman: f64,
    /// Pearson correlation of trained and planted `u_i·θ_j` on held-out dyads.
    pub relevance_correlation: f64,
    pub dyads: usize,
    pub precision_model: f64,
    pub precision_random: f64,
}

/// Compares a model trained without `fold` to the planted parameters. The
/// held-out dyads are the candidate lists of that fold. Undefined
/// correlations (a constant side) are reported as 0.
pub fn recovery_check(
    truth: &GroundTruth,
    trained: &ModelParams,
    corpus: &Corpus,
    plan: &FoldPlan,
    fold: usize,
) -> Result<RecoveryReport> {
    if trained.num_users() != truth.user.nrows()
        || trained.num_items() != truth.item.nrows()
        || corpus.num_users() != truth.user.nrows()
        || corpus.num_items() != truth.item.nrows()
    {
        return Err(Error::DimensionMismatch(format!(
            "model is {}x{}, ground truth {}x{}, corpus {}x{}",
            trained.num_users(),
            trained.num_items(),
            truth.user.nrows(),
            truth.item.nrows(),
            corpus.num_users(),
            corpus.num_items()
        )));
    }
    let fitness_spearman = spearman(trained.fitness.as_slice().unwrap(), truth.fitness.as_slice().unwrap()).unwrap_or(0.0);

    let policy = CandidatePolicy::default();
    let (mut fitted, mut planted) = (Vec::new(), Vec::new());
    for u in corpus.users() {
        let positives: BTreeSet<ItemId> = plan.test_items(u, fold, false);
        if positives.is_empty() {
            continue;
        }
        if let Some(cands) = evaluation::candidates(corpus, u, &positives, policy, plan.seed, fold)? {
            for j in cands {
                fitted.push(trained.relevance(u, j));
                planted.push(truth.user.row(u.index()).dot(&truth.item.row(j.index())));
            }
        }
    }
    let relevance_correlation = pearson(&fitted, &planted).unwrap_or(0.0);
    let rankers: [&dyn Ranker; 2] = [trained, &RandomRanker];
    let scores = evaluation::score_fold(corpus, plan, fold, &rankers, 10, policy, false)?;
    Ok(RecoveryReport {
        fitness_spearman,
        relevance_correlation,
        dyads: fitted.len(),
        precision_model: scores[0].metrics.precision,
        precision_random: scores[1].metrics.precision,
    })
}

/// Wraps planted parameters as a model so they can be ranked and compared.
pub fn truth_as_model(truth: &GroundTruth, template: &ModelParams) -> ModelParams {
    let mut m = template.clone();
    m.user = truth.user.clone();
    m.item = truth.item.clone();
    m.fitness = truth.fitness.clone();
    m.visibility.v = truth.visibility.to_vec();
    m.visibility.rho = truth.backlog.to_vec();
    m
}
