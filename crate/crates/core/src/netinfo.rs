//! Network position, effort and information diversity per user.
//!
//! `S` counts active friends, `ND = 1 − C` uses the local clustering of the
//! active friends (edge direction ignored), `O` is adoptions per day and
//! `FTD` is the mean pairwise cosine distance between active friends' user
//! vectors.

use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{Corpus, UserId, Vocabulary};
use crate::error::{Error, Result};
use crate::topic_model;

/// Effort thresholds (adoptions/day) separating the four effort classes.
pub const PAPER_EFFORT_THRESHOLDS: [f64; 3] = [1.9, 3.1, 5.3];

/// Friends with at least one adoption, in id order.
pub fn active_friends(corpus: &Corpus, user: UserId) -> Vec<UserId> {
    corpus
        .friends(user)
        .iter()
        .copied()
        .filter(|&f| corpus.num_adoptions(f) > 0)
        .collect()
}

pub fn network_size(corpus: &Corpus, user: UserId) -> usize {
    active_friends(corpus, user).len()
}

fn linked(corpus: &Corpus, a: UserId, b: UserId) -> bool {
    corpus.friends(a).binary_search(&b).is_ok() || corpus.friends(b).binary_search(&a).is_ok()
}

/// Share of active-friend pairs that are linked in either direction.
pub fn clustering(corpus: &Corpus, user: UserId) -> Option<f64> {
    let fr = active_friends(corpus, user);
    let s = fr.len();
    if s < 2 {
        return None;
    }
    let mut links = 0usize;
    for (a, &j) in fr.iter().enumerate() {
        for &k in &fr[a + 1..] {
            if linked(corpus, j, k) {
                links += 1;
            }
        }
    }
    Some(2.0 * links as f64 / (s * (s - 1)) as f64)
}

pub fn network_diversity(corpus: &Corpus, user: UserId) -> Option<f64> {
    clustering(corpus, user).map(|c| 1.0 - c)
}

/// Adoptions per day over the observation window.
pub fn effort(corpus: &Corpus, user: UserId) -> f64 {
    corpus.num_adoptions(user) as f64 / corpus.window_days()
}

/// `1 − cos(a, b)`, with distance 1 when either vector is zero.
pub fn cosine_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let aa = a.dot(&a);
    let bb = b.dot(&b);
    if aa == 0.0 || bb == 0.0 {
        return 1.0;
    }
    // one square root keeps identical vectors at exactly zero distance
    (1.0 - a.dot(&b) / (aa * bb).sqrt()).clamp(0.0, 2.0)
}

/// FTD and the number of active friends whose vector is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diversity {
    pub ftd: f64,
    pub zero_vectors: usize,
}

pub fn friend_topic_diversity(user_vectors: &Array2<f64>, corpus: &Corpus, user: UserId) -> Option<Diversity> {
    let fr = active_friends(corpus, user);
    if fr.len() < 2 {
        return None;
    }
    let rows: Vec<_> = fr.iter().map(|f| user_vectors.row(f.index())).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..rows.len() {
        for b in a + 1..rows.len() {
            total += cosine_distance(rows[a], rows[b]);
            pairs += 1;
        }
    }
    let zero_vectors = rows.iter().filter(|r| r.iter().all(|&x| x == 0.0)).count();
    Some(Diversity {
        ftd: total / pairs as f64,
        zero_vectors,
    })
}

/// How effort classes are cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuartileMode {
    /// Fixed thresholds of 1.9, 3.1 and 5.3 adoptions/day.
    Paper,
    /// Quartiles of the observed effort distribution.
    Auto,
}

impl FromStr for QuartileMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(QuartileMode::Paper),
            "auto" => Ok(QuartileMode::Auto),
            other => Err(Error::InvalidParam(format!("quartiles must be `paper` or `auto`, got `{other}`"))),
        }
    }
}

/// Class `c` holds users with `thresholds[c-1] < O ≤ thresholds[c]`.
pub fn effort_class(o: f64, thresholds: &[f64; 3]) -> usize {
    thresholds.iter().filter(|&&t| o > t).count()
}

/// Empirical quartiles (linear interpolation between order statistics).
pub fn quartile_thresholds(values: &[f64]) -> [f64; 3] {
    if values.is_empty() {
        return [0.0; 3];
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    [q(0.25), q(0.5), q(0.75)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserNetStats {
    pub user: UserId,
    pub s: usize,
    pub c: Option<f64>,
    pub nd: Option<f64>,
    pub o: f64,
    pub ftd: Option<f64>,
    pub zero_vector_friends: usize,
    pub effort_class: usize,
}

/// Per-user statistics. `user_vectors` has one row per user.
pub fn compute_stats(corpus: &Corpus, user_vectors: &Array2<f64>, quartiles: QuartileMode) -> Result<Vec<UserNetStats>> {
    if user_vectors.nrows() != corpus.num_users() {
        return Err(Error::DimensionMismatch(format!(
            "{} user vectors for {} users",
            user_vectors.nrows(),
            corpus.num_users()
        )));
    }
    let users: Vec<UserId> = corpus.users().collect();
    let efforts: Vec<f64> = users.iter().map(|&u| effort(corpus, u)).collect();
    let thresholds = match quartiles {
        QuartileMode::Paper => PAPER_EFFORT_THRESHOLDS,
        QuartileMode::Auto => quartile_thresholds(&efforts),
    };
    Ok(users
        .par_iter()
        .zip(efforts.par_iter())
        .map(|(&u, &o)| {
            let c = clustering(corpus, u);
            let div = friend_topic_diversity(user_vectors, corpus, u);
            UserNetStats {
                user: u,
                s: network_size(corpus, u),
                c,
                nd: c.map(|c| 1.0 - c),
                o,
                ftd: div.map(|d| d.ftd),
                zero_vector_friends: div.map_or(0, |d| d.zero_vectors),
                effort_class: effort_class(o, &thresholds),
            }
        })
        .collect())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn stats_csv(corpus: &Corpus, stats: &[UserNetStats]) -> String {
    let mut out = String::from("user,S,C,ND,O,FTD,effort_class\n");
    for st in stats {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            corpus.user_external(st.user),
            st.s,
            opt(st.c),
            opt(st.nd),
            st.o,
            opt(st.ftd),
            st.effort_class
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StatVar {
    S,
    Nd,
    O,
    Ftd,
}

impl StatVar {
    pub fn get(self, st: &UserNetStats) -> Option<f64> {
        match self {
            StatVar::S => Some(st.s as f64),
            StatVar::Nd => st.nd,
            StatVar::O => Some(st.o),
            StatVar::Ftd => st.ftd,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StatVar::S => "S",
            StatVar::Nd => "ND",
            StatVar::O => "O",
            StatVar::Ftd => "FTD",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub group: usize,
    pub bin: usize,
    pub count: usize,
    pub mean_x: f64,
    pub mean_y: f64,
    pub std_y: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Curves {
    pub rows: Vec<CurveRow>,
    /// Users per group lacking either variable.
    pub undefined: Vec<usize>,
    /// Groups that had fewer points than requested bins.
    pub reduced_bins: Vec<usize>,
}

impl Curves {
    pub fn group(&self, g: usize) -> impl Iterator<Item = &CurveRow> {
        self.rows.iter().filter(move |r| r.group == g)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,bin,count,mean_x,mean_y,std_y\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.group, r.bin, r.count, r.mean_x, r.mean_y, r.std_y);
        }
        out
    }
}

/// Splits `points` (sorted by x) into `bins` chunks whose sizes differ by at
/// most one.
fn bin_points(points: &[(f64, f64)], bins: usize) -> Vec<&[(f64, f64)]> {
    let n = points.len();
    (0..bins).map(|k| &points[k * n / bins..(k + 1) * n / bins]).collect()
}

/// Equal-count bins of `y` against `x`, per group. With `by_effort` the groups
/// are the four effort classes, otherwise everything is group 0.
pub fn binned_curves(stats: &[UserNetStats], x: StatVar, y: StatVar, by_effort: bool, bins: usize) -> Curves {
    let groups = if by_effort { 4 } else { 1 };
    let mut curves = Curves {
        undefined: vec![0; groups],
        ..Default::default()
    };
    for g in 0..groups {
        let mut pts: Vec<(f64, f64, UserId)> = Vec::new();
        for st in stats.iter().filter(|st| !by_effort || st.effort_class == g) {
            match (x.get(st), y.get(st)) {
                (Some(a), Some(b)) => pts.push((a, b, st.user)),
                _ => curves.undefined[g] += 1,
            }
        }
        if pts.is_empty() {
            continue;
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        let b = bins.max(1).min(pts.len());
        if b < bins {
            curves.reduced_bins.push(g);
        }
        let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, p.1)).collect();
        for (k, chunk) in bin_points(&xy, b).into_iter().enumerate() {
            let n = chunk.len() as f64;
            let mean_x = chunk.iter().map(|p| p.0).sum::<f64>() / n;
            let mean_y = chunk.iter().map(|p| p.1).sum::<f64>() / n;
            let var = chunk.iter().map(|p| (p.1 - mean_y).powi(2)).sum::<f64>() / n;
            curves.rows.push(CurveRow {
                group: g,
                bin: k,
                count: chunk.len(),
                mean_x,
                mean_y,
                std_y: var.sqrt(),
            });
        }
    }
    curves
}

/// Equal-width histogram of ND over `[0, 1]`: `(bin, lo, hi, count)`.
pub fn nd_histogram(stats: &[UserNetStats], bins: usize) -> Vec<(usize, f64, f64, usize)> {
    let bins = bins.max(1);
    let mut counts = vec![0usize; bins];
    for nd in stats.iter().filter_map(|s| s.nd) {
        let k = ((nd * bins as f64) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (k, k as f64 / bins as f64, (k + 1) as f64 / bins as f64, c))
        .collect()
}

pub fn histogram_csv(hist: &[(usize, f64, f64, usize)]) -> String {
    let mut out = String::from("bin,lo,hi,count\n");
    for (k, lo, hi, c) in hist {
        let _ = writeln!(out, "{k},{lo},{hi},{c}");
    }
    out
}

/// Pearson's r; `None` for fewer than two points or zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided.
    pub p: f64,
    pub n: usize,
}

/// Pearson correlation with a t-test, over `(x, y)` points.
pub fn correlation_test(xs: &[f64], ys: &[f64]) -> Option<Correlation> {
    let n = xs.len();
    if n < 3 {
        return None;
    }
    let r = pearson(xs, ys)?;
    let df = (n - 2) as f64;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Some(Correlation { r, p, n })
}

/// Correlation over the bin means of one group.
pub fn curve_correlation(curves: &Curves, group: usize) -> Option<Correlation> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = curves.group(group).map(|r| (r.mean_x, r.mean_y)).unzip();
    correlation_test(&xs, &ys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTopics {
    pub users: usize,
    /// `(topic, summed mass, top word ids)` by decreasing mass.
    pub topics: Vec<(usize, f64, Vec<u32>)>,
}

/// Splits users with defined ND at the median (ties by user id) and reports
/// the topics with the largest summed user-vector mass in each half.
pub fn group_topic_table(
    user_vectors: &Array2<f64>,
    beta: &Array2<f64>,
    stats: &[UserNetStats],
    top_topics: usize,
    top_words: usize,
) -> Result<(GroupTopics, GroupTopics)> {
    let k = user_vectors.ncols();
    if beta.nrows() != k {
        return Err(Error::DimensionMismatch(format!(
            "user vectors have K={k}, topic-word table has {} rows",
            beta.nrows()
        )));
    }
    let mut ranked: Vec<(f64, UserId)> = stats.iter().filter_map(|s| s.nd.map(|nd| (nd, s.user))).collect();
    if ranked.len() < 2 {
        return Err(Error::EmptyDataset("fewer than two users with defined ND".into()));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let half = ranked.len() / 2;
    let summarize = |group: &[(f64, UserId)]| {
        let mut mass = vec![0.0; k];
        for &(_, u) in group {
            for (m, x) in mass.iter_mut().zip(user_vectors.row(u.index())) {
                *m += x;
            }
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| mass[b].total_cmp(&mass[a]).then(a.cmp(&b)));
        GroupTopics {
            users: group.len(),
            topics: order
                .into_iter()
                .take(top_topics)
                .map(|t| (t, mass[t], topic_model::top_words(beta, t, top_words)))
                .collect(),
        }
    };
    Ok((summarize(&ranked[..half]), summarize(&ranked[half..])))
}

pub fn format_group_topics(g: &GroupTopics, vocab: &Vocabulary) -> String {
    let mut out = format!("# users: {}\n", g.users);
    for (t, mass, words) in &g.topics {
        let words: Vec<&str> = words.iter().map(|&w| vocab.word(w)).collect();
        let _ = writeln!(out, "topic {t}\t{mass:.4}\t{}", words.join(" "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusBuilder;
    use ndarray::array;

    /// `hub` follows friends f1..fn; `links` are edges among friends.
    fn star(n: usize, active: usize, links: &[(usize, usize)]) -> Corpus {
        let mut b = CorpusBuilder::new(Default::default());
        b.add_item("x", "");
        for f in 1..=n {
            b.add_edge("hub", &format!("f{f}"));
        }
        for &(a, c) in links {
            b.add_edge(&format!("f{a}"), &format!("f{c}"));
        }
        for f in 1..=active {
            b.add_adoption(&format!("f{f}"), "x", 0, true).unwrap();
        }
        b.add_adoption("hub", "x", 7 * 86_400, false).unwrap();
        b.finish().unwrap().0
    }

    #[test]
    fn size_and_diversity_examples() {
        let c = star(3, 2, &[]);
        let hub = c.lookup_user("hub").unwrap();
        assert_eq!(network_size(&c, hub), 2);
        let c = star(2, 2, &[(1, 2), (2, 1)]);
        let hub = c.lookup_user("hub").unwrap();
        assert_eq!(network_diversity(&c, hub), Some(0.0));
        let c = star(4, 4, &[]);
        let hub = c.lookup_user("hub").unwrap();
        assert_eq!(network_diversity(&c, hub), Some(1.0));
        let c = star(4, 4, &[(1, 2), (2, 3)]);
        let hub = c.lookup_user("hub").unwrap();
        assert!((network_diversity(&c, hub).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let f1 = c.lookup_user("f1").unwrap();
        assert_eq!(network_size(&c, f1), 1);
        assert_eq!(network_diversity(&c, f1), None);
    }

    #[test]
    fn effort_example() {
        let mut b = CorpusBuilder::new(Default::default());
        for k in 0..14 {
            b.add_item(&format!("i{k:02}"), "");
            b.add_adoption("a", &format!("i{k:02}"), k * 7 * 86_400 / 13, true).unwrap();
        }
        b.add_edge("b", "a");
        let c = b.finish().unwrap().0;
        assert!((effort(&c, c.lookup_user("a").unwrap()) - 2.0).abs() < 1e-12);
        assert_eq!(effort(&c, c.lookup_user("b").unwrap()), 0.0);
    }

    #[test]
    fn ftd_examples() {
        let c = star(3, 3, &[]);
        let idx = |name: &str| c.lookup_user(name).unwrap().index();
        let mut u = Array2::zeros((c.num_users(), 2));
        u.row_mut(idx("f1")).assign(&array![1.0, 0.0]);
        u.row_mut(idx("f2")).assign(&array![0.0, 1.0]);
        u.row_mut(idx("f3")).assign(&array![1.0, 0.0]);
        let d = friend_topic_diversity(&u, &c, c.lookup_user("hub").unwrap()).unwrap();
        assert!((d.ftd - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.zero_vectors, 0);
        assert_eq!(cosine_distance(array![1.0, 2.0].view(), array![1.0, 2.0].view()), 0.0);
        assert_eq!(cosine_distance(array![1.0, 0.0].view(), array![0.0, 0.0].view()), 1.0);
    }

    #[test]
    fn effort_classes_match_comparisons() {
        let t = PAPER_EFFORT_THRESHOLDS;
        for &(o, class) in &[(0.0, 0), (1.9, 0), (2.0, 1), (3.1, 1), (5.0, 2), (5.3, 2), (9.0, 3)] {
            assert_eq!(effort_class(o, &t), class);
        }
        assert_eq!(quartile_thresholds(&[1.0, 2.0, 3.0, 4.0, 5.0]), [2.0, 3.0, 4.0]);
    }

    #[test]
    fn correlation_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        assert_eq!(pearson(&xs, &ys), Some(1.0));
        let ys: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert_eq!(pearson(&xs, &ys), Some(-1.0));
        assert_eq!(pearson(&xs, &[1.0; 4]), None);
        let c = correlation_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        assert!((c.r - 0.8).abs() < 1e-12);
        // t = 0.8·sqrt(3/0.36) = 2.3094, two-sided p with 3 df
        assert!((c.p - 0.104_088).abs() < 1e-4);
    }
}
