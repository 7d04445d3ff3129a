//! Average item visibility per user.
//!
//! A user who finds `ρ` new items between visits sees the item she is looking
//! for at stream position `L` with geometric probability `(1-p)^L p`,
//! `p = 1/(1+ρ)`, and scrolls at least that deep with the upper tail of an
//! inverse-Gaussian depth distribution. Visibility is the sum over positions.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::corpus::{Corpus, UserId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfingParams {
    /// Inverse-Gaussian mean, in list positions.
    pub mu: f64,
    /// Inverse-Gaussian shape.
    pub lambda: f64,
    /// Hard cap on the number of series terms.
    pub max_terms: usize,
    /// Stop once the remaining geometric mass drops below this.
    pub tail_tol: f64,
}

impl Default for SurfingParams {
    fn default() -> Self {
        SurfingParams {
            mu: 14.0,
            lambda: 14.0,
            max_terms: 1_000_000,
            tail_tol: 1e-12,
        }
    }
}

impl SurfingParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu.is_finite()
            && self.mu > 0.0
            && self.lambda.is_finite()
            && self.lambda > 0.0
            && self.max_terms >= 1
            && self.tail_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("bad surfing parameters {self:?}")))
        }
    }
}

/// How a user's visit rate is estimated from her posting rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BacklogMode {
    /// Visits = visits-per-post × posts.
    VisitsPerPost,
    /// Visits = URL-fraction inverse × posts.
    UrlRule,
}

impl std::str::FromStr for BacklogMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visits_per_post" | "visits-per-post" => Ok(BacklogMode::VisitsPerPost),
            "url_rule" | "url-rule" => Ok(BacklogMode::UrlRule),
            other => Err(Error::InvalidParam(format!("unknown backlog mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    /// Posts received per friend per day.
    pub posts_received_per_friend: f64,
    pub visits_per_post: f64,
    pub url_fraction_inverse: f64,
    /// Visit-rate floor, in visits per observation window.
    pub min_visits_per_window: f64,
    pub mode: BacklogMode,
}

impl Default for RateModel {
    fn default() -> Self {
        RateModel {
            posts_received_per_friend: 1.4,
            visits_per_post: 38.0,
            url_fraction_inverse: 7.6,
            min_visits_per_window: 1.0,
            mode: BacklogMode::VisitsPerPost,
        }
    }
}

impl RateModel {
    pub fn validate(&self) -> Result<()> {
        let all_positive = [
            self.posts_received_per_friend,
            self.visits_per_post,
            self.url_fraction_inverse,
            self.min_visits_per_window,
        ]
        .iter()
        .all(|x| x.is_finite() && *x > 0.0);
        if all_positive {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("rate model values must be positive: {self:?}")))
        }
    }

    /// Expected number of new items between visits.
    pub fn backlog(&self, num_friends: usize, posts_per_day: f64, window_days: f64) -> f64 {
        if num_friends == 0 {
            return 0.0;
        }
        let factor = match self.mode {
            BacklogMode::VisitsPerPost => self.visits_per_post,
            BacklogMode::UrlRule => self.url_fraction_inverse,
        };
        let floor = self.min_visits_per_window / window_days;
        let visit_rate = (factor * posts_per_day).max(floor);
        self.posts_received_per_friend * num_friends as f64 / visit_rate
    }
}

/// Standard normal upper tail `P(Z > x)`.
fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// `ln P(Z > x)`, using the asymptotic series where `erfc` underflows.
fn ln_normal_sf(x: f64) -> f64 {
    if x < 30.0 {
        return normal_sf(x).ln();
    }
    let x2 = x * x;
    let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2) + 105.0 / (x2 * x2 * x2 * x2);
    -0.5 * x2 - (x * (2.0 * std::f64::consts::PI).sqrt()).ln() + series.ln()
}

/// Probability that the scrolling depth exceeds `position`: `1 - CDF_IG(L; μ, λ)`.
pub fn ig_upper_tail(position: f64, mu: f64, lambda: f64) -> Result<f64> {
    if !(position.is_finite() && mu.is_finite() && lambda.is_finite()) {
        return Err(Error::InvalidParam("inverse-Gaussian arguments must be finite".into()));
    }
    if position < 0.0 || mu <= 0.0 || lambda <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "inverse-Gaussian needs L >= 0, mu > 0, lambda > 0 (got {position}, {mu}, {lambda})"
        )));
    }
    Ok(ig_upper_tail_unchecked(position, mu, lambda))
}

fn ig_upper_tail_unchecked(position: f64, mu: f64, lambda: f64) -> f64 {
    if position == 0.0 {
        return 1.0;
    }
    let s = (lambda / position).sqrt();
    let a = s * (position / mu - 1.0);
    let b = s * (position / mu + 1.0);
    let reflected = (2.0 * lambda / mu + ln_normal_sf(b)).exp();
    (normal_sf(a) - reflected).clamp(0.0, 1.0)
}

/// Average visibility for backlog `rho`.
pub fn visibility(rho: f64, surf: &SurfingParams) -> f64 {
    debug_assert!(rho >= 0.0);
    let p = 1.0 / (1.0 + rho);
    let q = rho / (1.0 + rho);
    let mut v = 0.0;
    let mut weight = p;
    let mut remaining = 1.0; // (1-p)^(L+1) after each step
    for position in 0..surf.max_terms {
        v += weight * ig_upper_tail_unchecked(position as f64, surf.mu, surf.lambda);
        remaining *= q;
        if remaining < surf.tail_tol {
            break;
        }
        weight *= q;
    }
    v
}

/// Per-user backlog and visibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityTable {
    pub rho: Vec<f64>,
    pub v: Vec<f64>,
    /// When set, an author's own original posts are seen with visibility one.
    pub original_override: bool,
}

impl VisibilityTable {
    pub fn uniform(num_users: usize) -> Self {
        VisibilityTable {
            rho: vec![0.0; num_users],
            v: vec![1.0; num_users],
            original_override: false,
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn get(&self, user: UserId) -> f64 {
        self.v[user.index()]
    }

    /// Visibility used for a user-item event.
    pub fn effective(&self, user: UserId, is_original: bool) -> f64 {
        if self.original_override && is_original {
            1.0
        } else {
            self.v[user.index()]
        }
    }

    pub fn with_override(mut self, on: bool) -> Self {
        self.original_override = on;
        self
    }

    /// `user,rho,v` with external user ids.
    pub fn to_csv(&self, corpus: &Corpus) -> String {
        let mut out = String::from("user,rho,v\n");
        for u in corpus.users() {
            let _ = writeln!(
                out,
                "{},{},{}",
                corpus.user_external(u),
                self.rho[u.index()],
                self.v[u.index()]
            );
        }
        out
    }

    pub fn from_csv(csv: &str, corpus: &Corpus) -> Result<Self> {
        let mut table = VisibilityTable {
            rho: vec![f64::NAN; corpus.num_users()],
            v: vec![f64::NAN; corpus.num_users()],
            original_override: false,
        };
        let mut lines = csv.lines().enumerate();
        match lines.next() {
            Some((_, "user,rho,v")) => {}
            _ => return Err(Error::Format("visibility.csv must start with `user,rho,v`".into())),
        }
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Parse {
                file: "visibility.csv".into(),
                line: n + 1,
                message: format!("cannot parse `{line}`"),
            };
            let mut fields = line.rsplitn(3, ',');
            let v: f64 = fields.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let rho: f64 = fields.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let user = corpus.lookup_user(fields.next().ok_or_else(bad)?)?;
            table.rho[user.index()] = rho;
            table.v[user.index()] = v;
        }
        if let Some(u) = table.v.iter().position(|v| v.is_nan()) {
            return Err(Error::Format(format!(
                "visibility.csv has no row for user `{}`",
                corpus.user_external(UserId(u as u32))
            )));
        }
        Ok(table)
    }
}

/// Expected backlog `ρ_i` for one user of the corpus.
pub fn expected_backlog(corpus: &Corpus, user: UserId, rates: &RateModel) -> f64 {
    let window = corpus.window_days();
    let posts_per_day = corpus.num_adoptions(user) as f64 / window;
    rates.backlog(corpus.friends(user).len(), posts_per_day, window)
}

pub fn build_table(
    corpus: &Corpus,
    rates: &RateModel,
    surf: &SurfingParams,
    original_override: bool,
) -> Result<VisibilityTable> {
    rates.validate()?;
    surf.validate()?;
    let rows: Vec<(f64, f64)> = (0..corpus.num_users() as u32)
        .into_par_iter()
        .map(|u| {
            let rho = expected_backlog(corpus, UserId(u), rates);
            (rho, visibility(rho, surf))
        })
        .collect();
    let (rho, v) = rows.into_iter().unzip();
    Ok(VisibilityTable {
        rho,
        v,
        original_override,
    })
}
