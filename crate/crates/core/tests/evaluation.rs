use std::collections::BTreeSet;

use proptest::prelude::*;
use vistopic::corpus::{ItemId, UserId};
use vistopic::evaluation::{
    candidates, ndcg_at, precision_at, recall_at, score_fold, CandidatePolicy, FoldPlan, RandomRanker, Ranker,
};
use vistopic::simulator::{simulate, Preset, SimConfig};

/// Puts the fold's test positives first.
struct Oracle<'a> {
    plan: &'a FoldPlan,
    fold: usize,
}

impl Ranker for Oracle<'_> {
    fn name(&self) -> String {
        "oracle".into()
    }
    fn rank(&self, user: UserId, cands: &[ItemId], x: usize, _: u64) -> Vec<ItemId> {
        let pos = self.plan.test_items(user, self.fold, false);
        let mut list = cands.to_vec();
        list.sort_by_key(|j| (!pos.contains(j), *j));
        list.truncate(x);
        list
    }
}

#[test]
fn oracle_ranker_hits_the_ceiling() {
    let sim = simulate(&SimConfig::preset(Preset::Tiny, 3)).unwrap();
    let c = &sim.corpus;
    let plan = FoldPlan::new(c, 5, 3).unwrap();
    let policy = CandidatePolicy::default();
    let oracle = Oracle { plan: &plan, fold: 0 };
    let scored = score_fold(c, &plan, 0, &[&oracle], 10, policy, false).unwrap();
    let m = scored[0].metrics;
    assert!(scored[0].users > 0);
    assert!((m.recall - 1.0).abs() < 1e-12);
    assert!((m.ndcg - 1.0).abs() < 1e-12);

    // P@10 = min(1, |pos|/10) averaged over the scored users
    let mut expected = 0.0;
    let mut n = 0;
    for u in c.users() {
        let pos = plan.test_items(u, 0, false);
        if pos.is_empty() || candidates(c, u, &pos, policy, plan.seed, 0).unwrap().is_none() {
            continue;
        }
        expected += (pos.len() as f64 / 10.0).min(1.0);
        n += 1;
    }
    assert!((m.precision - expected / n as f64).abs() < 1e-12);
}

#[test]
fn random_baseline_matches_its_expectation() {
    let sim = simulate(&SimConfig::preset(Preset::Desk, 1)).unwrap();
    let c = &sim.corpus;
    let plan = FoldPlan::new(c, 5, 1).unwrap();
    let policy = CandidatePolicy::default();
    let x = 10usize;
    let (mut mean, mut var, mut users) = (0.0, 0.0, 0usize);
    for u in c.users() {
        let pos = plan.test_items(u, 0, false);
        if pos.is_empty() {
            continue;
        }
        let Some(cands) = candidates(c, u, &pos, policy, plan.seed, 0).unwrap() else {
            continue;
        };
        // hits among the top x are hypergeometric
        let (big_n, k) = (cands.len() as f64, pos.len() as f64);
        let draws = (x as f64).min(big_n);
        mean += draws * k / big_n / x as f64;
        if big_n > 1.0 {
            var += draws * (k / big_n) * (1.0 - k / big_n) * (big_n - draws) / (big_n - 1.0) / (x * x) as f64;
        }
        users += 1;
    }
    assert!(users >= 200, "only {users} users");
    let scored = score_fold(c, &plan, 0, &[&RandomRanker], x, policy, false).unwrap();
    let got = scored[0].metrics.precision;
    let (mean, sd) = (mean / users as f64, var.sqrt() / users as f64);
    assert!((got - mean).abs() < 3.0 * sd, "random P@10 {got}, expected {mean} ± {sd}");
}

#[test]
fn folds_partition_each_users_adoptions() {
    let sim = simulate(&SimConfig::preset(Preset::Tiny, 5)).unwrap();
    let c = &sim.corpus;
    let plan = FoldPlan::new(c, 5, 9).unwrap();
    for u in c.users() {
        let all: BTreeSet<ItemId> = c.user_events(u).map(|e| e.item).collect();
        let mut seen = BTreeSet::new();
        for f in 0..5 {
            let t = plan.test_items(u, f, true);
            assert!(t.is_disjoint(&seen));
            seen.extend(t);
        }
        assert_eq!(seen, all);
        let sizes: Vec<usize> = (0..5).map(|f| plan.test_items(u, f, true).len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
    // training never contains a scored positive
    let training = plan.training_set(c.num_items(), 2, false);
    for u in c.users() {
        let test = plan.test_items(u, 2, false);
        assert!(training.positives(u).iter().all(|(j, _)| !test.contains(j)));
    }
}

#[test]
fn candidates_are_positives_plus_unadopted_stream() {
    let sim = simulate(&SimConfig::preset(Preset::Tiny, 2)).unwrap();
    let c = &sim.corpus;
    let plan = FoldPlan::new(c, 5, 2).unwrap();
    for u in c.users() {
        let pos = plan.test_items(u, 1, false);
        if pos.is_empty() {
            continue;
        }
        let stream = c.stream_of(u).unwrap();
        let adopted: BTreeSet<ItemId> = c.user_events(u).map(|e| e.item).collect();
        let Some(full) = candidates(c, u, &pos, CandidatePolicy::Full, 2, 1).unwrap() else {
            continue;
        };
        let sampled = candidates(c, u, &pos, CandidatePolicy::default(), 2, 1).unwrap().unwrap();
        for list in [&full, &sampled] {
            assert_eq!(&list[..pos.len()], &pos.iter().copied().collect::<Vec<_>>()[..]);
            for j in &list[pos.len()..] {
                assert!(stream.contains(j) && !adopted.contains(j));
            }
            let distinct: BTreeSet<_> = list.iter().collect();
            assert_eq!(distinct.len(), list.len());
        }
        assert!(sampled.len() - pos.len() <= 19 * pos.len());
    }
}

fn ranked_and_relevant() -> impl Strategy<Value = (Vec<ItemId>, BTreeSet<ItemId>, usize)> {
    (
        Just((0..40u32).collect::<Vec<_>>()).prop_shuffle(),
        prop::collection::btree_set(0..40u32, 0..15),
        1..25usize,
    )
        .prop_map(|(r, rel, x)| {
            (
                r.into_iter().map(ItemId).collect(),
                rel.into_iter().map(ItemId).collect(),
                x,
            )
        })
}

proptest! {
    #[test]
    fn metric_bounds_and_identities((ranked, rel, x) in ranked_and_relevant()) {
        let p = precision_at(&ranked, &rel, x);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(p * x as f64 <= rel.len() as f64 + 1e-9);
        if let Some(r) = recall_at(&ranked, &rel, x) {
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!(r * rel.len() as f64 <= x as f64 + 1e-9);
            // the same hits drive both
            prop_assert!((p * x as f64 - r * rel.len() as f64).abs() < 1e-9);
            let n = ndcg_at(&ranked, &rel, x).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
            prop_assert_eq!(n == 0.0, p == 0.0);
        } else {
            prop_assert!(rel.is_empty());
        }
    }
}
