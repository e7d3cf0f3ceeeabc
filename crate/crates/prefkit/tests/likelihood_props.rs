use std::sync::Arc;

use prefkit::belief::{ModelContext, ParamPoint, ParamSpace};
use prefkit::domain::{ItemId, Query, QueryPool};
use prefkit::likelihood::{
    choice_probs, plackett_luce_log, scale_noiseless, weak_choice_probs, OrdinalThresholds, PriorKind,
    RationalityConfig,
};
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sums `exp(log_likelihood)` over the enumerated responses of `q`.
fn total(ctx: &ModelContext<f64>, p: &ParamPoint<f64>, q: &Query<f64>) -> f64 {
    let n = ctx.outcome_count(q).unwrap();
    (0..n).map(|i| ctx.log_likelihood(p, q, &ctx.outcome_response(q, i).unwrap()).unwrap().exp()).sum()
}

fn perms(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in perms(k - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, k - 1);
            out.push(q);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn finite_likelihoods_sum_to_one(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 3;
        let f: Vec<Vec<f64>> = (0..12).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let pool = Arc::new(QueryPool::from_features(f).unwrap());
        let cfg = RationalityConfig {
            beta_choice: rng.random_range(0.1..4.0),
            delta_min: rng.random_range(0.0..2.0),
            sigma_scale: rng.random_range(0.05..1.0),
            sigma_ord: rng.random_range(0.2..2.0),
            sigma_pref: rng.random_range(0.2..2.0),
            ..RationalityConfig::default()
        };
        let mut ctx = ModelContext::new(pool.clone(), cfg);
        let o = rng.random_range(2..=5usize);
        let mut thr: Vec<f64> = (0..o - 1).map(|_| rng.random_range(-2.0..2.0)).collect();
        thr.sort_by(f64::total_cmp);
        thr.dedup();
        ctx.thresholds = Some(OrdinalThresholds::new(thr).unwrap());
        let ids: Vec<ItemId> = pool.ids().collect();
        let pick = |rng: &mut ChaCha8Rng, k: usize| ids.choose_multiple(rng, k).copied().collect::<Vec<_>>();

        let unimodal = [
            ParamSpace::linear(d).prior_sample::<f64>(1, seed).remove(0),
            ParamSpace::omega_alpha(d).prior_sample::<f64>(1, seed).remove(0),
            ParamSpace::omega_delta(d).prior_sample::<f64>(1, seed).remove(0),
        ];
        let k = rng.random_range(2..=4);
        let items = pick(&mut rng, k);
        let step = *[0.1, 0.2, 0.25, 0.5, 1.0].choose(&mut rng).unwrap();
        let queries = vec![
            Query::Choice { items: items.clone() },
            Query::WeakChoice { items: [items[0], items[1]] },
            Query::Scale { items: [items[0], items[1]], step },
            Query::Ordinal { item: items[0], previous: None },
            Query::Ordinal { item: items[0], previous: Some(items[1]) },
            Query::Ranking { items: items.clone() },
        ];
        for p in &unimodal {
            for q in &queries {
                let s = total(&ctx, p, q);
                prop_assert!((s - 1.0).abs() < 1e-9, "{:?} {:?}: {}", p, q, s);
            }
        }
        let mix = ParamSpace::mixture(d, rng.random_range(2..=3)).prior_sample::<f64>(1, seed).remove(0);
        for q in [&queries[0], &queries[5]] {
            let s = total(&ctx, &mix, q);
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
        let prior = [PriorKind::Uniform, PriorKind::Identity, PriorKind::Band][(seed % 3) as usize];
        let dy = ParamSpace::dynamics(d, prior).prior_sample::<f64>(1, seed).remove(0);
        let (k1, k2) = (rng.random_range(2..=3), rng.random_range(2..=3));
        let all = pick(&mut rng, 1 + k1 + k2);
        let hq = Query::Hierarchical { context: all[0], first: all[1..=k1].to_vec(), second: all[1 + k1..].to_vec() };
        let s = total(&ctx, &dy, &hq);
        prop_assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_is_shift_invariant(
        r in proptest::collection::vec(-20.0f64..20.0, 2..6),
        c in -50.0f64..50.0,
        beta in 0.0f64..5.0,
    ) {
        let shifted: Vec<f64> = r.iter().map(|x| x + c).collect();
        let a = choice_probs(&r, beta);
        let b = choice_probs(&shifted, beta);
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn weak_without_threshold_is_softmax(r1 in -20.0f64..20.0, r2 in -20.0f64..20.0) {
        let w = weak_choice_probs(r1, r2, 0.0);
        let s = choice_probs(&[r1, r2], 1.0);
        prop_assert!((w[0] - s[0]).abs() < 1e-12 && (w[1] - s[1]).abs() < 1e-12 && w[2] == 0.0);
    }

    #[test]
    fn plackett_luce_mode_is_sorted_order(
        r in proptest::collection::btree_set(-1000i32..1000, 2..6),
        beta in 0.05f64..5.0,
        seed in any::<u64>(),
    ) {
        let mut r: Vec<f64> = r.into_iter().map(|x| x as f64 / 100.0).collect();
        use rand::seq::SliceRandom;
        r.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let all = perms(r.len());
        let best = all
            .iter()
            .max_by(|a, b| {
                let la = plackett_luce_log(&a.iter().map(|&i| r[i]).collect::<Vec<_>>(), beta);
                let lb = plackett_luce_log(&b.iter().map(|&i| r[i]).collect::<Vec<_>>(), beta);
                la.total_cmp(&lb)
            })
            .unwrap();
        let ranked: Vec<f64> = best.iter().map(|&i| r[i]).collect();
        prop_assert!(ranked.windows(2).all(|w| w[0] > w[1]), "{:?}", ranked);
    }

    #[test]
    fn noiseless_scale_is_antisymmetric(
        r1 in -5.0f64..5.0,
        r2 in -5.0f64..5.0,
        alpha in 0.05f64..1.0,
        gap in 0.01f64..10.0,
    ) {
        let a = scale_noiseless(r1, r2, alpha, gap).unwrap();
        let b = scale_noiseless(r2, r1, alpha, gap).unwrap();
        prop_assert_eq!(a, -b);
        prop_assert!(a.abs() <= 1.0);
    }
}
