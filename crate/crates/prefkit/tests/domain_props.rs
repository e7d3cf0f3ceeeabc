use prefkit::domain::{feature_diff, grid_index, validate, validate_response, Dataset, Query, QueryPool, Response};
use proptest::prelude::*;

fn pool_strategy() -> impl Strategy<Value = QueryPool<f64>> {
    (1usize..5, 2usize..12).prop_flat_map(|(d, n)| {
        proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, d), n)
            .prop_map(|f| QueryPool::from_features(f).unwrap())
    })
}

fn query_strategy(n: u64) -> impl Strategy<Value = Query<f64>> {
    let id = 0..n + 2;
    prop_oneof![
        proptest::collection::vec(id.clone(), 1..5).prop_map(|items| Query::Choice { items }),
        (id.clone(), id.clone()).prop_map(|(a, b)| Query::WeakChoice { items: [a, b] }),
        (id.clone(), id.clone(), prop_oneof![Just(0.1), Just(0.25), Just(0.3), Just(1.0)])
            .prop_map(|(a, b, step)| Query::Scale { items: [a, b], step }),
        (id.clone(), proptest::option::of(id.clone())).prop_map(|(item, previous)| Query::Ordinal { item, previous }),
        proptest::collection::vec(id, 1..5).prop_map(|items| Query::Ranking { items }),
    ]
}

fn response_strategy(n: u64) -> impl Strategy<Value = Response<f64>> {
    let id = 0..n + 2;
    prop_oneof![
        id.clone().prop_map(|item| Response::Chosen { item }),
        Just(Response::AboutEqual),
        (-4i32..=4).prop_map(|k| Response::ScaleValue { value: k as f64 * 0.25 }),
        (-1.0f64..1.0).prop_map(|value| Response::ScaleValue { value }),
        (0u32..4, proptest::option::of(id.clone()))
            .prop_map(|(label, preferred)| Response::OrdinalLabel { label, preferred }),
        proptest::collection::vec(id, 1..5).prop_map(|order| Response::Ranking { order }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn feature_diff_is_antisymmetric(pool in pool_strategy(), a in 0u64..12, b in 0u64..12) {
        let n = pool.len() as u64;
        let (a, b) = (a % n, b % n);
        let ab = feature_diff(&pool, a, b).unwrap();
        let ba = feature_diff(&pool, b, a).unwrap();
        prop_assert!(ab.0.iter().zip(&ba.0).all(|(x, y)| *x == -*y));
    }

    #[test]
    fn accepted_interactions_validate(
        pool in pool_strategy(),
        pairs in proptest::collection::vec((query_strategy(10), response_strategy(10)), 1..20),
    ) {
        let mut data = Dataset::new();
        for (q, r) in pairs {
            let ok = validate(&q, &pool).is_ok() && validate_response(&q, &r).is_ok();
            let pushed = data.push(&pool, q, r).is_ok();
            prop_assert_eq!(ok, pushed);
        }
        for (q, r) in &data.interactions {
            prop_assert!(validate(q, &pool).is_ok());
            prop_assert!(validate_response(q, r).is_ok());
        }
    }

    #[test]
    fn grid_values_round_trip(step in prop_oneof![Just(0.05), Just(0.1), Just(0.2), Just(0.25), Just(0.5), Just(1.0)], n in -20i64..=20) {
        let half = (1.0f64 / step).round() as i64;
        let got = grid_index(n as f64 * step, step);
        if n.abs() <= half {
            prop_assert_eq!(got, Some(n));
        } else {
            prop_assert_eq!(got, None);
        }
    }

    #[test]
    fn pool_json_round_trips(pool in pool_strategy()) {
        let back = QueryPool::<f64>::from_json(&pool.to_json()).unwrap();
        prop_assert_eq!(back, pool);
    }
}
