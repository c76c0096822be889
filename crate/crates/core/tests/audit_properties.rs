mod common;

use proptest::prelude::*;

use common::*;
use recbias::audit::{
    aggregate_cities, association_difference, association_ratio, price_percentage_score, relatedness, BiasAxisPair,
};
use recbias::corpus::PriceLevel;

fn specs_strategy(n_categories: usize) -> impl Strategy<Value = Vec<ItemSpec>> {
    prop::collection::vec((0..3u8, 0..=4u8, 0..(1u16 << n_categories)), 1..200)
}

fn pool_case() -> impl Strategy<Value = (Vec<ItemSpec>, usize)> {
    (1usize..=10).prop_flat_map(|cats| (specs_strategy(cats), Just(cats)))
}

fn pair() -> BiasAxisPair {
    BiasAxisPair::new(AXIS, L, L_PRIME).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn price_share_matches_oracle((specs, cats) in pool_case()) {
        let pool = pool_from_specs(&specs, cats);
        for m in 1..=4u8 {
            let got = price_percentage_score(&pool, &pair(), PriceLevel::new(m).unwrap());
            let want = oracle_price_share(&specs, m);
            prop_assert_eq!(got.is_some(), want.is_some());
            if let (Some(g), Some((l, lp))) = (got, want) {
                prop_assert!(close(g.l, l, 1e-12) && close(g.l_prime, lp, 1e-12));
                prop_assert!(close(g.l + g.l_prime, 1.0, 1e-12));
            }
        }
    }

    #[test]
    fn association_scores_match_oracle((specs, cats) in pool_case()) {
        let pool = pool_from_specs(&specs, cats);
        for c in 0..cats {
            let cat = category_name(c);
            for (pol, name) in [(0u8, L), (1u8, L_PRIME)] {
                let got = relatedness(&pool, AXIS, &cat, name).ok();
                prop_assert!(close_opt(got, oracle_relatedness(&specs, c, pol), 1e-12));
                if let Some(f) = got {
                    prop_assert!((0.0..=1.0).contains(&f));
                }
            }
            let d = association_difference(&pool, &cat, &pair()).ok();
            let want = oracle_difference(&specs, c, 0, 1);
            prop_assert_eq!(d.is_some(), want.is_some());
            if let (Some(d), Some(w)) = (d, want) {
                prop_assert!(close_opt(d, w, 1e-12));
            }
            let r = association_ratio(&pool, &cat, &pair()).ok();
            let want = oracle_ratio(&specs, c, 0, 1);
            prop_assert_eq!(r.is_some(), want.is_some());
            if let (Some(r), Some(w)) = (r, want) {
                prop_assert!(close_opt(r, w, 1e-12));
            }
        }
    }

    #[test]
    fn swapping_polarities_negates_and_inverts((specs, cats) in pool_case()) {
        let pool = pool_from_specs(&specs, cats);
        let p = pair();
        let s = p.swapped();
        for c in 0..cats {
            let cat = category_name(c);
            let (Ok(d), Ok(d_sw)) = (association_difference(&pool, &cat, &p), association_difference(&pool, &cat, &s)) else {
                continue;
            };
            prop_assert!(close_opt(d, d_sw.map(|v| -v), 1e-12));
            let r = association_ratio(&pool, &cat, &p).unwrap();
            let r_sw = association_ratio(&pool, &cat, &s).unwrap();
            if let (Some(r), Some(r_sw)) = (r, r_sw) {
                prop_assert!(close(r * r_sw, 1.0, 1e-12));
            }
        }
    }

    #[test]
    fn scores_are_invariant_to_multiset_scaling((specs, cats) in pool_case(), k in 2usize..5) {
        let pool = pool_from_specs(&specs, cats);
        let big = pool_from_specs(&replicate(&specs, k), cats);
        for m in PriceLevel::ALL {
            let a = price_percentage_score(&pool, &pair(), m).map(|s| s.l);
            let b = price_percentage_score(&big, &pair(), m).map(|s| s.l);
            prop_assert!(close_opt(a, b, 1e-12));
        }
        for c in 0..cats {
            let cat = category_name(c);
            let a = association_difference(&pool, &cat, &pair()).ok().flatten();
            let b = association_difference(&big, &cat, &pair()).ok().flatten();
            prop_assert!(close_opt(a, b, 1e-12));
        }
    }

    #[test]
    fn aggregate_mean_lies_within_range_and_ci_is_nonnegative(values in prop::collection::vec(-1.0f64..1.0, 1..12)) {
        let input: Vec<(String, Option<f64>)> = values.iter().enumerate().map(|(i, v)| (format!("c{i}"), Some(*v))).collect();
        let agg = aggregate_cities(&input).unwrap();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(agg.mean >= lo - 1e-12 && agg.mean <= hi + 1e-12);
        prop_assert_eq!(agg.n, values.len());
        match agg.ci95 {
            Some(ci) => prop_assert!(ci >= 0.0 && values.len() >= 2),
            None => prop_assert_eq!(values.len(), 1),
        }
        let mut reversed = input.clone();
        reversed.reverse();
        let again = aggregate_cities(&reversed).unwrap();
        prop_assert!(close(again.mean, agg.mean, 1e-12));
    }

    #[test]
    fn undefined_city_values_are_dropped(values in prop::collection::vec(prop::option::of(0.0f64..1.0), 1..10)) {
        let input: Vec<(String, Option<f64>)> = values.iter().enumerate().map(|(i, v)| (format!("c{i}"), *v)).collect();
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        match aggregate_cities(&input) {
            None => prop_assert!(defined.is_empty()),
            Some(agg) => {
                prop_assert_eq!(agg.n, defined.len());
                let mean = defined.iter().sum::<f64>() / defined.len() as f64;
                prop_assert!(close(agg.mean, mean, 1e-12));
            }
        }
    }
}
