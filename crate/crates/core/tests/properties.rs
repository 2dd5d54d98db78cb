mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use srforge_core::datagen::{permute_columns, realize, sample_skeleton, GenerationConfig, Skeleton};
use srforge_core::expr::{evaluate, parse_infix, prefix_status, print_infix, ExprTree, PrefixStatus, TokenSequence};
use srforge_core::simplify::{canonical_key, simplify, validate_skeleton};
use srforge_core::treedist::{normalized_ted, ted};

fn sampled(seed: u64) -> ExprTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_skeleton(&mut rng, &GenerationConfig::default())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn preorder_round_trip(seed in any::<u64>()) {
        let t = sampled(seed);
        let seq = t.to_preorder();
        prop_assert_eq!(seq.to_tree().unwrap(), t.clone());
        let text = seq.to_string();
        prop_assert_eq!(text.parse::<TokenSequence>().unwrap(), seq.clone());
        prop_assert_eq!(prefix_status(seq.tokens()), PrefixStatus::Complete);
        for k in 0..seq.len() {
            prop_assert_eq!(prefix_status(&seq.tokens()[..k]), PrefixStatus::NeedsMore);
        }
    }

    #[test]
    fn infix_round_trip(seed in any::<u64>()) {
        let t = sampled(seed);
        let text = print_infix(&t);
        prop_assert_eq!(parse_infix(&text).unwrap(), t, "{}", text);
    }

    #[test]
    fn simplify_is_idempotent_and_canonical(seed in any::<u64>()) {
        let s = simplify(&sampled(seed));
        prop_assert_eq!(simplify(&s), s.clone());
        prop_assert_eq!(canonical_key(&s), s.to_preorder().to_string());
        prop_assert!(s.node_count() <= sampled(seed).node_count());
    }

    #[test]
    fn normalized_distance_bounds(a in any::<u64>(), b in any::<u64>()) {
        let (x, y) = (sampled(a), sampled(b));
        let n = normalized_ted(&x, &y);
        prop_assert!((0.0..=1.0).contains(&n));
        prop_assert_eq!(ted(&x, &y), ted(&y, &x));
        prop_assert_eq!(n == 0.0, x == y);
    }

    #[test]
    fn column_permutation_renames_consistently(seed in any::<u64>(), perm in Just([0usize, 1, 2, 3, 4, 5]).prop_shuffle()) {
        let config = GenerationConfig { n_rows: 8, ..GenerationConfig::default() };
        let Some(tree) = (seed..seed.wrapping_add(200)).map(|s| simplify(&sampled(s))).find(|t| validate_skeleton(t).is_valid()) else {
            return Ok(());
        };
        let sk = Skeleton::new(0, tree);
        let Ok(ds) = realize(&sk, seed, &config) else { return Ok(()) };
        let perm: [usize; 6] = perm.try_into().unwrap();
        let moved = permute_columns(&ds, &perm);
        let truth = moved.ground_truth.to_tree().unwrap();
        let original = ds.ground_truth.to_tree().unwrap();
        let n_c = original.count_token(srforge_core::expr::Token::C);
        let consts = vec![1.5; n_c];
        for r in 0..ds.n_rows() {
            let vars: Vec<f64> = ds.row(r)[1..].iter().map(|v| *v as f64).collect();
            let moved_vars: Vec<f64> = moved.row(r)[1..].iter().map(|v| *v as f64).collect();
            let a = evaluate(&original, &vars, &consts);
            let b = evaluate(&truth, &moved_vars, &consts);
            match (a, b) {
                (Ok(x), Ok(y)) => prop_assert!(x == y || (x - y).abs() <= 1e-12 * x.abs().max(1.0)),
                (a, b) => prop_assert_eq!(a.is_ok(), b.is_ok()),
            }
            prop_assert_eq!(ds.row(r)[0], moved.row(r)[0]);
        }
    }
}
