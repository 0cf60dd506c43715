use proptest::prelude::*;
use stopforge::chain::{simulate_path, stationary_sample, visit_paths_to_hit_partial, ChainState};
use stopforge::coding::{CodingFunction, Decoded};
use stopforge::oracle::{brute_force_cond_prob, cond_prob_history, posterior_after};
use stopforge::rng;

/// Codings with zero or one-valued exceptions on odd states below 13.
fn coding() -> impl Strategy<Value = CodingFunction> {
    proptest::collection::btree_map(prop::sample::select(vec![3u64, 5, 7, 9, 11]), 0u8..=1, 0..3)
        .prop_map(|m| CodingFunction::with_exceptions(m).expect("odd states above 1"))
}

/// Encoded stationary trajectory, so the history has positive probability.
fn history(f: &CodingFunction, seed: u64, len: usize) -> Vec<u8> {
    let mut g = rng::from_seed(seed);
    let start = stationary_sample(&mut g);
    f.encode(&simulate_path(start, len, &mut g).expect("len >= 1")).0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filter_stays_inside_brute_force_interval(f in coding(), seed in any::<u64>(), len in 1usize..=12) {
        let bits = history(&f, seed, len);
        let p = cond_prob_history(&f, &bits).unwrap();
        let iv = brute_force_cond_prob(&f, &bits, 1e-9).unwrap();
        prop_assert!(iv.contains(p, 1e-12), "{bits:?}: {p} not in [{}, {}]", iv.lo, iv.hi);
    }

    #[test]
    fn posteriors_are_normalized(f in coding(), seed in any::<u64>(), len in 1usize..=40) {
        let bits = history(&f, seed, len);
        let post = posterior_after(&f, &bits).unwrap();
        prop_assert!((post.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_blocks_decode_to_their_path(f in coding(), k in 1u64..=3, pick in any::<prop::sample::Index>()) {
        let mut paths = Vec::new();
        visit_paths_to_hit_partial(k, 1e-3, 2000, |w| paths.push(w)).unwrap();
        let w = pick.get(&paths);
        let bits = f.encode(&w.path);
        match f.invert(&bits).unwrap() {
            Decoded::Unique(p) => prop_assert_eq!(p, w.path.clone()),
            Decoded::Ambiguous(c) => prop_assert!(c.contains(&w.path), "true path missing from candidates"),
        }
    }

    #[test]
    fn reset_pattern_marks_state_zero(f in coding(), seed in any::<u64>(), len in 3usize..=60) {
        let mut g = rng::from_seed(seed);
        let start = stationary_sample(&mut g);
        let path = simulate_path(start, len, &mut g).unwrap();
        let bits = f.encode(&path);
        for t in 2..bits.len() {
            let pattern = bits[t - 2..=t] == [0, 0, 1];
            prop_assert_eq!(pattern, path.states()[t - 2] == ChainState::ZERO, "t={}", t);
        }
    }
}
