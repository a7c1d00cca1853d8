mod common;

use common::*;
use fairtest::oracle::{Oracle, DEFAULT_ORACLE_BOUND};
use fairtest::sampler::{margin_of_error, perturbation_count, perturbations, random_input, stream_rng, z_value};
use fairtest::sampler::{AdaptiveEstimator, PartialAssignment, StreamKey};
use fairtest::schema::enumerate_subsets;
use fairtest::subject::default_distance;
use fairtest::{
    causal_score, group_score, search_with, CharSubset, Engine, EvalCache, Input, SamplingConfig, Schema, ScoreResult,
    SearchConfig, SearchKind,
};
use proptest::prelude::*;
use std::collections::HashSet;

fn labels() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=3, 1..=5)
}

/// A schema, a table seed and a non-empty subset of the schema.
fn subject_and_subset() -> impl Strategy<Value = (Vec<usize>, u64, Vec<bool>)> {
    labels().prop_flat_map(|l| {
        let n = l.len();
        (Just(l), any::<u64>(), prop::collection::vec(any::<bool>(), n))
    })
}

fn pick(mask: &[bool]) -> CharSubset {
    let mut indices: Vec<usize> = mask.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i).collect();
    if indices.is_empty() {
        indices.push(0);
    }
    CharSubset::new(indices, mask.len()).unwrap()
}

fn sampled(seed: u64) -> SamplingConfig {
    SamplingConfig {
        exhaustive_limit: 0,
        seed,
        ..SamplingConfig::default()
    }
}

fn measurement(r: &ScoreResult) -> ScoreResult {
    ScoreResult {
        cache_hits: 0,
        ..r.clone()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schema_round_trip(l in labels()) {
        let s = schema_with(&l);
        prop_assert_eq!(Schema::parse(&s.serialize()).unwrap(), s);
    }

    #[test]
    fn domain_size_matches_enumeration(l in labels()) {
        let s = schema_with(&l);
        prop_assert_eq!(s.domain_size().unwrap(), s.inputs().count() as u128);
    }

    #[test]
    fn subsets_are_enumerated_once_in_order(l in labels()) {
        let s = schema_with(&l);
        let all: Vec<CharSubset> = enumerate_subsets(&s, s.len()).unwrap().collect();
        prop_assert_eq!(all.len(), (1usize << s.len()) - 1);
        let unique: HashSet<Vec<usize>> = all.iter().map(|c| c.indices().to_vec()).collect();
        prop_assert_eq!(unique.len(), all.len());
        for w in all.windows(2) {
            prop_assert!((w[0].len(), w[0].indices()) < (w[1].len(), w[1].indices()));
        }
        for c in &all {
            prop_assert!(c.indices().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn margin_shrinks_with_samples(t in 1u64..500, extra in 1u64..500) {
        let r = t + extra;
        let a = margin_of_error(&AdaptiveEstimator::from_counts(t, r), 0.95).unwrap();
        let b = margin_of_error(&AdaptiveEstimator::from_counts(2 * t, 2 * r), 0.95).unwrap();
        prop_assert!(b < a);
        let half = margin_of_error(&AdaptiveEstimator::from_counts(r, 2 * r), 0.95).unwrap();
        let other = margin_of_error(&AdaptiveEstimator::from_counts(t, 2 * r), 0.95).unwrap();
        prop_assert!(other <= half);
    }

    #[test]
    fn z_is_increasing(a in 0.01f64..0.98, d in 0.001f64..0.01) {
        prop_assert!(z_value(a + d).unwrap() > z_value(a).unwrap());
    }

    #[test]
    fn distance_is_a_metric_on_decisions(a: bool, b: bool) {
        prop_assert_eq!(default_distance(a, b), default_distance(b, a));
        prop_assert_eq!(default_distance(a, a), 0.0);
    }

    #[test]
    fn random_inputs_respect_pinned_values((l, seed, mask) in subject_and_subset()) {
        let s = schema_with(&l);
        let sub = pick(&mask);
        let values: Vec<u32> = sub.indices().iter().map(|&p| (seed % l[p] as u64) as u32).collect();
        let fixed = PartialAssignment::new(&sub, values.clone());
        let key = StreamKey::new("prop").with([seed]);
        let mut a = stream_rng(seed, &key);
        let mut b = stream_rng(seed, &key);
        for _ in 0..20 {
            let k = random_input(&s, &fixed, &mut a).unwrap();
            prop_assert_eq!(&k, &random_input(&s, &fixed, &mut b).unwrap());
            prop_assert!(s.validate_input(&k).is_ok());
            prop_assert_eq!(k.project(&sub), values.clone());
        }
    }

    #[test]
    fn perturbations_are_distinct_and_local((l, seed, mask) in subject_and_subset()) {
        let s = schema_with(&l);
        let sub = pick(&mask);
        let mut rng = stream_rng(seed, &StreamKey::new("base"));
        let base = random_input(&s, &PartialAssignment::none(), &mut rng).unwrap();
        let all: Vec<Input> = perturbations(&base, &sub, &s, &mut rng).collect();
        prop_assert_eq!(all.len() as u128, perturbation_count(&s, &sub));
        let unique: HashSet<&Input> = all.iter().collect();
        prop_assert_eq!(unique.len(), all.len());
        for k in &all {
            prop_assert_ne!(k, &base);
            prop_assert_eq!(k.project_complement(&sub), base.project_complement(&sub));
        }
        let mut again = stream_rng(seed, &StreamKey::new("base"));
        let _ = random_input(&s, &PartialAssignment::none(), &mut again).unwrap();
        prop_assert_eq!(perturbations(&base, &sub, &s, &mut again).collect::<Vec<_>>(), all);
    }

    #[test]
    fn exact_scores_are_monotone_and_ordered((l, seed, _m) in subject_and_subset()) {
        let s = schema_with(&l);
        let f = table(seed, &s);
        let oracle = Oracle::build(&f, &s, &EvalCache::new(), DEFAULT_ORACLE_BOUND).unwrap();
        let subsets = all_subsets(&s);
        for a in &subsets {
            let (ga, ca) = (oracle.group(a).score, oracle.causal(a).score);
            prop_assert!(ga <= ca, "{}: group {} > causal {}", a, ga, ca);
            for b in subsets.iter().filter(|b| a.is_subset_of(b)) {
                prop_assert!(oracle.group(b).score >= ga);
                prop_assert!(oracle.causal(b).score >= ca);
            }
        }
    }

    #[test]
    fn pruning_is_sound((l, seed, _m) in subject_and_subset(), theta in 0.0f64..=1.0) {
        let s = schema_with(&l);
        let f = table(seed, &s);
        let oracle = Oracle::build(&f, &s, &EvalCache::new(), DEFAULT_ORACLE_BOUND).unwrap();
        for kind in [SearchKind::Group, SearchKind::Causal] {
            let cfg = SearchConfig::new(theta, kind);
            let pruned = search_with(&s, &cfg, 1, |c| Ok(oracle.score(kind, c))).unwrap();
            let unpruned = search_with(&s, &SearchConfig { prune: false, ..cfg.clone() }, 1, |c| Ok(oracle.score(kind, c))).unwrap();
            let brute = oracle.search(&cfg).unwrap();
            prop_assert_eq!(pruned.minimal_subsets(), unpruned.minimal_subsets());
            prop_assert_eq!(pruned.minimal_subsets(), brute.minimal_subsets());
            prop_assert_eq!(pruned.minimal_subsets(), minimal_qualifying(&brute.scores, theta));
            let minimal = pruned.minimal_subsets();
            for a in &minimal {
                prop_assert!(oracle.score(kind, a).score >= theta);
                for b in &minimal {
                    prop_assert!(a == b || !a.is_subset_of(b));
                }
            }
            prop_assert_eq!(pruned.subsets_evaluated + pruned.subsets_pruned, unpruned.subsets_evaluated);
        }
    }

    #[test]
    fn tests_total_shrinks_as_theta_drops((l, seed, _m) in subject_and_subset(), mut thetas in prop::collection::vec(0.0f64..=1.0, 3)) {
        let s = schema_with(&l);
        let f = table(seed, &s);
        let cache = EvalCache::new();
        let engine = Engine::new(&s, &f, &cache);
        thetas.sort_by(f64::total_cmp);
        let totals: Vec<u64> = thetas
            .iter()
            .map(|&t| {
                let cfg = SearchConfig { sampling: sampled(seed), ..SearchConfig::new(t, SearchKind::Causal) };
                fairtest::discrimination_search(&engine, &cfg).unwrap().tests_total
            })
            .collect();
        prop_assert!(totals.windows(2).all(|w| w[0] <= w[1]), "{:?} at {:?}", totals, thetas);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampled_scores_are_consistent((l, seed, mask) in subject_and_subset()) {
        let s = schema_with(&l);
        let f = table(seed, &s);
        let sub = pick(&mask);
        let cfg = sampled(seed);
        let cache = EvalCache::new();
        let (g, gs) = group_score(&f, &s, &sub, &cfg, &cache).unwrap();
        let (c, cs) = causal_score(&f, &s, &sub, &cfg, &cache).unwrap();
        for r in [&g, &c] {
            prop_assert!((0.0..=1.0).contains(&r.score));
        }
        prop_assert_eq!(g.score, ScoreResult::group_spread(&g.groups));
        prop_assert_eq!(g.groups.len() as u128, s.product_over(sub.indices()).unwrap());
        prop_assert_eq!(g.tests_generated, gs.len() as u64);
        prop_assert_eq!(c.tests_generated, cs.len() as u64);
        prop_assert!(gs.iter().chain(cs.iter()).all(|k| s.validate_input(k).is_ok()));

        // same inputs, fresh cache: bit-identical results and suites
        let again = EvalCache::new();
        let (g2, gs2) = group_score(&f, &s, &sub, &cfg, &again).unwrap();
        let (c2, cs2) = causal_score(&f, &s, &sub, &cfg, &again).unwrap();
        prop_assert_eq!(&g, &g2);
        prop_assert_eq!(&gs, &gs2);
        prop_assert_eq!(&c, &c2);
        prop_assert_eq!(&cs, &cs2);

        // cache transparency
        let off = EvalCache::disabled();
        let (g3, _) = group_score(&f, &s, &sub, &cfg, &off).unwrap();
        let (c3, _) = causal_score(&f, &s, &sub, &cfg, &off).unwrap();
        prop_assert_eq!(measurement(&g), measurement(&g3));
        prop_assert_eq!(measurement(&c), measurement(&c3));

        // parallel group estimation changes nothing but scheduling
        let par = EvalCache::new();
        let (g4, gs4) = Engine::new(&s, &f, &par).with_workers(3).group_score(&sub, &cfg).unwrap();
        prop_assert_eq!(measurement(&g), measurement(&g4));
        prop_assert_eq!(gs, gs4);
    }
}
