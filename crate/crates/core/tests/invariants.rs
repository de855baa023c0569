use proptest::prelude::*;

use xling::eval::{emergence_step, in_top_k, reach_ids, TokenTrie};
use xling::grammar::{sample_symbolic_sentence_with, type_violations, Pcsg, SamplerConfig};
use xling::lexicon::{build_lexicon, language_pair, Language, LexiconConfig};
use xling::lm::{ngram_fit, softmax, Predictor};
use xling::ontology::{build_ontology, OntologyConfig, SymbolCategory};
use xling::rng;
use xling::runner::{aggregate, RunRow};
use xling::tokenizer::Regime;

fn small_ontology() -> OntologyConfig {
    OntologyConfig {
        n_entities: 20,
        n_classes: 4,
        n_desc_properties: 30,
        n_desc_values: 8,
        n_rel_properties: 10,
        ..OntologyConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn emergence_is_first_crossing(values in prop::collection::vec(0.0f64..1.0, 0..30), thr in 0.0f64..1.0) {
        let traj: Vec<(usize, f64)> = values.iter().enumerate().map(|(i, &v)| (i * 10, v)).collect();
        let got = emergence_step(&traj, thr).unwrap();
        let want = values.iter().position(|&v| v > thr).map(|i| i * 10);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn top_k_membership_counts_ranks(scores in prop::collection::vec(-3i32..3, 1..12), k in 1usize..12) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let members = (0..scores.len() as u32).filter(|&t| in_top_k(&scores, t, k)).count();
        prop_assert_eq!(members, k.min(scores.len()));
    }

    #[test]
    fn softmax_is_a_distribution(scores in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let p = softmax(&scores);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn trie_holds_exactly_its_sequences(seqs in prop::collection::btree_set(prop::collection::vec(0u32..5, 1..5), 1..8)) {
        let trie = TokenTrie::from_sequences(seqs.iter().map(Vec::as_slice)).unwrap();
        for s in &seqs {
            prop_assert!(trie.contains(s));
        }
        let listed: std::collections::BTreeSet<Vec<u32>> = trie.sequences().into_iter().collect();
        prop_assert_eq!(&listed, &seqs);
    }

    #[test]
    fn larger_k_never_loses_reachability(
        lines in prop::collection::vec(prop::collection::vec(0u32..6, 1..8), 1..6),
        target in prop::collection::vec(0u32..6, 1..4),
        k in 1usize..6,
    ) {
        let m = ngram_fit(&lines, 2, 0.1, 6).unwrap();
        let trie = TokenTrie::from_sequences([target.as_slice()]).unwrap();
        let small = reach_ids(&m, &[0], &trie, k, 4096, false).unwrap().reached;
        let big = reach_ids(&m, &[0], &trie, k + 1, 4096, false).unwrap().reached;
        prop_assert!(!small || big);
        prop_assert!(reach_ids(&m, &[0], &trie, m.vocab_size(), 4096, false).unwrap().reached);
    }

    #[test]
    fn identical_languages_without_distance(seed in 0u64..1000) {
        let o = build_ontology(&small_ontology(), seed).unwrap();
        let plain = LexiconConfig { affixes: false, ..LexiconConfig::default() };
        let pair = language_pair(&plain, 0.0, seed).unwrap();
        let lex = build_lexicon(&o.lexical_symbols(), &pair, 0.0, seed, 1000).unwrap();
        for s in o.lexical_symbols() {
            prop_assert_eq!(lex.surface(s, Language::A).unwrap(), lex.surface(s, Language::B).unwrap());
        }
    }

    #[test]
    fn samples_parse_and_type_check(seed in 0u64..1000) {
        let g = Pcsg::default();
        let o = build_ontology(&small_ontology(), seed).unwrap();
        let mut r = rng::stream(seed, "invariants", &[]);
        let s = sample_symbolic_sentence_with(&g, &o, &mut r, SamplerConfig::default()).unwrap();
        let cats: Vec<SymbolCategory> = s.symbols.iter().map(|x| x.category).collect();
        prop_assert!(g.is_grammatical(&cats));
        prop_assert_eq!(type_violations(&g, &s.symbols, &o).unwrap(), 0);
    }

    #[test]
    fn aggregate_mean_lies_within_range(values in prop::collection::vec(-10.0f64..10.0, 1..8)) {
        let rows: Vec<RunRow> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| RunRow {
                d: 0.25,
                lambda: 0.1,
                vocab_size: 256,
                regime: Regime::Vanilla,
                data_seed: i as u64,
                model_seed: 0,
                metric: "m".into(),
                value: v,
            })
            .collect();
        let agg = aggregate(&rows);
        prop_assert_eq!(agg.len(), 1);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(agg[0].mean >= lo - 1e-12 && agg[0].mean <= hi + 1e-12);
        prop_assert!(agg[0].stderr >= 0.0);
        prop_assert_eq!(agg[0].n, values.len());
    }
}
