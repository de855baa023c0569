use xling::corpus::{build_corpus, CorpusSpec};
use xling::eval::{reachability_prompt, reachability_suite, SuiteConfig};
use xling::grammar::Pcsg;
use xling::lexicon::{build_lexicon, language_pair, Language, LexiconConfig};
use xling::lm::ngram_fit;
use xling::ontology::{build_ontology, OntologyConfig, SymbolId};
use xling::tokenizer::{train_bpe, Regime};

const SEED: u64 = 3;

#[test]
fn controls_bracket_the_suite() {
    let o = build_ontology(&OntologyConfig::default(), SEED).unwrap();
    let pair = language_pair(&LexiconConfig::default(), 0.25, SEED).unwrap();
    let lex = build_lexicon(&o.lexical_symbols(), &pair, 0.25, SEED, 1000).unwrap();
    let spec = CorpusSpec {
        n_majority: 2000,
        n_eval: 10,
        seed: SEED,
        ..CorpusSpec::default()
    };
    let corpus = build_corpus(&spec, &Pcsg::default(), &o, &lex).unwrap();
    let masked = &corpus.masked_symbols;

    // every subject followed by one masked property its class licenses, often
    // enough to outweigh the seen properties after the same prompt
    let mut taught = Vec::new();
    for e in 0..o.n_entities() as u32 {
        let subject = SymbolId::subject(e);
        let prop = o
            .class_licenses(o.class_of(e))
            .map(SymbolId::desc_property)
            .find(|p| masked.contains(p));
        if let Some(p) = prop {
            let prompt = reachability_prompt(&lex, subject, Language::B).unwrap();
            taught.push(format!("{prompt} {}", lex.surface(p, Language::B).unwrap()));
        }
    }
    assert!(!taught.is_empty());

    let mut lines: Vec<String> = corpus.train_texts().map(str::to_string).collect();
    for _ in 0..20 {
        lines.extend(taught.iter().cloned());
    }
    let t = train_bpe(&lines, 400, Regime::Vanilla, &('a'..='z').collect::<String>(), 0).unwrap();
    let encode = |ls: &[String]| -> Vec<Vec<u32>> { ls.iter().map(|l| t.encode(l).unwrap()).collect() };
    let cfg = SuiteConfig {
        k: Some(1),
        subjects_per_symbol: 4,
        seed: SEED,
        ..SuiteConfig::default()
    };

    let positive = ngram_fit(&encode(&lines), 24, 0.01, t.vocab_size()).unwrap();
    let pos = reachability_suite(&positive, &t, &lex, &o, masked, Language::B, &cfg).unwrap();
    assert_eq!(pos.fraction, 1.0, "{pos:?}");

    let plain: Vec<String> = corpus.train_texts().map(str::to_string).collect();
    let negative = ngram_fit(&encode(&plain), 3, 0.01, t.vocab_size()).unwrap();
    let neg = reachability_suite(&negative, &t, &lex, &o, masked, Language::B, &cfg).unwrap();
    assert!(neg.fraction < 0.5, "{neg:?}");
    assert_eq!(pos.n_units, neg.n_units);
}
