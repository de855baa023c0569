//! Training and evaluation corpora: the A/B mixture, the masked minority
//! condition, and task formatting with task-language control tokens.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{sample_symbolic_sentence_with, Pcsg, SamplerConfig, SymbolicSentence};
use crate::lexicon::{Language, Lexicon};
use crate::ontology::{Ontology, SymbolCategory, SymbolId};
use crate::rng;

/// Bumped whenever the T1/T2 payload layout changes.
pub const FORMAT_VERSION: u32 = 1;

/// Every control token, in id order used by the tokenizer.
pub const CONTROL_TOKENS: [&str; 6] = ["T0-A", "T0-B", "T1-A", "T1-B", "T2-A", "T2-B"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    T0,
    T1,
    T2,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::T0, Task::T1, Task::T2];

    pub fn control_token(self, lang: Language) -> &'static str {
        CONTROL_TOKENS[self as usize * 2 + lang.index()]
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", *self as usize)
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T0" => Ok(Task::T0),
            "T1" => Ok(Task::T1),
            "T2" => Ok(Task::T2),
            _ => Err(Error::parse("task", format!("unknown task `{s}`"))),
        }
    }
}

/// Task and language named by a control token.
pub fn parse_control_token(tok: &str) -> Option<(Task, Language)> {
    let i = CONTROL_TOKENS.iter().position(|&t| t == tok)?;
    Some((Task::ALL[i / 2], Language::BOTH[i % 2]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    A,
    BSeen,
    BMasked,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::A, Split::BSeen, Split::BMasked];

    pub fn language(self) -> Language {
        match self {
            Split::A => Language::A,
            _ => Language::B,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::A => "A",
            Split::BSeen => "B_seen",
            Split::BMasked => "B_masked",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub lambda: f64,
    pub n_majority: usize,
    pub mask_fraction: f64,
    pub tasks: Vec<Task>,
    /// Sentences per evaluation split.
    pub n_eval: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            lambda: 0.25,
            n_majority: 100_000,
            mask_fraction: 0.25,
            tasks: Task::ALL.to_vec(),
            n_eval: 1000,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 0.5) {
            return Err(Error::config("lambda", format!("{} is outside (0, 0.5]", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return Err(Error::config(
                "mask_fraction",
                format!("{} is outside [0, 1)", self.mask_fraction),
            ));
        }
        if self.n_majority == 0 {
            return Err(Error::config("n_majority", "must be positive"));
        }
        if self.tasks.is_empty() {
            return Err(Error::config("tasks", "at least one task is required"));
        }
        Ok(())
    }

    pub fn n_minority(&self) -> usize {
        (self.lambda * self.n_majority as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainLine {
    pub task: Task,
    pub lang: Language,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub train_lines: Vec<TrainLine>,
    pub eval_splits: BTreeMap<Split, Vec<Vec<SymbolId>>>,
    pub masked_symbols: BTreeSet<SymbolId>,
    /// B training-stream sentences diverted because they realise a masked symbol.
    pub n_diverted: usize,
}

fn content_words(s: &[SymbolId], lex: &Lexicon, lang: Language) -> Result<Vec<String>> {
    s.iter()
        .filter(|x| !x.category.is_structural())
        .map(|&x| lex.surface(x, lang).map(str::to_string))
        .collect()
}

/// One training line: control token followed by the task payload.
pub fn format_task(
    s: &SymbolicSentence,
    lex: &Lexicon,
    lang: Language,
    task: Task,
    seed: u64,
) -> Result<String> {
    format_symbols(&s.symbols, lex, lang, task, seed)
}

pub fn format_symbols(
    symbols: &[SymbolId],
    lex: &Lexicon,
    lang: Language,
    task: Task,
    seed: u64,
) -> Result<String> {
    let sentence = lex.realize(symbols, lang)?;
    let ctrl = task.control_token(lang);
    Ok(match task {
        Task::T0 => format!("{ctrl} {sentence}"),
        Task::T1 => {
            let mut words = content_words(symbols, lex, lang)?;
            let mut rng = rng::stream(seed, "corpus.t1", &[]);
            words.shuffle(&mut rng);
            format!("{ctrl} {} <sep> {sentence}", words.join(" "))
        }
        Task::T2 => {
            let rest = match symbols.first() {
                Some(&SymbolId::PHRASE) => lex.realize(&symbols[1..], lang)?,
                _ => sentence,
            };
            format!("{ctrl} {rest}")
        }
    })
}

/// Prompt half of a T1 line (through the separator) and the expected answer.
pub fn t1_prompt(symbols: &[SymbolId], lex: &Lexicon, lang: Language, seed: u64) -> Result<(String, String)> {
    let line = format_symbols(symbols, lex, lang, Task::T1, seed)?;
    let cut = line.find(" <sep> ").expect("T1 lines contain a separator") + " <sep>".len();
    Ok((line[..cut].to_string(), line[cut + 1..].to_string()))
}

fn sample_batch(
    g: &Pcsg,
    o: &Ontology,
    seed: u64,
    tag: &str,
    range: std::ops::Range<u64>,
) -> Result<Vec<SymbolicSentence>> {
    range
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, tag, &[i]);
            sample_symbolic_sentence_with(g, o, &mut rng, SamplerConfig::default())
        })
        .collect()
}

fn desc_properties(s: &[SymbolId]) -> impl Iterator<Item = SymbolId> + '_ {
    s.iter().copied().filter(|x| x.category == SymbolCategory::DescProperty)
}

fn has_masked(s: &[SymbolId], masked: &BTreeSet<SymbolId>) -> bool {
    s.iter().any(|x| masked.contains(x))
}

const CHUNK: u64 = 4096;

pub fn build_corpus(spec: &CorpusSpec, g: &Pcsg, o: &Ontology, lex: &Lexicon) -> Result<Corpus> {
    spec.validate()?;
    let seed = spec.seed;

    let a_sentences = sample_batch(g, o, seed, "corpus.A", 0..spec.n_majority as u64)?;

    // masked symbols: drawn among properties that occur in A training lines and
    // whose B spelling is not also an A word
    let seen_in_a: BTreeSet<SymbolId> = a_sentences
        .iter()
        .flat_map(|s| desc_properties(&s.symbols))
        .collect();
    let a_words: HashSet<&str> = lex.words(Language::A).collect();
    let mut eligible: Vec<SymbolId> = Vec::new();
    for &p in &seen_in_a {
        if !a_words.contains(lex.surface(p, Language::B)?) {
            eligible.push(p);
        }
    }
    let n_desc = o.count(SymbolCategory::DescProperty);
    let n_mask = (spec.mask_fraction * n_desc as f64).round() as usize;
    if n_mask > eligible.len() {
        return Err(Error::config(
            "mask_fraction",
            format!(
                "{n_mask} masked properties requested but only {} are seen in A with a distinct B spelling",
                eligible.len()
            ),
        ));
    }
    let mut rng = rng::stream(seed, "corpus.mask", &[]);
    let masked: BTreeSet<SymbolId> = eligible
        .choose_multiple(&mut rng, n_mask)
        .copied()
        .collect();
    for class in 0..o.n_classes() as u32 {
        let trainable = o
            .class_licenses(class)
            .any(|p| !masked.contains(&SymbolId::desc_property(p)));
        if !trainable {
            log::warn!("masking leaves class {class} with no trainable descriptive property");
        }
    }

    // B training stream; masked sentences are diverted to evaluation
    let n_b = spec.n_minority();
    let mut b_seen: Vec<SymbolicSentence> = Vec::with_capacity(n_b);
    let mut b_masked: Vec<Vec<SymbolId>> = Vec::new();
    let mut n_diverted = 0;
    let mut next = 0u64;
    while b_seen.len() < n_b {
        let batch = sample_batch(g, o, seed, "corpus.B", next..next + CHUNK)?;
        next += CHUNK;
        for s in batch {
            if b_seen.len() == n_b {
                break;
            }
            if has_masked(&s.symbols, &masked) {
                n_diverted += 1;
                if b_masked.len() < spec.n_eval {
                    b_masked.push(s.symbols);
                }
            } else {
                b_seen.push(s);
            }
        }
    }

    // evaluation sentences from a stream that does not depend on lambda
    let mut eval_a = Vec::with_capacity(spec.n_eval);
    let mut eval_b = Vec::with_capacity(spec.n_eval);
    let mut next = 0u64;
    while eval_a.len() < spec.n_eval || eval_b.len() < spec.n_eval || b_masked.len() < spec.n_eval {
        let batch = sample_batch(g, o, seed, "corpus.eval", next..next + CHUNK)?;
        next += CHUNK;
        for s in batch {
            if eval_a.len() < spec.n_eval {
                eval_a.push(s.symbols);
            } else if has_masked(&s.symbols, &masked) {
                if b_masked.len() < spec.n_eval {
                    b_masked.push(s.symbols);
                }
            } else if eval_b.len() < spec.n_eval {
                eval_b.push(s.symbols);
            }
        }
        if masked.is_empty() && eval_a.len() == spec.n_eval && eval_b.len() == spec.n_eval {
            break;
        }
    }

    let n_tasks = spec.tasks.len();
    let format_all = |sents: &[SymbolicSentence], lang: Language| -> Result<Vec<TrainLine>> {
        sents
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let task = spec.tasks[i % n_tasks];
                let line_seed = rng::derive_seed(seed, "corpus.format", &[lang.index() as u64, i as u64]);
                Ok(TrainLine {
                    task,
                    lang,
                    text: format_task(s, lex, lang, task, line_seed)?,
                })
            })
            .collect()
    };
    let mut train_lines = format_all(&a_sentences, Language::A)?;
    train_lines.extend(format_all(&b_seen, Language::B)?);
    let mut rng = rng::stream(seed, "corpus.order", &[]);
    train_lines.shuffle(&mut rng);

    let mut eval_splits = BTreeMap::new();
    eval_splits.insert(Split::A, eval_a);
    eval_splits.insert(Split::BSeen, eval_b);
    eval_splits.insert(Split::BMasked, b_masked);
    Ok(Corpus {
        spec: spec.clone(),
        train_lines,
        eval_splits,
        masked_symbols: masked,
        n_diverted,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    spec: CorpusSpec,
    n_train_a: usize,
    n_train_b: usize,
    n_diverted: usize,
    n_eval: BTreeMap<String, usize>,
    masked: Vec<SymbolId>,
}

impl Corpus {
    pub fn count(&self, lang: Language) -> usize {
        self.train_lines.iter().filter(|l| l.lang == lang).count()
    }

    pub fn train_texts(&self) -> impl Iterator<Item = &str> {
        self.train_lines.iter().map(|l| l.text.as_str())
    }

    pub fn masked_surface(&self, lex: &Lexicon, lang: Language) -> Result<BTreeSet<String>> {
        self.masked_symbols
            .iter()
            .map(|&s| lex.surface(s, lang).map(str::to_string))
            .collect()
    }

    /// Writes `train.txt`, one `eval_<split>.txt` per split, and `manifest.toml`.
    pub fn write(&self, dir: &Path, lex: &Lexicon) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut train = String::new();
        for l in &self.train_lines {
            train.push_str(&l.text);
            train.push('\n');
        }
        fs::write(dir.join("train.txt"), train)?;
        for (split, sents) in &self.eval_splits {
            let mut text = String::new();
            for s in sents {
                text.push_str(&lex.realize(s, split.language())?);
                text.push('\n');
            }
            fs::write(dir.join(eval_file(*split)), text)?;
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            spec: self.spec.clone(),
            n_train_a: self.count(Language::A),
            n_train_b: self.count(Language::B),
            n_diverted: self.n_diverted,
            n_eval: self
                .eval_splits
                .iter()
                .map(|(k, v)| (k.name().to_string(), v.len()))
                .collect(),
            masked: self.masked_symbols.iter().copied().collect(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::parse("corpus manifest", e.to_string()))?;
        fs::write(dir.join("manifest.toml"), text)?;
        Ok(())
    }

    pub fn read(dir: &Path, lex: &Lexicon) -> Result<Self> {
        let text = fs::read_to_string(dir.join("manifest.toml"))?;
        let m: Manifest = toml::from_str(&text).map_err(|e| Error::parse("corpus manifest", e.to_string()))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::parse(
                "corpus manifest",
                format!("format version {} (expected {FORMAT_VERSION})", m.format_version),
            ));
        }
        let mut train_lines = Vec::new();
        for line in fs::read_to_string(dir.join("train.txt"))?.lines() {
            let ctrl = line.split_whitespace().next().unwrap_or("");
            let (task, lang) = parse_control_token(ctrl)
                .ok_or_else(|| Error::parse("train.txt", format!("bad control token `{ctrl}`")))?;
            train_lines.push(TrainLine {
                task,
                lang,
                text: line.to_string(),
            });
        }
        let mut eval_splits = BTreeMap::new();
        for split in Split::ALL {
            let mut sents = Vec::new();
            for line in fs::read_to_string(dir.join(eval_file(split)))?.lines() {
                let s = lex
                    .invert_text(line, split.language())
                    .ok_or_else(|| Error::parse(eval_file(split), format!("unknown word in `{line}`")))?;
                sents.push(s);
            }
            eval_splits.insert(split, sents);
        }
        Ok(Corpus {
            spec: m.spec,
            train_lines,
            eval_splits,
            masked_symbols: m.masked.into_iter().collect(),
            n_diverted: m.n_diverted,
        })
    }
}

pub fn eval_file(split: Split) -> &'static str {
    match split {
        Split::A => "eval_A.txt",
        Split::BSeen => "eval_B_seen.txt",
        Split::BMasked => "eval_B_masked.txt",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{build_lexicon, language_pair, LexiconConfig};
    use crate::ontology::{build_ontology, OntologyConfig};

    fn setup() -> (Pcsg, Ontology, Lexicon) {
        let o = build_ontology(&OntologyConfig::default(), 1).unwrap();
        let pair = language_pair(&LexiconConfig::default(), 0.25, 1).unwrap();
        let lex = build_lexicon(&o.lexical_symbols(), &pair, 0.25, 1, 64).unwrap();
        (Pcsg::default(), o, lex)
    }

    fn small(lambda: f64) -> CorpusSpec {
        CorpusSpec {
            lambda,
            n_majority: 3000,
            n_eval: 50,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn control_tokens_round_trip() {
        for t in Task::ALL {
            for l in Language::BOTH {
                assert_eq!(parse_control_token(t.control_token(l)), Some((t, l)));
            }
        }
        assert_eq!(Task::T1.control_token(Language::B), "T1-B");
    }

    #[test]
    fn lambda_out_of_range_is_rejected() {
        let (g, o, lex) = setup();
        for bad in [0.0, 0.6, -1.0] {
            assert!(matches!(
                build_corpus(&small(bad), &g, &o, &lex),
                Err(Error::Config { field: "lambda", .. })
            ));
        }
    }

    #[test]
    fn t0_shape_and_t1_permutation() {
        let (g, o, lex) = setup();
        let d = g.most_probable_derivation(crate::grammar::DEFAULT_MAX_DEPTH);
        let mut rng = rng::stream(0, "t", &[]);
        let symbols = crate::grammar::fill_template(&d.categories, &o, &mut rng, 1000).unwrap();
        let s = SymbolicSentence {
            symbols,
            derivation: d.rules,
        };
        let t0 = format_task(&s, &lex, Language::A, Task::T0, 0).unwrap();
        let words: Vec<&str> = t0.split(' ').collect();
        assert_eq!(words.len(), 6);
        assert_eq!((words[0], words[1], words[5]), ("T0-A", "[P]", "<eos>"));

        let t1 = format_task(&s, &lex, Language::B, Task::T1, 9).unwrap();
        let (pre, post) = t1.split_once(" <sep> ").unwrap();
        let mut a: Vec<&str> = pre.split(' ').skip(1).collect();
        let mut b: Vec<&str> = post.split(' ').filter(|w| !["[P]", "<eos>"].contains(w)).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);

        let t2 = format_task(&s, &lex, Language::A, Task::T2, 0).unwrap();
        assert!(t2.starts_with("T2-A "));
        assert!(t2.ends_with(&t0[9..]));
    }

    #[test]
    fn mixture_and_masking() {
        let (g, o, lex) = setup();
        let c = build_corpus(&small(0.1), &g, &o, &lex).unwrap();
        assert_eq!(c.count(Language::A), 3000);
        assert_eq!(c.count(Language::B), 300);
        assert_eq!(c.masked_symbols.len(), 115);
        let masked_b = c.masked_surface(&lex, Language::B).unwrap();
        for l in c.train_texts() {
            assert!(l.split_whitespace().all(|w| !masked_b.contains(w)));
        }
        assert!(c.n_diverted > 0);
        assert!(c.eval_splits.values().all(|v| v.len() == 50));
        for s in &c.eval_splits[&Split::BMasked] {
            assert!(has_masked(s, &c.masked_symbols));
        }
    }

    #[test]
    fn no_mask_means_no_masked_split() {
        let (g, o, lex) = setup();
        let spec = CorpusSpec {
            mask_fraction: 0.0,
            ..small(0.2)
        };
        let c = build_corpus(&spec, &g, &o, &lex).unwrap();
        assert!(c.masked_symbols.is_empty());
        assert!(c.eval_splits[&Split::BMasked].is_empty());
        assert_eq!(c.n_diverted, 0);
        assert_eq!(c.count(Language::B), 600);
    }

    #[test]
    fn task_census_is_exact() {
        let (g, o, lex) = setup();
        let c = build_corpus(&small(0.5), &g, &o, &lex).unwrap();
        let mut census: BTreeMap<&str, usize> = BTreeMap::new();
        for l in c.train_texts() {
            *census.entry(l.split(' ').next().unwrap()).or_default() += 1;
        }
        assert_eq!(census["T0-A"], 1000);
        assert_eq!(census["T1-A"], 1000);
        assert_eq!(census["T2-A"], 1000);
        assert_eq!(census["T0-B"] + census["T1-B"] + census["T2-B"], 1500);
    }

    #[test]
    fn files_round_trip_and_are_deterministic() {
        let (g, o, lex) = setup();
        let c = build_corpus(&small(0.25), &g, &o, &lex).unwrap();
        let c2 = build_corpus(&small(0.25), &g, &o, &lex).unwrap();
        assert_eq!(c, c2);
        let dir = tempfile::tempdir().unwrap();
        c.write(dir.path(), &lex).unwrap();
        let back = Corpus::read(dir.path(), &lex).unwrap();
        assert_eq!(back, c);
    }
}
