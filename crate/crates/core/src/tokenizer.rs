//! Byte-pair encoding over whitespace-separated words, plus the
//! fragmentation and overlap metrics computed from a trained tokenizer.
//!
//! The first character of every word carries the `▁` marker, so word-initial
//! and word-internal units are distinct tokens and decoding can restore spaces.
//! Special tokens are whole words that are never split or merged.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{TrainLine, CONTROL_TOKENS};
use crate::error::{Error, Result};
use crate::lexicon::{Language, Lexicon};
use crate::ontology::SymbolId;
use crate::rng;

pub const WORD_START: char = '▁';

/// Atomic tokens, in id order.
pub fn special_tokens() -> Vec<&'static str> {
    let mut v = vec!["[P]", "<sep>", "<eos>"];
    v.extend(CONTROL_TOKENS);
    v
}

pub const BRIDGE_METRIC: &str = "default-bridge-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Vanilla,
    Balanced,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Vanilla => "vanilla",
            Regime::Balanced => "balanced",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Regime::Vanilla),
            "balanced" => Ok(Regime::Balanced),
            _ => Err(Error::parse("regime", format!("unknown regime `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BpeConfig {
    pub vocab_size: usize,
    pub regime: Regime,
    /// Lines in the tokenizer corpus, identical across regimes.
    pub n_lines: usize,
    /// Characters always present in the base alphabet.
    pub initial_alphabet: String,
}

impl Default for BpeConfig {
    fn default() -> Self {
        Self {
            vocab_size: 2048,
            regime: Regime::Vanilla,
            n_lines: 50_000,
            initial_alphabet: ('a'..='z').collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpeTokenizer {
    vocab: Vec<String>,
    merges: Vec<(u32, u32)>,
    regime: Regime,
    seed: u64,
    n_special: usize,
    ids: HashMap<String, u32>,
    ranks: HashMap<(u32, u32), (usize, u32)>,
}

fn word_symbols(word: &str) -> impl Iterator<Item = String> + '_ {
    word.chars().enumerate().map(|(i, c)| {
        if i == 0 {
            format!("{WORD_START}{c}")
        } else {
            c.to_string()
        }
    })
}

impl BpeTokenizer {
    fn assemble(vocab: Vec<String>, merges: Vec<(u32, u32)>, regime: Regime, seed: u64) -> Result<Self> {
        let n_special = special_tokens().len();
        if vocab.len() < n_special || vocab[..n_special] != special_tokens()[..] {
            return Err(Error::Tokenizer("vocabulary must start with the special tokens".into()));
        }
        let mut ids = HashMap::with_capacity(vocab.len());
        for (i, t) in vocab.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::Tokenizer(format!("bad token {t:?}")));
            }
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Tokenizer(format!("duplicate token {t:?}")));
            }
        }
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, &(l, r)) in merges.iter().enumerate() {
            let (Some(ls), Some(rs)) = (vocab.get(l as usize), vocab.get(r as usize)) else {
                return Err(Error::Tokenizer(format!("merge {rank} refers to unknown ids")));
            };
            let joined = format!("{ls}{rs}");
            let &id = ids
                .get(&joined)
                .ok_or_else(|| Error::Tokenizer(format!("merge result {joined:?} missing from vocab")))?;
            ranks.entry((l, r)).or_insert((rank, id));
        }
        Ok(Self {
            vocab,
            merges,
            regime,
            seed,
            n_special,
            ids,
            ranks,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn merge_strings(&self) -> Vec<(&str, &str)> {
        self.merges
            .iter()
            .map(|&(l, r)| (self.vocab[l as usize].as_str(), self.vocab[r as usize].as_str()))
            .collect()
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.vocab.get(id as usize).map(String::as_str).ok_or(Error::TokenRange {
            id,
            vocab_size: self.vocab.len(),
        })
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < self.n_special
    }

    pub fn encode_word(&self, word: &str) -> Result<Vec<u32>> {
        if let Some(&id) = self.ids.get(word).filter(|&&id| self.is_special(id)) {
            return Ok(vec![id]);
        }
        let mut syms = word_symbols(word)
            .map(|s| {
                self.ids
                    .get(&s)
                    .copied()
                    .ok_or_else(|| Error::Tokenizer(format!("character {s:?} is not in the base alphabet")))
            })
            .collect::<Result<Vec<u32>>>()?;
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(rank, id)| (rank, w[0], w[1], id)))
                .min();
            let Some((_, l, r, id)) = best else { break };
            syms = merge_pair(&syms, l, r, id);
        }
        Ok(syms)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let mut out = Vec::new();
        for w in text.split_whitespace() {
            out.extend(self.encode_word(w)?);
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id)?;
            if self.is_special(id) {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            } else if let Some(rest) = tok.strip_prefix(WORD_START) {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(rest);
            } else {
                out.push_str(tok);
            }
        }
        Ok(out)
    }

    /// Token-id sequences of every whitespace word, specials excluded.
    fn word_encodings<'a>(&self, lines: impl IntoIterator<Item = &'a str>) -> Result<Vec<Vec<u32>>> {
        let mut cache: HashMap<&str, Vec<u32>> = HashMap::new();
        let mut out = Vec::new();
        let specials: HashSet<&str> = special_tokens().into_iter().collect();
        for line in lines {
            for w in line.split_whitespace() {
                if specials.contains(w) {
                    continue;
                }
                if !cache.contains_key(w) {
                    cache.insert(w, self.encode_word(w)?);
                }
                out.push(cache[w].clone());
            }
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# xling bpe v1\n");
        s.push_str(&format!("vocab_size = {}\n", self.vocab.len()));
        s.push_str(&format!("regime = {}\n", self.regime));
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str("[vocab]\n");
        for t in &self.vocab {
            s.push_str(t);
            s.push('\n');
        }
        s.push_str("[merges]\n");
        for (l, r) in self.merge_strings() {
            s.push_str(&format!("{l} {r}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |r: &str| Error::parse("tokenizer file", r);
        let mut lines = text.lines();
        if lines.next() != Some("# xling bpe v1") {
            return Err(err("missing header"));
        }
        let mut header = HashMap::new();
        for line in lines.by_ref() {
            if line == "[vocab]" {
                break;
            }
            let (k, v) = line.split_once(" = ").ok_or_else(|| err("bad header line"))?;
            header.insert(k, v);
        }
        let get = |k: &str| header.get(k).copied().ok_or_else(|| err(&format!("missing `{k}`")));
        let vocab_size: usize = get("vocab_size")?.parse().map_err(|_| err("bad vocab_size"))?;
        let regime: Regime = get("regime")?.parse()?;
        let seed: u64 = get("seed")?.parse().map_err(|_| err("bad seed"))?;
        let mut vocab = Vec::with_capacity(vocab_size);
        for line in lines.by_ref() {
            if line == "[merges]" {
                break;
            }
            vocab.push(line.to_string());
        }
        if vocab.len() != vocab_size {
            return Err(err("vocab_size does not match the vocabulary"));
        }
        let ids: HashMap<&str, u32> = vocab.iter().enumerate().map(|(i, t)| (t.as_str(), i as u32)).collect();
        let mut merges = Vec::new();
        for line in lines {
            let (l, r) = line.split_once(' ').ok_or_else(|| err("bad merge line"))?;
            let l = *ids.get(l).ok_or_else(|| err("merge uses an unknown token"))?;
            let r = *ids.get(r).ok_or_else(|| err("merge uses an unknown token"))?;
            merges.push((l, r));
        }
        let t = Self::assemble(vocab, merges, regime, seed)?;
        if t.replay_vocab() != t.vocab {
            return Err(err("merges do not reproduce the vocabulary"));
        }
        Ok(t)
    }

    /// Vocabulary rebuilt from the base alphabet by applying merges in order.
    pub fn replay_vocab(&self) -> Vec<String> {
        let n_base = self.vocab.iter().take_while(|t| is_base_unit(t) || special_tokens().contains(&t.as_str())).count();
        let mut v: Vec<String> = self.vocab[..n_base].to_vec();
        let mut seen: HashSet<String> = v.iter().cloned().collect();
        for &(l, r) in &self.merges {
            let t = format!("{}{}", self.vocab[l as usize], self.vocab[r as usize]);
            if seen.insert(t.clone()) {
                v.push(t);
            }
        }
        v
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

fn is_base_unit(t: &str) -> bool {
    t.strip_prefix(WORD_START).unwrap_or(t).chars().count() == 1
}

fn base_alphabet<S: AsRef<str>>(lines: &[S], initial_alphabet: &str) -> BTreeSet<String> {
    let specials = special_tokens();
    let mut base = BTreeSet::new();
    for c in initial_alphabet.chars() {
        base.insert(c.to_string());
        base.insert(format!("{WORD_START}{c}"));
    }
    for line in lines {
        for w in line.as_ref().split_whitespace() {
            if !specials.contains(&w) {
                base.extend(word_symbols(w));
            }
        }
    }
    base
}

/// Smallest vocabulary `train_bpe` accepts: specials plus the base alphabet.
pub fn base_vocab_size<S: AsRef<str>>(lines: &[S], initial_alphabet: &str) -> usize {
    special_tokens().len() + base_alphabet(lines, initial_alphabet).len()
}

fn merge_pair(syms: &[u32], l: u32, r: u32, id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
            out.push(id);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    out
}

/// Greedy BPE: repeatedly merge the most frequent adjacent pair inside words,
/// ties going to the lexicographically smallest (left, right) pair.
pub fn train_bpe<S: AsRef<str>>(
    lines: &[S],
    vocab_size: usize,
    regime: Regime,
    initial_alphabet: &str,
    seed: u64,
) -> Result<BpeTokenizer> {
    let specials = special_tokens();
    let special_set: HashSet<&str> = specials.iter().copied().collect();
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for line in lines {
        for w in line.as_ref().split_whitespace() {
            if !special_set.contains(w) {
                *freq.entry(w).or_default() += 1;
            }
        }
    }
    let mut vocab: Vec<String> = specials.iter().map(|s| s.to_string()).collect();
    vocab.extend(base_alphabet(lines, initial_alphabet));
    if vocab_size < vocab.len() {
        return Err(Error::config(
            "vocab_size",
            format!("{vocab_size} is below the base alphabet plus specials ({})", vocab.len()),
        ));
    }
    let mut ids: HashMap<String, u32> = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();

    let mut words: Vec<(Vec<u32>, u64)> = freq
        .iter()
        .map(|(w, &n)| (word_symbols(w).map(|s| ids[&s]).collect(), n))
        .collect();
    words.sort();
    let mut merges = Vec::new();

    while vocab.len() < vocab_size {
        let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
        for (syms, n) in &words {
            for w in syms.windows(2) {
                *counts.entry((w[0], w[1])).or_default() += n;
            }
        }
        let best = counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (&vocab[pa.0 as usize], &vocab[pa.1 as usize]);
                let kb = (&vocab[pb.0 as usize], &vocab[pb.1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some(((l, r), _)) = best else {
            return Err(Error::VocabUnreachable {
                target: vocab_size,
                achieved: vocab.len(),
            });
        };
        let joined = format!("{}{}", vocab[l as usize], vocab[r as usize]);
        let id = *ids.entry(joined.clone()).or_insert_with(|| {
            vocab.push(joined);
            (vocab.len() - 1) as u32
        });
        merges.push((l, r));
        for (syms, _) in &mut words {
            if syms.windows(2).any(|w| w == [l, r]) {
                *syms = merge_pair(syms, l, r, id);
            }
        }
    }
    BpeTokenizer::assemble(vocab, merges, regime, seed)
}

/// Tokenizer training lines drawn with replacement from the model's training
/// lines: at the model mixture (vanilla) or half A and half B (balanced).
pub fn sample_tokenizer_corpus(train: &[TrainLine], regime: Regime, n_lines: usize, seed: u64) -> Result<Vec<String>> {
    let mut rng = rng::stream(seed, "tokenizer.sample", &[]);
    let pick = |pool: &[&TrainLine], rng: &mut rng::Rng| pool[rng.gen_range(0..pool.len())].text.clone();
    let all: Vec<&TrainLine> = train.iter().collect();
    if all.is_empty() {
        return Err(Error::Tokenizer("empty training corpus".into()));
    }
    Ok(match regime {
        Regime::Vanilla => (0..n_lines).map(|_| pick(&all, &mut rng)).collect(),
        Regime::Balanced => {
            let by = |lang| train.iter().filter(|l| l.lang == lang).collect::<Vec<_>>();
            let (a, b) = (by(Language::A), by(Language::B));
            if a.is_empty() || b.is_empty() {
                return Err(Error::Tokenizer("balanced sampling needs lines in both languages".into()));
            }
            (0..n_lines)
                .map(|i| pick(if i % 2 == 0 { &a } else { &b }, &mut rng))
                .collect()
        }
    })
}

/// Mean tokens per whitespace word, specials excluded.
pub fn fertility<'a>(t: &BpeTokenizer, lines: impl IntoIterator<Item = &'a str>) -> Result<f64> {
    let enc = t.word_encodings(lines)?;
    if enc.is_empty() {
        return Err(Error::Undefined("fertility of an empty corpus".into()));
    }
    Ok(enc.iter().map(Vec::len).sum::<usize>() as f64 / enc.len() as f64)
}

/// Fraction of words split into two or more tokens.
pub fn continuation_rate<'a>(t: &BpeTokenizer, lines: impl IntoIterator<Item = &'a str>) -> Result<f64> {
    let enc = t.word_encodings(lines)?;
    if enc.is_empty() {
        return Err(Error::Undefined("continuation rate of an empty corpus".into()));
    }
    Ok(enc.iter().filter(|e| e.len() >= 2).count() as f64 / enc.len() as f64)
}

pub fn token_types<'a>(t: &BpeTokenizer, lines: impl IntoIterator<Item = &'a str>) -> Result<BTreeSet<u32>> {
    Ok(t.word_encodings(lines)?.into_iter().flatten().collect())
}

/// Jaccard similarity of the token types used by each corpus.
pub fn vocab_overlap<'a, 'b>(
    t: &BpeTokenizer,
    lines_a: impl IntoIterator<Item = &'a str>,
    lines_b: impl IntoIterator<Item = &'b str>,
) -> Result<f64> {
    let a = token_types(t, lines_a)?;
    let b = token_types(t, lines_b)?;
    let union = a.union(&b).count();
    if union == 0 {
        return Err(Error::Undefined("vocabulary overlap of two empty corpora".into()));
    }
    Ok(a.intersection(&b).count() as f64 / union as f64)
}

/// Mean, over masked B words, of the fraction of their token types that also
/// occur in the tokenized training corpus.
pub fn bridge_strength<'a>(
    t: &BpeTokenizer,
    lex: &Lexicon,
    masked: &BTreeSet<SymbolId>,
    train_lines: impl IntoIterator<Item = &'a str>,
) -> Result<f64> {
    if masked.is_empty() {
        return Err(Error::Undefined("bridge strength with no masked symbols".into()));
    }
    let seen = token_types(t, train_lines)?;
    let mut total = 0.0;
    for &s in masked {
        let types: BTreeSet<u32> = t.encode_word(lex.surface(s, Language::B)?)?.into_iter().collect();
        total += types.iter().filter(|x| seen.contains(x)).count() as f64 / types.len() as f64;
    }
    Ok(total / masked.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub language: String,
    pub lambda: f64,
    pub d: f64,
    pub vocab_size: usize,
    pub regime: Regime,
    pub seed: u64,
    pub value: f64,
}

pub fn write_metric_rows(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metric_rows(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn train(lines: &[&str], size: usize) -> BpeTokenizer {
        train_bpe(lines, size, Regime::Vanilla, "", 0).unwrap()
    }

    #[test]
    fn first_merge_is_the_only_pair() {
        let lines = ["ab ab ab"];
        assert_eq!(base_vocab_size(&lines, ""), 11);
        assert!(matches!(train_bpe(&lines, 10, Regime::Vanilla, "", 0), Err(Error::Config { .. })));
        let t = train(&lines, 12);
        assert_eq!(t.merge_strings(), vec![("▁a", "b")]);
        assert_eq!(t.encode("ab").unwrap().len(), 1);
    }

    #[test]
    fn base_only_splits_into_characters() {
        let lines = ["abc cab"];
        let t = train(&lines, base_vocab_size(&lines, ""));
        assert!(t.merges().is_empty());
        assert_eq!(t.encode("abc cab").unwrap().len(), 6);
        assert_eq!(fertility(&t, ["abc cab"]).unwrap(), 3.0);
        assert_eq!(continuation_rate(&t, ["abc cab"]).unwrap(), 1.0);
    }

    #[test]
    fn unreachable_vocab_reports_achieved_size() {
        let t = train_bpe(&["ab"], 100, Regime::Vanilla, "", 0);
        assert!(matches!(t, Err(Error::VocabUnreachable { target: 100, achieved: 12 })));
    }

    #[test]
    fn specials_are_atomic() {
        let t = train(&["T0-A [P] ab ab <eos>"], 12);
        let ids = t.encode("T1-B [P] <sep> ab <eos>").unwrap();
        assert_eq!(ids.len(), 5);
        assert!(ids.iter().take(3).all(|&i| t.is_special(i)));
        assert_eq!(t.encode("<sep>").unwrap(), vec![1]);
        assert_eq!(t.decode(&t.encode("<sep>").unwrap()).unwrap(), "<sep>");
        assert!(t.encode("").unwrap().is_empty());
    }

    #[test]
    fn decode_rejects_unknown_ids() {
        let t = train(&["ab"], 12);
        assert!(matches!(t.decode(&[12]), Err(Error::TokenRange { id: 12, .. })));
    }

    #[test]
    fn overlap_edge_cases() {
        let t = train_bpe(&["ab cd"], 13, Regime::Vanilla, "", 0).unwrap();
        assert_eq!(vocab_overlap(&t, ["ab cd"], ["ab cd"]).unwrap(), 1.0);
        assert_eq!(vocab_overlap(&t, ["ab"], ["cd"]).unwrap(), 0.0);
    }

    #[test]
    fn file_round_trip() {
        let lines = ["T0-A [P] nawcaq jna agca <eos>", "T0-B [P] caqu jnaw <eos>"];
        let n = base_vocab_size(&lines, "abc");
        let t = train_bpe(&lines, n + 6, Regime::Balanced, "abc", 7).unwrap();
        let back = BpeTokenizer::from_text(&t.to_text()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.replay_vocab(), t.vocab);
    }

    proptest! {
        #[test]
        fn round_trip_and_fertility_bound(
            lines in prop::collection::vec("[a-e]{1,6}( [a-e]{1,6}){0,5}", 1..20),
            extra in 0usize..30,
        ) {
            let n = base_vocab_size(&lines, "");
            let t = match train_bpe(&lines, n + extra, Regime::Vanilla, "", 0) {
                Ok(t) => t,
                Err(Error::VocabUnreachable { .. }) => return Ok(()),
                Err(e) => panic!("{e}"),
            };
            let again = train_bpe(&lines, n + extra, Regime::Vanilla, "", 0).unwrap();
            prop_assert_eq!(&t, &again);
            for l in &lines {
                prop_assert_eq!(&t.decode(&t.encode(l).unwrap()).unwrap(), l);
            }
            let f = fertility(&t, lines.iter().map(String::as_str)).unwrap();
            let c = continuation_rate(&t, lines.iter().map(String::as_str)).unwrap();
            prop_assert!(f >= 1.0 + c - 1e-12);
        }
    }
}
