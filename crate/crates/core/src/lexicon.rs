//! Surface realization of abstract symbols in the two languages.
//!
//! Every lexical symbol gets a proto-stem built from syllable patterns with
//! Zipf-distributed letters. Each language derives its own cognate of the stem
//! by `ceil(d * len)` random edits and wraps it in category-conditioned affixes.
//! Surface forms are unique within a language, so realization is invertible.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ontology::{SymbolCategory, SymbolId};
use crate::rng::{self, Rng};

pub const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];
pub const CONSONANTS: [char; 21] = [
    'b', 'c', 'd', 'f', 'g', 'h', 'j', 'k', 'l', 'm', 'n', 'p', 'q', 'r', 's', 't', 'v', 'w', 'x',
    'y', 'z',
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Language {
    A,
    B,
}

impl Language {
    pub const BOTH: [Language; 2] = [Language::A, Language::B];

    pub fn index(self) -> usize {
        match self {
            Language::A => 0,
            Language::B => 1,
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Language::A => "A",
            Language::B => "B",
        })
    }
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Language::A),
            "B" | "b" => Ok(Language::B),
            _ => Err(Error::parse("language", format!("`{s}` is neither A nor B"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LetterKind {
    Consonant,
    Vowel,
}

pub fn letter_kind(c: char) -> Option<LetterKind> {
    if VOWELS.contains(&c) {
        Some(LetterKind::Vowel)
    } else if CONSONANTS.contains(&c) {
        Some(LetterKind::Consonant)
    } else {
        None
    }
}

/// Per-letter probabilities, Zipf-shaped over a language-specific ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct LetterTable {
    pub consonants: Vec<(char, f64)>,
    pub vowels: Vec<(char, f64)>,
}

fn zipf_weights(ranked: &[char], exponent: f64) -> Vec<(char, f64)> {
    let raw: Vec<f64> = (0..ranked.len())
        .map(|r| 1.0 / ((r + 1) as f64).powf(exponent))
        .collect();
    let total: f64 = raw.iter().sum();
    ranked.iter().zip(raw).map(|(&c, w)| (c, w / total)).collect()
}

impl LetterTable {
    pub fn zipf(consonant_rank: &[char], vowel_rank: &[char], exponent: f64) -> Self {
        Self {
            consonants: zipf_weights(consonant_rank, exponent),
            vowels: zipf_weights(vowel_rank, exponent),
        }
    }

    pub fn sample(&self, kind: LetterKind, rng: &mut Rng) -> char {
        let table = match kind {
            LetterKind::Consonant => &self.consonants,
            LetterKind::Vowel => &self.vowels,
        };
        let weights: Vec<f64> = table.iter().map(|e| e.1).collect();
        table[rng::weighted_index(rng, &weights)].0
    }

    pub fn ranking(&self, kind: LetterKind) -> Vec<char> {
        match kind {
            LetterKind::Consonant => self.consonants.iter().map(|e| e.0).collect(),
            LetterKind::Vowel => self.vowels.iter().map(|e| e.0).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SyllablePattern {
    Cvc,
    Ccv,
    Cvcc,
    Cv,
    Vc,
    V,
}

impl SyllablePattern {
    pub const ALL: [SyllablePattern; 6] = [
        SyllablePattern::Cvc,
        SyllablePattern::Ccv,
        SyllablePattern::Cvcc,
        SyllablePattern::Cv,
        SyllablePattern::Vc,
        SyllablePattern::V,
    ];

    pub fn shape(self) -> &'static str {
        match self {
            SyllablePattern::Cvc => "CVC",
            SyllablePattern::Ccv => "CCV",
            SyllablePattern::Cvcc => "CVCC",
            SyllablePattern::Cv => "CV",
            SyllablePattern::Vc => "VC",
            SyllablePattern::V => "V",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Affix {
    pub prefix: String,
    pub suffix: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageSpec {
    pub id: Language,
    pub letters: LetterTable,
    pub affixes: BTreeMap<SymbolCategory, Affix>,
    pub syllable_patterns: Vec<SyllablePattern>,
}

impl LanguageSpec {
    pub fn affix(&self, cat: SymbolCategory) -> Option<&Affix> {
        self.affixes.get(&cat)
    }

    /// `prefix || cognate || suffix` for the symbol's category.
    pub fn attach_affixes(&self, cat: SymbolCategory, cognate: &str) -> String {
        match self.affixes.get(&cat) {
            Some(a) => format!("{}{}{}", a.prefix, cognate, a.suffix),
            None => cognate.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconConfig {
    pub zipf_exponent: f64,
    pub min_syllables: usize,
    pub max_syllables: usize,
    pub affixes: bool,
    pub affix_min_len: usize,
    pub affix_max_len: usize,
    pub collision_budget: usize,
}

impl Default for LexiconConfig {
    fn default() -> Self {
        Self {
            zipf_exponent: 1.0,
            min_syllables: 2,
            max_syllables: 3,
            affixes: true,
            affix_min_len: 2,
            affix_max_len: 3,
            collision_budget: 64,
        }
    }
}

impl LexiconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_syllables == 0 || self.min_syllables > self.max_syllables {
            return Err(Error::config("min_syllables", "need 1 <= min <= max"));
        }
        if self.affixes && (self.affix_min_len == 0 || self.affix_min_len > self.affix_max_len) {
            return Err(Error::config("affix_min_len", "need 1 <= min <= max"));
        }
        if !(self.zipf_exponent >= 0.0) {
            return Err(Error::config("zipf_exponent", "must be non-negative"));
        }
        Ok(())
    }
}

/// Proto letter table plus the two language specifications derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguagePair {
    pub proto: LetterTable,
    pub a: LanguageSpec,
    pub b: LanguageSpec,
    pub min_syllables: usize,
    pub max_syllables: usize,
}

impl LanguagePair {
    pub fn spec(&self, lang: Language) -> &LanguageSpec {
        match lang {
            Language::A => &self.a,
            Language::B => &self.b,
        }
    }
}

/// Shuffle a `d` fraction of the ranking positions among themselves.
fn perturb_ranking(rank: &[char], d: f64, rng: &mut Rng) -> Vec<char> {
    let m = (d * rank.len() as f64).round() as usize;
    let mut out = rank.to_vec();
    if m < 2 {
        return out;
    }
    let mut positions: Vec<usize> = (0..rank.len()).collect();
    positions.shuffle(rng);
    positions.truncate(m);
    let mut letters: Vec<char> = positions.iter().map(|&p| rank[p]).collect();
    letters.shuffle(rng);
    for (p, c) in positions.into_iter().zip(letters) {
        out[p] = c;
    }
    out
}

fn random_affix(letters: &LetterTable, len: usize, rng: &mut Rng) -> String {
    let start_vowel = rng.gen_bool(0.5);
    (0..len)
        .map(|i| {
            let vowel = (i % 2 == 0) == start_vowel;
            letters.sample(
                if vowel { LetterKind::Vowel } else { LetterKind::Consonant },
                rng,
            )
        })
        .collect()
}

fn make_affixes(cfg: &LexiconConfig, letters: &LetterTable, rng: &mut Rng) -> BTreeMap<SymbolCategory, Affix> {
    let mut out = BTreeMap::new();
    if !cfg.affixes {
        return out;
    }
    let draw = |taken: &HashSet<String>, rng: &mut Rng| loop {
        let len = rng.gen_range(cfg.affix_min_len..=cfg.affix_max_len);
        let a = random_affix(letters, len, rng);
        if !taken.contains(&a) {
            return a;
        }
    };
    let mut prefixes = HashSet::new();
    for cat in [SymbolCategory::Subject, SymbolCategory::Object] {
        let p = draw(&prefixes, rng);
        prefixes.insert(p.clone());
        out.insert(cat, Affix { prefix: p, suffix: String::new() });
    }
    let mut suffixes = HashSet::new();
    for cat in [SymbolCategory::DescProperty, SymbolCategory::RelProperty] {
        let s = draw(&suffixes, rng);
        suffixes.insert(s.clone());
        out.insert(cat, Affix { prefix: String::new(), suffix: s });
    }
    out
}

/// Build the proto letter table and both language specs. Language A keeps the
/// proto ranking; B's ranking is perturbed in proportion to `d`.
pub fn language_pair(cfg: &LexiconConfig, d: f64, seed: u64) -> Result<LanguagePair> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::config("d", "lexical distance must lie in [0, 1]"));
    }
    let mut rng = rng::stream(seed, "lexicon.proto", &[]);
    let mut cons = CONSONANTS.to_vec();
    let mut vows = VOWELS.to_vec();
    cons.shuffle(&mut rng);
    vows.shuffle(&mut rng);
    let proto = LetterTable::zipf(&cons, &vows, cfg.zipf_exponent);

    let mut rng_b = rng::stream(seed, "lexicon.rank_b", &[]);
    let b_table = LetterTable::zipf(
        &perturb_ranking(&cons, d, &mut rng_b),
        &perturb_ranking(&vows, d, &mut rng_b),
        cfg.zipf_exponent,
    );
    let spec = |id: Language, letters: LetterTable| {
        let mut rng = rng::stream(seed, "lexicon.affix", &[id.index() as u64]);
        LanguageSpec {
            id,
            affixes: make_affixes(cfg, &letters, &mut rng),
            letters,
            syllable_patterns: SyllablePattern::ALL.to_vec(),
        }
    };
    Ok(LanguagePair {
        a: spec(Language::A, proto.clone()),
        b: spec(Language::B, b_table),
        proto,
        min_syllables: cfg.min_syllables,
        max_syllables: cfg.max_syllables,
    })
}

/// Stem plus the syllable patterns it was built from.
pub fn generate_stem_parts(
    letters: &LetterTable,
    patterns: &[SyllablePattern],
    syllables: (usize, usize),
    rng: &mut Rng,
) -> (String, Vec<SyllablePattern>) {
    let n = rng.gen_range(syllables.0..=syllables.1);
    let mut used = Vec::with_capacity(n);
    let mut stem = String::new();
    for _ in 0..n {
        let p = *patterns.choose(rng).expect("at least one syllable pattern");
        for ch in p.shape().chars() {
            let kind = if ch == 'C' { LetterKind::Consonant } else { LetterKind::Vowel };
            stem.push(letters.sample(kind, rng));
        }
        used.push(p);
    }
    (stem, used)
}

pub fn generate_stem(pair: &LanguagePair, seed: u64) -> String {
    let mut rng = rng::stream(seed, "lexicon.stem", &[]);
    generate_stem_parts(
        &pair.proto,
        &pair.a.syllable_patterns,
        (pair.min_syllables, pair.max_syllables),
        &mut rng,
    )
    .0
}

/// Number of edit operations applied at distance `d`.
pub fn edit_count(d: f64, len: usize) -> usize {
    ((d * len as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Apply `ceil(d * len)` random substitutions, insertions, and deletions
/// (equal odds) with replacement letters drawn from the language's table.
pub fn derive_cognate_with(stem: &str, lang: &LanguageSpec, d: f64, rng: &mut Rng) -> String {
    let mut chars: Vec<char> = stem.chars().collect();
    for _ in 0..edit_count(d, chars.len()) {
        let mut op = rng.gen_range(0..3u8);
        if op == 2 && chars.len() <= 1 {
            op = 0;
        }
        if chars.is_empty() {
            op = 1;
        }
        match op {
            0 => {
                let i = rng.gen_range(0..chars.len());
                let kind = letter_kind(chars[i]).unwrap_or(LetterKind::Consonant);
                chars[i] = lang.letters.sample(kind, rng);
            }
            1 => {
                let i = rng.gen_range(0..=chars.len());
                let kind = if rng.gen_bool(0.5) { LetterKind::Vowel } else { LetterKind::Consonant };
                let c = lang.letters.sample(kind, rng);
                chars.insert(i, c);
            }
            _ => {
                let i = rng.gen_range(0..chars.len());
                chars.remove(i);
            }
        }
    }
    chars.into_iter().collect()
}

pub fn derive_cognate(stem: &str, lang: &LanguageSpec, d: f64, seed: u64) -> String {
    let mut rng = rng::stream(seed, "lexicon.cognate", &[lang.id.index() as u64]);
    derive_cognate_with(stem, lang, d, &mut rng)
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein distance divided by the longer length (0 for two empty strings).
pub fn normalized_levenshtein(a: &str, b: &str) -> f64 {
    let n = a.chars().count().max(b.chars().count());
    if n == 0 {
        0.0
    } else {
        levenshtein(a, b) as f64 / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexEntry {
    pub symbol: SymbolId,
    pub stem: String,
    pub words: [String; 2],
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    d: f64,
    seed: u64,
    entries: Vec<LexEntry>,
    index: HashMap<SymbolId, usize>,
    inverse: [HashMap<String, SymbolId>; 2],
}

impl PartialEq for Lexicon {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d && self.seed == other.seed && self.entries == other.entries
    }
}

fn symbol_key(s: SymbolId) -> u64 {
    ((s.category as u64) << 32) | u64::from(s.index)
}

pub fn build_lexicon(vocab: &[SymbolId], pair: &LanguagePair, d: f64, seed: u64, budget: usize) -> Result<Lexicon> {
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::config("d", "lexical distance must lie in [0, 1]"));
    }
    let mut used: [HashSet<String>; 2] = Default::default();
    let mut entries = Vec::with_capacity(vocab.len());
    for &sym in vocab {
        if sym.category.is_structural() {
            return Err(Error::Lexicon(format!("structural symbol {sym} has a fixed spelling")));
        }
        let key = symbol_key(sym);
        let mut placed = None;
        for attempt in 0..budget.max(1) as u64 {
            let mut rng = rng::stream(seed, "lexicon.stem", &[key, attempt]);
            let (stem, _) = generate_stem_parts(
                &pair.proto,
                &pair.a.syllable_patterns,
                (pair.min_syllables, pair.max_syllables),
                &mut rng,
            );
            let words = Language::BOTH.map(|lang| {
                let spec = pair.spec(lang);
                let mut rng = rng::stream(seed, "lexicon.cognate", &[key, attempt, lang.index() as u64]);
                let cognate = derive_cognate_with(&stem, spec, d, &mut rng);
                spec.attach_affixes(sym.category, &cognate)
            });
            if words.iter().zip(&used).all(|(w, u)| !w.is_empty() && !u.contains(w)) {
                placed = Some((stem, words));
                break;
            }
        }
        let (stem, words) = placed.ok_or_else(|| {
            Error::Lexicon(format!("no unique realization for {sym} within {budget} attempts"))
        })?;
        for (w, u) in words.iter().zip(used.iter_mut()) {
            u.insert(w.clone());
        }
        entries.push(LexEntry { symbol: sym, stem, words });
    }
    Lexicon::from_entries(d, seed, entries)
}

impl Lexicon {
    pub fn from_entries(d: f64, seed: u64, entries: Vec<LexEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        let mut inverse: [HashMap<String, SymbolId>; 2] = Default::default();
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.symbol, i).is_some() {
                return Err(Error::Lexicon(format!("duplicate symbol {}", e.symbol)));
            }
            for (w, inv) in e.words.iter().zip(inverse.iter_mut()) {
                if w.is_empty() || w.contains(char::is_whitespace) {
                    return Err(Error::Lexicon(format!("bad word `{w}` for {}", e.symbol)));
                }
                if SymbolId::from_structural_text(w).is_some() {
                    return Err(Error::Lexicon(format!("`{w}` shadows a structural token")));
                }
                if let Some(prev) = inv.insert(w.clone(), e.symbol) {
                    return Err(Error::Lexicon(format!(
                        "`{w}` realizes both {prev} and {}",
                        e.symbol
                    )));
                }
            }
        }
        Ok(Self {
            d,
            seed,
            entries,
            index,
            inverse,
        })
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entries(&self) -> &[LexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stem(&self, sym: SymbolId) -> Option<&str> {
        self.index.get(&sym).map(|&i| self.entries[i].stem.as_str())
    }

    pub fn surface(&self, sym: SymbolId, lang: Language) -> Result<&str> {
        if let Some(t) = sym.structural_text() {
            return Ok(t);
        }
        self.index
            .get(&sym)
            .map(|&i| self.entries[i].words[lang.index()].as_str())
            .ok_or(Error::MissingRealization(sym))
    }

    /// Symbol realized by `word` in `lang`, including structural tokens.
    pub fn invert(&self, word: &str, lang: Language) -> Option<SymbolId> {
        SymbolId::from_structural_text(word).or_else(|| self.inverse[lang.index()].get(word).copied())
    }

    pub fn words(&self, lang: Language) -> impl Iterator<Item = &str> {
        self.entries.iter().map(move |e| e.words[lang.index()].as_str())
    }

    pub fn realize(&self, symbols: &[SymbolId], lang: Language) -> Result<String> {
        let words = symbols
            .iter()
            .map(|&s| self.surface(s, lang))
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }

    /// Word-wise inversion of realized text; `None` if any word is unknown.
    pub fn invert_text(&self, text: &str, lang: Language) -> Option<Vec<SymbolId>> {
        text.split_whitespace().map(|w| self.invert(w, lang)).collect()
    }

    /// Mean normalized edit distance between paired A and B words.
    pub fn measure_lexical_similarity(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .entries
            .iter()
            .map(|e| normalized_levenshtein(&e.words[0], &e.words[1]))
            .sum();
        total / self.entries.len() as f64
    }

    pub fn mean_word_length(&self, lang: Language) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        let total: usize = self.words(lang).map(|w| w.chars().count()).sum();
        total as f64 / self.entries.len() as f64
    }

    pub fn to_manifest(&self) -> String {
        let mut out = format!(
            "# lexicon v1\n# d = {}\n# seed = {}\nsymbol\tcategory\tstem\tword_A\tword_B\n",
            self.d, self.seed
        );
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.symbol,
                e.symbol.category.tag(),
                e.stem,
                e.words[0],
                e.words[1]
            ));
        }
        out
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let err = |r: String| Error::parse("lexicon manifest", r);
        let mut d = None;
        let mut seed = None;
        let mut entries = Vec::new();
        let mut header_seen = false;
        for line in text.lines() {
            if let Some(kv) = line.strip_prefix('#') {
                if let Some((k, v)) = kv.split_once('=') {
                    match k.trim() {
                        "d" => d = Some(v.trim().parse::<f64>().map_err(|e| err(e.to_string()))?),
                        "seed" => seed = Some(v.trim().parse::<u64>().map_err(|e| err(e.to_string()))?),
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            if !header_seen {
                header_seen = true;
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(err(format!("expected 5 columns, got {}", cols.len())));
            }
            let symbol: SymbolId = cols[0].parse()?;
            entries.push(LexEntry {
                symbol,
                stem: cols[2].to_string(),
                words: [cols[3].to_string(), cols[4].to_string()],
            });
        }
        Lexicon::from_entries(
            d.ok_or_else(|| err("missing d".into()))?,
            seed.ok_or_else(|| err("missing seed".into()))?,
            entries,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(d: f64, affixes: bool) -> LanguagePair {
        let cfg = LexiconConfig {
            affixes,
            ..LexiconConfig::default()
        };
        language_pair(&cfg, d, 21).unwrap()
    }

    fn vocab(n: u32) -> Vec<SymbolId> {
        (0..n).map(SymbolId::desc_property).chain((0..n).map(SymbolId::subject)).collect()
    }

    #[test]
    fn letter_tables_are_normalized() {
        let p = pair(0.5, true);
        for t in [&p.proto, &p.a.letters, &p.b.letters] {
            let c: f64 = t.consonants.iter().map(|e| e.1).sum();
            let v: f64 = t.vowels.iter().map(|e| e.1).sum();
            assert!((c - 1.0).abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
        }
        assert_eq!(p.a.letters, p.proto);
        assert_ne!(p.b.letters.ranking(LetterKind::Consonant), p.a.letters.ranking(LetterKind::Consonant));
        assert_eq!(pair(0.0, true).b.letters, pair(0.0, true).a.letters);
    }

    #[test]
    fn stems_are_deterministic() {
        let p = pair(0.2, true);
        assert_eq!(generate_stem(&p, 5), generate_stem(&p, 5));
    }

    #[test]
    fn zero_distance_is_identity() {
        let p = pair(0.3, true);
        assert_eq!(derive_cognate("caqujna", &p.a, 0.0, 1), "caqujna");
        assert_eq!(derive_cognate("caqujna", &p.b, 0.0, 99), "caqujna");
    }

    #[test]
    fn edit_count_is_ceiling() {
        assert_eq!(edit_count(0.0, 7), 0);
        assert_eq!(edit_count(0.1, 7), 1);
        assert_eq!(edit_count(0.2, 5), 1);
        assert_eq!(edit_count(1.0, 7), 7);
    }

    #[test]
    fn running_example_words() {
        // a single deletion of the stem "caqujna" plus A's prefix "naw";
        // B keeps the stem intact behind prefix "ag"
        let mut p = pair(0.1, true);
        p.a.affixes.insert(SymbolCategory::Subject, Affix { prefix: "naw".into(), suffix: String::new() });
        p.b.affixes.insert(SymbolCategory::Subject, Affix { prefix: "ag".into(), suffix: String::new() });
        let deleted = (0..10_000u64)
            .map(|s| derive_cognate("caqujna", &p.a, 0.1, s))
            .find(|c| c == "caqjna")
            .expect("a single deletion of `u` is reachable");
        assert_eq!(p.a.attach_affixes(SymbolCategory::Subject, &deleted), "nawcaqjna");
        let intact = derive_cognate("caqujna", &p.b, 0.0, 0);
        assert_eq!(p.b.attach_affixes(SymbolCategory::Subject, &intact), "agcaqujna");
    }

    #[test]
    fn affix_free_zero_distance_languages_coincide() {
        let p = pair(0.0, false);
        let lex = build_lexicon(&vocab(200), &p, 0.0, 4, 64).unwrap();
        for e in lex.entries() {
            assert_eq!(e.words[0], e.words[1]);
        }
        assert_eq!(lex.measure_lexical_similarity(), 0.0);
    }

    #[test]
    fn surface_forms_are_unique_and_invertible() {
        let p = pair(0.3, true);
        let lex = build_lexicon(&vocab(300), &p, 0.3, 8, 64).unwrap();
        for lang in Language::BOTH {
            let set: HashSet<&str> = lex.words(lang).collect();
            assert_eq!(set.len(), lex.len());
            for e in lex.entries() {
                assert_eq!(lex.invert(&e.words[lang.index()], lang), Some(e.symbol));
            }
        }
    }

    #[test]
    fn realize_examples() {
        let p = pair(0.25, true);
        let lex = build_lexicon(&vocab(10), &p, 0.25, 2, 64).unwrap();
        assert_eq!(lex.realize(&[], Language::A).unwrap(), "");
        let s = SymbolId::subject(3);
        assert_eq!(lex.realize(&[s], Language::B).unwrap(), lex.surface(s, Language::B).unwrap());
        let seq = vec![SymbolId::PHRASE, s, SymbolId::desc_property(1), SymbolId::END];
        let text = lex.realize(&seq, Language::A).unwrap();
        assert!(text.starts_with("[P] ") && text.ends_with(" <eos>"));
        assert_eq!(lex.invert_text(&text, Language::A).unwrap(), seq);
        let missing = lex.realize(&[SymbolId::rel_property(0)], Language::A);
        assert!(matches!(missing, Err(Error::MissingRealization(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let p = pair(0.4, true);
        let lex = build_lexicon(&vocab(50), &p, 0.4, 13, 64).unwrap();
        let back = Lexicon::from_manifest(&lex.to_manifest()).unwrap();
        assert_eq!(lex, back);
    }

    #[test]
    fn levenshtein_basics() {
        assert_eq!(levenshtein("", ""), 0);
        assert_eq!(levenshtein("caqujna", "caqjna"), 1);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(normalized_levenshtein("ab", "ba"), normalized_levenshtein("ba", "ab"));
    }

    #[test]
    fn out_of_range_distance_is_rejected() {
        assert!(language_pair(&LexiconConfig::default(), 1.5, 0).is_err());
    }
}
