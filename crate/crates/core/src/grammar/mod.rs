//! Probabilistic production grammar over symbol categories.
//!
//! The default rule table is the published one, including the dead `S`
//! recursion (weight 0.0). Sampling draws a category template from the rules and
//! then fills every slot with a concrete symbol, re-drawing the whole filling
//! until the ontology's validity relation holds. Recognition is an Earley
//! parse over the category sequence, ignoring probabilities.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::ontology::{Ontology, SymbolCategory, SymbolId};
use crate::rng::{self, Rng};

mod exact;

pub const DEFAULT_RULES: &str = "\
S     -> Ph NP VP EndOfSeq [1.0]
      | Ph NP VP SepSeq S  [0.0]

NP    -> subjectID         [0.8]
      | NP Conj NP         [0.2]

VP    -> descPreP descV    [0.4]
      | relV relPreP relNP [0.4]
      | VP Conj VP         [0.2]

relNP -> objectID          [0.7]
      | objectID Conj relNP[0.3]

Ph        -> '[P]'      [1.0]
subjectID -> 'subjectID'[1.0]
objectID  -> 'objectID' [1.0]
relV      -> 'relV'     [1.0]
descV     -> 'descV'    [1.0]
descPreP  -> 'descPreP' [1.0]
relPreP   -> 'relPreP'  [1.0]
Conj      -> 'conj'     [1.0]
SepSeq    -> '<sep>'    [1.0]
EndOfSeq  -> '<eos>'    [1.0]
";

pub const DEFAULT_MAX_DEPTH: usize = 12;
pub const DEFAULT_REJECTION_BUDGET: usize = 1000;

/// Terminal spelling in rule files for each category.
pub fn terminal_name(cat: SymbolCategory) -> &'static str {
    match cat {
        SymbolCategory::Phrase => "[P]",
        SymbolCategory::Subject => "subjectID",
        SymbolCategory::Object => "objectID",
        SymbolCategory::RelProperty => "relV",
        SymbolCategory::DescProperty => "descV",
        SymbolCategory::DescPreposition => "descPreP",
        SymbolCategory::RelPreposition => "relPreP",
        SymbolCategory::Conjunction => "conj",
        SymbolCategory::Separator => "<sep>",
        SymbolCategory::EndOfSeq => "<eos>",
    }
}

fn terminal_category(name: &str) -> Option<SymbolCategory> {
    use SymbolCategory::*;
    [
        Phrase,
        Subject,
        Object,
        RelProperty,
        DescProperty,
        DescPreposition,
        RelPreposition,
        Conjunction,
        Separator,
        EndOfSeq,
    ]
    .into_iter()
    .find(|&c| terminal_name(c) == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GSym {
    Nt(usize),
    T(SymbolCategory),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub lhs: usize,
    pub rhs: Vec<GSym>,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pcsg {
    nonterminals: Vec<String>,
    rules: Vec<Rule>,
    alts: Vec<Vec<usize>>,
    start: usize,
    /// Minimum derivation height per nonterminal, used by the depth bound.
    min_height: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolicSentence {
    pub symbols: Vec<SymbolId>,
    pub derivation: Vec<usize>,
}

impl SymbolicSentence {
    pub fn categories(&self) -> Vec<SymbolCategory> {
        self.symbols.iter().map(|s| s.category).collect()
    }
}

/// A category template together with the rules that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Derivation {
    pub rules: Vec<usize>,
    pub categories: Vec<SymbolCategory>,
    pub depth: usize,
}

impl Default for Pcsg {
    fn default() -> Self {
        Pcsg::parse(DEFAULT_RULES).expect("built-in grammar parses")
    }
}

impl Pcsg {
    /// Parse `LHS -> RHS [prob]` rules; `| RHS [prob]` continues the previous LHS.
    /// The first LHS is the start symbol.
    pub fn parse(text: &str) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut ids: HashMap<String, usize> = HashMap::new();
        let mut intern = |name: &str, names: &mut Vec<String>| -> usize {
            *ids.entry(name.to_string()).or_insert_with(|| {
                names.push(name.to_string());
                names.len() - 1
            })
        };
        let mut raw: Vec<(usize, Vec<String>, f64)> = Vec::new();
        let mut current: Option<usize> = None;

        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: &str| Error::parse(format!("grammar line {}", lineno + 1), reason);
            let body = if let Some(rest) = line.strip_prefix('|') {
                rest
            } else {
                let (lhs, rest) = line.split_once("->").ok_or_else(|| err("expected `->`"))?;
                let lhs = lhs.trim();
                if lhs.is_empty() || lhs.contains(char::is_whitespace) {
                    return Err(err("bad left-hand side"));
                }
                current = Some(intern(lhs, &mut names));
                rest
            };
            let lhs = current.ok_or_else(|| err("alternative before any rule"))?;
            let open = body.rfind('[').ok_or_else(|| err("missing `[prob]`"))?;
            let close = body.rfind(']').filter(|&c| c > open).ok_or_else(|| err("missing `]`"))?;
            let prob: f64 = body[open + 1..close]
                .trim()
                .parse()
                .map_err(|_| err("probability is not a number"))?;
            let rhs = tokenize_rhs(&body[..open]).map_err(|r| err(&r))?;
            if rhs.is_empty() {
                return Err(err("empty right-hand side"));
            }
            raw.push((lhs, rhs, prob));
        }
        if raw.is_empty() {
            return Err(Error::parse("grammar", "no rules"));
        }

        let mut rules = Vec::with_capacity(raw.len());
        for (lhs, rhs, prob) in raw {
            let rhs = rhs
                .into_iter()
                .map(|tok| {
                    if let Some(t) = tok.strip_prefix('\'').and_then(|t| t.strip_suffix('\'')) {
                        terminal_category(t)
                            .map(GSym::T)
                            .ok_or_else(|| Error::parse("grammar", format!("unknown terminal '{t}'")))
                    } else {
                        Ok(GSym::Nt(intern(&tok, &mut names)))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rules.push(Rule { lhs, rhs, prob });
        }
        Pcsg::from_rules(names, rules, 0)
    }

    fn from_rules(nonterminals: Vec<String>, rules: Vec<Rule>, start: usize) -> Result<Self> {
        let mut alts = vec![Vec::new(); nonterminals.len()];
        for (i, r) in rules.iter().enumerate() {
            if !(0.0..=1.0).contains(&r.prob) {
                return Err(Error::Grammar(format!("rule {i} has probability {}", r.prob)));
            }
            alts[r.lhs].push(i);
        }
        for (nt, a) in alts.iter().enumerate() {
            if a.is_empty() {
                return Err(Error::Grammar(format!(
                    "nonterminal `{}` has no productions",
                    nonterminals[nt]
                )));
            }
            let total: f64 = a.iter().map(|&i| rules[i].prob).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Grammar(format!(
                    "probabilities for `{}` sum to {total}",
                    nonterminals[nt]
                )));
            }
        }
        let min_height = min_heights(&rules, &alts)?;
        Ok(Pcsg {
            nonterminals,
            rules,
            alts,
            start,
            min_height,
        })
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn nonterminal(&self, id: usize) -> &str {
        &self.nonterminals[id]
    }

    pub fn nonterminals(&self) -> &[String] {
        &self.nonterminals
    }

    pub fn alternatives(&self, nt: usize) -> &[usize] {
        &self.alts[nt]
    }

    pub fn start(&self) -> usize {
        self.start
    }

    /// Replace a rule's probability, e.g. to switch on the multi-sentence rule.
    pub fn with_rule_prob(&self, rule: usize, prob: f64) -> Result<Self> {
        let lhs = self.rules[rule].lhs;
        let others: f64 = self.alts[lhs]
            .iter()
            .filter(|&&i| i != rule)
            .map(|&i| self.rules[i].prob)
            .sum();
        let mut rules = self.rules.clone();
        rules[rule].prob = prob;
        for &i in &self.alts[lhs] {
            if i != rule {
                rules[i].prob = if others > 0.0 {
                    self.rules[i].prob / others * (1.0 - prob)
                } else {
                    (1.0 - prob) / (self.alts[lhs].len() - 1) as f64
                };
            }
        }
        Pcsg::from_rules(self.nonterminals.clone(), rules, self.start)
    }

    /// Render the grammar back into rule-file syntax.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (nt, alts) in self.alts.iter().enumerate() {
            for (k, &ri) in alts.iter().enumerate() {
                let rhs: Vec<String> = self.rules[ri]
                    .rhs
                    .iter()
                    .map(|s| match s {
                        GSym::Nt(n) => self.nonterminals[*n].clone(),
                        GSym::T(c) => format!("'{}'", terminal_name(*c)),
                    })
                    .collect();
                let head = if k == 0 {
                    format!("{} ->", self.nonterminals[nt])
                } else {
                    "  |".to_string()
                };
                let _ = writeln!(out, "{head} {} [{}]", rhs.join(" "), self.rules[ri].prob);
            }
        }
        out
    }

    /// Expand from the start symbol, letting `choose` pick among the
    /// alternatives allowed by the depth bound (rule index, renormalized weight).
    pub fn derive_with<F>(&self, max_depth: usize, mut choose: F) -> Derivation
    where
        F: FnMut(usize, &[(usize, f64)]) -> usize,
    {
        let mut rules = Vec::new();
        let mut categories = Vec::new();
        let mut depth = 0;
        let mut stack = vec![(GSym::Nt(self.start), 1usize)];
        let mut allowed = Vec::new();
        while let Some((sym, d)) = stack.pop() {
            match sym {
                GSym::T(c) => categories.push(c),
                GSym::Nt(nt) => {
                    depth = depth.max(d);
                    allowed.clear();
                    let fits = |ri: usize| d + self.rule_height(ri) - 1 <= max_depth;
                    allowed.extend(
                        self.alts[nt]
                            .iter()
                            .filter(|&&ri| fits(ri))
                            .map(|&ri| (ri, self.rules[ri].prob)),
                    );
                    if allowed.is_empty() {
                        // bound infeasible: take the shallowest alternative
                        let &ri = self.alts[nt]
                            .iter()
                            .min_by_key(|&&ri| self.rule_height(ri))
                            .expect("nonterminal has productions");
                        allowed.push((ri, 1.0));
                    }
                    let total: f64 = allowed.iter().map(|a| a.1).sum();
                    if total > 0.0 {
                        allowed.iter_mut().for_each(|a| a.1 /= total);
                    } else {
                        let n = allowed.len() as f64;
                        allowed.iter_mut().for_each(|a| a.1 = 1.0 / n);
                    }
                    let ri = choose(nt, &allowed);
                    rules.push(ri);
                    for s in self.rules[ri].rhs.iter().rev() {
                        stack.push((*s, d + 1));
                    }
                }
            }
        }
        Derivation {
            rules,
            categories,
            depth,
        }
    }

    pub fn sample_derivation(&self, rng: &mut Rng, max_depth: usize) -> Derivation {
        self.derive_with(max_depth, |_, allowed| {
            let weights: Vec<f64> = allowed.iter().map(|a| a.1).collect();
            allowed[rng::weighted_index(rng, &weights)].0
        })
    }

    /// Derivation that always takes the most probable alternative (first on ties).
    pub fn most_probable_derivation(&self, max_depth: usize) -> Derivation {
        self.derive_with(max_depth, |_, allowed| {
            let mut best = allowed[0];
            for &a in &allowed[1..] {
                if a.1 > best.1 {
                    best = a;
                }
            }
            best.0
        })
    }

    fn rule_height(&self, ri: usize) -> usize {
        1 + self.rules[ri]
            .rhs
            .iter()
            .map(|s| match s {
                GSym::Nt(n) => self.min_height[*n],
                GSym::T(_) => 0,
            })
            .max()
            .unwrap_or(0)
    }

    /// Earley recognition of a category sequence from the start symbol.
    pub fn is_grammatical(&self, categories: &[SymbolCategory]) -> bool {
        // item = (rule, dot, origin)
        type Item = (usize, usize, usize);
        let n = categories.len();
        let mut chart: Vec<Vec<Item>> = vec![Vec::new(); n + 1];
        let mut seen: Vec<HashSet<Item>> = vec![HashSet::new(); n + 1];
        let add = |chart: &mut Vec<Vec<Item>>, seen: &mut Vec<HashSet<Item>>, k: usize, it: Item| {
            if seen[k].insert(it) {
                chart[k].push(it);
            }
        };
        for &ri in &self.alts[self.start] {
            add(&mut chart, &mut seen, 0, (ri, 0, 0));
        }
        for k in 0..=n {
            let mut i = 0;
            while i < chart[k].len() {
                let (ri, dot, origin) = chart[k][i];
                let rule = &self.rules[ri];
                match rule.rhs.get(dot) {
                    Some(GSym::Nt(nt)) => {
                        for &alt in &self.alts[*nt] {
                            add(&mut chart, &mut seen, k, (alt, 0, k));
                        }
                    }
                    Some(GSym::T(c)) => {
                        if k < n && categories[k] == *c {
                            add(&mut chart, &mut seen, k + 1, (ri, dot + 1, origin));
                        }
                    }
                    None => {
                        let lhs = rule.lhs;
                        let mut j = 0;
                        while j < chart[origin].len() {
                            let (pr, pd, po) = chart[origin][j];
                            if self.rules[pr].rhs.get(pd) == Some(&GSym::Nt(lhs)) {
                                add(&mut chart, &mut seen, k, (pr, pd + 1, po));
                            }
                            j += 1;
                        }
                    }
                }
                i += 1;
            }
        }
        chart[n].iter().any(|&(ri, dot, origin)| {
            origin == 0 && self.rules[ri].lhs == self.start && dot == self.rules[ri].rhs.len()
        })
    }
}

fn tokenize_rhs(s: &str) -> std::result::Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut chars = s.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '\'' {
            chars.next();
            let mut t = String::from("'");
            loop {
                match chars.next() {
                    Some('\'') => break,
                    Some(ch) => t.push(ch),
                    None => return Err("unterminated terminal".into()),
                }
            }
            t.push('\'');
            out.push(t);
        } else {
            let mut t = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() || ch == '\'' {
                    break;
                }
                t.push(ch);
                chars.next();
            }
            out.push(t);
        }
    }
    Ok(out)
}

fn min_heights(rules: &[Rule], alts: &[Vec<usize>]) -> Result<Vec<usize>> {
    let mut h = vec![usize::MAX; alts.len()];
    loop {
        let mut changed = false;
        for r in rules {
            let mut inner = 0usize;
            let mut ok = true;
            for s in &r.rhs {
                if let GSym::Nt(n) = s {
                    if h[*n] == usize::MAX {
                        ok = false;
                        break;
                    }
                    inner = inner.max(h[*n]);
                }
            }
            if ok && inner + 1 < h[r.lhs] {
                h[r.lhs] = inner + 1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if let Some(nt) = h.iter().position(|&x| x == usize::MAX) {
        return Err(Error::Grammar(format!("nonterminal {nt} never terminates")));
    }
    Ok(h)
}

/// One semantic group: every subject of its sentence must be compatible with it.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Clause {
    Desc(SymbolId),
    Rel(SymbolId, Vec<SymbolId>),
}

/// Count (subject, property) and (subject, relation, object) groups that
/// violate the ontology. Sentences joined by `<sep>` are checked separately.
fn count_violations(symbols: &[SymbolId], o: &Ontology) -> Result<usize> {
    let mut violations = 0;
    for sentence in symbols.split(|s| s.category == SymbolCategory::Separator) {
        let mut subjects = Vec::new();
        let mut clauses: Vec<Clause> = Vec::new();
        for &s in sentence {
            match s.category {
                SymbolCategory::Subject => subjects.push(s),
                SymbolCategory::DescProperty => clauses.push(Clause::Desc(s)),
                SymbolCategory::RelProperty => clauses.push(Clause::Rel(s, Vec::new())),
                SymbolCategory::Object => match clauses.last_mut() {
                    Some(Clause::Rel(_, objs)) => objs.push(s),
                    _ => return Err(Error::Contract(format!("object {s} outside a relation"))),
                },
                _ => {}
            }
        }
        for &subj in &subjects {
            for clause in &clauses {
                match clause {
                    Clause::Desc(p) => violations += usize::from(!o.is_desc_valid(subj, *p)?),
                    Clause::Rel(r, objs) => {
                        for &obj in objs {
                            violations += usize::from(!o.is_rel_valid(subj, *r, obj)?);
                        }
                    }
                }
            }
        }
    }
    Ok(violations)
}

/// Number of semantic groups in a grammatical sentence that violate the ontology.
pub fn type_violations(g: &Pcsg, symbols: &[SymbolId], o: &Ontology) -> Result<usize> {
    let cats: Vec<SymbolCategory> = symbols.iter().map(|s| s.category).collect();
    if !g.is_grammatical(&cats) {
        return Err(Error::Contract("type_violations needs a grammatical sentence".into()));
    }
    count_violations(symbols, o)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub max_depth: usize,
    pub rejection_budget: usize,
    /// After the rejection budget is spent, draw from the same distribution
    /// (uniform over valid fillings) by exact enumeration over subject classes.
    pub exact_fallback: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
            rejection_budget: DEFAULT_REJECTION_BUDGET,
            exact_fallback: true,
        }
    }
}

/// Fill a category template with concrete symbols, re-drawing the whole
/// filling until every semantic group is valid.
pub fn fill_template(
    categories: &[SymbolCategory],
    o: &Ontology,
    rng: &mut Rng,
    budget: usize,
) -> Result<Vec<SymbolId>> {
    let template = || {
        categories
            .iter()
            .map(|&c| terminal_name(c))
            .collect::<Vec<_>>()
            .join(" ")
    };
    if categories.iter().any(|&c| o.count(c) == 0) {
        return Err(Error::Generation {
            template: template(),
            tries: 0,
        });
    }
    let mut symbols = Vec::with_capacity(categories.len());
    for _ in 0..budget {
        symbols.clear();
        for &c in categories {
            let idx = if c.is_structural() {
                0
            } else {
                rng.gen_range(0..o.count(c) as u32)
            };
            symbols.push(SymbolId::new(c, idx));
        }
        if count_violations(&symbols, o)? == 0 {
            return Ok(symbols);
        }
    }
    Err(Error::Generation {
        template: template(),
        tries: budget,
    })
}

pub fn sample_symbolic_sentence_with(
    g: &Pcsg,
    o: &Ontology,
    rng: &mut Rng,
    cfg: SamplerConfig,
) -> Result<SymbolicSentence> {
    let d = g.sample_derivation(rng, cfg.max_depth);
    let symbols = match fill_template(&d.categories, o, rng, cfg.rejection_budget) {
        Err(Error::Generation { tries, .. }) if cfg.exact_fallback && tries > 0 => {
            exact::fill(&d.categories, o, rng)?
        }
        other => other?,
    };
    Ok(SymbolicSentence {
        symbols,
        derivation: d.rules,
    })
}

pub fn sample_symbolic_sentence(g: &Pcsg, o: &Ontology, seed: u64) -> Result<SymbolicSentence> {
    let mut rng = rng::stream(seed, "grammar.sentence", &[]);
    sample_symbolic_sentence_with(g, o, &mut rng, SamplerConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::{build_ontology, OntologyConfig};
    use SymbolCategory::*;

    fn ont() -> Ontology {
        build_ontology(&OntologyConfig::default(), 7).unwrap()
    }

    #[test]
    fn default_table_matches_published_rules() {
        let g = Pcsg::default();
        assert_eq!(g.rules().len(), 19);
        assert_eq!(g.nonterminal(g.start()), "S");
        let s_rec = &g.rules()[1];
        assert_eq!(s_rec.prob, 0.0);
        assert_eq!(s_rec.rhs.len(), 5);
        let probs: Vec<f64> = g.rules().iter().map(|r| r.prob).collect();
        assert_eq!(&probs[..9], &[1.0, 0.0, 0.8, 0.2, 0.4, 0.4, 0.2, 0.7, 0.3]);
        assert!(probs[9..].iter().all(|&p| p == 1.0));
    }

    #[test]
    fn rule_file_round_trips_through_text() {
        let g = Pcsg::default();
        let back = Pcsg::parse(&g.to_text()).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn parse_rejects_bad_probabilities() {
        let bad = "S -> A [0.5]\nA -> 'conj' [1.0]\n";
        assert!(matches!(Pcsg::parse(bad), Err(Error::Grammar(_))));
        assert!(Pcsg::parse("S -> 'nope' [1.0]").is_err());
        assert!(Pcsg::parse("S -> X [1.0]").is_err());
    }

    #[test]
    fn most_probable_yield() {
        let g = Pcsg::default();
        let d = g.most_probable_derivation(DEFAULT_MAX_DEPTH);
        assert_eq!(d.categories, vec![Phrase, Subject, DescPreposition, DescProperty, EndOfSeq]);
    }

    #[test]
    fn scripted_np_recursion() {
        let g = Pcsg::default();
        let np = g.nonterminals().iter().position(|n| n == "NP").unwrap();
        let mut np_taken = false;
        let d = g.derive_with(DEFAULT_MAX_DEPTH, |nt, allowed| {
            if nt == np && !np_taken {
                np_taken = true;
                return allowed[1].0;
            }
            let mut best = allowed[0];
            for &a in &allowed[1..] {
                if a.1 > best.1 {
                    best = a;
                }
            }
            best.0
        });
        assert_eq!(
            d.categories,
            vec![Phrase, Subject, Conjunction, Subject, DescPreposition, DescProperty, EndOfSeq]
        );
        assert!(g.is_grammatical(&d.categories));
    }

    #[test]
    fn recognizer_examples() {
        let g = Pcsg::default();
        assert!(g.is_grammatical(&[Phrase, Subject, DescPreposition, DescProperty, EndOfSeq]));
        assert!(!g.is_grammatical(&[DescProperty, Subject, Phrase, EndOfSeq]));
        assert!(!g.is_grammatical(&[]));
        assert!(g.is_grammatical(&[
            Phrase,
            Subject,
            RelProperty,
            RelPreposition,
            Object,
            Conjunction,
            Object,
            Conjunction,
            DescPreposition,
            DescProperty,
            EndOfSeq
        ]));
        // multi-sentence form is derivable even though its weight is zero
        assert!(g.is_grammatical(&[
            Phrase,
            Subject,
            DescPreposition,
            DescProperty,
            Separator,
            Phrase,
            Subject,
            DescPreposition,
            DescProperty,
            EndOfSeq
        ]));
        assert!(!g.is_grammatical(&[Phrase, Object, DescPreposition, DescProperty, EndOfSeq]));
    }

    #[test]
    fn depth_bound_is_respected() {
        let g = Pcsg::default();
        let mut rng = rng::stream(1, "t", &[]);
        for max_depth in [3, 4, 6, 12] {
            for _ in 0..500 {
                let d = g.sample_derivation(&mut rng, max_depth);
                assert!(d.depth <= max_depth, "{} > {max_depth}", d.depth);
                assert!(g.is_grammatical(&d.categories));
            }
        }
    }

    #[test]
    fn samples_are_grammatical_and_valid() {
        let g = Pcsg::default();
        let o = ont();
        for seed in 0..300 {
            let s = sample_symbolic_sentence(&g, &o, seed).unwrap();
            assert_eq!(s.symbols.first(), Some(&SymbolId::PHRASE));
            assert_eq!(s.symbols.last(), Some(&SymbolId::END));
            assert!(g.is_grammatical(&s.categories()));
            assert_eq!(type_violations(&g, &s.symbols, &o).unwrap(), 0);
        }
    }

    #[test]
    fn budget_exhaustion_without_fallback_is_an_error() {
        let g = Pcsg::default();
        let o = ont();
        let cfg = SamplerConfig {
            rejection_budget: 1,
            exact_fallback: false,
            ..SamplerConfig::default()
        };
        let mut rng = rng::stream(0, "t", &[]);
        let errs = (0..500)
            .filter(|_| {
                matches!(
                    sample_symbolic_sentence_with(&g, &o, &mut rng, cfg),
                    Err(Error::Generation { tries: 1, .. })
                )
            })
            .count();
        assert!(errs > 0);
    }

    #[test]
    fn derivation_reproduces_yield() {
        let g = Pcsg::default();
        let o = ont();
        for seed in 0..100 {
            let s = sample_symbolic_sentence(&g, &o, seed).unwrap();
            // replay the recorded rules as a leftmost derivation
            let mut script = s.derivation.iter();
            let d = g.derive_with(usize::MAX, |_, _| *script.next().unwrap());
            assert_eq!(d.categories, s.categories());
        }
    }

    #[test]
    fn swapped_property_is_flagged() {
        let g = Pcsg::default();
        let o = ont();
        let s = sample_symbolic_sentence_with(
            &g,
            &o,
            &mut rng::stream(3, "t", &[]),
            SamplerConfig::default(),
        )
        .unwrap();
        let mut syms = vec![SymbolId::PHRASE, SymbolId::subject(0)];
        syms.extend([SymbolId::new(DescPreposition, 0)]);
        let class = o.class_of(0);
        let bad = (0..460).find(|p| !o.desc_valid().contains(&(class, *p))).unwrap();
        let good = o.class_licenses(class).next().unwrap();
        syms.push(SymbolId::desc_property(bad));
        syms.push(SymbolId::END);
        assert_eq!(type_violations(&g, &syms, &o).unwrap(), 1);

        // two clauses, one violated
        let two = vec![
            SymbolId::PHRASE,
            SymbolId::subject(0),
            SymbolId::new(DescPreposition, 0),
            SymbolId::desc_property(good),
            SymbolId::new(Conjunction, 0),
            SymbolId::new(DescPreposition, 0),
            SymbolId::desc_property(bad),
            SymbolId::END,
        ];
        assert_eq!(type_violations(&g, &two, &o).unwrap(), 1);
        assert_eq!(type_violations(&g, &s.symbols, &o).unwrap(), 0);
    }

    #[test]
    fn ungrammatical_input_is_a_contract_error() {
        let g = Pcsg::default();
        let o = ont();
        let r = type_violations(&g, &[SymbolId::END, SymbolId::PHRASE], &o);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn unfillable_template_reports_generation_error() {
        let cfg = OntologyConfig {
            n_entities: 1,
            n_classes: 1,
            n_desc_properties: 1,
            n_desc_values: 1,
            n_rel_properties: 0,
            ..OntologyConfig::default()
        };
        let o = build_ontology(&cfg, 0).unwrap();
        let mut rng = rng::stream(0, "t", &[]);
        let err = fill_template(
            &[Phrase, Subject, RelProperty, RelPreposition, Object, EndOfSeq],
            &o,
            &mut rng,
            10,
        )
        .unwrap_err();
        match err {
            Error::Generation { template, .. } => assert!(template.contains("relV")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn enabling_sentence_recursion_produces_separators() {
        let g = Pcsg::default().with_rule_prob(1, 0.5).unwrap();
        let mut rng = rng::stream(9, "t", &[]);
        let mut saw_sep = false;
        for _ in 0..200 {
            let d = g.sample_derivation(&mut rng, DEFAULT_MAX_DEPTH);
            saw_sep |= d.categories.contains(&Separator);
            assert!(g.is_grammatical(&d.categories));
        }
        assert!(saw_sep);
    }
}
