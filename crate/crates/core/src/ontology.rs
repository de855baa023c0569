//! The shared symbolic layer: entities grouped into classes, descriptive and
//! relative properties, and the validity relation that says which properties
//! may describe which entities.
//!
//! Validity is stored at class level. A descriptive property is valid for an
//! entity when the entity's class licenses it; a relative property is valid for
//! `(subject, object)` when its `(subject class, object class)` pair is licensed.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SymbolCategory {
    Subject,
    Object,
    DescProperty,
    RelProperty,
    DescPreposition,
    RelPreposition,
    Conjunction,
    Phrase,
    Separator,
    EndOfSeq,
}

impl SymbolCategory {
    pub const LEXICAL: [SymbolCategory; 7] = [
        SymbolCategory::Subject,
        SymbolCategory::Object,
        SymbolCategory::DescProperty,
        SymbolCategory::RelProperty,
        SymbolCategory::DescPreposition,
        SymbolCategory::RelPreposition,
        SymbolCategory::Conjunction,
    ];

    /// Structural categories have a single symbol and a fixed spelling shared
    /// by both languages.
    pub fn is_structural(self) -> bool {
        matches!(
            self,
            SymbolCategory::Phrase | SymbolCategory::Separator | SymbolCategory::EndOfSeq
        )
    }

    pub fn tag(self) -> &'static str {
        match self {
            SymbolCategory::Subject => "subj",
            SymbolCategory::Object => "obj",
            SymbolCategory::DescProperty => "dprop",
            SymbolCategory::RelProperty => "rprop",
            SymbolCategory::DescPreposition => "dprep",
            SymbolCategory::RelPreposition => "rprep",
            SymbolCategory::Conjunction => "conj",
            SymbolCategory::Phrase => "phrase",
            SymbolCategory::Separator => "sep",
            SymbolCategory::EndOfSeq => "eos",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        use SymbolCategory::*;
        [
            Subject,
            Object,
            DescProperty,
            RelProperty,
            DescPreposition,
            RelPreposition,
            Conjunction,
            Phrase,
            Separator,
            EndOfSeq,
        ]
        .into_iter()
        .find(|c| c.tag() == tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymbolId {
    pub category: SymbolCategory,
    pub index: u32,
}

impl SymbolId {
    pub const PHRASE: SymbolId = SymbolId::new(SymbolCategory::Phrase, 0);
    pub const SEPARATOR: SymbolId = SymbolId::new(SymbolCategory::Separator, 0);
    pub const END: SymbolId = SymbolId::new(SymbolCategory::EndOfSeq, 0);

    pub const fn new(category: SymbolCategory, index: u32) -> Self {
        Self { category, index }
    }

    pub fn subject(index: u32) -> Self {
        Self::new(SymbolCategory::Subject, index)
    }

    pub fn object(index: u32) -> Self {
        Self::new(SymbolCategory::Object, index)
    }

    pub fn desc_property(index: u32) -> Self {
        Self::new(SymbolCategory::DescProperty, index)
    }

    pub fn rel_property(index: u32) -> Self {
        Self::new(SymbolCategory::RelProperty, index)
    }

    /// Surface spelling of a structural symbol.
    pub fn structural_text(self) -> Option<&'static str> {
        match self.category {
            SymbolCategory::Phrase => Some("[P]"),
            SymbolCategory::Separator => Some("<sep>"),
            SymbolCategory::EndOfSeq => Some("<eos>"),
            _ => None,
        }
    }

    pub fn from_structural_text(text: &str) -> Option<Self> {
        match text {
            "[P]" => Some(Self::PHRASE),
            "<sep>" => Some(Self::SEPARATOR),
            "<eos>" => Some(Self::END),
            _ => None,
        }
    }
}

impl fmt::Display for SymbolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.category.tag(), self.index)
    }
}

impl FromStr for SymbolId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (tag, idx) = s
            .split_once(':')
            .ok_or_else(|| Error::parse("symbol id", format!("missing ':' in `{s}`")))?;
        let category = SymbolCategory::from_tag(tag)
            .ok_or_else(|| Error::parse("symbol id", format!("unknown category `{tag}`")))?;
        let index = idx
            .parse()
            .map_err(|_| Error::parse("symbol id", format!("bad index in `{s}`")))?;
        Ok(SymbolId::new(category, index))
    }
}

impl Serialize for SymbolId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SymbolId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OntologyConfig {
    pub n_entities: usize,
    pub n_classes: usize,
    pub n_desc_properties: usize,
    pub n_desc_values: usize,
    pub n_rel_properties: usize,
    /// Fraction of properties (or class pairs) each class licenses.
    pub license_fraction: f64,
    pub n_desc_prepositions: usize,
    pub n_rel_prepositions: usize,
    pub n_conjunctions: usize,
}

impl Default for OntologyConfig {
    fn default() -> Self {
        Self {
            n_entities: 100,
            n_classes: 10,
            n_desc_properties: 460,
            n_desc_values: 40,
            n_rel_properties: 100,
            license_fraction: 0.5,
            n_desc_prepositions: 1,
            n_rel_prepositions: 1,
            n_conjunctions: 1,
        }
    }
}

impl OntologyConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_entities", self.n_entities),
            ("n_classes", self.n_classes),
            ("n_desc_properties", self.n_desc_properties),
            ("n_desc_values", self.n_desc_values),
            ("n_desc_prepositions", self.n_desc_prepositions),
            ("n_conjunctions", self.n_conjunctions),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.n_classes > self.n_entities {
            return Err(Error::config(
                "n_classes",
                format!("{} classes exceed {} entities", self.n_classes, self.n_entities),
            ));
        }
        if !(self.license_fraction > 0.0 && self.license_fraction <= 1.0) {
            return Err(Error::config("license_fraction", "must lie in (0, 1]"));
        }
        if self.n_rel_properties > 0 && self.n_rel_prepositions == 0 {
            return Err(Error::config(
                "n_rel_prepositions",
                "relative properties need at least one relative preposition",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ontology {
    pub seed: u64,
    pub config: OntologyConfig,
    class_of: Vec<u32>,
    desc_valid: BTreeSet<(u32, u32)>,
    rel_valid: BTreeSet<(u32, u32, u32)>,
    value_slots: Vec<Vec<u32>>,
}

pub fn build_ontology(cfg: &OntologyConfig, seed: u64) -> Result<Ontology> {
    cfg.validate()?;
    let n_props = cfg.n_desc_properties;

    // Balanced class assignment over a shuffled entity order keeps every class inhabited.
    let mut rng = rng::stream(seed, "ontology.classes", &[]);
    let order = sample(&mut rng, cfg.n_entities, cfg.n_entities);
    let mut class_of = vec![0u32; cfg.n_entities];
    for (slot, entity) in order.into_iter().enumerate() {
        class_of[entity] = (slot % cfg.n_classes) as u32;
    }

    let per_class = {
        let k = (cfg.license_fraction * n_props as f64).round() as usize;
        let upper = if n_props >= 2 { n_props - 1 } else { 1 };
        k.clamp(1, upper)
    };
    let mut desc_valid = BTreeSet::new();
    for class in 0..cfg.n_classes {
        let mut rng = rng::stream(seed, "ontology.desc", &[class as u64]);
        for p in sample(&mut rng, n_props, per_class) {
            desc_valid.insert((class as u32, p as u32));
        }
    }

    let mut rel_valid = BTreeSet::new();
    let pairs = cfg.n_classes * cfg.n_classes;
    for rel in 0..cfg.n_rel_properties {
        let mut rng = rng::stream(seed, "ontology.rel", &[rel as u64]);
        let mut chosen: Vec<usize> = (0..pairs)
            .filter(|_| rng.gen::<f64>() < cfg.license_fraction)
            .collect();
        if chosen.is_empty() {
            chosen.push(rng.gen_range(0..pairs));
        }
        if chosen.len() == pairs && pairs > 1 {
            let drop = rng.gen_range(0..pairs);
            chosen.remove(drop);
        }
        for pair in chosen {
            let (cs, co) = (pair / cfg.n_classes, pair % cfg.n_classes);
            rel_valid.insert((cs as u32, rel as u32, co as u32));
        }
    }

    let value_slots = (0..n_props)
        .map(|p| {
            let mut rng = rng::stream(seed, "ontology.values", &[p as u64]);
            let k = rng.gen_range(1..=cfg.n_desc_values);
            let mut vals: Vec<u32> = sample(&mut rng, cfg.n_desc_values, k)
                .into_iter()
                .map(|v| v as u32)
                .collect();
            vals.sort_unstable();
            vals
        })
        .collect();

    Ok(Ontology {
        seed,
        config: cfg.clone(),
        class_of,
        desc_valid,
        rel_valid,
        value_slots,
    })
}

impl Ontology {
    pub fn n_entities(&self) -> usize {
        self.config.n_entities
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn class_of(&self, entity: u32) -> u32 {
        self.class_of[entity as usize]
    }

    /// Number of symbols the inventory holds for `category`.
    pub fn count(&self, category: SymbolCategory) -> usize {
        let c = &self.config;
        match category {
            SymbolCategory::Subject | SymbolCategory::Object => c.n_entities,
            SymbolCategory::DescProperty => c.n_desc_properties,
            SymbolCategory::RelProperty => c.n_rel_properties,
            SymbolCategory::DescPreposition => c.n_desc_prepositions,
            SymbolCategory::RelPreposition => c.n_rel_prepositions,
            SymbolCategory::Conjunction => c.n_conjunctions,
            SymbolCategory::Phrase | SymbolCategory::Separator | SymbolCategory::EndOfSeq => 1,
        }
    }

    /// Every lexical (non-structural) symbol, in category then index order.
    pub fn lexical_symbols(&self) -> Vec<SymbolId> {
        SymbolCategory::LEXICAL
            .iter()
            .flat_map(|&cat| (0..self.count(cat) as u32).map(move |i| SymbolId::new(cat, i)))
            .collect()
    }

    pub fn contains(&self, sym: SymbolId) -> bool {
        (sym.index as usize) < self.count(sym.category)
    }

    /// The type map: entities are typed by their class, everything else by category.
    pub fn type_of(&self, sym: SymbolId) -> String {
        match sym.category {
            SymbolCategory::Subject | SymbolCategory::Object => {
                format!("entity/class{}", self.class_of(sym.index))
            }
            other => other.tag().to_string(),
        }
    }

    pub fn desc_valid(&self) -> &BTreeSet<(u32, u32)> {
        &self.desc_valid
    }

    pub fn rel_valid(&self) -> &BTreeSet<(u32, u32, u32)> {
        &self.rel_valid
    }

    pub fn value_slots(&self, prop: u32) -> &[u32] {
        &self.value_slots[prop as usize]
    }

    pub fn class_licenses(&self, class: u32) -> impl Iterator<Item = u32> + '_ {
        self.desc_valid
            .range((class, 0)..(class + 1, 0))
            .map(|&(_, p)| p)
    }

    fn entity(&self, sym: SymbolId, role: &str) -> Result<u32> {
        match sym.category {
            SymbolCategory::Subject | SymbolCategory::Object if self.contains(sym) => Ok(sym.index),
            _ => Err(Error::Type(format!("{role} must be a known entity, got {sym}"))),
        }
    }

    pub fn is_desc_valid(&self, entity: SymbolId, prop: SymbolId) -> Result<bool> {
        let e = self.entity(entity, "entity")?;
        if prop.category != SymbolCategory::DescProperty || !self.contains(prop) {
            return Err(Error::Type(format!("expected a descriptive property, got {prop}")));
        }
        Ok(self.desc_valid.contains(&(self.class_of(e), prop.index)))
    }

    pub fn is_rel_valid(&self, subj: SymbolId, rel: SymbolId, obj: SymbolId) -> Result<bool> {
        let s = self.entity(subj, "subject")?;
        let o = self.entity(obj, "object")?;
        if rel.category != SymbolCategory::RelProperty || !self.contains(rel) {
            return Err(Error::Type(format!("expected a relative property, got {rel}")));
        }
        Ok(self
            .rel_valid
            .contains(&(self.class_of(s), rel.index, self.class_of(o))))
    }

    pub fn to_manifest(&self) -> String {
        toml::to_string(self).expect("ontology serializes")
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let o: Ontology =
            toml::from_str(text).map_err(|e| Error::parse("ontology manifest", e.to_string()))?;
        o.config.validate()?;
        if o.class_of.len() != o.config.n_entities
            || o.value_slots.len() != o.config.n_desc_properties
        {
            return Err(Error::parse("ontology manifest", "table sizes disagree with config"));
        }
        Ok(o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trivial() -> OntologyConfig {
        OntologyConfig {
            n_entities: 1,
            n_classes: 1,
            n_desc_properties: 1,
            n_desc_values: 1,
            n_rel_properties: 0,
            ..OntologyConfig::default()
        }
    }

    #[test]
    fn defaults_have_paper_counts() {
        let o = build_ontology(&OntologyConfig::default(), 7).unwrap();
        assert_eq!(o.n_entities(), 100);
        assert_eq!(o.n_classes(), 10);
        assert_eq!(o.count(SymbolCategory::DescProperty), 460);
        assert_eq!(o.count(SymbolCategory::RelProperty), 100);
        assert_eq!(o.config.n_desc_values, 40);
    }

    #[test]
    fn build_is_deterministic() {
        let a = build_ontology(&OntologyConfig::default(), 7).unwrap();
        let b = build_ontology(&OntologyConfig::default(), 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_manifest(), b.to_manifest());
        let c = build_ontology(&OntologyConfig::default(), 8).unwrap();
        assert_ne!(a.desc_valid(), c.desc_valid());
    }

    #[test]
    fn trivial_ontology_has_single_relation() {
        let o = build_ontology(&trivial(), 123).unwrap();
        assert_eq!(o.desc_valid().iter().copied().collect::<Vec<_>>(), vec![(0, 0)]);
        assert!(o.rel_valid().is_empty());
        assert!(o
            .is_desc_valid(SymbolId::subject(0), SymbolId::desc_property(0))
            .unwrap());
    }

    #[test]
    fn every_entity_has_a_valid_property_and_gamma_is_falsifiable() {
        let o = build_ontology(&OntologyConfig::default(), 3).unwrap();
        for e in 0..o.n_entities() as u32 {
            assert!(o.class_licenses(o.class_of(e)).next().is_some());
        }
        assert!(o.desc_valid().len() < 10 * 460);
        assert_eq!(o.desc_valid().len(), 10 * 230);
    }

    #[test]
    fn desc_validity_follows_class() {
        let o = build_ontology(&OntologyConfig::default(), 11).unwrap();
        let e = SymbolId::subject(5);
        let class = o.class_of(5);
        let licensed = o.class_licenses(class).next().unwrap();
        let unlicensed = (0..460).find(|p| !o.desc_valid().contains(&(class, *p))).unwrap();
        assert!(o.is_desc_valid(e, SymbolId::desc_property(licensed)).unwrap());
        assert!(!o.is_desc_valid(e, SymbolId::desc_property(unlicensed)).unwrap());
        // objects share the entity's class
        assert!(o
            .is_desc_valid(SymbolId::object(5), SymbolId::desc_property(licensed))
            .unwrap());
    }

    #[test]
    fn category_mismatch_is_a_type_error() {
        let o = build_ontology(&OntologyConfig::default(), 1).unwrap();
        let err = o.is_desc_valid(SymbolId::desc_property(0), SymbolId::desc_property(1));
        assert!(matches!(err, Err(Error::Type(_))));
        let err = o.is_rel_valid(
            SymbolId::subject(0),
            SymbolId::desc_property(0),
            SymbolId::object(1),
        );
        assert!(matches!(err, Err(Error::Type(_))));
    }

    #[test]
    fn rel_validity_is_directional() {
        let o = build_ontology(&OntologyConfig::default(), 5).unwrap();
        let &(cs, rel, co) = o
            .rel_valid()
            .iter()
            .find(|&&(cs, r, co)| cs != co && !o.rel_valid().contains(&(co, r, cs)))
            .expect("an asymmetric licensed triple exists");
        let of_class = |c: u32| (0..100u32).find(|&e| o.class_of(e) == c).unwrap();
        let (s, ob) = (of_class(cs), of_class(co));
        let r = SymbolId::rel_property(rel);
        assert!(o.is_rel_valid(SymbolId::subject(s), r, SymbolId::object(ob)).unwrap());
        assert!(!o.is_rel_valid(SymbolId::subject(ob), r, SymbolId::object(s)).unwrap());
        let unlicensed = (0..10)
            .flat_map(|a| (0..10).map(move |b| (a, b)))
            .find(|&(a, b)| !o.rel_valid().contains(&(a, rel, b)))
            .unwrap();
        assert!(!o
            .is_rel_valid(
                SymbolId::subject(of_class(unlicensed.0)),
                r,
                SymbolId::object(of_class(unlicensed.1))
            )
            .unwrap());
    }

    #[test]
    fn invalid_counts_name_the_field() {
        let cfg = OntologyConfig {
            n_classes: 0,
            ..OntologyConfig::default()
        };
        match build_ontology(&cfg, 0) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "n_classes"),
            other => panic!("unexpected {other:?}"),
        }
        let cfg = OntologyConfig {
            n_classes: 200,
            ..OntologyConfig::default()
        };
        assert!(matches!(
            build_ontology(&cfg, 0),
            Err(Error::Config { field: "n_classes", .. })
        ));
    }

    #[test]
    fn manifest_round_trip_is_lossless() {
        let o = build_ontology(&OntologyConfig::default(), 99).unwrap();
        let back = Ontology::from_manifest(&o.to_manifest()).unwrap();
        assert_eq!(o, back);
    }

    #[test]
    fn symbol_ids_parse_back() {
        for s in ["subj:3", "obj:0", "dprop:459", "rprop:9", "conj:0", "eos:0"] {
            assert_eq!(s.parse::<SymbolId>().unwrap().to_string(), s);
        }
        assert!("nope:1".parse::<SymbolId>().is_err());
    }
}
