//! Exact sampler for the uniform distribution over valid fillings of a template.
//!
//! Used once rejection runs out of tries. Sentences are independent given the
//! template, so each one is drawn on its own: first the set of subject classes
//! (weighted by how many fillings realise it), then subjects, properties and
//! objects conditioned on that set.

use rand::Rng as _;

use super::terminal_name;
use crate::error::{Error, Result};
use crate::ontology::{Ontology, SymbolCategory, SymbolId};
use crate::rng::Rng;

const MAX_SUBJECTS: usize = 18;
const MAX_CLASS_SETS: usize = 1 << 20;
const MAX_SUBJECT_TRIES: usize = 1 << 22;

struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn and_assign(&mut self, other: &Bits) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a &= b;
        }
    }
    fn full(n: usize) -> Self {
        let mut b = Bits::new(n);
        for i in 0..n {
            b.set(i);
        }
        b
    }
    fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().flat_map(|(w, &word)| {
            (0..64).filter(move |b| word >> b & 1 == 1).map(move |b| w * 64 + b)
        })
    }
}

struct Index {
    members: Vec<Vec<u32>>,
    desc: Vec<Bits>,
    // rel[class][r] = object classes licensed
    rel: Vec<Vec<Bits>>,
    n_desc: usize,
    n_rel: usize,
}

impl Index {
    fn new(o: &Ontology) -> Self {
        let nc = o.n_classes();
        let n_desc = o.count(SymbolCategory::DescProperty);
        let n_rel = o.count(SymbolCategory::RelProperty);
        let mut members = vec![Vec::new(); nc];
        for e in 0..o.n_entities() as u32 {
            members[o.class_of(e) as usize].push(e);
        }
        let mut desc: Vec<Bits> = (0..nc).map(|_| Bits::new(n_desc)).collect();
        for &(c, p) in o.desc_valid() {
            desc[c as usize].set(p as usize);
        }
        let mut rel: Vec<Vec<Bits>> = (0..nc)
            .map(|_| (0..n_rel).map(|_| Bits::new(nc)).collect())
            .collect();
        for &(cs, r, co) in o.rel_valid() {
            rel[cs as usize][r as usize].set(co as usize);
        }
        Index {
            members,
            desc,
            rel,
            n_desc,
            n_rel,
        }
    }

    fn desc_set(&self, classes: &[usize]) -> Bits {
        let mut b = Bits::full(self.n_desc);
        for &k in classes {
            b.and_assign(&self.desc[k]);
        }
        b
    }

    fn object_classes(&self, classes: &[usize], r: usize) -> Bits {
        let mut b = Bits::full(self.members.len());
        for &k in classes {
            b.and_assign(&self.rel[k][r]);
        }
        b
    }

    fn object_count(&self, classes: &[usize], r: usize) -> usize {
        self.object_classes(classes, r)
            .ones()
            .map(|c| self.members[c].len())
            .sum()
    }
}

/// Number of n-tuples of entities whose set of classes is exactly `classes`.
fn surjections(sizes: &[usize], n: usize) -> i128 {
    let k = sizes.len();
    let mut total: i128 = 0;
    for mask in 0u32..(1 << k) {
        let s: i128 = (0..k)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| sizes[i] as i128)
            .sum();
        let sign = if (k - mask.count_ones() as usize) % 2 == 0 { 1 } else { -1 };
        total += sign * s.pow(n as u32);
    }
    total
}

fn class_subsets(nc: usize, max_size: usize, out: &mut Vec<Vec<usize>>) {
    fn rec(start: usize, nc: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if !cur.is_empty() {
            out.push(cur.clone());
        }
        if cur.len() == max {
            return;
        }
        for c in start..nc {
            cur.push(c);
            rec(c + 1, nc, max, cur, out);
            cur.pop();
        }
    }
    rec(0, nc, max_size, &mut Vec::new(), out);
}

fn sample_log_weights(logw: &[f64], rng: &mut Rng) -> usize {
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|&l| (l - max).exp()).collect();
    crate::rng::weighted_index(rng, &w)
}

pub(super) fn fill(categories: &[SymbolCategory], o: &Ontology, rng: &mut Rng) -> Result<Vec<SymbolId>> {
    let fail = || Error::Generation {
        template: categories
            .iter()
            .map(|&c| terminal_name(c))
            .collect::<Vec<_>>()
            .join(" "),
        tries: 0,
    };
    let ix = Index::new(o);
    let mut out: Vec<SymbolId> = Vec::with_capacity(categories.len());
    for (si, sentence) in categories.split(|&c| c == SymbolCategory::Separator).enumerate() {
        if si > 0 {
            out.push(SymbolId::SEPARATOR);
        }
        let filled = fill_sentence(sentence, o, &ix, rng).ok_or_else(fail)?;
        out.extend(filled);
    }
    Ok(out)
}

fn fill_sentence(
    cats: &[SymbolCategory],
    o: &Ontology,
    ix: &Index,
    rng: &mut Rng,
) -> Option<Vec<SymbolId>> {
    use SymbolCategory::*;
    let n_subj = cats.iter().filter(|&&c| c == Subject).count();
    let n_desc = cats.iter().filter(|&&c| c == DescProperty).count();
    // objects per relation clause, in order
    let mut rel_objects: Vec<usize> = Vec::new();
    for &c in cats {
        match c {
            RelProperty => rel_objects.push(0),
            Object => *rel_objects.last_mut()? += 1,
            _ => {}
        }
    }

    let mut chosen: Vec<usize> = Vec::new();
    if n_subj > 0 {
        if n_subj > MAX_SUBJECTS {
            return None;
        }
        let mut subsets = Vec::new();
        class_subsets(ix.members.len(), n_subj, &mut subsets);
        if subsets.len() > MAX_CLASS_SETS {
            return None;
        }
        let mut keep = Vec::new();
        let mut logw = Vec::new();
        for k in subsets {
            let sizes: Vec<usize> = k.iter().map(|&c| ix.members[c].len()).collect();
            let s = surjections(&sizes, n_subj);
            if s <= 0 {
                continue;
            }
            let mut lw = (s as f64).ln();
            if n_desc > 0 {
                let d = ix.desc_set(&k).ones().count();
                if d == 0 {
                    continue;
                }
                lw += n_desc as f64 * (d as f64).ln();
            }
            let mut ok = true;
            for &q in &rel_objects {
                let tot: f64 = (0..ix.n_rel)
                    .map(|r| (ix.object_count(&k, r) as f64).powi(q as i32))
                    .sum();
                if tot == 0.0 {
                    ok = false;
                    break;
                }
                lw += tot.ln();
            }
            if ok {
                keep.push(k);
                logw.push(lw);
            }
        }
        if keep.is_empty() {
            return None;
        }
        chosen = keep.swap_remove(sample_log_weights(&logw, rng));
    }

    let pool: Vec<u32> = chosen
        .iter()
        .flat_map(|&c| ix.members[c].iter().copied())
        .collect();
    let mut subjects = Vec::with_capacity(n_subj);
    if n_subj > 0 {
        let mut tries = 0;
        loop {
            subjects.clear();
            subjects.extend((0..n_subj).map(|_| pool[rng.gen_range(0..pool.len())]));
            let covered = chosen
                .iter()
                .all(|&c| subjects.iter().any(|&e| o.class_of(e) as usize == c));
            if covered {
                break;
            }
            tries += 1;
            if tries >= MAX_SUBJECT_TRIES {
                return None;
            }
        }
    }
    let desc_choices: Vec<usize> = ix.desc_set(&chosen).ones().collect();

    let mut out = Vec::with_capacity(cats.len());
    let mut subj_iter = subjects.into_iter();
    let mut objects: Vec<u32> = Vec::new();
    for &c in cats {
        let idx = match c {
            Subject => subj_iter.next()?,
            DescProperty => desc_choices[rng.gen_range(0..desc_choices.len())] as u32,
            RelProperty => {
                let q = rel_objects.remove(0);
                let logw: Vec<f64> = (0..ix.n_rel)
                    .map(|r| {
                        let n = ix.object_count(&chosen, r);
                        if n == 0 {
                            f64::NEG_INFINITY
                        } else {
                            q as f64 * (n as f64).ln()
                        }
                    })
                    .collect();
                let r = sample_log_weights(&logw, rng);
                objects = ix
                    .object_classes(&chosen, r)
                    .ones()
                    .flat_map(|c| ix.members[c].iter().copied())
                    .collect();
                r as u32
            }
            Object => objects[rng.gen_range(0..objects.len())],
            c if c.is_structural() => 0,
            c => rng.gen_range(0..o.count(c) as u32),
        };
        out.push(SymbolId::new(c, idx));
    }
    Some(out)
}
