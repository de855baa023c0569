use std::collections::HashMap;

use super::Predictor;
use crate::error::{Error, Result};

/// Log-probability floor; keeps scores finite when k = 0.
const LOG_FLOOR: f64 = -1e4;

#[derive(Debug, Clone, Default)]
struct Counts {
    next: HashMap<u32, u64>,
    total: u64,
}

/// Add-k smoothed n-gram model. A context never seen in training backs off to
/// the longest seen suffix, down to the unigram.
#[derive(Debug, Clone)]
pub struct NGram {
    order: usize,
    k: f64,
    vocab_size: usize,
    // tables[h] maps a length-h context to its continuation counts
    tables: Vec<HashMap<Vec<u32>, Counts>>,
}

pub fn ngram_fit(lines: &[Vec<u32>], order: usize, k: f64, vocab_size: usize) -> Result<NGram> {
    if order == 0 {
        return Err(Error::config("order", "n-gram order must be at least 1"));
    }
    if !(k >= 0.0) {
        return Err(Error::config("k", "smoothing constant must be non-negative"));
    }
    if lines.iter().all(|l| l.is_empty()) {
        return Err(Error::Fit("empty corpus".into()));
    }
    let mut tables = vec![HashMap::<Vec<u32>, Counts>::new(); order];
    for line in lines {
        for (i, &tok) in line.iter().enumerate() {
            if tok as usize >= vocab_size {
                return Err(Error::TokenRange { id: tok, vocab_size });
            }
            for (h, table) in tables.iter_mut().enumerate().take(i.min(order - 1) + 1) {
                let c = table.entry(line[i - h..i].to_vec()).or_default();
                *c.next.entry(tok).or_default() += 1;
                c.total += 1;
            }
        }
    }
    Ok(NGram {
        order,
        k,
        vocab_size,
        tables,
    })
}

impl NGram {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Conditional distribution after backing off to the longest seen context.
    pub fn probabilities(&self, context: &[u32]) -> Vec<f64> {
        let hmax = context.len().min(self.order - 1);
        let counts = (0..=hmax)
            .rev()
            .find_map(|h| {
                self.tables[h]
                    .get(&context[context.len() - h..])
                    .filter(|c| c.total > 0)
            })
            .expect("unigram table is nonempty");
        let denom = counts.total as f64 + self.k * self.vocab_size as f64;
        let mut p = vec![self.k / denom; self.vocab_size];
        for (&tok, &n) in &counts.next {
            p[tok as usize] = (n as f64 + self.k) / denom;
        }
        p
    }
}

impl Predictor for NGram {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn context_len(&self) -> usize {
        usize::MAX
    }

    fn next_scores(&self, contexts: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        Ok(contexts
            .iter()
            .map(|c| {
                self.probabilities(c)
                    .into_iter()
                    .map(|p| if p > 0.0 { p.ln().max(LOG_FLOOR) } else { LOG_FLOOR })
                    .collect()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::softmax;

    #[test]
    fn bigram_count_ratio() {
        // a=0, b=1
        let m = ngram_fit(&[vec![0, 1, 0, 1]], 2, 0.0, 2).unwrap();
        let p = m.probabilities(&[0]);
        assert_eq!(p, vec![0.0, 1.0]);
        let s = m.next_scores(&[&[0]]).unwrap();
        assert!(s[0].iter().all(|x| x.is_finite()));
    }

    #[test]
    fn unseen_context_backs_off_to_unigram() {
        let m = ngram_fit(&[vec![0, 1, 0, 1, 2]], 2, 0.0, 4).unwrap();
        assert_eq!(m.probabilities(&[3]), m.probabilities(&[]));
        assert_eq!(m.probabilities(&[]), vec![0.4, 0.4, 0.2, 0.0]);
        // 2 is only seen at the end, so its bigram row is empty and backs off too
        assert_eq!(m.probabilities(&[2]), m.probabilities(&[]));
    }

    #[test]
    fn add_k_and_normalisation() {
        let m = ngram_fit(&[vec![0, 1, 2], vec![0, 2]], 3, 0.5, 3).unwrap();
        for ctx in [&[][..], &[0], &[0, 1], &[2, 2]] {
            let s = m.next_scores(&[ctx]).unwrap();
            let total: f64 = softmax(&s[0]).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        // after 0: counts {1:1, 2:1}, denominator 2 + 1.5
        let p = m.probabilities(&[0]);
        assert!((p[1] - 1.5 / 3.5).abs() < 1e-15);
        assert!((p[0] - 0.5 / 3.5).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(ngram_fit(&[vec![]], 2, 1.0, 3), Err(Error::Fit(_))));
        assert!(ngram_fit(&[vec![0]], 0, 1.0, 3).is_err());
        assert!(matches!(ngram_fit(&[vec![5]], 1, 1.0, 3), Err(Error::TokenRange { .. })));
    }
}
