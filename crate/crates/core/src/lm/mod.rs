//! Next-token predictors: a smoothed n-gram reference and a small decoder-only
//! transformer trained with hand-written backpropagation.

mod checkpoint;
mod ngram;
mod train;
mod transformer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Real};
pub use ngram::{ngram_fit, NGram};
pub use train::{
    batch_gradient, compare_gradients, grad_check, lr_at, train, train_example, write_trajectory, TrainConfig, TrainExample,
    TrajectoryRow,
};
pub use transformer::{KvCache, Transformer, TransformerConfig};

use crate::error::Result;

/// Model-agnostic scoring interface used by evaluation.
pub trait Predictor: Sync {
    fn vocab_size(&self) -> usize;

    /// Longest context accepted by `next_scores`.
    fn context_len(&self) -> usize;

    /// Finite next-token scores (log-probabilities up to a constant) for each context.
    fn next_scores(&self, contexts: &[&[u32]]) -> Result<Vec<Vec<f64>>>;

    /// Greedy continuation; ties go to the lowest id. Stops after a token in
    /// `stop`, after `max_new` tokens, or when the context is full.
    fn greedy(&self, prompt: &[u32], max_new: usize, stop: &[u32]) -> Result<Vec<u32>> {
        let mut ctx = prompt.to_vec();
        let mut out = Vec::new();
        while out.len() < max_new && ctx.len() <= self.context_len() {
            let scores = self.next_scores(&[&ctx])?.remove(0);
            let next = argmax(&scores);
            out.push(next);
            ctx.push(next);
            if stop.contains(&next) {
                break;
            }
        }
        Ok(out)
    }
}

fn argmax(xs: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best as u32
}

/// Softmax of a score row, accumulated in f64.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}
