use std::f64::consts::PI;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Real;
use super::transformer::Transformer;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch: usize,
    pub lr: f64,
    pub warmup: usize,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Checkpoint cadence in steps; 0 records only the first and last step.
    pub eval_every: usize,
    /// Restrict the T1 loss to the answer after the separator.
    pub t1_answer_only: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 64,
            lr: 1e-4,
            warmup: 256,
            steps: 10_000,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-10,
            weight_decay: 0.01,
            eval_every: 500,
            t1_answer_only: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::config("batch", "must be positive"));
        }
        if self.steps > 0 && self.warmup >= self.steps {
            return Err(Error::config(
                "warmup",
                format!("warmup {} must be below steps {}", self.warmup, self.steps),
            ));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::config("lr", "must be non-negative"));
        }
        Ok(())
    }
}

/// Linear warmup to `lr`, then cosine decay to zero at `steps`.
pub fn lr_at(tc: &TrainConfig, t: usize) -> f64 {
    if t < tc.warmup {
        tc.lr * t as f64 / tc.warmup as f64
    } else {
        let span = (tc.steps - tc.warmup).max(1) as f64;
        let progress = ((t - tc.warmup) as f64 / span).min(1.0);
        tc.lr * 0.5 * (1.0 + (PI * progress).cos())
    }
}

/// A tokenized line with per-target loss weights (`weights[i]` scores `tokens[i + 1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub tokens: Vec<u32>,
    pub weights: Vec<f64>,
}

/// Targets at index `loss_start` and later carry weight 1.
pub fn train_example(tokens: Vec<u32>, loss_start: usize) -> TrainExample {
    let weights = (1..tokens.len())
        .map(|j| if j >= loss_start { 1.0 } else { 0.0 })
        .collect();
    TrainExample { tokens, weights }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    /// Mean training loss since the previous row; absent at step 0.
    pub loss: Option<f64>,
    pub metrics: Vec<(String, f64)>,
}

const CHUNK: usize = 8;

/// Mean weighted loss over `batch` and its gradient, summed in a fixed order.
fn batch_loss_grad<F: Real>(model: &Transformer<F>, batch: &[&TrainExample]) -> Result<(f64, Vec<F>)> {
    let total_w: f64 = batch.iter().map(|e| e.weights.iter().sum::<f64>()).sum();
    if total_w <= 0.0 {
        return Err(Error::Contract("batch has no weighted targets".into()));
    }
    let scale = 1.0 / total_w;
    let n = model.n_params();
    let parts = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![F::zero(); n];
            let mut loss = 0.0;
            for ex in chunk {
                loss += model.loss_and_grad(&ex.tokens, &ex.weights, scale, &mut g)?;
            }
            Ok((loss, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut iter = parts.into_iter();
    let (mut loss, mut grad) = iter.next().expect("nonempty batch");
    for (l, g) in iter {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a = *a + b;
        }
    }
    Ok((loss * scale, grad))
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    decay: Vec<bool>,
    t: i32,
}

impl AdamW {
    fn new<F: Real>(model: &Transformer<F>) -> Self {
        let n = model.n_params();
        let mut decay = vec![false; n];
        for t in model.tensors() {
            if t.shape.len() == 2 {
                decay[t.offset..t.offset + t.len()].fill(true);
            }
        }
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            decay,
            t: 0,
        }
    }

    fn step<F: Real>(&mut self, params: &mut [F], grad: &[F], lr: f64, tc: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - tc.beta1.powi(self.t);
        let bc2 = 1.0 - tc.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i].to_f64().unwrap();
            self.m[i] = tc.beta1 * self.m[i] + (1.0 - tc.beta1) * g;
            self.v[i] = tc.beta2 * self.v[i] + (1.0 - tc.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            let mut p = params[i].to_f64().unwrap();
            if self.decay[i] {
                p -= lr * tc.weight_decay * p;
            }
            p -= lr * mhat / (vhat.sqrt() + tc.eps);
            params[i] = F::of(p);
        }
    }
}

/// Minibatch AdamW training with batches drawn with replacement. `hook` runs
/// at step 0, every `eval_every` steps and at the last step; its metrics are
/// stored in the returned trajectory.
pub fn train<F, H>(
    model: &mut Transformer<F>,
    data: &[TrainExample],
    tc: &TrainConfig,
    mut hook: H,
) -> Result<Vec<TrajectoryRow>>
where
    F: Real,
    H: FnMut(usize, &Transformer<F>) -> Result<Vec<(String, f64)>>,
{
    tc.validate()?;
    let ctx = model.config().context;
    if let Some(ex) = data.iter().find(|e| e.tokens.len() > ctx) {
        return Err(Error::Context {
            len: ex.tokens.len(),
            max: ctx,
        });
    }
    let mut rows = vec![TrajectoryRow {
        step: 0,
        loss: None,
        metrics: hook(0, model)?,
    }];
    if tc.steps == 0 {
        return Ok(rows);
    }
    if data.is_empty() {
        return Err(Error::Fit("no training examples".into()));
    }
    let mut opt = AdamW::new(model);
    let (mut acc, mut n_acc) = (0.0, 0usize);
    for step in 1..=tc.steps {
        let mut rng = rng::stream(tc.seed, "lm.batch", &[step as u64]);
        let batch: Vec<&TrainExample> = (0..tc.batch).map(|_| &data[rng.gen_range(0..data.len())]).collect();
        let (loss, grad) = batch_loss_grad(model, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        opt.step(model.params_mut(), &grad, lr_at(tc, step), tc);
        acc += loss;
        n_acc += 1;
        let due = tc.eval_every > 0 && step % tc.eval_every == 0;
        if due || step == tc.steps {
            log::debug!("step {step}: loss {:.4}", acc / n_acc as f64);
            rows.push(TrajectoryRow {
                step,
                loss: Some(acc / n_acc as f64),
                metrics: hook(step, model)?,
            });
            acc = 0.0;
            n_acc = 0;
        }
    }
    Ok(rows)
}

pub fn write_trajectory(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        for (k, _) in &r.metrics {
            if !names.contains(&k.as_str()) {
                names.push(k);
            }
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["step", "loss"];
    header.extend(&names);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.step.to_string(), r.loss.map(|l| l.to_string()).unwrap_or_default()];
        for n in &names {
            rec.push(
                r.metrics
                    .iter()
                    .find(|(k, _)| k == n)
                    .map(|(_, v)| v.to_string())
                    .unwrap_or_default(),
            );
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Denominator floor for relative errors of near-zero gradients.
const REL_FLOOR: f64 = 1e-8;

/// Max relative error between backprop and central differences over every parameter.
pub fn grad_check(model: &Transformer<f64>, batch: &[TrainExample], h: f64) -> Result<f64> {
    let (_, analytic) = batch_gradient(model, batch)?;
    compare_gradients(model, batch, &analytic, h)
}

/// Mean weighted loss of `batch` and its backprop gradient.
pub fn batch_gradient<F: Real>(model: &Transformer<F>, batch: &[TrainExample]) -> Result<(f64, Vec<F>)> {
    let refs: Vec<&TrainExample> = batch.iter().collect();
    batch_loss_grad(model, &refs)
}

/// Max relative error of a supplied gradient against central differences.
pub fn compare_gradients(model: &Transformer<f64>, batch: &[TrainExample], analytic: &[f64], h: f64) -> Result<f64> {
    if analytic.len() != model.n_params() {
        return Err(Error::Contract("gradient length does not match the model".into()));
    }
    let refs: Vec<&TrainExample> = batch.iter().collect();
    let loss = |m: &Transformer<f64>| -> Result<f64> {
        let total_w: f64 = refs.iter().map(|e| e.weights.iter().sum::<f64>()).sum();
        let mut sink = vec![0.0; m.n_params()];
        let mut l = 0.0;
        for ex in &refs {
            l += m.loss_and_grad(&ex.tokens, &ex.weights, 0.0, &mut sink)?;
        }
        Ok(l / total_w)
    };
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..model.n_params() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + h;
        let up = loss(&probe)?;
        probe.params_mut()[i] = orig - h;
        let down = loss(&probe)?;
        probe.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(REL_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::TransformerConfig;

    fn gc_config(layers: usize, final_norm: bool) -> TransformerConfig {
        TransformerConfig {
            vocab_size: 7,
            layers,
            model_dim: 8,
            heads: 2,
            ff_dim: 8,
            context: 6,
            final_norm,
            init_std: 0.5,
            ..TransformerConfig::default()
        }
    }

    fn gc_batch() -> Vec<TrainExample> {
        vec![
            train_example(vec![1, 2, 3, 4, 5, 6], 1),
            train_example(vec![0, 6, 5, 2], 2),
            train_example(vec![3, 3, 1], 1),
        ]
    }

    #[test]
    fn schedule_endpoints() {
        let tc = TrainConfig::default();
        assert_eq!(lr_at(&tc, 0), 0.0);
        assert!((lr_at(&tc, 256) - 1e-4).abs() < 1e-18);
        assert!(lr_at(&tc, 10_000).abs() < 1e-12);
        assert!((lr_at(&tc, 128) - 0.5e-4).abs() < 1e-18);
    }

    #[test]
    fn warmup_must_precede_end() {
        let tc = TrainConfig {
            steps: 100,
            warmup: 100,
            ..TrainConfig::default()
        };
        assert!(matches!(tc.validate(), Err(Error::Config { field: "warmup", .. })));
    }

    #[test]
    fn linear_only_gradient_is_exact() {
        let m = Transformer::<f64>::new(gc_config(0, false), 1).unwrap();
        assert!(m.n_params() <= 1000);
        let err = grad_check(&m, &gc_batch(), 1e-4).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn full_model_gradient_matches_finite_differences() {
        let m = Transformer::<f64>::new(gc_config(1, true), 2).unwrap();
        assert!(m.n_params() <= 1000, "{}", m.n_params());
        let err = grad_check(&m, &gc_batch(), 1e-4).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn corrupted_gradient_fails_the_gate() {
        let m = Transformer::<f64>::new(gc_config(1, true), 2).unwrap();
        let (_, mut g) = batch_gradient(&m, &gc_batch()).unwrap();
        let wq = m.tensors().iter().find(|t| t.name == "layers.0.wq").unwrap().clone();
        for x in &mut g[wq.offset..wq.offset + wq.len()] {
            *x *= 1.01;
        }
        let err = compare_gradients(&m, &gc_batch(), &g, 1e-4).unwrap();
        assert!(err > 1e-4, "{err}");
    }

    #[test]
    fn zero_steps_leaves_model_unchanged() {
        let mut m = Transformer::<f32>::new(gc_config(1, true), 4).unwrap();
        let before = m.params().to_vec();
        let tc = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let rows = train(&mut m, &gc_batch(), &tc, |_, _| Ok(vec![])).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(m.params(), &before[..]);
    }

    #[test]
    fn toy_loss_halves() {
        let cfg = TransformerConfig {
            vocab_size: 12,
            layers: 1,
            model_dim: 16,
            heads: 2,
            context: 12,
            ..TransformerConfig::default()
        };
        let mut m = Transformer::<f32>::new(cfg, 0).unwrap();
        let data: Vec<TrainExample> = (0..50u32)
            .map(|i| train_example((0..8).map(|j| (i + 3 * j) % 12).collect(), 1))
            .collect();
        let tc = TrainConfig {
            batch: 8,
            lr: 1e-2,
            warmup: 20,
            steps: 300,
            eval_every: 50,
            ..TrainConfig::default()
        };
        let rows = train(&mut m, &data, &tc, |_, _| Ok(vec![])).unwrap();
        let first = rows[1].loss.unwrap();
        let last = rows.last().unwrap().loss.unwrap();
        assert!(last < 0.5 * first, "{first} -> {last}");
    }
}
