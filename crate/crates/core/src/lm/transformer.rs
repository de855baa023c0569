//! Pre-norm decoder-only transformer: learned absolute positions, RMSNorm,
//! causal multi-head attention, SwiGLU feed-forward, untied output head.
//! All parameters live in one flat buffer; matrices are stored `[in, out]`.

use rayon::prelude::*;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::checkpoint::Real;
use super::Predictor;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    /// SwiGLU hidden width; 0 picks 8/3 of the model width rounded up to a multiple of 8.
    pub ff_dim: usize,
    pub context: usize,
    pub final_norm: bool,
    pub init_std: f64,
    pub norm_eps: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            vocab_size: 2048,
            layers: 4,
            model_dim: 256,
            heads: 4,
            ff_dim: 0,
            context: 256,
            final_norm: true,
            init_std: 0.02,
            norm_eps: 1e-5,
        }
    }
}

impl TransformerConfig {
    pub fn hidden(&self) -> usize {
        if self.ff_dim > 0 {
            self.ff_dim
        } else {
            (8 * self.model_dim / 3).div_ceil(8) * 8
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::config("vocab_size", "must be positive"));
        }
        if self.model_dim == 0 || self.context == 0 {
            return Err(Error::config("model_dim", "model width and context must be positive"));
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::config(
                "heads",
                format!("model_dim {} is not divisible by {} heads", self.model_dim, self.heads),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerIx {
    ln1: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ln2: usize,
    wg: usize,
    wu: usize,
    wd: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    tok: usize,
    pos: usize,
    layers: Vec<LayerIx>,
    lnf: Option<usize>,
    head: usize,
    total: usize,
    tensors: Vec<TensorInfo>,
}

impl Layout {
    fn new(cfg: &TransformerConfig) -> Self {
        let (v, d, h, c) = (cfg.vocab_size, cfg.model_dim, cfg.hidden(), cfg.context);
        let mut tensors = Vec::new();
        let mut total = 0;
        let mut add = |name: String, shape: Vec<usize>| {
            let offset = total;
            total += shape.iter().product::<usize>();
            tensors.push(TensorInfo { name, shape, offset });
            offset
        };
        let tok = add("tok_emb".into(), vec![v, d]);
        let pos = add("pos_emb".into(), vec![c, d]);
        let layers = (0..cfg.layers)
            .map(|l| LayerIx {
                ln1: add(format!("layers.{l}.attn_norm"), vec![d]),
                wq: add(format!("layers.{l}.wq"), vec![d, d]),
                wk: add(format!("layers.{l}.wk"), vec![d, d]),
                wv: add(format!("layers.{l}.wv"), vec![d, d]),
                wo: add(format!("layers.{l}.wo"), vec![d, d]),
                ln2: add(format!("layers.{l}.ffn_norm"), vec![d]),
                wg: add(format!("layers.{l}.w_gate"), vec![d, h]),
                wu: add(format!("layers.{l}.w_up"), vec![d, h]),
                wd: add(format!("layers.{l}.w_down"), vec![h, d]),
            })
            .collect();
        let lnf = cfg.final_norm.then(|| add("final_norm".into(), vec![d]));
        let head = add("lm_head".into(), vec![d, v]);
        Layout {
            tok,
            pos,
            layers,
            lnf,
            head,
            total,
            tensors,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Transformer<F> {
    cfg: TransformerConfig,
    layout: Layout,
    params: Vec<F>,
}

// ---- dense kernels -------------------------------------------------------

/// `a[m,k] · b[k,n]`
fn matmul<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    out
}

/// `out[k,n] += a[m,k]ᵀ · g[m,n]`
fn acc_at_b<F: Real>(a: &[F], g: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o = *o + aip * gv;
            }
        }
    }
}

/// `g[m,n] · w[k,n]ᵀ`
fn matmul_bt<F: Real>(g: &[F], w: &[F], m: usize, n: usize, k: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = dot(grow, &w[p * n..(p + 1) * n]);
        }
    }
    out
}

fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s = s + x * y;
    }
    s
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Row-wise RMSNorm; returns normalised rows and the inverse RMS of each row.
fn rmsnorm<F: Real>(x: &[F], g: &[F], d: usize, eps: F) -> (Vec<F>, Vec<F>) {
    let rows = x.len() / d;
    let mut y = vec![F::zero(); x.len()];
    let mut inv = vec![F::zero(); rows];
    let dn = F::of(d as f64);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let ms = dot(xr, xr) / dn;
        let ir = F::one() / (ms + eps).sqrt();
        inv[r] = ir;
        for ((o, &xv), &gv) in y[r * d..(r + 1) * d].iter_mut().zip(xr).zip(g) {
            *o = xv * ir * gv;
        }
    }
    (y, inv)
}

fn rmsnorm_back<F: Real>(dy: &[F], x: &[F], inv: &[F], g: &[F], dg: &mut [F], d: usize) -> Vec<F> {
    let mut dx = vec![F::zero(); x.len()];
    let dn = F::of(d as f64);
    for (r, &ir) in inv.iter().enumerate() {
        let (xr, dyr) = (&x[r * d..(r + 1) * d], &dy[r * d..(r + 1) * d]);
        let mut m = F::zero();
        for j in 0..d {
            let xhat = xr[j] * ir;
            dg[j] = dg[j] + dyr[j] * xhat;
            m = m + dyr[j] * g[j] * xhat;
        }
        m = m / dn;
        for j in 0..d {
            let xhat = xr[j] * ir;
            dx[r * d + j] = ir * (dyr[j] * g[j] - xhat * m);
        }
    }
    dx
}

fn sigmoid<F: Real>(a: F) -> F {
    F::one() / (F::one() + (-a).exp())
}

// ---- activations kept for backprop ---------------------------------------

struct LayerActs<F> {
    x_in: Vec<F>,
    r1: Vec<F>,
    h1: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    /// attention weights, `[head][i][j]` with `T×T` blocks
    p: Vec<F>,
    o: Vec<F>,
    x_mid: Vec<F>,
    r2: Vec<F>,
    h2: Vec<F>,
    a: Vec<F>,
    b: Vec<F>,
    s: Vec<F>,
}

struct Acts<F> {
    layers: Vec<LayerActs<F>>,
    x_last: Vec<F>,
    rf: Vec<F>,
    hf: Vec<F>,
}

/// Per-layer key/value cache for incremental decoding.
#[derive(Debug, Clone)]
pub struct KvCache<F> {
    k: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    len: usize,
}

impl<F> KvCache<F> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl<F: Real> Transformer<F> {
    /// Random initialisation: N(0, init_std) matrices and embeddings, unit norm gains.
    pub fn new(cfg: TransformerConfig, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(cfg)?;
        let normal = Normal::new(0.0, m.cfg.init_std).map_err(|e| Error::config("init_std", e.to_string()))?;
        for (i, t) in m.layout.tensors.iter().enumerate() {
            let dst = &mut m.params[t.offset..t.offset + t.len()];
            if t.shape.len() == 1 {
                dst.fill(F::one());
            } else {
                let mut rng = rng::stream(seed, "lm.init", &[i as u64]);
                for x in dst {
                    *x = F::of(normal.sample(&mut rng));
                }
            }
        }
        Ok(m)
    }

    pub fn zeros(cfg: TransformerConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        Ok(Self {
            params: vec![F::zero(); layout.total],
            layout,
            cfg,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.layout.tensors
    }

    /// Same architecture with parameters converted to another scalar type.
    pub fn cast<G: Real>(&self) -> Transformer<G> {
        Transformer {
            cfg: self.cfg.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|x| G::of(x.to_f64().unwrap())).collect(),
        }
    }

    fn w(&self, off: usize, len: usize) -> &[F] {
        &self.params[off..off + len]
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.len() > self.cfg.context {
            return Err(Error::Context {
                len: tokens.len(),
                max: self.cfg.context,
            });
        }
        if let Some(&id) = tokens.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            return Err(Error::TokenRange {
                id,
                vocab_size: self.cfg.vocab_size,
            });
        }
        Ok(())
    }

    fn forward_acts(&self, tokens: &[u32]) -> Acts<F> {
        let cfg = &self.cfg;
        let (t_len, d, hid, nh) = (tokens.len(), cfg.model_dim, cfg.hidden(), cfg.heads);
        let hd = d / nh;
        let scale = F::one() / F::of(hd as f64).sqrt();
        let eps = F::of(cfg.norm_eps);
        let ly = &self.layout;

        let mut x = vec![F::zero(); t_len * d];
        for (t, &tok) in tokens.iter().enumerate() {
            let row = &mut x[t * d..(t + 1) * d];
            row.copy_from_slice(self.w(ly.tok + tok as usize * d, d));
            add_into(row, self.w(ly.pos + t * d, d));
        }

        let mut layers = Vec::with_capacity(ly.layers.len());
        for ix in &ly.layers {
            let x_in = x;
            let (h1, r1) = rmsnorm(&x_in, self.w(ix.ln1, d), d, eps);
            let q = matmul(&h1, self.w(ix.wq, d * d), t_len, d, d);
            let k = matmul(&h1, self.w(ix.wk, d * d), t_len, d, d);
            let v = matmul(&h1, self.w(ix.wv, d * d), t_len, d, d);
            let mut p = vec![F::zero(); nh * t_len * t_len];
            let mut o = vec![F::zero(); t_len * d];
            for h in 0..nh {
                for i in 0..t_len {
                    let qi = &q[i * d + h * hd..i * d + (h + 1) * hd];
                    let prow = &mut p[(h * t_len + i) * t_len..(h * t_len + i + 1) * t_len];
                    attend_row(qi, &k, &v, d, h * hd, hd, i + 1, scale, prow, &mut o[i * d + h * hd..i * d + (h + 1) * hd]);
                }
            }
            let mut x_mid = matmul(&o, self.w(ix.wo, d * d), t_len, d, d);
            add_into(&mut x_mid, &x_in);
            let (h2, r2) = rmsnorm(&x_mid, self.w(ix.ln2, d), d, eps);
            let a = matmul(&h2, self.w(ix.wg, d * hid), t_len, d, hid);
            let b = matmul(&h2, self.w(ix.wu, d * hid), t_len, d, hid);
            let s: Vec<F> = a.iter().zip(&b).map(|(&av, &bv)| av * sigmoid(av) * bv).collect();
            let mut x_out = matmul(&s, self.w(ix.wd, hid * d), t_len, hid, d);
            add_into(&mut x_out, &x_mid);
            x = x_out;
            layers.push(LayerActs {
                x_in,
                r1,
                h1,
                q,
                k,
                v,
                p,
                o,
                x_mid,
                r2,
                h2,
                a,
                b,
                s,
            });
        }
        let (hf, rf) = match ly.lnf {
            Some(off) => rmsnorm(&x, self.w(off, d), d, eps),
            None => (x.clone(), Vec::new()),
        };
        Acts {
            layers,
            x_last: x,
            rf,
            hf,
        }
    }

    fn head_rows(&self, hf: &[F], rows: &[usize]) -> Vec<F> {
        let (d, v) = (self.cfg.model_dim, self.cfg.vocab_size);
        let mut sel = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            sel.extend_from_slice(&hf[r * d..(r + 1) * d]);
        }
        matmul(&sel, self.w(self.layout.head, d * v), rows.len(), d, v)
    }

    /// Logits at every position, `[T][V]`.
    pub fn logits(&self, tokens: &[u32]) -> Result<Vec<Vec<F>>> {
        self.check_tokens(tokens)?;
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let acts = self.forward_acts(tokens);
        let rows: Vec<usize> = (0..tokens.len()).collect();
        let flat = self.head_rows(&acts.hf, &rows);
        Ok(flat.chunks(self.cfg.vocab_size).map(<[F]>::to_vec).collect())
    }

    /// Weighted next-token cross-entropy of one sequence. Position `i` predicts
    /// `tokens[i + 1]` with weight `weights[i]`. Adds `scale · ∂loss/∂θ` into
    /// `grad` and returns the weighted loss sum.
    pub fn loss_and_grad(&self, tokens: &[u32], weights: &[f64], scale: f64, grad: &mut [F]) -> Result<f64> {
        self.check_tokens(tokens)?;
        if tokens.len() < 2 || weights.len() != tokens.len() - 1 {
            return Err(Error::Contract("need T >= 2 tokens and T - 1 weights".into()));
        }
        if grad.len() != self.params.len() {
            return Err(Error::Contract("gradient buffer has the wrong length".into()));
        }
        let cfg = &self.cfg;
        let (t_len, d, hid, nh, vsz) = (tokens.len(), cfg.model_dim, cfg.hidden(), cfg.heads, cfg.vocab_size);
        let hd = d / nh;
        let scale_att = F::one() / F::of(hd as f64).sqrt();
        let ly = &self.layout;
        let acts = self.forward_acts(tokens);

        let rows: Vec<usize> = (0..t_len - 1).filter(|&i| weights[i] != 0.0).collect();
        let logits = self.head_rows(&acts.hf, &rows);
        let mut loss = 0.0f64;
        let mut dlogits = vec![F::zero(); logits.len()];
        for (ri, &i) in rows.iter().enumerate() {
            let row = &logits[ri * vsz..(ri + 1) * vsz];
            let target = tokens[i + 1] as usize;
            let max = row.iter().fold(f64::NEG_INFINITY, |m, x| m.max(x.to_f64().unwrap()));
            let z: f64 = row.iter().map(|x| (x.to_f64().unwrap() - max).exp()).sum();
            let lse = max + z.ln();
            loss += weights[i] * (lse - row[target].to_f64().unwrap());
            let c = scale * weights[i];
            for (j, (dl, x)) in dlogits[ri * vsz..(ri + 1) * vsz].iter_mut().zip(row).enumerate() {
                let p = (x.to_f64().unwrap() - lse).exp();
                *dl = F::of(c * (p - if j == target { 1.0 } else { 0.0 }));
            }
        }

        // output head
        let mut hf_sel = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            hf_sel.extend_from_slice(&acts.hf[r * d..(r + 1) * d]);
        }
        acc_at_b(&hf_sel, &dlogits, rows.len(), d, vsz, &mut grad[ly.head..ly.head + d * vsz]);
        let dsel = matmul_bt(&dlogits, self.w(ly.head, d * vsz), rows.len(), vsz, d);
        let mut dhf = vec![F::zero(); t_len * d];
        for (ri, &r) in rows.iter().enumerate() {
            dhf[r * d..(r + 1) * d].copy_from_slice(&dsel[ri * d..(ri + 1) * d]);
        }
        let mut dx = match ly.lnf {
            Some(off) => {
                let (g, dg) = (self.w(off, d), off);
                let mut dgain = vec![F::zero(); d];
                let dx = rmsnorm_back(&dhf, &acts.x_last, &acts.rf, g, &mut dgain, d);
                add_into(&mut grad[dg..dg + d], &dgain);
                dx
            }
            None => dhf,
        };

        for (ix, la) in ly.layers.iter().zip(&acts.layers).rev() {
            // feed-forward
            acc_at_b(&la.s, &dx, t_len, hid, d, &mut grad[ix.wd..ix.wd + hid * d]);
            let ds = matmul_bt(&dx, self.w(ix.wd, hid * d), t_len, d, hid);
            let mut da = vec![F::zero(); t_len * hid];
            let mut db = vec![F::zero(); t_len * hid];
            for j in 0..t_len * hid {
                let (a, b) = (la.a[j], la.b[j]);
                let sg = sigmoid(a);
                db[j] = ds[j] * a * sg;
                da[j] = ds[j] * b * sg * (F::one() + a * (F::one() - sg));
            }
            acc_at_b(&la.h2, &da, t_len, d, hid, &mut grad[ix.wg..ix.wg + d * hid]);
            acc_at_b(&la.h2, &db, t_len, d, hid, &mut grad[ix.wu..ix.wu + d * hid]);
            let mut dh2 = matmul_bt(&da, self.w(ix.wg, d * hid), t_len, hid, d);
            add_into(&mut dh2, &matmul_bt(&db, self.w(ix.wu, d * hid), t_len, hid, d));
            let mut dgain = vec![F::zero(); d];
            let dxm_norm = rmsnorm_back(&dh2, &la.x_mid, &la.r2, self.w(ix.ln2, d), &mut dgain, d);
            add_into(&mut grad[ix.ln2..ix.ln2 + d], &dgain);
            let mut dxm = dx;
            add_into(&mut dxm, &dxm_norm);

            // attention
            acc_at_b(&la.o, &dxm, t_len, d, d, &mut grad[ix.wo..ix.wo + d * d]);
            let d_o = matmul_bt(&dxm, self.w(ix.wo, d * d), t_len, d, d);
            let mut dq = vec![F::zero(); t_len * d];
            let mut dk = vec![F::zero(); t_len * d];
            let mut dv = vec![F::zero(); t_len * d];
            let mut dp = vec![F::zero(); t_len];
            for h in 0..nh {
                let c0 = h * hd;
                for i in 0..t_len {
                    let prow = &la.p[(h * t_len + i) * t_len..(h * t_len + i) * t_len + i + 1];
                    let doi = &d_o[i * d + c0..i * d + c0 + hd];
                    let mut sum = F::zero();
                    for j in 0..=i {
                        dp[j] = dot(doi, &la.v[j * d + c0..j * d + c0 + hd]);
                        sum = sum + prow[j] * dp[j];
                        let pij = prow[j];
                        for (dvx, &g) in dv[j * d + c0..j * d + c0 + hd].iter_mut().zip(doi) {
                            *dvx = *dvx + pij * g;
                        }
                    }
                    for j in 0..=i {
                        let dsij = prow[j] * (dp[j] - sum) * scale_att;
                        for c in 0..hd {
                            dq[i * d + c0 + c] = dq[i * d + c0 + c] + dsij * la.k[j * d + c0 + c];
                            dk[j * d + c0 + c] = dk[j * d + c0 + c] + dsij * la.q[i * d + c0 + c];
                        }
                    }
                }
            }
            acc_at_b(&la.h1, &dq, t_len, d, d, &mut grad[ix.wq..ix.wq + d * d]);
            acc_at_b(&la.h1, &dk, t_len, d, d, &mut grad[ix.wk..ix.wk + d * d]);
            acc_at_b(&la.h1, &dv, t_len, d, d, &mut grad[ix.wv..ix.wv + d * d]);
            let mut dh1 = matmul_bt(&dq, self.w(ix.wq, d * d), t_len, d, d);
            add_into(&mut dh1, &matmul_bt(&dk, self.w(ix.wk, d * d), t_len, d, d));
            add_into(&mut dh1, &matmul_bt(&dv, self.w(ix.wv, d * d), t_len, d, d));
            let mut dgain = vec![F::zero(); d];
            let dx_norm = rmsnorm_back(&dh1, &la.x_in, &la.r1, self.w(ix.ln1, d), &mut dgain, d);
            add_into(&mut grad[ix.ln1..ix.ln1 + d], &dgain);
            dx = dxm;
            add_into(&mut dx, &dx_norm);
        }

        for (t, &tok) in tokens.iter().enumerate() {
            let g = &dx[t * d..(t + 1) * d];
            let te = ly.tok + tok as usize * d;
            add_into(&mut grad[te..te + d], g);
            let pe = ly.pos + t * d;
            add_into(&mut grad[pe..pe + d], g);
        }
        Ok(loss)
    }

    pub fn new_cache(&self) -> KvCache<F> {
        let n = self.cfg.layers;
        KvCache {
            k: vec![Vec::new(); n],
            v: vec![Vec::new(); n],
            len: 0,
        }
    }

    /// Feed one token and return the logits for the next position.
    pub fn step(&self, token: u32, cache: &mut KvCache<F>) -> Result<Vec<F>> {
        let cfg = &self.cfg;
        let pos = cache.len;
        if pos >= cfg.context {
            return Err(Error::Context {
                len: pos + 1,
                max: cfg.context,
            });
        }
        if token as usize >= cfg.vocab_size {
            return Err(Error::TokenRange {
                id: token,
                vocab_size: cfg.vocab_size,
            });
        }
        let (d, hid, nh) = (cfg.model_dim, cfg.hidden(), cfg.heads);
        let hd = d / nh;
        let scale = F::one() / F::of(hd as f64).sqrt();
        let eps = F::of(cfg.norm_eps);
        let ly = &self.layout;
        let mut x = self.w(ly.tok + token as usize * d, d).to_vec();
        add_into(&mut x, self.w(ly.pos + pos * d, d));
        let mut prow = vec![F::zero(); pos + 1];
        for (l, ix) in ly.layers.iter().enumerate() {
            let (h1, _) = rmsnorm(&x, self.w(ix.ln1, d), d, eps);
            let q = matmul(&h1, self.w(ix.wq, d * d), 1, d, d);
            cache.k[l].extend(matmul(&h1, self.w(ix.wk, d * d), 1, d, d));
            cache.v[l].extend(matmul(&h1, self.w(ix.wv, d * d), 1, d, d));
            let mut o = vec![F::zero(); d];
            for h in 0..nh {
                attend_row(
                    &q[h * hd..(h + 1) * hd],
                    &cache.k[l],
                    &cache.v[l],
                    d,
                    h * hd,
                    hd,
                    pos + 1,
                    scale,
                    &mut prow,
                    &mut o[h * hd..(h + 1) * hd],
                );
            }
            let mut x_mid = matmul(&o, self.w(ix.wo, d * d), 1, d, d);
            add_into(&mut x_mid, &x);
            let (h2, _) = rmsnorm(&x_mid, self.w(ix.ln2, d), d, eps);
            let a = matmul(&h2, self.w(ix.wg, d * hid), 1, d, hid);
            let b = matmul(&h2, self.w(ix.wu, d * hid), 1, d, hid);
            let s: Vec<F> = a.iter().zip(&b).map(|(&av, &bv)| av * sigmoid(av) * bv).collect();
            x = matmul(&s, self.w(ix.wd, hid * d), 1, hid, d);
            add_into(&mut x, &x_mid);
        }
        cache.len += 1;
        let hf = match ly.lnf {
            Some(off) => rmsnorm(&x, self.w(off, d), d, eps).0,
            None => x,
        };
        Ok(self.head_rows(&hf, &[0]))
    }

    /// Logits after the last token of `context`.
    pub fn last_logits(&self, context: &[u32]) -> Result<Vec<F>> {
        self.check_tokens(context)?;
        let mut cache = self.new_cache();
        let mut out = Err(Error::Contract("empty context".into()));
        for &t in context {
            out = self.step(t, &mut cache);
        }
        out
    }

    /// Greedy continuation of `prompt`, stopping after any token in `stop`,
    /// after `max_new` tokens, or at the context limit.
    pub fn generate_greedy(&self, prompt: &[u32], max_new: usize, stop: &[u32]) -> Result<Vec<u32>> {
        self.check_tokens(prompt)?;
        let mut cache = self.new_cache();
        let mut logits = Err(Error::Contract("empty prompt".into()));
        for &t in prompt {
            logits = self.step(t, &mut cache);
        }
        let mut logits = logits?;
        let mut out = Vec::new();
        while out.len() < max_new {
            let next = argmax(&logits);
            out.push(next);
            if stop.contains(&next) || cache.len + 1 >= self.cfg.context {
                break;
            }
            logits = self.step(next, &mut cache)?;
        }
        Ok(out)
    }
}

fn argmax<F: Real>(xs: &[F]) -> u32 {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best as u32
}

/// Causal attention for one query row of one head over the first `n` keys.
#[allow(clippy::too_many_arguments)]
fn attend_row<F: Real>(
    qi: &[F],
    k: &[F],
    v: &[F],
    d: usize,
    c0: usize,
    hd: usize,
    n: usize,
    scale: F,
    prow: &mut [F],
    out: &mut [F],
) {
    let mut max = F::neg_infinity();
    for j in 0..n {
        let s = dot(qi, &k[j * d + c0..j * d + c0 + hd]) * scale;
        prow[j] = s;
        if s > max {
            max = s;
        }
    }
    let mut z = F::zero();
    for pj in prow[..n].iter_mut() {
        *pj = (*pj - max).exp();
        z = z + *pj;
    }
    for pj in prow[..n].iter_mut() {
        *pj = *pj / z;
    }
    out.fill(F::zero());
    for j in 0..n {
        let pj = prow[j];
        for (o, &vv) in out.iter_mut().zip(&v[j * d + c0..j * d + c0 + hd]) {
            *o = *o + pj * vv;
        }
    }
}

impl<F: Real> Predictor for Transformer<F> {
    fn vocab_size(&self) -> usize {
        self.cfg.vocab_size
    }

    fn context_len(&self) -> usize {
        self.cfg.context
    }

    fn greedy(&self, prompt: &[u32], max_new: usize, stop: &[u32]) -> Result<Vec<u32>> {
        self.generate_greedy(prompt, max_new, stop)
    }

    /// Contexts usually share a long prompt, so its cache is built once.
    fn next_scores(&self, contexts: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        let Some(first) = contexts.first() else { return Ok(Vec::new()) };
        let min_len = contexts.iter().map(|c| c.len()).min().unwrap_or(0);
        if min_len == 0 {
            return Err(Error::Contract("empty context".into()));
        }
        let mut shared = min_len - 1;
        for c in contexts {
            shared = shared.min(first.iter().zip(c.iter()).take_while(|(a, b)| a == b).count());
        }
        let mut base = self.new_cache();
        for &t in &first[..shared] {
            self.step(t, &mut base)?;
        }
        contexts
            .par_iter()
            .map(|c| {
                let mut cache = base.clone();
                let mut logits = Vec::new();
                for &t in &c[shared..] {
                    logits = self.step(t, &mut cache)?;
                }
                Ok(logits.into_iter().map(|x| x.to_f64().unwrap()).collect())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::softmax;

    fn tiny() -> TransformerConfig {
        TransformerConfig {
            vocab_size: 13,
            layers: 2,
            model_dim: 8,
            heads: 2,
            ff_dim: 12,
            context: 10,
            ..TransformerConfig::default()
        }
    }

    #[test]
    fn batched_scores_match_full_passes() {
        let m = Transformer::<f64>::new(tiny(), 2).unwrap();
        let ctxs: [&[u32]; 4] = [&[1, 2, 3], &[1, 2, 3, 4], &[1, 2], &[1, 5, 6, 7]];
        let batched = m.next_scores(&ctxs).unwrap();
        for (c, row) in ctxs.iter().zip(&batched) {
            let full = m.logits(c).unwrap();
            let last = full.last().unwrap();
            assert!(row.iter().zip(last).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        assert!(m.next_scores(&[&[1], &[]]).is_err());
    }

    #[test]
    fn default_hidden_width() {
        assert_eq!(TransformerConfig::default().hidden(), 688);
    }

    #[test]
    fn config_errors() {
        let bad = TransformerConfig { heads: 3, ..tiny() };
        assert!(matches!(Transformer::<f32>::new(bad, 0), Err(Error::Config { field: "heads", .. })));
    }

    #[test]
    fn shapes_and_determinism() {
        let a = Transformer::<f32>::new(tiny(), 5).unwrap();
        let b = Transformer::<f32>::new(tiny(), 5).unwrap();
        assert!(a.params().iter().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let l = a.logits(&[1, 2, 3, 4]).unwrap();
        assert_eq!((l.len(), l[0].len()), (4, 13));
        let c = Transformer::<f32>::new(tiny(), 6).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn causality() {
        let m = Transformer::<f64>::new(tiny(), 1).unwrap();
        let x = m.logits(&[1, 2, 3, 4, 5]).unwrap();
        let y = m.logits(&[1, 2, 3, 9, 0]).unwrap();
        for i in 0..3 {
            assert_eq!(x[i], y[i]);
        }
        assert_ne!(x[3], y[3]);
    }

    #[test]
    fn incremental_matches_full_forward() {
        let m = Transformer::<f64>::new(tiny(), 2).unwrap();
        let toks = [3, 1, 4, 1, 5, 9];
        let full = m.logits(&toks).unwrap();
        let mut cache = m.new_cache();
        for (i, &t) in toks.iter().enumerate() {
            let step = m.step(t, &mut cache).unwrap();
            for (a, b) in step.iter().zip(&full[i]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let s = m.next_scores(&[&toks]).unwrap();
        assert!((softmax(&s[0]).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn context_limit() {
        let m = Transformer::<f32>::new(tiny(), 2).unwrap();
        assert!(matches!(m.logits(&[0; 11]), Err(Error::Context { len: 11, max: 10 })));
        let out = m.generate_greedy(&[1, 2], 100, &[]).unwrap();
        assert_eq!(out.len(), 8);
    }
}
