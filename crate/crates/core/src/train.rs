//! Small next-byte trainer for the toy model.
//!
//! Plain causal attention only (no intervention masks), full-batch backprop
//! written out by hand, Adam updates. Training works on a copy; the input
//! model is left as it was.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AaiError, Result};
use crate::harness::dataset::generate_dataset;
use crate::model::{gelu, Block, LayerNorm, Linear, Model, LN_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    /// Windows per step.
    pub batch: usize,
    /// Tokens per window (the targets are the following bytes).
    pub window: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch: 4,
            window: 64,
            learning_rate: 3e-3,
            clip: Some(1.0),
            seed: 0,
        }
    }
}

/// Text built from synthetic worlds: each record's context, question and
/// gold trace, separated by blank lines.
pub fn synthetic_corpus(depth: usize, width: usize, seed: u64, count: usize) -> Result<String> {
    let records = generate_dataset(depth, width, seed, count)?;
    let mut out = String::new();
    for r in records {
        let trace = r
            .meta
            .as_ref()
            .and_then(|m| m["gold_trace"].as_str())
            .unwrap_or_default();
        out.push_str(&format!("{}\n{}\n{}\n\n", r.context, r.question, trace));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per step.
    pub losses: Vec<f64>,
}

/// Trains a copy of `model` on random windows of `corpus`.
pub fn train(model: &Model, corpus: &[u32], cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    let max_seq = model.config().max_seq;
    if cfg.window == 0 || cfg.window > max_seq {
        return Err(AaiError::Config(format!(
            "window {} must be in 1..={max_seq}",
            cfg.window
        )));
    }
    if corpus.len() <= cfg.window {
        return Err(AaiError::EmptyInput(format!(
            "corpus of {} tokens is too short for windows of {}",
            corpus.len(),
            cfg.window
        )));
    }
    if cfg.batch == 0 {
        return Err(AaiError::Config("batch must be positive".into()));
    }
    let mut net = model.clone();
    let mut adam = Adam::new(&net, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut grads = Grads::zeros(&net);
        let mut loss = 0.0;
        for _ in 0..cfg.batch {
            let start = rng.gen_range(0..corpus.len() - cfg.window);
            let input = &corpus[start..start + cfg.window];
            let target = &corpus[start + 1..start + cfg.window + 1];
            loss += loss_and_grads(&net, input, target, &mut grads);
        }
        grads.scale(1.0 / cfg.batch as f64);
        if let Some(limit) = cfg.clip {
            let norm = grads.norm();
            if norm > limit {
                grads.scale(limit / norm);
            }
        }
        adam.step(&mut net, &grads);
        losses.push(loss / cfg.batch as f64);
    }
    Ok((net, TrainReport { losses }))
}

/// Mean next-token cross-entropy of `target` given `input`.
pub fn loss(model: &Model, input: &[u32], target: &[u32]) -> f64 {
    let cache = forward(model, input);
    cross_entropy(&cache.logits, target, model.config().vocab_size).0
}

/// Loss and its gradient, in the order of [`Model::parameters`].
pub fn gradient(model: &Model, input: &[u32], target: &[u32]) -> (f64, Vec<Vec<f64>>) {
    let mut g = Grads::zeros(model);
    let l = loss_and_grads(model, input, target, &mut g);
    (l, g.flat().into_iter().map(<[f64]>::to_vec).collect())
}

// dense helpers on row-major slices ------------------------------------------

/// `a (n x k) * b (k x m)`.
fn mm(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let x = a[i * k + p];
            if x != 0.0 {
                for (o, w) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                    *o += x * w;
                }
            }
        }
    }
    out
}

/// `acc += aᵀ (n x k)ᵀ * b (n x m)`.
fn mm_tn_acc(acc: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        for p in 0..k {
            let x = a[i * k + p];
            if x != 0.0 {
                for (o, w) in acc[p * m..(p + 1) * m].iter_mut().zip(&b[i * m..(i + 1) * m]) {
                    *o += x * w;
                }
            }
        }
    }
}

/// `a (n x m) * bᵀ` where `b` is `k x m`.
fn mm_nt(a: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let ar = &a[i * m..(i + 1) * m];
        for j in 0..k {
            out[i * k + j] = ar.iter().zip(&b[j * m..(j + 1) * m]).map(|(x, y)| x * y).sum();
        }
    }
    out
}

fn linear(x: &[f64], lin: &Linear, n: usize) -> Vec<f64> {
    let (k, m) = (lin.weight.rows(), lin.weight.cols());
    let mut out = mm(x, lin.weight.data(), n, k, m);
    for row in out.chunks_mut(m) {
        for (o, b) in row.iter_mut().zip(&lin.bias) {
            *o += b;
        }
    }
    out
}

struct NormCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn norm_forward(x: &[f64], ln: &LayerNorm, d: usize) -> (Vec<f64>, NormCache) {
    let n = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; n];
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = inv;
        for k in 0..d {
            let h = (row[k] - mean) * inv;
            xhat[r * d + k] = h;
            y[r * d + k] = h * ln.gain[k] + ln.bias[k];
        }
    }
    (y, NormCache { xhat, rstd })
}

fn norm_backward(dy: &[f64], c: &NormCache, ln: &LayerNorm, g: &mut NormGrad, d: usize) -> Vec<f64> {
    let n = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    for r in 0..n {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &c.xhat[r * d..(r + 1) * d];
        let mut dxhat = vec![0.0; d];
        for k in 0..d {
            g.gain[k] += dyr[k] * xh[k];
            g.bias[k] += dyr[k];
            dxhat[k] = dyr[k] * ln.gain[k];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for k in 0..d {
            dx[r * d + k] = c.rstd[r] * (dxhat[k] - mean_d - xh[k] * mean_dx);
        }
    }
    dx
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044_715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044_715 * x * x)
}

// forward with saved activations -------------------------------------------

struct LayerCache {
    x_in: Vec<f64>,
    n1: NormCache,
    z1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Per head `n x n` attention weights.
    attn: Vec<Vec<f64>>,
    ctx: Vec<f64>,
    n2: NormCache,
    z2: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    nf: NormCache,
    zf: Vec<f64>,
    logits: Vec<f64>,
}

fn forward(model: &Model, tokens: &[u32]) -> ForwardCache {
    let cfg = model.config();
    let (n, d, hd) = (tokens.len(), cfg.model_dim, cfg.head_dim);
    let scale = 1.0 / (hd as f64).sqrt();
    let mut x = vec![0.0; n * d];
    for (r, &t) in tokens.iter().enumerate() {
        let tok = model.token_embedding().row(t as usize);
        let pos = model.position_embedding().row(r);
        for k in 0..d {
            x[r * d + k] = tok[k] + pos[k];
        }
    }
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for b in model.blocks() {
        let x_in = x.clone();
        let (z1, n1) = norm_forward(&x, &b.ln_attn, d);
        let q = linear(&z1, &b.query, n);
        let k = linear(&z1, &b.key, n);
        let v = linear(&z1, &b.value, n);
        let mut ctx = vec![0.0; n * d];
        let mut attn = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let off = h * hd;
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                let qi = &q[i * d + off..i * d + off + hd];
                let row = &mut a[i * n..(i + 1) * n];
                let mut max = f64::NEG_INFINITY;
                for j in 0..=i {
                    let kj = &k[j * d + off..j * d + off + hd];
                    row[j] = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                    max = max.max(row[j]);
                }
                let mut sum = 0.0;
                for s in &mut row[..=i] {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                for s in &mut row[..=i] {
                    *s /= sum;
                }
                for j in 0..=i {
                    let w = row[j];
                    for c in 0..hd {
                        ctx[i * d + off + c] += w * v[j * d + off + c];
                    }
                }
            }
            attn.push(a);
        }
        let out = linear(&ctx, &b.output, n);
        for (xv, o) in x.iter_mut().zip(&out) {
            *xv += o;
        }
        let (z2, n2) = norm_forward(&x, &b.ln_ffn, d);
        let pre = linear(&z2, &b.ffn_in, n);
        let act: Vec<f64> = pre.iter().map(|&p| gelu(p)).collect();
        let ff = linear(&act, &b.ffn_out, n);
        for (xv, o) in x.iter_mut().zip(&ff) {
            *xv += o;
        }
        layers.push(LayerCache {
            x_in,
            n1,
            z1,
            q,
            k,
            v,
            attn,
            ctx,
            n2,
            z2,
            pre,
            act,
        });
    }
    let (zf, nf) = norm_forward(&x, model.final_norm(), d);
    let logits = linear(&zf, model.unembed(), n);
    ForwardCache { layers, nf, zf, logits }
}

/// Mean cross-entropy and its gradient with respect to the logits.
fn cross_entropy(logits: &[f64], target: &[u32], vocab: usize) -> (f64, Vec<f64>) {
    let n = target.len();
    let mut loss = 0.0;
    let mut dl = vec![0.0; logits.len()];
    for (r, &t) in target.iter().enumerate() {
        let row = &logits[r * vocab..(r + 1) * vocab];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[t as usize];
        for (c, v) in row.iter().enumerate() {
            dl[r * vocab + c] = (v - log_z).exp() / n as f64;
        }
        dl[r * vocab + t as usize] -= 1.0 / n as f64;
    }
    (loss / n as f64, dl)
}

// gradients ----------------------------------------------------------------

struct NormGrad {
    gain: Vec<f64>,
    bias: Vec<f64>,
}

struct LinGrad {
    weight: Vec<f64>,
    bias: Vec<f64>,
}

struct BlockGrad {
    ln_attn: NormGrad,
    query: LinGrad,
    key: LinGrad,
    value: LinGrad,
    output: LinGrad,
    ln_ffn: NormGrad,
    ffn_in: LinGrad,
    ffn_out: LinGrad,
}

struct Grads {
    token_embedding: Vec<f64>,
    position_embedding: Vec<f64>,
    blocks: Vec<BlockGrad>,
    final_norm: NormGrad,
    unembed: LinGrad,
}

fn zeros_like_norm(ln: &LayerNorm) -> NormGrad {
    NormGrad {
        gain: vec![0.0; ln.gain.len()],
        bias: vec![0.0; ln.bias.len()],
    }
}

fn zeros_like_linear(l: &Linear) -> LinGrad {
    LinGrad {
        weight: vec![0.0; l.weight.data().len()],
        bias: vec![0.0; l.bias.len()],
    }
}

fn zeros_like_block(b: &Block) -> BlockGrad {
    BlockGrad {
        ln_attn: zeros_like_norm(&b.ln_attn),
        query: zeros_like_linear(&b.query),
        key: zeros_like_linear(&b.key),
        value: zeros_like_linear(&b.value),
        output: zeros_like_linear(&b.output),
        ln_ffn: zeros_like_norm(&b.ln_ffn),
        ffn_in: zeros_like_linear(&b.ffn_in),
        ffn_out: zeros_like_linear(&b.ffn_out),
    }
}

impl Grads {
    fn zeros(model: &Model) -> Self {
        Self {
            token_embedding: vec![0.0; model.token_embedding().data().len()],
            position_embedding: vec![0.0; model.position_embedding().data().len()],
            blocks: model.blocks().iter().map(zeros_like_block).collect(),
            final_norm: zeros_like_norm(model.final_norm()),
            unembed: zeros_like_linear(model.unembed()),
        }
    }

    /// Same order as `Model::parameters`.
    fn flat(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.token_embedding, &self.position_embedding];
        for b in &self.blocks {
            out.push(&b.ln_attn.gain);
            out.push(&b.ln_attn.bias);
            for l in [&b.query, &b.key, &b.value, &b.output] {
                out.push(&l.weight);
                out.push(&l.bias);
            }
            out.push(&b.ln_ffn.gain);
            out.push(&b.ln_ffn.bias);
            for l in [&b.ffn_in, &b.ffn_out] {
                out.push(&l.weight);
                out.push(&l.bias);
            }
        }
        out.push(&self.final_norm.gain);
        out.push(&self.final_norm.bias);
        out.push(&self.unembed.weight);
        out.push(&self.unembed.bias);
        out
    }

    fn norm(&self) -> f64 {
        self.flat().iter().flat_map(|p| p.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    fn scale(&mut self, s: f64) {
        let scale_all = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x *= s);
        scale_all(&mut self.token_embedding);
        scale_all(&mut self.position_embedding);
        for b in &mut self.blocks {
            for n in [&mut b.ln_attn, &mut b.ln_ffn] {
                scale_all(&mut n.gain);
                scale_all(&mut n.bias);
            }
            for l in [&mut b.query, &mut b.key, &mut b.value, &mut b.output, &mut b.ffn_in, &mut b.ffn_out] {
                scale_all(&mut l.weight);
                scale_all(&mut l.bias);
            }
        }
        scale_all(&mut self.final_norm.gain);
        scale_all(&mut self.final_norm.bias);
        scale_all(&mut self.unembed.weight);
        scale_all(&mut self.unembed.bias);
    }
}

/// Backprop through a linear map; returns the input gradient.
fn linear_backward(x: &[f64], dy: &[f64], lin: &Linear, g: &mut LinGrad, n: usize) -> Vec<f64> {
    let (k, m) = (lin.weight.rows(), lin.weight.cols());
    mm_tn_acc(&mut g.weight, x, dy, n, k, m);
    for row in dy.chunks(m) {
        for (b, v) in g.bias.iter_mut().zip(row) {
            *b += v;
        }
    }
    mm_nt(dy, lin.weight.data(), n, m, k)
}

fn loss_and_grads(model: &Model, input: &[u32], target: &[u32], g: &mut Grads) -> f64 {
    let cfg = model.config();
    let (n, d, hd) = (input.len(), cfg.model_dim, cfg.head_dim);
    let scale = 1.0 / (hd as f64).sqrt();
    let cache = forward(model, input);
    let (loss, dlogits) = cross_entropy(&cache.logits, target, cfg.vocab_size);

    let dzf = linear_backward(&cache.zf, &dlogits, model.unembed(), &mut g.unembed, n);
    let mut dx = norm_backward(&dzf, &cache.nf, model.final_norm(), &mut g.final_norm, d);

    for (l, b) in model.blocks().iter().enumerate().rev() {
        let c = &cache.layers[l];
        let bg = &mut g.blocks[l];

        // feed-forward
        let dact = linear_backward(&c.act, &dx, &b.ffn_out, &mut bg.ffn_out, n);
        let dpre: Vec<f64> = dact.iter().zip(&c.pre).map(|(g, p)| g * gelu_grad(*p)).collect();
        let dz2 = linear_backward(&c.z2, &dpre, &b.ffn_in, &mut bg.ffn_in, n);
        let dmid = norm_backward(&dz2, &c.n2, &b.ln_ffn, &mut bg.ln_ffn, d);
        for (a, v) in dx.iter_mut().zip(&dmid) {
            *a += v;
        }

        // attention
        let dctx = linear_backward(&c.ctx, &dx, &b.output, &mut bg.output, n);
        let (mut dq, mut dk, mut dv) = (vec![0.0; n * d], vec![0.0; n * d], vec![0.0; n * d]);
        for h in 0..cfg.num_heads {
            let off = h * hd;
            let a = &c.attn[h];
            for i in 0..n {
                let dci = &dctx[i * d + off..i * d + off + hd];
                let mut da = vec![0.0; i + 1];
                for j in 0..=i {
                    let vj = &c.v[j * d + off..j * d + off + hd];
                    da[j] = dci.iter().zip(vj).map(|(x, y)| x * y).sum();
                    let w = a[i * n + j];
                    for t in 0..hd {
                        dv[j * d + off + t] += w * dci[t];
                    }
                }
                let dot: f64 = (0..=i).map(|j| da[j] * a[i * n + j]).sum();
                for j in 0..=i {
                    let ds = a[i * n + j] * (da[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for t in 0..hd {
                        dq[i * d + off + t] += ds * c.k[j * d + off + t];
                        dk[j * d + off + t] += ds * c.q[i * d + off + t];
                    }
                }
            }
        }
        let mut dz1 = linear_backward(&c.z1, &dq, &b.query, &mut bg.query, n);
        for (lin, grad, dy) in [(&b.key, &mut bg.key, &dk), (&b.value, &mut bg.value, &dv)] {
            let part = linear_backward(&c.z1, dy, lin, grad, n);
            for (a, v) in dz1.iter_mut().zip(&part) {
                *a += v;
            }
        }
        let din = norm_backward(&dz1, &c.n1, &b.ln_attn, &mut bg.ln_attn, d);
        for (a, v) in dx.iter_mut().zip(&din) {
            *a += v;
        }
        debug_assert_eq!(c.x_in.len(), dx.len());
    }

    for (r, &t) in input.iter().enumerate() {
        let row = &dx[r * d..(r + 1) * d];
        let t = t as usize;
        for k in 0..d {
            g.token_embedding[t * d + k] += row[k];
            g.position_embedding[r * d + k] += row[k];
        }
    }
    loss
}

// optimizer ----------------------------------------------------------------

struct Adam {
    lr: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &Model, lr: f64) -> Self {
        let shapes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
        Self {
            lr,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn step(&mut self, model: &mut Model, grads: &Grads) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in model
            .parameters_mut()
            .into_iter()
            .zip(grads.flat())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}
