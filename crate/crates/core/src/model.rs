//! Seeded byte-level decoder-only transformer.
//!
//! Pre-norm blocks, learned absolute positions, GELU feed-forward, a final
//! layer norm and a separate unembedding. Attention in every head goes
//! through [`compose_final`], so a [`HeadMaskPlan`] decides which heads see the
//! reference masks during prefill.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AaiError, Result};
use crate::kernel::{attend, masked_softmax, scaled_dot_product, Matrix};
use crate::mask::{compose_final, reweight_value, HeadMaskPlan};
use crate::rules::{annotate_rules, build_pair_sets, tokenize, PairKind, Token, EOS_TOKEN};
use crate::trace::{AttentionTrace, TraceMeta};

/// Layer-norm epsilon.
pub const LN_EPS: f64 = 1e-5;

/// Architecture and seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub head_dim: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            num_heads: 4,
            model_dim: 64,
            head_dim: 16,
            vocab_size: 258,
            max_seq: 2048,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.num_heads == 0 || self.head_dim == 0 {
            return Err(AaiError::Config(
                "num_layers, num_heads and head_dim must be positive".into(),
            ));
        }
        if self.model_dim != self.num_heads * self.head_dim {
            return Err(AaiError::Config(format!(
                "model_dim {} != num_heads {} x head_dim {}",
                self.model_dim, self.num_heads, self.head_dim
            )));
        }
        if self.vocab_size == 0 || self.max_seq == 0 {
            return Err(AaiError::Config("vocab_size and max_seq must be positive".into()));
        }
        Ok(())
    }

    /// Hidden width of the feed-forward sublayer.
    pub fn ffn_dim(&self) -> usize {
        4 * self.model_dim
    }
}

/// Gain and bias of a layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    fn identity(dim: usize) -> Self {
        Self {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }

    /// Normalizes every row of `x`.
    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..x.rows() {
            layer_norm_row(x.row(i), &self.gain, &self.bias, out.row_mut(i));
        }
        out
    }
}

pub(crate) fn layer_norm_row(x: &[f64], gain: &[f64], bias: &[f64], out: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    for (k, o) in out.iter_mut().enumerate() {
        *o = (x[k] - mean) * inv * gain[k] + bias[k];
    }
}

/// Affine map `x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul(&self.weight)?;
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
        Ok(out)
    }
}

/// One pre-norm decoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln_attn: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub ln_ffn: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// Model weights. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    token_embedding: Matrix,
    position_embedding: Matrix,
    blocks: Vec<Block>,
    final_norm: LayerNorm,
    unembed: Linear,
}

/// Builds a model with weights drawn from a ChaCha stream seeded by `cfg.seed`.
pub fn init_model(cfg: &ModelConfig) -> Result<Model> {
    Model::new(cfg.clone())
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn matrix(&mut self, rows: usize, cols: usize, std: f64) -> Matrix {
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..rows * cols).map(|_| normal.sample(&mut self.rng)).collect();
        Matrix::new(rows, cols, data).expect("sized")
    }

    fn linear(&mut self, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            weight: self.matrix(fan_in, fan_out, 1.0 / (fan_in as f64).sqrt()),
            bias: vec![0.0; fan_out],
        }
    }
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };
        let token_embedding = init.matrix(config.vocab_size, d, 1.0);
        let position_embedding = init.matrix(config.max_seq, d, 1.0);
        let blocks = (0..config.num_layers)
            .map(|_| Block {
                ln_attn: LayerNorm::identity(d),
                query: init.linear(d, d),
                key: init.linear(d, d),
                value: init.linear(d, d),
                output: init.linear(d, d),
                ln_ffn: LayerNorm::identity(d),
                ffn_in: init.linear(d, config.ffn_dim()),
                ffn_out: init.linear(config.ffn_dim(), d),
            })
            .collect();
        let final_norm = LayerNorm::identity(d);
        let unembed = init.linear(d, config.vocab_size);
        Ok(Self {
            config,
            token_embedding,
            position_embedding,
            blocks,
            final_norm,
            unembed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn token_embedding(&self) -> &Matrix {
        &self.token_embedding
    }

    pub fn position_embedding(&self) -> &Matrix {
        &self.position_embedding
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn final_norm(&self) -> &LayerNorm {
        &self.final_norm
    }

    pub fn unembed(&self) -> &Linear {
        &self.unembed
    }

    /// Every parameter in a fixed order.
    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.token_embedding.data(), self.position_embedding.data()];
        for b in &self.blocks {
            out.push(&b.ln_attn.gain);
            out.push(&b.ln_attn.bias);
            for lin in [&b.query, &b.key, &b.value, &b.output] {
                out.push(lin.weight.data());
                out.push(&lin.bias);
            }
            out.push(&b.ln_ffn.gain);
            out.push(&b.ln_ffn.bias);
            for lin in [&b.ffn_in, &b.ffn_out] {
                out.push(lin.weight.data());
                out.push(&lin.bias);
            }
        }
        out.push(&self.final_norm.gain);
        out.push(&self.final_norm.bias);
        out.push(self.unembed.weight.data());
        out.push(&self.unembed.bias);
        out
    }

    /// Mutable view in the order of [`Model::parameters`]. Only the trainer
    /// uses it, on its own copy.
    pub(crate) fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.token_embedding.data_mut(), self.position_embedding.data_mut()];
        for b in &mut self.blocks {
            out.push(&mut b.ln_attn.gain);
            out.push(&mut b.ln_attn.bias);
            for lin in [&mut b.query, &mut b.key, &mut b.value, &mut b.output] {
                out.push(lin.weight.data_mut());
                out.push(&mut lin.bias);
            }
            out.push(&mut b.ln_ffn.gain);
            out.push(&mut b.ln_ffn.bias);
            for lin in [&mut b.ffn_in, &mut b.ffn_out] {
                out.push(lin.weight.data_mut());
                out.push(&mut lin.bias);
            }
        }
        out.push(&mut self.final_norm.gain);
        out.push(&mut self.final_norm.bias);
        out.push(self.unembed.weight.data_mut());
        out.push(&mut self.unembed.bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// SHA-256 over the little-endian bits of every parameter, hex encoded.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for p in self.parameters() {
            for v in p {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Full forward pass over `tokens` with the plan's masks.
    ///
    /// The trace holds post-mask weights and pre-mask scores of every head.
    pub fn prefill(&self, tokens: &[u32], plan: &HeadMaskPlan) -> Result<PrefillOutput> {
        self.run_prefill(tokens, plan, true)
    }

    /// Logits for every prompt position under `plan`, without a trace.
    pub fn logits(&self, tokens: &[u32], plan: &HeadMaskPlan) -> Result<Matrix> {
        Ok(self.run_prefill(tokens, plan, false)?.logits)
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(AaiError::EmptyInput("token sequence is empty".into()));
        }
        if tokens.len() > self.config.max_seq {
            return Err(AaiError::Length {
                len: tokens.len(),
                max: self.config.max_seq,
            });
        }
        if let Some(bad) = tokens.iter().find(|t| **t as usize >= self.config.vocab_size) {
            return Err(AaiError::Config(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn run_prefill(&self, tokens: &[u32], plan: &HeadMaskPlan, capture: bool) -> Result<PrefillOutput> {
        self.check_tokens(tokens)?;
        let cfg = &self.config;
        let mut cache = KvCache::new(cfg);
        let mut trace = capture.then(|| {
            let surfaces = tokens.iter().map(|&id| token_surface(id)).collect();
            AttentionTrace::new(TraceMeta::new(cfg.num_layers, cfg.num_heads, tokens.len(), surfaces))
        });
        let mut step = StepMasks::Prefill {
            plan,
            record_medians: !plan.prefill_only,
        };
        let (hidden, logits) = self.forward(tokens, &mut cache, &mut step, trace.as_mut())?;
        cache.tokens = tokens.to_vec();
        Ok(PrefillOutput {
            hidden,
            logits,
            trace,
            cache,
        })
    }

    /// Runs `tokens` as the next positions after whatever `cache` holds.
    fn forward(
        &self,
        tokens: &[u32],
        cache: &mut KvCache,
        masks: &mut StepMasks<'_>,
        mut trace: Option<&mut AttentionTrace>,
    ) -> Result<(Matrix, Matrix)> {
        let cfg = &self.config;
        let d = cfg.model_dim;
        let hd = cfg.head_dim;
        let start = cache.len;
        let n = tokens.len();
        let total = start + n;

        let mut x = Matrix::zeros(n, d);
        for (r, &id) in tokens.iter().enumerate() {
            let tok = self.token_embedding.row(id as usize);
            let pos = self.position_embedding.row(start + r);
            for (o, (a, b)) in x.row_mut(r).iter_mut().zip(tok.iter().zip(pos)) {
                *o = a + b;
            }
        }

        for (l, block) in self.blocks.iter().enumerate() {
            let z = block.ln_attn.apply(&x);
            let q = block.query.apply(&z)?;
            let k = block.key.apply(&z)?;
            let v = block.value.apply(&z)?;
            let mut heads_out = Matrix::zeros(n, d);
            for h in 0..cfg.num_heads {
                let slot = &mut cache.heads[l * cfg.num_heads + h];
                for r in 0..n {
                    slot.keys.extend_from_slice(&k.row(r)[h * hd..(h + 1) * hd]);
                    slot.values.extend_from_slice(&v.row(r)[h * hd..(h + 1) * hd]);
                }
                let keys = Matrix::new(total, hd, slot.keys.clone())?;
                let values = Matrix::new(total, hd, slot.values.clone())?;
                let qh = q.column_block(h * hd, hd)?;
                let scores = scaled_dot_product(&qh, &keys, hd)?;
                let mask = masks.mask(&scores, l, h, start, &mut slot.boost)?;
                let weights = masked_softmax(&scores, &mask)?;
                let out = attend(&weights, &values)?;
                for r in 0..n {
                    heads_out.row_mut(r)[h * hd..(h + 1) * hd].copy_from_slice(out.row(r));
                }
                if let Some(t) = trace.as_deref_mut() {
                    t.insert(l, h, weights, Some(scores));
                }
            }
            let attn = block.output.apply(&heads_out)?;
            x = x.add(&attn)?;

            let z = block.ln_ffn.apply(&x);
            let mut hidden = block.ffn_in.apply(&z)?;
            for i in 0..hidden.rows() {
                for v in hidden.row_mut(i) {
                    *v = gelu(*v);
                }
            }
            let ff = block.ffn_out.apply(&hidden)?;
            x = x.add(&ff)?;
        }
        cache.len = total;

        let hidden = self.final_norm.apply(&x);
        let logits = self.unembed.apply(&hidden)?;
        Ok((hidden, logits))
    }

    /// Greedy generation after an intervened prefill.
    ///
    /// Decoding reuses the prefill keys and values. With `plan.prefill_only`
    /// every decode step is plain causal attention. Otherwise selected heads
    /// also get reference masks on each new query row, found by re-annotating
    /// prompt plus generated text and boosted by the prefill median of that
    /// head. Generation stops before emitting a token in `stop`.
    pub fn greedy_decode(
        &self,
        prompt: &[u32],
        plan: &HeadMaskPlan,
        max_new: usize,
        stop: &BTreeSet<u32>,
    ) -> Result<Vec<u32>> {
        if prompt.len() + max_new > self.config.max_seq {
            return Err(AaiError::Length {
                len: prompt.len() + max_new,
                max: self.config.max_seq,
            });
        }
        if max_new == 0 {
            return Ok(Vec::new());
        }
        let pre = self.run_prefill(prompt, plan, false)?;
        let mut cache = pre.cache;
        let mut next = argmax(pre.logits.row(pre.logits.rows() - 1));
        let mut generated = Vec::new();
        loop {
            if stop.contains(&next) {
                break;
            }
            generated.push(next);
            cache.tokens.push(next);
            if generated.len() == max_new {
                break;
            }
            let context = cache.tokens.clone();
            let mut step = StepMasks::Decode {
                plan,
                context: &context,
            };
            let (_, logits) = self.forward(&[next], &mut cache, &mut step, None)?;
            next = argmax(logits.row(0));
        }
        Ok(generated)
    }
}

/// Index of the largest logit; ties go to the lowest id.
pub fn argmax(logits: &[f64]) -> u32 {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Printable form of a token id.
pub fn token_surface(id: u32) -> String {
    Token { id, start: 0, end: 0 }.surface()
}

/// Byte-level token ids of `text`.
pub fn encode(text: &str) -> Vec<u32> {
    text.bytes().map(u32::from).collect()
}

/// Default stop set: the end-of-sequence token.
pub fn default_stop() -> BTreeSet<u32> {
    BTreeSet::from([EOS_TOKEN])
}

/// Result of a prefill pass.
#[derive(Debug, Clone)]
pub struct PrefillOutput {
    /// Final-norm hidden states, one row per position.
    pub hidden: Matrix,
    /// Next-token logits for every position.
    pub logits: Matrix,
    pub trace: Option<AttentionTrace>,
    pub cache: KvCache,
}

impl PrefillOutput {
    pub fn trace(&self) -> &AttentionTrace {
        self.trace.as_ref().expect("prefill always captures a trace")
    }
}

#[derive(Debug, Clone, Default)]
struct HeadCache {
    keys: Vec<f64>,
    values: Vec<f64>,
    /// `c * median(S) + b` from the prefill, when recorded.
    boost: Option<f64>,
}

/// Keys and values of every head for the positions processed so far.
#[derive(Debug, Clone, Default)]
pub struct KvCache {
    heads: Vec<HeadCache>,
    len: usize,
    tokens: Vec<u32>,
}

impl KvCache {
    fn new(cfg: &ModelConfig) -> Self {
        Self {
            heads: vec![HeadCache::default(); cfg.num_layers * cfg.num_heads],
            len: 0,
            tokens: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

enum StepMasks<'a> {
    Prefill {
        plan: &'a HeadMaskPlan,
        record_medians: bool,
    },
    Decode {
        plan: &'a HeadMaskPlan,
        context: &'a [u32],
    },
}

impl StepMasks<'_> {
    fn mask(
        &mut self,
        scores: &Matrix,
        layer: usize,
        head: usize,
        start: usize,
        boost: &mut Option<f64>,
    ) -> Result<Matrix> {
        match self {
            StepMasks::Prefill { plan, record_medians } => {
                if *record_medians && plan.is_selected(layer, head) {
                    *boost = Some(reweight_value(scores, &plan.params)?);
                }
                compose_final(scores, plan, layer, head, scores.rows())
            }
            StepMasks::Decode { plan, context } => {
                // one new query at position `start`, keys 0..=start
                let mut mask = Matrix::zeros(1, scores.cols());
                if plan.prefill_only || !plan.is_selected(layer, head) {
                    return Ok(mask);
                }
                let Some(value) = *boost else {
                    return Ok(mask);
                };
                let pairs = decode_pairs(context, plan)?;
                for (key, kind) in pairs.row(start) {
                    mask.set(
                        0,
                        key,
                        match kind {
                            PairKind::Ref => value,
                            PairKind::NoRef => f64::NEG_INFINITY,
                        },
                    );
                }
                Ok(mask)
            }
        }
    }
}

/// Pair sets for a generated context. Non-ASCII bytes and specials become
/// `?` so byte offsets stay aligned with positions.
fn decode_pairs(context: &[u32], plan: &HeadMaskPlan) -> Result<crate::rules::ReferencePairSets> {
    let text: String = context
        .iter()
        .map(|&id| if id < 128 { id as u8 as char } else { '?' })
        .collect();
    let seq = annotate_rules(&text, &tokenize(&text))?;
    Ok(build_pair_sets(&seq, plan.pair_options))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::HeadId;
    use crate::rules::ReferencePairSets;

    fn small() -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            num_heads: 2,
            model_dim: 8,
            head_dim: 4,
            vocab_size: 258,
            max_seq: 64,
            seed: 7,
        }
    }

    #[test]
    fn config_checks() {
        let mut cfg = small();
        cfg.model_dim = 9;
        assert!(matches!(Model::new(cfg), Err(AaiError::Config(_))));
        assert!(Model::new(ModelConfig::default()).is_ok());
    }

    #[test]
    fn seeds_control_weights() {
        let a = Model::new(small()).unwrap();
        let b = Model::new(small()).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        let c = Model::new(ModelConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn trace_is_complete_and_stochastic() {
        let m = Model::new(small()).unwrap();
        let out = m.prefill(&encode("hello there"), &HeadMaskPlan::baseline()).unwrap();
        out.trace().validate(1e-9).unwrap();
        assert_eq!(out.logits.rows(), 11);
        assert_eq!(out.logits.cols(), 258);
    }

    #[test]
    fn length_and_vocab_errors() {
        let m = Model::new(small()).unwrap();
        let long = vec![1u32; 65];
        assert!(matches!(
            m.prefill(&long, &HeadMaskPlan::baseline()),
            Err(AaiError::Length { .. })
        ));
        assert!(m.prefill(&[300], &HeadMaskPlan::baseline()).is_err());
        assert!(matches!(
            m.greedy_decode(&[1; 60], &HeadMaskPlan::baseline(), 5, &default_stop()),
            Err(AaiError::Length { .. })
        ));
        assert!(m
            .greedy_decode(&[1; 4], &HeadMaskPlan::baseline(), 0, &default_stop())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn cached_decode_matches_full_recompute() {
        let m = Model::new(small()).unwrap();
        let prompt = encode("abcab");
        let plan = HeadMaskPlan::baseline();
        let out = m.greedy_decode(&prompt, &plan, 6, &BTreeSet::new()).unwrap();
        let mut seq = prompt.clone();
        for _ in 0..6 {
            let logits = m.logits(&seq, &plan).unwrap();
            seq.push(argmax(logits.row(logits.rows() - 1)));
        }
        assert_eq!(&seq[prompt.len()..], &out[..]);
    }

    #[test]
    fn suppressed_pair_gets_zero_weight() {
        let m = Model::new(small()).unwrap();
        let mut pairs = ReferencePairSets::default();
        pairs.noref_pairs.insert((5, 2));
        let plan = HeadMaskPlan::new(BTreeSet::from([HeadId::new(1, 0)]), pairs, Default::default());
        let out = m.prefill(&encode("abcdefgh"), &plan).unwrap();
        assert_eq!(out.trace().weights(1, 0).unwrap().get(5, 2), 0.0);
        assert!(out.trace().weights(1, 1).unwrap().get(5, 2) > 0.0);
    }

    #[test]
    fn argmax_prefers_lowest_id() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0; 4]), 0);
    }
}
