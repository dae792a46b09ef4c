//! Helpers shared by the integration tests: a naive reference forward pass
//! and seeded generators.

#![allow(dead_code)]

use std::path::PathBuf;

use aai::kernel::Matrix;
use aai::model::{Linear, Model};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join(rel)
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixture(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

fn linear(x: &[Vec<f64>], l: &Linear) -> Vec<Vec<f64>> {
    let w = &l.weight;
    x.iter()
        .map(|row| {
            (0..w.cols())
                .map(|o| {
                    let mut acc = l.bias[o];
                    for (k, xv) in row.iter().enumerate() {
                        acc += xv * w.get(k, o);
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn norm(x: &[Vec<f64>], gain: &[f64], bias: &[f64]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(k, v)| (v - mean) / (var + 1e-5).sqrt() * gain[k] + bias[k])
                .collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Output of the reference pass: logits plus per-(layer, head) weights.
pub struct Reference {
    pub logits: Vec<Vec<f64>>,
    pub weights: Vec<Vec<Vec<f64>>>,
}

/// Causal forward pass written with plain loops over nested vectors.
/// `extra_mask(layer, head, raw)` may return a matrix added to the raw causal
/// scores of that head (`-inf` above the diagonal).
pub fn reference_forward(
    model: &Model,
    tokens: &[u32],
    extra_mask: impl Fn(usize, usize, &[Vec<f64>]) -> Option<Vec<Vec<f64>>>,
) -> Reference {
    let cfg = model.config();
    let (n, hd) = (tokens.len(), cfg.head_dim);
    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(p, &t)| {
            (0..cfg.model_dim)
                .map(|k| model.token_embedding().get(t as usize, k) + model.position_embedding().get(p, k))
                .collect()
        })
        .collect();
    let mut all_weights = Vec::new();
    for (l, b) in model.blocks().iter().enumerate() {
        let z = norm(&x, &b.ln_attn.gain, &b.ln_attn.bias);
        let (q, k, v) = (linear(&z, &b.query), linear(&z, &b.key), linear(&z, &b.value));
        let mut concat = vec![vec![0.0; cfg.model_dim]; n];
        for h in 0..cfg.num_heads {
            let off = h * hd;
            let mut raw = vec![vec![f64::NEG_INFINITY; n]; n];
            for i in 0..n {
                for j in 0..=i {
                    let dot: f64 = (0..hd).map(|c| q[i][off + c] * k[j][off + c]).sum();
                    raw[i][j] = dot / (hd as f64).sqrt();
                }
            }
            let extra = extra_mask(l, h, &raw);
            let mut w = vec![vec![0.0; n]; n];
            for i in 0..n {
                let mut s = raw[i].clone();
                if let Some(e) = &extra {
                    for j in 0..n {
                        s[j] += e[i][j];
                    }
                }
                let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|v| if *v == f64::NEG_INFINITY { 0.0 } else { (v - m).exp() }).collect();
                let z: f64 = e.iter().sum();
                for j in 0..n {
                    w[i][j] = e[j] / z;
                }
                for c in 0..hd {
                    concat[i][off + c] = (0..n).map(|j| w[i][j] * v[j][off + c]).sum();
                }
            }
            all_weights.push(w);
        }
        let attn = linear(&concat, &b.output);
        for i in 0..n {
            for c in 0..cfg.model_dim {
                x[i][c] += attn[i][c];
            }
        }
        let z = norm(&x, &b.ln_ffn.gain, &b.ln_ffn.bias);
        let hidden: Vec<Vec<f64>> = linear(&z, &b.ffn_in)
            .into_iter()
            .map(|r| r.into_iter().map(gelu).collect())
            .collect();
        let ff = linear(&hidden, &b.ffn_out);
        for i in 0..n {
            for c in 0..cfg.model_dim {
                x[i][c] += ff[i][c];
            }
        }
    }
    let fin = model.final_norm();
    let z = norm(&x, &fin.gain, &fin.bias);
    Reference {
        logits: linear(&z, model.unembed()),
        weights: all_weights,
    }
}

pub fn max_abs_diff(a: &Matrix, b: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, row) in b.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((a.get(i, j) - v).abs());
        }
    }
    worst
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

const WORDS: [&str; 12] = [
    "Anne", "is", "red", "big", "KB", "=>", "F(", "not", "the", "cat", "Rule", "sees",
];

/// A prompt with one or more blocks of tagged rules, free-text mentions of
/// defined and undefined rule ids, and filler.
pub fn fuzz_prompt(rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    let blocks = rng.gen_range(1..=3);
    for b in 0..blocks {
        if b > 0 {
            out.push_str("\n-------\n");
        }
        let mut ids: Vec<u32> = (1..=rng.gen_range(1..=6)).collect();
        ids.shuffle(rng);
        if rng.gen_bool(0.3) {
            out.push_str("Preamble Rule2 text.\n");
        }
        for id in &ids {
            let words = rng.gen_range(0..6);
            let body: Vec<&str> = (0..words).map(|_| *WORDS.choose(rng).unwrap()).collect();
            out.push_str(&format!("# (Rule{id}): {}\n", body.join(" ")));
        }
        for _ in 0..rng.gen_range(0..5) {
            let id = rng.gen_range(0..9);
            let sep = *["", " ", "(", ", "].choose(rng).unwrap();
            out.push_str(&format!("=>{sep}Rule{id} {}", WORDS.choose(rng).unwrap()));
            if rng.gen_bool(0.5) {
                out.push('\n');
            }
        }
        out.push_str("\n# (Answer):");
    }
    out
}
