//! Classify hand-built attention maps, then every head of a seeded toy model.
//!
//! cargo run --example head_analysis

use aai::heads::{analyze_head, analyze_model, binarize, directional_scores, Orientation, SelectionThresholds};
use aai::kernel::Matrix;
use aai::mask::HeadMaskPlan;
use aai::model::{encode, Model, ModelConfig};

/// Row-stochastic lower-triangular map where row `i` spreads over `cols(i)`.
fn pattern(n: usize, cols: impl Fn(usize) -> Vec<usize>) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        let c = cols(i);
        for &j in &c {
            m.set(i, j, 1.0 / c.len() as f64);
        }
    }
    m
}

fn main() -> aai::Result<()> {
    let t = SelectionThresholds::default();
    let n = 12;
    let cases = [
        ("previous token", pattern(n, |i| vec![i.saturating_sub(1)])),
        ("first token", pattern(n, |_| vec![0])),
        ("uniform", pattern(n, |i| (0..=i).collect())),
    ];
    for (name, weights) in &cases {
        let (p, class) = analyze_head(weights, &t)?;
        println!("{name:<15} diag={:?} vert={:?} horiz={:?} -> {class}", p.diagonal, p.vertical, p.horizontal);
    }

    let first = binarize(&cases[1].1, t.binarize_threshold)?;
    println!(
        "first-token map, literal orientation: {:?}",
        directional_scores(&first, Orientation::Literal)
    );

    let model = Model::new(ModelConfig::default())?;
    let out = model.prefill(&encode("# (Rule1): Anne is red.\n=> F(KB, Rule1) => `Anne is red`"), &HeadMaskPlan::baseline())?;
    print!("{}", analyze_model(out.trace(), &t)?.to_tsv());
    Ok(())
}
