//! Scaled dot-product attention on small matrices, with and without a mask.
//!
//! cargo run --example attention_kernel

use aai::kernel::{attend, masked_softmax, scaled_dot_product, softmax, Matrix};
use aai::mask::causal_mask;

fn show(name: &str, m: &Matrix) {
    println!("{name}:");
    for i in 0..m.rows() {
        let row: Vec<String> = (0..m.cols()).map(|j| format!("{:8.4}", m.get(i, j))).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> aai::Result<()> {
    let q = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])?;
    let k = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.5]])?;
    let v = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])?;

    let scores = scaled_dot_product(&q, &k, 2)?;
    show("scores", &scores);
    show("softmax", &softmax(&scores)?);

    let causal = masked_softmax(&scores, &causal_mask(3))?;
    show("causal weights", &causal);
    show("output", &attend(&causal, &v)?);

    let mut boost = causal_mask(3);
    boost.set(2, 0, 3.0);
    boost.set(2, 1, f64::NEG_INFINITY);
    show("boost (2,0), suppress (2,1)", &masked_softmax(&scores, &boost)?);
    Ok(())
}
