//! Export a prefill attention trace, reload it bit-exactly and render one
//! head as PGM and CSV heatmaps.
//!
//! cargo run --example trace_heatmap -- [out_dir]

use aai::harness::{heatmap_export, HeatmapFormat};
use aai::mask::HeadMaskPlan;
use aai::model::{encode, Model, ModelConfig};
use aai::trace::{export_trace, import_trace};

fn main() -> aai::Result<()> {
    let dir = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "heatmaps".into()));
    std::fs::create_dir_all(&dir).map_err(|source| aai::AaiError::Io { path: dir.clone(), source })?;

    let model = Model::new(ModelConfig { seed: 5, ..Default::default() })?;
    let out = model.prefill(&encode("# (Rule1): Fiona is young.\n=> Rule1 = `Fiona is young`"), &HeadMaskPlan::baseline())?;
    let path = dir.join("prefill.trace");
    export_trace(out.trace(), &path)?;
    let back = import_trace(&path)?;
    assert_eq!(&back, out.trace());
    println!("wrote {} ({} tokens)", path.display(), back.meta().seq_len);

    for (id, weights) in back.iter_weights().take(2) {
        for format in [HeatmapFormat::Pgm, HeatmapFormat::Csv] {
            let file = dir.join(format!("{id}.{}", format.extension()));
            heatmap_export(weights, &file, format)?;
            println!("wrote {}", file.display());
        }
    }
    Ok(())
}
