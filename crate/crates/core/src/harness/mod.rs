//! Dataset I/O, experiment runs, scoring and reporting.

pub mod dataset;
pub mod experiment;
pub mod heatmap;
pub mod report;
pub mod score;

pub use dataset::{load_completions, load_dataset, DatasetRecord};
pub use experiment::{run_replay, run_toy, ExperimentOutput, PromptSettings, RunResult, ToyConfig};
pub use heatmap::{heatmap_export, HeatmapFormat};
pub use report::{render_report, ReportInputs};
pub use score::{score_pairs, Score};
