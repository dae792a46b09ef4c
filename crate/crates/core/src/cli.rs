//! Command-line front end. `aai <subcommand> --help` lists every flag.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};

use crate::cot::{Family, PromptStyle};
use crate::error::{AaiError, Result};
use crate::harness::dataset::{completions_to_jsonl, generate_dataset, Completion};
use crate::harness::experiment::{run_replay, run_toy, ExperimentOutput, PromptSettings, ToyConfig};
use crate::harness::heatmap::{heatmap_export, HeatmapFormat};
use crate::harness::report::{render_report, ReportInputs};
use crate::harness::{load_completions, load_dataset};
use crate::heads::{analyze_model, select_heads, HeadId, HeadTable, Orientation, SelectionMode, SelectionThresholds};
use crate::mask::{compose_final, HeadMaskPlan, MedianScope, ReweightParams};
use crate::model::{encode, Model, ModelConfig};
use crate::rules::{annotate_text, build_pair_sets, PairOptions};
use crate::trace::{export_trace, import_trace, AttentionTrace, TraceKind};

#[derive(Debug, Parser)]
#[command(name = "aai", version, about = "Attention-aware intervention toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify every head of an attention trace.
    AnalyzeHeads(AnalyzeArgs),
    /// Derive reference pairs and per-head masks for a prompt file.
    BuildMasks(BuildMasksArgs),
    /// Export the toy model's prefill trace for a prompt file.
    Trace(TraceArgs),
    /// Generate with the toy model over a dataset and score the outputs.
    Run(RunArgs),
    /// Score completions (or a finished run) against a dataset.
    Eval(EvalArgs),
    /// Emit synthetic rule worlds as dataset JSONL.
    GenSynth(GenSynthArgs),
    /// Export one matrix of a trace as a heatmap.
    Viz(VizArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ThresholdArgs {
    #[arg(long, default_value_t = 0.04)]
    pub binarize_threshold: f64,
    #[arg(long, default_value_t = 0.3)]
    pub diag_threshold: f64,
    #[arg(long, default_value_t = 0.6)]
    pub vert_threshold: f64,
    #[arg(long, default_value_t = 0.3)]
    pub other_threshold: f64,
    #[arg(long, default_value = "prose")]
    pub orientation: Orientation,
}

impl ThresholdArgs {
    fn thresholds(&self) -> SelectionThresholds {
        SelectionThresholds {
            binarize_threshold: self.binarize_threshold,
            diag_threshold: self.diag_threshold,
            vert_threshold: self.vert_threshold,
            other_threshold: self.other_threshold,
            orientation: self.orientation,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct MaskArgs {
    #[arg(long, default_value_t = 1.0)]
    pub coef: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub bias: f64,
    #[arg(long, default_value = "causal")]
    pub median_scope: MedianScope,
    /// Bind a rule's own tag to its content.
    #[arg(long, default_value_t = true, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    pub include_defining: bool,
    /// Only bind rules of the last block that defines any.
    #[arg(long)]
    pub final_block_only: bool,
}

impl MaskArgs {
    fn params(&self) -> ReweightParams {
        ReweightParams {
            coefficient: self.coef,
            bias: self.bias,
            median_scope: self.median_scope,
        }
    }

    fn pair_options(&self) -> PairOptions {
        PairOptions {
            include_defining: self.include_defining,
            final_block_only: self.final_block_only,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 16)]
    pub head_dim: usize,
    #[arg(long, default_value_t = 2048)]
    pub max_seq: usize,
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            num_layers: self.layers,
            num_heads: self.heads,
            model_dim: self.heads * self.head_dim,
            head_dim: self.head_dim,
            seed: self.seed,
            max_seq: self.max_seq,
            ..ModelConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    /// Write the table here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write one JSON record per head.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildMasksArgs {
    #[arg(long)]
    pub prompt: PathBuf,
    #[command(flatten)]
    pub mask: MaskArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    /// Which heads get the reference masks.
    #[arg(long, default_value = "aai")]
    pub mode: SelectionMode,
    /// Sorted `i j REF|NOREF` lines; stdout when omitted.
    #[arg(long)]
    pub pairs_out: Option<PathBuf>,
    /// Final masks of every head, as a mask-kind trace file.
    #[arg(long)]
    pub masks_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub prompt: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ToyArgs {
    #[arg(long, default_value = "aai")]
    pub mode: SelectionMode,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Intervene during prefill only; `false` also masks decode steps.
    #[arg(long, default_value_t = true, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    pub prefill_only: bool,
    #[command(flatten)]
    pub mask: MaskArgs,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[arg(long, default_value = "symbolic_aided")]
    pub style: PromptStyle,
    /// Worked examples kept from the template.
    #[arg(long, default_value_t = 0)]
    pub shots: usize,
    #[arg(long, default_value_t = 24)]
    pub max_new: usize,
    /// Index of the record used for head analysis.
    #[arg(long, default_value_t = 0)]
    pub calibration: usize,
    /// Record wall time per record (results then differ between runs).
    #[arg(long)]
    pub timing: bool,
}

impl ToyArgs {
    fn config(&self) -> ToyConfig {
        ToyConfig {
            model: self.model.config(),
            mode: self.mode,
            params: self.mask.params(),
            include_defining: self.mask.include_defining,
            final_block_only: self.mask.final_block_only,
            thresholds: self.thresholds.thresholds(),
            prefill_only: self.prefill_only,
            prompts: PromptSettings {
                style: self.style,
                shots: Some(self.shots),
            },
            max_new: self.max_new,
            calibration: self.calibration,
            record_timing: self.timing,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "proofwriter")]
    pub family: Family,
    #[command(flatten)]
    pub toy: ToyArgs,
    /// Output directory for completions, results, head table and report.
    #[arg(long, default_value = "aai-run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub family: Family,
    /// JSONL of `{"id", "completion"}` to score without any model.
    #[arg(long, conflicts_with = "run")]
    pub completions: Option<PathBuf>,
    /// Directory written by `aai run`.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long, default_value = "symbolic_aided")]
    pub style: PromptStyle,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub depth: usize,
    #[arg(long, default_value_t = 2)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    /// `<trace file>:<layer>:<head>`
    #[arg(long)]
    pub matrix: String,
    #[arg(long, default_value = "pgm")]
    pub format: HeatmapFormat,
    /// Export pre-softmax scores instead of weights.
    #[arg(long)]
    pub scores: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| AaiError::Config(e.to_string()))?;
    execute(cli)
}

/// Entry point for the binary: prints errors as `error[category]: ...` and
/// returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::AnalyzeHeads(a) => analyze(a),
        Command::BuildMasks(a) => build_masks(a),
        Command::Trace(a) => trace(a),
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
        Command::GenSynth(a) => gen_synth(a),
        Command::Viz(a) => viz(a),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| AaiError::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| AaiError::io(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let trace = import_trace(&a.trace)?;
    let table = analyze_model(&trace, &a.thresholds.thresholds())?;
    if let Some(p) = &a.records {
        let lines: String = table
            .records
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect();
        write(p, lines)?;
    }
    emit(a.out.as_deref(), &table.to_tsv())
}

fn build_masks(a: BuildMasksArgs) -> Result<()> {
    let prompt = read(&a.prompt)?;
    let annotated = annotate_text(&prompt)?;
    let pairs = build_pair_sets(&annotated, a.mask.pair_options());
    emit(a.pairs_out.as_deref(), &pairs.to_lines())?;
    if let Some(out) = &a.masks_out {
        let model = Model::new(a.model.config())?;
        let tokens = encode(&prompt);
        let baseline = model.prefill(&tokens, &HeadMaskPlan::baseline())?;
        let table = analyze_model(baseline.trace(), &a.thresholds.thresholds())?;
        let mut plan = HeadMaskPlan::new(select_heads(&table, a.mode), pairs, a.mask.params());
        plan.pair_options = a.mask.pair_options();
        let mut masks = AttentionTrace::new(baseline.trace().meta().clone());
        masks.set_kind(TraceKind::Mask);
        let cfg = model.config();
        for layer in 0..cfg.num_layers {
            for head in 0..cfg.num_heads {
                let scores = baseline.trace().scores(layer, head).expect("prefill records scores");
                let m = compose_final(scores, &plan, layer, head, tokens.len())?;
                masks.insert(layer, head, m, None);
            }
        }
        export_trace(&masks, out)?;
    }
    Ok(())
}

fn trace(a: TraceArgs) -> Result<()> {
    let prompt = read(&a.prompt)?;
    let model = Model::new(a.model.config())?;
    let out = model.prefill(&encode(&prompt), &HeadMaskPlan::baseline())?;
    export_trace(out.trace(), &a.out)
}

fn report_for(out: &ExperimentOutput, config: &[(String, String)]) -> String {
    render_report(&ReportInputs {
        config,
        heads: out.heads.as_ref(),
        selected: &out.selected,
        results: &out.results,
        score: &out.score,
    })
}

fn selection_text(selected: &BTreeSet<HeadId>) -> String {
    selected.iter().map(|h| format!("{h}\n")).collect()
}

fn run(a: RunArgs) -> Result<()> {
    let records = load_dataset(&a.dataset, a.family)?;
    let cfg = a.toy.config();
    let out = run_toy(&records, a.family, &cfg)?;
    let dir = &a.out;
    fs::create_dir_all(dir).map_err(|e| AaiError::io(dir, e))?;

    let completions: Vec<Completion> = out
        .results
        .iter()
        .map(|r| Completion {
            id: r.id.clone(),
            completion: r.generated.clone(),
        })
        .collect();
    write(&dir.join("completions.jsonl"), completions_to_jsonl(&completions))?;
    let results: String = out
        .results
        .iter()
        .map(|r| serde_json::to_string(r).expect("results serialize") + "\n")
        .collect();
    write(&dir.join("results.jsonl"), results)?;
    if let Some(t) = &out.heads {
        write(&dir.join("heads.tsv"), t.to_tsv())?;
    }
    write(&dir.join("selection.txt"), selection_text(&out.selected))?;

    let mut config = vec![
        ("dataset".to_string(), a.dataset.display().to_string()),
        ("family".to_string(), a.family.to_string()),
    ];
    config.extend(cfg.echo());
    let config_text: String = config.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    write(&dir.join("config.txt"), config_text)?;
    let report = report_for(&out, &config);
    write(&dir.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let records = load_dataset(&a.dataset, a.family)?;
    let prompts = PromptSettings {
        style: a.style,
        shots: None,
    };
    let mut config = vec![
        ("dataset".to_string(), a.dataset.display().to_string()),
        ("family".to_string(), a.family.to_string()),
    ];
    let out = match (&a.completions, &a.run) {
        (Some(path), _) => {
            config.push(("completions".into(), path.display().to_string()));
            run_replay(&records, a.family, &load_completions(path)?, &prompts)?
        }
        (None, Some(dir)) => {
            config.push(("run".into(), dir.display().to_string()));
            let run_config = read(&dir.join("config.txt"))?;
            let mut shots = None;
            let mut style = a.style;
            let mut thresholds = SelectionThresholds::default();
            for line in run_config.lines() {
                let Some((k, v)) = line.split_once(" = ") else {
                    continue;
                };
                match k {
                    "dataset" | "family" => continue,
                    "shots" => shots = v.parse().ok(),
                    "style" => style = v.parse()?,
                    "binarize_threshold" => thresholds.binarize_threshold = parse_f64(k, v)?,
                    "diag_threshold" => thresholds.diag_threshold = parse_f64(k, v)?,
                    "vert_threshold" => thresholds.vert_threshold = parse_f64(k, v)?,
                    "other_threshold" => thresholds.other_threshold = parse_f64(k, v)?,
                    "orientation" => thresholds.orientation = v.parse()?,
                    _ => {}
                }
                config.push((format!("run.{k}"), v.to_string()));
            }
            let completions = load_completions(dir.join("completions.jsonl"))?;
            let mut out = run_replay(&records, a.family, &completions, &PromptSettings { style, shots })?;
            let heads_path = dir.join("heads.tsv");
            if heads_path.exists() {
                out.heads = Some(HeadTable::from_tsv(&read(&heads_path)?, thresholds)?);
            }
            out.selected = read(&dir.join("selection.txt"))?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::parse)
                .collect::<Result<_>>()?;
            out
        }
        (None, None) => {
            return Err(AaiError::Config(
                "eval needs --completions <file> or --run <dir>".into(),
            ))
        }
    };
    let report = report_for(&out, &config);
    if let Some(p) = &a.out {
        write(p, &report)?;
    }
    print!("{report}");
    Ok(())
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| AaiError::Config(format!("bad value `{v}` for {key}")))
}

fn gen_synth(a: GenSynthArgs) -> Result<()> {
    let records = generate_dataset(a.depth, a.width, a.seed, a.count)?;
    let text = crate::harness::dataset::dataset_to_jsonl(&records);
    emit(a.out.as_deref(), &text)
}

fn viz(a: VizArgs) -> Result<()> {
    let mut parts = a.matrix.rsplitn(3, ':');
    let (head, layer, file) = match (parts.next(), parts.next(), parts.next()) {
        (Some(h), Some(l), Some(f)) => (h, l, f),
        _ => {
            return Err(AaiError::Config(format!(
                "--matrix `{}` is not <trace>:<layer>:<head>",
                a.matrix
            )))
        }
    };
    let layer: usize = layer
        .parse()
        .map_err(|_| AaiError::Config(format!("bad layer `{layer}`")))?;
    let head: usize = head
        .parse()
        .map_err(|_| AaiError::Config(format!("bad head `{head}`")))?;
    let trace = import_trace(file)?;
    let m = if a.scores {
        trace.scores(layer, head)
    } else {
        trace.weights(layer, head)
    }
    .ok_or_else(|| AaiError::Config(format!("trace has no matrix for L{layer}H{head}")))?;
    let out = a
        .out
        .unwrap_or_else(|| PathBuf::from(format!("L{layer}H{head}.{}", a.format.extension())));
    heatmap_export(m, &out, a.format)
}
