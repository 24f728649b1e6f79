//! Command-line entry point: generate synthetic tables, convert grids to
//! markup or adjacency triplets, evaluate predictions, and train / run /
//! verify the logical-location regressor.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tsr::grid::TableGrid;
use tsr::jsonl;
use tsr::metrics::{self, EvalOptions};
use tsr::regressor::{self, checkpoint, train::history_to_csv, RegressorConfig};
use tsr::synth::{self, SynthConfig};
use tsr::transform;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "tsr", version, about = "Table structure recognition toolkit")]
struct Cli {
    /// Seed for all randomness of the subcommand.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    /// Output path (defaults to stdout where applicable).
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic JSONL dataset.
    Gen(GenArgs),
    /// Convert a JSONL dataset to markup or adjacency triplets.
    Convert(ConvertArgs),
    /// Evaluate predictions against ground truth.
    Eval(EvalArgs),
    /// Train the logical-location regressor.
    Train(TrainArgs),
    /// Predict logical locations with a trained checkpoint.
    Infer(InferArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Optional JSON config file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    tables: usize,
    #[arg(long, default_value_t = 2)]
    rows_min: usize,
    #[arg(long, default_value_t = 8)]
    rows_max: usize,
    #[arg(long, default_value_t = 2)]
    cols_min: usize,
    #[arg(long, default_value_t = 8)]
    cols_max: usize,
    #[arg(long, default_value_t = 0.2)]
    span_prob: f64,
    #[arg(long, default_value_t = 3)]
    max_span: usize,
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value_t = 0.0)]
    rotation: f64,
    #[arg(long, default_value_t = 0.0)]
    hole_prob: f64,
    /// Shift row indices from this row, producing a structurally shifted
    /// variant of each generated table.
    #[arg(long)]
    shift_from: Option<usize>,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    /// Conversion target.
    #[arg(long, value_parser = ["html", "adjacency"])]
    target: String,
    /// Include cell text in emitted markup.
    #[arg(long)]
    content: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Compare cell text inside TEDS.
    #[arg(long)]
    content: bool,
    /// Skip spatial metrics (no quads required).
    #[arg(long)]
    markup_only: bool,
    /// Write per-sample metrics as CSV to this path.
    #[arg(long)]
    per_sample: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RegressorFlags {
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long, default_value_t = 3)]
    layers_base: usize,
    #[arg(long, default_value_t = 3)]
    layers_stack: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 128)]
    ffn_dim: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Comma-separated epochs at which the rate decays.
    #[arg(long, default_value = "70,90", value_delimiter = ',')]
    decay_epochs: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    decay_factor: f64,
    /// Disable the inter-cell consistency loss.
    #[arg(long)]
    no_inter: bool,
    /// Disable the intra-cell consistency loss.
    #[arg(long)]
    no_intra: bool,
}

impl RegressorFlags {
    fn to_config(&self, seed: u64) -> RegressorConfig {
        RegressorConfig {
            d: self.d,
            layers_base: self.layers_base,
            layers_stack: self.layers_stack,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            epochs: self.epochs,
            learning_rate: self.lr,
            decay_epochs: self.decay_epochs.clone(),
            decay_factor: self.decay_factor,
            enable_inter_loss: !self.no_inter,
            enable_intra_loss: !self.no_intra,
            seed,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    heldout: Option<PathBuf>,
    /// Where the training history CSV is written.
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    regressor: RegressorFlags,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 200)]
    params: usize,
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
    #[command(flatten)]
    regressor: RegressorFlags,
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn runtime(message: impl Into<String>) -> Self {
        Self { code: EXIT_RUNTIME, message: message.into() }
    }

    fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }
}

impl From<jsonl::JsonlError> for CliError {
    fn from(e: jsonl::JsonlError) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<regressor::RegressorError> for CliError {
    fn from(e: regressor::RegressorError) -> Self {
        match e {
            regressor::RegressorError::Config(_) => CliError::config(e.to_string()),
            _ => CliError::runtime(e.to_string()),
        }
    }
}

impl From<synth::SynthError> for CliError {
    fn from(e: synth::SynthError) -> Self {
        match e {
            synth::SynthError::Config(_) => CliError::config(e.to_string()),
            _ => CliError::runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Gen(args) => cmd_gen(cli, args),
        Command::Convert(args) => cmd_convert(cli, args),
        Command::Eval(args) => cmd_eval(cli, args),
        Command::Train(args) => cmd_train(cli, args),
        Command::Infer(args) => cmd_infer(cli, args),
        Command::Gradcheck(args) => cmd_gradcheck(cli, args),
    }
}

fn write_output(cli: &Cli, content: &str) -> Result<(), CliError> {
    match &cli.output {
        Some(path) => std::fs::write(path, content)?,
        None => std::io::stdout().write_all(content.as_bytes())?,
    }
    Ok(())
}

fn note(cli: &Cli, message: String) {
    if !cli.quiet {
        eprintln!("{message}");
    }
}

fn cmd_gen(cli: &Cli, args: &GenArgs) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<SynthConfig>(&text)
                .map_err(|e| CliError::config(format!("bad config file: {e}")))?
        }
        None => SynthConfig::default(),
    };
    config.n_tables = args.tables;
    config.rows = (args.rows_min, args.rows_max);
    config.cols = (args.cols_min, args.cols_max);
    config.span_probability = args.span_prob;
    config.max_span = args.max_span;
    config.jitter = args.jitter;
    config.rotation = args.rotation;
    config.hole_probability = args.hole_prob;
    config.seed = cli.seed;
    let mut grids = synth::generate(&config)?;
    if let Some(from) = args.shift_from {
        grids = grids
            .iter()
            .map(|g| synth::make_shifted_variant(g, from))
            .collect::<Result<_, _>>()?;
    }
    let mut buf = Vec::new();
    jsonl::write_grids(&mut buf, &grids)?;
    let text = String::from_utf8(buf).expect("jsonl is utf-8");
    write_output(cli, &text)?;
    let cell_count: usize = grids.iter().map(|g| g.cells.len()).sum();
    note(
        cli,
        format!(
            "generated {} tables, {} cells, spanning fraction {:.3}",
            grids.len(),
            cell_count,
            synth::spanning_fraction(&grids)
        ),
    );
    Ok(())
}

/// Rejects the first grid that fails validation, naming its line and the
/// offending cell ids.
fn require_valid(grids: &[TableGrid], what: &str) -> Result<(), CliError> {
    for (idx, grid) in grids.iter().enumerate() {
        let report = grid.validate();
        if !report.overlaps.is_empty() {
            return Err(CliError::runtime(format!(
                "{what} line {}: overlapping cells {:?}",
                idx + 1,
                report.overlaps
            )));
        }
        if !report.out_of_bounds.is_empty() {
            return Err(CliError::runtime(format!(
                "{what} line {}: malformed logical locations on cells {:?}",
                idx + 1,
                report.out_of_bounds
            )));
        }
    }
    Ok(())
}

fn cmd_convert(cli: &Cli, args: &ConvertArgs) -> Result<(), CliError> {
    let grids = jsonl::read_grids_from_path(&args.input)?;
    require_valid(&grids, "input")?;
    let mut out = String::new();
    for (idx, grid) in grids.iter().enumerate() {
        match args.target.as_str() {
            "html" => {
                let seq = transform::to_markup(grid, args.content)
                    .map_err(|e| CliError::runtime(format!("line {}: {e}", idx + 1)))?;
                out.push_str(&seq.to_string());
                out.push('\n');
            }
            "adjacency" => {
                let (h, v) = transform::adjacency_pairs(grid)
                    .map_err(|e| CliError::runtime(format!("line {}: {e}", idx + 1)))?;
                let triplets: Vec<_> = h.iter().chain(v.iter()).collect();
                out.push_str(&serde_json::to_string(&triplets).expect("serializable"));
                out.push('\n');
            }
            _ => unreachable!("clap restricts the target"),
        }
    }
    write_output(cli, &out)
}

fn per_sample_csv(report: &metrics::MetricReport) -> String {
    let mut out = String::from(
        "sample,det_p,det_r,det_f1,acc_all,acc_row,acc_col,acc_span,adj_p,adj_r,adj_f1,teds,bleu\n",
    );
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (idx, s) in report.samples.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            idx + 1,
            opt(s.detection.map(|d| d.precision)),
            opt(s.detection.map(|d| d.recall)),
            opt(s.detection.map(|d| d.f1)),
            opt(s.logical.map(|l| l.acc_all)),
            opt(s.logical.map(|l| l.acc_row)),
            opt(s.logical.map(|l| l.acc_col)),
            opt(s.logical.and_then(|l| l.acc_span)),
            opt(s.adjacency.map(|a| a.precision)),
            opt(s.adjacency.map(|a| a.recall)),
            opt(s.adjacency.map(|a| a.f1)),
            s.teds,
            s.bleu
        ));
    }
    out
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&args.iou) {
        return Err(CliError::config(format!("--iou must be in [0, 1], got {}", args.iou)));
    }
    let preds = jsonl::read_grids_from_path(&args.pred)?;
    let gts = jsonl::read_grids_from_path(&args.gt)?;
    if preds.len() != gts.len() {
        return Err(CliError::runtime(format!(
            "line counts differ: {} predictions vs {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    require_valid(&gts, "ground truth")?;
    if !args.markup_only {
        for (idx, grid) in preds.iter().chain(gts.iter()).enumerate() {
            let line = idx % preds.len() + 1;
            if let Some(cell) = grid.cells.iter().find(|c| c.quad.is_none()) {
                return Err(CliError::runtime(format!(
                    "line {line}: cell {} has no spatial quad",
                    cell.id
                )));
            }
        }
    }
    let options = EvalOptions {
        iou_threshold: args.iou,
        content_mode: args.content,
        spatial: !args.markup_only,
    };
    let report = metrics::evaluate(&preds, &gts, &options)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    if let Some(path) = &args.per_sample {
        std::fs::write(path, per_sample_csv(&report))?;
    }
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_output(cli, &json)
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<(), CliError> {
    let config = args.regressor.to_config(cli.seed);
    let data = jsonl::read_grids_from_path(&args.data)?;
    require_valid(&data, "training data")?;
    let heldout = match &args.heldout {
        Some(path) => Some(jsonl::read_grids_from_path(path)?),
        None => None,
    };
    let result = regressor::train(&data, heldout.as_deref(), &config)?;
    let model_path = cli
        .output
        .clone()
        .ok_or_else(|| CliError::config("train requires --output for the checkpoint"))?;
    checkpoint::save(&model_path, &result.params)?;
    if let Some(history_path) = &args.history {
        std::fs::write(history_path, history_to_csv(&config, &result.history))?;
    }
    if let Some(last) = result.history.last() {
        note(
            cli,
            format!(
                "trained {} epochs; final loss_log {:.4}, held-out acc {}",
                config.epochs,
                last.loss_log,
                last.heldout_acc_all.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into())
            ),
        );
    }
    Ok(())
}

fn cmd_infer(cli: &Cli, args: &InferArgs) -> Result<(), CliError> {
    let params = checkpoint::load(&args.model)?;
    let grids = jsonl::read_grids_from_path(&args.data)?;
    let mut predicted = Vec::with_capacity(grids.len());
    for (idx, grid) in grids.iter().enumerate() {
        let image_size = grid.image_size.unwrap_or([1.0, 1.0]);
        let (locations, _raw) = regressor::infer(&grid.cells, image_size, &params)
            .map_err(|e| CliError::runtime(format!("line {}: {e}", idx + 1)))?;
        let mut out = grid.clone();
        for (cell, loc) in out.cells.iter_mut().zip(locations) {
            cell.logical = loc;
        }
        predicted.push(out);
    }
    let mut buf = Vec::new();
    jsonl::write_grids(&mut buf, &predicted)?;
    write_output(cli, &String::from_utf8(buf).expect("jsonl is utf-8"))
}

fn cmd_gradcheck(cli: &Cli, args: &GradcheckArgs) -> Result<(), CliError> {
    let config = args.regressor.to_config(cli.seed);
    config.validate()?;
    // A fixed small table with spanning cells exercises every loss term.
    let synth_config = SynthConfig {
        n_tables: 1,
        rows: (4, 4),
        cols: (4, 4),
        span_probability: 0.4,
        jitter: 0.05,
        seed: cli.seed,
        ..Default::default()
    };
    let grid = &synth::generate(&synth_config)?[0];
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(config.seed);
    let params = regressor::RegressorParams::init(&config, &mut rng)?;
    let report = regressor::grad_check(&params, grid, args.epsilon, args.params, cli.seed)?;
    write_output(
        cli,
        &format!(
            "max_rel_error {:.3e} over {} parameters ({} kink-excluded)\n",
            report.max_rel_error, report.checked, report.excluded
        ),
    )?;
    if report.max_rel_error < args.threshold {
        Ok(())
    } else {
        Err(CliError::runtime(format!(
            "gradient check failed: {:.3e} >= {:.3e}",
            report.max_rel_error, args.threshold
        )))
    }
}
