//! Command implementations behind the `dkt` binary. Each `cmd_*` function
//! performs one subcommand and returns the text to print on success.

pub mod heatmap;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use dkt::data::{generate_simulated, read_triplet_file, serialize_triplet_log, split_train_test, Dataset, Encoding, SimConfig};
use dkt::metrics::{correctness_matrix, MetricsReport};
use dkt::model::{forward_sequence, load_checkpoint, save_checkpoint, CellKind, Checkpoint, Mode, ModelConfig};
use dkt::objective::LossConfig;
use dkt::train::{
    evaluate, fit, grid_results_to_text, grid_search, select_best, EarlyStopOn, GridSpec, Objective, Optimizer,
    TrainConfig,
};
use dkt::DktError;

pub use heatmap::HeatmapExport;

/// Process exit status for each failure class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn usage(msg: impl fmt::Display) -> Self {
        CliError {
            kind: ErrorKind::Usage,
            message: msg.to_string(),
        }
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        CliError {
            kind: ErrorKind::Data,
            message: msg.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<DktError> for CliError {
    fn from(e: DktError) -> Self {
        let kind = match e {
            DktError::Divergence { .. } | DktError::UndefinedAuc(_) | DktError::NoTerms => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        };
        CliError {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "dkt", version, about = "Knowledge tracing with prediction-consistent regularization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic students from an IRT model.
    Simulate(SimulateArgs),
    /// Train a model and report test metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Cross-validated search over the regularization weights.
    Gridsearch(GridArgs),
    /// Export one student's predictions as CSV and SVG.
    Heatmap(HeatmapArgs),
    /// Answer-pair counts for two consecutive skills.
    Matrix(MatrixArgs),
}

pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Gridsearch(a) => cmd_gridsearch(&a),
        Command::Heatmap(a) => cmd_heatmap(&a),
        Command::Matrix(a) => cmd_matrix(&a),
    }
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 2000)]
    pub students: usize,
    #[arg(long, default_value_t = 50)]
    pub exercises: usize,
    #[arg(long, default_value_t = 5)]
    pub concepts: usize,
    /// Guessing probability `c`.
    #[arg(long, default_value_t = 0.25)]
    pub guess: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 200)]
    pub hidden_size: usize,
    #[arg(long, default_value_t = CellKind::Lstm)]
    pub cell: CellKind,
    #[arg(long, default_value_t = Encoding::Compressed)]
    pub encoding: Encoding,
    #[arg(long, default_value_t = 0.5)]
    pub dropout_rate: f64,
    #[arg(long, default_value_t = 0.05)]
    pub init_stddev: f64,
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
}

impl ModelArgs {
    pub fn config(&self) -> CliResult<ModelConfig> {
        let cfg = ModelConfig {
            hidden_size: self.hidden_size,
            cell_kind: self.cell,
            encoding: self.encoding,
            dropout_rate: self.dropout_rate,
            init_stddev: self.init_stddev,
            seed: self.model_seed,
        };
        cfg.validate().map_err(CliError::usage)?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone)]
pub struct LossArgs {
    #[arg(long, default_value_t = 0.0)]
    pub lambda_r: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda_w1: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda_w2: f64,
}

impl LossArgs {
    pub fn config(&self) -> CliResult<LossConfig> {
        LossConfig::new(self.lambda_r, self.lambda_w1, self.lambda_w2).map_err(CliError::usage)
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 3.0)]
    pub clip_threshold: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 100)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = Optimizer::Sgd)]
    pub optimizer: Optimizer,
    /// Early-stop on the test split instead of a validation split.
    #[arg(long)]
    pub paper_faithful: bool,
    #[arg(long, default_value_t = 0.2)]
    pub validation_fraction: f64,
    /// Seeds the train/test split, shuffling and dropout.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl TrainingArgs {
    pub fn config(&self) -> CliResult<TrainConfig> {
        let cfg = TrainConfig {
            learning_rate: self.learning_rate,
            clip_threshold: self.clip_threshold,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            optimizer: self.optimizer,
            early_stop_on: if self.paper_faithful {
                EarlyStopOn::Test
            } else {
                EarlyStopOn::Validation
            },
            validation_fraction: self.validation_fraction,
            seed: self.seed,
        };
        cfg.validate().map_err(CliError::usage)?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Triplet-format interaction log.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory receiving checkpoint.json, history.txt, report.txt and
    /// test_split.txt.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Skill count; defaults to one past the largest id in the data.
    #[arg(long)]
    pub num_skills: Option<usize>,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub train: TrainingArgs,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Declared skill count; must equal the checkpoint's.
    #[arg(long)]
    pub num_skills: Option<usize>,
    /// Report file; printed only when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct GridArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = GridSpec::default().lambda_r)]
    pub grid_r: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = GridSpec::default().lambda_w1)]
    pub grid_w1: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = GridSpec::default().lambda_w2)]
    pub grid_w2: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Share of the data held out before cross-validation.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long)]
    pub num_skills: Option<usize>,
    /// Results table file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainingArgs,
}

#[derive(Args, Debug, Clone)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Zero-based index of the student in the data file.
    #[arg(long)]
    pub student: usize,
    /// Writes `<prefix>.csv`, `<prefix>.svg` and `<prefix>_lines.svg`.
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct MatrixArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub skill_a: usize,
    #[arg(long)]
    pub skill_b: usize,
}

fn load_dataset(path: &Path, num_skills: Option<usize>) -> CliResult<Dataset> {
    let parsed = read_triplet_file(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let d = parsed.dataset;
    match num_skills {
        Some(m) => Ok(Dataset::with_num_skills(d.sequences().to_vec(), m)?),
        None => Ok(d),
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn cmd_simulate(a: &SimulateArgs) -> CliResult<String> {
    let cfg = SimConfig {
        n_students: a.students,
        n_exercises: a.exercises,
        n_concepts: a.concepts,
        guess_c: a.guess,
        seed: a.seed,
    };
    cfg.validate().map_err(CliError::usage)?;
    let d = generate_simulated(&cfg)?;
    write_file(&a.out, &serialize_triplet_log(&d))?;
    Ok(format!(
        "students={} skills={} interactions={} mean_correct={:.4}\n",
        d.len(),
        d.num_skills(),
        d.num_interactions(),
        d.mean_correctness()
    ))
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const TEST_SPLIT_FILE: &str = "test_split.txt";

pub fn cmd_train(a: &TrainArgs) -> CliResult<String> {
    let model_cfg = a.model.config()?;
    let loss_cfg = a.loss.config()?;
    let train_cfg = a.train.config()?;
    let d = load_dataset(&a.data, a.num_skills)?;
    let (pool, test) = split_train_test(&d, a.test_fraction, train_cfg.seed).map_err(CliError::usage)?;
    let out = fit(&pool, &test, &model_cfg, Objective::Regularized(loss_cfg), &train_cfg)?;

    fs::create_dir_all(&a.out_dir)?;
    save_checkpoint(a.out_dir.join(CHECKPOINT_FILE), &Checkpoint::new(model_cfg, out.params))?;
    write_file(&a.out_dir.join(HISTORY_FILE), &out.history.to_text(true))?;
    write_file(&a.out_dir.join(REPORT_FILE), &out.report.to_kv())?;
    write_file(&a.out_dir.join(TEST_SPLIT_FILE), &serialize_triplet_log(&test))?;
    Ok(format!(
        "trained {} epochs (best {}), test: {}\n",
        out.history.epochs.len(),
        out.history.best_epoch,
        out.report
    ))
}

fn load_checked(checkpoint: &Path, data: &Path, num_skills: Option<usize>) -> CliResult<(Checkpoint, Dataset)> {
    let ck = load_checkpoint(checkpoint).map_err(|e| CliError::data(format!("{}: {e}", checkpoint.display())))?;
    if let Some(m) = num_skills {
        ck.ensure_compatible(m, None)?;
    }
    let d = load_dataset(data, None)?;
    if d.num_skills() > ck.num_skills {
        return Err(CliError::data(format!(
            "data uses skill id {} but the checkpoint has M={}",
            d.num_skills() - 1,
            ck.num_skills
        )));
    }
    let d = Dataset::with_num_skills(d.sequences().to_vec(), ck.num_skills)?;
    Ok((ck, d))
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<String> {
    let (ck, d) = load_checked(&a.checkpoint, &a.data, a.num_skills)?;
    let report = evaluate(&ck.params, &d, &ck.config)?;
    let text = report.to_kv();
    match &a.out {
        Some(p) => {
            write_file(p, &text)?;
            Ok(format!("{report}\n"))
        }
        None => Ok(text),
    }
}

pub fn cmd_gridsearch(a: &GridArgs) -> CliResult<String> {
    let model_cfg = a.model.config()?;
    let train_cfg = a.train.config()?;
    let grid = GridSpec {
        lambda_r: a.grid_r.clone(),
        lambda_w1: a.grid_w1.clone(),
        lambda_w2: a.grid_w2.clone(),
    };
    grid.validate().map_err(CliError::usage)?;
    if a.folds < 2 {
        return Err(CliError::usage("--folds must be at least 2"));
    }
    let d = load_dataset(&a.data, a.num_skills)?;
    let (pool, _) = split_train_test(&d, a.test_fraction, train_cfg.seed).map_err(CliError::usage)?;
    let results = grid_search(&pool, &grid, a.folds, &model_cfg, &train_cfg)?;

    let baseline = match results.iter().find(|g| g.loss.is_plain()) {
        Some(g) => g.mean,
        None => grid_search(&pool, &GridSpec::baseline_only(), a.folds, &model_cfg, &train_cfg)?[0].mean,
    };
    let pick = select_best(&results, &baseline);
    let table = grid_results_to_text(&results);
    if let Some(p) = &a.out {
        write_file(p, &table)?;
    }
    let (r, w1, w2) = pick.loss.as_tuple();
    let mut out = if a.out.is_none() { table } else { String::new() };
    out.push_str(&format!("cells={}\nbaseline: {baseline}\n", results.len()));
    if pick.fallback {
        out.push_str("warning: no configuration is less wavy than the baseline\n");
    }
    out.push_str(&format!(
        "selected lambda_r={r} lambda_w1={w1} lambda_w2={w2}: {}\n",
        pick.report
    ));
    Ok(out)
}

pub fn heatmap_for(ck: &Checkpoint, d: &Dataset, student: usize) -> CliResult<HeatmapExport> {
    let seq = d.sequences().get(student).ok_or_else(|| {
        CliError::usage(format!("student index {student} out of range (dataset has {})", d.len()))
    })?;
    let trace = forward_sequence(seq, &ck.params, &ck.config, Mode::Infer)?;
    Ok(HeatmapExport::from_trace(seq, &trace))
}

pub fn cmd_heatmap(a: &HeatmapArgs) -> CliResult<String> {
    let (ck, d) = load_checked(&a.checkpoint, &a.data, None)?;
    let h = heatmap_for(&ck, &d, a.student)?;
    let with_ext = |suffix: &str| {
        let mut s = a.out_prefix.clone().into_os_string();
        s.push(suffix);
        PathBuf::from(s)
    };
    write_file(&with_ext(".csv"), &h.to_csv())?;
    write_file(&with_ext(".svg"), &h.to_svg())?;
    write_file(&with_ext("_lines.svg"), &h.to_line_svg())?;
    Ok(format!(
        "{} skills x {} steps, mean adjacent change {:.6}\n",
        h.skills.len(),
        h.columns.len(),
        h.mean_adjacent_change()
    ))
}

pub fn cmd_matrix(a: &MatrixArgs) -> CliResult<String> {
    let d = load_dataset(&a.data, None)?;
    if a.skill_a >= d.num_skills() || a.skill_b >= d.num_skills() {
        return Err(CliError::usage(format!(
            "skills must be below M={}",
            d.num_skills()
        )));
    }
    Ok(correctness_matrix(&d, a.skill_a, a.skill_b)?.to_string())
}

/// Reads a report written by `train` or `eval`.
pub fn read_report(path: &Path) -> CliResult<MetricsReport> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(MetricsReport::from_kv(&text)?)
}
