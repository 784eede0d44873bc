use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use structgraph_core::backbone::BackboneConfig;
use structgraph_core::data::{self, Split, SynthConfig};
use structgraph_core::metrics::{evaluate, roc_to_csv, welch_t_test};
use structgraph_core::numeric::Tensor;
use structgraph_core::parallel::Execution;
use structgraph_core::sgnn::{ModelConfig, PoolingMode};
use structgraph_core::training::check::{check_model_gradients, CheckOptions, DEFAULT_TOLERANCE};
use structgraph_core::training::{fit_with, AugmentConfig, EpochRecord, LossWeights, TrainConfig};
use structgraph_core::Error;

#[derive(Debug, Parser)]
#[command(
    name = "structgraph",
    version,
    about = "Structural graph reasoning over image patch graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic lesion dataset with masks and a manifest.
    Synth(SynthArgs),
    /// Train a model and save the checkpoint with the best validation AUC.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one manifest split.
    Eval(EvalArgs),
    /// Export per-node scores and an importance heatmap for one image.
    Explain(ExplainArgs),
    /// Check analytic gradients of a tiny model against finite differences.
    Gradcheck(GradcheckArgs),
    /// Welch's t-test between two per-image score files.
    Compare(CompareArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Images per class.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_per_class: u64,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Keep lesions in the top half and add bottom-half distractors to class 0.
    #[arg(long)]
    pub position_dependent: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingArg {
    Mean,
    Importance,
}

impl From<PoolingArg> for PoolingMode {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Mean => PoolingMode::Mean,
            PoolingArg::Importance => PoolingMode::Importance,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// JSON-lines manifest with train (and optionally val) records.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    #[arg(long, value_enum, default_value_t = PoolingArg::Mean)]
    pub pooling: PoolingArg,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_node: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_explain: f64,
    /// Disable flips, rotations and intensity jitter.
    #[arg(long)]
    pub no_augment: bool,
    /// Keep the convolutional backbone at its initialization.
    #[arg(long)]
    pub freeze_backbone: bool,
    /// Input side length; images of other sizes are resized.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Node embedding width.
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// ReLU between the two structural layers.
    #[arg(long)]
    pub inter_layer_relu: bool,
    /// Ablation: zero the coordinate features and freeze the displacement weights at zero.
    #[arg(long)]
    pub no_structural_prior: bool,
    /// Cell lesion coverage above which a node is labelled positive.
    #[arg(long, default_value_t = 0.0)]
    pub label_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint to evaluate.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Metrics report (pretty JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Graph-level ROC curve as CSV.
    #[arg(long)]
    pub roc: Option<PathBuf>,
    /// Per-image node F1 scores, one per line (input for `compare`).
    #[arg(long)]
    pub node_f1: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub label_threshold: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Input image (binary PGM).
    #[arg(long)]
    pub image: PathBuf,
    /// Importance heatmap at the input resolution (PGM).
    #[arg(long)]
    pub heatmap: PathBuf,
    /// Per-node CSV `row,col,importance,node_prob`.
    #[arg(long)]
    pub scores: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingChoice {
    Mean,
    Importance,
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative finite-difference step, in [1e-7, 1e-3].
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, value_enum, default_value_t = PoolingChoice::Both)]
    pub pooling: PoolingChoice,
    /// Negative control: double the largest analytic gradient entry before comparing.
    #[arg(long)]
    pub corrupt_grad: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    /// One score per line.
    #[arg(long)]
    pub scores_a: PathBuf,
    /// One score per line.
    #[arg(long)]
    pub scores_b: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
    Core(Error),
    /// Already printed; exit with this code.
    Reported(u8),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Reported(c) => *c,
            CliError::Core(e) => match e {
                Error::NonFinite { .. } | Error::Irreproducible { .. } => 3,
                Error::Config(_) => 1,
                _ => 2,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Reported(c) => write!(f, "exit {c}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn print_config(command: &str, threads: usize, args: &impl Serialize) {
    let cfg = serde_json::json!({ "command": command, "threads": threads, "args": args });
    println!("config {cfg}");
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    std::fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn fmt_auc(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |a| format!("{a:.4}"))
}

pub fn dispatch(command: Command, threads: usize) -> CliResult {
    let exec = if threads > 1 {
        Execution::Parallel
    } else {
        Execution::Sequential
    };
    match command {
        Command::Synth(a) => {
            print_config("synth", threads, &a);
            synth(a)
        }
        Command::Train(a) => {
            print_config("train", threads, &a);
            train(a, exec)
        }
        Command::Eval(a) => {
            print_config("eval", threads, &a);
            eval(a, exec)
        }
        Command::Explain(a) => {
            print_config("explain", threads, &a);
            explain(a)
        }
        Command::Gradcheck(a) => {
            print_config("gradcheck", threads, &a);
            gradcheck(a)
        }
        Command::Compare(a) => {
            print_config("compare", threads, &a);
            compare(a)
        }
    }
}

fn synth(a: SynthArgs) -> CliResult {
    let cfg = SynthConfig {
        n_per_class: a.n_per_class as usize,
        image_size: a.size,
        position_dependent: a.position_dependent,
        seed: a.seed,
        ..SynthConfig::default()
    };
    cfg.validate()?;
    let manifest = data::generate_synthetic_dataset(&cfg, &a.out)?;
    println!("manifest {}", manifest.display());
    println!("wrote {} samples", cfg.total());
    Ok(())
}

fn train(a: TrainArgs, exec: Execution) -> CliResult {
    let mut model = ModelConfig {
        image_size: a.size,
        backbone: BackboneConfig::default(),
        hidden: a.hidden,
        pooling: a.pooling.into(),
        inter_layer_relu: a.inter_layer_relu,
        ..ModelConfig::default()
    };
    if a.no_structural_prior {
        model = model.without_structural_prior();
    }
    let cfg = TrainConfig {
        model,
        lr: a.lr,
        batch_size: a.batch_size as usize,
        epochs: a.epochs,
        seed: a.seed,
        weights: LossWeights {
            lambda_node: a.lambda_node,
            lambda_explain: a.lambda_explain,
        },
        augment: if a.no_augment {
            AugmentConfig::disabled()
        } else {
            AugmentConfig::default()
        },
        freeze_backbone: a.freeze_backbone,
        label_threshold: a.label_threshold,
        exec,
    };
    cfg.validate()?;
    let records = data::load_manifest(&a.manifest)?;
    let train = data::load_split(&records, Split::Train, cfg.model.image_size)?;
    if train.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no train records",
            a.manifest.display()
        )));
    }
    let val = data::load_split(&records, Split::Val, cfg.model.image_size)?;
    println!("data train={} val={}", train.len(), val.len());
    let result = fit_with(&train, &val, &cfg, |r: &EpochRecord| {
        println!(
            "epoch {} loss {:.6} val_auc {}",
            r.epoch,
            r.train.loss.total,
            fmt_auc(r.val_auc)
        );
    })?;
    data::save_checkpoint(&result.model, &a.out)?;
    match result.best_epoch {
        Some(e) => println!("saved {} (best epoch {e})", a.out.display()),
        None => println!("saved {} (final model)", a.out.display()),
    }
    Ok(())
}

fn eval(a: EvalArgs, exec: Execution) -> CliResult {
    let model = data::load_checkpoint(&a.model)?;
    let records = data::load_manifest(&a.manifest)?;
    let samples = data::load_split(&records, a.split.into(), model.config.image_size)?;
    if samples.is_empty() {
        return Err(CliError::Data(format!(
            "{}: split is empty",
            a.manifest.display()
        )));
    }
    let e = evaluate(&model, &samples, a.label_threshold, exec)?;
    if let Some(path) = &a.report {
        write_file(path, e.report.to_json() + "\n")?;
    }
    if let Some(path) = &a.roc {
        let csv = match &e.graph_roc {
            Some(roc) => roc_to_csv(roc),
            None => "threshold,fpr,tpr\n# auc=undefined\n".to_string(),
        };
        write_file(path, csv)?;
    }
    if let Some(path) = &a.node_f1 {
        let text: String = e
            .per_image_node_f1
            .iter()
            .map(|v| format!("{v}\n"))
            .collect();
        write_file(path, text)?;
    }
    if e.report.graph.auc.is_none() {
        println!("AUC: undefined");
    }
    println!("{}", e.report.summary_line());
    Ok(())
}

/// Min-max scaling to 0..=255; a constant map becomes 128.
fn heatmap_levels(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|v| {
            if hi > lo {
                ((v - lo) / (hi - lo) * 255.0).round() as u8
            } else {
                128
            }
        })
        .collect()
}

fn explain(a: ExplainArgs) -> CliResult {
    let model = data::load_checkpoint(&a.model)?;
    let raw = data::read_pgm(&a.image)?;
    let (h, w) = (raw.dims()[1], raw.dims()[2]);
    let s = model.config.image_size;
    let input = if (h, w) == (s, s) {
        raw
    } else {
        data::resize_bilinear(&raw, s, s)
    };
    let out = model.forward(&input)?;
    let (gh, gw) = (out.grid_h, out.grid_w);

    let mut csv = String::from("row,col,importance,node_prob\n");
    for k in 0..gh * gw {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            k / gw,
            k % gw,
            out.importance[k],
            out.node_probs[k]
        ));
    }
    write_file(&a.scores, csv)?;

    let levels = heatmap_levels(&out.importance);
    let mut pixels = Vec::with_capacity(h * w);
    for y in 0..h {
        let row = (y * gh / h).min(gh - 1);
        for x in 0..w {
            let col = (x * gw / w).min(gw - 1);
            pixels.push(levels[row * gw + col] as f64 / 255.0);
        }
    }
    data::write_pgm(&Tensor::from_vec(&[1, h, w], pixels)?, &a.heatmap)?;
    let top = (0..gh * gw).fold(0, |b, k| {
        if out.importance[k] > out.importance[b] {
            k
        } else {
            b
        }
    });
    println!(
        "graph_prob={:.6} grid={gh}x{gw} max_importance_node={},{}",
        out.graph_prob,
        top / gw,
        top % gw
    );
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CliResult {
    let modes: &[PoolingMode] = match a.pooling {
        PoolingChoice::Mean => &[PoolingMode::Mean],
        PoolingChoice::Importance => &[PoolingMode::Importance],
        PoolingChoice::Both => &[PoolingMode::Mean, PoolingMode::Importance],
    };
    let opts = CheckOptions {
        seed: a.seed,
        eps: a.eps,
        corrupt_gradient: a.corrupt_grad,
    };
    let mut worst = 0.0f64;
    let mut params = 0;
    for &pooling in modes {
        let cfg = ModelConfig {
            pooling,
            ..ModelConfig::tiny()
        };
        let r = check_model_gradients(&cfg, &opts)?;
        println!(
            "pooling={pooling} max_rel_err={:e} params={}",
            r.max_rel_err, r.n_params
        );
        worst = if r.max_rel_err.is_nan() {
            f64::NAN
        } else {
            worst.max(r.max_rel_err)
        };
        params = r.n_params;
    }
    println!("max_rel_err={worst:e} params={params}");
    if worst <= DEFAULT_TOLERANCE {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: max relative error {worst:e} exceeds {DEFAULT_TOLERANCE:e}"
        )))
    }
}

fn read_scores(path: &Path) -> CliResult<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| {
                CliError::Data(format!(
                    "{}: line {}: not a number: `{t}`",
                    path.display(),
                    i + 1
                ))
            })?;
        out.push(v);
    }
    if out.len() < 2 {
        return Err(CliError::Data(format!(
            "{}: need at least 2 scores, found {}",
            path.display(),
            out.len()
        )));
    }
    Ok(out)
}

fn compare(a: CompareArgs) -> CliResult {
    let xa = read_scores(&a.scores_a)?;
    let xb = read_scores(&a.scores_b)?;
    let r = welch_t_test(&xa, &xb).map_err(|e| CliError::Data(e.to_string()))?;
    println!("t={} dof={} p={}", r.t, r.dof, r.p_two_sided);
    Ok(())
}
