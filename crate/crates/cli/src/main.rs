//! Command-line front end for the graph-matching workbench.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use qapmatch::baselines::{EigScaling, LowRankConfig};
use qapmatch::gnn::{BnMode, DecodeRule, GnnConfig, InputFeature};
use qapmatch::graphgen::{GraphModel, InstanceConfig};
use qapmatch::harness::{
    self, evaluate, evaluate_baselines, load_checkpoint, read_recovery_csv, train,
    write_recovery_csv, write_report_csv, BaselineKind, ExperimentConfig,
};
use qapmatch::landscape::{
    concentration_sweep, gradient_gap, semicircle_moment, write_sweep_csv, SweepRow, WignerSpec,
};
use qapmatch::seed;

#[derive(Parser)]
#[command(
    name = "qapmatch",
    version,
    about = "Graph matching workbench: planted QAP instances, a trainable GNN matcher, spectral baselines, and optimization-landscape experiments"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a JSONL dataset of planted samples.
    Generate(GenerateArgs),
    /// Train the GNN matcher.
    Train(TrainArgs),
    /// Evaluate a checkpoint (plus baselines) over a noise grid.
    Eval(EvalArgs),
    /// Run a non-trained baseline over a noise grid.
    Baseline(BaselineArgs),
    /// Optimization-landscape experiments.
    #[command(subcommand)]
    Landscape(LandscapeCmd),
    /// Merge recovery CSVs into one pivoted table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Er,
    Regular,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputArg {
    Degree,
    TwoHopDegree,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecodeArg {
    Argmax,
    Lap,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Umeyama,
    Lowrank,
}

#[derive(Args)]
struct InstanceArgs {
    /// Random-graph family.
    #[arg(long, value_enum, default_value = "er")]
    model: ModelArg,
    /// Node count.
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// Edge density (Erdos-Renyi).
    #[arg(long)]
    p: Option<f64>,
    /// Node degree (regular graphs).
    #[arg(long)]
    deg: Option<usize>,
}

impl InstanceArgs {
    fn graph_model(&self) -> Result<GraphModel, CliError> {
        match self.model {
            ModelArg::Er => Ok(GraphModel::Er {
                p: self.p.unwrap_or(0.2),
            }),
            ModelArg::Regular => {
                let deg = self
                    .deg
                    .ok_or_else(|| CliError::Usage("--model regular requires --deg".into()))?;
                Ok(GraphModel::Regular { deg })
            }
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Edge-flip noise level.
    #[arg(long, default_value_t = 0.0)]
    pe: f64,
    /// Number of samples.
    #[arg(long)]
    count: usize,
    #[arg(long)]
    seed: u64,
    /// Output JSONL path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GnnArgs {
    #[arg(long, default_value_t = 20)]
    layers: usize,
    #[arg(long, default_value_t = 20)]
    feat: usize,
    /// Thresholded adjacency power count J.
    #[arg(long, default_value_t = 2)]
    j_powers: usize,
    #[arg(long, value_enum, default_value = "degree")]
    input: InputArg,
}

impl GnnArgs {
    fn config(&self) -> GnnConfig {
        GnnConfig {
            layers: self.layers,
            feat: self.feat,
            j_powers: self.j_powers,
            input_feature: match self.input {
                InputArg::Degree => InputFeature::Degree,
                InputArg::TwoHopDegree => InputFeature::TwoHopDegree,
            },
            bn_mode: BnMode::BatchStats,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Serialized ExperimentConfig (JSON); flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    gnn: GnnArgs,
    #[arg(long, default_value_t = 20000)]
    train_size: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Lower end of the per-sample training noise range.
    #[arg(long, default_value_t = 0.0)]
    pe_min: f64,
    /// Upper end of the per-sample training noise range.
    #[arg(long, default_value_t = 0.1)]
    pe_max: f64,
    /// Train from a JSONL dataset instead of generated samples.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Fix a corpus of train_size samples instead of streaming fresh ones.
    #[arg(long)]
    no_resample: bool,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    instance: InstanceArgs,
    /// Noise levels to evaluate.
    #[arg(long, value_delimiter = ',', default_value = "0.0,0.02,0.05,0.1")]
    pe: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Baselines to run alongside the model.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = vec![MethodArg::Umeyama, MethodArg::Lowrank])]
    baselines: Vec<MethodArg>,
    #[arg(long, value_enum, default_value = "argmax")]
    decode: DecodeArg,
    /// Rank for the low-rank baseline.
    #[arg(long, default_value_t = 4)]
    lowrank_k: usize,
    #[arg(long)]
    seed: u64,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.0,0.02,0.05,0.1")]
    pe: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 4)]
    lowrank_k: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum LandscapeCmd {
    /// Concentration of sampled quadratic forms across matrix sizes.
    Sweep(SweepArgs),
    /// Distance between sampled and mean-field loss gradients.
    Gradgap(GradgapArgs),
    /// Semicircle-density moment of a given order.
    Moments {
        #[arg(long)]
        m: usize,
    },
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, value_delimiter = ',', default_value = "100,200,400,800")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Random unit directions per trial for the deviation maximum.
    #[arg(long, default_value_t = 64)]
    beta_draws: usize,
    /// Wigner normalization exponent (A = n^-scale W).
    #[arg(long, default_value_t = 0.5)]
    scale: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradgapArgs {
    #[arg(long, value_delimiter = ',', default_value = "100,400,1600")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Noise level for B = A + nu.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0.5)]
    scale: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    /// Coefficients to probe (comma list); a seeded random unit vector of
    /// length d+1 when omitted.
    #[arg(long, value_delimiter = ',')]
    beta: Option<Vec<f64>>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Recovery CSVs to merge.
    #[arg(long, value_delimiter = ',', required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Runtime(qapmatch::Error),
}

impl From<qapmatch::Error> for CliError {
    fn from(e: qapmatch::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    harness::init_thread_pool();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Command::Generate(args) => {
            let cfg = InstanceConfig {
                model: args.instance.graph_model()?,
                n: args.instance.n,
                p_e: args.pe,
                identity_perm: false,
            };
            let samples = harness::generate_dataset(&cfg, args.count, args.seed)?;
            match &args.out {
                Some(path) => harness::write_jsonl(path, &samples)?,
                None => {
                    let stdout = std::io::stdout();
                    let mut w = BufWriter::new(stdout.lock());
                    for s in &samples {
                        serde_json::to_writer(&mut w, s).map_err(qapmatch::Error::from)?;
                        w.write_all(b"\n").map_err(qapmatch::Error::from)?;
                    }
                }
            }
            Ok(())
        }
        Command::Train(args) => {
            let mut cfg = match &args.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(qapmatch::Error::from)?;
                    serde_json::from_str::<ExperimentConfig>(&text)
                        .map_err(qapmatch::Error::from)?
                }
                None => ExperimentConfig {
                    model: args.instance.graph_model()?,
                    n: args.instance.n,
                    gnn: args.gnn.config(),
                    train_size: args.train_size,
                    epochs: args.epochs,
                    batch: args.batch,
                    lr: args.lr,
                    train_pe: (args.pe_min, args.pe_max),
                    dataset: args.dataset.clone(),
                    resample: !args.no_resample,
                    ..ExperimentConfig::default()
                },
            };
            cfg.seed = args.seed;
            cfg.out_dir = args.out_dir.clone();
            let outcome = train(&cfg)?;
            println!("checkpoint: {}", outcome.checkpoint_path.display());
            println!("log: {}", outcome.log_path.display());
            if let Some(last) = outcome.log.last() {
                println!(
                    "final epoch {}: mean loss {:.6}, train recovery {:.4}",
                    last.epoch, last.mean_loss, last.train_recovery
                );
            }
            Ok(())
        }
        Command::Eval(args) => {
            let model = load_checkpoint(&args.checkpoint)?;
            let cfg = ExperimentConfig {
                model: args.instance.graph_model()?,
                n: args.instance.n,
                p_e_grid: args.pe.clone(),
                trials: args.trials,
                baselines: args.baselines.iter().map(|m| baseline_kind(*m)).collect(),
                decode: match args.decode {
                    DecodeArg::Argmax => DecodeRule::Argmax,
                    DecodeArg::Lap => DecodeRule::Lap,
                },
                lowrank: LowRankConfig {
                    k: args.lowrank_k,
                    scaling: EigScaling::SqrtAbsProduct,
                },
                seed: args.seed,
                ..ExperimentConfig::default()
            };
            let table = evaluate(&model, &cfg)?;
            write_table(&args.out, |w| write_recovery_csv(w, &table))
        }
        Command::Baseline(args) => {
            let cfg = ExperimentConfig {
                model: args.instance.graph_model()?,
                n: args.instance.n,
                p_e_grid: args.pe.clone(),
                trials: args.trials,
                baselines: vec![baseline_kind(args.method)],
                lowrank: LowRankConfig {
                    k: args.lowrank_k,
                    scaling: EigScaling::SqrtAbsProduct,
                },
                seed: args.seed,
                ..ExperimentConfig::default()
            };
            let table = evaluate_baselines(&cfg)?;
            write_table(&args.out, |w| write_recovery_csv(w, &table))
        }
        Command::Landscape(cmd) => run_landscape(cmd),
        Command::Report(args) => {
            let mut rows = Vec::new();
            for path in &args.inputs {
                rows.extend(read_recovery_csv(path)?);
            }
            write_table(&args.out, |w| write_report_csv(w, &rows))
        }
    }
}

fn baseline_kind(m: MethodArg) -> BaselineKind {
    match m {
        MethodArg::Umeyama => BaselineKind::Umeyama,
        MethodArg::Lowrank => BaselineKind::LowRank,
    }
}

fn run_landscape(cmd: LandscapeCmd) -> Result<(), CliError> {
    match cmd {
        LandscapeCmd::Sweep(args) => {
            let spec = WignerSpec {
                n: 0,
                scale: args.scale,
                noise_level: 0.0,
            };
            let rows = concentration_sweep(
                &spec,
                args.d,
                args.k,
                &args.sizes,
                args.trials,
                args.beta_draws,
                args.sigma2,
                args.seed,
            )?;
            write_table(&args.out, |w| write_sweep_csv(w, &rows))
        }
        LandscapeCmd::Gradgap(args) => {
            let beta = match &args.beta {
                Some(b) => {
                    if b.len() != args.d + 1 {
                        return Err(CliError::Usage(format!(
                            "--beta needs {} coefficients for --d {}",
                            args.d + 1,
                            args.d
                        )));
                    }
                    b.clone()
                }
                None => {
                    qapmatch::landscape::random_unit_beta(args.d, seed::derive(args.seed, u64::MAX))
                }
            };
            let spec = WignerSpec {
                n: 0,
                scale: args.scale,
                noise_level: args.noise,
            };
            let mut rows: Vec<SweepRow> = Vec::new();
            for (i, &n) in args.sizes.iter().enumerate() {
                let gap = gradient_gap(
                    &spec,
                    &beta,
                    n,
                    args.trials,
                    args.sigma2,
                    seed::derive(args.seed, i as u64),
                )?;
                rows.extend(gap.rows(1));
            }
            write_table(&args.out, |w| write_sweep_csv(w, &rows))
        }
        LandscapeCmd::Moments { m } => {
            let mut line = String::new();
            let _ = write!(line, "{:.12}", semicircle_moment(m));
            println!("{line}");
            Ok(())
        }
    }
}

fn write_table<F>(out: &Option<PathBuf>, write_fn: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> qapmatch::Result<()>,
{
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path).map_err(qapmatch::Error::from)?);
            write_fn(&mut w)?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            write_fn(&mut w)?;
        }
    }
    Ok(())
}
