use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lowrank_mnl::densemat::{read_csv, write_csv};
use lowrank_mnl::harness::{self, ExperimentSpec, PlotKind};
use lowrank_mnl::model::{canonicalize, synth_lowrank_for};
use lowrank_mnl::sampler::{
    read_bundled_jsonl, read_rankings_jsonl, sample_bundled_dataset, sample_collab_dataset, write_bundled_jsonl,
    write_rankings_jsonl,
};
use lowrank_mnl::solver::{self, fit, SolverConfig};
use lowrank_mnl::theory::{self, BoundParams};
use lowrank_mnl::{BundledDataset, CollabDataset, Dataset, Error, PreferenceMatrix, Result, Setting};

#[derive(Parser)]
#[command(name = "lowrank-mnl", version, about = "Low-rank MNL estimation from rankings and bundled choices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random low-rank preference matrix
    Gen {
        #[arg(long)]
        setting: Setting,
        #[arg(long)]
        d1: usize,
        #[arg(long)]
        d2: usize,
        #[arg(long)]
        rank: usize,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample observations from a preference matrix
    #[command(subcommand)]
    Sample(SampleCommand),
    /// Fit the nuclear-norm regularized estimator
    Fit {
        #[arg(long)]
        setting: Setting,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        d1: usize,
        #[arg(long)]
        d2: usize,
        /// `auto` for the default weight, or an explicit value
        #[arg(long, default_value = "auto")]
        lambda: LambdaArg,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 5000)]
        max_iter: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Print the rescaled RMSE between a truth and an estimate
    Eval {
        #[arg(long)]
        setting: Setting,
        #[arg(long)]
        theta: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
    },
    /// Print reference weights and error bounds
    Bounds(BoundsArgs),
    /// Run a synthetic experiment grid
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the round-robin partition of ordered triples
    Partition {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a gnuplot script for experiment results
    Plot {
        #[arg(long)]
        records: PathBuf,
        /// scaling, collapse or lambda
        #[arg(long)]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum SampleCommand {
    /// One k-wise ranking per user
    Collab {
        #[arg(long)]
        theta: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// n bundled purchases from k1 x k2 offers
    Bundled {
        #[arg(long)]
        theta: PathBuf,
        #[arg(long)]
        k1: usize,
        #[arg(long)]
        k2: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    setting: Setting,
    #[arg(long)]
    d1: usize,
    #[arg(long)]
    d2: usize,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k1: Option<usize>,
    #[arg(long)]
    k2: Option<usize>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ExperimentKind {
    Scaling,
    LambdaSweep,
}

#[derive(Clone, Copy)]
enum LambdaArg {
    Auto,
    Value(f64),
}

impl std::str::FromStr for LambdaArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(LambdaArg::Auto);
        }
        s.parse().map(LambdaArg::Value).map_err(|_| format!("expected `auto` or a number, got {s:?}"))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_preference(path: &Path, setting: Setting) -> Result<PreferenceMatrix> {
    let theta = read_csv(path)?;
    PreferenceMatrix::try_new(theta, setting)
}

fn load_dataset(setting: Setting, path: &Path, d1: usize, d2: usize) -> Result<Dataset> {
    Ok(match setting {
        Setting::Collab => CollabDataset::new(d1, d2, read_rankings_jsonl(path)?)?.into(),
        Setting::Bundled => BundledDataset::new(d1, d2, read_bundled_jsonl(path)?)?.into(),
    })
}

fn fmt_value(v: Result<f64>) -> String {
    match v {
        Ok(x) => format!("{x:.6e}"),
        Err(e) => format!("n/a ({e})"),
    }
}

fn bounds_table(a: &BoundsArgs) -> Result<String> {
    let mut p = match a.setting {
        Setting::Collab => {
            let k = a.k.ok_or_else(|| Error::invalid("the collab setting needs --k"))?;
            BoundParams::collab(a.d1, a.d2, k, a.alpha)
        }
        Setting::Bundled => {
            let n = a.n.ok_or_else(|| Error::invalid("the bundled setting needs --n"))?;
            BoundParams {
                k1: a.k1,
                k2: a.k2,
                ..BoundParams::bundled(a.d1, a.d2, n, a.alpha)
            }
        }
    };
    p.r = a.rank;
    p.q = a.q;
    p.rho_q = a.rho;
    let lambda = theory::reference_lambda(&p)?;
    let mut s = String::new();
    let label = match a.setting {
        Setting::Collab => "lambda_0",
        Setting::Bundled => "lambda_1",
    };
    writeln!(s, "{:<22}{}", label, fmt_value(Ok(lambda))).unwrap();
    writeln!(s, "{:<22}{}", "upper_bound", fmt_value(theory::minimax_upper(&p))).unwrap();
    let lower = match theory::minimax_lower(&p) {
        Ok(l) => format!("{} (up to a universal constant)", fmt_value(Ok(l.value))),
        Err(e) => fmt_value(Err(e)),
    };
    writeln!(s, "{:<22}{}", "lower_bound", lower).unwrap();
    writeln!(s, "{:<22}{}", "crossover_samples", fmt_value(theory::upper_bound_crossover(&p))).unwrap();
    writeln!(s, "{:<22}{}", "sample_regime_ok", theory::sample_regime_ok(&p)?).unwrap();
    Ok(s)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            setting,
            d1,
            d2,
            rank,
            alpha,
            seed,
            out,
        } => write_csv(synth_lowrank_for(setting, d1, d2, rank, alpha, seed)?.theta(), &out),
        Command::Sample(SampleCommand::Collab { theta, k, seed, out }) => {
            let pm = read_preference(&theta, Setting::Collab)?;
            write_rankings_jsonl(&out, &sample_collab_dataset(&pm, k, seed)?)
        }
        Command::Sample(SampleCommand::Bundled {
            theta,
            k1,
            k2,
            n,
            seed,
            out,
        }) => {
            let pm = read_preference(&theta, Setting::Bundled)?;
            write_bundled_jsonl(&out, &sample_bundled_dataset(&pm, k1, k2, n, seed)?)
        }
        Command::Fit {
            setting,
            data,
            d1,
            d2,
            lambda,
            tol,
            max_iter,
            out,
            trace,
        } => {
            let data = load_dataset(setting, &data, d1, d2)?;
            let base = match lambda {
                LambdaArg::Auto => SolverConfig::paper_default(1.0),
                LambdaArg::Value(v) => SolverConfig::explicit(v),
            };
            let config = SolverConfig {
                rel_tol: tol,
                max_iter,
                ..base
            };
            let res = fit(&data, &config)?;
            write_csv(res.estimate.theta(), &out)?;
            if let Some(path) = trace {
                write_text(&path, &solver::trace_csv(&res.objective_trace))?;
            }
            eprintln!(
                "lambda={:.6e} iterations={} converged={} rank={} objective={:.10e}",
                res.lambda,
                res.iterations,
                res.converged,
                res.final_rank,
                res.objective()
            );
            Ok(())
        }
        Command::Eval {
            setting,
            theta,
            estimate,
        } => {
            let truth = read_csv(&theta)?;
            let est = read_csv(&estimate)?;
            // the truth only has to be valid up to its equivalence class
            let truth = canonicalize(&truth, setting).into_inner();
            println!("{:.10e}", harness::rmse(&est, &truth, setting)?);
            Ok(())
        }
        Command::Bounds(args) => {
            print!("{}", bounds_table(&args)?);
            Ok(())
        }
        Command::Experiment { kind, config, out } => {
            let spec = ExperimentSpec {
                out_path: Some(out),
                ..ExperimentSpec::from_json_file(&config)?
            };
            match kind {
                ExperimentKind::Scaling => harness::run_scaling_experiment(&spec)?,
                ExperimentKind::LambdaSweep => harness::run_lambda_sweep(&spec)?,
            };
            Ok(())
        }
        Command::Partition { k, out } => write_text(&out, &theory::format_rounds(&theory::triple_partition(k)?)),
        Command::Plot { records, kind, out } => harness::emit_plot_script(&records, kind, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
