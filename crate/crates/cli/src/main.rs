use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use guided::io::{self, CompareOptions, Drive, ModelFile, PolicyFile, Sweep};
use guided::sim::StreamConfig;
use guided::Error;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "guided", version, about = "Energy-aware cascade and graph detector design")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "GUIDED_THREADS")]
    threads: Option<usize>,

    /// Increase log verbosity (-v, -vv).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Operating {
    /// Energy price; overrides the model file.
    #[arg(long, conflicts_with = "budget")]
    lambda: Option<f64>,
    /// Energy budget in mJ/frame; λ is calibrated to meet it.
    #[arg(long)]
    budget: Option<f64>,
    /// Belief grid size.
    #[arg(long)]
    grid: Option<usize>,
}

impl Operating {
    fn drive(&self) -> Drive {
        match (self.lambda, self.budget) {
            (Some(l), _) => Drive::Lambda(l),
            (None, Some(b)) => Drive::Budget(b),
            (None, None) => Drive::File,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Belief,
    Adaptive,
}

#[derive(Subcommand)]
enum Command {
    /// Replace uncertain stage models by their least-favorable pairs.
    Robustify {
        model: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Solve for the optimal policy and report its risk decomposition.
    Optimize {
        model: PathBuf,
        #[command(flatten)]
        op: Operating,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Also write the policy for later simulation.
        #[arg(long)]
        policy_out: Option<PathBuf>,
    },
    /// Sweep the prior and compare against duty-cycling (CSV).
    Compare {
        model: PathBuf,
        #[command(flatten)]
        op: Operating,
        /// Prior sweep as lo:hi:n.
        #[arg(long)]
        sweep_pi0: Option<Sweep>,
        #[arg(long, default_value_t = 1_000_000)]
        n_frames: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run a saved policy on a simulated frame stream.
    Simulate {
        model: PathBuf,
        policy: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Belief)]
        mode: ModeArg,
        /// Adaptation step size.
        #[arg(long, default_value_t = 1e-3)]
        mu: f64,
        /// Adaptive frames discarded before measuring.
        #[arg(long, default_value_t = 100_000)]
        burn_in: u64,
        #[arg(long, default_value_t = 1_000_000)]
        n_frames: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Report whether early positive decisions could improve the cascade.
    CheckOptimality {
        model: PathBuf,
        #[command(flatten)]
        op: Operating,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write the bundled synthetic three-stage model.
    Fixture {
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 1,
        Error::Schema(_)
        | Error::Json(_)
        | Error::Input(_)
        | Error::IndexOutOfRange { .. }
        | Error::DegenerateContamination { .. }
        | Error::Graph(_)
        | Error::PolicyMismatch(_) => 3,
        Error::InfeasibleBand { .. } | Error::InfeasibleBudget { .. } => 4,
        Error::Numerical(_) => 5,
    }
}

fn emit(out: Option<&Path>, text: &str) -> guided::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("results serialize");
    s.push('\n');
    s
}

fn run(cli: Cli) -> guided::Result<()> {
    match cli.command {
        Command::Robustify { model, out } => {
            let file = ModelFile::load(&model)?;
            let robust = io::cmd_robustify(&file)?;
            emit(out.as_deref(), &(robust.to_json() + "\n"))
        }
        Command::Optimize {
            model,
            op,
            out,
            policy_out,
        } => {
            let file = ModelFile::load(&model)?;
            let result = io::cmd_optimize(&file, op.drive(), op.grid)?;
            if let Some(p) = policy_out {
                std::fs::write(p, json(&result.policy_file()))?;
            }
            let summary = match &result {
                io::OptimizeOutput::Cascade { meta, summary, .. } => {
                    json(&serde_json::json!({ "kind": "cascade", "meta": meta, "summary": summary }))
                }
                io::OptimizeOutput::Graph { meta, summary, .. } => {
                    json(&serde_json::json!({ "kind": "graph", "meta": meta, "summary": summary }))
                }
            };
            emit(out.as_deref(), &summary)
        }
        Command::Compare {
            model,
            op,
            sweep_pi0,
            n_frames,
            seed,
            out,
        } => {
            let file = ModelFile::load(&model)?;
            let opts = CompareOptions {
                sweep: sweep_pi0,
                n_frames,
                seed,
                grid_size: op.grid,
                drive: op.drive(),
            };
            emit(out.as_deref(), &io::cmd_compare(&file, &opts)?.to_csv())
        }
        Command::Simulate {
            model,
            policy,
            mode,
            mu,
            burn_in,
            n_frames,
            seed,
            out,
        } => {
            let file = ModelFile::load(&model)?;
            let text = std::fs::read_to_string(&policy)?;
            let policy: PolicyFile = serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
            let cfg = match mode {
                ModeArg::Belief => StreamConfig::new(n_frames, seed),
                ModeArg::Adaptive => StreamConfig::adaptive(n_frames, seed, mu, burn_in),
            };
            emit(out.as_deref(), &json(&io::cmd_simulate(&file, &policy, cfg)?))
        }
        Command::CheckOptimality { model, op, out } => {
            let file = ModelFile::load(&model)?;
            emit(
                out.as_deref(),
                &json(&io::cmd_check_optimality(&file, op.drive(), op.grid)?),
            )
        }
        Command::Fixture { out } => emit(out.as_deref(), &(io::fixture_file().to_json() + "\n")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
