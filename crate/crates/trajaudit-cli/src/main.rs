//! Single entry point: audits traces, builds benchmark pairs, evaluates
//! judges, checks evaluator consistency, calibrates the stagnation
//! threshold, and serves as a reference judge process.
//!
//! Exit codes: 0 success, 1 fatal or usage error, 2 partial (some items
//! failed; reports were still written).

mod commands;
mod config;
mod stub;

use clap::{Parser, Subcommand};
use config::Overrides;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "trajaudit", version, about = "Dense trajectory auditing and judge evaluation")]
struct Cli {
    /// TOML config file; flags override file values.
    #[arg(long, global = true, env = "TRAJAUDIT_CONFIG")]
    config: Option<PathBuf>,

    /// Top-level seed every random component derives from.
    #[arg(long, global = true, env = "TRAJAUDIT_SEED")]
    seed: Option<u64>,

    /// Worker-thread bound; parallelism never changes output content.
    #[arg(long, global = true, env = "TRAJAUDIT_JOBS")]
    jobs: Option<usize>,

    /// Output directory (created if missing).
    #[arg(long, global = true, env = "TRAJAUDIT_OUT")]
    out: Option<PathBuf>,

    /// Reject out-of-range judge potentials instead of clamping.
    #[arg(long, global = true, env = "TRAJAUDIT_STRICT", conflicts_with = "clamp")]
    strict: bool,

    /// Clamp out-of-range judge potentials into [0, 1] with a warning count.
    #[arg(long, global = true, env = "TRAJAUDIT_CLAMP")]
    clamp: bool,

    /// Judge spec: builtin:<name>[:k=v,..], subprocess:<mode>:<command>,
    /// http:<mode>:<url>, or file:<path>.
    #[arg(long, global = true, env = "TRAJAUDIT_JUDGE")]
    judge: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Audit progress traces into report tables.
    Audit {
        /// JSON Lines trace file.
        #[arg(long, env = "TRAJAUDIT_TRACES")]
        traces: PathBuf,
    },
    /// Benchmark-pair construction.
    Pairs {
        #[command(subcommand)]
        action: PairsAction,
    },
    /// Judge evaluation against a pairs file.
    Judge {
        #[command(subcommand)]
        action: JudgeAction,
    },
    /// Evaluator consistency checks.
    Consistency {
        #[command(subcommand)]
        action: ConsistencyAction,
    },
    /// Calibrate the stagnation threshold from judge noise.
    Calibrate {
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        tail: f64,
    },
    /// Per-episode metric values.
    Metrics {
        #[arg(long, env = "TRAJAUDIT_TRACES")]
        traces: PathBuf,
        /// Also compute the rejected candidate metrics side by side.
        #[arg(long, env = "TRAJAUDIT_INCLUDE_DISCARDED")]
        include_discarded: bool,
    },
    /// Mix seeded Gaussian noise into an NPY image.
    Noise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, env = "TRAJAUDIT_NOISE_LEVEL")]
        noise_level: f64,
    },
    /// Serve the subprocess judge protocol on stdin/stdout.
    JudgeStub {
        /// index, inverted, noisy, or random.
        #[arg(long, default_value = "index")]
        oracle: String,
        #[arg(long, default_value_t = 0.01)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        stub_seed: u64,
    },
}

#[derive(Subcommand, Debug)]
enum PairsAction {
    /// Discretize annotated episodes and sample stratified pairs.
    Build {
        /// JSON Lines episode annotations.
        #[arg(long, env = "TRAJAUDIT_ANNOTATIONS")]
        annotations: PathBuf,
        /// Emit a per-frame perturbation manifest at this noise level.
        #[arg(long, env = "TRAJAUDIT_NOISE_LEVEL")]
        noise_level: Option<f64>,
    },
}

#[derive(Subcommand, Debug)]
enum JudgeAction {
    /// Score one judge on a pairs file.
    Eval {
        #[arg(long, env = "TRAJAUDIT_PAIRS")]
        pairs: PathBuf,
    },
    /// Score several judges and rank them.
    Compare {
        #[arg(long, env = "TRAJAUDIT_PAIRS")]
        pairs: PathBuf,
        /// Judge specs, repeatable.
        #[arg(long = "spec", required = true)]
        specs: Vec<String>,
    },
}

#[derive(Subcommand, Debug)]
enum ConsistencyAction {
    /// Check triple additivity of a pairwise evaluator over a state set.
    Check {
        /// potential_diff or clipped:<cap>.
        #[arg(long)]
        evaluator: String,
        /// JSON Lines states file: {"state_id", "potential", "class"?}.
        #[arg(long)]
        states: PathBuf,
        #[arg(long, env = "TRAJAUDIT_TOLERANCE", default_value_t = 1e-9)]
        tolerance: f64,
        /// Sample this many random triples instead of exhaustive checking.
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn main() {
    // clap's own usage failure would exit 2, which this tool reserves for
    // partial results; remap usage errors to 1.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = i32::from(e.use_stderr());
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    // The stub must not touch config or the filesystem: it only speaks the
    // protocol.
    if let Command::JudgeStub { oracle, sigma, stub_seed } = &cli.command {
        return stub::run_stub(oracle, *sigma, *stub_seed);
    }

    let file = config::load_file(cli.config.as_deref())?;
    let overrides = Overrides {
        seed: cli.seed,
        jobs: cli.jobs,
        out: cli.out.clone(),
        strict: cli.strict,
        clamp: cli.clamp,
        judge: cli.judge.clone(),
    };
    let run_config = config::resolve(&file, &overrides)?;

    match &cli.command {
        Command::Audit { traces } => commands::cmd_audit(&run_config, traces),
        Command::Pairs { action } => match action {
            PairsAction::Build { annotations, noise_level } => {
                commands::cmd_pairs_build(&run_config, annotations, *noise_level)
            }
        },
        Command::Judge { action } => match action {
            JudgeAction::Eval { pairs } => commands::cmd_judge_eval(&run_config, pairs),
            JudgeAction::Compare { pairs, specs } => {
                commands::cmd_judge_compare(&run_config, pairs, specs)
            }
        },
        Command::Consistency { action } => match action {
            ConsistencyAction::Check { evaluator, states, tolerance, samples } => {
                commands::cmd_consistency(&run_config, evaluator, states, *tolerance, *samples)
            }
        },
        Command::Calibrate { sigma, tail } => commands::cmd_calibrate(&run_config, *sigma, *tail),
        Command::Metrics { traces, include_discarded } => {
            commands::cmd_metrics(&run_config, traces, *include_discarded)
        }
        Command::Noise { input, output, noise_level } => {
            commands::cmd_noise(&run_config, input, output, *noise_level)
        }
        Command::JudgeStub { .. } => unreachable!("handled above"),
    }
}
