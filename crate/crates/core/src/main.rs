use clap::{Parser, Subcommand};
use eqfold::cli::run::{run, FlagOverrides};
use eqfold::cli::{parse_config, RunConfig};
use eqfold::Error;

/// Fold-point toolkit for concave-convex elliptic systems.
#[derive(Parser)]
#[command(name = "eqfold", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct CommonArgs {
    /// Run configuration (flat sectioned key=value file)
    #[arg(long)]
    config: String,
    /// Output directory (overrides [output] dir)
    #[arg(long)]
    out_dir: Option<String>,
    /// RNG seed (overrides [run] seed)
    #[arg(long)]
    seed: Option<u64>,
    /// Newton / corrector tolerance override
    #[arg(long)]
    tol_newton: Option<f64>,
    /// Continuation step cap override
    #[arg(long)]
    max_steps: Option<usize>,
    /// Upper lambda bound override
    #[arg(long)]
    lambda_max: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the lambda = 0 sublinear baseline and report its stability
    Baseline(CommonArgs),
    /// Trace the solution branch by pseudo-arclength continuation
    Continue(CommonArgs),
    /// Trace, detect and refine the fold; emit the certificate
    Fold(CommonArgs),
    /// Evaluate the extended quotient, gradients and infimum probe
    Quotient {
        #[command(flatten)]
        common: CommonArgs,
        /// State CSV (defaults to the baseline when omitted)
        #[arg(long)]
        state: Option<String>,
    },
    /// Run the invariant suite over a stored branch
    Verify(CommonArgs),
    /// Fold pipelines over a list of grid resolutions, concurrently
    Sweep(CommonArgs),
}

fn main() {
    let cli = Cli::parse();
    let (name, common, state) = match &cli.command {
        Command::Baseline(c) => ("baseline", c, None),
        Command::Continue(c) => ("continue", c, None),
        Command::Fold(c) => ("fold", c, None),
        Command::Quotient { common, state } => ("quotient", common, state.clone()),
        Command::Verify(c) => ("verify", c, None),
        Command::Sweep(c) => ("sweep", c, None),
    };
    std::process::exit(match execute(name, common, state) {
        Ok(()) => 0,
        Err(err) => {
            let payload = serde_json::json!({
                "error": { "kind": err.kind(), "message": err.to_string() }
            });
            eprintln!("{payload}");
            exit_code(&err)
        }
    });
}

fn execute(name: &str, common: &CommonArgs, state: Option<String>) -> Result<(), Error> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|err| Error::Config(format!("cannot read config '{}': {err}", common.config)))?;
    let mut cfg: RunConfig = parse_config(&text)?;
    let flags = FlagOverrides {
        out_dir: common.out_dir.clone(),
        seed: common.seed,
        tol_newton: common.tol_newton,
        max_steps: common.max_steps,
        lambda_max: common.lambda_max,
        state,
    };
    flags.apply(&mut cfg);
    run(name, &cfg, &text, &flags)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidProblem(_)
        | Error::InvalidExponent(_)
        | Error::UnsupportedDimension(_)
        | Error::GridTooCoarse(_)
        | Error::Shape(_) => 2,
        Error::Verification(_) => 4,
        _ => 3,
    }
}
