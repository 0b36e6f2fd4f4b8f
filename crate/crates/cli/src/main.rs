use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparse_secagg::analysis::{
    convergence_bound, p_prime, p_tilde, privacy_guarantee, ConvergenceParams, PrivacyParams,
};
use sparse_secagg::experiments::{run_experiment, ExperimentSpec};
use sparse_secagg::masking::selection_probability;
use sparse_secagg::quantizer::DEFAULT_LEVEL;
use sparse_secagg::Error;

const EXIT_ASSERTION: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "sparse-secagg", version, about = "Sparsified secure aggregation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML spec.
    Run {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the spec's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the closed-form quantities for one parameter set.
    Theory(TheoryArgs),
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long = "N")]
    users: u32,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    theta: f64,
    #[arg(long)]
    gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    mu: f64,
    #[arg(long = "L", default_value_t = 2.0)]
    smoothness: f64,
    /// Local steps per round.
    #[arg(long = "E", default_value_t = 5)]
    local_steps: usize,
    /// Global rounds.
    #[arg(long = "J", default_value_t = 100)]
    rounds: u64,
    /// Quantization level.
    #[arg(long = "c", default_value_t = DEFAULT_LEVEL)]
    level: u64,
    #[arg(long = "d", default_value_t = 100)]
    dim: usize,
    /// Bound on stochastic gradient norms.
    #[arg(long = "G", default_value_t = 20.0)]
    grad_bound: f64,
    /// Per-user gradient noise, shared by every user.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// F* minus the weighted sum of local optima.
    #[arg(long, default_value_t = 0.0)]
    divergence: f64,
    /// Squared distance from the initial model to the optimum.
    #[arg(long, default_value_t = 1.0)]
    dist0: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { spec, seed, out } => run(&spec, seed, out),
        Command::Theory(args) => theory(&args),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_ASSERTION)
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load_spec(path: &Path) -> Result<ExperimentSpec, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn run(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExitCode, Failure> {
    let mut spec = load_spec(path)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    if out.is_some() {
        spec.out = out;
    }
    spec.validate()?;
    let dir = spec.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let outcome = run_experiment(&spec)?;

    let io = |e: std::io::Error| Failure::Runtime(format!("{}: {e}", dir.display()));
    fs::create_dir_all(&dir).map_err(io)?;
    for table in &outcome.tables {
        fs::write(dir.join(table.file_name(spec.experiment, spec.seed)), &table.csv).map_err(io)?;
    }
    let effective = toml::to_string(&spec).map_err(|e| Failure::Runtime(e.to_string()))?;
    let report = outcome.report();
    let summary = format!(
        "experiment: {}\nseed: {}\nresult: {}\n\n[spec]\n{effective}\n[report]\n{report}",
        spec.experiment,
        spec.seed,
        if outcome.passed() { "pass" } else { "fail" }
    );
    fs::write(dir.join("summary.txt"), summary).map_err(io)?;
    print!("{report}");
    Ok(if outcome.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_ASSERTION)
    })
}

fn theory(a: &TheoryArgs) -> Result<ExitCode, Failure> {
    let pp = PrivacyParams {
        alpha: a.alpha,
        theta: a.theta,
        gamma: a.gamma,
        users: a.users,
    };
    pp.validate()?;
    if a.rounds == 0 {
        return Err(Failure::Usage("config error at `J`: must be at least 1".into()));
    }
    let users = a.users as usize;
    let cp = ConvergenceParams {
        mu: a.mu,
        smoothness: a.smoothness,
        local_steps: a.local_steps,
        iterations: a.rounds * a.local_steps as u64,
        grad_bound: a.grad_bound,
        sigmas: vec![a.sigma; users],
        divergence: a.divergence,
        level: a.level,
        users: a.users,
        dim: a.dim,
        alpha: a.alpha,
        theta: a.theta,
        weights: vec![1.0 / users as f64; users],
        initial_distance_sq: a.dist0,
    };
    cp.validate()?;
    let guarantee = privacy_guarantee(&pp);
    // C is evaluated at the last synchronization step
    let t_sync = (a.rounds - 1) * a.local_steps as u64;
    let bound = convergence_bound(&cp, t_sync);
    let rows = [
        ("p", selection_probability(a.alpha, a.users)),
        ("p_prime", p_prime(a.alpha, a.users, a.theta)),
        ("p_tilde", p_tilde(a.alpha, a.users, a.theta)),
        ("T", guarantee.t),
        ("T_small_alpha", guarantee.small_alpha),
        ("T_finite_N", guarantee.finite_n),
        ("nu", cp.schedule().nu),
        ("t_sync", t_sync as f64),
        ("eta_t_sync", bound.eta),
        ("B", bound.b),
        ("C", bound.c),
        ("bound_J", bound.bound),
    ];
    let mut out = String::new();
    for (name, value) in rows {
        let _ = writeln!(out, "{name:<14} {value}");
    }
    print!("{out}");
    Ok(ExitCode::SUCCESS)
}
