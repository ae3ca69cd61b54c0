//! `tdlab` — exact solves, seeded experiment runs, rate fitting, and config
//! generation for the policy-evaluation laboratory.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use tdlab_core::{
    build_baird, build_geometry, build_minimax, fit_rate, off_policy_population,
    on_policy_population, parse_config, plan_stepsizes, preset, preset_names,
    psi_contraction_certificate, read_summary, run_experiment, Error, ExternalInstanceFile,
    MinimaxSpec, OffPolicyFixedPoint, OffPolicyPopulation, PlanContext, PlannedStepsizes,
    StepsizePlan,
};

#[derive(Parser)]
#[command(name = "tdlab", version, about = "Policy-evaluation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print exact population quantities for an instance
    Solve(SolveArgs),
    /// Run a configured multi-trial experiment and write CSV outputs
    Run(RunArgs),
    /// Fit a log-log convergence slope to an emitted summary
    Rate(RateArgs),
    /// Print or write a built-in experiment configuration
    GenConfig(GenConfigArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// `minimax`, `baird`, or a path to an instance JSON file
    instance: String,
    /// States in the hard-family chain
    #[arg(long, default_value_t = 10)]
    n_states: usize,
    /// Feature dimension of the hard-family chain (odd, >= 3)
    #[arg(long, default_value_t = 3)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0.2)]
    gamma: f64,
    /// Self-loop perturbation of the hard-family chain
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Build even when the perturbation fails the admissibility guard
    #[arg(long)]
    no_epsilon_guard: bool,
    /// Fast stepsize for the contraction certificate
    #[arg(long)]
    alpha: Option<f64>,
    /// Slow stepsize for the contraction certificate
    #[arg(long)]
    beta: Option<f64>,
    /// Transform constant for the certificate; derived from the stepsizes
    /// when omitted
    #[arg(long)]
    varkappa: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// Path to a flat key-value configuration file
    config: PathBuf,
    /// Worker pool size; defaults to the available parallelism
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct RateArgs {
    /// Path to an emitted summary.csv
    summary: PathBuf,
    /// Checkpoint window `lo:hi` (inclusive step range)
    #[arg(long)]
    window: String,
}

#[derive(Args)]
struct GenConfigArgs {
    /// One of the built-in presets
    #[arg(long)]
    preset: String,
    /// Write here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    // die quietly when the reader closes the pipe, like any Unix filter
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }

    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Run(args) => cmd_run(args),
        Command::Rate(args) => cmd_rate(args),
        Command::GenConfig(args) => cmd_gen_config(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}

/// 2 = configuration, 3 = instance/domain, 4 = I/O.
fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Io(_) | Error::Csv(_) => 4,
        _ => 3,
    }
}

fn cmd_solve(args: SolveArgs) -> tdlab_core::Result<()> {
    let pop = match args.instance.as_str() {
        "minimax" => {
            let mut spec =
                MinimaxSpec::new(args.n_states, args.feature_dim, args.gamma, args.epsilon);
            spec.enforce_epsilon_guard = !args.no_epsilon_guard;
            let inst = build_minimax(&spec)?;
            println!(
                "instance: minimax (|S| = {}, d = {}, gamma = {}, epsilon = {})",
                args.n_states, args.feature_dim, args.gamma, args.epsilon
            );
            print_vector("q (transient self-loops)", &inst.q);

            let geometry = build_geometry(&inst.mrp, &inst.features)?;
            let solved = on_policy_population(&inst.mrp, &inst.features, &geometry)?;
            let gap = (&solved.theta_star - &inst.theta_star).amax();
            print_vector("theta* (closed form)", &inst.theta_star);
            println!("solver agreement: |closed - solved|_max = {gap:.3e}");
            println!(
                "kappa = {:.8}, lambda_min(Sigma) = {:.8}",
                geometry.kappa(),
                geometry.lambda_min()
            );

            off_policy_population(&inst.mdp, &inst.policy, &inst.policy, &inst.features)?
        }
        "baird" => {
            let inst = build_baird();
            println!("instance: baird (7 states, 8 features, gamma = 0.9)");
            off_policy_population(&inst.mdp, &inst.target, &inst.behavior, &inst.features)?
        }
        path => {
            let file = ExternalInstanceFile::load(std::path::Path::new(path))?;
            let (mdp, target, behavior, features) = file.into_parts()?;
            println!(
                "instance: {path} ({} states, {} actions, {} features, gamma = {})",
                mdp.n_states(),
                mdp.n_actions(),
                features.dim(),
                mdp.gamma()
            );
            off_policy_population(&mdp, &target, &behavior, &features)?
        }
    };
    print_population(&pop);
    print_certificate(&pop, args.alpha, args.beta, args.varkappa)
}

fn print_population(pop: &OffPolicyPopulation) {
    print_vector("mu (behavior stationary distribution)", &pop.mu_b);
    print_matrix("Sigma (feature covariance)", &pop.sigma_tilde);
    match &pop.fixed_point {
        OffPolicyFixedPoint::Unique(theta) => print_vector("fixed point", theta),
        OffPolicyFixedPoint::NonUnique { value_optimum } => {
            println!("fixed point: not identified (singular system)");
            print_vector("optimal value vector", value_optimum);
        }
    }
    println!("rho_max = {}", pop.rho_max);
    match &pop.constants {
        Some(c) => println!(
            "lambda1 = {:.10}, lambda2 = {:.10}, lambda_Sigma = {:.6}, kappa~ = {:.6}",
            c.lambda1, c.lambda2, c.lambda_sigma, c.kappa_tilde
        ),
        None => println!("spectral constants: unavailable (covariance not positive definite)"),
    }
}

fn print_certificate(
    pop: &OffPolicyPopulation,
    alpha: Option<f64>,
    beta: Option<f64>,
    varkappa: Option<f64>,
) -> tdlab_core::Result<()> {
    let (alpha, beta) = match (alpha, beta) {
        (Some(a), Some(b)) => (a, b),
        (None, None) => return Ok(()),
        _ => {
            return Err(Error::Config(
                "the certificate needs both --alpha and --beta".into(),
            ))
        }
    };
    let varkappa = match varkappa {
        Some(v) => v,
        None => {
            let plan = StepsizePlan::FixedTdc { alpha, beta };
            let ctx = PlanContext::OffPolicy { population: pop };
            match plan_stepsizes(&plan, &ctx, 1)?.sizes {
                PlannedStepsizes::Tdc {
                    varkappa: Some(v), ..
                } => v,
                _ => {
                    return Err(Error::SingularSystem(
                        "cannot derive a transform constant; pass --varkappa".into(),
                    ))
                }
            }
        }
    };
    let report = psi_contraction_certificate(pop, alpha, beta, varkappa)?;
    println!(
        "certificate (alpha = {alpha}, beta = {beta}, varkappa = {varkappa:.6}): \
         |Psi| = {:.10}, rate = {:.10}, conditions_met = {}",
        report.norm, report.bound, report.conditions_met
    );
    Ok(())
}

fn cmd_run(args: RunArgs) -> tdlab_core::Result<()> {
    let text = std::fs::read_to_string(&args.config)?;
    let config = parse_config(&text)?;
    let workers = match args.workers {
        Some(0) => {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let output = run_experiment(&config, workers)?;
    let (trace_path, summary_path, manifest_path) = tdlab_core::emit(&output, &config.out_dir)?;

    let last = output.summary.last().expect("at least one checkpoint");
    println!(
        "{} trials x {} steps on {} workers",
        output.traces.len(),
        config.steps,
        workers
    );
    println!(
        "final checkpoint t = {}: mean error = {}, band = [{}, {}], diverged = {}",
        last.step, last.mean, last.lo95, last.hi95, last.diverged
    );
    println!("wrote {}", trace_path.display());
    println!("wrote {}", summary_path.display());
    println!("wrote {}", manifest_path.display());
    Ok(())
}

fn cmd_rate(args: RateArgs) -> tdlab_core::Result<()> {
    let (lo, hi) = parse_window(&args.window)?;
    let rows = read_summary(&args.summary)?;
    let fit = fit_rate(&rows, lo, hi)?;
    println!(
        "window [{lo}, {hi}]: slope = {:.6}, intercept = {:.6}, r2 = {:.6}, points = {}",
        fit.slope, fit.intercept, fit.r2, fit.points
    );
    Ok(())
}

fn parse_window(window: &str) -> tdlab_core::Result<(u64, u64)> {
    let (lo, hi) = window
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("window must be `lo:hi`, got `{window}`")))?;
    let lo = lo
        .trim()
        .parse::<u64>()
        .map_err(|e| Error::Config(format!("bad window start `{lo}`: {e}")))?;
    let hi = hi
        .trim()
        .parse::<u64>()
        .map_err(|e| Error::Config(format!("bad window end `{hi}`: {e}")))?;
    if lo >= hi {
        return Err(Error::Config(format!(
            "window start {lo} must precede end {hi}"
        )));
    }
    Ok((lo, hi))
}

fn cmd_gen_config(args: GenConfigArgs) -> tdlab_core::Result<()> {
    let text = preset(&args.preset).ok_or_else(|| {
        Error::Config(format!(
            "unknown preset `{}`; available: {}",
            args.preset,
            preset_names().join(", ")
        ))
    })?;
    match args.out {
        Some(path) => {
            std::fs::write(&path, text)?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn print_vector(name: &str, v: &DVector<f64>) {
    let entries: Vec<String> = v.iter().map(|x| format!("{x:.10}")).collect();
    println!("{name}: [{}]", entries.join(", "));
}

fn print_matrix(name: &str, m: &DMatrix<f64>) {
    println!("{name}:");
    for i in 0..m.nrows() {
        let entries: Vec<String> = m.row(i).iter().map(|x| format!("{x:>13.10}")).collect();
        println!("  [{}]", entries.join(", "));
    }
}
