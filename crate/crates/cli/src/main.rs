//! `wsl`: batch experiments emitting versioned CSV.
//!
//! Exit codes: 0 success, 2 configuration error, 3 statistical hard failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "wsl", version, about = "Wishart local approximation, kernel density and distance experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sup errors E0, E1, E2 of the expansion over the bulk and their exponents.
    ///
    /// Columns: nu,E0,E1,E2,exp0,exp1,exp2 (orders skipped by --only-order are empty).
    ExpansionError(Common),
    /// Monte Carlo versus exact E tr(Delta^k), k = 1..4, at S = I.
    ///
    /// Columns: d,nu,k,exact,mc,stderr,z. Exits 3 if any |z| > 5.
    MomentsCheck(Common),
    /// Replicated variance of the kernel estimator against the asymptotic law.
    ///
    /// Truth: d=1 Wishart(4, 0.5) at S=0.5; d>=2 Wishart(2d+2, I/(2d)) at its mean.
    /// With --boundary-J the truth is Wishart(d+1, I/2) at S = diag with the listed
    /// eigenvalues of I scaled by b, and variances come from importance sampling.
    /// Columns: d,n,b,boundary_j,predicted,mc,mc_stderr,exact,slope_mc,slope_exact,target_slope.
    KdeVariance(Common),
    /// Smoothing bias f_b(S) - f(S) against b g(S).
    ///
    /// Truth: Wishart(d+5, I) at S = 4I.
    /// Columns: d,b,f,g,predicted_bias,mc_bias,mc_stderr,kernel_avg_bias,kernel_avg_stderr,exact_bias,ratio.
    KdeBias(Common),
    /// MSE-optimal bandwidths over a list of sample sizes (--n a,b,c).
    ///
    /// Truth as for kde-variance, evaluated at its mode. Columns: d,n,b_opt,b_opt_exponent,mse_opt,f,g.
    KdeBandwidth(Common),
    /// Total-variation and Hellinger distances between the Wishart and its matched normal.
    ///
    /// Columns: d,nu,tv,tv_stderr,hellinger,sqrt_nu_tv[,tv_quadrature],bound_tv,bound_hellinger.
    TvScan(Common),
    /// Standardized replicates of the kernel estimator for a normality check.
    ///
    /// Truth: d=1 Wishart(4, 0.5) at S=0.25; d>=2 as for kde-variance. Columns: replicate,standardized.
    Normality(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Matrix dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Explicit comma-separated ν list.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    nu: Option<Vec<f64>>,
    #[arg(long)]
    nu_min: Option<f64>,
    #[arg(long)]
    nu_max: Option<f64>,
    #[arg(long)]
    nu_step: Option<f64>,
    /// Comma-separated bandwidths.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    b_list: Option<Vec<f64>>,
    /// Sample size (a comma-separated list for kde-bandwidth).
    #[arg(long, value_delimiter = ',', num_args = 1)]
    n: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Evaluation budget for the sup search.
    #[arg(long, default_value_t = 10_000)]
    budget: usize,
    /// Number of replicated datasets.
    #[arg(long)]
    replicates: Option<usize>,
    /// Output CSV path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Compute a single expansion order (0, 1 or 2).
    #[arg(long)]
    only_order: Option<u8>,
    /// 1-based eigenvalue indices scaled by b, comma-separated.
    #[arg(long = "boundary-J", value_delimiter = ',', num_args = 1)]
    boundary_j: Option<Vec<usize>>,
    /// Constant in the distance bounds.
    #[arg(long, default_value_t = wsl_core::tvbounds::WORKING_C)]
    c: f64,
}

fn configure_threads() -> Result<(), String> {
    if let Ok(v) = std::env::var("WSL_THREADS") {
        let n: usize = v.parse().map_err(|_| format!("WSL_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            return Err("WSL_THREADS must be positive".into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let (result, common) = match &cli.command {
        Command::ExpansionError(c) => (commands::expansion_error(c), c),
        Command::MomentsCheck(c) => (commands::moments_check(c), c),
        Command::KdeVariance(c) => (commands::kde_variance(c), c),
        Command::KdeBias(c) => (commands::kde_bias(c), c),
        Command::KdeBandwidth(c) => (commands::kde_bandwidth(c), c),
        Command::TvScan(c) => (commands::tv_scan(c), c),
        Command::Normality(c) => (commands::normality(c), c),
    };
    let run = match result {
        Ok(run) => run,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = output::write(&run.table, common.out.as_deref()) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    for note in &run.notes {
        eprintln!("{note}");
    }
    match run.hard_failure {
        Some(msg) => {
            eprintln!("hard failure: {msg}");
            ExitCode::from(3)
        }
        None => ExitCode::SUCCESS,
    }
}
