//! Subcommand bodies. Each returns a table plus optional notes and a
//! hard-failure message.

use rayon::prelude::*;
use wsl_core::densities::{WishartLogDensity, WishartParams};
use wsl_core::expansion::{error_curve, exponent, sup_error};
use wsl_core::kde::{
    b_opt_mse, bias_asymp, boundary_variance_asymp, exact_kernel_moments, g_functional, kernel_term_variance_is,
    mse_optimal, normality_experiment, replicate_estimates, smoothed_density_mc, variance_asymp, wishart_density_hessian,
    BoundarySpec, Centering,
};
use wsl_core::sampling::{mc_trace_moments, WishartSampler};
use wsl_core::stats::{ks_distance_std_normal, log_log_slope, RunningStats};
use wsl_core::symcore::SpdMatrix;
use wsl_core::tvbounds::distance_scan;

use crate::output::{num, Table};
use crate::Common;

pub struct Run {
    pub table: Table,
    pub notes: Vec<String>,
    pub hard_failure: Option<String>,
}

impl Run {
    fn table(table: Table) -> Self {
        Self {
            table,
            notes: Vec::new(),
            hard_failure: None,
        }
    }
}

type CmdResult = Result<Run, String>;

fn core<T>(r: wsl_core::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn dim(c: &Common, default: usize) -> Result<usize, String> {
    match c.d.unwrap_or(default) {
        0 => Err("--d must be at least 1".into()),
        d => Ok(d),
    }
}

fn ascending(name: &str, v: &[f64]) -> Result<(), String> {
    if v.is_empty() {
        return Err(format!("{name} list is empty"));
    }
    if v.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(format!("{name} list must be strictly ascending"));
    }
    Ok(())
}

fn nu_list(c: &Common, default: &[f64]) -> Result<Vec<f64>, String> {
    let list = if let Some(v) = &c.nu {
        v.clone()
    } else if c.nu_min.is_some() || c.nu_max.is_some() || c.nu_step.is_some() {
        let (lo, hi, step) = (c.nu_min.unwrap_or(5.0), c.nu_max.unwrap_or(205.0), c.nu_step.unwrap_or(10.0));
        if !(step > 0.0) {
            return Err("--nu-step must be positive".into());
        }
        let count = ((hi - lo) / step + 1e-9).floor();
        if !(count >= 0.0) {
            return Err("--nu-min exceeds --nu-max".into());
        }
        (0..=count as usize).map(|i| lo + step * i as f64).collect()
    } else {
        default.to_vec()
    };
    ascending("nu", &list)?;
    Ok(list)
}

fn b_list(c: &Common, default: &[f64]) -> Result<Vec<f64>, String> {
    let mut v = c.b_list.clone().unwrap_or_else(|| default.to_vec());
    if v.is_empty() {
        return Err("b list is empty".into());
    }
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup();
    Ok(v)
}

fn single_n(c: &Common, default: usize) -> Result<usize, String> {
    match c.n.as_deref() {
        None => Ok(default),
        Some([n]) if *n > 0 => Ok(*n),
        Some(_) => Err("--n takes one positive value for this subcommand".into()),
    }
}

fn replicates(c: &Common, default: usize) -> usize {
    c.replicates.unwrap_or(default)
}

/// Data law and evaluation point away from the boundary.
fn interior_truth(d: usize) -> Result<(WishartParams, SpdMatrix), String> {
    if d == 1 {
        let law = core(WishartParams::new(4.0, scalar(0.5)))?;
        return Ok((law, scalar(0.5)));
    }
    let nu0 = 2.0 * d as f64 + 2.0;
    let s0 = core(SpdMatrix::identity(d).scale(0.5 / d as f64))?;
    let at = core(s0.scale(nu0))?;
    Ok((core(WishartParams::new(nu0, s0))?, at))
}

fn scalar(x: f64) -> SpdMatrix {
    SpdMatrix::from_diagonal(&[x]).expect("positive scalar")
}

fn density(law: &WishartParams, s: &SpdMatrix) -> Result<f64, String> {
    Ok(core(WishartLogDensity::new(law).eval(s))?.exp())
}

pub fn expansion_error(c: &Common) -> CmdResult {
    let d = dim(c, 2)?;
    let nus = nu_list(c, &(0..21).map(|i| 5.0 + 10.0 * i as f64).collect::<Vec<_>>())?;
    let mut t = Table::new(&["nu", "E0", "E1", "E2", "exp0", "exp1", "exp2"]);
    match c.only_order {
        None => {
            for r in core(error_curve(d, &nus, c.budget, c.seed))?.rows {
                let mut row = vec![num(r.nu)];
                row.extend(r.e.iter().map(|&v| num(v)));
                row.extend(r.exponent.iter().map(|&v| num(v)));
                t.push(row);
            }
        }
        Some(order) => {
            if order > 2 {
                return Err(format!("--only-order must be 0, 1 or 2, got {order}"));
            }
            let es = nus
                .par_iter()
                .map(|&nu| sup_error(nu, d, order, c.budget, c.seed))
                .collect::<wsl_core::Result<Vec<_>>>()
                .map_err(|e| e.to_string())?;
            for (&nu, e) in nus.iter().zip(es) {
                let mut row = vec![num(nu), String::new(), String::new(), String::new(), String::new(), String::new(), String::new()];
                row[1 + order as usize] = num(e);
                row[4 + order as usize] = num(exponent(e, nu));
                t.push(row);
            }
        }
    }
    Ok(Run::table(t))
}

pub fn moments_check(c: &Common) -> CmdResult {
    let d = dim(c, 2)?;
    let nus = nu_list(c, &[50.0])?;
    let n = single_n(c, 1_000_000)?;
    let mut t = Table::new(&["d", "nu", "k", "exact", "mc", "stderr", "z"]);
    let mut worst = 0.0f64;
    for nu in nus {
        let p = core(WishartParams::new(nu, SpdMatrix::identity(d)))?;
        for r in core(mc_trace_moments(&p, n, c.seed))? {
            worst = worst.max(r.z().abs());
            t.push(vec![d.to_string(), num(nu), r.k.to_string(), num(r.exact), num(r.mc_estimate), num(r.mc_stderr), num(r.z())]);
        }
    }
    let mut run = Run::table(t);
    if worst > 5.0 {
        run.hard_failure = Some(format!("trace moment |z| = {worst:.2} exceeds 5"));
    }
    Ok(run)
}

pub fn kde_variance(c: &Common) -> CmdResult {
    let d = dim(c, 1)?;
    let bs = b_list(c, &[0.01, 0.02, 0.04])?;
    let reps = replicates(c, 200);
    let mut t = Table::new(&[
        "d", "n", "b", "boundary_j", "predicted", "mc", "mc_stderr", "exact", "slope_mc", "slope_exact", "target_slope",
    ]);
    struct Point {
        b: f64,
        predicted: f64,
        mc: f64,
        mc_stderr: f64,
        exact: f64,
    }
    let (n, label, target, points) = match &c.boundary_j {
        None => {
            let n = single_n(c, if d == 1 { 10_000 } else { 20_000 })?;
            let (law, at) = interior_truth(d)?;
            let sampler = WishartSampler::new(&law);
            let f_at = density(&law, &at)?;
            let est = core(replicate_estimates(|rng| sampler.sample(rng), n, &bs, &at, reps, c.seed))?;
            let points = est
                .iter()
                .map(|r| {
                    let (m1, m2) = core(exact_kernel_moments(r.b, &at, &law))?;
                    Ok(Point {
                        b: r.b,
                        predicted: core(variance_asymp(n, r.b, &at, f_at))?.leading_term,
                        mc: r.variance,
                        mc_stderr: r.variance * (2.0 / (r.replicates as f64 - 1.0)).sqrt(),
                        exact: (m2 - m1 * m1) / n as f64,
                    })
                })
                .collect::<Result<Vec<_>, String>>()?;
            (n, String::new(), -wsl_core::kde::r_dim(d) / 2.0, points)
        }
        Some(j1) => {
            let n = single_n(c, 10_000)?;
            if j1.iter().any(|&j| j == 0 || j > d) {
                return Err(format!("--boundary-J indices must lie in 1..={d}"));
            }
            let j: Vec<usize> = j1.iter().map(|&j| j - 1).collect();
            let law = core(WishartParams::new(d as f64 + 1.0, core(SpdMatrix::identity(d).scale(0.5))?))?;
            let dens = WishartLogDensity::new(&law);
            let f = |x: &SpdMatrix| dens.eval(x).map(f64::exp).unwrap_or(0.0);
            let mut points = Vec::new();
            let mut target = 0.0;
            for &b in &bs {
                let spec = core(BoundarySpec::new(SpdMatrix::identity(d), j.clone(), b))?;
                target = spec.exponent();
                let at = core(spec.point())?;
                let per_term = core(kernel_term_variance_is(f, b, &at, 2000, reps, c.seed))?;
                let (m1, m2) = core(exact_kernel_moments(b, &at, &law))?;
                points.push(Point {
                    b,
                    predicted: core(boundary_variance_asymp(n, &spec, f(&at)))?.leading_term,
                    mc: per_term.mean() / n as f64,
                    mc_stderr: per_term.stderr() / n as f64,
                    exact: (m2 - m1 * m1) / n as f64,
                });
            }
            let label = j1.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(";");
            (n, label, target, points)
        }
    };
    let b: Vec<f64> = points.iter().map(|p| p.b).collect();
    let (slope_mc, slope_exact) = if b.len() >= 2 {
        (
            num(log_log_slope(&b, &points.iter().map(|p| p.mc).collect::<Vec<_>>())),
            num(log_log_slope(&b, &points.iter().map(|p| p.exact).collect::<Vec<_>>())),
        )
    } else {
        (String::new(), String::new())
    };
    for p in &points {
        t.push(vec![
            d.to_string(),
            n.to_string(),
            num(p.b),
            label.clone(),
            num(p.predicted),
            num(p.mc),
            num(p.mc_stderr),
            num(p.exact),
            slope_mc.clone(),
            slope_exact.clone(),
            num(target),
        ]);
    }
    Ok(Run::table(t))
}

pub fn kde_bias(c: &Common) -> CmdResult {
    let d = dim(c, 1)?;
    let bs = b_list(c, &[0.01, 0.02])?;
    let draws = single_n(c, 1_000_000)?;
    let law = core(WishartParams::new(d as f64 + 5.0, SpdMatrix::identity(d)))?;
    let at = core(SpdMatrix::identity(d).scale(4.0))?;
    let dens = WishartLogDensity::new(&law);
    let f = |x: &SpdMatrix| dens.eval(x).map(f64::exp).unwrap_or(0.0);
    let f_at = f(&at);
    let hess = |s: &SpdMatrix| wishart_density_hessian(&law, s);
    let g = core(g_functional(&hess, &at))?;
    let sampler = WishartSampler::new(&law);
    let mut t = Table::new(&[
        "d", "b", "f", "g", "predicted_bias", "mc_bias", "mc_stderr", "kernel_avg_bias", "kernel_avg_stderr", "exact_bias",
        "ratio",
    ]);
    for (i, &b) in bs.iter().enumerate() {
        let predicted = core(bias_asymp(&hess, &at, b))?.leading_term;
        let est = core(smoothed_density_mc(f, |rng| sampler.sample(rng), b, &at, draws, c.seed.wrapping_add(i as u64)))?;
        let (m1, _) = core(exact_kernel_moments(b, &at, &law))?;
        let mc_bias = est.smoothed - f_at;
        t.push(vec![
            d.to_string(),
            num(b),
            num(f_at),
            num(g),
            num(predicted),
            num(mc_bias),
            num(est.smoothed_stderr),
            num(est.kernel_average - f_at),
            num(est.kernel_average_stderr),
            num(m1 - f_at),
            num(mc_bias / predicted),
        ]);
    }
    Ok(Run::table(t))
}

pub fn kde_bandwidth(c: &Common) -> CmdResult {
    let d = dim(c, 2)?;
    let ns = c.n.clone().unwrap_or_else(|| vec![1_000, 10_000, 100_000, 1_000_000]);
    if ns.is_empty() || ns.contains(&0) || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err("--n must be a strictly ascending list of positive sizes".into());
    }
    let (law, _) = interior_truth(d)?;
    let at = core(law.scale().scale(law.nu() - d as f64 - 1.0))?;
    let f_at = density(&law, &at)?;
    let g = core(g_functional(&|s: &SpdMatrix| wishart_density_hessian(&law, s), &at))?;
    let b_opt = ns.iter().map(|&n| core(b_opt_mse(n, &at, f_at, g))).collect::<Result<Vec<_>, String>>()?;
    let nf: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let slope = if ns.len() >= 2 { num(log_log_slope(&nf, &b_opt)) } else { String::new() };
    let mut t = Table::new(&["d", "n", "b_opt", "b_opt_exponent", "mse_opt", "f", "g"]);
    for (&n, &b) in ns.iter().zip(&b_opt) {
        t.push(vec![
            d.to_string(),
            n.to_string(),
            num(b),
            slope.clone(),
            num(core(mse_optimal(n, &at, f_at, g))?),
            num(f_at),
            num(g),
        ]);
    }
    Ok(Run::table(t))
}

pub fn tv_scan(c: &Common) -> CmdResult {
    let d = dim(c, 1)?;
    let nus = nu_list(c, &[50.0, 100.0, 200.0, 400.0])?;
    let n = single_n(c, 400_000)?;
    let scan = core(distance_scan(d, &nus, n, c.c, c.seed))?;
    let mut header = vec!["d", "nu", "tv", "tv_stderr", "hellinger", "sqrt_nu_tv"];
    if d == 1 {
        header.push("tv_quadrature");
    }
    header.extend(["bound_tv", "bound_hellinger"]);
    let mut t = Table::new(&header);
    for r in &scan.rows {
        let mut row = vec![d.to_string(), num(r.nu), num(r.tv), num(r.tv_stderr), num(r.hellinger), num(r.sqrt_nu_tv())];
        if let Some(q) = r.tv_quadrature {
            row.push(num(q));
        }
        row.extend([num(r.bound_tv), num(r.bound_hellinger)]);
        t.push(row);
    }
    let mut run = Run::table(t);
    run.notes.push(format!("sqrt(nu)*TV spread: {:.1}%", 100.0 * scan.sqrt_nu_tv_spread()));
    Ok(run)
}

pub fn normality(c: &Common) -> CmdResult {
    let d = dim(c, 1)?;
    let b = match c.b_list.as_deref() {
        None => 0.02,
        Some([b]) => *b,
        Some(_) => return Err("--b-list takes one bandwidth for normality".into()),
    };
    let n = single_n(c, 10_000)?;
    let reps = replicates(c, 500);
    let (law, at) = if d == 1 { (core(WishartParams::new(4.0, scalar(0.5)))?, scalar(0.25)) } else { interior_truth(d)? };
    let f_at = density(&law, &at)?;
    let sampler = WishartSampler::new(&law);
    let out = core(normality_experiment(|rng| sampler.sample(rng), n, b, &at, f_at, reps, c.seed, Centering::ReplicateMean))?;
    let mut t = Table::new(&["replicate", "standardized"]);
    for (i, v) in out.standardized.iter().enumerate() {
        t.push(vec![i.to_string(), num(*v)]);
    }
    let var: RunningStats = out.standardized.iter().copied().collect();
    let mut run = Run::table(t);
    run.notes.push(format!(
        "KS distance {:.4}, variance {:.4}, scale factor {:.2}",
        ks_distance_std_normal(&out.standardized),
        var.variance(),
        out.scale_factor
    ));
    if out.low_scale_warning {
        run.notes.push("warning: n^(1/2) b^(r/4) < 5, the normal limit may be inaccurate".into());
    }
    Ok(run)
}
