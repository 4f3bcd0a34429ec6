//! Two-term expansion of the Wishart/SMN log-ratio, bulk-set membership,
//! the sup-error functionals E₀, E₁, E₂ and their exponent diagnostics.

use std::cmp::Ordering;
use std::f64::consts::SQRT_2;

use rand::Rng;
use rayon::prelude::*;

use crate::densities::{log_ratio_stable, trace_powers_of, DeltaResidual, Standardizer};
use crate::error::{Error, Result};
use crate::sampling::RngStream;
use crate::symcore::{SpdMatrix, SymMatrix};

/// Bulk set B_{ν,S}(η): max_i |√(2/ν) λ_i(Δ)| ≤ η ν^{-1/3}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BulkSpec {
    pub eta: f64,
    pub nu: f64,
}

impl BulkSpec {
    pub fn new(eta: f64, nu: f64) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) || !(nu > 0.0) {
            return Err(Error::Domain(format!("need eta in (0,1) and nu > 0, got eta={eta}, nu={nu}")));
        }
        Ok(Self { eta, nu })
    }

    /// η = 2^{-1/2} ν^{-1/6}, for which the bulk is exactly max|λ| ≤ 1/2.
    pub fn figure_choice(nu: f64) -> Self {
        Self {
            eta: nu.powf(-1.0 / 6.0) / SQRT_2,
            nu,
        }
    }

    /// Largest admissible |λ| for this spec.
    pub fn lambda_radius(&self) -> f64 {
        self.eta * self.nu.powf(-1.0 / 3.0) * (self.nu / 2.0).sqrt()
    }
}

pub fn in_bulk(spec: &BulkSpec, lambdas: &[f64]) -> bool {
    let c = (2.0 / spec.nu).sqrt();
    let lim = spec.eta * spec.nu.powf(-1.0 / 3.0);
    // The figure choice makes both sides equal at |λ| = 1/2; compare with a
    // few ulps of slack so that boundary points are kept.
    lambdas.iter().all(|l| c * l.abs() <= lim * (1.0 + 4.0 * f64::EPSILON))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionTerms {
    /// Coefficient of ν^{-1/2}.
    pub t_half: f64,
    /// Coefficient of ν^{-1} in the log-ratio.
    pub t_one_log: f64,
    /// Coefficient of ν^{-1} in the ratio itself.
    pub t_one_ratio: f64,
}

fn stirling_constant(d: usize) -> f64 {
    let d = d as f64;
    d * (2.0 * d * d + 3.0 * d - 5.0) / 24.0 + d / 6.0
}

pub fn expansion_terms(d: usize, tr1: f64, tr2: f64, tr3: f64, tr4: f64) -> ExpansionTerms {
    let dp1 = d as f64 + 1.0;
    let t_half = SQRT_2 / 3.0 * tr3 - dp1 / SQRT_2 * tr1;
    let t_one_log = -0.5 * tr4 + 0.5 * dp1 * tr2 - stirling_constant(d);
    let t_one_ratio = t_one_log + tr3 * tr3 / 9.0 - dp1 / 3.0 * tr3 * tr1 + 0.25 * dp1 * dp1 * tr1 * tr1;
    ExpansionTerms {
        t_half,
        t_one_log,
        t_one_ratio,
    }
}

pub fn expansion_terms_from_eigenvalues(lambdas: &[f64]) -> ExpansionTerms {
    let t = trace_powers_of(lambdas);
    expansion_terms(lambdas.len(), t[0], t[1], t[2], t[3])
}

pub fn expansion_terms_from_delta(delta: &DeltaResidual) -> ExpansionTerms {
    let t = delta.trace_powers;
    expansion_terms(delta.eigenvalues.len(), t[0], t[1], t[2], t[3])
}

/// ν^{-1/2} t_half + ν^{-1} t_one_log.
pub fn log_ratio_expansion(nu: f64, terms: &ExpansionTerms) -> f64 {
    terms.t_half / nu.sqrt() + terms.t_one_log / nu
}

/// 1 + ν^{-1/2} t_half + ν^{-1} t_one_ratio.
pub fn ratio_expansion(nu: f64, terms: &ExpansionTerms) -> f64 {
    1.0 + terms.t_half / nu.sqrt() + terms.t_one_ratio / nu
}

/// Log-form expansion truncated after `order` terms (0, 1 or 2).
pub fn partial_log_expansion(nu: f64, terms: &ExpansionTerms, order: u8) -> f64 {
    match order {
        0 => 0.0,
        1 => terms.t_half / nu.sqrt(),
        _ => log_ratio_expansion(nu, terms),
    }
}

/// |log ratio − partial expansion of the given order| at eigenvalues λ.
pub fn pointwise_error(nu: f64, lambdas: &[f64], order: u8) -> Result<f64> {
    let lr = log_ratio_stable(nu, lambdas.len(), lambdas)?;
    let terms = expansion_terms_from_eigenvalues(lambdas);
    Ok((lr - partial_log_expansion(nu, &terms, order)).abs())
}

/// Location and value of a sup search.
#[derive(Debug, Clone, PartialEq)]
pub struct SupResult {
    pub value: f64,
    pub argmax: Vec<f64>,
    pub evaluations: usize,
}

const BULK_HALF_WIDTH: f64 = 0.5;
const INV_PHI: f64 = 0.618_033_988_749_894_9;
const POLISH_SWEEPS: usize = 4;
const GOLDEN_STEPS: usize = 40;

fn better(a: &(f64, Vec<f64>), b: &(f64, Vec<f64>)) -> Ordering {
    // Greater value wins; on ties the lexicographically smaller λ wins.
    a.0.total_cmp(&b.0).then_with(|| {
        b.1.iter()
            .zip(&a.1)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    })
}

fn pick(a: (f64, Vec<f64>), b: (f64, Vec<f64>)) -> (f64, Vec<f64>) {
    if better(&a, &b) == Ordering::Less {
        b
    } else {
        a
    }
}

fn canonical(mut l: Vec<f64>) -> Vec<f64> {
    l.sort_by(f64::total_cmp);
    l
}

/// Non-decreasing index tuples over an m-point axis.
fn ascending_grid(d: usize, m: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = if m == 1 {
        vec![0.0]
    } else {
        (0..m)
            .map(|k| -BULK_HALF_WIDTH + 2.0 * BULK_HALF_WIDTH * k as f64 / (m - 1) as f64)
            .collect()
    };
    let mut out = Vec::new();
    let mut idx = vec![0usize; d];
    loop {
        out.push(idx.iter().map(|&k| axis[k]).collect());
        // Next non-decreasing tuple, last coordinate fastest.
        let mut pos = d;
        while pos > 0 && idx[pos - 1] == m - 1 {
            pos -= 1;
        }
        if pos == 0 {
            return out;
        }
        idx[pos - 1] += 1;
        let v = idx[pos - 1];
        for slot in idx.iter_mut().skip(pos) {
            *slot = v;
        }
    }
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Halton points with a seed-dependent Cranley–Patterson rotation.
fn quasi_random_points(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = RngStream::new(seed, 0x5eed);
    let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    (1..=count as u64)
        .map(|i| {
            let p = (0..d)
                .map(|k| {
                    let base = PRIMES[k % PRIMES.len()];
                    let u = (radical_inverse(i, base) + shift[k]).fract();
                    -BULK_HALF_WIDTH + 2.0 * BULK_HALF_WIDTH * u
                })
                .collect();
            canonical(p)
        })
        .collect()
}

/// Approximate sup over max|λ| ≤ 1/2 of the order-`order` log-form error.
pub fn sup_error_detailed(nu: f64, d: usize, order: u8, budget: usize, seed: u64) -> Result<SupResult> {
    if order > 2 {
        return Err(Error::Unsupported(format!("expansion order {order} (only 0, 1, 2)")));
    }
    if d == 0 || budget == 0 {
        return Err(Error::InvalidInput("need d >= 1 and budget >= 1".into()));
    }
    if !(nu > d as f64 + 1.0) {
        return Err(Error::Domain(format!("sup error needs nu > d + 1, got nu={nu}, d={d}")));
    }
    let objective = |l: &[f64]| pointwise_error(nu, l, order).unwrap_or(f64::NEG_INFINITY);
    let m = (budget as f64).powf(1.0 / d as f64).ceil() as usize;
    let mut points = ascending_grid(d, m.max(2));
    points.extend(quasi_random_points(d, budget, seed));
    let mut evaluations = points.len();
    let best = points
        .into_par_iter()
        .map(|l| (objective(&l), l))
        .reduce(|| (f64::NEG_INFINITY, vec![f64::INFINITY; d]), pick);

    // Coordinate-wise golden-section polish within one grid cell.
    let h = 2.0 * BULK_HALF_WIDTH / (m.max(2) - 1) as f64;
    let mut incumbent = best;
    for _ in 0..POLISH_SWEEPS {
        for k in 0..d {
            let x0 = incumbent.1[k];
            let lo = (x0 - h).max(-BULK_HALF_WIDTH);
            let hi = (x0 + h).min(BULK_HALF_WIDTH);
            let at = |x: f64| {
                let mut l = incumbent.1.clone();
                l[k] = x;
                let l = canonical(l);
                (objective(&l), l)
            };
            let (mut a, mut b) = (lo, hi);
            let mut c = b - INV_PHI * (b - a);
            let mut e = a + INV_PHI * (b - a);
            let mut fc = at(c);
            let mut fe = at(e);
            let mut cand = pick(at(lo), at(hi));
            evaluations += 4;
            for _ in 0..GOLDEN_STEPS {
                if better(&fc, &fe) != Ordering::Less {
                    b = e;
                    e = c;
                    fe = fc;
                    c = b - INV_PHI * (b - a);
                    fc = at(c);
                } else {
                    a = c;
                    c = e;
                    fc = fe;
                    e = a + INV_PHI * (b - a);
                    fe = at(e);
                }
                evaluations += 1;
            }
            cand = pick(cand, pick(fc, fe));
            incumbent = pick(incumbent, cand);
        }
    }
    Ok(SupResult {
        value: incumbent.0,
        argmax: incumbent.1,
        evaluations,
    })
}

pub fn sup_error(nu: f64, d: usize, order: u8, budget: usize, seed: u64) -> Result<f64> {
    Ok(sup_error_detailed(nu, d, order, budget, seed)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorCurveRow {
    pub nu: f64,
    pub e: [f64; 3],
    /// ln E_i / ln(1/ν).
    pub exponent: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub d: usize,
    pub rows: Vec<ErrorCurveRow>,
}

pub fn exponent(e: f64, nu: f64) -> f64 {
    e.ln() / (1.0 / nu).ln()
}

/// E₀, E₁, E₂ and exponents over an ascending ν list; rows run in parallel.
pub fn error_curve(d: usize, nu_list: &[f64], budget: usize, seed: u64) -> Result<ErrorCurve> {
    if nu_list.is_empty() {
        return Err(Error::InvalidInput("empty nu list".into()));
    }
    if nu_list.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput("nu list must be strictly ascending".into()));
    }
    let rows = nu_list
        .par_iter()
        .map(|&nu| {
            let mut e = [0.0; 3];
            for (order, slot) in e.iter_mut().enumerate() {
                *slot = sup_error(nu, d, order as u8, budget, seed)?;
            }
            Ok(ErrorCurveRow {
                nu,
                e,
                exponent: e.map(|v| exponent(v, nu)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorCurve { d, rows })
}

/// Fitted slope of ln|log ratio − two-term expansion| against ln ν at fixed λ.
pub fn residual_slope(lambdas: &[f64], nus: &[f64]) -> Result<f64> {
    let terms = expansion_terms_from_eigenvalues(lambdas);
    let resid = nus
        .iter()
        .map(|&nu| Ok((log_ratio_stable(nu, lambdas.len(), lambdas)? - log_ratio_expansion(nu, &terms)).abs()))
        .collect::<Result<Vec<_>>>()?;
    Ok(crate::stats::log_log_slope(nus, &resid))
}

/// Ratio expansion for transformed variables h(W) vs h(N): the Jacobians
/// cancel, so this is the untransformed ratio expansion at X = h⁻¹(y).
pub fn transformed_ratio_expansion<F>(nu: f64, s: &SpdMatrix, h_inverse: F, y: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<SymMatrix>,
{
    let x = h_inverse(y)?;
    if x.dim() != s.dim() {
        return Err(Error::InvalidInput("h_inverse returned a matrix of the wrong size".into()));
    }
    let x = SpdMatrix::new(x).map_err(|_| Error::Domain("h_inverse(y) is not positive definite".into()))?;
    let st = Standardizer::new(nu, s)?;
    let delta = DeltaResidual::from_matrix(st.delta_matrix(x.sym())?)?;
    Ok(ratio_expansion(nu, &expansion_terms_from_delta(&delta)))
}
