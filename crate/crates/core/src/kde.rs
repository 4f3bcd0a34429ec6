//! Wishart asymmetric-kernel density estimation on the SPD cone: the
//! estimator, its bias functional g(S), variance constants, A_b(S), MSE and
//! MISE bandwidth rules, and replication experiments.

use std::f64::consts::{LN_2, PI};
use std::io::{Read, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::densities::{WishartLogDensity, WishartParams};
use crate::error::{Error, Result};
use crate::sampling::{chunked_mc, RngStream, WishartSampler};
use crate::special::{ln_gamma, ln_multigamma};
use crate::stats::RunningStats;
use crate::symcore::{
    halfvec_weights, spd_inverse, sym_eigen, unvecp_slice, vecp, vecp_len, vecp_pairs, SpdMatrix, SymMatrix,
};

const EVAL_CHUNK: usize = 4096;

/// Observations on the SPD cone and a bandwidth b with 1/b > d − 1.
#[derive(Debug, Clone)]
pub struct KdeModel {
    d: usize,
    b: f64,
    data: Vec<SpdMatrix>,
    logdets: Vec<f64>,
}

impl KdeModel {
    pub fn new(data: Vec<SpdMatrix>, bandwidth: f64) -> Result<Self> {
        let d = data
            .first()
            .ok_or_else(|| Error::InvalidInput("KDE needs at least one observation".into()))?
            .dim();
        if data.iter().any(|x| x.dim() != d) {
            return Err(Error::InvalidInput("observations have mixed dimensions".into()));
        }
        check_bandwidth(d, bandwidth)?;
        let logdets = data.iter().map(|x| x.logdet()).collect();
        Ok(Self {
            d,
            b: bandwidth,
            data,
            logdets,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn bandwidth(&self) -> f64 {
        self.b
    }

    pub fn data(&self) -> &[SpdMatrix] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same data, different bandwidth.
    pub fn with_bandwidth(&self, bandwidth: f64) -> Result<Self> {
        check_bandwidth(self.d, bandwidth)?;
        Ok(Self {
            b: bandwidth,
            ..self.clone()
        })
    }
}

fn check_bandwidth(d: usize, b: f64) -> Result<()> {
    if !(b > 0.0) || !(1.0 / b > d as f64 - 1.0) {
        return Err(Error::Domain(format!(
            "bandwidth {b} is inadmissible for d={d}: need b > 0 and 1/b > d - 1"
        )));
    }
    Ok(())
}

/// Kernel Wishart(1/b, bS) prepared for repeated evaluation.
struct Kernel {
    half_shape: f64,
    sigma_inv: DMatrix<f64>,
    log_norm: f64,
}

impl Kernel {
    fn new(b: f64, s: &SpdMatrix) -> Self {
        let d = s.dim() as f64;
        let nu = 1.0 / b;
        let logdet_sigma = d * b.ln() + s.logdet();
        Self {
            half_shape: 0.5 * (nu - d - 1.0),
            sigma_inv: spd_inverse(s).into_sym().into_matrix() / b,
            log_norm: -0.5 * nu * d * LN_2 - 0.5 * nu * logdet_sigma - ln_multigamma(s.dim(), 0.5 * nu),
        }
    }

    fn log_eval(&self, x: &DMatrix<f64>, logdet_x: f64) -> f64 {
        self.half_shape * logdet_x - 0.5 * self.sigma_inv.component_mul(x).sum() + self.log_norm
    }
}

/// f̂(S) = n⁻¹ Σ K_{1/b, bS}(X_i).
pub fn kde_eval(m: &KdeModel, s: &SpdMatrix) -> Result<f64> {
    if s.dim() != m.d {
        return Err(Error::InvalidInput(format!("evaluation point is {}x{}, data are {}x{}", s.dim(), s.dim(), m.d, m.d)));
    }
    check_bandwidth(m.d, m.b)?;
    let k = Kernel::new(m.b, s);
    let partial: Vec<f64> = m
        .data
        .par_chunks(EVAL_CHUNK)
        .zip(m.logdets.par_chunks(EVAL_CHUNK))
        .map(|(xs, lds)| xs.iter().zip(lds).map(|(x, &ld)| k.log_eval(x.matrix(), ld).exp()).sum::<f64>())
        .collect();
    Ok(partial.iter().sum::<f64>() / m.len() as f64)
}

/// r(d) = d(d+1)/2.
pub fn r_dim(d: usize) -> f64 {
    vecp_len(d) as f64
}

/// ψ(K) = det(√π K)^{-(d+1)/2} / 2^{d(d+2)/2}.
pub fn psi(k: &SpdMatrix) -> f64 {
    log_psi(k).exp()
}

fn log_psi(k: &SpdMatrix) -> f64 {
    let d = k.dim() as f64;
    let logdet = 0.5 * d * PI.ln() + k.logdet();
    -0.5 * (d + 1.0) * logdet - 0.5 * d * (d + 2.0) * LN_2
}

/// Hessian of f in vecp coordinates at S (an r(d)×r(d) symmetric matrix).
pub trait Hessian: Sync {
    fn hessian(&self, s: &SpdMatrix) -> Result<DMatrix<f64>>;
}

impl<F> Hessian for F
where
    F: Fn(&SpdMatrix) -> Result<DMatrix<f64>> + Sync,
{
    fn hessian(&self, s: &SpdMatrix) -> Result<DMatrix<f64>> {
        self(s)
    }
}

/// g(S) = ½ Σ_{k,l} W_{kl}(S) ∂²f/∂s_k∂s_l with W the ν = 1 covariance
/// pattern of vecp.
pub fn g_functional(hessian: &dyn Hessian, s: &SpdMatrix) -> Result<f64> {
    let h = hessian.hessian(s)?;
    let r = vecp_len(s.dim());
    if h.nrows() != r || h.ncols() != r {
        return Err(Error::InvalidInput(format!("Hessian must be {r}x{r}, got {}x{}", h.nrows(), h.ncols())));
    }
    Ok(0.5 * halfvec_weights(s).component_mul(&h).sum())
}

/// An asymptotic approximation: `value` is the full expression the theory
/// provides, `leading_term` its dominant part, and `claimed_error_order`
/// the size of what was dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticReport {
    pub value: f64,
    pub leading_term: f64,
    pub claimed_error_order: String,
}

impl AsymptoticReport {
    fn single(leading: f64, tag: &str) -> Self {
        Self {
            value: leading,
            leading_term: leading,
            claimed_error_order: tag.to_string(),
        }
    }
}

/// Leading pointwise bias b·g(S).
pub fn bias_asymp(hessian: &dyn Hessian, s: &SpdMatrix, b: f64) -> Result<AsymptoticReport> {
    Ok(AsymptoticReport::single(b * g_functional(hessian, s)?, "o(b)"))
}

/// n⁻¹ b^{-r/2} ψ(S) f(S).
pub fn variance_asymp(n: usize, b: f64, s: &SpdMatrix, f_at_s: f64) -> Result<AsymptoticReport> {
    if !(f_at_s >= 0.0) {
        return Err(Error::Domain(format!("density value must be nonnegative, got {f_at_s}")));
    }
    let r = r_dim(s.dim());
    let lead = b.powf(-0.5 * r) * psi(s) * f_at_s / n as f64;
    Ok(AsymptoticReport::single(lead, "O(n^-1 b^(-r/2) b^(1/2))"))
}

/// Evaluation point S = V diag(λ̃) Vᵀ built from K = V diag(λ) Vᵀ by
/// multiplying the eigenvalues with (0-based, ascending-order) indices in J
/// by b.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySpec {
    pub k: SpdMatrix,
    pub j: Vec<usize>,
    pub b: f64,
}

impl BoundarySpec {
    pub fn new(k: SpdMatrix, mut j: Vec<usize>, b: f64) -> Result<Self> {
        j.sort_unstable();
        j.dedup();
        if j.iter().any(|&i| i >= k.dim()) {
            return Err(Error::InvalidInput(format!("boundary index out of range for d={}", k.dim())));
        }
        check_bandwidth(k.dim(), b)?;
        Ok(Self { k, j, b })
    }

    pub fn point(&self) -> Result<SpdMatrix> {
        let e = sym_eigen(self.k.sym())?;
        let b = self.b;
        let lam: Vec<f64> = e
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(i, &l)| if self.j.contains(&i) { b * l } else { l })
            .collect();
        let m = SymMatrix::from_diagonal(&lam).transform(&e.eigenvectors);
        SpdMatrix::new(m)
    }

    /// −r/2 − |J|(d+1)/2.
    pub fn exponent(&self) -> f64 {
        let d = self.k.dim();
        -0.5 * r_dim(d) - 0.5 * self.j.len() as f64 * (d as f64 + 1.0)
    }
}

/// n⁻¹ b^{-r/2 − |J|(d+1)/2} ψ(K) f(S).
pub fn boundary_variance_asymp(n: usize, spec: &BoundarySpec, f_at_s: f64) -> Result<AsymptoticReport> {
    if !(f_at_s >= 0.0) {
        return Err(Error::Domain(format!("density value must be nonnegative, got {f_at_s}")));
    }
    let lead = spec.b.powf(spec.exponent()) * psi(&spec.k) * f_at_s / n as f64;
    Ok(AsymptoticReport::single(lead, "O(n^-1 b^(exponent) b^(1/2)) + O(n^-1)"))
}

/// A_b(S) = ∫ K_{1/b, bS}(X)² dX in closed form; needs 1/b > d + 1.
pub fn a_b_exact(b: f64, s: &SpdMatrix) -> Result<f64> {
    let d = s.dim();
    let df = d as f64;
    if !(b > 0.0 && 1.0 / b > df + 1.0) {
        return Err(Error::Domain(format!("exact A_b needs 1/b > d + 1, got b={b}, d={d}")));
    }
    let inv_b = 1.0 / b;
    let logdet = df * (2.0 * b * PI.sqrt()).ln() + s.logdet();
    let mut log = -0.5 * (df + 1.0) * logdet + 0.5 * df * PI.ln();
    for i in 1..=d {
        let fi = i as f64;
        log += ln_gamma(inv_b - 0.5 * (df + fi)) - (inv_b - fi) * LN_2 - 2.0 * ln_gamma(0.5 * inv_b - 0.5 * (fi + 1.0) + 1.0);
    }
    Ok(log.exp())
}

/// b^{-r/2} ψ(S).
pub fn a_b_asymp(b: f64, s: &SpdMatrix) -> f64 {
    b.powf(-0.5 * r_dim(s.dim())) * psi(s)
}

fn check_fg(f_at_s: f64, g_at_s: f64) -> Result<()> {
    if !(f_at_s > 0.0) || g_at_s == 0.0 || !g_at_s.is_finite() {
        return Err(Error::Domain(format!(
            "optimal bandwidth needs f > 0 and g != 0 (got f={f_at_s}, g={g_at_s})"
        )));
    }
    Ok(())
}

/// n⁻¹ b^{-r/2} ψ(S) f + b² g².
pub fn mse_asymp(n: usize, b: f64, s: &SpdMatrix, f_at_s: f64, g_at_s: f64) -> Result<AsymptoticReport> {
    let var = variance_asymp(n, b, s, f_at_s)?.leading_term;
    let lead = var + b * b * g_at_s * g_at_s;
    Ok(AsymptoticReport {
        value: lead,
        leading_term: lead,
        claimed_error_order: "o(n^-1 b^(-r/2)) + o(b^2)".into(),
    })
}

/// Minimizer of the two-term objective c_v n⁻¹ b^{-r/2} + c_b b².
fn two_term_argmin(n: usize, r: f64, c_v: f64, c_b: f64) -> f64 {
    (n as f64).powf(-2.0 / (r + 4.0)) * (0.25 * r * c_v / c_b).powf(2.0 / (r + 4.0))
}

/// Minimum of the same objective.
fn two_term_min(n: usize, r: f64, c_v: f64, c_b: f64) -> f64 {
    let q = r + 4.0;
    (n as f64).powf(-4.0 / q) * (1.0 + 0.25 * r) / (0.25 * r).powf(r / q) * c_v.powf(4.0 / q) * c_b.powf(r / q)
}

/// n^{-2/(r+4)} [(r/4) ψ f / g²]^{2/(r+4)}.
pub fn b_opt_mse(n: usize, s: &SpdMatrix, f_at_s: f64, g_at_s: f64) -> Result<f64> {
    check_fg(f_at_s, g_at_s)?;
    Ok(two_term_argmin(n, r_dim(s.dim()), psi(s) * f_at_s, g_at_s * g_at_s))
}

/// MSE at b_opt: n^{-4/(r+4)} (1 + r/4)/(r/4)^{r/(r+4)} (ψf)^{4/(r+4)} (g²)^{r/(r+4)}.
pub fn mse_optimal(n: usize, s: &SpdMatrix, f_at_s: f64, g_at_s: f64) -> Result<f64> {
    check_fg(f_at_s, g_at_s)?;
    Ok(two_term_min(n, r_dim(s.dim()), psi(s) * f_at_s, g_at_s * g_at_s))
}

/// Limit of n^{4/(r+4)} MSE when n^{2/(r+4)} b → λ: λ^{-r/2} ψ f + λ² g².
pub fn mse_lambda_limit(lambda: f64, s: &SpdMatrix, f_at_s: f64, g_at_s: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let r = r_dim(s.dim());
    Ok(lambda.powf(-0.5 * r) * psi(s) * f_at_s + lambda * lambda * g_at_s * g_at_s)
}

/// ∫ψf and ∫g² over S_{++}^d(δ) = {δ ≤ λ_1 ≤ … ≤ λ_d ≤ 1/δ}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionIntegrals {
    pub d: usize,
    pub delta: f64,
    pub i_psi_f: f64,
    pub i_g2: f64,
    pub stderr_psi_f: f64,
    pub stderr_g2: f64,
    pub acceptance: f64,
}

impl RegionIntegrals {
    /// Integrals supplied directly (stderr zero, acceptance one).
    pub fn known(d: usize, delta: f64, i_psi_f: f64, i_g2: f64) -> Self {
        Self {
            d,
            delta,
            i_psi_f,
            i_g2,
            stderr_psi_f: 0.0,
            stderr_g2: 0.0,
            acceptance: 1.0,
        }
    }
}

const MIN_ACCEPTANCE: f64 = 1e-4;

/// Monte Carlo over the vecp box [−1/δ, 1/δ]^{r(d)}, rejecting matrices
/// whose spectrum leaves [δ, 1/δ].
pub fn region_integrals<F>(f: F, hessian: &dyn Hessian, d: usize, delta: f64, budget: usize, seed: u64) -> Result<RegionIntegrals>
where
    F: Fn(&SpdMatrix) -> f64 + Sync,
{
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("region parameter delta must lie in (0,1), got {delta}")));
    }
    if budget < 2 {
        return Err(Error::InvalidInput("region integrals need a budget of at least 2".into()));
    }
    let r = vecp_len(d);
    let half = 1.0 / delta;
    let volume = (2.0 * half).powi(r as i32);
    let parts = chunked_mc(budget, seed, |rng, len| {
        use rand::Rng;
        let mut acc = [RunningStats::new(); 2];
        let mut accepted = 0u64;
        for _ in 0..len {
            let v: Vec<f64> = (0..r).map(|_| rng.random_range(-half..half)).collect();
            let m = unvecp_slice(&v).expect("triangular length");
            let inside = sym_eigen(&m)
                .map(|e| e.eigenvalues[0] >= delta && e.eigenvalues[d - 1] <= half)
                .unwrap_or(false);
            let (a, b) = if inside {
                let s = SpdMatrix::new(m).expect("spectrum checked");
                accepted += 1;
                let g = g_functional(hessian, &s).unwrap_or(f64::NAN);
                (psi(&s) * f(&s), g * g)
            } else {
                (0.0, 0.0)
            };
            acc[0].push(a * volume);
            acc[1].push(b * volume);
        }
        (acc, accepted)
    });
    let mut tot = [RunningStats::new(); 2];
    let mut accepted = 0u64;
    for (acc, a) in &parts {
        tot[0].merge(&acc[0]);
        tot[1].merge(&acc[1]);
        accepted += a;
    }
    let acceptance = accepted as f64 / budget as f64;
    if acceptance < MIN_ACCEPTANCE {
        return Err(Error::Region(format!(
            "acceptance {acceptance:e} below {MIN_ACCEPTANCE:e} after {budget} proposals"
        )));
    }
    if !tot[1].mean().is_finite() {
        return Err(Error::Numeric("Hessian callback failed inside the region".into()));
    }
    Ok(RegionIntegrals {
        d,
        delta,
        i_psi_f: tot[0].mean(),
        i_g2: tot[1].mean(),
        stderr_psi_f: tot[0].stderr(),
        stderr_g2: tot[1].stderr(),
        acceptance,
    })
}

/// n⁻¹ b^{-r/2} ∫ψf + b² ∫g².
pub fn mise_asymp(n: usize, b: f64, integrals: &RegionIntegrals) -> AsymptoticReport {
    let r = r_dim(integrals.d);
    let lead = b.powf(-0.5 * r) * integrals.i_psi_f / n as f64 + b * b * integrals.i_g2;
    AsymptoticReport {
        value: lead,
        leading_term: lead,
        claimed_error_order: "o(n^-1 b^(-r/2)) + o(b^2)".into(),
    }
}

pub fn b_opt_mise(n: usize, integrals: &RegionIntegrals) -> Result<f64> {
    check_integrals(integrals)?;
    Ok(two_term_argmin(n, r_dim(integrals.d), integrals.i_psi_f, integrals.i_g2))
}

/// MISE at its optimal bandwidth, closed form.
pub fn mise_optimal(n: usize, integrals: &RegionIntegrals) -> Result<f64> {
    check_integrals(integrals)?;
    Ok(two_term_min(n, r_dim(integrals.d), integrals.i_psi_f, integrals.i_g2))
}

fn check_integrals(i: &RegionIntegrals) -> Result<()> {
    if !(i.i_g2 > 0.0) || !(i.i_psi_f > 0.0) {
        return Err(Error::Domain(format!(
            "optimal MISE bandwidth needs positive integrals (got {}, {})",
            i.i_psi_f, i.i_g2
        )));
    }
    Ok(())
}

/// Central finite-difference Hessian of `f` in vecp coordinates.
pub fn finite_difference_hessian<F>(f: F, s: &SpdMatrix, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&SpdMatrix) -> Result<f64>,
{
    let base = vecp(s.sym()).into_values();
    let r = base.len();
    let at = |shift: &[(usize, f64)]| -> Result<f64> {
        let mut v = base.clone();
        for &(k, dv) in shift {
            v[k] += dv;
        }
        f(&SpdMatrix::new(unvecp_slice(&v)?)?)
    };
    let f0 = at(&[])?;
    let mut hm = DMatrix::zeros(r, r);
    for k in 0..r {
        hm[(k, k)] = (at(&[(k, h)])? - 2.0 * f0 + at(&[(k, -h)])?) / (h * h);
        for l in 0..k {
            let v = (at(&[(k, h), (l, h)])? - at(&[(k, h), (l, -h)])? - at(&[(k, -h), (l, h)])?
                + at(&[(k, -h), (l, -h)])?)
                / (4.0 * h * h);
            hm[(k, l)] = v;
            hm[(l, k)] = v;
        }
    }
    Ok(hm)
}

/// Analytic vecp Hessian of the Wishart(ν, Σ) density at X.
pub fn wishart_density_hessian(p: &WishartParams, x: &SpdMatrix) -> Result<DMatrix<f64>> {
    let d = p.dim();
    let f = WishartLogDensity::new(p).eval(x)?.exp();
    let c = 0.5 * (p.nu() - d as f64 - 1.0);
    let x_inv = spd_inverse(x).into_sym().into_matrix();
    let s_inv = spd_inverse(p.scale()).into_sym().into_matrix();
    let pairs = vecp_pairs(d);
    let unit = |(i, j): (usize, usize)| {
        let mut e = DMatrix::zeros(d, d);
        e[(i, j)] = 1.0;
        e[(j, i)] = 1.0;
        e
    };
    let units: Vec<DMatrix<f64>> = pairs.iter().map(|&p| unit(p)).collect();
    let grad: Vec<f64> = units
        .iter()
        .map(|e| c * (&x_inv * e).trace() - 0.5 * (&s_inv * e).trace())
        .collect();
    let r = pairs.len();
    Ok(DMatrix::from_fn(r, r, |k, l| {
        let second = -c * (&x_inv * &units[k] * &x_inv * &units[l]).trace();
        f * (grad[k] * grad[l] + second)
    }))
}

/// Closed-form E_f[K(X)] and E_f[K(X)²] for K = Wishart(1/b, bS) and data
/// X ~ Wishart(ν₀, S₀). The first is f_b(S); together they give the exact
/// variance of a single kernel term.
pub fn exact_kernel_moments(b: f64, s: &SpdMatrix, data_law: &WishartParams) -> Result<(f64, f64)> {
    let d = s.dim();
    if d != data_law.dim() {
        return Err(Error::InvalidInput("dimension mismatch between S and the data law".into()));
    }
    check_bandwidth(d, b)?;
    let df = d as f64;
    let nu = 1.0 / b;
    let kernel_inv = spd_inverse(s).into_sym().into_matrix() / b;
    let data_inv = spd_inverse(data_law.scale()).into_sym().into_matrix();
    let log_norm = |nu: f64, logdet: f64| -0.5 * nu * df * LN_2 - 0.5 * nu * logdet - ln_multigamma(d, 0.5 * nu);
    // ∫ |X|^{(a-d-1)/2} exp(-tr(Ψ⁻¹X)/2) dX = 2^{ad/2} |Ψ|^{a/2} Γ_d(a/2).
    let log_int = |a: f64, psi_inv: DMatrix<f64>| -> Result<f64> {
        if !(a > df - 1.0) {
            return Err(Error::Domain("kernel moment integral diverges".into()));
        }
        let m = SpdMatrix::new(SymMatrix::from_upper(psi_inv)?)?;
        Ok(0.5 * a * df * LN_2 - 0.5 * a * m.logdet() + ln_multigamma(d, 0.5 * a))
    };
    let lk = log_norm(nu, df * b.ln() + s.logdet());
    let lf = log_norm(data_law.nu(), data_law.scale().logdet());
    let m1 = lk + lf + log_int(nu + data_law.nu() - df - 1.0, &kernel_inv + &data_inv)?;
    let m2 = 2.0 * lk + lf + log_int(2.0 * nu + data_law.nu() - 2.0 * (df + 1.0), &kernel_inv * 2.0 + &data_inv)?;
    Ok((m1.exp(), m2.exp()))
}

/// Per-bandwidth summary of replicated estimates f̂(S).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateSummary {
    pub b: f64,
    pub mean: f64,
    pub variance: f64,
    pub replicates: u64,
}

/// Replicated datasets of size `n` (replicate r uses stream r of `seed`),
/// each evaluated at every bandwidth in `b_list` with the same data.
pub fn replicate_estimates<F>(
    sampler: F,
    n: usize,
    b_list: &[f64],
    s: &SpdMatrix,
    replicates: usize,
    seed: u64,
) -> Result<Vec<ReplicateSummary>>
where
    F: Fn(&mut RngStream) -> SpdMatrix + Sync,
{
    if replicates < 2 {
        return Err(Error::InsufficientReplicates(format!("need at least 2 replicates, got {replicates}")));
    }
    if n == 0 || b_list.is_empty() {
        return Err(Error::InvalidInput("need n >= 1 and a non-empty bandwidth list".into()));
    }
    for &b in b_list {
        check_bandwidth(s.dim(), b)?;
    }
    let kernels: Vec<Kernel> = b_list.iter().map(|&b| Kernel::new(b, s)).collect();
    let per_rep: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = RngStream::new(seed, rep as u64);
            let mut sums = vec![0.0; kernels.len()];
            for _ in 0..n {
                let x = sampler(&mut rng);
                let ld = x.logdet();
                for (acc, k) in sums.iter_mut().zip(&kernels) {
                    *acc += k.log_eval(x.matrix(), ld).exp();
                }
            }
            sums.into_iter().map(|v| v / n as f64).collect()
        })
        .collect();
    Ok(b_list
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let st: RunningStats = per_rep.iter().map(|v| v[i]).collect();
            ReplicateSummary {
                b,
                mean: st.mean(),
                variance: st.variance(),
                replicates: st.count(),
            }
        })
        .collect())
}

/// Estimates of Var_f(K(X)) = E_{X~K}[K(X) f(X)] − (E_{X~K} f(X))², one per
/// replicate, each from `draws` kernel samples. Useful where K is so
/// concentrated that plain replication would need enormous datasets.
pub fn kernel_term_variance_is<F>(f: F, b: f64, s: &SpdMatrix, draws: usize, replicates: usize, seed: u64) -> Result<RunningStats>
where
    F: Fn(&SpdMatrix) -> f64 + Sync,
{
    if replicates < 2 {
        return Err(Error::InsufficientReplicates(format!("need at least 2 replicates, got {replicates}")));
    }
    check_bandwidth(s.dim(), b)?;
    let kp = WishartParams::new(1.0 / b, s.scale(b)?)?;
    let sampler = WishartSampler::new(&kp);
    let kernel = Kernel::new(b, s);
    let est: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = RngStream::new(seed, rep as u64);
            let (mut kf, mut ff) = (0.0, 0.0);
            for _ in 0..draws {
                let x = sampler.sample(&mut rng);
                let fx = f(&x);
                kf += kernel.log_eval(x.matrix(), x.logdet()).exp() * fx;
                ff += fx;
            }
            let m = draws as f64;
            kf / m - (ff / m).powi(2)
        })
        .collect();
    Ok(est.into_iter().collect())
}

/// Two Monte Carlo estimates of f_b(S) = E f̂_b(S).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedDensityEstimate {
    /// Mean of K_{1/b,bS}(X) over X ~ f.
    pub kernel_average: f64,
    pub kernel_average_stderr: f64,
    /// Mean of f(W) over W ~ Wishart(1/b, bS).
    pub smoothed: f64,
    pub smoothed_stderr: f64,
}

pub fn smoothed_density_mc<F, G>(f: F, f_sampler: G, b: f64, s: &SpdMatrix, draws: usize, seed: u64) -> Result<SmoothedDensityEstimate>
where
    F: Fn(&SpdMatrix) -> f64 + Sync,
    G: Fn(&mut RngStream) -> SpdMatrix + Sync,
{
    check_bandwidth(s.dim(), b)?;
    let kernel = Kernel::new(b, s);
    let parts = chunked_mc(draws, seed, |rng, len| {
        (0..len)
            .map(|_| {
                let x = f_sampler(rng);
                kernel.log_eval(x.matrix(), x.logdet()).exp()
            })
            .collect::<RunningStats>()
    });
    let mut ka = RunningStats::new();
    parts.iter().for_each(|p| ka.merge(p));

    let kp = WishartParams::new(1.0 / b, s.scale(b)?)?;
    let sampler = WishartSampler::new(&kp);
    let parts = chunked_mc(draws, seed ^ 0x9e37_79b9_7f4a_7c15, |rng, len| {
        (0..len).map(|_| f(&sampler.sample(rng))).collect::<RunningStats>()
    });
    let mut sm = RunningStats::new();
    parts.iter().for_each(|p| sm.merge(p));
    Ok(SmoothedDensityEstimate {
        kernel_average: ka.mean(),
        kernel_average_stderr: ka.stderr(),
        smoothed: sm.mean(),
        smoothed_stderr: sm.stderr(),
    })
}

/// What the replicate values are centred on before scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Centering {
    /// The mean of the replicates, an estimate of f_b(S).
    ReplicateMean,
    /// A supplied value, e.g. f_b(S), or f(S) for the biased limit.
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalityOutcome {
    /// n^{1/2} b^{r/4} (f̂(S) − centre) / √(ψ(S) f(S)), one per replicate.
    pub standardized: Vec<f64>,
    /// n^{1/2} b^{r/4}.
    pub scale_factor: f64,
    /// Set when the scale factor is below 5, where the limit is unreliable.
    pub low_scale_warning: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn normality_experiment<F>(
    f_sampler: F,
    n: usize,
    b: f64,
    s: &SpdMatrix,
    f_at_s: f64,
    replicates: usize,
    seed: u64,
    centering: Centering,
) -> Result<NormalityOutcome>
where
    F: Fn(&mut RngStream) -> SpdMatrix + Sync,
{
    if replicates < 2 {
        return Err(Error::InsufficientReplicates(format!("need at least 2 replicates, got {replicates}")));
    }
    if !(f_at_s > 0.0) {
        return Err(Error::Domain(format!("standardization needs f(S) > 0, got {f_at_s}")));
    }
    check_bandwidth(s.dim(), b)?;
    let kernel = Kernel::new(b, s);
    let values: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = RngStream::new(seed, rep as u64);
            let mut sum = 0.0;
            for _ in 0..n {
                let x = f_sampler(&mut rng);
                sum += kernel.log_eval(x.matrix(), x.logdet()).exp();
            }
            sum / n as f64
        })
        .collect();
    let centre = match centering {
        Centering::ReplicateMean => values.iter().sum::<f64>() / replicates as f64,
        Centering::Value(v) => v,
    };
    let scale_factor = (n as f64).sqrt() * b.powf(0.25 * r_dim(s.dim()));
    let sd = (psi(s) * f_at_s).sqrt();
    Ok(NormalityOutcome {
        standardized: values.iter().map(|v| scale_factor * (v - centre) / sd).collect(),
        scale_factor,
        low_scale_warning: scale_factor < 5.0,
    })
}

/// Plug-in bandwidth: a pilot estimate of f and of its finite-difference
/// Hessian substituted into [`b_opt_mse`]. A convenience only.
pub fn plugin_bandwidth(data: &[SpdMatrix], s: &SpdMatrix, pilot_b: f64) -> Result<f64> {
    let model = KdeModel::new(data.to_vec(), pilot_b)?;
    let f_hat = kde_eval(&model, s)?;
    let step = 1e-2 * s.matrix().amax();
    let h = finite_difference_hessian(|x| kde_eval(&model, x), s, step)?;
    let g = 0.5 * halfvec_weights(s).component_mul(&h).sum();
    b_opt_mse(data.len(), s, f_hat, g)
}

/// Reads observations from CSV. The header's first column must be `d`;
/// each row is `d` followed by the r(d) vecp entries of one observation.
pub fn read_dataset<R: Read>(reader: R) -> Result<Vec<SpdMatrix>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0).map(str::trim) != Some("d") {
        return Err(Error::InvalidInput("dataset header must start with column `d`".into()));
    }
    let mut out = Vec::new();
    let mut dim = None;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let fields: Vec<f64> = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("row {row}: {e}")))?;
        let d = fields[0];
        if !(d >= 1.0 && d.fract() == 0.0) {
            return Err(Error::InvalidInput(format!("row {row}: d must be a positive integer, got {d}")));
        }
        let d = d as usize;
        if *dim.get_or_insert(d) != d {
            return Err(Error::InvalidInput(format!("row {row}: mixed dimensions")));
        }
        if fields.len() - 1 != vecp_len(d) {
            return Err(Error::InvalidInput(format!(
                "row {row}: expected {} entries for d={d}, got {}",
                vecp_len(d),
                fields.len() - 1
            )));
        }
        let m = unvecp_slice(&fields[1..])?;
        out.push(SpdMatrix::new(m).map_err(|_| Error::InvalidInput(format!("row {row}: matrix is not positive definite")))?);
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("dataset has no rows".into()));
    }
    Ok(out)
}

pub fn write_dataset<W: Write>(writer: W, data: &[SpdMatrix]) -> Result<()> {
    let d = data.first().map(|x| x.dim()).unwrap_or(1);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["d".to_string()];
    header.extend(vecp_pairs(d).iter().map(|(i, j)| format!("x{}{}", i + 1, j + 1)));
    w.write_record(&header)?;
    for x in data {
        let mut rec = vec![d.to_string()];
        rec.extend(vecp(x.sym()).values().iter().map(|v| format!("{v:e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::wishart_logpdf;
    use crate::quad::integrate;
    use crate::special::{gamma_logpdf, gamma_pdf};
    use proptest::prelude::*;

    fn scalar(x: f64) -> SpdMatrix {
        SpdMatrix::from_diagonal(&[x]).unwrap()
    }

    fn spd(rows: &[&[f64]]) -> SpdMatrix {
        SpdMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn kde_single_point_example() {
        let m = KdeModel::new(vec![scalar(1.0)], 0.5).unwrap();
        assert!((kde_eval(&m, &scalar(1.0)).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn bandwidth_admissibility() {
        assert!(KdeModel::new(vec![SpdMatrix::identity(3)], 0.5).is_err());
        assert!(KdeModel::new(vec![SpdMatrix::identity(3)], 0.49).is_ok());
        assert!(KdeModel::new(vec![scalar(1.0)], 5.0).is_ok());
        assert!(KdeModel::new(vec![], 0.1).is_err());
        assert!(KdeModel::new(vec![scalar(1.0), SpdMatrix::identity(2)], 0.1).is_err());
    }

    #[test]
    fn matches_scalar_gamma_kernel_estimator() {
        let data: Vec<f64> = (1..=50).map(|i| 0.05 * i as f64 + (i as f64).sin().abs()).collect();
        for &b in &[0.3, 0.05, 0.01] {
            let m = KdeModel::new(data.iter().map(|&x| scalar(x)).collect(), b).unwrap();
            for &s in &[0.2, 1.0, 2.7] {
                let want = data.iter().map(|&x| gamma_pdf(0.5 / b, 2.0 * b * s, x)).sum::<f64>() / data.len() as f64;
                let got = kde_eval(&m, &scalar(s)).unwrap();
                assert!(((got - want) / want).abs() < 1e-12, "b={b} s={s}");
            }
        }
    }

    #[test]
    fn estimator_is_nonnegative_and_continuous() {
        let p = WishartParams::new(6.0, spd(&[&[0.5, 0.1], &[0.1, 0.3]])).unwrap();
        let sampler = WishartSampler::new(&p);
        let mut rng = RngStream::new(4, 0);
        let data: Vec<SpdMatrix> = (0..300).map(|_| sampler.sample(&mut rng)).collect();
        let m = KdeModel::new(data, 0.1).unwrap();
        let a = spd(&[&[3.0, 0.5], &[0.5, 1.8]]);
        let v0 = kde_eval(&m, &a).unwrap();
        assert!(v0.is_finite() && v0 >= 0.0);
        let v1 = kde_eval(&m, &a.scale(1.0 + 1e-7).unwrap()).unwrap();
        assert!(((v1 - v0) / v0).abs() < 1e-5);
        for t in [0.2, 1.0, 5.0] {
            assert!(kde_eval(&m, &a.scale(t).unwrap()).unwrap() >= 0.0);
        }
    }

    #[test]
    fn scalar_estimator_mass() {
        let law = WishartParams::new(4.0, scalar(0.5)).unwrap();
        let sampler = WishartSampler::new(&law);
        let mut rng = RngStream::new(8, 0);
        let data: Vec<SpdMatrix> = (0..100).map(|_| sampler.sample(&mut rng)).collect();
        let max_x = data.iter().map(|x| x.get(0, 0)).fold(0.0, f64::max);
        let b = 0.01;
        let m = KdeModel::new(data, b).unwrap();
        let hi = max_x + 12.0 * b.sqrt() * max_x;
        let r = integrate(|s| kde_eval(&m, &scalar(s)).unwrap(), 1e-9, hi, 1e-7, 1e-7, 5000);
        assert!((r.value - 1.0).abs() < 0.025, "{}", r.value);
        // Each scalar kernel integrates over S to exactly 1/(1 − 2b).
        assert!((r.value - 1.0 / (1.0 - 2.0 * b)).abs() < 1e-5, "{}", r.value);
    }

    #[test]
    fn psi_examples() {
        assert_eq!(r_dim(2), 3.0);
        let p = psi(&SpdMatrix::identity(2));
        assert!((p - PI.powf(-1.5) / 16.0).abs() < 1e-15);
        assert!((p - 0.011_224_2).abs() < 1e-7);
        let k = spd(&[&[1.0, 0.2], &[0.2, 0.6]]);
        assert!((psi(&k) / psi(&k.scale(2.0).unwrap()) - 8.0).abs() < 1e-12);
    }

    fn gamma_second_derivative(shape: f64, scale: f64, x: f64) -> f64 {
        // f'' = f · [((k−1)/x − 1/θ)² − (k−1)/x²]
        let f = gamma_pdf(shape, scale, x);
        let a = (shape - 1.0) / x - 1.0 / scale;
        f * (a * a - (shape - 1.0) / (x * x))
    }

    #[test]
    fn g_functional_examples() {
        let zero = |s: &SpdMatrix| Ok(DMatrix::zeros(vecp_len(s.dim()), vecp_len(s.dim())));
        assert_eq!(g_functional(&zero, &SpdMatrix::identity(2)).unwrap(), 0.0);
        assert_eq!(bias_asymp(&zero, &SpdMatrix::identity(2), 0.1).unwrap().leading_term, 0.0);

        let hess = |s: &SpdMatrix| Ok(DMatrix::from_element(1, 1, gamma_second_derivative(3.0, 2.0, s.get(0, 0))));
        let g = g_functional(&hess, &scalar(4.0)).unwrap();
        assert!((g - 16.0 * gamma_second_derivative(3.0, 2.0, 4.0)).abs() < 1e-15);

        // Quadratic f(v) = ½ vᵀHv + c·v in vecp coordinates.
        let h = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, -1.0, 0.5, 3.0, 0.25, -1.0, 0.25, 1.5]);
        let c = [0.3, -0.2, 0.1];
        let f = |s: &SpdMatrix| {
            let v = nalgebra::DVector::from_vec(vecp(s.sym()).into_values());
            Ok(0.5 * v.dot(&(&h * &v)) + c.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>())
        };
        let s = spd(&[&[1.2, 0.3], &[0.3, 0.9]]);
        let exact = g_functional(&|_: &SpdMatrix| Ok(h.clone()), &s).unwrap();
        let fd = finite_difference_hessian(f, &s, 1e-3).unwrap();
        let approx = g_functional(&|_: &SpdMatrix| Ok(fd.clone()), &s).unwrap();
        assert!(((approx - exact) / exact).abs() < 1e-4);
        assert!(g_functional(&|_: &SpdMatrix| Ok(DMatrix::zeros(2, 2)), &s).is_err());
    }

    #[test]
    fn wishart_hessian_matches_finite_differences() {
        let p = WishartParams::new(7.0, spd(&[&[0.4, 0.1], &[0.1, 0.3]])).unwrap();
        let x = spd(&[&[2.0, 0.4], &[0.4, 1.5]]);
        let exact = wishart_density_hessian(&p, &x).unwrap();
        let fd = finite_difference_hessian(|y| Ok(wishart_logpdf(&p, y)?.exp()), &x, 1e-3).unwrap();
        assert!((&exact - &fd).amax() <= 1e-4 * exact.amax(), "{exact} vs {fd}");
    }

    #[test]
    fn bias_is_negative_at_a_strict_maximum() {
        let p = WishartParams::new(9.0, spd(&[&[0.4, 0.1], &[0.1, 0.3]])).unwrap();
        let mode = p.scale().scale(9.0 - 3.0).unwrap();
        let hess = |s: &SpdMatrix| wishart_density_hessian(&p, s);
        assert!(bias_asymp(&hess, &mode, 0.05).unwrap().leading_term < 0.0);
    }

    #[test]
    fn variance_examples() {
        assert_eq!(variance_asymp(100, 0.1, &scalar(1.0), 0.0).unwrap().leading_term, 0.0);
        let v = variance_asymp(10_000, 0.01, &scalar(1.0), 0.2).unwrap();
        assert!((v.leading_term - 3.989e-5).abs() < 1e-8, "{}", v.leading_term);
        let k = spd(&[&[1.0, 0.3], &[0.3, 2.0]]);
        let spec = BoundarySpec::new(k.clone(), vec![], 0.02).unwrap();
        let a = boundary_variance_asymp(500, &spec, 0.3).unwrap().leading_term;
        let b = variance_asymp(500, 0.02, &k, 0.3).unwrap().leading_term;
        assert!(((a - b) / b).abs() < 1e-14);
        let spec = BoundarySpec::new(k.clone(), vec![0], 0.02).unwrap();
        assert_eq!(spec.exponent(), -3.0);
        let s = spec.point().unwrap();
        assert!(((s.logdet() - k.logdet()) - 0.02f64.ln()).abs() < 1e-12);
        assert!(BoundarySpec::new(k, vec![2], 0.02).is_err());
    }

    #[test]
    fn a_b_examples() {
        let asymp = a_b_asymp(0.1, &scalar(1.0));
        assert!((asymp - 0.6308).abs() < 1e-4, "{asymp}");
        let exact = a_b_exact(0.1, &scalar(1.0)).unwrap();
        assert!((exact / asymp - 1.0).abs() < 0.12);
        // d = 1 closed form: Γ(1/b − 1) / (Γ(1/(2b))² · 2bs · 2^{1/b−1}).
        let (b, s) = (0.1f64, 1.7f64);
        let want = (ln_gamma(1.0 / b - 1.0) - 2.0 * ln_gamma(0.5 / b) - (2.0 * b * s).ln() - (1.0 / b - 1.0) * LN_2).exp();
        assert!(((a_b_exact(b, &scalar(s)).unwrap() - want) / want).abs() < 1e-12);
        let k = spd(&[&[1.0, 0.3], &[0.3, 2.0]]);
        assert!((a_b_asymp(0.01, &k) / a_b_asymp(0.01, &k.scale(3.0).unwrap()) - 27.0).abs() < 1e-10);
        assert!(matches!(a_b_exact(0.34, &k), Err(Error::Domain(_))));
        for d in 1..=2 {
            let s = SpdMatrix::identity(d);
            let ratio = a_b_exact(1e-3, &s).unwrap() / a_b_asymp(1e-3, &s);
            assert!((ratio - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn a_b_ratio_approaches_one_monotonically() {
        for d in 1..=2 {
            let s = SpdMatrix::identity(d);
            let gaps: Vec<f64> = [0.1, 0.03, 0.01, 0.003]
                .iter()
                .filter(|&&b| 1.0 / b > d as f64 + 1.0)
                .map(|&b| (a_b_exact(b, &s).unwrap() / a_b_asymp(b, &s) - 1.0).abs())
                .collect();
            assert!(gaps.windows(2).all(|w| w[1] < w[0]), "d={d}: {gaps:?}");
        }
    }

    #[test]
    fn a_b_is_the_squared_kernel_integral() {
        // ∫K² = E_{X~K}[K(X)], checked by Monte Carlo at d = 2.
        let s = spd(&[&[1.0, 0.3], &[0.3, 0.8]]);
        let b = 0.05;
        let kp = WishartParams::new(1.0 / b, s.scale(b).unwrap()).unwrap();
        let sampler = WishartSampler::new(&kp);
        let kernel = Kernel::new(b, &s);
        let parts = chunked_mc(200_000, 2, |rng, len| {
            (0..len)
                .map(|_| {
                    let x = sampler.sample(rng);
                    kernel.log_eval(x.matrix(), x.logdet()).exp()
                })
                .collect::<RunningStats>()
        });
        let mut t = RunningStats::new();
        parts.iter().for_each(|p| t.merge(p));
        let exact = a_b_exact(b, &s).unwrap();
        assert!((t.mean() - exact).abs() <= 3.0 * t.stderr(), "{} ± {} vs {exact}", t.mean(), t.stderr());
    }

    #[test]
    fn optimal_bandwidth_formulas() {
        let s = spd(&[&[1.0, 0.2], &[0.2, 0.5]]);
        let (f, g) = (0.3, -0.7);
        let b1 = b_opt_mse(1000, &s, f, g).unwrap();
        let b2 = b_opt_mse(128_000, &s, f, g).unwrap();
        assert!(((b2 / b1).ln() / 128f64.ln() + 2.0 / 7.0).abs() < 1e-10);
        let one = scalar(1.3);
        let c1 = b_opt_mse(1000, &one, f, g).unwrap();
        let c2 = b_opt_mse(32_000, &one, f, g).unwrap();
        assert!((c1 / c2 - 4.0).abs() < 1e-10);
        let c3 = b_opt_mse(1024, &one, f, g).unwrap();
        let c4 = b_opt_mse(32 * 1024, &one, f, g).unwrap();
        assert!((c3 / c4 - 32f64.powf(0.4)).abs() < 1e-10);
        // Stationarity: (r/2) n⁻¹ b^{-r/2-1} ψ f = 2 b g².
        let r = 3.0;
        let lhs = 0.5 * r * b1.powf(-0.5 * r - 1.0) * psi(&s) * f / 1000.0;
        let rhs = 2.0 * b1 * g * g;
        assert!(((lhs - rhs) / rhs).abs() < 1e-10);
        let at = |b: f64| mse_asymp(1000, b, &s, f, g).unwrap().value;
        assert!(at(0.9 * b1) > at(b1) && at(1.1 * b1) > at(b1));
        let closed = mse_optimal(1000, &s, f, g).unwrap();
        assert!(((at(b1) - closed) / closed).abs() < 1e-9);
        let lambda = b1 * 1000f64.powf(2.0 / 7.0);
        let scaled = mse_lambda_limit(lambda, &s, f, g).unwrap() * 1000f64.powf(-4.0 / 7.0);
        assert!(((scaled - closed) / closed).abs() < 1e-9);
        assert!(matches!(b_opt_mse(1000, &s, f, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn mise_formulas() {
        let i = RegionIntegrals::known(2, 0.5, 0.8, 0.8);
        let b = b_opt_mise(5000, &i).unwrap();
        assert!((b - 5000f64.powf(-2.0 / 7.0) * 0.75f64.powf(2.0 / 7.0)).abs() < 1e-15);
        let i = RegionIntegrals::known(1, 0.5, 0.21, 0.034);
        let b = b_opt_mise(5000, &i).unwrap();
        let closed = mise_optimal(5000, &i).unwrap();
        assert!(((mise_asymp(5000, b, &i).value - closed) / closed).abs() < 1e-9);
        assert!(b_opt_mise(10, &RegionIntegrals::known(1, 0.5, 1.0, 0.0)).is_err());
    }

    #[test]
    fn region_integrals_match_quadrature_in_one_dimension() {
        let (shape, scale) = (3.0, 1.0 / 3.0);
        let f = |s: &SpdMatrix| gamma_pdf(shape, scale, s.get(0, 0));
        let hess = |s: &SpdMatrix| Ok(DMatrix::from_element(1, 1, gamma_second_derivative(shape, scale, s.get(0, 0))));
        let got = region_integrals(f, &hess, 1, 0.5, 400_000, 17).unwrap();
        let psi1 = |s: f64| psi(&scalar(s));
        let q_psi = integrate(|s| psi1(s) * gamma_pdf(shape, scale, s), 0.5, 2.0, 1e-12, 0.0, 200).value;
        let q_g2 = integrate(|s| (s * s * gamma_second_derivative(shape, scale, s)).powi(2), 0.5, 2.0, 1e-12, 0.0, 200).value;
        assert!((got.i_psi_f - q_psi).abs() <= 3.0 * got.stderr_psi_f, "{got:?} vs {q_psi}");
        assert!((got.i_g2 - q_g2).abs() <= 3.0 * got.stderr_g2, "{got:?} vs {q_g2}");
        assert!((got.acceptance - 0.375).abs() < 0.01);
    }

    #[test]
    fn region_integrals_reject_tiny_regions() {
        let hess = |s: &SpdMatrix| Ok(DMatrix::zeros(vecp_len(s.dim()), vecp_len(s.dim())));
        let err = region_integrals(|_| 1.0, &hess, 4, 0.5, 2000, 1).unwrap_err();
        assert!(matches!(err, Error::Region(_)), "{err:?}");
    }

    #[test]
    fn exact_moments_agree_with_direct_monte_carlo() {
        let law = WishartParams::new(4.0, scalar(0.5)).unwrap();
        let b = 0.05;
        let s = scalar(0.8);
        let (m1, m2) = exact_kernel_moments(b, &s, &law).unwrap();
        // Scalar oracle by quadrature.
        let k = |x: f64| gamma_logpdf(0.5 / b, 2.0 * b * 0.8, x).exp();
        let f = |x: f64| gamma_pdf(2.0, 1.0, x);
        let q1 = integrate(|x| k(x) * f(x), 0.0, 30.0, 1e-13, 0.0, 500).value;
        let q2 = integrate(|x| k(x) * k(x) * f(x), 0.0, 30.0, 1e-13, 0.0, 500).value;
        assert!(((m1 - q1) / q1).abs() < 1e-9 && ((m2 - q2) / q2).abs() < 1e-9);
    }

    #[test]
    fn replicate_variance_matches_exact_at_d2() {
        let law = WishartParams::new(6.0, SpdMatrix::identity(2).scale(0.25).unwrap()).unwrap();
        let sampler = WishartSampler::new(&law);
        let s = SpdMatrix::identity(2).scale(1.5).unwrap();
        let n = 2000;
        let out = replicate_estimates(|rng| sampler.sample(rng), n, &[0.05], &s, 400, 31).unwrap();
        let (m1, m2) = exact_kernel_moments(0.05, &s, &law).unwrap();
        let want = (m2 - m1 * m1) / n as f64;
        // Sample variance of 400 replicates: ≈7% relative error.
        assert!((out[0].variance / want - 1.0).abs() < 0.25, "{} vs {want}", out[0].variance);
        assert!((out[0].mean - m1).abs() < 4.0 * (want / 400.0).sqrt());
        assert!(matches!(
            replicate_estimates(|rng| sampler.sample(rng), n, &[0.05], &s, 1, 31),
            Err(Error::InsufficientReplicates(_))
        ));
    }

    #[test]
    fn importance_variance_matches_exact() {
        let law = WishartParams::new(3.0, SpdMatrix::identity(2).scale(0.5).unwrap()).unwrap();
        let dens = WishartLogDensity::new(&law);
        let spec = BoundarySpec::new(SpdMatrix::identity(2), vec![0], 0.04).unwrap();
        let s = spec.point().unwrap();
        let est = kernel_term_variance_is(|x| dens.eval(x).unwrap().exp(), 0.04, &s, 2000, 100, 5).unwrap();
        let (m1, m2) = exact_kernel_moments(0.04, &s, &law).unwrap();
        let want = m2 - m1 * m1;
        assert!((est.mean() - want).abs() <= 4.0 * est.stderr(), "{} ± {} vs {want}", est.mean(), est.stderr());
    }

    #[test]
    fn smoothed_density_estimators_agree() {
        let law = WishartParams::new(6.0, scalar(1.0)).unwrap();
        let sampler = WishartSampler::new(&law);
        let f = |x: &SpdMatrix| gamma_pdf(3.0, 2.0, x.get(0, 0));
        let est = smoothed_density_mc(f, |rng| sampler.sample(rng), 0.05, &scalar(4.0), 200_000, 3).unwrap();
        let (exact, _) = exact_kernel_moments(0.05, &scalar(4.0), &law).unwrap();
        assert!((est.kernel_average - exact).abs() <= 3.0 * est.kernel_average_stderr);
        assert!((est.smoothed - exact).abs() <= 3.0 * est.smoothed_stderr);
    }

    #[test]
    fn normality_guards() {
        let sampler = |_: &mut RngStream| scalar(1.0);
        assert!(matches!(
            normality_experiment(sampler, 10, 0.1, &scalar(1.0), 0.3, 1, 0, Centering::ReplicateMean),
            Err(Error::InsufficientReplicates(_))
        ));
        let out = normality_experiment(sampler, 10, 0.1, &scalar(1.0), 0.3, 5, 0, Centering::ReplicateMean).unwrap();
        assert!(out.low_scale_warning);
        assert!(out.standardized.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn plugin_bandwidth_is_finite_and_positive() {
        let law = WishartParams::new(6.0, SpdMatrix::identity(2).scale(0.25).unwrap()).unwrap();
        let sampler = WishartSampler::new(&law);
        let mut rng = RngStream::new(12, 0);
        let data: Vec<SpdMatrix> = (0..2000).map(|_| sampler.sample(&mut rng)).collect();
        let b = plugin_bandwidth(&data, &SpdMatrix::identity(2).scale(1.5).unwrap(), 0.1).unwrap();
        assert!(b.is_finite() && b > 0.0);
    }

    #[test]
    fn dataset_csv_roundtrip_and_rejections() {
        let data = vec![spd(&[&[1.0, 0.2], &[0.2, 2.0]]), SpdMatrix::identity(2)];
        let mut buf = Vec::new();
        write_dataset(&mut buf, &data).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("d,x11,x12,x22\n"));
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, data);
        assert!(read_dataset("d,a,b,c\n2,1,2,1\n".as_bytes()).is_err());
        assert!(read_dataset("d,a,b\n2,1,0\n".as_bytes()).is_err());
        assert!(read_dataset("x,a,b,c\n2,1,0,1\n".as_bytes()).is_err());
        assert!(read_dataset("d,a\n1,0.5\n".as_bytes()).is_ok());
        assert!(read_dataset("d,a\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn kde_matches_direct_wishart_sum(
            xs in prop::collection::vec(0.2f64..5.0, 3..10),
            s in 0.3f64..3.0,
            b in 0.02f64..0.5,
        ) {
            let data: Vec<SpdMatrix> = xs.iter().map(|&x| scalar(x)).collect();
            let kp = WishartParams::new(1.0 / b, scalar(b * s)).unwrap();
            let want = data.iter().map(|x| wishart_logpdf(&kp, x).unwrap().exp()).sum::<f64>() / data.len() as f64;
            let got = kde_eval(&KdeModel::new(data, b).unwrap(), &scalar(s)).unwrap();
            prop_assert!(((got - want) / want).abs() < 1e-12);
        }
    }
}
