//! Wishart and matched symmetric matrix-variate normal (SMN) log-densities,
//! the standardized residual Δ, and the log-ratio between the two.

use std::f64::consts::{LN_2, PI};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::special::{gamma_pdf, ln_gamma, ln_multigamma};
use crate::symcore::{
    spd_inv_sqrt, spd_inverse, spd_sqrt, sym_eigen, vecp_len, SpdMatrix, SymMatrix,
};

/// Wishart(ν, S) on d×d SPD matrices, with ν > d − 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WishartParams {
    nu: f64,
    s: SpdMatrix,
}

impl WishartParams {
    pub fn new(nu: f64, s: SpdMatrix) -> Result<Self> {
        let d = s.dim();
        if !(nu > d as f64 - 1.0) || !nu.is_finite() {
            return Err(Error::Domain(format!(
                "Wishart degrees of freedom must exceed d - 1 = {}, got {nu}",
                d - 1
            )));
        }
        Ok(Self { nu, s })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn scale(&self) -> &SpdMatrix {
        &self.s
    }

    pub fn dim(&self) -> usize {
        self.s.dim()
    }
}

/// The SMN matched to Wishart(ν, S): mean νS, vecp-covariance halfvec_cov(ν, S).
#[derive(Debug, Clone, PartialEq)]
pub struct SmnParams {
    nu: f64,
    s: SpdMatrix,
}

impl SmnParams {
    pub fn new(nu: f64, s: SpdMatrix) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::Domain(format!("SMN nu must be positive, got {nu}")));
        }
        Ok(Self { nu, s })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn scale(&self) -> &SpdMatrix {
        &self.s
    }

    pub fn dim(&self) -> usize {
        self.s.dim()
    }
}

impl From<&WishartParams> for SmnParams {
    fn from(p: &WishartParams) -> Self {
        Self {
            nu: p.nu,
            s: p.s.clone(),
        }
    }
}

/// Δ = (√(2ν)S)^{-1/2} (X − νS) (√(2ν)S)^{-1/2} with its spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaResidual {
    pub matrix: SymMatrix,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// tr(Δ^k) for k = 1..=4 at index k − 1.
    pub trace_powers: [f64; 4],
}

impl DeltaResidual {
    pub fn from_matrix(matrix: SymMatrix) -> Result<Self> {
        let eigenvalues = sym_eigen(&matrix)?.eigenvalues;
        let trace_powers = trace_powers_of(&eigenvalues);
        Ok(Self {
            matrix,
            eigenvalues,
            trace_powers,
        })
    }

    pub fn trace_power(&self, k: usize) -> f64 {
        self.trace_powers[k - 1]
    }
}

pub(crate) fn trace_powers_of(lambdas: &[f64]) -> [f64; 4] {
    let mut t = [0.0; 4];
    for &l in lambdas {
        let l2 = l * l;
        t[0] += l;
        t[1] += l2;
        t[2] += l2 * l;
        t[3] += l2 * l2;
    }
    t
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: parameters are {expected}x{expected}, matrix is {got}x{got}"
        )));
    }
    Ok(())
}

/// Precomputed pieces shared by Δ, the SMN density and their inverse map.
#[derive(Debug, Clone)]
pub struct Standardizer {
    nu: f64,
    mean: SymMatrix,
    /// (√(2ν)S)^{-1/2}
    r: SymMatrix,
    /// (√(2ν)S)^{1/2}
    r_inv: SymMatrix,
    /// log det(√(2ν)S)
    logdet_a: f64,
}

impl Standardizer {
    pub fn new(nu: f64, s: &SpdMatrix) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::Domain(format!("nu must be positive, got {nu}")));
        }
        let a = s.scale((2.0 * nu).sqrt())?;
        Ok(Self {
            nu,
            mean: s.sym().scale(nu),
            r: spd_inv_sqrt(&a).into_sym(),
            r_inv: spd_sqrt(&a).into_sym(),
            logdet_a: a.logdet(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    pub fn delta_matrix(&self, x: &SymMatrix) -> Result<SymMatrix> {
        check_dim(self.dim(), x.dim())?;
        Ok(x.sub(&self.mean).congruence(&self.r))
    }

    /// X = νS + (√(2ν)S)^{1/2} Δ (√(2ν)S)^{1/2}.
    pub fn x_from_delta(&self, delta: &SymMatrix) -> Result<SymMatrix> {
        check_dim(self.dim(), delta.dim())?;
        Ok(self.mean.add(&delta.congruence(&self.r_inv)))
    }

    pub fn smn_logpdf(&self, x: &SymMatrix) -> Result<f64> {
        let delta = self.delta_matrix(x)?;
        let tr2 = delta.matrix().norm_squared();
        Ok(-0.5 * tr2 + self.smn_log_norm())
    }

    /// −½ log(2^d π^{d(d+1)/2} det(√(2ν)S)^{d+1}).
    fn smn_log_norm(&self) -> f64 {
        let d = self.dim() as f64;
        -0.5 * (d * LN_2 + vecp_len(self.dim()) as f64 * PI.ln() + (d + 1.0) * self.logdet_a)
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }
}

pub fn delta_residual(p: &WishartParams, x: &SymMatrix) -> Result<DeltaResidual> {
    let st = Standardizer::new(p.nu, &p.s)?;
    DeltaResidual::from_matrix(st.delta_matrix(x)?)
}

/// Wishart log-density with parameter-dependent pieces computed once.
#[derive(Debug, Clone)]
pub struct WishartLogDensity {
    nu: f64,
    d: usize,
    s_inv: DMatrix<f64>,
    log_norm: f64,
}

impl WishartLogDensity {
    pub fn new(p: &WishartParams) -> Self {
        let d = p.dim();
        let df = d as f64;
        let log_norm = -0.5 * p.nu * df * LN_2 - 0.5 * p.nu * p.s.logdet() - ln_multigamma(d, 0.5 * p.nu);
        Self {
            nu: p.nu,
            d,
            s_inv: spd_inverse(&p.s).into_sym().into_matrix(),
            log_norm,
        }
    }

    pub fn eval(&self, x: &SpdMatrix) -> Result<f64> {
        check_dim(self.d, x.dim())?;
        let logdet_x = cholesky_logdet(x);
        let tr = self.s_inv.component_mul(x.matrix()).sum();
        Ok(0.5 * (self.nu - self.d as f64 - 1.0) * logdet_x - 0.5 * tr + self.log_norm)
    }

    /// Like [`eval`](Self::eval) for a matrix not yet known to be SPD.
    pub fn eval_sym(&self, x: &SymMatrix) -> Result<f64> {
        self.eval(&SpdMatrix::new(x.clone())?)
    }
}

fn cholesky_logdet(x: &SpdMatrix) -> f64 {
    match nalgebra::Cholesky::new(x.matrix().clone()) {
        Some(c) => 2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>(),
        None => x.logdet(),
    }
}

pub fn wishart_logpdf(p: &WishartParams, x: &SpdMatrix) -> Result<f64> {
    WishartLogDensity::new(p).eval(x)
}

/// −½tr(Δ²) − ½log(2^d π^{d(d+1)/2} det(√(2ν)S)^{d+1}); defined on all
/// symmetric X.
pub fn smn_logpdf(p: &SmnParams, x: &SymMatrix) -> Result<f64> {
    Standardizer::new(p.nu, &p.s)?.smn_logpdf(x)
}

/// log K_{ν,S}(X) − log g_{ν,S}(X) by direct subtraction.
pub fn log_ratio_direct(p: &WishartParams, x: &SpdMatrix) -> Result<f64> {
    let w = wishart_logpdf(p, x)?;
    let g = smn_logpdf(&SmnParams::from(p), x.sym())?;
    Ok(w - g)
}

/// The S-free form of the log-ratio as a function of the eigenvalues of Δ.
///
/// For ν ≤ d + 1 the rearranged Stirling terms are undefined and the value
/// is computed directly with S = I and X = νI + √(2ν)·diag(λ).
pub fn log_ratio_stable(nu: f64, d: usize, lambdas: &[f64]) -> Result<f64> {
    if lambdas.len() != d {
        return Err(Error::InvalidInput(format!(
            "expected {d} eigenvalues, got {}",
            lambdas.len()
        )));
    }
    if !(nu > d as f64 - 1.0) {
        return Err(Error::Domain(format!("need nu > d - 1, got nu={nu}, d={d}")));
    }
    let c = (2.0 / nu).sqrt();
    if let Some(l) = lambdas.iter().find(|&&l| !(1.0 + c * l > 0.0)) {
        return Err(Error::Domain(format!(
            "X outside SPD cone: 1 + sqrt(2/nu)*lambda = {} for lambda = {l}",
            1.0 + c * l
        )));
    }
    let df = d as f64;
    if nu <= df + 1.0 {
        let x: Vec<f64> = lambdas.iter().map(|l| nu + (2.0 * nu).sqrt() * l).collect();
        let p = WishartParams::new(nu, SpdMatrix::identity(d))?;
        return log_ratio_direct(&p, &SpdMatrix::from_diagonal(&x)?);
    }
    let mut out = 0.0;
    for &l in lambdas {
        out += 0.5 * (nu - df - 1.0) * (c * l).ln_1p() - (nu / 2.0).sqrt() * l + 0.5 * l * l;
    }
    for i in 1..=d {
        let fi = i as f64;
        let h = 0.5 * (nu - fi - 1.0);
        out -= 0.5 * (nu - fi) * (-(fi + 1.0) / nu).ln_1p() + 0.5 * (fi + 1.0);
        out -= ln_gamma(h + 1.0) - 0.5 * (2.0 * PI).ln() + h - 0.5 * (nu - fi) * h.ln();
    }
    Ok(out)
}

/// Gamma(shape, scale) density with domain checks.
pub fn gamma1d_pdf(shape: f64, scale: f64, x: f64) -> Result<f64> {
    if !(shape > 0.0 && scale > 0.0 && x > 0.0) {
        return Err(Error::Domain(format!(
            "gamma pdf needs positive shape, scale and x (got {shape}, {scale}, {x})"
        )));
    }
    Ok(gamma_pdf(shape, scale, x))
}
