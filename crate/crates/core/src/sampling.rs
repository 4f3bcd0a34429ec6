//! Wishart and SMN samplers, exact trace moments of Δ, moment bounds on
//! events, the Wishart density sup bound, and chunked Monte Carlo drivers.

use std::f64::consts::{E, PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::densities::{SmnParams, Standardizer, WishartParams};
use crate::error::{Error, Result};
use crate::stats::RunningStats;
use crate::symcore::{halfvec_cov, unvecp, vecp, HalfVec, SpdMatrix, SymMatrix};

/// Deterministic random stream identified by (seed, stream_id).
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Draws per chunk in the chunked Monte Carlo drivers.
pub const MC_CHUNK: usize = 1 << 14;

/// Splits `n` draws into fixed chunks, runs chunk `c` on stream `c` of
/// `seed` (in parallel), and returns the per-chunk results in chunk order.
/// The result does not depend on the number of worker threads.
pub fn chunked_mc<T, F>(n: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut RngStream, usize) -> T + Sync,
{
    let chunks = n.div_ceil(MC_CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = MC_CHUNK.min(n - c * MC_CHUNK);
            let mut rng = RngStream::new(seed, c as u64);
            f(&mut rng, len)
        })
        .collect()
}

/// Bartlett-decomposition Wishart sampler with the Cholesky factor and the
/// diagonal gamma laws prepared once.
#[derive(Debug, Clone)]
pub struct WishartSampler {
    l: DMatrix<f64>,
    diag: Vec<Gamma<f64>>,
}

impl WishartSampler {
    pub fn new(p: &WishartParams) -> Self {
        let d = p.dim();
        let diag = (0..d)
            .map(|k| Gamma::new(0.5 * (p.nu() - k as f64), 1.0).expect("nu > d - 1 gives positive shapes"))
            .collect();
        Self {
            l: p.scale().cholesky(),
            diag,
        }
    }

    /// L·A·Aᵀ·Lᵀ as a raw matrix.
    pub fn sample_matrix<R: RngCore + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let d = self.l.nrows();
        let mut a = DMatrix::zeros(d, d);
        for i in 0..d {
            a[(i, i)] = (2.0 * self.diag[i].sample(rng)).sqrt();
            for j in 0..i {
                a[(i, j)] = StandardNormal.sample(rng);
            }
        }
        let la = &self.l * a;
        &la * la.transpose()
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> SpdMatrix {
        let m = self.sample_matrix(rng);
        // Positive definite by construction; only round-off can break the
        // eigenvalue test, and then a retry is the right response.
        match SpdMatrix::new(SymMatrix::from_upper(m).expect("square")) {
            Ok(w) => w,
            Err(_) => self.sample(rng),
        }
    }
}

pub fn sample_wishart(p: &WishartParams, rng: &mut RngStream) -> SpdMatrix {
    WishartSampler::new(p).sample(rng)
}

/// Gaussian sampler on vecp coordinates with mean ν·vecp(S) and covariance
/// halfvec_cov(ν, S).
#[derive(Debug, Clone)]
pub struct SmnSampler {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
}

impl SmnSampler {
    pub fn new(p: &SmnParams) -> Result<Self> {
        let s = p.scale();
        // The covariance pattern only needs ν > 0; scale the ν = 1 pattern.
        let cov = crate::symcore::halfvec_weights(s) * p.nu();
        let chol = nalgebra::Cholesky::new(cov)
            .ok_or_else(|| Error::Numeric("halfvec covariance is not positive definite".into()))?
            .l();
        Ok(Self {
            mean: DVector::from_vec(vecp(&s.sym().scale(p.nu())).into_values()),
            chol,
        })
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> SymMatrix {
        let r = self.mean.len();
        let z = DVector::from_iterator(r, (0..r).map(|_| StandardNormal.sample(rng)));
        let v = &self.mean + &self.chol * z;
        unvecp(&HalfVec::new(v.as_slice().to_vec()).expect("triangular length"))
    }
}

pub fn sample_smn(p: &SmnParams, rng: &mut RngStream) -> Result<SymMatrix> {
    Ok(SmnSampler::new(p)?.sample(rng))
}

/// E tr(Δ^k) under Wishart(ν, S), k = 1..4.
pub fn trace_moment_exact(d: usize, nu: f64, k: u32) -> Result<f64> {
    if !(nu > d as f64 - 1.0) {
        return Err(Error::Domain(format!("need nu > d - 1, got nu={nu}, d={d}")));
    }
    let d = d as f64;
    match k {
        1 => Ok(0.0),
        2 => Ok(d * (d + 1.0) / 2.0),
        3 => Ok(d * (d * d + 3.0 * d + 4.0) / (2.0 * SQRT_2) / nu.sqrt()),
        4 => Ok(d * (2.0 * d * d + 5.0 * d + 5.0) / 4.0
            + d * (d.powi(3) + 6.0 * d * d + 21.0 * d + 20.0) / (4.0 * nu)),
        _ => Err(Error::Unsupported(format!("trace moment of order {k} (only 1..4)"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentReport {
    pub k: u32,
    pub exact: f64,
    pub mc_estimate: f64,
    pub mc_stderr: f64,
    pub n: u64,
}

impl MomentReport {
    /// (estimate − exact) / stderr.
    pub fn z(&self) -> f64 {
        (self.mc_estimate - self.exact) / self.mc_stderr
    }
}

/// tr(Δ^k) for k = 1..4 via matrix products.
fn delta_traces(delta: &DMatrix<f64>) -> [f64; 4] {
    let d2 = delta * delta;
    [
        delta.trace(),
        delta.norm_squared(),
        d2.component_mul(delta).sum(),
        d2.norm_squared(),
    ]
}

/// Monte Carlo estimates of E tr(Δ^k), k = 1..4, from one set of `n` draws.
pub fn mc_trace_moments(p: &WishartParams, n: usize, seed: u64) -> Result<[MomentReport; 4]> {
    if n < 2 {
        return Err(Error::InvalidInput("need at least two draws".into()));
    }
    let sampler = WishartSampler::new(p);
    let st = Standardizer::new(p.nu(), p.scale())?;
    let parts = chunked_mc(n, seed, |rng, len| {
        let mut acc = [RunningStats::new(); 4];
        for _ in 0..len {
            let w = SymMatrix::from_upper(sampler.sample_matrix(rng)).expect("square");
            let delta = st.delta_matrix(&w).expect("matching dimension");
            for (a, t) in acc.iter_mut().zip(delta_traces(delta.matrix())) {
                a.push(t);
            }
        }
        acc
    });
    let mut total = [RunningStats::new(); 4];
    for part in &parts {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    let d = p.dim();
    let mut out = [MomentReport {
        k: 0,
        exact: 0.0,
        mc_estimate: 0.0,
        mc_stderr: 0.0,
        n: 0,
    }; 4];
    for (i, slot) in out.iter_mut().enumerate() {
        let k = i as u32 + 1;
        *slot = MomentReport {
            k,
            exact: trace_moment_exact(d, p.nu(), k)?,
            mc_estimate: total[i].mean(),
            mc_stderr: total[i].stderr(),
            n: total[i].count(),
        };
    }
    Ok(out)
}

pub fn mc_trace_moment(p: &WishartParams, k: u32, n: usize, seed: u64) -> Result<MomentReport> {
    if !(1..=4).contains(&k) {
        return Err(Error::Unsupported(format!("trace moment of order {k} (only 1..4)")));
    }
    Ok(mc_trace_moments(p, n, seed)?[k as usize - 1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventBound {
    pub bound: f64,
    /// False when ν < 4d, a conservative marker for "ν large enough".
    pub in_regime: bool,
}

/// Bound on |E[tr(Δ^k) 1_A] − E[tr(Δ^k)]| in terms of p = P(Aᶜ):
/// d^{3/2} p^{1/2} for k = 1 and 3 d^{5/2} p^{1/4} for k = 3.
pub fn moment_bound_on_event(d: usize, nu: f64, k: u32, p_complement: f64) -> Result<EventBound> {
    if !(0.0..=1.0).contains(&p_complement) {
        return Err(Error::Domain(format!("probability must lie in [0,1], got {p_complement}")));
    }
    if !(nu > d as f64 - 1.0) {
        return Err(Error::Domain(format!("need nu > d - 1, got nu={nu}, d={d}")));
    }
    let df = d as f64;
    let bound = match k {
        1 => df.powf(1.5) * p_complement.sqrt(),
        3 => 3.0 * df.powf(2.5) * p_complement.powf(0.25),
        _ => return Err(Error::Unsupported(format!("event moment bound for k={k} (only 1, 3)"))),
    };
    Ok(EventBound {
        bound,
        in_regime: nu >= 4.0 * df,
    })
}

/// Upper bound on sup_X Wishart(ν, M) density:
/// (2π/e)^{-d(d+1)/4} det(M)^{-(d+1)/2} / ((2e)^{d/2} (ν−d−1)^{d(d+1)/4}).
pub fn density_sup_bound(nu: f64, m: &SpdMatrix) -> Result<f64> {
    let d = m.dim() as f64;
    if !(nu > d + 1.0) {
        return Err(Error::Domain(format!("density sup bound needs nu > d + 1, got nu={nu}")));
    }
    let q = d * (d + 1.0) / 4.0;
    let log = -q * (2.0 * PI / E).ln() - 0.5 * (d + 1.0) * m.logdet() - 0.5 * d * (2.0 * E).ln() - q * (nu - d - 1.0).ln();
    Ok(log.exp())
}

/// n^{-1/2} (Σ x_i x_iᵀ − n S) for x_i ~ N(0, S).
pub fn scaled_sample_covariance<R: RngCore + ?Sized>(s: &SpdMatrix, n: usize, rng: &mut R) -> SymMatrix {
    let d = s.dim();
    let l = s.cholesky();
    let mut acc = DMatrix::zeros(d, d);
    for _ in 0..n {
        let z = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)));
        let x = &l * z;
        acc += &x * x.transpose();
    }
    let nf = n as f64;
    SymMatrix::from_upper((acc - s.matrix() * nf) / nf.sqrt()).expect("square")
}

/// Cov(vecp W) for W ~ Wishart(ν, S); re-exported for the moment checks.
pub fn wishart_vecp_cov(p: &WishartParams) -> Result<DMatrix<f64>> {
    halfvec_cov(p.nu(), p.scale())
}
