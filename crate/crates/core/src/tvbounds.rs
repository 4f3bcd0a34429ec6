//! Total-variation and Hellinger distances between the Wishart and its
//! matched symmetric matrix normal: the O(d^{3/2}/√ν) upper bounds, a d = 1
//! quadrature oracle, and Monte Carlo estimators for any d.

use crate::densities::{SmnParams, Standardizer, WishartLogDensity, WishartParams};
use crate::error::{Error, Result};
use crate::quad::integrate_with_breaks;
use crate::sampling::{chunked_mc, RngStream, SmnSampler, WishartSampler};
use crate::special::{gamma_pdf, normal_pdf, std_normal_cdf};
use crate::stats::RunningStats;
use crate::symcore::{SpdMatrix, SymMatrix};

/// Empirical constant that envelopes every scan run so far; the universal
/// constant of the bound itself is not known.
pub const WORKING_C: f64 = 3.0;

fn check_bound_args(nu: f64, d: usize, c: f64) -> Result<()> {
    if d == 0 || !(nu > d as f64 - 1.0) || !(c > 0.0) {
        return Err(Error::Domain(format!("bounds need d >= 1, nu > d - 1 and C > 0 (got d={d}, nu={nu}, C={c})")));
    }
    Ok(())
}

/// C·d^{3/2}/√ν.
pub fn tv_bound(nu: f64, d: usize, c: f64) -> Result<f64> {
    check_bound_args(nu, d, c)?;
    Ok(c * (d as f64).powf(1.5) / nu.sqrt())
}

/// √(2C·d^{3/2}/√ν).
pub fn hellinger_bound(nu: f64, d: usize, c: f64) -> Result<f64> {
    Ok((2.0 * tv_bound(nu, d, c)?).sqrt())
}

/// TV between Gamma(ν/2, scale 2s) and Normal(νs, 2νs²) by adaptive
/// quadrature over mean ± 12 sd intersected with (0, ∞), split at the
/// density crossings located on a `grid`-point scan. The normal mass below
/// zero is added in closed form.
pub fn tv_numeric_1d(nu: f64, s: f64, grid: usize) -> Result<f64> {
    let q = OneDim::new(nu, s, grid)?;
    let body = q.integrate(|x| 0.5 * (q.gamma(x) - q.normal(x)).abs());
    Ok(body + 0.5 * q.normal_mass_below_zero())
}

/// Hellinger distance H with H² = ∫(√p − √q)², same quadrature scheme.
pub fn hellinger_numeric_1d(nu: f64, s: f64, grid: usize) -> Result<f64> {
    let q = OneDim::new(nu, s, grid)?;
    let body = q.integrate(|x| (q.gamma(x).sqrt() - q.normal(x).sqrt()).powi(2));
    Ok((body + q.normal_mass_below_zero()).sqrt())
}

struct OneDim {
    shape: f64,
    scale: f64,
    mean: f64,
    var: f64,
    breaks: Vec<f64>,
}

impl OneDim {
    fn new(nu: f64, s: f64, grid: usize) -> Result<Self> {
        if !(nu > 0.0) || !(s > 0.0) || grid < 2 {
            return Err(Error::Domain(format!("need nu > 0, s > 0 and grid >= 2 (got {nu}, {s}, {grid})")));
        }
        let mean = nu * s;
        let var = 2.0 * nu * s * s;
        let sd = var.sqrt();
        let lo = (mean - 12.0 * sd).max(0.0);
        let hi = mean + 12.0 * sd;
        let mut q = Self {
            shape: 0.5 * nu,
            scale: 2.0 * s,
            mean,
            var,
            breaks: Vec::new(),
        };
        let diff = |x: f64| q.gamma(x) - q.normal(x);
        let step = (hi - lo) / grid as f64;
        let mut breaks = vec![lo];
        let mut prev = diff(lo);
        for i in 1..=grid {
            let x = lo + step * i as f64;
            let cur = diff(x);
            if prev != 0.0 && cur != 0.0 && (prev < 0.0) != (cur < 0.0) {
                breaks.push(bisect(&diff, x - step, x));
            }
            prev = cur;
        }
        breaks.push(hi);
        q.breaks = breaks;
        Ok(q)
    }

    fn gamma(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            gamma_pdf(self.shape, self.scale, x)
        }
    }

    fn normal(&self, x: f64) -> f64 {
        normal_pdf(self.mean, self.var, x)
    }

    fn normal_mass_below_zero(&self) -> f64 {
        std_normal_cdf(-self.mean / self.var.sqrt())
    }

    fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        integrate_with_breaks(f, &self.breaks, 1e-9, 0.0, 4000).value
    }
}

fn bisect<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64) -> f64 {
    let fa = f(a);
    for _ in 0..100 {
        let m = 0.5 * (a + b);
        if (f(m) < 0.0) == (fa < 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

/// TV and squared Hellinger from one pair of sample streams.
///
/// TV averages ∫(K − g)⁺ = E_K[(1 − g/K)⁺] and ∫(g − K)⁺ = E_g[(1 − K/g)⁺],
/// where K vanishes off the cone so the second term carries the SMN mass
/// outside it. H² = E_K[(1 − √(g/K))²] + P_g(X not SPD).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceEstimate {
    pub tv: McEstimate,
    pub hellinger_sq: McEstimate,
    /// Fraction of SMN draws outside the cone.
    pub leakage: f64,
}

impl DistanceEstimate {
    pub fn hellinger(&self) -> McEstimate {
        let h = self.hellinger_sq.estimate.max(0.0).sqrt();
        let stderr = if h > 0.0 { self.hellinger_sq.stderr / (2.0 * h) } else { self.hellinger_sq.stderr.sqrt() };
        McEstimate { estimate: h, stderr }
    }
}

const SMN_STREAM_SALT: u64 = 0x5a5a_0f0f_3c3c_9696;

fn distances_between<SK, SG, LK, LG>(
    sample_k: SK,
    log_k: LK,
    sample_g: SG,
    log_g: LG,
    n: usize,
    seed: u64,
) -> Result<DistanceEstimate>
where
    SK: Fn(&mut RngStream) -> SpdMatrix + Sync,
    LK: Fn(&SymMatrix) -> Result<f64> + Sync,
    SG: Fn(&mut RngStream) -> SymMatrix + Sync,
    LG: Fn(&SymMatrix) -> Result<f64> + Sync,
{
    if n < 2 {
        return Err(Error::InvalidInput("distance estimates need n >= 2".into()));
    }
    let under_k = chunked_mc(n, seed, |rng, len| {
        let mut tv = RunningStats::new();
        let mut h = RunningStats::new();
        for _ in 0..len {
            let x = sample_k(rng);
            let ratio = (log_g(x.sym())? - log_k(x.sym())?).exp();
            tv.push((1.0 - ratio).max(0.0));
            h.push((1.0 - ratio.sqrt()).powi(2));
        }
        Ok::<_, Error>((tv, h))
    });
    let under_g = chunked_mc(n, seed ^ SMN_STREAM_SALT, |rng, len| {
        let mut tv = RunningStats::new();
        let mut out = RunningStats::new();
        for _ in 0..len {
            let y = sample_g(rng);
            match SpdMatrix::new(y.clone()) {
                Ok(spd) => {
                    let ratio = (log_k(spd.sym())? - log_g(&y)?).exp();
                    tv.push((1.0 - ratio).max(0.0));
                    out.push(0.0);
                }
                Err(_) => {
                    tv.push(1.0);
                    out.push(1.0);
                }
            }
        }
        Ok::<_, Error>((tv, out))
    });
    let (mut a, mut hk) = (RunningStats::new(), RunningStats::new());
    for part in under_k {
        let (tv, h) = part?;
        a.merge(&tv);
        hk.merge(&h);
    }
    let (mut b, mut out) = (RunningStats::new(), RunningStats::new());
    for part in under_g {
        let (tv, o) = part?;
        b.merge(&tv);
        out.merge(&o);
    }
    Ok(DistanceEstimate {
        tv: McEstimate {
            estimate: (0.5 * (a.mean() + b.mean())).clamp(0.0, 1.0),
            stderr: 0.5 * (a.stderr().powi(2) + b.stderr().powi(2)).sqrt(),
        },
        hellinger_sq: McEstimate {
            estimate: (hk.mean() + out.mean()).clamp(0.0, 2.0),
            stderr: (hk.stderr().powi(2) + out.stderr().powi(2)).sqrt(),
        },
        leakage: out.mean(),
    })
}

/// Both distances between Wishart(ν, S) and the matched SMN from `n` draws
/// of each law.
pub fn distances_mc(p: &WishartParams, n: usize, seed: u64) -> Result<DistanceEstimate> {
    let wd = WishartLogDensity::new(p);
    let ws = WishartSampler::new(p);
    let st = Standardizer::new(p.nu(), p.scale())?;
    let gs = SmnSampler::new(&SmnParams::from(p))?;
    distances_between(
        |rng| ws.sample(rng),
        |x| wd.eval_sym(x),
        |rng| gs.sample(rng),
        |y| st.smn_logpdf(y),
        n,
        seed,
    )
}

pub fn tv_mc(p: &WishartParams, n: usize, seed: u64) -> Result<McEstimate> {
    Ok(distances_mc(p, n, seed)?.tv)
}

pub fn hellinger_mc(p: &WishartParams, n: usize, seed: u64) -> Result<McEstimate> {
    Ok(distances_mc(p, n, seed)?.hellinger())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRow {
    pub d: usize,
    pub nu: f64,
    pub tv: f64,
    pub tv_stderr: f64,
    pub hellinger: f64,
    pub hellinger_stderr: f64,
    /// Quadrature TV, available at d = 1.
    pub tv_quadrature: Option<f64>,
    pub bound_tv: f64,
    pub bound_hellinger: f64,
}

impl DistanceRow {
    pub fn sqrt_nu_tv(&self) -> f64 {
        self.nu.sqrt() * self.tv
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceScan {
    pub c: f64,
    pub rows: Vec<DistanceRow>,
}

impl DistanceScan {
    /// max/min − 1 of √ν·TV across rows.
    pub fn sqrt_nu_tv_spread(&self) -> f64 {
        let v: Vec<f64> = self.rows.iter().map(DistanceRow::sqrt_nu_tv).collect();
        let max = v.iter().copied().fold(f64::MIN, f64::max);
        let min = v.iter().copied().fold(f64::MAX, f64::min);
        max / min - 1.0
    }
}

/// Scans ν at S = I_d; row i uses seed `seed + i`.
pub fn distance_scan(d: usize, nus: &[f64], n: usize, c: f64, seed: u64) -> Result<DistanceScan> {
    if nus.is_empty() {
        return Err(Error::InvalidInput("empty nu list".into()));
    }
    let rows = nus
        .iter()
        .enumerate()
        .map(|(i, &nu)| {
            let p = WishartParams::new(nu, SpdMatrix::identity(d))?;
            let est = distances_mc(&p, n, seed.wrapping_add(i as u64))?;
            let h = est.hellinger();
            Ok(DistanceRow {
                d,
                nu,
                tv: est.tv.estimate,
                tv_stderr: est.tv.stderr,
                hellinger: h.estimate,
                hellinger_stderr: h.stderr,
                tv_quadrature: if d == 1 { Some(tv_numeric_1d(nu, 1.0, 2000)?) } else { None },
                bound_tv: tv_bound(nu, d, c)?,
                bound_hellinger: hellinger_bound(nu, d, c)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DistanceScan { c, rows })
}
