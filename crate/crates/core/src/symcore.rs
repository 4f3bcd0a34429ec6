//! Symmetric-matrix algebra: half-vectorization, eigendecomposition, SPD
//! square roots, trace powers and the covariance operator of vecp(W).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative floor on the smallest eigenvalue for a matrix to count as SPD.
pub const SPD_REL_TOL: f64 = 1e-12;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

/// Dense symmetric matrix. Symmetry is enforced at construction by copying
/// the upper triangle onto the lower one.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    /// Builds from a square matrix; only the upper triangle is read.
    pub fn from_upper(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::InvalidInput(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let mut m = m;
        let d = m.nrows();
        for j in 0..d {
            for i in (j + 1)..d {
                m[(i, j)] = m[(j, i)];
            }
        }
        Ok(Self { m })
    }

    /// Builds from row slices; only the upper triangle is read.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("rows must form a square matrix".into()));
        }
        Self::from_upper(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn identity(d: usize) -> Self {
        Self {
            m: DMatrix::identity(d, d),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            m: DMatrix::zeros(d, d),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self {
            m: DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        Self { m: &self.m * c }
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        Self {
            m: &self.m + &other.m,
        }
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        Self {
            m: &self.m - &other.m,
        }
    }

    /// A·M·A for symmetric A, symmetrized from the upper triangle.
    pub fn congruence(&self, a: &SymMatrix) -> SymMatrix {
        let prod = &a.m * &self.m * &a.m;
        Self::from_upper(prod).expect("square product")
    }

    /// Q·M·Qᵀ for an arbitrary square Q.
    pub fn transform(&self, q: &DMatrix<f64>) -> SymMatrix {
        let prod = q * &self.m * q.transpose();
        Self::from_upper(prod).expect("square product")
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..d).map(|i| (0..d).map(|j| self.m[(i, j)]).collect()).collect()
    }
}

/// Symmetric positive definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    base: SymMatrix,
}

impl SpdMatrix {
    pub fn new(base: SymMatrix) -> Result<Self> {
        let eig = sym_eigen(&base)?;
        let lo = eig.eigenvalues[0];
        let hi = eig.eigenvalues[eig.eigenvalues.len() - 1];
        if !(hi > 0.0 && lo > SPD_REL_TOL * hi) {
            return Err(Error::Domain(format!(
                "matrix is not positive definite (eigenvalues in [{lo:e}, {hi:e}])"
            )));
        }
        Ok(Self { base })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(SymMatrix::from_rows(rows)?)
    }

    pub fn identity(d: usize) -> Self {
        Self {
            base: SymMatrix::identity(d),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(SymMatrix::from_diagonal(diag))
    }

    pub fn sym(&self) -> &SymMatrix {
        &self.base
    }

    pub fn into_sym(self) -> SymMatrix {
        self.base
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.base.get(i, j)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        self.base.matrix()
    }

    /// c·S for c > 0.
    pub fn scale(&self, c: f64) -> Result<SpdMatrix> {
        if !(c > 0.0) {
            return Err(Error::Domain(format!("scale factor must be positive, got {c}")));
        }
        Ok(Self {
            base: self.base.scale(c),
        })
    }

    pub fn logdet(&self) -> f64 {
        spd_logdet(self)
    }

    /// Lower Cholesky factor.
    pub fn cholesky(&self) -> DMatrix<f64> {
        nalgebra::Cholesky::new(self.matrix().clone())
            .map(|c| c.l())
            .unwrap_or_else(|| {
                // Nearly singular but accepted by the eigenvalue test: fall
                // back to the symmetric square root, which is also a valid factor.
                spd_sqrt(self).into_sym().into_matrix()
            })
    }
}

impl TryFrom<SymMatrix> for SpdMatrix {
    type Error = Error;
    fn try_from(m: SymMatrix) -> Result<Self> {
        SpdMatrix::new(m)
    }
}

/// Half-vectorization of a symmetric matrix, ordered column-wise over the
/// upper triangle: (M11, M12, M22, M13, M23, M33, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct HalfVec {
    d: usize,
    values: Vec<f64>,
}

impl HalfVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let d = triangular_root(values.len()).ok_or_else(|| {
            Error::InvalidInput(format!("length {} is not a triangular number", values.len()))
        })?;
        Ok(Self { d, values })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomp {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns.
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomp {
    /// V·diag(φ(λ))·Vᵀ.
    pub fn reconstruct_with<F: Fn(f64) -> f64>(&self, phi: F) -> SymMatrix {
        let v = &self.eigenvectors;
        let diag = DMatrix::from_diagonal(&DVector::from_iterator(
            self.eigenvalues.len(),
            self.eigenvalues.iter().map(|&l| phi(l)),
        ));
        SymMatrix::from_upper(v * diag * v.transpose()).expect("square product")
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.reconstruct_with(|l| l)
    }
}

/// r(d) = d(d+1)/2, the length of vecp for a d×d matrix.
pub fn vecp_len(d: usize) -> usize {
    d * (d + 1) / 2
}

fn triangular_root(len: usize) -> Option<usize> {
    let d = (((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    (d..=d + 1).find(|&k| k >= 1 && vecp_len(k) == len)
}

/// Index pairs (i, j), i ≤ j, in vecp order.
pub fn vecp_pairs(d: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(vecp_len(d));
    for j in 0..d {
        for i in 0..=j {
            out.push((i, j));
        }
    }
    out
}

/// Position of entry (i, j) inside vecp.
pub fn vecp_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

pub fn vecp(m: &SymMatrix) -> HalfVec {
    let d = m.dim();
    HalfVec {
        d,
        values: vecp_pairs(d).into_iter().map(|(i, j)| m.get(i, j)).collect(),
    }
}

pub fn unvecp(v: &HalfVec) -> SymMatrix {
    let d = v.d;
    let mut m = DMatrix::zeros(d, d);
    for (k, (i, j)) in vecp_pairs(d).into_iter().enumerate() {
        m[(i, j)] = v.values[k];
        m[(j, i)] = v.values[k];
    }
    SymMatrix { m }
}

/// Convenience: unvecp from a raw slice.
pub fn unvecp_slice(values: &[f64]) -> Result<SymMatrix> {
    Ok(unvecp(&HalfVec::new(values.to_vec())?))
}

/// Symmetric eigendecomposition with ascending eigenvalues.
///
/// Ties keep the backend's order (a stable sort), and each eigenvector is
/// signed so that its largest-magnitude entry is positive.
pub fn sym_eigen(m: &SymMatrix) -> Result<EigenDecomp> {
    let d = m.dim();
    let eig = SymmetricEigen::try_new(m.m.clone(), EIGEN_EPS, EIGEN_MAX_ITER).ok_or_else(|| {
        let fro = m.m.norm();
        Error::Numeric(format!(
            "symmetric eigensolver did not converge (d={d}, Frobenius norm {fro:e})"
        ))
    })?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = DMatrix::zeros(d, d);
    for (col, &k) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let pivot = (0..d)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            vecs[(r, col)] = sign * v[r];
        }
    }
    Ok(EigenDecomp {
        eigenvalues,
        eigenvectors: vecs,
    })
}

fn spd_eigen(s: &SpdMatrix) -> EigenDecomp {
    sym_eigen(s.sym()).expect("eigendecomposition succeeded at construction")
}

/// S^{-1/2}.
pub fn spd_inv_sqrt(s: &SpdMatrix) -> SpdMatrix {
    SpdMatrix {
        base: spd_eigen(s).reconstruct_with(|l| 1.0 / l.sqrt()),
    }
}

/// S^{1/2}.
pub fn spd_sqrt(s: &SpdMatrix) -> SpdMatrix {
    SpdMatrix {
        base: spd_eigen(s).reconstruct_with(f64::sqrt),
    }
}

pub fn spd_inverse(s: &SpdMatrix) -> SpdMatrix {
    SpdMatrix {
        base: spd_eigen(s).reconstruct_with(|l| 1.0 / l),
    }
}

pub fn spd_logdet(s: &SpdMatrix) -> f64 {
    spd_eigen(s).eigenvalues.iter().map(|l| l.ln()).sum()
}

/// Smallest eigenvalue test without constructing an [`SpdMatrix`].
pub fn is_spd(m: &SymMatrix) -> bool {
    sym_eigen(m)
        .map(|e| {
            let hi = e.eigenvalues[e.eigenvalues.len() - 1];
            hi > 0.0 && e.eigenvalues[0] > SPD_REL_TOL * hi
        })
        .unwrap_or(false)
}

/// tr(M^k) as Σ λ_i^k.
pub fn trace_power(m: &SymMatrix, k: u32) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidInput("trace power needs k >= 1".into()));
    }
    let eig = sym_eigen(m)?;
    Ok(eig.eigenvalues.iter().map(|l| l.powi(k as i32)).sum())
}

/// Covariance matrix of vecp(W) for W ~ Wishart(ν, S):
/// entry ((i1,i2),(j1,j2)) = ν (S_{i1 j1} S_{i2 j2} + S_{i1 j2} S_{i2 j1}).
pub fn halfvec_cov(nu: f64, s: &SpdMatrix) -> Result<DMatrix<f64>> {
    let d = s.dim();
    if !(nu > d as f64 - 1.0) {
        return Err(Error::Domain(format!("need nu > d - 1 = {}, got {nu}", d - 1)));
    }
    Ok(halfvec_weights(s).scale(nu))
}

/// The ν = 1 covariance pattern, without a domain check. Used as the
/// weight matrix of the bias functional.
pub fn halfvec_weights(s: &SpdMatrix) -> DMatrix<f64> {
    let pairs = vecp_pairs(s.dim());
    let p = pairs.len();
    DMatrix::from_fn(p, p, |a, b| {
        let (i1, i2) = pairs[a];
        let (j1, j2) = pairs[b];
        s.get(i1, j1) * s.get(i2, j2) + s.get(i1, j2) * s.get(i2, j1)
    })
}

/// 2^{-d(d-1)/2} det(√(2ν) S)^{d+1}, in log form.
pub fn halfvec_cov_logdet_closed_form(nu: f64, s: &SpdMatrix) -> f64 {
    let d = s.dim() as f64;
    let logdet_a = d * 0.5 * (2.0 * nu).ln() + s.logdet();
    -d * (d - 1.0) / 2.0 * std::f64::consts::LN_2 + (d + 1.0) * logdet_a
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sym(rows: &[&[f64]]) -> SymMatrix {
        SymMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn vecp_examples() {
        assert_eq!(vecp(&sym(&[&[1.0, 2.0], &[2.0, 3.0]])).values(), &[1.0, 2.0, 3.0]);
        assert_eq!(vecp(&SymMatrix::identity(2)).values(), &[1.0, 0.0, 1.0]);
        let m = sym(&[&[4.0, 1.0, 0.0], &[1.0, 5.0, 2.0], &[0.0, 2.0, 6.0]]);
        assert_eq!(vecp(&m).values(), &[4.0, 1.0, 5.0, 0.0, 2.0, 6.0]);
        assert_eq!(unvecp(&vecp(&m)), m);
        for (k, (i, j)) in vecp_pairs(4).into_iter().enumerate() {
            assert_eq!(vecp_index(i, j), k);
            assert_eq!(vecp_index(j, i), k);
        }
    }

    #[test]
    fn unvecp_examples_and_errors() {
        assert_eq!(unvecp_slice(&[1.0, 2.0, 3.0]).unwrap(), sym(&[&[1.0, 2.0], &[2.0, 3.0]]));
        assert_eq!(unvecp_slice(&[1.0, 0.0, 1.0]).unwrap(), SymMatrix::identity(2));
        assert_eq!(unvecp_slice(&[7.0]).unwrap().dim(), 1);
        for bad in [0usize, 2, 4, 5, 7] {
            assert!(matches!(
                HalfVec::new(vec![0.0; bad]),
                Err(Error::InvalidInput(_))
            ));
        }
    }

    #[test]
    fn construction_reads_upper_triangle_only() {
        let m = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![-9.0, 3.0]]).unwrap();
        assert_eq!(m.get(1, 0), 2.0);
        assert!(SymMatrix::from_rows(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn eigen_examples() {
        let e = sym_eigen(&SymMatrix::identity(2)).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 1.0]);
        let e = sym_eigen(&sym(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        assert!((e.eigenvalues[0] - 1.0).abs() < 1e-14);
        assert!((e.eigenvalues[1] - 3.0).abs() < 1e-14);
        let e = sym_eigen(&SymMatrix::from_diagonal(&[5.0, -3.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![-3.0, 5.0]);
    }

    #[test]
    fn inverse_sqrt_examples() {
        let r = spd_inv_sqrt(&SpdMatrix::identity(3));
        assert!((r.matrix() - DMatrix::identity(3, 3)).norm() < 1e-15);
        let r = spd_inv_sqrt(&SpdMatrix::from_diagonal(&[4.0, 9.0]).unwrap());
        assert!((r.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((r.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.get(0, 1), 0.0);
        let s = SpdMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let r = spd_inv_sqrt(&s);
        let rsr = r.matrix() * s.matrix() * r.matrix();
        assert!((rsr - DMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn trace_power_examples() {
        assert!((trace_power(&SymMatrix::identity(2), 3).unwrap() - 2.0).abs() < 1e-14);
        assert!((trace_power(&sym(&[&[2.0, 1.0], &[1.0, 2.0]]), 2).unwrap() - 10.0).abs() < 1e-13);
        assert!(trace_power(&sym(&[&[0.0, 1.0], &[1.0, 0.0]]), 3).unwrap().abs() < 1e-15);
        assert!(trace_power(&SymMatrix::identity(2), 0).is_err());
    }

    #[test]
    fn spd_check() {
        assert!(SpdMatrix::from_diagonal(&[1.0, 0.0]).is_err());
        assert!(SpdMatrix::from_diagonal(&[1.0, -1e-3]).is_err());
        assert!(SpdMatrix::from_diagonal(&[1.0, 1e-10]).is_ok());
        assert!(SpdMatrix::from_diagonal(&[1.0, 1e-13]).is_err());
    }

    #[test]
    fn halfvec_cov_examples() {
        let w = halfvec_weights(&SpdMatrix::identity(2));
        assert_eq!(w, DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 2.0])));
        assert!(matches!(halfvec_cov(1.0, &SpdMatrix::identity(2)), Err(Error::Domain(_))));
        let c = halfvec_cov(10.0, &SpdMatrix::identity(2)).unwrap();
        assert_eq!(c, DMatrix::from_diagonal(&DVector::from_vec(vec![20.0, 10.0, 20.0])));
        let c = halfvec_cov(3.5, &SpdMatrix::from_diagonal(&[1.5]).unwrap()).unwrap();
        assert!((c[(0, 0)] - 2.0 * 3.5 * 1.5 * 1.5).abs() < 1e-14);
        assert!(matches!(
            halfvec_cov(1.0, &SpdMatrix::identity(3)),
            Err(Error::Domain(_))
        ));
    }

    fn spd_from_seed(d: usize, entries: &[f64]) -> SpdMatrix {
        // A·Aᵀ + d·I from a d×d block of entries.
        let a = DMatrix::from_fn(d, d, |i, j| entries[i * d + j]);
        let m = &a * a.transpose() + DMatrix::identity(d, d) * (d as f64 * 0.5);
        SpdMatrix::new(SymMatrix::from_upper(m).unwrap()).unwrap()
    }

    fn sym_strategy() -> impl Strategy<Value = SymMatrix> {
        (1usize..=6).prop_flat_map(|d| {
            prop::collection::vec(-10.0f64..10.0, vecp_len(d))
                .prop_map(|v| unvecp_slice(&v).unwrap())
        })
    }

    fn spd_strategy() -> impl Strategy<Value = SpdMatrix> {
        (1usize..=3).prop_flat_map(|d| {
            prop::collection::vec(-2.0f64..2.0, d * d).prop_map(move |v| spd_from_seed(d, &v))
        })
    }

    proptest! {
        #[test]
        fn roundtrip_is_exact(m in sym_strategy()) {
            prop_assert_eq!(unvecp(&vecp(&m)), m);
        }

        #[test]
        fn eigen_reconstruction_and_orthogonality(m in sym_strategy()) {
            let e = sym_eigen(&m).unwrap();
            for w in e.eigenvalues.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            let rec = e.reconstruct();
            let scale = m.matrix().norm().max(f64::MIN_POSITIVE);
            prop_assert!((rec.matrix() - m.matrix()).norm() / scale <= 1e-12);
            let d = m.dim();
            let vtv = e.eigenvectors.transpose() * &e.eigenvectors;
            prop_assert!((vtv - DMatrix::identity(d, d)).amax() <= 1e-12);
        }

        #[test]
        fn trace_power_one_is_trace(m in sym_strategy()) {
            let t = m.trace();
            let tp = trace_power(&m, 1).unwrap();
            prop_assert!((tp - t).abs() <= 1e-12 * t.abs().max(m.matrix().amax()));
        }

        #[test]
        fn inverse_sqrt_whitens(s in spd_strategy()) {
            let r = spd_inv_sqrt(&s);
            let d = s.dim();
            let rsr = r.matrix() * s.matrix() * r.matrix();
            prop_assert!((rsr - DMatrix::identity(d, d)).norm() <= 1e-10);
            let q = spd_sqrt(&s);
            prop_assert!((q.matrix() * q.matrix() - s.matrix()).norm() <= 1e-10 * s.matrix().norm());
        }

        #[test]
        fn halfvec_cov_determinant_identity(s in spd_strategy(), big in any::<bool>()) {
            let nu = if big { 50.0 } else { 5.0 };
            let c = halfvec_cov(nu, &s).unwrap();
            let det = c.determinant();
            let want = halfvec_cov_logdet_closed_form(nu, &s).exp();
            prop_assert!(((det - want) / want).abs() <= 1e-9, "det {} want {}", det, want);
        }

        #[test]
        fn halfvec_cov_is_symmetric_psd(s in spd_strategy()) {
            let c = halfvec_cov(7.0, &s).unwrap();
            prop_assert_eq!(&c, &c.transpose());
            let e = sym_eigen(&SymMatrix::from_upper(c).unwrap()).unwrap();
            let hi = *e.eigenvalues.last().unwrap();
            prop_assert!(e.eigenvalues[0] >= -1e-10 * hi);
        }
    }
}
