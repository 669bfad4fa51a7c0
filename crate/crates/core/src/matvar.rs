//! Matrix-variate normal densities.
//!
//! `X ~ N_{r,c}(M, Sigma, Psi)` means `vec(X) ~ N_{rc}(vec(M), Psi (x) Sigma)` with
//! column-stacking `vec`. Densities are evaluated through Cholesky factors of the
//! row covariance `Sigma` (r x r) and column covariance `Psi` (c x c); the rc x rc
//! Kronecker product is never formed.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatvarError {
    #[error("{0} is not symmetric positive-definite")]
    NotPositiveDefinite(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub(crate) fn cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>, MatvarError> {
    if !m.is_square() || m.iter().any(|v| !v.is_finite()) {
        return Err(MatvarError::NotPositiveDefinite(what));
    }
    Cholesky::new(m.clone()).ok_or(MatvarError::NotPositiveDefinite(what))
}

pub(crate) fn chol_logdet(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatNormParams {
    pub mean: DMatrix<f64>,
    /// Row covariance, r x r.
    pub sigma: DMatrix<f64>,
    /// Column covariance, c x c.
    pub psi: DMatrix<f64>,
}

impl MatNormParams {
    fn check(&self, x: &DMatrix<f64>) -> Result<(), MatvarError> {
        let (r, c) = self.mean.shape();
        if x.shape() != (r, c) || self.sigma.shape() != (r, r) || self.psi.shape() != (c, c) {
            return Err(MatvarError::Dimension(format!(
                "X {:?}, M {:?}, Sigma {:?}, Psi {:?}",
                x.shape(),
                self.mean.shape(),
                self.sigma.shape(),
                self.psi.shape()
            )));
        }
        Ok(())
    }
}

/// Log-density of the matrix-variate normal.
pub fn matnorm_logpdf(x: &DMatrix<f64>, params: &MatNormParams) -> Result<f64, MatvarError> {
    params.check(x)?;
    let (r, c) = x.shape();
    let ch_s = cholesky(&params.sigma, "row covariance")?;
    let ch_p = cholesky(&params.psi, "column covariance")?;
    // Z = L_s^{-1} (X - M) L_p^{-T}; the quadratic form is ||Z||_F^2
    let d = x - &params.mean;
    let left = ch_s.l_dirty().solve_lower_triangular(&d).expect("non-singular factor");
    let z = ch_p
        .l_dirty()
        .solve_lower_triangular(&left.transpose())
        .expect("non-singular factor");
    let quad = z.norm_squared();
    let (rf, cf) = (r as f64, c as f64);
    Ok(-0.5 * rf * cf * (2.0 * PI).ln()
        - 0.5 * rf * chol_logdet(&ch_p)
        - 0.5 * cf * chol_logdet(&ch_s)
        - 0.5 * quad)
}

/// One component of a mixture of matrix-variate bilinear factor analyzers.
///
/// Its marginal law is `N_{r,c}(M, U + A A', V + B B')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilinearComponentParams {
    pub mean: DMatrix<f64>,
    /// Column factor loadings, r x s.
    pub a: DMatrix<f64>,
    /// Row factor loadings, c x v.
    pub b: DMatrix<f64>,
    /// Diagonal of U (r entries, all positive).
    pub u: DVector<f64>,
    /// Diagonal of V (c entries, all positive).
    pub v: DVector<f64>,
}

impl BilinearComponentParams {
    pub fn rows(&self) -> usize {
        self.mean.nrows()
    }

    pub fn cols(&self) -> usize {
        self.mean.ncols()
    }

    pub fn validate(&self) -> Result<(), MatvarError> {
        let (r, c) = self.mean.shape();
        if self.a.nrows() != r || self.u.len() != r || self.b.nrows() != c || self.v.len() != c {
            return Err(MatvarError::Dimension(format!(
                "M {:?}, A {:?}, B {:?}, |U| {}, |V| {}",
                self.mean.shape(),
                self.a.shape(),
                self.b.shape(),
                self.u.len(),
                self.v.len()
            )));
        }
        if self.u.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(MatvarError::NotPositiveDefinite("U"));
        }
        if self.v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(MatvarError::NotPositiveDefinite("V"));
        }
        Ok(())
    }

    /// Dense `U + A A'`.
    pub fn row_covariance(&self) -> DMatrix<f64> {
        &self.a * self.a.transpose() + DMatrix::from_diagonal(&self.u)
    }

    /// Dense `V + B B'`.
    pub fn col_covariance(&self) -> DMatrix<f64> {
        &self.b * self.b.transpose() + DMatrix::from_diagonal(&self.v)
    }

    pub fn to_matnorm(&self) -> MatNormParams {
        MatNormParams {
            mean: self.mean.clone(),
            sigma: self.row_covariance(),
            psi: self.col_covariance(),
        }
    }
}

/// Inverse and log-determinant of `D + L L'` with `D` diagonal, via Woodbury and the
/// matrix determinant lemma. Only an (k x k) Cholesky is needed, k = rank of `L`.
#[derive(Debug, Clone)]
pub struct LowRankPlusDiag {
    pub inverse: DMatrix<f64>,
    pub logdet: f64,
}

impl LowRankPlusDiag {
    pub fn new(diag: &DVector<f64>, loadings: &DMatrix<f64>, what: &'static str) -> Result<Self, MatvarError> {
        if diag.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(MatvarError::NotPositiveDefinite(what));
        }
        let n = diag.len();
        let k = loadings.ncols();
        let dinv = diag.map(|x| 1.0 / x);
        // D^{-1} L
        let mut dl = loadings.clone();
        for (i, mut row) in dl.row_iter_mut().enumerate() {
            row *= dinv[i];
        }
        let inner = DMatrix::<f64>::identity(k, k) + loadings.transpose() * &dl;
        let ch = cholesky(&inner, what)?;
        let logdet = diag.iter().map(|x| x.ln()).sum::<f64>() + chol_logdet(&ch);
        let mut inverse = -(&dl * ch.solve(&dl.transpose()));
        for i in 0..n {
            inverse[(i, i)] += dinv[i];
        }
        // symmetrize away roundoff
        let inverse = (&inverse + inverse.transpose()) * 0.5;
        Ok(Self { inverse, logdet })
    }
}

/// Precomputed per-component quantities for repeated density evaluation.
#[derive(Debug, Clone)]
pub struct ComponentDensity {
    mean: DMatrix<f64>,
    row_inv: DMatrix<f64>,
    col_inv: DMatrix<f64>,
    constant: f64,
}

impl ComponentDensity {
    pub fn new(params: &BilinearComponentParams) -> Result<Self, MatvarError> {
        params.validate()?;
        let (r, c) = (params.rows() as f64, params.cols() as f64);
        let row = LowRankPlusDiag::new(&params.u, &params.a, "U + AA'")?;
        let col = LowRankPlusDiag::new(&params.v, &params.b, "V + BB'")?;
        let constant = -0.5 * r * c * (2.0 * PI).ln() - 0.5 * r * col.logdet - 0.5 * c * row.logdet;
        Ok(Self { mean: params.mean.clone(), row_inv: row.inverse, col_inv: col.inverse, constant })
    }

    pub fn logpdf(&self, x: &DMatrix<f64>) -> f64 {
        let d = x - &self.mean;
        // tr(Psi^{-1} D' Sigma^{-1} D) = sum((Sigma^{-1} D) .* (D Psi^{-1}))
        let left = &self.row_inv * &d;
        let right = &d * &self.col_inv;
        self.constant - 0.5 * left.dot(&right)
    }
}

/// Log-density of one bilinear-factor component.
pub fn mbi_component_logpdf(
    x: &DMatrix<f64>,
    params: &BilinearComponentParams,
) -> Result<f64, MatvarError> {
    if x.shape() != params.mean.shape() {
        return Err(MatvarError::Dimension(format!(
            "X {:?} vs M {:?}",
            x.shape(),
            params.mean.shape()
        )));
    }
    Ok(ComponentDensity::new(params)?.logpdf(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = randn(rng, n, n);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    fn random_component(rng: &mut ChaCha8Rng, r: usize, c: usize, s: usize, v: usize) -> BilinearComponentParams {
        BilinearComponentParams {
            mean: randn(rng, r, c),
            a: randn(rng, r, s),
            b: randn(rng, c, v),
            u: DVector::from_fn(r, |_, _| rng.random_range(0.2..2.0)),
            v: DVector::from_fn(c, |_, _| rng.random_range(0.2..2.0)),
        }
    }

    #[test]
    fn univariate_standard_normal_mode() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let p = MatNormParams { mean: DMatrix::zeros(1, 1), sigma: one.clone(), psi: one };
        let v = matnorm_logpdf(&DMatrix::zeros(1, 1), &p).unwrap();
        assert!((v - (1.0 / (2.0 * PI).sqrt()).ln()).abs() < 1e-15);
    }

    #[test]
    fn kronecker_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MatNormParams { mean: randn(&mut rng, 3, 4), sigma: random_spd(&mut rng, 3), psi: random_spd(&mut rng, 4) };
        let x = randn(&mut rng, 3, 4);
        let scaled = MatNormParams { mean: p.mean.clone(), sigma: &p.sigma * 3.0, psi: &p.psi / 3.0 };
        let a = matnorm_logpdf(&x, &p).unwrap();
        let b = matnorm_logpdf(&x, &scaled).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn transposition_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = MatNormParams { mean: randn(&mut rng, 3, 5), sigma: random_spd(&mut rng, 3), psi: random_spd(&mut rng, 5) };
        let x = randn(&mut rng, 3, 5);
        let t = MatNormParams { mean: p.mean.transpose(), sigma: p.psi.clone(), psi: p.sigma.clone() };
        let a = matnorm_logpdf(&x, &p).unwrap();
        let b = matnorm_logpdf(&x.transpose(), &t).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn rejects_non_spd_and_bad_shapes() {
        let p = MatNormParams {
            mean: DMatrix::zeros(2, 2),
            sigma: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
            psi: DMatrix::identity(2, 2),
        };
        assert_eq!(matnorm_logpdf(&DMatrix::zeros(2, 2), &p), Err(MatvarError::NotPositiveDefinite("row covariance")));
        assert!(matches!(matnorm_logpdf(&DMatrix::zeros(3, 2), &p), Err(MatvarError::Dimension(_))));
    }

    #[test]
    fn ill_conditioned_covariances_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1e4, 1.0, 1e-4]));
        let psi = DMatrix::from_diagonal(&DVector::from_vec(vec![1e-4, 1.0, 1.0, 1e4]));
        let p = MatNormParams { mean: DMatrix::zeros(3, 4), sigma, psi };
        let v = matnorm_logpdf(&randn(&mut rng, 3, 4), &p).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn factor_free_component_reduces_to_diagonal_matnorm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut comp = random_component(&mut rng, 4, 3, 2, 1);
        comp.a.fill(0.0);
        comp.b.fill(0.0);
        let x = randn(&mut rng, 4, 3);
        let dense = MatNormParams {
            mean: comp.mean.clone(),
            sigma: DMatrix::from_diagonal(&comp.u),
            psi: DMatrix::from_diagonal(&comp.v),
        };
        let a = mbi_component_logpdf(&x, &comp).unwrap();
        let b = matnorm_logpdf(&x, &dense).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn woodbury_matches_dense_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (r, c) in [(4, 3), (6, 5), (3, 7)] {
            let comp = random_component(&mut rng, r, c, r - 1, c - 1);
            let x = randn(&mut rng, r, c);
            let a = mbi_component_logpdf(&x, &comp).unwrap();
            let b = matnorm_logpdf(&x, &comp.to_matnorm()).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn mode_at_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let comp = random_component(&mut rng, 4, 4, 2, 2);
        let at_mean = mbi_component_logpdf(&comp.mean, &comp).unwrap();
        for _ in 0..50 {
            let x = &comp.mean + randn(&mut rng, 4, 4) * 0.1;
            assert!(mbi_component_logpdf(&x, &comp).unwrap() < at_mean);
        }
    }

    #[test]
    fn low_rank_inverse_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let comp = random_component(&mut rng, 6, 2, 3, 1);
        let lr = LowRankPlusDiag::new(&comp.u, &comp.a, "row").unwrap();
        let dense = comp.row_covariance();
        let prod = &dense * &lr.inverse;
        assert!((prod - DMatrix::identity(6, 6)).abs().max() < 1e-10);
        assert!((lr.logdet - dense.determinant().ln()).abs() < 1e-10);
    }
}
