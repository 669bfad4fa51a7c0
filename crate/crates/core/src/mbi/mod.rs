//! Mixtures of matrix-variate bilinear factor analyzers (MBI), fitted by AECM.
//!
//! Component `g` models an r x c observation as
//!
//! ```text
//! X = M_g + A_g W B_g' + A_g E^B + E^A B_g' + E
//! ```
//!
//! so that marginally `X ~ N_{r,c}(M_g, U_g + A_g A_g', V_g + B_g B_g')`, with `A_g`
//! (r x s) column-factor loadings, `B_g` (c x v) row-factor loadings and diagonal
//! noise `U_g`, `V_g`.
//!
//! Each AECM cycle runs three conditional-maximization stages, each preceded by an
//! E-step:
//!
//! 1. mixing proportions and means, complete data = (X, z);
//! 2. `A_g`, `U_g` with the s x c latent `Y^B = W B' + E^B` added to the complete
//!    data, holding `Psi_g = V_g + B_g B_g'` fixed;
//! 3. `B_g`, `V_g`, the transposed mirror of stage 2 with `Phi_g = U_g + A_g A_g'` fixed.
//!
//! Stages 2 and 3 reduce to the factor-analysis EM update applied to the whitened
//! scatter `S = sum_i z_ig (X_i - M_g) Psi^{-1} (X_i - M_g)' / (N_g c)`:
//!
//! ```text
//! beta  = A'(A A' + U)^{-1}
//! Theta = I - beta A + beta S beta'
//! A_new = S beta' Theta^{-1}
//! U_new = diag(S - A_new beta S)
//! ```

mod kmeans;
mod search;

pub use kmeans::{kmeans, KMeansResult};
pub use search::{model_search, SearchAttempt, SearchEntry, SearchGrid, SearchOptions, SearchResult};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matvar::{cholesky, BilinearComponentParams, ComponentDensity, LowRankPlusDiag, MatvarError};
use crate::par_map;

/// Floor on the diagonals of U and V.
pub const VARIANCE_FLOOR: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 400;
pub const DEFAULT_AITKEN_EPSILON: f64 = 1e-4;
/// A component whose effective count falls below this fraction of N is empty.
pub const MIN_COMPONENT_FRACTION: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("invalid mixture spec: {0}")]
    InvalidSpec(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("membership initialization failed: {0}")]
    InitFailed(String),
    #[error("component {component} emptied (N_g = {count:e}){}", at_iteration(*.iteration))]
    EmptyComponent {
        component: usize,
        count: f64,
        iteration: Option<usize>,
    },
    #[error("numerical failure{}: {detail}{}", at_observation(*.observation), at_iteration(*.iteration))]
    NumericalFailure {
        observation: Option<usize>,
        detail: String,
        iteration: Option<usize>,
    },
    #[error("every model in the search failed: {0:?}")]
    SearchFailed(Vec<String>),
}

fn at_iteration(it: Option<usize>) -> String {
    it.map(|i| format!(" at iteration {i}")).unwrap_or_default()
}

fn at_observation(obs: Option<usize>) -> String {
    obs.map(|i| format!(" for observation {i}")).unwrap_or_default()
}

impl FitError {
    fn at(self, iter: usize) -> Self {
        match self {
            FitError::EmptyComponent { component, count, .. } => {
                FitError::EmptyComponent { component, count, iteration: Some(iter) }
            }
            FitError::NumericalFailure { observation, detail, .. } => {
                FitError::NumericalFailure { observation, detail, iteration: Some(iter) }
            }
            other => other,
        }
    }
}

impl From<MatvarError> for FitError {
    fn from(e: MatvarError) -> Self {
        FitError::NumericalFailure { observation: None, detail: e.to_string(), iteration: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    Kmeans,
    RandomSoft,
}

impl InitMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            InitMethod::Kmeans => "kmeans",
            InitMethod::RandomSoft => "random_soft",
        }
    }
}

impl std::str::FromStr for InitMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "kmeans" | "k_means" => Ok(InitMethod::Kmeans),
            "random_soft" | "soft" => Ok(InitMethod::RandomSoft),
            other => Err(format!("unknown init method {other:?}")),
        }
    }
}

/// Shape of one mixture fit.
///
/// `col_factors` is s (columns of A, r x s), `row_factors` is v (columns of B, c x v).
/// Search reports also print them under the names q and s respectively.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub groups: usize,
    pub col_factors: usize,
    pub row_factors: usize,
    pub init: InitMethod,
    pub seed: u64,
    pub max_iter: usize,
    pub aitken_epsilon: f64,
}

impl MixtureSpec {
    pub fn new(groups: usize, col_factors: usize, row_factors: usize) -> Self {
        Self {
            groups,
            col_factors,
            row_factors,
            init: InitMethod::Kmeans,
            seed: 0,
            max_iter: DEFAULT_MAX_ITER,
            aitken_epsilon: DEFAULT_AITKEN_EPSILON,
        }
    }

    pub fn with_init(mut self, init: InitMethod) -> Self {
        self.init = init;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_epsilon(mut self, eps: f64) -> Self {
        self.aitken_epsilon = eps;
        self
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<(), FitError> {
        if self.groups == 0 {
            return Err(FitError::InvalidSpec("need at least one component".into()));
        }
        if self.col_factors == 0 || self.col_factors >= rows {
            return Err(FitError::InvalidSpec(format!(
                "column factors s = {} must satisfy 1 <= s < r = {rows}",
                self.col_factors
            )));
        }
        if self.row_factors == 0 || self.row_factors >= cols {
            return Err(FitError::InvalidSpec(format!(
                "row factors v = {} must satisfy 1 <= v < c = {cols}",
                self.row_factors
            )));
        }
        if !(self.aitken_epsilon > 0.0) {
            return Err(FitError::InvalidSpec("aitken epsilon must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(FitError::InvalidSpec("max_iter must be positive".into()));
        }
        Ok(())
    }

    /// Free-parameter count `(G-1) + G(rc + rs + cv + r + c)`.
    pub fn n_params(&self, rows: usize, cols: usize) -> usize {
        let (g, r, c, s, v) = (self.groups, rows, cols, self.col_factors, self.row_factors);
        (g - 1) + g * (r * c + r * s + c * v + r + c)
    }
}

/// N x G posterior membership probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Responsibilities {
    z: DMatrix<f64>,
}

impl Responsibilities {
    pub fn new(z: DMatrix<f64>) -> Result<Self, FitError> {
        for (i, row) in z.row_iter().enumerate() {
            let sum: f64 = row.sum();
            if row.iter().any(|v| !(*v >= 0.0 && *v <= 1.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(FitError::InvalidData(format!("responsibility row {i} is not a distribution")));
            }
        }
        Ok(Self { z })
    }

    /// One-hot memberships from 0-based labels.
    pub fn from_labels(labels: &[usize], groups: usize) -> Self {
        let mut z = DMatrix::zeros(labels.len(), groups);
        for (i, &l) in labels.iter().enumerate() {
            z[(i, l)] = 1.0;
        }
        Self { z }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn n_obs(&self) -> usize {
        self.z.nrows()
    }

    pub fn groups(&self) -> usize {
        self.z.ncols()
    }

    /// Effective component sizes `N_g`.
    pub fn counts(&self) -> Vec<f64> {
        self.z.column_iter().map(|c| c.sum()).collect()
    }

    /// 1-based maximum a posteriori labels; ties go to the lowest index.
    pub fn map_labels(&self) -> Vec<usize> {
        self.z
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for g in 1..row.len() {
                    if row[g] > row[best] {
                        best = g;
                    }
                }
                best + 1
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbiComponent {
    pub weight: f64,
    pub params: BilinearComponentParams,
}

/// A fitted mixture together with its fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbiModel {
    pub spec: MixtureSpec,
    pub rows: usize,
    pub cols: usize,
    pub n_obs: usize,
    pub components: Vec<MbiComponent>,
    /// Observed log-likelihood at the start of each AECM cycle (plus the final state).
    pub loglik_history: Vec<f64>,
    /// Log-likelihood after every E-step, three per cycle.
    pub substep_loglik: Vec<f64>,
    pub loglik: f64,
    pub bic: f64,
    pub n_params: usize,
    pub converged: bool,
    pub iterations: usize,
    pub effective_counts: Vec<f64>,
}

impl MbiModel {
    pub fn groups(&self) -> usize {
        self.components.len()
    }

    /// Log of the mixture density at `x`.
    pub fn mixture_logpdf(&self, x: &DMatrix<f64>) -> Result<f64, FitError> {
        let dens = densities(&self.components)?;
        let logs: Vec<f64> = self
            .components
            .iter()
            .zip(&dens)
            .map(|(c, d)| c.weight.ln() + d.logpdf(x))
            .collect();
        Ok(log_sum_exp(&logs))
    }

    /// Trace of `U_g`, recorded so that the Kronecker scale split is reproducible.
    pub fn row_noise_traces(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.params.u.sum()).collect()
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_data(data: &[DMatrix<f64>]) -> Result<(usize, usize), FitError> {
    let first = data.first().ok_or_else(|| FitError::InvalidData("no observations".into()))?;
    let shape = first.shape();
    for (i, x) in data.iter().enumerate() {
        if x.shape() != shape {
            return Err(FitError::InvalidData(format!(
                "observation {i} is {:?}, expected {:?}",
                x.shape(),
                shape
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FitError::InvalidData(format!("observation {i} has non-finite entries")));
        }
    }
    Ok(shape)
}

fn densities(components: &[MbiComponent]) -> Result<Vec<ComponentDensity>, FitError> {
    components
        .iter()
        .enumerate()
        .map(|(g, c)| {
            ComponentDensity::new(&c.params).map_err(|e| FitError::NumericalFailure {
                observation: None,
                detail: format!("component {}: {e}", g + 1),
                iteration: None,
            })
        })
        .collect()
}

/// Initial memberships: hard k-means labels or flat-Dirichlet soft rows.
pub fn init_memberships(data: &[DMatrix<f64>], spec: &MixtureSpec) -> Result<Responsibilities, FitError> {
    check_data(data)?;
    let n = data.len();
    let g = spec.groups;
    if g == 0 {
        return Err(FitError::InvalidSpec("need at least one component".into()));
    }
    if n < g {
        return Err(FitError::InvalidData(format!("{n} observations for {g} components")));
    }
    if g == 1 {
        return Ok(Responsibilities { z: DMatrix::from_element(n, 1, 1.0) });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.init {
        InitMethod::Kmeans => {
            let points: Vec<&[f64]> = data.iter().map(|x| x.as_slice()).collect();
            let km = kmeans(&points, g, 10, &mut rng)?;
            Ok(Responsibilities::from_labels(&km.labels, g))
        }
        InitMethod::RandomSoft => {
            let mut z = DMatrix::zeros(n, g);
            for i in 0..n {
                // flat Dirichlet = normalized unit exponentials
                let draws: Vec<f64> = (0..g).map(|_| Exp1.sample(&mut rng)).collect::<Vec<f64>>();
                let total: f64 = draws.iter().sum();
                for (k, d) in draws.iter().enumerate() {
                    z[(i, k)] = d / total;
                }
            }
            Ok(Responsibilities { z })
        }
    }
}

/// Posterior memberships by log-sum-exp and the observed log-likelihood.
pub fn e_step(data: &[DMatrix<f64>], components: &[MbiComponent]) -> Result<(Responsibilities, f64), FitError> {
    let dens = densities(components)?;
    let log_weights: Vec<f64> = components.iter().map(|c| c.weight.ln()).collect();
    let rows: Vec<Result<(Vec<f64>, f64), FitError>> = par_map(data, |i, x| {
        let logs: Vec<f64> = dens.iter().zip(&log_weights).map(|(d, lw)| lw + d.logpdf(x)).collect();
        let lse = log_sum_exp(&logs);
        if !lse.is_finite() || logs.iter().any(|l| l.is_nan()) {
            return Err(FitError::NumericalFailure {
                observation: Some(i),
                detail: "non-finite log-density".into(),
                iteration: None,
            });
        }
        Ok((logs.iter().map(|l| (l - lse).exp()).collect(), lse))
    });
    let g = components.len();
    let mut z = DMatrix::zeros(data.len(), g);
    let mut loglik = 0.0;
    for (i, row) in rows.into_iter().enumerate() {
        let (probs, lse) = row?;
        let total: f64 = probs.iter().sum();
        for (k, p) in probs.iter().enumerate() {
            z[(i, k)] = p / total;
        }
        loglik += lse;
    }
    Ok((Responsibilities { z }, loglik))
}

fn check_counts(counts: &[f64], n: usize) -> Result<(), FitError> {
    let min = MIN_COMPONENT_FRACTION * n as f64;
    match counts.iter().position(|&c| !(c >= min) || c == 0.0) {
        Some(g) => Err(FitError::EmptyComponent { component: g + 1, count: counts[g], iteration: None }),
        None => Ok(()),
    }
}

/// Stage 1: `pi_g = N_g / N` and `M_g = sum_i z_ig X_i / N_g`.
pub fn m_step_stage1(
    data: &[DMatrix<f64>],
    z: &Responsibilities,
) -> Result<(Vec<f64>, Vec<DMatrix<f64>>), FitError> {
    let (r, c) = check_data(data)?;
    if z.n_obs() != data.len() {
        return Err(FitError::InvalidData("responsibilities and data disagree on N".into()));
    }
    let counts = z.counts();
    check_counts(&counts, data.len())?;
    let n = data.len() as f64;
    let weights = counts.iter().map(|c| c / n).collect();
    let means = (0..z.groups())
        .map(|g| {
            let mut m = DMatrix::zeros(r, c);
            for (i, x) in data.iter().enumerate() {
                let w = z.z[(i, g)];
                if w != 0.0 {
                    m += x * w;
                }
            }
            m / counts[g]
        })
        .collect();
    Ok((weights, means))
}

/// `sum_i z_ig D_i K D_i'` (or `D_i' K D_i` when `transpose`) with `D_i = X_i - mean`.
fn weighted_scatter(
    data: &[DMatrix<f64>],
    weights: &[f64],
    mean: &DMatrix<f64>,
    metric: &DMatrix<f64>,
    transpose: bool,
) -> DMatrix<f64> {
    let dim = if transpose { mean.ncols() } else { mean.nrows() };
    let parts = par_map(data, |i, x| {
        let w = weights[i];
        if w == 0.0 {
            return None;
        }
        let d = x - mean;
        let s = if transpose {
            d.transpose() * metric * &d
        } else {
            &d * metric * d.transpose()
        };
        Some(s * w)
    });
    let mut total = DMatrix::zeros(dim, dim);
    for p in parts.into_iter().flatten() {
        total += p;
    }
    (&total + total.transpose()) * 0.5
}

/// Factor-analysis EM update of `(loadings, diag)` given a normalized scatter.
fn factor_update(
    scatter: &DMatrix<f64>,
    loadings: &DMatrix<f64>,
    diag: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>), FitError> {
    let k = loadings.ncols();
    // beta = (I + L'D^{-1}L)^{-1} L'D^{-1}
    let mut dl = loadings.clone();
    for (i, mut row) in dl.row_iter_mut().enumerate() {
        row /= diag[i];
    }
    let inner = DMatrix::<f64>::identity(k, k) + loadings.transpose() * &dl;
    let inner_ch = cholesky(&inner, "I + L'D^{-1}L")?;
    let beta = inner_ch.solve(&dl.transpose());
    let beta_s = &beta * scatter;
    let theta = DMatrix::<f64>::identity(k, k) - &beta * loadings + &beta_s * beta.transpose();
    let theta = (&theta + theta.transpose()) * 0.5;
    let theta_ch = cholesky(&theta, "Theta")?;
    // L_new = S beta' Theta^{-1}
    let new_loadings = theta_ch.solve(&beta_s).transpose();
    let mut new_diag = DVector::zeros(diag.len());
    for j in 0..diag.len() {
        let lb = new_loadings.row(j).dot(&beta_s.column(j).transpose());
        new_diag[j] = (scatter[(j, j)] - lb).max(VARIANCE_FLOOR);
    }
    if new_loadings.iter().any(|v| !v.is_finite()) {
        return Err(FitError::NumericalFailure {
            observation: None,
            detail: "non-finite loadings".into(),
            iteration: None,
        });
    }
    Ok((new_loadings, new_diag))
}

/// Stage 2: column-factor loadings `A_g` and row noise `U_g`, holding `V_g + B_g B_g'`.
pub fn m_step_stage2(
    data: &[DMatrix<f64>],
    z: &Responsibilities,
    components: &[MbiComponent],
) -> Result<Vec<(DMatrix<f64>, DVector<f64>)>, FitError> {
    let counts = z.counts();
    check_counts(&counts, data.len())?;
    components
        .iter()
        .enumerate()
        .map(|(g, comp)| {
            let p = &comp.params;
            let psi_inv = LowRankPlusDiag::new(&p.v, &p.b, "V + BB'")?.inverse;
            let w: Vec<f64> = z.z.column(g).iter().copied().collect();
            let scatter = weighted_scatter(data, &w, &p.mean, &psi_inv, false) / (counts[g] * p.cols() as f64);
            factor_update(&scatter, &p.a, &p.u)
        })
        .collect()
}

/// Stage 3: row-factor loadings `B_g` and column noise `V_g`, holding `U_g + A_g A_g'`.
pub fn m_step_stage3(
    data: &[DMatrix<f64>],
    z: &Responsibilities,
    components: &[MbiComponent],
) -> Result<Vec<(DMatrix<f64>, DVector<f64>)>, FitError> {
    let counts = z.counts();
    check_counts(&counts, data.len())?;
    components
        .iter()
        .enumerate()
        .map(|(g, comp)| {
            let p = &comp.params;
            let phi_inv = LowRankPlusDiag::new(&p.u, &p.a, "U + AA'")?.inverse;
            let w: Vec<f64> = z.z.column(g).iter().copied().collect();
            let scatter = weighted_scatter(data, &w, &p.mean, &phi_inv, true) / (counts[g] * p.rows() as f64);
            factor_update(&scatter, &p.b, &p.v)
        })
        .collect()
}

/// Probabilistic-PCA style start: leading eigenvectors scaled by the excess over
/// the mean trailing eigenvalue.
fn ppca_start(scatter: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, DVector<f64>) {
    let n = scatter.nrows();
    let eig = SymmetricEigen::new(scatter.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let tail = order[k..].iter().map(|&i| eig.eigenvalues[i].max(0.0)).sum::<f64>() / (n - k) as f64;
    let mut loadings = DMatrix::zeros(n, k);
    for (col, &i) in order[..k].iter().enumerate() {
        let scale = (eig.eigenvalues[i] - tail).max(0.0).sqrt();
        let mut v = eig.eigenvectors.column(i).into_owned();
        // deterministic sign: largest-magnitude entry positive
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        loadings.set_column(col, &(v * scale));
    }
    let aat = &loadings * loadings.transpose();
    let diag = DVector::from_fn(n, |j, _| (scatter[(j, j)] - aat[(j, j)]).max(VARIANCE_FLOOR));
    (loadings, diag)
}

fn initial_components(
    data: &[DMatrix<f64>],
    z: &Responsibilities,
    spec: &MixtureSpec,
) -> Result<Vec<MbiComponent>, FitError> {
    let (weights, means) = m_step_stage1(data, z)?;
    let counts = z.counts();
    let (r, c) = means[0].shape();
    let mut comps = Vec::with_capacity(weights.len());
    for (g, (weight, mean)) in weights.into_iter().zip(means).enumerate() {
        let w: Vec<f64> = z.z.column(g).iter().copied().collect();
        let row_scatter = weighted_scatter(data, &w, &mean, &DMatrix::identity(c, c), false) / (counts[g] * c as f64);
        let (a, u) = ppca_start(&row_scatter, spec.col_factors);
        let phi_inv = LowRankPlusDiag::new(&u, &a, "U + AA'")?.inverse;
        let col_scatter = weighted_scatter(data, &w, &mean, &phi_inv, true) / (counts[g] * r as f64);
        let (b, v) = ppca_start(&col_scatter, spec.row_factors);
        comps.push(MbiComponent { weight, params: BilinearComponentParams { mean, a, b, u, v } });
    }
    Ok(comps)
}

/// Aitken acceleration stopping rule on the last three log-likelihoods.
///
/// With `a = (l2 - l1) / (l1 - l0)` and `l_inf = l1 + (l2 - l1) / (1 - a)`, stops when
/// `l_inf - l1` lies in `(0, eps)`. A non-increasing step `l1 <= l0` counts as
/// converged once `|l2 - l1| < eps / 100`; `a >= 1` never converges.
pub fn aitken_converged(history: &[f64], eps: f64) -> bool {
    let n = history.len();
    if n < 3 {
        return false;
    }
    let (l0, l1, l2) = (history[n - 3], history[n - 2], history[n - 1]);
    let prev_step = l1 - l0;
    if !(prev_step > 0.0) {
        return (l2 - l1).abs() < eps * 1e-2;
    }
    let a = (l2 - l1) / prev_step;
    if a >= 1.0 {
        return false;
    }
    let gap = (l2 - l1) / (1.0 - a);
    gap > 0.0 && gap < eps
}

/// Positive-scale BIC, `2 l - rho log N` (larger is better).
pub fn bic(loglik: f64, n_params: usize, n_obs: f64) -> f64 {
    2.0 * loglik - n_params as f64 * n_obs.ln()
}

/// Fits a mixture from the memberships produced by `spec.init`.
pub fn fit(data: &[DMatrix<f64>], spec: &MixtureSpec) -> Result<MbiModel, FitError> {
    let (r, c) = check_data(data)?;
    spec.validate(r, c)?;
    let z0 = init_memberships(data, spec)?;
    fit_from_memberships(data, spec, &z0)
}

/// Runs AECM from the given starting memberships.
pub fn fit_from_memberships(
    data: &[DMatrix<f64>],
    spec: &MixtureSpec,
    start: &Responsibilities,
) -> Result<MbiModel, FitError> {
    let (r, c) = check_data(data)?;
    spec.validate(r, c)?;
    if data.len() < spec.groups {
        return Err(FitError::InvalidData(format!("{} observations for {} components", data.len(), spec.groups)));
    }
    if start.groups() != spec.groups || start.n_obs() != data.len() {
        return Err(FitError::InvalidData("starting memberships have the wrong shape".into()));
    }
    let mut comps = initial_components(data, start, spec).map_err(|e| e.at(0))?;
    let mut history = Vec::new();
    let mut substeps = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut last_z;
    loop {
        let it = iterations;
        let (z, l) = e_step(data, &comps).map_err(|e| e.at(it))?;
        history.push(l);
        substeps.push(l);
        last_z = z;
        if aitken_converged(&history, spec.aitken_epsilon) {
            converged = true;
            break;
        }
        if iterations == spec.max_iter {
            break;
        }
        iterations += 1;

        let (weights, means) = m_step_stage1(data, &last_z).map_err(|e| e.at(it))?;
        for (comp, (w, m)) in comps.iter_mut().zip(weights.into_iter().zip(means)) {
            comp.weight = w;
            comp.params.mean = m;
        }

        let (z, l) = e_step(data, &comps).map_err(|e| e.at(it))?;
        substeps.push(l);
        let updates = m_step_stage2(data, &z, &comps).map_err(|e| e.at(it))?;
        for (comp, (a, u)) in comps.iter_mut().zip(updates) {
            comp.params.a = a;
            comp.params.u = u;
        }

        let (z, l) = e_step(data, &comps).map_err(|e| e.at(it))?;
        substeps.push(l);
        let updates = m_step_stage3(data, &z, &comps).map_err(|e| e.at(it))?;
        for (comp, (b, v)) in comps.iter_mut().zip(updates) {
            comp.params.b = b;
            comp.params.v = v;
        }
    }
    let loglik = *history.last().expect("at least one e-step");
    let n_params = spec.n_params(r, c);
    Ok(MbiModel {
        spec: *spec,
        rows: r,
        cols: c,
        n_obs: data.len(),
        components: comps,
        loglik,
        bic: bic(loglik, n_params, data.len() as f64),
        n_params,
        converged,
        iterations,
        effective_counts: last_z.counts(),
        loglik_history: history,
        substep_loglik: substeps,
    })
}

/// MAP component labels in `1..=G`.
pub fn classify(model: &MbiModel, data: &[DMatrix<f64>]) -> Result<Vec<usize>, FitError> {
    let (r, c) = check_data(data)?;
    if (r, c) != (model.rows, model.cols) {
        return Err(FitError::InvalidData(format!(
            "observations are {r}x{c}, model expects {}x{}",
            model.rows, model.cols
        )));
    }
    Ok(e_step(data, &model.components)?.0.map_labels())
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    use std::collections::HashMap;
    let mut table: HashMap<(usize, usize), f64> = HashMap::new();
    let mut rows: HashMap<usize, f64> = HashMap::new();
    let mut cols: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let choose2 = |n: f64| n * (n - 1.0) / 2.0;
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sum_a: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sum_b: f64 = cols.values().map(|&n| choose2(n)).sum();
    let total = choose2(a.len() as f64);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests;
