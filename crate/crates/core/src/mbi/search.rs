//! BIC-driven search over (G, s, v) and initialization method.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{fit, FitError, InitMethod, MbiModel, MixtureSpec, DEFAULT_AITKEN_EPSILON, DEFAULT_MAX_ITER};
use crate::{par_map, splitmix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub groups: Vec<usize>,
    pub col_factors: Vec<usize>,
    pub row_factors: Vec<usize>,
    pub inits: Vec<InitMethod>,
}

impl SearchGrid {
    pub fn specs(&self, options: &SearchOptions) -> Vec<MixtureSpec> {
        let mut out = Vec::new();
        for &g in &self.groups {
            for &s in &self.col_factors {
                for &v in &self.row_factors {
                    for &init in &self.inits {
                        out.push(MixtureSpec {
                            groups: g,
                            col_factors: s,
                            row_factors: v,
                            init,
                            seed: cell_seed(options.seed, g, s, v, init),
                            max_iter: options.max_iter,
                            aitken_epsilon: options.aitken_epsilon,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub seed: u64,
    pub max_iter: usize,
    pub aitken_epsilon: f64,
    pub top_k: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { seed: 0, max_iter: DEFAULT_MAX_ITER, aitken_epsilon: DEFAULT_AITKEN_EPSILON, top_k: 5 }
    }
}

/// Seed for one search cell, independent of which other cells are searched.
pub fn cell_seed(base: u64, g: usize, s: usize, v: usize, init: InitMethod) -> u64 {
    let tag = (g as u64) << 40 | (s as u64) << 24 | (v as u64) << 8 | init as u64;
    splitmix(splitmix(base) ^ tag)
}

/// Outcome of one (spec, init) fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchAttempt {
    pub spec: MixtureSpec,
    pub bic: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub error: Option<String>,
}

/// The better-BIC fit of a (G, s, v) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchEntry {
    pub spec: MixtureSpec,
    pub bic: f64,
    pub n_params: usize,
    pub model: MbiModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// Successful cells, best BIC first (ties: fewer parameters first).
    pub ranked: Vec<SearchEntry>,
    pub attempts: Vec<SearchAttempt>,
    pub top_k: usize,
}

impl SearchResult {
    pub fn best(&self) -> &SearchEntry {
        &self.ranked[0]
    }

    pub fn top(&self) -> &[SearchEntry] {
        &self.ranked[..self.top_k.min(self.ranked.len())]
    }

    pub fn failures(&self) -> impl Iterator<Item = &SearchAttempt> {
        self.attempts.iter().filter(|a| a.error.is_some())
    }

    /// CSV with one row per ranked cell.
    ///
    /// `q` and `s_row` repeat s and v under the alternative naming used in published
    /// search tables.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,bic,G,s,v,q,s_row,init,converged,iterations,loglik,n_params\n");
        for (i, e) in self.ranked.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                i + 1,
                e.bic,
                e.spec.groups,
                e.spec.col_factors,
                e.spec.row_factors,
                e.spec.col_factors,
                e.spec.row_factors,
                e.spec.init.as_str(),
                e.model.converged,
                e.model.iterations,
                e.model.loglik,
                e.n_params
            ));
        }
        out
    }
}

/// Fits every grid cell with every init method and ranks cells by BIC.
///
/// Cells run concurrently; results do not depend on scheduling.
pub fn model_search(
    data: &[DMatrix<f64>],
    grid: &SearchGrid,
    options: &SearchOptions,
) -> Result<SearchResult, FitError> {
    let specs = grid.specs(options);
    if specs.is_empty() {
        return Err(FitError::InvalidSpec("search grid is empty".into()));
    }
    let fits: Vec<Result<MbiModel, FitError>> = par_map(&specs, |_, spec| fit(data, spec));

    let mut attempts = Vec::with_capacity(specs.len());
    let mut cells: Vec<SearchEntry> = Vec::new();
    for (spec, result) in specs.iter().zip(fits) {
        match result {
            Ok(model) => {
                attempts.push(SearchAttempt {
                    spec: *spec,
                    bic: Some(model.bic),
                    converged: model.converged,
                    iterations: model.iterations,
                    error: None,
                });
                let same_cell = |e: &SearchEntry| {
                    (e.spec.groups, e.spec.col_factors, e.spec.row_factors)
                        == (spec.groups, spec.col_factors, spec.row_factors)
                };
                let entry = SearchEntry { spec: *spec, bic: model.bic, n_params: model.n_params, model };
                match cells.iter_mut().find(|e| same_cell(e)) {
                    Some(existing) if entry.bic > existing.bic => *existing = entry,
                    Some(_) => {}
                    None => cells.push(entry),
                }
            }
            Err(e) => attempts.push(SearchAttempt {
                spec: *spec,
                bic: None,
                converged: false,
                iterations: 0,
                error: Some(e.to_string()),
            }),
        }
    }
    if cells.is_empty() {
        return Err(FitError::SearchFailed(
            attempts.iter().filter_map(|a| a.error.clone()).collect(),
        ));
    }
    cells.sort_by(|a, b| b.bic.total_cmp(&a.bic).then(a.n_params.cmp(&b.n_params)));
    Ok(SearchResult { ranked: cells, attempts, top_k: options.top_k })
}
