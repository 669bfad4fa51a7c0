//! WebAssembly bindings behind `www/index.html`. Every function returns a JSON string.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use telemap_core::forcemap::{
    build_force_map, centroid, normal_scale_bandwidth, numeric_derivative, GridSpec, MapOptions, DEFAULT_BOUNDS_QUANTILE,
};
use telemap_core::ingest::{filter_by_activity, Activity};
use telemap_core::mbi::{adjusted_rand_index, classify, fit, MixtureSpec};
use telemap_core::pipeline::synth::{separated_components, ActivityProfile, SyntheticComponent};
use telemap_core::pipeline::{generate_synthetic, sample_mbi, Hazard, SyntheticCohortSpec};
use telemap_core::survival::{cox_fit, kaplan_meier, log_rank_test, CoxFormula, RiskSetOptions, SurvivalRecord};

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).unwrap_or_else(|e| error_json(&e.to_string()))
}

fn error_json(message: &str) -> String {
    serde_json::json!({ "error": message }).to_string()
}

#[derive(Serialize)]
struct MapView {
    rows: usize,
    cols: usize,
    f_range: (f64, f64),
    d_range: (f64, f64),
    /// Row-major weights; rows index force, columns the force derivative.
    weights: Vec<f64>,
    points: usize,
    centroid: (f64, f64),
}

/// Simulates one participant's moderate-activity bouts and returns their force map.
#[wasm_bindgen]
pub fn force_map(moderate_mean: f64, moderate_sd: f64, autocorrelation: f64, epochs: usize, grid: usize, seed: u64) -> String {
    let activity = ActivityProfile { moderate_mean, moderate_sd, autocorrelation, participant_sd: 0.0, ..ActivityProfile::default() };
    let spec = SyntheticCohortSpec {
        components: vec![SyntheticComponent { n: 1, activity, hazard: Hazard::Exponential { rate: 0.05 }, map: None }],
        epochs_per_participant: epochs,
        seed,
        ..SyntheticCohortSpec::default()
    };
    let result = (|| -> Result<MapView, String> {
        let cohort = generate_synthetic(&spec).map_err(|e| e.to_string())?;
        let series = cohort.participants[0].series.as_ref().ok_or("no epochs generated")?;
        let moderate = filter_by_activity(series, Activity::Moderate).map_err(|e| e.to_string())?;
        let points = numeric_derivative(&moderate).map_err(|e| e.to_string())?;
        let grid = GridSpec::from_pooled([&points], DEFAULT_BOUNDS_QUANTILE, grid, grid).map_err(|e| e.to_string())?;
        let h = normal_scale_bandwidth(&points).map_err(|e| e.to_string())?;
        let map = build_force_map("demo", &points, &grid, &h, &MapOptions::default()).map_err(|e| e.to_string())?;
        Ok(MapView {
            rows: grid.rows,
            cols: grid.cols,
            f_range: (grid.f_min, grid.f_max),
            d_range: (grid.d_min, grid.d_max),
            weights: map.weights.transpose().as_slice().to_vec(),
            points: points.len(),
            centroid: centroid(&map.weights, &grid),
        })
    })();
    result.map(|v| to_json(&v)).unwrap_or_else(|e| error_json(&e))
}

#[derive(Serialize)]
struct Curve {
    group: String,
    times: Vec<f64>,
    survival: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize)]
struct SurvivalView {
    curves: Vec<Curve>,
    log_rank: f64,
    p_value: f64,
    hazard_ratio: f64,
    ci: (f64, f64),
}

/// Two exponential groups with uniform censoring on `[0, horizon]`: KM curves, log-rank
/// and the Cox hazard ratio of `b` against `a`.
#[wasm_bindgen]
pub fn survival_curves(rate_a: f64, rate_b: f64, n_per_group: usize, horizon: f64, seed: u64) -> String {
    if !(rate_a > 0.0 && rate_b > 0.0 && horizon > 0.0) || n_per_group < 2 {
        return error_json("rates and horizon must be positive, with at least two per group");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(2 * n_per_group);
    for (group, rate) in [("a", rate_a), ("b", rate_b)] {
        for i in 0..n_per_group {
            let t = -(1.0 - rng.random::<f64>()).ln() / rate;
            let c = rng.random::<f64>() * horizon;
            records.push(SurvivalRecord::new(format!("{group}{i}"), t.min(c).max(1e-9), t <= c, group));
        }
    }
    let risk = RiskSetOptions::default();
    let result = (|| -> Result<SurvivalView, String> {
        let curves = kaplan_meier(&records, &risk).map_err(|e| e.to_string())?;
        let lr = log_rank_test(&records, &risk).map_err(|e| e.to_string())?;
        let cox = cox_fit(&records, &CoxFormula::group(Some("a"))).map_err(|e| e.to_string())?;
        let b = cox.coefficient("b").ok_or("missing coefficient")?;
        Ok(SurvivalView {
            curves: curves
                .iter()
                .map(|c| {
                    let band = c.confidence_band();
                    Curve {
                        group: c.group.clone(),
                        times: c.times.clone(),
                        survival: c.survival.clone(),
                        lower: band.iter().map(|b| b.0).collect(),
                        upper: band.iter().map(|b| b.1).collect(),
                    }
                })
                .collect(),
            log_rank: lr.statistic,
            p_value: lr.p_value,
            hazard_ratio: b.hazard_ratio,
            ci: (b.lower, b.upper),
        })
    })();
    result.map(|v| to_json(&v)).unwrap_or_else(|e| error_json(&e))
}

#[derive(Serialize)]
struct ClusterView {
    rows: usize,
    cols: usize,
    truth: Vec<usize>,
    labels: Vec<usize>,
    ari: f64,
    bic: f64,
    iterations: usize,
    converged: bool,
    loglik_history: Vec<f64>,
    /// Row-major fitted mean of each component.
    means: Vec<Vec<f64>>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Draws three well-separated matrix clusters and fits a three-component mixture.
#[wasm_bindgen]
pub fn cluster_demo(size: usize, n_per_cluster: usize, separation: f64, seed: u64) -> String {
    if size < 3 || n_per_cluster < 2 {
        return error_json("need size >= 3 and at least two matrices per cluster");
    }
    let comps = separated_components(size, size, 3, 1, 1, separation, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut data = Vec::new();
    let mut truth = Vec::new();
    for (k, comp) in comps.iter().enumerate() {
        data.extend(sample_mbi(comp, n_per_cluster, &mut rng));
        truth.extend(std::iter::repeat_n(k + 1, n_per_cluster));
    }
    let result = (|| -> Result<ClusterView, String> {
        let model = fit(&data, &MixtureSpec::new(3, 1, 1).with_seed(seed).with_max_iter(200)).map_err(|e| e.to_string())?;
        let labels = classify(&model, &data).map_err(|e| e.to_string())?;
        Ok(ClusterView {
            rows: size,
            cols: size,
            ari: adjusted_rand_index(&labels, &truth),
            truth,
            labels,
            bic: model.bic,
            iterations: model.iterations,
            converged: model.converged,
            loglik_history: model.loglik_history.clone(),
            means: model.components.iter().map(|c| row_major(&c.params.mean)).collect(),
        })
    })();
    result.map(|v| to_json(&v)).unwrap_or_else(|e| error_json(&e))
}
