//! Force maps: standardized probability-weight matrices built from a participant's
//! (force, force-derivative) cloud by bivariate Gaussian kernel density estimation.

use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::EpochSeries;

pub const DEFAULT_GRID_SIZE: usize = 25;
/// Lower bound on every normalized cell weight.
pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-10;
pub const DEFAULT_MIN_CAPTURE: f64 = 0.95;
pub const DEFAULT_BOUNDS_QUANTILE: f64 = 0.995;
/// Relative ridge added to a singular sample covariance.
pub const COVARIANCE_RIDGE: f64 = 1e-8;

// Kernel terms beyond this squared Mahalanobis distance are below 1e-35 of the peak.
const KERNEL_CUTOFF: f64 = 160.0;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("series has no neighbouring epoch pairs")]
    InsufficientData,
    #[error("sample covariance is singular even after regularization")]
    DegenerateSample,
    #[error("smoothing matrix is not symmetric positive-definite")]
    NotPositiveDefinite,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("kernel mass captured by the grid is zero")]
    EmptyGrid,
    #[error("weight {value} outside (0, 1) at ({row}, {col})")]
    Domain { row: usize, col: usize, value: f64 },
    #[error("malformed force map data: {0}")]
    Malformed(String),
}

/// The (f, f') cloud of one participant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BivariatePoints {
    points: Vec<[f64; 2]>,
}

impl BivariatePoints {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        Self { points }
    }

    pub fn as_slice(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Unbiased (divisor T-1) sample covariance.
    pub fn sample_covariance(&self) -> Matrix2<f64> {
        let n = self.points.len() as f64;
        let mean = self
            .points
            .iter()
            .fold(Vector2::zeros(), |acc, p| acc + Vector2::new(p[0], p[1]))
            / n;
        let mut cov = Matrix2::zeros();
        for p in &self.points {
            let d = Vector2::new(p[0], p[1]) - mean;
            cov += d * d.transpose();
        }
        cov / (n - 1.0)
    }
}

/// Emits `(f_t, (f_t - f_{t-1}) / dt)` for every neighbouring pair inside a segment.
pub fn numeric_derivative(series: &EpochSeries) -> Result<BivariatePoints, FeatureError> {
    let dt = series.epoch_length;
    let points: Vec<[f64; 2]> = series
        .segment_slices()
        .flat_map(|seg| seg.windows(2).map(move |w| [w[1].force, (w[1].force - w[0].force) / dt]))
        .collect();
    if points.is_empty() {
        return Err(FeatureError::InsufficientData);
    }
    Ok(BivariatePoints::new(points))
}

/// Rectangle `[f_min, f_max] x [d_min, d_max]` cut into `rows x cols` equal cells.
///
/// Rows index force, columns index the force derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub f_min: f64,
    pub f_max: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(
        f_range: (f64, f64),
        d_range: (f64, f64),
        rows: usize,
        cols: usize,
    ) -> Result<Self, FeatureError> {
        let grid = Self {
            f_min: f_range.0,
            f_max: f_range.1,
            d_min: d_range.0,
            d_max: d_range.1,
            rows,
            cols,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let finite = [self.f_min, self.f_max, self.d_min, self.d_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.f_min >= self.f_max || self.d_min >= self.d_max {
            return Err(FeatureError::InvalidGrid(format!(
                "bounds [{}, {}] x [{}, {}]",
                self.f_min, self.f_max, self.d_min, self.d_max
            )));
        }
        if self.rows < 2 || self.cols < 2 {
            return Err(FeatureError::InvalidGrid(format!(
                "need at least 2x2 cells, got {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn cell_width(&self) -> (f64, f64) {
        (
            (self.f_max - self.f_min) / self.rows as f64,
            (self.d_max - self.d_min) / self.cols as f64,
        )
    }

    pub fn cell_area(&self) -> f64 {
        let (wf, wd) = self.cell_width();
        wf * wd
    }

    /// Lower-left corner of cell `(row, col)`.
    pub fn cell_origin(&self, row: usize, col: usize) -> (f64, f64) {
        let (wf, wd) = self.cell_width();
        (self.f_min + row as f64 * wf, self.d_min + col as f64 * wd)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let (wf, wd) = self.cell_width();
        let (f0, d0) = self.cell_origin(row, col);
        (f0 + 0.5 * wf, d0 + 0.5 * wd)
    }

    /// Shared bounds from pooled points: force in `[0, q-quantile of f]`, derivative
    /// symmetric at the `q`-quantile of `|f'|`.
    pub fn from_pooled<'a, I>(
        clouds: I,
        quantile: f64,
        rows: usize,
        cols: usize,
    ) -> Result<Self, FeatureError>
    where
        I: IntoIterator<Item = &'a BivariatePoints>,
    {
        if !(quantile > 0.0 && quantile <= 1.0) {
            return Err(FeatureError::InvalidGrid(format!("quantile {quantile} outside (0, 1]")));
        }
        let mut forces = Vec::new();
        let mut slopes = Vec::new();
        for cloud in clouds {
            for p in cloud.as_slice() {
                forces.push(p[0]);
                slopes.push(p[1].abs());
            }
        }
        if forces.is_empty() {
            return Err(FeatureError::InsufficientData);
        }
        let f_hi = quantile_of(&mut forces, quantile);
        let d_hi = quantile_of(&mut slopes, quantile);
        Self::new((0.0, f_hi), (-d_hi, d_hi), rows, cols)
    }
}

/// Linear-interpolation quantile (type 7).
fn quantile_of(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (pos - lo as f64) * (values[hi] - values[lo])
}

/// KDE bandwidth matrix `H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingMatrix(Matrix2<f64>);

impl SmoothingMatrix {
    pub fn new(h: Matrix2<f64>) -> Result<Self, FeatureError> {
        let symmetric = (h[(0, 1)] - h[(1, 0)]).abs() <= 1e-12 * (h[(0, 1)].abs() + 1.0);
        if !symmetric || !(h[(0, 0)] > 0.0) || !(h.determinant() > 0.0) {
            return Err(FeatureError::NotPositiveDefinite);
        }
        Ok(Self(h))
    }

    pub fn matrix(&self) -> &Matrix2<f64> {
        &self.0
    }
}

/// Normal-scale selector `H = T^(-1/3) * Sigma_hat`.
///
/// A singular covariance gets a ridge of `1e-8 * trace / 2` on the diagonal first.
pub fn normal_scale_bandwidth(points: &BivariatePoints) -> Result<SmoothingMatrix, FeatureError> {
    let t = points.len();
    if t < 2 {
        return Err(FeatureError::InsufficientData);
    }
    let mut cov = points.sample_covariance();
    let positive = |m: &Matrix2<f64>| m[(0, 0)] > 0.0 && m.determinant() > 1e-14 * m.trace().powi(2);
    if !positive(&cov) {
        let ridge = COVARIANCE_RIDGE * cov.trace() / 2.0;
        cov += Matrix2::identity() * ridge;
        if !(ridge > 0.0) || !positive(&cov) {
            return Err(FeatureError::DegenerateSample);
        }
    }
    let scale = (t as f64).powf(-1.0 / 3.0);
    SmoothingMatrix::new(cov * scale).map_err(|_| FeatureError::DegenerateSample)
}

/// Gaussian kernel density estimate with a fixed smoothing matrix.
#[derive(Debug, Clone)]
pub struct Kde<'a> {
    points: &'a [[f64; 2]],
    inv: Matrix2<f64>,
    norm: f64,
}

impl<'a> Kde<'a> {
    pub fn new(points: &'a BivariatePoints, h: &SmoothingMatrix) -> Self {
        let m = h.matrix();
        let inv = m.try_inverse().expect("smoothing matrix is positive-definite");
        let norm = 1.0 / (2.0 * std::f64::consts::PI * m.determinant().sqrt());
        Self { points: points.as_slice(), inv, norm }
    }

    pub fn density(&self, f: f64, d: f64) -> f64 {
        let (a, b, c) = (self.inv[(0, 0)], self.inv[(0, 1)], self.inv[(1, 1)]);
        let sum: f64 = self
            .points
            .iter()
            .map(|p| {
                let (x, y) = (f - p[0], d - p[1]);
                let q = a * x * x + 2.0 * b * x * y + c * y * y;
                if q > KERNEL_CUTOFF {
                    0.0
                } else {
                    (-0.5 * q).exp()
                }
            })
            .sum();
        self.norm * sum / self.points.len() as f64
    }
}

/// `(1/T) sum_t phi(query; point_t, H)`.
pub fn kde_density(points: &BivariatePoints, h: &SmoothingMatrix, query: (f64, f64)) -> f64 {
    Kde::new(points, h).density(query.0, query.1)
}

/// A participant's standardized feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceMap {
    pub participant_id: String,
    pub weights: DMatrix<f64>,
    pub grid: GridSpec,
    /// Approximate kernel mass inside the grid before normalization.
    pub captured_mass: f64,
}

impl ForceMap {
    /// Wraps externally produced weights, checking shape, positivity and normalization.
    pub fn from_weights(
        participant_id: impl Into<String>,
        weights: DMatrix<f64>,
        grid: GridSpec,
    ) -> Result<Self, FeatureError> {
        grid.validate()?;
        if weights.shape() != (grid.rows, grid.cols) {
            return Err(FeatureError::Malformed(format!(
                "weights are {:?}, grid is {}x{}",
                weights.shape(),
                grid.rows,
                grid.cols
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(FeatureError::Malformed("negative or non-finite weight".into()));
        }
        Ok(Self { participant_id: participant_id.into(), weights, grid, captured_mass: 1.0 })
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Map construction knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapOptions {
    pub floor: f64,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self { floor: DEFAULT_WEIGHT_FLOOR }
    }
}

/// Cell weights by the midpoint rule, normalized to one with every cell at least `floor`.
pub fn build_force_map(
    participant_id: &str,
    points: &BivariatePoints,
    grid: &GridSpec,
    h: &SmoothingMatrix,
    options: &MapOptions,
) -> Result<ForceMap, FeatureError> {
    grid.validate()?;
    if points.is_empty() {
        return Err(FeatureError::InsufficientData);
    }
    let kde = Kde::new(points, h);
    let area = grid.cell_area();
    let mut weights = DMatrix::from_fn(grid.rows, grid.cols, |i, j| {
        let (f, d) = grid.cell_center(i, j);
        kde.density(f, d) * area
    });
    let captured = weights.sum();
    if !(captured > 0.0) {
        return Err(FeatureError::EmptyGrid);
    }
    weights /= captured;
    apply_floor(&mut weights, options.floor)?;
    Ok(ForceMap {
        participant_id: participant_id.to_string(),
        weights,
        grid: *grid,
        captured_mass: captured,
    })
}

/// Raises cells below `floor` to exactly `floor` and rescales the others so the total
/// stays one. Repeats while the rescaling pushes further cells under the floor.
pub fn apply_floor(weights: &mut DMatrix<f64>, floor: f64) -> Result<(), FeatureError> {
    let n = weights.len();
    if !(floor >= 0.0 && floor * (n as f64) < 1.0) {
        return Err(FeatureError::InvalidGrid(format!("floor {floor} too large for {n} cells")));
    }
    let mut pinned = vec![false; n];
    loop {
        let mut changed = false;
        for (k, w) in weights.iter().enumerate() {
            if !pinned[k] && *w < floor {
                pinned[k] = true;
                changed = true;
            }
        }
        let free: f64 = weights.iter().zip(&pinned).filter(|(_, p)| !**p).map(|(w, _)| w).sum();
        let n_pinned = pinned.iter().filter(|p| **p).count();
        let scale = (1.0 - n_pinned as f64 * floor) / free;
        for (w, &p) in weights.iter_mut().zip(&pinned) {
            *w = if p { floor } else { *w * scale };
        }
        if !changed {
            return Ok(());
        }
    }
}

/// Entrywise `log(x / (1 - x))`.
pub fn logit_transform(map: &ForceMap) -> Result<DMatrix<f64>, FeatureError> {
    logit_matrix(&map.weights)
}

pub fn logit_matrix(weights: &DMatrix<f64>) -> Result<DMatrix<f64>, FeatureError> {
    for ((row, col), &value) in weights.iter().enumerate().map(|(k, v)| {
        ((k % weights.nrows(), k / weights.nrows()), v)
    }) {
        if !(value > 0.0 && value < 1.0) {
            return Err(FeatureError::Domain { row, col, value });
        }
    }
    Ok(weights.map(|x| (x / (1.0 - x)).ln()))
}

pub fn inverse_logit(values: &DMatrix<f64>) -> DMatrix<f64> {
    values.map(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Weighted centroid of a map on its grid, `(mean f, mean f')`.
pub fn centroid(weights: &DMatrix<f64>, grid: &GridSpec) -> (f64, f64) {
    let total: f64 = weights.sum();
    let mut acc = (0.0, 0.0);
    for i in 0..grid.rows {
        for j in 0..grid.cols {
            let (f, d) = grid.cell_center(i, j);
            acc.0 += weights[(i, j)] * f;
            acc.1 += weights[(i, j)] * d;
        }
    }
    (acc.0 / total, acc.1 / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Activity, Epoch};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn series(forces: &[f64]) -> EpochSeries {
        let epochs = forces
            .iter()
            .enumerate()
            .map(|(i, &force)| Epoch { t: 5.0 * i as f64, force, activity: Activity::Moderate })
            .collect();
        EpochSeries::new("p", 5.0, epochs).unwrap()
    }

    #[test]
    fn derivative_examples() {
        let pts = numeric_derivative(&series(&[40.0, 40.0, 40.0])).unwrap();
        assert_eq!(pts.as_slice(), &[[40.0, 0.0], [40.0, 0.0]]);
        let pts = numeric_derivative(&series(&[0.0, 5.0, 10.0])).unwrap();
        assert_eq!(pts.as_slice(), &[[5.0, 1.0], [10.0, 1.0]]);
        // (60-50)/5 = 2, (30-60)/5 = -6
        let pts = numeric_derivative(&series(&[50.0, 60.0, 30.0])).unwrap();
        assert_eq!(pts.as_slice(), &[[60.0, 2.0], [30.0, -6.0]]);
        assert_eq!(numeric_derivative(&series(&[1.0])), Err(FeatureError::InsufficientData));
    }

    #[test]
    fn bandwidth_scalar_factor() {
        // four points at (+-1, +-1) duplicated: covariance 8/7 I, so rescale to identity
        let s = (7.0f64 / 8.0).sqrt();
        let base = [[s, s], [s, -s], [-s, s], [-s, -s]];
        let pts = BivariatePoints::new(base.iter().chain(base.iter()).copied().collect());
        let cov = pts.sample_covariance();
        assert!((cov - Matrix2::identity()).abs().max() < 1e-12);
        let h = normal_scale_bandwidth(&pts).unwrap();
        assert!((h.matrix() - Matrix2::identity() * 0.5).abs().max() < 1e-12);
    }

    #[test]
    fn singular_covariance_gets_ridge() {
        let pts = BivariatePoints::new(vec![[0.0, 0.0], [2.0, 2.0]]);
        assert_eq!(pts.sample_covariance(), Matrix2::new(2.0, 2.0, 2.0, 2.0));
        let h = normal_scale_bandwidth(&pts).unwrap();
        let expected = (Matrix2::new(2.0, 2.0, 2.0, 2.0) + Matrix2::identity() * 2e-8)
            * 2f64.powf(-1.0 / 3.0);
        assert!((h.matrix() - expected).abs().max() < 1e-15);

        let constant = BivariatePoints::new(vec![[3.0, 0.0]; 5]);
        assert_eq!(normal_scale_bandwidth(&constant), Err(FeatureError::DegenerateSample));
        assert_eq!(
            normal_scale_bandwidth(&BivariatePoints::new(vec![[1.0, 1.0]])),
            Err(FeatureError::InsufficientData)
        );
    }

    #[test]
    fn bandwidth_matches_direct_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<[f64; 2]> = (0..100)
            .map(|_| {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                [50.0 + 10.0 * z1, 3.0 * z1 + 4.0 * z2]
            })
            .collect();
        // brute force covariance with explicit sums
        let n = pts.len() as f64;
        let (mx, my) = (
            pts.iter().map(|p| p[0]).sum::<f64>() / n,
            pts.iter().map(|p| p[1]).sum::<f64>() / n,
        );
        let sxx = pts.iter().map(|p| (p[0] - mx).powi(2)).sum::<f64>() / (n - 1.0);
        let syy = pts.iter().map(|p| (p[1] - my).powi(2)).sum::<f64>() / (n - 1.0);
        let sxy = pts.iter().map(|p| (p[0] - mx) * (p[1] - my)).sum::<f64>() / (n - 1.0);
        let scale = 100f64.powf(-1.0 / 3.0);
        let h = normal_scale_bandwidth(&BivariatePoints::new(pts)).unwrap();
        let m = h.matrix();
        assert!((m[(0, 0)] - scale * sxx).abs() < 1e-9 * sxx);
        assert!((m[(1, 1)] - scale * syy).abs() < 1e-9 * syy);
        assert!((m[(0, 1)] - scale * sxy).abs() < 1e-9 * sxx);
    }

    #[test]
    fn single_point_mode_value() {
        let pts = BivariatePoints::new(vec![[3.0, -2.0]]);
        let h = SmoothingMatrix::new(Matrix2::identity()).unwrap();
        let v = kde_density(&pts, &h, (3.0, -2.0));
        assert!((v - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert!(kde_density(&pts, &h, (300.0, 200.0)) == 0.0);
    }

    #[test]
    fn smoothing_matrix_rejects_indefinite() {
        assert!(SmoothingMatrix::new(Matrix2::new(1.0, 2.0, 2.0, 1.0)).is_err());
        assert!(SmoothingMatrix::new(Matrix2::new(1.0, 0.5, 0.4, 1.0)).is_err());
    }

    #[test]
    fn near_delta_kernel_concentrates_in_one_cell() {
        let grid = GridSpec::new((0.0, 25.0), (-12.5, 12.5), 25, 25).unwrap();
        // center of 1-based cell (13, 13)
        let (f, d) = grid.cell_center(12, 12);
        let pts = BivariatePoints::new(vec![[f, d]]);
        let h = SmoothingMatrix::new(Matrix2::identity() * 1e-4).unwrap();
        let map = build_force_map("p", &pts, &grid, &h, &MapOptions::default()).unwrap();
        assert!(map.weights[(12, 12)] >= 0.99);
    }

    #[test]
    fn floor_holds_after_renormalization() {
        let mut w = DMatrix::from_row_slice(2, 3, &[0.5, 0.3, 0.2 - 2e-12, 1e-12, 1e-12, 0.0]);
        apply_floor(&mut w, 1e-10).unwrap();
        assert!(w.iter().all(|&x| x >= 1e-10));
        assert!((w.sum() - 1.0).abs() < 1e-15);
        assert_eq!(w[(1, 1)], 1e-10);
        assert!(apply_floor(&mut w, 0.2).is_err());
    }

    #[test]
    fn symmetric_cloud_gives_symmetric_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pts = Vec::new();
        for _ in 0..40 {
            let f = rng.random_range(10.0..90.0);
            let d = rng.random_range(0.0..15.0);
            pts.push([f, d]);
            pts.push([f, -d]);
        }
        let pts = BivariatePoints::new(pts);
        let grid = GridSpec::new((0.0, 100.0), (-20.0, 20.0), 25, 25).unwrap();
        let h = normal_scale_bandwidth(&pts).unwrap();
        // sample covariance of a mirrored cloud has zero off-diagonal up to roundoff
        let h = SmoothingMatrix::new(Matrix2::new(h.matrix()[(0, 0)], 0.0, 0.0, h.matrix()[(1, 1)]))
            .unwrap();
        let map = build_force_map("p", &pts, &grid, &h, &MapOptions::default()).unwrap();
        for i in 0..25 {
            for j in 0..25 {
                assert!((map.weights[(i, j)] - map.weights[(i, 24 - j)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn far_away_points_leave_grid_empty() {
        let pts = BivariatePoints::new(vec![[1e6, 0.0], [1e6 + 1.0, 1.0]]);
        let grid = GridSpec::new((0.0, 10.0), (-1.0, 1.0), 5, 5).unwrap();
        let h = SmoothingMatrix::new(Matrix2::identity()).unwrap();
        assert_eq!(
            build_force_map("p", &pts, &grid, &h, &MapOptions::default()),
            Err(FeatureError::EmptyGrid)
        );
    }

    #[test]
    fn logit_examples() {
        let m = DMatrix::from_row_slice(1, 2, &[0.5, 0.731_058_578_630_004_9]);
        let l = logit_matrix(&m).unwrap();
        assert_eq!(l[(0, 0)], 0.0);
        assert!((l[(0, 1)] - 1.0).abs() < 1e-9);
        let back = inverse_logit(&l);
        assert!((back - &m).abs().max() < 1e-12);
        assert!(matches!(
            logit_matrix(&DMatrix::from_row_slice(1, 2, &[0.0, 0.5])),
            Err(FeatureError::Domain { row: 0, col: 0, .. })
        ));
    }

    #[test]
    fn pooled_bounds() {
        let a = BivariatePoints::new((0..=100).map(|i| [i as f64, (i as f64) - 50.0]).collect());
        let grid = GridSpec::from_pooled([&a], 1.0, 25, 25).unwrap();
        assert_eq!((grid.f_min, grid.f_max, grid.d_min, grid.d_max), (0.0, 100.0, -50.0, 50.0));
        let grid = GridSpec::from_pooled([&a], 0.995, 25, 25).unwrap();
        assert!((grid.f_max - 99.5).abs() < 1e-12);
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new((1.0, 1.0), (0.0, 1.0), 5, 5).is_err());
        assert!(GridSpec::new((0.0, 1.0), (0.0, 1.0), 1, 5).is_err());
        let g = GridSpec::new((0.0, 10.0), (-5.0, 5.0), 10, 5).unwrap();
        assert_eq!(g.cell_center(0, 0), (0.5, -4.0));
        assert_eq!(g.cells(), 50);
    }
}
