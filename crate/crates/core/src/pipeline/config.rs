use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::forcemap::{DEFAULT_BOUNDS_QUANTILE, DEFAULT_GRID_SIZE, DEFAULT_WEIGHT_FLOOR};
use crate::ingest::{Activity, ColumnMapping, ParseOptions, DEFAULT_CORRUPT_THRESHOLD, DEFAULT_EPOCH_LENGTH};
use crate::mbi::{InitMethod, SearchGrid, SearchOptions, DEFAULT_AITKEN_EPSILON, DEFAULT_MAX_ITER};
use crate::survival::SurvivalSchema;

/// Where participant data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// CSV with `participant_id,path` rows; paths relative to the manifest.
    pub manifest: Option<PathBuf>,
    /// Alternatively, every `*.csv` here is one participant named by its file stem.
    pub epochs_dir: Option<PathBuf>,
    pub survival: Option<PathBuf>,
    pub columns: ColumnMapping,
    pub corrupt_threshold: f64,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            epochs_dir: None,
            survival: None,
            columns: ColumnMapping::default(),
            corrupt_threshold: DEFAULT_CORRUPT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub activity: Activity,
    pub epoch_length: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub bounds_quantile: f64,
    pub floor: f64,
    /// Participants with fewer derivative points are dropped at this stage.
    pub min_points: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            activity: Activity::Moderate,
            epoch_length: DEFAULT_EPOCH_LENGTH,
            grid_rows: DEFAULT_GRID_SIZE,
            grid_cols: DEFAULT_GRID_SIZE,
            bounds_quantile: DEFAULT_BOUNDS_QUANTILE,
            floor: DEFAULT_WEIGHT_FLOOR,
            min_points: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub groups: Vec<usize>,
    pub col_factors: Vec<usize>,
    pub row_factors: Vec<usize>,
    pub inits: Vec<InitMethod>,
    pub max_iter: usize,
    pub aitken_epsilon: f64,
    pub top_k: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            groups: (1..=4).collect(),
            col_factors: vec![1, 2],
            row_factors: vec![1, 2],
            inits: vec![InitMethod::Kmeans, InitMethod::RandomSoft],
            max_iter: DEFAULT_MAX_ITER,
            aitken_epsilon: DEFAULT_AITKEN_EPSILON,
            top_k: 5,
        }
    }
}

impl SearchConfig {
    pub fn grid(&self) -> SearchGrid {
        SearchGrid {
            groups: self.groups.clone(),
            col_factors: self.col_factors.clone(),
            row_factors: self.row_factors.clone(),
            inits: self.inits.clone(),
        }
    }

    pub fn options(&self, seed: u64) -> SearchOptions {
        SearchOptions { seed, max_iter: self.max_iter, aitken_epsilon: self.aitken_epsilon, top_k: self.top_k }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurvivalConfig {
    /// Column mapping; `group` names the shift-type column.
    pub schema: SurvivalSchema,
    /// Reference shift level; the first level in sorted order when unset.
    pub shift_reference: Option<String>,
    /// Categorical column used for stratified contrasts.
    pub sex_column: Option<String>,
    pub left_truncation: bool,
}

impl Default for SurvivalConfig {
    fn default() -> Self {
        Self {
            schema: SurvivalSchema {
                id: "participant_id".into(),
                time: "age_exit".into(),
                event: "event".into(),
                group: "shift".into(),
                entry: Some("age_entry".into()),
                categorical: vec!["sex".into()],
                numeric: Vec::new(),
            },
            shift_reference: Some("regular".into()),
            sex_column: Some("sex".into()),
            left_truncation: false,
        }
    }
}

/// Full pipeline configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub workers: Option<usize>,
    pub output_dir: PathBuf,
    pub input: InputConfig,
    pub features: FeatureConfig,
    pub search: SearchConfig,
    pub survival: SurvivalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: None,
            output_dir: PathBuf::from("telemap-out"),
            input: InputConfig::default(),
            features: FeatureConfig::default(),
            search: SearchConfig::default(),
            survival: SurvivalConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(super::artifacts::io_err(path))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.output_dir);
        for p in [&mut self.input.manifest, &mut self.input.epochs_dir, &mut self.input.survival].into_iter().flatten() {
            resolve(base, p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            epoch_length: self.features.epoch_length,
            corrupt_threshold: self.input.corrupt_threshold,
            columns: self.input.columns.clone(),
        }
    }

    /// Checks every setting before any work starts.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        match (&self.input.manifest, &self.input.epochs_dir) {
            (Some(_), Some(_)) => return bad("set only one of input.manifest and input.epochs_dir".into()),
            (Some(p), None) if !p.is_file() => return bad(format!("manifest {} not found", p.display())),
            (None, Some(p)) if !p.is_dir() => return bad(format!("epochs_dir {} not found", p.display())),
            _ => {}
        }
        if let Some(p) = &self.input.survival {
            if !p.is_file() {
                return bad(format!("survival file {} not found", p.display()));
            }
        }
        self.parse_options().validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        let f = &self.features;
        if f.grid_rows < 2 || f.grid_cols < 2 {
            return bad(format!("grid must be at least 2x2, got {}x{}", f.grid_rows, f.grid_cols));
        }
        if !(f.bounds_quantile > 0.0 && f.bounds_quantile <= 1.0) {
            return bad(format!("bounds_quantile {} outside (0, 1]", f.bounds_quantile));
        }
        let cells = (f.grid_rows * f.grid_cols) as f64;
        if !(f.floor > 0.0 && f.floor * cells < 1.0) {
            return bad(format!("floor {} must be positive and below 1/(rows*cols)", f.floor));
        }
        if f.min_points < 2 {
            return bad("min_points must be at least 2".into());
        }
        let s = &self.search;
        if s.groups.is_empty() || s.col_factors.is_empty() || s.row_factors.is_empty() || s.inits.is_empty() {
            return bad("search grids must be non-empty".into());
        }
        if s.groups.contains(&0) {
            return bad("search.groups must be positive".into());
        }
        if let Some(&q) = s.col_factors.iter().find(|&&q| q == 0 || q >= f.grid_rows) {
            return bad(format!("col factor {q} must satisfy 1 <= s < {}", f.grid_rows));
        }
        if let Some(&v) = s.row_factors.iter().find(|&&v| v == 0 || v >= f.grid_cols) {
            return bad(format!("row factor {v} must satisfy 1 <= v < {}", f.grid_cols));
        }
        if !(s.aitken_epsilon > 0.0) || s.max_iter == 0 || s.top_k == 0 {
            return bad("search needs aitken_epsilon > 0, max_iter > 0 and top_k > 0".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        Ok(())
    }
}
