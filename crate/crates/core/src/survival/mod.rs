//! Survival contrasts between groups: Kaplan-Meier curves, the log-rank test and
//! Cox proportional-hazards regression with Breslow ties.
//!
//! Times are on whatever scale the records carry (age at exit by default). When
//! left truncation is enabled a record is at risk at `t` only if `entry < t <= time`.

mod cox;
mod km;
mod logrank;
mod records;

pub use cox::{cox_fit, CoxCoefficient, CoxFit, CoxFormula, CoxTerm};
pub use km::{kaplan_meier, KmCurve, KM_CSV_HEADER};
pub use logrank::{log_rank_test, LogRankResult};
pub use records::{mixed_group_label, read_records, Covariate, MixedLabels, SurvivalRecord, SurvivalSchema};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959964;

#[derive(Debug, Error)]
pub enum SurvivalError {
    #[error("group {0:?} has no records")]
    EmptyGroup(String),
    #[error("contrast needs at least two groups, found {0}")]
    DegenerateContrast(usize),
    #[error("need at least two distinct event times, found {0}")]
    InsufficientEvents(usize),
    #[error("design matrix is rank deficient: {0}")]
    CollinearDesign(String),
    #[error("partial likelihood is monotone (coefficient diverges): {0}")]
    NonIdentifiable(String),
    #[error("invalid record {id:?}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("unknown covariate or level: {0}")]
    UnknownTerm(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// How risk sets are formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskSetOptions {
    /// Use each record's entry time for delayed entry.
    pub left_truncation: bool,
}

impl RiskSetOptions {
    fn entry_of(&self, r: &SurvivalRecord) -> f64 {
        if self.left_truncation {
            r.entry.unwrap_or(f64::NEG_INFINITY)
        } else {
            f64::NEG_INFINITY
        }
    }

    pub(crate) fn at_risk(&self, r: &SurvivalRecord, t: f64) -> bool {
        self.entry_of(r) < t && r.time >= t
    }
}

/// Upper-tail chi-square probability.
pub fn chi_square_sf(statistic: f64, df: usize) -> f64 {
    if !(statistic > 0.0) {
        return 1.0;
    }
    let dist = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    (1.0 - dist.cdf(statistic)).clamp(0.0, 1.0)
}

/// Two-sided normal p-value for a z statistic.
pub fn normal_two_sided(z: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - n.cdf(z.abs()))).clamp(0.0, 1.0)
}

/// Distinct group labels, sorted.
pub(crate) fn group_levels(records: &[SurvivalRecord]) -> Vec<String> {
    let mut levels: Vec<String> = records.iter().map(|r| r.group.clone()).collect();
    levels.sort();
    levels.dedup();
    levels
}

/// Sorted distinct event times.
pub(crate) fn event_times(records: &[SurvivalRecord]) -> Vec<f64> {
    let mut times: Vec<f64> = records.iter().filter(|r| r.event).map(|r| r.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}
