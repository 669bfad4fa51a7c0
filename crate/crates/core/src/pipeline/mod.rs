//! End-to-end orchestration: epoch files to force maps, clusters and survival
//! contrasts, plus synthetic cohorts for desk-scale checks.

pub mod artifacts;
mod config;
mod run;
pub mod synth;

pub use config::{FeatureConfig, InputConfig, PipelineConfig, SearchConfig, SurvivalConfig};
pub use run::{
    build_maps, cluster_assignments, featurize_stage, ingest_stage, logit_maps, order_by_force, read_manifest,
    run_pipeline, survival_contrasts, write_contrast, Attrition, ClusterAssignment, ContrastReport, FeatureOutcome,
    IngestOutcome, IngestRow, ManifestEntry, RunReport,
};
pub use synth::{generate_synthetic, sample_mbi, write_cohort, CohortFiles, Hazard, SyntheticCohort, SyntheticCohortSpec};

use std::path::PathBuf;

use thiserror::Error;

use crate::forcemap::FeatureError;
use crate::ingest::IngestError;
use crate::mbi::FitError;
use crate::survival::SurvivalError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("features: {0}")]
    Feature(#[from] FeatureError),
    #[error("mixture fit: {0}")]
    Fit(#[from] FitError),
    #[error("survival: {0}")]
    Survival(#[from] SurvivalError),
    #[error("malformed artifact {}: {detail}", path.display())]
    Artifact { path: PathBuf, detail: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("stage {stage} failed ({source}); partial manifest at {}", manifest.display())]
    Stage { stage: &'static str, source: Box<PipelineError>, manifest: PathBuf },
}

/// Broad failure classes, mapped to distinct process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Validation,
    Data,
    Numerical,
    Io,
}

impl PipelineError {
    pub fn kind(&self) -> FailureKind {
        use FailureKind::*;
        match self {
            PipelineError::Config(_) => Validation,
            PipelineError::Ingest(e) => match e {
                IngestError::InvalidOptions(_) => Validation,
                IngestError::Io(_) => Io,
                _ => Data,
            },
            PipelineError::Feature(e) => match e {
                FeatureError::InvalidGrid(_) => Validation,
                FeatureError::NotPositiveDefinite | FeatureError::Domain { .. } => Numerical,
                _ => Data,
            },
            PipelineError::Fit(e) => match e {
                FitError::InvalidSpec(_) => Validation,
                FitError::InvalidData(_) => Data,
                _ => Numerical,
            },
            PipelineError::Survival(e) => match e {
                SurvivalError::CollinearDesign(_) | SurvivalError::NonIdentifiable(_) => Numerical,
                SurvivalError::Io(_) => Io,
                _ => Data,
            },
            PipelineError::Artifact { .. } => Data,
            PipelineError::Io { .. } => Io,
            PipelineError::Stage { source, .. } => source.kind(),
        }
    }
}
