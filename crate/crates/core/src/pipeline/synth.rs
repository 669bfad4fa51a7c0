//! Synthetic cohorts with known cluster structure and survival effects.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::artifacts::{io_err, write_text};
use super::PipelineError;
use crate::ingest::{Activity, Epoch, EpochSeries, DEFAULT_EPOCH_LENGTH};
use crate::matvar::BilinearComponentParams;
use crate::survival::{Covariate, SurvivalRecord};
use crate::{par_map, splitmix};

/// Draws `n` matrices from the bilinear factor model
/// `X = M + A W B' + A E^B + E^A B' + E`.
pub fn sample_mbi<R: Rng>(params: &BilinearComponentParams, n: usize, rng: &mut R) -> Vec<DMatrix<f64>> {
    let (r, c) = params.mean.shape();
    let (s, v) = (params.a.ncols(), params.b.ncols());
    let su = params.u.map(f64::sqrt);
    let sv = params.v.map(f64::sqrt);
    let mut normal = |rows: usize, cols: usize| DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    (0..n)
        .map(|_| {
            let w = normal(s, v);
            let eb = normal(s, c) * DMatrix::from_diagonal(&sv);
            let ea = DMatrix::from_diagonal(&su) * normal(r, v);
            let e = DMatrix::from_diagonal(&su) * normal(r, c) * DMatrix::from_diagonal(&sv);
            &params.mean + &params.a * (w * params.b.transpose() + eb) + ea * params.b.transpose() + e
        })
        .collect()
}

/// `g` bilinear components on an r x c grid whose means are Gaussian bumps placed
/// along the diagonal, with `separation` the bump height.
pub fn separated_components(
    rows: usize,
    cols: usize,
    g: usize,
    col_factors: usize,
    row_factors: usize,
    separation: f64,
    seed: u64,
) -> Vec<BilinearComponentParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..g)
        .map(|k| {
            let centre = (k as f64 + 1.0) / (g as f64 + 1.0);
            let mean = DMatrix::from_fn(rows, cols, |i, j| {
                let x = i as f64 / (rows - 1).max(1) as f64 - centre;
                let y = j as f64 / (cols - 1).max(1) as f64 - 0.5;
                separation * (-(x * x + y * y) / 0.02).exp()
            });
            let a = DMatrix::from_fn(rows, col_factors, |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
            let b = DMatrix::from_fn(cols, row_factors, |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
            let u = DVector::from_fn(rows, |_, _| rng.random_range(0.5..1.0));
            let v = DVector::from_fn(cols, |_, _| rng.random_range(0.5..1.0));
            BilinearComponentParams { mean, a, b, u, v }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hazard {
    /// Constant hazard `rate` per year.
    Exponential { rate: f64 },
    /// `S(t) = exp(-(t / scale)^shape)`.
    Weibull { shape: f64, scale: f64 },
}

impl Hazard {
    fn validate(&self) -> Result<(), String> {
        match *self {
            Hazard::Exponential { rate } if rate > 0.0 && rate.is_finite() => Ok(()),
            Hazard::Weibull { shape, scale } if shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite() => Ok(()),
            other => Err(format!("hazard parameters must be positive: {other:?}")),
        }
    }

    /// Draws a time under proportional scaling `exp(eta)` of the hazard.
    fn sample<R: Rng>(&self, eta: f64, rng: &mut R) -> f64 {
        let e: f64 = Exp1.sample(rng);
        match *self {
            Hazard::Exponential { rate } => e / (rate * eta.exp()),
            Hazard::Weibull { shape, scale } => scale * (e / eta.exp()).powf(1.0 / shape),
        }
    }

    /// Rough hazard level, used to scale censoring.
    fn level(&self) -> f64 {
        match *self {
            Hazard::Exponential { rate } => rate,
            Hazard::Weibull { scale, .. } => 1.0 / scale,
        }
    }
}

/// How a component's participants move during moderate-activity bouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActivityProfile {
    /// Cohort-level mean moderate force (mg).
    pub moderate_mean: f64,
    /// Between-participant standard deviation of the personal mean.
    pub participant_sd: f64,
    /// Stationary standard deviation of force within a bout.
    pub moderate_sd: f64,
    /// Lag-one autocorrelation of force within a bout.
    pub autocorrelation: f64,
    /// Share of epochs spent in moderate bouts.
    pub moderate_fraction: f64,
    /// Mean bout length in epochs.
    pub mean_bout: f64,
}

impl Default for ActivityProfile {
    fn default() -> Self {
        Self {
            moderate_mean: 150.0,
            participant_sd: 10.0,
            moderate_sd: 30.0,
            autocorrelation: 0.6,
            moderate_fraction: 0.3,
            mean_bout: 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticComponent {
    pub n: usize,
    #[serde(default)]
    pub activity: ActivityProfile,
    pub hazard: Hazard,
    /// When set, feature matrices are drawn directly from this model instead of epochs.
    #[serde(default)]
    pub map: Option<BilinearComponentParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCohortSpec {
    pub components: Vec<SyntheticComponent>,
    /// Expected share of participants censored before their event.
    pub censoring_rate: f64,
    pub seed: u64,
    pub epochs_per_participant: usize,
    pub epoch_length: f64,
    /// Probability that an epoch is missing (creates segment gaps).
    pub dropout: f64,
    pub late_shift_fraction: f64,
    pub late_shift_hazard_ratio: f64,
    pub female_fraction: f64,
    pub female_hazard_ratio: f64,
    /// Age range at study entry, years.
    pub entry_age: (f64, f64),
}

impl Default for SyntheticCohortSpec {
    fn default() -> Self {
        Self::three_levels(100)
    }
}

impl SyntheticCohortSpec {
    /// Three activity levels with hazard decreasing in activity.
    pub fn three_levels(n_per_component: usize) -> Self {
        let level = |mean: f64, rate: f64| SyntheticComponent {
            n: n_per_component,
            activity: ActivityProfile { moderate_mean: mean, ..ActivityProfile::default() },
            hazard: Hazard::Exponential { rate },
            map: None,
        };
        Self {
            components: vec![level(90.0, 0.08), level(170.0, 0.04), level(260.0, 0.02)],
            censoring_rate: 0.3,
            seed: 0,
            epochs_per_participant: 1200,
            epoch_length: DEFAULT_EPOCH_LENGTH,
            dropout: 0.0,
            late_shift_fraction: 0.3,
            late_shift_hazard_ratio: 1.3,
            female_fraction: 0.5,
            female_hazard_ratio: 0.75,
            entry_age: (40.0, 70.0),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.components.is_empty() {
            return bad("synthetic cohort needs at least one component".into());
        }
        for (k, c) in self.components.iter().enumerate() {
            c.hazard.validate().or_else(|e| bad(format!("component {}: {e}", k + 1)))?;
            let a = &c.activity;
            if !(a.moderate_mean > 0.0 && a.moderate_sd > 0.0 && a.participant_sd >= 0.0) {
                return bad(format!("component {}: activity scales must be positive", k + 1));
            }
            if !(0.0..1.0).contains(&a.autocorrelation) || !(a.moderate_fraction > 0.0 && a.moderate_fraction <= 1.0) {
                return bad(format!("component {}: autocorrelation in [0,1), moderate_fraction in (0,1]", k + 1));
            }
            if !(a.mean_bout >= 1.0) {
                return bad(format!("component {}: mean_bout must be at least 1", k + 1));
            }
            if let Some(m) = &c.map {
                m.validate().map_err(|e| PipelineError::Config(format!("component {}: {e}", k + 1)))?;
            }
        }
        let with_maps = self.components.iter().filter(|c| c.map.is_some()).count();
        if with_maps != 0 && with_maps != self.components.len() {
            return bad("either every component or none carries map parameters".into());
        }
        if !(0.0..1.0).contains(&self.censoring_rate) {
            return bad(format!("censoring_rate {} outside [0, 1)", self.censoring_rate));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.late_shift_fraction) || !(0.0..=1.0).contains(&self.female_fraction) {
            return bad("covariate fractions must lie in [0, 1]".into());
        }
        if !(self.late_shift_hazard_ratio > 0.0 && self.female_hazard_ratio > 0.0) {
            return bad("covariate hazard ratios must be positive".into());
        }
        if !(self.entry_age.0 > 0.0 && self.entry_age.1 >= self.entry_age.0) {
            return bad("entry_age must be an increasing positive range".into());
        }
        if self.epochs_per_participant < 2 || !(self.epoch_length > 0.0) {
            return bad("need at least two epochs of positive length".into());
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.components.iter().map(|c| c.n).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParticipant {
    pub id: String,
    /// 1-based generating component.
    pub component: usize,
    pub series: Option<EpochSeries>,
    pub map: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub participants: Vec<SyntheticParticipant>,
    /// Age-scale records with `shift` and `sex` covariates; `group` holds the shift type.
    pub records: Vec<SurvivalRecord>,
}

impl SyntheticCohort {
    pub fn truth(&self) -> Vec<usize> {
        self.participants.iter().map(|p| p.component).collect()
    }

    pub fn maps(&self) -> Vec<DMatrix<f64>> {
        self.participants.iter().filter_map(|p| p.map.clone()).collect()
    }

    /// CSV `participant_id,age_entry,age_exit,event,shift,sex`.
    pub fn survival_csv(&self) -> String {
        let mut out = String::from("participant_id,age_entry,age_exit,event,shift,sex\n");
        for r in &self.records {
            let sex = match r.covariates.get("sex") {
                Some(Covariate::Level(s)) => s.as_str(),
                _ => "",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.participant_id,
                r.entry.unwrap_or(0.0),
                r.time,
                u8::from(r.event),
                r.group,
                sex
            ));
        }
        out
    }

    /// CSV `participant_id,component`.
    pub fn truth_csv(&self) -> String {
        let mut out = String::from("participant_id,component\n");
        for p in &self.participants {
            out.push_str(&format!("{},{}\n", p.id, p.component));
        }
        out
    }
}

const OTHER_LEVELS: [(Activity, f64, f64); 4] = [
    (Activity::Sleep, 5.0, 2.0),
    (Activity::Sedentary, 20.0, 6.0),
    (Activity::Light, 45.0, 12.0),
    (Activity::Walking, 110.0, 25.0),
];

fn generate_epochs(id: &str, profile: &ActivityProfile, spec: &SyntheticCohortSpec, rng: &mut ChaCha8Rng) -> EpochSeries {
    let personal = (profile.moderate_mean + profile.participant_sd * rng.sample::<f64, _>(StandardNormal)).max(1.0);
    let rho = profile.autocorrelation;
    let innovation = profile.moderate_sd * (1.0 - rho * rho).sqrt();
    // non-moderate bouts are sized so the long-run moderate share matches the profile
    let other_bout = profile.mean_bout * (1.0 - profile.moderate_fraction) / profile.moderate_fraction;
    let mut epochs = Vec::with_capacity(spec.epochs_per_participant);
    let mut k = 0usize;
    let mut moderate = rng.random_bool(profile.moderate_fraction);
    while k < spec.epochs_per_participant {
        let mean_len = if moderate { profile.mean_bout } else { other_bout.max(1.0) };
        let len = 1 + (rng.sample::<f64, _>(Exp1) * (mean_len - 1.0).max(0.0)) as usize;
        let (other, level, sd) = OTHER_LEVELS[rng.random_range(0..OTHER_LEVELS.len())];
        let mut x = profile.moderate_sd * rng.sample::<f64, _>(StandardNormal);
        for _ in 0..len.min(spec.epochs_per_participant - k) {
            let (force, activity) = if moderate {
                x = rho * x + innovation * rng.sample::<f64, _>(StandardNormal);
                ((personal + x).max(0.0), Activity::Moderate)
            } else {
                ((level + sd * rng.sample::<f64, _>(StandardNormal)).abs(), other)
            };
            let dropped = spec.dropout > 0.0 && rng.random_bool(spec.dropout);
            if !dropped {
                epochs.push(Epoch { t: k as f64 * spec.epoch_length, force, activity });
            }
            k += 1;
        }
        moderate = !moderate;
    }
    EpochSeries::new(id, spec.epoch_length, epochs).expect("generated epochs are ordered and finite")
}

/// Generates participants, their feature inputs and survival outcomes.
///
/// Participant `i` draws from its own seed stream, so output does not depend on the
/// worker count.
pub fn generate_synthetic(spec: &SyntheticCohortSpec) -> Result<SyntheticCohort, PipelineError> {
    spec.validate()?;
    let mut assignments = Vec::with_capacity(spec.total());
    for (k, c) in spec.components.iter().enumerate() {
        assignments.extend(std::iter::repeat_n(k, c.n));
    }
    let width = spec.total().to_string().len().max(4);
    let mean_level = spec.components.iter().map(|c| c.hazard.level()).sum::<f64>() / spec.components.len() as f64;
    // P(C < T) = lc / (lc + l) for exponential times
    let censor_rate = spec.censoring_rate / (1.0 - spec.censoring_rate) * mean_level;

    let generated = par_map(&assignments, |i, &k| {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(spec.seed ^ splitmix(i as u64)));
        let comp = &spec.components[k];
        let id = format!("P{:0width$}", i + 1);
        let (series, map) = match &comp.map {
            Some(params) => (None, Some(sample_mbi(params, 1, &mut rng).remove(0))),
            None => (Some(generate_epochs(&id, &comp.activity, spec, &mut rng)), None),
        };
        let late = rng.random_bool(spec.late_shift_fraction);
        let female = rng.random_bool(spec.female_fraction);
        let eta = if late { spec.late_shift_hazard_ratio.ln() } else { 0.0 }
            + if female { spec.female_hazard_ratio.ln() } else { 0.0 };
        let entry = rng.random_range(spec.entry_age.0..=spec.entry_age.1);
        let t_event = comp.hazard.sample(eta, &mut rng);
        let t_censor = if censor_rate > 0.0 { rng.sample::<f64, _>(Exp1) / censor_rate } else { f64::INFINITY };
        let follow = t_event.min(t_censor).max(1e-6);
        let mut record = SurvivalRecord::new(id.clone(), entry + follow, t_event <= t_censor, if late { "late" } else { "regular" })
            .with_covariate("sex", Covariate::Level(if female { "female" } else { "male" }.into()));
        record.entry = Some(entry);
        (SyntheticParticipant { id, component: k + 1, series, map }, record)
    });
    let (participants, records) = generated.into_iter().unzip();
    Ok(SyntheticCohort { participants, records })
}

/// Paths produced by [`write_cohort`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortFiles {
    pub manifest: PathBuf,
    pub survival: PathBuf,
    pub truth: PathBuf,
}

/// Writes `epochs/<id>.csv`, `manifest.csv`, `survival.csv` and `truth.csv` under `dir`.
pub fn write_cohort(cohort: &SyntheticCohort, dir: &Path) -> Result<CohortFiles, PipelineError> {
    let epochs_dir = dir.join("epochs");
    fs::create_dir_all(&epochs_dir).map_err(io_err(&epochs_dir))?;
    let mut manifest = String::from("participant_id,path\n");
    for p in &cohort.participants {
        let series = p
            .series
            .as_ref()
            .ok_or_else(|| PipelineError::Config("cohort was generated as feature matrices, not epochs".into()))?;
        let path = epochs_dir.join(format!("{}.csv", p.id));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        series.write_csv(BufWriter::new(file))?;
        manifest.push_str(&format!("{},epochs/{}.csv\n", p.id, p.id));
    }
    let files = CohortFiles {
        manifest: dir.join("manifest.csv"),
        survival: dir.join("survival.csv"),
        truth: dir.join("truth.csv"),
    };
    write_text(&files.manifest, &manifest)?;
    write_text(&files.survival, &cohort.survival_csv())?;
    write_text(&files.truth, &cohort.truth_csv())?;
    Ok(files)
}

/// Counts per generating component, for reports.
pub fn component_sizes(cohort: &SyntheticCohort) -> BTreeMap<usize, usize> {
    let mut out = BTreeMap::new();
    for p in &cohort.participants {
        *out.entry(p.component).or_insert(0) += 1;
    }
    out
}
