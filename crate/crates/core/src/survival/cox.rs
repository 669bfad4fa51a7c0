use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{chi_square_sf, event_times, normal_two_sided, Covariate, RiskSetOptions, SurvivalError, SurvivalRecord, Z_95};

const MAX_NEWTON_ITERS: usize = 100;
const MAX_HALVINGS: usize = 20;
const SCORE_TOL: f64 = 1e-9;
const LOGLIK_REL_TOL: f64 = 1e-12;
// |beta| beyond this means a hazard ratio of e^20; treated as divergence.
const DIVERGENCE_BOUND: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CoxTerm {
    /// Categorical covariate (use `"group"` for the record's group label); the
    /// reference level defaults to the first level in sorted order.
    Categorical { name: String, reference: Option<String> },
    Numeric { name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFormula {
    pub terms: Vec<CoxTerm>,
    #[serde(default)]
    pub risk: RiskSetOptions,
}

impl CoxFormula {
    /// `~ group` with the given reference level.
    pub fn group(reference: Option<&str>) -> Self {
        Self {
            terms: vec![CoxTerm::Categorical { name: "group".into(), reference: reference.map(str::to_string) }],
            risk: RiskSetOptions::default(),
        }
    }

    pub fn with_term(mut self, term: CoxTerm) -> Self {
        self.terms.push(term);
        self
    }

    pub fn with_risk(mut self, risk: RiskSetOptions) -> Self {
        self.risk = risk;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxCoefficient {
    pub term: String,
    /// Level contrasted against `reference`, for categorical terms.
    pub level: Option<String>,
    pub reference: Option<String>,
    pub beta: f64,
    pub hazard_ratio: f64,
    pub std_err: f64,
    pub z: f64,
    pub p_value: f64,
    pub lower: f64,
    pub upper: f64,
}

impl CoxCoefficient {
    pub fn label(&self) -> String {
        match &self.level {
            Some(l) => format!("{}={}", self.term, l),
            None => self.term.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub coefficients: Vec<CoxCoefficient>,
    /// Partial log-likelihood at the estimate and at beta = 0.
    pub loglik: f64,
    pub loglik_null: f64,
    pub score_statistic: f64,
    pub score_p: f64,
    pub lr_statistic: f64,
    pub lr_p: f64,
    pub df: usize,
    pub n: usize,
    pub n_events: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl CoxFit {
    pub fn coefficient(&self, label: &str) -> Option<&CoxCoefficient> {
        self.coefficients.iter().find(|c| c.label() == label || c.level.as_deref() == Some(label))
    }

    /// Forest-plot rows: `term,level,reference,hr,lower,upper,p`.
    pub fn forest_csv(&self) -> String {
        let mut out = String::from("term,level,reference,hr,lower,upper,p\n");
        for c in &self.coefficients {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.term,
                c.level.as_deref().unwrap_or(""),
                c.reference.as_deref().unwrap_or(""),
                c.hazard_ratio,
                c.lower,
                c.upper,
                c.p_value
            ));
        }
        out
    }
}

struct Column {
    term: String,
    level: Option<String>,
    reference: Option<String>,
}

fn build_design(records: &[SurvivalRecord], formula: &CoxFormula) -> Result<(DMatrix<f64>, Vec<Column>), SurvivalError> {
    let mut columns = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for term in &formula.terms {
        match term {
            CoxTerm::Categorical { name, reference } => {
                let levels = records
                    .iter()
                    .map(|r| r.level(name).ok_or_else(|| SurvivalError::UnknownTerm(format!("{name} missing for {}", r.participant_id))))
                    .collect::<Result<Vec<_>, _>>()?;
                let distinct: BTreeSet<&String> = levels.iter().collect();
                let reference = match reference {
                    Some(r) if distinct.contains(r) => r.clone(),
                    Some(r) => return Err(SurvivalError::UnknownTerm(format!("{name}={r}"))),
                    None => (*distinct.iter().next().ok_or_else(|| SurvivalError::UnknownTerm(name.clone()))?).clone(),
                };
                for level in distinct.iter().filter(|l| ***l != reference) {
                    values.push(levels.iter().map(|l| if l == *level { 1.0 } else { 0.0 }).collect());
                    columns.push(Column { term: name.clone(), level: Some((*level).clone()), reference: Some(reference.clone()) });
                }
            }
            CoxTerm::Numeric { name } => {
                let col = records
                    .iter()
                    .map(|r| match r.covariates.get(name) {
                        Some(Covariate::Real(v)) => Ok(*v),
                        Some(Covariate::Level(s)) => s.parse::<f64>().map_err(|_| SurvivalError::UnknownTerm(format!("{name}={s} is not numeric"))),
                        None => Err(SurvivalError::UnknownTerm(format!("{name} missing for {}", r.participant_id))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                values.push(col);
                columns.push(Column { term: name.clone(), level: None, reference: None });
            }
        }
    }
    if columns.is_empty() {
        return Err(SurvivalError::CollinearDesign("no estimable coefficients".into()));
    }
    let x = DMatrix::from_fn(records.len(), columns.len(), |i, j| values[j][i]);
    Ok((x, columns))
}

/// Partial likelihood machinery over a fixed design.
struct Breslow<'a> {
    x: &'a DMatrix<f64>,
    records: &'a [SurvivalRecord],
    by_time: Vec<usize>,
    by_entry: Vec<usize>,
    times: Vec<f64>,
}

struct Derivatives {
    loglik: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
}

impl<'a> Breslow<'a> {
    fn new(x: &'a DMatrix<f64>, records: &'a [SurvivalRecord], risk: RiskSetOptions) -> Self {
        let mut by_time: Vec<usize> = (0..records.len()).collect();
        by_time.sort_by(|&a, &b| records[b].time.total_cmp(&records[a].time));
        let mut by_entry: Vec<usize> = (0..records.len()).filter(|&i| risk.left_truncation && records[i].entry.is_some()).collect();
        by_entry.sort_by(|&a, &b| records[b].entry.unwrap().total_cmp(&records[a].entry.unwrap()));
        let mut times = event_times(records);
        times.reverse();
        Self { x, records, by_time, by_entry, times }
    }

    fn evaluate(&self, beta: &DVector<f64>) -> Derivatives {
        let p = beta.len();
        let eta = self.x * beta;
        // shift for overflow safety; cancels in every ratio below
        let shift = eta.max();
        let w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();
        let mut s0 = 0.0;
        let mut s1 = DVector::zeros(p);
        let mut s2 = DMatrix::zeros(p, p);
        let add = |i: usize, sign: f64, s0: &mut f64, s1: &mut DVector<f64>, s2: &mut DMatrix<f64>| {
            let xi = self.x.row(i).transpose();
            *s0 += sign * w[i];
            s1.axpy(sign * w[i], &xi, 1.0);
            s2.ger(sign * w[i], &xi, &xi, 1.0);
        };
        let (mut ti, mut ei) = (0, 0);
        let mut out = Derivatives { loglik: 0.0, score: DVector::zeros(p), info: DMatrix::zeros(p, p) };
        for &t in &self.times {
            while ti < self.by_time.len() && self.records[self.by_time[ti]].time >= t {
                add(self.by_time[ti], 1.0, &mut s0, &mut s1, &mut s2);
                ti += 1;
            }
            while ei < self.by_entry.len() && self.records[self.by_entry[ei]].entry.unwrap() >= t {
                add(self.by_entry[ei], -1.0, &mut s0, &mut s1, &mut s2);
                ei += 1;
            }
            let events: Vec<usize> = self.by_time[..ti]
                .iter()
                .rev()
                .copied()
                .filter(|&i| self.records[i].event && self.records[i].time == t)
                .collect();
            let d = events.len() as f64;
            if d == 0.0 || s0 <= 0.0 {
                continue;
            }
            let mean = &s1 / s0;
            for &i in &events {
                out.loglik += eta[i];
                out.score += self.x.row(i).transpose();
            }
            out.loglik -= d * (s0.ln() + shift);
            out.score -= &mean * d;
            out.info += (&s2 / s0 - &mean * mean.transpose()) * d;
        }
        out
    }
}

fn solve_spd(m: &DMatrix<f64>, v: &DVector<f64>) -> Option<DVector<f64>> {
    m.clone().cholesky().map(|ch| ch.solve(v))
}

/// Maximizes the Breslow partial likelihood by damped Newton iterations.
pub fn cox_fit(records: &[SurvivalRecord], formula: &CoxFormula) -> Result<CoxFit, SurvivalError> {
    for r in records {
        r.validate()?;
    }
    let n_times = event_times(records).len();
    if n_times < 2 {
        return Err(SurvivalError::InsufficientEvents(n_times));
    }
    let (mut x, columns) = build_design(records, formula)?;
    let p = columns.len();
    // centring leaves beta unchanged and keeps exp() well scaled
    for mut col in x.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let sv = x.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if p > records.len() || !(smin > 1e-9 * smax.max(1e-300)) {
        let names: Vec<String> = columns.iter().map(|c| c.level.clone().unwrap_or_else(|| c.term.clone())).collect();
        return Err(SurvivalError::CollinearDesign(format!("columns {names:?}")));
    }

    let model = Breslow::new(&x, records, formula.risk);
    let mut beta = DVector::zeros(p);
    let null = model.evaluate(&beta);
    let mut current = model.evaluate(&beta);
    let mut converged = false;
    let mut iterations = 0;
    let label = |j: usize| columns[j].level.clone().unwrap_or_else(|| columns[j].term.clone());
    while iterations < MAX_NEWTON_ITERS {
        if current.score.amax() < SCORE_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let Some(step) = solve_spd(&current.info, &current.score) else {
            let worst = current.info.diagonal().imin();
            return Err(SurvivalError::NonIdentifiable(format!("information singular for {}", label(worst))));
        };
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = &beta + &step * scale;
            let eval = model.evaluate(&trial);
            if eval.loglik >= current.loglik {
                accepted = Some((trial, eval));
                break;
            }
            scale *= 0.5;
        }
        let Some((next_beta, next)) = accepted else {
            converged = true;
            break;
        };
        let rel = (next.loglik - current.loglik).abs() / current.loglik.abs().max(1e-300);
        beta = next_beta;
        current = next;
        if let Some(j) = beta.iter().position(|b| b.abs() > DIVERGENCE_BOUND) {
            return Err(SurvivalError::NonIdentifiable(format!(
                "coefficient for {} reached {:.1}",
                label(j),
                beta[j]
            )));
        }
        if rel < LOGLIK_REL_TOL {
            converged = true;
            break;
        }
    }

    let cov = current
        .info
        .clone()
        .try_inverse()
        .ok_or_else(|| SurvivalError::NonIdentifiable("information matrix singular at the estimate".into()))?;
    let coefficients = columns
        .into_iter()
        .enumerate()
        .map(|(j, col)| {
            let b = beta[j];
            let se = cov[(j, j)].max(0.0).sqrt();
            let z = b / se;
            CoxCoefficient {
                term: col.term,
                level: col.level,
                reference: col.reference,
                beta: b,
                hazard_ratio: b.exp(),
                std_err: se,
                z,
                p_value: normal_two_sided(z),
                lower: (b - Z_95 * se).exp(),
                upper: (b + Z_95 * se).exp(),
            }
        })
        .collect();
    let score_statistic = solve_spd(&null.info, &null.score).map(|s| null.score.dot(&s)).unwrap_or(0.0).max(0.0);
    let lr_statistic = (2.0 * (current.loglik - null.loglik)).max(0.0);
    Ok(CoxFit {
        coefficients,
        loglik: current.loglik,
        loglik_null: null.loglik,
        score_statistic,
        score_p: chi_square_sf(score_statistic, p),
        lr_statistic,
        lr_p: chi_square_sf(lr_statistic, p),
        df: p,
        n: records.len(),
        n_events: records.iter().filter(|r| r.event).count(),
        iterations,
        converged,
    })
}
