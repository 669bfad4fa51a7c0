use serde::{Deserialize, Serialize};

use super::{group_levels, RiskSetOptions, SurvivalError, SurvivalRecord, Z_95};

/// Product-limit estimate for one group, one row per distinct event time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    pub group: String,
    pub times: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
    pub survival: Vec<f64>,
    /// Greenwood variance of `survival`.
    pub variance: Vec<f64>,
}

impl KmCurve {
    /// `S(t)` as a right-continuous step function with `S = 1` before the first event.
    pub fn survival_at(&self, t: f64) -> f64 {
        match self.times.iter().rposition(|&tj| tj <= t) {
            Some(j) => self.survival[j],
            None => 1.0,
        }
    }

    pub fn std_err(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.sqrt()).collect()
    }

    /// Pointwise 95% band on the log-log scale.
    pub fn confidence_band(&self) -> Vec<(f64, f64)> {
        self.survival
            .iter()
            .zip(&self.variance)
            .map(|(&s, &var)| {
                if s <= 0.0 || s >= 1.0 {
                    return (s, s);
                }
                let se = var.sqrt() / (s * s.ln()).abs();
                let lo = s.powf((Z_95 * se).exp());
                let hi = s.powf((-Z_95 * se).exp());
                (lo, hi)
            })
            .collect()
    }

    /// Table rows `group,time,n_risk,n_event,survival,std_err,lower,upper`.
    pub fn to_csv_rows(&self) -> Vec<String> {
        let band = self.confidence_band();
        (0..self.times.len())
            .map(|j| {
                format!(
                    "{},{},{},{},{},{},{},{}",
                    self.group,
                    self.times[j],
                    self.at_risk[j],
                    self.events[j],
                    self.survival[j],
                    self.variance[j].sqrt(),
                    band[j].0,
                    band[j].1
                )
            })
            .collect()
    }
}

pub const KM_CSV_HEADER: &str = "group,time,n_risk,n_event,survival,std_err,lower,upper";

fn curve_for(group: &str, records: &[&SurvivalRecord], opts: &RiskSetOptions) -> KmCurve {
    let mut times: Vec<f64> = records.iter().filter(|r| r.event).map(|r| r.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut curve = KmCurve {
        group: group.to_string(),
        times: Vec::with_capacity(times.len()),
        at_risk: Vec::new(),
        events: Vec::new(),
        survival: Vec::new(),
        variance: Vec::new(),
    };
    let mut s = 1.0;
    let mut greenwood = 0.0;
    for t in times {
        let n = records.iter().filter(|r| opts.at_risk(r, t)).count();
        let d = records.iter().filter(|r| r.event && r.time == t).count();
        if n == 0 {
            continue;
        }
        s *= 1.0 - d as f64 / n as f64;
        if n > d {
            greenwood += d as f64 / (n as f64 * (n - d) as f64);
        }
        curve.times.push(t);
        curve.at_risk.push(n);
        curve.events.push(d);
        curve.survival.push(s);
        curve.variance.push(s * s * greenwood);
    }
    curve
}

/// One curve per group (sorted by label).
pub fn kaplan_meier(records: &[SurvivalRecord], opts: &RiskSetOptions) -> Result<Vec<KmCurve>, SurvivalError> {
    if records.is_empty() {
        return Err(SurvivalError::EmptyGroup(String::new()));
    }
    for r in records {
        r.validate()?;
    }
    Ok(group_levels(records)
        .into_iter()
        .map(|g| {
            let members: Vec<&SurvivalRecord> = records.iter().filter(|r| r.group == g).collect();
            curve_for(&g, &members, opts)
        })
        .collect())
}
