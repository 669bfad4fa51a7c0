use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::SurvivalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Covariate {
    Real(f64),
    Level(String),
}

/// One participant's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub participant_id: String,
    /// Exit time in years (age at death or censoring by default).
    pub time: f64,
    /// `true` when death was observed, `false` when censored.
    pub event: bool,
    pub group: String,
    /// Entry time for delayed-entry analyses.
    pub entry: Option<f64>,
    pub covariates: BTreeMap<String, Covariate>,
}

impl SurvivalRecord {
    pub fn new(participant_id: impl Into<String>, time: f64, event: bool, group: impl Into<String>) -> Self {
        Self {
            participant_id: participant_id.into(),
            time,
            event,
            group: group.into(),
            entry: None,
            covariates: BTreeMap::new(),
        }
    }

    pub fn with_covariate(mut self, name: &str, value: Covariate) -> Self {
        self.covariates.insert(name.to_string(), value);
        self
    }

    pub fn validate(&self) -> Result<(), SurvivalError> {
        let bad = |reason: String| SurvivalError::InvalidRecord { id: self.participant_id.clone(), reason };
        if !(self.time.is_finite() && self.time > 0.0) {
            return Err(bad(format!("time {} must be finite and positive", self.time)));
        }
        if let Some(e) = self.entry {
            if !(e.is_finite() && e < self.time) {
                return Err(bad(format!("entry {e} must precede exit {}", self.time)));
            }
        }
        Ok(())
    }

    /// Level of a categorical covariate, or the group label for `"group"`.
    pub fn level(&self, name: &str) -> Option<String> {
        if name == "group" {
            return Some(self.group.clone());
        }
        match self.covariates.get(name)? {
            Covariate::Level(s) => Some(s.clone()),
            Covariate::Real(v) => Some(v.to_string()),
        }
    }
}

/// Column names of a survival CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurvivalSchema {
    pub id: String,
    pub time: String,
    pub event: String,
    pub group: String,
    pub entry: Option<String>,
    /// Extra columns kept as categorical covariates.
    pub categorical: Vec<String>,
    /// Extra columns kept as real-valued covariates.
    pub numeric: Vec<String>,
}

impl Default for SurvivalSchema {
    fn default() -> Self {
        Self {
            id: "participant_id".into(),
            time: "time".into(),
            event: "event".into(),
            group: "group".into(),
            entry: None,
            categorical: Vec::new(),
            numeric: Vec::new(),
        }
    }
}

fn parse_event(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "dead" | "death" => Some(true),
        "0" | "false" | "no" | "alive" | "censored" => Some(false),
        _ => None,
    }
}

/// Reads survival records; the group column may be absent only if named `""`.
pub fn read_records<R: Read>(reader: R, schema: &SurvivalSchema) -> Result<Vec<SurvivalRecord>, SurvivalError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SurvivalError::UnknownTerm(format!("column {name:?}")))
    };
    let id_c = col(&schema.id)?;
    let time_c = col(&schema.time)?;
    let event_c = col(&schema.event)?;
    let group_c = if schema.group.is_empty() { None } else { Some(col(&schema.group)?) };
    let entry_c = schema.entry.as_deref().map(col).transpose()?;
    let cats = schema.categorical.iter().map(|n| Ok((n.clone(), col(n)?))).collect::<Result<Vec<_>, SurvivalError>>()?;
    let nums = schema.numeric.iter().map(|n| Ok((n.clone(), col(n)?))).collect::<Result<Vec<_>, SurvivalError>>()?;

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let id = row.get(id_c).unwrap_or_default().to_string();
        let bad = |reason: String| SurvivalError::InvalidRecord { id: id.clone(), reason };
        let time: f64 = row
            .get(time_c)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("unparseable time".into()))?;
        let event = row
            .get(event_c)
            .and_then(parse_event)
            .ok_or_else(|| bad("unparseable event flag".into()))?;
        let group = group_c.and_then(|c| row.get(c)).unwrap_or_default().to_string();
        let mut rec = SurvivalRecord::new(id.clone(), time, event, group);
        if let Some(c) = entry_c {
            rec.entry = Some(row.get(c).and_then(|v| v.parse().ok()).ok_or_else(|| bad("unparseable entry".into()))?);
        }
        for (name, c) in &cats {
            let v = row.get(*c).unwrap_or_default();
            if !v.is_empty() {
                rec.covariates.insert(name.clone(), Covariate::Level(v.to_string()));
            }
        }
        for (name, c) in &nums {
            let v: f64 = row
                .get(*c)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(format!("unparseable {name}")))?;
            rec.covariates.insert(name.clone(), Covariate::Real(v));
        }
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedLabels {
    pub records: Vec<SurvivalRecord>,
    pub skipped: usize,
}

/// Relabels each record's group as `c{cluster}:{shift}`.
///
/// Records lacking either a cluster or a shift label are dropped and counted.
pub fn mixed_group_label(
    records: &[SurvivalRecord],
    clusters: &HashMap<String, usize>,
    shifts: &HashMap<String, String>,
) -> MixedLabels {
    let mut skipped = 0;
    let mut out = Vec::new();
    for r in records {
        match (clusters.get(&r.participant_id), shifts.get(&r.participant_id)) {
            (Some(c), Some(s)) if !s.is_empty() => {
                let mut rec = r.clone();
                rec.group = format!("c{c}:{s}");
                out.push(rec);
            }
            _ => skipped += 1,
        }
    }
    MixedLabels { records: out, skipped }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_schema_columns() {
        let text = "pid,age_exit,dead,shift,sex,bmi,age_entry\n\
                    a,61.5,1,late,male,27.1,50\n\
                    b,70,0,regular,female,22.0,55\n";
        let schema = SurvivalSchema {
            id: "pid".into(),
            time: "age_exit".into(),
            event: "dead".into(),
            group: "shift".into(),
            entry: Some("age_entry".into()),
            categorical: vec!["sex".into()],
            numeric: vec!["bmi".into()],
        };
        let recs = read_records(text.as_bytes(), &schema).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs[0].event && !recs[1].event);
        assert_eq!(recs[0].group, "late");
        assert_eq!(recs[1].entry, Some(55.0));
        assert_eq!(recs[0].covariates["sex"], Covariate::Level("male".into()));
        assert_eq!(recs[0].covariates["bmi"], Covariate::Real(27.1));
    }

    #[test]
    fn rejects_non_positive_time() {
        let text = "participant_id,time,event,group\na,0,1,x\n";
        assert!(matches!(
            read_records(text.as_bytes(), &SurvivalSchema::default()),
            Err(SurvivalError::InvalidRecord { .. })
        ));
    }

    #[test]
    fn composite_labels() {
        let recs: Vec<_> = ["a", "b", "c", "d"].iter().map(|id| SurvivalRecord::new(*id, 5.0, true, "")).collect();
        let clusters: HashMap<_, _> = [("a", 1), ("b", 3), ("c", 3)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let shifts: HashMap<_, _> = [("a", "regular"), ("b", "late"), ("c", "late"), ("d", "late")]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let mixed = mixed_group_label(&recs, &clusters, &shifts);
        assert_eq!(mixed.skipped, 1);
        let labels: Vec<_> = mixed.records.iter().map(|r| r.group.as_str()).collect();
        assert_eq!(labels, ["c1:regular", "c3:late", "c3:late"]);
    }

    #[test]
    fn composite_cardinality_bound() {
        let mut recs = Vec::new();
        let mut clusters = HashMap::new();
        let mut shifts = HashMap::new();
        for i in 0..100 {
            let id = format!("p{i}");
            recs.push(SurvivalRecord::new(id.clone(), 1.0, false, ""));
            clusters.insert(id.clone(), 1 + i % 4);
            shifts.insert(id, if i % 7 < 2 { "late" } else { "regular" }.to_string());
        }
        let mixed = mixed_group_label(&recs, &clusters, &shifts);
        let mut levels: Vec<_> = mixed.records.iter().map(|r| r.group.clone()).collect();
        levels.sort();
        levels.dedup();
        assert!(levels.len() <= 8);
    }
}
