use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{chi_square_sf, event_times, group_levels, RiskSetOptions, SurvivalError, SurvivalRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRankResult {
    pub groups: Vec<String>,
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Mantel-Haenszel log-rank test across all group labels present.
pub fn log_rank_test(records: &[SurvivalRecord], opts: &RiskSetOptions) -> Result<LogRankResult, SurvivalError> {
    for r in records {
        r.validate()?;
    }
    let groups = group_levels(records);
    let k = groups.len();
    if k < 2 {
        return Err(SurvivalError::DegenerateContrast(k));
    }
    let index: Vec<usize> = records
        .iter()
        .map(|r| groups.binary_search(&r.group).expect("level present"))
        .collect();
    let mut observed = DVector::<f64>::zeros(k);
    let mut expected = DVector::<f64>::zeros(k);
    let mut cov = DMatrix::<f64>::zeros(k, k);
    for t in event_times(records) {
        let mut n_g = vec![0.0; k];
        let mut d_g = vec![0.0; k];
        for (r, &g) in records.iter().zip(&index) {
            if opts.at_risk(r, t) {
                n_g[g] += 1.0;
                if r.event && r.time == t {
                    d_g[g] += 1.0;
                }
            }
        }
        let n: f64 = n_g.iter().sum();
        let d: f64 = d_g.iter().sum();
        if n == 0.0 || d == 0.0 {
            continue;
        }
        let tie = if n > 1.0 { (n - d) / (n - 1.0) } else { 0.0 };
        for a in 0..k {
            observed[a] += d_g[a];
            expected[a] += d * n_g[a] / n;
            for b in 0..k {
                let delta = if a == b { 1.0 } else { 0.0 };
                cov[(a, b)] += d * tie * (n_g[a] / n) * (delta - n_g[b] / n);
            }
        }
    }
    // drop the last group; the full covariance is singular
    let diff = (&observed - &expected).rows(0, k - 1).into_owned();
    let v = cov.view((0, 0), (k - 1, k - 1)).into_owned();
    let statistic = match v.clone().cholesky() {
        Some(ch) => diff.dot(&ch.solve(&diff)),
        None => match v.pseudo_inverse(1e-12) {
            Ok(pinv) => diff.dot(&(pinv * &diff)),
            Err(_) => 0.0,
        },
    };
    let statistic = statistic.max(0.0);
    Ok(LogRankResult {
        groups,
        observed: observed.iter().copied().collect(),
        expected: expected.iter().copied().collect(),
        statistic,
        df: k - 1,
        p_value: chi_square_sf(statistic, k - 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: usize, t: f64, e: bool, g: &str) -> SurvivalRecord {
        SurvivalRecord::new(format!("{id}"), t, e, g)
    }

    #[test]
    fn identical_groups_have_zero_statistic() {
        let mut recs = Vec::new();
        for (i, (t, e)) in [(1.0, true), (3.0, false), (4.0, true), (6.0, true)].iter().enumerate() {
            recs.push(rec(i, *t, *e, "a"));
            recs.push(rec(i + 10, *t, *e, "b"));
        }
        let lr = log_rank_test(&recs, &RiskSetOptions::default()).unwrap();
        assert!(lr.statistic.abs() < 1e-12);
        assert!((lr.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_group_is_degenerate() {
        let recs = vec![rec(1, 1.0, true, "a"), rec(2, 2.0, true, "a")];
        assert!(matches!(
            log_rank_test(&recs, &RiskSetOptions::default()),
            Err(SurvivalError::DegenerateContrast(1))
        ));
    }

    #[test]
    fn label_swap_symmetry() {
        let recs = vec![
            rec(1, 1.0, true, "a"),
            rec(2, 2.0, true, "b"),
            rec(3, 3.0, false, "a"),
            rec(4, 4.0, true, "b"),
            rec(5, 5.0, true, "a"),
            rec(6, 2.0, true, "a"),
        ];
        let swapped: Vec<_> = recs
            .iter()
            .map(|r| {
                let mut s = r.clone();
                s.group = if r.group == "a" { "b".into() } else { "a".into() };
                s
            })
            .collect();
        let a = log_rank_test(&recs, &RiskSetOptions::default()).unwrap();
        let b = log_rank_test(&swapped, &RiskSetOptions::default()).unwrap();
        assert!((a.statistic - b.statistic).abs() < 1e-12);
        assert!((a.p_value - b.p_value).abs() < 1e-12);
    }

    #[test]
    fn three_groups_have_two_degrees_of_freedom() {
        let recs: Vec<_> = (0..30)
            .map(|i| rec(i, 1.0 + (i * 7 % 11) as f64, i % 4 != 0, ["x", "y", "z"][i % 3]))
            .collect();
        let lr = log_rank_test(&recs, &RiskSetOptions::default()).unwrap();
        assert_eq!(lr.df, 2);
        assert!((0.0..=1.0).contains(&lr.p_value));
        let total_o: f64 = lr.observed.iter().sum();
        let total_e: f64 = lr.expected.iter().sum();
        assert!((total_o - total_e).abs() < 1e-9);
    }
}
