//! Claim lifespans, Kaplan-Meier curves, log-rank tests, Weibull AFT models
//! and their diagnostics.

mod aft;
mod km;
mod logrank;
mod simulate;
mod vif;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use aft::{concordance_index, fit_weibull_aft, fit_weibull_aft_matrix, AftFit, AftProblem, AftTerm, Design};
pub use km::{km_estimate, KmCurve, KmPoint};
pub use logrank::{log_rank, LogRank};
pub use simulate::simulate_aft;
pub use vif::{vif, VifValue};

use crate::claim_graph::ClaimCluster;
use crate::error::{Error, Result};

pub const DEFAULT_GAP_DAYS: u32 = 30;
pub const DEFAULT_MIN_LIFESPAN_DAYS: f64 = 1.0;
pub const SURVIVAL_QUANTILE: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub claim_id: usize,
    /// Days.
    pub duration: f64,
    /// `true` when the claim died, `false` when right-censored.
    pub event: bool,
    pub covariates: BTreeMap<String, f64>,
}

impl SurvivalRecord {
    pub fn new(claim_id: usize, duration: f64, event: bool) -> Self {
        Self {
            claim_id,
            duration,
            event,
            covariates: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.covariates.insert(name.to_string(), value);
        self
    }
}

/// One record per claim whose lifespan reaches `min_lifespan_days`. A claim
/// has died when the corpus ends at least `gap_days` after its last post;
/// otherwise it is censored.
pub fn build_lifespans(
    clusters: &[ClaimCluster],
    gap_days: u32,
    min_lifespan_days: f64,
    corpus_end: i64,
) -> Result<Vec<SurvivalRecord>> {
    let mut out = Vec::new();
    for c in clusters {
        if c.is_empty() {
            continue;
        }
        let last = c.last_ts();
        if last > corpus_end {
            return Err(Error::invalid(format!(
                "corpus end {corpus_end} precedes last post {last} of claim {}",
                c.claim_id
            )));
        }
        let duration = c.lifespan_days();
        if duration < min_lifespan_days {
            continue;
        }
        let silent_days = (corpus_end - last) as f64 / 86_400.0;
        out.push(SurvivalRecord::new(
            c.claim_id,
            duration,
            silent_days >= f64::from(gap_days),
        ));
    }
    Ok(out)
}

/// `ln(1 + x)` then z-scored (population SD). A constant column maps to zeros.
pub fn log1p_standardize(values: &[f64]) -> Vec<f64> {
    let logged: Vec<f64> = values.iter().map(|v| v.max(0.0).ln_1p()).collect();
    standardize(&logged)
}

pub fn standardize(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    values
        .iter()
        .map(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 })
        .collect()
}

/// Adds the product of the named covariates as a new covariate `a:b[:c]`.
pub fn add_interaction(records: &mut [SurvivalRecord], names: &[&str]) -> Result<String> {
    let name = names.join(":");
    for r in records.iter_mut() {
        let mut prod = 1.0;
        for n in names {
            prod *= r
                .covariates
                .get(*n)
                .ok_or_else(|| Error::invalid(format!("claim {} lacks covariate {n}", r.claim_id)))?;
        }
        r.covariates.insert(name.clone(), prod);
    }
    Ok(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claim_graph::ClaimMember;

    fn cluster(id: usize, ts: &[i64]) -> ClaimCluster {
        ClaimCluster {
            claim_id: id,
            members: ts
                .iter()
                .enumerate()
                .map(|(i, &t)| ClaimMember {
                    post_id: format!("{id}-{i}"),
                    created_at: t,
                    row: i,
                })
                .collect(),
        }
    }

    const DAY: i64 = 86_400;

    #[test]
    fn lifespan_rules() {
        let end = 100 * DAY;
        let clusters = vec![
            cluster(0, &[10 * DAY]),
            cluster(1, &[50 * DAY, 60 * DAY]),
            cluster(2, &[80 * DAY, 95 * DAY]),
        ];
        let r = build_lifespans(&clusters, 30, 1.0, end).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].claim_id, 1);
        assert_eq!(r[0].duration, 10.0);
        assert!(r[0].event);
        assert!(!r[1].event);
        assert!(build_lifespans(&clusters, 30, 1.0, 90 * DAY).is_err());
    }

    #[test]
    fn exactly_gap_days_is_an_event() {
        let r = build_lifespans(&[cluster(0, &[0, 2 * DAY])], 30, 1.0, 32 * DAY).unwrap();
        assert!(r[0].event);
    }

    #[test]
    fn standardizing() {
        let z = log1p_standardize(&[0.0, 9.0, 99.0]);
        assert!(z.iter().sum::<f64>().abs() < 1e-12);
        assert_eq!(standardize(&[3.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn interactions() {
        let mut rs = vec![SurvivalRecord::new(0, 1.0, true).with("a", 2.0).with("b", 3.0)];
        assert_eq!(add_interaction(&mut rs, &["a", "b"]).unwrap(), "a:b");
        assert_eq!(rs[0].covariates["a:b"], 6.0);
        assert!(add_interaction(&mut rs, &["a", "z"]).is_err());
    }
}
