use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::SurvivalRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRank {
    pub chi_square: f64,
    pub p_value: f64,
    /// Observed and expected events in each group.
    pub observed: [f64; 2],
    pub expected: [f64; 2],
    pub variance: f64,
}

/// Two-group log-rank test with a 1-df chi-square p-value.
pub fn log_rank(a: &[SurvivalRecord], b: &[SurvivalRecord]) -> Result<LogRank> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("log-rank needs two non-empty groups"));
    }
    let mut obs: Vec<(f64, bool, bool)> = a
        .iter()
        .map(|r| (r.duration, r.event, true))
        .chain(b.iter().map(|r| (r.duration, r.event, false)))
        .collect();
    obs.sort_by(|x, y| x.0.total_cmp(&y.0));

    let (mut n1, mut n) = (a.len() as f64, obs.len() as f64);
    let (mut o1, mut e1, mut o2, mut v) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < obs.len() {
        let t = obs[i].0;
        let (mut d1, mut d, mut r1, mut r) = (0.0, 0.0, 0.0, 0.0);
        while i < obs.len() && obs[i].0 == t {
            let (_, event, in_a) = obs[i];
            r += 1.0;
            if in_a {
                r1 += 1.0;
            }
            if event {
                d += 1.0;
                if in_a {
                    d1 += 1.0;
                }
            }
            i += 1;
        }
        if d > 0.0 {
            let frac = n1 / n;
            o1 += d1;
            o2 += d - d1;
            e1 += d * frac;
            if n > 1.0 {
                v += d * frac * (1.0 - frac) * (n - d) / (n - 1.0);
            }
        }
        n1 -= r1;
        n -= r;
    }
    if o1 + o2 > 0.0 && (o1 == 0.0 || o2 == 0.0) {
        log::warn!("log-rank: one group has no events");
    }
    let total = o1 + o2;
    let chi_square = if v > 0.0 { (o1 - e1).powi(2) / v } else { 0.0 };
    let p_value = if v > 0.0 {
        1.0 - ChiSquared::new(1.0).unwrap().cdf(chi_square)
    } else {
        1.0
    };
    Ok(LogRank {
        chi_square,
        p_value,
        observed: [o1, o2],
        expected: [e1, total - e1],
        variance: v,
    })
}
