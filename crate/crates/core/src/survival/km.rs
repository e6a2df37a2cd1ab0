use serde::{Deserialize, Serialize};

use super::SurvivalRecord;

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KmPoint {
    pub time: f64,
    pub n_risk: usize,
    pub n_event: usize,
    pub n_censored: usize,
    pub survival: f64,
    /// Greenwood variance of the survival estimate.
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Product-limit curve with one point per distinct event time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    pub n: usize,
    pub events: usize,
    pub points: Vec<KmPoint>,
}

impl KmCurve {
    /// S(t), right-continuous; 1 before the first event.
    pub fn survival_at(&self, t: f64) -> f64 {
        self.points
            .iter()
            .take_while(|p| p.time <= t)
            .last()
            .map_or(1.0, |p| p.survival)
    }

    /// Smallest event time with S(t) <= `level`.
    pub fn time_to_survival(&self, level: f64) -> Option<f64> {
        self.points.iter().find(|p| p.survival <= level).map(|p| p.time)
    }

    pub fn median(&self) -> Option<f64> {
        self.time_to_survival(0.5)
    }
}

/// Kaplan-Meier estimate with Greenwood variance and a log-log 95% band.
/// At tied times events are counted before censorings.
pub fn km_estimate(records: &[SurvivalRecord]) -> KmCurve {
    let mut obs: Vec<(f64, bool)> = records.iter().map(|r| (r.duration, r.event)).collect();
    obs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = obs.len();
    let mut points = Vec::new();
    let mut at_risk = n;
    let mut s = 1.0;
    let mut greenwood = 0.0;
    let mut i = 0;
    while i < n {
        let t = obs[i].0;
        let mut d = 0;
        let mut c = 0;
        while i < n && obs[i].0 == t {
            if obs[i].1 {
                d += 1;
            } else {
                c += 1;
            }
            i += 1;
        }
        if d > 0 {
            s *= (at_risk - d) as f64 / at_risk as f64;
            if at_risk > d {
                greenwood += d as f64 / (at_risk as f64 * (at_risk - d) as f64);
            } else {
                greenwood = f64::INFINITY;
            }
            let (ci_low, ci_high) = log_log_band(s, greenwood);
            points.push(KmPoint {
                time: t,
                n_risk: at_risk,
                n_event: d,
                n_censored: c,
                survival: s,
                variance: if s > 0.0 { s * s * greenwood } else { 0.0 },
                ci_low,
                ci_high,
            });
        }
        at_risk -= d + c;
    }
    KmCurve {
        n,
        events: obs.iter().filter(|o| o.1).count(),
        points,
    }
}

fn log_log_band(s: f64, greenwood: f64) -> (f64, f64) {
    if s <= 0.0 || s >= 1.0 || !greenwood.is_finite() {
        return (s, s);
    }
    let se = greenwood.sqrt() / s.ln().abs();
    (s.powf((Z95 * se).exp()), s.powf((-Z95 * se).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn recs(data: &[(f64, bool)]) -> Vec<SurvivalRecord> {
        data.iter()
            .enumerate()
            .map(|(i, &(d, e))| SurvivalRecord::new(i, d, e))
            .collect()
    }

    #[test]
    fn hand_computed_fixture() {
        let km = km_estimate(&recs(&[(5.0, true), (8.0, true), (12.0, false), (20.0, true)]));
        let s: Vec<f64> = km.points.iter().map(|p| p.survival).collect();
        assert_eq!(s, vec![0.75, 0.5, 0.0]);
        assert_eq!(km.points.iter().map(|p| p.n_risk).collect::<Vec<_>>(), vec![4, 3, 1]);
        assert_eq!(km.survival_at(12.0), 0.5);
        assert_eq!(km.time_to_survival(0.8), Some(5.0));
        // Greenwood at t=8: S^2 * (1/(4*3) + 1/(3*2))
        assert!((km.points[1].variance - 0.25 * (1.0 / 12.0 + 1.0 / 6.0)).abs() < 1e-15);
    }

    #[test]
    fn all_censored_is_flat() {
        let km = km_estimate(&recs(&[(1.0, false), (2.0, false)]));
        assert!(km.points.is_empty());
        assert_eq!(km.survival_at(100.0), 1.0);
        assert_eq!(km.time_to_survival(0.8), None);
    }

    #[test]
    fn band_contains_estimate() {
        let km = km_estimate(&recs(&[
            (1.0, true),
            (2.0, false),
            (3.0, true),
            (4.0, true),
            (5.0, false),
            (6.0, true),
        ]));
        for p in &km.points {
            assert!(p.ci_low <= p.survival && p.survival <= p.ci_high, "{p:?}");
        }
    }

    proptest! {
        #[test]
        fn uncensored_equals_empirical(durations in proptest::collection::vec(0u32..50, 1..60)) {
            let data: Vec<(f64, bool)> = durations.iter().map(|&d| (f64::from(d), true)).collect();
            let km = km_estimate(&recs(&data));
            let n = data.len() as f64;
            for p in &km.points {
                let emp = data.iter().filter(|x| x.0 > p.time).count() as f64 / n;
                prop_assert!((p.survival - emp).abs() < 1e-12);
            }
        }

        #[test]
        fn duplication_invariant(data in proptest::collection::vec((0u32..40, any::<bool>()), 1..40)) {
            let d: Vec<(f64, bool)> = data.iter().map(|&(t, e)| (f64::from(t), e)).collect();
            let doubled: Vec<(f64, bool)> = d.iter().chain(d.iter()).copied().collect();
            let a = km_estimate(&recs(&d));
            let b = km_estimate(&recs(&doubled));
            prop_assert_eq!(a.points.len(), b.points.len());
            for (p, q) in a.points.iter().zip(&b.points) {
                prop_assert_eq!(p.time, q.time);
                prop_assert!((p.survival - q.survival).abs() < 1e-12);
            }
        }

        #[test]
        fn curve_invariants(data in proptest::collection::vec((0u32..40, any::<bool>()), 1..40)) {
            let d: Vec<(f64, bool)> = data.iter().map(|&(t, e)| (f64::from(t), e)).collect();
            let km = km_estimate(&recs(&d));
            let mut prev_s = 1.0;
            let mut prev_n = usize::MAX;
            for p in &km.points {
                prop_assert!(p.survival <= prev_s && p.survival >= 0.0);
                prop_assert!(p.n_risk < prev_n);
                prev_s = p.survival;
                prev_n = p.n_risk;
            }
        }
    }
}
