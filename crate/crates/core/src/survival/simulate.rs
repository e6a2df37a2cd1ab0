use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SurvivalRecord;
use crate::error::{Error, Result};

/// Draws Weibull AFT durations `lambda(x) * (-ln U)^(1/rho)` with
/// `log lambda = beta[0] + beta[1..] . x`, where `x` comes from `covariates`
/// (one value per name). Independent exponential censoring is calibrated by
/// bisection so the censored fraction is close to `censor_rate`.
pub fn simulate_aft<F>(
    beta: &[f64],
    rho: f64,
    names: &[&str],
    mut covariates: F,
    n: usize,
    censor_rate: f64,
    seed: u64,
) -> Result<Vec<SurvivalRecord>>
where
    F: FnMut(&mut ChaCha8Rng) -> Vec<f64>,
{
    if rho.is_nan() || rho <= 0.0 {
        return Err(Error::invalid("rho must be positive"));
    }
    if !(0.0..1.0).contains(&censor_rate) {
        return Err(Error::invalid("censor_rate must be in [0, 1)"));
    }
    if beta.len() != names.len() + 1 {
        return Err(Error::invalid("beta needs an intercept plus one entry per covariate"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut times = Vec::with_capacity(n);
    for _ in 0..n {
        let x = covariates(&mut rng);
        if x.len() != names.len() {
            return Err(Error::invalid("covariate generator returned the wrong width"));
        }
        let log_lambda = beta[0] + beta[1..].iter().zip(&x).map(|(b, v)| b * v).sum::<f64>();
        let u: f64 = 1.0 - rng.gen::<f64>();
        times.push(log_lambda.exp() * (-u.ln()).powf(1.0 / rho));
        xs.push(x);
    }

    let censor_scale = if censor_rate > 0.0 {
        // expected censored fraction under C ~ Exp(mean m) is mean(1 - exp(-T/m))
        let frac = |m: f64| times.iter().map(|t| -(-t / m).exp_m1()).sum::<f64>() / n as f64;
        let (mut lo, mut hi) = (1e-12f64, 1e-12f64);
        while frac(hi) > censor_rate {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if frac(mid) > censor_rate {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some((lo * hi).sqrt())
    } else {
        None
    };

    Ok(times
        .into_iter()
        .zip(xs)
        .enumerate()
        .map(|(i, (t, x))| {
            let c = censor_scale.map_or(f64::INFINITY, |m| -m * (1.0 - rng.gen::<f64>()).ln());
            let mut r = SurvivalRecord::new(i, t.min(c), t <= c);
            for (name, v) in names.iter().zip(x) {
                r.covariates.insert(name.to_string(), v);
            }
            r
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_mean() {
        let r = simulate_aft(&[100f64.ln()], 1.0, &[], |_| vec![], 50_000, 0.0, 1).unwrap();
        let mean = r.iter().map(|r| r.duration).sum::<f64>() / r.len() as f64;
        assert!((mean / 100.0 - 1.0).abs() < 0.05, "{mean}");
        assert!(r.iter().all(|r| r.event));
    }

    #[test]
    fn censor_rate_is_close() {
        let r = simulate_aft(&[5.98], 0.7, &[], |_| vec![], 5_000, 0.2, 2).unwrap();
        let cens = r.iter().filter(|r| !r.event).count() as f64 / 5_000.0;
        assert!((cens - 0.2).abs() < 0.03, "{cens}");
    }

    #[test]
    fn decreasing_hazard_for_small_rho() {
        let r = simulate_aft(&[3.0], 0.7, &[], |_| vec![], 20_000, 0.0, 3).unwrap();
        // hazard over [0,10) vs [10,20) among those at risk
        let rate = |a: f64, b: f64| {
            let at_risk = r.iter().filter(|r| r.duration >= a).count() as f64;
            let died = r.iter().filter(|r| r.duration >= a && r.duration < b).count() as f64;
            died / at_risk
        };
        assert!(rate(0.0, 10.0) > rate(10.0, 20.0));
        assert!(rate(10.0, 20.0) > rate(40.0, 50.0));
    }

    #[test]
    fn deterministic_and_validated() {
        let a = simulate_aft(&[1.0], 1.0, &[], |_| vec![], 10, 0.3, 5).unwrap();
        assert_eq!(a, simulate_aft(&[1.0], 1.0, &[], |_| vec![], 10, 0.3, 5).unwrap());
        assert!(simulate_aft(&[1.0], 0.0, &[], |_| vec![], 10, 0.0, 5).is_err());
        assert!(simulate_aft(&[1.0], 1.0, &[], |_| vec![], 10, 1.0, 5).is_err());
    }
}
