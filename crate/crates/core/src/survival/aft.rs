//! Weibull accelerated failure time model for right-censored durations.
//!
//! `log lambda = X beta`, `log rho = Z gamma`, cumulative hazard
//! `H(t) = (t / lambda)^rho`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::SurvivalRecord;
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 500;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
const Z95: f64 = 1.959_963_984_540_054;
pub const INTERCEPT: &str = "Intercept";

/// Named design matrix; the first column is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    pub matrix: DMatrix<f64>,
}

impl Design {
    pub fn intercept(n: usize) -> Self {
        Self {
            names: vec![INTERCEPT.to_string()],
            matrix: DMatrix::from_element(n, 1, 1.0),
        }
    }

    pub fn from_records(records: &[SurvivalRecord], covariates: &[&str]) -> Result<Self> {
        let n = records.len();
        let p = covariates.len() + 1;
        let mut m = DMatrix::from_element(n, p, 1.0);
        for (i, r) in records.iter().enumerate() {
            for (j, name) in covariates.iter().enumerate() {
                let v = *r
                    .covariates
                    .get(*name)
                    .ok_or_else(|| Error::invalid(format!("claim {} lacks covariate {name}", r.claim_id)))?;
                if !v.is_finite() {
                    return Err(Error::invalid(format!("claim {}: covariate {name} is {v}", r.claim_id)));
                }
                m[(i, j + 1)] = v;
            }
        }
        let mut names = vec![INTERCEPT.to_string()];
        names.extend(covariates.iter().map(|s| s.to_string()));
        Ok(Self { names, matrix: m })
    }

    /// Names of columns that are (numerically) linear combinations of the
    /// columns before them, in column order.
    pub fn collinear_columns(&self) -> Vec<String> {
        let m = &self.matrix;
        let mut kept: Vec<usize> = Vec::new();
        let mut bad = Vec::new();
        for j in 0..m.ncols() {
            let norm = m.column(j).norm();
            if norm == 0.0 {
                bad.push(self.names[j].clone());
                continue;
            }
            let mut cols: Vec<DVector<f64>> = kept.iter().map(|&k| m.column(k) / m.column(k).norm()).collect();
            cols.push(m.column(j) / norm);
            let sv = DMatrix::from_columns(&cols).singular_values();
            if sv.min() <= sv.max() * 1e-9 {
                bad.push(self.names[j].clone());
            } else {
                kept.push(j);
            }
        }
        bad
    }

    /// Errors naming every column that is a linear combination of the
    /// columns before it.
    pub fn check_rank(&self) -> Result<()> {
        let bad = self.collinear_columns();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::RankDeficient(format!("collinear columns: {}", bad.join(", "))))
        }
    }
}

/// Log-likelihood, gradient and Hessian of the model for fixed data.
#[derive(Debug, Clone)]
pub struct AftProblem {
    log_t: Vec<f64>,
    events: Vec<bool>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
}

impl AftProblem {
    pub fn new(durations: &[f64], events: &[bool], x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        let n = durations.len();
        if n == 0 || events.len() != n || x.nrows() != n || z.nrows() != n {
            return Err(Error::invalid(
                "durations, events and designs must have equal non-zero length",
            ));
        }
        if let Some(bad) = durations.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::invalid(format!(
                "durations must be positive and finite, got {bad}"
            )));
        }
        Ok(Self {
            log_t: durations.iter().map(|t| t.ln()).collect(),
            events: events.to_vec(),
            x,
            z,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.ncols() + self.z.ncols()
    }

    fn linear(&self, theta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let p = self.x.ncols();
        let beta = theta.rows(0, p);
        let gamma = theta.rows(p, self.z.ncols());
        (&self.x * beta, &self.z * gamma)
    }

    pub fn log_likelihood(&self, theta: &DVector<f64>) -> f64 {
        let (eta, zeta) = self.linear(theta);
        let mut ll = 0.0;
        for i in 0..self.log_t.len() {
            let rho = zeta[i].exp();
            let w = rho * (self.log_t[i] - eta[i]);
            if self.events[i] {
                ll += zeta[i] - self.log_t[i] + w;
            }
            ll -= w.exp();
        }
        ll
    }

    pub fn evaluate(&self, theta: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let p = self.x.ncols();
        let q = self.z.ncols();
        let (eta, zeta) = self.linear(theta);
        let mut ll = 0.0;
        let mut grad = DVector::zeros(p + q);
        let mut hess = DMatrix::zeros(p + q, p + q);
        for i in 0..self.log_t.len() {
            let rho = zeta[i].exp();
            let w = rho * (self.log_t[i] - eta[i]);
            let e = w.exp();
            let d = if self.events[i] { 1.0 } else { 0.0 };
            ll += d * (zeta[i] - self.log_t[i] + w) - e;
            let g_eta = rho * (e - d);
            let g_zeta = d * (1.0 + w) - e * w;
            let h_ee = -rho * rho * e;
            let h_ez = rho * (e - d) + rho * e * w;
            let h_zz = d * w - e * w * (w + 1.0);
            let xi = self.x.row(i);
            let zi = self.z.row(i);
            for a in 0..p {
                grad[a] += g_eta * xi[a];
                for b in 0..=a {
                    hess[(a, b)] += h_ee * xi[a] * xi[b];
                }
            }
            for a in 0..q {
                grad[p + a] += g_zeta * zi[a];
                for b in 0..p {
                    hess[(p + a, b)] += h_ez * zi[a] * xi[b];
                }
                for b in 0..=a {
                    hess[(p + a, p + b)] += h_zz * zi[a] * zi[b];
                }
            }
        }
        for a in 0..p + q {
            for b in 0..a {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        (ll, grad, hess)
    }

    fn start(&self) -> DVector<f64> {
        let total: f64 = self.log_t.iter().map(|l| l.exp()).sum();
        let events = self.events.iter().filter(|&&e| e).count().max(1) as f64;
        let mut theta = DVector::zeros(self.dim());
        theta[0] = (total / events).ln();
        theta
    }

    /// Damped Newton ascent with backtracking line search.
    pub fn maximize(&self) -> Result<(DVector<f64>, f64, DMatrix<f64>, usize)> {
        let mut theta = self.start();
        let (mut ll, mut grad, mut hess) = self.evaluate(&theta);
        let mut trace = Vec::new();
        for iter in 0..MAX_ITERATIONS {
            let gmax = grad.amax();
            trace.push((iter, ll, gmax));
            if gmax < GRADIENT_TOLERANCE {
                return Ok((theta, ll, hess, iter));
            }
            let info = -&hess;
            let scale = info.diagonal().amax().max(1.0);
            let mut mu = 0.0;
            let step = loop {
                let damped = &info + DMatrix::identity(info.nrows(), info.ncols()) * mu;
                if let Some(ch) = damped.cholesky() {
                    break ch.solve(&grad);
                }
                mu = if mu == 0.0 { 1e-8 * scale } else { mu * 10.0 };
                if mu > 1e12 * scale {
                    break grad.clone() / scale;
                }
            };
            let slope = grad.dot(&step);
            let tol = 1e-12 * (1.0 + ll.abs());
            let mut t = 1.0;
            let mut moved = false;
            while t > 1e-14 {
                let cand = &theta + &step * t;
                let ll_c = self.log_likelihood(&cand);
                if ll_c.is_finite() && ll_c + tol >= ll + 1e-4 * t * slope {
                    theta = cand;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
            (ll, grad, hess) = self.evaluate(&theta);
        }
        let gmax = grad.amax();
        if gmax < GRADIENT_TOLERANCE {
            return Ok((theta, ll, hess, trace.len()));
        }
        trace.push((trace.len(), ll, gmax));
        Err(Error::NonConvergence {
            iterations: trace.len(),
            last_gradient: gmax,
            trace,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AftTerm {
    pub name: String,
    pub coef: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `exp(coef)`: the time ratio for scale terms, the rho multiplier for shape terms.
    pub exp_coef: f64,
    pub exp_ci_low: f64,
    pub exp_ci_high: f64,
}

impl AftTerm {
    fn new(name: &str, coef: f64, se: f64) -> Self {
        let z = coef / se;
        let p_value = 2.0 * (1.0 - Normal::new(0.0, 1.0).unwrap().cdf(z.abs()));
        let (lo, hi) = (coef - Z95 * se, coef + Z95 * se);
        Self {
            name: name.to_string(),
            coef,
            se,
            z,
            p_value,
            ci_low: lo,
            ci_high: hi,
            exp_coef: coef.exp(),
            exp_ci_low: lo.exp(),
            exp_ci_high: hi.exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AftFit {
    pub n: usize,
    pub events: usize,
    /// Terms of `log lambda`.
    pub lambda_terms: Vec<AftTerm>,
    /// Terms of `log rho`.
    pub rho_terms: Vec<AftTerm>,
    /// `exp` of the shape intercept, with its Wald interval.
    pub rho: f64,
    pub rho_ci: (f64, f64),
    pub log_likelihood: f64,
    pub null_log_likelihood: f64,
    pub lr_statistic: f64,
    pub lr_df: usize,
    pub lr_p_value: f64,
    pub aic: f64,
    pub concordance: Option<f64>,
    pub iterations: usize,
}

impl AftFit {
    pub fn term(&self, name: &str) -> Option<&AftTerm> {
        self.lambda_terms.iter().find(|t| t.name == name)
    }

    pub fn time_ratio(&self, name: &str) -> Option<f64> {
        self.term(name).map(|t| t.exp_coef)
    }

    fn linear(terms: &[AftTerm], r: &SurvivalRecord) -> Result<f64> {
        terms
            .iter()
            .map(|t| {
                if t.name == INTERCEPT {
                    Ok(t.coef)
                } else {
                    r.covariates
                        .get(&t.name)
                        .map(|v| v * t.coef)
                        .ok_or_else(|| Error::invalid(format!("claim {} lacks covariate {}", r.claim_id, t.name)))
                }
            })
            .sum()
    }

    /// Predicted median survival time `lambda (ln 2)^(1/rho)`.
    pub fn predict_median(&self, r: &SurvivalRecord) -> Result<f64> {
        let log_lambda = Self::linear(&self.lambda_terms, r)?;
        let rho = Self::linear(&self.rho_terms, r)?.exp();
        Ok((log_lambda + std::f64::consts::LN_2.ln() / rho).exp())
    }

    pub fn concordance_on(&self, records: &[SurvivalRecord]) -> Result<Option<f64>> {
        let pred = records
            .iter()
            .map(|r| self.predict_median(r))
            .collect::<Result<Vec<_>>>()?;
        let t: Vec<f64> = records.iter().map(|r| r.duration).collect();
        let e: Vec<bool> = records.iter().map(|r| r.event).collect();
        Ok(concordance_index(&t, &e, &pred))
    }
}

/// Harrell's c-index. A pair is comparable when the shorter duration ended
/// in an event; tied predictions count one half. `None` without comparable pairs.
pub fn concordance_index(durations: &[f64], events: &[bool], predicted: &[f64]) -> Option<f64> {
    let n = durations.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| durations[a].total_cmp(&durations[b]));
    let (mut num, mut den) = (0.0, 0.0);
    for (pos, &i) in order.iter().enumerate() {
        if !events[i] {
            continue;
        }
        for &j in &order[pos + 1..] {
            if durations[j] <= durations[i] {
                continue;
            }
            den += 1.0;
            if predicted[i] < predicted[j] {
                num += 1.0;
            } else if predicted[i] == predicted[j] {
                num += 0.5;
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Fits the model on `records` with `covariates` on the scale and, when
/// given, `shape_covariates` on the shape (scalar shape otherwise).
pub fn fit_weibull_aft(
    records: &[SurvivalRecord],
    covariates: &[&str],
    shape_covariates: Option<&[&str]>,
) -> Result<AftFit> {
    let x = Design::from_records(records, covariates)?;
    let z = match shape_covariates {
        Some(cols) => Design::from_records(records, cols)?,
        None => Design::intercept(records.len()),
    };
    let t: Vec<f64> = records.iter().map(|r| r.duration).collect();
    let e: Vec<bool> = records.iter().map(|r| r.event).collect();
    fit_weibull_aft_matrix(&t, &e, &x, &z)
}

pub fn fit_weibull_aft_matrix(durations: &[f64], events: &[bool], x: &Design, z: &Design) -> Result<AftFit> {
    x.check_rank()?;
    z.check_rank()?;
    let n = durations.len();
    if n <= x.names.len() + z.names.len() {
        return Err(Error::invalid(format!(
            "{n} records are too few for {} parameters",
            x.names.len() + z.names.len()
        )));
    }
    let problem = AftProblem::new(durations, events, x.matrix.clone(), z.matrix.clone())?;
    let (theta, ll, hess, iterations) = problem.maximize()?;
    let cov = (-hess)
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("observed information is singular".into()))?;
    let p = x.names.len();
    let se = |k: usize| cov[(k, k)].max(0.0).sqrt();
    let lambda_terms: Vec<AftTerm> = (0..p).map(|k| AftTerm::new(&x.names[k], theta[k], se(k))).collect();
    let rho_terms: Vec<AftTerm> = (0..z.names.len())
        .map(|k| AftTerm::new(&z.names[k], theta[p + k], se(p + k)))
        .collect();

    let k_params = p + z.names.len();
    let (null_ll, lr_df) = if k_params > 2 {
        let null = AftProblem::new(
            durations,
            events,
            DMatrix::from_element(n, 1, 1.0),
            DMatrix::from_element(n, 1, 1.0),
        )?;
        (null.maximize()?.1, k_params - 2)
    } else {
        (ll, 0)
    };
    let lr_statistic = (2.0 * (ll - null_ll)).max(0.0);
    let lr_p_value = if lr_df > 0 {
        1.0 - ChiSquared::new(lr_df as f64).unwrap().cdf(lr_statistic)
    } else {
        1.0
    };

    let eta = &x.matrix * theta.rows(0, p);
    let zeta = &z.matrix * theta.rows(p, z.names.len());
    let pred: Vec<f64> = (0..n)
        .map(|i| eta[i] + std::f64::consts::LN_2.ln() / zeta[i].exp())
        .collect();
    let shape = &rho_terms[0];
    Ok(AftFit {
        n,
        events: events.iter().filter(|&&e| e).count(),
        rho: shape.exp_coef,
        rho_ci: (shape.exp_ci_low, shape.exp_ci_high),
        lambda_terms,
        rho_terms,
        log_likelihood: ll,
        null_log_likelihood: null_ll,
        lr_statistic,
        lr_df,
        lr_p_value,
        aic: 2.0 * k_params as f64 - 2.0 * ll,
        concordance: concordance_index(durations, events, &pred),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::simulate_aft;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn intercept_only_recovers_scale() {
        let recs = simulate_aft(&[100f64.ln()], 0.7, &[], |_| vec![], 5_000, 0.2, 3).unwrap();
        let fit = fit_weibull_aft(&recs, &[], None).unwrap();
        let b0 = &fit.lambda_terms[0];
        assert!(b0.ci_low <= 100f64.ln() && 100f64.ln() <= b0.ci_high, "{b0:?}");
        assert!((fit.rho - 0.7).abs() < 0.05);
        assert_eq!(fit.lr_df, 0);
        assert!((fit.aic - (4.0 - 2.0 * fit.log_likelihood)).abs() < 1e-9);
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let recs: Vec<SurvivalRecord> = (0..50)
            .map(|i| {
                SurvivalRecord::new(i, 1.0 + i as f64, true)
                    .with("a", (i % 3) as f64)
                    .with("b", (i % 3) as f64)
            })
            .collect();
        let err = fit_weibull_aft(&recs, &["a", "b"], None).unwrap_err();
        assert!(
            matches!(&err, Error::RankDeficient(m) if m.contains('b') && !m.contains("a,")),
            "{err}"
        );
        let constant: Vec<SurvivalRecord> = recs.iter().cloned().map(|r| r.with("c", 2.0)).collect();
        assert!(fit_weibull_aft(&constant, &["c"], None).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let n = 40;
            let t: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..50.0)).collect();
            let e: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
            let x = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { rng.gen_range(-1.0..1.0) });
            let z = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.gen_range(-1.0..1.0) });
            let prob = AftProblem::new(&t, &e, x, z).unwrap();
            let theta = DVector::from_fn(5, |i, _| if i == 0 { 2.0 } else { rng.gen_range(-0.5..0.5) });
            let (_, g, h) = prob.evaluate(&theta);
            for k in 0..5 {
                let step = 1e-6;
                let mut up = theta.clone();
                up[k] += step;
                let mut dn = theta.clone();
                dn[k] -= step;
                let fd = (prob.log_likelihood(&up) - prob.log_likelihood(&dn)) / (2.0 * step);
                assert!(
                    (fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1.0),
                    "k={k} fd={fd} g={}",
                    g[k]
                );
                let (_, gu, _) = prob.evaluate(&up);
                let (_, gd, _) = prob.evaluate(&dn);
                for m in 0..5 {
                    let fdh = (gu[m] - gd[m]) / (2.0 * step);
                    assert!((fdh - h[(m, k)]).abs() <= 1e-4 * h[(m, k)].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn concordance_extremes() {
        let t = [1.0, 2.0, 3.0, 4.0];
        let e = [true; 4];
        assert_eq!(concordance_index(&t, &e, &[1.0, 2.0, 3.0, 4.0]), Some(1.0));
        assert_eq!(concordance_index(&t, &e, &[4.0, 3.0, 2.0, 1.0]), Some(0.0));
        assert_eq!(concordance_index(&t, &e, &[1.0; 4]), Some(0.5));
        assert_eq!(concordance_index(&t, &[false; 4], &[1.0; 4]), None);
    }

    #[test]
    fn random_predictions_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: Vec<f64> = (0..3000).map(|_| rng.gen::<f64>()).collect();
        let p: Vec<f64> = (0..3000).map(|_| rng.gen::<f64>()).collect();
        let c = concordance_index(&t, &vec![true; 3000], &p).unwrap();
        assert!((c - 0.5).abs() < 0.02, "{c}");
    }

    #[test]
    fn binary_covariate_time_ratio() {
        let recs = simulate_aft(
            &[5.98, 0.24],
            0.70,
            &["high"],
            |r| vec![f64::from(u8::from(r.gen_bool(0.5)))],
            5_000,
            0.2,
            7,
        )
        .unwrap();
        let fit = fit_weibull_aft(&recs, &["high"], None).unwrap();
        let tr = fit.time_ratio("high").unwrap();
        assert!((1.15..=1.41).contains(&tr), "{tr}");
        assert!((0.65..=0.75).contains(&fit.rho), "{}", fit.rho);
        assert!(fit.lr_df == 1 && fit.lr_statistic > 0.0);
        assert!(fit.concordance.unwrap() > 0.5);
        let g1 = fit
            .predict_median(&SurvivalRecord::new(0, 1.0, true).with("high", 1.0))
            .unwrap();
        let g0 = fit
            .predict_median(&SurvivalRecord::new(0, 1.0, true).with("high", 0.0))
            .unwrap();
        assert!((g1 / g0 - tr).abs() < 1e-9);
    }

    #[test]
    fn shape_covariates_supported() {
        let recs = simulate_aft(
            &[3.0, 0.5],
            1.2,
            &["x"],
            |r| vec![r.gen_range(-1.0..1.0)],
            2_000,
            0.1,
            2,
        )
        .unwrap();
        let fit = fit_weibull_aft(&recs, &["x"], Some(&["x"])).unwrap();
        assert_eq!(fit.rho_terms.len(), 2);
        assert!(fit.rho_terms[1].coef.abs() < 0.2, "{:?}", fit.rho_terms[1]);
    }

    #[test]
    fn rejects_zero_durations() {
        let recs = vec![
            SurvivalRecord::new(0, 0.0, true),
            SurvivalRecord::new(1, 1.0, true),
            SurvivalRecord::new(2, 2.0, true),
        ];
        assert!(fit_weibull_aft(&recs, &[], None).is_err());
    }
}
