use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// R^2 above this counts as perfect collinearity.
const COLLINEAR_R2: f64 = 1.0 - 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifValue {
    pub name: String,
    /// `f64::INFINITY` when `collinear`.
    #[serde(with = "infinite_as_null")]
    pub vif: f64,
    pub collinear: bool,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// `1 / (1 - R^2_j)` from least-squares regression (with intercept) of each
/// column of `columns` (covariates only, no intercept) on the others.
pub fn vif(names: &[&str], columns: &DMatrix<f64>) -> Result<Vec<VifValue>> {
    let (n, p) = columns.shape();
    if p < 2 || names.len() != p {
        return Err(Error::invalid("vif needs at least two named covariates"));
    }
    if n <= p {
        return Err(Error::invalid(format!(
            "vif needs more rows ({n}) than covariates ({p})"
        )));
    }
    (0..p)
        .map(|j| {
            let y: DVector<f64> = columns.column(j).into_owned();
            let mean = y.mean();
            let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
            let r2 = if sst == 0.0 {
                1.0
            } else {
                let mut others = DMatrix::from_element(n, p, 1.0);
                for (c, k) in (0..p).filter(|&k| k != j).enumerate() {
                    others.set_column(c + 1, &columns.column(k));
                }
                let svd = others.clone().svd(true, true);
                let beta = svd
                    .solve(&y, 1e-12 * svd.singular_values.max())
                    .map_err(|e| Error::invalid(format!("least squares failed: {e}")))?;
                let resid = &y - &others * beta;
                1.0 - resid.norm_squared() / sst
            };
            let collinear = r2 >= COLLINEAR_R2;
            Ok(VifValue {
                name: names[j].to_string(),
                vif: if collinear { f64::INFINITY } else { 1.0 / (1.0 - r2) },
                collinear,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn orthogonal_columns() {
        // centred, mutually orthogonal
        let m = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0]);
        for v in vif(&["a", "b"], &m).unwrap() {
            assert!((v.vif - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicated_column_is_infinite() {
        let m = DMatrix::from_row_slice(
            5,
            3,
            &[
                1.0, 1.0, 0.3, 2.0, 2.0, 0.1, 3.0, 3.0, 0.9, 4.0, 4.0, 0.4, 5.0, 5.0, 0.2,
            ],
        );
        let v = vif(&["a", "b", "c"], &m).unwrap();
        assert!(v[0].collinear && v[1].collinear && !v[2].collinear);
        assert!(v[0].vif.is_infinite());
        let json = serde_json::to_string(&v[0]).unwrap();
        assert!(json.contains("\"vif\":null"));
    }

    #[test]
    fn matches_inverse_correlation_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 300;
        let mut m = DMatrix::zeros(n, 3);
        for i in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let c: f64 = StandardNormal.sample(&mut rng);
            m[(i, 0)] = a;
            m[(i, 1)] = 0.8 * a + 0.6 * b;
            m[(i, 2)] = 0.5 * a - 0.4 * b + c;
        }
        let mut corr = DMatrix::zeros(3, 3);
        let cols: Vec<DVector<f64>> = (0..3)
            .map(|j| {
                let c = m.column(j).into_owned();
                let mean = c.mean();
                let centred = c.map(|v| v - mean);
                let norm = centred.norm();
                centred / norm
            })
            .collect();
        for a in 0..3 {
            for b in 0..3 {
                corr[(a, b)] = cols[a].dot(&cols[b]);
            }
        }
        let inv = corr.try_inverse().unwrap();
        let got = vif(&["a", "b", "c"], &m).unwrap();
        for j in 0..3 {
            assert!(
                (got[j].vif - inv[(j, j)]).abs() < 1e-9,
                "{} vs {}",
                got[j].vif,
                inv[(j, j)]
            );
        }
    }
}
