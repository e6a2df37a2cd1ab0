//! Small dense-vector helpers shared by the retrieval and clustering code.

/// Dot product accumulated in `f64`.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] as f64 * b[i] as f64;
        acc[1] += a[i + 1] as f64 * b[i + 1] as f64;
        acc[2] += a[i + 2] as f64 * b[i + 2] as f64;
        acc[3] += a[i + 3] as f64 * b[i + 3] as f64;
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        sum += a[i] as f64 * b[i] as f64;
    }
    sum
}

pub fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Scales `v` to unit length in place; returns the original norm.
pub fn normalize(v: &mut [f32]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / n) as f32;
        }
    }
    n
}

pub fn normalize64(v: &mut [f64]) -> f64 {
    let n = dot64(v, v).sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

/// Cosine distance between unit vectors, `1 - similarity`, clamped to `[0, 2]`.
///
/// Distances below [`DISTANCE_EPS`] are snapped to exactly zero: identical
/// vectors stored as `f32` otherwise report residuals around `1e-7`.
pub fn cosine_distance(similarity: f64) -> f64 {
    let d = (1.0 - similarity).clamp(0.0, 2.0);
    if d < DISTANCE_EPS {
        0.0
    } else {
        d
    }
}

pub const DISTANCE_EPS: f64 = 1e-6;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f32> = (0..11).map(|i| i as f32 * 0.5).collect();
        let b: Vec<f32> = (0..11).map(|i| 1.0 - i as f32).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| *x as f64 * *y as f64).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
    }

    #[test]
    fn identical_unit_vectors_have_zero_distance() {
        let mut v = vec![0.3f32, -0.2, 0.9, 0.11, 0.05];
        normalize(&mut v);
        assert_eq!(cosine_distance(dot(&v, &v)), 0.0);
    }
}
