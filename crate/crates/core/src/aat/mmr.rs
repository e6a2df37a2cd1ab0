//! Maximal marginal relevance sampling of cluster representatives.

use crate::vector::dot64;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot64(a, a).sqrt();
    let nb = dot64(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot64(a, b) / (na * nb)
    }
}

/// Picks up to `n` member positions. The first is the member most similar
/// to the centroid; each next one maximizes
/// `lambda * sim(centroid, d) - (1 - lambda) * max_s sim(d, s)`.
/// Ties go to the lower position.
pub fn mmr_sample(members: &[Vec<f64>], n: usize, lambda: f64) -> Vec<usize> {
    let m = members.len();
    if m == 0 || n == 0 {
        return Vec::new();
    }
    let dim = members[0].len();
    let mut centroid = vec![0.0; dim];
    for v in members {
        for (c, x) in centroid.iter_mut().zip(v) {
            *c += x / m as f64;
        }
    }
    let relevance: Vec<f64> = members.iter().map(|v| cosine(&centroid, v)).collect();
    let mut chosen = Vec::with_capacity(n.min(m));
    let mut picked = vec![false; m];
    let mut max_sim = vec![f64::NEG_INFINITY; m];
    while chosen.len() < n.min(m) {
        let mut best: Option<(usize, f64)> = None;
        for d in (0..m).filter(|&d| !picked[d]) {
            let score = if chosen.is_empty() {
                relevance[d]
            } else {
                lambda * relevance[d] - (1.0 - lambda) * max_sim[d]
            };
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((d, score));
            }
        }
        let (d, _) = best.expect("unpicked member remains");
        picked[d] = true;
        chosen.push(d);
        for (j, v) in members.iter().enumerate() {
            if !picked[j] {
                max_sim[j] = max_sim[j].max(cosine(v, &members[d]));
            }
        }
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Straight re-implementation of the greedy MMR trace.
    fn oracle(v: &[Vec<f64>], n: usize, lambda: f64) -> Vec<usize> {
        let m = v.len() as f64;
        let c: Vec<f64> = (0..v[0].len())
            .map(|k| v.iter().map(|x| x[k]).sum::<f64>() / m)
            .collect();
        let mut sel: Vec<usize> = Vec::new();
        while sel.len() < n.min(v.len()) {
            let mut best = usize::MAX;
            let mut best_score = f64::NEG_INFINITY;
            for d in 0..v.len() {
                if sel.contains(&d) {
                    continue;
                }
                let rel = cosine(&c, &v[d]);
                let score = if sel.is_empty() {
                    rel
                } else {
                    let red = sel
                        .iter()
                        .map(|&s| cosine(&v[d], &v[s]))
                        .fold(f64::NEG_INFINITY, f64::max);
                    lambda * rel - (1.0 - lambda) * red
                };
                if score > best_score {
                    best = d;
                    best_score = score;
                }
            }
            sel.push(best);
        }
        sel
    }

    #[test]
    fn six_point_trace() {
        let v = vec![
            vec![1.0, 0.1],
            vec![0.9, 0.3],
            vec![0.2, 1.0],
            vec![0.7, 0.7],
            vec![1.0, -0.4],
            vec![0.5, 0.6],
        ];
        assert_eq!(mmr_sample(&v, 6, 0.5), oracle(&v, 6, 0.5));
        assert_eq!(mmr_sample(&v, 3, 0.5), oracle(&v, 3, 0.5));
    }

    #[test]
    fn duplicates_are_penalized() {
        let v = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.6, 0.8]];
        assert_eq!(mmr_sample(&v, 2, 0.5), vec![0, 2]);
    }

    #[test]
    fn oversized_request_returns_all() {
        let v = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let mut got = mmr_sample(&v, 20, 0.5);
        got.sort();
        assert_eq!(got, vec![0, 1]);
        assert!(mmr_sample(&[], 3, 0.5).is_empty());
    }

    fn points() -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 2..15)
    }

    proptest! {
        #[test]
        fn lambda_one_is_relevance_order(v in points()) {
            let m = v.len() as f64;
            let c: Vec<f64> = (0..3).map(|k| v.iter().map(|x| x[k]).sum::<f64>() / m).collect();
            let mut order: Vec<usize> = (0..v.len()).collect();
            order.sort_by(|&a, &b| cosine(&c, &v[b]).partial_cmp(&cosine(&c, &v[a])).unwrap().then(a.cmp(&b)));
            prop_assert_eq!(mmr_sample(&v, v.len(), 1.0), order);
        }

        #[test]
        fn lambda_zero_second_pick_is_farthest(v in points()) {
            let got = mmr_sample(&v, 2, 0.0);
            let first = got[0];
            let best = (0..v.len())
                .filter(|&d| d != first)
                .map(|d| cosine(&v[d], &v[first]))
                .fold(f64::INFINITY, f64::min);
            prop_assert!((cosine(&v[got[1]], &v[first]) - best).abs() < 1e-12);
        }

        #[test]
        fn matches_oracle(v in points(), lambda in 0.0f64..1.0) {
            prop_assert_eq!(mmr_sample(&v, 5, lambda), oracle(&v, 5, lambda));
        }
    }
}
