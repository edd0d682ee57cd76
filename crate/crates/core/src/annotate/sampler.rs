//! Chunk sampler for the iterative loop: a mix of items most similar to what
//! is already annotated and seeded uniform picks.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::embed::cosine;
use crate::error::{Error, Result};
use crate::util::keyed_rng;

/// Which pool items count as "close to the annotated set".
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerVariant {
    /// `d_j = 1 - max_i cos(x_i, x_j)`, smallest first: items with a near
    /// neighbour among the annotated ones.
    #[default]
    NearestAnnotated,
    /// `d_j = min_i cos(x_i, x_j)`, smallest first. Picks items far from at
    /// least one annotated example; kept for ablations.
    Literal,
}

/// Splits `k` into `(k_random, k_sim)` with `k_random = round(epsilon * k)`.
pub fn split_budget(k: usize, epsilon: f64) -> (usize, usize) {
    // the epsilon keeps products like 0.35 * 10 = 3.4999999999999996 rounding up
    let k_random = ((epsilon * k as f64 + 0.5 + 1e-9).floor() as usize).min(k);
    (k_random, k - k_random)
}

/// Draws `min(k, pool.len())` pool items.
///
/// `annotated` holds embeddings of the already-annotated examples and `pool`
/// pairs candidate ids with their embeddings. Returns ascending pool indices.
pub fn epsilon_random_sampler(
    annotated: &[&[f64]],
    pool: &[(&str, &[f64])],
    k: usize,
    epsilon: f64,
    variant: SamplerVariant,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::config(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if pool.len() <= k {
        return Ok((0..pool.len()).collect());
    }
    let (k_random, k_sim) = split_budget(k, epsilon);
    if k_sim > 0 && annotated.is_empty() {
        return Err(Error::config(
            "similarity sampling needs at least one annotated example (use epsilon = 1)",
        ));
    }

    let mut chosen = vec![false; pool.len()];
    if k_sim > 0 {
        let mut scored = Vec::with_capacity(pool.len());
        for (j, (id, x)) in pool.iter().enumerate() {
            let mut best = match variant {
                SamplerVariant::NearestAnnotated => f64::NEG_INFINITY,
                SamplerVariant::Literal => f64::INFINITY,
            };
            for a in annotated {
                let c = cosine(a, x)?;
                best = match variant {
                    SamplerVariant::NearestAnnotated => best.max(c),
                    SamplerVariant::Literal => best.min(c),
                };
            }
            let d = match variant {
                SamplerVariant::NearestAnnotated => 1.0 - best,
                SamplerVariant::Literal => best,
            };
            scored.push((d, *id, j));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        for &(_, _, j) in &scored[..k_sim] {
            chosen[j] = true;
        }
    }
    if k_random > 0 {
        let rest: Vec<usize> = (0..pool.len()).filter(|&j| !chosen[j]).collect();
        let mut rng = keyed_rng(seed, &[b"epsilon-sampler"]);
        for i in index::sample(&mut rng, rest.len(), k_random) {
            chosen[rest[i]] = true;
        }
    }
    Ok((0..pool.len()).filter(|&j| chosen[j]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(x: f64, y: f64) -> Vec<f64> {
        let n = (x * x + y * y).sqrt();
        vec![x / n, y / n]
    }

    #[test]
    fn budget_rounding() {
        assert_eq!(split_budget(500, 0.8), (400, 100));
        assert_eq!(split_budget(3, 0.5), (2, 1));
        assert_eq!(split_budget(3, 1.0), (3, 0));
        assert_eq!(split_budget(3, 0.0), (0, 3));
    }

    #[test]
    fn epsilon_one_is_pure_random() {
        let vecs: Vec<Vec<f64>> = (0..10).map(|i| unit(1.0, i as f64)).collect();
        let ids: Vec<String> = (0..10).map(|i| format!("x{i}")).collect();
        let pool: Vec<(&str, &[f64])> = ids.iter().map(String::as_str).zip(vecs.iter().map(Vec::as_slice)).collect();
        let a = epsilon_random_sampler(&[], &pool, 3, 1.0, SamplerVariant::default(), 4).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, epsilon_random_sampler(&[], &pool, 3, 1.0, SamplerVariant::default(), 4).unwrap());
    }

    #[test]
    fn epsilon_zero_picks_most_similar() {
        let anchor = vec![1.0, 0.0];
        let u = [unit(0.99, 0.1), vec![0.0, 1.0], vec![-1.0, 0.0]];
        let pool: Vec<(&str, &[f64])> = vec![("u1", &u[0]), ("u2", &u[1]), ("u3", &u[2])];
        let got = epsilon_random_sampler(&[&anchor], &pool, 2, 0.0, SamplerVariant::default(), 0).unwrap();
        assert_eq!(got, vec![0, 1]);
        let lit = epsilon_random_sampler(&[&anchor], &pool, 1, 0.0, SamplerVariant::Literal, 0).unwrap();
        assert_eq!(lit, vec![2]);
    }

    #[test]
    fn small_pool_returned_whole() {
        let v = vec![1.0, 0.0];
        let pool: Vec<(&str, &[f64])> = vec![("a", &v), ("b", &v), ("c", &v)];
        assert_eq!(epsilon_random_sampler(&[], &pool, 5, 0.0, SamplerVariant::default(), 0).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn similarity_without_annotations_is_config_error() {
        let v = vec![1.0, 0.0];
        let pool: Vec<(&str, &[f64])> = vec![("a", &v), ("b", &v), ("c", &v)];
        assert!(matches!(
            epsilon_random_sampler(&[], &pool, 2, 0.5, SamplerVariant::default(), 0),
            Err(Error::Config(_))
        ));
        assert!(epsilon_random_sampler(&[], &pool, 2, 1.5, SamplerVariant::default(), 0).is_err());
    }

    #[test]
    fn similarity_ties_break_by_id() {
        let a = vec![1.0, 0.0];
        let v = vec![0.0, 1.0];
        let pool: Vec<(&str, &[f64])> = vec![("c", &v), ("a", &v), ("b", &v)];
        assert_eq!(epsilon_random_sampler(&[&a], &pool, 2, 0.0, SamplerVariant::default(), 0).unwrap(), vec![1, 2]);
    }
}
