use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest-inertia run wins.
    pub n_init: usize,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            seed,
            max_iters: 100,
            tol: 1e-6,
            n_init: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index per example id, in input order.
    pub assignment: IndexMap<String, usize>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub inertia_trace: Vec<f64>,
}

impl Clustering {
    pub fn members(&self, cluster: usize) -> impl Iterator<Item = (usize, &str)> {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, (_, &c))| c == cluster)
            .map(|(i, (id, _))| (i, id.as_str()))
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(vectors: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![vectors[first].clone()];
    let mut d2: Vec<f64> = vectors.iter().map(|v| sq_dist(v, &vectors[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // every point coincides with a centroid; take an unused index
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.push(vectors[pick].clone());
        for (i, v) in vectors.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(v, &vectors[pick]));
        }
    }
    centroids
}

struct Run {
    centroids: Vec<Vec<f64>>,
    labels: Vec<usize>,
    inertia: f64,
    trace: Vec<f64>,
}

fn lloyd(vectors: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, cfg: &KMeansConfig) -> Run {
    let k = centroids.len();
    let dim = vectors[0].len();
    let mut labels = vec![0usize; vectors.len()];
    let mut trace: Vec<f64> = Vec::new();
    for _ in 0..cfg.max_iters.max(1) {
        let mut dists = vec![0.0; vectors.len()];
        for (i, v) in vectors.iter().enumerate() {
            let (c, d) = nearest(v, &centroids);
            labels[i] = c;
            dists[i] = d;
        }

        // Reseed each empty cluster with the point farthest from its centroid.
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&c| sizes[c] += 1);
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            let donor = (0..vectors.len())
                .filter(|&i| sizes[labels[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("k <= n guarantees a cluster with two members");
            sizes[labels[donor]] -= 1;
            labels[donor] = empty;
            sizes[empty] = 1;
            dists[donor] = 0.0;
            centroids[empty] = vectors[donor].clone();
        }

        let mut sums = vec![vec![0.0; dim]; k];
        for (v, &c) in vectors.iter().zip(&labels) {
            for (s, x) in sums[c].iter_mut().zip(v) {
                *s += x;
            }
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            let mean: Vec<f64> = sums[c].iter().map(|s| s / sizes[c] as f64).collect();
            shift = shift.max(sq_dist(&mean, &centroids[c]).sqrt());
            centroids[c] = mean;
        }

        let inertia: f64 = vectors
            .iter()
            .zip(&labels)
            .map(|(v, &c)| sq_dist(v, &centroids[c]))
            .sum();
        if let Some(&prev) = trace.last() {
            debug_assert!(
                inertia <= prev + 1e-9 * prev.abs().max(1.0),
                "inertia increased from {prev} to {inertia}"
            );
        }
        trace.push(inertia);
        if shift < cfg.tol {
            break;
        }
    }
    Run {
        centroids,
        labels,
        inertia: *trace.last().expect("at least one iteration"),
        trace,
    }
}

/// Single-point transfers after Lloyd converges: a point moves to another
/// cluster whenever that lowers the total inertia once both centroids are
/// updated. Fixed points of this pass are also Lloyd fixed points, and it
/// escapes many of Lloyd's local optima.
fn hartigan(vectors: &[Vec<f64>], mut run: Run) -> Run {
    let k = run.centroids.len();
    let dim = vectors[0].len();
    let mut sizes = vec![0usize; k];
    let mut sums = vec![vec![0.0; dim]; k];
    for (v, &c) in vectors.iter().zip(&run.labels) {
        sizes[c] += 1;
        sums[c].iter_mut().zip(v).for_each(|(s, x)| *s += x);
    }
    let mean = |sum: &[f64], n: usize| -> Vec<f64> { sum.iter().map(|s| s / n as f64).collect() };
    let mut moved = true;
    let mut passes = 0;
    while moved && passes < 100 {
        moved = false;
        passes += 1;
        for (i, v) in vectors.iter().enumerate() {
            let a = run.labels[i];
            if sizes[a] < 2 {
                continue;
            }
            let na = sizes[a] as f64;
            let removal = na / (na - 1.0) * sq_dist(v, &run.centroids[a]);
            let mut best: Option<(usize, f64)> = None;
            for b in (0..k).filter(|&b| b != a) {
                let nb = sizes[b] as f64;
                let add = nb / (nb + 1.0) * sq_dist(v, &run.centroids[b]);
                if best.is_none_or(|(_, x)| add < x) {
                    best = Some((b, add));
                }
            }
            let Some((b, add)) = best else { continue };
            if add < removal - 1e-12 * removal.max(1.0) {
                sizes[a] -= 1;
                sizes[b] += 1;
                sums[a].iter_mut().zip(v).for_each(|(s, x)| *s -= x);
                sums[b].iter_mut().zip(v).for_each(|(s, x)| *s += x);
                run.centroids[a] = mean(&sums[a], sizes[a]);
                run.centroids[b] = mean(&sums[b], sizes[b]);
                run.labels[i] = b;
                moved = true;
            }
        }
    }
    if passes > 1 {
        // recompute exactly; incremental sums drift
        let mut sums = vec![vec![0.0; dim]; k];
        for (v, &c) in vectors.iter().zip(&run.labels) {
            sums[c].iter_mut().zip(v).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            run.centroids[c] = mean(&sums[c], sizes[c]);
        }
        let inertia: f64 = vectors
            .iter()
            .zip(&run.labels)
            .map(|(v, &c)| sq_dist(v, &run.centroids[c]))
            .sum();
        run.inertia = inertia;
        run.trace.push(inertia);
    }
    run
}

/// Lloyd's algorithm with seeded k-means++ initialization on Euclidean
/// distance, refined by single-point transfers.
///
/// `ids` and `vectors` are parallel. Deterministic for a given seed.
pub fn kmeans(ids: &[String], vectors: &[Vec<f64>], cfg: &KMeansConfig) -> Result<Clustering> {
    if ids.len() != vectors.len() {
        return Err(Error::config("kmeans ids and vectors differ in length"));
    }
    if cfg.k == 0 {
        return Err(Error::config("kmeans needs k >= 1"));
    }
    if cfg.k > vectors.len() {
        return Err(Error::config(format!(
            "kmeans k = {} exceeds the {} points",
            cfg.k,
            vectors.len()
        )));
    }
    let dim = vectors[0].len();
    if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::degenerate("kmeans vectors must share a positive dimension"));
    }

    let mut best: Option<Run> = None;
    for restart in 0..cfg.n_init.max(1) {
        let mut rng = crate::util::keyed_rng(cfg.seed, &[b"kmeans", &(restart as u64).to_le_bytes()]);
        let init = plus_plus_init(vectors, cfg.k, &mut rng);
        let run = hartigan(vectors, lloyd(vectors, init, cfg));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    Ok(Clustering {
        k: cfg.k,
        centroids: best.centroids,
        assignment: ids.iter().cloned().zip(best.labels).collect(),
        inertia: best.inertia,
        inertia_trace: best.trace,
    })
}

/// Members of every cluster ordered by distance to the centroid (ties by id).
///
/// `vectors` must be in the order of `clustering.assignment`. Empty clusters
/// yield empty lists.
pub fn ranked_members(clustering: &Clustering, vectors: &[Vec<f64>]) -> Vec<Vec<String>> {
    (0..clustering.k)
        .map(|c| {
            let mut members: Vec<(f64, &str)> = clustering
                .members(c)
                .map(|(i, id)| (sq_dist(&vectors[i], &clustering.centroids[c]), id))
                .collect();
            members.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
            members.into_iter().map(|(_, id)| id.to_string()).collect()
        })
        .collect()
}

/// The member closest to each centroid, one per non-empty cluster, ties broken
/// by lexicographically smaller id.
pub fn nearest_to_centroids(clustering: &Clustering, vectors: &[Vec<f64>]) -> Vec<String> {
    ranked_members(clustering, vectors)
        .into_iter()
        .filter_map(|m| m.into_iter().next())
        .collect()
}
