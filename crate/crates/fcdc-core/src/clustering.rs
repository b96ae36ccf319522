//! K-means with k-means++ seeding over deep features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of one k-means fit.
#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// Row-major `[K, h]` centroid matrix.
    pub centroids: Tensor,
    pub assignments: Vec<usize>,
    /// Sum of squared euclidean distances to assigned centroids.
    pub inertia: f64,
    pub iterations_run: usize,
    /// Seed that produced this result (meaningful for best-of restarts).
    pub seed: u64,
}

/// Tuning knobs; the defaults match the library-wide policy.
#[derive(Debug, Clone, Copy)]
pub struct KMeansParams {
    pub max_iters: usize,
    pub rel_tol: f64,
    /// L2-normalize rows before clustering (cosine-trained features).
    pub normalize: bool,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            max_iters: 300,
            rel_tol: 1e-6,
            normalize: false,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn rows_of(x: &Tensor) -> Result<(usize, usize)> {
    let s = x.shape();
    if s.len() != 2 {
        return Err(Error::invalid("kmeans", "input must be [N, h]"));
    }
    Ok((s[0], s[1]))
}

/// k-means++ seeding: first centroid uniform, the rest by squared-distance
/// weighted sampling.
fn plus_plus_init(data: &[f64], n: usize, h: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centroids = Vec::with_capacity(k * h);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(&data[first * h..(first + 1) * h]);
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(&data[i * h..(i + 1) * h], &centroids[..h]))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining mass is zero (duplicate points); fall back to uniform.
            rng.gen_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(&data[pick * h..(pick + 1) * h]);
        let new_c = centroids[start..start + h].to_vec();
        for i in 0..n {
            let d = sq_dist(&data[i * h..(i + 1) * h], &new_c);
            if d < d2[i] {
                d2[i] = d;
            }
        }
        let _ = c;
    }
    centroids
}

/// Lloyd iterations from a k-means++ start. Deterministic per seed; empty
/// clusters are repaired by seizing the point currently farthest from its
/// centroid.
pub fn kmeans_fit(
    x: &Tensor,
    k: usize,
    seed: u64,
    params: KMeansParams,
) -> Result<KMeansResult> {
    let (n, h) = rows_of(x)?;
    if k == 0 {
        return Err(Error::invalid("kmeans", "K must be positive"));
    }
    if k > n {
        return Err(Error::invalid(
            "kmeans",
            format!("K = {k} exceeds the number of points {n}"),
        ));
    }
    if !x.all_finite() {
        return Err(Error::NonFinite { op: "kmeans" });
    }

    let data: Vec<f64> = if params.normalize {
        let mut d = x.data().to_vec();
        for row in d.chunks_exact_mut(h) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
        }
        d
    } else {
        x.data().to_vec()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(&data, n, h, k, &mut rng);
    let mut assignments = vec![0usize; n];
    let mut inertia = f64::INFINITY;
    let mut iterations_run = 0;

    for iter in 0..params.max_iters {
        iterations_run = iter + 1;
        // Assignment step; ties break to the lowest centroid index.
        let mut new_inertia = 0.0;
        let mut changed = false;
        for i in 0..n {
            let row = &data[i * h..(i + 1) * h];
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(row, &centroids[c * h..(c + 1) * h]);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
            new_inertia += best_d;
        }

        // Repair empty clusters before the update step.
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        let mut seized = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            // Farthest point from its current centroid, not already seized.
            let mut far_i = usize::MAX;
            let mut far_d = -1.0;
            for i in 0..n {
                if seized[i] || counts[assignments[i]] <= 1 {
                    continue;
                }
                let d = sq_dist(
                    &data[i * h..(i + 1) * h],
                    &centroids[assignments[i] * h..(assignments[i] + 1) * h],
                );
                if d > far_d {
                    far_d = d;
                    far_i = i;
                }
            }
            if far_i == usize::MAX {
                return Err(Error::invalid("kmeans", "cannot repair empty cluster"));
            }
            counts[assignments[far_i]] -= 1;
            assignments[far_i] = c;
            counts[c] = 1;
            seized[far_i] = true;
            centroids[c * h..(c + 1) * h]
                .copy_from_slice(&data[far_i * h..(far_i + 1) * h]);
            changed = true;
        }

        // Update step: centroids move to cluster means.
        let mut sums = vec![0.0f64; k * h];
        let mut cnt = vec![0usize; k];
        for i in 0..n {
            let a = assignments[i];
            cnt[a] += 1;
            for (s, v) in sums[a * h..(a + 1) * h]
                .iter_mut()
                .zip(&data[i * h..(i + 1) * h])
            {
                *s += v;
            }
        }
        for c in 0..k {
            for v in sums[c * h..(c + 1) * h].iter_mut() {
                *v /= cnt[c] as f64;
            }
        }
        centroids = sums;

        let rel_change = if inertia.is_finite() && inertia > 0.0 {
            (inertia - new_inertia) / inertia
        } else {
            f64::INFINITY
        };
        let converged = !changed || rel_change.abs() < params.rel_tol;
        inertia = new_inertia;
        if converged {
            break;
        }
    }

    // Final inertia against the updated centroids.
    let mut final_inertia = 0.0;
    for i in 0..n {
        final_inertia += sq_dist(
            &data[i * h..(i + 1) * h],
            &centroids[assignments[i] * h..(assignments[i] + 1) * h],
        );
    }
    inertia = inertia.min(final_inertia);

    Ok(KMeansResult {
        centroids: Tensor::new(vec![k, h], centroids)?,
        assignments,
        inertia,
        iterations_run,
        seed,
    })
}

/// Minimum-inertia result over `n_restarts` seeded fits. The winner is the
/// lowest (inertia, seed) pair, so ties resolve deterministically.
pub fn kmeans_best_of(
    x: &Tensor,
    k: usize,
    n_restarts: usize,
    base_seed: u64,
    params: KMeansParams,
) -> Result<KMeansResult> {
    if n_restarts == 0 {
        return Err(Error::invalid("kmeans_best_of", "need at least one restart"));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..n_restarts {
        let result = kmeans_fit(x, k, base_seed + r as u64, params)?;
        best = match best {
            None => Some(result),
            Some(b) if result.inertia < b.inertia => Some(result),
            Some(b) => Some(b),
        };
    }
    Ok(best.unwrap())
}
