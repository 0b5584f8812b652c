use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::{squared_euclidean, EmbeddingMatrix};

pub const N_INIT: usize = 4;
pub const MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn plus_plus(m: &EmbeddingMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut centers = vec![m.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = m.rows().map(|r| squared_euclidean(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = m.row(pick).to_vec();
        for (i, r) in m.rows().enumerate() {
            d2[i] = d2[i].min(squared_euclidean(r, &c));
        }
        centers.push(c);
    }
    centers
}

fn nearest(row: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = squared_euclidean(row, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn lloyd(m: &EmbeddingMatrix, mut centers: Vec<Vec<f64>>) -> KMeansFit {
    let (n, k, dim) = (m.len(), centers.len(), m.dim());
    let mut labels = vec![usize::MAX; n];
    for _ in 0..MAX_ITER {
        let mut changed = false;
        let mut dist = vec![0.0; n];
        for i in 0..n {
            let (j, d) = nearest(m.row(i), &centers);
            dist[i] = d;
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        // an empty cluster takes the point farthest from its center
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..n).filter(|&i| counts[labels[i]] > 1).max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    counts[labels[i]] -= 1;
                    labels[i] = j;
                    counts[j] = 1;
                    dist[i] = 0.0;
                    changed = true;
                }
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        for (i, &l) in labels.iter().enumerate() {
            for (s, x) in sums[l].iter_mut().zip(m.row(i)) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = (0..n).map(|i| squared_euclidean(m.row(i), &centers[labels[i]])).sum();
    KMeansFit { labels, centers, inertia }
}

/// Lloyd's algorithm from k-means++ seeds, best of [`N_INIT`] restarts.
pub fn kmeans(m: &EmbeddingMatrix, k: usize, seed: u64) -> KMeansFit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..N_INIT {
        let fit = lloyd(m, plus_plus(m, k, &mut rng));
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    best.expect("at least one restart")
}
