use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embedding::{euclidean, squared_euclidean, EmbeddingMatrix};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InternalScores {
    pub silhouette: Option<f64>,
    pub dbi: Option<f64>,
    pub chi: Option<f64>,
}

/// Point indices per label, in label order.
fn groups(labels: &[i64], keep_noise: bool) -> Vec<Vec<usize>> {
    let mut g: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if l >= 0 || keep_noise {
            g.entry(l).or_default().push(i);
        }
    }
    g.into_values().collect()
}

fn silhouette_of(m: &EmbeddingMatrix, groups: &[Vec<usize>]) -> Option<f64> {
    let n: usize = groups.iter().map(Vec::len).sum();
    if groups.len() < 2 || groups.len() >= n {
        return None;
    }
    let mut total = 0.0;
    for (gi, g) in groups.iter().enumerate() {
        for &i in g {
            if g.len() == 1 {
                continue; // s = 0 for singletons
            }
            let mean_to = |h: &Vec<usize>| h.iter().map(|&j| euclidean(m.row(i), m.row(j))).sum::<f64>();
            let a = mean_to(g) / (g.len() - 1) as f64;
            let b = groups
                .iter()
                .enumerate()
                .filter(|(gj, _)| *gj != gi)
                .map(|(_, h)| mean_to(h) / h.len() as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                total += (b - a) / denom;
            }
        }
    }
    Some(total / n as f64)
}

/// Mean silhouette over non-noise points. Missing with fewer than two
/// clusters or when every point is its own cluster.
pub fn silhouette_core(m: &EmbeddingMatrix, labels: &[i64]) -> Option<f64> {
    silhouette_of(m, &groups(labels, false))
}

/// Mean silhouette over all points with noise treated as one more cluster.
pub fn silhouette_global(m: &EmbeddingMatrix, labels: &[i64]) -> Option<f64> {
    silhouette_of(m, &groups(labels, true))
}

fn centroid(m: &EmbeddingMatrix, idx: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; m.dim()];
    for &i in idx {
        for (s, x) in c.iter_mut().zip(m.row(i)) {
            *s += x;
        }
    }
    c.iter_mut().for_each(|s| *s /= idx.len() as f64);
    c
}

/// Davies-Bouldin index over non-noise points; lower is better.
pub fn davies_bouldin(m: &EmbeddingMatrix, labels: &[i64]) -> Option<f64> {
    let g = groups(labels, false);
    if g.len() < 2 {
        return None;
    }
    let cents: Vec<Vec<f64>> = g.iter().map(|idx| centroid(m, idx)).collect();
    let scatter: Vec<f64> = g
        .iter()
        .zip(&cents)
        .map(|(idx, c)| idx.iter().map(|&i| euclidean(m.row(i), c)).sum::<f64>() / idx.len() as f64)
        .collect();
    let mut total = 0.0;
    for i in 0..g.len() {
        let worst = (0..g.len())
            .filter(|&j| j != i)
            .map(|j| {
                let d = euclidean(&cents[i], &cents[j]);
                // coincident centroids contribute nothing
                if d > 0.0 { (scatter[i] + scatter[j]) / d } else { 0.0 }
            })
            .fold(0.0, f64::max);
        total += worst;
    }
    Some(total / g.len() as f64)
}

/// Calinski-Harabasz index over non-noise points; higher is better.
/// Zero within-cluster dispersion yields 1.
pub fn calinski_harabasz(m: &EmbeddingMatrix, labels: &[i64]) -> Option<f64> {
    let g = groups(labels, false);
    let n: usize = g.iter().map(Vec::len).sum();
    let k = g.len();
    if k < 2 || n <= k {
        return None;
    }
    let all: Vec<usize> = g.iter().flatten().copied().collect();
    let overall = centroid(m, &all);
    let mut between = 0.0;
    let mut within = 0.0;
    for idx in &g {
        let c = centroid(m, idx);
        between += idx.len() as f64 * squared_euclidean(&c, &overall);
        within += idx.iter().map(|&i| squared_euclidean(m.row(i), &c)).sum::<f64>();
    }
    Some(if within == 0.0 { 1.0 } else { between * (n - k) as f64 / (within * (k - 1) as f64) })
}

/// Silhouette (core-point variant), DBI and CHI. For partitions without
/// noise the core-point silhouette is the ordinary one.
pub fn score_internal(m: &EmbeddingMatrix, labels: &[i64]) -> InternalScores {
    InternalScores {
        silhouette: silhouette_core(m, labels),
        dbi: davies_bouldin(m, labels),
        chi: calinski_harabasz(m, labels),
    }
}
