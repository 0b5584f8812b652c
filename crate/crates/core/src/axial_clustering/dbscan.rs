use std::collections::VecDeque;

use crate::embedding::{euclidean, EmbeddingMatrix};

/// DBSCAN with euclidean distance.
///
/// A point is core when at least `min_samples` points (itself included) lie
/// within `eps`. Clusters are the connected components of core points; each
/// border point joins the cluster of its nearest core neighbor, ties to the
/// lower index. Everything else is noise (-1). Cluster ids follow the lowest
/// core index of each cluster.
pub fn dbscan(m: &EmbeddingMatrix, eps: f64, min_samples: usize) -> Vec<i64> {
    let n = m.len();
    let neighbors: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            (0..n)
                .filter_map(|j| {
                    let d = euclidean(m.row(i), m.row(j));
                    (d <= eps).then_some((j, d))
                })
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_samples).collect();

    let mut labels = vec![-1i64; n];
    let mut next = 0i64;
    for start in 0..n {
        if !core[start] || labels[start] >= 0 {
            continue;
        }
        labels[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            for &(q, _) in &neighbors[p] {
                if core[q] && labels[q] < 0 {
                    labels[q] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }

    for p in 0..n {
        if core[p] {
            continue;
        }
        let nearest = neighbors[p]
            .iter()
            .filter(|(q, _)| core[*q])
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        if let Some(&(q, _)) = nearest {
            labels[p] = labels[q];
        }
    }
    labels
}
