use kodama::{linkage, Method};

use crate::embedding::{euclidean, EmbeddingMatrix};

/// Ward linkage cut into `k` clusters.
pub fn ward(m: &EmbeddingMatrix, k: usize) -> Vec<usize> {
    let n = m.len();
    if n < 2 {
        return vec![0; n];
    }
    let mut condensed = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            condensed.push(euclidean(m.row(i), m.row(j)));
        }
    }
    let dendrogram = linkage(&mut condensed, n, Method::Ward);

    // node ids: leaves 0..n, step s creates n + s
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    for (s, step) in dendrogram.steps().iter().take(n.saturating_sub(k)).enumerate() {
        parent[step.cluster1] = n + s;
        parent[step.cluster2] = n + s;
    }
    let root_of = |mut x: usize| {
        while parent[x] != x {
            x = parent[x];
        }
        x
    };
    let mut ids = std::collections::HashMap::new();
    (0..n)
        .map(|i| {
            let r = root_of(i);
            let next = ids.len();
            *ids.entry(r).or_insert(next)
        })
        .collect()
}
