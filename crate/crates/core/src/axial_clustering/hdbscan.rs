//! Native HDBSCAN: mutual-reachability MST, single-linkage hierarchy,
//! condensed tree and excess-of-mass cluster selection.

use crate::embedding::{euclidean, EmbeddingMatrix};

const LAMBDA_MAX: f64 = 1e12;

struct Merge {
    left: usize,
    right: usize,
    distance: f64,
    size: usize,
}

struct Condensed {
    parent: usize,
    child: usize,
    lambda: f64,
    size: usize,
}

fn core_distances(m: &EmbeddingMatrix, k: usize) -> Vec<f64> {
    let n = m.len();
    (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).map(|j| euclidean(m.row(i), m.row(j))).collect();
            let kth = k.clamp(1, n) - 1;
            *d.select_nth_unstable_by(kth, f64::total_cmp).1
        })
        .collect()
}

/// Prim's algorithm over the complete mutual-reachability graph.
fn mst(m: &EmbeddingMatrix, core: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = m.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = euclidean(m.row(current), m.row(j)).max(core[current]).max(core[j]);
            if d < best[j] {
                best[j] = d;
                from[j] = current;
            }
        }
        let next = (0..n).filter(|&j| !in_tree[j]).min_by(|&a, &b| best[a].total_cmp(&best[b]).then(a.cmp(&b))).unwrap();
        edges.push((from[next], next, best[next]));
        in_tree[next] = true;
        current = next;
    }
    edges
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn single_linkage(n: usize, mut edges: Vec<(usize, usize, f64)>) -> Vec<Merge> {
    edges.sort_by(|a, b| a.2.total_cmp(&b.2).then((a.0.min(a.1), a.0.max(a.1)).cmp(&(b.0.min(b.1), b.0.max(b.1)))));
    let mut uf: Vec<usize> = (0..n).collect();
    let mut node_of: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut merges = Vec::with_capacity(n - 1);
    for (a, b, d) in edges {
        let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
        let s = size[ra] + size[rb];
        merges.push(Merge { left: node_of[ra], right: node_of[rb], distance: d, size: s });
        uf[rb] = ra;
        size[ra] = s;
        node_of[ra] = n + merges.len() - 1;
    }
    merges
}

fn condense(n: usize, merges: &[Merge], min_cluster_size: usize) -> Vec<Condensed> {
    let root = 2 * n - 2;
    let size_of = |node: usize| if node < n { 1 } else { merges[node - n].size };
    let leaves = |node: usize| {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < n {
                out.push(x);
            } else {
                stack.push(merges[x - n].left);
                stack.push(merges[x - n].right);
            }
        }
        out
    };

    let mut relabel = vec![usize::MAX; 2 * n - 1];
    relabel[root] = n;
    let mut next_label = n + 1;
    let mut out = Vec::new();
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(node) = queue.pop_front() {
        if node < n {
            continue;
        }
        let Merge { left, right, distance, .. } = merges[node - n];
        let lambda = if distance > 0.0 { (1.0 / distance).min(LAMBDA_MAX) } else { LAMBDA_MAX };
        let parent = relabel[node];
        let (big_l, big_r) = (size_of(left) >= min_cluster_size, size_of(right) >= min_cluster_size);
        for (child, big, other_big) in [(left, big_l, big_r), (right, big_r, big_l)] {
            if big && other_big {
                relabel[child] = next_label;
                out.push(Condensed { parent, child: next_label, lambda, size: size_of(child) });
                next_label += 1;
                queue.push_back(child);
            } else if big {
                relabel[child] = parent;
                queue.push_back(child);
            } else {
                for p in leaves(child) {
                    out.push(Condensed { parent, child: p, lambda, size: 1 });
                }
            }
        }
    }
    out
}

/// Labels clusters selected by excess of mass; the root is never selected.
fn select(n: usize, tree: &[Condensed]) -> Vec<i64> {
    let n_clusters = tree.iter().map(|e| e.child.max(e.parent)).filter(|&c| c >= n).max().map_or(1, |m| m - n + 1);
    let mut birth = vec![0.0; n_clusters];
    let mut cluster_parent = vec![usize::MAX; n_clusters];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for e in tree.iter().filter(|e| e.child >= n) {
        birth[e.child - n] = e.lambda;
        cluster_parent[e.child - n] = e.parent - n;
        children[e.parent - n].push(e.child - n);
    }
    let mut stability = vec![0.0; n_clusters];
    for e in tree {
        let c = e.parent - n;
        stability[c] += (e.lambda - birth[c]) * e.size as f64;
    }

    let mut selected = vec![false; n_clusters];
    for c in (1..n_clusters).rev() {
        let below: f64 = children[c].iter().map(|&k| stability[k]).sum();
        if below > stability[c] {
            stability[c] = below;
        } else {
            selected[c] = true;
            let mut stack = children[c].clone();
            while let Some(k) = stack.pop() {
                selected[k] = false;
                stack.extend(children[k].iter().copied());
            }
        }
    }

    let mut labels = vec![-1i64; n];
    for e in tree.iter().filter(|e| e.child < n) {
        let mut c = e.parent - n;
        while c != 0 && !selected[c] {
            c = cluster_parent[c];
        }
        if c != 0 {
            labels[e.child] = c as i64;
        }
    }
    labels
}

/// HDBSCAN over euclidean distance. Core distance is the distance to the
/// `min_samples`-th nearest point counting the point itself; `min_samples`
/// defaults to `min_cluster_size`. Returned cluster ids are arbitrary but
/// deterministic; noise is -1.
pub fn hdbscan(m: &EmbeddingMatrix, min_cluster_size: usize, min_samples: Option<usize>) -> Vec<i64> {
    let n = m.len();
    if n < 2 || n < min_cluster_size {
        return vec![-1; n];
    }
    let core = core_distances(m, min_samples.unwrap_or(min_cluster_size));
    let merges = single_linkage(n, mst(m, &core));
    let tree = condense(n, &merges, min_cluster_size.max(2));
    select(n, &tree)
}
