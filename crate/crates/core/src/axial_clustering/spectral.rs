use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::kmeans::kmeans;
use crate::embedding::{squared_euclidean, EmbeddingMatrix};

/// Above this size the leading eigenvectors come from subspace iteration
/// instead of a dense decomposition.
pub const DENSE_LIMIT: usize = 1500;
const SUBSPACE_ITERS: usize = 500;

/// Symmetrized k-nearest-neighbor connectivity (each point counts itself).
pub fn knn_affinity(m: &EmbeddingMatrix, n_neighbors: usize) -> DMatrix<f64> {
    let n = m.len();
    let k = n_neighbors.clamp(1, n);
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut order: Vec<(f64, usize)> = (0..n).map(|j| (squared_euclidean(m.row(i), m.row(j)), j)).collect();
        order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        // self first, whatever ties say
        let mut picked = vec![i];
        picked.extend(order.iter().map(|&(_, j)| j).filter(|&j| j != i).take(k - 1));
        for j in picked {
            a[(i, j)] = 1.0;
        }
    }
    (&a + a.transpose()) * 0.5
}

/// D^-1/2 A D^-1/2.
pub fn normalized_affinity(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = a.row(i).sum();
            if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| a[(i, j)] * inv_sqrt[i] * inv_sqrt[j])
}

fn leading_dense(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    DMatrix::from_fn(m.nrows(), k, |i, j| eig.eigenvectors[(i, order[j])])
}

/// Subspace iteration on (M + I) / 2, whose spectrum lies in [0, 1] and
/// keeps the ordering of M.
pub fn leading_subspace(m: &DMatrix<f64>, k: usize, seed: u64) -> DMatrix<f64> {
    let n = m.nrows();
    let shifted = (m + DMatrix::<f64>::identity(n, n)) * 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng)).qr().q();
    for _ in 0..SUBSPACE_ITERS {
        q = (&shifted * &q).qr().q();
    }
    // rotate onto eigenvectors within the subspace
    let small = q.transpose() * &shifted * &q;
    let eig = SymmetricEigen::new(small);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let rot = DMatrix::from_fn(k, k, |i, j| eig.eigenvectors[(i, order[j])]);
    q * rot
}

/// Spectral embedding rows, each scaled to unit length.
pub fn embedding(m: &EmbeddingMatrix, k: usize, n_neighbors: usize, seed: u64) -> EmbeddingMatrix {
    let norm = normalized_affinity(&knn_affinity(m, n_neighbors));
    let vecs = if m.len() <= DENSE_LIMIT { leading_dense(&norm, k) } else { leading_subspace(&norm, k, seed) };
    let rows: Vec<Vec<f64>> = (0..m.len())
        .map(|i| {
            let r: Vec<f64> = vecs.row(i).iter().copied().collect();
            let len = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if len > 0.0 { r.iter().map(|x| x / len).collect() } else { r }
        })
        .collect();
    EmbeddingMatrix::new(m.keys().to_vec(), rows).expect("spectral rows are finite")
}

pub fn spectral(m: &EmbeddingMatrix, k: usize, n_neighbors: usize, seed: u64) -> Vec<usize> {
    kmeans(&embedding(m, k, n_neighbors, seed), k, seed).labels
}
