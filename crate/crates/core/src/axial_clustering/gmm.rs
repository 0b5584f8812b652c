use super::kmeans::kmeans;
use crate::embedding::EmbeddingMatrix;

pub const REG_COVAR: f64 = 1e-6;
const MAX_ITER: usize = 100;
const TOL: f64 = 1e-3;

struct Params {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
}

fn m_step(m: &EmbeddingMatrix, resp: &[Vec<f64>], k: usize) -> Params {
    let (n, dim) = (m.len(), m.dim());
    let mut weights = vec![0.0; k];
    let mut means = vec![vec![0.0; dim]; k];
    let mut vars = vec![vec![0.0; dim]; k];
    for i in 0..n {
        for j in 0..k {
            let r = resp[i][j];
            weights[j] += r;
            for (mu, x) in means[j].iter_mut().zip(m.row(i)) {
                *mu += r * x;
            }
        }
    }
    for j in 0..k {
        let nk = weights[j] + 10.0 * f64::EPSILON;
        means[j].iter_mut().for_each(|mu| *mu /= nk);
        for i in 0..n {
            let r = resp[i][j];
            for ((v, x), mu) in vars[j].iter_mut().zip(m.row(i)).zip(&means[j]) {
                *v += r * (x - mu) * (x - mu);
            }
        }
        vars[j].iter_mut().for_each(|v| *v = *v / nk + REG_COVAR);
        weights[j] = nk / n as f64;
    }
    Params { weights, means, vars }
}

/// Per-point log joint densities log(w_j) + log N(x | mu_j, diag(var_j)).
fn log_joint(m: &EmbeddingMatrix, p: &Params) -> Vec<Vec<f64>> {
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let consts: Vec<f64> = (0..p.weights.len())
        .map(|j| p.weights[j].ln() - 0.5 * p.vars[j].iter().map(|v| ln2pi + v.ln()).sum::<f64>())
        .collect();
    m.rows()
        .map(|x| {
            (0..p.weights.len())
                .map(|j| consts[j] - 0.5 * x.iter().zip(&p.means[j]).zip(&p.vars[j]).map(|((x, mu), v)| (x - mu) * (x - mu) / v).sum::<f64>())
                .collect()
        })
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Diagonal-covariance Gaussian mixture fitted by EM from a k-means start.
pub fn gmm(m: &EmbeddingMatrix, k: usize, seed: u64) -> Vec<usize> {
    let init = kmeans(m, k, seed);
    let mut resp: Vec<Vec<f64>> = init.labels.iter().map(|&l| (0..k).map(|j| if j == l { 1.0 } else { 0.0 }).collect()).collect();
    let mut params = m_step(m, &resp, k);
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..MAX_ITER {
        let joint = log_joint(m, &params);
        let mut total = 0.0;
        for (r, lj) in resp.iter_mut().zip(&joint) {
            let norm = log_sum_exp(lj);
            total += norm;
            for (rj, l) in r.iter_mut().zip(lj) {
                *rj = (l - norm).exp();
            }
        }
        let mean_ll = total / m.len() as f64;
        params = m_step(m, &resp, k);
        if (mean_ll - prev).abs() < TOL {
            break;
        }
        prev = mean_ll;
    }
    log_joint(m, &params)
        .iter()
        .map(|lj| (0..k).fold(0, |best, j| if lj[j] > lj[best] { j } else { best }))
        .collect()
}
