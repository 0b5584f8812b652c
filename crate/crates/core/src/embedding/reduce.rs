use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use super::{EmbeddingError, EmbeddingMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionKind {
    None,
    Pca,
    Umap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionSpec {
    pub kind: ReductionKind,
    pub target_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ReductionSpec {
    pub fn none() -> Self {
        Self { kind: ReductionKind::None, target_dim: 0, seed: 0 }
    }

    pub fn pca(target_dim: usize) -> Self {
        Self { kind: ReductionKind::Pca, target_dim, seed: 0 }
    }

    /// PCA to 64 dimensions.
    pub fn pca_default() -> Self {
        Self::pca(64)
    }

    /// UMAP to 15 dimensions.
    pub fn umap_default(seed: u64) -> Self {
        Self { kind: ReductionKind::Umap, target_dim: 15, seed }
    }

    pub fn label(&self) -> String {
        match self.kind {
            ReductionKind::None => "none".into(),
            ReductionKind::Pca => format!("PCA-{}", self.target_dim),
            ReductionKind::Umap => format!("UMAP-{}", self.target_dim),
        }
    }
}

/// Apply a dimensionality reduction.
///
/// `none` returns the input unchanged. PCA projects the centered rows onto
/// the leading right singular vectors of the centered data; it is deterministic, so
/// the seed is unused. UMAP is not built in and reports
/// [`EmbeddingError::ReducerUnavailable`].
pub fn reduce(m: &EmbeddingMatrix, spec: &ReductionSpec) -> Result<EmbeddingMatrix, EmbeddingError> {
    match spec.kind {
        ReductionKind::None => Ok(m.clone()),
        ReductionKind::Umap => Err(EmbeddingError::ReducerUnavailable("umap")),
        ReductionKind::Pca => pca(m, spec.target_dim),
    }
}

fn pca(m: &EmbeddingMatrix, target: usize) -> Result<EmbeddingMatrix, EmbeddingError> {
    let (n, d) = (m.len(), m.dim());
    if target == 0 {
        return Err(EmbeddingError::InvalidReduction("target_dim must be positive".into()));
    }
    if target > d {
        return Err(EmbeddingError::InvalidReduction(format!("target_dim {target} exceeds input dimension {d}")));
    }
    if target > n {
        return Err(EmbeddingError::InvalidReduction(format!("{n} rows cannot support {target} components")));
    }
    let (centered, components) = principal_axes(m);
    let projected = &centered * components.columns(0, target);
    let rows = (0..n).map(|i| projected.row(i).iter().copied().collect()).collect();
    EmbeddingMatrix::new(m.keys().to_vec(), rows)
}

/// Centered data and principal axes (columns, by non-increasing variance),
/// from the SVD of the centered data. The covariance eigensolver returns NaN
/// on wide rank-deficient inputs, which is the usual embedding shape.
fn principal_axes(m: &EmbeddingMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, d) = (m.len(), m.dim());
    let mut x = DMatrix::from_fn(n, d, |i, j| m.row(i)[j]);
    for j in 0..d {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let svd = SVD::new(x.clone(), false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let mut comps = DMatrix::zeros(d, order.len());
    for (out, &src) in order.iter().enumerate() {
        let mut v = v_t.row(src).transpose();
        // sign convention: largest-magnitude entry positive
        let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.neg_mut();
        }
        comps.set_column(out, &v);
    }
    (x, comps)
}

/// Sample variance of each column.
pub fn explained_variance(m: &EmbeddingMatrix) -> Vec<f64> {
    let n = m.len();
    (0..m.dim())
        .map(|j| {
            let mean = m.rows().map(|r| r[j]).sum::<f64>() / n as f64;
            m.rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64
        })
        .collect()
}
