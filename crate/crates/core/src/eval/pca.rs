use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::TrainingExample;

pub const DEFAULT_COMPONENTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    /// Column means subtracted before projecting.
    pub mean: Vec<f64>,
    /// `k` unit-length principal axes, largest variance first.
    pub components: Vec<Vec<f64>>,
    /// Variance along each component, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Share of the total variance along each component.
    pub explained_variance_ratio: Vec<f64>,
    /// One row of `k` coordinates per input row.
    pub projections: Vec<Vec<f64>>,
}

/// Eigen-decomposition of the population covariance of `rows`.
pub fn pca(rows: &[Vec<f64>], k: usize) -> Result<PcaResult> {
    let n = rows.len();
    let dim = rows.first().map_or(0, Vec::len);
    if k == 0 || k > dim {
        return Err(Error::Evaluation(format!("cannot take {k} components of {dim}-dimensional data")));
    }
    if n < k {
        return Err(Error::InsufficientData(format!("PCA with {k} components needs at least {k} rows, got {n}")));
    }
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Shape {
            field: "rows".into(),
            message: "rows have different lengths".into(),
        });
    }
    let x = DMatrix::from_fn(n, dim, |i, j| rows[i][j]);
    let mean: Vec<f64> = (0..dim).map(|j| x.column(j).sum() / n as f64).collect();
    let centered = DMatrix::from_fn(n, dim, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let (eigenvalues, vectors) = eigen_descending(&cov);

    let total: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let components: Vec<Vec<f64>> = vectors.into_iter().take(k).collect();
    let projections = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| (0..dim).map(|j| centered[(i, j)] * c[j]).sum())
                .collect()
        })
        .collect();
    let top: Vec<f64> = eigenvalues.into_iter().take(k).collect();
    Ok(PcaResult {
        mean,
        components,
        explained_variance_ratio: top.iter().map(|v| if total > 0.0 { v.max(0.0) / total } else { 0.0 }).collect(),
        eigenvalues: top,
        projections,
    })
}

/// Eigenpairs of a symmetric matrix sorted by decreasing eigenvalue. Each
/// vector is signed so its largest-magnitude entry is positive.
pub fn eigen_descending(symmetric: &DMatrix<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let eig = SymmetricEigen::new(symmetric.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    (values, vectors)
}

/// PCA of already-normalized example features.
pub fn pca_examples(examples: &[TrainingExample], k: usize) -> Result<PcaResult> {
    let rows: Vec<Vec<f64>> = examples.iter().map(|e| e.features.0.clone()).collect();
    pca(&rows, k)
}

/// Projection table with both labels, for scatter plots.
pub fn write_projection_csv<W: Write>(result: &PcaResult, examples: &[TrainingExample], sink: W) -> Result<()> {
    assert_eq!(result.projections.len(), examples.len(), "one projection per example");
    let mut w = csv::Writer::from_writer(sink);
    let mut header: Vec<String> = ["patient_id", "occasion_index", "esa_label", "is_label"].map(String::from).to_vec();
    header.extend((1..=result.components.len()).map(|i| format!("pc{i}")));
    w.write_record(&header)?;
    for (e, p) in examples.iter().zip(&result.projections) {
        let mut rec = vec![
            e.patient_id.clone(),
            e.occasion_index.to_string(),
            e.esa_label.to_string(),
            e.is_label.to_string(),
        ];
        rec.extend(p.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_through_origin_is_one_component() {
        let rows: Vec<Vec<f64>> = (-5..=5).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let r = pca(&rows, 3).unwrap();
        assert!((r.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        let norm = 6f64.sqrt();
        for (c, want) in r.components[0].iter().zip([1.0 / norm, 2.0 / norm, -1.0 / norm]) {
            assert!((c - want).abs() < 1e-12);
        }
    }

    #[test]
    fn too_many_components() {
        let rows = vec![vec![1.0, 2.0]; 5];
        assert!(pca(&rows, 3).is_err());
        assert!(pca(&rows[..1], 2).is_err());
    }

    #[test]
    fn orthonormal_and_sorted() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let t = i as f64;
                vec![t.sin(), (1.3 * t).cos(), 0.1 * t, (0.7 * t).sin() * 2.0]
            })
            .collect();
        let r = pca(&rows, 3).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = r.components[a].iter().zip(&r.components[b]).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-9);
            }
        }
        assert!(r.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }
}
