//! Two-component PCA for plotting final embeddings.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};

use crate::error::{Result, XconError};
use crate::scalar::Scalar;

/// Projects rows onto the top two principal components. Each component's
/// sign is fixed so its largest-magnitude loading is positive.
pub fn pca_2d<T: Scalar>(x: ArrayView2<'_, T>) -> Result<Array2<f64>> {
    let (n, d) = x.dim();
    if n == 0 {
        return Err(XconError::Empty);
    }
    let x64 = x.mapv(|v| v.as_f64());
    let mean = x64.mean_axis(ndarray::Axis(0)).expect("n > 0");
    let centered = &x64 - &mean;
    let cov = centered.t().dot(&centered) / n as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = Array2::<f64>::zeros((d, 2));
    for (c, &k) in order.iter().take(2).enumerate() {
        let v = eig.eigenvectors.column(k);
        let pivot = (0..d).max_by(|&i, &j| v[i].abs().total_cmp(&v[j].abs()).then(j.cmp(&i))).unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            basis[[i, c]] = sign * v[i];
        }
    }
    Ok(centered.dot(&basis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn recovers_dominant_axis() {
        let x = array![[-2.0, 0.1, 0.0], [2.0, -0.1, 0.0], [-1.0, 0.0, 0.05], [1.0, 0.0, -0.05]];
        let p = pca_2d(x.view()).unwrap();
        assert_eq!(p.dim(), (4, 2));
        // first component follows the x axis with positive orientation
        assert!((p[[1, 0]] - 2.0).abs() < 0.01);
        assert!(p[[0, 0]] < 0.0);
        let var0: f64 = p.column(0).iter().map(|v| v * v).sum();
        let var1: f64 = p.column(1).iter().map(|v| v * v).sum();
        assert!(var0 > var1);
    }

    #[test]
    fn one_dimensional_input() {
        let x = array![[1.0f32], [3.0]];
        let p = pca_2d(x.view()).unwrap();
        assert_eq!(p.column(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
    }
}
