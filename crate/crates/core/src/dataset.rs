use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Regression data in feature-major layout: `x` is `N x M` (column `mu` is
/// sample `x_mu`), `y` has length `M`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "need N >= 1 and M >= 1, got {} x {}",
                x.nrows(),
                x.ncols()
            )));
        }
        if y.len() != x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "y has length {} but X has {} samples",
                y.len(),
                x.ncols()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("dataset contains non-finite entries".into()));
        }
        Ok(Self { x, y })
    }

    /// Builds a dataset from sample rows (`rows[mu]` is `x_mu`).
    pub fn from_sample_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("ragged sample rows".into()));
        }
        let x = DMatrix::from_fn(n, rows.len(), |i, mu| rows[mu][i]);
        Self::new(x, DVector::from_vec(y))
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Number of features `N`.
    pub fn n_features(&self) -> usize {
        self.x.nrows()
    }

    /// Number of samples `M`.
    pub fn n_samples(&self) -> usize {
        self.x.ncols()
    }

    pub fn alpha(&self) -> f64 {
        self.n_samples() as f64 / self.n_features() as f64
    }

    pub fn sample(&self, mu: usize) -> DVector<f64> {
        self.x.column(mu).into_owned()
    }

    /// Residuals `y - X^T m`.
    pub fn residuals(&self, m: &DVector<f64>) -> DVector<f64> {
        &self.y - self.x.tr_mul(m)
    }

    /// Dataset restricted to the given sample indices, in the order given.
    pub fn select_samples(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::DimensionMismatch("empty sample selection".into()));
        }
        let x = self.x.select_columns(indices);
        let y = DVector::from_iterator(indices.len(), indices.iter().map(|&mu| self.y[mu]));
        Ok(Self { x, y })
    }

    /// Dataset with the given samples removed; remaining samples keep their order.
    pub fn without_samples(&self, removed: &[usize]) -> Result<Self> {
        let mut keep = vec![true; self.n_samples()];
        for &mu in removed {
            keep[mu] = false;
        }
        let kept: Vec<usize> = (0..self.n_samples()).filter(|&mu| keep[mu]).collect();
        self.select_samples(&kept)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_shape_and_values() {
        assert!(Dataset::new(DMatrix::zeros(2, 3), DVector::zeros(2)).is_err());
        assert!(Dataset::new(DMatrix::zeros(0, 3), DVector::zeros(3)).is_err());
        let mut x = DMatrix::zeros(2, 2);
        x[(0, 1)] = f64::NAN;
        assert!(Dataset::new(x, DVector::zeros(2)).is_err());
    }

    #[test]
    fn removes_samples_in_order() {
        let d = Dataset::from_sample_rows(
            &[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]],
            vec![10.0, 20.0, 30.0],
        )
        .unwrap();
        assert_eq!((d.n_features(), d.n_samples()), (2, 3));
        let r = d.without_samples(&[1]).unwrap();
        assert_eq!(r.y().as_slice(), &[10.0, 30.0]);
        assert_eq!(r.sample(1).as_slice(), &[5.0, 6.0]);
        assert!(d.without_samples(&[0, 1, 2]).is_err());
    }
}
