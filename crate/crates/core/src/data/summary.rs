use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Training error per sample and, optionally, held-out prediction error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    /// `(1/2M) sum_mu (y_mu - x_mu^T m)^2` on the training set.
    pub eps: f64,
    /// Same quantity on the held-out set.
    pub eps_g: Option<f64>,
}

fn half_mean_square(d: &Dataset, m: &DVector<f64>) -> Result<f64> {
    if m.len() != d.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has length {} but the dataset has {} features",
            m.len(),
            d.n_features()
        )));
    }
    Ok(0.5 * d.residuals(m).norm_squared() / d.n_samples() as f64)
}

pub fn error_summary(m: &DVector<f64>, train: &Dataset, test: Option<&Dataset>) -> Result<ErrorSummary> {
    Ok(ErrorSummary {
        eps: half_mean_square(train, m)?,
        eps_g: test.map(|t| half_mean_square(t, m)).transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn zero_estimate_gives_half_mean_square_response() {
        let d = Dataset::new(DMatrix::from_element(2, 3, 0.5), DVector::from_vec(vec![1.0, -2.0, 3.0])).unwrap();
        let s = error_summary(&DVector::zeros(2), &d, None).unwrap();
        assert!((s.eps - 14.0 / 6.0).abs() < 1e-15);
        assert!(s.eps_g.is_none());
        assert!(error_summary(&DVector::zeros(3), &d, None).is_err());
    }
}
