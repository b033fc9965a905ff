use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Eigendecomposition of `X X^T`, computed once per dataset.
#[derive(Clone, Debug)]
pub struct Spectrum {
    /// Ascending, clamped to zero below `1e-12 * lambda_max`.
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    mean_eigenvalue: f64,
}

const CLAMP_REL: f64 = 1e-12;
const SECULAR_TOL: f64 = 1e-13;
const SECULAR_MAX_ITER: usize = 300;

impl Spectrum {
    pub fn new(dataset: &Dataset) -> Result<Self> {
        let x = dataset.x();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::DecompositionFailure("non-finite design matrix".into()));
        }
        let gram = x * x.transpose();
        let eig = SymmetricEigen::try_new(gram, f64::EPSILON, 0)
            .ok_or_else(|| Error::DecompositionFailure("symmetric eigensolver did not converge".into()))?;
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let floor = CLAMP_REL * lambda_max;
        let eigenvalues = DVector::from_iterator(
            n,
            order.iter().map(|&k| {
                let l = eig.eigenvalues[k];
                if l < floor {
                    0.0
                } else {
                    l
                }
            }),
        );
        if eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::DecompositionFailure("non-finite eigenvalue".into()));
        }
        let eigenvectors = eig.eigenvectors.select_columns(&order);
        let mean_eigenvalue = eigenvalues.mean();
        Ok(Self {
            eigenvalues,
            eigenvectors,
            mean_eigenvalue,
        })
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[self.len() - 1]
    }

    pub fn mean_eigenvalue(&self) -> f64 {
        self.mean_eigenvalue
    }

    /// `(1/N) tr (X X^T + s I)^{-1}`.
    pub fn mean_resolvent(&self, shift: f64) -> f64 {
        self.eigenvalues.iter().map(|l| 1.0 / (l + shift)).sum::<f64>() / self.len() as f64
    }

    /// `(1/N) sum_k lambda_k / (lambda_k + s)`, i.e. `1 - s * mean_resolvent(s)`.
    pub fn mean_saturation(&self, shift: f64) -> f64 {
        self.eigenvalues.iter().map(|l| l / (l + shift)).sum::<f64>() / self.len() as f64
    }

    /// `sum_k ln(lambda_k + s)`.
    pub fn log_det_shifted(&self, shift: f64) -> f64 {
        self.eigenvalues.iter().map(|l| (l + shift).ln()).sum()
    }

    /// `(X X^T + s I)^{-1} v` through the cached eigenvectors.
    pub fn apply_shifted_inverse(&self, shift: f64, v: &DVector<f64>) -> DVector<f64> {
        let mut coeffs = self.eigenvectors.tr_mul(v);
        for (c, l) in coeffs.iter_mut().zip(self.eigenvalues.iter()) {
            *c /= l + shift;
        }
        &self.eigenvectors * coeffs
    }

    /// Root `s > -lambda_min` of the secular equation
    /// `(1/N) sum_k 1 / (lambda_k + s) = beta * chi`.
    ///
    /// `s` is positive whenever `X X^T` is singular; for a full-rank spectrum
    /// and large `beta * chi` the root moves into `(-lambda_min, 0]`.
    pub fn solve_lambda(&self, beta: f64, chi: f64) -> Result<f64> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Domain(format!("beta must be positive, got {beta}")));
        }
        if !(chi > 0.0 && chi.is_finite()) {
            return Err(Error::Domain(format!("chi must be positive, got {chi}")));
        }
        let target = beta * chi;
        // 1/g(s) is the harmonic mean of lambda_k + s: concave, increasing,
        // and bracketed by (-lambda_min, 1/target].
        let mut lo = -self.lambda_min();
        let mut hi = 1.0 / target;
        if hi <= lo {
            return Err(Error::Domain(format!(
                "secular equation has no root for beta*chi = {target}"
            )));
        }
        let n = self.len() as f64;
        let mut s = (hi - self.mean_eigenvalue).max(lo + 0.5 * (hi - lo));
        for _ in 0..SECULAR_MAX_ITER {
            let (mut g, mut g1) = (0.0, 0.0);
            for l in self.eigenvalues.iter() {
                let r = 1.0 / (l + s);
                g += r;
                g1 += r * r;
            }
            g /= n;
            g1 /= n;
            let resid = g - target;
            if resid.abs() <= SECULAR_TOL * target {
                return Ok(s);
            }
            if resid > 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            // Newton on 1/g - 1/target.
            let phi = 1.0 / g - 1.0 / target;
            let dphi = g1 / (g * g);
            let mut next = s - phi / dphi;
            if !(next.is_finite() && next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if next == s || hi - lo <= 2.0 * f64::EPSILON * hi.abs().max(lo.abs()) {
                return Ok(s);
            }
            s = next;
        }
        Err(Error::NonConvergence {
            what: "secular equation",
            iterations: SECULAR_MAX_ITER,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(x: DMatrix<f64>) -> Dataset {
        let m = x.ncols();
        Dataset::new(x, DVector::zeros(m)).unwrap()
    }

    #[test]
    fn zero_design_has_zero_spectrum() {
        let s = Spectrum::new(&dataset(DMatrix::zeros(3, 2))).unwrap();
        assert_eq!(s.eigenvalues().as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn orthonormal_design_has_unit_spectrum() {
        let s = Spectrum::new(&dataset(DMatrix::identity(4, 4))).unwrap();
        for l in s.eigenvalues().iter() {
            assert!((l - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn secular_trivial_roots() {
        let zero = Spectrum::new(&dataset(DMatrix::zeros(3, 2))).unwrap();
        let s = zero.solve_lambda(1.0, 2.0).unwrap();
        assert!((s - 0.5).abs() < 1e-14);
        let unit = Spectrum::new(&dataset(DMatrix::identity(5, 5))).unwrap();
        let s = unit.solve_lambda(0.5, 1.0).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn secular_rejects_bad_domain() {
        let unit = Spectrum::new(&dataset(DMatrix::identity(2, 2))).unwrap();
        assert!(matches!(unit.solve_lambda(1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(unit.solve_lambda(-1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn full_rank_large_target_gives_negative_root() {
        let unit = Spectrum::new(&dataset(DMatrix::identity(3, 3) * 2.0)).unwrap();
        // 1/(4 + s) = 1 -> s = -3
        let s = unit.solve_lambda(1.0, 1.0).unwrap();
        assert!((s + 3.0).abs() < 1e-12);
    }

    #[test]
    fn shifted_inverse_matches_dense_solve() {
        let x = DMatrix::from_fn(4, 3, |i, j| ((i * 3 + j) as f64).sin());
        let s = Spectrum::new(&dataset(x.clone())).unwrap();
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let a = &x * x.transpose() + DMatrix::identity(4, 4) * 0.7;
        let direct = a.lu().solve(&v).unwrap();
        let via = s.apply_shifted_inverse(0.7, &v);
        assert!((direct - via).amax() < 1e-12);
    }
}
