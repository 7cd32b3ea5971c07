//! Area-level survey data: direct estimates, design blocks and known
//! sampling covariances.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Direct estimates `y_i`, design matrices `X_i` and sampling covariances
/// `V_i` for `m` areas with `k` responses and `s` regression coefficients.
#[derive(Debug, Clone)]
pub struct AreaDataset {
    area_ids: Vec<String>,
    y: Vec<DVector<f64>>,
    x: Vec<DMatrix<f64>>,
    v: Vec<DMatrix<f64>>,
    k: usize,
    s: usize,
}

impl AreaDataset {
    /// Builds and validates a dataset.
    ///
    /// Fails if block shapes disagree, any `V_i` is not symmetric positive
    /// definite, or the stacked design matrix is rank deficient.
    pub fn new(
        area_ids: Vec<String>,
        y: Vec<DVector<f64>>,
        x: Vec<DMatrix<f64>>,
        v: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let m = y.len();
        if m == 0 {
            return Err(Error::Invalid("dataset has no areas".into()));
        }
        if area_ids.len() != m || x.len() != m || v.len() != m {
            return Err(Error::Dimension(format!(
                "block counts disagree: ids={}, y={}, X={}, V={}",
                area_ids.len(),
                m,
                x.len(),
                v.len()
            )));
        }
        let k = y[0].len();
        let s = x[0].ncols();
        if k == 0 || s == 0 {
            return Err(Error::Invalid("k and s must be positive".into()));
        }
        for i in 0..m {
            if y[i].len() != k {
                return Err(Error::Dimension(format!(
                    "area {}: y has length {}, expected {}",
                    area_ids[i],
                    y[i].len(),
                    k
                )));
            }
            if x[i].nrows() != k || x[i].ncols() != s {
                return Err(Error::Dimension(format!(
                    "area {}: X is {}x{}, expected {}x{}",
                    area_ids[i],
                    x[i].nrows(),
                    x[i].ncols(),
                    k,
                    s
                )));
            }
            if v[i].nrows() != k || v[i].ncols() != k {
                return Err(Error::Dimension(format!(
                    "area {}: V is {}x{}, expected {}x{}",
                    area_ids[i],
                    v[i].nrows(),
                    v[i].ncols(),
                    k,
                    k
                )));
            }
            let asym = (&v[i] - v[i].transpose()).abs().max();
            let scale = v[i].abs().max().max(1.0);
            if asym > 1e-8 * scale {
                return Err(Error::NotSpd(format!("V for area {} is not symmetric", area_ids[i])));
            }
            if Cholesky::new(v[i].clone()).is_none() {
                return Err(Error::NotSpd(format!(
                    "V for area {} is not positive definite",
                    area_ids[i]
                )));
            }
        }
        // Full column rank of the stacked design: the Gram matrix must be PD.
        let mut gram = DMatrix::<f64>::zeros(s, s);
        for xi in &x {
            gram += xi.transpose() * xi;
        }
        if Cholesky::new(gram).is_none() {
            return Err(Error::Invalid(
                "stacked design matrix is rank deficient".into(),
            ));
        }
        Ok(Self { area_ids, y, x, v, k, s })
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn area_ids(&self) -> &[String] {
        &self.area_ids
    }

    pub fn y(&self, i: usize) -> &DVector<f64> {
        &self.y[i]
    }

    pub fn x(&self, i: usize) -> &DMatrix<f64> {
        &self.x[i]
    }

    pub fn v(&self, i: usize) -> &DMatrix<f64> {
        &self.v[i]
    }

    /// Per-area inverses of the sampling covariances.
    pub fn v_inverses(&self) -> Vec<DMatrix<f64>> {
        self.v
            .iter()
            .map(|vi| {
                Cholesky::new(vi.clone())
                    .expect("validated at construction")
                    .inverse()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(m: usize) -> Vec<String> {
        (1..=m).map(|i| i.to_string()).collect()
    }

    #[test]
    fn accepts_valid_blocks() {
        let d = AreaDataset::new(
            ids(2),
            vec![DVector::from_vec(vec![1.0, 2.0]); 2],
            vec![DMatrix::identity(2, 2); 2],
            vec![DMatrix::identity(2, 2); 2],
        )
        .unwrap();
        assert_eq!((d.m(), d.k(), d.s()), (2, 2, 2));
    }

    #[test]
    fn rejects_non_spd_variance() {
        let mut v = DMatrix::identity(2, 2);
        v[(0, 0)] = -1.0;
        let err = AreaDataset::new(
            ids(1),
            vec![DVector::zeros(2)],
            vec![DMatrix::identity(2, 2)],
            vec![v],
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotSpd(_)));
    }

    #[test]
    fn rejects_rank_deficient_design() {
        // Second column identically zero.
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let err = AreaDataset::new(
            ids(2),
            vec![DVector::zeros(2); 2],
            vec![x.clone(), x],
            vec![DMatrix::identity(2, 2); 2],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));
    }

    #[test]
    fn rejects_ragged_blocks() {
        let err = AreaDataset::new(
            ids(2),
            vec![DVector::zeros(2), DVector::zeros(3)],
            vec![DMatrix::identity(2, 2); 2],
            vec![DMatrix::identity(2, 2); 2],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }
}
