//! Algebraic identities shared by the samplers: the Kronecker-structured
//! quadratic form, the eigenvalue factorization of `log|D - rho W|`, the
//! small-area mean assembly and the dense matrix shrinkage factor.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::dataset::AreaDataset;
use crate::error::{Error, Result};
use crate::model::ChainState;
use crate::spatial::SpatialStructure;

/// Default cap on `m * k` for dense diagnostics.
pub const DEFAULT_DENSE_LIMIT: usize = 2000;

/// `u~' ((D - rho W) (x) Sigma^{-1}) u~` computed as
/// `tr((D - rho W) U~' Sigma^{-1} U~)` from neighbor sums, never assembling
/// the `mk x mk` Kronecker product.
pub fn kron_quadratic_form(
    u_tilde: &[DVector<f64>],
    sigma_inv: &DMatrix<f64>,
    structure: &SpatialStructure,
    rho: f64,
) -> Result<f64> {
    if u_tilde.len() != structure.m() {
        return Err(Error::Dimension(format!(
            "u has {} areas, structure has {}",
            u_tilde.len(),
            structure.m()
        )));
    }
    let k = sigma_inv.nrows();
    if sigma_inv.ncols() != k || u_tilde.iter().any(|u| u.len() != k) {
        return Err(Error::Dimension("sigma_inv and u blocks disagree on k".into()));
    }
    let mut diag_part = 0.0;
    let mut cross_part = 0.0;
    for i in 0..structure.m() {
        let si = sigma_inv * &u_tilde[i];
        diag_part += structure.degree(i) * u_tilde[i].dot(&si);
        for &j in structure.neighbors(i) {
            cross_part += u_tilde[j].dot(&si);
        }
    }
    Ok(diag_part - rho * cross_part)
}

/// `(k/2) log|D - rho W|` via `|D - rho W| = |D| prod_i (1 - rho gamma_i)`,
/// using only the eigenvalues precomputed at structure construction.
pub fn log_det_spatial(structure: &SpatialStructure, rho: f64, k: usize) -> Result<f64> {
    let log_det_d: f64 = (0..structure.m()).map(|i| structure.degree(i).ln()).sum();
    let correction = structure.log_one_minus_rho_gamma(rho)?;
    Ok(0.5 * k as f64 * (log_det_d + correction))
}

/// Small-area means `theta_i = X_i beta + Lambda_i u_tilde_i`, returned as
/// an `m x k` matrix with one row per area.
pub fn assemble_theta(state: &ChainState, data: &AreaDataset) -> DMatrix<f64> {
    let (m, k) = (data.m(), data.k());
    let mut theta = DMatrix::<f64>::zeros(m, k);
    for i in 0..m {
        let fit = data.x(i) * &state.beta;
        let ui = state.u(i);
        for j in 0..k {
            theta[(i, j)] = fit[j] + ui[j];
        }
    }
    theta
}

/// Dense prior covariance of the stacked effects,
/// `U = tau^2 Lambda ((D - rho W)^{-1} (x) Sigma) Lambda`.
///
/// `structure = None` replaces the CAR factor by the identity (the
/// nonspatial reduction with `rho = 0`, `D = I`). Diagnostics only.
pub fn assemble_prior_covariance(
    lambda: &[DVector<f64>],
    sigma: &DMatrix<f64>,
    rho: f64,
    tau2: f64,
    structure: Option<&SpatialStructure>,
) -> Result<DMatrix<f64>> {
    let m = lambda.len();
    let k = sigma.nrows();
    let spatial_cov = match structure {
        Some(st) => {
            if st.m() != m {
                return Err(Error::Dimension("lambda and structure disagree on m".into()));
            }
            let prec = st.precision_dense(rho);
            Cholesky::new(prec)
                .ok_or_else(|| Error::NotSpd("D - rho W".into()))?
                .inverse()
        }
        None => DMatrix::identity(m, m),
    };
    let mut u = DMatrix::<f64>::zeros(m * k, m * k);
    for bi in 0..m {
        for bj in 0..m {
            let c = spatial_cov[(bi, bj)];
            for r in 0..k {
                for ccol in 0..k {
                    u[(bi * k + r, bj * k + ccol)] =
                        tau2 * lambda[bi][r] * sigma[(r, ccol)] * lambda[bj][ccol] * c;
                }
            }
        }
    }
    Ok(u)
}

/// The matrix shrinkage factor `Q = (V^{-1} + U^{-1})^{-1} U^{-1}`
/// weighting the regression surface against the direct estimates in
/// `E(theta | -) = (I - Q) y + Q X beta`.
///
/// Computed in the algebraically equivalent form `Q = V (U + V)^{-1}`,
/// which stays defined in the `U -> 0` limit. Dense and intended for
/// diagnostics at small `m`; refuses problems with `m * k` beyond
/// `dense_limit` (default 2000).
pub fn matrix_shrinkage_factor(
    state: &ChainState,
    data: &AreaDataset,
    structure: Option<&SpatialStructure>,
    dense_limit: Option<usize>,
) -> Result<DMatrix<f64>> {
    let (m, k) = (data.m(), data.k());
    let n = m * k;
    let limit = dense_limit.unwrap_or(DEFAULT_DENSE_LIMIT);
    if n > limit {
        return Err(Error::Invalid(format!(
            "dense shrinkage factor refused: m*k = {} exceeds limit {}",
            n, limit
        )));
    }
    let u = assemble_prior_covariance(&state.lambda, &state.sigma, state.rho, state.tau2, structure)?;
    let mut v = DMatrix::<f64>::zeros(n, n);
    for i in 0..m {
        let vi = data.v(i);
        for r in 0..k {
            for c in 0..k {
                v[(i * k + r, i * k + c)] = vi[(r, c)];
            }
        }
    }
    let total = &u + &v;
    let total_inv = Cholesky::new(total)
        .ok_or_else(|| Error::NotSpd("U + V".into()))?
        .inverse();
    Ok(v * total_inv)
}
