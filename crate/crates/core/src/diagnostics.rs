//! Model comparison and chain quality: DIC, effective sample size,
//! Moran's I and posterior summaries.

use nalgebra::DMatrix;

use crate::dataset::AreaDataset;
use crate::error::{Error, Result};
use crate::model::PosteriorDraws;
use crate::spatial::SpatialStructure;

/// Empirical quantile with linear interpolation on a sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let w = h - lo as f64;
    sorted[lo] + w * (sorted[hi] - sorted[lo])
}

/// Deviance of one draw: `sum_i (y_i - theta_i)' V_i^{-1} (y_i - theta_i)`.
fn deviance(draws: &PosteriorDraws, data: &AreaDataset, theta_of: impl Fn(usize, usize) -> f64) -> f64 {
    let v_inv = data.v_inverses();
    let mut total = 0.0;
    for i in 0..draws.m {
        let mut resid = data.y(i).clone();
        for j in 0..draws.k {
            resid[j] -= theta_of(i, j);
        }
        total += resid.dot(&(&v_inv[i] * &resid));
    }
    total
}

/// DIC estimator `(2/S) sum_s D(theta^{(s)}) - D(theta_hat)` with the
/// posterior-mean plug-in, returned together with the effective number of
/// parameters `p_d = D_bar - D(theta_hat)`.
pub fn compute_dic(draws: &PosteriorDraws, data: &AreaDataset) -> Result<(f64, f64)> {
    let s = draws.n_stored();
    if s < 2 {
        return Err(Error::Invalid("DIC needs at least two stored draws".into()));
    }
    if draws.m != data.m() || draws.k != data.k() {
        return Err(Error::Dimension("draws and dataset disagree on m or k".into()));
    }
    let v_inv = data.v_inverses();
    let mut d_bar = 0.0;
    for draw in 0..s {
        let mut d = 0.0;
        for i in 0..draws.m {
            let mut resid = data.y(i).clone();
            for j in 0..draws.k {
                resid[j] -= draws.theta_at(draw, i, j);
            }
            d += resid.dot(&(&v_inv[i] * &resid));
        }
        d_bar += d;
    }
    d_bar /= s as f64;
    let theta_hat = draws.theta_mean();
    let d_hat = deviance(draws, data, |i, j| theta_hat[(i, j)]);
    let p_d = d_bar - d_hat;
    Ok((2.0 * d_bar - d_hat, p_d))
}

/// Effective sample size estimate for one scalar chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssEstimate {
    pub ess: f64,
    /// Set when the chain has (numerically) zero variance; `ess` is then
    /// the chain length by convention.
    pub degenerate: bool,
}

/// Initial-positive-sequence autocorrelation estimator:
/// `S / (1 + 2 sum_t rho_t)` with the sum truncated at the first
/// nonpositive pair of consecutive autocorrelations, clipped to `(0, S]`.
pub fn effective_sample_size(chain: &[f64]) -> Result<EssEstimate> {
    let s = chain.len();
    if s < 10 {
        return Err(Error::Invalid(format!("ESS needs at least 10 draws, got {}", s)));
    }
    let n = s as f64;
    let mean = chain.iter().sum::<f64>() / n;
    let var = chain.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let scale = chain.iter().map(|&x| x * x).sum::<f64>() / n;
    if var <= 1e-14 * scale.max(1e-300) {
        return Ok(EssEstimate { ess: n, degenerate: true });
    }

    let autocorr = |lag: usize| -> f64 {
        let mut acc = 0.0;
        for i in 0..s - lag {
            acc += (chain[i] - mean) * (chain[i + lag] - mean);
        }
        acc / n / var
    };
    let mut sum = 0.0;
    let mut t = 1;
    while t + 1 < s {
        let pair = autocorr(t) + autocorr(t + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        t += 2;
    }
    let ess = (n / (1.0 + 2.0 * sum)).clamp(f64::MIN_POSITIVE, n);
    Ok(EssEstimate { ess, degenerate: false })
}

/// Moran's I with binary adjacency weights:
/// `(m / sum w) * sum_{ij} w_ij (x_i - xbar)(x_j - xbar) / sum_i (x_i - xbar)^2`.
pub fn morans_i(values: &[f64], structure: &SpatialStructure) -> Result<f64> {
    let m = values.len();
    if m != structure.m() {
        return Err(Error::Dimension("values and structure disagree on m".into()));
    }
    if m < 3 {
        return Err(Error::Invalid("Moran's I needs at least 3 areas".into()));
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    let denom: f64 = values.iter().map(|&x| (x - mean) * (x - mean)).sum();
    if denom == 0.0 {
        return Err(Error::Invalid("Moran's I undefined for a constant field".into()));
    }
    let mut cross = 0.0;
    for i in 0..m {
        for &j in structure.neighbors(i) {
            cross += (values[i] - mean) * (values[j] - mean);
        }
    }
    Ok((m as f64 / structure.weight_total()) * cross / denom)
}

/// Posterior summaries of one fit.
#[derive(Debug, Clone)]
pub struct FitSummary {
    pub theta_mean: DMatrix<f64>,
    pub theta_q025: DMatrix<f64>,
    pub theta_q975: DMatrix<f64>,
    pub u_mean: DMatrix<f64>,
    pub dic: f64,
    pub p_d: f64,
    /// Mean effective sample size across the components of `theta`.
    pub mean_ess: f64,
    /// Posterior mass on each grid value of `rho`.
    pub rho_posterior: Vec<(f64, f64)>,
}

/// Populates a [`FitSummary`] from stored draws.
pub fn summarize_fit(draws: &PosteriorDraws, data: &AreaDataset) -> Result<FitSummary> {
    let (m, k) = (draws.m, draws.k);
    let s = draws.n_stored();
    if s == 0 {
        return Err(Error::Invalid("no stored draws".into()));
    }
    let theta_mean = draws.theta_mean();
    let mut q025 = DMatrix::<f64>::zeros(m, k);
    let mut q975 = DMatrix::<f64>::zeros(m, k);
    let mut ess_sum = 0.0;
    for i in 0..m {
        for j in 0..k {
            let mut chain = draws.theta_chain(i, j);
            ess_sum += if s >= 10 {
                effective_sample_size(&chain)?.ess
            } else {
                s as f64
            };
            chain.sort_by(|a, b| a.partial_cmp(b).unwrap());
            q025[(i, j)] = quantile_sorted(&chain, 0.025);
            q975[(i, j)] = quantile_sorted(&chain, 0.975);
        }
    }
    let (dic, p_d) = if s >= 2 {
        compute_dic(draws, data)?
    } else {
        let d = deviance(draws, data, |i, j| draws.theta_at(0, i, j));
        (d, 0.0)
    };
    let u_mean = DMatrix::from_fn(m, k, |i, j| draws.u_mean[i * k + j]);
    let mut rho_mass = vec![0.0f64; draws.rho_grid.len()];
    for h in &draws.hyper {
        let idx = draws
            .rho_grid
            .iter()
            .position(|&g| g == h.rho)
            .unwrap_or_else(|| nearest_index(&draws.rho_grid, h.rho));
        rho_mass[idx] += 1.0;
    }
    let total: f64 = rho_mass.iter().sum();
    let rho_posterior = draws
        .rho_grid
        .iter()
        .zip(rho_mass)
        .map(|(&g, c)| (g, if total > 0.0 { c / total } else { 0.0 }))
        .collect();
    Ok(FitSummary {
        theta_mean,
        theta_q025: q025,
        theta_q975: q975,
        u_mean,
        dic,
        p_d,
        mean_ess: ess_sum / (m * k) as f64,
        rho_posterior,
    })
}

fn nearest_index(grid: &[f64], value: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &g) in grid.iter().enumerate() {
        let d = (g - value).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}
