//! Model variants, hyperparameter specification, chain state and stored
//! posterior draws.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model variant fitted by the Gibbs engine.
///
/// * `Fh` — multivariate Fay-Herriot: independent area effects `N(0, Sigma)`.
/// * `Hs` — area-level horseshoe: one local scale per area.
/// * `SpaFh` — spatial FH with a proper MCAR prior on the effects.
/// * `SpaGa` — spatial sandwich-mixture prior with normal-gamma locals.
/// * `SpaHs` — spatial sandwich-mixture prior with horseshoe locals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Fh,
    Hs,
    SpaFh,
    SpaGa,
    SpaHs,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::SpaHs,
        Variant::SpaGa,
        Variant::SpaFh,
        Variant::Hs,
        Variant::Fh,
    ];

    /// Whether the effects carry the CAR structure (otherwise `D = I`,
    /// `rho = 0`).
    pub fn is_spatial(&self) -> bool {
        matches!(self, Variant::SpaFh | Variant::SpaGa | Variant::SpaHs)
    }

    /// Whether local scales are sampled at all (else `Lambda = I`).
    pub fn has_local_shrinkage(&self) -> bool {
        matches!(self, Variant::Hs | Variant::SpaGa | Variant::SpaHs)
    }

    /// Element-wise locals updated by elliptical slice sampling.
    pub fn uses_ess_locals(&self) -> bool {
        matches!(self, Variant::SpaGa | Variant::SpaHs)
    }

    /// Whether the global scale `tau^2` is sampled (point mass at 1
    /// otherwise).
    pub fn samples_tau2(&self) -> bool {
        matches!(self, Variant::SpaHs)
    }

    /// Whether the normal-gamma hyperparameters `(a, b)` are sampled.
    pub fn samples_ng_hypers(&self) -> bool {
        matches!(self, Variant::SpaGa)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Fh => "fh",
            Variant::Hs => "hs",
            Variant::SpaFh => "spafh",
            Variant::SpaGa => "spaga",
            Variant::SpaHs => "spahs",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fh" => Ok(Variant::Fh),
            "hs" => Ok(Variant::Hs),
            "spafh" => Ok(Variant::SpaFh),
            "spaga" => Ok(Variant::SpaGa),
            "spahs" => Ok(Variant::SpaHs),
            other => Err(Error::Invalid(format!(
                "unknown variant '{}' (expected fh, hs, spafh, spaga or spahs)",
                other
            ))),
        }
    }
}

/// The 31-point discrete uniform support for the spatial dependence
/// parameter: 0, 0.05, ..., 0.80, 0.82, ..., 0.90, 0.91, ..., 0.99.
pub fn default_rho_grid() -> Vec<f64> {
    let mut hundredths: Vec<u32> = (0..=16).map(|i| 5 * i).collect();
    hundredths.extend((1..=5).map(|i| 80 + 2 * i));
    hundredths.extend(91..=99);
    hundredths.into_iter().map(|h| f64::from(h) / 100.0).collect()
}

/// The 100-point discrete uniform support for the normal-gamma shape:
/// 0.01, 0.02, ..., 1.00.
pub fn default_a_grid() -> Vec<f64> {
    (1..=100).map(|i| f64::from(i) / 100.0).collect()
}

/// Model variant plus all fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub variant: Variant,
    /// Inverse-Wishart degrees of freedom for `Sigma` (default `k`).
    pub nu0: f64,
    /// Inverse-Wishart scale matrix for `Sigma` (default `I_k`).
    pub b_scale: DMatrix<f64>,
    /// Candidate values for `rho`, strictly increasing in `[0, 1)`.
    pub rho_grid: Vec<f64>,
    /// Gamma hyperprior shape for the normal-gamma rate `b`.
    pub ng_c: f64,
    /// Gamma hyperprior rate for the normal-gamma rate `b`.
    pub ng_d: f64,
    /// Candidate values for the normal-gamma shape `a`.
    pub a_grid: Vec<f64>,
    /// Sigmoid relaxation constant for the positivity constraint on locals.
    pub eta: f64,
    /// Chain seed.
    pub seed: u64,
    /// Optional Gaussian prior variance for `beta` (`None` = flat prior).
    pub beta_prior_variance: Option<f64>,
}

impl ModelSpec {
    /// Spec with paper-default hyperparameters for response dimension `k`.
    pub fn new(variant: Variant, k: usize) -> Self {
        Self {
            variant,
            nu0: k as f64,
            b_scale: DMatrix::identity(k, k),
            rho_grid: default_rho_grid(),
            ng_c: 0.001,
            ng_d: 0.001,
            a_grid: default_a_grid(),
            eta: 100.0,
            seed: 0,
            beta_prior_variance: None,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.nu0 < k as f64 {
            return Err(Error::Invalid(format!(
                "nu0 = {} must be at least k = {} for a proper inverse-Wishart prior",
                self.nu0, k
            )));
        }
        if self.b_scale.nrows() != k || self.b_scale.ncols() != k {
            return Err(Error::Dimension(format!(
                "B is {}x{}, expected {}x{}",
                self.b_scale.nrows(),
                self.b_scale.ncols(),
                k,
                k
            )));
        }
        if self.rho_grid.is_empty() {
            return Err(Error::Invalid("rho grid is empty".into()));
        }
        for w in self.rho_grid.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Invalid("rho grid must be strictly increasing".into()));
            }
        }
        let (&lo, &hi) = (
            self.rho_grid.first().unwrap(),
            self.rho_grid.last().unwrap(),
        );
        if lo < 0.0 || hi >= 1.0 {
            return Err(Error::Invalid("rho grid must lie in [0, 1)".into()));
        }
        if self.a_grid.is_empty() || self.a_grid.iter().any(|&a| a <= 0.0) {
            return Err(Error::Invalid("a grid must be nonempty and positive".into()));
        }
        if self.eta <= 0.0 {
            return Err(Error::Invalid("eta must be positive".into()));
        }
        if self.ng_c <= 0.0 || self.ng_d <= 0.0 {
            return Err(Error::Invalid("normal-gamma hyperparameters must be positive".into()));
        }
        if let Some(v) = self.beta_prior_variance {
            if v <= 0.0 {
                return Err(Error::Invalid("beta prior variance must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Current values of every sampled quantity in one chain.
///
/// A state is owned by exactly one chain. Under `Fh`/`SpaFh` all `lambda`
/// entries stay at 1 and `tau2` at 1; under `Hs` the `lambda` entries
/// within an area are equal; under `SpaGa` `tau2` stays at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub beta: DVector<f64>,
    /// Transformed effects `u_tilde_i`, one length-`k` vector per area.
    pub u_tilde: Vec<DVector<f64>>,
    /// Local scales, one length-`k` vector per area. Entries sampled by
    /// the relaxed slice sampler may be (rarely) nonpositive.
    pub lambda: Vec<DVector<f64>>,
    pub sigma: DMatrix<f64>,
    pub rho: f64,
    pub tau2: f64,
    /// Augmentation variable for the half-Cauchy global scale.
    pub psi: f64,
    /// Normal-gamma shape.
    pub a: f64,
    /// Normal-gamma rate.
    pub b: f64,
}

impl ChainState {
    pub fn m(&self) -> usize {
        self.u_tilde.len()
    }

    pub fn k(&self) -> usize {
        self.sigma.nrows()
    }

    /// Effects on the data scale: `u_i = Lambda_i u_tilde_i`.
    pub fn u(&self, i: usize) -> DVector<f64> {
        self.lambda[i].component_mul(&self.u_tilde[i])
    }
}

/// One stored draw of the chain hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperDraw {
    pub rho: f64,
    pub tau2: f64,
    pub a: f64,
    pub b: f64,
    /// Row-major `k x k` entries of `Sigma`.
    pub sigma: Vec<f64>,
}

/// Post-burn-in draws of the small-area means, effects and
/// hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub m: usize,
    pub k: usize,
    pub n_total: usize,
    pub n_burnin: usize,
    pub thin: usize,
    /// Absolute iteration index of each stored draw.
    pub iterations: Vec<usize>,
    /// `S * m * k`, draw-major then area then response.
    pub theta: Vec<f64>,
    /// Same layout as `theta`; present only when `store_u` was set.
    pub u: Option<Vec<f64>>,
    /// Posterior mean of `u`, accumulated regardless of `store_u`.
    pub u_mean: Vec<f64>,
    /// Posterior mean of the local scales.
    pub lambda_mean: Vec<f64>,
    pub hyper: Vec<HyperDraw>,
    /// Copy of the rho support used by the chain.
    pub rho_grid: Vec<f64>,
}

impl PosteriorDraws {
    /// Number of stored draws.
    pub fn n_stored(&self) -> usize {
        self.iterations.len()
    }

    pub fn theta_at(&self, draw: usize, area: usize, response: usize) -> f64 {
        self.theta[(draw * self.m + area) * self.k + response]
    }

    /// The stored chain for one component of `theta`.
    pub fn theta_chain(&self, area: usize, response: usize) -> Vec<f64> {
        (0..self.n_stored())
            .map(|s| self.theta_at(s, area, response))
            .collect()
    }

    /// Posterior means of the small-area means, `m x k`.
    pub fn theta_mean(&self) -> DMatrix<f64> {
        let s = self.n_stored() as f64;
        let mut out = DMatrix::<f64>::zeros(self.m, self.k);
        for draw in 0..self.n_stored() {
            for i in 0..self.m {
                for j in 0..self.k {
                    out[(i, j)] += self.theta_at(draw, i, j);
                }
            }
        }
        out / s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_grid_matches_published_support() {
        let g = default_rho_grid();
        assert_eq!(g.len(), 31);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[16], 0.80);
        assert_eq!(g[17], 0.82);
        assert_eq!(g[21], 0.90);
        assert_eq!(g[22], 0.91);
        assert_eq!(g[30], 0.99);
        for w in g.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn a_grid_is_hundred_points() {
        let g = default_a_grid();
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[99], 1.00);
    }

    #[test]
    fn spec_validation_rejects_bad_values() {
        let mut spec = ModelSpec::new(Variant::SpaHs, 2);
        assert!(spec.validate(2).is_ok());
        spec.nu0 = 1.0;
        assert!(spec.validate(2).is_err());
        spec.nu0 = 2.0;
        spec.eta = 0.0;
        assert!(spec.validate(2).is_err());
        spec.eta = 100.0;
        spec.rho_grid = vec![0.5, 0.5];
        assert!(spec.validate(2).is_err());
    }

    #[test]
    fn variant_parsing_round_trips() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("bogus".parse::<Variant>().is_err());
    }
}
