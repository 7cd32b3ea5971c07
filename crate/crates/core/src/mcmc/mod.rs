//! Full conditionals of the spatial sandwich-mixture model, the grid
//! samplers for `rho` and `a`, and the Gibbs driver composing them per
//! variant.
//!
//! One sweep updates, in fixed order: `beta`, then `u_tilde` area by area
//! (Gauss-Seidel, each conditional using the freshest neighbor values),
//! then `Sigma`, `rho` (spatial variants), the local scales (shrinkage
//! variants) and finally the globals (`tau^2`/`psi` or `a`/`b`).

pub mod ess;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::algebra::{assemble_theta, kron_quadratic_form};
use crate::dataset::AreaDataset;
use crate::error::{Error, Result};
use crate::model::{ChainState, HyperDraw, ModelSpec, PosteriorDraws, Variant};
use crate::priors::{inverse_gamma_sample, gamma_sample, relaxed_constraint_log, LocalPrior};
use crate::spatial::SpatialStructure;
use ess::{ess_sample_lambda, EssTarget};

/// Components of `u_tilde` smaller than this in magnitude are clamped
/// when forming the elementwise ratio `(y - X beta) / u_tilde`.
pub const U_TILDE_CLAMP: f64 = 1e-12;

/// Iteration bookkeeping for one chain.
#[derive(Debug, Clone, Copy)]
pub struct ChainConfig {
    pub n_total: usize,
    pub n_burnin: usize,
    /// Thinning stride over post-burn-in iterations.
    pub thin: usize,
    /// Store per-draw effects in addition to their running mean.
    pub store_u: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { n_total: 2000, n_burnin: 500, thin: 1, store_u: true }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_burnin >= self.n_total {
            return Err(Error::Invalid(format!(
                "n_burnin = {} must be below n_total = {}",
                self.n_burnin, self.n_total
            )));
        }
        if self.thin == 0 {
            return Err(Error::Invalid("thin must be at least 1".into()));
        }
        Ok(())
    }
}

/// Gibbs sampler for one (dataset, variant) pair.
///
/// Holds everything that does not change across iterations: the inverted
/// sampling covariances, the regression normal equations, the per-grid
/// log-determinant terms for `rho` and the log-gamma table for the `a`
/// grid. `X` and `V` are baked in at construction; `y` is taken per call
/// so callers may regenerate responses between sweeps.
pub struct GibbsSampler<'a> {
    spec: ModelSpec,
    structure: Option<&'a SpatialStructure>,
    m: usize,
    k: usize,
    v_inv: Vec<DMatrix<f64>>,
    xt_vinv: Vec<DMatrix<f64>>,
    chol_xtvx: Cholesky<f64, Dyn>,
    rho_log_det: Vec<f64>,
    a_ln_gamma: Vec<f64>,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(
        data: &AreaDataset,
        structure: Option<&'a SpatialStructure>,
        spec: &ModelSpec,
    ) -> Result<Self> {
        let (m, k, s) = (data.m(), data.k(), data.s());
        spec.validate(k)?;
        if spec.variant.is_spatial() && structure.is_none() {
            return Err(Error::Invalid(format!(
                "variant {} requires a spatial structure",
                spec.variant
            )));
        }
        if let Some(st) = structure {
            if st.m() != m {
                return Err(Error::Dimension(format!(
                    "dataset has {} areas, structure has {}",
                    m,
                    st.m()
                )));
            }
        }
        let v_inv = data.v_inverses();
        let xt_vinv: Vec<DMatrix<f64>> =
            (0..m).map(|i| data.x(i).transpose() * &v_inv[i]).collect();
        let mut xtvx = DMatrix::<f64>::zeros(s, s);
        for i in 0..m {
            xtvx += &xt_vinv[i] * data.x(i);
        }
        if let Some(var) = spec.beta_prior_variance {
            xtvx += DMatrix::<f64>::identity(s, s) / var;
        }
        let chol_xtvx = Cholesky::new(xtvx)
            .ok_or_else(|| Error::Invalid("X'V^{-1}X is singular".into()))?;
        let rho_log_det = match structure {
            Some(st) if spec.variant.is_spatial() => spec
                .rho_grid
                .iter()
                .map(|&r| st.log_one_minus_rho_gamma(r))
                .collect::<Result<Vec<_>>>()?,
            _ => Vec::new(),
        };
        let a_ln_gamma = spec.a_grid.iter().map(|&a| ln_gamma(a)).collect();
        Ok(Self {
            spec: spec.clone(),
            structure,
            m,
            k,
            v_inv,
            xt_vinv,
            chol_xtvx,
            rho_log_det,
            a_ln_gamma,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn w_plus(&self, i: usize) -> f64 {
        match self.structure {
            Some(st) if self.spec.variant.is_spatial() => st.degree(i),
            _ => 1.0,
        }
    }

    fn neighbor_sum(&self, state: &ChainState, i: usize) -> DVector<f64> {
        let mut sum = DVector::<f64>::zeros(self.k);
        if let Some(st) = self.structure {
            if self.spec.variant.is_spatial() {
                for &j in st.neighbors(i) {
                    sum += &state.u_tilde[j];
                }
            }
        }
        sum
    }

    /// Starting state: GLS fit for `beta` with zero effects, prior-scale
    /// normal draws for `u_tilde`, all scales at one, `rho` at the grid
    /// median for spatial variants and zero otherwise.
    pub fn init_state(&self, rng: &mut impl Rng, data: &AreaDataset) -> ChainState {
        let mut rhs = DVector::<f64>::zeros(data.s());
        for i in 0..self.m {
            rhs += &self.xt_vinv[i] * data.y(i);
        }
        let beta = self.chol_xtvx.solve(&rhs);
        let u_tilde = (0..self.m)
            .map(|i| {
                let z = DVector::from_iterator(
                    self.k,
                    (0..self.k).map(|_| StandardNormal.sample(rng)),
                );
                z / self.w_plus(i).sqrt()
            })
            .collect();
        let rho = if self.spec.variant.is_spatial() {
            self.spec.rho_grid[self.spec.rho_grid.len() / 2]
        } else {
            0.0
        };
        ChainState {
            beta,
            u_tilde,
            lambda: vec![DVector::from_element(self.k, 1.0); self.m],
            sigma: DMatrix::identity(self.k, self.k),
            rho,
            tau2: 1.0,
            psi: 1.0,
            a: 0.5,
            b: 1.0,
        }
    }

    /// `beta | - ~ N(m, (X'V^{-1}X)^{-1})` with
    /// `m = (X'V^{-1}X)^{-1} X'V^{-1} (y - Lambda u_tilde)`; an optional
    /// Gaussian prior on `beta` adds its precision to the normal
    /// equations.
    pub fn sample_beta(
        &self,
        rng: &mut impl Rng,
        data: &AreaDataset,
        state: &ChainState,
    ) -> DVector<f64> {
        let mut rhs = DVector::<f64>::zeros(data.s());
        for i in 0..self.m {
            let z = data.y(i) - state.u(i);
            rhs += &self.xt_vinv[i] * z;
        }
        gaussian_from_precision_chol(rng, &self.chol_xtvx, &rhs)
    }

    /// Precision and right-hand side of the `u_tilde_i` conditional:
    /// `A = Lambda_i V_i^{-1} Lambda_i + (w_{i+}/tau^2) Sigma^{-1}`,
    /// `b = Lambda_i V_i^{-1} (y_i - X_i beta) +
    ///      (rho/tau^2) Sigma^{-1} sum_{j~i} u_tilde_j`.
    pub fn u_tilde_conditional(
        &self,
        data: &AreaDataset,
        state: &ChainState,
        sigma_inv: &DMatrix<f64>,
        i: usize,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let lam = &state.lambda[i];
        let vi = &self.v_inv[i];
        let like_prec =
            DMatrix::from_fn(self.k, self.k, |r, c| lam[r] * vi[(r, c)] * lam[c]);
        let prior_prec = sigma_inv * (self.w_plus(i) / state.tau2);
        let a = like_prec + prior_prec;

        let xi = data.y(i) - data.x(i) * &state.beta;
        let lam_v_xi = DVector::from_fn(self.k, |r, _| {
            lam[r] * (vi.row(r) * &xi)[(0, 0)]
        });
        let b = lam_v_xi + sigma_inv * self.neighbor_sum(state, i) * (state.rho / state.tau2);
        (a, b)
    }

    /// Draws `u_tilde_i` from its Gaussian full conditional using the
    /// current (partially updated) neighbor values.
    pub fn sample_u_tilde_area(
        &self,
        rng: &mut impl Rng,
        data: &AreaDataset,
        state: &ChainState,
        i: usize,
    ) -> Result<DVector<f64>> {
        let sigma_inv = spd_inverse(&state.sigma, "Sigma")?;
        self.sample_u_tilde_area_with(rng, data, state, &sigma_inv, i)
    }

    fn sample_u_tilde_area_with(
        &self,
        rng: &mut impl Rng,
        data: &AreaDataset,
        state: &ChainState,
        sigma_inv: &DMatrix<f64>,
        i: usize,
    ) -> Result<DVector<f64>> {
        let (a, b) = self.u_tilde_conditional(data, state, sigma_inv, i);
        let chol = Cholesky::new(a)
            .ok_or_else(|| Error::NotSpd(format!("u_tilde conditional precision, area {}", i)))?;
        Ok(gaussian_from_precision_chol(rng, &chol, &b))
    }

    /// Degrees of freedom and scale of the `Sigma` conditional,
    /// `IW(m + nu0, B + tau^{-2} U~ (D - rho W) U~')`, accumulated from
    /// neighbor sums.
    pub fn sigma_conditional(&self, state: &ChainState) -> (f64, DMatrix<f64>) {
        let mut scatter = DMatrix::<f64>::zeros(self.k, self.k);
        for i in 0..self.m {
            let ui = &state.u_tilde[i];
            scatter += ui * ui.transpose() * self.w_plus(i);
            if state.rho != 0.0 {
                let nb = self.neighbor_sum(state, i);
                scatter -= ui * nb.transpose() * state.rho;
            }
        }
        let scale = &self.spec.b_scale + scatter / state.tau2;
        (self.m as f64 + self.spec.nu0, symmetrize(scale))
    }

    pub fn sample_sigma(&self, rng: &mut impl Rng, state: &ChainState) -> Result<DMatrix<f64>> {
        let (dof, scale) = self.sigma_conditional(state);
        crate::priors::inverse_wishart_sample(rng, dof, &scale)
    }

    /// Log weights of the categorical `rho` conditional over the grid:
    /// `(k/2) sum_i log(1 - rho gamma_i) - (Q0 - rho Q_W) / (2 tau^2)`
    /// where `Q0 = tr(D U~' Sigma^{-1} U~)` and
    /// `Q_W = tr(W U~' Sigma^{-1} U~)`.
    pub fn rho_log_weights(&self, state: &ChainState) -> Result<Vec<f64>> {
        let st = self
            .structure
            .filter(|_| self.spec.variant.is_spatial())
            .ok_or_else(|| Error::Invalid("rho is only sampled for spatial variants".into()))?;
        let sigma_inv = spd_inverse(&state.sigma, "Sigma")?;
        let mut q_diag = 0.0;
        let mut q_cross = 0.0;
        for i in 0..self.m {
            let si = &sigma_inv * &state.u_tilde[i];
            q_diag += st.degree(i) * state.u_tilde[i].dot(&si);
            for &j in st.neighbors(i) {
                q_cross += state.u_tilde[j].dot(&si);
            }
        }
        let half_k = 0.5 * self.k as f64;
        Ok(self
            .spec
            .rho_grid
            .iter()
            .zip(&self.rho_log_det)
            .map(|(&rho, &ld)| half_k * ld - (q_diag - rho * q_cross) / (2.0 * state.tau2))
            .collect())
    }

    pub fn sample_rho(&self, rng: &mut impl Rng, state: &ChainState) -> Result<f64> {
        let logw = self.rho_log_weights(state)?;
        Ok(self.spec.rho_grid[categorical_from_log_weights(rng, &logw)])
    }

    /// Elliptical-slice target for the local scales of area `i`:
    /// mean `(y_i - X_i beta) / u_tilde_i` (elementwise, with the tiny
    /// components clamped), covariance `(U~_i V_i^{-1} U~_i)^{-1}` and the
    /// local prior times the sigmoid relaxation as the non-Gaussian part.
    pub fn lambda_target(
        &self,
        data: &AreaDataset,
        state: &ChainState,
        i: usize,
    ) -> Result<EssTarget> {
        let prior = self.local_prior(state)?;
        let eta = self.spec.eta;
        let ut = clamp_u_tilde(&state.u_tilde[i]);
        let xi = data.y(i) - data.x(i) * &state.beta;
        let mu = xi.component_div(&ut);
        let vi = &self.v_inv[i];
        let prec = DMatrix::from_fn(self.k, self.k, |r, c| ut[r] * vi[(r, c)] * ut[c]);
        let omega = spd_inverse(&prec, "local-scale conditional precision")?;
        let log_target = move |lam: &DVector<f64>| {
            lam.iter().map(|&l| prior.log_kernel_signed(l)).sum::<f64>()
                + relaxed_constraint_log(eta, lam)
        };
        Ok(EssTarget { mu, omega, log_target: Box::new(log_target) })
    }

    fn local_prior(&self, state: &ChainState) -> Result<LocalPrior> {
        match self.spec.variant {
            Variant::SpaHs => Ok(LocalPrior::horseshoe()),
            Variant::SpaGa => LocalPrior::normal_gamma(state.a, state.b),
            v => Err(Error::Invalid(format!(
                "variant {} has no elementwise local prior",
                v
            ))),
        }
    }

    /// Area-level conjugate update for the `Hs` variant: holding
    /// `u_i = lambda_i u_tilde_i` fixed, draw the shared scale from
    /// `lambda_i^2 | - ~ IG((k+1)/2, u_i' Sigma^{-1} u_i / 2 + 1/psi_i)`
    /// under the half-Cauchy augmentation, then rescale `u_tilde_i`.
    fn update_lambda_area_hs(
        &self,
        rng: &mut impl Rng,
        state: &mut ChainState,
        sigma_inv: &DMatrix<f64>,
        i: usize,
    ) {
        let lam_old = state.lambda[i][0];
        let u_i = state.u(i);
        let qf = u_i.dot(&(sigma_inv * &u_i));
        let psi_i = inverse_gamma_sample(rng, 0.5, 1.0 + 1.0 / (lam_old * lam_old));
        let lam2 = inverse_gamma_sample(rng, 0.5 * (self.k as f64 + 1.0), 0.5 * qf + 1.0 / psi_i);
        let lam_new = lam2.sqrt();
        state.lambda[i] = DVector::from_element(self.k, lam_new);
        state.u_tilde[i] = u_i / lam_new;
    }

    /// Horseshoe global scale: exact inverse-gamma draws for `tau^2` and
    /// its augmentation `psi`.
    pub fn sample_tau2_hs(&self, rng: &mut impl Rng, state: &ChainState) -> Result<(f64, f64)> {
        let st = self
            .structure
            .ok_or_else(|| Error::Invalid("tau^2 sampling needs a spatial structure".into()))?;
        let sigma_inv = spd_inverse(&state.sigma, "Sigma")?;
        let qf = kron_quadratic_form(&state.u_tilde, &sigma_inv, st, state.rho)?;
        let shape = 0.5 * ((self.m * self.k) as f64 + 1.0);
        let tau2 = inverse_gamma_sample(rng, shape, 0.5 * qf + 1.0 / state.psi);
        let psi = inverse_gamma_sample(rng, 0.5, 1.0 / tau2 + 1.0);
        Ok((tau2, psi))
    }

    /// Log weights of the categorical `a` conditional over the grid for a
    /// given rate `b`:
    /// `mk (a log b - log Gamma(a)) + (2a - 1) sum log |lambda|`.
    pub fn a_log_weights(&self, state: &ChainState, b: f64) -> Vec<f64> {
        let mk = (self.m * self.k) as f64;
        let sum_log_abs: f64 = state
            .lambda
            .iter()
            .flat_map(|l| l.iter())
            .map(|&l| l.abs().max(1e-300).ln())
            .sum();
        let log_b = b.ln();
        self.spec
            .a_grid
            .iter()
            .zip(&self.a_ln_gamma)
            .map(|(&a, &lg)| mk * (a * log_b - lg) + (2.0 * a - 1.0) * sum_log_abs)
            .collect()
    }

    /// Normal-gamma hyperparameters: the rate from
    /// `b | - ~ Ga(a m k + c, sum lambda^2 + d)`, then the shape from its
    /// grid conditional given the fresh rate.
    pub fn sample_ng_hypers(&self, rng: &mut impl Rng, state: &ChainState) -> (f64, f64) {
        let mk = (self.m * self.k) as f64;
        let sum_sq: f64 = state
            .lambda
            .iter()
            .flat_map(|l| l.iter())
            .map(|&l| l * l)
            .sum();
        let b = gamma_sample(rng, state.a * mk + self.spec.ng_c, sum_sq + self.spec.ng_d);
        let logw = self.a_log_weights(state, b);
        let a = self.spec.a_grid[categorical_from_log_weights(rng, &logw)];
        (a, b)
    }

    /// One full sweep in the fixed update order. Variant-specific blocks
    /// are skipped entirely (no RNG is consumed for them), so freezing a
    /// block reproduces the nested variant draw for draw.
    pub fn gibbs_step(
        &self,
        rng: &mut impl Rng,
        data: &AreaDataset,
        state: &mut ChainState,
    ) -> Result<()> {
        state.beta = self.sample_beta(rng, data, state);

        let sigma_inv = spd_inverse(&state.sigma, "Sigma")?;
        for i in 0..self.m {
            state.u_tilde[i] = self.sample_u_tilde_area_with(rng, data, state, &sigma_inv, i)?;
        }

        state.sigma = self.sample_sigma(rng, state)?;

        if self.spec.variant.is_spatial() {
            state.rho = self.sample_rho(rng, state)?;
        }

        match self.spec.variant {
            Variant::SpaHs | Variant::SpaGa => {
                for i in 0..self.m {
                    let target = self.lambda_target(data, state, i)?;
                    state.lambda[i] = ess_sample_lambda(rng, &target, &state.lambda[i])?;
                }
            }
            Variant::Hs => {
                let sigma_inv = spd_inverse(&state.sigma, "Sigma")?;
                for i in 0..self.m {
                    self.update_lambda_area_hs(rng, state, &sigma_inv, i);
                }
            }
            _ => {}
        }

        if self.spec.variant.samples_tau2() {
            let (tau2, psi) = self.sample_tau2_hs(rng, state)?;
            state.tau2 = tau2;
            state.psi = psi;
        }
        if self.spec.variant.samples_ng_hypers() {
            let (a, b) = self.sample_ng_hypers(rng, state);
            state.a = a;
            state.b = b;
        }
        Ok(())
    }
}

/// Runs one chain and stores the post-burn-in draws. Deterministic given
/// the RNG state and inputs.
pub fn run_chain(
    rng: &mut impl Rng,
    data: &AreaDataset,
    structure: Option<&SpatialStructure>,
    spec: &ModelSpec,
    config: &ChainConfig,
) -> Result<PosteriorDraws> {
    config.validate()?;
    let sampler = GibbsSampler::new(data, structure, spec)?;
    let (m, k) = (data.m(), data.k());
    let n_stored = (config.n_total - config.n_burnin).div_ceil(config.thin);

    let mut state = sampler.init_state(rng, data);
    let mut draws = PosteriorDraws {
        m,
        k,
        n_total: config.n_total,
        n_burnin: config.n_burnin,
        thin: config.thin,
        iterations: Vec::with_capacity(n_stored),
        theta: Vec::with_capacity(n_stored * m * k),
        u: if config.store_u { Some(Vec::with_capacity(n_stored * m * k)) } else { None },
        u_mean: vec![0.0; m * k],
        lambda_mean: vec![0.0; m * k],
        hyper: Vec::with_capacity(n_stored),
        rho_grid: spec.rho_grid.clone(),
    };

    for t in 0..config.n_total {
        sampler
            .gibbs_step(rng, data, &mut state)
            .map_err(|e| Error::ChainDiverged { iteration: t, msg: e.to_string() })?;
        if t >= config.n_burnin && (t - config.n_burnin) % config.thin == 0 {
            record_draw(&mut draws, &state, data, t);
        }
    }
    let n = draws.n_stored() as f64;
    for v in draws.u_mean.iter_mut() {
        *v /= n;
    }
    for v in draws.lambda_mean.iter_mut() {
        *v /= n;
    }
    Ok(draws)
}

fn record_draw(draws: &mut PosteriorDraws, state: &ChainState, data: &AreaDataset, t: usize) {
    let (m, k) = (draws.m, draws.k);
    let theta = assemble_theta(state, data);
    draws.iterations.push(t);
    for i in 0..m {
        for j in 0..k {
            draws.theta.push(theta[(i, j)]);
        }
    }
    for i in 0..m {
        let ui = state.u(i);
        for j in 0..k {
            draws.u_mean[i * k + j] += ui[j];
            draws.lambda_mean[i * k + j] += state.lambda[i][j];
            if let Some(u) = draws.u.as_mut() {
                u.push(ui[j]);
            }
        }
    }
    let mut sigma = Vec::with_capacity(k * k);
    for r in 0..k {
        for c in 0..k {
            sigma.push(state.sigma[(r, c)]);
        }
    }
    draws.hyper.push(HyperDraw {
        rho: state.rho,
        tau2: state.tau2,
        a: state.a,
        b: state.b,
        sigma,
    });
}

/// Draw from `N(A^{-1} rhs, A^{-1})` given the Cholesky factor of the
/// precision `A`.
fn gaussian_from_precision_chol(
    rng: &mut impl Rng,
    chol: &Cholesky<f64, Dyn>,
    rhs: &DVector<f64>,
) -> DVector<f64> {
    let mean = chol.solve(rhs);
    let n = rhs.len();
    let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
    let dev = chol
        .l()
        .tr_solve_lower_triangular(&z)
        .expect("Cholesky factor has positive diagonal");
    mean + dev
}

fn spd_inverse(mat: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Cholesky::new(mat.clone())
        .ok_or_else(|| Error::NotSpd(what.into()))
        .map(|c| c.inverse())
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Inverse-CDF draw from unnormalized log weights, max-stabilized.
fn categorical_from_log_weights(rng: &mut impl Rng, logw: &[f64]) -> usize {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logw.iter().map(|&w| (w - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (idx, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return idx;
        }
    }
    weights.len() - 1
}

fn clamp_u_tilde(u: &DVector<f64>) -> DVector<f64> {
    u.map(|v| {
        if v.abs() >= U_TILDE_CLAMP {
            v
        } else if v < 0.0 {
            -U_TILDE_CLAMP
        } else {
            U_TILDE_CLAMP
        }
    })
}
