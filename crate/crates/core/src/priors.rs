//! Shrinkage prior densities and the samplers for the standard priors
//! used by the full conditionals.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Family of the local scale prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalKind {
    Horseshoe,
    NormalGamma,
}

/// Local shrinkage prior on a scale parameter `lambda > 0`.
///
/// Horseshoe: `pi(lambda) = (2/pi) (1 + lambda^2)^{-1}` (standard
/// half-Cauchy). Normal-gamma: `pi(lambda) = 2 b^a / Gamma(a) *
/// lambda^{2a-1} exp(-b lambda^2)`, i.e. `lambda^2 ~ Ga(a, b)`. The
/// shape/rate fields are ignored for the horseshoe.
#[derive(Debug, Clone, Copy)]
pub struct LocalPrior {
    pub kind: LocalKind,
    pub a: f64,
    pub b: f64,
}

impl LocalPrior {
    pub fn horseshoe() -> Self {
        Self { kind: LocalKind::Horseshoe, a: f64::NAN, b: f64::NAN }
    }

    pub fn normal_gamma(a: f64, b: f64) -> Result<Self> {
        if a <= 0.0 || b <= 0.0 {
            return Err(Error::Invalid(format!(
                "normal-gamma parameters must be positive, got a={}, b={}",
                a, b
            )));
        }
        Ok(Self { kind: LocalKind::NormalGamma, a, b })
    }

    /// Log density on `(0, inf)`; errors for nonpositive `lambda`.
    pub fn log_density(&self, lambda: f64) -> Result<f64> {
        if lambda <= 0.0 {
            return Err(Error::Invalid(format!(
                "local prior density defined on (0, inf), got lambda={}",
                lambda
            )));
        }
        Ok(self.log_kernel_signed(lambda))
    }

    /// Log of the symmetric extension used by the relaxed slice-sampling
    /// target: the horseshoe kernel depends on `lambda^2`; the
    /// normal-gamma power term is evaluated at `|lambda|`. Defined for all
    /// real `lambda` except exactly zero under a normal-gamma with
    /// `a < 1/2` (where the density pole makes the log `+inf`).
    pub fn log_kernel_signed(&self, lambda: f64) -> f64 {
        match self.kind {
            LocalKind::Horseshoe => {
                (2.0 / std::f64::consts::PI).ln() - (lambda * lambda).ln_1p()
            }
            LocalKind::NormalGamma => {
                2.0f64.ln() + self.a * self.b.ln() - ln_gamma(self.a)
                    + (2.0 * self.a - 1.0) * lambda.abs().max(1e-300).ln()
                    - self.b * lambda * lambda
            }
        }
    }
}

/// Numerically stable `log(1 / (1 + exp(-x)))`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Log of the sigmoid-relaxed positivity constraint,
/// `sum_j log sigmoid(eta * lambda_j)`. Approaches 0 as every entry grows
/// and `-inf` as any entry goes to `-inf`.
pub fn relaxed_constraint_log(eta: f64, lambda: &DVector<f64>) -> f64 {
    lambda.iter().map(|&l| log_sigmoid(eta * l)).sum()
}

/// Gamma draw in shape/rate parameterization.
pub fn gamma_sample(rng: &mut impl Rng, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters must be positive")
        .sample(rng)
}

/// Inverse-gamma draw: `IG(shape, rate)` with density proportional to
/// `x^{-shape-1} exp(-rate/x)`.
pub fn inverse_gamma_sample(rng: &mut impl Rng, shape: f64, rate: f64) -> f64 {
    1.0 / gamma_sample(rng, shape, 1.0 / rate)
}

/// Draw from the inverse-Wishart `IW(nu, scale)` via the Bartlett
/// decomposition of the Wishart on the inverted scale.
///
/// For `nu > k + 1` the mean is `scale / (nu - k - 1)`.
pub fn inverse_wishart_sample(
    rng: &mut impl Rng,
    nu: f64,
    scale: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let k = scale.nrows();
    if scale.ncols() != k {
        return Err(Error::Dimension("inverse-Wishart scale must be square".into()));
    }
    if nu <= k as f64 - 1.0 {
        return Err(Error::Invalid(format!(
            "inverse-Wishart needs nu > k - 1, got nu={}, k={}",
            nu, k
        )));
    }
    let scale_inv = Cholesky::new(scale.clone())
        .ok_or_else(|| Error::NotSpd("inverse-Wishart scale".into()))?
        .inverse();
    let l = Cholesky::new(scale_inv)
        .ok_or_else(|| Error::NotSpd("inverted inverse-Wishart scale".into()))?
        .l();
    // Lower-triangular Bartlett factor: chi-square diagonal, standard
    // normal strict lower triangle.
    let mut a = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        let chi = ChiSquared::new(nu - i as f64).expect("dof positive by the nu check");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    // M M' ~ Wishart(nu, scale_inv); the inverse-Wishart draw is
    // (M M')^{-1} = M^{-T} M^{-1}.
    let m = l * a;
    let m_inv = m
        .solve_lower_triangular(&DMatrix::<f64>::identity(k, k))
        .ok_or_else(|| Error::NotSpd("Bartlett factor is singular".into()))?;
    let draw = m_inv.transpose() * m_inv;
    // Symmetrize away round-off.
    Ok((&draw + draw.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_spd;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn horseshoe_density_values() {
        let hs = LocalPrior::horseshoe();
        // lambda -> 0+: density -> 2/pi.
        assert_relative_eq!(
            hs.log_density(1e-12).unwrap().exp(),
            2.0 / std::f64::consts::PI,
            max_relative = 1e-9
        );
        // lambda = 1: density = 1/pi.
        assert_relative_eq!(
            hs.log_density(1.0).unwrap().exp(),
            1.0 / std::f64::consts::PI,
            max_relative = 1e-12
        );
        assert!(hs.log_density(0.0).is_err());
        assert!(hs.log_density(-1.0).is_err());
    }

    #[test]
    fn normal_gamma_density_value() {
        let ng = LocalPrior::normal_gamma(1.0, 1.0).unwrap();
        assert_relative_eq!(
            ng.log_density(1.0).unwrap().exp(),
            2.0 * (-1.0f64).exp(),
            max_relative = 1e-12
        );
        assert!(LocalPrior::normal_gamma(0.0, 1.0).is_err());
    }

    #[test]
    fn signed_kernel_is_symmetric_extension() {
        let hs = LocalPrior::horseshoe();
        let ng = LocalPrior::normal_gamma(0.8, 2.0).unwrap();
        for p in [hs, ng] {
            assert_relative_eq!(
                p.log_kernel_signed(-0.7),
                p.log_kernel_signed(0.7),
                epsilon = 1e-12
            );
        }
    }

    /// Adaptive Simpson quadrature on a finite interval.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let c = 0.5 * (a + b);
        let (fa, fb, fc) = (f(a), f(b), f(c));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fb: f64,
            fc: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let c = 0.5 * (a + b);
            let d = 0.5 * (a + c);
            let e = 0.5 * (c + b);
            let (fd, fe) = (f(d), f(e));
            let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
            let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
            if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, c, fa, fc, fd, left, tol / 2.0, depth - 1)
                    + rec(f, c, b, fc, fb, fe, right, tol / 2.0, depth - 1)
            }
        }
        rec(f, a, b, fa, fb, fc, whole, tol, depth)
    }

    /// Integral of the density over (0, inf) via the substitution
    /// lambda = t / (1 - t).
    fn density_mass(prior: &LocalPrior) -> f64 {
        let g = |t: f64| {
            let lam = t / (1.0 - t);
            prior.log_density(lam).unwrap().exp() / ((1.0 - t) * (1.0 - t))
        };
        simpson(&g, 1e-9, 1.0 - 1e-9, 1e-9, 40)
    }

    #[test]
    fn local_densities_integrate_to_one() {
        for prior in [
            LocalPrior::horseshoe(),
            LocalPrior::normal_gamma(1.0, 1.0).unwrap(),
            LocalPrior::normal_gamma(0.5, 2.0).unwrap(),
        ] {
            assert_relative_eq!(density_mass(&prior), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn marginal_pole_diverges_only_for_horseshoe() {
        // int lambda^{-1} pi(lambda) dlambda over (eps, 1]: unbounded as
        // eps -> 0 for the horseshoe, convergent for normal-gamma a=1.
        let hs = LocalPrior::horseshoe();
        let ng = LocalPrior::normal_gamma(1.0, 1.0).unwrap();
        let tail = |prior: &LocalPrior, eps: f64| {
            let g = |l: f64| prior.log_density(l).unwrap().exp() / l;
            simpson(&g, eps, 1.0, 1e-10, 40)
        };
        let hs_seq: Vec<f64> = [1e-2, 1e-4, 1e-6].iter().map(|&e| tail(&hs, e)).collect();
        assert!(hs_seq[1] > hs_seq[0] + 1.0);
        assert!(hs_seq[2] > hs_seq[1] + 1.0);
        let ng_seq: Vec<f64> = [1e-2, 1e-4, 1e-6].iter().map(|&e| tail(&ng, e)).collect();
        assert!((ng_seq[2] - ng_seq[1]).abs() < 1e-3);
    }

    #[test]
    fn relaxed_constraint_values() {
        let zeros = DVector::from_element(3, 0.0);
        assert_relative_eq!(
            relaxed_constraint_log(100.0, &zeros),
            3.0 * 0.5f64.ln(),
            epsilon = 1e-12
        );
        // Saturation: eta=100, lambda=(1,1) gives ~ -2e-100 ~ 0.
        let ones = DVector::from_element(2, 1.0);
        assert!(relaxed_constraint_log(100.0, &ones).abs() < 1e-40);
        // Penalty: eta=100, lambda=-0.1 costs about -10.
        let neg = DVector::from_element(1, -0.1);
        assert_relative_eq!(
            relaxed_constraint_log(100.0, &neg),
            -(1.0 + (10.0f64).exp()).ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn relaxed_constraint_monotone_in_each_entry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let mut v = DVector::from_vec(crate::testutil::standard_normal_vec(&mut rng, 3));
            let base = relaxed_constraint_log(50.0, &v);
            let j = rng.random_range(0..3);
            v[j] += rng.random::<f64>();
            assert!(relaxed_constraint_log(50.0, &v) >= base);
        }
    }

    #[test]
    fn inverse_gamma_mean() {
        // IG(3, 4) has mean 4 / (3 - 1) = 2.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mean: f64 =
            (0..n).map(|_| inverse_gamma_sample(&mut rng, 3.0, 4.0)).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.04, "mean={}", mean);
    }

    #[test]
    fn inverse_wishart_scalar_matches_inverse_chi_square() {
        // k=1: IW(nu, s) is s / chi2_nu with mean s/(nu-2).
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let scale = DMatrix::from_element(1, 1, 1.0);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| inverse_wishart_sample(&mut rng, 10.0, &scale).unwrap()[(0, 0)])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.125).abs() < 0.02 * 0.125, "mean={}", mean);
    }

    #[test]
    fn inverse_wishart_matrix_mean_and_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let scale = DMatrix::<f64>::identity(2, 2);
        let n = 100_000;
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            let draw = inverse_wishart_sample(&mut rng, 10.0, &scale).unwrap();
            assert!(Cholesky::new(draw.clone()).is_some(), "draw must be SPD");
            acc += draw;
        }
        acc /= n as f64;
        let expect = scale / 7.0;
        for r in 0..2 {
            for c in 0..2 {
                assert!((acc[(r, c)] - expect[(r, c)]).abs() < 0.01);
            }
        }
    }

    #[test]
    fn inverse_wishart_rejects_bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(inverse_wishart_sample(&mut rng, 5.0, &bad).is_err());
        let ok = random_spd(&mut rng, 2);
        assert!(inverse_wishart_sample(&mut rng, 0.5, &ok).is_err());
    }
}
