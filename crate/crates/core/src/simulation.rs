//! Synthetic experiment harness: lattice adjacency, the five
//! random-effect scenarios, evaluation metrics and the replication
//! driver producing per-method tables.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::AreaDataset;
use crate::diagnostics::quantile_sorted;
use crate::error::{Error, Result};
use crate::mcmc::{run_chain, ChainConfig};
use crate::model::{ModelSpec, PosteriorDraws, Variant};
use crate::rng::{task_rng, STREAM_DATASET, STREAM_METHOD_BASE};
use crate::spatial::SpatialStructure;

/// Observation-error variance assignment, five scales spread over the
/// areas in equal proportions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceCase {
    A,
    B,
}

impl VarianceCase {
    pub fn scales(&self) -> [f64; 5] {
        match self {
            VarianceCase::A => [0.7, 0.6, 0.5, 0.4, 0.3],
            VarianceCase::B => [2.0, 0.6, 0.5, 0.4, 0.2],
        }
    }
}

impl std::fmt::Display for VarianceCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VarianceCase::A => "a",
            VarianceCase::B => "b",
        })
    }
}

impl std::str::FromStr for VarianceCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(VarianceCase::A),
            "b" => Ok(VarianceCase::B),
            other => Err(Error::Invalid(format!("unknown variance case '{}'", other))),
        }
    }
}

/// One cell of the simulation design. The response dimension is fixed at
/// `k = 2` with `beta = (1,1,1,1)` and a bivariate correlation matrix
/// with off-diagonal 0.3; random effects are spatially generated with
/// `rho = 0.95` on a `10 x (m/10)` lattice.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    /// Scenario 1-5.
    pub scenario: u8,
    pub m: usize,
    pub variance_case: VarianceCase,
    /// Mixture weight for the mean-mixture scenarios 2-3.
    pub omega: Option<f64>,
    pub rho_true: f64,
    /// Off-diagonal of the true correlation matrix.
    pub corr_true: f64,
    pub beta_true: DVector<f64>,
    /// Base seed for one-off dataset generation.
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(scenario: u8, m: usize, variance_case: VarianceCase, seed: u64) -> Result<Self> {
        if !(1..=5).contains(&scenario) {
            return Err(Error::Invalid(format!("scenario must be 1-5, got {}", scenario)));
        }
        if m < 10 || m % 10 != 0 {
            return Err(Error::Invalid(format!(
                "m must be a positive multiple of 10 for the 10 x (m/10) lattice, got {}",
                m
            )));
        }
        let omega = match scenario {
            2 => Some(0.5),
            3 => Some(0.8),
            _ => None,
        };
        Ok(Self {
            scenario,
            m,
            variance_case,
            omega,
            rho_true: 0.95,
            corr_true: 0.3,
            beta_true: DVector::from_element(4, 1.0),
            seed,
        })
    }

    pub fn k(&self) -> usize {
        2
    }

    pub fn sigma_true(&self) -> DMatrix<f64> {
        DMatrix::from_fn(2, 2, |r, c| if r == c { 1.0 } else { self.corr_true })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.omega {
            if w != 0.5 && w != 0.8 {
                return Err(Error::Invalid(format!("omega must be 0.5 or 0.8, got {}", w)));
            }
        }
        Ok(())
    }
}

/// Rook-adjacency rectangular lattice with 10 rows and `m/10` columns.
pub fn build_lattice(m: usize) -> Result<SpatialStructure> {
    if m < 10 || m % 10 != 0 {
        return Err(Error::Invalid(format!(
            "lattice size must be a positive multiple of 10, got {}",
            m
        )));
    }
    let rows = 10;
    let cols = m / 10;
    let mut edges = Vec::with_capacity(2 * m);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                edges.push((i, i + 1));
            }
            if r + 1 < rows {
                edges.push((i, i + cols));
            }
        }
    }
    SpatialStructure::from_edges(m, &edges)
}

/// Design block for one area: each response gets an intercept and the
/// shared covariate, `X_i = [[1, x, 0, 0], [0, 0, 1, x]]`.
pub fn design_block(x1: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 4, &[1.0, x1, 0.0, 0.0, 0.0, 0.0, 1.0, x1])
}

/// True random effects for the scenario, an `m x 2` matrix.
///
/// Scenarios 1-3 draw from the MCAR Gaussian (scenarios 2-3 add a
/// per-component mean from the mixture `(1-z) delta_5 + z delta_0`,
/// `z ~ Ber(omega)`); scenarios 4-5 inflate the covariance fourfold and
/// then zero the lower 50% or 80% of each response column by absolute
/// magnitude.
pub fn gen_random_effects(
    rng: &mut impl Rng,
    spec: &ScenarioSpec,
    structure: &SpatialStructure,
) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if structure.m() != spec.m {
        return Err(Error::Dimension("structure does not match scenario m".into()));
    }
    let m = spec.m;
    let k = spec.k();

    // u ~ N(0, (D - rho W)^{-1} (x) Sigma) by solving against the
    // Cholesky factor of the row precision and coloring columns with the
    // Cholesky factor of Sigma.
    let prec = structure.precision_dense(spec.rho_true);
    let chol_p = Cholesky::new(prec).ok_or_else(|| Error::NotSpd("D - rho W".into()))?;
    let chol_s = Cholesky::new(spec.sigma_true()).expect("correlation matrix is SPD");
    let z = DMatrix::from_fn(m, k, |_, _| StandardNormal.sample(rng));
    let y = chol_p
        .l()
        .tr_solve_lower_triangular(&z)
        .expect("Cholesky factor has positive diagonal");
    let mut u = y * chol_s.l().transpose();

    match spec.scenario {
        1 => {}
        2 | 3 => {
            let omega = spec.omega.expect("set by construction");
            let bern = Bernoulli::new(omega).expect("omega validated");
            for i in 0..m {
                for j in 0..k {
                    if !bern.sample(rng) {
                        u[(i, j)] += 5.0;
                    }
                }
            }
        }
        4 | 5 => {
            u *= 2.0; // covariance x4
            let frac = if spec.scenario == 4 { 0.5 } else { 0.8 };
            threshold_columns(&mut u, frac);
        }
        _ => unreachable!("validated at construction"),
    }
    Ok(u)
}

/// Zeroes the lowest `frac` of each column by absolute magnitude, ties
/// broken by area index.
fn threshold_columns(u: &mut DMatrix<f64>, frac: f64) {
    let m = u.nrows();
    let cut = (frac * m as f64).round() as usize;
    for j in 0..u.ncols() {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            u[(a, j)]
                .abs()
                .partial_cmp(&u[(b, j)].abs())
                .unwrap()
                .then(a.cmp(&b))
        });
        for &i in order.iter().take(cut) {
            u[(i, j)] = 0.0;
        }
    }
}

/// Generates one dataset from the scenario: covariates, variance
/// assignment, true effects and noisy responses. Returns the dataset with
/// the true small-area means and true effects (`m x 2` each).
pub fn gen_dataset(
    rng: &mut impl Rng,
    spec: &ScenarioSpec,
    structure: &SpatialStructure,
) -> Result<(AreaDataset, DMatrix<f64>, DMatrix<f64>)> {
    let x1: Vec<f64> = (0..spec.m).map(|_| StandardNormal.sample(rng)).collect();
    gen_dataset_with_covariates(rng, spec, structure, &x1)
}

/// Same as [`gen_dataset`] but with the covariate values supplied, for
/// studies that hold covariates fixed across replications.
pub fn gen_dataset_with_covariates(
    rng: &mut impl Rng,
    spec: &ScenarioSpec,
    structure: &SpatialStructure,
    x1: &[f64],
) -> Result<(AreaDataset, DMatrix<f64>, DMatrix<f64>)> {
    spec.validate()?;
    let m = spec.m;
    let k = spec.k();
    if x1.len() != m {
        return Err(Error::Dimension("covariate vector does not match m".into()));
    }
    if m % 5 != 0 {
        return Err(Error::Invalid("m must be divisible by 5 for the variance assignment".into()));
    }

    // Exactly m/5 areas per variance scale, in random order.
    let mut scale_of: Vec<f64> = spec
        .variance_case
        .scales()
        .iter()
        .flat_map(|&s| std::iter::repeat(s).take(m / 5))
        .collect();
    scale_of.shuffle(rng);

    let u = gen_random_effects(rng, spec, structure)?;

    let mut ids = Vec::with_capacity(m);
    let mut ys = Vec::with_capacity(m);
    let mut xs = Vec::with_capacity(m);
    let mut vs = Vec::with_capacity(m);
    let mut theta_true = DMatrix::<f64>::zeros(m, k);
    for i in 0..m {
        let x = design_block(x1[i]);
        let fit = &x * &spec.beta_true;
        let sd = scale_of[i].sqrt();
        let mut y = DVector::<f64>::zeros(k);
        for j in 0..k {
            theta_true[(i, j)] = fit[j] + u[(i, j)];
            let eps: f64 = StandardNormal.sample(rng);
            y[j] = theta_true[(i, j)] + sd * eps;
        }
        ids.push((i + 1).to_string());
        ys.push(y);
        xs.push(x);
        vs.push(DMatrix::<f64>::identity(k, k) * scale_of[i]);
    }
    let data = AreaDataset::new(ids, ys, xs, vs)?;
    Ok((data, theta_true, u))
}

/// Point and interval accuracy of one fit against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Average absolute deviation of the posterior means.
    pub aad: f64,
    /// Average squared deviation of the posterior means.
    pub asd: f64,
    /// Empirical coverage of the 95% credible intervals.
    pub cp: f64,
    /// Average length of the 95% credible intervals.
    pub al: f64,
}

/// AAD/ASD of the posterior mean and coverage/length of the equal-tailed
/// 95% intervals, averaged over all `(area, response)` components.
pub fn compute_metrics(draws: &PosteriorDraws, true_theta: &DMatrix<f64>) -> Metrics {
    let (m, k) = (draws.m, draws.k);
    let theta_hat = draws.theta_mean();
    let mut aad = 0.0;
    let mut asd = 0.0;
    let mut covered = 0usize;
    let mut al = 0.0;
    for i in 0..m {
        for j in 0..k {
            let diff = theta_hat[(i, j)] - true_theta[(i, j)];
            aad += diff.abs();
            asd += diff * diff;
            let mut chain = draws.theta_chain(i, j);
            chain.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let lo = quantile_sorted(&chain, 0.025);
            let hi = quantile_sorted(&chain, 0.975);
            if lo <= true_theta[(i, j)] && true_theta[(i, j)] <= hi {
                covered += 1;
            }
            al += hi - lo;
        }
    }
    let n = (m * k) as f64;
    Metrics { aad: aad / n, asd: asd / n, cp: covered as f64 / n, al: al / n }
}

/// All replication results for one `(method, cell)` pair.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub method: Variant,
    pub scenario: u8,
    pub m: usize,
    pub variance_case: VarianceCase,
    /// Successful replications as `(replication index, metrics)`.
    pub per_rep: Vec<(usize, Metrics)>,
    /// Replications excluded because the chain failed.
    pub failures: usize,
    pub medians: Metrics,
}

/// Study output: one row per `(method, cell)`.
#[derive(Debug, Clone)]
pub struct MetricTable {
    pub rows: Vec<CellResult>,
    pub n_reps: usize,
}

impl MetricTable {
    pub fn get(&self, method: Variant, scenario: u8, m: usize, vc: VarianceCase) -> Option<&CellResult> {
        self.rows.iter().find(|r| {
            r.method == method && r.scenario == scenario && r.m == m && r.variance_case == vc
        })
    }
}

/// Dataset for one `(cell, replication)` task. Every method within the
/// replication fits this same dataset; its RNG stream is disjoint from
/// all chain streams.
pub fn replication_dataset(
    scenario: &ScenarioSpec,
    structure: &SpatialStructure,
    seed: u64,
    cell_idx: usize,
    rep: usize,
    fixed_x1: Option<&[f64]>,
) -> Result<(AreaDataset, DMatrix<f64>, DMatrix<f64>)> {
    let mut rng = task_rng(seed, cell_idx as u64, rep as u64, STREAM_DATASET);
    match fixed_x1 {
        Some(x1) => gen_dataset_with_covariates(&mut rng, scenario, structure, x1),
        None => gen_dataset(&mut rng, scenario, structure),
    }
}

/// Runs the replication study: for every cell and replication, one shared
/// dataset is generated and every method fits it; per-cell medians are
/// taken over the successful replications.
///
/// Tasks run as a parallel map over `(cell, replication)`; RNG streams
/// are split deterministically so results do not depend on scheduling.
/// `fix_covariates` holds the covariate draw fixed across a cell's
/// replications instead of redrawing it each time.
pub fn run_study(
    cells: &[ScenarioSpec],
    methods: &[Variant],
    n_reps: usize,
    chain: &ChainConfig,
    seed: u64,
    fix_covariates: bool,
) -> Result<MetricTable> {
    if n_reps == 0 {
        return Err(Error::Invalid("n_reps must be at least 1".into()));
    }
    chain.validate()?;
    for c in cells {
        c.validate()?;
    }

    struct CellContext {
        scenario: ScenarioSpec,
        structure: SpatialStructure,
        fixed_x1: Option<Vec<f64>>,
    }
    let contexts: Vec<CellContext> = cells
        .iter()
        .enumerate()
        .map(|(cell_idx, sc)| {
            let structure = build_lattice(sc.m)?;
            let fixed_x1 = if fix_covariates {
                let mut rng = task_rng(seed, cell_idx as u64, (1 << 19) as u64, STREAM_DATASET);
                Some((0..sc.m).map(|_| StandardNormal.sample(&mut rng)).collect())
            } else {
                None
            };
            Ok(CellContext { scenario: sc.clone(), structure, fixed_x1 })
        })
        .collect::<Result<Vec<_>>>()?;

    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..n_reps).map(move |r| (c, r)))
        .collect();

    // (cell, rep) -> per-method result.
    let outcomes: Vec<(usize, usize, Vec<Result<Metrics>>)> = tasks
        .par_iter()
        .map(|&(cell_idx, rep)| {
            let ctx = &contexts[cell_idx];
            let generated = replication_dataset(
                &ctx.scenario,
                &ctx.structure,
                seed,
                cell_idx,
                rep,
                ctx.fixed_x1.as_deref(),
            );
            let per_method: Vec<Result<Metrics>> = match generated {
                Ok((data, theta_true, _)) => methods
                    .iter()
                    .enumerate()
                    .map(|(mi, &variant)| {
                        let spec = ModelSpec::new(variant, ctx.scenario.k());
                        let mut rng = task_rng(
                            seed,
                            cell_idx as u64,
                            rep as u64,
                            STREAM_METHOD_BASE + mi as u64,
                        );
                        let structure =
                            if variant.is_spatial() { Some(&ctx.structure) } else { None };
                        run_chain(&mut rng, &data, structure, &spec, chain)
                            .map(|draws| compute_metrics(&draws, &theta_true))
                    })
                    .collect(),
                Err(e) => methods
                    .iter()
                    .map(|_| Err(Error::Invalid(format!("dataset generation failed: {}", e))))
                    .collect(),
            };
            (cell_idx, rep, per_method)
        })
        .collect();

    let mut rows = Vec::with_capacity(cells.len() * methods.len());
    for (cell_idx, sc) in cells.iter().enumerate() {
        for (mi, &method) in methods.iter().enumerate() {
            let mut per_rep = Vec::with_capacity(n_reps);
            let mut failures = 0usize;
            for &(c, r, ref per_method) in &outcomes {
                if c != cell_idx {
                    continue;
                }
                match &per_method[mi] {
                    Ok(metrics) => per_rep.push((r, *metrics)),
                    Err(e) => {
                        failures += 1;
                        log::warn!(
                            "replication {} of scenario {} (m={}) failed for {}: {}",
                            r,
                            sc.scenario,
                            sc.m,
                            method,
                            e
                        );
                    }
                }
            }
            per_rep.sort_by_key(|&(r, _)| r);
            let medians = Metrics {
                aad: median(per_rep.iter().map(|(_, x)| x.aad)),
                asd: median(per_rep.iter().map(|(_, x)| x.asd)),
                cp: median(per_rep.iter().map(|(_, x)| x.cp)),
                al: median(per_rep.iter().map(|(_, x)| x.al)),
            };
            rows.push(CellResult {
                method,
                scenario: sc.scenario,
                m: sc.m,
                variance_case: sc.variance_case,
                per_rep,
                failures,
                medians,
            });
        }
    }
    Ok(MetricTable { rows, n_reps })
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
