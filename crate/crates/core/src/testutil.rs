//! Shared helpers for unit tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::AreaDataset;

pub fn standard_normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Well-conditioned random SPD matrix `A A' + 0.5 I`.
pub fn random_spd(rng: &mut impl Rng, k: usize) -> DMatrix<f64> {
    let a = DMatrix::from_iterator(k, k, standard_normal_vec(rng, k * k));
    &a * a.transpose() + DMatrix::<f64>::identity(k, k) * 0.5
}

/// Random dataset with standard-normal responses, random full-rank design
/// blocks and random SPD sampling covariances.
pub fn random_dataset(rng: &mut impl Rng, m: usize, k: usize, s: usize) -> AreaDataset {
    let ids = (1..=m).map(|i| i.to_string()).collect();
    let y = (0..m)
        .map(|_| DVector::from_vec(standard_normal_vec(rng, k)))
        .collect();
    let x = (0..m)
        .map(|_| {
            DMatrix::from_iterator(k, s, standard_normal_vec(rng, k * s))
                + DMatrix::<f64>::identity(k, s)
        })
        .collect();
    let v = (0..m).map(|_| random_spd(rng, k)).collect();
    AreaDataset::new(ids, y, x, v).expect("random dataset must validate")
}
