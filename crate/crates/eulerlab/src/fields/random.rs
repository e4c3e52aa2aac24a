//! Random band-limited fields for experiments and test batteries.

use rand::Rng;
use rand_distr::StandardNormal;

use super::grid::Grid;
use super::ops::leray_project;
use super::spectral::C64;
use super::types::{GridField, ScalarField, VectorField};

/// Gaussian spectrum on `0 < |k| <= kmax` (Nyquist planes excluded), real part
/// of the inverse transform.
pub fn random_scalar<R: Rng>(grid: Grid, kmax: f64, rng: &mut R) -> ScalarField {
    let sp = grid.spectral();
    let mut s = vec![C64::new(0.0, 0.0); sp.len()];
    let k2max = kmax * kmax;
    for (p, c) in s.iter_mut().enumerate() {
        let k = sp.kint(p);
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        if k2 == 0.0 || k2 > k2max || sp.is_nyquist(p) {
            continue;
        }
        *c = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
    }
    ScalarField::new(grid, sp.inverse(&s))
}

/// Mean-zero vector field with modes in `0 < |k| <= kmax`.
pub fn random_vector<R: Rng>(grid: Grid, kmax: f64, rng: &mut R) -> VectorField {
    let c = [
        random_scalar(grid, kmax, rng).data,
        random_scalar(grid, kmax, rng).data,
        random_scalar(grid, kmax, rng).data,
    ];
    VectorField::new(grid, c)
}

/// Divergence-free, mean-zero, scaled to unit sup norm.
pub fn random_solenoidal<R: Rng>(grid: Grid, kmax: f64, rng: &mut R) -> VectorField {
    let v = leray_project(&random_vector(grid, kmax, rng));
    let s = super::ops::sup_norm(&v);
    if s > 0.0 {
        v.scaled(1.0 / s)
    } else {
        v
    }
}
