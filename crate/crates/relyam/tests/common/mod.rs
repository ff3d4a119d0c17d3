//! Shared helpers for the integration suites: seeded random data and
//! independent scalar oracles.
//
// not every test binary uses every helper
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use relyam::mesh::{BoundaryField, Field, SimplicialMesh};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_field(mesh: &SimplicialMesh, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Field {
    Field((0..mesh.n_vertices()).map(|_| rng.gen_range(lo..hi)).collect())
}

pub fn random_boundary_field(
    mesh: &SimplicialMesh,
    rng: &mut ChaCha8Rng,
    lo: f64,
    hi: f64,
) -> BoundaryField {
    BoundaryField(
        (0..mesh.boundary_vertices().len())
            .map(|_| rng.gen_range(lo..hi))
            .collect(),
    )
}

/// Bisection root finder; endpoints must bracket.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut flo = f(lo);
    assert!(flo * f(hi) <= 0.0, "bisection endpoints do not bracket");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() <= tol || (hi - lo) < tol {
            return mid;
        }
        if flo * fm <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    0.5 * (lo + hi)
}
