//! The relative Yamabe invariant, the relative first eigenvalue of the
//! Laplacian, and the sign classification of conformal classes.
//!
//! The invariant is the infimum of the energy over the constraint set
//! B^{q,r}_b = { ||phi||_{L^q(Omega)}^q + b ||tr phi||_{L^r(Sigma)}^r = 1 },
//! computed by projected gradient descent (absolute-value projection and
//! rescale onto the constraint). The sign classifier goes through the
//! linear eigenvalue problem instead, which shares its sign with the
//! invariant and is robust near sign changes.

use serde::{Deserialize, Serialize};

use crate::assembly::{
    energy, lq_gradient_on_region, lq_norm_on_region, lr_gradient_on_boundary,
    lr_norm_on_boundary, EnergyMatrices,
};
use crate::error::{Error, Result};
use crate::mesh::{DimensionConstants, Field, RiemannianBackground, SimplicialMesh};
use crate::region::{active_dofs, DofSet, RegionPair};
use crate::sparse::{self, smallest_eigenpair};

/// Exponent pair and boundary weight defining the constraint set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub q: f64,
    pub r: f64,
    pub b: f64,
}

impl ConstraintSpec {
    pub fn new(constants: DimensionConstants, q: f64, r: f64, b: f64) -> Result<Self> {
        let (cq, cr) = (constants.critical_q(), constants.critical_r());
        if !(2.0..=cq).contains(&q) {
            return Err(Error::InvalidExponents(format!(
                "q = {q} outside [2, {cq}]"
            )));
        }
        if !(2.0..=cr).contains(&r) {
            return Err(Error::InvalidExponents(format!(
                "r = {r} outside [2, {cr}]"
            )));
        }
        if !b.is_finite() {
            return Err(Error::InvalidExponents("b must be finite".into()));
        }
        Ok(ConstraintSpec { q, r, b })
    }

    /// Strictly below both critical exponents with q > r.
    pub fn is_subcritical(&self, constants: DimensionConstants) -> bool {
        self.q < constants.critical_q() && self.r < constants.critical_r() && self.q > self.r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    #[serde(rename = "converged")]
    Converged,
    #[serde(rename = "max-iter")]
    MaxIterations,
    #[serde(rename = "empty-constraint-set")]
    EmptyConstraintSet,
}

#[derive(Clone, Debug, Serialize)]
pub struct YamabeResult {
    pub value: f64,
    pub minimizer: Field,
    pub multiplier: f64,
    pub iterations: usize,
    pub residual: f64,
    pub status: SolveStatus,
}

#[derive(Clone, Debug, Serialize)]
pub struct EigenResult {
    pub eigenvalue: f64,
    pub eigenfield: Field,
    pub residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum YamabeSign {
    Negative,
    Zero,
    Positive,
}

/// Unique positive solution of a x^q + b x^r = 1.
///
/// Requires a > 0 and either q > r > 1 or q = r with a + b > 0; the
/// no-positive-root case is exactly q = r with a + b <= 0.
pub fn constraint_root(a: f64, b: f64, q: f64, r: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::Precondition(format!(
            "constraint_root needs a > 0, got a = {a}"
        )));
    }
    if !(r > 1.0) || !(q >= r) || !q.is_finite() || !r.is_finite() {
        return Err(Error::InvalidExponents(format!(
            "constraint_root needs q >= r > 1, got q = {q}, r = {r}"
        )));
    }
    if q == r {
        if a + b <= 0.0 {
            return Err(Error::NoPositiveRoot(format!(
                "q = r = {q} with a + b = {} <= 0",
                a + b
            )));
        }
        return Ok((a + b).powf(-1.0 / q));
    }
    let f = |x: f64| a * x.powf(q) + b * x.powf(r);
    let df = |x: f64| a * q * x.powf(q - 1.0) + b * r * x.powf(r - 1.0);
    // bracket: f is strictly increasing from a nonpositive value on
    // [x_lo, inf), where x_lo is the minimizer for b < 0 and 0 otherwise
    let mut lo = if b < 0.0 {
        (-b * r / (a * q)).powf(1.0 / (q - r))
    } else {
        0.0
    };
    let mut hi = ((1.0 + b.abs()) / a).powf(1.0 / q).max(lo + 1.0);
    let mut guard = 0;
    while f(hi) < 1.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 600 {
            return Err(Error::NoPositiveRoot(
                "bracketing the constraint root failed".into(),
            ));
        }
    }
    // safeguarded Newton on the bracket [lo, hi]
    let mut x = hi;
    for _ in 0..300 {
        let fx = f(x) - 1.0;
        if fx.abs() <= 1e-14 {
            return Ok(x);
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if (hi - lo) <= f64::EPSILON * hi {
            break;
        }
        let d = df(x);
        let newton = x - fx / d;
        x = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(0.5 * (lo + hi))
}

/// Scale phi onto the constraint set: the positive k with
/// a k^q + b s k^r = 1 for a = ||phi||_q^q over Omega and
/// s = ||tr phi||_r^r over Sigma.
pub fn scale_to_constraint(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    region: &RegionPair,
    spec: &ConstraintSpec,
    phi: &Field,
) -> Result<Field> {
    let a = lq_norm_on_region(mesh, background, region, phi, spec.q);
    if !(a > 0.0) {
        return Err(Error::ZeroField(
            "cannot scale a field with vanishing interior norm onto the constraint set".into(),
        ));
    }
    let s = lr_norm_on_boundary(mesh, background, region, phi, spec.r);
    let k = constraint_root(a, spec.b * s, spec.q, spec.r)?;
    Ok(Field(phi.iter().map(|v| k * v).collect()))
}

/// Constraint functional ||phi||_q^q + b ||tr phi||_r^r on the region.
pub fn constraint_value(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    region: &RegionPair,
    spec: &ConstraintSpec,
    phi: &Field,
) -> f64 {
    lq_norm_on_region(mesh, background, region, phi, spec.q)
        + spec.b * lr_norm_on_boundary(mesh, background, region, phi, spec.r)
}

/// Gradient of the constraint functional with respect to nodal values.
pub fn constraint_gradient(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    region: &RegionPair,
    spec: &ConstraintSpec,
    phi: &Field,
) -> Vec<f64> {
    let mut g = lq_gradient_on_region(mesh, background, region, phi, spec.q);
    let gb = lr_gradient_on_boundary(mesh, background, region, phi, spec.r);
    for (gi, bi) in g.iter_mut().zip(gb) {
        *gi += spec.b * bi;
    }
    g
}

/// Gradient of the energy quadratic form: 2 A phi.
pub fn energy_gradient(matrices: &EnergyMatrices, phi: &Field) -> Vec<f64> {
    let mut g = matrices.energy.mul_vec(phi);
    for gi in &mut g {
        *gi *= 2.0;
    }
    g
}

const EIGEN_RESIDUAL_TOL: f64 = 1e-8;

/// Smallest eigenvalue of A x = lambda (M + S) x over the active degrees of
/// freedom of the region: the minimum of the Rayleigh quotient
/// E(phi) / (||phi||_2^2 + ||tr phi||_2^2) for admissible fields.
pub fn relative_eigenvalue(
    mesh: &SimplicialMesh,
    matrices: &EnergyMatrices,
    region: &RegionPair,
) -> Result<EigenResult> {
    let dofs = active_dofs(mesh, region);
    if dofs.is_empty() {
        return Ok(EigenResult {
            eigenvalue: f64::INFINITY,
            eigenfield: Field::zeros(mesh.n_vertices()),
            residual: 0.0,
            iterations: 0,
            status: SolveStatus::EmptyConstraintSet,
        });
    }
    let a = matrices.energy.restrict(dofs.indices());
    let b = matrices.metric_mass().restrict(dofs.indices());
    let pair = smallest_eigenpair(&a, &b, EIGEN_RESIDUAL_TOL, 400)?;
    let mut field = vec![0.0; mesh.n_vertices()];
    // orient so the dominant nodal value is positive
    let mut flip = 1.0;
    let mut best = 0.0;
    for &v in &pair.vector {
        if v.abs() > best {
            best = v.abs();
            flip = if v < 0.0 { -1.0 } else { 1.0 };
        }
    }
    for (li, &gi) in dofs.indices().iter().enumerate() {
        field[gi] = flip * pair.vector[li];
    }
    let status = if pair.residual <= EIGEN_RESIDUAL_TOL {
        SolveStatus::Converged
    } else {
        SolveStatus::MaxIterations
    };
    Ok(EigenResult {
        eigenvalue: pair.value,
        eigenfield: Field(field),
        residual: pair.residual,
        iterations: pair.iterations,
        status,
    })
}

/// Sign classification of the region's conformal invariant via the
/// relative eigenvalue; `zero_tol` scales with the energy matrix so
/// roundoff on Yamabe-zero data cannot flip the class. An empty admissible
/// set is Positive (the invariant is +infinity by convention).
pub fn yamabe_sign(
    mesh: &SimplicialMesh,
    matrices: &EnergyMatrices,
    region: &RegionPair,
    zero_tol: Option<f64>,
) -> Result<(YamabeSign, EigenResult)> {
    let eig = relative_eigenvalue(mesh, matrices, region)?;
    let band = zero_band(matrices, zero_tol);
    // an empty admissible set reports an infinite eigenvalue and lands in
    // the Positive branch, matching the +infinity convention
    let sign = if eig.eigenvalue > band {
        YamabeSign::Positive
    } else if eig.eigenvalue < -band {
        YamabeSign::Negative
    } else {
        YamabeSign::Zero
    };
    Ok((sign, eig))
}

/// |lambda| <= tol * ||A||_inf declares Zero; default tol 1e-7.
pub fn zero_band(matrices: &EnergyMatrices, zero_tol: Option<f64>) -> f64 {
    zero_tol.unwrap_or(1e-7) * matrices.energy.norm_inf()
}

/// Options for the projected-gradient minimization.
#[derive(Clone, Copy, Debug)]
pub struct YamabeOptions {
    pub gradient_tol: f64,
    pub max_iterations: usize,
}

impl Default for YamabeOptions {
    fn default() -> Self {
        YamabeOptions {
            gradient_tol: 1e-8,
            max_iterations: 10_000,
        }
    }
}

/// The relative Yamabe invariant of (Omega, Sigma) at the given exponents:
/// projected-gradient descent with Armijo line search; each step takes a
/// gradient step of E over the active degrees of freedom, projects to
/// nonnegative nodal values (E(phi) = E(|phi|) in the continuum), and
/// rescales onto the constraint set.
pub fn yamabe_invariant(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    matrices: &EnergyMatrices,
    region: &RegionPair,
    spec: &ConstraintSpec,
    options: &YamabeOptions,
) -> Result<YamabeResult> {
    if !(spec.q > spec.r) {
        return Err(Error::InvalidExponents(format!(
            "the minimization needs q > r (got q = {}, r = {}); q = r = 2 is the eigenvalue problem",
            spec.q, spec.r
        )));
    }
    let dofs = active_dofs(mesh, region);
    if dofs.is_empty() {
        return Ok(YamabeResult {
            value: f64::INFINITY,
            minimizer: Field::zeros(mesh.n_vertices()),
            multiplier: 0.0,
            iterations: 0,
            residual: 0.0,
            status: SolveStatus::EmptyConstraintSet,
        });
    }

    // initial iterate: the relative eigenfield already minimizes the
    // quadratic part; fall back to the indicator of the active set
    let eig = relative_eigenvalue(mesh, matrices, region)?;
    let mut init = Field(eig.eigenfield.iter().map(|v| v.abs()).collect());
    if init.norm_inf() <= 0.0 {
        init = indicator(mesh.n_vertices(), &dofs);
    }
    let mut phi = match scale_to_constraint(mesh, background, region, spec, &init) {
        Ok(f) => f,
        Err(_) => scale_to_constraint(
            mesh,
            background,
            region,
            spec,
            &indicator(mesh.n_vertices(), &dofs),
        )?,
    };

    let project = |raw: &Field| -> Result<Field> {
        let folded = Field(raw.iter().map(|v| v.abs()).collect());
        scale_to_constraint(mesh, background, region, spec, &folded)
    };

    let mut e_val = energy(matrices, &phi)?;
    let mut best = (e_val, phi.clone());
    let mut grad = masked(energy_gradient(matrices, &phi), &dofs);
    let mut alpha = 1.0 / (1.0 + matrices.energy.norm_inf());
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut status = SolveStatus::MaxIterations;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None; // (step, gradient difference)

    for it in 0..options.max_iterations {
        iterations = it + 1;
        let cgrad = masked(
            constraint_gradient(mesh, background, region, spec, &phi),
            &dofs,
        );
        let cc = sparse::dot(&cgrad, &cgrad);
        let mut tangent = grad.clone();
        if cc > 0.0 {
            let coeff = sparse::dot(&grad, &cgrad) / cc;
            sparse::axpy(-coeff, &cgrad, &mut tangent);
        }
        residual = sparse::norm2(&tangent);
        if residual <= options.gradient_tol {
            status = SolveStatus::Converged;
            break;
        }
        // Barzilai-Borwein initial step, safeguarded
        if let Some((s, y)) = &prev {
            let sy = sparse::dot(s, y);
            if sy > 0.0 {
                alpha = (sparse::dot(s, s) / sy).clamp(1e-12, 1e6);
            }
        }
        let mut step = alpha;
        let mut accepted = false;
        for _ in 0..60 {
            let mut cand = phi.clone();
            sparse::axpy(-step, &tangent, &mut cand.0);
            match project(&cand) {
                Ok(next) => {
                    let e_next = energy(matrices, &next)?;
                    let decrease = 1e-4 * step * residual * residual;
                    let mut ok = e_next <= e_val - decrease;
                    let mut g_next: Option<Vec<f64>> = None;
                    if !ok && decrease <= 1e3 * f64::EPSILON * (1.0 + e_val.abs()) {
                        // the energy is flat at machine precision near the
                        // minimum; accept on projected-gradient decrease
                        let g = masked(energy_gradient(matrices, &next), &dofs);
                        let cg = masked(
                            constraint_gradient(mesh, background, region, spec, &next),
                            &dofs,
                        );
                        let cc = sparse::dot(&cg, &cg);
                        let mut tan = g.clone();
                        if cc > 0.0 {
                            let coeff = sparse::dot(&g, &cg) / cc;
                            sparse::axpy(-coeff, &cg, &mut tan);
                        }
                        ok = sparse::norm2(&tan) < residual * (1.0 - 1e-6);
                        g_next = Some(g);
                    }
                    if ok {
                        let s: Vec<f64> = next.iter().zip(phi.iter()).map(|(a, b)| a - b).collect();
                        let g_next = g_next
                            .unwrap_or_else(|| masked(energy_gradient(matrices, &next), &dofs));
                        let y: Vec<f64> =
                            g_next.iter().zip(grad.iter()).map(|(a, b)| a - b).collect();
                        prev = Some((s, y));
                        phi = next;
                        e_val = e_next;
                        grad = g_next;
                        accepted = true;
                        break;
                    }
                }
                Err(_) => {} // rescale can fail far out; shrink the step
            }
            step *= 0.5;
        }
        if !accepted {
            // no productive step at machine scale: treat as stationary
            status = if residual <= options.gradient_tol * 10.0 {
                SolveStatus::Converged
            } else {
                SolveStatus::MaxIterations
            };
            break;
        }
        if e_val < best.0 {
            best = (e_val, phi.clone());
        }
    }
    if e_val < best.0 {
        best = (e_val, phi.clone());
    }
    let minimizer = best.1;
    let value = energy(matrices, &minimizer)?;
    let a = lq_norm_on_region(mesh, background, region, &minimizer, spec.q);
    let s = lr_norm_on_boundary(mesh, background, region, &minimizer, spec.r);
    let denom = spec.q * a + spec.r * spec.b * s;
    let multiplier = if denom.abs() > 0.0 { value / denom } else { 0.0 };
    Ok(YamabeResult {
        value,
        minimizer,
        multiplier,
        iterations,
        residual,
        status,
    })
}

fn indicator(nv: usize, dofs: &DofSet) -> Field {
    let mut f = vec![0.0; nv];
    for &v in dofs.indices() {
        f[v] = 1.0;
    }
    Field(f)
}

fn masked(mut v: Vec<f64>, dofs: &DofSet) -> Vec<f64> {
    let mut keep = vec![false; v.len()];
    for &d in dofs.indices() {
        keep[d] = true;
    }
    for (i, vi) in v.iter_mut().enumerate() {
        if !keep[i] {
            *vi = 0.0;
        }
    }
    v
}
