//! The prescribed-curvature pipeline: conformal normalization to negative
//! background curvatures, subcritical minimization of F_{q,r}, continuation
//! to the critical exponents, conformal verification, and the Lichnerowicz
//! variant with negative-power source terms.
//!
//! Transformed metrics are handled operationally. A frame with conformal
//! factor u represents g-tilde = u^(2qb-2) g through the exact identities
//! A-tilde = D^T A D (nodal multiplication D by u) and nodal-covariant
//! measure quadratures, never through re-assembly from the recovered
//! curvature fields: those are first-order diagnostics and must not
//! contaminate the solves. With this convention the final critical-exponent
//! solve in a transformed frame is the exact pullback of the base-frame
//! problem, so fixed-point targets reproduce u = 1 to solver precision.

use serde::Serialize;

use crate::assembly::{
    boundary_point_load, boundary_point_mass, boundary_to_global, discrete_laplacian,
    discrete_normal_derivative, volume_point_load, volume_point_mass, EnergyMatrices,
};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryField, Field, RiemannianBackground, SimplicialMesh};
use crate::quadrature::{interp3, interp4, TET_QP, TET_QW, TRI_QP, TRI_QW};
use crate::region::{zero_set, RegionPair};
use crate::sparse::{self, conjugate_gradient, CgOutcome, CsrMatrix};
use crate::variational::{
    yamabe_invariant, yamabe_sign, ConstraintSpec, YamabeOptions, YamabeSign,
};

/// Nonpositive target curvatures (R', H') of the prescription problem.
#[derive(Clone, Debug)]
pub struct TargetCurvatures {
    pub r_prime: Field,
    pub h_prime: BoundaryField,
}

impl TargetCurvatures {
    /// Nonpositivity is validated with zero tolerance: a single positive
    /// nodal value rejects the data.
    pub fn new(mesh: &SimplicialMesh, r_prime: Field, h_prime: BoundaryField) -> Result<Self> {
        if r_prime.len() != mesh.n_vertices() {
            return Err(Error::DimensionMismatch(format!(
                "R' has {} values for {} vertices",
                r_prime.len(),
                mesh.n_vertices()
            )));
        }
        if h_prime.len() != mesh.boundary_vertices().len() {
            return Err(Error::DimensionMismatch(format!(
                "H' has {} values for {} boundary vertices",
                h_prime.len(),
                mesh.boundary_vertices().len()
            )));
        }
        for (i, v) in r_prime.iter().enumerate() {
            if !v.is_finite() || *v > 0.0 {
                return Err(Error::Precondition(format!(
                    "R' must be nonpositive and finite; R'[{i}] = {v}"
                )));
            }
        }
        for (li, v) in h_prime.iter().enumerate() {
            if !v.is_finite() || *v > 0.0 {
                return Err(Error::Precondition(format!(
                    "H' must be nonpositive and finite; H' at boundary vertex {} = {v}",
                    mesh.boundary_vertices()[li]
                )));
            }
        }
        Ok(TargetCurvatures { r_prime, h_prime })
    }
}

/// Source data of the Lichnerowicz equation: a_w >= 0 in M, b_w <= 0 on dM.
#[derive(Clone, Debug)]
pub struct LichnerowiczData {
    pub a_w: Field,
    pub b_w: BoundaryField,
}

impl LichnerowiczData {
    pub fn new(mesh: &SimplicialMesh, a_w: Field, b_w: BoundaryField) -> Result<Self> {
        if a_w.len() != mesh.n_vertices() || b_w.len() != mesh.boundary_vertices().len() {
            return Err(Error::DimensionMismatch(
                "Lichnerowicz data does not match the mesh".into(),
            ));
        }
        for (i, v) in a_w.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::Precondition(format!(
                    "a_w must be nonnegative and finite; a_w[{i}] = {v}"
                )));
            }
        }
        for (li, v) in b_w.iter().enumerate() {
            if !v.is_finite() || *v > 0.0 {
                return Err(Error::Precondition(format!(
                    "b_w must be nonpositive and finite; b_w at boundary vertex {} = {v}",
                    mesh.boundary_vertices()[li]
                )));
            }
        }
        Ok(LichnerowiczData { a_w, b_w })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PrescribeStatus {
    #[serde(rename = "converged")]
    Converged,
    #[serde(rename = "no-solution-per-theorem")]
    NoSolutionPerTheorem,
}

#[derive(Clone, Debug, Serialize)]
pub struct StageTrace {
    pub stage: usize,
    pub q: f64,
    pub r: f64,
    pub f_value: f64,
    pub residual: f64,
    pub min_u: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PredicateReport {
    pub solvable: bool,
    pub sign: YamabeSign,
    pub eigenvalue: Option<f64>,
    pub zero_elements: usize,
    pub zero_faces: usize,
    pub zero_tol: f64,
    pub note: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    /// max |R-recovered - R'| over interior vertices at least one ring away
    /// from the boundary (flux recovery pollutes a fixed-width layer).
    pub max_interior_r_deviation: f64,
    pub interior_nodes_checked: usize,
    pub interior_nodes_excluded: usize,
    /// max |H-recovered - H'| over boundary vertices away from surface
    /// creases.
    pub max_boundary_h_deviation: f64,
    pub boundary_nodes_checked: usize,
    pub boundary_nodes_excluded: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct PrescribeReport {
    pub status: PrescribeStatus,
    pub solution: Option<Field>,
    pub min_u: Option<f64>,
    pub trace: Vec<StageTrace>,
    pub final_residual: Option<f64>,
    pub predicate: PredicateReport,
    pub verification: Option<VerificationReport>,
}

/// Pull a metric through the conformal change g-tilde = u^(2qb-2) g.
///
/// Measures transform by element quadrature of u^(2qb) (volume) and
/// u^(qb+1) (area) via the stored nodal factor; the energy matrix is the
/// exact operational sandwich A-tilde = D^T A D, so E_gt(phi) = E_g(u phi)
/// holds to machine precision. Curvatures are recovered pointwise from the
/// weak Laplacian and the variational boundary flux.
pub fn conformal_transform(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    matrices: &EnergyMatrices,
    u: &Field,
) -> Result<(RiemannianBackground, EnergyMatrices)> {
    if u.len() != mesh.n_vertices() {
        return Err(Error::DimensionMismatch(format!(
            "conformal factor has {} values for {} vertices",
            u.len(),
            mesh.n_vertices()
        )));
    }
    if let Some((i, v)) = u
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
    {
        return Err(Error::PositivityLost(format!(
            "conformal factor must be strictly positive; u[{i}] = {v}"
        )));
    }
    let consts = mesh.constants();
    let qb = consts.q_bar();
    let lap = discrete_laplacian(mesh, matrices, u);
    let flux = discrete_normal_derivative(mesh, matrices, u);

    let r_old = background.scalar_curvature();
    let mut r_new = vec![0.0; mesh.n_vertices()];
    for v in 0..mesh.n_vertices() {
        // R-tilde = u^(1-2qb) (-(4(n-1)/(n-2)) lap u + R u)
        r_new[v] = u[v].powf(1.0 - 2.0 * qb) * (-lap[v] / consts.c_n() + r_old[v] * u[v]);
    }
    let h_old = background.mean_curvature();
    let mut h_new = vec![0.0; mesh.boundary_vertices().len()];
    for (li, &v) in mesh.boundary_vertices().iter().enumerate() {
        // H-tilde = u^(-qb) ((2/(n-2)) d_nu u + H u)
        h_new[li] = u[v].powf(-qb) * (flux[li] / consts.h_n() + h_old[li] * u[v]);
    }

    let mut new_background = background.clone();
    let total_factor = match background.conformal_factor() {
        Some(f) => f.hadamard(u),
        None => u.clone(),
    };
    new_background.set_conformal_factor(total_factor.clone());
    new_background.set_curvatures(Field(r_new.clone()), BoundaryField(h_new.clone()));

    // operational bundle: exact sandwiches for A, M, S; the curvature-mass
    // slots are diagnostics assembled against the transformed measure, and
    // the stiffness slot closes the defining identity of the bundle
    let energy = matrices.energy.diag_congruence(u);
    let du_m: Vec<f64> = u.iter().map(|v| v.powf(qb)).collect();
    let du_s: Vec<f64> = u.iter().map(|v| v.powf((qb + 1.0) / 2.0)).collect();
    let mass = matrices.mass.diag_congruence(&du_m);
    let boundary_mass = matrices.boundary_mass.diag_congruence(&du_s);

    let all_elems: Vec<usize> = (0..mesh.n_tets()).collect();
    let all_faces: Vec<usize> = (0..mesh.n_boundary_faces()).collect();
    let fac = &total_factor;
    let curvature_mass = volume_point_mass(mesh, background, &all_elems, |ti, pi| {
        let rv = mesh.gather4(&r_new, ti);
        let fv = mesh.gather4(fac, ti);
        let p = TET_QP[pi];
        interp4(rv, p) * interp4(fv, p).powf(2.0 * qb)
    });
    let h_new_global = boundary_to_global(mesh, &BoundaryField(h_new.clone()));
    let boundary_curvature_mass = boundary_point_mass(mesh, background, &all_faces, |fi, pi| {
        let hv = mesh.gather3(&h_new_global, fi);
        let fv = mesh.gather3(fac, fi);
        let p = TRI_QP[pi];
        interp3(hv, p) * interp3(fv, p).powf(qb + 1.0)
    });
    let stiffness = energy
        .add_scaled(&curvature_mass, -consts.c_n())
        .add_scaled(&boundary_curvature_mass, -consts.h_n());
    let lumped_mass = mass.row_sums();
    let lumped_boundary_mass = boundary_mass.row_sums();
    let new_matrices = EnergyMatrices {
        stiffness,
        mass,
        boundary_mass,
        curvature_mass,
        boundary_curvature_mass,
        energy,
        lumped_mass,
        lumped_boundary_mass,
    };
    Ok((new_background, new_matrices))
}

/// Result of the curvature normalization step.
#[derive(Clone, Debug)]
pub struct Normalization {
    pub factor: Field,
    pub background: RiemannianBackground,
    pub matrices: EnergyMatrices,
    /// Multiplier of the minimizer when the transform was actually run;
    /// `None` on the fast path (curvatures already negative).
    pub multiplier: Option<f64>,
}

const SIGN_BAND_REL: f64 = 1e-8;

/// Conformally transform so the background curvatures have constant
/// negative sign, the entry condition of the subcritical solves.
///
/// If R and H are already nonpositive (within a roundoff band) and the
/// integral condition c_n int R dV + (n-2)/2 int H ds < 0 holds, the
/// identity transform is returned. Otherwise the minimizer of the (4, 3)
/// invariant with boundary weight b = 1 provides the factor: its
/// multiplier is negative on a Yamabe-negative manifold, and with b > 0
/// that makes both recovered curvatures negative.
pub fn normalize_to_negative(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    matrices: &EnergyMatrices,
) -> Result<Normalization> {
    let full = RegionPair::full(mesh);
    let (sign, eig) = yamabe_sign(mesh, matrices, &full, None)?;
    if sign != YamabeSign::Negative {
        return Err(Error::NotYamabeNegative(format!(
            "normalization requires a Yamabe-negative manifold; classified {:?} (lambda = {})",
            sign, eig.eigenvalue
        )));
    }

    let r = background.scalar_curvature();
    let h = background.mean_curvature();
    let band_r = SIGN_BAND_REL * r.norm_inf().max(1.0);
    let band_h = SIGN_BAND_REL * h.norm_inf().max(1.0);
    let already = r.iter().all(|&v| v <= band_r) && h.iter().all(|&v| v <= band_h);
    if already && integral_condition(mesh, background) < 0.0 {
        return Ok(Normalization {
            factor: Field::constant(mesh.n_vertices(), 1.0),
            background: background.clone(),
            matrices: matrices.clone(),
            multiplier: None,
        });
    }

    let spec = ConstraintSpec::new(mesh.constants(), 4.0, 3.0, 1.0)?;
    let result = yamabe_invariant(
        mesh,
        background,
        matrices,
        &full,
        &spec,
        &YamabeOptions::default(),
    )?;
    if !(result.multiplier < 0.0) {
        return Err(Error::NormalizationFailed(format!(
            "minimizer multiplier {} is not negative",
            result.multiplier
        )));
    }
    let u0 = result.minimizer;
    if let Some((i, v)) = u0.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NormalizationFailed(format!(
            "normalizing factor vanishes at vertex {i} ({v})"
        )));
    }
    let (bg2, mats2) = conformal_transform(mesh, background, matrices, &u0)?;
    let r2 = bg2.scalar_curvature();
    let band_r2 = SIGN_BAND_REL * r2.norm_inf().max(1.0);
    for v in 0..mesh.n_vertices() {
        if !mesh.is_boundary_vertex(v) && r2[v] > band_r2 {
            return Err(Error::NormalizationFailed(format!(
                "recovered scalar curvature is positive at interior vertex {v}: {}",
                r2[v]
            )));
        }
    }
    let h2 = bg2.mean_curvature();
    let band_h2 = SIGN_BAND_REL * h2.norm_inf().max(1.0);
    for (li, &v) in mesh.boundary_vertices().iter().enumerate() {
        // flux recovery is unreliable on surface creases; those nodes are
        // excluded here just as in the verification report
        if is_crease_vertex(mesh, v) {
            continue;
        }
        if h2[li] > band_h2 {
            return Err(Error::NormalizationFailed(format!(
                "recovered mean curvature is positive at boundary vertex {v}: {}",
                h2[li]
            )));
        }
    }
    if integral_condition(mesh, &bg2) >= 0.0 {
        return Err(Error::NormalizationFailed(
            "total-curvature condition c_n int R dV + (n-2)/2 int H ds < 0 fails after transform"
                .into(),
        ));
    }
    Ok(Normalization {
        factor: u0,
        background: bg2,
        matrices: mats2,
        multiplier: Some(result.multiplier),
    })
}

/// c_n int_M R dV + (n-2)/2 int_dM H ds for the background's own curvature
/// fields, with the conformal measure when a factor is present.
pub fn integral_condition(mesh: &SimplicialMesh, background: &RiemannianBackground) -> f64 {
    let consts = mesh.constants();
    let qb = consts.q_bar();
    let r = background.scalar_curvature();
    let fac = background.conformal_factor();
    let mut vol_part = 0.0;
    for ti in 0..mesh.n_tets() {
        let w = background.volume_weights()[ti];
        let rv = mesh.gather4(r, ti);
        for p in TET_QP {
            let density = match fac {
                Some(f) => interp4(mesh.gather4(f, ti), p).powf(2.0 * qb),
                None => 1.0,
            };
            vol_part += w * TET_QW * interp4(rv, p) * density;
        }
    }
    let hg = boundary_to_global(mesh, background.mean_curvature());
    let mut bdy_part = 0.0;
    for fi in 0..mesh.n_boundary_faces() {
        let a = background.area_weights()[fi];
        let hv = mesh.gather3(&hg, fi);
        for p in TRI_QP {
            let density = match fac {
                Some(f) => interp3(mesh.gather3(f, fi), p).powf(qb + 1.0),
                None => 1.0,
            };
            bdy_part += a * TRI_QW * interp3(hv, p) * density;
        }
    }
    consts.c_n() * vol_part + consts.h_n() * bdy_part
}

// ---------------------------------------------------------------------------
// the nonlinear solves

/// Everything a Newton solve needs about the ambient frame. `factor` is the
/// accumulated conformal factor (None in a base frame); the frame unknown w
/// composes with it to the total factor u = factor . w.
pub struct ProblemFrame<'a> {
    pub mesh: &'a SimplicialMesh,
    pub background: &'a RiemannianBackground,
    pub matrices: &'a EnergyMatrices,
}

impl<'a> ProblemFrame<'a> {
    fn factor(&self) -> Option<&Field> {
        self.background.conformal_factor()
    }

    /// Nodal premultipliers realizing the transformed measures at the given
    /// exponents: u^(2qb/q) inside, u^((qb+1)/r) on the boundary.
    fn premultipliers(&self, q: f64, r: f64) -> (Option<Field>, Option<Field>) {
        match self.factor() {
            None => (None, None),
            Some(u) => {
                let consts = self.mesh.constants();
                (
                    Some(u.powf(consts.critical_q() / q)),
                    Some(u.powf(consts.critical_r() / r)),
                )
            }
        }
    }

    fn compose(&self, w: &Field) -> Field {
        match self.factor() {
            None => w.clone(),
            Some(u) => u.hadamard(w),
        }
    }
}

fn apply_pre(pre: &Option<Field>, w: &Field) -> Field {
    match pre {
        None => w.clone(),
        Some(m) => m.hadamard(w),
    }
}

/// F_{q,r}(w) = E(w) - (n-2)/(2q(n-1)) int R' |w|^q dV
///            - (n-2)/r int H' |tr w|^r ds in the frame's metric.
fn f_merit(
    frame: &ProblemFrame,
    targets: &TargetCurvatures,
    q: f64,
    r: f64,
    w: &Field,
) -> f64 {
    let consts = frame.mesh.constants();
    let (pre_v, pre_b) = frame.premultipliers(q, r);
    let v = apply_pre(&pre_v, w);
    let vb = apply_pre(&pre_b, w);
    let mesh = frame.mesh;
    let bg = frame.background;
    let mut ivol = 0.0;
    for ti in 0..mesh.n_tets() {
        let wt = bg.volume_weights()[ti];
        let rv = mesh.gather4(&targets.r_prime, ti);
        let vv = mesh.gather4(&v, ti);
        for p in TET_QP {
            ivol += wt * TET_QW * interp4(rv, p) * interp4(vv, p).abs().powf(q);
        }
    }
    let hg = boundary_to_global(mesh, &targets.h_prime);
    let mut ibdy = 0.0;
    for fi in 0..mesh.n_boundary_faces() {
        let aw = bg.area_weights()[fi];
        let hv = mesh.gather3(&hg, fi);
        let vv = mesh.gather3(&vb, fi);
        for p in TRI_QP {
            ibdy += aw * TRI_QW * interp3(hv, p) * interp3(vv, p).abs().powf(r);
        }
    }
    frame.matrices.energy.quadratic_form(w) - 2.0 * consts.c_n() / q * ivol
        - 2.0 * consts.h_n() / r * ibdy
}

/// Half-gradient of the merit: A w - c_n T_vol - (n-2)/2 T_bdy, the weak
/// Euler-Lagrange residual of the subcritical problem.
fn f_residual(
    frame: &ProblemFrame,
    targets: &TargetCurvatures,
    q: f64,
    r: f64,
    w: &Field,
) -> Vec<f64> {
    let consts = frame.mesh.constants();
    let mesh = frame.mesh;
    let (pre_v, pre_b) = frame.premultipliers(q, r);
    let v = apply_pre(&pre_v, w);
    let vb = apply_pre(&pre_b, w);
    let all_elems: Vec<usize> = (0..mesh.n_tets()).collect();
    let all_faces: Vec<usize> = (0..mesh.n_boundary_faces()).collect();
    let mut t_vol = volume_point_load(mesh, frame.background, &all_elems, |ti, pi| {
        let rv = mesh.gather4(&targets.r_prime, ti);
        let vv = mesh.gather4(&v, ti);
        let p = TET_QP[pi];
        let x = interp4(vv, p);
        interp4(rv, p) * x.abs().powf(q - 2.0) * x
    });
    if let Some(m) = &pre_v {
        for (t, mi) in t_vol.iter_mut().zip(m.iter()) {
            *t *= mi;
        }
    }
    let hg = boundary_to_global(mesh, &targets.h_prime);
    let mut t_bdy = boundary_point_load(mesh, frame.background, &all_faces, |fi, pi| {
        let hv = mesh.gather3(&hg, fi);
        let vv = mesh.gather3(&vb, fi);
        let p = TRI_QP[pi];
        let x = interp3(vv, p);
        interp3(hv, p) * x.abs().powf(r - 2.0) * x
    });
    if let Some(m) = &pre_b {
        for (t, mi) in t_bdy.iter_mut().zip(m.iter()) {
            *t *= mi;
        }
    }
    let mut res = frame.matrices.energy.mul_vec(w);
    for i in 0..res.len() {
        res[i] -= consts.c_n() * t_vol[i] + consts.h_n() * t_bdy[i];
    }
    res
}

fn f_jacobian(
    frame: &ProblemFrame,
    targets: &TargetCurvatures,
    q: f64,
    r: f64,
    w: &Field,
) -> CsrMatrix {
    let consts = frame.mesh.constants();
    let mesh = frame.mesh;
    let (pre_v, pre_b) = frame.premultipliers(q, r);
    let v = apply_pre(&pre_v, w);
    let vb = apply_pre(&pre_b, w);
    let all_elems: Vec<usize> = (0..mesh.n_tets()).collect();
    let all_faces: Vec<usize> = (0..mesh.n_boundary_faces()).collect();
    let mut m_vol = volume_point_mass(mesh, frame.background, &all_elems, |ti, pi| {
        let rv = mesh.gather4(&targets.r_prime, ti);
        let vv = mesh.gather4(&v, ti);
        let p = TET_QP[pi];
        interp4(rv, p) * interp4(vv, p).abs().powf(q - 2.0)
    });
    if let Some(m) = &pre_v {
        m_vol = m_vol.diag_congruence(m);
    }
    let hg = boundary_to_global(mesh, &targets.h_prime);
    let mut m_bdy = boundary_point_mass(mesh, frame.background, &all_faces, |fi, pi| {
        let hv = mesh.gather3(&hg, fi);
        let vv = mesh.gather3(&vb, fi);
        let p = TRI_QP[pi];
        interp3(hv, p) * interp3(vv, p).abs().powf(r - 2.0)
    });
    if let Some(m) = &pre_b {
        m_bdy = m_bdy.diag_congruence(m);
    }
    frame
        .matrices
        .energy
        .add_scaled(&m_vol, -consts.c_n() * (q - 1.0))
        .add_scaled(&m_bdy, -consts.h_n() * (r - 1.0))
}

/// F_{q,r}(w) in the frame's metric, for diagnostics and gradient checks.
pub fn f_value(
    frame: &ProblemFrame,
    targets: &TargetCurvatures,
    q: f64,
    r: f64,
    w: &Field,
) -> f64 {
    f_merit(frame, targets, q, r, w)
}

/// Gradient of F_{q,r} with respect to the nodal values (twice the weak
/// Euler-Lagrange residual).
pub fn f_gradient(
    frame: &ProblemFrame,
    targets: &TargetCurvatures,
    q: f64,
    r: f64,
    w: &Field,
) -> Vec<f64> {
    let mut g = f_residual(frame, targets, q, r, w);
    for gi in &mut g {
        *gi *= 2.0;
    }
    g
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    pub residual_tol: f64,
    pub max_steps: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            residual_tol: 1e-9,
            max_steps: 200,
        }
    }
}

struct NewtonOutcome {
    solution: Field,
    residual: f64,
    merit: f64,
}

/// Damped Newton with a hard positivity cap (steps shortened to 0.9 of the
/// distance to the nearest zero crossing) and a gradient-descent fallback
/// when the Newton direction fails to descend the merit.
fn damped_newton(
    merit: &dyn Fn(&Field) -> f64,
    residual: &dyn Fn(&Field) -> Vec<f64>,
    jacobian: &dyn Fn(&Field) -> CsrMatrix,
    w0: Field,
    opts: &NewtonOptions,
    label: &str,
) -> Result<NewtonOutcome> {
    let mut w = w0;
    if !(w.min() > 0.0) {
        return Err(Error::PositivityLost(format!(
            "{label}: initial iterate is not strictly positive"
        )));
    }
    let mut fw = merit(&w);
    let f0 = fw;
    let w_scale0 = w.norm_inf();
    for _step in 0..opts.max_steps {
        let res = residual(&w);
        let rnorm = sparse::norm2(&res);
        if rnorm <= opts.residual_tol {
            return Ok(NewtonOutcome {
                solution: w,
                residual: rnorm,
                merit: fw,
            });
        }
        if fw < -1e12 * (1.0 + f0.abs()) || w.norm_inf() > 1e8 * (1.0 + w_scale0) {
            return Err(Error::NonConvergence(format!(
                "{label}: the functional appears unbounded below (F = {fw:e})"
            )));
        }
        let jac = jacobian(&w);
        let mut dir = vec![0.0; w.len()];
        let neg_res: Vec<f64> = res.iter().map(|v| -v).collect();
        let cg = conjugate_gradient(
            |x, y| jac.mul_vec_into(x, y),
            &jac.diagonal(),
            &neg_res,
            &mut dir,
            1e-10,
            20 * w.len() + 300,
        );
        // gradient of the merit is 2 res; fall back to steepest descent if
        // the Newton system failed or gave a non-descent direction
        let descent = sparse::dot(&dir, &res) < 0.0;
        if matches!(cg, CgOutcome::IndefiniteOperator) || !descent {
            let scale = 1.0 / (1.0 + jac.norm_inf());
            for (d, r) in dir.iter_mut().zip(res.iter()) {
                *d = -r * scale;
            }
        }
        // positivity cap
        let mut alpha_max = f64::INFINITY;
        for (wi, di) in w.iter().zip(dir.iter()) {
            if *di < 0.0 {
                alpha_max = alpha_max.min(-wi / di);
            }
        }
        let mut alpha = (0.9 * alpha_max).min(1.0);
        if alpha <= 1e-14 {
            return Err(Error::PositivityLost(format!(
                "{label}: positivity cap collapsed the step"
            )));
        }
        let slope = 2.0 * sparse::dot(&res, &dir);
        let mut accepted = false;
        for _ in 0..60 {
            let mut cand = w.clone();
            sparse::axpy(alpha, &dir, &mut cand.0);
            if cand.min() > 0.0 {
                let fc = merit(&cand);
                // Armijo on the merit; near the root the merit goes flat at
                // machine precision, so a residual-norm decrease also counts
                let armijo = fc <= fw + 1e-4 * alpha * slope;
                let merit_flat =
                    (1e-4 * alpha * slope).abs() <= 1e3 * f64::EPSILON * (1.0 + fw.abs());
                let ok = armijo
                    || (merit_flat
                        && sparse::norm2(&residual(&cand)) <= (1.0 - 1e-4 * alpha) * rnorm);
                if ok {
                    w = cand;
                    fw = fc;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence(format!(
                "{label}: line search stalled at residual {rnorm:e}"
            )));
        }
    }
    let res = residual(&w);
    let rnorm = sparse::norm2(&res);
    if rnorm <= opts.residual_tol {
        Ok(NewtonOutcome {
            solution: w,
            residual: rnorm,
            merit: fw,
        })
    } else {
        Err(Error::NonConvergence(format!(
            "{label}: residual {rnorm:e} after {} Newton steps",
            opts.max_steps
        )))
    }
}

/// Minimize F_{q,r} over positive fields in the frame's metric: the weak
/// solution of the subcritical prescribed-curvature system. The background
/// curvatures must already be nonpositive (within a roundoff band).
pub fn solve_subcritical(
    frame: &ProblemFrame,
    targets: &TargetCurvatures,
    q: f64,
    r: f64,
    warm_start: &Field,
    opts: &NewtonOptions,
) -> Result<Field> {
    let consts = frame.mesh.constants();
    if !(q > r) || q < 2.0 || r < 2.0 || q > consts.critical_q() || r > consts.critical_r() {
        return Err(Error::InvalidExponents(format!(
            "subcritical solve needs 2 <= r < q <= {} with r <= {}; got q = {q}, r = {r}",
            consts.critical_q(),
            consts.critical_r()
        )));
    }
    let bg = frame.background;
    let band_r = SIGN_BAND_REL * bg.scalar_curvature().norm_inf().max(1.0);
    if let Some((v, val)) = bg
        .scalar_curvature()
        .iter()
        .enumerate()
        .find(|(_, v)| **v > band_r)
    {
        return Err(Error::Precondition(format!(
            "background not curvature-normalized: R[{v}] = {val} > 0"
        )));
    }
    let band_h = SIGN_BAND_REL * bg.mean_curvature().norm_inf().max(1.0);
    if let Some((li, val)) = bg
        .mean_curvature()
        .iter()
        .enumerate()
        .find(|(_, v)| **v > band_h)
    {
        return Err(Error::Precondition(format!(
            "background not curvature-normalized: H at boundary vertex {} = {val} > 0",
            frame.mesh.boundary_vertices()[li]
        )));
    }
    let outcome = damped_newton(
        &|w| f_merit(frame, targets, q, r, w),
        &|w| f_residual(frame, targets, q, r, w),
        &|w| f_jacobian(frame, targets, q, r, w),
        warm_start.clone(),
        opts,
        &format!("F_({q},{r})"),
    )?;
    Ok(outcome.solution)
}

/// Geometric continuation schedule ending exactly at (2 q-bar, q-bar + 1).
///
/// The boundary exponent starts strictly above 2: at r = 2 the boundary
/// target enters F at the same quadratic order as the background terms and
/// a strong H' can push the infimum to the trivial point, which breaks the
/// small-constant argument behind the stage minimizers. A quarter of the
/// way into the admissible range is safely clear of that degeneracy.
pub fn continuation_schedule(
    consts: crate::mesh::DimensionConstants,
    stages: usize,
) -> Vec<(f64, f64)> {
    let (cq, cr) = (consts.critical_q(), consts.critical_r());
    let q1 = 2.0 + 0.5 * (cq - 2.0);
    let r1 = 2.0 + 0.25 * (cr - 2.0);
    let mut out = Vec::with_capacity(stages + 1);
    for k in 1..=stages {
        let f = (2f64).powi(1 - k as i32);
        out.push((cq - f * (cq - q1), cr - f * (cr - r1)));
    }
    out.push((cq, cr));
    out
}

/// Run the subcritical solves along the schedule, warm-starting each stage
/// from the last, and finish with the critical-exponent solve.
pub fn continuation_to_critical(
    frame: &ProblemFrame,
    targets: &TargetCurvatures,
    stages: usize,
    opts: &NewtonOptions,
) -> Result<(Field, Vec<StageTrace>, f64)> {
    let schedule = continuation_schedule(frame.mesh.constants(), stages);
    let mut w = Field::constant(frame.mesh.n_vertices(), 1.0);
    let mut trace = Vec::with_capacity(schedule.len());
    let mut final_residual = f64::INFINITY;
    for (k, &(q, r)) in schedule.iter().enumerate() {
        // start each stage at the warm iterate unless a constant sits
        // strictly lower on F; constants are the natural trial family and
        // keep the iteration inside the nontrivial basin
        let warm_f = f_merit(frame, targets, q, r, &w);
        let init = match best_constant_start(frame, targets, q, r) {
            Some((a, fa)) if fa < warm_f => Field::constant(frame.mesh.n_vertices(), a),
            _ => w.clone(),
        };
        let outcome = damped_newton(
            &|x| f_merit(frame, targets, q, r, x),
            &|x| f_residual(frame, targets, q, r, x),
            &|x| f_jacobian(frame, targets, q, r, x),
            init,
            opts,
            &format!("stage {} at ({q}, {r})", k + 1),
        )
        .map_err(|e| {
            Error::NonConvergence(format!("continuation stage {} (q = {q}, r = {r}): {e}", k + 1))
        })?;
        w = outcome.solution;
        final_residual = outcome.residual;
        let composed = frame.compose(&w);
        trace.push(StageTrace {
            stage: k + 1,
            q,
            r,
            f_value: outcome.merit,
            residual: outcome.residual,
            min_u: composed.min(),
        });
    }
    Ok((w, trace, final_residual))
}

/// Scan F along the constant family A . 1 on a log grid with a golden
/// refinement; returns the best strictly positive constant and its value.
fn best_constant_start(
    frame: &ProblemFrame,
    targets: &TargetCurvatures,
    q: f64,
    r: f64,
) -> Option<(f64, f64)> {
    let eval = |a: f64| {
        f_merit(
            frame,
            targets,
            q,
            r,
            &Field::constant(frame.mesh.n_vertices(), a),
        )
    };
    let mut best = (1.0, eval(1.0));
    for i in -30..=30 {
        let a = (10f64).powf(i as f64 / 10.0);
        let f = eval(a);
        if f < best.1 {
            best = (a, f);
        }
    }
    let (mut lo, mut hi) = (best.0 / 1.3, best.0 * 1.3);
    for _ in 0..60 {
        let m1 = lo + 0.382 * (hi - lo);
        let m2 = lo + 0.618 * (hi - lo);
        if eval(m1) <= eval(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let a = 0.5 * (lo + hi);
    let f = eval(a);
    if f < best.1 {
        best = (a, f);
    }
    (best.0 > 0.0).then_some(best)
}

/// Solvability of the prescription problem: with a Yamabe-negative
/// background and nonpositive targets, the critical problem has a positive
/// solution iff the zero set (Z, Z_boundary) of the targets classifies
/// Yamabe positive.
pub fn solvability_predicate(
    mesh: &SimplicialMesh,
    _background: &RiemannianBackground,
    matrices: &EnergyMatrices,
    targets: &TargetCurvatures,
    tol: Option<f64>,
) -> Result<PredicateReport> {
    let full = RegionPair::full(mesh);
    let (sign, eig) = yamabe_sign(mesh, matrices, &full, None)?;
    if sign != YamabeSign::Negative {
        return Err(Error::NotYamabeNegative(format!(
            "the solvability criterion applies to Yamabe-negative manifolds; classified {:?} (lambda = {})",
            sign, eig.eigenvalue
        )));
    }
    let tol = tol.unwrap_or_else(|| {
        crate::region::default_zero_tol(&targets.r_prime, &targets.h_prime)
    });
    let zero = zero_set(mesh, &targets.r_prime, &targets.h_prime, tol);
    let (zsign, zeig) = yamabe_sign(mesh, matrices, &zero, None)?;
    let note = if zero.omega().is_empty() {
        "zero set has measure zero; the admissible space is trivial and the invariant is +infinity"
            .to_string()
    } else {
        format!(
            "classified by the relative eigenvalue of the zero region ({} elements, {} faces)",
            zero.omega().len(),
            zero.sigma().len()
        )
    };
    Ok(PredicateReport {
        solvable: zsign == YamabeSign::Positive,
        sign: zsign,
        eigenvalue: if zeig.eigenvalue.is_finite() {
            Some(zeig.eigenvalue)
        } else {
            None
        },
        zero_elements: zero.omega().len(),
        zero_faces: zero.sigma().len(),
        zero_tol: tol,
        note,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct PrescribeOptions {
    pub stages: usize,
    pub newton: NewtonOptions,
    pub zero_tol: Option<f64>,
}

impl Default for PrescribeOptions {
    fn default() -> Self {
        PrescribeOptions {
            stages: 8,
            newton: NewtonOptions::default(),
            zero_tol: None,
        }
    }
}

/// Full pipeline: sign validation, solvability predicate, normalization,
/// continuation to the critical exponents, and conformal verification of
/// the recovered curvatures against the targets.
pub fn solve_prescribed(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    matrices: &EnergyMatrices,
    targets: &TargetCurvatures,
    opts: &PrescribeOptions,
) -> Result<PrescribeReport> {
    let predicate = solvability_predicate(mesh, background, matrices, targets, opts.zero_tol)?;
    if !predicate.solvable {
        return Ok(PrescribeReport {
            status: PrescribeStatus::NoSolutionPerTheorem,
            solution: None,
            min_u: None,
            trace: Vec::new(),
            final_residual: None,
            predicate,
            verification: None,
        });
    }
    let normalization = normalize_to_negative(mesh, background, matrices)?;
    let frame = ProblemFrame {
        mesh,
        background: &normalization.background,
        matrices: &normalization.matrices,
    };
    let (w, trace, final_residual) =
        continuation_to_critical(&frame, targets, opts.stages, &opts.newton)?;
    let solution = frame.compose(&w);
    let verification = verify_solution(mesh, background, matrices, targets, &solution)?;
    Ok(PrescribeReport {
        status: PrescribeStatus::Converged,
        min_u: Some(solution.min()),
        solution: Some(solution),
        trace,
        final_residual: Some(final_residual),
        predicate,
        verification: Some(verification),
    })
}

/// Recompute the curvatures of g' = u^(2qb-2) g and report deviations from
/// the targets, excluding the one-ring where the recovery operators carry
/// boundary artifacts (interior vertices adjacent to the boundary, and
/// boundary vertices on surface creases).
pub fn verify_solution(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    matrices: &EnergyMatrices,
    targets: &TargetCurvatures,
    u: &Field,
) -> Result<VerificationReport> {
    let (bg2, _) = conformal_transform(mesh, background, matrices, u)?;
    let r2 = bg2.scalar_curvature();
    let h2 = bg2.mean_curvature();

    let mut adjacent_to_boundary = vec![false; mesh.n_vertices()];
    for v in 0..mesh.n_vertices() {
        if mesh.is_boundary_vertex(v) {
            continue;
        }
        'adj: for &ti in mesh.tets_of_vertex(v) {
            for &w in &mesh.tets()[ti] {
                if mesh.is_boundary_vertex(w) {
                    adjacent_to_boundary[v] = true;
                    break 'adj;
                }
            }
        }
    }
    let mut max_r: f64 = 0.0;
    let mut checked_r = 0usize;
    let mut excluded_r = 0usize;
    for v in 0..mesh.n_vertices() {
        if mesh.is_boundary_vertex(v) {
            continue;
        }
        if adjacent_to_boundary[v] {
            excluded_r += 1;
            continue;
        }
        checked_r += 1;
        max_r = max_r.max((r2[v] - targets.r_prime[v]).abs());
    }

    let mut max_h: f64 = 0.0;
    let mut checked_h = 0usize;
    let mut excluded_h = 0usize;
    for (li, &v) in mesh.boundary_vertices().iter().enumerate() {
        if is_crease_vertex(mesh, v) {
            excluded_h += 1;
            continue;
        }
        checked_h += 1;
        max_h = max_h.max((h2[li] - targets.h_prime[li]).abs());
    }
    Ok(VerificationReport {
        max_interior_r_deviation: max_r,
        interior_nodes_checked: checked_r,
        interior_nodes_excluded: excluded_r,
        max_boundary_h_deviation: max_h,
        boundary_nodes_checked: checked_h,
        boundary_nodes_excluded: excluded_h,
    })
}

fn face_unit_normal(mesh: &SimplicialMesh, fi: usize) -> crate::geometry::Vec3 {
    let f = mesh.boundary_faces()[fi];
    let v = mesh.vertices();
    crate::geometry::normalize(crate::geometry::cross(
        crate::geometry::sub(v[f[1]], v[f[0]]),
        crate::geometry::sub(v[f[2]], v[f[0]]),
    ))
}

/// A boundary vertex sits on a surface crease when two of its faces
/// disagree in normal direction by more than 30 degrees; flux recovery
/// carries O(1) artifacts there.
pub fn is_crease_vertex(mesh: &SimplicialMesh, v: usize) -> bool {
    let cos_tol = (30f64).to_radians().cos();
    let faces = mesh.faces_of_vertex(v);
    for (ai, &fa) in faces.iter().enumerate() {
        for &fb in faces.iter().skip(ai + 1) {
            let na = face_unit_normal(mesh, fa);
            let nb = face_unit_normal(mesh, fb);
            if crate::geometry::dot(na, nb) < cos_tol {
                return true;
            }
        }
    }
    false
}

/// Damped Newton for the Lichnerowicz equation at the critical exponents,
/// with the negative-power source terms a_w u^(-2qb-1) and b_w u^(-qb).
/// The positivity line search is mandatory here: both extra terms blow up
/// at u = 0 and act as natural barriers.
pub fn solve_lichnerowicz(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    matrices: &EnergyMatrices,
    targets: &TargetCurvatures,
    lich: &LichnerowiczData,
    opts: &NewtonOptions,
) -> Result<Field> {
    if background.conformal_factor().is_some() {
        return Err(Error::Precondition(
            "solve_lichnerowicz expects a base background".into(),
        ));
    }
    let full = RegionPair::full(mesh);
    let (sign, _) = yamabe_sign(mesh, matrices, &full, None)?;
    if sign != YamabeSign::Negative {
        return Err(Error::NotYamabeNegative(format!(
            "the Lichnerowicz equivalence regime requires a Yamabe-negative manifold; classified {sign:?}"
        )));
    }
    let consts = mesh.constants();
    let (cq, cr) = (consts.critical_q(), consts.critical_r());
    let qb = consts.q_bar();
    let frame = ProblemFrame {
        mesh,
        background,
        matrices,
    };
    let all_elems: Vec<usize> = (0..mesh.n_tets()).collect();
    let all_faces: Vec<usize> = (0..mesh.n_boundary_faces()).collect();
    let bw_global = boundary_to_global(mesh, &lich.b_w);

    let merit = |u: &Field| -> f64 {
        let base = f_merit(&frame, targets, cq, cr, u);
        // + (1/qb) int a_w u^(-2qb) + 2/(1-qb) int b_w u^(1-qb)
        let mut extra_a = 0.0;
        for ti in 0..mesh.n_tets() {
            let wt = background.volume_weights()[ti];
            let av = mesh.gather4(&lich.a_w, ti);
            let uv = mesh.gather4(u, ti);
            for p in TET_QP {
                extra_a += wt * TET_QW * interp4(av, p) * interp4(uv, p).powf(-2.0 * qb);
            }
        }
        let mut extra_b = 0.0;
        for fi in 0..mesh.n_boundary_faces() {
            let aw = background.area_weights()[fi];
            let bv = mesh.gather3(&bw_global, fi);
            let uv = mesh.gather3(u, fi);
            for p in TRI_QP {
                extra_b += aw * TRI_QW * interp3(bv, p) * interp3(uv, p).powf(1.0 - qb);
            }
        }
        base + extra_a / qb + 2.0 / (1.0 - qb) * extra_b
    };
    let residual = |u: &Field| -> Vec<f64> {
        let mut res = f_residual(&frame, targets, cq, cr, u);
        let n_a = volume_point_load(mesh, background, &all_elems, |ti, pi| {
            let av = mesh.gather4(&lich.a_w, ti);
            let uv = mesh.gather4(u, ti);
            let p = TET_QP[pi];
            interp4(av, p) * interp4(uv, p).powf(-2.0 * qb - 1.0)
        });
        let n_b = boundary_point_load(mesh, background, &all_faces, |fi, pi| {
            let bv = mesh.gather3(&bw_global, fi);
            let uv = mesh.gather3(u, fi);
            let p = TRI_QP[pi];
            interp3(bv, p) * interp3(uv, p).powf(-qb)
        });
        for i in 0..res.len() {
            res[i] += -n_a[i] + n_b[i];
        }
        res
    };
    let jacobian = |u: &Field| -> CsrMatrix {
        let base = f_jacobian(&frame, targets, cq, cr, u);
        let d_a = volume_point_mass(mesh, background, &all_elems, |ti, pi| {
            let av = mesh.gather4(&lich.a_w, ti);
            let uv = mesh.gather4(u, ti);
            let p = TET_QP[pi];
            interp4(av, p) * interp4(uv, p).powf(-2.0 * qb - 2.0)
        });
        let d_b = boundary_point_mass(mesh, background, &all_faces, |fi, pi| {
            let bv = mesh.gather3(&bw_global, fi);
            let uv = mesh.gather3(u, fi);
            let p = TRI_QP[pi];
            interp3(bv, p) * interp3(uv, p).powf(-qb - 1.0)
        });
        base.add_scaled(&d_a, 2.0 * qb + 1.0).add_scaled(&d_b, -qb)
    };
    let outcome = damped_newton(
        &merit,
        &residual,
        &jacobian,
        Field::constant(mesh.n_vertices(), 1.0),
        opts,
        "Lichnerowicz",
    )?;
    Ok(outcome.solution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, energy};
    use crate::mesh::{flat_background, generate_unit_ball, generate_unit_cube};
    use crate::testutil::bisect;

    fn cube_setup(m: usize, r0: f64, h0: f64) -> (SimplicialMesh, RiemannianBackground, EnergyMatrices) {
        let mesh = generate_unit_cube(m).unwrap();
        let bg = flat_background(&mesh, r0, h0);
        let mats = assemble(&mesh, &bg).unwrap();
        (mesh, bg, mats)
    }

    #[test]
    fn identity_transform_changes_nothing() {
        let (mesh, bg, mats) = cube_setup(2, -2.0, 0.5);
        let one = Field::constant(mesh.n_vertices(), 1.0);
        let (bg2, mats2) = conformal_transform(&mesh, &bg, &mats, &one).unwrap();
        for v in 0..mesh.n_vertices() {
            assert!((bg2.scalar_curvature()[v] - bg.scalar_curvature()[v]).abs() < 1e-12);
        }
        for li in 0..bg.mean_curvature().len() {
            assert!((bg2.mean_curvature()[li] - bg.mean_curvature()[li]).abs() < 1e-12);
        }
        for t in 0..mesh.n_tets() {
            assert!((bg2.effective_volume_weight(&mesh, t) - bg.volume_weights()[t]).abs() < 1e-15);
        }
        let phi = Field((0..mesh.n_vertices()).map(|i| (i % 5) as f64 - 1.0).collect());
        assert!(
            (energy(&mats2, &phi).unwrap() - energy(&mats, &phi).unwrap()).abs() < 1e-12
        );
    }

    #[test]
    fn constant_factor_scales_curvature_exactly() {
        let (mesh, bg, mats) = cube_setup(2, -3.0, 0.0);
        let c = 2.0;
        let u = Field::constant(mesh.n_vertices(), c);
        let (bg2, _) = conformal_transform(&mesh, &bg, &mats, &u).unwrap();
        // R-tilde = c^(2 - 2 qbar) R = R / 16 for n = 3, c = 2
        for v in 0..mesh.n_vertices() {
            assert!((bg2.scalar_curvature()[v] - (-3.0 / 16.0)).abs() < 1e-12);
        }
        // measures scale by c^(2 qbar) and c^(qbar + 1)
        let vol2 = bg2.total_volume(&mesh);
        assert!((vol2 - c.powi(6)).abs() < 1e-10);
        let area2 = bg2.total_boundary_area(&mesh);
        assert!((area2 - 6.0 * c.powi(4)).abs() < 1e-9);
    }

    #[test]
    fn conformal_energy_identity_is_exact() {
        let (mesh, bg, mats) = cube_setup(2, -1.0, 0.25);
        let u = Field(
            mesh.vertices()
                .iter()
                .map(|p| 1.0 + 0.1 * p[0] + 0.05 * p[1] * p[2])
                .collect(),
        );
        let (_, mats2) = conformal_transform(&mesh, &bg, &mats, &u).unwrap();
        for seed in 0..50u64 {
            let phi = Field(
                (0..mesh.n_vertices())
                    .map(|i| {
                        let x = (i as u64).wrapping_mul(6364136223846793005).wrapping_add(seed);
                        ((x >> 33) as f64 / (1u64 << 31) as f64) - 1.0
                    })
                    .collect(),
            );
            let lhs = energy(&mats2, &phi).unwrap();
            let rhs = energy(&mats, &u.hadamard(&phi)).unwrap();
            assert!(
                (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1e-30),
                "E_gt(phi) = {lhs} vs E_g(u phi) = {rhs}"
            );
        }
    }

    #[test]
    fn constraint_norms_are_covariant_at_critical_exponents() {
        let (mesh, bg, mats) = cube_setup(2, -2.0, 0.5);
        let u = Field(
            mesh.vertices()
                .iter()
                .map(|p| 0.8 + 0.3 * p[0] + 0.1 * p[1])
                .collect(),
        );
        let (bg2, _) = conformal_transform(&mesh, &bg, &mats, &u).unwrap();
        let full = crate::region::RegionPair::full(&mesh);
        let phi = Field((0..mesh.n_vertices()).map(|i| ((i % 7) as f64) / 3.0 - 1.0).collect());
        let uphi = u.hadamard(&phi);
        let lhs = crate::assembly::lq_norm_on_region(&mesh, &bg2, &full, &phi, 6.0);
        let rhs = crate::assembly::lq_norm_on_region(&mesh, &bg, &full, &uphi, 6.0);
        assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-30), "{lhs} vs {rhs}");
        let lhs = crate::assembly::lr_norm_on_boundary(&mesh, &bg2, &full, &phi, 4.0);
        let rhs = crate::assembly::lr_norm_on_boundary(&mesh, &bg, &full, &uphi, 4.0);
        assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-30), "{lhs} vs {rhs}");
    }

    #[test]
    fn normalization_fast_path_keeps_negative_backgrounds() {
        let (mesh, bg, mats) = cube_setup(2, -10.0, 0.0);
        let n = normalize_to_negative(&mesh, &bg, &mats).unwrap();
        assert!(n.multiplier.is_none());
        assert_eq!(n.factor, Field::constant(mesh.n_vertices(), 1.0));
        assert_eq!(n.background.scalar_curvature(), bg.scalar_curvature());
        assert!(integral_condition(&mesh, &n.background) < 0.0);
    }

    #[test]
    fn harmonic_factor_gives_zero_transformed_curvature() {
        // u = 1 + 0.1 x is harmonic, so the conformal metric is scalar-flat;
        // linears are discretely harmonic, making the recovery exact at
        // interior nodes
        let (mesh, bg, mats) = cube_setup(3, 0.0, 0.0);
        let u = Field(mesh.vertices().iter().map(|p| 1.0 + 0.1 * p[0]).collect());
        let (bg2, _) = conformal_transform(&mesh, &bg, &mats, &u).unwrap();
        for v in 0..mesh.n_vertices() {
            if !mesh.is_boundary_vertex(v) {
                assert!(
                    bg2.scalar_curvature()[v].abs() < 1e-10,
                    "R at interior vertex {v}: {}",
                    bg2.scalar_curvature()[v]
                );
            }
        }
    }

    #[test]
    fn recovered_curvature_converges_for_curved_factor() {
        // u = 1 + 0.1 e^x: Delta u = 0.1 e^x, so the metric of u^4 delta has
        // scalar curvature -0.8 e^x u^(-5); recovery converges at interior
        // nodes under refinement
        let err_at = |m: usize| -> f64 {
            let (mesh, bg, mats) = cube_setup(m, 0.0, 0.0);
            let u = Field(
                mesh.vertices()
                    .iter()
                    .map(|p| 1.0 + 0.1 * p[0].exp())
                    .collect(),
            );
            let (bg2, _) = conformal_transform(&mesh, &bg, &mats, &u).unwrap();
            let mut worst = 0.0f64;
            for v in 0..mesh.n_vertices() {
                if mesh.is_boundary_vertex(v) {
                    continue;
                }
                let exact = -0.8 * mesh.vertices()[v][0].exp() * u[v].powf(-5.0);
                worst = worst.max((bg2.scalar_curvature()[v] - exact).abs());
            }
            worst
        };
        let e4 = err_at(4);
        let e8 = err_at(8);
        let rate = (e4 / e8).log2();
        assert!(rate >= 1.0, "observed rate {rate:.2}: {e4} -> {e8}");
    }

    #[test]
    fn fixed_point_subcritical_from_perturbed_start() {
        let (mesh, bg, mats) = cube_setup(2, -1.0, 0.0);
        let targets = TargetCurvatures::new(
            &mesh,
            bg.scalar_curvature().clone(),
            bg.mean_curvature().clone(),
        )
        .unwrap();
        let frame = ProblemFrame {
            mesh: &mesh,
            background: &bg,
            matrices: &mats,
        };
        let start = Field::constant(mesh.n_vertices(), 1.2);
        let u = solve_subcritical(&frame, &targets, 4.0, 3.0, &start, &Default::default()).unwrap();
        for v in u.iter() {
            assert!((v - 1.0).abs() <= 1e-8, "u = {v}");
        }
    }

    #[test]
    fn constant_target_subcritical_hits_scalar_root() {
        // c_n R u = c_n R' u^(q-1) with R = -1, R' = -4, q = 4: u = 1/2
        let (mesh, bg, mats) = cube_setup(2, -1.0, 0.0);
        let targets = TargetCurvatures::new(
            &mesh,
            Field::constant(mesh.n_vertices(), -4.0),
            BoundaryField::constant(mesh.boundary_vertices().len(), 0.0),
        )
        .unwrap();
        let frame = ProblemFrame {
            mesh: &mesh,
            background: &bg,
            matrices: &mats,
        };
        let start = Field::constant(mesh.n_vertices(), 1.0);
        let u = solve_subcritical(&frame, &targets, 4.0, 3.0, &start, &Default::default()).unwrap();
        for v in u.iter() {
            assert!((v - 0.5).abs() <= 1e-8, "u = {v}");
        }
    }

    #[test]
    fn unbounded_functional_is_reported() {
        let (mesh, bg, mats) = cube_setup(2, -1.0, 0.0);
        let targets = TargetCurvatures::new(
            &mesh,
            Field::zeros(mesh.n_vertices()),
            BoundaryField::constant(mesh.boundary_vertices().len(), 0.0),
        )
        .unwrap();
        let frame = ProblemFrame {
            mesh: &mesh,
            background: &bg,
            matrices: &mats,
        };
        let start = Field::constant(mesh.n_vertices(), 1.0);
        let err =
            solve_subcritical(&frame, &targets, 4.0, 3.0, &start, &Default::default()).unwrap_err();
        assert!(matches!(err, Error::NonConvergence(_)), "{err}");
    }

    #[test]
    fn continuation_constant_target_reaches_critical_root() {
        let (mesh, bg, mats) = cube_setup(2, -1.0, 0.0);
        let targets = TargetCurvatures::new(
            &mesh,
            Field::constant(mesh.n_vertices(), -4.0),
            BoundaryField::constant(mesh.boundary_vertices().len(), 0.0),
        )
        .unwrap();
        let frame = ProblemFrame {
            mesh: &mesh,
            background: &bg,
            matrices: &mats,
        };
        let (w, trace, res) =
            continuation_to_critical(&frame, &targets, 8, &Default::default()).unwrap();
        assert!(res <= 1e-7);
        assert_eq!(trace.len(), 9);
        assert_eq!(trace.last().unwrap().q, 6.0);
        assert_eq!(trace.last().unwrap().r, 4.0);
        // u^4 = R/R' = 1/4 at the critical exponents
        let exact = 0.25f64.powf(0.25);
        for v in w.iter() {
            assert!((v - exact).abs() <= 1e-6, "u = {v} vs {exact}");
        }
        // stage k solves c_n R u = c_n R' u^(q_k - 1) among constants
        for st in &trace {
            let root = bisect(|x| x.powf(st.q - 2.0) - 0.25, 1e-3, 1.0, 1e-13);
            assert!((st.min_u - root).abs() < 1e-5, "stage {} min_u {}", st.stage, st.min_u);
        }
    }

    #[test]
    fn schedule_is_increasing_and_ends_critical() {
        let consts = crate::mesh::DimensionConstants::new(3).unwrap();
        let s = continuation_schedule(consts, 8);
        assert_eq!(s[0], (4.0, 2.5));
        assert_eq!(s[1], (5.0, 3.25));
        assert_eq!(*s.last().unwrap(), (6.0, 4.0));
        for w in s.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        for (q, r) in s {
            assert!(q > r);
        }
    }

    #[test]
    fn predicate_cases() {
        let (mesh, bg, mats) = cube_setup(2, -10.0, 0.0);
        let nb = mesh.boundary_vertices().len();
        // strictly negative targets: empty zero set, solvable
        let targets = TargetCurvatures::new(
            &mesh,
            Field::constant(mesh.n_vertices(), -1.0),
            BoundaryField::constant(nb, -1.0),
        )
        .unwrap();
        let rep = solvability_predicate(&mesh, &bg, &mats, &targets, None).unwrap();
        assert!(rep.solvable);
        assert_eq!(rep.zero_elements, 0);

        // vanishing targets: the zero set is the whole manifold, which
        // inherits the negative sign
        let targets0 = TargetCurvatures::new(
            &mesh,
            Field::zeros(mesh.n_vertices()),
            BoundaryField::constant(nb, 0.0),
        )
        .unwrap();
        let rep0 = solvability_predicate(&mesh, &bg, &mats, &targets0, None).unwrap();
        assert!(!rep0.solvable);
        assert_eq!(rep0.sign, YamabeSign::Negative);

        // Yamabe-positive background is a precondition violation
        let ball = generate_unit_ball(1).unwrap();
        let bg_ball = flat_background(&ball, 0.0, 1.0);
        let mats_ball = assemble(&ball, &bg_ball).unwrap();
        let t_ball = TargetCurvatures::new(
            &ball,
            Field::zeros(ball.n_vertices()),
            BoundaryField::constant(ball.boundary_vertices().len(), -1.0),
        )
        .unwrap();
        let err = solvability_predicate(&ball, &bg_ball, &mats_ball, &t_ball, None).unwrap_err();
        assert!(matches!(err, Error::NotYamabeNegative(_)));
    }

    #[test]
    fn lichnerowicz_reduces_to_critical_problem() {
        let (mesh, bg, mats) = cube_setup(2, -1.0, 0.0);
        let nb = mesh.boundary_vertices().len();
        let targets = TargetCurvatures::new(
            &mesh,
            bg.scalar_curvature().clone(),
            bg.mean_curvature().clone(),
        )
        .unwrap();
        let lich = LichnerowiczData::new(
            &mesh,
            Field::zeros(mesh.n_vertices()),
            BoundaryField::constant(nb, 0.0),
        )
        .unwrap();
        let u = solve_lichnerowicz(&mesh, &bg, &mats, &targets, &lich, &Default::default())
            .unwrap();
        for v in u.iter() {
            assert!((v - 1.0).abs() < 1e-6, "u = {v}");
        }
    }

    #[test]
    fn lichnerowicz_constant_data_matches_scalar_root() {
        // -u/8 = -u^5/8 + c u^-7, i.e. u^12 - u^8 - 8c = 0, c = 0.01
        let (mesh, bg, mats) = cube_setup(2, -1.0, 0.0);
        let nb = mesh.boundary_vertices().len();
        let c = 0.01;
        let targets = TargetCurvatures::new(
            &mesh,
            Field::constant(mesh.n_vertices(), -1.0),
            BoundaryField::constant(nb, 0.0),
        )
        .unwrap();
        let lich = LichnerowiczData::new(
            &mesh,
            Field::constant(mesh.n_vertices(), c),
            BoundaryField::constant(nb, 0.0),
        )
        .unwrap();
        let u = solve_lichnerowicz(&mesh, &bg, &mats, &targets, &lich, &Default::default())
            .unwrap();
        let root = bisect(|x| x.powi(12) - x.powi(8) - 8.0 * c, 1.0, 2.0, 1e-14);
        for v in u.iter() {
            assert!((v - root).abs() <= 1e-7, "u = {v} vs root {root}");
        }
    }

    #[test]
    fn lichnerowicz_rejects_negative_a_w() {
        let mesh = generate_unit_cube(1).unwrap();
        let mut a_w = Field::zeros(mesh.n_vertices());
        a_w[2] = -0.5;
        let err = LichnerowiczData::new(
            &mesh,
            a_w,
            BoundaryField::constant(mesh.boundary_vertices().len(), 0.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }
}
