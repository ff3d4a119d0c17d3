//! Assembly of the sparse forms behind the curvature energy
//!
//!   E(phi) = int_M |grad phi|^2 dV + c_n int_M R phi^2 dV
//!          + (n-2)/2 int_dM H (tr phi)^2 ds,
//!
//! the L^q / L^r constraint quadratures, and the lumped-mass recovery
//! operators (interior Laplacian and boundary normal derivative).
//!
//! Conventions for conformally transformed backgrounds (nodal covariance):
//! a background carrying a factor u represents g-tilde = u^(2qb-2) g, and
//! every quantity of g-tilde is defined through nodal multiplication by a
//! power of u followed by base-metric quadrature. In particular
//! lq(phi, q) on g-tilde equals the base quadrature of |u^(2qb/q) . phi|^q,
//! which at the critical exponent reduces to the exact identity
//! ||phi||_{g-tilde} = ||u phi||_g of the continuum theory.

use crate::error::{Error, Result};
use crate::mesh::{BoundaryField, Field, RiemannianBackground, SimplicialMesh};
use crate::quadrature::{
    interp3, interp4, tet_mass_entry, tet_triple_entry, tri_mass_entry, tri_triple_entry, TET_QP,
    TET_QW, TRI_QP, TRI_QW,
};
use crate::region::RegionPair;
use crate::sparse::CsrMatrix;
use crate::util;

/// The assembled quadratic forms. `energy` is
/// A = K + c_n M_R + ((n-2)/2) S_H, so phi' A phi = E(phi) exactly.
#[derive(Clone, Debug)]
pub struct EnergyMatrices {
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
    pub boundary_mass: CsrMatrix,
    pub curvature_mass: CsrMatrix,
    pub boundary_curvature_mass: CsrMatrix,
    pub energy: CsrMatrix,
    pub lumped_mass: Vec<f64>,
    pub lumped_boundary_mass: Vec<f64>,
}

impl EnergyMatrices {
    pub fn n_vertices(&self) -> usize {
        self.energy.nrows()
    }

    /// M + S, the denominator form of the Rayleigh quotient.
    pub fn metric_mass(&self) -> CsrMatrix {
        self.mass.add_scaled(&self.boundary_mass, 1.0)
    }
}

/// Deterministic assembly: a fixed element ordering feeds a fixed triplet
/// order, so identical inputs give bit-identical matrices. Element loops
/// run on the configured number of threads with chunk-ordered merges.
pub fn assemble(mesh: &SimplicialMesh, background: &RiemannianBackground) -> Result<EnergyMatrices> {
    if background.conformal_factor().is_some() {
        return Err(Error::Precondition(
            "assemble expects a base background; transformed matrices come from conformal_transform"
                .into(),
        ));
    }
    let nv = mesh.n_vertices();
    let cn = mesh.constants().c_n();
    let hn = mesh.constants().h_n();
    let r_field = background.scalar_curvature();
    let h_global = boundary_to_global(mesh, background.mean_curvature());

    // per-element triplets for K, M and M_R in one sweep
    let volume_triplets = util::run_chunked(mesh.n_tets(), |range| {
        let mut out: Vec<(usize, usize, f64, f64, f64)> = Vec::new();
        for ti in range {
            let t = mesh.tets()[ti];
            let (grads, _) = crate::geometry::p1_gradients(mesh.tet_coords(ti));
            let w = background.volume_weights()[ti];
            let gm = background.gradient_metrics()[ti];
            let rv = mesh.gather4(r_field, ti);
            for i in 0..4 {
                for j in 0..4 {
                    let k = w * gm.quadratic_form(grads[i], grads[j]);
                    let m = w * tet_mass_entry(i, j);
                    let mut mr = 0.0;
                    for (kk, rk) in rv.iter().enumerate() {
                        mr += rk * tet_triple_entry(i, j, kk);
                    }
                    out.push((t[i], t[j], k, m, w * mr));
                }
            }
        }
        out
    });
    let boundary_triplets = util::run_chunked(mesh.n_boundary_faces(), |range| {
        let mut out: Vec<(usize, usize, f64, f64)> = Vec::new();
        for fi in range {
            let f = mesh.boundary_faces()[fi];
            let a = background.area_weights()[fi];
            let hv = mesh.gather3(&h_global, fi);
            for i in 0..3 {
                for j in 0..3 {
                    let s = a * tri_mass_entry(i, j);
                    let mut sh = 0.0;
                    for (kk, hk) in hv.iter().enumerate() {
                        sh += hk * tri_triple_entry(i, j, kk);
                    }
                    out.push((f[i], f[j], s, a * sh));
                }
            }
        }
        out
    });

    let mut tk = Vec::with_capacity(volume_triplets.len());
    let mut tm = Vec::with_capacity(volume_triplets.len());
    let mut tmr = Vec::with_capacity(volume_triplets.len());
    for (i, j, k, m, mr) in volume_triplets {
        tk.push((i, j, k));
        tm.push((i, j, m));
        tmr.push((i, j, mr));
    }
    let mut ts = Vec::with_capacity(boundary_triplets.len());
    let mut tsh = Vec::with_capacity(boundary_triplets.len());
    for (i, j, s, sh) in boundary_triplets {
        ts.push((i, j, s));
        tsh.push((i, j, sh));
    }
    let stiffness = CsrMatrix::from_triplets(nv, &mut tk);
    let mass = CsrMatrix::from_triplets(nv, &mut tm);
    let curvature_mass = CsrMatrix::from_triplets(nv, &mut tmr);
    let boundary_mass = CsrMatrix::from_triplets(nv, &mut ts);
    let boundary_curvature_mass = CsrMatrix::from_triplets(nv, &mut tsh);
    let energy = stiffness
        .add_scaled(&curvature_mass, cn)
        .add_scaled(&boundary_curvature_mass, hn);
    let lumped_mass = mass.row_sums();
    let lumped_boundary_mass = boundary_mass.row_sums();
    Ok(EnergyMatrices {
        stiffness,
        mass,
        boundary_mass,
        curvature_mass,
        boundary_curvature_mass,
        energy,
        lumped_mass,
        lumped_boundary_mass,
    })
}

/// Spread a boundary field to a full-length vector (zero off the boundary).
pub fn boundary_to_global(mesh: &SimplicialMesh, field: &BoundaryField) -> Vec<f64> {
    let mut out = vec![0.0; mesh.n_vertices()];
    for (li, &v) in mesh.boundary_vertices().iter().enumerate() {
        out[v] = field[li];
    }
    out
}

/// E(phi) as the exact quadratic form of the assembled energy matrix.
pub fn energy(matrices: &EnergyMatrices, phi: &Field) -> Result<f64> {
    if phi.len() != matrices.n_vertices() {
        return Err(Error::DimensionMismatch(format!(
            "field has {} values for {} vertices",
            phi.len(),
            matrices.n_vertices()
        )));
    }
    Ok(matrices.energy.quadratic_form(phi))
}

/// Mass matrix weighted by a nodal field w: entries int w psi_i psi_j dV,
/// exact for the P1 interpolant of w.
pub fn assemble_weighted_mass(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    w: &[f64],
) -> CsrMatrix {
    let mut triplets = Vec::new();
    for ti in 0..mesh.n_tets() {
        let t = mesh.tets()[ti];
        let vw = background.volume_weights()[ti];
        let wv = mesh.gather4(w, ti);
        for i in 0..4 {
            for j in 0..4 {
                let mut m = 0.0;
                for (kk, wk) in wv.iter().enumerate() {
                    m += wk * tet_triple_entry(i, j, kk);
                }
                triplets.push((t[i], t[j], vw * m));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.n_vertices(), &mut triplets)
}

/// Boundary mass weighted by a boundary nodal field.
pub fn assemble_weighted_boundary_mass(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    w: &BoundaryField,
) -> CsrMatrix {
    let wg = boundary_to_global(mesh, w);
    let mut triplets = Vec::new();
    for fi in 0..mesh.n_boundary_faces() {
        let f = mesh.boundary_faces()[fi];
        let aw = background.area_weights()[fi];
        let wv = mesh.gather3(&wg, fi);
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for (kk, wk) in wv.iter().enumerate() {
                    s += wk * tri_triple_entry(i, j, kk);
                }
                triplets.push((f[i], f[j], aw * s));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.n_vertices(), &mut triplets)
}

/// Nodal premultiplier realizing the measure of a transformed background in
/// an L^q volume quadrature: u^(2 q-bar / q), or None for base backgrounds.
fn volume_factor_premultiplier(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    q: f64,
) -> Option<Field> {
    background
        .conformal_factor()
        .map(|u| u.powf(mesh.constants().critical_q() / q))
}

fn boundary_factor_premultiplier(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    r: f64,
) -> Option<Field> {
    background
        .conformal_factor()
        .map(|u| u.powf(mesh.constants().critical_r() / r))
}

/// int_Omega |phi|^q dV by the order-2 element rule on the P1 interpolant.
pub fn lq_norm_on_region(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    region: &RegionPair,
    phi: &Field,
    q: f64,
) -> f64 {
    let pre = volume_factor_premultiplier(mesh, background, q);
    let eff: &[f64] = match &pre {
        Some(m) => {
            return lq_volume_quadrature(mesh, background, region, &m.hadamard(phi), q);
        }
        None => phi,
    };
    lq_volume_quadrature(mesh, background, region, eff, q)
}

fn lq_volume_quadrature(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    region: &RegionPair,
    xi: &[f64],
    q: f64,
) -> f64 {
    let mut total = 0.0;
    for &ti in region.omega() {
        let w = background.volume_weights()[ti];
        let xv = mesh.gather4(xi, ti);
        let mut s = 0.0;
        for p in TET_QP {
            s += TET_QW * interp4(xv, p).abs().powf(q);
        }
        total += w * s;
    }
    total
}

/// int_Sigma |tr phi|^r ds, triangle quadrature analogue.
pub fn lr_norm_on_boundary(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    region: &RegionPair,
    phi: &Field,
    r: f64,
) -> f64 {
    let pre = boundary_factor_premultiplier(mesh, background, r);
    let eff: Field;
    let xi: &[f64] = match &pre {
        Some(m) => {
            eff = m.hadamard(phi);
            &eff
        }
        None => phi,
    };
    let mut total = 0.0;
    for &fi in region.sigma() {
        let a = background.area_weights()[fi];
        let xv = mesh.gather3(xi, fi);
        let mut s = 0.0;
        for p in TRI_QP {
            s += TRI_QW * interp3(xv, p).abs().powf(r);
        }
        total += a * s;
    }
    total
}

/// Gradient of `lq_norm_on_region` with respect to the nodal values of phi.
pub fn lq_gradient_on_region(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    region: &RegionPair,
    phi: &Field,
    q: f64,
) -> Vec<f64> {
    let pre = volume_factor_premultiplier(mesh, background, q);
    let xi = match &pre {
        Some(m) => m.hadamard(phi),
        None => phi.clone(),
    };
    let mut grad = vec![0.0; mesh.n_vertices()];
    for &ti in region.omega() {
        let t = mesh.tets()[ti];
        let w = background.volume_weights()[ti];
        let xv = mesh.gather4(&xi, ti);
        for p in TET_QP {
            let v = interp4(xv, p);
            let d = q * v.abs().powf(q - 2.0) * v;
            for (loc, &gi) in t.iter().enumerate() {
                grad[gi] += w * TET_QW * d * p[loc];
            }
        }
    }
    if let Some(m) = pre {
        for (gi, mi) in grad.iter_mut().zip(m.iter()) {
            *gi *= mi;
        }
    }
    grad
}

/// Gradient of `lr_norm_on_boundary` with respect to the nodal values.
pub fn lr_gradient_on_boundary(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    region: &RegionPair,
    phi: &Field,
    r: f64,
) -> Vec<f64> {
    let pre = boundary_factor_premultiplier(mesh, background, r);
    let xi = match &pre {
        Some(m) => m.hadamard(phi),
        None => phi.clone(),
    };
    let mut grad = vec![0.0; mesh.n_vertices()];
    for &fi in region.sigma() {
        let f = mesh.boundary_faces()[fi];
        let a = background.area_weights()[fi];
        let xv = mesh.gather3(&xi, fi);
        for p in TRI_QP {
            let v = interp3(xv, p);
            let d = r * v.abs().powf(r - 2.0) * v;
            for (loc, &gi) in f.iter().enumerate() {
                grad[gi] += a * TRI_QW * d * p[loc];
            }
        }
    }
    if let Some(m) = pre {
        for (gi, mi) in grad.iter_mut().zip(m.iter()) {
            *gi *= mi;
        }
    }
    grad
}

/// Load vector sum_e (w_e/4) sum_p W(e, p) psi_i(p) over the given elements,
/// with the pointwise weight supplied by the caller.
pub fn volume_point_load(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    elements: &[usize],
    weight: impl Fn(usize, usize) -> f64,
) -> Vec<f64> {
    let mut out = vec![0.0; mesh.n_vertices()];
    for &ti in elements {
        let t = mesh.tets()[ti];
        let w = background.volume_weights()[ti];
        for (pi, p) in TET_QP.iter().enumerate() {
            let d = w * TET_QW * weight(ti, pi);
            for (loc, &gi) in t.iter().enumerate() {
                out[gi] += d * p[loc];
            }
        }
    }
    out
}

pub fn boundary_point_load(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    faces: &[usize],
    weight: impl Fn(usize, usize) -> f64,
) -> Vec<f64> {
    let mut out = vec![0.0; mesh.n_vertices()];
    for &fi in faces {
        let f = mesh.boundary_faces()[fi];
        let a = background.area_weights()[fi];
        for (pi, p) in TRI_QP.iter().enumerate() {
            let d = a * TRI_QW * weight(fi, pi);
            for (loc, &gi) in f.iter().enumerate() {
                out[gi] += d * p[loc];
            }
        }
    }
    out
}

/// Matrix sum_e (w_e/4) sum_p W(e, p) psi_i(p) psi_j(p); symmetric by
/// construction. Used for the nonlinear-term Jacobians.
pub fn volume_point_mass(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    elements: &[usize],
    weight: impl Fn(usize, usize) -> f64,
) -> CsrMatrix {
    let mut triplets = Vec::new();
    for &ti in elements {
        let t = mesh.tets()[ti];
        let w = background.volume_weights()[ti];
        for (pi, p) in TET_QP.iter().enumerate() {
            let d = w * TET_QW * weight(ti, pi);
            for i in 0..4 {
                for j in 0..4 {
                    triplets.push((t[i], t[j], d * p[i] * p[j]));
                }
            }
        }
    }
    CsrMatrix::from_triplets(mesh.n_vertices(), &mut triplets)
}

pub fn boundary_point_mass(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    faces: &[usize],
    weight: impl Fn(usize, usize) -> f64,
) -> CsrMatrix {
    let mut triplets = Vec::new();
    for &fi in faces {
        let f = mesh.boundary_faces()[fi];
        let a = background.area_weights()[fi];
        for (pi, p) in TRI_QP.iter().enumerate() {
            let d = a * TRI_QW * weight(fi, pi);
            for i in 0..3 {
                for j in 0..3 {
                    triplets.push((f[i], f[j], d * p[i] * p[j]));
                }
            }
        }
    }
    CsrMatrix::from_triplets(mesh.n_vertices(), &mut triplets)
}

/// Weak Laplacian recovery: on interior vertices solve
/// (lumped M) y = -K u; boundary vertices get the average of their interior
/// P1 neighbors (zero if none), which only feeds the flux recovery and the
/// curvature diagnostics.
pub fn discrete_laplacian(
    mesh: &SimplicialMesh,
    matrices: &EnergyMatrices,
    u: &Field,
) -> Field {
    let ku = matrices.stiffness.mul_vec(u);
    let nv = mesh.n_vertices();
    let mut lap = vec![0.0; nv];
    for v in 0..nv {
        if !mesh.is_boundary_vertex(v) {
            lap[v] = -ku[v] / matrices.lumped_mass[v];
        }
    }
    for v in 0..nv {
        if mesh.is_boundary_vertex(v) {
            let mut sum = 0.0;
            let mut count = 0usize;
            let mut seen = std::collections::BTreeSet::new();
            for &ti in mesh.tets_of_vertex(v) {
                for &w in &mesh.tets()[ti] {
                    if w != v && !mesh.is_boundary_vertex(w) && seen.insert(w) {
                        sum += lap[w];
                        count += 1;
                    }
                }
            }
            lap[v] = if count > 0 { sum / count as f64 } else { 0.0 };
        }
    }
    Field(lap)
}

/// Variational flux recovery of the outward normal derivative on boundary
/// vertices: (lumped S) y = (K u + M lap_h u) restricted to the boundary,
/// the discrete form of int_dM (d_nu u) psi = int grad u . grad psi
/// + int (lap u) psi.
pub fn discrete_normal_derivative(
    mesh: &SimplicialMesh,
    matrices: &EnergyMatrices,
    u: &Field,
) -> BoundaryField {
    let lap = discrete_laplacian(mesh, matrices, u);
    let ku = matrices.stiffness.mul_vec(u);
    let mlap = matrices.mass.mul_vec(&lap);
    let mut out = vec![0.0; mesh.boundary_vertices().len()];
    for (li, &v) in mesh.boundary_vertices().iter().enumerate() {
        out[li] = (ku[v] + mlap[v]) / matrices.lumped_boundary_mass[v];
    }
    BoundaryField(out)
}
