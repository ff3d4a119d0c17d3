//! The discrete compact manifold with boundary and its Riemannian data.
//!
//! A [`SimplicialMesh`] is a tetrahedral mesh together with an
//! outward-oriented boundary triangulation. A [`RiemannianBackground`]
//! carries everything the energy functional consumes: per-element volume
//! weights, per-face area weights, per-element inverse-metric data for
//! gradients, a nodal scalar-curvature field and a boundary nodal
//! mean-curvature field. Fields are piecewise linear (P1) with nodal
//! values; the trace is nodal restriction to boundary vertices.

use std::collections::BTreeMap;
use std::ops::{Deref, DerefMut};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, SymMat3, Vec3};
use crate::quadrature::{interp4, TET_QP, TET_QW};

/// Exponent constants derived from the dimension n.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DimensionConstants {
    pub n: usize,
}

impl DimensionConstants {
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Invariant(format!("dimension must be >= 3, got {n}")));
        }
        Ok(DimensionConstants { n })
    }

    /// q-bar = n / (n - 2); equals 3 for n = 3.
    pub fn q_bar(&self) -> f64 {
        self.n as f64 / (self.n as f64 - 2.0)
    }

    /// Critical interior exponent 2 q-bar.
    pub fn critical_q(&self) -> f64 {
        2.0 * self.q_bar()
    }

    /// Critical boundary exponent q-bar + 1.
    pub fn critical_r(&self) -> f64 {
        self.q_bar() + 1.0
    }

    /// c_n = (n - 2) / (4 (n - 1)), the interior curvature coefficient.
    pub fn c_n(&self) -> f64 {
        (self.n as f64 - 2.0) / (4.0 * (self.n as f64 - 1.0))
    }

    /// (n - 2) / 2, the boundary curvature coefficient.
    pub fn h_n(&self) -> f64 {
        (self.n as f64 - 2.0) / 2.0
    }

    /// Conformal factor exponent in g' = u^(2 q-bar - 2) g.
    pub fn metric_exponent(&self) -> f64 {
        2.0 * self.q_bar() - 2.0
    }
}

/// Nodal scalar field, one value per vertex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Field(pub Vec<f64>);

impl Field {
    pub fn zeros(n: usize) -> Self {
        Field(vec![0.0; n])
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Field(vec![c; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Nodal product with another field of the same length.
    pub fn hadamard(&self, other: &Field) -> Field {
        debug_assert_eq!(self.len(), other.len());
        Field(self.0.iter().zip(&other.0).map(|(a, b)| a * b).collect())
    }

    /// Nodal power.
    pub fn powf(&self, e: f64) -> Field {
        Field(self.0.iter().map(|v| v.powf(e)).collect())
    }
}

impl Deref for Field {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Field {
    fn from(v: Vec<f64>) -> Self {
        Field(v)
    }
}

/// Boundary nodal field: one value per boundary vertex, ordered like
/// [`SimplicialMesh::boundary_vertices`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoundaryField(pub Vec<f64>);

impl BoundaryField {
    pub fn constant(n: usize, c: f64) -> Self {
        BoundaryField(vec![c; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl Deref for BoundaryField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for BoundaryField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Tetrahedral mesh of a compact connected 3-manifold with boundary.
#[derive(Clone, Debug)]
pub struct SimplicialMesh {
    constants: DimensionConstants,
    vertices: Vec<Vec3>,
    tets: Vec<[usize; 4]>,
    boundary_faces: Vec<[usize; 3]>,
    // derived incidence data
    boundary_vertices: Vec<usize>,
    boundary_local: Vec<Option<usize>>,
    vertex_tets: Vec<Vec<usize>>,
    vertex_faces: Vec<Vec<usize>>,
    face_adjacent_tet: Vec<usize>,
}

fn sorted3(f: [usize; 3]) -> [usize; 3] {
    let mut s = f;
    s.sort_unstable();
    s
}

fn tet_faces(t: [usize; 4]) -> [[usize; 3]; 4] {
    [
        [t[1], t[2], t[3]],
        [t[0], t[2], t[3]],
        [t[0], t[1], t[3]],
        [t[0], t[1], t[2]],
    ]
}

impl SimplicialMesh {
    /// Build and validate a mesh. Violations report the first offending
    /// entity index.
    pub fn new(
        dimension: usize,
        vertices: Vec<Vec3>,
        tets: Vec<[usize; 4]>,
        boundary_faces: Vec<[usize; 3]>,
    ) -> Result<Self> {
        let constants = DimensionConstants::new(dimension)?;
        if dimension != 3 {
            return Err(Error::Invariant(format!(
                "only dimension 3 geometry is implemented, got {dimension}"
            )));
        }
        let nv = vertices.len();
        for (i, t) in tets.iter().enumerate() {
            if t.iter().any(|&v| v >= nv) {
                return Err(Error::Invariant(format!(
                    "tetrahedron {i} references a vertex out of range"
                )));
            }
        }
        for (i, f) in boundary_faces.iter().enumerate() {
            if f.iter().any(|&v| v >= nv) {
                return Err(Error::Invariant(format!(
                    "boundary face {i} references a vertex out of range"
                )));
            }
        }
        // positive oriented volumes
        for (i, t) in tets.iter().enumerate() {
            let vol = geometry::signed_volume(
                vertices[t[0]],
                vertices[t[1]],
                vertices[t[2]],
                vertices[t[3]],
            );
            if !(vol > 0.0) {
                return Err(Error::Invariant(format!(
                    "tetrahedron {i} has non-positive oriented volume {vol:e}"
                )));
            }
        }
        // classify tet faces by incidence count
        let mut face_count: BTreeMap<[usize; 3], (usize, usize)> = BTreeMap::new();
        for (ti, t) in tets.iter().enumerate() {
            for f in tet_faces(*t) {
                let e = face_count.entry(sorted3(f)).or_insert((0, ti));
                e.0 += 1;
                e.1 = ti;
            }
        }
        let mut listed: BTreeMap<[usize; 3], usize> = BTreeMap::new();
        for (fi, f) in boundary_faces.iter().enumerate() {
            let key = sorted3(*f);
            if listed.insert(key, fi).is_some() {
                return Err(Error::Invariant(format!(
                    "boundary face {fi} is listed more than once"
                )));
            }
            match face_count.get(&key) {
                None => {
                    return Err(Error::Invariant(format!(
                        "boundary face {fi} is not a face of any tetrahedron"
                    )));
                }
                Some((count, _)) if *count != 1 => {
                    return Err(Error::Invariant(format!(
                        "boundary face {fi} is shared by {count} tetrahedra"
                    )));
                }
                _ => {}
            }
        }
        for (key, (count, ti)) in &face_count {
            if *count == 1 && !listed.contains_key(key) {
                return Err(Error::Invariant(format!(
                    "tetrahedron {ti} has an exterior face missing from boundary_faces"
                )));
            }
            if *count > 2 {
                return Err(Error::Invariant(format!(
                    "non-manifold face shared by {count} tetrahedra near tetrahedron {ti}"
                )));
            }
        }
        // boundary surface is closed: each boundary edge lies in exactly 2 faces
        let mut edge_count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for f in &boundary_faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[0], f[2])] {
                let key = (a.min(b), a.max(b));
                *edge_count.entry(key).or_insert(0) += 1;
            }
        }
        for (fi, f) in boundary_faces.iter().enumerate() {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[0], f[2])] {
                let key = (a.min(b), a.max(b));
                if edge_count[&key] != 2 {
                    return Err(Error::Invariant(format!(
                        "boundary face {fi}: edge ({a}, {b}) belongs to {} boundary faces, expected 2",
                        edge_count[&key]
                    )));
                }
            }
        }
        // outward orientation against the adjacent tetrahedron
        let mut face_adjacent_tet = Vec::with_capacity(boundary_faces.len());
        for (fi, f) in boundary_faces.iter().enumerate() {
            let ti = face_count[&sorted3(*f)].1;
            face_adjacent_tet.push(ti);
            let t = tets[ti];
            let centroid_tet = centroid4(&vertices, t);
            let centroid_face = centroid3(&vertices, *f);
            let n = geometry::cross(
                geometry::sub(vertices[f[1]], vertices[f[0]]),
                geometry::sub(vertices[f[2]], vertices[f[0]]),
            );
            if geometry::dot(n, geometry::sub(centroid_face, centroid_tet)) <= 0.0 {
                return Err(Error::Invariant(format!(
                    "boundary face {fi} is not outward-oriented"
                )));
            }
        }
        // connectivity through shared tetrahedron vertices
        if !tets.is_empty() {
            let mut vertex_tets_tmp = vec![Vec::new(); nv];
            for (ti, t) in tets.iter().enumerate() {
                for &v in t {
                    vertex_tets_tmp[v].push(ti);
                }
            }
            let mut seen_tet = vec![false; tets.len()];
            let mut seen_v = vec![false; nv];
            let mut stack = vec![0usize];
            seen_tet[0] = true;
            while let Some(ti) = stack.pop() {
                for &v in &tets[ti] {
                    if !seen_v[v] {
                        seen_v[v] = true;
                        for &tj in &vertex_tets_tmp[v] {
                            if !seen_tet[tj] {
                                seen_tet[tj] = true;
                                stack.push(tj);
                            }
                        }
                    }
                }
            }
            if let Some(ti) = seen_tet.iter().position(|s| !s) {
                return Err(Error::Invariant(format!(
                    "mesh is disconnected: tetrahedron {ti} is unreachable"
                )));
            }
            if let Some(v) = seen_v.iter().position(|s| !s) {
                return Err(Error::Invariant(format!(
                    "mesh is disconnected: vertex {v} belongs to no reachable tetrahedron"
                )));
            }
        } else {
            return Err(Error::Invariant("mesh has no tetrahedra".into()));
        }

        // derived incidence
        let mut boundary_flag = vec![false; nv];
        for f in &boundary_faces {
            for &v in f {
                boundary_flag[v] = true;
            }
        }
        let boundary_vertices: Vec<usize> =
            (0..nv).filter(|&v| boundary_flag[v]).collect();
        let mut boundary_local = vec![None; nv];
        for (li, &v) in boundary_vertices.iter().enumerate() {
            boundary_local[v] = Some(li);
        }
        let mut vertex_tets = vec![Vec::new(); nv];
        for (ti, t) in tets.iter().enumerate() {
            for &v in t {
                vertex_tets[v].push(ti);
            }
        }
        let mut vertex_faces = vec![Vec::new(); nv];
        for (fi, f) in boundary_faces.iter().enumerate() {
            for &v in f {
                vertex_faces[v].push(fi);
            }
        }

        Ok(SimplicialMesh {
            constants,
            vertices,
            tets,
            boundary_faces,
            boundary_vertices,
            boundary_local,
            vertex_tets,
            vertex_faces,
            face_adjacent_tet,
        })
    }

    pub fn constants(&self) -> DimensionConstants {
        self.constants
    }

    pub fn dimension(&self) -> usize {
        self.constants.n
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn n_boundary_faces(&self) -> usize {
        self.boundary_faces.len()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn boundary_faces(&self) -> &[[usize; 3]] {
        &self.boundary_faces
    }

    /// Sorted global indices of the boundary vertices.
    pub fn boundary_vertices(&self) -> &[usize] {
        &self.boundary_vertices
    }

    /// Local boundary index of a global vertex, if it lies on the boundary.
    pub fn boundary_index(&self, v: usize) -> Option<usize> {
        self.boundary_local[v]
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_local[v].is_some()
    }

    pub fn tets_of_vertex(&self, v: usize) -> &[usize] {
        &self.vertex_tets[v]
    }

    pub fn faces_of_vertex(&self, v: usize) -> &[usize] {
        &self.vertex_faces[v]
    }

    pub fn tet_adjacent_to_face(&self, f: usize) -> usize {
        self.face_adjacent_tet[f]
    }

    pub fn tet_coords(&self, ti: usize) -> [Vec3; 4] {
        let t = self.tets[ti];
        [
            self.vertices[t[0]],
            self.vertices[t[1]],
            self.vertices[t[2]],
            self.vertices[t[3]],
        ]
    }

    pub fn euclidean_tet_volume(&self, ti: usize) -> f64 {
        let [a, b, c, d] = self.tet_coords(ti);
        geometry::signed_volume(a, b, c, d)
    }

    pub fn euclidean_face_area(&self, fi: usize) -> f64 {
        let f = self.boundary_faces[fi];
        geometry::triangle_area(self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]])
    }

    /// Nodal values of a field on the corners of tetrahedron `ti`.
    pub fn gather4(&self, field: &[f64], ti: usize) -> [f64; 4] {
        let t = self.tets[ti];
        [field[t[0]], field[t[1]], field[t[2]], field[t[3]]]
    }

    /// Nodal values of a (global) field on the corners of boundary face `fi`.
    pub fn gather3(&self, field: &[f64], fi: usize) -> [f64; 3] {
        let f = self.boundary_faces[fi];
        [field[f[0]], field[f[1]], field[f[2]]]
    }
}

fn centroid4(vertices: &[Vec3], t: [usize; 4]) -> Vec3 {
    let mut c = [0.0; 3];
    for &v in &t {
        c = geometry::add(c, vertices[v]);
    }
    geometry::scale(c, 0.25)
}

fn centroid3(vertices: &[Vec3], f: [usize; 3]) -> Vec3 {
    let mut c = [0.0; 3];
    for &v in &f {
        c = geometry::add(c, vertices[v]);
    }
    geometry::scale(c, 1.0 / 3.0)
}

/// Discrete metric data: exactly the five ingredients the energy consumes,
/// plus an optional nodal conformal factor for transformed metrics.
///
/// When `conformal_factor` is `Some(u)`, the object represents
/// g-tilde = u^(2 q-bar - 2) g where the stored weights are those of the
/// base metric g; measures pick up u^(2 q-bar) (volume) and u^(q-bar + 1)
/// (area) through the nodal-covariant quadrature conventions in the
/// assembly module.
#[derive(Clone, Debug)]
pub struct RiemannianBackground {
    volume_weights: Vec<f64>,
    area_weights: Vec<f64>,
    gradient_metrics: Vec<SymMat3>,
    scalar_curvature: Field,
    mean_curvature: BoundaryField,
    conformal_factor: Option<Field>,
}

impl RiemannianBackground {
    pub fn new(
        mesh: &SimplicialMesh,
        volume_weights: Vec<f64>,
        area_weights: Vec<f64>,
        gradient_metrics: Vec<SymMat3>,
        scalar_curvature: Field,
        mean_curvature: BoundaryField,
    ) -> Result<Self> {
        if volume_weights.len() != mesh.n_tets() {
            return Err(Error::DimensionMismatch(format!(
                "volume_weights has {} entries for {} tetrahedra",
                volume_weights.len(),
                mesh.n_tets()
            )));
        }
        if area_weights.len() != mesh.n_boundary_faces() {
            return Err(Error::DimensionMismatch(format!(
                "area_weights has {} entries for {} boundary faces",
                area_weights.len(),
                mesh.n_boundary_faces()
            )));
        }
        if gradient_metrics.len() != mesh.n_tets() {
            return Err(Error::DimensionMismatch(format!(
                "gradient_metrics has {} entries for {} tetrahedra",
                gradient_metrics.len(),
                mesh.n_tets()
            )));
        }
        if scalar_curvature.len() != mesh.n_vertices() {
            return Err(Error::DimensionMismatch(format!(
                "R has {} entries for {} vertices",
                scalar_curvature.len(),
                mesh.n_vertices()
            )));
        }
        if mean_curvature.len() != mesh.boundary_vertices().len() {
            return Err(Error::DimensionMismatch(format!(
                "H has {} entries for {} boundary vertices",
                mean_curvature.len(),
                mesh.boundary_vertices().len()
            )));
        }
        for (i, w) in volume_weights.iter().enumerate() {
            if !(*w > 0.0) {
                return Err(Error::Invariant(format!(
                    "volume weight {i} is not strictly positive ({w:e})"
                )));
            }
        }
        for (i, w) in area_weights.iter().enumerate() {
            if !(*w > 0.0) {
                return Err(Error::Invariant(format!(
                    "area weight {i} is not strictly positive ({w:e})"
                )));
            }
        }
        for (i, g) in gradient_metrics.iter().enumerate() {
            if !g.is_positive_definite() {
                return Err(Error::Invariant(format!(
                    "gradient metric {i} is not positive definite"
                )));
            }
        }
        for (i, r) in scalar_curvature.iter().enumerate() {
            if !r.is_finite() {
                return Err(Error::Invariant(format!("R[{i}] is not finite")));
            }
        }
        for (i, h) in mean_curvature.iter().enumerate() {
            if !h.is_finite() {
                return Err(Error::Invariant(format!("H[{i}] is not finite")));
            }
        }
        Ok(RiemannianBackground {
            volume_weights,
            area_weights,
            gradient_metrics,
            scalar_curvature,
            mean_curvature,
            conformal_factor: None,
        })
    }

    pub fn volume_weights(&self) -> &[f64] {
        &self.volume_weights
    }

    pub fn area_weights(&self) -> &[f64] {
        &self.area_weights
    }

    pub fn gradient_metrics(&self) -> &[SymMat3] {
        &self.gradient_metrics
    }

    pub fn scalar_curvature(&self) -> &Field {
        &self.scalar_curvature
    }

    pub fn mean_curvature(&self) -> &BoundaryField {
        &self.mean_curvature
    }

    pub fn conformal_factor(&self) -> Option<&Field> {
        self.conformal_factor.as_ref()
    }

    pub(crate) fn set_curvatures(&mut self, r: Field, h: BoundaryField) {
        self.scalar_curvature = r;
        self.mean_curvature = h;
    }

    pub(crate) fn set_conformal_factor(&mut self, u: Field) {
        self.conformal_factor = Some(u);
    }

    /// Effective volume weight of element `ti`, including the conformal
    /// factor when present (element quadrature of u^(2 q-bar)).
    pub fn effective_volume_weight(&self, mesh: &SimplicialMesh, ti: usize) -> f64 {
        match &self.conformal_factor {
            None => self.volume_weights[ti],
            Some(u) => {
                let q2 = mesh.constants().critical_q();
                let uv = mesh.gather4(u, ti);
                let mut s = 0.0;
                for p in TET_QP {
                    s += TET_QW * interp4(uv, p).powf(q2);
                }
                self.volume_weights[ti] * s
            }
        }
    }

    /// Effective area weight of boundary face `fi` (quadrature of
    /// u^(q-bar + 1) when a conformal factor is present).
    pub fn effective_area_weight(&self, mesh: &SimplicialMesh, fi: usize) -> f64 {
        match &self.conformal_factor {
            None => self.area_weights[fi],
            Some(u) => {
                let re = mesh.constants().critical_r();
                let uv = mesh.gather3(u, fi);
                let mut s = 0.0;
                for p in crate::quadrature::TRI_QP {
                    s += crate::quadrature::TRI_QW * crate::quadrature::interp3(uv, p).powf(re);
                }
                self.area_weights[fi] * s
            }
        }
    }

    pub fn total_volume(&self, mesh: &SimplicialMesh) -> f64 {
        (0..mesh.n_tets())
            .map(|t| self.effective_volume_weight(mesh, t))
            .sum()
    }

    pub fn total_boundary_area(&self, mesh: &SimplicialMesh) -> f64 {
        (0..mesh.n_boundary_faces())
            .map(|f| self.effective_area_weight(mesh, f))
            .sum()
    }
}

/// Euclidean background with constant curvature overrides: identity
/// gradient metrics, Euclidean volume and area weights, R = `r0`,
/// H = `h0`.
pub fn flat_background(mesh: &SimplicialMesh, r0: f64, h0: f64) -> RiemannianBackground {
    let volume_weights: Vec<f64> = (0..mesh.n_tets())
        .map(|t| mesh.euclidean_tet_volume(t))
        .collect();
    let area_weights: Vec<f64> = (0..mesh.n_boundary_faces())
        .map(|f| mesh.euclidean_face_area(f))
        .collect();
    let gradient_metrics = vec![SymMat3::identity(); mesh.n_tets()];
    let r = Field::constant(mesh.n_vertices(), r0);
    let h = BoundaryField::constant(mesh.boundary_vertices().len(), h0);
    RiemannianBackground::new(mesh, volume_weights, area_weights, gradient_metrics, r, h)
        .expect("flat background of a valid mesh is always valid")
}

// ---------------------------------------------------------------------------
// generators

/// Structured unit cube [0,1]^3 with `m` subdivisions per axis; each cell is
/// split into 6 tetrahedra sharing the cell diagonal.
pub fn generate_unit_cube(m: usize) -> Result<SimplicialMesh> {
    if m == 0 {
        return Err(Error::Invariant("cube resolution must be >= 1".into()));
    }
    let np = m + 1;
    let idx = |i: usize, j: usize, k: usize| -> usize { (i * np + j) * np + k };
    let mut vertices = Vec::with_capacity(np * np * np);
    for i in 0..np {
        for j in 0..np {
            for k in 0..np {
                vertices.push([i as f64 / m as f64, j as f64 / m as f64, k as f64 / m as f64]);
            }
        }
    }
    // Freudenthal split: six tets per cell, one per permutation of the axes
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut tets = Vec::with_capacity(6 * m * m * m);
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                for perm in PERMS {
                    let mut corner = [i, j, k];
                    let mut path = [idx(i, j, k), 0, 0, 0];
                    for (s, &axis) in perm.iter().enumerate() {
                        corner[axis] += 1;
                        path[s + 1] = idx(corner[0], corner[1], corner[2]);
                    }
                    tets.push(orient_tet(&vertices, path));
                }
            }
        }
    }
    let boundary_faces = derive_boundary_faces(&vertices, &tets);
    SimplicialMesh::new(3, vertices, tets, boundary_faces)
}

/// Unit ball: an octahedral sphere triangulation subdivided `level + 1`
/// times, filled with 2^level radial shells of prisms around a central
/// cone. Level 2 keeps the total volume within 5% of 4 pi / 3.
pub fn generate_unit_ball(level: usize) -> Result<SimplicialMesh> {
    // surface triangulation of the unit sphere
    let mut surf_verts: Vec<Vec3> = vec![
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ];
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    for _ in 0..=level {
        let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mids = [0usize; 3];
            for (e, (a, b)) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])].into_iter().enumerate() {
                let key = (a.min(b), a.max(b));
                mids[e] = *midpoint.entry(key).or_insert_with(|| {
                    let p = geometry::normalize(geometry::scale(
                        geometry::add(surf_verts[a], surf_verts[b]),
                        0.5,
                    ));
                    surf_verts.push(p);
                    surf_verts.len() - 1
                });
            }
            next.push([f[0], mids[0], mids[2]]);
            next.push([mids[0], f[1], mids[1]]);
            next.push([mids[2], mids[1], f[2]]);
            next.push([mids[0], mids[1], mids[2]]);
        }
        faces = next;
    }
    let shells = 1usize << level;
    let ns = surf_verts.len();
    // vertex 0 is the center; shell j (1..=shells) holds the surface scaled by j/shells
    let mut vertices: Vec<Vec3> = Vec::with_capacity(1 + ns * shells);
    vertices.push([0.0, 0.0, 0.0]);
    for j in 1..=shells {
        let r = j as f64 / shells as f64;
        for p in &surf_verts {
            vertices.push(geometry::scale(*p, r));
        }
    }
    let vid = |s: usize, j: usize| -> usize { 1 + (j - 1) * ns + s };
    let mut tets = Vec::new();
    for f in &faces {
        // innermost cone from the center to shell 1
        tets.push(orient_tet(
            &vertices,
            [0, vid(f[0], 1), vid(f[1], 1), vid(f[2], 1)],
        ));
    }
    for j in 1..shells {
        for f in &faces {
            // sort by surface index so that adjacent prisms pick the same
            // quad-face diagonals
            let mut s = *f;
            s.sort_unstable();
            let (a, b, c) = (s[0], s[1], s[2]);
            let (pa, pb, pc) = (vid(a, j), vid(b, j), vid(c, j));
            let (qa, qb, qc) = (vid(a, j + 1), vid(b, j + 1), vid(c, j + 1));
            tets.push(orient_tet(&vertices, [pa, pb, pc, qc]));
            tets.push(orient_tet(&vertices, [pa, pb, qc, qb]));
            tets.push(orient_tet(&vertices, [pa, qb, qc, qa]));
        }
    }
    let boundary_faces = derive_boundary_faces(&vertices, &tets);
    SimplicialMesh::new(3, vertices, tets, boundary_faces)
}

fn orient_tet(vertices: &[Vec3], t: [usize; 4]) -> [usize; 4] {
    let vol = geometry::signed_volume(vertices[t[0]], vertices[t[1]], vertices[t[2]], vertices[t[3]]);
    if vol < 0.0 {
        [t[0], t[1], t[3], t[2]]
    } else {
        t
    }
}

/// Boundary faces of a tetrahedral soup: the faces incident to exactly one
/// tetrahedron, each oriented outward.
fn derive_boundary_faces(vertices: &[Vec3], tets: &[[usize; 4]]) -> Vec<[usize; 3]> {
    let mut face_count: BTreeMap<[usize; 3], (usize, usize)> = BTreeMap::new();
    for (ti, t) in tets.iter().enumerate() {
        for f in tet_faces(*t) {
            let e = face_count.entry(sorted3(f)).or_insert((0, ti));
            e.0 += 1;
            e.1 = ti;
        }
    }
    let mut out = Vec::new();
    for (key, (count, ti)) in face_count {
        if count != 1 {
            continue;
        }
        let t = tets[ti];
        let inner = *t.iter().find(|v| !key.contains(v)).expect("face vertex");
        let [a, b, c] = key;
        let n = geometry::cross(
            geometry::sub(vertices[b], vertices[a]),
            geometry::sub(vertices[c], vertices[a]),
        );
        if geometry::dot(n, geometry::sub(vertices[inner], vertices[a])) > 0.0 {
            out.push([a, c, b]);
        } else {
            out.push([a, b, c]);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// file I/O

#[derive(Serialize, Deserialize)]
struct MeshFile {
    dimension: usize,
    vertices: Vec<[f64; 3]>,
    tets: Vec<[usize; 4]>,
    boundary_faces: Vec<[usize; 3]>,
    volume_weights: Vec<f64>,
    area_weights: Vec<f64>,
    gradient_metrics: Vec<[f64; 6]>,
    #[serde(rename = "R")]
    r: Vec<f64>,
    #[serde(rename = "H_boundary")]
    h_boundary: BTreeMap<usize, f64>,
}

/// Load a mesh plus background from the JSON format described in the
/// README; all invariants are validated.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<(SimplicialMesh, RiemannianBackground)> {
    let text = std::fs::read_to_string(path)?;
    let file: MeshFile = serde_json::from_str(&text)?;
    mesh_from_file(file)
}

pub fn load_mesh_from_str(text: &str) -> Result<(SimplicialMesh, RiemannianBackground)> {
    let file: MeshFile = serde_json::from_str(text)?;
    mesh_from_file(file)
}

fn mesh_from_file(file: MeshFile) -> Result<(SimplicialMesh, RiemannianBackground)> {
    let mesh = SimplicialMesh::new(file.dimension, file.vertices, file.tets, file.boundary_faces)?;
    let mut h = BoundaryField::constant(mesh.boundary_vertices().len(), 0.0);
    let mut assigned = vec![false; mesh.boundary_vertices().len()];
    for (&v, &val) in &file.h_boundary {
        match mesh.boundary_index(v) {
            Some(li) => {
                h.0[li] = val;
                assigned[li] = true;
            }
            None => {
                return Err(Error::Invariant(format!(
                    "H_boundary defined at vertex {v}, which is not a boundary vertex"
                )));
            }
        }
    }
    if let Some(missing) = assigned.iter().position(|a| !a) {
        return Err(Error::Invariant(format!(
            "H_boundary missing a value for boundary vertex {}",
            mesh.boundary_vertices()[missing]
        )));
    }
    let background = RiemannianBackground::new(
        &mesh,
        file.volume_weights,
        file.area_weights,
        file.gradient_metrics.into_iter().map(SymMat3).collect(),
        Field(file.r),
        h,
    )?;
    Ok((mesh, background))
}

/// Serialize a mesh plus background. A conformal factor, when present, is
/// baked into per-element weights and the stored curvature fields, so the
/// file always conforms to the plain schema; the exact in-memory transform
/// lives only in `conformal_transform`'s return value.
pub fn save_mesh(
    path: impl AsRef<Path>,
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
) -> Result<()> {
    let text = mesh_to_string(mesh, background)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn mesh_to_string(mesh: &SimplicialMesh, background: &RiemannianBackground) -> Result<String> {
    let volume_weights: Vec<f64> = (0..mesh.n_tets())
        .map(|t| background.effective_volume_weight(mesh, t))
        .collect();
    let area_weights: Vec<f64> = (0..mesh.n_boundary_faces())
        .map(|f| background.effective_area_weight(mesh, f))
        .collect();
    let gradient_metrics: Vec<[f64; 6]> = match background.conformal_factor() {
        None => background.gradient_metrics().iter().map(|g| g.0).collect(),
        Some(u) => {
            // inverse metric of u^(4/(n-2)) g scales by the element mean of
            // u^(-4/(n-2))
            let e = -4.0 / (mesh.constants().n as f64 - 2.0);
            (0..mesh.n_tets())
                .map(|t| {
                    let uv = mesh.gather4(u, t);
                    let mean = (uv[0] + uv[1] + uv[2] + uv[3]) / 4.0;
                    background.gradient_metrics()[t].scaled(mean.powf(e)).0
                })
                .collect()
        }
    };
    let mut h_boundary = BTreeMap::new();
    for (li, &v) in mesh.boundary_vertices().iter().enumerate() {
        h_boundary.insert(v, background.mean_curvature()[li]);
    }
    let file = MeshFile {
        dimension: mesh.dimension(),
        vertices: mesh.vertices().to_vec(),
        tets: mesh.tets().to_vec(),
        boundary_faces: mesh.boundary_faces().to_vec(),
        volume_weights,
        area_weights,
        gradient_metrics,
        r: background.scalar_curvature().0.clone(),
        h_boundary,
    };
    Ok(serde_json::to_string(&file)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cube_level_one() {
        let mesh = generate_unit_cube(1).unwrap();
        assert_eq!(mesh.n_vertices(), 8);
        assert_eq!(mesh.n_tets(), 6);
        assert_eq!(mesh.n_boundary_faces(), 12);
        let bg = flat_background(&mesh, 0.0, 0.0);
        let vol: f64 = bg.volume_weights().iter().sum();
        assert!((vol - 1.0).abs() < 1e-14);
        let area: f64 = bg.area_weights().iter().sum();
        assert!((area - 6.0).abs() < 1e-13);
        assert!(bg.gradient_metrics().iter().all(|g| *g == SymMat3::identity()));
        assert!(bg.scalar_curvature().iter().all(|&r| r == 0.0));
        assert!(bg.mean_curvature().iter().all(|&h| h == 0.0));
    }

    #[test]
    fn cube_volumes_all_positive_and_sum_to_one() {
        for m in [2, 3] {
            let mesh = generate_unit_cube(m).unwrap();
            let vol: f64 = (0..mesh.n_tets()).map(|t| mesh.euclidean_tet_volume(t)).sum();
            assert!((vol - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ball_volume_approaches_sphere_volume() {
        let exact = 4.0 * std::f64::consts::PI / 3.0;
        let mesh = generate_unit_ball(2).unwrap();
        let bg = flat_background(&mesh, 0.0, 0.0);
        let vol = bg.total_volume(&mesh);
        assert!(
            (vol - exact).abs() / exact < 0.05,
            "level-2 ball volume {vol} deviates more than 5% from {exact}"
        );
        let coarse = flat_background(&generate_unit_ball(1).unwrap(), 0.0, 0.0)
            .total_volume(&generate_unit_ball(1).unwrap());
        assert!((vol - exact).abs() < (coarse - exact).abs());
    }

    #[test]
    fn boundary_faces_point_outward() {
        let mesh = generate_unit_ball(1).unwrap();
        for fi in 0..mesh.n_boundary_faces() {
            let f = mesh.boundary_faces()[fi];
            let ti = mesh.tet_adjacent_to_face(fi);
            let tc = centroid4(mesh.vertices(), mesh.tets()[ti]);
            let fc = centroid3(mesh.vertices(), f);
            let n = geometry::cross(
                geometry::sub(mesh.vertices()[f[1]], mesh.vertices()[f[0]]),
                geometry::sub(mesh.vertices()[f[2]], mesh.vertices()[f[0]]),
            );
            assert!(geometry::dot(n, geometry::sub(fc, tc)) > 0.0, "face {fi}");
        }
    }

    #[test]
    fn negative_orientation_is_reported_with_element_index() {
        let mesh = generate_unit_cube(1).unwrap();
        let mut tets = mesh.tets().to_vec();
        tets[3] = [tets[3][0], tets[3][1], tets[3][3], tets[3][2]];
        let err = SimplicialMesh::new(
            3,
            mesh.vertices().to_vec(),
            tets,
            mesh.boundary_faces().to_vec(),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("tetrahedron 3"), "{msg}");
        assert!(msg.contains("volume"), "{msg}");
    }

    #[test]
    fn missing_boundary_face_is_rejected() {
        let mesh = generate_unit_cube(1).unwrap();
        let mut faces = mesh.boundary_faces().to_vec();
        faces.pop();
        let err =
            SimplicialMesh::new(3, mesh.vertices().to_vec(), mesh.tets().to_vec(), faces)
                .unwrap_err();
        assert!(err.to_string().contains("missing from boundary_faces"));
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let mesh = generate_unit_ball(1).unwrap();
        let bg = flat_background(&mesh, -1.5, 0.25);
        let text = mesh_to_string(&mesh, &bg).unwrap();
        let (mesh2, bg2) = load_mesh_from_str(&text).unwrap();
        let text2 = mesh_to_string(&mesh2, &bg2).unwrap();
        assert_eq!(text, text2);
        assert_eq!(mesh.vertices(), mesh2.vertices());
        assert_eq!(bg.volume_weights(), bg2.volume_weights());
        assert_eq!(bg.scalar_curvature(), bg2.scalar_curvature());
        assert_eq!(bg.mean_curvature(), bg2.mean_curvature());
    }

    #[test]
    fn disconnected_mesh_is_rejected() {
        let base = generate_unit_cube(1).unwrap();
        let nv = base.n_vertices();
        let mut vertices = base.vertices().to_vec();
        vertices.extend(base.vertices().iter().map(|p| [p[0] + 5.0, p[1], p[2]]));
        let mut tets = base.tets().to_vec();
        tets.extend(base.tets().iter().map(|t| t.map(|v| v + nv)));
        let mut faces = base.boundary_faces().to_vec();
        faces.extend(base.boundary_faces().iter().map(|f| f.map(|v| v + nv)));
        let err = SimplicialMesh::new(3, vertices, tets, faces).unwrap_err();
        assert!(err.to_string().contains("disconnected"), "{err}");
    }

    #[test]
    fn h_boundary_on_interior_vertex_is_rejected() {
        let mesh = generate_unit_cube(2).unwrap();
        let bg = flat_background(&mesh, 0.0, 0.0);
        let text = mesh_to_string(&mesh, &bg).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        // vertex 13 is the center of the 3x3x3 grid, not on the boundary
        v["H_boundary"]["13"] = serde_json::json!(1.0);
        let err = load_mesh_from_str(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("not a boundary vertex"), "{err}");
    }

    #[test]
    fn constants_for_n3() {
        let c = DimensionConstants::new(3).unwrap();
        assert_eq!(c.q_bar(), 3.0);
        assert_eq!(c.critical_q(), 6.0);
        assert_eq!(c.critical_r(), 4.0);
        assert_eq!(c.c_n(), 0.125);
        assert_eq!(c.h_n(), 0.5);
        assert_eq!(c.metric_exponent(), 4.0);
    }
}
