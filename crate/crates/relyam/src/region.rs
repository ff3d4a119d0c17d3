//! Region pairs (Omega, Sigma), zero sets of target curvatures, and the
//! admissible degrees of freedom of the relative function space.
//!
//! Omega is a set of tetrahedra, Sigma a set of boundary faces: elements are
//! the measurable atoms of the discretization, so integrals over a region
//! are exact element sums.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{BoundaryField, Field, SimplicialMesh};

/// A pair (Omega, Sigma): interior element indices and boundary face
/// indices, stored sorted and deduplicated.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionPair {
    omega: Vec<usize>,
    sigma: Vec<usize>,
}

impl RegionPair {
    pub fn new(mesh: &SimplicialMesh, mut omega: Vec<usize>, mut sigma: Vec<usize>) -> Result<Self> {
        omega.sort_unstable();
        omega.dedup();
        sigma.sort_unstable();
        sigma.dedup();
        if let Some(&e) = omega.iter().find(|&&e| e >= mesh.n_tets()) {
            return Err(Error::Invariant(format!(
                "region element {e} out of range ({} tetrahedra)",
                mesh.n_tets()
            )));
        }
        if let Some(&f) = sigma.iter().find(|&&f| f >= mesh.n_boundary_faces()) {
            return Err(Error::Invariant(format!(
                "region face {f} out of range ({} boundary faces)",
                mesh.n_boundary_faces()
            )));
        }
        Ok(RegionPair { omega, sigma })
    }

    /// (all elements, all boundary faces).
    pub fn full(mesh: &SimplicialMesh) -> Self {
        RegionPair {
            omega: (0..mesh.n_tets()).collect(),
            sigma: (0..mesh.n_boundary_faces()).collect(),
        }
    }

    pub fn empty() -> Self {
        RegionPair {
            omega: Vec::new(),
            sigma: Vec::new(),
        }
    }

    /// All elements, empty boundary part: the discrete Dirichlet space.
    pub fn interior(mesh: &SimplicialMesh) -> Self {
        RegionPair {
            omega: (0..mesh.n_tets()).collect(),
            sigma: Vec::new(),
        }
    }

    pub fn omega(&self) -> &[usize] {
        &self.omega
    }

    pub fn sigma(&self) -> &[usize] {
        &self.sigma
    }

    pub fn contains_element(&self, e: usize) -> bool {
        self.omega.binary_search(&e).is_ok()
    }

    pub fn contains_face(&self, f: usize) -> bool {
        self.sigma.binary_search(&f).is_ok()
    }
}

/// Set of vertex indices where an admissible field may be nonzero;
/// deterministic given (mesh, region). Stored sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DofSet(Vec<usize>);

impl DofSet {
    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.0.binary_search(&v).is_ok()
    }

    pub fn is_subset_of(&self, other: &DofSet) -> bool {
        self.0.iter().all(|v| other.contains(*v))
    }
}

/// The discrete counterpart of W^{1,2}(Omega, Sigma): a vertex is active
/// iff every incident tetrahedron lies in Omega and, for boundary vertices,
/// every incident boundary face lies in Sigma. P1 fields supported on the
/// active set vanish on M \ Omega and have trace vanishing on dM \ Sigma.
pub fn active_dofs(mesh: &SimplicialMesh, region: &RegionPair) -> DofSet {
    let mut dofs = Vec::new();
    'vertex: for v in 0..mesh.n_vertices() {
        for &t in mesh.tets_of_vertex(v) {
            if !region.contains_element(t) {
                continue 'vertex;
            }
        }
        if mesh.is_boundary_vertex(v) {
            for &f in mesh.faces_of_vertex(v) {
                if !region.contains_face(f) {
                    continue 'vertex;
                }
            }
        }
        dofs.push(v);
    }
    DofSet(dofs)
}

/// Zero set (Z, Z_boundary) of a pair of target curvature fields: the
/// elements all of whose vertices satisfy |R'| <= tol, and the boundary
/// faces all of whose vertices satisfy |H'| <= tol. Closed-set semantics
/// at the vertex level under-approximate Z, which biases the solvability
/// classification toward Yamabe positive.
pub fn zero_set(
    mesh: &SimplicialMesh,
    interior: &Field,
    boundary: &BoundaryField,
    tol: f64,
) -> RegionPair {
    let omega = (0..mesh.n_tets())
        .filter(|&t| mesh.tets()[t].iter().all(|&v| interior[v].abs() <= tol))
        .collect();
    let sigma = (0..mesh.n_boundary_faces())
        .filter(|&f| {
            mesh.boundary_faces()[f].iter().all(|&v| {
                let li = mesh.boundary_index(v).expect("face vertex on boundary");
                boundary[li].abs() <= tol
            })
        })
        .collect();
    RegionPair { omega, sigma }
}

/// Default zero-set tolerance: exact zeros survive, roundoff noise does not.
pub fn default_zero_tol(interior: &Field, boundary: &BoundaryField) -> f64 {
    1e-9 * interior.norm_inf().max(boundary.norm_inf())
}

/// Set inclusion on both components.
pub fn is_nested(inner: &RegionPair, outer: &RegionPair) -> bool {
    inner.omega.iter().all(|e| outer.contains_element(*e))
        && inner.sigma.iter().all(|f| outer.contains_face(*f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_unit_cube;

    #[test]
    fn full_region_activates_all_vertices() {
        let mesh = generate_unit_cube(2).unwrap();
        let dofs = active_dofs(&mesh, &RegionPair::full(&mesh));
        assert_eq!(dofs.len(), mesh.n_vertices());
    }

    #[test]
    fn dirichlet_region_activates_interior_vertices() {
        let mesh = generate_unit_cube(2).unwrap();
        let dofs = active_dofs(&mesh, &RegionPair::interior(&mesh));
        let expected: Vec<usize> = (0..mesh.n_vertices())
            .filter(|&v| !mesh.is_boundary_vertex(v))
            .collect();
        assert_eq!(dofs.indices(), expected.as_slice());
        assert_eq!(dofs.len(), 1); // 3x3x3 grid has a single interior vertex
    }

    #[test]
    fn single_tet_region_has_no_dofs_on_coarse_cube() {
        let mesh = generate_unit_cube(1).unwrap();
        let region = RegionPair::new(&mesh, vec![0], vec![]).unwrap();
        let dofs = active_dofs(&mesh, &region);
        assert!(dofs.is_empty());
    }

    #[test]
    fn zero_set_extremes() {
        let mesh = generate_unit_cube(2).unwrap();
        let nb = mesh.boundary_vertices().len();
        let zeros = zero_set(
            &mesh,
            &Field::zeros(mesh.n_vertices()),
            &BoundaryField::constant(nb, 0.0),
            1e-12,
        );
        assert_eq!(zeros, RegionPair::full(&mesh));
        let none = zero_set(
            &mesh,
            &Field::constant(mesh.n_vertices(), -1.0),
            &BoundaryField::constant(nb, -1.0),
            1e-12,
        );
        assert_eq!(none, RegionPair::empty());
    }

    #[test]
    fn zero_set_half_cube() {
        let mesh = generate_unit_cube(2).unwrap();
        let rp = Field(
            mesh.vertices()
                .iter()
                .map(|p| (p[0] - 0.5).min(0.0))
                .collect(),
        );
        let nb = mesh.boundary_vertices().len();
        let z = zero_set(&mesh, &rp, &BoundaryField::constant(nb, -1.0), 1e-12);
        // exactly the elements entirely in { x >= 1/2 }
        let expected: Vec<usize> = (0..mesh.n_tets())
            .filter(|&t| mesh.tets()[t].iter().all(|&v| mesh.vertices()[v][0] >= 0.5))
            .collect();
        assert_eq!(z.omega(), expected.as_slice());
        assert!(!expected.is_empty());
        assert!(z.sigma().is_empty());
    }

    #[test]
    fn nesting_of_regions_nests_dofs() {
        let mesh = generate_unit_cube(3).unwrap();
        let inner = RegionPair::new(&mesh, (0..60).collect(), vec![0, 1, 2]).unwrap();
        let outer = RegionPair::new(&mesh, (0..90).collect(), vec![0, 1, 2, 3, 4]).unwrap();
        assert!(is_nested(&inner, &outer));
        assert!(!is_nested(&outer, &inner));
        assert!(is_nested(&RegionPair::empty(), &inner));
        let di = active_dofs(&mesh, &inner);
        let do_ = active_dofs(&mesh, &outer);
        assert!(di.is_subset_of(&do_));
    }
}
