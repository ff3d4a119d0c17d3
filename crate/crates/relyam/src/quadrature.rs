//! Quadrature rules on the reference simplices.
//!
//! Products of P1 functions are integrated with closed-form factorial
//! formulas where exact; everything with fractional exponents goes through
//! the order-2 point rules below.

/// Order-2 rule on the tetrahedron: 4 interior points, equal weights.
/// Barycentric coordinates of the points; weights are 1/4 each.
pub const TET_QP: [[f64; 4]; 4] = {
    const A: f64 = 0.585_410_196_624_968_5; // (5 + 3 sqrt 5) / 20
    const B: f64 = 0.138_196_601_125_010_5; // (5 - sqrt 5) / 20
    [
        [A, B, B, B],
        [B, A, B, B],
        [B, B, A, B],
        [B, B, B, A],
    ]
};

pub const TET_QW: f64 = 0.25;

/// Order-2 rule on the triangle: edge midpoints, equal weights 1/3.
pub const TRI_QP: [[f64; 3]; 3] = [
    [0.5, 0.5, 0.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
];

pub const TRI_QW: f64 = 1.0 / 3.0;

/// Value of the P1 interpolant with nodal values `v` at barycentric `bc`.
#[inline]
pub fn interp4(v: [f64; 4], bc: [f64; 4]) -> f64 {
    v[0] * bc[0] + v[1] * bc[1] + v[2] * bc[2] + v[3] * bc[3]
}

#[inline]
pub fn interp3(v: [f64; 3], bc: [f64; 3]) -> f64 {
    v[0] * bc[0] + v[1] * bc[1] + v[2] * bc[2]
}

/// \int_T psi_i psi_j dx = V (1 + delta_ij) / 20 on a tetrahedron of volume V.
#[inline]
pub fn tet_mass_entry(i: usize, j: usize) -> f64 {
    if i == j {
        1.0 / 10.0
    } else {
        1.0 / 20.0
    }
}

/// \int_T psi_i psi_j psi_k dx / V on a tetrahedron (exact).
#[inline]
pub fn tet_triple_entry(i: usize, j: usize, k: usize) -> f64 {
    let same = (i == j) as usize + (i == k) as usize + (j == k) as usize;
    match same {
        0 => 1.0 / 120.0,
        1 => 1.0 / 60.0,
        _ => 1.0 / 20.0,
    }
}

/// \int_F psi_i psi_j ds = A (1 + delta_ij) / 12 on a triangle of area A.
#[inline]
pub fn tri_mass_entry(i: usize, j: usize) -> f64 {
    if i == j {
        1.0 / 6.0
    } else {
        1.0 / 12.0
    }
}

/// \int_F psi_i psi_j psi_k ds / A on a triangle (exact).
#[inline]
pub fn tri_triple_entry(i: usize, j: usize, k: usize) -> f64 {
    let same = (i == j) as usize + (i == k) as usize + (j == k) as usize;
    match same {
        0 => 1.0 / 60.0,
        1 => 1.0 / 30.0,
        _ => 1.0 / 10.0,
    }
}
