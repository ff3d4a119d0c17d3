//! Test-only independent oracles: dense quadrature by simplex subdivision
//! and scalar root finding by bisection. These never touch the production
//! quadrature or solver paths they are used to check.

use crate::mesh::{RiemannianBackground, SimplicialMesh};
use crate::quadrature::{interp4, TET_QP, TET_QW};

/// Integrate |phi|^q over the whole mesh by recursively splitting each
/// tetrahedron `depth` times (8-way) and applying the order-2 rule on the
/// pieces; the P1 field is interpolated exactly at the sub-vertices.
pub fn dense_volume_quadrature(
    mesh: &SimplicialMesh,
    background: &RiemannianBackground,
    phi: &[f64],
    q: f64,
    depth: usize,
) -> f64 {
    let mut total = 0.0;
    for ti in 0..mesh.n_tets() {
        let w = background.volume_weights()[ti];
        let v = mesh.gather4(phi, ti);
        let corners = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        total += w * subdivide(corners, v, q, depth);
    }
    total
}

fn mid(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        0.5 * (a[0] + b[0]),
        0.5 * (a[1] + b[1]),
        0.5 * (a[2] + b[2]),
        0.5 * (a[3] + b[3]),
    ]
}

// Red refinement in barycentric coordinates: a tet splits into 8 children
// of equal volume, so each level contributes with weight 1/8.
fn subdivide(c: [[f64; 4]; 4], nodal: [f64; 4], q: f64, depth: usize) -> f64 {
    if depth == 0 {
        let mut s = 0.0;
        for p in TET_QP {
            let bc = [
                p[0] * c[0][0] + p[1] * c[1][0] + p[2] * c[2][0] + p[3] * c[3][0],
                p[0] * c[0][1] + p[1] * c[1][1] + p[2] * c[2][1] + p[3] * c[3][1],
                p[0] * c[0][2] + p[1] * c[1][2] + p[2] * c[2][2] + p[3] * c[3][2],
                p[0] * c[0][3] + p[1] * c[1][3] + p[2] * c[2][3] + p[3] * c[3][3],
            ];
            s += TET_QW * interp4(nodal, bc).abs().powf(q);
        }
        return s;
    }
    let m01 = mid(c[0], c[1]);
    let m02 = mid(c[0], c[2]);
    let m03 = mid(c[0], c[3]);
    let m12 = mid(c[1], c[2]);
    let m13 = mid(c[1], c[3]);
    let m23 = mid(c[2], c[3]);
    let children = [
        [c[0], m01, m02, m03],
        [m01, c[1], m12, m13],
        [m02, m12, c[2], m23],
        [m03, m13, m23, c[3]],
        [m01, m02, m03, m13],
        [m01, m02, m12, m13],
        [m02, m03, m13, m23],
        [m02, m12, m13, m23],
    ];
    let mut s = 0.0;
    for ch in children {
        s += subdivide(ch, nodal, q, depth - 1);
    }
    s / 8.0
}

/// Smallest generalized eigenvalue of (A, B) by dense reduction: Cholesky
/// of B, then cyclic Jacobi rotations on L^-1 A L^-T. Independent of the
/// sparse inverse-iteration path it is used to check.
pub fn dense_smallest_eigenvalue(a: &crate::sparse::CsrMatrix, b: &crate::sparse::CsrMatrix) -> f64 {
    let n = a.nrows();
    let mut bd = vec![vec![0.0; n]; n];
    for (i, j, v) in b.triplets() {
        bd[i][j] = v;
    }
    // Cholesky B = L L^T
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = bd[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                assert!(s > 0.0, "mass pencil is not positive definite");
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    // C = L^-1 A L^-T via forward substitutions
    let mut c = vec![vec![0.0; n]; n];
    for (i, j, v) in a.triplets() {
        c[i][j] = v;
    }
    for col in 0..n {
        for i in 0..n {
            let mut s = c[i][col];
            for k in 0..i {
                s -= l[i][k] * c[k][col];
            }
            c[i][col] = s / l[i][i];
        }
    }
    for row in 0..n {
        for j in 0..n {
            let mut s = c[row][j];
            for k in 0..j {
                s -= l[j][k] * c[row][k];
            }
            c[row][j] = s / l[j][j];
        }
    }
    // cyclic Jacobi sweeps
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += c[p][q] * c[p][q];
            }
        }
        if off.sqrt() < 1e-12 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if c[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (c[q][q] - c[p][p]) / (2.0 * c[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let (ckp, ckq) = (c[k][p], c[k][q]);
                    c[k][p] = cs * ckp - sn * ckq;
                    c[k][q] = sn * ckp + cs * ckq;
                }
                for k in 0..n {
                    let (cpk, cqk) = (c[p][k], c[q][k]);
                    c[p][k] = cs * cpk - sn * cqk;
                    c[q][k] = sn * cpk + cs * cqk;
                }
            }
        }
    }
    (0..n).map(|i| c[i][i]).fold(f64::INFINITY, f64::min)
}

/// Bisection root finder on [lo, hi]; f(lo) and f(hi) must bracket a root.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut flo = f(lo);
    assert!(
        flo * f(hi) <= 0.0,
        "bisection endpoints do not bracket a root"
    );
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
