//! Small fixed-size vector and symmetric-matrix helpers for 3D simplices.

pub type Vec3 = [f64; 3];

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    scale(a, 1.0 / n)
}

/// Signed volume of the tetrahedron (a, b, c, d); positive for a
/// positively oriented vertex ordering.
pub fn signed_volume(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> f64 {
    dot(sub(b, a), cross(sub(c, a), sub(d, a))) / 6.0
}

/// Area of the triangle (a, b, c).
pub fn triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    0.5 * norm(cross(sub(b, a), sub(c, a)))
}

/// Symmetric 3x3 matrix stored as (xx, xy, xz, yy, yz, zz), the order used
/// by the mesh file format.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymMat3(pub [f64; 6]);

impl SymMat3 {
    pub fn identity() -> Self {
        SymMat3([1.0, 0.0, 0.0, 1.0, 0.0, 1.0])
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        let [xx, xy, xz, yy, yz, zz] = self.0;
        [
            xx * v[0] + xy * v[1] + xz * v[2],
            xy * v[0] + yy * v[1] + yz * v[2],
            xz * v[0] + yz * v[1] + zz * v[2],
        ]
    }

    pub fn quadratic_form(&self, a: Vec3, b: Vec3) -> f64 {
        dot(a, self.apply(b))
    }

    pub fn scaled(&self, s: f64) -> SymMat3 {
        let mut m = self.0;
        for x in &mut m {
            *x *= s;
        }
        SymMat3(m)
    }

    /// Positive definiteness via the leading principal minors.
    pub fn is_positive_definite(&self) -> bool {
        let [xx, xy, xz, yy, yz, zz] = self.0;
        let m1 = xx;
        let m2 = xx * yy - xy * xy;
        let m3 = xx * (yy * zz - yz * yz) - xy * (xy * zz - yz * xz) + xz * (xy * yz - yy * xz);
        m1 > 0.0 && m2 > 0.0 && m3 > 0.0
    }
}

/// Gradients of the four P1 basis functions on a tetrahedron, plus its
/// (positive) Euclidean volume.
pub fn p1_gradients(v: [Vec3; 4]) -> ([Vec3; 4], f64) {
    let e1 = sub(v[1], v[0]);
    let e2 = sub(v[2], v[0]);
    let e3 = sub(v[3], v[0]);
    let det = dot(e1, cross(e2, e3));
    // rows of the inverse Jacobian are gradients of the barycentric
    // coordinates lambda_1..3; lambda_0 closes the partition of unity
    let g1 = scale(cross(e2, e3), 1.0 / det);
    let g2 = scale(cross(e3, e1), 1.0 / det);
    let g3 = scale(cross(e1, e2), 1.0 / det);
    let g0 = [
        -(g1[0] + g2[0] + g3[0]),
        -(g1[1] + g2[1] + g3[1]),
        -(g1[2] + g2[2] + g3[2]),
    ];
    ([g0, g1, g2, g3], det / 6.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_tet_gradients() {
        let v = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ];
        let (g, vol) = p1_gradients(v);
        assert!((vol - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(g[1], [1.0, 0.0, 0.0]);
        assert_eq!(g[2], [0.0, 1.0, 0.0]);
        assert_eq!(g[3], [0.0, 0.0, 1.0]);
        assert_eq!(g[0], [-1.0, -1.0, -1.0]);
    }

    #[test]
    fn spd_check() {
        assert!(SymMat3::identity().is_positive_definite());
        assert!(!SymMat3([1.0, 2.0, 0.0, 1.0, 0.0, 1.0]).is_positive_definite());
        assert!(!SymMat3([-1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).is_positive_definite());
    }
}
