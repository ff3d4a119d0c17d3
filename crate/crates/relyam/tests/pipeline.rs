//! Integration tests of the prescribed-curvature pipeline beyond the
//! fast normalization path, plus conformal invariance of the classifier.

mod common;

use common::{random_boundary_field, random_field, rng};

use relyam::assembly::assemble;
use relyam::mesh::{
    flat_background, generate_unit_cube, BoundaryField, Field, RiemannianBackground,
    SimplicialMesh,
};
use relyam::prescribe::{
    conformal_transform, normalize_to_negative, solve_prescribed, PrescribeStatus,
    TargetCurvatures,
};
use relyam::region::RegionPair;
use relyam::variational::{yamabe_sign, YamabeSign};

/// Yamabe-negative background whose scalar curvature is positive near
/// x = 1, so normalization has to run the actual conformal transform.
fn mixed_curvature_background(m: usize) -> (SimplicialMesh, RiemannianBackground) {
    let mesh = generate_unit_cube(m).unwrap();
    let flat = flat_background(&mesh, 0.0, 0.0);
    let r = Field(
        mesh.vertices()
            .iter()
            .map(|p| -30.0 + 40.0 * p[0])
            .collect(),
    );
    let h = BoundaryField::constant(mesh.boundary_vertices().len(), 0.2);
    let bg = RiemannianBackground::new(
        &mesh,
        flat.volume_weights().to_vec(),
        flat.area_weights().to_vec(),
        flat.gradient_metrics().to_vec(),
        r,
        h,
    )
    .unwrap();
    (mesh, bg)
}

#[test]
fn full_normalization_path_and_pipeline() {
    let (mesh, bg) = mixed_curvature_background(4);
    let mats = assemble(&mesh, &bg).unwrap();
    let (sign, _) = yamabe_sign(&mesh, &mats, &RegionPair::full(&mesh), None).unwrap();
    assert_eq!(sign, YamabeSign::Negative);

    let normalization = normalize_to_negative(&mesh, &bg, &mats).unwrap();
    assert!(normalization.multiplier.unwrap() < 0.0);
    assert!(normalization.factor.min() > 0.0);
    let r2 = normalization.background.scalar_curvature();
    for v in 0..mesh.n_vertices() {
        if !mesh.is_boundary_vertex(v) {
            assert!(r2[v] < 0.0, "recovered R at {v} is {}", r2[v]);
        }
    }
    // the transformed problem is the exact image of the base problem, so
    // the classifier must agree between the frames
    let (sign2, _) = yamabe_sign(
        &mesh,
        &normalization.matrices,
        &RegionPair::full(&mesh),
        None,
    )
    .unwrap();
    assert_eq!(sign2, YamabeSign::Negative);

    let targets = TargetCurvatures::new(
        &mesh,
        Field::constant(mesh.n_vertices(), -2.0),
        BoundaryField::constant(mesh.boundary_vertices().len(), -0.5),
    )
    .unwrap();
    let report = solve_prescribed(&mesh, &bg, &mats, &targets, &Default::default()).unwrap();
    assert_eq!(report.status, PrescribeStatus::Converged);
    assert!(report.min_u.unwrap() > 0.0);
    assert!(report.final_residual.unwrap() <= 1e-7);
    assert_eq!(report.trace.len(), 9);
    let verification = report.verification.unwrap();
    assert!(verification.interior_nodes_checked > 0);
    assert!(verification.boundary_nodes_checked > 0);
    assert!(verification.max_interior_r_deviation.is_finite());
}

#[test]
fn full_normalization_on_smooth_boundary() {
    // on the ball there are no crease exclusions: the recovered mean
    // curvature must come out negative at every boundary node
    let mesh = relyam::generate_unit_ball(1).unwrap();
    let flat = flat_background(&mesh, 0.0, 0.0);
    let r = Field(
        mesh.vertices()
            .iter()
            .map(|p| -30.0 + 40.0 * p[2])
            .collect(),
    );
    let h = BoundaryField::constant(mesh.boundary_vertices().len(), 0.2);
    let bg = RiemannianBackground::new(
        &mesh,
        flat.volume_weights().to_vec(),
        flat.area_weights().to_vec(),
        flat.gradient_metrics().to_vec(),
        r,
        h,
    )
    .unwrap();
    let mats = assemble(&mesh, &bg).unwrap();
    let normalization = normalize_to_negative(&mesh, &bg, &mats).unwrap();
    assert!(normalization.multiplier.unwrap() < 0.0);
    let h2 = normalization.background.mean_curvature();
    for (li, &v) in mesh.boundary_vertices().iter().enumerate() {
        assert!(h2[li] < 0.0, "recovered H at boundary vertex {v} is {}", h2[li]);
    }
    let targets = TargetCurvatures::new(
        &mesh,
        Field::constant(mesh.n_vertices(), -2.0),
        BoundaryField::constant(mesh.boundary_vertices().len(), -0.5),
    )
    .unwrap();
    let report = solve_prescribed(&mesh, &bg, &mats, &targets, &Default::default()).unwrap();
    assert_eq!(report.status, PrescribeStatus::Converged);
    assert!(report.final_residual.unwrap() <= 1e-7);
    assert!(report.min_u.unwrap() > 0.0);
}

#[test]
fn classifier_sign_is_conformally_invariant() {
    let mesh = generate_unit_cube(2).unwrap();
    let flat = flat_background(&mesh, 0.0, 0.0);
    let full = RegionPair::full(&mesh);
    let mut signs_seen = std::collections::BTreeSet::new();
    for seed in 0..12u64 {
        let mut r = rng(300 + seed);
        let rf = random_field(&mesh, &mut r, -12.0, 12.0);
        let hf = random_boundary_field(&mesh, &mut r, -3.0, 3.0);
        let bg = RiemannianBackground::new(
            &mesh,
            flat.volume_weights().to_vec(),
            flat.area_weights().to_vec(),
            flat.gradient_metrics().to_vec(),
            rf,
            hf,
        )
        .unwrap();
        let mats = assemble(&mesh, &bg).unwrap();
        let (sign, _) = yamabe_sign(&mesh, &mats, &full, None).unwrap();
        let u = random_field(&mesh, &mut r, 0.4, 2.5);
        let (_, mats2) = conformal_transform(&mesh, &bg, &mats, &u).unwrap();
        let (sign2, _) = yamabe_sign(&mesh, &mats2, &full, None).unwrap();
        assert_eq!(sign, sign2, "seed {seed}");
        signs_seen.insert(format!("{sign:?}"));
    }
    // the seeds should exercise both decisive classes
    assert!(signs_seen.len() >= 2, "only saw {signs_seen:?}");
}

#[test]
fn f_gradient_is_exact_in_transformed_frames() {
    // the conformal premultipliers enter both the residual and its test
    // functions; central differences of the merit pin the chain rule
    let (mesh, bg) = mixed_curvature_background(2);
    let mats = assemble(&mesh, &bg).unwrap();
    let mut r = rng(11);
    let u0 = random_field(&mesh, &mut r, 0.6, 1.8);
    let (bg2, mats2) = relyam::prescribe::conformal_transform(&mesh, &bg, &mats, &u0).unwrap();
    let frame = relyam::prescribe::ProblemFrame {
        mesh: &mesh,
        background: &bg2,
        matrices: &mats2,
    };
    let targets = TargetCurvatures::new(
        &mesh,
        Field::constant(mesh.n_vertices(), -1.5),
        BoundaryField::constant(mesh.boundary_vertices().len(), -0.25),
    )
    .unwrap();
    let (q, rr) = (4.5, 3.0);
    let w = random_field(&mesh, &mut r, 0.7, 1.4);
    let analytic = relyam::prescribe::f_gradient(&frame, &targets, q, rr, &w);
    let step = 1e-5;
    let mut work = w.clone();
    let scale = analytic.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..w.len() {
        work[i] = w[i] + step;
        let up = relyam::prescribe::f_value(&frame, &targets, q, rr, &work);
        work[i] = w[i] - step;
        let dn = relyam::prescribe::f_value(&frame, &targets, q, rr, &work);
        work[i] = w[i];
        let fd = (up - dn) / (2.0 * step);
        assert!(
            (fd - analytic[i]).abs() <= 1e-6 * scale,
            "component {i}: fd {fd} vs analytic {}",
            analytic[i]
        );
    }
}

#[test]
fn normalization_requires_negative_class() {
    let mesh = generate_unit_cube(2).unwrap();
    let bg = flat_background(&mesh, 0.0, 0.0);
    let mats = assemble(&mesh, &bg).unwrap();
    let err = normalize_to_negative(&mesh, &bg, &mats).unwrap_err();
    assert!(matches!(err, relyam::Error::NotYamabeNegative(_)));
}
