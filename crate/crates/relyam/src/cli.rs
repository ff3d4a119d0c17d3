//! Command-line front end: mesh generation, invariant and eigenvalue
//! computation, sign classification, conformal transforms, the
//! prescribed-curvature pipeline, the Lichnerowicz solver, and report
//! verification.
//!
//! Reports are JSON with a fixed field order and full-precision floats, so
//! identical inputs produce byte-identical output. Exit codes: 0 for
//! converged or affirmative results, 2 for mathematically meaningful
//! negative answers (the solvability predicate is false), 1 for errors.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::assembly::{assemble, energy, EnergyMatrices};
use crate::error::{Error, Result};
use crate::mesh::{
    flat_background, generate_unit_ball, generate_unit_cube, load_mesh, save_mesh, BoundaryField,
    Field, RiemannianBackground, SimplicialMesh,
};
use crate::prescribe::{
    conformal_transform, solvability_predicate, solve_lichnerowicz, solve_prescribed,
    LichnerowiczData, NewtonOptions, PrescribeOptions, PrescribeStatus, TargetCurvatures,
};
use crate::region::{active_dofs, RegionPair};
use crate::variational::{
    constraint_value, relative_eigenvalue, yamabe_invariant, yamabe_sign, ConstraintSpec,
    SolveStatus, YamabeOptions, YamabeSign,
};

#[derive(Parser, Debug)]
#[command(name = "relyam", version, about = "Relative Yamabe invariants and prescribed-curvature solvers on tetrahedral meshes")]
struct Cli {
    /// Subcommand-specific tolerance (gradient, Newton residual, or zero band)
    #[arg(long, global = true, allow_negative_numbers = true)]
    tol: Option<f64>,
    /// Seed for randomized suites (solvers here are deterministic; accepted
    /// for scripting compatibility)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for element loops (0 = all cores); RELYAM_THREADS
    /// mirrors this flag
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress the report echo on stdout
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Shape {
    Cube,
    Ball,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a canonical mesh (unit cube or unit ball) with a flat
    /// background and constant curvature overrides
    Gen {
        #[arg(long, value_enum)]
        shape: Shape,
        #[arg(long, default_value_t = 2)]
        level: usize,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        r0: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        h0: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative Yamabe invariant of a region pair
    Yamabe {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, default_value = "all")]
        omega: String,
        #[arg(long, default_value = "all")]
        sigma: String,
        #[arg(long, allow_negative_numbers = true)]
        q: f64,
        #[arg(long, allow_negative_numbers = true)]
        r: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        b: f64,
        #[arg(long, default_value_t = 10_000)]
        max_iter: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dump the assembled matrices in (row, col, value) text form
        #[arg(long)]
        dump_matrices: Option<PathBuf>,
    },
    /// Relative first eigenvalue of the Laplacian of a region pair
    Eigen {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, default_value = "all")]
        omega: String,
        #[arg(long, default_value = "all")]
        sigma: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Yamabe sign classification of a region pair
    Classify {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, default_value = "all")]
        omega: String,
        #[arg(long, default_value = "all")]
        sigma: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Conformally transform a mesh by a positive nodal factor and write
    /// the transformed mesh file
    Transform {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        factor: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the prescribed curvature problem (full pipeline)
    Prescribe {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        rprime: String,
        #[arg(long)]
        hprime: String,
        #[arg(long, default_value_t = 8)]
        stages: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-stage convergence trace as CSV (stage,q,r,F,residual,min_u)
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Solve the Lichnerowicz equation at the critical exponents
    Lichnerowicz {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        rprime: String,
        #[arg(long)]
        hprime: String,
        #[arg(long)]
        aw: String,
        #[arg(long)]
        bw: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check a report against its inputs
    Verify {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        rprime: Option<String>,
        #[arg(long)]
        hprime: Option<String>,
        #[arg(long)]
        aw: Option<String>,
        #[arg(long)]
        bw: Option<String>,
    },
}

/// Entry point used by both the binary and the tests.
pub fn run(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            return 1;
        }
    };
    if let Some(t) = cli.tol {
        if !(t > 0.0) || !t.is_finite() {
            let _ = writeln!(err, "error: --tol must be a positive number, got {t}");
            return 1;
        }
    }
    let threads = cli
        .threads
        .or_else(|| std::env::var("RELYAM_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(t) = threads {
        crate::util::set_threads(t);
    }
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Gen {
            shape,
            level,
            r0,
            h0,
            out: path,
        } => {
            let mesh = match shape {
                Shape::Cube => generate_unit_cube((*level).max(1))?,
                Shape::Ball => generate_unit_ball(*level)?,
            };
            let bg = flat_background(&mesh, *r0, *h0);
            save_mesh(path, &mesh, &bg)?;
            let report = GenReport {
                kind: "gen",
                shape: match shape {
                    Shape::Cube => "cube",
                    Shape::Ball => "ball",
                },
                level: *level,
                vertices: mesh.n_vertices(),
                tets: mesh.n_tets(),
                boundary_faces: mesh.n_boundary_faces(),
                volume: bg.total_volume(&mesh),
                boundary_area: bg.total_boundary_area(&mesh),
                out: path.display().to_string(),
            };
            emit(out, cli.quiet, None, &report)?;
            Ok(0)
        }
        Command::Yamabe {
            mesh,
            omega,
            sigma,
            q,
            r,
            b,
            max_iter,
            out: out_path,
            dump_matrices,
        } => {
            let (m, bg) = load_mesh(mesh)?;
            let mats = assemble(&m, &bg)?;
            if let Some(path) = dump_matrices {
                dump_matrix_triplets(path, &mats)?;
            }
            let region = parse_region(&m, omega, sigma)?;
            let spec = ConstraintSpec::new(m.constants(), *q, *r, *b)?;
            let opts = YamabeOptions {
                gradient_tol: cli.tol.unwrap_or(1e-8),
                max_iterations: *max_iter,
            };
            let res = yamabe_invariant(&m, &bg, &mats, &region, &spec, &opts)?;
            let report = YamabeReport {
                kind: "yamabe",
                mesh: mesh.display().to_string(),
                omega: region.omega().to_vec(),
                sigma: region.sigma().to_vec(),
                q: *q,
                r: *r,
                b: *b,
                value: finite_or_none(res.value),
                lambda: res.multiplier,
                iterations: res.iterations,
                residual: res.residual,
                status: res.status,
                minimizer: res.minimizer,
            };
            emit(out, cli.quiet, out_path.as_deref(), &report)?;
            Ok(if report.status == SolveStatus::MaxIterations {
                1
            } else {
                0
            })
        }
        Command::Eigen {
            mesh,
            omega,
            sigma,
            out: out_path,
        } => {
            let (m, bg) = load_mesh(mesh)?;
            let mats = assemble(&m, &bg)?;
            let region = parse_region(&m, omega, sigma)?;
            let res = relative_eigenvalue(&m, &mats, &region)?;
            let report = EigenReport {
                kind: "eigen",
                mesh: mesh.display().to_string(),
                omega: region.omega().to_vec(),
                sigma: region.sigma().to_vec(),
                eigenvalue: finite_or_none(res.eigenvalue),
                residual: res.residual,
                iterations: res.iterations,
                status: res.status,
                eigenfield: res.eigenfield,
            };
            emit(out, cli.quiet, out_path.as_deref(), &report)?;
            Ok(if report.status == SolveStatus::MaxIterations {
                1
            } else {
                0
            })
        }
        Command::Classify {
            mesh,
            omega,
            sigma,
            out: out_path,
        } => {
            let (m, bg) = load_mesh(mesh)?;
            let mats = assemble(&m, &bg)?;
            let region = parse_region(&m, omega, sigma)?;
            let (sign, eig) = yamabe_sign(&m, &mats, &region, cli.tol)?;
            let report = ClassifyReport {
                kind: "classify",
                mesh: mesh.display().to_string(),
                omega: region.omega().to_vec(),
                sigma: region.sigma().to_vec(),
                sign,
                eigenvalue: finite_or_none(eig.eigenvalue),
                zero_band: crate::variational::zero_band(&mats, cli.tol),
                active_dofs: active_dofs(&m, &region).len(),
            };
            emit(out, cli.quiet, out_path.as_deref(), &report)?;
            Ok(0)
        }
        Command::Transform {
            mesh,
            factor,
            out: path,
        } => {
            let (m, bg) = load_mesh(mesh)?;
            let mats = assemble(&m, &bg)?;
            let u = Field(read_interior_field(&m, &factor.display().to_string())?);
            let (bg2, _) = conformal_transform(&m, &bg, &mats, &u)?;
            save_mesh(path, &m, &bg2)?;
            let report = TransformReport {
                kind: "transform",
                mesh: mesh.display().to_string(),
                out: path.display().to_string(),
                min_factor: u.min(),
                volume: bg2.total_volume(&m),
                boundary_area: bg2.total_boundary_area(&m),
            };
            emit(out, cli.quiet, None, &report)?;
            Ok(0)
        }
        Command::Prescribe {
            mesh,
            rprime,
            hprime,
            stages,
            out: out_path,
            trace,
        } => {
            let (m, bg) = load_mesh(mesh)?;
            let mats = assemble(&m, &bg)?;
            let targets = TargetCurvatures::new(
                &m,
                Field(read_interior_field(&m, rprime)?),
                BoundaryField(read_boundary_field(&m, hprime)?),
            )?;
            let opts = PrescribeOptions {
                stages: *stages,
                newton: NewtonOptions {
                    residual_tol: cli.tol.unwrap_or(1e-9),
                    max_steps: 200,
                },
                zero_tol: None,
            };
            let report_core = solve_prescribed(&m, &bg, &mats, &targets, &opts)?;
            if let Some(tr) = trace {
                write_trace_csv(tr, &report_core.trace)?;
            }
            let code = match report_core.status {
                PrescribeStatus::Converged => 0,
                PrescribeStatus::NoSolutionPerTheorem => 2,
            };
            let report = PrescribeCliReport {
                kind: "prescribe",
                mesh: mesh.display().to_string(),
                rprime: rprime.clone(),
                hprime: hprime.clone(),
                stages: *stages,
                report: report_core,
            };
            emit(out, cli.quiet, out_path.as_deref(), &report)?;
            Ok(code)
        }
        Command::Lichnerowicz {
            mesh,
            rprime,
            hprime,
            aw,
            bw,
            out: out_path,
        } => {
            let (m, bg) = load_mesh(mesh)?;
            let mats = assemble(&m, &bg)?;
            let targets = TargetCurvatures::new(
                &m,
                Field(read_interior_field(&m, rprime)?),
                BoundaryField(read_boundary_field(&m, hprime)?),
            )?;
            let lich = LichnerowiczData::new(
                &m,
                Field(read_interior_field(&m, aw)?),
                BoundaryField(read_boundary_field(&m, bw)?),
            )?;
            let opts = NewtonOptions {
                residual_tol: cli.tol.unwrap_or(1e-9),
                max_steps: 200,
            };
            let u = solve_lichnerowicz(&m, &bg, &mats, &targets, &lich, &opts)?;
            let report = LichnerowiczReport {
                kind: "lichnerowicz",
                mesh: mesh.display().to_string(),
                min_u: u.min(),
                solution: u,
            };
            emit(out, cli.quiet, out_path.as_deref(), &report)?;
            Ok(0)
        }
        Command::Verify {
            report,
            mesh,
            rprime,
            hprime,
            aw,
            bw,
        } => {
            let text = std::fs::read_to_string(report)?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            let (m, bg) = load_mesh(mesh)?;
            let mats = assemble(&m, &bg)?;
            let checks = verify_report(&m, &bg, &mats, &value, rprime, hprime, aw, bw)?;
            let all = checks.iter().all(|c| c.pass);
            let vr = VerifyReport {
                kind: "verify",
                report: report.display().to_string(),
                all_passed: all,
                checks,
            };
            emit(out, cli.quiet, None, &vr)?;
            Ok(if all { 0 } else { 1 })
        }
    }
}

// ---------------------------------------------------------------------------
// report types (field order fixes the serialized byte layout)

#[derive(Serialize)]
struct GenReport {
    kind: &'static str,
    shape: &'static str,
    level: usize,
    vertices: usize,
    tets: usize,
    boundary_faces: usize,
    volume: f64,
    boundary_area: f64,
    out: String,
}

#[derive(Serialize)]
struct YamabeReport {
    kind: &'static str,
    mesh: String,
    omega: Vec<usize>,
    sigma: Vec<usize>,
    q: f64,
    r: f64,
    b: f64,
    value: Option<f64>,
    lambda: f64,
    iterations: usize,
    residual: f64,
    status: SolveStatus,
    minimizer: Field,
}

#[derive(Serialize)]
struct EigenReport {
    kind: &'static str,
    mesh: String,
    omega: Vec<usize>,
    sigma: Vec<usize>,
    eigenvalue: Option<f64>,
    residual: f64,
    iterations: usize,
    status: SolveStatus,
    eigenfield: Field,
}

#[derive(Serialize)]
struct ClassifyReport {
    kind: &'static str,
    mesh: String,
    omega: Vec<usize>,
    sigma: Vec<usize>,
    sign: YamabeSign,
    eigenvalue: Option<f64>,
    zero_band: f64,
    active_dofs: usize,
}

#[derive(Serialize)]
struct TransformReport {
    kind: &'static str,
    mesh: String,
    out: String,
    min_factor: f64,
    volume: f64,
    boundary_area: f64,
}

#[derive(Serialize)]
struct PrescribeCliReport {
    kind: &'static str,
    mesh: String,
    rprime: String,
    hprime: String,
    stages: usize,
    #[serde(flatten)]
    report: crate::prescribe::PrescribeReport,
}

#[derive(Serialize)]
struct LichnerowiczReport {
    kind: &'static str,
    mesh: String,
    min_u: f64,
    solution: Field,
}

#[derive(Serialize)]
struct VerifyCheck {
    name: &'static str,
    pass: bool,
    detail: String,
}

#[derive(Serialize)]
struct VerifyReport {
    kind: &'static str,
    report: String,
    all_passed: bool,
    checks: Vec<VerifyCheck>,
}

fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn emit<T: Serialize>(
    out: &mut dyn Write,
    quiet: bool,
    path: Option<&std::path::Path>,
    report: &T,
) -> Result<()> {
    let text = serde_json::to_string(report)?;
    if let Some(p) = path {
        std::fs::write(p, format!("{text}\n"))?;
    }
    if !quiet {
        writeln!(out, "{text}").map_err(Error::Io)?;
    }
    Ok(())
}

fn dump_matrix_triplets(path: &std::path::Path, mats: &EnergyMatrices) -> Result<()> {
    let mut text = String::new();
    for (name, m) in [
        ("K", &mats.stiffness),
        ("M", &mats.mass),
        ("S", &mats.boundary_mass),
        ("A", &mats.energy),
    ] {
        for (i, j, v) in m.triplets() {
            text.push_str(&format!("{name} {i} {j} {v}\n"));
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Region argument: `all`, `none`, or a path to a JSON index array.
fn parse_region(mesh: &SimplicialMesh, omega: &str, sigma: &str) -> Result<RegionPair> {
    let omega_idx = parse_index_list(omega, mesh.n_tets(), "omega")?;
    let sigma_idx = parse_index_list(sigma, mesh.n_boundary_faces(), "sigma")?;
    RegionPair::new(mesh, omega_idx, sigma_idx)
}

fn parse_index_list(spec: &str, n: usize, what: &str) -> Result<Vec<usize>> {
    match spec {
        "all" => Ok((0..n).collect()),
        "none" => Ok(Vec::new()),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Parse(format!("--{what} {path}: {e}"))
            })?;
            let idx: Vec<usize> = serde_json::from_str(&text)
                .map_err(|e| Error::Parse(format!("--{what} {path}: {e}")))?;
            Ok(idx)
        }
    }
}

/// Interior field argument: `const:<value>` or a path to a JSON array with
/// one value per vertex.
fn read_interior_field(mesh: &SimplicialMesh, spec: &str) -> Result<Vec<f64>> {
    if let Some(v) = spec.strip_prefix("const:") {
        let c: f64 = v
            .parse()
            .map_err(|_| Error::Parse(format!("bad constant field spec '{spec}'")))?;
        return Ok(vec![c; mesh.n_vertices()]);
    }
    let text = std::fs::read_to_string(spec)?;
    let vals: Vec<f64> = serde_json::from_str(&text)?;
    if vals.len() != mesh.n_vertices() {
        return Err(Error::DimensionMismatch(format!(
            "field file {spec} has {} values for {} vertices",
            vals.len(),
            mesh.n_vertices()
        )));
    }
    Ok(vals)
}

/// Boundary field argument: `const:<value>`, a JSON array aligned with the
/// sorted boundary vertex list, or an object mapping vertex index to value.
fn read_boundary_field(mesh: &SimplicialMesh, spec: &str) -> Result<Vec<f64>> {
    let nb = mesh.boundary_vertices().len();
    if let Some(v) = spec.strip_prefix("const:") {
        let c: f64 = v
            .parse()
            .map_err(|_| Error::Parse(format!("bad constant field spec '{spec}'")))?;
        return Ok(vec![c; nb]);
    }
    let text = std::fs::read_to_string(spec)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.is_array() {
        let vals: Vec<f64> = serde_json::from_value(value)?;
        if vals.len() != nb {
            return Err(Error::DimensionMismatch(format!(
                "boundary field file {spec} has {} values for {} boundary vertices",
                vals.len(),
                nb
            )));
        }
        Ok(vals)
    } else {
        let map: std::collections::BTreeMap<usize, f64> = serde_json::from_value(value)?;
        let mut out = vec![0.0; nb];
        let mut assigned = vec![false; nb];
        for (v, val) in map {
            let li = mesh.boundary_index(v).ok_or_else(|| {
                Error::Parse(format!("{spec}: vertex {v} is not a boundary vertex"))
            })?;
            out[li] = val;
            assigned[li] = true;
        }
        if let Some(miss) = assigned.iter().position(|a| !a) {
            return Err(Error::Parse(format!(
                "{spec}: missing value for boundary vertex {}",
                mesh.boundary_vertices()[miss]
            )));
        }
        Ok(out)
    }
}

fn write_trace_csv(path: &std::path::Path, trace: &[crate::prescribe::StageTrace]) -> Result<()> {
    let mut text = String::from("stage,q,r,F,residual,min_u\n");
    for st in trace {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            st.stage, st.q, st.r, st.f_value, st.residual, st.min_u
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn verify_report(
    mesh: &SimplicialMesh,
    bg: &RiemannianBackground,
    mats: &EnergyMatrices,
    report: &serde_json::Value,
    rprime: &Option<String>,
    hprime: &Option<String>,
    aw: &Option<String>,
    bw: &Option<String>,
) -> Result<Vec<VerifyCheck>> {
    let kind = report
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| Error::Parse("report has no 'kind' field".into()))?;
    let mut checks = Vec::new();
    let get_field = |name: &str| -> Result<Field> {
        let arr = report
            .get(name)
            .ok_or_else(|| Error::Parse(format!("report has no '{name}' field")))?;
        Ok(Field(serde_json::from_value(arr.clone())?))
    };
    let get_region = || -> Result<RegionPair> {
        let omega: Vec<usize> = serde_json::from_value(
            report
                .get("omega")
                .cloned()
                .ok_or_else(|| Error::Parse("report has no 'omega'".into()))?,
        )?;
        let sigma: Vec<usize> = serde_json::from_value(
            report
                .get("sigma")
                .cloned()
                .ok_or_else(|| Error::Parse("report has no 'sigma'".into()))?,
        )?;
        RegionPair::new(mesh, omega, sigma)
    };
    match kind {
        "yamabe" => {
            let region = get_region()?;
            let minimizer = get_field("minimizer")?;
            let q = report["q"].as_f64().unwrap_or(f64::NAN);
            let r = report["r"].as_f64().unwrap_or(f64::NAN);
            let b = report["b"].as_f64().unwrap_or(f64::NAN);
            let spec = ConstraintSpec::new(mesh.constants(), q, r, b)?;
            let value = report["value"].as_f64();
            let c = constraint_value(mesh, bg, &region, &spec, &minimizer);
            checks.push(VerifyCheck {
                name: "constraint",
                pass: (c - 1.0).abs() <= 1e-8,
                detail: format!("|C(phi) - 1| = {:e}", (c - 1.0).abs()),
            });
            let e = energy(mats, &minimizer)?;
            let pass = match value {
                Some(v) => (e - v).abs() <= 1e-10 * v.abs().max(1.0),
                None => false,
            };
            checks.push(VerifyCheck {
                name: "value-is-energy",
                pass,
                detail: format!("E(phi) = {e}, reported {value:?}"),
            });
            let dofs = active_dofs(mesh, &region);
            let supported = minimizer
                .iter()
                .enumerate()
                .all(|(v, x)| dofs.contains(v) || *x == 0.0);
            checks.push(VerifyCheck {
                name: "support",
                pass: supported,
                detail: "minimizer vanishes off the active set".into(),
            });
        }
        "eigen" => {
            let region = get_region()?;
            let eigenfield = get_field("eigenfield")?;
            let reported = report["eigenvalue"].as_f64();
            match reported {
                Some(lam) => {
                    let num = mats.energy.quadratic_form(&eigenfield);
                    let den = mats.metric_mass().quadratic_form(&eigenfield);
                    let quotient = num / den;
                    checks.push(VerifyCheck {
                        name: "rayleigh-quotient",
                        pass: (quotient - lam).abs() <= 1e-8 * (1.0 + lam.abs()),
                        detail: format!("Q = {quotient}, reported {lam}"),
                    });
                    let recomputed = relative_eigenvalue(mesh, mats, &region)?;
                    checks.push(VerifyCheck {
                        name: "eigenvalue",
                        pass: (recomputed.eigenvalue - lam).abs() <= 1e-6 * (1.0 + lam.abs()),
                        detail: format!("recomputed {}", recomputed.eigenvalue),
                    });
                }
                None => {
                    let dofs = active_dofs(mesh, &region);
                    checks.push(VerifyCheck {
                        name: "empty-constraint-set",
                        pass: dofs.is_empty(),
                        detail: format!("{} active dofs", dofs.len()),
                    });
                }
            }
        }
        "classify" => {
            let region = get_region()?;
            let (sign, _) = yamabe_sign(mesh, mats, &region, None)?;
            let reported: YamabeSign =
                serde_json::from_value(report["sign"].clone()).map_err(Error::from)?;
            checks.push(VerifyCheck {
                name: "sign",
                pass: sign == reported,
                detail: format!("recomputed {sign:?}, reported {reported:?}"),
            });
        }
        "prescribe" => {
            let targets = TargetCurvatures::new(
                mesh,
                Field(read_interior_field(
                    mesh,
                    rprime.as_deref().ok_or_else(|| {
                        Error::Parse("verifying a prescribe report needs --rprime".into())
                    })?,
                )?),
                BoundaryField(read_boundary_field(
                    mesh,
                    hprime.as_deref().ok_or_else(|| {
                        Error::Parse("verifying a prescribe report needs --hprime".into())
                    })?,
                )?),
            )?;
            let status = report["status"].as_str().unwrap_or("");
            if status == "no-solution-per-theorem" {
                let pred = solvability_predicate(mesh, bg, mats, &targets, None)?;
                checks.push(VerifyCheck {
                    name: "predicate",
                    pass: !pred.solvable,
                    detail: format!("recomputed solvable = {}", pred.solvable),
                });
            } else {
                let u = get_field("solution")?;
                checks.push(VerifyCheck {
                    name: "positivity",
                    pass: u.min() > 0.0,
                    detail: format!("min u = {}", u.min()),
                });
                let pred = solvability_predicate(mesh, bg, mats, &targets, None)?;
                checks.push(VerifyCheck {
                    name: "predicate",
                    pass: pred.solvable,
                    detail: format!("recomputed solvable = {}", pred.solvable),
                });
            }
        }
        "lichnerowicz" => {
            let u = get_field("solution")?;
            checks.push(VerifyCheck {
                name: "positivity",
                pass: u.min() > 0.0,
                detail: format!("min u = {}", u.min()),
            });
            if let (Some(rp), Some(hp), Some(aw), Some(bw)) = (rprime, hprime, aw, bw) {
                let targets = TargetCurvatures::new(
                    mesh,
                    Field(read_interior_field(mesh, rp)?),
                    BoundaryField(read_boundary_field(mesh, hp)?),
                )?;
                let lich = LichnerowiczData::new(
                    mesh,
                    Field(read_interior_field(mesh, aw)?),
                    BoundaryField(read_boundary_field(mesh, bw)?),
                )?;
                let recomputed = solve_lichnerowicz(
                    mesh,
                    bg,
                    mats,
                    &targets,
                    &lich,
                    &NewtonOptions::default(),
                )?;
                let mut worst = 0.0f64;
                for (a, b) in recomputed.iter().zip(u.iter()) {
                    worst = worst.max((a - b).abs());
                }
                checks.push(VerifyCheck {
                    name: "solution",
                    pass: worst <= 1e-6,
                    detail: format!("max deviation {worst:e}"),
                });
            }
        }
        other => {
            return Err(Error::Parse(format!("cannot verify reports of kind '{other}'")));
        }
    }
    Ok(checks)
}
