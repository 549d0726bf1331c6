//! `crvex` — command-line driver for the variable-exponent Crouzeix-Raviart
//! solver.
//!
//! Subcommands:
//! - `study`: run the manufactured-solution refinement study over a
//!   parameter grid and tabulate errors and convergence orders.
//! - `solve`: solve one configuration at a chosen refinement level and
//!   export the mesh, the primal field, the reconstructed dual flux, and a
//!   JSON record of the run.
//! - `verify`: re-run the convex-duality audit on previously exported
//!   fields.
//!
//! Exit codes: 0 when every solve converged and every audit passed, 1 when
//! a solve or audit failed, 2 on usage, configuration, or I/O errors.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crvex_core::duality::{audit, dual_energy, marini_flux, primal_energy, DualEnergy};
use crvex_core::fem::{
    build_spaces, cr_gradient, export_field, import_field, rt0_divergence, rt0_element_mean,
    rt0_normal_jump, DiscreteField, SpaceTag,
};
use crvex_core::mesh::{
    build_criss_cross, compute_metrics, export_text, import_text, red_refine, BoundaryLabel,
    DirichletSelector, Rect, Triangulation, Vec2,
};
use crvex_core::nfunction::{discretize_exponent, PhiKit};
use crvex_core::solver::{newton_solve, CrSystem, NewtonSystem, SolveReport, SolverConfig};
use crvex_core::study::{
    discretize_load, prolong_cr, run_study, to_csv, to_markdown, ManufacturedCase, StudyConfig,
};
use crvex_core::Error as CoreError;

#[derive(Parser)]
#[command(
    name = "crvex",
    version,
    about = "Nonconforming finite-element solver for the variable-exponent Dirichlet problem"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the refinement study over a parameter grid and tabulate orders.
    Study(StudyArgs),
    /// Solve one configuration and export the mesh and fields.
    Solve(SolveArgs),
    /// Re-run the duality audit on exported fields.
    Verify(VerifyArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum OutputFormat {
    Csv,
    Markdown,
}

#[derive(Args)]
struct StudyArgs {
    /// Comma-separated base exponents p_min.
    #[arg(long = "p-min", value_delimiter = ',')]
    p_min: Option<Vec<f64>>,
    /// Comma-separated growth powers alpha.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    /// Comma-separated growth amplitudes eps.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Regularization parameter delta.
    #[arg(long)]
    delta: Option<f64>,
    /// Power beta of the manufactured solution.
    #[arg(long)]
    beta: Option<f64>,
    /// Number of refinement levels.
    #[arg(long)]
    levels: Option<u32>,
    /// Initial subdivisions per direction.
    #[arg(long)]
    n0: Option<usize>,
    /// Seed for randomized verification suites layered on the study.
    #[arg(long)]
    seed: Option<u64>,
    /// Report format.
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file mirroring these flags; explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// JSON mirror of the study flags. Every field is optional; omitted fields
/// fall back to the built-in defaults.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StudyFileConfig {
    p_min: Option<Vec<f64>>,
    alpha: Option<Vec<f64>>,
    eps: Option<Vec<f64>>,
    delta: Option<f64>,
    beta: Option<f64>,
    levels: Option<u32>,
    n0: Option<usize>,
    seed: Option<u64>,
    solver: Option<SolverConfig>,
    format: Option<OutputFormat>,
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    /// Base exponent p_min.
    #[arg(long = "p-min")]
    p_min: f64,
    /// Growth power alpha.
    #[arg(long)]
    alpha: f64,
    /// Growth amplitude eps.
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    /// Regularization parameter delta.
    #[arg(long, default_value_t = 1e-4)]
    delta: f64,
    /// Power beta of the manufactured solution.
    #[arg(long, default_value_t = 1.01)]
    beta: f64,
    /// Refinement level to solve at (warm-started through the hierarchy).
    #[arg(long, default_value_t = 4)]
    level: u32,
    /// Initial subdivisions per direction.
    #[arg(long, default_value_t = 2)]
    n0: usize,
    /// Directory for mesh.txt, u.field, z.field, solve.json.
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Directory previously written by `crvex solve`.
    #[arg(long)]
    dir: PathBuf,
}

/// Everything `verify` needs to rebuild the discrete problem, plus the
/// solve-time audit summary for reference.
#[derive(Debug, Serialize, Deserialize)]
struct SolveRecord {
    p_min: f64,
    alpha: f64,
    eps: f64,
    delta: f64,
    beta: f64,
    level: u32,
    n0: usize,
    n_elements: usize,
    n_sides: usize,
    n_dofs: usize,
    converged: bool,
    iterations: usize,
    final_residual: f64,
    primal_energy: f64,
    dual_energy: f64,
    relative_gap: f64,
    div_residual: f64,
    projection_residual: f64,
    normal_jump_residual: f64,
    fenchel_young_residual: f64,
    audit_pass: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Study(args) => cmd_study(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

// ---------------------------------------------------------------------------
// study
// ---------------------------------------------------------------------------

fn cmd_study(args: StudyArgs) -> Result<bool> {
    let file: StudyFileConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => StudyFileConfig::default(),
    };

    let defaults = StudyConfig::default();
    let config = StudyConfig {
        p_min: args.p_min.or(file.p_min).unwrap_or(defaults.p_min),
        alpha: args.alpha.or(file.alpha).unwrap_or(defaults.alpha),
        eps: args.eps.or(file.eps).unwrap_or(defaults.eps),
        delta: args.delta.or(file.delta).unwrap_or(defaults.delta),
        beta: args.beta.or(file.beta).unwrap_or(defaults.beta),
        levels: args.levels.or(file.levels).unwrap_or(defaults.levels),
        n0: args.n0.or(file.n0).unwrap_or(defaults.n0),
        solver: file.solver.unwrap_or(defaults.solver),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
    };
    let format = args.format.or(file.format).unwrap_or(OutputFormat::Csv);
    let out = args.out.or(file.out);

    let reports = run_study(&config).context("running the study")?;
    let ok = reports.iter().all(|r| r.all_converged() && r.all_audits_pass());
    for report in &reports {
        if let Some(failure) = &report.failure {
            eprintln!(
                "study (p_min={}, alpha={}, eps={}): {failure}",
                report.p_min, report.alpha, report.eps
            );
        }
    }

    let rendered = match format {
        OutputFormat::Csv => to_csv(&reports),
        OutputFormat::Markdown => to_markdown(&reports),
    };
    match out {
        Some(path) => {
            fs::write(&path, rendered)
                .with_context(|| format!("writing report {}", path.display()))?;
            eprintln!(
                "wrote {} ({} parameter triples, {} levels)",
                path.display(),
                reports.len(),
                config.levels
            );
        }
        None => print!("{rendered}"),
    }
    Ok(ok)
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

struct SolvedLevel {
    mesh: Triangulation,
    u_full: Vec<f64>,
    f_h: Vec<f64>,
    n_dofs: usize,
    report: SolveReport,
}

fn cmd_solve(args: SolveArgs) -> Result<bool> {
    if args.level < 1 {
        bail!("level must be >= 1");
    }
    let case = ManufacturedCase::new(args.p_min, args.eps, args.alpha, args.delta, args.beta)?;
    let solver = SolverConfig::default();

    let mut mesh = build_criss_cross(args.n0, Rect::symmetric_unit(), DirichletSelector::All)?;
    let mut metrics = compute_metrics(&mesh);
    let mut warm: Option<Vec<f64>> = None;
    let mut solved: Option<SolvedLevel> = None;
    for k in 1..=args.level {
        if k > 1 {
            let fine = red_refine(&mesh);
            let fine_metrics = compute_metrics(&fine);
            if let Some(u) = warm.take() {
                warm = Some(prolong_cr(&mesh, &metrics, &fine, &fine_metrics, &u)?);
            }
            mesh = fine;
            metrics = fine_metrics;
        }
        let spaces = build_spaces(&mesh);
        let exponents = discretize_exponent(&metrics, case.exponent_field());
        let f_h = discretize_load(&mesh, &case)?;
        let system =
            CrSystem::new(&mesh, &metrics, &spaces, &exponents, args.delta, f_h.clone())?;
        let u0 = match &warm {
            Some(u) => system.free_from_full(u),
            None => vec![0.0; system.dim()],
        };
        let (u_free, report) = match newton_solve(&system, &solver, &u0) {
            Ok(pair) => pair,
            Err(CoreError::NewtonDidNotConverge { reason, .. }) => {
                eprintln!("solve failed at level {k}: {reason}");
                return Ok(false);
            }
            Err(other) => return Err(other.into()),
        };
        let u_full = system.full_from_free(&u_free);
        warm = Some(u_full.clone());
        solved = Some(SolvedLevel {
            mesh: mesh.clone(),
            u_full,
            f_h,
            n_dofs: system.dim(),
            report,
        });
    }
    let last = solved.expect("at least one level was solved");
    let metrics = compute_metrics(&last.mesh);
    let exponents = discretize_exponent(&metrics, case.exponent_field());
    let flux = marini_flux(
        &last.mesh,
        &metrics,
        &exponents,
        args.delta,
        &last.u_full,
        &last.f_h,
    )?;
    let summary = audit(
        &last.mesh,
        &metrics,
        &exponents,
        args.delta,
        &last.u_full,
        &flux,
        &last.f_h,
    )?;
    let z_rt0 = flux.to_rt0(&last.mesh, &metrics);
    let f_scale = last.f_h.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let flux_scale = flux.cell_value.iter().map(Vec2::norm).fold(0.0, f64::max);
    let audit_pass = summary.passes(f_scale, flux_scale);

    let record = SolveRecord {
        p_min: args.p_min,
        alpha: args.alpha,
        eps: args.eps,
        delta: args.delta,
        beta: args.beta,
        level: args.level,
        n0: args.n0,
        n_elements: last.mesh.n_elements(),
        n_sides: last.mesh.n_sides(),
        n_dofs: last.n_dofs,
        converged: last.report.converged,
        iterations: last.report.iterations,
        final_residual: last.report.final_residual,
        primal_energy: summary.primal_energy,
        dual_energy: summary.dual_energy,
        relative_gap: summary.relative_gap,
        div_residual: summary.div_residual,
        projection_residual: summary.projection_residual,
        normal_jump_residual: summary.normal_jump_residual,
        fenchel_young_residual: summary.fenchel_young_residual,
        audit_pass,
    };

    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    fs::write(args.out_dir.join("mesh.txt"), export_text(&last.mesh))?;
    fs::write(
        args.out_dir.join("u.field"),
        export_field(&DiscreteField {
            space: SpaceTag::Cr,
            level: args.level,
            values: last.u_full.clone(),
        }),
    )?;
    fs::write(
        args.out_dir.join("z.field"),
        export_field(&DiscreteField { space: SpaceTag::Rt0, level: args.level, values: z_rt0 }),
    )?;
    fs::write(
        args.out_dir.join("solve.json"),
        serde_json::to_string_pretty(&record).context("serializing solve record")?,
    )?;
    eprintln!(
        "solved level {} ({} elements, {} unknowns) in {} Newton steps; \
         relative gap {:.2e}; wrote {}",
        args.level,
        record.n_elements,
        record.n_dofs,
        record.iterations,
        record.relative_gap,
        args.out_dir.display()
    );
    Ok(record.converged && audit_pass)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn read_dir_file(dir: &std::path::Path, name: &str) -> Result<String> {
    fs::read_to_string(dir.join(name))
        .with_context(|| format!("reading {}", dir.join(name).display()))
}

fn cmd_verify(args: VerifyArgs) -> Result<bool> {
    let record: SolveRecord = serde_json::from_str(&read_dir_file(&args.dir, "solve.json")?)
        .context("parsing solve.json")?;
    let mesh = import_text(&read_dir_file(&args.dir, "mesh.txt")?)?;
    let u = import_field(&read_dir_file(&args.dir, "u.field")?)?;
    let z = import_field(&read_dir_file(&args.dir, "z.field")?)?;
    if u.space != SpaceTag::Cr {
        bail!("u.field holds a {:?} field, expected side-midpoint values", u.space);
    }
    if z.space != SpaceTag::Rt0 {
        bail!("z.field holds a {:?} field, expected normal-flux values", z.space);
    }
    if u.values.len() != mesh.n_sides() || z.values.len() != mesh.n_sides() {
        bail!(
            "field sizes ({}, {}) do not match the mesh ({} sides)",
            u.values.len(),
            z.values.len(),
            mesh.n_sides()
        );
    }

    let case =
        ManufacturedCase::new(record.p_min, record.eps, record.alpha, record.delta, record.beta)?;
    let metrics = compute_metrics(&mesh);
    let exponents = discretize_exponent(&metrics, case.exponent_field());
    let f_h = discretize_load(&mesh, &case)?;

    // Recompute every audited quantity from the imported fields alone.
    let grads = cr_gradient(&mesh, &metrics, &u.values)?;
    let means = rt0_element_mean(&mesh, &metrics, &z.values)?;
    let div = rt0_divergence(&mesh, &metrics, &z.values)?;
    let mut div_defect = 0.0f64;
    let mut projection = 0.0f64;
    let mut fy_relative = 0.0f64;
    let mut flux_scale = 0.0f64;
    for t in 0..mesh.n_elements() {
        let kit = PhiKit::new(exponents.q[t], record.delta)?;
        let a_t = kit.eval_a(grads[t]);
        flux_scale = flux_scale.max(a_t.norm());
        div_defect = div_defect.max((div[t] + f_h[t]).abs());
        projection = projection.max((means[t] - a_t).norm());
        let phi = kit.eval_phi(grads[t].norm());
        let conj = kit.eval_phi_conjugate(means[t].norm())?;
        let pairing = means[t].dot(&grads[t]);
        let scale = pairing.abs() + phi + conj;
        if scale > 0.0 {
            fy_relative = fy_relative.max((pairing - conj - phi).abs() / scale);
        }
    }
    let mut jump = 0.0f64;
    for s in 0..mesh.n_sides() {
        if mesh.sides[s].label == BoundaryLabel::Interior {
            jump = jump.max(rt0_normal_jump(&mesh, &metrics, &z.values, s).abs());
        }
    }
    let i_h = primal_energy(&mesh, &metrics, &exponents, record.delta, &u.values, &f_h)?;
    let (feasible, gap_rel) =
        match dual_energy(&mesh, &metrics, &exponents, record.delta, &z.values, &f_h)? {
            DualEnergy::Finite(d) => {
                (true, (i_h - d).abs() / (i_h.abs() + d.abs() + 1.0))
            }
            DualEnergy::Infeasible { max_divergence_defect } => {
                eprintln!("flux is infeasible: divergence defect {max_divergence_defect:.3e}");
                (false, f64::MAX)
            }
        };

    // The imported flux is the collapsed (side-averaged) reconstruction, so
    // the identities hold up to the solve-time Newton residual rather than
    // to rounding; the gates below are far tighter than any plausible
    // corruption and far looser than an intact export.
    let checks = [
        ("divergence feasibility", feasible),
        ("relative duality gap <= 1e-8", gap_rel <= 1e-8),
        (
            "projection identity <= 1e-6 relative",
            projection <= 1e-6 * flux_scale.max(1.0),
        ),
        (
            "normal-trace continuity <= 1e-8",
            jump <= 1e-8 * (1.0 + flux_scale),
        ),
        ("convexity identity <= 1e-6 relative", fy_relative <= 1e-6),
    ];
    println!("primal energy {i_h:.12e}");
    println!("divergence defect {div_defect:.3e}");
    println!("projection residual {projection:.3e}");
    println!("normal-jump residual {jump:.3e}");
    println!("convexity-identity residual {fy_relative:.3e}");
    if feasible {
        println!("relative duality gap {gap_rel:.3e}");
    }
    let mut ok = true;
    for (name, passed) in checks {
        println!("{}: {name}", if passed { "PASS" } else { "FAIL" });
        ok &= passed;
    }
    println!("verify: {}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}
