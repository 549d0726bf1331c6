//! Manufactured-solution convergence studies.
//!
//! The exact solution is `u(x) = d(x) |x|^beta` on the square `(-1,1)^2`,
//! with the cut-off `d(x) = (1 - x_1^2)(1 - x_2^2)` enforcing the zero
//! boundary condition and `beta > 1` keeping the gradient bounded. The flux
//! `z = A(p(x), delta, grad u)` uses the *continuous* exponent; the load
//! `f = -div z` is evaluated by central finite differences of the
//! closed-form flux, which is far more robust than hand-expanding the
//! variable-exponent divergence and accurate to ~1e-8 — far below the
//! discretization error at every level this driver runs.
//!
//! Error quantities are squared natural-distance norms: quadrature sums of
//! `|F(p_T, delta, grad u_h) - F(p_T, delta, grad u(x_q))|^2` (both
//! arguments through the element-frozen exponent) and the analogous dual
//! quantity with `F*` and the reconstructed flux. The tabulated order is
//! that of the unsquared error norm, i.e. half the decay order of the
//! stored squared quantity; with meshes refined by exact halving this is
//! `0.5 * log2(e_{k-1} / e_k)`.

use crate::duality::{audit, marini_flux};
use crate::error::{Error, Result};
use crate::fem::{build_spaces, cr_value, rt0_evaluate};
use crate::mesh::{
    build_criss_cross, compute_metrics, red_refine, DirichletSelector, MeshMetrics, Pt2, Rect,
    Triangulation, Vec2,
};
use crate::nfunction::{discretize_exponent, ElementExponents, ExponentField, PhiKit};
use crate::quadrature::SimplexQuadrature;
use crate::solver::{newton_solve, CrSystem, NewtonSystem, SolverConfig};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// A closed-form test problem: solution, gradient, flux, and a finite-
/// difference load evaluator.
#[derive(Debug, Clone)]
pub struct ManufacturedCase {
    exponent: ExponentField,
    delta: f64,
    beta: f64,
    /// When false the cut-off is replaced by 1 (pure radial power); only
    /// meaningful for interior evaluations in symmetry tests.
    with_cutoff: bool,
}

impl ManufacturedCase {
    /// A cut-off power solution for the exponent field
    /// `p(x) = p_min + eps |x|^alpha`.
    pub fn new(p_min: f64, eps: f64, alpha: f64, delta: f64, beta: f64) -> Result<Self> {
        if !(beta > 1.0) || !beta.is_finite() {
            return Err(Error::InvalidExponentField {
                reason: format!("power beta = {beta} must be finite and > 1"),
            });
        }
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::InvalidRegularization { delta });
        }
        let exponent = ExponentField::new(p_min, eps, alpha)?;
        Ok(Self { exponent, delta, beta, with_cutoff: true })
    }

    /// Test hook: the same radial power without the cut-off, so that all
    /// ingredients are rotationally symmetric.
    pub fn pure_power(p_min: f64, eps: f64, alpha: f64, delta: f64, beta: f64) -> Result<Self> {
        let mut case = Self::new(p_min, eps, alpha, delta, beta)?;
        case.with_cutoff = false;
        Ok(case)
    }

    /// The exponent field of the case.
    pub fn exponent_field(&self) -> &ExponentField {
        &self.exponent
    }

    /// The regularization parameter.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    fn cutoff(&self, x: Pt2) -> f64 {
        if self.with_cutoff {
            (1.0 - x.x * x.x) * (1.0 - x.y * x.y)
        } else {
            1.0
        }
    }

    fn cutoff_grad(&self, x: Pt2) -> Vec2 {
        if self.with_cutoff {
            Vec2::new(
                -2.0 * x.x * (1.0 - x.y * x.y),
                -2.0 * x.y * (1.0 - x.x * x.x),
            )
        } else {
            Vec2::zeros()
        }
    }

    /// The exact solution `d(x) |x|^beta`.
    pub fn eval_u(&self, x: Pt2) -> f64 {
        self.cutoff(x) * x.coords.norm().powf(self.beta)
    }

    /// The exact gradient `grad d |x|^beta + d beta |x|^(beta-2) x`; the
    /// second term extends by zero at the origin (valid for `beta > 1`).
    pub fn eval_grad_u(&self, x: Pt2) -> Vec2 {
        let r = x.coords.norm();
        if r == 0.0 {
            return Vec2::zeros();
        }
        self.cutoff_grad(x) * r.powf(self.beta)
            + self.cutoff(x) * self.beta * r.powf(self.beta - 2.0) * x.coords
    }

    /// The exact flux `A(p(x), delta, grad u(x))` with the continuous
    /// exponent.
    pub fn eval_z(&self, x: Pt2) -> Vec2 {
        let kit = PhiKit::new(self.exponent.eval(x), self.delta)
            .expect("validated case parameters give an admissible exponent");
        kit.eval_a(self.eval_grad_u(x))
    }

    fn load_with_step(&self, x: Pt2, h: f64) -> f64 {
        let dx = Pt2::new(h, 0.0).coords;
        let dy = Pt2::new(0.0, h).coords;
        let dz1 = self.eval_z(x + dx).x - self.eval_z(x - dx).x;
        let dz2 = self.eval_z(x + dy).y - self.eval_z(x - dy).y;
        -(dz1 + dz2) / (2.0 * h)
    }

    /// The load `f(x) = -div A(p(x), delta, grad u(x))`, by central finite
    /// differences of the closed-form flux with step
    /// `max(1e-6, 1e-7 |x|)`. Deterministic; rejects the origin, where the
    /// divergence of the power term is not defined pointwise.
    pub fn eval_load(&self, x: Pt2) -> Result<f64> {
        let r = x.coords.norm();
        if r == 0.0 {
            return Err(Error::OriginEvaluation);
        }
        Ok(self.load_with_step(x, (1e-7 * r).max(1e-6)))
    }
}

/// Element loads for a case: mean of the load over each element by the
/// interior 3-point rule, whose nodes are strictly inside the element and
/// therefore never at the origin (a mesh vertex).
pub fn discretize_load(mesh: &Triangulation, case: &ManufacturedCase) -> Result<Vec<f64>> {
    let quad = SimplexQuadrature::degree2();
    let mut f_h = Vec::with_capacity(mesh.n_elements());
    for t in 0..mesh.n_elements() {
        let nodes = quad.physical_nodes(&mesh.element_vertices(t));
        let mut mean = 0.0;
        for (q, x) in nodes.iter().enumerate() {
            mean += quad.weights[q] * case.eval_load(*x)?;
        }
        f_h.push(mean);
    }
    Ok(f_h)
}

/// Squared primal error: quadrature sum of
/// `|F(p_T, delta, grad u_h|_T) - F(p_T, delta, g_exact(x_q))|^2` with the
/// element-frozen exponent in both arguments.
pub fn error_f(
    mesh: &Triangulation,
    metrics: &MeshMetrics,
    exponents: &ElementExponents,
    delta: f64,
    u_full: &[f64],
    exact_grad: impl Fn(Pt2) -> Vec2,
    quad: &SimplexQuadrature,
) -> Result<f64> {
    if u_full.len() != mesh.n_sides() {
        return Err(Error::FieldSizeMismatch {
            space: "side-midpoint",
            expected: mesh.n_sides(),
            got: u_full.len(),
        });
    }
    let mut total = 0.0;
    for t in 0..mesh.n_elements() {
        let kit = PhiKit::new(exponents.q[t], delta)?;
        let sides = mesh.side_of_element[t];
        let g = &metrics.grad_bary[t];
        let mut grad_h = Vec2::zeros();
        for i in 0..3 {
            grad_h += u_full[sides[i]] * (-2.0 * g[i]);
        }
        let f_h = kit.eval_f(grad_h);
        let nodes = quad.physical_nodes(&mesh.element_vertices(t));
        let mut elem = 0.0;
        for (q, x) in nodes.iter().enumerate() {
            elem += quad.weights[q] * (f_h - kit.eval_f(exact_grad(*x))).norm_squared();
        }
        total += metrics.area[t] * elem;
    }
    Ok(total)
}

/// Squared dual error: quadrature sum of
/// `|F*(p_T, delta, z_h(x_q)) - F*(p_T, delta, z_exact(x_q))|^2` with the
/// reconstructed normal-flux field evaluated pointwise.
pub fn error_fstar(
    mesh: &Triangulation,
    metrics: &MeshMetrics,
    exponents: &ElementExponents,
    delta: f64,
    g_rt0: &[f64],
    exact_flux: impl Fn(Pt2) -> Vec2,
    quad: &SimplexQuadrature,
) -> Result<f64> {
    if g_rt0.len() != mesh.n_sides() {
        return Err(Error::FieldSizeMismatch {
            space: "normal-flux",
            expected: mesh.n_sides(),
            got: g_rt0.len(),
        });
    }
    let mut total = 0.0;
    for t in 0..mesh.n_elements() {
        let kit = PhiKit::new(exponents.q[t], delta)?;
        let nodes = quad.physical_nodes(&mesh.element_vertices(t));
        let mut elem = 0.0;
        for (q, x) in nodes.iter().enumerate() {
            let z_h = rt0_evaluate(mesh, metrics, g_rt0, t, *x);
            elem += quad.weights[q]
                * (kit.eval_fstar(z_h) - kit.eval_fstar(exact_flux(*x))).norm_squared();
        }
        total += metrics.area[t] * elem;
    }
    Ok(total)
}

/// Experimental orders of convergence by the literal formula
/// `log(e_k / e_{k-1}) / log(h_k / h_{k-1})`. The first level and any level
/// with a non-positive error get `None` (an undefined marker, not an
/// error).
pub fn eoc(errors: &[f64], hs: &[f64]) -> Vec<Option<f64>> {
    assert_eq!(errors.len(), hs.len(), "one mesh size per error value");
    let mut out = vec![None; errors.len()];
    for k in 1..errors.len() {
        if errors[k] > 0.0 && errors[k - 1] > 0.0 {
            out[k] = Some((errors[k] / errors[k - 1]).ln() / (hs[k] / hs[k - 1]).ln());
        }
    }
    out
}

/// Parameters of a study run. The defaults reproduce the main experiment
/// grid at desk scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    /// Base exponents `p_min` to sweep.
    pub p_min: Vec<f64>,
    /// Growth powers `alpha` to sweep.
    pub alpha: Vec<f64>,
    /// Growth amplitudes `eps` to sweep.
    pub eps: Vec<f64>,
    /// Regularization parameter.
    pub delta: f64,
    /// Power of the manufactured solution.
    pub beta: f64,
    /// Number of refinement levels (level 1 is the initial mesh).
    pub levels: u32,
    /// Initial criss-cross subdivisions per direction.
    pub n0: usize,
    /// Newton solver parameters.
    pub solver: SolverConfig,
    /// Seed for randomized verification suites built on top of the study.
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            p_min: vec![1.5, 2.0, 2.5],
            alpha: vec![0.1, 0.25, 0.5, 1.0],
            eps: vec![1.0],
            delta: 1e-4,
            beta: 1.01,
            levels: 6,
            n0: 2,
            solver: SolverConfig::default(),
            seed: 7,
        }
    }
}

impl StudyConfig {
    /// Checks every parameter is in its admissible range.
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::ParseError {
                what: "study config",
                reason: "levels must be >= 1".into(),
            });
        }
        if self.n0 < 1 {
            return Err(Error::ParseError {
                what: "study config",
                reason: "n0 must be >= 1".into(),
            });
        }
        if self.p_min.is_empty() || self.alpha.is_empty() || self.eps.is_empty() {
            return Err(Error::ParseError {
                what: "study config",
                reason: "parameter lists must be non-empty".into(),
            });
        }
        for (&p, (&a, &e)) in self
            .p_min
            .iter()
            .flat_map(|p| self.alpha.iter().map(move |a| (p, a)))
            .flat_map(|(p, a)| self.eps.iter().map(move |e| (p, (a, e))))
        {
            ManufacturedCase::new(p, e, a, self.delta, self.beta)?;
        }
        self.solver.validate()?;
        Ok(())
    }
}

/// One level of a convergence report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelRow {
    pub level: u32,
    /// Largest element diameter; exactly halved between levels.
    pub h: f64,
    pub n_elements: usize,
    /// Free side-midpoint unknowns.
    pub n_dofs: usize,
    /// Squared primal natural-distance error.
    pub error_f: f64,
    /// Squared dual natural-distance error.
    pub error_fstar: f64,
    /// Order of the unsquared primal error (`None` on the first level).
    pub eoc_f: Option<f64>,
    /// Order of the unsquared dual error (`None` on the first level).
    pub eoc_fstar: Option<f64>,
    pub newton_iters: usize,
    pub converged: bool,
    /// Relative duality gap `|I - D| / (|I| + |D| + 1)`.
    pub relative_gap: f64,
    pub div_residual: f64,
    pub projection_residual: f64,
    pub normal_jump_residual: f64,
    pub fenchel_young_residual: f64,
    /// All audit residuals within their tolerances.
    pub audit_pass: bool,
}

/// Per-parameter-triple convergence history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub p_min: f64,
    pub alpha: f64,
    pub eps: f64,
    pub rows: Vec<LevelRow>,
    /// Present when a level failed to converge; remaining levels are
    /// skipped.
    pub failure: Option<String>,
}

impl ConvergenceReport {
    /// True when every completed level converged and none failed.
    pub fn all_converged(&self) -> bool {
        self.failure.is_none() && self.rows.iter().all(|r| r.converged)
    }

    /// True when every completed level passed its duality audit.
    pub fn all_audits_pass(&self) -> bool {
        self.rows.iter().all(|r| r.audit_pass)
    }
}

/// Prolongs a full side-midpoint field to the red-refined mesh by
/// evaluating the coarse element polynomial at each fine side midpoint
/// (the fine side's first adjacent element selects the coarse element).
pub fn prolong_cr(
    coarse: &Triangulation,
    coarse_metrics: &MeshMetrics,
    fine: &Triangulation,
    fine_metrics: &MeshMetrics,
    u_coarse_full: &[f64],
) -> Result<Vec<f64>> {
    if u_coarse_full.len() != coarse.n_sides() {
        return Err(Error::FieldSizeMismatch {
            space: "side-midpoint",
            expected: coarse.n_sides(),
            got: u_coarse_full.len(),
        });
    }
    let mut u_fine = vec![0.0; fine.n_sides()];
    for s in 0..fine.n_sides() {
        let parent = fine.parent_of_element[fine.elements_of_side[s].0];
        u_fine[s] = cr_value(
            coarse,
            coarse_metrics,
            u_coarse_full,
            parent,
            fine_metrics.midpoint_side[s],
        );
    }
    Ok(u_fine)
}

struct LevelState {
    mesh: Triangulation,
    metrics: MeshMetrics,
}

/// Runs the full study: for every `(eps, p_min, alpha)` triple, refine from
/// the initial mesh through `levels`, solve with nested-mesh warm starts,
/// reconstruct the dual flux, audit, and measure both errors. Solver
/// failure at a level annotates the report and skips to the next triple.
/// The whole pipeline is deterministic.
pub fn run_study(config: &StudyConfig) -> Result<Vec<ConvergenceReport>> {
    config.validate()?;
    let quad = SimplexQuadrature::degree8();

    // Meshes are shared across triples; build the hierarchy once.
    let mut hierarchy: Vec<LevelState> = Vec::with_capacity(config.levels as usize);
    let mut mesh = build_criss_cross(config.n0, Rect::symmetric_unit(), DirichletSelector::All)?;
    for k in 1..=config.levels {
        if k > 1 {
            mesh = red_refine(&mesh);
        }
        let metrics = compute_metrics(&mesh);
        hierarchy.push(LevelState { mesh: mesh.clone(), metrics });
    }

    let mut reports = Vec::new();
    for &eps in &config.eps {
        for &p_min in &config.p_min {
            for &alpha in &config.alpha {
                reports.push(run_triple(config, &hierarchy, &quad, p_min, alpha, eps)?);
            }
        }
    }
    Ok(reports)
}

fn run_triple(
    config: &StudyConfig,
    hierarchy: &[LevelState],
    quad: &SimplexQuadrature,
    p_min: f64,
    alpha: f64,
    eps: f64,
) -> Result<ConvergenceReport> {
    let case = ManufacturedCase::new(p_min, eps, alpha, config.delta, config.beta)?;
    let mut report =
        ConvergenceReport { p_min, alpha, eps, rows: Vec::new(), failure: None };
    let mut errors_f = Vec::new();
    let mut errors_fstar = Vec::new();
    let mut hs = Vec::new();
    let mut previous: Option<Vec<f64>> = None;

    for (idx, state) in hierarchy.iter().enumerate() {
        let level = idx as u32 + 1;
        let mesh = &state.mesh;
        let metrics = &state.metrics;
        let spaces = build_spaces(mesh);
        let exponents = discretize_exponent(metrics, case.exponent_field());
        let f_h = discretize_load(mesh, &case)?;
        let system =
            CrSystem::new(mesh, metrics, &spaces, &exponents, config.delta, f_h.clone())?;

        let u0_free = match &previous {
            None => vec![0.0; system.dim()],
            Some(u_coarse) => {
                let coarse = &hierarchy[idx - 1];
                let prolonged =
                    prolong_cr(&coarse.mesh, &coarse.metrics, mesh, metrics, u_coarse)?;
                system.free_from_full(&prolonged)
            }
        };

        let (u_free, solve) = match newton_solve(&system, &config.solver, &u0_free) {
            Ok(pair) => pair,
            Err(Error::NewtonDidNotConverge { reason, .. }) => {
                report.failure =
                    Some(format!("level {level}: Newton did not converge ({reason})"));
                return Ok(report);
            }
            Err(other) => return Err(other),
        };
        let u_full = system.full_from_free(&u_free);

        let flux = marini_flux(mesh, metrics, &exponents, config.delta, &u_full, &f_h)?;
        let audit_result = audit(mesh, metrics, &exponents, config.delta, &u_full, &flux, &f_h)?;
        let z_rt0 = flux.to_rt0(mesh, metrics);

        let e_f = error_f(
            mesh,
            metrics,
            &exponents,
            config.delta,
            &u_full,
            |x| case.eval_grad_u(x),
            quad,
        )?;
        let e_fstar = error_fstar(
            mesh,
            metrics,
            &exponents,
            config.delta,
            &z_rt0,
            |x| case.eval_z(x),
            quad,
        )?;

        let f_scale = f_h.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let a_scale = flux.cell_value.iter().map(Vec2::norm).fold(0.0, f64::max);
        let audit_pass = audit_result.passes(f_scale, a_scale);

        errors_f.push(e_f);
        errors_fstar.push(e_fstar);
        hs.push(metrics.h_max);
        report.rows.push(LevelRow {
            level,
            h: metrics.h_max,
            n_elements: mesh.n_elements(),
            n_dofs: system.dim(),
            error_f: e_f,
            error_fstar: e_fstar,
            eoc_f: None,
            eoc_fstar: None,
            newton_iters: solve.iterations,
            converged: solve.converged,
            relative_gap: audit_result.relative_gap,
            div_residual: audit_result.div_residual,
            projection_residual: audit_result.projection_residual,
            normal_jump_residual: audit_result.normal_jump_residual,
            fenchel_young_residual: audit_result.fenchel_young_residual,
            audit_pass,
        });
        previous = Some(u_full);
    }

    // Tabulated orders follow the unsquared error norm.
    let unsquared_f: Vec<f64> = errors_f.iter().map(|e| e.max(0.0).sqrt()).collect();
    let unsquared_fstar: Vec<f64> = errors_fstar.iter().map(|e| e.max(0.0).sqrt()).collect();
    for (row, rate) in report.rows.iter_mut().zip(eoc(&unsquared_f, &hs)) {
        row.eoc_f = rate;
    }
    for (row, rate) in report.rows.iter_mut().zip(eoc(&unsquared_fstar, &hs)) {
        row.eoc_fstar = rate;
    }
    Ok(report)
}

fn push_float(out: &mut String, v: f64) {
    let _ = write!(out, "{v:?}");
}

fn push_optional(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        let _ = write!(out, "{v:?}");
    }
}

/// Serializes reports as CSV with one row per (triple, level). Formatting
/// uses the shortest round-trip float representation, so equal runs give
/// byte-identical output.
pub fn to_csv(reports: &[ConvergenceReport]) -> String {
    let mut out = String::from(
        "eps,p_min,alpha,level,h,n_elements,n_dofs,e_f,e_fstar,eoc_f,eoc_fstar,\
         newton_iters,converged,gap_rel,div_res,proj_res,jump_res,fy_res,audit_pass\n",
    );
    for report in reports {
        for row in &report.rows {
            push_float(&mut out, report.eps);
            out.push(',');
            push_float(&mut out, report.p_min);
            out.push(',');
            push_float(&mut out, report.alpha);
            let _ = write!(out, ",{},", row.level);
            push_float(&mut out, row.h);
            let _ = write!(out, ",{},{},", row.n_elements, row.n_dofs);
            push_float(&mut out, row.error_f);
            out.push(',');
            push_float(&mut out, row.error_fstar);
            out.push(',');
            push_optional(&mut out, row.eoc_f);
            out.push(',');
            push_optional(&mut out, row.eoc_fstar);
            let _ = write!(out, ",{},{},", row.newton_iters, row.converged);
            push_float(&mut out, row.relative_gap);
            out.push(',');
            push_float(&mut out, row.div_residual);
            out.push(',');
            push_float(&mut out, row.projection_residual);
            out.push(',');
            push_float(&mut out, row.normal_jump_residual);
            out.push(',');
            push_float(&mut out, row.fenchel_young_residual);
            let _ = writeln!(out, ",{}", row.audit_pass);
        }
    }
    out
}

fn fmt_eoc(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.3}"),
        None => "—".to_string(),
    }
}

/// Renders reports as human-readable Markdown tables, one per parameter
/// triple.
pub fn to_markdown(reports: &[ConvergenceReport]) -> String {
    let mut out = String::new();
    for report in reports {
        let _ = writeln!(
            out,
            "## eps = {}, p_min = {}, alpha = {}\n",
            report.eps, report.p_min, report.alpha
        );
        out.push_str(
            "| k | h | n_T | e_F | EOC(F) | e_F* | EOC(F*) | iters | rel. gap |\n\
             |---|---|-----|-----|--------|------|---------|-------|----------|\n",
        );
        for row in &report.rows {
            let _ = writeln!(
                out,
                "| {} | {:.4} | {} | {:.4e} | {} | {:.4e} | {} | {} | {:.2e} |",
                row.level,
                row.h,
                row.n_elements,
                row.error_f,
                fmt_eoc(row.eoc_f),
                row.error_fstar,
                fmt_eoc(row.eoc_fstar),
                row.newton_iters,
                row.relative_gap,
            );
        }
        if let Some(failure) = &report.failure {
            let _ = writeln!(out, "\n**failed:** {failure}");
        }
        out.push('\n');
    }
    out
}
