//! Assembly and damped-Newton solution of the discrete primal problem, for
//! the nonconforming side-midpoint space and, for comparison, the conforming
//! vertex space.
//!
//! The discrete Euler–Lagrange system on free DOFs `S` reads
//!
//! ```text
//! R_S(u) = sum_T |T| [ A_T(grad u|_T) . grad basis_S|_T  -  f_T <basis_S>_T ] = 0,
//! ```
//!
//! with the kernel frozen at one exponent per element. `R` is the exact
//! gradient of the discrete energy, its Jacobian is symmetric and positive
//! definite for `delta > 0`, and Newton directions from the conjugate-gradient
//! solve are descent directions for the merit function `|R|^2 / 2`; Armijo
//! backtracking makes the iteration globally convergent in practice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::Spaces;
use crate::mesh::{MeshMetrics, Pt2, Triangulation, Vec2};
use crate::nfunction::{ElementExponents, PhiKit};
use crate::quadrature::SimplexQuadrature;
use crate::sparse::{pcg_jacobi, CsrMatrix};

/// Tolerances and line-search constants for the damped Newton iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stop when the residual norm falls below this value.
    pub abs_tol: f64,
    /// ... or below this multiple of the initial residual norm.
    pub rel_tol: f64,
    /// Iteration budget for Newton steps.
    pub max_newton_iters: usize,
    /// Armijo sufficient-decrease factor for the merit `|R|^2 / 2`.
    pub armijo_slope: f64,
    /// Step-size reduction per backtrack.
    pub backtrack_ratio: f64,
    /// Backtracks per step before declaring stagnation.
    pub max_backtracks: usize,
    /// Relative tolerance of the inner conjugate-gradient solves.
    pub linear_rel_tol: f64,
    /// Iteration budget of the inner solves.
    pub max_linear_iters: usize,
    /// Extra full Newton steps taken after the stopping rule first holds,
    /// each kept only if it reduces the residual. They push the residual
    /// well below the threshold, which the duality audits rely on.
    pub polish_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            abs_tol: 1e-8,
            rel_tol: 1e-10,
            max_newton_iters: 50,
            armijo_slope: 1e-4,
            backtrack_ratio: 0.5,
            max_backtracks: 30,
            linear_rel_tol: 1e-6,
            max_linear_iters: 20_000,
            polish_steps: 1,
        }
    }
}

impl SolverConfig {
    /// Checks that tolerances are positive and ratios lie in `(0, 1)`.
    pub fn validate(&self) -> Result<()> {
        let ok = self.abs_tol > 0.0
            && self.rel_tol > 0.0
            && self.max_newton_iters > 0
            && self.armijo_slope > 0.0
            && self.armijo_slope < 1.0
            && self.backtrack_ratio > 0.0
            && self.backtrack_ratio < 1.0
            && self.max_backtracks > 0
            && self.linear_rel_tol > 0.0
            && self.max_linear_iters > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::ParseError {
                what: "solver configuration",
                reason: "tolerances must be positive and ratios in (0, 1)".into(),
            })
        }
    }
}

/// Convergence record of one Newton solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Whether the stopping rule was met.
    pub converged: bool,
    /// Accepted Newton steps (excluding polish steps).
    pub iterations: usize,
    /// Residual norm at the initial guess.
    pub initial_residual: f64,
    /// Residual norm at the returned iterate.
    pub final_residual: f64,
    /// `final_residual / initial_residual` (1 if the start was converged).
    pub relative_residual: f64,
    /// Residual norm after each accepted step.
    pub residual_history: Vec<f64>,
    /// Energy after each accepted step (starting value first).
    pub energy_history: Vec<f64>,
    /// Accepted line-search step size per Newton step.
    pub step_sizes: Vec<f64>,
    /// Total line-search halvings over all steps.
    pub backtracks_total: usize,
    /// Total inner conjugate-gradient iterations.
    pub linear_iterations_total: usize,
    /// Polish steps that were kept.
    pub polish_steps_applied: usize,
}

/// A nonlinear system with energy, residual (its exact gradient) and a
/// symmetric Jacobian, over a free-DOF vector.
pub trait NewtonSystem {
    /// Number of free DOFs.
    fn dim(&self) -> usize;
    /// Residual vector at `u`.
    fn residual(&self, u: &[f64]) -> Vec<f64>;
    /// Fills the Jacobian values at `u` into a matrix with the pattern from
    /// [`NewtonSystem::jacobian_pattern`].
    fn jacobian_into(&self, u: &[f64], mat: &mut CsrMatrix) -> Result<()>;
    /// Zero matrix with the Jacobian sparsity pattern.
    fn jacobian_pattern(&self) -> CsrMatrix;
    /// The energy whose gradient the residual is.
    fn energy(&self, u: &[f64]) -> f64;
}

/// The discrete primal problem on the nonconforming side-midpoint space:
/// per-element frozen exponent, element-mean load, Dirichlet sides clamped.
pub struct CrSystem<'a> {
    mesh: &'a Triangulation,
    metrics: &'a MeshMetrics,
    spaces: &'a Spaces,
    kits: Vec<PhiKit>,
    /// Element means of the load.
    f_h: Vec<f64>,
}

impl<'a> CrSystem<'a> {
    /// Builds the system; `exponents` and `f_h` are per element.
    pub fn new(
        mesh: &'a Triangulation,
        metrics: &'a MeshMetrics,
        spaces: &'a Spaces,
        exponents: &ElementExponents,
        delta: f64,
        f_h: Vec<f64>,
    ) -> Result<Self> {
        if exponents.q.len() != mesh.n_elements() {
            return Err(Error::FieldSizeMismatch {
                space: "element exponent",
                expected: mesh.n_elements(),
                got: exponents.q.len(),
            });
        }
        if f_h.len() != mesh.n_elements() {
            return Err(Error::FieldSizeMismatch {
                space: "element load",
                expected: mesh.n_elements(),
                got: f_h.len(),
            });
        }
        let kits = exponents
            .q
            .iter()
            .map(|&q| PhiKit::new(q, delta))
            .collect::<Result<_>>()?;
        Ok(CrSystem { mesh, metrics, spaces, kits, f_h })
    }

    /// Expands a free-DOF vector to a full side vector with clamped
    /// Dirichlet entries.
    pub fn full_from_free(&self, u: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.mesh.n_sides()];
        for (k, &s) in self.spaces.cr_free.iter().enumerate() {
            full[s] = u[k];
        }
        full
    }

    /// Restricts a full side vector to the free DOFs.
    pub fn free_from_full(&self, full: &[f64]) -> Vec<f64> {
        self.spaces.cr_free.iter().map(|&s| full[s]).collect()
    }

    /// Element gradients of the expanded field.
    fn element_gradients(&self, full: &[f64]) -> Vec<Vec2> {
        let mut grads = Vec::with_capacity(self.mesh.n_elements());
        for t in 0..self.mesh.n_elements() {
            let sides = self.mesh.side_of_element[t];
            let g = &self.metrics.grad_bary[t];
            let mut grad = Vec2::zeros();
            for i in 0..3 {
                grad += full[sides[i]] * (-2.0 * g[i]);
            }
            grads.push(grad);
        }
        grads
    }

    /// The element loads.
    pub fn load(&self) -> &[f64] {
        &self.f_h
    }
}

impl NewtonSystem for CrSystem<'_> {
    fn dim(&self) -> usize {
        self.spaces.cr_free.len()
    }

    fn residual(&self, u: &[f64]) -> Vec<f64> {
        let full = self.full_from_free(u);
        let grads = self.element_gradients(&full);
        let mut r = vec![0.0; self.dim()];
        for t in 0..self.mesh.n_elements() {
            let area = self.metrics.area[t];
            let a = self.kits[t].eval_a(grads[t]);
            let f_term = self.f_h[t] / 3.0;
            let sides = self.mesh.side_of_element[t];
            let g = &self.metrics.grad_bary[t];
            for i in 0..3 {
                let k = self.spaces.cr_free_index[sides[i]];
                if k != usize::MAX {
                    r[k] += area * (a.dot(&(-2.0 * g[i])) - f_term);
                }
            }
        }
        r
    }

    fn jacobian_into(&self, u: &[f64], mat: &mut CsrMatrix) -> Result<()> {
        let full = self.full_from_free(u);
        let grads = self.element_gradients(&full);
        mat.zero_values();
        for t in 0..self.mesh.n_elements() {
            let area = self.metrics.area[t];
            let da = self.kits[t].eval_da(grads[t])?;
            let sides = self.mesh.side_of_element[t];
            let g = &self.metrics.grad_bary[t];
            let basis: [Vec2; 3] = [-2.0 * g[0], -2.0 * g[1], -2.0 * g[2]];
            for i in 0..3 {
                let ki = self.spaces.cr_free_index[sides[i]];
                if ki == usize::MAX {
                    continue;
                }
                // Assemble the upper triangle and mirror, so the matrix is
                // symmetric to the last bit.
                for j in i..3 {
                    let kj = self.spaces.cr_free_index[sides[j]];
                    if kj == usize::MAX {
                        continue;
                    }
                    let v = area * basis[i].dot(&(da * basis[j]));
                    mat.add_at(ki, kj, v);
                    if ki != kj {
                        mat.add_at(kj, ki, v);
                    }
                }
            }
        }
        Ok(())
    }

    fn jacobian_pattern(&self) -> CsrMatrix {
        let n = self.dim();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for t in 0..self.mesh.n_elements() {
            let sides = self.mesh.side_of_element[t];
            for &si in &sides {
                let ki = self.spaces.cr_free_index[si];
                if ki == usize::MAX {
                    continue;
                }
                for &sj in &sides {
                    let kj = self.spaces.cr_free_index[sj];
                    if kj != usize::MAX {
                        rows[ki].push(kj);
                    }
                }
            }
        }
        CsrMatrix::from_pattern(rows)
    }

    fn energy(&self, u: &[f64]) -> f64 {
        let full = self.full_from_free(u);
        let grads = self.element_gradients(&full);
        let mut total = 0.0;
        for t in 0..self.mesh.n_elements() {
            let sides = self.mesh.side_of_element[t];
            let mean = (full[sides[0]] + full[sides[1]] + full[sides[2]]) / 3.0;
            total += self.metrics.area[t]
                * (self.kits[t].eval_phi(grads[t].norm()) - self.f_h[t] * mean);
        }
        total
    }
}

/// The conforming comparison problem on the vertex space. The load pairs the
/// point-evaluable right-hand side with the vertex basis by quadrature (not
/// with its element means).
pub struct P1System<'a> {
    mesh: &'a Triangulation,
    metrics: &'a MeshMetrics,
    kits: Vec<PhiKit>,
    /// Free vertices in vertex order.
    free: Vec<usize>,
    /// Inverse map; `usize::MAX` for clamped vertices.
    free_index: Vec<usize>,
    /// Load functional per free vertex.
    load: Vec<f64>,
}

impl<'a> P1System<'a> {
    /// Builds the system, integrating `f` against the vertex basis with the
    /// given rule.
    pub fn new(
        mesh: &'a Triangulation,
        metrics: &'a MeshMetrics,
        spaces: &'a Spaces,
        exponents: &ElementExponents,
        delta: f64,
        f: impl Fn(Pt2) -> f64,
        quad: &SimplexQuadrature,
    ) -> Result<Self> {
        if exponents.q.len() != mesh.n_elements() {
            return Err(Error::FieldSizeMismatch {
                space: "element exponent",
                expected: mesh.n_elements(),
                got: exponents.q.len(),
            });
        }
        let kits: Vec<PhiKit> = exponents
            .q
            .iter()
            .map(|&q| PhiKit::new(q, delta))
            .collect::<Result<_>>()?;
        let mut free = Vec::new();
        let mut free_index = vec![usize::MAX; mesh.n_vertices()];
        for v in 0..mesh.n_vertices() {
            if !spaces.p1_dirichlet[v] {
                free_index[v] = free.len();
                free.push(v);
            }
        }
        let mut load = vec![0.0; free.len()];
        for t in 0..mesh.n_elements() {
            let verts = mesh.elements[t];
            let p = mesh.element_vertices(t);
            let area = metrics.area[t];
            let nodes = quad.physical_nodes(&p);
            let f_vals: Vec<f64> = nodes.iter().map(|&x| f(x)).collect();
            for i in 0..3 {
                let k = free_index[verts[i]];
                if k == usize::MAX {
                    continue;
                }
                let mut acc = 0.0;
                for (q, &[l0, l1, l2]) in quad.nodes.iter().enumerate() {
                    let lambda = [l0, l1, l2][i];
                    acc += quad.weights[q] * f_vals[q] * lambda;
                }
                load[k] += area * acc;
            }
        }
        Ok(P1System { mesh, metrics, kits, free, free_index, load })
    }

    /// Expands a free vector to a full vertex vector with clamped boundary.
    pub fn full_from_free(&self, u: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.mesh.n_vertices()];
        for (k, &v) in self.free.iter().enumerate() {
            full[v] = u[k];
        }
        full
    }

    fn element_gradients(&self, full: &[f64]) -> Vec<Vec2> {
        let mut grads = Vec::with_capacity(self.mesh.n_elements());
        for t in 0..self.mesh.n_elements() {
            let verts = self.mesh.elements[t];
            let g = &self.metrics.grad_bary[t];
            let mut grad = Vec2::zeros();
            for i in 0..3 {
                grad += full[verts[i]] * g[i];
            }
            grads.push(grad);
        }
        grads
    }
}

impl NewtonSystem for P1System<'_> {
    fn dim(&self) -> usize {
        self.free.len()
    }

    fn residual(&self, u: &[f64]) -> Vec<f64> {
        let full = self.full_from_free(u);
        let grads = self.element_gradients(&full);
        let mut r: Vec<f64> = self.load.iter().map(|&l| -l).collect();
        for t in 0..self.mesh.n_elements() {
            let area = self.metrics.area[t];
            let a = self.kits[t].eval_a(grads[t]);
            let verts = self.mesh.elements[t];
            let g = &self.metrics.grad_bary[t];
            for i in 0..3 {
                let k = self.free_index[verts[i]];
                if k != usize::MAX {
                    r[k] += area * a.dot(&g[i]);
                }
            }
        }
        r
    }

    fn jacobian_into(&self, u: &[f64], mat: &mut CsrMatrix) -> Result<()> {
        let full = self.full_from_free(u);
        let grads = self.element_gradients(&full);
        mat.zero_values();
        for t in 0..self.mesh.n_elements() {
            let area = self.metrics.area[t];
            let da = self.kits[t].eval_da(grads[t])?;
            let verts = self.mesh.elements[t];
            let g = &self.metrics.grad_bary[t];
            for i in 0..3 {
                let ki = self.free_index[verts[i]];
                if ki == usize::MAX {
                    continue;
                }
                for j in i..3 {
                    let kj = self.free_index[verts[j]];
                    if kj == usize::MAX {
                        continue;
                    }
                    let v = area * g[i].dot(&(da * g[j]));
                    mat.add_at(ki, kj, v);
                    if ki != kj {
                        mat.add_at(kj, ki, v);
                    }
                }
            }
        }
        Ok(())
    }

    fn jacobian_pattern(&self) -> CsrMatrix {
        let n = self.dim();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for t in 0..self.mesh.n_elements() {
            let verts = self.mesh.elements[t];
            for &vi in &verts {
                let ki = self.free_index[vi];
                if ki == usize::MAX {
                    continue;
                }
                for &vj in &verts {
                    let kj = self.free_index[vj];
                    if kj != usize::MAX {
                        rows[ki].push(kj);
                    }
                }
            }
        }
        CsrMatrix::from_pattern(rows)
    }

    fn energy(&self, u: &[f64]) -> f64 {
        let full = self.full_from_free(u);
        let grads = self.element_gradients(&full);
        let mut total = 0.0;
        for t in 0..self.mesh.n_elements() {
            total += self.metrics.area[t] * self.kits[t].eval_phi(grads[t].norm());
        }
        for (k, &l) in self.load.iter().enumerate() {
            total -= l * u[k];
        }
        total
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton iteration with Armijo backtracking on `|R|^2 / 2`,
/// stopping at `|R| <= abs_tol` or `|R| <= rel_tol |R(u0)|`. After the rule
/// first holds, up to `polish_steps` extra full steps are taken while they
/// keep reducing the residual. Non-convergence within the budgets is an
/// error carrying the report.
pub fn newton_solve<S: NewtonSystem>(
    system: &S,
    config: &SolverConfig,
    u0: &[f64],
) -> Result<(Vec<f64>, SolveReport)> {
    config.validate()?;
    if u0.len() != system.dim() {
        return Err(Error::FieldSizeMismatch {
            space: "free DOF",
            expected: system.dim(),
            got: u0.len(),
        });
    }

    let mut u = u0.to_vec();
    let mut r = system.residual(&u);
    let initial_residual = norm2(&r);
    let mut report = SolveReport {
        converged: false,
        iterations: 0,
        initial_residual,
        final_residual: initial_residual,
        relative_residual: 1.0,
        residual_history: Vec::new(),
        energy_history: vec![system.energy(&u)],
        step_sizes: Vec::new(),
        backtracks_total: 0,
        linear_iterations_total: 0,
        polish_steps_applied: 0,
    };
    let target = |r0: f64| config.abs_tol.max(config.rel_tol * r0);
    let mut mat = system.jacobian_pattern();

    let mut full_step = |u: &mut Vec<f64>,
                         r: &mut Vec<f64>,
                         report: &mut SolveReport|
     -> Result<(Vec<f64>, Vec<f64>)> {
        // One linear solve J d = -R; returns (direction, J r) for slope use.
        system.jacobian_into(u, &mut mat)?;
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let lin = pcg_jacobi(&mat, &rhs, config.linear_rel_tol, config.max_linear_iters)?;
        report.linear_iterations_total += lin.iterations;
        let mut jr = vec![0.0; r.len()];
        mat.matvec(r, &mut jr);
        Ok((lin.x, jr))
    };

    if initial_residual > target(initial_residual) && initial_residual > config.abs_tol {
        for _ in 0..config.max_newton_iters {
            let (d, jr) = full_step(&mut u, &mut r, &mut report)?;
            // Exact slope of the merit m = |R|^2/2 along d is d . (J R).
            let slope: f64 = d.iter().zip(&jr).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                return Err(Error::NewtonDidNotConverge {
                    reason: format!("search direction is not a descent direction (slope {slope:.3e})"),
                    report: Box::new(report),
                });
            }
            let merit0 = 0.5 * norm2(&r).powi(2);
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..=config.max_backtracks {
                let trial: Vec<f64> =
                    u.iter().zip(&d).map(|(ui, di)| ui + step * di).collect();
                let r_trial = system.residual(&trial);
                let merit = 0.5 * norm2(&r_trial).powi(2);
                if merit <= merit0 + config.armijo_slope * step * slope {
                    u = trial;
                    r = r_trial;
                    accepted = true;
                    break;
                }
                step *= config.backtrack_ratio;
                report.backtracks_total += 1;
            }
            if !accepted {
                report.final_residual = norm2(&r);
                report.relative_residual = report.final_residual / initial_residual;
                return Err(Error::NewtonDidNotConverge {
                    reason: format!(
                        "line search stagnated after {} halvings at iteration {}",
                        config.max_backtracks,
                        report.iterations + 1
                    ),
                    report: Box::new(report),
                });
            }
            report.iterations += 1;
            report.step_sizes.push(step);
            let rn = norm2(&r);
            report.residual_history.push(rn);
            report.energy_history.push(system.energy(&u));
            if rn <= target(initial_residual) {
                break;
            }
            if report.iterations == config.max_newton_iters {
                report.final_residual = rn;
                report.relative_residual = rn / initial_residual;
                return Err(Error::NewtonDidNotConverge {
                    reason: format!(
                        "residual {rn:.3e} above tolerance after {} iterations",
                        config.max_newton_iters
                    ),
                    report: Box::new(report),
                });
            }
        }
    }

    // Polish: full steps kept only while the residual decreases.
    for _ in 0..config.polish_steps {
        let rn_before = norm2(&r);
        if rn_before == 0.0 {
            break;
        }
        let (d, _) = full_step(&mut u, &mut r, &mut report)?;
        let trial: Vec<f64> = u.iter().zip(&d).map(|(ui, di)| ui + di).collect();
        let r_trial = system.residual(&trial);
        if norm2(&r_trial) < rn_before {
            u = trial;
            r = r_trial;
            report.polish_steps_applied += 1;
            report.residual_history.push(norm2(&r));
            report.energy_history.push(system.energy(&u));
        } else {
            break;
        }
    }

    report.converged = true;
    report.final_residual = norm2(&r);
    report.relative_residual = if initial_residual > 0.0 {
        report.final_residual / initial_residual
    } else {
        0.0
    };
    Ok((u, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::build_spaces;
    use crate::mesh::{build_criss_cross, compute_metrics, red_refine, DirichletSelector, Rect};
    use crate::nfunction::{discretize_exponent, ExponentField};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Setup {
        mesh: Triangulation,
        metrics: MeshMetrics,
        spaces: Spaces,
    }

    fn setup(levels: u32) -> Setup {
        let mut mesh =
            build_criss_cross(2, Rect::symmetric_unit(), DirichletSelector::All).unwrap();
        for _ in 1..levels {
            mesh = red_refine(&mesh);
        }
        let metrics = compute_metrics(&mesh);
        let spaces = build_spaces(&mesh);
        Setup { mesh, metrics, spaces }
    }

    fn constant_exponents(n: usize, q: f64) -> ElementExponents {
        ElementExponents { q: vec![q; n] }
    }

    fn variable_exponents(s: &Setup, p_min: f64, alpha: f64) -> ElementExponents {
        let field = ExponentField::new(p_min, 1.0, alpha).unwrap();
        discretize_exponent(&s.metrics, &field)
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn zero_is_the_residual_of_the_homogeneous_problem() {
        let s = setup(2);
        let q = constant_exponents(s.mesh.n_elements(), 2.5);
        let sys = CrSystem::new(&s.mesh, &s.metrics, &s.spaces, &q, 1e-4, vec![0.0; s.mesh.n_elements()])
            .unwrap();
        let r = sys.residual(&vec![0.0; sys.dim()]);
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quadratic_case_is_linear_in_u() {
        // For exponent 2 and no regularization the residual is affine:
        // R(u + v) - R(u) - R(v) + R(0) = 0 exactly.
        let s = setup(2);
        let q = constant_exponents(s.mesh.n_elements(), 2.0);
        let f_h = vec![1.0; s.mesh.n_elements()];
        let sys = CrSystem::new(&s.mesh, &s.metrics, &s.spaces, &q, 0.0, f_h).unwrap();
        let u = random_vec(sys.dim(), 1);
        let v = random_vec(sys.dim(), 2);
        let uv: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
        let r_uv = sys.residual(&uv);
        let r_u = sys.residual(&u);
        let r_v = sys.residual(&v);
        let r_0 = sys.residual(&vec![0.0; sys.dim()]);
        for k in 0..sys.dim() {
            let defect = r_uv[k] - r_u[k] - r_v[k] + r_0[k];
            assert!(defect.abs() < 1e-12, "DOF {k}: defect {defect}");
        }
    }

    #[test]
    fn residual_is_the_gradient_of_the_energy() {
        let s = setup(1);
        let q = variable_exponents(&s, 1.5, 1.0);
        let f_h = vec![0.7; s.mesh.n_elements()];
        let sys = CrSystem::new(&s.mesh, &s.metrics, &s.spaces, &q, 1e-4, f_h).unwrap();
        let u = random_vec(sys.dim(), 3);
        let r = sys.residual(&u);
        let h = 1e-6;
        for k in 0..sys.dim() {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (sys.energy(&up) - sys.energy(&dn)) / (2.0 * h);
            assert!(
                (fd - r[k]).abs() <= 1e-6 * (1.0 + r[k].abs()),
                "DOF {k}: fd {fd} vs residual {}",
                r[k]
            );
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let s = setup(1);
        let q = variable_exponents(&s, 2.5, 0.5);
        let sys =
            CrSystem::new(&s.mesh, &s.metrics, &s.spaces, &q, 1e-4, vec![0.3; s.mesh.n_elements()])
                .unwrap();
        let u = random_vec(sys.dim(), 4);
        let mut mat = sys.jacobian_pattern();
        sys.jacobian_into(&u, &mut mat).unwrap();
        let h = 1e-6;
        for j in 0..sys.dim() {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[j] += h;
            dn[j] -= h;
            let rp = sys.residual(&up);
            let rn = sys.residual(&dn);
            for i in 0..sys.dim() {
                let fd = (rp[i] - rn[i]) / (2.0 * h);
                let entry = mat.get(i, j).unwrap_or(0.0);
                assert!(
                    (fd - entry).abs() <= 1e-5 * (1.0 + entry.abs()),
                    "entry ({i}, {j}): fd {fd} vs assembled {entry}"
                );
            }
        }
    }

    #[test]
    fn jacobian_is_exactly_symmetric() {
        let s = setup(2);
        let q = variable_exponents(&s, 1.5, 0.25);
        let sys =
            CrSystem::new(&s.mesh, &s.metrics, &s.spaces, &q, 1e-4, vec![0.0; s.mesh.n_elements()])
                .unwrap();
        let u = random_vec(sys.dim(), 5);
        let mut mat = sys.jacobian_pattern();
        sys.jacobian_into(&u, &mut mat).unwrap();
        for i in 0..sys.dim() {
            for j in 0..sys.dim() {
                match (mat.get(i, j), mat.get(j, i)) {
                    (Some(a), Some(b)) => assert_eq!(a, b, "entry ({i}, {j})"),
                    (None, None) => {}
                    _ => panic!("asymmetric pattern at ({i}, {j})"),
                }
            }
        }
    }

    #[test]
    fn jacobian_is_positive_definite_across_parameter_grid() {
        let s = setup(2);
        for p_min in [1.5, 2.0, 2.5] {
            for alpha in [0.1, 0.25, 0.5, 1.0] {
                let q = variable_exponents(&s, p_min, alpha);
                let sys = CrSystem::new(
                    &s.mesh,
                    &s.metrics,
                    &s.spaces,
                    &q,
                    1e-4,
                    vec![0.0; s.mesh.n_elements()],
                )
                .unwrap();
                let u = random_vec(sys.dim(), 6);
                let mut mat = sys.jacobian_pattern();
                sys.jacobian_into(&u, &mut mat).unwrap();
                let n = sys.dim();
                let dense = DMatrix::from_fn(n, n, |i, j| mat.get(i, j).unwrap_or(0.0));
                let eigen = dense.symmetric_eigen();
                let min_eig = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
                assert!(
                    min_eig > 0.0,
                    "p_min {p_min}, alpha {alpha}: smallest eigenvalue {min_eig}"
                );
            }
        }
    }

    #[test]
    fn singular_linearization_is_reported() {
        let s = setup(1);
        let q = constant_exponents(s.mesh.n_elements(), 1.5);
        let sys =
            CrSystem::new(&s.mesh, &s.metrics, &s.spaces, &q, 0.0, vec![0.0; s.mesh.n_elements()])
                .unwrap();
        let mut mat = sys.jacobian_pattern();
        let err = sys.jacobian_into(&vec![0.0; sys.dim()], &mut mat);
        assert!(matches!(err, Err(Error::SingularKernelJacobian { .. })));
    }

    #[test]
    fn quadratic_problem_converges_in_one_step() {
        let s = setup(2);
        let q = constant_exponents(s.mesh.n_elements(), 2.0);
        let f_h = vec![2.0; s.mesh.n_elements()];
        let sys = CrSystem::new(&s.mesh, &s.metrics, &s.spaces, &q, 0.3, f_h).unwrap();
        let config = SolverConfig {
            linear_rel_tol: 1e-13,
            polish_steps: 0,
            ..SolverConfig::default()
        };
        let (u, report) = newton_solve(&sys, &config, &vec![0.0; sys.dim()]).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 1);
        assert_eq!(report.step_sizes, vec![1.0]);
        assert!(norm2(&sys.residual(&u)) <= 1e-10 * report.initial_residual);
    }

    #[test]
    fn study_configuration_converges_quickly_with_descending_energy() {
        let s = setup(3);
        let q = variable_exponents(&s, 1.5, 1.0);
        // A stand-in load of the right scale; the manufactured load of the
        // study module exercises the same path end to end.
        let f_h: Vec<f64> = s
            .metrics
            .barycenter
            .iter()
            .map(|b| 4.0 * (1.0 - b.x * b.x) * (1.0 - b.y * b.y) + 1.0)
            .collect();
        let sys = CrSystem::new(&s.mesh, &s.metrics, &s.spaces, &q, 1e-4, f_h).unwrap();
        let config = SolverConfig::default();
        let (u, report) = newton_solve(&sys, &config, &vec![0.0; sys.dim()]).unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 25, "{} iterations", report.iterations);
        for w in report.energy_history.windows(2) {
            assert!(w[1] < w[0] + 1e-14, "energy must descend: {:?}", w);
        }
        assert!(report.final_residual <= config.abs_tol);
        // Galerkin orthogonality at the converged iterate.
        let r = sys.residual(&u);
        for seed in 0..10u64 {
            let v = random_vec(sys.dim(), 50 + seed);
            let pairing: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            assert!(pairing.abs() <= config.abs_tol * norm2(&v));
        }
    }

    #[test]
    fn polish_steps_tighten_the_residual() {
        let s = setup(2);
        let q = variable_exponents(&s, 2.5, 0.5);
        let f_h = vec![1.5; s.mesh.n_elements()];
        let sys = CrSystem::new(&s.mesh, &s.metrics, &s.spaces, &q, 1e-4, f_h).unwrap();
        let loose = SolverConfig { polish_steps: 0, ..SolverConfig::default() };
        let tight = SolverConfig { polish_steps: 2, ..SolverConfig::default() };
        let (_, report0) = newton_solve(&sys, &loose, &vec![0.0; sys.dim()]).unwrap();
        let (_, report2) = newton_solve(&sys, &tight, &vec![0.0; sys.dim()]).unwrap();
        assert!(report2.polish_steps_applied >= 1);
        assert!(report2.final_residual < report0.final_residual);
        assert!(report2.final_residual <= 1e-10);
    }

    #[test]
    fn iteration_budget_error_carries_the_report() {
        let s = setup(2);
        let q = variable_exponents(&s, 1.5, 1.0);
        let f_h = vec![3.0; s.mesh.n_elements()];
        let sys = CrSystem::new(&s.mesh, &s.metrics, &s.spaces, &q, 1e-4, f_h).unwrap();
        let config = SolverConfig { max_newton_iters: 1, ..SolverConfig::default() };
        match newton_solve(&sys, &config, &vec![0.0; sys.dim()]) {
            Err(Error::NewtonDidNotConverge { report, .. }) => {
                assert_eq!(report.iterations, 1);
                assert!(!report.converged);
            }
            other => panic!("expected convergence failure, got {other:?}"),
        }
    }

    /// Wraps a system with a permutation of its DOF numbering.
    struct Permuted<'a, S> {
        inner: &'a S,
        perm: Vec<usize>,
    }

    impl<'a, S: NewtonSystem> Permuted<'a, S> {
        fn new(inner: &'a S, seed: u64) -> Self {
            let n = inner.dim();
            let mut perm: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            Permuted { inner, perm }
        }

        fn to_inner(&self, u: &[f64]) -> Vec<f64> {
            // Entry k of the permuted vector is entry perm[k] of the inner.
            let mut out = vec![0.0; u.len()];
            for k in 0..u.len() {
                out[self.perm[k]] = u[k];
            }
            out
        }

        fn from_inner(&self, u: &[f64]) -> Vec<f64> {
            let mut out = vec![0.0; u.len()];
            for k in 0..u.len() {
                out[k] = u[self.perm[k]];
            }
            out
        }
    }

    impl<S: NewtonSystem> NewtonSystem for Permuted<'_, S> {
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn residual(&self, u: &[f64]) -> Vec<f64> {
            self.from_inner(&self.inner.residual(&self.to_inner(u)))
        }
        fn jacobian_into(&self, u: &[f64], mat: &mut CsrMatrix) -> Result<()> {
            let mut inner_mat = self.inner.jacobian_pattern();
            self.inner.jacobian_into(&self.to_inner(u), &mut inner_mat)?;
            mat.zero_values();
            for i in 0..self.dim() {
                for j in 0..self.dim() {
                    if let Some(v) = inner_mat.get(self.perm[i], self.perm[j]) {
                        mat.add_at(i, j, v);
                    }
                }
            }
            Ok(())
        }
        fn jacobian_pattern(&self) -> CsrMatrix {
            let inner = self.inner.jacobian_pattern();
            let n = self.dim();
            let rows = (0..n)
                .map(|i| {
                    (0..n)
                        .filter(|&j| inner.get(self.perm[i], self.perm[j]).is_some())
                        .collect()
                })
                .collect();
            CsrMatrix::from_pattern(rows)
        }
        fn energy(&self, u: &[f64]) -> f64 {
            self.inner.energy(&self.to_inner(u))
        }
    }

    #[test]
    fn solution_is_independent_of_dof_numbering() {
        let s = setup(2);
        let q = variable_exponents(&s, 2.0, 0.5);
        let f_h = vec![1.0; s.mesh.n_elements()];
        let sys = CrSystem::new(&s.mesh, &s.metrics, &s.spaces, &q, 1e-4, f_h).unwrap();
        let config = SolverConfig::default();
        let (u, _) = newton_solve(&sys, &config, &vec![0.0; sys.dim()]).unwrap();
        let permuted = Permuted::new(&sys, 99);
        let (u_perm, _) = newton_solve(&permuted, &config, &vec![0.0; sys.dim()]).unwrap();
        let u_back = permuted.to_inner(&u_perm);
        let diff = u
            .iter()
            .zip(&u_back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-10, "solutions differ by {diff}");
    }

    #[test]
    fn conforming_solve_matches_trivial_cases() {
        let s = setup(2);
        let q = constant_exponents(s.mesh.n_elements(), 2.0);
        let quad = SimplexQuadrature::degree8();
        let sys =
            P1System::new(&s.mesh, &s.metrics, &s.spaces, &q, 0.0, |_| 0.0, &quad).unwrap();
        let (w, report) = newton_solve(&sys, &SolverConfig::default(), &vec![0.0; sys.dim()])
            .unwrap();
        assert!(report.converged);
        assert!(w.iter().all(|&v| v.abs() < 1e-14), "zero data gives the zero solution");

        // The nonconforming solve agrees for the same trivial data.
        let cr_sys = CrSystem::new(
            &s.mesh,
            &s.metrics,
            &s.spaces,
            &q,
            0.0,
            vec![0.0; s.mesh.n_elements()],
        )
        .unwrap();
        let (u, _) = newton_solve(&cr_sys, &SolverConfig::default(), &vec![0.0; cr_sys.dim()])
            .unwrap();
        assert!(u.iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn conforming_load_uses_pointwise_quadrature() {
        // For f(x) = x_1^2 the vertex load differs from what the element
        // means of f would give; check one interior vertex against a direct
        // high-order quadrature of f times the hat function.
        let s = setup(1);
        let q = constant_exponents(s.mesh.n_elements(), 2.0);
        let quad = SimplexQuadrature::degree8();
        let sys = P1System::new(
            &s.mesh,
            &s.metrics,
            &s.spaces,
            &q,
            0.0,
            |x| x.x * x.x,
            &quad,
        )
        .unwrap();
        // With the zero field the residual equals minus the load.
        let r = sys.residual(&vec![0.0; sys.dim()]);
        let mut expected = vec![0.0; sys.dim()];
        for t in 0..s.mesh.n_elements() {
            let verts = s.mesh.elements[t];
            let p = s.mesh.element_vertices(t);
            for i in 0..3 {
                let k = sys.free_index[verts[i]];
                if k == usize::MAX {
                    continue;
                }
                let mean = quad.mean(&p, |x| {
                    let lambda = [
                        1.0 / 3.0 + s.metrics.grad_bary[t][0].dot(&(x - s.metrics.barycenter[t])),
                        1.0 / 3.0 + s.metrics.grad_bary[t][1].dot(&(x - s.metrics.barycenter[t])),
                        1.0 / 3.0 + s.metrics.grad_bary[t][2].dot(&(x - s.metrics.barycenter[t])),
                    ][i];
                    x.x * x.x * lambda
                });
                expected[k] -= s.metrics.area[t] * mean;
            }
        }
        for k in 0..sys.dim() {
            assert!((r[k] - expected[k]).abs() < 1e-14);
        }
    }
}
