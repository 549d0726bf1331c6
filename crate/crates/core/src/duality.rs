//! Dual flux reconstruction and convex-duality audits.
//!
//! From any side-midpoint field `u` the local Marini-type formula builds an
//! element-wise affine flux
//!
//! ```text
//! z|_T(x) = A_T(grad u|_T) - (f_T / 2) (x - x_T),
//! ```
//!
//! which satisfies `div z|_T = -f_T` and `mean_T z = A_T(grad u|_T)` exactly
//! by construction, for every input field. When `u` solves the discrete
//! primal problem the normal traces of adjacent elements also agree, the
//! field collapses to a normal-flux element of the dual feasible set, and the
//! discrete primal and dual energies coincide (strong duality). The audit
//! evaluates all of these as honest residuals — divergence via the boundary
//! flux (Gauss) formula, element means via interior quadrature — rather than
//! reading back the symbolic identities.

use crate::error::{Error, Result};
use crate::fem::{rt0_divergence, rt0_element_mean};
use crate::mesh::{BoundaryLabel, MeshMetrics, Pt2, Triangulation, Vec2};
use crate::nfunction::{ElementExponents, PhiKit};
use crate::quadrature::SimplexQuadrature;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Element-wise affine dual flux in local representation: a constant part
/// per element plus the load-proportional linear part.
#[derive(Debug, Clone)]
pub struct MariniFlux {
    /// The constant part `A_T(grad u|_T)`, which is also the element mean.
    pub cell_value: Vec<Vec2>,
    /// The element load `f_T`; the linear part is `-(f_T / 2)(x - x_T)`.
    pub cell_load: Vec<f64>,
}

impl MariniFlux {
    /// Value of the flux inside element `t`.
    pub fn evaluate(&self, metrics: &MeshMetrics, t: usize, x: Pt2) -> Vec2 {
        self.cell_value[t] - 0.5 * self.cell_load[t] * (x - metrics.barycenter[t])
    }

    /// Normal component of the element-`t` trace on side `s`, with respect
    /// to the global side normal; constant along the side.
    pub fn normal_trace(
        &self,
        mesh: &Triangulation,
        metrics: &MeshMetrics,
        t: usize,
        s: usize,
    ) -> f64 {
        let n = mesh.side_normal(s);
        self.evaluate(metrics, t, metrics.midpoint_side[s]).dot(&n)
    }

    /// Collapses the two-sided traces to single normal-flux DOFs by
    /// averaging; at a discrete solution the traces agree and this is the
    /// dual maximizer in the normal-flux space.
    pub fn to_rt0(&self, mesh: &Triangulation, metrics: &MeshMetrics) -> Vec<f64> {
        (0..mesh.n_sides())
            .map(|s| {
                let (plus, minus) = mesh.elements_of_side[s];
                let tau_plus = self.normal_trace(mesh, metrics, plus, s);
                match minus {
                    Some(m) => 0.5 * (tau_plus + self.normal_trace(mesh, metrics, m, s)),
                    None => tau_plus,
                }
            })
            .collect()
    }

    /// Largest mismatch of adjacent normal traces over interior sides.
    pub fn normal_jump_residual(&self, mesh: &Triangulation, metrics: &MeshMetrics) -> f64 {
        let mut worst = 0.0f64;
        for s in 0..mesh.n_sides() {
            if mesh.sides[s].label != BoundaryLabel::Interior {
                continue;
            }
            let (plus, minus) = mesh.elements_of_side[s];
            let jump = self.normal_trace(mesh, metrics, plus, s)
                - self.normal_trace(mesh, metrics, minus.unwrap(), s);
            worst = worst.max(jump.abs());
        }
        worst
    }
}

/// Builds the local dual flux from a full side-DOF field and element loads.
pub fn marini_flux(
    mesh: &Triangulation,
    metrics: &MeshMetrics,
    exponents: &ElementExponents,
    delta: f64,
    u_full: &[f64],
    f_h: &[f64],
) -> Result<MariniFlux> {
    if u_full.len() != mesh.n_sides() {
        return Err(Error::FieldSizeMismatch {
            space: "side-midpoint",
            expected: mesh.n_sides(),
            got: u_full.len(),
        });
    }
    if f_h.len() != mesh.n_elements() {
        return Err(Error::FieldSizeMismatch {
            space: "element load",
            expected: mesh.n_elements(),
            got: f_h.len(),
        });
    }
    let mut cell_value = Vec::with_capacity(mesh.n_elements());
    for t in 0..mesh.n_elements() {
        let kit = PhiKit::new(exponents.q[t], delta)?;
        let sides = mesh.side_of_element[t];
        let g = &metrics.grad_bary[t];
        let mut grad = Vec2::zeros();
        for i in 0..3 {
            grad += u_full[sides[i]] * (-2.0 * g[i]);
        }
        cell_value.push(kit.eval_a(grad));
    }
    Ok(MariniFlux { cell_value, cell_load: f_h.to_vec() })
}

/// The discrete primal energy
/// `sum_T |T| [ phi_T(|grad u|_T|) - f_T <u>_T ]` of a full side-DOF field;
/// the integrand is element-wise constant, so this is exact.
pub fn primal_energy(
    mesh: &Triangulation,
    metrics: &MeshMetrics,
    exponents: &ElementExponents,
    delta: f64,
    u_full: &[f64],
    f_h: &[f64],
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
        let mut grad = Vec2::zeros();
        let mut mean = 0.0;
        for i in 0..3 {
            grad += u_full[sides[i]] * (-2.0 * g[i]);
            mean += u_full[sides[i]] / 3.0;
        }
        total += metrics.area[t] * (kit.eval_phi(grad.norm()) - f_h[t] * mean);
    }
    Ok(total)
}

/// Value of the discrete dual energy: finite only on the feasible set
/// `div y = -f_h`; off it the energy is minus infinity, represented by an
/// explicit marker (never a floating-point infinity).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DualEnergy {
    /// `-sum_T |T| phi*_T(|mean_T y|)` on the feasible set.
    Finite(f64),
    /// The divergence constraint is violated; carries the worst element
    /// defect `|div y|_T + f_T|`.
    Infeasible { max_divergence_defect: f64 },
}

impl DualEnergy {
    /// The finite value, if any.
    pub fn finite(self) -> Option<f64> {
        match self {
            DualEnergy::Finite(v) => Some(v),
            DualEnergy::Infeasible { .. } => None,
        }
    }
}

/// Evaluates the dual energy of a normal-flux DOF field. Feasibility is
/// checked element-wise against `1e-8 * (1 + |f_h|_inf)`; the modular of the
/// element-mean field is exact (piecewise-constant integrand).
pub fn dual_energy(
    mesh: &Triangulation,
    metrics: &MeshMetrics,
    exponents: &ElementExponents,
    delta: f64,
    g: &[f64],
    f_h: &[f64],
) -> Result<DualEnergy> {
    let div = rt0_divergence(mesh, metrics, g)?;
    let f_scale = f_h.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for t in 0..mesh.n_elements() {
        worst = worst.max((div[t] + f_h[t]).abs());
    }
    if worst > 1e-8 * (1.0 + f_scale) {
        return Ok(DualEnergy::Infeasible { max_divergence_defect: worst });
    }
    let means = rt0_element_mean(mesh, metrics, g)?;
    let mut total = 0.0;
    for t in 0..mesh.n_elements() {
        let kit = PhiKit::new(exponents.q[t], delta)?;
        total -= metrics.area[t] * kit.eval_phi_conjugate(means[t].norm())?;
    }
    Ok(DualEnergy::Finite(total))
}

/// Residuals of the discrete convex-duality relations for a primal field
/// and its reconstructed dual flux.
#[derive(Debug, Clone, Copy)]
pub struct DualityAudit {
    /// Discrete primal energy of `u`.
    pub primal_energy: f64,
    /// Discrete dual energy of the flux (from its local representation,
    /// which is feasible by construction).
    pub dual_energy: f64,
    /// `|primal - dual|`.
    pub duality_gap: f64,
    /// `duality_gap / (|primal| + |dual| + 1)`.
    pub relative_gap: f64,
    /// Max over elements of `|div z + f_T|`, divergence computed from the
    /// boundary fluxes of the local traces (Gauss formula).
    pub div_residual: f64,
    /// Max over elements of `|mean_T z - A_T(grad u)|`, the mean computed by
    /// interior quadrature of the local representation.
    pub projection_residual: f64,
    /// Max over interior sides of the normal-trace mismatch.
    pub normal_jump_residual: f64,
    /// Max over elements of the defect in
    /// `mean z . grad u = phi*(|mean z|) + phi(|grad u|)`.
    pub fenchel_young_residual: f64,
    /// The same defect relative to the per-element magnitude of the three
    /// terms (maximum over elements).
    pub fenchel_young_relative: f64,
}

impl DualityAudit {
    /// Whether every residual is within its audit tolerance, given the
    /// maximum load magnitude and flux magnitude of the run. The divergence
    /// and projection identities are exact up to rounding; the gap and the
    /// convexity identity track the Newton residual; normal jumps get a
    /// loose absolute gate (they scale with the solver tolerance, which is
    /// not known here).
    pub fn passes(&self, load_scale: f64, flux_scale: f64) -> bool {
        self.relative_gap <= 1e-8
            && self.div_residual <= 1e-13 * load_scale.max(1.0)
            && self.projection_residual <= 1e-13 * flux_scale.max(1.0)
            && self.fenchel_young_relative <= 1e-8
            && self.normal_jump_residual <= 1e-6 * (1.0 + flux_scale)
    }
}

/// Audits a primal/dual pair. All quantities are recomputed from scratch:
/// divergence by the Gauss formula, element means by quadrature, energies by
/// their definitions.
pub fn audit(
    mesh: &Triangulation,
    metrics: &MeshMetrics,
    exponents: &ElementExponents,
    delta: f64,
    u_full: &[f64],
    flux: &MariniFlux,
    f_h: &[f64],
) -> Result<DualityAudit> {
    let i_h = primal_energy(mesh, metrics, exponents, delta, u_full, f_h)?;
    let quad = SimplexQuadrature::degree2();

    let mut d_h = 0.0;
    let mut div_residual = 0.0f64;
    let mut projection_residual = 0.0f64;
    let mut fy_residual = 0.0f64;
    let mut fy_relative = 0.0f64;
    for t in 0..mesh.n_elements() {
        let kit = PhiKit::new(exponents.q[t], delta)?;
        let sides = mesh.side_of_element[t];
        let g = &metrics.grad_bary[t];
        let mut grad = Vec2::zeros();
        for i in 0..3 {
            grad += u_full[sides[i]] * (-2.0 * g[i]);
        }
        let a_t = kit.eval_a(grad);

        // Divergence from boundary fluxes of the local trace.
        let mut outflux = 0.0;
        for (i, &s) in sides.iter().enumerate() {
            let orient = f64::from(mesh.side_orientation[t][i]);
            outflux += orient * flux.normal_trace(mesh, metrics, t, s) * metrics.h_side[s];
        }
        let div_t = outflux / metrics.area[t];
        div_residual = div_residual.max((div_t + f_h[t]).abs());

        // Element mean from interior quadrature of the affine local field.
        let p = mesh.element_vertices(t);
        let mut mean = Vec2::zeros();
        for (q, &[l0, l1, l2]) in quad.nodes.iter().enumerate() {
            let x = Pt2::new(
                l0 * p[0].x + l1 * p[1].x + l2 * p[2].x,
                l0 * p[0].y + l1 * p[1].y + l2 * p[2].y,
            );
            mean += quad.weights[q] * flux.evaluate(metrics, t, x);
        }
        projection_residual = projection_residual.max((mean - a_t).norm());

        // Dual modular and the pointwise convexity identity.
        let phi_conj = kit.eval_phi_conjugate(mean.norm())?;
        d_h -= metrics.area[t] * phi_conj;
        let phi = kit.eval_phi(grad.norm());
        let pairing = mean.dot(&grad);
        let defect = (pairing - phi_conj - phi).abs();
        fy_residual = fy_residual.max(defect);
        let scale = pairing.abs() + phi_conj + phi;
        if scale > 0.0 {
            fy_relative = fy_relative.max(defect / scale);
        }
    }

    let duality_gap = (i_h - d_h).abs();
    Ok(DualityAudit {
        primal_energy: i_h,
        dual_energy: d_h,
        duality_gap,
        relative_gap: duality_gap / (i_h.abs() + d_h.abs() + 1.0),
        div_residual,
        projection_residual,
        normal_jump_residual: flux.normal_jump_residual(mesh, metrics),
        fenchel_young_residual: fy_residual,
        fenchel_young_relative: fy_relative,
    })
}

/// A seeded divergence-free normal-flux field with zero boundary normal
/// trace: the rotated gradient of a random conforming vertex potential that
/// vanishes on the whole boundary. Tangential continuity of the potential
/// gradient makes the rotated field normal-continuous, and its element-wise
/// divergence vanishes identically.
pub fn divergence_free_perturbation(
    mesh: &Triangulation,
    metrics: &MeshMetrics,
    seed: u64,
    amplitude: f64,
) -> Vec<f64> {
    let mut boundary_vertex = vec![false; mesh.n_vertices()];
    for side in &mesh.sides {
        if side.label != BoundaryLabel::Interior {
            boundary_vertex[side.vertices.0] = true;
            boundary_vertex[side.vertices.1] = true;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let psi: Vec<f64> = (0..mesh.n_vertices())
        .map(|v| {
            if boundary_vertex[v] {
                0.0
            } else {
                amplitude * (rng.random::<f64>() * 2.0 - 1.0)
            }
        })
        .collect();

    // Rotated gradient per element, then its (single-valued) normal DOFs.
    let mut rotated = Vec::with_capacity(mesh.n_elements());
    for t in 0..mesh.n_elements() {
        let verts = mesh.elements[t];
        let g = &metrics.grad_bary[t];
        let mut grad = Vec2::zeros();
        for i in 0..3 {
            grad += psi[verts[i]] * g[i];
        }
        rotated.push(Vec2::new(grad.y, -grad.x));
    }
    (0..mesh.n_sides())
        .map(|s| {
            let n = mesh.side_normal(s);
            rotated[mesh.elements_of_side[s].0].dot(&n)
        })
        .collect()
}
