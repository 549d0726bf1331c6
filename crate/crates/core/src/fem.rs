//! Discrete spaces on a triangulation and their element-wise operators.
//!
//! Four spaces appear:
//! * midpoint-continuous piecewise affines (one DOF per side, the value at
//!   the side midpoint) — the nonconforming primal space;
//! * lowest-order normal-flux elements (one signed normal flux per side) —
//!   the dual space;
//! * conforming piecewise affines (one DOF per vertex) — comparison solves
//!   and the node-averaging image;
//! * piecewise constants (one scalar or 2-vector per element) — gradients,
//!   projections, loads.
//!
//! DOF vectors are plain `Vec<f64>`; every operator validates lengths
//! against the mesh it is given. Essential masks zero side/vertex DOFs on
//! the essential part of the boundary, natural masks zero boundary normal
//! fluxes on the natural part.

use std::fmt::Write as _;

use nalgebra::Point2;

use crate::error::{Error, Result};
use crate::mesh::{BoundaryLabel, MeshMetrics, Pt2, Triangulation, Vec2};
use crate::quadrature::SimplexQuadrature;

/// Identifies the space a serialized DOF vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceTag {
    /// Side-midpoint nonconforming affines.
    Cr,
    /// Side normal-flux elements.
    Rt0,
    /// Conforming vertex-based affines.
    P1,
    /// Piecewise-constant scalars.
    Pc,
    /// Piecewise-constant 2-vectors (stored interleaved `x0 y0 x1 y1 ...`).
    Pc2,
}

impl SpaceTag {
    fn as_str(self) -> &'static str {
        match self {
            SpaceTag::Cr => "cr",
            SpaceTag::Rt0 => "rt0",
            SpaceTag::P1 => "p1",
            SpaceTag::Pc => "pc",
            SpaceTag::Pc2 => "pc2",
        }
    }
}

/// A DOF vector tagged with its space and mesh level, the unit of field
/// interchange between the binary and the audit tooling.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteField {
    pub space: SpaceTag,
    pub level: u32,
    pub values: Vec<f64>,
}

/// Boundary masks and free-DOF numbering for all spaces on one mesh.
#[derive(Debug, Clone)]
pub struct Spaces {
    /// Per side: midpoint lies on the essential boundary (trace clamped).
    pub cr_dirichlet: Vec<bool>,
    /// Per side: side lies on the natural boundary (normal flux clamped).
    pub rt0_neumann: Vec<bool>,
    /// Per vertex: vertex lies on the essential boundary.
    pub p1_dirichlet: Vec<bool>,
    /// Unmasked sides in side order; the free-DOF numbering of the
    /// nonconforming space.
    pub cr_free: Vec<usize>,
    /// Inverse of [`Spaces::cr_free`]; `usize::MAX` for masked sides.
    pub cr_free_index: Vec<usize>,
}

/// Derives the boundary masks and free numbering from side labels.
pub fn build_spaces(mesh: &Triangulation) -> Spaces {
    let mut cr_dirichlet = vec![false; mesh.n_sides()];
    let mut rt0_neumann = vec![false; mesh.n_sides()];
    let mut p1_dirichlet = vec![false; mesh.n_vertices()];
    for (s, side) in mesh.sides.iter().enumerate() {
        match side.label {
            BoundaryLabel::Dirichlet => {
                cr_dirichlet[s] = true;
                p1_dirichlet[side.vertices.0] = true;
                p1_dirichlet[side.vertices.1] = true;
            }
            BoundaryLabel::Neumann => rt0_neumann[s] = true,
            BoundaryLabel::Interior => {}
        }
    }
    let mut cr_free = Vec::new();
    let mut cr_free_index = vec![usize::MAX; mesh.n_sides()];
    for s in 0..mesh.n_sides() {
        if !cr_dirichlet[s] {
            cr_free_index[s] = cr_free.len();
            cr_free.push(s);
        }
    }
    Spaces { cr_dirichlet, rt0_neumann, p1_dirichlet, cr_free, cr_free_index }
}

fn check_len(space: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::FieldSizeMismatch { space, expected, got })
    }
}

/// Barycentric coordinates of `x` in element `t`.
fn barycentric(metrics: &MeshMetrics, t: usize, x: Pt2) -> [f64; 3] {
    let d = x - metrics.barycenter[t];
    let g = &metrics.grad_bary[t];
    [
        1.0 / 3.0 + g[0].dot(&d),
        1.0 / 3.0 + g[1].dot(&d),
        1.0 / 3.0 + g[2].dot(&d),
    ]
}

// ---------------------------------------------------------------------------
// Nonconforming (side-midpoint) space
// ---------------------------------------------------------------------------

/// Element-wise gradient of a side-midpoint field: constant per element,
/// `sum_i u_i * (-2 grad lambda_i)` since the local basis opposite vertex
/// `i` is `1 - 2 lambda_i`.
pub fn cr_gradient(
    mesh: &Triangulation,
    metrics: &MeshMetrics,
    u: &[f64],
) -> Result<Vec<Vec2>> {
    check_len("side-midpoint", mesh.n_sides(), u.len())?;
    let mut grads = Vec::with_capacity(mesh.n_elements());
    for t in 0..mesh.n_elements() {
        let sides = mesh.side_of_element[t];
        let g = &metrics.grad_bary[t];
        let mut grad = Vec2::zeros();
        for i in 0..3 {
            grad += u[sides[i]] * (-2.0 * g[i]);
        }
        grads.push(grad);
    }
    Ok(grads)
}

/// Trace of the side-midpoint field on element `t` at point `x`.
pub fn cr_value(
    mesh: &Triangulation,
    metrics: &MeshMetrics,
    u: &[f64],
    t: usize,
    x: Pt2,
) -> f64 {
    let lambda = barycentric(metrics, t, x);
    let sides = mesh.side_of_element[t];
    (0..3).map(|i| u[sides[i]] * (1.0 - 2.0 * lambda[i])).sum()
}

/// Element means of a side-midpoint field; each local basis function has
/// mean 1/3.
pub fn cr_element_mean(mesh: &Triangulation, u: &[f64]) -> Result<Vec<f64>> {
    check_len("side-midpoint", mesh.n_sides(), u.len())?;
    Ok(mesh
        .side_of_element
        .iter()
        .map(|sides| (u[sides[0]] + u[sides[1]] + u[sides[2]]) / 3.0)
        .collect())
}

/// DOFs of the nonconforming embedding of a vertex-based field: the value
/// at a side midpoint is the mean of the endpoint values.
pub fn cr_embed_p1(mesh: &Triangulation, w: &[f64]) -> Result<Vec<f64>> {
    check_len("vertex-based", mesh.n_vertices(), w.len())?;
    Ok(mesh
        .sides
        .iter()
        .map(|side| 0.5 * (w[side.vertices.0] + w[side.vertices.1]))
        .collect())
}

/// Zeroes the essential-boundary DOFs of a side-midpoint field in place.
pub fn apply_cr_dirichlet(spaces: &Spaces, u: &mut [f64]) {
    for (s, &masked) in spaces.cr_dirichlet.iter().enumerate() {
        if masked {
            u[s] = 0.0;
        }
    }
}

/// Jump of a side-midpoint field at point `x` on side `s`: difference of
/// the two element traces (in global side orientation) on interior sides,
/// the single trace on boundary sides.
pub fn jump(
    mesh: &Triangulation,
    metrics: &MeshMetrics,
    u: &[f64],
    s: usize,
    x: Pt2,
) -> Result<f64> {
    require_on_side(mesh, metrics, s, x)?;
    let (plus, minus) = mesh.elements_of_side[s];
    let v_plus = cr_value(mesh, metrics, u, plus, x);
    match minus {
        Some(m) => Ok(v_plus - cr_value(mesh, metrics, u, m, x)),
        None => Ok(v_plus),
    }
}

fn require_on_side(mesh: &Triangulation, metrics: &MeshMetrics, s: usize, x: Pt2) -> Result<()> {
    let (a, b) = mesh.sides[s].vertices;
    let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
    let e = pb - pa;
    let d = x - pa;
    let len2 = e.norm_squared();
    let cross = e.x * d.y - e.y * d.x;
    let along = e.dot(&d) / len2;
    let tol = 1e-10 * metrics.h_side[s];
    if cross.abs() <= tol * metrics.h_side[s] && (-1e-10..=1.0 + 1e-10).contains(&along) {
        Ok(())
    } else {
        Err(Error::PointNotOnSide { side: s, x: x.x, y: x.y })
    }
}

// ---------------------------------------------------------------------------
// Normal-flux (lowest-order Raviart-Thomas) space
// ---------------------------------------------------------------------------

/// Evaluates a normal-flux field inside element `t`: the local shape
/// function of side `i` (opposite vertex `P_i`) is
/// `|S_i| / (2 |T|) * (x - P_i)`, oriented by the global side normal.
pub fn rt0_evaluate(
    mesh: &Triangulation,
    metrics: &MeshMetrics,
    g: &[f64],
    t: usize,
    x: Pt2,
) -> Vec2 {
    let sides = mesh.side_of_element[t];
    let verts = mesh.elements[t];
    let inv2a = 1.0 / (2.0 * metrics.area[t]);
    let mut y = Vec2::zeros();
    for i in 0..3 {
        let signed = f64::from(mesh.side_orientation[t][i]) * g[sides[i]];
        y += signed * metrics.h_side[sides[i]] * inv2a * (x - mesh.vertices[verts[i]]);
    }
    y
}

/// Element-wise divergence of a normal-flux field,
/// `div y|_T = (1/|T|) sum_i sigma_i g_i |S_i|`.
pub fn rt0_divergence(
    mesh: &Triangulation,
    metrics: &MeshMetrics,
    g: &[f64],
) -> Result<Vec<f64>> {
    check_len("normal-flux", mesh.n_sides(), g.len())?;
    let mut div = Vec::with_capacity(mesh.n_elements());
    for t in 0..mesh.n_elements() {
        let sides = mesh.side_of_element[t];
        let mut acc = 0.0;
        for i in 0..3 {
            acc += f64::from(mesh.side_orientation[t][i]) * g[sides[i]] * metrics.h_side[sides[i]];
        }
        div.push(acc / metrics.area[t]);
    }
    Ok(div)
}

/// Element means of a normal-flux field; the mean of an affine field is its
/// barycenter value, so this is exact.
pub fn rt0_element_mean(
    mesh: &Triangulation,
    metrics: &MeshMetrics,
    g: &[f64],
) -> Result<Vec<Vec2>> {
    check_len("normal-flux", mesh.n_sides(), g.len())?;
    Ok((0..mesh.n_elements())
        .map(|t| rt0_evaluate(mesh, metrics, g, t, metrics.barycenter[t]))
        .collect())
}

/// Normal jump of a normal-flux field at the midpoint of side `s` (zero by
/// construction for single-valued flux DOFs; evaluated honestly from the
/// two local representations as an audit).
pub fn rt0_normal_jump(
    mesh: &Triangulation,
    metrics: &MeshMetrics,
    g: &[f64],
    s: usize,
) -> f64 {
    let n = mesh.side_normal(s);
    let x = metrics.midpoint_side[s];
    let (plus, minus) = mesh.elements_of_side[s];
    let y_plus = rt0_evaluate(mesh, metrics, g, plus, x).dot(&n);
    match minus {
        Some(m) => y_plus - rt0_evaluate(mesh, metrics, g, m, x).dot(&n),
        None => y_plus,
    }
}

/// Flux DOFs of the interpolant of a smooth vector field: per side the mean
/// of `f . n` along the side (three-point Gauss, exact to degree 5).
pub fn rt0_interpolate(
    mesh: &Triangulation,
    f: impl Fn(Pt2) -> Vec2,
) -> Vec<f64> {
    // Gauss-Legendre on [0, 1].
    let offset = 0.5 * (0.6f64).sqrt();
    let nodes = [0.5 - offset, 0.5, 0.5 + offset];
    let weights = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
    (0..mesh.n_sides())
        .map(|s| {
            let n = mesh.side_normal(s);
            let (a, b) = mesh.sides[s].vertices;
            let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
            nodes
                .iter()
                .zip(&weights)
                .map(|(&t, &w)| {
                    let x = Point2::new(pa.x + t * (pb.x - pa.x), pa.y + t * (pb.y - pa.y));
                    w * f(x).dot(&n)
                })
                .sum()
        })
        .collect()
}

/// Zeroes the natural-boundary flux DOFs in place.
pub fn apply_rt0_neumann(spaces: &Spaces, g: &mut [f64]) {
    for (s, &masked) in spaces.rt0_neumann.iter().enumerate() {
        if masked {
            g[s] = 0.0;
        }
    }
}

// ---------------------------------------------------------------------------
// Conforming vertex space and piecewise constants
// ---------------------------------------------------------------------------

/// Value of a vertex-based field on element `t` at `x`.
pub fn p1_value(
    mesh: &Triangulation,
    metrics: &MeshMetrics,
    w: &[f64],
    t: usize,
    x: Pt2,
) -> f64 {
    let lambda = barycentric(metrics, t, x);
    let verts = mesh.elements[t];
    (0..3).map(|i| w[verts[i]] * lambda[i]).sum()
}

/// Element-wise gradient of a vertex-based field.
pub fn p1_gradient(
    mesh: &Triangulation,
    metrics: &MeshMetrics,
    w: &[f64],
) -> Result<Vec<Vec2>> {
    check_len("vertex-based", mesh.n_vertices(), w.len())?;
    let mut grads = Vec::with_capacity(mesh.n_elements());
    for t in 0..mesh.n_elements() {
        let verts = mesh.elements[t];
        let g = &metrics.grad_bary[t];
        let mut grad = Vec2::zeros();
        for i in 0..3 {
            grad += w[verts[i]] * g[i];
        }
        grads.push(grad);
    }
    Ok(grads)
}

/// Element-wise quadrature approximation of the local means of `f`.
pub fn l2_project_pc(
    mesh: &Triangulation,
    quad: &SimplexQuadrature,
    f: impl Fn(Pt2) -> f64,
) -> Vec<f64> {
    (0..mesh.n_elements())
        .map(|t| quad.mean(&mesh.element_vertices(t), &f))
        .collect()
}

/// Averages the element traces of a side-midpoint field at each vertex,
/// clamping essential-boundary vertices to zero; the result is a conforming
/// vertex-based field.
pub fn node_average(
    mesh: &Triangulation,
    spaces: &Spaces,
    u: &[f64],
) -> Result<Vec<f64>> {
    check_len("side-midpoint", mesh.n_sides(), u.len())?;
    let mut sum = vec![0.0; mesh.n_vertices()];
    let mut count = vec![0u32; mesh.n_vertices()];
    for t in 0..mesh.n_elements() {
        let verts = mesh.elements[t];
        let sides = mesh.side_of_element[t];
        // Trace at local vertex j: basis opposite vertex j equals -1 there,
        // the two others equal +1.
        for j in 0..3 {
            let trace = -u[sides[j]] + u[sides[(j + 1) % 3]] + u[sides[(j + 2) % 3]];
            sum[verts[j]] += trace;
            count[verts[j]] += 1;
        }
    }
    Ok((0..mesh.n_vertices())
        .map(|v| {
            if spaces.p1_dirichlet[v] {
                0.0
            } else {
                sum[v] / f64::from(count[v])
            }
        })
        .collect())
}

/// Exact residual of the discrete integration-by-parts identity
/// `(grad_h v, mean y) + (mean v, div y) = 0` for a masked side-midpoint
/// field `v` and a masked normal-flux field `y`; all element integrals are
/// of polynomials and evaluated in closed form.
#[derive(Debug, Clone, Copy)]
pub struct IbpCheck {
    /// `|(grad_h v, mean y) + (mean v, div y)|`.
    pub residual: f64,
    /// `|(grad_h v, mean y)| + |(mean v, div y)|`, the natural scale.
    pub scale: f64,
}

/// Evaluates the integration-by-parts residual; see [`IbpCheck`].
pub fn check_discrete_ibp(
    mesh: &Triangulation,
    metrics: &MeshMetrics,
    v: &[f64],
    g: &[f64],
) -> Result<IbpCheck> {
    check_len("side-midpoint", mesh.n_sides(), v.len())?;
    check_len("normal-flux", mesh.n_sides(), g.len())?;
    let grads = cr_gradient(mesh, metrics, v)?;
    let means_v = cr_element_mean(mesh, v)?;
    let means_y = rt0_element_mean(mesh, metrics, g)?;
    let div = rt0_divergence(mesh, metrics, g)?;
    let mut term_grad = 0.0;
    let mut term_div = 0.0;
    for t in 0..mesh.n_elements() {
        term_grad += metrics.area[t] * grads[t].dot(&means_y[t]);
        term_div += metrics.area[t] * means_v[t] * div[t];
    }
    Ok(IbpCheck {
        residual: (term_grad + term_div).abs(),
        scale: term_grad.abs() + term_div.abs(),
    })
}

// ---------------------------------------------------------------------------
// Field interchange
// ---------------------------------------------------------------------------

/// Serializes a tagged DOF vector to the plain-text interchange format.
pub fn export_field(field: &DiscreteField) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "FIELD {}", field.space.as_str());
    let _ = writeln!(out, "LEVEL {}", field.level);
    let _ = writeln!(out, "DOFS {}", field.values.len());
    for v in &field.values {
        let _ = writeln!(out, "{v:?}");
    }
    out
}

/// Parses the format produced by [`export_field`].
pub fn import_field(text: &str) -> Result<DiscreteField> {
    let bad = |reason: String| Error::ParseError { what: "field file", reason };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let tag_line = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let tag = tag_line
        .strip_prefix("FIELD ")
        .ok_or_else(|| bad(format!("expected `FIELD <tag>`, found `{tag_line}`")))?;
    let space = match tag.trim() {
        "cr" => SpaceTag::Cr,
        "rt0" => SpaceTag::Rt0,
        "p1" => SpaceTag::P1,
        "pc" => SpaceTag::Pc,
        "pc2" => SpaceTag::Pc2,
        other => return Err(bad(format!("unknown space tag `{other}`"))),
    };
    let level_line = lines.next().ok_or_else(|| bad("missing LEVEL line".into()))?;
    let level: u32 = level_line
        .strip_prefix("LEVEL ")
        .ok_or_else(|| bad(format!("expected `LEVEL <n>`, found `{level_line}`")))?
        .trim()
        .parse()
        .map_err(|e| bad(format!("bad level: {e}")))?;
    let dofs_line = lines.next().ok_or_else(|| bad("missing DOFS line".into()))?;
    let dofs: usize = dofs_line
        .strip_prefix("DOFS ")
        .ok_or_else(|| bad(format!("expected `DOFS <n>`, found `{dofs_line}`")))?
        .trim()
        .parse()
        .map_err(|e| bad(format!("bad DOF count: {e}")))?;
    let mut values = Vec::with_capacity(dofs);
    for _ in 0..dofs {
        let line = lines.next().ok_or_else(|| bad("truncated DOF list".into()))?;
        values.push(
            line.trim()
                .parse()
                .map_err(|e| bad(format!("bad value `{line}`: {e}")))?,
        );
    }
    Ok(DiscreteField { space, level, values })
}
