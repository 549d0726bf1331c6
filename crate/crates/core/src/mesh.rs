//! Conforming triangulations of rectangles: criss-cross construction, uniform
//! red refinement, and the geometric quantities used by the discrete spaces.
//!
//! Conventions used throughout the crate:
//! * element vertices are stored counter-clockwise, so all signed areas are
//!   positive;
//! * sides are undirected vertex pairs `(a, b)` with `a < b`, enumerated in
//!   lexicographic order of those pairs, which makes every derived numbering
//!   deterministic;
//! * local side `i` of an element is the side opposite local vertex `i`;
//! * the global unit normal of an interior side points from the adjacent
//!   element with the smaller index into the one with the larger index, and
//!   outward on boundary sides.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Point2, Vector2};

use crate::error::{Error, Result};

/// 2d point alias used by the whole crate.
pub type Pt2 = Point2<f64>;
/// 2d vector alias used by the whole crate.
pub type Vec2 = Vector2<f64>;

/// Classification of a side with respect to the boundary decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryLabel {
    /// Side shared by two elements.
    Interior,
    /// Boundary side carrying an essential (zero trace) condition.
    Dirichlet,
    /// Boundary side carrying a natural (zero normal flux) condition.
    Neumann,
}

/// Selects which parts of the rectangle boundary are Dirichlet; the rest of
/// the boundary becomes Neumann.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirichletSelector {
    /// Essential conditions on the whole boundary (the default study setup).
    All,
    /// Essential conditions on a per-edge selection of the rectangle.
    Edges {
        left: bool,
        right: bool,
        bottom: bool,
        top: bool,
    },
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    /// The square `(-1, 1)^2` used by the convergence studies.
    pub fn symmetric_unit() -> Self {
        Rect { x0: -1.0, x1: 1.0, y0: -1.0, y1: 1.0 }
    }
}

/// An undirected mesh side together with its boundary classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Side {
    /// Vertex pair with `vertices.0 < vertices.1`.
    pub vertices: (usize, usize),
    pub label: BoundaryLabel,
}

/// A conforming triangulation of a rectangle.
#[derive(Debug, Clone)]
pub struct Triangulation {
    /// Vertex coordinates.
    pub vertices: Vec<Pt2>,
    /// Vertex index triples, counter-clockwise.
    pub elements: Vec<[usize; 3]>,
    /// Sides in lexicographic order of their sorted vertex pairs.
    pub sides: Vec<Side>,
    /// For each element, the side opposite each local vertex.
    pub side_of_element: Vec<[usize; 3]>,
    /// `+1` where the global side normal is outward for this element, `-1`
    /// where it points inward; indexed like [`Triangulation::side_of_element`].
    pub side_orientation: Vec<[i8; 3]>,
    /// Adjacent elements per side: `(plus, minus)` with `plus < minus`;
    /// boundary sides have no minus element.
    pub elements_of_side: Vec<(usize, Option<usize>)>,
    /// Refinement generation; the initial construction is level 1.
    pub level: u32,
    /// For refined meshes, the parent element of each element; empty on the
    /// initial mesh.
    pub parent_of_element: Vec<usize>,
}

/// Geometric data derived from a [`Triangulation`].
#[derive(Debug, Clone)]
pub struct MeshMetrics {
    /// Averaged mesh size `(|Omega| / #vertices)^(1/2)`.
    pub h_avg: f64,
    /// Largest element diameter.
    pub h_max: f64,
    /// Total area of the triangulated domain.
    pub domain_area: f64,
    /// Element areas (positive).
    pub area: Vec<f64>,
    /// Element diameters.
    pub h_elem: Vec<f64>,
    /// Element barycenters.
    pub barycenter: Vec<Pt2>,
    /// Gradients of the three barycentric coordinates of each element.
    pub grad_bary: Vec<[Vec2; 3]>,
    /// Side lengths.
    pub h_side: Vec<f64>,
    /// Side midpoints.
    pub midpoint_side: Vec<Pt2>,
    /// Element diameter over inradius, per element.
    pub chunkiness: Vec<f64>,
    /// Vertex-sharing element patch of each element (includes the element).
    pub patch_elem: Vec<Vec<usize>>,
    /// Side-sharing element patch of each side (one or two elements).
    pub patch_side: Vec<Vec<usize>>,
}

impl Triangulation {
    /// Number of vertices.
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Number of sides.
    pub fn n_sides(&self) -> usize {
        self.sides.len()
    }

    /// Number of elements.
    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// Vertex coordinates of an element.
    pub fn element_vertices(&self, t: usize) -> [Pt2; 3] {
        let [a, b, c] = self.elements[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Local index (0..3) of `side` within element `t`.
    pub fn local_side_index(&self, t: usize, side: usize) -> Option<usize> {
        self.side_of_element[t].iter().position(|&s| s == side)
    }

    /// Unit normal of a side in the global orientation: outward for the
    /// adjacent element with the smaller index (and hence outward on the
    /// boundary).
    pub fn side_normal(&self, side: usize) -> Vec2 {
        let t = self.elements_of_side[side].0;
        let i = self
            .local_side_index(t, side)
            .expect("side adjacency is consistent");
        let [a, b, c] = self.elements[t];
        let ids = [a, b, c];
        // Side i runs from local vertex i+1 to i+2 in counter-clockwise
        // order; its outward normal is the clockwise rotation of that edge.
        let from = self.vertices[ids[(i + 1) % 3]];
        let to = self.vertices[ids[(i + 2) % 3]];
        let e = to - from;
        Vector2::new(e.y, -e.x).normalize()
    }
}

/// Builds the alternating-diagonal (criss-cross) triangulation of `rect`
/// with `n x n` cells, two triangles per cell. The diagonal direction
/// alternates in a checkerboard pattern, which makes the mesh point
/// symmetric about the rectangle center for even `n`.
pub fn build_criss_cross(
    n: usize,
    rect: Rect,
    dirichlet_on: DirichletSelector,
) -> Result<Triangulation> {
    if n == 0 {
        return Err(Error::EmptyMesh);
    }
    if !(rect.x1 > rect.x0 && rect.y1 > rect.y0)
        || !(rect.x0.is_finite() && rect.x1.is_finite() && rect.y0.is_finite() && rect.y1.is_finite())
    {
        return Err(Error::DegenerateDomain {
            x0: rect.x0,
            x1: rect.x1,
            y0: rect.y0,
            y1: rect.y1,
        });
    }

    let dx = (rect.x1 - rect.x0) / n as f64;
    let dy = (rect.y1 - rect.y0) / n as f64;
    let vid = |i: usize, j: usize| j * (n + 1) + i;

    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            let x = if i == n { rect.x1 } else { rect.x0 + i as f64 * dx };
            let y = if j == n { rect.y1 } else { rect.y0 + j as f64 * dy };
            vertices.push(Point2::new(x, y));
        }
    }

    let mut elements = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let v00 = vid(i, j);
            let v10 = vid(i + 1, j);
            let v11 = vid(i + 1, j + 1);
            let v01 = vid(i, j + 1);
            if (i + j) % 2 == 0 {
                elements.push([v00, v10, v11]);
                elements.push([v00, v11, v01]);
            } else {
                elements.push([v00, v10, v01]);
                elements.push([v10, v11, v01]);
            }
        }
    }

    let on = |v: f64, target: f64| (v - target).abs() <= 1e-12 * (1.0 + target.abs());
    let label_of = |a: Pt2, b: Pt2| -> BoundaryLabel {
        let mid = Point2::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y));
        let (left, right, bottom, top) = (
            on(mid.x, rect.x0),
            on(mid.x, rect.x1),
            on(mid.y, rect.y0),
            on(mid.y, rect.y1),
        );
        let dirichlet = match dirichlet_on {
            DirichletSelector::All => true,
            DirichletSelector::Edges { left: l, right: r, bottom: b, top: t } => {
                (left && l) || (right && r) || (bottom && b) || (top && t)
            }
        };
        if dirichlet { BoundaryLabel::Dirichlet } else { BoundaryLabel::Neumann }
    };

    finalize(vertices, elements, 1, Vec::new(), |a, b, _| label_of(a, b))
}

/// Uniform red refinement: every element is split into four congruent
/// children through its side midpoints. Boundary labels are inherited from
/// the parent sides, midpoint vertex ids are `parent_vertex_count + side_id`,
/// and the level counter is incremented.
pub fn red_refine(mesh: &Triangulation) -> Triangulation {
    let nv = mesh.n_vertices();
    let mut vertices = mesh.vertices.clone();
    for side in &mesh.sides {
        let (a, b) = side.vertices;
        let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
        vertices.push(Point2::new(0.5 * (pa.x + pb.x), 0.5 * (pa.y + pb.y)));
    }

    let mut elements = Vec::with_capacity(4 * mesh.n_elements());
    let mut parents = Vec::with_capacity(4 * mesh.n_elements());
    for (t, &[a, b, c]) in mesh.elements.iter().enumerate() {
        let [s0, s1, s2] = mesh.side_of_element[t];
        let (m0, m1, m2) = (nv + s0, nv + s1, nv + s2);
        elements.push([a, m2, m1]);
        elements.push([m2, b, m0]);
        elements.push([m1, m0, c]);
        elements.push([m0, m1, m2]);
        parents.extend_from_slice(&[t, t, t, t]);
    }

    // A child side with two midpoint endpoints lies strictly inside a parent
    // element; one with an original vertex endpoint is half of the parent
    // side whose midpoint forms its other endpoint.
    let parent_sides = &mesh.sides;
    let label_of = |_: Pt2, _: Pt2, pair: (usize, usize)| -> BoundaryLabel {
        let (a, b) = pair;
        if a < nv && b >= nv {
            parent_sides[b - nv].label
        } else {
            BoundaryLabel::Interior
        }
    };

    finalize(vertices, elements, mesh.level + 1, parents, label_of)
        .expect("refinement of a valid mesh is valid")
}

/// Builds side connectivity and adjacency for a vertex/element soup. The
/// `label_of` closure classifies a candidate boundary side given its end
/// point coordinates and sorted vertex pair; interior sides are classified
/// directly from their adjacency count.
fn finalize(
    vertices: Vec<Pt2>,
    elements: Vec<[usize; 3]>,
    level: u32,
    parent_of_element: Vec<usize>,
    label_of: impl Fn(Pt2, Pt2, (usize, usize)) -> BoundaryLabel,
) -> Result<Triangulation> {
    // Orientation check: all signed areas must be positive.
    for &[a, b, c] in &elements {
        let (pa, pb, pc) = (vertices[a], vertices[b], vertices[c]);
        let det = (pb.x - pa.x) * (pc.y - pa.y) - (pb.y - pa.y) * (pc.x - pa.x);
        debug_assert!(det > 0.0, "element [{a}, {b}, {c}] is not counter-clockwise");
    }

    let mut adjacency: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (t, &[a, b, c]) in elements.iter().enumerate() {
        for (u, v) in [(b, c), (a, c), (a, b)] {
            let key = (u.min(v), u.max(v));
            adjacency.entry(key).or_default().push(t);
        }
    }

    let mut sides = Vec::with_capacity(adjacency.len());
    let mut elements_of_side = Vec::with_capacity(adjacency.len());
    let mut side_id: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (pair, elems) in &adjacency {
        let label = match elems.len() {
            1 => label_of(vertices[pair.0], vertices[pair.1], *pair),
            2 => BoundaryLabel::Interior,
            n => {
                return Err(Error::ParseError {
                    what: "mesh topology",
                    reason: format!("side {pair:?} is shared by {n} elements"),
                })
            }
        };
        side_id.insert(*pair, sides.len());
        sides.push(Side { vertices: *pair, label });
        let plus = *elems.iter().min().expect("non-empty");
        let minus = elems.iter().max().copied().filter(|&m| m != plus);
        elements_of_side.push((plus, minus));
    }

    let mut side_of_element = Vec::with_capacity(elements.len());
    let mut side_orientation = Vec::with_capacity(elements.len());
    for (t, &[a, b, c]) in elements.iter().enumerate() {
        let mut ids = [0usize; 3];
        let mut orient = [0i8; 3];
        for (i, (u, v)) in [(b, c), (a, c), (a, b)].into_iter().enumerate() {
            let s = side_id[&(u.min(v), u.max(v))];
            ids[i] = s;
            orient[i] = if elements_of_side[s].0 == t { 1 } else { -1 };
        }
        side_of_element.push(ids);
        side_orientation.push(orient);
    }

    Ok(Triangulation {
        vertices,
        elements,
        sides,
        side_of_element,
        side_orientation,
        elements_of_side,
        level,
        parent_of_element,
    })
}

/// Computes areas, diameters, barycenters, barycentric gradients, side data,
/// shape-regularity ratios and the vertex/side element patches of a mesh.
pub fn compute_metrics(mesh: &Triangulation) -> MeshMetrics {
    let nt = mesh.n_elements();
    let mut area = Vec::with_capacity(nt);
    let mut h_elem = Vec::with_capacity(nt);
    let mut barycenter = Vec::with_capacity(nt);
    let mut grad_bary = Vec::with_capacity(nt);
    let mut chunkiness = Vec::with_capacity(nt);

    for t in 0..nt {
        let [pa, pb, pc] = mesh.element_vertices(t);
        let det = (pb.x - pa.x) * (pc.y - pa.y) - (pb.y - pa.y) * (pc.x - pa.x);
        let a = 0.5 * det;
        let (la, lb, lc) = ((pc - pb).norm(), (pa - pc).norm(), (pb - pa).norm());
        let diam = la.max(lb).max(lc);
        let inradius = 2.0 * a / (la + lb + lc);
        area.push(a);
        h_elem.push(diam);
        chunkiness.push(diam / inradius);
        barycenter.push(Point2::new(
            (pa.x + pb.x + pc.x) / 3.0,
            (pa.y + pb.y + pc.y) / 3.0,
        ));
        // grad(lambda_i) is the counter-clockwise rotation of the opposite
        // side vector, scaled by the inverse doubled area.
        let rot = |v: Vec2| Vector2::new(-v.y, v.x);
        grad_bary.push([
            rot(pc - pb) / det,
            rot(pa - pc) / det,
            rot(pb - pa) / det,
        ]);
    }

    let mut h_side = Vec::with_capacity(mesh.n_sides());
    let mut midpoint_side = Vec::with_capacity(mesh.n_sides());
    for side in &mesh.sides {
        let (a, b) = side.vertices;
        let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
        h_side.push((pb - pa).norm());
        midpoint_side.push(Point2::new(0.5 * (pa.x + pb.x), 0.5 * (pa.y + pb.y)));
    }

    let mut elems_of_vertex: Vec<Vec<usize>> = vec![Vec::new(); mesh.n_vertices()];
    for (t, verts) in mesh.elements.iter().enumerate() {
        for &v in verts {
            elems_of_vertex[v].push(t);
        }
    }
    let mut patch_elem = Vec::with_capacity(nt);
    for verts in &mesh.elements {
        let mut patch: Vec<usize> = verts
            .iter()
            .flat_map(|&v| elems_of_vertex[v].iter().copied())
            .collect();
        patch.sort_unstable();
        patch.dedup();
        patch_elem.push(patch);
    }
    let patch_side = mesh
        .elements_of_side
        .iter()
        .map(|&(plus, minus)| match minus {
            Some(m) => vec![plus, m],
            None => vec![plus],
        })
        .collect();

    let domain_area: f64 = area.iter().sum();
    let h_avg = (domain_area / mesh.n_vertices() as f64).sqrt();
    let h_max = h_elem.iter().cloned().fold(0.0, f64::max);

    MeshMetrics {
        h_avg,
        h_max,
        domain_area,
        area,
        h_elem,
        barycenter,
        grad_bary,
        h_side,
        midpoint_side,
        chunkiness,
        patch_elem,
        patch_side,
    }
}

/// Serializes a mesh to the plain-text interchange format: a `V S T` header
/// line, the three counts, vertex coordinates, sides with boundary labels
/// (`i`/`d`/`n`), and element vertex triples.
pub fn export_text(mesh: &Triangulation) -> String {
    let mut out = String::new();
    out.push_str("V S T\n");
    let _ = writeln!(
        out,
        "{} {} {}",
        mesh.n_vertices(),
        mesh.n_sides(),
        mesh.n_elements()
    );
    for p in &mesh.vertices {
        let _ = writeln!(out, "{:?} {:?}", p.x, p.y);
    }
    for side in &mesh.sides {
        let tag = match side.label {
            BoundaryLabel::Interior => 'i',
            BoundaryLabel::Dirichlet => 'd',
            BoundaryLabel::Neumann => 'n',
        };
        let _ = writeln!(out, "{} {} {}", side.vertices.0, side.vertices.1, tag);
    }
    for &[a, b, c] in &mesh.elements {
        let _ = writeln!(out, "{a} {b} {c}");
    }
    out
}

/// Parses the plain-text format produced by [`export_text`] and rebuilds all
/// derived connectivity. The dump carries geometry, topology and labels only;
/// the imported mesh starts a fresh refinement history at level 1.
pub fn import_text(text: &str) -> Result<Triangulation> {
    let bad = |reason: String| Error::ParseError { what: "mesh file", reason };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    if header.trim() != "V S T" {
        return Err(bad(format!("expected `V S T` header, found `{header}`")));
    }
    let counts: Vec<usize> = lines
        .next()
        .ok_or_else(|| bad("missing counts line".into()))?
        .split_whitespace()
        .map(|w| w.parse().map_err(|e| bad(format!("bad count `{w}`: {e}"))))
        .collect::<Result<_>>()?;
    let [nv, ns, nt]: [usize; 3] = counts
        .try_into()
        .map_err(|_| bad("counts line must contain three numbers".into()))?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let line = lines.next().ok_or_else(|| bad("truncated vertex list".into()))?;
        let xy: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse().map_err(|e| bad(format!("bad coordinate `{w}`: {e}"))))
            .collect::<Result<_>>()?;
        let [x, y]: [f64; 2] = xy
            .try_into()
            .map_err(|_| bad("vertex line must contain two coordinates".into()))?;
        vertices.push(Point2::new(x, y));
    }

    let mut labels: BTreeMap<(usize, usize), BoundaryLabel> = BTreeMap::new();
    for _ in 0..ns {
        let line = lines.next().ok_or_else(|| bad("truncated side list".into()))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [a, b, tag]: [&str; 3] = parts
            .try_into()
            .map_err(|_| bad("side line must be `a b label`".into()))?;
        let a: usize = a.parse().map_err(|e| bad(format!("bad vertex id `{a}`: {e}")))?;
        let b: usize = b.parse().map_err(|e| bad(format!("bad vertex id `{b}`: {e}")))?;
        let label = match tag {
            "i" => BoundaryLabel::Interior,
            "d" => BoundaryLabel::Dirichlet,
            "n" => BoundaryLabel::Neumann,
            other => return Err(bad(format!("unknown boundary label `{other}`"))),
        };
        labels.insert((a.min(b), a.max(b)), label);
    }

    let mut elements = Vec::with_capacity(nt);
    for _ in 0..nt {
        let line = lines.next().ok_or_else(|| bad("truncated element list".into()))?;
        let ids: Vec<usize> = line
            .split_whitespace()
            .map(|w| w.parse().map_err(|e| bad(format!("bad vertex id `{w}`: {e}"))))
            .collect::<Result<_>>()?;
        let ids: [usize; 3] = ids
            .try_into()
            .map_err(|_| bad("element line must contain three vertex ids".into()))?;
        if ids.iter().any(|&v| v >= nv) {
            return Err(bad(format!("element {ids:?} references a missing vertex")));
        }
        elements.push(ids);
    }

    let mesh = finalize(vertices, elements, 1, Vec::new(), |_, _, pair| {
        labels.get(&pair).copied().unwrap_or(BoundaryLabel::Dirichlet)
    })?;
    if mesh.n_sides() != ns {
        return Err(bad(format!(
            "side count {} does not match element connectivity ({} sides)",
            ns,
            mesh.n_sides()
        )));
    }
    for side in &mesh.sides {
        match labels.get(&side.vertices) {
            Some(&l) if l == side.label => {}
            Some(&l) if side.label == BoundaryLabel::Interior && l != BoundaryLabel::Interior => {
                return Err(bad(format!(
                    "side {:?} is labeled as boundary but is shared by two elements",
                    side.vertices
                )))
            }
            Some(_) => {}
            None => {
                return Err(bad(format!(
                    "side {:?} appears in elements but not in the side list",
                    side.vertices
                )))
            }
        }
    }
    Ok(mesh)
}
