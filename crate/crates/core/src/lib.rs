//! Nonconforming finite elements for variable-exponent diffusion.
//!
//! The crate solves the homogeneous Dirichlet problem for the divergence-form
//! equation with kernel `(delta + |grad u|)^(p(x) - 2) grad u` on rectangles,
//! using first-order nonconforming (midpoint-continuous) elements. From each
//! primal solution it reconstructs an element-wise affine dual flux whose
//! divergence matches the load exactly, and audits the pair with discrete
//! convex-duality identities. A study driver reproduces manufactured-solution
//! convergence tables with reliable rate estimates.

pub mod duality;
pub mod error;
pub mod fem;
pub mod mesh;
pub mod nfunction;
pub mod quadrature;
pub mod solver;
pub mod sparse;
pub mod study;

pub use duality::{
    audit, divergence_free_perturbation, dual_energy, marini_flux, primal_energy, DualEnergy,
    DualityAudit, MariniFlux,
};
pub use error::{Error, Result};
pub use mesh::{
    build_criss_cross, compute_metrics, export_text, import_text, red_refine, BoundaryLabel,
    DirichletSelector, MeshMetrics, Pt2, Rect, Side, Triangulation, Vec2,
};
pub use fem::{build_spaces, DiscreteField, SpaceTag, Spaces};
pub use nfunction::{discretize_exponent, ElementExponents, ExponentField, PhiKit};
pub use quadrature::SimplexQuadrature;
pub use solver::{newton_solve, CrSystem, NewtonSystem, P1System, SolveReport, SolverConfig};
pub use sparse::{pcg_jacobi, CsrMatrix, PcgResult};
pub use study::{
    discretize_load, eoc, error_f, error_fstar, prolong_cr, run_study, to_csv, to_markdown,
    ConvergenceReport, LevelRow, ManufacturedCase, StudyConfig,
};
