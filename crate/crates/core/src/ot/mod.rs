//! Entropic optimal transport on regular grids with the quadratic cost.

pub mod kernel;
pub mod plan;
pub mod sinkhorn;

pub use kernel::{gaussian_kernel_apply, LogKernel};
pub use plan::{
    barycentric_projection, displacement_field, displacement_with_self, self_projection, transport_plan, DisplacementField, TransportPlan,
    MAX_PLAN_ENTRIES,
};
pub use sinkhorn::{
    accept_best_effort, ot_eps, sinkhorn_divergence, sinkhorn_potentials, sinkhorn_self, DualPotentials,
    SinkhornSolution, SolverConfig, SolverDiagnostics,
};
