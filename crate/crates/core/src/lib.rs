//! Heat-kernel optimal-transport metric flows.
//!
//! On a finite metric-measure space the heat semigroup `H_t` induces the
//! distances `d̃_t(x, y) = W_2(H_t δ_x, H_t δ_y)` and their length metric
//! `d_t`. On the circle, the flat torus and the round sphere the same
//! construction gives a Riemannian metric `g_t`, computed here through the
//! weighted Poisson problem `div(ρ ∇φ) = −∇_x ρ · v`. The crate checks
//! contraction, metric speed, the Bochner derivative formula and tangency
//! to the Ricci flow numerically.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod fixtures;
pub mod flow;
pub mod heat;
pub mod quadrature;
pub mod report;
pub mod space;
pub mod tangent;
pub mod transport;

pub use error::{Error, Result};
pub use flow::{
    contraction_report, dt_arc_matrix, dtilde_matrix, flow_distances, refinement_stability, time_continuity_report,
    ContractionReport, FlowDistanceMatrix, RefinementReport,
};
pub use heat::{
    circle_kernel, entropy, heat_apply, heat_kernel_matrix, spectral_decompose, sphere_kernel,
    ultracontractivity_constant, CircleKernel, HeatKernel, HeatSemigroup, HeatStructure, SphereKernel, ZonalSphereHeat,
};
pub use nalgebra::DMatrix;
pub use report::CheckRecord;
pub use space::{
    build_space, curve_length, model_circle, model_sphere, model_torus, Curve, Edge, FiniteMetricMeasureSpace,
    ModelGeometry, SpaceFile,
};
pub use tangent::{
    bochner_check, gt_derivative_bochner, hessian_energy, metric_gt, metric_speed_check, ric_pairing,
    solve_weighted_poisson, tangency_experiment, tangent_plan, velocity_potential, BochnerCheck, MetricSpeedReport,
    RotationCurve, TangencyReport, TangentPlan, VelocityPotential,
};
pub use transport::{c_transform, dual_gap, w2_exact, w2_sinkhorn, DualPotentials, TransportPlan};
