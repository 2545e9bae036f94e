//! Approximate controllability of the controlled heat equation on `[0, π]`
//! with Dirichlet boundary conditions, and of its semilinear perturbations
//! with delay, memory and non-instantaneous impulses.
//!
//! Everything is computed on an `N`-mode truncation of the sine basis
//! `e_n(x) = √(2/π) sin(nx)`, in which the heat semigroup is diagonal.

// `!(x > 0.0)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod grammian;
mod numerics;
pub mod spectral;
pub mod steering;

pub use dynamics::{
    check_growth_bound, delay_lookup, memory_term, simulate_mild, BaseControl, ControlLaw,
    ForcingSample, GrowthBound, GrowthReport, History, ImpulseSchedule, MemoryKernel, PointwiseMap,
    ProblemSpec, SegmentTag, Simulator, StateProfile, Trajectory, TrajectoryNode,
    IMPULSE_MAX_ITERATIONS, IMPULSE_TOLERANCE,
};
pub use error::{Error, Result};
pub use grammian::{
    assemble_grammian, check_controllability, predicted_final_state, regularized_solve,
    steering_error, ControllabilityReport, GrammianMatrix, ProbeDiagnostic, SteeringError,
    SynthesizedTail, TailWindow, SOLVE_TOLERANCE,
};
pub use spectral::{
    apply_generator, apply_semigroup, decay_factors, eigenvalue, overlap_matrix, project,
    synthesize, uniform_grid, ActuatorSet, PhysicalField, SineBasis, SpectralState,
};
pub use steering::{
    alpha_for_tolerance, steer_linear, steer_semilinear, sweep, sweep_pairs, write_report_csv,
    Discretization, Scenario, SteeringMode, SteeringPlan, SteeringReport, SteeringRun, SweepCell,
    REPORT_COLUMNS,
};
