//! Approximate steering: evolve under a base control up to `T - l`, then
//! switch to the regularized Grammian control on the tail window.

use std::io::{self, Write};
use std::time::Instant;

use rayon::prelude::*;

use crate::dynamics::{
    check_growth_bound, exponential_trapezoid_step, BaseControl, ControlLaw, ProblemSpec, Side,
    Simulator, Trajectory,
};
use crate::error::{invalid, Error, Result};
use crate::grammian::{assemble_grammian, regularized_solve, GrammianMatrix, SynthesizedTail};
use crate::spectral::{apply_semigroup, ActuatorSet, SineBasis, SpectralState};

/// Truncation and time step shared by every run of a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discretization {
    pub n_modes: usize,
    pub n_grid: usize,
    pub dt: f64,
}

impl Discretization {
    pub fn basis(&self) -> Result<SineBasis> {
        SineBasis::new(self.n_modes, self.n_grid)
    }
}

#[derive(Debug, Clone)]
pub struct SteeringPlan {
    pub base_control: BaseControl,
    pub tail: f64,
    pub alpha: f64,
    pub target: SpectralState,
}

impl SteeringPlan {
    pub fn new(target: SpectralState, tail: f64, alpha: f64) -> Self {
        Self {
            base_control: BaseControl::Zero,
            tail,
            alpha,
            target,
        }
    }

    /// Checks `0 < l < min(T - s_N, r)` and `α ∈ (0, 1]`.
    pub fn validate(&self, spec: &ProblemSpec) -> Result<()> {
        let limit = (spec.horizon() - spec.schedule.last_end()).min(spec.delay());
        if !(self.tail > 0.0 && self.tail < limit) {
            return Err(invalid(
                "tail length",
                format!(
                    "need 0 < l < min(T - s_N, r) = {limit}, got l = {}",
                    self.tail
                ),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid(
                "alpha",
                format!("must lie in (0, 1], got {}", self.alpha),
            ));
        }
        Ok(())
    }

    fn validate_linear(&self, spec: &ProblemSpec) -> Result<()> {
        if !(self.tail > 0.0 && self.tail <= spec.horizon()) {
            return Err(invalid(
                "tail length",
                format!("need 0 < l <= T, got l = {}", self.tail),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid(
                "alpha",
                format!("must be positive, got {}", self.alpha),
            ));
        }
        Ok(())
    }
}

/// Errors and diagnostics of one steering run.
///
/// With `y_α(T) = S(l) ω(T - l) + Q z` the state the tail control would reach
/// without nonlinear forcing, `achieved_error ≤ linear_predicted_error + tail_perturbation`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringReport {
    pub alpha: f64,
    pub tail: f64,
    /// `‖ω(T) - ω¹‖`.
    pub achieved_error: f64,
    /// `‖α (αI + Q)⁻¹ (ω¹ - S(l) ω(T - l))‖`.
    pub linear_predicted_error: f64,
    /// `‖ω(T) - y_α(T)‖`.
    pub tail_perturbation: f64,
    /// Distance from `y_α(T)` to the same tail stepped without nonlinear terms.
    pub discretization_error: f64,
    /// Distance from `ω(T)` to the linear-only stepped tail.
    pub nonlinear_tail: f64,
    /// Quadrature of the forcing bound over the tail; dominates `nonlinear_tail`.
    pub tail_bound: f64,
    /// Growth-bound margin along the run when `ρ` is known.
    pub hypothesis_margin: Option<f64>,
    pub state_at_switch: SpectralState,
    pub final_state: SpectralState,
}

#[derive(Debug, Clone)]
pub struct SteeringRun {
    pub report: SteeringReport,
    pub trajectory: Trajectory,
    pub grammian: GrammianMatrix,
    pub tail_solution: SynthesizedTail,
    pub runtime_s: f64,
}

/// Steers the linear heat equation from `y0` at `t = 0` with zero control up to `T - l`.
pub fn steer_linear(
    y0: &SpectralState,
    target: &SpectralState,
    horizon: f64,
    tail: f64,
    alpha: f64,
    theta: &ActuatorSet,
    discretization: &Discretization,
) -> Result<SteeringRun> {
    let spec = ProblemSpec::linear(theta.clone(), horizon, y0.clone())?;
    let plan = SteeringPlan::new(target.clone(), tail, alpha);
    plan.validate_linear(&spec)?;
    run_plan(&spec, &plan, discretization)
}

/// Base control on `[0, T - l]`, regularized tail control on `(T - l, T]`.
pub fn steer_semilinear(
    spec: &ProblemSpec,
    plan: &SteeringPlan,
    discretization: &Discretization,
) -> Result<SteeringRun> {
    plan.validate(spec)?;
    run_plan(spec, plan, discretization)
}

fn run_plan(spec: &ProblemSpec, plan: &SteeringPlan, disc: &Discretization) -> Result<SteeringRun> {
    let clock = Instant::now();
    let n = disc.n_modes;
    plan.target.check_len(n)?;
    let horizon = spec.horizon();
    let switch = horizon - plan.tail;

    let mut sim = Simulator::new(spec, disc.basis()?, disc.dt, &[switch])?;
    let base = ControlLaw::new(plan.base_control.clone());
    sim.advance_to(switch, &base)?;
    let state_at_switch = sim.state().clone();

    let grammian = assemble_grammian(&spec.theta, horizon, plan.tail, n)?;
    let free = apply_semigroup(plan.tail, &state_at_switch)?;
    let residual = &plan.target - &free;
    let tail_solution = regularized_solve(&grammian, plan.alpha, &residual)?;
    let control = ControlLaw::with_tail(plan.base_control.clone(), tail_solution.clone())?;
    sim.advance_to(horizon, &control)?;

    if spec.reads_delayed_state() && sim.max_delay_read() > switch {
        return Err(invalid(
            "tail length",
            format!(
                "delay lookup at {} reads inside the tail window starting at {switch}",
                sim.max_delay_read()
            ),
        ));
    }

    let linear_final = &free + &grammian.apply(tail_solution.z())?;
    let stepped = linear_tail(&sim, &control, switch, horizon, &state_at_switch);
    let trajectory = sim.into_trajectory();
    let final_state = trajectory.final_node().state.clone();

    let hypothesis_margin = match &spec.growth_bound {
        Some(_) => Some(check_growth_bound(&trajectory, spec)?.margin),
        None => None,
    };
    let report = SteeringReport {
        alpha: plan.alpha,
        tail: plan.tail,
        achieved_error: (&final_state - &plan.target).norm(),
        linear_predicted_error: (tail_solution.z() * plan.alpha).norm(),
        tail_perturbation: (&final_state - &linear_final).norm(),
        discretization_error: (&stepped - &linear_final).norm(),
        nonlinear_tail: (&final_state - &stepped).norm(),
        tail_bound: trajectory.tail_forcing_bound(spec, switch)?,
        hypothesis_margin,
        state_at_switch,
        final_state,
    };
    Ok(SteeringRun {
        report,
        trajectory,
        grammian,
        tail_solution,
        runtime_s: clock.elapsed().as_secs_f64(),
    })
}

/// The tail stepped on the simulation grid with actuation as the only forcing.
fn linear_tail(
    sim: &Simulator<'_>,
    control: &ControlLaw,
    from: f64,
    to: f64,
    start: &SpectralState,
) -> SpectralState {
    let times = sim.grid_times(from, to);
    let mut y = start.coeffs().clone();
    for w in times.windows(2) {
        let f0 = control.actuation(w[0], Side::Right, sim.overlap());
        let f1 = control.actuation(w[1], Side::Left, sim.overlap());
        y = exponential_trapezoid_step(w[1] - w[0], &y, &f0, &f1);
    }
    SpectralState::from_vector_unchecked(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteeringMode {
    /// Linear heat equation from `h(0)`; nonlinear terms, impulses and the base control are ignored.
    Linear,
    Semilinear,
}

/// A problem, target and discretization that sweeps vary `(α, l)` over.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ProblemSpec,
    pub target: SpectralState,
    pub base_control: BaseControl,
    pub discretization: Discretization,
    pub mode: SteeringMode,
}

impl Scenario {
    pub fn run(&self, alpha: f64, tail: f64) -> Result<SteeringRun> {
        match self.mode {
            SteeringMode::Linear => steer_linear(
                &self.spec.history.value(0.0)?,
                &self.target,
                self.spec.horizon(),
                tail,
                alpha,
                &self.spec.theta,
                &self.discretization,
            ),
            SteeringMode::Semilinear => {
                let plan = SteeringPlan {
                    base_control: self.base_control.clone(),
                    tail,
                    alpha,
                    target: self.target.clone(),
                };
                steer_semilinear(&self.spec, &plan, &self.discretization)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub alpha: f64,
    pub tail: f64,
    pub outcome: std::result::Result<SteeringReport, Error>,
    pub runtime_s: f64,
}

/// One report per `(α, l)` in the product of the lists, α-major.
pub fn sweep(scenario: &Scenario, alphas: &[f64], tails: &[f64]) -> Vec<SweepCell> {
    let pairs: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|&a| tails.iter().map(move |&l| (a, l)))
        .collect();
    sweep_pairs(scenario, &pairs)
}

/// One report per listed `(α, l)` pair, in input order. Cells run in parallel.
pub fn sweep_pairs(scenario: &Scenario, pairs: &[(f64, f64)]) -> Vec<SweepCell> {
    pairs
        .par_iter()
        .map(|&(alpha, tail)| {
            let clock = Instant::now();
            let outcome = scenario.run(alpha, tail).map(|r| r.report);
            SweepCell {
                alpha,
                tail,
                outcome,
                runtime_s: clock.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

/// Largest `α` in `[alpha_min, 1]` (to a factor of `1 + 1e-6`) whose achieved error is at most `epsilon`.
///
/// Assumes the achieved error decreases with `α`. Returns `None` when even
/// `alpha_min` misses `epsilon`.
pub fn alpha_for_tolerance(
    scenario: &Scenario,
    tail: f64,
    epsilon: f64,
    alpha_min: f64,
) -> Result<Option<(f64, SteeringReport)>> {
    if !(epsilon > 0.0) {
        return Err(invalid(
            "epsilon",
            format!("must be positive, got {epsilon}"),
        ));
    }
    if !(alpha_min > 0.0 && alpha_min < 1.0) {
        return Err(invalid(
            "alpha_min",
            format!("must lie in (0, 1), got {alpha_min}"),
        ));
    }
    let top = scenario.run(1.0, tail)?.report;
    if top.achieved_error <= epsilon {
        return Ok(Some((1.0, top)));
    }
    let bottom = scenario.run(alpha_min, tail)?.report;
    if bottom.achieved_error > epsilon {
        return Ok(None);
    }
    let (mut lo, mut hi) = (alpha_min.ln(), 0.0_f64);
    let mut best = (alpha_min, bottom);
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        let report = scenario.run(mid.exp(), tail)?.report;
        if report.achieved_error <= epsilon {
            best = (mid.exp(), report);
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(best))
}

pub const REPORT_COLUMNS: &str = "alpha,l,achieved_error,linear_predicted_error,tail_perturbation,\
runtime_s,hypothesis_margin,tail_bound,discretization_error,status";

/// Writes report rows; without `with_runtime` the runtime column is `0` so output is byte-stable.
pub fn write_report_csv<W: Write>(
    mut out: W,
    cells: &[SweepCell],
    with_runtime: bool,
) -> io::Result<()> {
    writeln!(out, "{REPORT_COLUMNS}")?;
    for cell in cells {
        let runtime = if with_runtime { cell.runtime_s } else { 0.0 };
        match &cell.outcome {
            Ok(r) => writeln!(
                out,
                "{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{},{:.8e},{:.8e},ok",
                r.alpha,
                r.tail,
                r.achieved_error,
                r.linear_predicted_error,
                r.tail_perturbation,
                runtime,
                r.hypothesis_margin
                    .map_or_else(String::new, |m| format!("{m:.8e}")),
                r.tail_bound,
                r.discretization_error,
            )?,
            Err(e) => writeln!(
                out,
                "{:.8e},{:.8e},,,,{runtime:.8e},,,,\"{}\"",
                cell.alpha,
                cell.tail,
                e.to_string().replace('"', "'"),
            )?,
        }
    }
    Ok(())
}
