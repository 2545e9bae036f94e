mod oracles;

use std::f64::consts::PI;

use heatsteer::{
    alpha_for_tolerance, apply_semigroup, steer_linear, steer_semilinear, sweep, sweep_pairs,
    write_report_csv, ActuatorSet, BaseControl, Discretization, GrowthBound, History,
    ImpulseSchedule, MemoryKernel, PhysicalField, PointwiseMap, ProblemSpec, Scenario, SegmentTag,
    SineBasis, SpectralState, SteeringMode, SteeringPlan,
};

fn sine_target(n: usize, n_grid: usize) -> SpectralState {
    SineBasis::new(n, n_grid)
        .unwrap()
        .project(&PhysicalField::sample(n_grid, f64::sin).unwrap())
        .unwrap()
}

fn reference_theta() -> ActuatorSet {
    ActuatorSet::new(oracles::reference_theta()).unwrap()
}

fn reference_discretization(dt: f64) -> Discretization {
    Discretization {
        n_modes: 16,
        n_grid: 1024,
        dt,
    }
}

/// Bounded delayed forcing, tanh memory response, one impulse pair with a constant map.
fn demo_spec(n: usize) -> ProblemSpec {
    let history = sine_target(n, 16 * n);
    ProblemSpec::new(
        History::constant(0.5, history).unwrap(),
        ImpulseSchedule::new(vec![(1.0, 1.2)], PI).unwrap(),
        reference_theta(),
    )
    .with_forcing(PointwiseMap::of_state(|w| 0.1 * w.sin()))
    .with_memory(
        MemoryKernel::Constant(0.05),
        PointwiseMap::of_state(f64::tanh),
    )
    .with_impulse_maps(vec![PointwiseMap::new(|_, x, _, _| 0.5 * x.sin())])
    .with_growth_bound(GrowthBound::power(0.1, 1.0, 0.0))
}

fn demo_scenario(dt: f64) -> Scenario {
    let n = 16;
    Scenario {
        spec: demo_spec(n),
        target: sine_target(n, 16 * n),
        base_control: BaseControl::Zero,
        discretization: Discretization {
            n_modes: n,
            n_grid: 16 * n,
            dt,
        },
        mode: SteeringMode::Semilinear,
    }
}

#[test]
fn reference_scenario_matches_closed_form() {
    let disc = reference_discretization(1e-3);
    let target = sine_target(16, 1024);
    let y0 = SpectralState::zeros(16);
    let run = steer_linear(
        &y0,
        &target,
        PI,
        7.0 * PI / 8.0,
        1e-3,
        &reference_theta(),
        &disc,
    )
    .unwrap();

    // Closed form with the Grammian integrated numerically.
    let q = oracles::grammian_by_quadrature(&oracles::reference_theta(), 7.0 * PI / 8.0, 16);
    let z = run.tail_solution.z().coeffs();
    let closed = q * z + apply_semigroup(7.0 * PI / 8.0, &y0).unwrap().coeffs();
    let final_state = run.report.final_state.coeffs();
    let rel = (final_state - &closed).norm() / closed.norm();
    assert!(rel < 1e-3, "final state relative error {rel:e}");

    let achieved = run.report.achieved_error / target.norm();
    let predicted = run.report.linear_predicted_error / target.norm();
    assert!(
        (achieved - predicted).abs() < 1e-3,
        "{achieved:e} vs {predicted:e}"
    );
    assert_eq!(run.report.nonlinear_tail, 0.0);
}

#[test]
fn zero_target_from_rest_needs_no_control() {
    let disc = reference_discretization(1e-2);
    let zero = SpectralState::zeros(16);
    let run = steer_linear(&zero, &zero, PI, 1.0, 1e-3, &reference_theta(), &disc).unwrap();
    assert_eq!(run.tail_solution.z(), &zero);
    assert_eq!(run.report.achieved_error, 0.0);
    assert!(run.trajectory.nodes().iter().all(|n| n.state == zero));
}

#[test]
fn linear_error_decreases_with_alpha() {
    let disc = reference_discretization(2e-3);
    let target = sine_target(16, 1024);
    let y0 = SpectralState::zeros(16);
    let errors: Vec<f64> = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5]
        .iter()
        .map(|&a| {
            steer_linear(
                &y0,
                &target,
                PI,
                7.0 * PI / 8.0,
                a,
                &reference_theta(),
                &disc,
            )
            .unwrap()
            .report
            .achieved_error
        })
        .collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
}

#[test]
fn linear_steering_refuses_bad_parameters() {
    let disc = reference_discretization(1e-2);
    let s = SpectralState::zeros(16);
    let theta = reference_theta();
    assert!(steer_linear(&s, &s, PI, 0.0, 1e-3, &theta, &disc).is_err());
    assert!(steer_linear(&s, &s, PI, 4.0, 1e-3, &theta, &disc).is_err());
    assert!(steer_linear(&s, &s, PI, 1.0, 0.0, &theta, &disc).is_err());
    assert!(steer_linear(&s, &s, PI, PI, 1e-3, &theta, &disc).is_ok());
}

#[test]
fn semilinear_without_nonlinearity_reproduces_linear() {
    let n = 16;
    let disc = Discretization {
        n_modes: n,
        n_grid: 256,
        dt: 2e-3,
    };
    let y0 = sine_target(n, 256);
    let target = &SpectralState::mode(n, 2) * 0.5;
    let linear = steer_linear(&y0, &target, PI, 0.3, 1e-3, &reference_theta(), &disc).unwrap();
    let spec = ProblemSpec::new(
        History::constant(0.5, y0.clone()).unwrap(),
        ImpulseSchedule::without_impulses(PI).unwrap(),
        reference_theta(),
    );
    let plan = SteeringPlan::new(target.clone(), 0.3, 1e-3);
    let semi = steer_semilinear(&spec, &plan, &disc).unwrap();
    let (a, b) = (linear.trajectory.live_nodes(), semi.trajectory.live_nodes());
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.t, y.t);
        assert!((&x.state - &y.state).norm() <= 1e-12, "t = {}", x.t);
    }
}

#[test]
fn plan_constraints_are_enforced() {
    let spec = demo_spec(8);
    let disc = Discretization {
        n_modes: 8,
        n_grid: 128,
        dt: 1e-2,
    };
    let target = SpectralState::zeros(8);
    // r = 0.5 and T - s_1 = π - 1.2, so l must stay below 0.5.
    for (tail, alpha) in [
        (0.5, 1e-2),
        (0.6, 1e-2),
        (0.0, 1e-2),
        (0.2, 0.0),
        (0.2, 1.5),
    ] {
        let plan = SteeringPlan::new(target.clone(), tail, alpha);
        assert!(
            steer_semilinear(&spec, &plan, &disc).is_err(),
            "l = {tail}, alpha = {alpha}"
        );
    }
    let late_impulse = ProblemSpec::new(
        History::constant(0.5, target.clone()).unwrap(),
        ImpulseSchedule::new(vec![(2.8, 3.0)], PI).unwrap(),
        reference_theta(),
    )
    .with_impulse_maps(vec![PointwiseMap::zero()]);
    let plan = SteeringPlan::new(target.clone(), 0.2, 1e-2);
    assert!(steer_semilinear(&late_impulse, &plan, &disc).is_err());
}

#[test]
fn demo_error_decreases_along_parameter_grid() {
    let dt = 1e-3;
    let scenario = demo_scenario(dt);
    let cells = sweep_pairs(&scenario, &[(1e-2, 0.4), (1e-3, 0.2), (1e-4, 0.1)]);
    let reports: Vec<_> = cells.iter().map(|c| c.outcome.clone().unwrap()).collect();
    let errors: Vec<f64> = reports.iter().map(|r| r.achieved_error).collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
    for r in &reports {
        assert!(
            r.achieved_error <= r.linear_predicted_error + r.tail_perturbation + 10.0 * dt * dt,
            "{r:?}"
        );
        assert!(r.nonlinear_tail <= r.tail_bound * (1.0 + 1e-12), "{r:?}");
        assert!(r.tail_perturbation <= r.tail_bound + r.discretization_error + 1e-15);
        let margin = r.hypothesis_margin.unwrap();
        assert!(margin <= 0.0, "growth bound violated: {margin}");
    }
}

#[test]
fn tail_changes_leave_the_past_untouched() {
    let scenario = demo_scenario(1e-2);
    let a = scenario.run(1e-2, 0.3).unwrap();
    let mut shifted = scenario.clone();
    shifted.target = &scenario.target * -2.0;
    let b = shifted.run(1e-4, 0.3).unwrap();
    let switch = PI - 0.3;
    let mut compared = 0;
    for (x, y) in a.trajectory.nodes().iter().zip(b.trajectory.nodes()) {
        assert_eq!(x.t, y.t);
        if x.t <= switch {
            assert_eq!(x.state, y.state, "t = {}", x.t);
            assert_eq!(x.right_limit, y.right_limit);
            compared += 1;
        }
    }
    assert!(compared > 300);
    assert_ne!(a.report.final_state, b.report.final_state);
    assert!(a
        .trajectory
        .nodes()
        .iter()
        .any(|n| n.tag == SegmentTag::Impulse));
}

#[test]
fn repeated_runs_are_identical() {
    let scenario = demo_scenario(1e-2);
    let a = scenario.run(1e-3, 0.2).unwrap().report;
    let b = scenario.run(1e-3, 0.2).unwrap().report;
    assert_eq!(a, b);
}

#[test]
fn sweep_matches_direct_calls_and_keeps_order() {
    let scenario = demo_scenario(1e-2);
    let single = sweep(&scenario, &[1e-3], &[0.2]);
    assert_eq!(single.len(), 1);
    assert_eq!(
        single[0].outcome.as_ref().unwrap(),
        &scenario.run(1e-3, 0.2).unwrap().report
    );
    assert!(sweep(&scenario, &[], &[0.2]).is_empty());

    let grid = sweep(&scenario, &[1e-2, 1e-3], &[0.3, 0.7]);
    let keys: Vec<(f64, f64)> = grid.iter().map(|c| (c.alpha, c.tail)).collect();
    assert_eq!(
        keys,
        vec![(1e-2, 0.3), (1e-2, 0.7), (1e-3, 0.3), (1e-3, 0.7)]
    );
    assert!(grid[0].outcome.is_ok());
    assert!(grid[1].outcome.is_err(), "l = 0.7 exceeds the delay");
}

#[test]
fn linear_sweep_on_reference_scenario_decreases() {
    let n = 16;
    let scenario = Scenario {
        spec: ProblemSpec::linear(reference_theta(), PI, SpectralState::zeros(n)).unwrap(),
        target: sine_target(n, 1024),
        base_control: BaseControl::Zero,
        discretization: reference_discretization(2e-3),
        mode: SteeringMode::Linear,
    };
    let cells = sweep(&scenario, &[1e-1, 1e-2, 1e-3], &[7.0 * PI / 8.0]);
    let errors: Vec<f64> = cells
        .iter()
        .map(|c| c.outcome.as_ref().unwrap().achieved_error)
        .collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
}

#[test]
fn bisection_finds_alpha_for_requested_error() {
    let scenario = demo_scenario(1e-2);
    let errors: Vec<f64> = [1e-1, 1e-3]
        .iter()
        .map(|&a| scenario.run(a, 0.3).unwrap().report.achieved_error)
        .collect();
    let epsilon = 0.5 * (errors[0] + errors[1]);
    let (alpha, report) = alpha_for_tolerance(&scenario, 0.3, epsilon, 1e-6)
        .unwrap()
        .unwrap();
    assert!(report.achieved_error <= epsilon);
    assert!(alpha < 1e-1 && alpha > 1e-3, "{alpha}");
    assert!(alpha_for_tolerance(&scenario, 0.3, 1e-12, 1e-6)
        .unwrap()
        .is_none());
}

#[test]
fn report_csv_is_stable() {
    let scenario = demo_scenario(1e-2);
    let cells = sweep(&scenario, &[1e-2], &[0.3, 0.9]);
    let render = |with_runtime| {
        let mut out = Vec::new();
        write_report_csv(&mut out, &cells, with_runtime).unwrap();
        String::from_utf8(out).unwrap()
    };
    let text = render(false);
    assert_eq!(text, render(false));
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0]
        .starts_with("alpha,l,achieved_error,linear_predicted_error,tail_perturbation,runtime_s"));
    assert!(lines[1].ends_with(",ok"));
    assert!(lines[1].contains(",0.00000000e0,"));
    assert!(lines[2].contains("tail length"));
}
