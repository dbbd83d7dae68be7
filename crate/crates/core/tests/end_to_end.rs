//! End-to-end use of the public API: batched solves, closed-loop control and
//! configuration round trips.

use batch_trajopt::mpc::{rho_grid, run_mpc, MpcConfig, MpcController, MpcMode, ReferencePath};
use batch_trajopt::verify::{riccati_oracle, trajectory_distance};
use batch_trajopt::{
    batch_solve, sqp_solve, BatchItem, BatchSpec, CostSpec, DynamicsModel, Error, ExternalForce, LineSearchSettings,
    ProblemSpec, Reference, SolverSettings, Trajectory,
};
use nalgebra::{DMatrix, DVector};

fn swing_up(horizon: usize) -> ProblemSpec {
    let mut cost = CostSpec::tracking(
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.1])),
        DMatrix::identity(1, 1) * 0.05,
        DVector::from_vec(vec![std::f64::consts::PI, 0.0]),
    );
    cost.terminal_weight = DMatrix::identity(2, 2) * 200.0;
    ProblemSpec::new(
        DynamicsModel::by_name("pendulum").unwrap(),
        cost,
        horizon,
        0.05,
        DVector::zeros(2),
        ExternalForce::zero(1),
    )
    .unwrap()
}

#[test]
fn best_of_rho_batch_is_no_worse_than_any_member() {
    let problem = swing_up(40);
    let settings = SolverSettings {
        max_iterations: 10,
        fixed_budget: true,
        ..Default::default()
    };
    let mut spec = BatchSpec::new(settings);
    for rho in rho_grid(8) {
        spec.push(BatchItem::new(problem.clone(), Trajectory::zeros(2, 1, 40)).with_rho_init(rho));
    }
    let out = batch_solve(&spec, 2).unwrap();
    assert_eq!(out.failures(), 0);
    assert_eq!(out.solve_times.len(), 8);
    let (best_index, best) = out.best_by_merit().unwrap();
    for (i, r) in out.results.iter().enumerate() {
        let r = r.as_ref().unwrap();
        assert_eq!(r.iterations, 10);
        assert!(best.final_merit <= r.final_merit);
        if r.final_merit == best.final_merit {
            assert!(best_index <= i);
        }
    }
}

#[test]
fn swing_up_reaches_the_goal() {
    let problem = swing_up(64);
    let res = sqp_solve(&problem, &Trajectory::zeros(2, 1, 64), &SolverSettings::default()).unwrap();
    let last = res.trajectory.states.last().unwrap();
    assert!((last[0] - std::f64::consts::PI).abs() < 1e-2, "{last}");
    assert!(last[1].abs() < 5e-2, "{last}");
    assert!(problem.constraint_violation(&res.trajectory).unwrap() < 1e-6);
}

#[test]
fn linear_quadratic_problems_converge_to_the_riccati_solution() {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.2]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let model = DynamicsModel::Linear(batch_trajopt::dynamics::LinearSystem::new(&a, &b).unwrap());
    let cost = CostSpec::tracking(DMatrix::identity(2, 2), DMatrix::identity(1, 1) * 0.1, DVector::from_vec(vec![1.0, 0.0]));
    let problem = ProblemSpec::new(model, cost, 20, 0.1, DVector::zeros(2), ExternalForce::constant(&[0.3])).unwrap();
    let settings = SolverSettings {
        rho_init: 0.0,
        rho_min: 0.0,
        ..Default::default()
    };
    let res = sqp_solve(&problem, &Trajectory::zeros(2, 1, 20), &settings).unwrap();
    assert!(res.converged);
    let oracle = riccati_oracle(&problem).unwrap();
    assert!(trajectory_distance(&res.trajectory, &oracle) < 1e-6);
}

#[test]
fn hypotheses_identify_a_constant_disturbance() {
    // hold the pendulum at rest against an unmodeled constant torque
    let problem = ProblemSpec::new(
        DynamicsModel::by_name("pendulum").unwrap(),
        CostSpec::tracking(DMatrix::identity(2, 2) * 10.0, DMatrix::identity(1, 1) * 1e-3, DVector::zeros(2)),
        10,
        0.02,
        DVector::zeros(2),
        ExternalForce::zero(1),
    )
    .unwrap();
    let truth = ExternalForce::constant(&[1.5]);
    let settings = SolverSettings {
        max_iterations: 3,
        line_search: LineSearchSettings {
            merit_weight: 1e3,
            ..Default::default()
        },
        ..Default::default()
    };
    let run = |count: usize| {
        let cfg = MpcConfig {
            mode: MpcMode::BatchedHypotheses { count, radius: 0.5 },
            settings,
            ..Default::default()
        };
        let mut ctl = MpcController::new(&problem, &cfg).unwrap();
        let trace = batch_trajopt::mpc::run_closed_loop(&problem, &ReferencePath::Template, &truth, 60, &mut ctl).unwrap();
        (trace, ctl.force_estimate()[0])
    };
    let (single, est1) = run(1);
    let (batched, est16) = run(16);
    assert_eq!(est1, 0.0);
    assert!((est16 - 1.5).abs() < 0.3, "{est16}");
    assert!(batched.rms_tracking_error < single.rms_tracking_error);
    assert_eq!(batched.records.len(), 60);
}

#[test]
fn run_mpc_is_reproducible() {
    let problem = swing_up(16);
    let cfg = MpcConfig {
        mode: MpcMode::BatchedHypotheses { count: 4, radius: 0.2 },
        measurement_noise: 1e-3,
        seed: 42,
        ..Default::default()
    };
    let a = run_mpc(&problem, &ReferencePath::Template, &ExternalForce::constant(&[0.2]), 10, &cfg).unwrap();
    let b = run_mpc(&problem, &ReferencePath::Template, &ExternalForce::constant(&[0.2]), 10, &cfg).unwrap();
    let strip = |t: &batch_trajopt::mpc::MpcTrace| {
        // wall-clock solve times are the only non-reproducible field
        t.records
            .iter()
            .map(|r| batch_trajopt::mpc::StepRecord { solve_time: 0.0, ..r.clone() })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.rms_tracking_error.to_bits(), b.rms_tracking_error.to_bits());
}

#[test]
fn configurations_round_trip_through_json() {
    let cfg = MpcConfig {
        mode: MpcMode::RhoSweep { count: 8 },
        initial_force: Some(vec![0.5]),
        ..Default::default()
    };
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<MpcConfig>(&text).unwrap(), cfg);
    let partial: SolverSettings = serde_json::from_str(r#"{"max_iterations": 4}"#).unwrap();
    assert_eq!(partial.max_iterations, 4);
    assert_eq!(partial.rho_init, SolverSettings::default().rho_init);
    assert!(serde_json::from_str::<SolverSettings>(r#"{"max_iters": 4}"#).is_err());
}

#[test]
fn invalid_inputs_are_rejected_not_panicked() {
    let problem = swing_up(8);
    // wrong trajectory shape
    assert!(matches!(
        sqp_solve(&problem, &Trajectory::zeros(2, 1, 7), &SolverSettings::default()),
        Err(Error::Dimension { .. })
    ));
    // batches must share dimensions
    let mut spec = BatchSpec::new(SolverSettings::default());
    spec.push(BatchItem::new(problem.clone(), Trajectory::zeros(2, 1, 8)));
    spec.push(BatchItem::new(swing_up(9), Trajectory::zeros(2, 1, 9)));
    assert!(matches!(
        batch_solve(&spec, 1),
        Err(Error::InvalidConfig(_) | Error::Dimension { .. })
    ));
    // a reference of the wrong dimension
    let mut bad = problem.clone();
    bad.cost.reference = Reference::Fixed(DVector::zeros(3));
    assert!(bad.validate().is_err());
}
