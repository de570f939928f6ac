//! End-to-end runs on coarse meshes through the public API.

use std::sync::Arc;

use fracident::cheb::build_schedule;
use fracident::control::{bfgs_identify, BfgsOptions, Mode, Objective, Regularizer};
use fracident::experiments::{
    run_convergence, run_gradcheck, run_identify, Auto, ExperimentConfig,
};
use fracident::mesh::load_vector;
use fracident::opfamily::{KernelScaling, OperatorFamily};
use fracident::oracle::ProblemId;
use fracident::solve::{Solver, SolverKind};
use fracident::{build_mesh, ParamPoint, QuadratureConfig};

#[test]
fn recovers_generating_parameters_without_regularization_bias() {
    // data generated by the same discrete model: with tiny regularization the
    // optimum sits at the generating parameters
    let mesh = Arc::new(build_mesh(-1.0, 1.0, 128).unwrap());
    let schedule = build_schedule((0.1, 0.9), f64::INFINITY, 1e-8, 0.3).unwrap();
    let family = OperatorFamily::precompute(
        mesh.clone(),
        schedule,
        QuadratureConfig::default(),
        KernelScaling::Half,
    )
    .unwrap();
    let solver = Solver::default();
    let load = load_vector(&mesh, |_| 1.0);
    let q_star = ParamPoint::new(0.6, 0.7).unwrap();
    let u_d = solver
        .solve_state(&family, q_star, &load)
        .unwrap()
        .solution
        .coeffs;
    let reg = Regularizer::new(1e-12, 1e-12).unwrap();
    let obj = Objective::new(&family, &solver, load, u_d, reg, Mode::Joint).unwrap();
    let opts = BfgsOptions {
        grad_tol: 1e-10,
        ..Default::default()
    };
    let run = bfgs_identify(&obj, ParamPoint::new(0.3, 1.2).unwrap(), &opts).unwrap();
    assert!((run.final_q.s - 0.6).abs() < 1e-4, "{:?}", run.final_q);
    assert!((run.final_q.delta - 0.7).abs() < 1e-3, "{:?}", run.final_q);
}

#[test]
fn solver_choice_does_not_change_identification() {
    let mut cfg = ExperimentConfig::for_problem(ProblemId::II);
    cfg.n_elem = 64;
    let direct = run_identify(&cfg).unwrap();
    cfg.solver = SolverKind::Cg;
    let cg = run_identify(&cfg).unwrap();
    assert!((direct.run.final_q.s - cg.run.final_q.s).abs() < 1e-6);
    assert!((direct.run.final_q.delta - cg.run.final_q.delta).abs() < 1e-5);
}

#[test]
fn order_only_identification_keeps_infinite_horizon() {
    let mut cfg = ExperimentConfig::for_problem(ProblemId::I);
    cfg.n_elem = 256;
    let out = run_identify(&cfg).unwrap();
    assert!(out.run.converged);
    assert!(out.run.iterates.iter().all(|r| r.q.delta == f64::INFINITY));
    assert!((out.run.final_q.s - 0.5).abs() < 1e-2);
}

#[test]
fn problem_ii_convergence_against_fine_reference() {
    let mut cfg = ExperimentConfig::for_problem(ProblemId::II);
    cfg.levels = vec![3, 4, 5, 6];
    let out = run_convergence(&cfg).unwrap();
    assert!(out.rows.windows(2).all(|w| w[1].error_hs < w[0].error_hs));
    assert!(out.fitted_rate_hs > 0.4, "{}", out.fitted_rate_hs);
}

#[test]
fn gradcheck_order_only() {
    let mut cfg = ExperimentConfig::for_problem(ProblemId::I);
    cfg.n_elem = 64;
    cfg.eta = Auto::Value(1e-8);
    let out = run_gradcheck(&cfg).unwrap();
    assert!(out.checks.all_pass());
    assert!(out.rows.iter().all(|r| r.adjoint.len() == 1));
}
