use sidefit::conic::{ConicSolver, InteriorPoint, SolveStatus};
use sidefit::experiments::{prepare, ExperimentConfig};
use sidefit::learn::{assemble, learn_solver_options, LearningProblem};

#[test]
fn benchmarked_program_solves() {
    let cfg = ExperimentConfig::disease();
    let prepared = prepare(&cfg).unwrap();
    let stack = cfg.stack("interp_inv_mon").unwrap();
    let problem = LearningProblem {
        side_infos: cfg.stack_items(stack).unwrap(),
        ..LearningProblem::new(prepared.dataset.clone(), 2, 2, prepared.domain.clone())
    };
    let program = assemble(&problem).unwrap().program;
    let sol = InteriorPoint::new(learn_solver_options()).solve(&program).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
}
