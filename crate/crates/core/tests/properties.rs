//! Cross-module properties of the solver stack and the experiment driver.

use fracobstacle::harness::{energy_error, injection, run_case, solve_level, ExperimentConfig};
use fracobstacle::linsolve::{solve, KrylovConfig, MultilevelHierarchy, MultilevelPreconditioner};
use fracobstacle::mesh::{DomainId, MeshHierarchy};
use fracobstacle::rates::CaseId;

fn multilevel_cg_iterations(domain: DomainId, level: usize) -> usize {
    let cfg = ExperimentConfig { beta: [0.0, 0.0], ..ExperimentConfig::preset(CaseId::C, domain, 0.5) };
    let hier = MeshHierarchy::build(domain, level).unwrap();
    let prob = fracobstacle::harness::build_problem(&cfg, hier.finest().clone()).unwrap();
    let mh = MultilevelHierarchy::from_meshes(&hier, cfg.diffusion).unwrap();
    let pc = MultilevelPreconditioner::new(&mh, cfg.s, true);
    let krylov = KrylovConfig { rel_tol: 1e-8, ..KrylovConfig::default() };
    solve(&prob.operator, &prob.load, &krylov, Some(&pc), None).unwrap().iterations
}

/// On 1D levels 2–4 CG converges in about `dofs / 2` steps with or without
/// preconditioning, so the growth check starts where the systems are large
/// enough to show it.
#[test]
fn multilevel_iterations_are_mesh_robust() {
    for (domain, levels) in [(DomainId::Interval, 5..=9), (DomainId::Lshape, 1..=3)] {
        let its: Vec<usize> = levels.clone().map(|l| multilevel_cg_iterations(domain, l)).collect();
        println!("multilevel CG iterations on {domain}, levels {levels:?}: {its:?}");
        for w in its.windows(2) {
            assert!((w[1] as f64) < 1.5 * w[0] as f64, "{its:?}");
        }
    }
}

/// `e_j` against references 6, 7, 8 approaches a limit: successive changes
/// shrink.
#[test]
fn errors_settle_as_the_reference_is_refined() {
    let level = 2;
    let errors: Vec<f64> = [6, 7, 8]
        .iter()
        .map(|&r| {
            let mut cfg = ExperimentConfig::preset(CaseId::A, DomainId::Interval, 0.5);
            cfg.levels = vec![level];
            cfg.ref_level = r;
            run_case(&cfg).unwrap().table.rows[0].energy_error
        })
        .collect();
    println!("e_2 against references 6, 7, 8: {errors:?}");
    assert!((errors[2] - errors[1]).abs() < (errors[1] - errors[0]).abs());
    assert!(errors.iter().all(|&e| e > 0.0));
}

#[test]
fn energy_error_triangle_inequality() {
    let cfg = ExperimentConfig::preset(CaseId::C, DomainId::Interval, 0.4);
    let hier = MeshHierarchy::build(DomainId::Interval, 5).unwrap();
    let reference = solve_level(&cfg, &hier, 5).unwrap();
    let scheme = reference.problem.operator.scheme();
    let u1 = solve_level(&cfg, &hier, 2).unwrap().solution.u;
    let u2 = solve_level(&cfg, &hier, 3).unwrap().solution.u;
    let p1 = injection(&hier, 2, 5, false).unwrap();
    let p2 = injection(&hier, 3, 5, false).unwrap();
    let u2_ref = p2.mul_vec(&u2);
    let e1 = energy_error(&u1, &reference.solution.u, scheme, 1.0, &p1).unwrap();
    let e12 = energy_error(&u1, &u2_ref, scheme, 1.0, &p1).unwrap();
    let e2 = energy_error(&u2, &reference.solution.u, scheme, 1.0, &p2).unwrap();
    assert!(e1 <= e12 + e2 + 1e-12 * e1, "{e1} > {e12} + {e2}");
}

#[test]
fn schur_and_reduced_strategies_agree() {
    let base = ExperimentConfig::preset(CaseId::A, DomainId::Interval, 0.6);
    let hier = MeshHierarchy::build(DomainId::Interval, 4).unwrap();
    let reduced = solve_level(&base, &hier, 4).unwrap();
    let schur_cfg = ExperimentConfig { inner: fracobstacle::obstacle::InnerStrategy::Schur, ..base };
    let schur = solve_level(&schur_cfg, &hier, 4).unwrap();
    let diff = reduced.solution.u.iter().zip(&schur.solution.u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-7, "{diff}");
    assert_eq!(reduced.solution.active, schur.solution.active);
}

#[test]
fn drift_case_runs_through_bicgstab() {
    let mut cfg = ExperimentConfig::preset(CaseId::B, DomainId::Interval, 0.7);
    cfg.levels = vec![1, 2];
    cfg.ref_level = 4;
    let out = run_case(&cfg).unwrap();
    assert!(out.report.failed_levels().is_empty());
    assert!(!out.report.out_of_theory);
    let mut half = cfg.clone();
    half.s = 0.5;
    let out = run_case(&half).unwrap();
    assert!(out.report.out_of_theory);
    assert_eq!(out.report.predicted_rate, "unknown-delta");
    assert!(out.table.to_csv().lines().nth(1).unwrap().ends_with(",nan"));
}
