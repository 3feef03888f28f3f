use lineplan::cgn::{build_cgn, ArcKind, NodeKind};
use lineplan::milp::{HighsBackend, ModelOptions};
use lineplan::model::LineIdx;
use lineplan::paths::{generate_paths, PathMode};
use lineplan::refinement::{run, solve_direct, DfraOptions, Termination};
use lineplan::samples::worked_example;

fn trace(scale: f64) -> lineplan::refinement::DfraResult {
    let inst = worked_example(scale);
    run(&inst, &DfraOptions::default(), &HighsBackend).unwrap()
}

#[test]
fn base_costs_follow_the_three_step_trace() {
    let res = trace(1.0);
    assert_eq!(res.termination, Termination::Optimal);
    let reps: Vec<_> = res.iterations.iter().map(|r| r.representation.clone()).collect();
    assert_eq!(
        reps,
        vec![
            vec![vec![(5.0, 2)]],
            vec![vec![(5.0, 4), (20.0, 2)]],
            vec![vec![(5.0, 6), (15.0, 4), (20.0, 2)]],
        ]
    );
    let picks: Vec<_> = res.iterations.iter().map(|r| r.selected.clone()).collect();
    assert_eq!(
        picks,
        vec![
            vec![(LineIdx(0), 5.0, 3.0)],
            vec![(LineIdx(0), 5.0, 4.0)],
            vec![(LineIdx(0), 20.0, 3.0)],
        ]
    );
    let lbs: Vec<f64> = res.iterations.iter().map(|r| r.lower_bound).collect();
    for (got, want) in lbs.iter().zip([11250.0, 13250.0, 13500.0]) {
        assert!((got - want).abs() < 1e-6, "{lbs:?}");
    }
    let sol = res.solution.unwrap();
    assert!((sol.objective - 13500.0).abs() < 1e-6);
    assert!((res.lower_bound - 13500.0).abs() < 1e-6);
}

#[test]
fn tripled_costs_stop_at_fifteen_minutes_after_four_solves() {
    let res = trace(3.0);
    assert_eq!(res.termination, Termination::Optimal);
    assert_eq!(res.solves(), 4);
    let sol = res.solution.unwrap();
    assert_eq!(sol.open_lines.len(), 1);
    assert_eq!(sol.open_lines[0].headway.minutes(), 15.0);
    assert_eq!(sol.open_lines[0].vehicles, 4.0);
    let lbs: Vec<f64> = res.iterations.iter().map(|r| r.lower_bound).collect();
    for (got, want) in lbs.iter().zip([21750.0, 23750.0, 27750.0, 28250.0]) {
        assert!((got - want).abs() < 1e-6, "{lbs:?}");
    }
}

#[test]
fn direct_model_agrees_with_refinement() {
    for scale in [1.0, 3.0] {
        let inst = worked_example(scale);
        let cgn = build_cgn(&inst);
        let ps = generate_paths(&inst, &cgn, PathMode::Service).unwrap();
        let direct = solve_direct(&inst, &ps, ModelOptions::default(), &HighsBackend).unwrap();
        let res = trace(scale);
        assert!((direct.objective - res.upper_bound).abs() < 1e-6);
    }
}

#[test]
fn network_shape() {
    let inst = worked_example(1.0);
    let g = build_cgn(&inst);
    assert_eq!(g.count_nodes(|n| n.kind == NodeKind::Transfer), 0);
    assert_eq!(g.count_arcs(ArcKind::Access), 5);
    assert_eq!(g.count_arcs(ArcKind::Egress), 5);
    assert_eq!(g.count_arcs(ArcKind::InVehicle), 8);
    assert_eq!(g.count_arcs(ArcKind::AlternativeMode), 1);
}
