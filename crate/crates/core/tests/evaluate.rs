mod common;

use common::{oracle_optimum, random_instance, rel_close, GenOptions, OracleObjective};
use lineplan::cgn::build_cgn;
use lineplan::evaluate::{
    assign_logit, assign_shortest, available_paths, metrics, post_process_rigid, rigid_benchmark,
    Assignment, LineConcept, Plan, DEFAULT_THETA,
};
use lineplan::milp::HighsBackend;
use lineplan::model::{Headway, LineIdx};
use lineplan::paths::{generate_paths, PathMode};
use lineplan::refinement::{run, run_with_paths, DfraOptions};
use lineplan::samples::{worked_example, InstanceBuilder};

fn ex1_concept(h: f64, z: f64) -> LineConcept {
    LineConcept {
        lines: vec![lineplan::evaluate::ConceptLine {
            line: LineIdx(0),
            headway: Headway::new(h).unwrap(),
            vehicles: z,
        }],
    }
}

#[test]
fn shortest_assignment_on_worked_example() {
    let inst = worked_example(1.0);
    let ps = generate_paths(&inst, &build_cgn(&inst), PathMode::Service).unwrap();
    let concept = ex1_concept(20.0, 3.0);
    let a = assign_shortest(&concept, &ps, &inst);
    assert_eq!(a.flows.len(), 1);
    let p = ps.path(a.flows[0].0);
    assert_eq!(p.headways(), vec![Headway::new(20.0).unwrap()]);
    assert!((p.cost - 50.0).abs() < 1e-9);
    let m = metrics(&concept, &a, &inst, &ps);
    assert!((m.captured_pct - 100.0).abs() < 1e-9);
    assert!((m.avg_cost_per_served - 50.0).abs() < 1e-9);
}

#[test]
fn optimum_fills_vehicles_in_the_loaded_direction() {
    let inst = worked_example(1.0);
    let ps = generate_paths(&inst, &build_cgn(&inst), PathMode::Service).unwrap();
    let sol = run_with_paths(&inst, &ps, &DfraOptions::default(), &HighsBackend)
        .unwrap()
        .solution
        .unwrap();
    let concept = LineConcept::from_solution(&sol);
    concept.validate(&inst).unwrap();
    let m = metrics(&concept, &Assignment::from_solution(&sol), &inst, &ps);
    assert_eq!(m.loads.len(), 8);
    for l in &m.loads {
        let forward = l.from.parse::<u32>().unwrap() < l.to.parse::<u32>().unwrap();
        let want = if forward { 1.0 } else { 0.0 };
        assert!((l.utilization - want).abs() < 1e-9, "{l:?}");
        assert!(!l.over_capacity);
    }
    assert!((m.mean_utilization - 0.5).abs() < 1e-9);
    assert!((m.at_capacity_fraction - 0.5).abs() < 1e-9);
    assert!((m.passenger_minute_utilization - 1.0).abs() < 1e-9);
    assert_eq!(m.split_od_fraction, 0.0);
    assert!((m.objective - 13500.0).abs() < 1e-6);
}

#[test]
fn zero_demand_gives_empty_profile() {
    let inst = InstanceBuilder::new()
        .stops(["1", "2"])
        .edge("a", "1", "2", 5.0)
        .line("L", &["a"])
        .od("1", "2", 0.0)
        .build()
        .unwrap();
    let r = run(&inst, &DfraOptions::default(), &HighsBackend).unwrap();
    let sol = r.solution.unwrap();
    let ps = generate_paths(&inst, &build_cgn(&inst), PathMode::Service).unwrap();
    let m = metrics(&LineConcept::from_solution(&sol), &Assignment::from_solution(&sol), &inst, &ps);
    assert!(m.loads.is_empty());
    assert_eq!(m.mean_utilization, 0.0);
    assert_eq!(m.passenger_minute_utilization, 0.0);
}

#[test]
fn empty_concept_sends_everyone_to_the_alternative() {
    let inst = worked_example(1.0);
    let ps = generate_paths(&inst, &build_cgn(&inst), PathMode::Service).unwrap();
    let concept = LineConcept::default();
    for a in [
        assign_shortest(&concept, &ps, &inst),
        assign_logit(&concept, &ps, &inst, DEFAULT_THETA),
    ] {
        assert_eq!(a.flows, vec![(ps.od[0].alternative, 1.0)]);
        let m = metrics(&concept, &a, &inst, &ps);
        assert_eq!(m.captured_pct, 0.0);
        assert_eq!(m.lost_demand, 150.0);
    }
}

#[test]
fn capacity_bound_instance_splits_demand() {
    // two vehicles at most: 100 of 150 passengers fit
    let inst = worked_example(1.0).with_budget(Some(4000.0));
    let ps = generate_paths(&inst, &build_cgn(&inst), PathMode::Service).unwrap();
    let sol = run_with_paths(&inst, &ps, &DfraOptions::default(), &HighsBackend)
        .unwrap()
        .solution
        .unwrap();
    let want = oracle_optimum(&inst, &ps, OracleObjective::Full).unwrap();
    assert!(rel_close(sol.objective, want, 1e-6));
    let m = metrics(&LineConcept::from_solution(&sol), &Assignment::from_solution(&sol), &inst, &ps);
    assert!(m.split_od_fraction > 0.0);
    assert!((m.captured_demand - 100.0).abs() < 1e-6);
    assert_eq!(m.over_capacity_segments, 0);
}

#[test]
fn assignment_rules_are_ordered_and_model_respects_capacity() {
    let opts = GenOptions::default();
    for seed in 700..760 {
        let inst = random_instance(seed, &opts);
        let ps = generate_paths(&inst, &build_cgn(&inst), PathMode::Service).unwrap();
        let sol = run_with_paths(&inst, &ps, &DfraOptions::default(), &HighsBackend)
            .unwrap()
            .solution
            .unwrap();
        let concept = LineConcept::from_solution(&sol);
        concept.validate(&inst).unwrap();
        let model = metrics(&concept, &Assignment::from_solution(&sol), &inst, &ps);
        assert_eq!(model.over_capacity_segments, 0, "seed {seed}");
        assert!(model.loads.iter().all(|l| l.flow <= l.capacity + 1e-6));

        let short = assign_shortest(&concept, &ps, &inst);
        let logit = assign_logit(&concept, &ps, &inst, DEFAULT_THETA);
        for od in inst.od_indices() {
            let mean = |a: &Assignment| -> f64 {
                a.flows
                    .iter()
                    .filter(|f| ps.path(f.0).od == od)
                    .map(|f| f.1 * ps.path(f.0).cost)
                    .sum()
            };
            let share: f64 = logit.flows.iter().filter(|f| ps.path(f.0).od == od).map(|f| f.1).sum();
            assert!((share - 1.0).abs() < 1e-12, "seed {seed}");
            let worst = available_paths(&concept, &ps, od)
                .iter()
                .map(|p| p.cost)
                .fold(f64::NEG_INFINITY, f64::max);
            let (s, l) = (mean(&short), mean(&logit));
            assert!(s <= l + 1e-9 && l <= worst + 1e-9, "seed {seed}: {s} {l} {worst}");
        }
        let ms = metrics(&concept, &short, &inst, &ps);
        assert!(ms.passenger_cost <= model.passenger_cost + 1e-6, "seed {seed}");
    }
}

#[test]
fn logit_invariant_under_cost_shift() {
    let a = lineplan::evaluate::logit_shares(&[12.0, 15.0, 30.0], -0.2);
    let b = lineplan::evaluate::logit_shares(&[112.0, 115.0, 130.0], -0.2);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn worked_example_benchmark_variants_agree() {
    let inst = worked_example(1.0);
    let rec = rigid_benchmark(&inst, &DfraOptions::default(), &HighsBackend).unwrap();
    assert!((rec.budget - 6000.0).abs() < 1e-6);
    let names: Vec<&str> = rec.variants.iter().map(|v| v.name.as_str()).collect();
    assert_eq!(names, ["R", "R,T", "T", "T,P"]);
    for v in &rec.variants {
        assert_eq!(v.concept, ex1_concept(20.0, 3.0), "{}", v.name);
        assert!((v.objective - 13500.0).abs() < 1e-6, "{}", v.name);
        assert!((v.metrics.captured_pct - 100.0).abs() < 1e-9);
    }
}

#[test]
fn service_plan_never_worse_than_judged_fixed_demand_plan() {
    let opts = GenOptions {
        budget_probability: 0.0,
        ..GenOptions::default()
    };
    let mut compared = 0;
    for seed in 800..840 {
        let inst = random_instance(seed, &opts);
        let Ok(rec) = rigid_benchmark(&inst, &DfraOptions::default(), &HighsBackend) else {
            continue;
        };
        compared += 1;
        let rt = rec.variant("R,T").unwrap();
        let t = rec.variant("T").unwrap();
        assert!(t.objective <= rt.objective + 1e-6 * rt.objective.abs().max(1.0), "seed {seed}");
        assert!(t.metrics.breakdown.operating_cost() <= rec.budget + 1e-6);
    }
    assert!(compared > 20);
}

#[test]
fn post_processing_moves_unacceptable_flows() {
    let inst = worked_example(1.0);
    let cgn = build_cgn(&inst);
    let service = generate_paths(&inst, &cgn, PathMode::Service).unwrap();
    let rigid = generate_paths(&inst, &cgn, PathMode::Rigid).unwrap();
    let sol = run(&inst, &DfraOptions { mode: PathMode::Rigid, ..DfraOptions::default() }, &HighsBackend)
        .unwrap()
        .solution
        .unwrap();
    let (set, a) = post_process_rigid(&sol, &rigid, &service);
    // every rigid path costs far less than 1000, so nothing moves
    assert_eq!(a.flows.len(), 1);
    assert!(!set.path(a.flows[0].0).alternative);
}

#[test]
fn plan_round_trips_through_external_ids() {
    let inst = worked_example(1.0);
    let ps = generate_paths(&inst, &build_cgn(&inst), PathMode::Service).unwrap();
    let sol = run_with_paths(&inst, &ps, &DfraOptions::default(), &HighsBackend)
        .unwrap()
        .solution
        .unwrap();
    let plan = Plan::from_solution(&sol, &inst, &ps);
    let text = serde_json::to_string(&plan).unwrap();
    let back: Plan = serde_json::from_str(&text).unwrap();
    assert_eq!(back, plan);
    assert_eq!(back.concept(&inst).unwrap(), LineConcept::from_solution(&sol));
    assert_eq!(back.assignment(&inst, &ps).unwrap().unwrap().flows, sol.flows);
}

#[test]
fn plan_with_unknown_line_or_headway_is_rejected() {
    let inst = worked_example(1.0);
    let bad_line: Plan = serde_json::from_str(r#"{"lines":[{"line":"nope","headway":20}]}"#).unwrap();
    assert!(bad_line.concept(&inst).is_err());
    let bad_headway: Plan = serde_json::from_str(r#"{"lines":[{"line":"L1","headway":7}]}"#).unwrap();
    assert!(bad_headway.concept(&inst).is_err());
    let short_fleet: Plan =
        serde_json::from_str(r#"{"lines":[{"line":"L1","headway":20,"vehicles":2}]}"#).unwrap();
    assert!(short_fleet.concept(&inst).is_err());
    let default_fleet: Plan = serde_json::from_str(r#"{"lines":[{"line":"L1","headway":20}]}"#).unwrap();
    assert_eq!(default_fleet.concept(&inst).unwrap(), ex1_concept(20.0, 3.0));
}
