use super::*;
use crate::io::fixtures;

const SIMPLE_OPTIMUM: &str = "S1 S2 S3 S5 S7 S9 S10 S12 S15 S18 S20 S23 S25 S28";

fn id(s: &str) -> AgentId {
    AgentId::from(s)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

fn ratings_of(model: &ConfigurationModel) -> Ratings {
    evaluate_solutions(model, &build_relations(model).unwrap())
}

/// Two functions, two solutions each, with a requirement weighting.
fn tiny() -> ConfigurationModel {
    let mut m = ConfigurationModel::empty("tiny");
    m.requirements = vec![Agent::new("R1", ""), Agent::new("R2", "")];
    m.functions = vec![Agent::new("F1", ""), Agent::new("F2", "")];
    m.solutions = ["S1", "S2", "S3", "S4"]
        .iter()
        .enumerate()
        .map(|(i, s)| Solution {
            id: id(s),
            label: String::new(),
            function: id(if i < 2 { "F1" } else { "F2" }),
        })
        .collect();
    m.function_solution = Some(
        FuzzyRelation::new(
            m.function_ids(),
            m.solution_ids(),
            vec![vec![0.8, 0.4, 0.0, 0.0], vec![0.0, 0.0, 0.3, 0.7]],
        )
        .unwrap(),
    );
    m.requirement_function = Some(
        FuzzyRelation::new(
            m.requirement_ids(),
            m.function_ids(),
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap(),
    );
    m
}

#[test]
fn identity_weighting_composes_to_function_ratings() {
    let m = tiny();
    let p = build_relations(&m).unwrap();
    let rs = p.requirement_solution.unwrap();
    let fs = m.function_solution.as_ref().unwrap();
    assert_eq!(rs.rows(), m.requirement_ids());
    for i in 0..2 {
        assert_eq!(rs.row(i), fs.row(i));
    }
}

#[test]
fn knowledge_reaches_every_endpoint() {
    let m = tiny();
    let p = build_relations(&m).unwrap();
    assert_eq!(p.shares.1, 0, "no share is rejected");
    let f1 = p.system.agent(&id("F1")).unwrap();
    assert_eq!(f1.knowledge.value("FxS", &id("S1")), Some(0.8));
    assert_eq!(f1.knowledge.value("RxF^T", &id("R1")), Some(1.0));
    let s4 = p.system.agent(&id("S4")).unwrap();
    assert_eq!(s4.knowledge.value("FxS^T", &id("F2")), Some(0.7));
}

#[test]
fn conveyor_function_ratings_are_loaded() {
    let m = fixtures::conveyor();
    let p = build_relations(&m).unwrap();
    assert_eq!(p.function_solution.get(&id("F3"), &id("S3")), Some(0.9));
    assert_eq!(p.function_solution.get(&id("F3"), &id("S4")), Some(0.6));
    assert!(p.requirement_solution.is_none());
}

#[test]
fn missing_function_solution_aborts() {
    let mut m = tiny();
    m.function_solution = None;
    match build_relations(&m) {
        Err(PipelineError::Invalid(issues)) => {
            assert!(issues.iter().any(|i| i.message == "missing relation"));
        }
        other => panic!("expected invalid model, got {other:?}"),
    }
}

#[test]
fn conveyor_ratings() {
    let r = ratings_of(&fixtures::conveyor());
    assert_eq!(r.get(&id("S3")), Some(0.9));
    assert_eq!(r.get(&id("S4")), Some(0.6));
    assert_eq!(r.get(&id("S1")), Some(1.0));
    assert_eq!(r.0.len(), 29);
}

#[test]
fn constraint_caps_the_rating() {
    let mut m = fixtures::conveyor();
    let sols = m.solution_ids();
    let j = sols.iter().position(|s| s == "S3").unwrap();
    m.constraints.push(ConstraintDomain {
        name: "cost".into(),
        agents: vec![Agent::new("C1", "")],
        relation: Some(
            FuzzyRelation::new(
                vec![id("C1")],
                sols.clone(),
                vec![(0..sols.len()).map(|k| if k == j { 0.4 } else { 1.0 }).collect()],
            )
            .unwrap(),
        ),
        internal: None,
    });
    let r = ratings_of(&m);
    assert_eq!(r.get(&id("S3")), Some(0.4));
    assert_eq!(r.get(&id("S4")), Some(0.6));
}

#[test]
fn irrelevant_function_rates_zero() {
    let mut m = tiny();
    m.requirement_function = Some(
        FuzzyRelation::new(
            m.requirement_ids(),
            m.function_ids(),
            vec![vec![1.0, 0.0], vec![0.5, 0.0]],
        )
        .unwrap(),
    );
    let r = ratings_of(&m);
    assert_eq!(r.get(&id("S3")), Some(0.0));
    assert_eq!(r.get(&id("S4")), Some(0.0));
    assert_eq!(r.get(&id("S1")), Some(0.8));
}

#[test]
fn local_optima_on_the_conveyor() {
    let m = fixtures::conveyor();
    let r = ratings_of(&m);
    let slots = m.slots();
    let s3 = local_optimum(m.solution(&id("S3")).unwrap(), &slots, &r, ScoreAggregator::Mean);
    assert_eq!(s3.row(), SIMPLE_OPTIMUM);
    assert!(close(s3.score, 12.9 / 14.0));
    let s4 = local_optimum(m.solution(&id("S4")).unwrap(), &slots, &r, ScoreAggregator::Mean);
    assert_eq!(s4.row(), SIMPLE_OPTIMUM.replace("S3", "S4"));
    assert!(close(s4.score, 12.6 / 14.0));
}

#[test]
fn single_slot_single_solution() {
    let mut m = ConfigurationModel::empty("one");
    m.functions = vec![Agent::new("F1", "")];
    m.solutions = vec![Solution { id: id("S1"), label: String::new(), function: id("F1") }];
    m.function_solution = Some(FuzzyRelation::new(vec![id("F1")], vec![id("S1")], vec![vec![0.5]]).unwrap());
    let result = run_configuration(&m).unwrap();
    assert_eq!(result.optimal_configurations.len(), 1);
    assert_eq!(result.optimal_configurations[0].row(), "S1");
    assert_eq!(result.candidates.len(), 1);
}

#[test]
fn scores() {
    let all_one = Ratings(vec![(id("S1"), 1.0), (id("S2"), 1.0)]);
    let sel = vec![
        Selection { function: id("F1"), solution: id("S1") },
        Selection { function: id("F2"), solution: id("S2") },
    ];
    assert_eq!(score_configuration(&sel, &all_one, ScoreAggregator::Mean), 1.0);
    let mixed = Ratings(vec![(id("S1"), 0.2), (id("S2"), 1.0)]);
    assert_eq!(score_configuration(&sel, &mixed, ScoreAggregator::Min), 0.2);
    assert!(close(score_configuration(&sel, &mixed, ScoreAggregator::Mean), 0.6));
}

#[test]
fn affinity_is_slot_agreement() {
    let m = fixtures::conveyor();
    let r = ratings_of(&m);
    let slots = m.slots();
    let s3 = local_optimum(m.solution(&id("S3")).unwrap(), &slots, &r, ScoreAggregator::Mean);
    let s4 = local_optimum(m.solution(&id("S4")).unwrap(), &slots, &r, ScoreAggregator::Mean);
    assert_eq!(solution_config_affinity(&s3, &s3), 1.0);
    assert_eq!(solution_config_affinity(&s3, &s4), 13.0 / 14.0);
    let disjoint = Configuration {
        selections: s3
            .selections
            .iter()
            .map(|s| Selection { function: s.function.clone(), solution: id("none") })
            .collect(),
        score: 0.0,
    };
    assert_eq!(solution_config_affinity(&s3, &disjoint), 0.0);
}

#[test]
fn conveyor_elementary_run() {
    let result = run_configuration(&fixtures::conveyor()).unwrap();
    let rows: Vec<String> = result.optimal_configurations.iter().map(Configuration::row).collect();
    assert_eq!(rows, [SIMPLE_OPTIMUM]);
    assert_eq!(result.provenance.mode, Mode::Elementary);
    // One candidate per distinct local optimum: the optimum plus one variant
    // per second-best solution.
    assert_eq!(result.candidates.len(), 16);
    assert!(result.consensus.converged);
}

#[test]
fn conveyor_generalized_run_has_four_optima() {
    let result = run_configuration(&fixtures::conveyor_generalized()).unwrap();
    let rows: Vec<String> = result.optimal_configurations.iter().map(Configuration::row).collect();
    assert_eq!(
        rows,
        [
            SIMPLE_OPTIMUM.to_string(),
            SIMPLE_OPTIMUM.replace("S28", "S29"),
            SIMPLE_OPTIMUM.replace("S12", "S13"),
            SIMPLE_OPTIMUM.replace("S12", "S13").replace("S28", "S29"),
        ]
    );
    let best = rows.len();
    assert_eq!(best, 4);
    let s = result.optimal_configurations[0].score;
    assert!(result.optimal_configurations.iter().all(|c| close(c.score, s)));
}

#[test]
fn generalized_without_internal_relations_falls_back() {
    let mut m = fixtures::conveyor();
    let plain = run_configuration(&m).unwrap();
    m.options.generalized = true;
    let general = run_configuration(&m).unwrap();
    assert_eq!(general.outcome, plain.outcome);
    assert_eq!(general.provenance.communities.len(), 2);
    for c in &general.provenance.communities {
        assert_eq!(
            c.status,
            CommunityStatus::Fallback { reason: GeneralizationUnavailable::Missing }
        );
    }
}

#[test]
fn malformed_internal_relation_falls_back_with_reason() {
    let mut m = fixtures::conveyor_generalized();
    m.internal.functions.as_mut().unwrap().entries[0][1] = 1.5;
    assert!(m.errors().is_empty(), "internal problems are warnings only");
    assert!(m.validate().iter().any(|i| !i.is_error()));
    let r = run_configuration(&m).unwrap();
    let f = r
        .provenance
        .communities
        .iter()
        .find(|c| c.community == CommunityKind::Functions)
        .unwrap();
    assert!(matches!(
        f.status,
        CommunityStatus::Fallback { reason: GeneralizationUnavailable::Malformed { .. } }
    ));
}

#[test]
fn editing_f3_s4_flips_the_slot() {
    let m = fixtures::conveyor();
    let u = Update::SetCell {
        relation: RelationRef::FunctionSolution,
        row: id("F3"),
        col: id("S4"),
        value: 0.95,
    };
    let next = apply_update(&m, &u).unwrap();
    let r = run_configuration(&next).unwrap();
    assert_eq!(r.optimal_configurations.len(), 1);
    assert_eq!(r.optimal_configurations[0].solution_for(&id("F3")), Some(&id("S4")));
}

#[test]
fn noop_edit_changes_nothing() {
    let m = fixtures::conveyor();
    let u = Update::SetCell {
        relation: RelationRef::FunctionSolution,
        row: id("F3"),
        col: id("S4"),
        value: 0.6,
    };
    let next = apply_update(&m, &u).unwrap();
    assert_eq!(next, m);
    assert_eq!(run_configuration(&next).unwrap(), run_configuration(&m).unwrap());
}

#[test]
fn removing_a_referenced_agent_is_rejected() {
    let m = fixtures::conveyor();
    let err = apply_update(&m, &Update::RemoveAgent { id: id("S3") }).unwrap_err();
    assert_eq!(err.code, "referenced");
    let err = apply_update(&m, &Update::RemoveAgent { id: id("F3") }).unwrap_err();
    assert_eq!(err.code, "referenced");
    // A requirement with no weighting can go.
    let next = apply_update(&m, &Update::RemoveAgent { id: id("R24") }).unwrap();
    assert_eq!(next.requirements.len(), 23);
}

#[test]
fn bad_updates_leave_no_trace() {
    let m = fixtures::conveyor();
    let cases = [
        Update::SetCell { relation: RelationRef::FunctionSolution, row: id("F3"), col: id("S99"), value: 0.5 },
        Update::SetCell { relation: RelationRef::FunctionSolution, row: id("F3"), col: id("S4"), value: 1.5 },
        Update::SetCell { relation: RelationRef::RequirementFunction, row: id("R1"), col: id("F1"), value: 0.5 },
        Update::AddAgent { community: CommunityKind::Solutions, id: id("S3"), label: String::new(), function: Some(id("F3")) },
        Update::AddAgent { community: CommunityKind::Solutions, id: id("S40"), label: String::new(), function: Some(id("F99")) },
        Update::AddAgent { community: CommunityKind::Functions, id: id("F15"), label: String::new(), function: None },
        Update::RemoveAgent { id: id("nobody") },
        Update::SetOption { change: OptionChange::Alpha(2.0) },
    ];
    for u in cases {
        assert!(apply_update(&m, &u).is_err(), "{u:?} accepted");
    }
}

#[test]
fn added_solution_joins_its_slot() {
    let m = fixtures::conveyor();
    let add = Update::AddAgent {
        community: CommunityKind::Solutions,
        id: id("S31"),
        label: "Fibre link".into(),
        function: Some(id("F3")),
    };
    let m = apply_update(&m, &add).unwrap();
    let set = Update::SetCell { relation: RelationRef::FunctionSolution, row: id("F3"), col: id("S31"), value: 1.0 };
    let m = apply_update(&m, &set).unwrap();
    let r = run_configuration(&m).unwrap();
    assert_eq!(r.optimal_configurations[0].solution_for(&id("F3")), Some(&id("S31")));
}

#[test]
fn observer_sees_phases_in_order_and_can_cancel() {
    let m = fixtures::conveyor();
    let mut phases = Vec::new();
    run_configuration_observed(&m, &mut |e| {
        if let PipelineEvent::PhaseStarted { phase } = e {
            phases.push(phase);
        }
        ControlFlow::Continue(())
    })
    .unwrap();
    assert_eq!(
        phases,
        [Phase::BuildRelations, Phase::EvaluateSolutions, Phase::LocalOptima, Phase::Consensus]
    );
    let err = run_configuration_observed(&m, &mut |e| match e {
        PipelineEvent::PhaseStarted { phase: Phase::LocalOptima } => ControlFlow::Break(()),
        _ => ControlFlow::Continue(()),
    })
    .unwrap_err();
    assert!(matches!(err, PipelineError::Cancelled));
}
