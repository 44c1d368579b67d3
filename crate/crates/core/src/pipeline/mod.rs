//! The configuration process: build relations, rate solutions, derive each
//! solution's locally optimal configuration, then seek consensus between
//! solutions and configurations. In generalized mode the requirement,
//! function and constraint communities are first clustered into
//! super-agents.

mod model;
mod update;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentSystem, CommunityKind};
use crate::consensus::{
    cluster_community, co_cluster_observed, expand_configuration_where, lift_columns, lift_rows,
    CoClustering, ConsensusError, ExpandError, GeneralizationUnavailable, StopReason,
};
use crate::fuzzy::{compose_max_min, FuzzyRelation, RelationError};
use crate::id::AgentId;
use crate::Relation;

pub use model::{
    Agent, ConfigurationModel, Configuration, ConstraintDomain, InternalRelations, Location,
    ModelIssue, Options, Ratings, ScoreAggregator, Selection, Severity, Slot, Solution,
};
pub use update::{apply_update, OptionChange, RelationRef, Update, UpdateRejected};

/// Scores equal within this tolerance are considered tied.
pub const SCORE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("model is invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<ModelIssue>),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Expand(#[from] ExpandError),
    #[error("run cancelled")]
    Cancelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Generalize,
    BuildRelations,
    EvaluateSolutions,
    LocalOptima,
    Consensus,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Generalize => "generalize",
            Phase::BuildRelations => "build_relations",
            Phase::EvaluateSolutions => "evaluate_solutions",
            Phase::LocalOptima => "local_optima",
            Phase::Consensus => "consensus",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PipelineEvent {
    PhaseStarted { phase: Phase },
    PhaseFinished { phase: Phase },
    SweepCompleted { stage: String, sweep: usize, moves: usize, groups: usize },
    PartitionChanged { stage: String, groups: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Elementary,
    Generalized,
}

/// Outcome of clustering one community in generalized mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CommunityStatus {
    Clustered {
        groups: Vec<Vec<AgentId>>,
        sweeps: usize,
        converged: bool,
    },
    /// The community keeps its elementary agents.
    Fallback { reason: GeneralizationUnavailable },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityReport {
    pub community: CommunityKind,
    #[serde(flatten)]
    pub status: CommunityStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub mode: Mode,
    pub options: Options,
    pub consensus_rounds: usize,
    pub consensus_converged: bool,
    pub consensus_stop: StopReason,
    pub communities: Vec<CommunityReport>,
    /// Evaluation shares applied and rejected while distributing knowledge.
    pub knowledge_shares: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: AgentId,
    pub configuration: Configuration,
}

/// Everything a run computes, independent of how it was run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub optimal_configurations: Vec<Configuration>,
    /// Configuration agents that took part in consensus seeking.
    pub candidates: Vec<Candidate>,
    pub ratings: Ratings,
    /// Solutions × candidates affinity fed to consensus seeking.
    pub affinity: Relation,
    pub consensus: CoClustering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationResult {
    #[serde(flatten)]
    pub outcome: Outcome,
    pub provenance: Provenance,
}

impl std::ops::Deref for ConfigurationResult {
    type Target = Outcome;

    fn deref(&self) -> &Outcome {
        &self.outcome
    }
}

/// Relations after the first phase, and the agent system that received
/// them.
#[derive(Debug, Clone)]
pub struct PhaseOne {
    pub function_solution: Relation,
    pub requirement_function: Option<Relation>,
    /// Requirements × solutions by max-min composition.
    pub requirement_solution: Option<Relation>,
    pub constraints: Vec<(String, Relation)>,
    pub system: AgentSystem<f64>,
    pub shares: (usize, usize),
    /// Row of `function_solution` that rates each function's solutions.
    slot_row: BTreeMap<AgentId, usize>,
}

/// Relations the rating phase runs on: either the model's own or their
/// lifts onto super-agents.
struct Basis {
    function_solution: Relation,
    requirement_function: Option<Relation>,
    constraints: Vec<(String, Relation)>,
    slot_row: BTreeMap<AgentId, usize>,
    requirement_groups: Vec<Vec<AgentId>>,
}

fn elementary_basis(model: &ConfigurationModel) -> Result<Basis, PipelineError> {
    let fs = model
        .function_solution
        .clone()
        .ok_or_else(|| PipelineError::Invalid(model.errors()))?;
    let slot_row = fs
        .rows()
        .iter()
        .enumerate()
        .map(|(i, f)| (f.clone(), i))
        .collect();
    Ok(Basis {
        function_solution: fs,
        requirement_function: model.requirement_function.clone(),
        constraints: model
            .constraints
            .iter()
            .filter_map(|d| d.relation.clone().map(|r| (d.name.clone(), r)))
            .collect(),
        slot_row,
        requirement_groups: singletons(&model.requirement_ids()),
    })
}

fn singletons(ids: &[AgentId]) -> Vec<Vec<AgentId>> {
    ids.iter().map(|a| vec![a.clone()]).collect()
}

fn ids_of(agents: &[Agent]) -> Vec<AgentId> {
    agents.iter().map(|a| a.id.clone()).collect()
}

fn phase_one(model: &ConfigurationModel, basis: &Basis) -> Result<PhaseOne, PipelineError> {
    let mut system = AgentSystem::new();
    let fs = &basis.function_solution;
    let add = |sys: &mut AgentSystem<f64>, ids: &[AgentId], kind: &CommunityKind| {
        for id in ids {
            let label = id.to_string();
            sys.add_agent(id.clone(), kind.clone(), label)
                .expect("ids are unique after validation");
        }
    };
    if let Some(rf) = &basis.requirement_function {
        add(&mut system, rf.rows(), &CommunityKind::Requirements);
    } else {
        add(&mut system, &basis_ids(&basis.requirement_groups), &CommunityKind::Requirements);
    }
    add(&mut system, fs.rows(), &CommunityKind::Functions);
    add(&mut system, fs.cols(), &CommunityKind::Solutions);
    for (name, rel) in &basis.constraints {
        add(&mut system, rel.rows(), &CommunityKind::Constraint(name.clone()));
    }
    for s in &model.solutions {
        if let Some(agent) = system.agent_mut(&s.id) {
            agent.label.clone_from(&s.label);
        }
    }
    let interaction = |e: crate::agent::AgentError| {
        PipelineError::Invalid(vec![ModelIssue::error("agent system", e.to_string())])
    };
    system
        .add_interaction("FxS", CommunityKind::Functions, CommunityKind::Solutions, fs.clone())
        .map_err(interaction)?;
    let mut requirement_solution = None;
    if let Some(rf) = &basis.requirement_function {
        if !rf.rows().is_empty() {
            system
                .add_interaction(
                    "RxF",
                    CommunityKind::Requirements,
                    CommunityKind::Functions,
                    rf.clone(),
                )
                .map_err(interaction)?;
        }
        let rs = compose_max_min(rf, fs)?;
        if !rs.rows().is_empty() {
            system
                .add_interaction(
                    "RxS",
                    CommunityKind::Requirements,
                    CommunityKind::Solutions,
                    rs.clone(),
                )
                .map_err(interaction)?;
        }
        requirement_solution = Some(rs);
    }
    for (name, rel) in basis.constraints.iter().filter(|(_, r)| !r.rows().is_empty()) {
        system
            .add_interaction(
                format!("CxS:{name}"),
                CommunityKind::Constraint(name.clone()),
                CommunityKind::Solutions,
                rel.clone(),
            )
            .map_err(interaction)?;
    }
    for (name, members) in &model.organizations {
        let present: Vec<AgentId> = members
            .iter()
            .filter(|m| system.agent(m).is_some())
            .cloned()
            .collect();
        system.add_organization(name.clone(), present).map_err(interaction)?;
    }
    for (id, roles) in &model.roles {
        if system.agent(id).is_some() {
            system.roles.insert(id.clone(), roles.clone());
        }
    }
    let shares = system.distribute_knowledge();
    Ok(PhaseOne {
        function_solution: fs.clone(),
        requirement_function: basis.requirement_function.clone(),
        requirement_solution,
        constraints: basis.constraints.clone(),
        system,
        shares,
        slot_row: basis.slot_row.clone(),
    })
}

fn basis_ids(groups: &[Vec<AgentId>]) -> Vec<AgentId> {
    groups.iter().map(|g| crate::consensus::super_id(g)).collect()
}

/// Phase 1: validated model relations plus the composed requirements ×
/// solutions relation, distributed to the agents as evaluation shares.
pub fn build_relations(model: &ConfigurationModel) -> Result<PhaseOne, PipelineError> {
    let errors = model.errors();
    if !errors.is_empty() {
        return Err(PipelineError::Invalid(errors));
    }
    phase_one(model, &elementary_basis(model)?)
}

/// Phase 2. A solution's rating is the minimum of its function's
/// evaluation of it, that function's relevance to the requirements
/// (`max_r μ(r, f)`, 1 without a requirements relation), and every
/// constraint agent's evaluation of it (1 without constraints).
pub fn evaluate_solutions(model: &ConfigurationModel, relations: &PhaseOne) -> Ratings {
    let fs = &relations.function_solution;
    let relevance: Vec<f64> = match &relations.requirement_function {
        Some(rf) if !rf.rows().is_empty() => (0..fs.rows().len())
            .map(|j| (0..rf.rows().len()).map(|i| rf.at(i, j)).fold(0.0, f64::max))
            .collect(),
        _ => vec![1.0; fs.rows().len()],
    };
    Ratings(
        model
            .solutions
            .iter()
            .map(|s| {
                let i = relations.slot_row[&s.function];
                let j = fs.col_index(&s.id).expect("solution column");
                let functional = fs.at(i, j).min(relevance[i]);
                let constraint = relations
                    .constraints
                    .iter()
                    .flat_map(|(_, c)| (0..c.rows().len()).map(move |r| c.at(r, j)))
                    .fold(1.0, f64::min);
                (s.id.clone(), functional.min(constraint))
            })
            .collect(),
    )
}

/// Aggregates the ratings of the selected solutions.
pub fn score_configuration(
    selections: &[Selection],
    ratings: &Ratings,
    aggregator: ScoreAggregator,
) -> f64 {
    let values = selections
        .iter()
        .map(|s| ratings.get(&s.solution).unwrap_or(0.0));
    match aggregator {
        ScoreAggregator::Mean => {
            if selections.is_empty() {
                return 0.0;
            }
            values.sum::<f64>() / selections.len() as f64
        }
        ScoreAggregator::Min => values.fold(1.0, f64::min),
    }
}

/// Best-rated solution of every slot (ties to the smallest id).
fn slot_argmax(slots: &[Slot], ratings: &Ratings) -> Vec<AgentId> {
    slots
        .iter()
        .map(|slot| {
            let mut best: Option<(&AgentId, f64)> = None;
            for s in &slot.solutions {
                let r = ratings.get(s).unwrap_or(0.0);
                best = match best {
                    Some((b, br)) if br > r || (br == r && b < s) => Some((b, br)),
                    _ => Some((s, r)),
                };
            }
            best.expect("validated slots are non-empty").0.clone()
        })
        .collect()
}

/// Phase 3 for one solution: it keeps its own slot and takes the best
/// rated solution everywhere else.
pub fn local_optimum(
    solution: &Solution,
    slots: &[Slot],
    ratings: &Ratings,
    aggregator: ScoreAggregator,
) -> Configuration {
    local_optimum_with(solution, slots, &slot_argmax(slots, ratings), ratings, aggregator)
}

fn local_optimum_with(
    solution: &Solution,
    slots: &[Slot],
    argmax: &[AgentId],
    ratings: &Ratings,
    aggregator: ScoreAggregator,
) -> Configuration {
    let selections: Vec<Selection> = slots
        .iter()
        .zip(argmax)
        .map(|(slot, best)| Selection {
            function: slot.function.clone(),
            solution: if slot.function == solution.function {
                solution.id.clone()
            } else {
                best.clone()
            },
        })
        .collect();
    let score = score_configuration(&selections, ratings, aggregator);
    Configuration { selections, score }
}

/// Fraction of slots on which `config` agrees with the solution's own
/// locally optimal configuration.
pub fn solution_config_affinity(local: &Configuration, config: &Configuration) -> f64 {
    if local.selections.is_empty() {
        return 1.0;
    }
    let agree = local
        .selections
        .iter()
        .filter(|s| config.solution_for(&s.function) == Some(&s.solution))
        .count();
    agree as f64 / local.selections.len() as f64
}

pub fn run_configuration(model: &ConfigurationModel) -> Result<ConfigurationResult, PipelineError> {
    run_configuration_observed(model, &mut |_| ControlFlow::Continue(()))
}

/// Runs all phases, reporting progress to `observer`. A `Break` from the
/// observer cancels the run.
pub fn run_configuration_observed(
    model: &ConfigurationModel,
    observer: &mut dyn FnMut(PipelineEvent) -> ControlFlow<()>,
) -> Result<ConfigurationResult, PipelineError> {
    let errors = model.errors();
    if !errors.is_empty() {
        return Err(PipelineError::Invalid(errors));
    }
    let mut emit = |e: PipelineEvent| -> Result<(), PipelineError> {
        match observer(e) {
            ControlFlow::Continue(()) => Ok(()),
            ControlFlow::Break(()) => Err(PipelineError::Cancelled),
        }
    };
    let options = &model.options;
    let slots = model.slots();

    let (basis, communities, generalized_slot) = if options.generalized {
        emit(PipelineEvent::PhaseStarted { phase: Phase::Generalize })?;
        let g = generalize(model)?;
        for report in &g.1 {
            if let CommunityStatus::Clustered { groups, .. } = &report.status {
                emit(PipelineEvent::PartitionChanged {
                    stage: report.community.to_string(),
                    groups: groups.len(),
                })?;
            }
        }
        emit(PipelineEvent::PhaseFinished { phase: Phase::Generalize })?;
        g
    } else {
        let b = elementary_basis(model)?;
        let flags = vec![false; slots.len()];
        (b, Vec::new(), flags)
    };

    emit(PipelineEvent::PhaseStarted { phase: Phase::BuildRelations })?;
    let relations = phase_one(model, &basis)?;
    emit(PipelineEvent::PhaseFinished { phase: Phase::BuildRelations })?;

    emit(PipelineEvent::PhaseStarted { phase: Phase::EvaluateSolutions })?;
    let ratings = evaluate_solutions(model, &relations);
    emit(PipelineEvent::PhaseFinished { phase: Phase::EvaluateSolutions })?;

    emit(PipelineEvent::PhaseStarted { phase: Phase::LocalOptima })?;
    let argmax = slot_argmax(&slots, &ratings);
    let locals: Vec<Configuration> = model
        .solutions
        .iter()
        .map(|s| local_optimum_with(s, &slots, &argmax, &ratings, options.score))
        .collect();
    let mut distinct: Vec<Configuration> = Vec::new();
    for c in &locals {
        if !distinct.iter().any(|d| d.selections == c.selections) {
            distinct.push(c.clone());
        }
    }
    let best = distinct.iter().map(|c| c.score).fold(f64::NEG_INFINITY, f64::max);
    let mut optimal: Vec<Configuration> = Vec::new();
    for c in distinct.iter().filter(|c| c.score >= best - SCORE_TOLERANCE) {
        let flag_of = |slot: &Slot| {
            slots
                .iter()
                .position(|s| s.function == slot.function)
                .is_some_and(|i| generalized_slot[i])
        };
        for e in expand_configuration_where(c, &slots, &ratings, options.epsilon, options.score, flag_of)? {
            if !optimal.iter().any(|o| o.selections == e.selections) {
                optimal.push(e);
            }
        }
    }
    optimal.sort_by(|a, b| a.selections.cmp(&b.selections));
    for o in &optimal {
        if !distinct.iter().any(|d| d.selections == o.selections) {
            distinct.push(o.clone());
        }
    }
    distinct.sort_by(|a, b| a.selections.cmp(&b.selections));
    let candidates: Vec<Candidate> = distinct
        .into_iter()
        .enumerate()
        .map(|(i, configuration)| Candidate {
            id: AgentId::new(format!("G{}", i + 1)),
            configuration,
        })
        .collect();
    emit(PipelineEvent::PhaseFinished { phase: Phase::LocalOptima })?;

    emit(PipelineEvent::PhaseStarted { phase: Phase::Consensus })?;
    let solution_ids = model.solution_ids();
    let candidate_ids: Vec<AgentId> = candidates.iter().map(|c| c.id.clone()).collect();
    let affinity = FuzzyRelation::from_fn(solution_ids.clone(), candidate_ids.clone(), |i, j| {
        solution_config_affinity(&locals[i], &candidates[j].configuration)
    })?;
    let mut failure = None;
    let consensus = co_cluster_observed(
        &solution_ids,
        &candidate_ids,
        &affinity,
        &options.consensus_params(),
        &mut |r| {
            let mut step = || -> Result<(), PipelineError> {
                emit(PipelineEvent::SweepCompleted {
                    stage: "consensus".into(),
                    sweep: r.sweep,
                    moves: r.moves,
                    groups: r.groups,
                })?;
                if r.moves > 0 {
                    emit(PipelineEvent::PartitionChanged {
                        stage: "consensus".into(),
                        groups: r.groups,
                    })?;
                }
                Ok(())
            };
            match step() {
                Ok(()) => ControlFlow::Continue(()),
                Err(e) => {
                    failure = Some(e);
                    ControlFlow::Break(())
                }
            }
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    emit(PipelineEvent::PhaseFinished { phase: Phase::Consensus })?;

    Ok(ConfigurationResult {
        provenance: Provenance {
            mode: if options.generalized {
                Mode::Generalized
            } else {
                Mode::Elementary
            },
            options: options.clone(),
            consensus_rounds: consensus.rounds,
            consensus_converged: consensus.converged,
            consensus_stop: consensus.stop,
            communities,
            knowledge_shares: relations.shares,
        },
        outcome: Outcome {
            optimal_configurations: optimal,
            candidates,
            ratings,
            affinity,
            consensus,
        },
    })
}

/// Clusters the requirement, function and constraint communities and lifts
/// the relations onto the super-agents. Communities whose internal relation
/// is missing or unusable stay elementary.
fn generalize(
    model: &ConfigurationModel,
) -> Result<(Basis, Vec<CommunityReport>, Vec<bool>), PipelineError> {
    let params = model.options.consensus_params();
    let base = elementary_basis(model)?;
    let fs = &base.function_solution;
    let rf = base.requirement_function.as_ref();
    let mut reports = Vec::new();

    let mut cluster = |community: CommunityKind,
                       ids: Vec<AgentId>,
                       internal: Option<&crate::fuzzy::RelationData<f64>>,
                       relations: &[(&str, &Relation)]| {
        let result = match internal {
            None => Err(GeneralizationUnavailable::Missing),
            Some(raw) => cluster_community(&ids, raw, relations, &params),
        };
        match result {
            Ok((supers, outcome)) => {
                let groups: Vec<Vec<AgentId>> = supers.into_iter().map(|s| s.members).collect();
                reports.push(CommunityReport {
                    community,
                    status: CommunityStatus::Clustered {
                        groups: groups.clone(),
                        sweeps: outcome.sweeps,
                        converged: outcome.converged,
                    },
                });
                groups
            }
            Err(reason) => {
                reports.push(CommunityReport {
                    community,
                    status: CommunityStatus::Fallback { reason },
                });
                singletons(&ids)
            }
        }
    };

    let rf_rows: Vec<(&str, &Relation)> = rf.map(|r| ("requirement_function", r)).into_iter().collect();
    let requirement_groups = cluster(
        CommunityKind::Requirements,
        model.requirement_ids(),
        model.internal.requirements.as_ref(),
        &rf_rows,
    );
    let rf_t = rf.map(FuzzyRelation::transpose);
    let mut f_rel: Vec<(&str, &Relation)> = vec![("function_solution", fs)];
    if let Some(t) = &rf_t {
        f_rel.push(("requirement_function^T", t));
    }
    let function_groups = cluster(
        CommunityKind::Functions,
        model.function_ids(),
        model.internal.functions.as_ref(),
        &f_rel,
    );
    let mut constraint_groups = Vec::new();
    for ((name, rel), d) in base.constraints.iter().zip(&model.constraints) {
        let groups = cluster(
            CommunityKind::Constraint(name.clone()),
            ids_of(&d.agents),
            d.internal.as_ref(),
            &[("constraint", rel)],
        );
        constraint_groups.push((name.clone(), groups));
    }

    let lifted_fs = lift_rows(fs, &function_groups)?;
    let lifted_rf = match rf {
        Some(r) => Some(lift_columns(&lift_rows(r, &requirement_groups)?, &function_groups)?),
        None => None,
    };
    let lifted_constraints = base
        .constraints
        .iter()
        .zip(&constraint_groups)
        .map(|((name, rel), (_, groups))| Ok((name.clone(), lift_rows(rel, groups)?)))
        .collect::<Result<Vec<_>, RelationError>>()?;
    let mut slot_row = BTreeMap::new();
    for (i, g) in function_groups.iter().enumerate() {
        for f in g {
            slot_row.insert(f.clone(), i);
        }
    }
    let merged = |groups: &[Vec<AgentId>]| groups.iter().any(|g| g.len() > 1);
    let global = (rf.is_some() && merged(&requirement_groups))
        || constraint_groups.iter().any(|(_, g)| merged(g));
    let flags = model
        .functions
        .iter()
        .map(|f| global || function_groups[slot_row[&f.id]].len() > 1)
        .collect();
    Ok((
        Basis {
            function_solution: lifted_fs,
            requirement_function: lifted_rf,
            constraints: lifted_constraints,
            slot_row,
            requirement_groups,
        },
        reports,
        flags,
    ))
}

#[cfg(test)]
mod tests;
