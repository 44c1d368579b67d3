use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::agent::CommunityKind;
use crate::consensus::ConsensusParams;
use crate::fuzzy::RelationData;
use crate::id::AgentId;
use crate::Relation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: AgentId,
    pub label: String,
}

impl Agent {
    pub fn new(id: impl Into<AgentId>, label: impl Into<String>) -> Self {
        Agent {
            id: id.into(),
            label: label.into(),
        }
    }
}

/// A solution agent, attached to the function slot it can realize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub id: AgentId,
    pub label: String,
    pub function: AgentId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintDomain {
    pub name: String,
    pub agents: Vec<Agent>,
    /// Constraint agents × solutions.
    pub relation: Option<Relation>,
    /// Square relation among the domain's agents, unchecked.
    pub internal: Option<RelationData<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreAggregator {
    #[default]
    Mean,
    Min,
}

impl fmt::Display for ScoreAggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreAggregator::Mean => "mean",
            ScoreAggregator::Min => "min",
        })
    }
}

impl std::str::FromStr for ScoreAggregator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mean" => Ok(ScoreAggregator::Mean),
            "min" => Ok(ScoreAggregator::Min),
            _ => Err(format!("unknown score aggregator {s:?} (expected mean or min)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Options {
    pub alpha: f64,
    /// Rating tolerance for admitting alternative solutions in slots that
    /// generalized consensus touched.
    pub epsilon: f64,
    pub generalized: bool,
    pub max_sweeps: usize,
    pub score: ScoreAggregator,
    pub sweep_order: Vec<AgentId>,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            alpha: 0.5,
            epsilon: 0.05,
            generalized: false,
            max_sweeps: 100,
            score: ScoreAggregator::Mean,
            sweep_order: Vec::new(),
        }
    }
}

impl Options {
    pub fn consensus_params(&self) -> ConsensusParams<f64> {
        ConsensusParams {
            alpha: self.alpha,
            max_sweeps: self.max_sweeps,
            sweep_order: self.sweep_order.clone(),
            ..ConsensusParams::default()
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.alpha) {
            out.push(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            out.push(format!("epsilon {} must be a finite value ≥ 0", self.epsilon));
        }
        if self.max_sweeps == 0 {
            out.push("max_sweeps must be ≥ 1".into());
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InternalRelations {
    pub requirements: Option<RelationData<f64>>,
    pub functions: Option<RelationData<f64>>,
}

/// The configuration problem: communities, the relations between them, and
/// run options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationModel {
    pub name: String,
    pub requirements: Vec<Agent>,
    pub functions: Vec<Agent>,
    pub solutions: Vec<Solution>,
    pub constraints: Vec<ConstraintDomain>,
    /// Requirements × functions.
    pub requirement_function: Option<Relation>,
    /// Functions × solutions.
    pub function_solution: Option<Relation>,
    pub internal: InternalRelations,
    pub options: Options,
    pub roles: BTreeMap<AgentId, Vec<String>>,
    pub organizations: BTreeMap<String, Vec<AgentId>>,
}

/// Where a model problem was found.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub line: Option<usize>,
    pub entity: Option<String>,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.line, &self.entity) {
            (Some(l), Some(e)) => write!(f, "line {l}, {e}"),
            (Some(l), None) => write!(f, "line {l}"),
            (None, Some(e)) => f.write_str(e),
            (None, None) => f.write_str("model"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    /// Does not block a run; e.g. an internal relation that will make its
    /// community fall back to elementary agents.
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelIssue {
    pub severity: Severity,
    pub location: Location,
    pub message: String,
}

impl ModelIssue {
    pub fn error(entity: impl Into<String>, message: impl Into<String>) -> Self {
        ModelIssue {
            severity: Severity::Error,
            location: Location {
                line: None,
                entity: Some(entity.into()),
            },
            message: message.into(),
        }
    }

    pub fn warning(entity: impl Into<String>, message: impl Into<String>) -> Self {
        ModelIssue {
            severity: Severity::Warning,
            ..Self::error(entity, message)
        }
    }

    pub fn at_line(mut self, line: Option<usize>) -> Self {
        self.location.line = line;
        self
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for ModelIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: {}: {}", self.location, self.message)
    }
}

/// A function slot and the solutions that can fill it, in model order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub function: AgentId,
    pub solutions: Vec<AgentId>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Selection {
    pub function: AgentId,
    pub solution: AgentId,
}

/// One solution per function slot, with its global score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub selections: Vec<Selection>,
    pub score: f64,
}

impl Configuration {
    pub fn solution_for(&self, function: &AgentId) -> Option<&AgentId> {
        self.selections
            .iter()
            .find(|s| &s.function == function)
            .map(|s| &s.solution)
    }

    pub fn solutions(&self) -> impl Iterator<Item = &AgentId> {
        self.selections.iter().map(|s| &s.solution)
    }

    /// Space-separated solution ids in slot order.
    pub fn row(&self) -> String {
        self.solutions()
            .map(AgentId::as_str)
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Rating of every solution agent, in model order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ratings(pub Vec<(AgentId, f64)>);

impl Ratings {
    pub fn get(&self, solution: &AgentId) -> Option<f64> {
        self.0.iter().find(|(s, _)| s == solution).map(|(_, r)| *r)
    }

    pub fn iter(&self) -> impl Iterator<Item = &(AgentId, f64)> {
        self.0.iter()
    }
}

impl ConfigurationModel {
    pub fn empty(name: impl Into<String>) -> Self {
        ConfigurationModel {
            name: name.into(),
            requirements: Vec::new(),
            functions: Vec::new(),
            solutions: Vec::new(),
            constraints: Vec::new(),
            requirement_function: None,
            function_solution: None,
            internal: InternalRelations::default(),
            options: Options::default(),
            roles: BTreeMap::new(),
            organizations: BTreeMap::new(),
        }
    }

    pub fn requirement_ids(&self) -> Vec<AgentId> {
        self.requirements.iter().map(|a| a.id.clone()).collect()
    }

    pub fn function_ids(&self) -> Vec<AgentId> {
        self.functions.iter().map(|a| a.id.clone()).collect()
    }

    pub fn solution_ids(&self) -> Vec<AgentId> {
        self.solutions.iter().map(|s| s.id.clone()).collect()
    }

    pub fn solution(&self, id: &AgentId) -> Option<&Solution> {
        self.solutions.iter().find(|s| &s.id == id)
    }

    pub fn domain(&self, name: &str) -> Option<&ConstraintDomain> {
        self.constraints.iter().find(|d| d.name == name)
    }

    pub fn slots(&self) -> Vec<Slot> {
        self.functions
            .iter()
            .map(|f| Slot {
                function: f.id.clone(),
                solutions: self
                    .solutions
                    .iter()
                    .filter(|s| s.function == f.id)
                    .map(|s| s.id.clone())
                    .collect(),
            })
            .collect()
    }

    /// Community an agent id belongs to.
    pub fn community_of(&self, id: &AgentId) -> Option<CommunityKind> {
        if self.requirements.iter().any(|a| &a.id == id) {
            return Some(CommunityKind::Requirements);
        }
        if self.functions.iter().any(|a| &a.id == id) {
            return Some(CommunityKind::Functions);
        }
        if self.solutions.iter().any(|a| &a.id == id) {
            return Some(CommunityKind::Solutions);
        }
        self.constraints
            .iter()
            .find(|d| d.agents.iter().any(|a| &a.id == id))
            .map(|d| CommunityKind::Constraint(d.name.clone()))
    }

    /// Every structural problem; an empty list of errors means the model
    /// can be run.
    pub fn validate(&self) -> Vec<ModelIssue> {
        let mut out = Vec::new();
        if self.requirements.is_empty() && self.functions.is_empty() && self.solutions.is_empty()
        {
            out.push(ModelIssue::error("model", "no communities"));
            return out;
        }
        if self.functions.is_empty() || self.solutions.is_empty() {
            out.push(ModelIssue::error(
                "model",
                "at least one function and one solution are required",
            ));
        }
        let mut seen = BTreeSet::new();
        let all_ids = self
            .requirements
            .iter()
            .map(|a| &a.id)
            .chain(self.functions.iter().map(|a| &a.id))
            .chain(self.solutions.iter().map(|s| &s.id))
            .chain(self.constraints.iter().flat_map(|d| d.agents.iter().map(|a| &a.id)));
        for id in all_ids {
            if id.as_str().is_empty() {
                out.push(ModelIssue::error("model", "empty agent id"));
            } else if !seen.insert(id) {
                out.push(ModelIssue::error(id.as_str(), "agent id declared twice"));
            }
        }
        let mut domains = BTreeSet::new();
        for d in &self.constraints {
            if !domains.insert(&d.name) {
                out.push(ModelIssue::error(
                    format!("constraint domain {}", d.name),
                    "domain declared twice",
                ));
            }
        }
        let functions: BTreeSet<&AgentId> = self.functions.iter().map(|a| &a.id).collect();
        for s in &self.solutions {
            if !functions.contains(&s.function) {
                out.push(ModelIssue::error(
                    s.id.as_str(),
                    format!("attached to unknown function {}", s.function),
                ));
            }
        }
        for slot in self.slots() {
            if slot.solutions.is_empty() {
                out.push(ModelIssue::error(
                    slot.function.as_str(),
                    "function has no solution",
                ));
            }
        }
        let reqs = self.requirement_ids();
        let funcs = self.function_ids();
        let sols = self.solution_ids();
        match &self.function_solution {
            None => out.push(ModelIssue::error(
                "relation function_solution",
                "missing relation",
            )),
            Some(r) => check_axes(&mut out, "function_solution", r, &funcs, &sols),
        }
        if let Some(r) = &self.requirement_function {
            check_axes(&mut out, "requirement_function", r, &reqs, &funcs);
        }
        for d in &self.constraints {
            let ids: Vec<AgentId> = d.agents.iter().map(|a| a.id.clone()).collect();
            let name = format!("constraint {}", d.name);
            match &d.relation {
                None => out.push(ModelIssue::error(&name, "missing relation")),
                Some(r) => check_axes(&mut out, &name, r, &ids, &sols),
            }
            if let Some(raw) = &d.internal {
                internal_warnings(&mut out, &format!("internal {name}"), raw, &ids);
            }
        }
        if let Some(raw) = &self.internal.requirements {
            internal_warnings(&mut out, "internal requirements", raw, &reqs);
        }
        if let Some(raw) = &self.internal.functions {
            internal_warnings(&mut out, "internal functions", raw, &funcs);
        }
        for p in self.options.problems() {
            out.push(ModelIssue::error("options", p));
        }
        // Configuration agents G1, G2, ... only exist during a run.
        let derived = |id: &AgentId| {
            id.as_str()
                .strip_prefix('G')
                .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
        };
        for id in &self.options.sweep_order {
            if !seen.contains(id) && !derived(id) {
                out.push(ModelIssue::error(
                    "options.sweep_order",
                    format!("unknown agent {id}"),
                ));
            }
        }
        for id in self.roles.keys() {
            if !seen.contains(id) {
                out.push(ModelIssue::error(format!("roles.{id}"), "unknown agent"));
            }
        }
        for (name, members) in &self.organizations {
            for id in members {
                if !seen.contains(id) {
                    out.push(ModelIssue::error(
                        format!("organizations.{name}"),
                        format!("unknown agent {id}"),
                    ));
                }
            }
        }
        out
    }

    pub fn errors(&self) -> Vec<ModelIssue> {
        self.validate().into_iter().filter(ModelIssue::is_error).collect()
    }
}

fn check_axes(
    out: &mut Vec<ModelIssue>,
    name: &str,
    r: &Relation,
    rows: &[AgentId],
    cols: &[AgentId],
) {
    if r.rows() != rows {
        out.push(ModelIssue::error(
            format!("relation {name}"),
            "row ids do not match the community",
        ));
    }
    if r.cols() != cols {
        out.push(ModelIssue::error(
            format!("relation {name}"),
            "column ids do not match the community",
        ));
    }
}

fn internal_warnings(out: &mut Vec<ModelIssue>, name: &str, raw: &RelationData<f64>, ids: &[AgentId]) {
    for v in crate::fuzzy::validate_relation(raw) {
        out.push(ModelIssue::warning(
            name,
            format!("{v}; community stays elementary"),
        ));
    }
    let rows: BTreeSet<&AgentId> = raw.rows.iter().collect();
    let cols: BTreeSet<&AgentId> = raw.cols.iter().collect();
    let want: BTreeSet<&AgentId> = ids.iter().collect();
    if rows != want || cols != want {
        out.push(ModelIssue::warning(
            name,
            "does not cover exactly the community; community stays elementary",
        ));
    }
}
