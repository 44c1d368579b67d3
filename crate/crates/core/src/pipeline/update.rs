//! Incremental model edits. Every update is applied to a copy of the model
//! and the copy is validated; a rejected update leaves the model untouched.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::{Agent, ConfigurationModel, ScoreAggregator, Solution};
use crate::agent::CommunityKind;
use crate::fuzzy::{FuzzyRelation, RelationData};
use crate::id::AgentId;
use crate::Relation;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RelationRef {
    RequirementFunction,
    FunctionSolution,
    ConstraintSolution { domain: String },
    /// Internal relation of the requirement or function community, or of a
    /// constraint domain.
    Internal { community: CommunityKind },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "option", content = "value", rename_all = "snake_case")]
pub enum OptionChange {
    Alpha(f64),
    Epsilon(f64),
    Generalized(bool),
    MaxSweeps(usize),
    Score(ScoreAggregator),
    SweepOrder(Vec<AgentId>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Update {
    /// Overwrites one cell; the last write wins.
    SetCell {
        relation: RelationRef,
        row: AgentId,
        col: AgentId,
        value: f64,
    },
    /// New agents start with neutral relations: 0 towards functions and
    /// requirements, 1 from constraint agents.
    AddAgent {
        community: CommunityKind,
        id: AgentId,
        #[serde(default)]
        label: String,
        /// Slot of a new solution.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        function: Option<AgentId>,
    },
    /// Only agents with no nonzero requirement or function evaluation may
    /// go.
    RemoveAgent { id: AgentId },
    SetOption { change: OptionChange },
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{code}: {}", .reasons.join("; "))]
pub struct UpdateRejected {
    /// Machine-readable reason.
    pub code: String,
    pub reasons: Vec<String>,
}

impl UpdateRejected {
    fn new(code: &str, reason: impl Into<String>) -> Self {
        UpdateRejected {
            code: code.into(),
            reasons: vec![reason.into()],
        }
    }
}

type Res<T> = Result<T, UpdateRejected>;

/// Applies `update` and returns the new model; the caller recomputes.
pub fn apply_update(model: &ConfigurationModel, update: &Update) -> Res<ConfigurationModel> {
    let mut next = model.clone();
    match update {
        Update::SetCell {
            relation,
            row,
            col,
            value,
        } => set_cell(&mut next, relation, row, col, *value)?,
        Update::AddAgent {
            community,
            id,
            label,
            function,
        } => add_agent(&mut next, community, id, label, function.as_ref())?,
        Update::RemoveAgent { id } => remove_agent(&mut next, id)?,
        Update::SetOption { change } => {
            let o = &mut next.options;
            match change {
                OptionChange::Alpha(v) => o.alpha = *v,
                OptionChange::Epsilon(v) => o.epsilon = *v,
                OptionChange::Generalized(v) => o.generalized = *v,
                OptionChange::MaxSweeps(v) => o.max_sweeps = *v,
                OptionChange::Score(v) => o.score = *v,
                OptionChange::SweepOrder(v) => o.sweep_order.clone_from(v),
            }
        }
    }
    let errors = next.errors();
    if !errors.is_empty() {
        return Err(UpdateRejected {
            code: "invalid_model".into(),
            reasons: errors.iter().map(ToString::to_string).collect(),
        });
    }
    Ok(next)
}

fn set_cell(m: &mut ConfigurationModel, r: &RelationRef, row: &AgentId, col: &AgentId, v: f64) -> Res<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(UpdateRejected::new("out_of_range", format!("value {v} outside [0, 1]")));
    }
    let missing = || UpdateRejected::new("unknown_relation", format!("no relation {r:?}"));
    let target: &mut Relation = match r {
        RelationRef::RequirementFunction => m.requirement_function.as_mut().ok_or_else(missing)?,
        RelationRef::FunctionSolution => m.function_solution.as_mut().ok_or_else(missing)?,
        RelationRef::ConstraintSolution { domain } => m
            .constraints
            .iter_mut()
            .find(|d| &d.name == domain)
            .and_then(|d| d.relation.as_mut())
            .ok_or_else(missing)?,
        RelationRef::Internal { community } => {
            let raw = internal_mut(m, community)?.ok_or_else(missing)?;
            let i = raw.rows.iter().position(|x| x == row);
            let j = raw.cols.iter().position(|x| x == col);
            match (i, j) {
                (Some(i), Some(j)) if j < raw.entries.get(i).map_or(0, Vec::len) => {
                    raw.entries[i][j] = v;
                    return Ok(());
                }
                _ => return Err(dangling(row, col)),
            }
        }
    };
    *target = target.with_entry(row, col, v).map_err(|_| dangling(row, col))?;
    Ok(())
}

fn dangling(row: &AgentId, col: &AgentId) -> UpdateRejected {
    UpdateRejected::new("unknown_cell", format!("no cell ({row}, {col})"))
}

fn internal_mut<'a>(
    m: &'a mut ConfigurationModel,
    community: &CommunityKind,
) -> Res<Option<&'a mut RelationData<f64>>> {
    match community {
        CommunityKind::Requirements => Ok(m.internal.requirements.as_mut()),
        CommunityKind::Functions => Ok(m.internal.functions.as_mut()),
        CommunityKind::Constraint(name) => m
            .constraints
            .iter_mut()
            .find(|d| &d.name == name)
            .map(|d| d.internal.as_mut())
            .ok_or_else(|| UpdateRejected::new("unknown_domain", format!("no constraint domain {name}"))),
        other => Err(UpdateRejected::new(
            "unsupported",
            format!("community {other} has no internal relation"),
        )),
    }
}

fn add_agent(
    m: &mut ConfigurationModel,
    community: &CommunityKind,
    id: &AgentId,
    label: &str,
    function: Option<&AgentId>,
) -> Res<()> {
    if m.community_of(id).is_some() {
        return Err(UpdateRejected::new("duplicate_agent", format!("agent {id} already exists")));
    }
    let agent = Agent::new(id.clone(), label);
    match community {
        CommunityKind::Requirements => {
            m.requirements.push(agent);
            if let Some(rf) = &mut m.requirement_function {
                *rf = push_row(rf, id, 0.0);
            }
            if let Some(raw) = &mut m.internal.requirements {
                extend_square(raw, id);
            }
        }
        CommunityKind::Functions => {
            // A bare function has no solution yet, which validation rejects.
            m.functions.push(agent);
            if let Some(fs) = &mut m.function_solution {
                *fs = push_row(fs, id, 0.0);
            }
            if let Some(rf) = &mut m.requirement_function {
                *rf = push_row(&rf.transpose(), id, 0.0).transpose();
            }
            if let Some(raw) = &mut m.internal.functions {
                extend_square(raw, id);
            }
        }
        CommunityKind::Solutions => {
            let function = function.ok_or_else(|| {
                UpdateRejected::new("missing_function", "a new solution needs a function")
            })?;
            if !m.functions.iter().any(|f| &f.id == function) {
                return Err(UpdateRejected::new(
                    "unknown_agent",
                    format!("unknown function {function}"),
                ));
            }
            m.solutions.push(Solution {
                id: id.clone(),
                label: label.into(),
                function: function.clone(),
            });
            if let Some(fs) = &mut m.function_solution {
                *fs = push_row(&fs.transpose(), id, 0.0).transpose();
            }
            for d in &mut m.constraints {
                if let Some(c) = &mut d.relation {
                    *c = push_row(&c.transpose(), id, 1.0).transpose();
                }
            }
        }
        CommunityKind::Constraint(name) => {
            let d = m
                .constraints
                .iter_mut()
                .find(|d| &d.name == name)
                .ok_or_else(|| UpdateRejected::new("unknown_domain", format!("no constraint domain {name}")))?;
            d.agents.push(agent);
            if let Some(c) = &mut d.relation {
                *c = push_row(c, id, 1.0);
            }
            if let Some(raw) = &mut d.internal {
                extend_square(raw, id);
            }
        }
        CommunityKind::Configurations => {
            return Err(UpdateRejected::new(
                "unsupported",
                "configuration agents are derived, not declared",
            ))
        }
    }
    Ok(())
}

fn push_row(r: &Relation, id: &AgentId, fill: f64) -> Relation {
    let mut d = r.to_data();
    d.rows.push(id.clone());
    d.entries.push(vec![fill; d.cols.len()]);
    FuzzyRelation::from_data(d).expect("row of a valid value keeps the relation valid")
}

fn drop_row(r: &Relation, id: &AgentId) -> Relation {
    let mut d = r.to_data();
    if let Some(i) = d.rows.iter().position(|x| x == id) {
        d.rows.remove(i);
        d.entries.remove(i);
    }
    FuzzyRelation::from_data(d).expect("removing a row keeps the relation valid")
}

fn drop_col(r: &Relation, id: &AgentId) -> Relation {
    drop_row(&r.transpose(), id).transpose()
}

/// Adds `id` to an internal relation with self-affinity 1 and 0 elsewhere.
/// Ragged data is left as is; it already falls back to elementary agents.
fn extend_square(raw: &mut RelationData<f64>, id: &AgentId) {
    for row in &mut raw.entries {
        row.push(0.0);
    }
    raw.cols.push(id.clone());
    raw.rows.push(id.clone());
    let mut own = vec![0.0; raw.cols.len()];
    *own.last_mut().expect("just pushed") = 1.0;
    raw.entries.push(own);
}

fn shrink_square(raw: &mut RelationData<f64>, id: &AgentId) {
    if let Some(i) = raw.rows.iter().position(|x| x == id) {
        raw.rows.remove(i);
        if i < raw.entries.len() {
            raw.entries.remove(i);
        }
    }
    if let Some(j) = raw.cols.iter().position(|x| x == id) {
        raw.cols.remove(j);
        for row in &mut raw.entries {
            if j < row.len() {
                row.remove(j);
            }
        }
    }
}

fn nonzero(values: impl IntoIterator<Item = f64>) -> bool {
    values.into_iter().any(|v| v != 0.0)
}

fn remove_agent(m: &mut ConfigurationModel, id: &AgentId) -> Res<()> {
    let community = m
        .community_of(id)
        .ok_or_else(|| UpdateRejected::new("unknown_agent", format!("unknown agent {id}")))?;
    let referenced = |what: &str| {
        UpdateRejected::new("referenced", format!("agent {id} is still referenced by {what}"))
    };
    if m.roles.contains_key(id) {
        return Err(referenced("roles"));
    }
    if let Some((name, _)) = m.organizations.iter().find(|(_, ms)| ms.contains(id)) {
        return Err(referenced(&format!("organization {name}")));
    }
    if m.options.sweep_order.contains(id) {
        return Err(referenced("the sweep order"));
    }
    match community {
        CommunityKind::Requirements => {
            if let Some(rf) = &m.requirement_function {
                if rf.row_of(id).is_some_and(|r| nonzero(r.iter().copied())) {
                    return Err(referenced("requirement_function"));
                }
                m.requirement_function = Some(drop_row(rf, id));
            }
            m.requirements.retain(|a| &a.id != id);
            if let Some(raw) = &mut m.internal.requirements {
                shrink_square(raw, id);
            }
        }
        CommunityKind::Functions => {
            if m.solutions.iter().any(|s| &s.function == id) {
                return Err(referenced("its solutions"));
            }
            if let Some(fs) = &m.function_solution {
                if fs.row_of(id).is_some_and(|r| nonzero(r.iter().copied())) {
                    return Err(referenced("function_solution"));
                }
                m.function_solution = Some(drop_row(fs, id));
            }
            if let Some(rf) = &m.requirement_function {
                let t = rf.transpose();
                if t.row_of(id).is_some_and(|r| nonzero(r.iter().copied())) {
                    return Err(referenced("requirement_function"));
                }
                m.requirement_function = Some(drop_col(rf, id));
            }
            m.functions.retain(|a| &a.id != id);
            if let Some(raw) = &mut m.internal.functions {
                shrink_square(raw, id);
            }
        }
        CommunityKind::Solutions => {
            if let Some(fs) = &m.function_solution {
                let t = fs.transpose();
                if t.row_of(id).is_some_and(|r| nonzero(r.iter().copied())) {
                    return Err(referenced("function_solution"));
                }
                m.function_solution = Some(drop_col(fs, id));
            }
            for d in &mut m.constraints {
                if let Some(c) = &d.relation {
                    d.relation = Some(drop_col(c, id));
                }
            }
            m.solutions.retain(|s| &s.id != id);
        }
        CommunityKind::Constraint(name) => {
            let d = m
                .constraints
                .iter_mut()
                .find(|d| d.name == name)
                .expect("community_of found the domain");
            if let Some(c) = &d.relation {
                d.relation = Some(drop_row(c, id));
            }
            d.agents.retain(|a| &a.id != id);
            if let Some(raw) = &mut d.internal {
                shrink_square(raw, id);
            }
        }
        CommunityKind::Configurations => unreachable!("models declare no configuration agents"),
    }
    Ok(())
}
