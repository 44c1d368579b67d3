//! Consensus inside a community ahead of the configuration run: groups of
//! similar agents become super-agents whose relation rows are the member
//! averages.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{seek_consensus, ConsensusError, ConsensusOutcome, ConsensusParams};
use crate::agent::KnowledgeRow;
use crate::fuzzy::{average_rows, validate_relation, FuzzyRelation, RelationData, Violation};
use crate::id::AgentId;
use crate::pipeline::{score_configuration, SCORE_TOLERANCE, Configuration, Ratings, ScoreAggregator, Selection, Slot};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperAgent<T> {
    pub id: AgentId,
    /// Elementary members, natural order.
    pub members: Vec<AgentId>,
    /// Averaged row of every relation the community takes part in.
    pub lifted: BTreeMap<String, KnowledgeRow<T>>,
}

impl<T> SuperAgent<T> {
    pub fn is_elementary(&self) -> bool {
        self.members.len() == 1
    }
}

/// Why a community cannot be clustered; the community then keeps its
/// elementary agents.
#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum GeneralizationUnavailable {
    #[error("no internal relation defined")]
    Missing,
    #[error("internal relation is malformed: {}", .violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Malformed { violations: Vec<Violation> },
    #[error("internal relation does not cover exactly the community")]
    Coverage,
    #[error("consensus failed: {message}")]
    Consensus { message: String },
}

impl From<ConsensusError> for GeneralizationUnavailable {
    fn from(e: ConsensusError) -> Self {
        GeneralizationUnavailable::Consensus {
            message: e.to_string(),
        }
    }
}

/// Name of a super-agent: the member id itself for a singleton, otherwise
/// the members joined with `+`.
pub fn super_id(members: &[AgentId]) -> AgentId {
    AgentId::new(
        members
            .iter()
            .map(AgentId::as_str)
            .collect::<Vec<_>>()
            .join("+"),
    )
}

/// Clusters a community over its internal relation and lifts the
/// community's rows of `relations` (each oriented with the community as
/// rows) onto the resulting super-agents.
pub fn cluster_community<T: Scalar>(
    agents: &[AgentId],
    internal: &RelationData<T>,
    relations: &[(&str, &FuzzyRelation<T>)],
    params: &ConsensusParams<T>,
) -> Result<(Vec<SuperAgent<T>>, ConsensusOutcome), GeneralizationUnavailable> {
    let violations = validate_relation(internal);
    if !violations.is_empty() {
        return Err(GeneralizationUnavailable::Malformed { violations });
    }
    let want: BTreeSet<&AgentId> = agents.iter().collect();
    let rows: BTreeSet<&AgentId> = internal.rows.iter().collect();
    let cols: BTreeSet<&AgentId> = internal.cols.iter().collect();
    if rows != want || cols != want || agents.len() != want.len() {
        return Err(GeneralizationUnavailable::Coverage);
    }
    let mu = FuzzyRelation::from_data(internal.clone()).expect("validated above");
    let outcome = seek_consensus(agents, &mu, params)?;
    let mut groups: Vec<Vec<AgentId>> = outcome.partition.blocks();
    groups.sort_by(|a, b| a[0].cmp(&b[0]));
    let mut supers = Vec::with_capacity(groups.len());
    for members in groups {
        let mut lifted = BTreeMap::new();
        for (name, rel) in relations {
            let values = average_rows(rel, &members).map_err(|e| {
                GeneralizationUnavailable::Consensus {
                    message: e.to_string(),
                }
            })?;
            lifted.insert(
                (*name).to_owned(),
                KnowledgeRow {
                    cols: rel.cols().to_vec(),
                    values,
                },
            );
        }
        supers.push(SuperAgent {
            id: super_id(&members),
            members,
            lifted,
        });
    }
    Ok((supers, outcome))
}

/// Replaces the rows of `relation` by member averages, one row per group.
pub fn lift_rows<T: Scalar>(
    relation: &FuzzyRelation<T>,
    groups: &[Vec<AgentId>],
) -> Result<FuzzyRelation<T>, crate::fuzzy::RelationError> {
    let mut entries = Vec::with_capacity(groups.len());
    for g in groups {
        entries.push(average_rows(relation, g)?);
    }
    FuzzyRelation::new(
        groups.iter().map(|g| super_id(g)).collect(),
        relation.cols().to_vec(),
        entries,
    )
}

/// Column counterpart of [`lift_rows`].
pub fn lift_columns<T: Scalar>(
    relation: &FuzzyRelation<T>,
    groups: &[Vec<AgentId>],
) -> Result<FuzzyRelation<T>, crate::fuzzy::RelationError> {
    Ok(lift_rows(&relation.transpose(), groups)?.transpose())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExpandError {
    #[error("configuration has no selection for slot {0}")]
    MissingSlot(AgentId),
    #[error("no rating for solution {0}")]
    MissingRating(AgentId),
    #[error("no admissible solution for slot {0}")]
    EmptyAdmissible(AgentId),
    #[error("epsilon must be ≥ 0")]
    NegativeEpsilon,
}

/// Expands a configuration into every configuration whose choice in each
/// slot rates within `epsilon` of that slot's best rating.
pub fn expand_configuration(
    super_config: &Configuration,
    slots: &[Slot],
    ratings: &Ratings,
    epsilon: f64,
    score: ScoreAggregator,
) -> Result<Vec<Configuration>, ExpandError> {
    expand_configuration_where(super_config, slots, ratings, epsilon, score, |_| true)
}

/// Like [`expand_configuration`], but only slots for which `expandable`
/// holds are widened; the others keep the selection of `super_config`.
///
/// Output is the cartesian product of the per-slot admissible sets, each
/// sorted by solution id, enumerated lexicographically.
pub fn expand_configuration_where(
    super_config: &Configuration,
    slots: &[Slot],
    ratings: &Ratings,
    epsilon: f64,
    score: ScoreAggregator,
    expandable: impl Fn(&Slot) -> bool,
) -> Result<Vec<Configuration>, ExpandError> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(ExpandError::NegativeEpsilon);
    }
    let mut admissible: Vec<Vec<AgentId>> = Vec::with_capacity(slots.len());
    for slot in slots {
        let chosen = super_config
            .solution_for(&slot.function)
            .ok_or_else(|| ExpandError::MissingSlot(slot.function.clone()))?;
        if !expandable(slot) {
            admissible.push(vec![chosen.clone()]);
            continue;
        }
        let rated: Vec<(&AgentId, f64)> = slot
            .solutions
            .iter()
            .map(|s| {
                ratings
                    .get(s)
                    .map(|r| (s, r))
                    .ok_or_else(|| ExpandError::MissingRating(s.clone()))
            })
            .collect::<Result<_, _>>()?;
        let best = rated.iter().map(|(_, r)| *r).fold(f64::NEG_INFINITY, f64::max);
        let mut ok: Vec<AgentId> = rated
            .iter()
            // 0.4 − 0.1 rounds above 0.3; decimal inputs need the slack
            .filter(|(_, r)| *r >= best - epsilon - SCORE_TOLERANCE)
            .map(|(s, _)| (*s).clone())
            .collect();
        if ok.is_empty() {
            return Err(ExpandError::EmptyAdmissible(slot.function.clone()));
        }
        ok.sort();
        admissible.push(ok);
    }
    let mut out = Vec::new();
    let mut cursor = vec![0usize; slots.len()];
    loop {
        let selections: Vec<Selection> = slots
            .iter()
            .zip(&cursor)
            .zip(&admissible)
            .map(|((slot, &c), adm)| Selection {
                function: slot.function.clone(),
                solution: adm[c].clone(),
            })
            .collect();
        let score = score_configuration(&selections, ratings, score);
        out.push(Configuration { selections, score });
        // odometer, last slot fastest
        let mut k = slots.len();
        loop {
            if k == 0 {
                return Ok(out);
            }
            k -= 1;
            cursor[k] += 1;
            if cursor[k] < admissible[k].len() {
                break;
            }
            cursor[k] = 0;
        }
    }
}
