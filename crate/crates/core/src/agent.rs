//! Communities of fuzzy agents exchanging messages.
//!
//! An agent observes messages from its mailbox (updating its knowledge),
//! the consensus engine decides on its behalf, and acting means sending
//! messages through [`AgentSystem::broadcast`]. Everything here is
//! deterministic: collections are ordered and mailboxes are FIFO.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuzzy::FuzzyRelation;
use crate::id::AgentId;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CommunityKind {
    Requirements,
    Functions,
    Solutions,
    Configurations,
    /// A constraint domain, named by the expert who owns it.
    Constraint(String),
}

impl fmt::Display for CommunityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommunityKind::Requirements => f.write_str("requirements"),
            CommunityKind::Functions => f.write_str("functions"),
            CommunityKind::Solutions => f.write_str("solutions"),
            CommunityKind::Configurations => f.write_str("configurations"),
            CommunityKind::Constraint(d) => write!(f, "constraint:{d}"),
        }
    }
}

impl FromStr for CommunityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "requirements" => CommunityKind::Requirements,
            "functions" => CommunityKind::Functions,
            "solutions" => CommunityKind::Solutions,
            "configurations" => CommunityKind::Configurations,
            _ => match s.strip_prefix("constraint:") {
                Some(d) if !d.is_empty() => CommunityKind::Constraint(d.to_owned()),
                _ => return Err(format!("unknown community {s:?}")),
            },
        })
    }
}

impl Serialize for CommunityKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CommunityKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSnapshot {
    pub label: usize,
    pub members: Vec<AgentId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEdit<T> {
    pub row: AgentId,
    pub col: AgentId,
    pub value: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    PartitionUpdate,
    AssignmentUpdate,
    RelationUpdate,
    EvaluationShare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload<T> {
    /// Full partition snapshot (the group diffusion).
    PartitionUpdate { groups: Vec<GroupSnapshot> },
    /// One agent moved into a group (the assignment diffusion).
    AssignmentUpdate { agent: AgentId, group: usize },
    RelationUpdate {
        relation: String,
        cells: Vec<CellEdit<T>>,
    },
    /// A row of ratings for one relation, replacing the receiver's row.
    EvaluationShare {
        relation: String,
        cols: Vec<AgentId>,
        values: Vec<T>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message<T> {
    pub sender: AgentId,
    pub payload: Payload<T>,
}

impl<T> Message<T> {
    pub fn new(sender: AgentId, payload: Payload<T>) -> Self {
        Message { sender, payload }
    }

    pub fn kind(&self) -> MessageKind {
        match self.payload {
            Payload::PartitionUpdate { .. } => MessageKind::PartitionUpdate,
            Payload::AssignmentUpdate { .. } => MessageKind::AssignmentUpdate,
            Payload::RelationUpdate { .. } => MessageKind::RelationUpdate,
            Payload::EvaluationShare { .. } => MessageKind::EvaluationShare,
        }
    }
}

/// Sender id used for data entered by the customer or the experts.
pub fn environment_id() -> AgentId {
    AgentId::from("@env")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeRow<T> {
    pub cols: Vec<AgentId>,
    pub values: Vec<T>,
}

/// What an agent knows: its rows of the relations it takes part in and
/// its last view of the consensus partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knowledge<T> {
    pub rows: BTreeMap<String, KnowledgeRow<T>>,
    pub partition: Option<Vec<GroupSnapshot>>,
}

impl<T> Default for Knowledge<T> {
    fn default() -> Self {
        Knowledge {
            rows: BTreeMap::new(),
            partition: None,
        }
    }
}

impl<T: Scalar> Knowledge<T> {
    pub fn value(&self, relation: &str, col: &AgentId) -> Option<T> {
        let row = self.rows.get(relation)?;
        let j = row.cols.iter().position(|c| c == col)?;
        Some(row.values[j])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    #[error("relation {relation} is not known to the agent")]
    UnknownRelation { relation: String },
    #[error("cell row {row} is not the receiving agent")]
    NotAddressed { row: AgentId },
    #[error("column {col} is not part of relation {relation}")]
    UnknownColumn { relation: String, col: AgentId },
    #[error("value for {col} is outside [0, 1]")]
    OutOfRange { col: AgentId },
    #[error("expected {expected} values, got {found}")]
    WrongLength { expected: usize, found: usize },
    #[error("duplicate id {id} in payload")]
    Duplicate { id: AgentId },
    #[error("empty group in partition payload")]
    EmptyGroup,
    #[error("no partition known to the agent")]
    NoPartition,
    #[error("unknown group label {label}")]
    UnknownGroup { label: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection<T> {
    pub message: Message<T>,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyAgent<T> {
    pub id: AgentId,
    pub community: CommunityKind,
    pub label: String,
    pub knowledge: Knowledge<T>,
    pub mailbox: VecDeque<Message<T>>,
    /// Audit log of messages that failed to apply.
    pub rejected: Vec<Rejection<T>>,
    pub consumed: usize,
}

impl<T: Scalar> FuzzyAgent<T> {
    pub fn new(id: AgentId, community: CommunityKind, label: impl Into<String>) -> Self {
        FuzzyAgent {
            id,
            community,
            label: label.into(),
            knowledge: Knowledge::default(),
            mailbox: VecDeque::new(),
            rejected: Vec::new(),
            consumed: 0,
        }
    }

    /// Applies one message to the agent's knowledge. On error the knowledge
    /// is left untouched.
    pub fn observe(&mut self, message: &Message<T>) -> Result<(), RejectReason> {
        match &message.payload {
            Payload::PartitionUpdate { groups } => {
                let mut seen = BTreeSet::new();
                for g in groups {
                    if g.members.is_empty() {
                        return Err(RejectReason::EmptyGroup);
                    }
                    for m in &g.members {
                        if !seen.insert(m) {
                            return Err(RejectReason::Duplicate { id: m.clone() });
                        }
                    }
                }
                self.knowledge.partition = Some(groups.clone());
            }
            Payload::AssignmentUpdate { agent, group } => {
                let mut groups = self
                    .knowledge
                    .partition
                    .clone()
                    .ok_or(RejectReason::NoPartition)?;
                if !groups.iter().any(|g| g.label == *group) {
                    return Err(RejectReason::UnknownGroup { label: *group });
                }
                for g in groups.iter_mut() {
                    g.members.retain(|m| m != agent);
                    if g.label == *group {
                        g.members.push(agent.clone());
                        g.members.sort();
                    }
                }
                groups.retain(|g| !g.members.is_empty());
                self.knowledge.partition = Some(groups);
            }
            Payload::RelationUpdate { relation, cells } => {
                let row = self
                    .knowledge
                    .rows
                    .get(relation)
                    .ok_or_else(|| RejectReason::UnknownRelation {
                        relation: relation.clone(),
                    })?;
                let mut edits = Vec::with_capacity(cells.len());
                for c in cells {
                    if c.row != self.id {
                        return Err(RejectReason::NotAddressed { row: c.row.clone() });
                    }
                    let j = row.cols.iter().position(|x| *x == c.col).ok_or_else(|| {
                        RejectReason::UnknownColumn {
                            relation: relation.clone(),
                            col: c.col.clone(),
                        }
                    })?;
                    if !c.value.in_unit_interval() {
                        return Err(RejectReason::OutOfRange { col: c.col.clone() });
                    }
                    edits.push((j, c.value));
                }
                let row = self.knowledge.rows.get_mut(relation).expect("checked above");
                for (j, v) in edits {
                    row.values[j] = v;
                }
            }
            Payload::EvaluationShare {
                relation,
                cols,
                values,
            } => {
                if values.len() != cols.len() {
                    return Err(RejectReason::WrongLength {
                        expected: cols.len(),
                        found: values.len(),
                    });
                }
                if let Some(existing) = self.knowledge.rows.get(relation) {
                    if existing.cols.len() != values.len() {
                        return Err(RejectReason::WrongLength {
                            expected: existing.cols.len(),
                            found: values.len(),
                        });
                    }
                    if let Some(c) = cols.iter().find(|c| !existing.cols.contains(c)) {
                        return Err(RejectReason::UnknownColumn {
                            relation: relation.clone(),
                            col: c.clone(),
                        });
                    }
                }
                let mut seen = BTreeSet::new();
                for (c, v) in cols.iter().zip(values) {
                    if !seen.insert(c) {
                        return Err(RejectReason::Duplicate { id: c.clone() });
                    }
                    if !v.in_unit_interval() {
                        return Err(RejectReason::OutOfRange { col: c.clone() });
                    }
                }
                self.knowledge.rows.insert(
                    relation.clone(),
                    KnowledgeRow {
                        cols: cols.clone(),
                        values: values.clone(),
                    },
                );
            }
        }
        Ok(())
    }

    /// Pops and observes the oldest message. Rejections go to the audit log.
    pub fn process_next(&mut self) -> Option<Result<(), RejectReason>> {
        let message = self.mailbox.pop_front()?;
        let outcome = self.observe(&message);
        self.consumed += 1;
        if let Err(reason) = &outcome {
            self.rejected.push(Rejection {
                message,
                reason: reason.clone(),
            });
        }
        Some(outcome)
    }

    /// Processes the whole mailbox; returns (applied, rejected).
    pub fn drain_mailbox(&mut self) -> (usize, usize) {
        let mut applied = 0;
        let mut rejected = 0;
        while let Some(r) = self.process_next() {
            match r {
                Ok(()) => applied += 1,
                Err(_) => rejected += 1,
            }
        }
        (applied, rejected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "target", rename_all = "snake_case")]
pub enum Recipients {
    Community(CommunityKind),
    /// A named organization of the system.
    Group(String),
    Agents(Vec<AgentId>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Scalar + Serialize",
    deserialize = "T: Scalar + Deserialize<'de>"
))]
pub struct Interaction<T> {
    pub name: String,
    pub from: CommunityKind,
    pub to: CommunityKind,
    pub relation: FuzzyRelation<T>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("agent {0} already exists")]
    DuplicateAgent(AgentId),
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("unknown community {0}")]
    UnknownCommunity(CommunityKind),
    #[error("unknown group {0}")]
    UnknownGroup(String),
    #[error("interaction {name}: agent {agent} is not in community {community}")]
    ForeignEndpoint {
        name: String,
        agent: AgentId,
        community: CommunityKind,
    },
    #[error("sweep schedule is empty")]
    EmptySchedule,
    #[error("sweep schedule lists {0} twice")]
    DuplicateInSchedule(AgentId),
}

/// The multi-agent system: agents, interactions carrying fuzzy relations,
/// and role/organization metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Scalar + Serialize",
    deserialize = "T: Scalar + Deserialize<'de>"
))]
pub struct AgentSystem<T> {
    agents: BTreeMap<AgentId, FuzzyAgent<T>>,
    communities: BTreeMap<CommunityKind, BTreeSet<AgentId>>,
    interactions: Vec<Interaction<T>>,
    /// Metadata only; no behavior depends on roles.
    pub roles: BTreeMap<AgentId, Vec<String>>,
    organizations: BTreeMap<String, BTreeSet<AgentId>>,
}

impl<T: Scalar> Default for AgentSystem<T> {
    fn default() -> Self {
        AgentSystem {
            agents: BTreeMap::new(),
            communities: BTreeMap::new(),
            interactions: Vec::new(),
            roles: BTreeMap::new(),
            organizations: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> AgentSystem<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_agent(
        &mut self,
        id: AgentId,
        community: CommunityKind,
        label: impl Into<String>,
    ) -> Result<(), AgentError> {
        if self.agents.contains_key(&id) {
            return Err(AgentError::DuplicateAgent(id));
        }
        self.communities
            .entry(community.clone())
            .or_default()
            .insert(id.clone());
        self.agents
            .insert(id.clone(), FuzzyAgent::new(id, community, label));
        Ok(())
    }

    /// Declares an interaction between two communities. Relation rows must
    /// belong to `from` and columns to `to`.
    pub fn add_interaction(
        &mut self,
        name: impl Into<String>,
        from: CommunityKind,
        to: CommunityKind,
        relation: FuzzyRelation<T>,
    ) -> Result<(), AgentError> {
        let name = name.into();
        for (ids, community) in [(relation.rows(), &from), (relation.cols(), &to)] {
            let members = self
                .communities
                .get(community)
                .ok_or_else(|| AgentError::UnknownCommunity(community.clone()))?;
            if let Some(a) = ids.iter().find(|a| !members.contains(*a)) {
                return Err(AgentError::ForeignEndpoint {
                    name,
                    agent: a.clone(),
                    community: community.clone(),
                });
            }
        }
        self.interactions.push(Interaction {
            name,
            from,
            to,
            relation,
        });
        Ok(())
    }

    pub fn add_organization(
        &mut self,
        name: impl Into<String>,
        members: impl IntoIterator<Item = AgentId>,
    ) -> Result<(), AgentError> {
        let members: BTreeSet<AgentId> = members.into_iter().collect();
        if let Some(a) = members.iter().find(|a| !self.agents.contains_key(*a)) {
            return Err(AgentError::UnknownAgent(a.clone()));
        }
        self.organizations.insert(name.into(), members);
        Ok(())
    }

    pub fn agent(&self, id: &AgentId) -> Option<&FuzzyAgent<T>> {
        self.agents.get(id)
    }

    pub fn agent_mut(&mut self, id: &AgentId) -> Option<&mut FuzzyAgent<T>> {
        self.agents.get_mut(id)
    }

    pub fn agents(&self) -> impl Iterator<Item = &FuzzyAgent<T>> {
        self.agents.values()
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn community(&self, kind: &CommunityKind) -> Option<&BTreeSet<AgentId>> {
        self.communities.get(kind)
    }

    pub fn communities(&self) -> impl Iterator<Item = (&CommunityKind, &BTreeSet<AgentId>)> {
        self.communities.iter()
    }

    pub fn interactions(&self) -> &[Interaction<T>] {
        &self.interactions
    }

    pub fn organizations(&self) -> &BTreeMap<String, BTreeSet<AgentId>> {
        &self.organizations
    }

    /// Resolves recipients to agent ids in schedule (natural id) order.
    pub fn resolve(&self, recipients: &Recipients) -> Result<Vec<AgentId>, AgentError> {
        let set = match recipients {
            Recipients::Community(kind) => self
                .communities
                .get(kind)
                .cloned()
                .ok_or_else(|| AgentError::UnknownCommunity(kind.clone()))?,
            Recipients::Group(name) => self
                .organizations
                .get(name)
                .cloned()
                .ok_or_else(|| AgentError::UnknownGroup(name.clone()))?,
            Recipients::Agents(ids) => {
                if let Some(a) = ids.iter().find(|a| !self.agents.contains_key(*a)) {
                    return Err(AgentError::UnknownAgent(a.clone()));
                }
                ids.iter().cloned().collect()
            }
        };
        Ok(set.into_iter().collect())
    }

    /// Appends a copy of `message` to every recipient's mailbox. Nothing is
    /// delivered when the recipients do not resolve.
    pub fn broadcast(
        &mut self,
        recipients: &Recipients,
        message: &Message<T>,
    ) -> Result<usize, AgentError> {
        let ids = self.resolve(recipients)?;
        for id in &ids {
            self.agents
                .get_mut(id)
                .expect("resolved ids exist")
                .mailbox
                .push_back(message.clone());
        }
        Ok(ids.len())
    }

    /// Lets every agent, in id order, drain its mailbox.
    pub fn process_all(&mut self) -> (usize, usize) {
        self.agents
            .values_mut()
            .map(FuzzyAgent::drain_mailbox)
            .fold((0, 0), |(a, r), (a2, r2)| (a + a2, r + r2))
    }

    /// Sends each agent its rows (and columns, under `"<name>^T"`) of every
    /// interaction as evaluation shares from the environment, then lets
    /// the agents observe them.
    pub fn distribute_knowledge(&mut self) -> (usize, usize) {
        let mut outbox = Vec::new();
        for inter in &self.interactions {
            let rel = &inter.relation;
            for (i, id) in rel.rows().iter().enumerate() {
                outbox.push((
                    id.clone(),
                    Payload::EvaluationShare {
                        relation: inter.name.clone(),
                        cols: rel.cols().to_vec(),
                        values: rel.row(i).to_vec(),
                    },
                ));
            }
            let t = rel.transpose();
            for (j, id) in t.rows().iter().enumerate() {
                outbox.push((
                    id.clone(),
                    Payload::EvaluationShare {
                        relation: format!("{}^T", inter.name),
                        cols: t.cols().to_vec(),
                        values: t.row(j).to_vec(),
                    },
                ));
            }
        }
        for (to, payload) in outbox {
            let msg = Message::new(environment_id(), payload);
            self.agents
                .get_mut(&to)
                .expect("interaction endpoints are agents")
                .mailbox
                .push_back(msg);
        }
        self.process_all()
    }
}

/// Token-passing turn order over a set of agents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSchedule {
    order: Vec<AgentId>,
    cursor: usize,
}

impl SweepSchedule {
    pub fn new(order: Vec<AgentId>) -> Result<Self, AgentError> {
        let mut seen = BTreeSet::new();
        for id in &order {
            if !seen.insert(id) {
                return Err(AgentError::DuplicateInSchedule(id.clone()));
            }
        }
        Ok(SweepSchedule { order, cursor: 0 })
    }

    /// Natural id order.
    pub fn lexicographic(ids: impl IntoIterator<Item = AgentId>) -> Self {
        let set: BTreeSet<AgentId> = ids.into_iter().collect();
        SweepSchedule {
            order: set.into_iter().collect(),
            cursor: 0,
        }
    }

    /// Ids listed in `explicit` go first in that order; the remaining ids
    /// follow in natural order. Explicit ids not in `ids` are ignored.
    pub fn with_override(ids: impl IntoIterator<Item = AgentId>, explicit: &[AgentId]) -> Self {
        let mut rest: BTreeSet<AgentId> = ids.into_iter().collect();
        let mut order = Vec::with_capacity(rest.len());
        for id in explicit {
            if rest.remove(id) {
                order.push(id.clone());
            }
        }
        order.extend(rest);
        SweepSchedule { order, cursor: 0 }
    }

    pub fn order(&self) -> &[AgentId] {
        &self.order
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Hands the token to the next agent, wrapping around.
    pub fn next_token(&mut self) -> Result<AgentId, AgentError> {
        if self.order.is_empty() {
            return Err(AgentError::EmptySchedule);
        }
        let id = self.order[self.cursor].clone();
        self.cursor = (self.cursor + 1) % self.order.len();
        Ok(id)
    }
}
