use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ConsensusError;
use crate::agent::GroupSnapshot;
use crate::id::AgentId;

/// A consensus: a non-empty group of agents under a stable label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusGroup {
    pub label: usize,
    /// Sorted in natural id order.
    pub members: Vec<AgentId>,
}

/// Disjoint groups covering a set of agents, ordered by label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ConsensusGroup>", into = "Vec<ConsensusGroup>")]
pub struct Partition {
    groups: Vec<ConsensusGroup>,
    member_of: BTreeMap<AgentId, usize>,
}

impl TryFrom<Vec<ConsensusGroup>> for Partition {
    type Error = ConsensusError;

    fn try_from(groups: Vec<ConsensusGroup>) -> Result<Self, ConsensusError> {
        Partition::from_labeled(groups)
    }
}

impl From<Partition> for Vec<ConsensusGroup> {
    fn from(p: Partition) -> Self {
        p.groups
    }
}

impl Partition {
    /// One group per agent, labelled by position in `agents`.
    pub fn singletons(agents: &[AgentId]) -> Result<Self, ConsensusError> {
        Self::from_labeled(
            agents
                .iter()
                .enumerate()
                .map(|(label, a)| ConsensusGroup {
                    label,
                    members: vec![a.clone()],
                })
                .collect(),
        )
    }

    /// Groups labelled `0..` in the given order.
    pub fn from_groups(groups: Vec<Vec<AgentId>>) -> Result<Self, ConsensusError> {
        Self::from_labeled(
            groups
                .into_iter()
                .enumerate()
                .map(|(label, members)| ConsensusGroup { label, members })
                .collect(),
        )
    }

    pub fn from_labeled(mut groups: Vec<ConsensusGroup>) -> Result<Self, ConsensusError> {
        groups.sort_by_key(|g| g.label);
        let mut labels = BTreeSet::new();
        let mut member_of = BTreeMap::new();
        for (idx, g) in groups.iter_mut().enumerate() {
            if !labels.insert(g.label) {
                return Err(ConsensusError::InvalidPartition(format!(
                    "label {} used twice",
                    g.label
                )));
            }
            if g.members.is_empty() {
                return Err(ConsensusError::InvalidPartition(format!(
                    "group {} is empty",
                    g.label
                )));
            }
            g.members.sort();
            for m in &g.members {
                if member_of.insert(m.clone(), idx).is_some() {
                    return Err(ConsensusError::InvalidPartition(format!(
                        "agent {m} appears in two groups"
                    )));
                }
            }
        }
        Ok(Partition { groups, member_of })
    }

    /// Builds a partition from per-agent labels.
    pub(crate) fn from_assignment(agents: &[AgentId], labels: &[usize]) -> Self {
        let mut by_label: BTreeMap<usize, Vec<AgentId>> = BTreeMap::new();
        for (a, l) in agents.iter().zip(labels) {
            by_label.entry(*l).or_default().push(a.clone());
        }
        Self::from_labeled(
            by_label
                .into_iter()
                .map(|(label, members)| ConsensusGroup { label, members })
                .collect(),
        )
        .expect("assignment yields a valid partition")
    }

    pub fn groups(&self) -> &[ConsensusGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn agent_count(&self) -> usize {
        self.member_of.len()
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentId> {
        self.member_of.keys()
    }

    pub fn contains(&self, agent: &AgentId) -> bool {
        self.member_of.contains_key(agent)
    }

    /// Index into [`Partition::groups`].
    pub fn index_of(&self, agent: &AgentId) -> Option<usize> {
        self.member_of.get(agent).copied()
    }

    pub fn group_of(&self, agent: &AgentId) -> Option<&ConsensusGroup> {
        self.index_of(agent).map(|i| &self.groups[i])
    }

    pub fn group(&self, label: usize) -> Option<&ConsensusGroup> {
        self.groups.iter().find(|g| g.label == label)
    }

    /// Moves `agent` into group `label`, dropping its old group if that
    /// empties.
    pub fn move_agent(&self, agent: &AgentId, label: usize) -> Result<Self, ConsensusError> {
        if !self.contains(agent) {
            return Err(ConsensusError::UnknownAgent(agent.clone()));
        }
        if self.group(label).is_none() {
            return Err(ConsensusError::InvalidPartition(format!("no group {label}")));
        }
        let groups = self
            .groups
            .iter()
            .map(|g| {
                let mut members: Vec<AgentId> =
                    g.members.iter().filter(|m| *m != agent).cloned().collect();
                if g.label == label {
                    members.push(agent.clone());
                }
                ConsensusGroup {
                    label: g.label,
                    members,
                }
            })
            .filter(|g| !g.members.is_empty())
            .collect();
        Self::from_labeled(groups)
    }

    /// Member sets without labels, sorted; two partitions with equal blocks
    /// group agents identically.
    pub fn blocks(&self) -> Vec<Vec<AgentId>> {
        let mut b: Vec<Vec<AgentId>> = self.groups.iter().map(|g| g.members.clone()).collect();
        b.sort();
        b
    }

    pub fn snapshot(&self) -> Vec<GroupSnapshot> {
        self.groups
            .iter()
            .map(|g| GroupSnapshot {
                label: g.label,
                members: g.members.clone(),
            })
            .collect()
    }
}
