//! Consensus seeking: agents repeatedly join the group that maximizes a
//! blend of cohesion with the group and separation from everyone else,
//! until a full sweep changes nothing.
//!
//! For agent `i` and group `G_p`:
//!
//! ```text
//! k1 = Σ_{g ∈ G_p} μ(i, g) / |G_p|
//! k2 = Σ_{g ∉ G_p} (1 − μ(i, g)) / |G − G_p|
//! k  = α·k1 + (1 − α)·k2
//! ```
//!
//! When `i` is itself one of the partitioned agents it is left out of both
//! sums. An empty group-side sum gives `k1 = 0`; an empty complement gives
//! `k2 = 1`.

mod generalized;
mod partition;

use std::collections::HashSet;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Message, Payload, Recipients, SweepSchedule};
use crate::fuzzy::FuzzyRelation;
use crate::id::AgentId;
use crate::scalar::Scalar;

pub use generalized::{
    cluster_community, expand_configuration, expand_configuration_where, lift_columns,
    lift_rows, super_id, ExpandError, GeneralizationUnavailable, SuperAgent,
};
pub use partition::{ConsensusGroup, Partition};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConsensusError {
    #[error("no affinity for ({row}, {col})")]
    MissingEntry { row: AgentId, col: AgentId },
    #[error("agent {0} is not part of the partition")]
    UnknownAgent(AgentId),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no agents to partition")]
    NoAgents,
    #[error("agent {0} listed twice")]
    DuplicateAgent(AgentId),
}

/// How ties at the argmax are broken.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// The agent's current group wins any tie; otherwise the smallest
    /// label among the tied groups.
    #[default]
    KeepCurrentThenSmallestLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusParams<T> {
    pub alpha: T,
    pub max_sweeps: usize,
    pub tie_break: TieBreak,
    /// Agents listed here take their turn first; the rest follow in
    /// natural id order.
    pub sweep_order: Vec<AgentId>,
}

impl<T: Scalar> ConsensusParams<T> {
    pub fn new(alpha: T, max_sweeps: usize) -> Result<Self, ConsensusError> {
        let p = ConsensusParams {
            alpha,
            max_sweeps,
            tie_break: TieBreak::default(),
            sweep_order: Vec::new(),
        };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<(), ConsensusError> {
        if !self.alpha.in_unit_interval() {
            return Err(ConsensusError::InvalidParams(format!(
                "alpha {:?} outside [0, 1]",
                self.alpha
            )));
        }
        if self.max_sweeps == 0 {
            return Err(ConsensusError::InvalidParams("max_sweeps must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn with_alpha(mut self, alpha: T) -> Self {
        self.alpha = alpha;
        self
    }

    fn schedule(&self, agents: &[AgentId]) -> SweepSchedule {
        SweepSchedule::with_override(agents.iter().cloned(), &self.sweep_order)
    }
}

impl<T: Scalar> Default for ConsensusParams<T> {
    fn default() -> Self {
        ConsensusParams {
            alpha: T::from_f64(0.5).expect("0.5 representable"),
            max_sweeps: 100,
            tie_break: TieBreak::default(),
            sweep_order: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupScore<T> {
    pub label: usize,
    pub k1: T,
    pub k2: T,
    pub k: T,
}

/// Scores every group for one agent.
///
/// `row[j]` is the agent's affinity to column agent `j`, `col_group[j]` the
/// label of `j`'s group, and `skip` the agent's own column if it has one.
/// `labels` lists the live labels in ascending order.
fn score_groups<T: Scalar>(
    row: &[T],
    col_group: &[usize],
    labels: &[usize],
    skip: Option<usize>,
    alpha: T,
    scratch: &mut Scratch<T>,
) -> Vec<GroupScore<T>> {
    scratch.reset(col_group.len().max(labels.last().map_or(0, |l| l + 1)));
    for (j, (&mu, &g)) in row.iter().zip(col_group).enumerate() {
        if Some(j) == skip {
            continue;
        }
        scratch.sum_mu[g] = scratch.sum_mu[g] + mu;
        scratch.sum_dis[g] = scratch.sum_dis[g] + (T::one() - mu);
        scratch.count[g] += 1;
    }
    let total: usize = labels.iter().map(|&l| scratch.count[l]).sum();
    labels
        .iter()
        .map(|&p| {
            let inside = scratch.count[p];
            let k1 = if inside == 0 {
                T::zero()
            } else {
                scratch.sum_mu[p] / T::from_count(inside)
            };
            let outside = total - inside;
            let k2 = if outside == 0 {
                T::one()
            } else {
                let dis = labels
                    .iter()
                    .filter(|&&q| q != p)
                    .fold(T::zero(), |acc, &q| acc + scratch.sum_dis[q]);
                dis / T::from_count(outside)
            };
            let k = alpha * k1 + (T::one() - alpha) * k2;
            GroupScore { label: p, k1, k2, k }
        })
        .collect()
}

struct Scratch<T> {
    sum_mu: Vec<T>,
    sum_dis: Vec<T>,
    count: Vec<usize>,
}

impl<T> Default for Scratch<T> {
    fn default() -> Self {
        Scratch {
            sum_mu: Vec::new(),
            sum_dis: Vec::new(),
            count: Vec::new(),
        }
    }
}

impl<T: Scalar> Scratch<T> {
    fn reset(&mut self, n: usize) {
        self.sum_mu.clear();
        self.sum_mu.resize(n, T::zero());
        self.sum_dis.clear();
        self.sum_dis.resize(n, T::zero());
        self.count.clear();
        self.count.resize(n, 0);
    }
}

/// Picks the winning label. `current` keeps its group on any tie within
/// the scalar's slack; otherwise the smallest tied label wins.
fn choose<T: Scalar>(scores: &[GroupScore<T>], current: Option<usize>) -> usize {
    let best = scores
        .iter()
        .map(|s| s.k)
        .reduce(T::max_of)
        .expect("at least one group");
    let floor = best - T::slack();
    if let Some(c) = current {
        if scores.iter().any(|s| s.label == c && s.k >= floor) {
            return c;
        }
    }
    scores
        .iter()
        .filter(|s| s.k >= floor)
        .map(|s| s.label)
        .min()
        .expect("the maximum is tied with itself")
}

/// Per-group `(k1, k2, k)` for `agent` under `partition`, in label order.
pub fn affinity_scores<T: Scalar>(
    agent: &AgentId,
    partition: &Partition,
    mu: &FuzzyRelation<T>,
    params: &ConsensusParams<T>,
) -> Result<Vec<GroupScore<T>>, ConsensusError> {
    params.check()?;
    let (row, col_group, skip) = gather_row(agent, partition, mu)?;
    let labels: Vec<usize> = partition.groups().iter().map(|g| g.label).collect();
    Ok(score_groups(
        &row,
        &col_group,
        &labels,
        skip,
        params.alpha,
        &mut Scratch::default(),
    ))
}

fn gather_row<T: Scalar>(
    agent: &AgentId,
    partition: &Partition,
    mu: &FuzzyRelation<T>,
) -> Result<(Vec<T>, Vec<usize>, Option<usize>), ConsensusError> {
    let i = mu.row_index(agent).ok_or_else(|| ConsensusError::MissingEntry {
        row: agent.clone(),
        col: partition.agents().next().cloned().unwrap_or_else(|| agent.clone()),
    })?;
    let mut row = Vec::with_capacity(partition.agent_count());
    let mut col_group = Vec::with_capacity(partition.agent_count());
    let mut skip = None;
    for g in partition.groups() {
        for m in &g.members {
            let j = mu.col_index(m).ok_or_else(|| ConsensusError::MissingEntry {
                row: agent.clone(),
                col: m.clone(),
            })?;
            if m == agent {
                skip = Some(row.len());
            }
            row.push(mu.at(i, j));
            col_group.push(g.label);
        }
    }
    Ok((row, col_group, skip))
}

/// A message produced by an assignment change, with its addressees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outbound<T> {
    pub recipients: Recipients,
    pub message: Message<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<T> {
    pub partition: Partition,
    pub changed: bool,
    /// Label the agent ends up in.
    pub group: usize,
    pub scores: Vec<GroupScore<T>>,
    pub outbound: Vec<Outbound<T>>,
}

/// One turn of `agent`: join the best-scoring group, and announce the move
/// only if something changed.
pub fn consensus_step<T: Scalar>(
    agent: &AgentId,
    partition: &Partition,
    mu: &FuzzyRelation<T>,
    params: &ConsensusParams<T>,
) -> Result<StepOutcome<T>, ConsensusError> {
    let current = partition.group_of(agent).map(|g| g.label);
    let scores = affinity_scores(agent, partition, mu, params)?;
    let target = choose(&scores, current);
    if current == Some(target) {
        return Ok(StepOutcome {
            partition: partition.clone(),
            changed: false,
            group: target,
            scores,
            outbound: Vec::new(),
        });
    }
    let next = if current.is_some() {
        partition.move_agent(agent, target)?
    } else {
        let mut groups: Vec<ConsensusGroup> = partition.groups().to_vec();
        for g in groups.iter_mut().filter(|g| g.label == target) {
            g.members.push(agent.clone());
        }
        Partition::from_labeled(groups)?
    };
    let others: Vec<AgentId> = next.agents().filter(|a| *a != agent).cloned().collect();
    let members = next.group(target).expect("target exists").members.clone();
    let outbound = vec![
        Outbound {
            recipients: Recipients::Agents(others),
            message: Message::new(
                agent.clone(),
                Payload::AssignmentUpdate {
                    agent: agent.clone(),
                    group: target,
                },
            ),
        },
        Outbound {
            recipients: Recipients::Agents(members),
            message: Message::new(
                agent.clone(),
                Payload::PartitionUpdate {
                    groups: next.snapshot(),
                },
            ),
        },
    ];
    Ok(StepOutcome {
        partition: next,
        changed: true,
        group: target,
        scores,
        outbound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxSweeps,
    /// A partition seen at the end of an earlier sweep came back.
    Cycle,
    Cancelled,
}

/// Progress report handed to observers after every sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub sweep: usize,
    pub moves: usize,
    pub groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusOutcome {
    pub partition: Partition,
    pub sweeps: usize,
    pub converged: bool,
    pub stop: StopReason,
    /// Diffusion messages sent (two per move).
    pub messages: usize,
}

/// Runs the consensus loop from singletons over a square affinity relation.
pub fn seek_consensus<T: Scalar>(
    agents: &[AgentId],
    mu: &FuzzyRelation<T>,
    params: &ConsensusParams<T>,
) -> Result<ConsensusOutcome, ConsensusError> {
    seek_consensus_observed(agents, mu, params, &mut |_| ControlFlow::Continue(()))
}

pub fn seek_consensus_observed<T: Scalar>(
    agents: &[AgentId],
    mu: &FuzzyRelation<T>,
    params: &ConsensusParams<T>,
    observer: &mut dyn FnMut(&SweepReport) -> ControlFlow<()>,
) -> Result<ConsensusOutcome, ConsensusError> {
    params.check()?;
    let agents = sorted_unique(agents)?;
    let n = agents.len();
    let mut w = Vec::with_capacity(n * n);
    for a in &agents {
        let i = mu.row_index(a).ok_or_else(|| ConsensusError::MissingEntry {
            row: a.clone(),
            col: a.clone(),
        })?;
        for b in &agents {
            let j = mu.col_index(b).ok_or_else(|| ConsensusError::MissingEntry {
                row: a.clone(),
                col: b.clone(),
            })?;
            w.push(mu.at(i, j));
        }
    }
    let mut schedule = params.schedule(&agents);
    let order: Vec<usize> = (0..n)
        .map(|_| {
            let id = schedule.next_token().expect("non-empty schedule");
            agents.binary_search(&id).expect("scheduled agent exists")
        })
        .collect();
    let run = sweep_loop(n, &w, &order, params, observer);
    Ok(ConsensusOutcome {
        partition: Partition::from_assignment(&agents, &run.labels),
        sweeps: run.sweeps,
        converged: run.stop == StopReason::Converged,
        stop: run.stop,
        messages: run.messages,
    })
}

fn sorted_unique(agents: &[AgentId]) -> Result<Vec<AgentId>, ConsensusError> {
    if agents.is_empty() {
        return Err(ConsensusError::NoAgents);
    }
    let mut v = agents.to_vec();
    v.sort();
    if let Some(w) = v.windows(2).find(|w| w[0] == w[1]) {
        return Err(ConsensusError::DuplicateAgent(w[0].clone()));
    }
    Ok(v)
}

/// Result of [`seek_consensus_dense`]: one group label per agent index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopResult {
    pub labels: Vec<usize>,
    pub sweeps: usize,
    pub stop: StopReason,
    pub messages: usize,
}

/// The consensus loop on a row-major `n × n` matrix, agents visited in
/// index order. Same engine as [`seek_consensus`] without the id
/// bookkeeping; meant for bulk experiments.
pub fn seek_consensus_dense<T: Scalar>(
    n: usize,
    w: &[T],
    params: &ConsensusParams<T>,
) -> Result<LoopResult, ConsensusError> {
    params.check()?;
    if n == 0 {
        return Err(ConsensusError::NoAgents);
    }
    if w.len() != n * n {
        return Err(ConsensusError::InvalidParams(format!(
            "expected {} entries, found {}",
            n * n,
            w.len()
        )));
    }
    let order: Vec<usize> = (0..n).collect();
    Ok(sweep_loop(n, w, &order, params, &mut |_| ControlFlow::Continue(())))
}

/// Index-based sweep loop over a dense `n × n` affinity matrix. Labels
/// start as `0..n` (natural id order).
fn sweep_loop<T: Scalar>(
    n: usize,
    w: &[T],
    order: &[usize],
    params: &ConsensusParams<T>,
    observer: &mut dyn FnMut(&SweepReport) -> ControlFlow<()>,
) -> LoopResult {
    let mut labels: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut live: Vec<usize> = (0..n).collect();
    let mut scratch = Scratch::default();
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut messages = 0;
    for sweep in 1..=params.max_sweeps {
        let mut moves = 0;
        for &i in order {
            let row = &w[i * n..(i + 1) * n];
            let scores = score_groups(row, &labels, &live, Some(i), params.alpha, &mut scratch);
            let current = labels[i];
            let target = choose(&scores, Some(current));
            if target != current {
                size[current] -= 1;
                size[target] += 1;
                labels[i] = target;
                if size[current] == 0 {
                    live.retain(|&l| l != current);
                }
                moves += 1;
                messages += 2;
            }
        }
        let report = SweepReport {
            sweep,
            moves,
            groups: live.len(),
        };
        if observer(&report).is_break() {
            return LoopResult {
                labels,
                sweeps: sweep,
                stop: StopReason::Cancelled,
                messages,
            };
        }
        if moves == 0 {
            return LoopResult {
                labels,
                sweeps: sweep,
                stop: StopReason::Converged,
                messages,
            };
        }
        if !seen.insert(labels.clone()) {
            return LoopResult {
                labels,
                sweeps: sweep,
                stop: StopReason::Cycle,
                messages,
            };
        }
    }
    LoopResult {
        labels,
        sweeps: params.max_sweeps,
        stop: StopReason::MaxSweeps,
        messages,
    }
}

/// Aligned consensus between solutions (rows) and configurations (columns).
///
/// `configurations` partitions the configuration agents; `solutions`
/// groups each solution under the label of the configuration group it
/// joined. A label may appear in `configurations` without solutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoClustering {
    pub configurations: Partition,
    pub solutions: Partition,
    pub rounds: usize,
    pub converged: bool,
    pub stop: StopReason,
}

/// Alternating consensus between solutions and configurations.
///
/// Each round, every solution joins the configuration group that maximizes
/// its score on `mu`; then every configuration joins the solution group
/// that maximizes its score on `mu` transposed, and configuration groups
/// are re-formed from those choices. Stops at a joint fixpoint.
pub fn co_cluster<T: Scalar>(
    solutions: &[AgentId],
    configurations: &[AgentId],
    mu: &FuzzyRelation<T>,
    params: &ConsensusParams<T>,
) -> Result<CoClustering, ConsensusError> {
    co_cluster_observed(solutions, configurations, mu, params, &mut |_| {
        ControlFlow::Continue(())
    })
}

pub fn co_cluster_observed<T: Scalar>(
    solutions: &[AgentId],
    configurations: &[AgentId],
    mu: &FuzzyRelation<T>,
    params: &ConsensusParams<T>,
    observer: &mut dyn FnMut(&SweepReport) -> ControlFlow<()>,
) -> Result<CoClustering, ConsensusError> {
    params.check()?;
    let sols = sorted_unique(solutions)?;
    let cfgs = sorted_unique(configurations)?;
    let (n, m) = (sols.len(), cfgs.len());
    let mut w = Vec::with_capacity(n * m);
    for s in &sols {
        let i = mu.row_index(s).ok_or_else(|| ConsensusError::MissingEntry {
            row: s.clone(),
            col: cfgs[0].clone(),
        })?;
        for g in &cfgs {
            let j = mu.col_index(g).ok_or_else(|| ConsensusError::MissingEntry {
                row: s.clone(),
                col: g.clone(),
            })?;
            w.push(mu.at(i, j));
        }
    }
    let sol_order = index_order(&sols, &params.schedule(&sols));
    let cfg_order = index_order(&cfgs, &params.schedule(&cfgs));

    let mut cfg_label: Vec<usize> = (0..m).collect();
    let mut sol_label: Vec<Option<usize>> = vec![None; n];
    let mut scratch = Scratch::default();
    let mut col = vec![T::zero(); n];
    let mut seen = HashSet::new();
    let mut stop = StopReason::MaxSweeps;
    let mut rounds = params.max_sweeps;
    for round in 1..=params.max_sweeps {
        let mut moves = 0;
        let cfg_live = live_labels(cfg_label.iter().copied());
        for &i in &sol_order {
            let scores = score_groups(
                &w[i * m..(i + 1) * m],
                &cfg_label,
                &cfg_live,
                None,
                params.alpha,
                &mut scratch,
            );
            let target = choose(&scores, sol_label[i]);
            if sol_label[i] != Some(target) {
                sol_label[i] = Some(target);
                moves += 1;
            }
        }
        let assigned: Vec<usize> = sol_label.iter().map(|l| l.expect("assigned")).collect();
        let sol_live = live_labels(assigned.iter().copied());
        let mut next = cfg_label.clone();
        for &j in &cfg_order {
            for (i, c) in col.iter_mut().enumerate() {
                *c = w[i * m + j];
            }
            let scores = score_groups(&col, &assigned, &sol_live, None, params.alpha, &mut scratch);
            next[j] = choose(&scores, Some(cfg_label[j]));
        }
        moves += next.iter().zip(&cfg_label).filter(|(a, b)| a != b).count();
        cfg_label = next;
        let report = SweepReport {
            sweep: round,
            moves,
            groups: live_labels(cfg_label.iter().copied()).len(),
        };
        if observer(&report).is_break() {
            stop = StopReason::Cancelled;
            rounds = round;
            break;
        }
        if moves == 0 {
            stop = StopReason::Converged;
            rounds = round;
            break;
        }
        let mut state = cfg_label.clone();
        state.extend(assigned);
        if !seen.insert(state) {
            stop = StopReason::Cycle;
            rounds = round;
            break;
        }
    }
    let sol_labels: Vec<usize> = sol_label.iter().map(|l| l.expect("assigned")).collect();
    Ok(CoClustering {
        configurations: Partition::from_assignment(&cfgs, &cfg_label),
        solutions: Partition::from_assignment(&sols, &sol_labels),
        rounds,
        converged: stop == StopReason::Converged,
        stop,
    })
}

fn index_order(sorted: &[AgentId], schedule: &SweepSchedule) -> Vec<usize> {
    schedule
        .order()
        .iter()
        .map(|id| sorted.binary_search(id).expect("scheduled agent exists"))
        .collect()
}

fn live_labels(labels: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = labels.collect();
    v.sort_unstable();
    v.dedup();
    v
}
