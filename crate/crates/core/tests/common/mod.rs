//! Oracles and generators shared by the integration tests.
//!
//! The k formula here is written out directly from its definition, with no
//! code shared with the engine, so the two can check each other.

#![allow(dead_code)]

use fuzzcfg::pipeline::{
    Agent, ConstraintDomain, OptionChange, RelationRef, ScoreAggregator, Solution,
};
use fuzzcfg::{AgentId, CommunityKind, ConfigurationModel, FuzzyRelation, RelationData, Update};
use rand::seq::IndexedRandom;
use rand::Rng;

pub const TOL: f64 = 1e-9;

pub fn id(s: &str) -> AgentId {
    AgentId::from(s)
}

pub fn ids(prefix: &str, n: usize) -> Vec<AgentId> {
    (1..=n).map(|i| AgentId::new(format!("{prefix}{i}"))).collect()
}

/// `(k1, k2, k)` of agent `i` towards group `group` under `groups`, by the
/// textbook formula with `i` left out of both sums.
pub fn naive_k(w: &[Vec<f64>], groups: &[Vec<usize>], i: usize, group: usize, alpha: f64) -> (f64, f64, f64) {
    let inside: Vec<usize> = groups[group].iter().copied().filter(|&j| j != i).collect();
    let outside: Vec<usize> = groups
        .iter()
        .enumerate()
        .filter(|(p, _)| *p != group)
        .flat_map(|(_, g)| g.iter().copied())
        .filter(|&j| j != i)
        .collect();
    let k1 = if inside.is_empty() {
        0.0
    } else {
        inside.iter().map(|&j| w[i][j]).sum::<f64>() / inside.len() as f64
    };
    let k2 = if outside.is_empty() {
        1.0
    } else {
        outside.iter().map(|&j| 1.0 - w[i][j]).sum::<f64>() / outside.len() as f64
    };
    (k1, k2, alpha * k1 + (1.0 - alpha) * k2)
}

/// Agents (by index) that could raise their k by moving to another
/// existing group.
pub fn unstable_agents(w: &[Vec<f64>], groups: &[Vec<usize>], alpha: f64) -> Vec<usize> {
    let mut out = Vec::new();
    for (own, g) in groups.iter().enumerate() {
        for &i in g {
            let here = naive_k(w, groups, i, own, alpha).2;
            if (0..groups.len()).any(|p| naive_k(w, groups, i, p, alpha).2 > here + TOL) {
                out.push(i);
            }
        }
    }
    out
}

/// Groups of an assignment vector, in order of first appearance.
pub fn groups_of(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match order.iter().position(|x| x == l) {
            Some(p) => groups[p].push(i),
            None => {
                order.push(*l);
                groups.push(vec![i]);
            }
        }
    }
    groups
}

/// Symmetric matrix with unit diagonal from its strict upper triangle.
pub fn symmetric(n: usize, upper: &[f64]) -> Vec<Vec<f64>> {
    let mut w = vec![vec![1.0; n]; n];
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            w[i][j] = upper[k];
            w[j][i] = upper[k];
            k += 1;
        }
    }
    w
}

pub fn relation(rows: &[AgentId], cols: &[AgentId], w: &[Vec<f64>]) -> FuzzyRelation<f64> {
    FuzzyRelation::new(rows.to_vec(), cols.to_vec(), w.to_vec()).unwrap()
}

/// Membership degrees on a coarse grid so that ties actually happen.
pub fn degree(rng: &mut impl Rng) -> f64 {
    *[0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 0.9, 1.0].choose(rng).unwrap()
}

fn grid(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| degree(rng)).collect()).collect()
}

fn agents(list: &[AgentId]) -> Vec<Agent> {
    list.iter().map(|a| Agent::new(a.clone(), format!("{a} label"))).collect()
}

pub fn identity(list: &[AgentId]) -> RelationData<f64> {
    FuzzyRelation::<f64>::identity(list.to_vec()).unwrap().to_data()
}

/// A small valid model: 1–4 functions with 1–3 solutions each, 0–3
/// requirements and 0–2 constraint domains.
pub fn random_model(rng: &mut impl Rng) -> ConfigurationModel {
    let mut m = ConfigurationModel::empty("random");
    let nf = rng.random_range(1..=4);
    let functions = ids("F", nf);
    let mut solutions = Vec::new();
    let mut next = 1;
    for f in &functions {
        for _ in 0..rng.random_range(1..=3) {
            solutions.push(Solution {
                id: AgentId::new(format!("S{next}")),
                label: String::new(),
                function: f.clone(),
            });
            next += 1;
        }
    }
    let sol_ids: Vec<AgentId> = solutions.iter().map(|s| s.id.clone()).collect();
    // Mostly sparse: a function only rates its own solutions.
    let fs: Vec<Vec<f64>> = functions
        .iter()
        .map(|f| {
            solutions
                .iter()
                .map(|s| if &s.function == f { degree(rng) } else { 0.0 })
                .collect()
        })
        .collect();
    m.function_solution = Some(relation(&functions, &sol_ids, &fs));
    let nr = rng.random_range(0..=3);
    if nr > 0 {
        let reqs = ids("R", nr);
        m.requirement_function = Some(relation(&reqs, &functions, &grid(rng, nr, nf)));
        m.requirements = agents(&reqs);
    }
    for d in 0..rng.random_range(0..=2) {
        let name = ["cost", "fabrication"][d];
        let members: Vec<AgentId> = (1..=rng.random_range(1..=2))
            .map(|i| AgentId::new(format!("C{}{}", d + 1, i)))
            .collect();
        let cells: Vec<Vec<f64>> = (0..members.len())
            .map(|_| {
                (0..sol_ids.len())
                    .map(|_| if rng.random_bool(0.7) { 1.0 } else { degree(rng) })
                    .collect()
            })
            .collect();
        m.constraints.push(ConstraintDomain {
            name: name.into(),
            agents: agents(&members),
            relation: Some(relation(&members, &sol_ids, &cells)),
            internal: None,
        });
    }
    m.functions = agents(&functions);
    m.solutions = solutions;
    m.options.alpha = *[0.0, 0.25, 0.5, 0.75, 1.0].choose(rng).unwrap();
    if rng.random_bool(0.3) {
        m.options.score = ScoreAggregator::Min;
    }
    assert!(m.errors().is_empty(), "generator produced an invalid model: {:?}", m.errors());
    m
}

/// Gives every community an identity internal relation.
pub fn with_identity_internals(mut m: ConfigurationModel) -> ConfigurationModel {
    if !m.requirements.is_empty() {
        m.internal.requirements = Some(identity(&m.requirement_ids()));
    }
    m.internal.functions = Some(identity(&m.function_ids()));
    for d in &mut m.constraints {
        let members: Vec<AgentId> = d.agents.iter().map(|a| a.id.clone()).collect();
        d.internal = Some(identity(&members));
    }
    m
}

/// An update that is plausible for `m`; it may still be rejected.
pub fn random_update(rng: &mut impl Rng, m: &ConfigurationModel, fresh: &mut usize) -> Update {
    let pick = |rng: &mut _, v: &[AgentId]| v.choose(rng).cloned();
    match rng.random_range(0..10) {
        0..=3 => {
            let f = pick(rng, &m.function_ids()).unwrap();
            let s = pick(rng, &m.solution_ids()).unwrap();
            Update::SetCell {
                relation: RelationRef::FunctionSolution,
                row: f,
                col: s,
                value: degree(rng),
            }
        }
        4 if m.requirement_function.is_some() && !m.requirements.is_empty() => Update::SetCell {
            relation: RelationRef::RequirementFunction,
            row: pick(rng, &m.requirement_ids()).unwrap(),
            col: pick(rng, &m.function_ids()).unwrap(),
            value: degree(rng),
        },
        5 if !m.constraints.is_empty() => {
            let d = m.constraints.choose(rng).unwrap();
            let c = d.agents.choose(rng).unwrap().id.clone();
            Update::SetCell {
                relation: RelationRef::ConstraintSolution {
                    domain: d.name.clone(),
                },
                row: c,
                col: pick(rng, &m.solution_ids()).unwrap(),
                value: degree(rng),
            }
        }
        6 => {
            *fresh += 1;
            Update::AddAgent {
                community: CommunityKind::Solutions,
                id: AgentId::new(format!("S{}", 100 + *fresh)),
                label: "added".into(),
                function: pick(rng, &m.function_ids()),
            }
        }
        7 => {
            let all: Vec<AgentId> = m
                .solution_ids()
                .into_iter()
                .chain(m.requirement_ids())
                .collect();
            Update::RemoveAgent {
                id: pick(rng, &all).unwrap(),
            }
        }
        8 => Update::SetOption {
            change: OptionChange::Alpha(*[0.0, 0.5, 1.0].choose(rng).unwrap()),
        },
        _ => Update::SetOption {
            change: if rng.random_bool(0.5) {
                OptionChange::Score(ScoreAggregator::Min)
            } else {
                OptionChange::Epsilon(*[0.0, 0.05, 0.2].choose(rng).unwrap())
            },
        },
    }
}
