use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::CoClustering;
use crate::fuzzy::FuzzyRelation;
use crate::id::AgentId;
use crate::Relation;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("matrix rows do not match the solution partition")]
    Rows,
    #[error("matrix columns do not match the configuration partition")]
    Cols,
}

/// One consensus group's rectangle on the diagonal. A group may have no
/// solutions, giving an empty row span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpan {
    pub label: usize,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

/// Row and column orders that put every consensus group on a contiguous
/// diagonal block. Display only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub row_order: Vec<AgentId>,
    pub col_order: Vec<AgentId>,
    pub blocks: Vec<BlockSpan>,
}

impl BlockLayout {
    /// `mu` with rows and columns permuted into the layout.
    pub fn apply(&self, mu: &Relation) -> Relation {
        FuzzyRelation::from_fn(self.row_order.clone(), self.col_order.clone(), |i, j| {
            mu.get(&self.row_order[i], &self.col_order[j])
                .expect("layout covers the matrix")
        })
        .expect("permutation of a valid relation")
    }
}

/// Groups are ordered by their smallest configuration id; groups holding
/// only solutions come last, by smallest solution id. Members keep natural
/// id order inside a group.
pub fn reorder_blocks(mu: &Relation, consensus: &CoClustering) -> Result<BlockLayout, LayoutError> {
    let mut sols: Vec<&AgentId> = consensus.solutions.agents().collect();
    let mut rows: Vec<&AgentId> = mu.rows().iter().collect();
    sols.sort();
    rows.sort();
    if sols != rows {
        return Err(LayoutError::Rows);
    }
    let mut cfgs: Vec<&AgentId> = consensus.configurations.agents().collect();
    let mut cols: Vec<&AgentId> = mu.cols().iter().collect();
    cfgs.sort();
    cols.sort();
    if cfgs != cols {
        return Err(LayoutError::Cols);
    }
    let mut groups: BTreeMap<usize, (Vec<AgentId>, Vec<AgentId>)> = BTreeMap::new();
    for g in consensus.configurations.groups() {
        groups.entry(g.label).or_default().1.extend(g.members.iter().cloned());
    }
    for g in consensus.solutions.groups() {
        groups.entry(g.label).or_default().0.extend(g.members.iter().cloned());
    }
    let mut ordered: Vec<(usize, Vec<AgentId>, Vec<AgentId>)> = groups
        .into_iter()
        .map(|(label, (mut s, mut c))| {
            s.sort();
            c.sort();
            (label, s, c)
        })
        .collect();
    ordered.sort_by(|a, b| match (a.2.first(), b.2.first()) {
        (Some(x), Some(y)) => x.cmp(y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.1.first().cmp(&b.1.first()),
    });
    let mut layout = BlockLayout {
        row_order: Vec::new(),
        col_order: Vec::new(),
        blocks: Vec::new(),
    };
    for (label, s, c) in ordered {
        let (r0, c0) = (layout.row_order.len(), layout.col_order.len());
        layout.row_order.extend(s);
        layout.col_order.extend(c);
        layout.blocks.push(BlockSpan {
            label,
            rows: r0..layout.row_order.len(),
            cols: c0..layout.col_order.len(),
        });
    }
    Ok(layout)
}
