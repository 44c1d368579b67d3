use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::layout::{reorder_blocks, LayoutError};
use crate::id::AgentId;
use crate::pipeline::{CommunityStatus, ConfigurationResult, Mode};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    /// Line-oriented text, one configuration per line.
    #[default]
    Table,
    /// Pretty JSON of the whole result; parses back to an equal result.
    Json,
}

pub fn render_result(result: &ConfigurationResult, format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(result).expect("results serialize");
            s.push('\n');
            s
        }
        OutputFormat::Table => table(result),
    }
}

fn table(r: &ConfigurationResult) -> String {
    let mut out = String::new();
    let p = &r.provenance;
    let mode = match p.mode {
        Mode::Elementary => "elementary",
        Mode::Generalized => "generalized",
    };
    let _ = writeln!(
        out,
        "mode {mode}, alpha {}, epsilon {}, score {}",
        p.options.alpha, p.options.epsilon, p.options.score
    );
    for c in &p.communities {
        let _ = match &c.status {
            CommunityStatus::Clustered { groups, .. } => {
                let merged: Vec<String> = groups
                    .iter()
                    .filter(|g| g.len() > 1)
                    .map(|g| g.iter().map(|a| a.as_str()).collect::<Vec<_>>().join("+"))
                    .collect();
                let detail = if merged.is_empty() {
                    String::new()
                } else {
                    format!(" ({})", merged.join(", "))
                };
                let noun = if groups.len() == 1 { "super-agent" } else { "super-agents" };
                writeln!(out, "{}: {} {noun}{detail}", c.community, groups.len())
            }
            CommunityStatus::Fallback { reason } => {
                writeln!(out, "{}: elementary agents, {reason}", c.community)
            }
        };
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "optimal configurations: {}", r.optimal_configurations.len());
    for c in &r.optimal_configurations {
        let _ = writeln!(out, "  {}  score {:.6}", c.row(), c.score);
    }
    let _ = writeln!(out);
    if r.candidates.len() < 2 {
        let _ = writeln!(out, "consensus: omitted, only one configuration was proposed");
        return out;
    }
    let _ = writeln!(out, "candidate configurations: {}", r.candidates.len());
    for c in &r.candidates {
        let _ = writeln!(
            out,
            "  {:<4} {}  score {:.6}",
            c.id,
            c.configuration.row(),
            c.configuration.score
        );
    }
    let _ = writeln!(out);
    let cons = &r.consensus;
    let _ = writeln!(
        out,
        "consensus groups: {} ({} after {} rounds)",
        cons.configurations.len(),
        if cons.converged { "converged" } else { "stopped" },
        cons.rounds
    );
    for (n, g) in cons.configurations.groups().iter().enumerate() {
        let sols = cons
            .solutions
            .group(g.label)
            .map(|s| s.members.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(" "))
            .unwrap_or_default();
        let cfgs = g.members.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "  group {}: configurations {cfgs}; solutions {sols}", n + 1);
    }
    out
}

/// The solutions × configurations affinity matrix in block order, so each
/// consensus group sits on the diagonal. Blocks are listed underneath.
pub fn render_matrix(r: &ConfigurationResult) -> Result<String, LayoutError> {
    let mut out = String::new();
    if r.candidates.len() < 2 {
        let _ = writeln!(out, "consensus matrix: omitted, only one configuration was proposed");
        return Ok(out);
    }
    let layout = reorder_blocks(&r.affinity, &r.consensus)?;
    let mu = layout.apply(&r.affinity);
    let label = layout.row_order.iter().map(|a| a.as_str().len()).max().unwrap_or(0);
    let width = layout
        .col_order
        .iter()
        .map(|a| a.as_str().len())
        .max()
        .unwrap_or(0)
        .max(4);
    let _ = writeln!(
        out,
        "consensus matrix: {} solutions x {} configurations",
        layout.row_order.len(),
        layout.col_order.len()
    );
    let _ = write!(out, "{:label$}", "");
    for c in &layout.col_order {
        let _ = write!(out, "  {:>width$}", c.as_str());
    }
    let _ = writeln!(out);
    for (i, s) in layout.row_order.iter().enumerate() {
        let _ = write!(out, "{:<label$}", s.as_str());
        for j in 0..layout.col_order.len() {
            let _ = write!(out, "  {:>width$.2}", mu.at(i, j));
        }
        let _ = writeln!(out);
    }
    for (n, b) in layout.blocks.iter().enumerate() {
        let span = |ids: &[AgentId], range: &std::ops::Range<usize>| match range.len() {
            0 => "-".to_owned(),
            1 => ids[range.start].to_string(),
            _ => format!("{}..{}", ids[range.start], ids[range.end - 1]),
        };
        let _ = writeln!(
            out,
            "  block {}: rows {}, columns {}",
            n + 1,
            span(&layout.row_order, &b.rows),
            span(&layout.col_order, &b.cols)
        );
    }
    Ok(out)
}
