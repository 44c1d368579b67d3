//! Versioned TOML model documents.
//!
//! ```toml
//! format_version = 1
//! name = "example"
//!
//! [[functions]]
//! id = "F1"
//! label = "Hold"
//!
//! [[solutions]]
//! id = "S1"
//! label = "Clamp"
//! function = "F1"
//!
//! [relations.function_solution]
//! default = 0.0
//! cells = [{ row = "F1", col = "S1", value = 0.9 }]
//! ```
//!
//! A relation block gives either dense `entries` or sparse `cells` over a
//! `default`. `rows` and `cols` default to the declaration order of the
//! communities involved.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use toml::Spanned;

use crate::fuzzy::{validate_relation, FuzzyRelation, RelationData, Violation};
use crate::id::AgentId;
use crate::pipeline::{
    Agent, ConfigurationModel, ConstraintDomain, InternalRelations, ModelIssue, Options,
    ScoreAggregator, Solution,
};
use crate::Relation;

pub const FORMAT_VERSION: i64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseFailureKind {
    /// Not a readable document: bad TOML, unknown keys, wrong types.
    Syntax,
    /// Readable, but the model it describes is invalid.
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub kind: ParseFailureKind,
    pub issues: Vec<ModelIssue>,
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ParseFailure {}

/// A valid model plus the warnings found while reading it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedModel {
    pub model: ConfigurationModel,
    pub warnings: Vec<ModelIssue>,
}

/// A number that may be written as a TOML integer or float.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Number(f64);

impl<'de> Deserialize<'de> for Number {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Number;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Number, E> {
                Ok(Number(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Number, E> {
                Ok(Number(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Number, E> {
                Ok(Number(v as f64))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDoc {
    format_version: Option<Spanned<i64>>,
    #[serde(default)]
    name: String,
    #[serde(default)]
    options: Option<Spanned<RawOptions>>,
    #[serde(default)]
    requirements: Vec<RawAgent>,
    #[serde(default)]
    functions: Vec<RawAgent>,
    #[serde(default)]
    solutions: Vec<RawSolution>,
    #[serde(default)]
    relations: RawRelations,
    #[serde(default)]
    constraints: Vec<RawConstraint>,
    #[serde(default)]
    internal: RawInternal,
    #[serde(default)]
    roles: BTreeMap<Spanned<String>, Vec<String>>,
    #[serde(default)]
    organizations: BTreeMap<Spanned<String>, Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptions {
    alpha: Option<Number>,
    epsilon: Option<Number>,
    generalized: Option<bool>,
    max_sweeps: Option<usize>,
    score: Option<ScoreAggregator>,
    sweep_order: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    id: Spanned<String>,
    #[serde(default)]
    label: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolution {
    id: Spanned<String>,
    #[serde(default)]
    label: String,
    function: String,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawRelations {
    function_solution: Option<Spanned<RawBlock>>,
    requirement_function: Option<Spanned<RawBlock>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstraint {
    name: Spanned<String>,
    #[serde(default)]
    agents: Vec<RawAgent>,
    relation: Option<Spanned<RawBlock>>,
    internal: Option<Spanned<RawBlock>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawInternal {
    requirements: Option<Spanned<RawBlock>>,
    functions: Option<Spanned<RawBlock>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBlock {
    rows: Option<Vec<String>>,
    cols: Option<Vec<String>>,
    entries: Option<Vec<Vec<Spanned<Number>>>>,
    cells: Option<Vec<Spanned<RawCell>>>,
    default: Option<Number>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCell {
    row: String,
    col: String,
    value: Number,
}

/// Byte offset to 1-based line number.
struct Lines(Vec<usize>);

impl Lines {
    fn new(text: &str) -> Self {
        Lines(
            std::iter::once(0)
                .chain(text.match_indices('\n').map(|(i, _)| i + 1))
                .collect(),
        )
    }

    fn of(&self, offset: usize) -> usize {
        self.0.partition_point(|&start| start <= offset)
    }

    fn span(&self, span: Range<usize>) -> Option<usize> {
        Some(self.of(span.start))
    }
}

fn ids(v: &[String]) -> Vec<AgentId> {
    v.iter().map(|s| AgentId::new(s.as_str())).collect()
}

/// Raw relation data from a block, with range problems left in place and
/// reported per cell.
fn block_data(
    block: &Spanned<RawBlock>,
    rows: &[AgentId],
    cols: &[AgentId],
    name: &str,
    lines: &Lines,
    issues: &mut Vec<ModelIssue>,
) -> Option<(RelationData<f64>, Vec<Option<usize>>)> {
    let line = lines.span(block.span());
    let b = block.get_ref();
    let rows = b.rows.as_deref().map_or_else(|| rows.to_vec(), ids);
    let cols = b.cols.as_deref().map_or_else(|| cols.to_vec(), ids);
    let mut cell_lines = Vec::new();
    let entries = match (&b.entries, &b.cells) {
        (Some(_), Some(_)) => {
            issues.push(
                ModelIssue::error(name, "give either entries or cells, not both").at_line(line),
            );
            return None;
        }
        (Some(e), None) => {
            if b.default.is_some() {
                issues.push(ModelIssue::error(name, "default only applies to cells").at_line(line));
                return None;
            }
            e.iter()
                .map(|row| {
                    row.iter()
                        .map(|v| {
                            cell_lines.push(lines.span(v.span()));
                            v.get_ref().0
                        })
                        .collect()
                })
                .collect()
        }
        (None, cells) => {
            let fill = b.default.map_or(0.0, |n| n.0);
            let mut m = vec![vec![fill; cols.len()]; rows.len()];
            cell_lines = vec![line; rows.len() * cols.len()];
            for c in cells.iter().flatten() {
                let cl = lines.span(c.span());
                let cell = c.get_ref();
                let i = rows.iter().position(|r| r == cell.row.as_str());
                let j = cols.iter().position(|r| r == cell.col.as_str());
                match (i, j) {
                    (Some(i), Some(j)) => {
                        m[i][j] = cell.value.0;
                        cell_lines[i * cols.len() + j] = cl;
                    }
                    _ => issues.push(
                        ModelIssue::error(
                            name,
                            format!("cell ({}, {}) names an unknown agent", cell.row, cell.col),
                        )
                        .at_line(cl),
                    ),
                }
            }
            m
        }
    };
    Some((RelationData { rows, cols, entries }, cell_lines))
}

/// A declared relation: every violation is an error.
fn declared(
    block: &Spanned<RawBlock>,
    rows: &[AgentId],
    cols: &[AgentId],
    name: &str,
    lines: &Lines,
    issues: &mut Vec<ModelIssue>,
) -> Option<Relation> {
    let before = issues.len();
    let (data, cell_lines) = block_data(block, rows, cols, name, lines, issues)?;
    let block_line = lines.span(block.span());
    for v in validate_relation(&data) {
        let line = match &v {
            Violation::OutOfRange { row, col, .. } => flat_line(&data, &cell_lines, *row, *col),
            _ => None,
        }
        .or(block_line);
        issues.push(ModelIssue::error(name, v.to_string()).at_line(line));
    }
    if issues.len() > before {
        return None;
    }
    FuzzyRelation::from_data(data).ok()
}

fn flat_line(data: &RelationData<f64>, cell_lines: &[Option<usize>], row: usize, col: usize) -> Option<usize> {
    let offset: usize = data.entries.iter().take(row).map(Vec::len).sum::<usize>() + col;
    cell_lines.get(offset).copied().flatten()
}

/// An internal relation: kept as written, problems surface as warnings
/// at validation time. Only unknown cell ids are errors.
fn internal(
    block: &Spanned<RawBlock>,
    ids: &[AgentId],
    name: &str,
    lines: &Lines,
    issues: &mut Vec<ModelIssue>,
) -> Option<RelationData<f64>> {
    block_data(block, ids, ids, name, lines, issues).map(|(d, _)| d)
}

/// Parses and validates a model document.
pub fn parse_model(text: &str) -> Result<ParsedModel, ParseFailure> {
    let lines = Lines::new(text);
    let raw: RawDoc = toml::from_str(text).map_err(|e| ParseFailure {
        kind: ParseFailureKind::Syntax,
        issues: vec![ModelIssue::error("document", e.message().to_owned())
            .at_line(e.span().and_then(|s| lines.span(s)))],
    })?;
    let mut issues = Vec::new();
    let mut entity_lines: BTreeMap<String, Option<usize>> = BTreeMap::new();
    let mut model = ConfigurationModel::empty(raw.name.clone());
    let empty = raw.requirements.is_empty() && raw.functions.is_empty() && raw.solutions.is_empty();
    match &raw.format_version {
        Some(v) if *v.get_ref() != FORMAT_VERSION => {
            return Err(ParseFailure {
                kind: ParseFailureKind::Syntax,
                issues: vec![ModelIssue::error(
                    "format_version",
                    format!(
                        "unsupported format_version {} (expected {FORMAT_VERSION})",
                        v.get_ref()
                    ),
                )
                .at_line(lines.span(v.span()))],
            })
        }
        None if !empty => issues.push(ModelIssue::error("format_version", "missing format_version")),
        _ => {}
    }

    let agents = |list: &[RawAgent], lines_map: &mut BTreeMap<String, Option<usize>>| {
        list.iter()
            .map(|a| {
                lines_map
                    .entry(a.id.get_ref().clone())
                    .or_insert(lines.span(a.id.span()));
                Agent::new(a.id.get_ref().as_str(), a.label.clone())
            })
            .collect::<Vec<_>>()
    };
    model.requirements = agents(&raw.requirements, &mut entity_lines);
    model.functions = agents(&raw.functions, &mut entity_lines);
    model.solutions = raw
        .solutions
        .iter()
        .map(|s| {
            entity_lines
                .entry(s.id.get_ref().clone())
                .or_insert(lines.span(s.id.span()));
            Solution {
                id: AgentId::new(s.id.get_ref().as_str()),
                label: s.label.clone(),
                function: AgentId::new(s.function.as_str()),
            }
        })
        .collect();
    let reqs = model.requirement_ids();
    let funcs = model.function_ids();
    let sols = model.solution_ids();

    // Relations that failed to build are already reported.
    let mut reported: Vec<String> = Vec::new();
    if let Some(b) = &raw.relations.function_solution {
        let name = "relation function_solution";
        entity_lines.insert(name.into(), lines.span(b.span()));
        model.function_solution = declared(b, &funcs, &sols, name, &lines, &mut issues);
        if model.function_solution.is_none() {
            reported.push(name.into());
        }
    }
    if let Some(b) = &raw.relations.requirement_function {
        let name = "relation requirement_function";
        entity_lines.insert(name.into(), lines.span(b.span()));
        model.requirement_function = declared(b, &reqs, &funcs, name, &lines, &mut issues);
        if model.requirement_function.is_none() {
            reported.push(name.into());
        }
    }
    for c in &raw.constraints {
        let domain = c.name.get_ref().clone();
        let name = format!("constraint {domain}");
        entity_lines.insert(name.clone(), lines.span(c.name.span()));
        entity_lines.insert(format!("constraint domain {domain}"), lines.span(c.name.span()));
        let members = agents(&c.agents, &mut entity_lines);
        let member_ids: Vec<AgentId> = members.iter().map(|a| a.id.clone()).collect();
        let relation = c.relation.as_ref().and_then(|b| {
            entity_lines.insert(name.clone(), lines.span(b.span()));
            let r = declared(b, &member_ids, &sols, &name, &lines, &mut issues);
            if r.is_none() {
                reported.push(name.clone());
            }
            r
        });
        let internal_rel = c.internal.as_ref().and_then(|b| {
            let iname = format!("internal {name}");
            entity_lines.insert(iname.clone(), lines.span(b.span()));
            internal(b, &member_ids, &iname, &lines, &mut issues)
        });
        model.constraints.push(ConstraintDomain {
            name: domain,
            agents: members,
            relation,
            internal: internal_rel,
        });
    }
    model.internal = InternalRelations {
        requirements: raw.internal.requirements.as_ref().and_then(|b| {
            entity_lines.insert("internal requirements".into(), lines.span(b.span()));
            internal(b, &reqs, "internal requirements", &lines, &mut issues)
        }),
        functions: raw.internal.functions.as_ref().and_then(|b| {
            entity_lines.insert("internal functions".into(), lines.span(b.span()));
            internal(b, &funcs, "internal functions", &lines, &mut issues)
        }),
    };
    if let Some(o) = &raw.options {
        entity_lines.insert("options".into(), lines.span(o.span()));
        let r = o.get_ref();
        let d = Options::default();
        model.options = Options {
            alpha: r.alpha.map_or(d.alpha, |n| n.0),
            epsilon: r.epsilon.map_or(d.epsilon, |n| n.0),
            generalized: r.generalized.unwrap_or(d.generalized),
            max_sweeps: r.max_sweeps.unwrap_or(d.max_sweeps),
            score: r.score.unwrap_or(d.score),
            sweep_order: r.sweep_order.as_deref().map_or(d.sweep_order, ids),
        };
    }
    for (k, v) in &raw.roles {
        entity_lines.insert(format!("roles.{}", k.get_ref()), lines.span(k.span()));
        model.roles.insert(AgentId::new(k.get_ref().as_str()), v.clone());
    }
    for (k, v) in &raw.organizations {
        entity_lines.insert(format!("organizations.{}", k.get_ref()), lines.span(k.span()));
        model.organizations.insert(k.get_ref().clone(), ids(v));
    }

    let mut warnings = Vec::new();
    for issue in model.validate() {
        let entity = issue.location.entity.clone().unwrap_or_default();
        if issue.is_error() && reported.contains(&entity) && issue.message == "missing relation" {
            continue;
        }
        let line = entity_lines.get(&entity).copied().flatten();
        let issue = issue.at_line(line);
        if issue.is_error() {
            issues.push(issue);
        } else {
            warnings.push(issue);
        }
    }
    if !issues.is_empty() {
        issues.sort_by_key(|i| (i.location.line.is_none(), i.location.line));
        return Err(ParseFailure {
            kind: ParseFailureKind::Semantic,
            issues,
        });
    }
    Ok(ParsedModel { model, warnings })
}

#[derive(Serialize)]
struct OutDoc<'a> {
    format_version: i64,
    name: &'a str,
    options: OutOptions<'a>,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    requirements: &'a [Agent],
    functions: &'a [Agent],
    solutions: &'a [Solution],
    relations: OutRelations,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    constraints: Vec<OutConstraint<'a>>,
    #[serde(skip_serializing_if = "OutInternal::is_empty")]
    internal: OutInternal,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    roles: &'a BTreeMap<AgentId, Vec<String>>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    organizations: &'a BTreeMap<String, Vec<AgentId>>,
}

#[derive(Serialize)]
struct OutOptions<'a> {
    alpha: f64,
    epsilon: f64,
    generalized: bool,
    max_sweeps: usize,
    score: ScoreAggregator,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    sweep_order: &'a [AgentId],
}

#[derive(Serialize)]
struct OutRelations {
    #[serde(skip_serializing_if = "Option::is_none")]
    function_solution: Option<OutBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    requirement_function: Option<OutBlock>,
}

#[derive(Serialize)]
struct OutConstraint<'a> {
    name: &'a str,
    agents: &'a [Agent],
    #[serde(skip_serializing_if = "Option::is_none")]
    relation: Option<OutBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    internal: Option<OutBlock>,
}

#[derive(Serialize)]
struct OutInternal {
    #[serde(skip_serializing_if = "Option::is_none")]
    requirements: Option<OutBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    functions: Option<OutBlock>,
}

impl OutInternal {
    fn is_empty(&self) -> bool {
        self.requirements.is_none() && self.functions.is_none()
    }
}

#[derive(Serialize)]
struct OutBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    rows: Option<Vec<AgentId>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cols: Option<Vec<AgentId>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    default: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cells: Option<Vec<OutCell>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    entries: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize)]
struct OutCell {
    row: AgentId,
    col: AgentId,
    value: f64,
}

fn axis(given: &[AgentId], default: &[AgentId]) -> Option<Vec<AgentId>> {
    (given != default).then(|| given.to_vec())
}

/// Sparse form over whichever of 0 and 1 is more common.
fn sparse(r: &Relation, rows: &[AgentId], cols: &[AgentId]) -> OutBlock {
    let (n, m) = r.shape();
    let ones = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .filter(|&(i, j)| r.at(i, j) == 1.0)
        .count();
    let zeros = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .filter(|&(i, j)| r.at(i, j) == 0.0)
        .count();
    let fill = if ones > zeros { 1.0 } else { 0.0 };
    let mut cells = Vec::new();
    for i in 0..n {
        for j in 0..m {
            let v = r.at(i, j);
            if v != fill {
                cells.push(OutCell {
                    row: r.rows()[i].clone(),
                    col: r.cols()[j].clone(),
                    value: v,
                });
            }
        }
    }
    OutBlock {
        rows: axis(r.rows(), rows),
        cols: axis(r.cols(), cols),
        default: Some(fill),
        cells: Some(cells),
        entries: None,
    }
}

fn dense(d: &RelationData<f64>) -> OutBlock {
    OutBlock {
        rows: Some(d.rows.clone()),
        cols: Some(d.cols.clone()),
        default: None,
        cells: None,
        entries: Some(d.entries.clone()),
    }
}

/// Writes a model as a document that [`parse_model`] reads back to an
/// equal model.
pub fn serialize_model(model: &ConfigurationModel) -> String {
    let reqs = model.requirement_ids();
    let funcs = model.function_ids();
    let sols = model.solution_ids();
    let doc = OutDoc {
        format_version: FORMAT_VERSION,
        name: &model.name,
        options: OutOptions {
            alpha: model.options.alpha,
            epsilon: model.options.epsilon,
            generalized: model.options.generalized,
            max_sweeps: model.options.max_sweeps,
            score: model.options.score,
            sweep_order: &model.options.sweep_order,
        },
        requirements: &model.requirements,
        functions: &model.functions,
        solutions: &model.solutions,
        relations: OutRelations {
            function_solution: model
                .function_solution
                .as_ref()
                .map(|r| sparse(r, &funcs, &sols)),
            requirement_function: model
                .requirement_function
                .as_ref()
                .map(|r| sparse(r, &reqs, &funcs)),
        },
        constraints: model
            .constraints
            .iter()
            .map(|d| {
                let ids: Vec<AgentId> = d.agents.iter().map(|a| a.id.clone()).collect();
                OutConstraint {
                    name: &d.name,
                    agents: &d.agents,
                    relation: d.relation.as_ref().map(|r| sparse(r, &ids, &sols)),
                    internal: d.internal.as_ref().map(dense),
                }
            })
            .collect(),
        internal: OutInternal {
            requirements: model.internal.requirements.as_ref().map(dense),
            functions: model.internal.functions.as_ref().map(dense),
        },
        roles: &model.roles,
        organizations: &model.organizations,
    };
    toml::to_string(&doc).expect("model documents always serialize")
}
