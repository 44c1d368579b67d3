//! Membership degrees and dense fuzzy relations between agent sets.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::id::AgentId;
use crate::scalar::Scalar;

/// A membership degree in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct FuzzyValue<T>(T);

impl<T: Scalar> FuzzyValue<T> {
    pub fn new(value: T) -> Result<Self, RelationError> {
        if value.in_unit_interval() {
            Ok(FuzzyValue(value))
        } else {
            Err(RelationError::OutOfRange(value.to_f64().unwrap_or(f64::NAN)))
        }
    }

    pub fn zero() -> Self {
        FuzzyValue(T::zero())
    }

    pub fn one() -> Self {
        FuzzyValue(T::one())
    }

    pub fn get(self) -> T {
        self.0
    }

    pub fn complement(self) -> Self {
        FuzzyValue(T::one() - self.0)
    }
}

impl<'de, T> Deserialize<'de> for FuzzyValue<T>
where
    T: Scalar + Deserialize<'de>,
{
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = T::deserialize(d)?;
        FuzzyValue::new(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RelationError {
    #[error("membership degree {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("relation is malformed: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("cannot compose: columns {left:?} do not match rows {right:?}")]
    CompositionMismatch {
        left: Vec<AgentId>,
        right: Vec<AgentId>,
    },
    #[error("unknown row id {0}")]
    UnknownRow(AgentId),
    #[error("unknown column id {0}")]
    UnknownColumn(AgentId),
    #[error("member set is empty")]
    EmptyMembers,
}

fn join_violations(vs: &[Violation]) -> String {
    vs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// One broken invariant found by [`validate_relation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    OutOfRange {
        row: usize,
        col: usize,
        row_id: Option<AgentId>,
        col_id: Option<AgentId>,
        value: f64,
    },
    /// The entry grid does not have `rows × cols` shape. `row` is `None`
    /// when the number of rows is wrong.
    Dimension {
        row: Option<usize>,
        expected: usize,
        found: usize,
    },
    DuplicateRow { id: AgentId },
    DuplicateColumn { id: AgentId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutOfRange {
                row,
                col,
                row_id,
                col_id,
                value,
            } => {
                let r = row_id.as_ref().map_or_else(|| row.to_string(), ToString::to_string);
                let c = col_id.as_ref().map_or_else(|| col.to_string(), ToString::to_string);
                write!(f, "entry ({r}, {c}) = {value} is outside [0, 1]")
            }
            Violation::Dimension {
                row: None,
                expected,
                found,
            } => write!(f, "expected {expected} rows, found {found}"),
            Violation::Dimension {
                row: Some(r),
                expected,
                found,
            } => write!(f, "row {r} has {found} entries, expected {expected}"),
            Violation::DuplicateRow { id } => write!(f, "duplicate row id {id}"),
            Violation::DuplicateColumn { id } => write!(f, "duplicate column id {id}"),
        }
    }
}

/// Unchecked relation contents, as read from a document or built by hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationData<T> {
    pub rows: Vec<AgentId>,
    pub cols: Vec<AgentId>,
    pub entries: Vec<Vec<T>>,
}

/// Lists every invariant a [`FuzzyRelation`] would violate. Never fails;
/// an empty report means the data is a valid relation.
pub fn validate_relation<T: Scalar>(data: &RelationData<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for id in &data.rows {
        if !seen.insert(id) {
            out.push(Violation::DuplicateRow { id: id.clone() });
        }
    }
    seen.clear();
    for id in &data.cols {
        if !seen.insert(id) {
            out.push(Violation::DuplicateColumn { id: id.clone() });
        }
    }
    if data.entries.len() != data.rows.len() {
        out.push(Violation::Dimension {
            row: None,
            expected: data.rows.len(),
            found: data.entries.len(),
        });
    }
    for (i, row) in data.entries.iter().enumerate() {
        if row.len() != data.cols.len() {
            out.push(Violation::Dimension {
                row: Some(i),
                expected: data.cols.len(),
                found: row.len(),
            });
        }
        for (j, v) in row.iter().enumerate() {
            if !v.in_unit_interval() {
                out.push(Violation::OutOfRange {
                    row: i,
                    col: j,
                    row_id: data.rows.get(i).cloned(),
                    col_id: data.cols.get(j).cloned(),
                    value: v.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
    }
    out
}

/// A dense, validated matrix of membership degrees between two ordered
/// agent sets. Immutable: edits return a new relation.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RelationData<T>", into = "RelationData<T>")]
#[serde(bound(
    serialize = "T: Scalar + Serialize",
    deserialize = "T: Scalar + Deserialize<'de>"
))]
pub struct FuzzyRelation<T> {
    rows: Vec<AgentId>,
    cols: Vec<AgentId>,
    entries: Vec<T>,
    row_index: HashMap<AgentId, usize>,
    col_index: HashMap<AgentId, usize>,
}

impl<T: fmt::Debug> fmt::Debug for FuzzyRelation<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FuzzyRelation")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("entries", &self.entries)
            .finish()
    }
}

impl<T: Scalar> TryFrom<RelationData<T>> for FuzzyRelation<T> {
    type Error = RelationError;

    fn try_from(data: RelationData<T>) -> Result<Self, RelationError> {
        FuzzyRelation::from_data(data)
    }
}

impl<T: Scalar> From<FuzzyRelation<T>> for RelationData<T> {
    fn from(r: FuzzyRelation<T>) -> Self {
        r.to_data()
    }
}

impl<T: Scalar> FuzzyRelation<T> {
    pub fn from_data(data: RelationData<T>) -> Result<Self, RelationError> {
        let violations = validate_relation(&data);
        if !violations.is_empty() {
            return Err(RelationError::Invalid(violations));
        }
        let entries = data.entries.into_iter().flatten().collect();
        Ok(Self::assemble(data.rows, data.cols, entries))
    }

    pub fn new(
        rows: Vec<AgentId>,
        cols: Vec<AgentId>,
        entries: Vec<Vec<T>>,
    ) -> Result<Self, RelationError> {
        Self::from_data(RelationData {
            rows,
            cols,
            entries,
        })
    }

    /// Builds a relation from a row-major closure.
    pub fn from_fn(
        rows: Vec<AgentId>,
        cols: Vec<AgentId>,
        mut f: impl FnMut(usize, usize) -> T,
    ) -> Result<Self, RelationError> {
        let entries = (0..rows.len())
            .map(|i| (0..cols.len()).map(|j| f(i, j)).collect())
            .collect();
        Self::new(rows, cols, entries)
    }

    /// All-zero relation.
    pub fn zeros(rows: Vec<AgentId>, cols: Vec<AgentId>) -> Result<Self, RelationError> {
        Self::from_fn(rows, cols, |_, _| T::zero())
    }

    /// 1 on the diagonal, 0 elsewhere, over a single id set.
    pub fn identity(ids: Vec<AgentId>) -> Result<Self, RelationError> {
        Self::from_fn(ids.clone(), ids, |i, j| if i == j { T::one() } else { T::zero() })
    }

    fn assemble(rows: Vec<AgentId>, cols: Vec<AgentId>, entries: Vec<T>) -> Self {
        let row_index = rows.iter().cloned().enumerate().map(|(i, id)| (id, i)).collect();
        let col_index = cols.iter().cloned().enumerate().map(|(i, id)| (id, i)).collect();
        FuzzyRelation {
            rows,
            cols,
            entries,
            row_index,
            col_index,
        }
    }

    pub fn rows(&self) -> &[AgentId] {
        &self.rows
    }

    pub fn cols(&self) -> &[AgentId] {
        &self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    pub fn row_index(&self, id: &AgentId) -> Option<usize> {
        self.row_index.get(id).copied()
    }

    pub fn col_index(&self, id: &AgentId) -> Option<usize> {
        self.col_index.get(id).copied()
    }

    /// Entry by position. Panics when out of bounds.
    pub fn at(&self, i: usize, j: usize) -> T {
        self.entries[i * self.cols.len() + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.cols.len();
        &self.entries[i * w..(i + 1) * w]
    }

    pub fn row_of(&self, id: &AgentId) -> Option<&[T]> {
        self.row_index(id).map(|i| self.row(i))
    }

    pub fn get(&self, row: &AgentId, col: &AgentId) -> Option<T> {
        Some(self.at(self.row_index(row)?, self.col_index(col)?))
    }

    pub fn transpose(&self) -> Self {
        let (n, m) = self.shape();
        let mut entries = Vec::with_capacity(n * m);
        for j in 0..m {
            for i in 0..n {
                entries.push(self.at(i, j));
            }
        }
        Self::assemble(self.cols.clone(), self.rows.clone(), entries)
    }

    /// Copy with one cell replaced.
    pub fn with_entry(&self, row: &AgentId, col: &AgentId, value: T) -> Result<Self, RelationError> {
        let v = FuzzyValue::new(value)?;
        let i = self
            .row_index(row)
            .ok_or_else(|| RelationError::UnknownRow(row.clone()))?;
        let j = self
            .col_index(col)
            .ok_or_else(|| RelationError::UnknownColumn(col.clone()))?;
        let mut out = self.clone();
        out.entries[i * self.cols.len() + j] = v.get();
        Ok(out)
    }

    pub fn to_data(&self) -> RelationData<T> {
        RelationData {
            rows: self.rows.clone(),
            cols: self.cols.clone(),
            entries: (0..self.rows.len()).map(|i| self.row(i).to_vec()).collect(),
        }
    }

    pub fn max_entry(&self) -> Option<T> {
        self.entries.iter().copied().reduce(T::max_of)
    }
}

/// Zadeh max-min composition: `out[a][c] = max_b min(r[a][b], s[b][c])`.
///
/// `r`'s column ids must equal `s`'s row ids, in the same order.
pub fn compose_max_min<T: Scalar>(
    r: &FuzzyRelation<T>,
    s: &FuzzyRelation<T>,
) -> Result<FuzzyRelation<T>, RelationError> {
    if r.cols != s.rows {
        return Err(RelationError::CompositionMismatch {
            left: r.cols.clone(),
            right: s.rows.clone(),
        });
    }
    let inner = r.cols.len();
    let mut entries = Vec::with_capacity(r.rows.len() * s.cols.len());
    for a in 0..r.rows.len() {
        for c in 0..s.cols.len() {
            let v = (0..inner)
                .map(|b| r.at(a, b).min_of(s.at(b, c)))
                .fold(T::zero(), T::max_of);
            entries.push(v);
        }
    }
    Ok(FuzzyRelation::assemble(r.rows.clone(), s.cols.clone(), entries))
}

/// Column-wise arithmetic mean of the selected rows. Duplicate ids in
/// `members` count once.
pub fn average_rows<T: Scalar>(
    relation: &FuzzyRelation<T>,
    members: &[AgentId],
) -> Result<Vec<T>, RelationError> {
    let set: BTreeSet<&AgentId> = members.iter().collect();
    if set.is_empty() {
        return Err(RelationError::EmptyMembers);
    }
    let mut sums = vec![T::zero(); relation.cols.len()];
    for id in &set {
        let row = relation
            .row_of(id)
            .ok_or_else(|| RelationError::UnknownRow((*id).clone()))?;
        for (acc, v) in sums.iter_mut().zip(row) {
            *acc = *acc + *v;
        }
    }
    let n = T::from_count(set.len());
    Ok(sums
        .into_iter()
        // mean of values in [0,1] can only leave the interval by rounding
        .map(|s| (s / n).min_of(T::one()).max_of(T::zero()))
        .collect())
}
