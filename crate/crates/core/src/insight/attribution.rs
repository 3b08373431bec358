//! Dimension attribution by exact delta decomposition.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::db::ResultTable;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub value: String,
    pub before: f64,
    pub after: f64,
    pub delta: f64,
    pub contribution_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub dimension: String,
    pub metric: String,
    /// Sorted by `|delta|` descending, then by value.
    pub contributions: Vec<Contribution>,
    pub total_before: f64,
    pub total_after: f64,
}

impl AttributionResult {
    pub fn total_delta(&self) -> f64 {
        self.total_after - self.total_before
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn column(table: &ResultTable, name: &str, side: &str) -> Result<usize> {
    table.column_index(name).ok_or_else(|| Error::Validation(format!("{side} table has no column `{name}`")))
}

/// Per-value metric values of one side, keyed by dimension value.
fn grouped(table: &ResultTable, dimension: &str, metric: &str, side: &str) -> Result<BTreeMap<String, Vec<f64>>> {
    let (d, m) = (column(table, dimension, side)?, column(table, metric, side)?);
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in &table.rows {
        let v = row[m].as_f64().ok_or_else(|| {
            Error::Validation(format!("{side} table: metric `{metric}` holds a non-numeric value {:?}", row[m]))
        })?;
        out.entry(row[d].key()).or_default().push(v);
    }
    Ok(out)
}

/// Decomposes the change in `metric` between two tables over the values of
/// `dimension`. Values missing on one side count as 0.
pub fn attribute(
    before: &ResultTable,
    after: &ResultTable,
    dimension: &str,
    metric: &str,
) -> Result<AttributionResult> {
    let b = grouped(before, dimension, metric, "before")?;
    let a = grouped(after, dimension, metric, "after")?;
    let mut keys: Vec<&String> = b.keys().chain(a.keys()).collect();
    keys.sort();
    keys.dedup();
    let empty = Vec::new();
    let mut rows: Vec<(String, f64, f64, f64)> = keys
        .into_iter()
        .map(|k| {
            let bv = b.get(k).unwrap_or(&empty);
            let av = a.get(k).unwrap_or(&empty);
            let delta = compensated_sum(av.iter().copied().chain(bv.iter().map(|x| -x)));
            (k.clone(), compensated_sum(bv.iter().copied()), compensated_sum(av.iter().copied()), delta)
        })
        .collect();
    rows.sort_by(|x, y| y.3.abs().total_cmp(&x.3.abs()).then_with(|| x.0.cmp(&y.0)));

    let total_before = compensated_sum(b.values().flatten().copied());
    let total_after = compensated_sum(a.values().flatten().copied());
    let total_delta = total_after - total_before;
    if total_delta == 0.0 {
        return Err(Error::UndefinedShare { deltas: rows.into_iter().map(|r| (r.0, r.3)).collect() });
    }
    Ok(AttributionResult {
        dimension: dimension.to_string(),
        metric: metric.to_string(),
        contributions: rows
            .into_iter()
            .map(|(value, before, after, delta)| Contribution {
                value,
                before,
                after,
                delta,
                contribution_share: delta / total_delta,
            })
            .collect(),
        total_before,
        total_after,
    })
}

/// Splits one table into before/after tables on `period_column`.
pub fn split_periods(
    table: &ResultTable,
    period_column: &str,
    before: &str,
    after: &str,
) -> Result<(ResultTable, ResultTable)> {
    let p = column(table, period_column, "input")?;
    let pick = |want: &str| ResultTable {
        columns: table.columns.clone(),
        rows: table.rows.iter().filter(|r| r[p].key() == want).cloned().collect(),
    };
    Ok((pick(before), pick(after)))
}
