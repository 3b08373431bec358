//! Category-directed SQL corruption for negative examples.

use std::collections::BTreeSet;
use std::ops::ControlFlow;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sqlparser::ast::{
    visit_expressions, visit_expressions_mut, visit_relations, visit_relations_mut, Expr, Ident, ObjectName,
    ObjectNamePart, Query, Select, VisitMut, VisitorMut,
};

use crate::sqlgen::{parse_single_query, validate_sql};
use crate::tables::SchemaSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    WrongColumn,
    WrongAggregate,
    DroppedWhere,
    WrongTable,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 4] = [Self::WrongColumn, Self::WrongAggregate, Self::DroppedWhere, Self::WrongTable];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::WrongColumn => "wrong_column",
            Self::WrongAggregate => "wrong_aggregate",
            Self::DroppedWhere => "dropped_where",
            Self::WrongTable => "wrong_table",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

/// Applies `category` to `sql`; `None` when the statement offers nothing to corrupt.
pub fn corrupt<R: Rng>(sql: &str, category: ErrorCategory, schema: &SchemaSource, rng: &mut R) -> Option<String> {
    let mut q = parse_single_query(sql).ok()?;
    let applied = match category {
        ErrorCategory::WrongColumn => wrong_column(&mut q, sql, schema, rng),
        ErrorCategory::WrongAggregate => wrong_aggregate(&mut q, rng),
        ErrorCategory::DroppedWhere => dropped_where(&mut q, rng),
        ErrorCategory::WrongTable => wrong_table(&mut q, schema, rng),
    };
    let out = q.to_string();
    (applied && out != sql).then_some(out)
}

fn ident_name(e: &Expr) -> Option<&Ident> {
    match e {
        Expr::Identifier(id) => Some(id),
        Expr::CompoundIdentifier(parts) => parts.last(),
        _ => None,
    }
}

fn ident_name_mut(e: &mut Expr) -> Option<&mut Ident> {
    match e {
        Expr::Identifier(id) => Some(id),
        Expr::CompoundIdentifier(parts) => parts.last_mut(),
        _ => None,
    }
}

fn wrong_column<R: Rng>(q: &mut Query, sql: &str, schema: &SchemaSource, rng: &mut R) -> bool {
    let used = validate_sql(sql, schema).tables_used;
    let columns: BTreeSet<String> = schema
        .tables
        .iter()
        .filter(|t| used.contains(&t.name.to_lowercase()))
        .flat_map(|t| t.columns.iter().map(|c| c.name.clone()))
        .collect();
    let is_col = |id: &Ident| columns.iter().any(|c| c.eq_ignore_ascii_case(&id.value));
    let mut count = 0usize;
    let _ = visit_expressions(&*q, |e| {
        if ident_name(e).is_some_and(is_col) {
            count += 1;
        }
        ControlFlow::<()>::Continue(())
    });
    if count == 0 {
        return false;
    }
    let target = rng.random_range(0..count);
    let mut seen = 0usize;
    let mut changed = false;
    let _ = visit_expressions_mut(q, |e| {
        if let Some(id) = ident_name_mut(e) {
            if is_col(id) {
                if seen == target {
                    let others: Vec<&String> = columns.iter().filter(|c| !c.eq_ignore_ascii_case(&id.value)).collect();
                    if !others.is_empty() {
                        *id = Ident::new(others[rng.random_range(0..others.len())].clone());
                        changed = true;
                    }
                }
                seen += 1;
            }
        }
        ControlFlow::<()>::Continue(())
    });
    changed
}

fn swap_aggregate(name: &str) -> Option<&'static str> {
    match name.to_ascii_uppercase().as_str() {
        "SUM" => Some("AVG"),
        "AVG" => Some("SUM"),
        "MIN" => Some("MAX"),
        "MAX" => Some("MIN"),
        "COUNT" => Some("SUM"),
        _ => None,
    }
}

fn aggregate_of(e: &Expr) -> Option<&'static str> {
    match e {
        Expr::Function(f) => f.name.0.last().and_then(|p| p.as_ident()).and_then(|i| swap_aggregate(&i.value)),
        _ => None,
    }
}

fn wrong_aggregate<R: Rng>(q: &mut Query, rng: &mut R) -> bool {
    let mut count = 0usize;
    let _ = visit_expressions(&*q, |e| {
        count += usize::from(aggregate_of(e).is_some());
        ControlFlow::<()>::Continue(())
    });
    if count == 0 {
        return false;
    }
    let target = rng.random_range(0..count);
    let mut seen = 0usize;
    let _ = visit_expressions_mut(q, |e| {
        if let Some(swap) = aggregate_of(e) {
            if seen == target {
                if let Expr::Function(f) = e {
                    f.name = ObjectName(vec![ObjectNamePart::Identifier(Ident::new(swap))]);
                }
            }
            seen += 1;
        }
        ControlFlow::<()>::Continue(())
    });
    true
}

struct WhereDropper {
    target: usize,
    seen: usize,
}

impl VisitorMut for WhereDropper {
    type Break = ();

    fn pre_visit_select(&mut self, select: &mut Select) -> ControlFlow<()> {
        if select.selection.is_some() {
            if self.seen == self.target {
                select.selection = None;
                return ControlFlow::Break(());
            }
            self.seen += 1;
        }
        ControlFlow::Continue(())
    }
}

fn dropped_where<R: Rng>(q: &mut Query, rng: &mut R) -> bool {
    let mut probe = WhereDropper { target: usize::MAX, seen: 0 };
    let _ = q.visit(&mut probe);
    if probe.seen == 0 {
        return false;
    }
    let mut dropper = WhereDropper { target: rng.random_range(0..probe.seen), seen: 0 };
    q.visit(&mut dropper).is_break()
}

fn wrong_table<R: Rng>(q: &mut Query, schema: &SchemaSource, rng: &mut R) -> bool {
    let known =
        |n: &ObjectName| n.0.last().and_then(|p| p.as_ident()).is_some_and(|i| schema.table(&i.value).is_some());
    let mut count = 0usize;
    let _ = visit_relations(&*q, |n| {
        count += usize::from(known(n));
        ControlFlow::<()>::Continue(())
    });
    if count == 0 {
        return false;
    }
    let target = rng.random_range(0..count);
    let mut seen = 0usize;
    let mut changed = false;
    let _ = visit_relations_mut(q, |n| {
        if known(n) {
            if seen == target {
                let current = n.to_string();
                let others: Vec<&str> = schema
                    .tables
                    .iter()
                    .map(|t| t.name.as_str())
                    .filter(|t| !t.eq_ignore_ascii_case(&current))
                    .collect();
                if !others.is_empty() {
                    *n = ObjectName(vec![ObjectNamePart::Identifier(Ident::new(
                        others[rng.random_range(0..others.len())],
                    ))]);
                    changed = true;
                }
            }
            seen += 1;
        }
        ControlFlow::<()>::Continue(())
    });
    changed
}
