//! Static SQL checks against a schema, in the embedded engine's dialect.
//!
//! Column resolution is scope-aware: each SELECT sees its own FROM bindings,
//! then those of enclosing SELECTs. Bindings to CTEs or derived tables have
//! no known column list, so unqualified names that reach such a scope are
//! accepted.

use std::collections::{HashMap, HashSet};
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{
    Expr, Ident, ObjectName, Query, Select, SelectItem, Statement, TableFactor, TableWithJoins, Visit, Visitor,
};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;

use crate::tables::SchemaSource;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SqlCheck {
    pub violations: Vec<String>,
    /// Schema tables referenced in FROM clauses, lowercased, first-seen order.
    pub tables_used: Vec<String>,
}

impl SqlCheck {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn parse_single_query(sql: &str) -> Result<Box<Query>, String> {
    let statements = Parser::parse_sql(&SQLiteDialect {}, sql).map_err(|e| format!("parse error: {e}"))?;
    match <[Statement; 1]>::try_from(statements) {
        Ok([Statement::Query(q)]) => Ok(q),
        Ok(_) => Err("statement is not a SELECT query".to_string()),
        Err(v) => Err(format!("expected exactly one statement, found {}", v.len())),
    }
}

pub fn validate_sql(sql: &str, schema: &SchemaSource) -> SqlCheck {
    let query = match parse_single_query(sql) {
        Ok(q) => q,
        Err(e) => return SqlCheck { violations: vec![e], tables_used: Vec::new() },
    };
    let columns: HashMap<String, HashSet<String>> = schema
        .tables
        .iter()
        .map(|t| (t.name.to_lowercase(), t.columns.iter().map(|c| c.name.to_lowercase()).collect()))
        .collect();
    let mut r = Resolver { schema: &columns, frames: Vec::new(), scopes: Vec::new(), check: SqlCheck::default() };
    let _ = query.visit(&mut r);
    let mut seen = HashSet::new();
    r.check.violations.retain(|v| seen.insert(v.clone()));
    r.check
}

#[derive(Debug, Clone)]
enum Binding {
    Table(String),
    Opaque,
}

#[derive(Debug, Clone, Default)]
struct Scope {
    bindings: Vec<(String, Binding)>,
    aliases: HashSet<String>,
}

impl Scope {
    fn has_opaque(&self) -> bool {
        self.bindings.iter().any(|(_, b)| matches!(b, Binding::Opaque))
    }
}

struct Frame {
    ctes: HashSet<String>,
    scope_base: usize,
    last_select: Option<Scope>,
}

struct Resolver<'a> {
    schema: &'a HashMap<String, HashSet<String>>,
    frames: Vec<Frame>,
    scopes: Vec<Scope>,
    check: SqlCheck,
}

fn norm(id: &Ident) -> String {
    id.value.to_lowercase()
}

fn last_part(name: &ObjectName) -> String {
    name.0.last().and_then(|p| p.as_ident()).map(norm).unwrap_or_default()
}

impl Resolver<'_> {
    fn is_cte(&self, name: &str) -> bool {
        self.frames.iter().any(|f| f.ctes.contains(name))
    }

    fn bind_factor(&mut self, factor: &TableFactor, scope: &mut Scope) {
        match factor {
            TableFactor::Table { name, alias, args, .. } => {
                let table = last_part(name);
                let key = alias.as_ref().map_or(table.clone(), |a| norm(&a.name));
                if args.is_some() || self.is_cte(&table) {
                    scope.bindings.push((key, Binding::Opaque));
                } else if self.schema.contains_key(&table) {
                    if !self.check.tables_used.contains(&table) {
                        self.check.tables_used.push(table.clone());
                    }
                    scope.bindings.push((key, Binding::Table(table)));
                } else {
                    self.check.violations.push(format!("unknown table {}", name));
                    scope.bindings.push((key, Binding::Opaque));
                }
            }
            TableFactor::NestedJoin { table_with_joins, alias } => {
                self.bind_joins(table_with_joins, scope);
                if let Some(a) = alias {
                    scope.bindings.push((norm(&a.name), Binding::Opaque));
                }
            }
            TableFactor::Derived { alias, .. } => {
                let key = alias.as_ref().map(|a| norm(&a.name)).unwrap_or_default();
                scope.bindings.push((key, Binding::Opaque));
            }
            other => {
                let key = match other {
                    TableFactor::TableFunction { alias, .. } | TableFactor::Function { alias, .. } => {
                        alias.as_ref().map(|a| norm(&a.name)).unwrap_or_default()
                    }
                    _ => String::new(),
                };
                scope.bindings.push((key, Binding::Opaque));
            }
        }
    }

    fn bind_joins(&mut self, twj: &TableWithJoins, scope: &mut Scope) {
        self.bind_factor(&twj.relation, scope);
        for j in &twj.joins {
            self.bind_factor(&j.relation, scope);
        }
    }

    /// Scopes visible to the expression being visited, innermost first.
    fn visible(&self) -> Vec<&Scope> {
        let mut out: Vec<&Scope> = Vec::new();
        if let Some(f) = self.frames.last() {
            if self.scopes.len() <= f.scope_base {
                out.extend(f.last_select.as_ref());
            }
        }
        out.extend(self.scopes.iter().rev());
        out
    }

    fn resolve_bare(&self, col: &str) -> bool {
        self.visible().into_iter().any(|s| {
            s.aliases.contains(col)
                || s.has_opaque()
                || s.bindings.iter().any(|(_, b)| matches!(b, Binding::Table(t) if self.schema[t].contains(col)))
        })
    }

    fn resolve_qualified(&self, qualifier: &str, col: &str) -> Result<(), String> {
        for s in self.visible() {
            if let Some((_, b)) = s.bindings.iter().find(|(k, _)| k == qualifier) {
                return match b {
                    Binding::Opaque => Ok(()),
                    Binding::Table(t) if self.schema[t].contains(col) => Ok(()),
                    Binding::Table(_) => Err(format!("unknown column {qualifier}.{col}")),
                };
            }
        }
        Err(format!("unknown table or alias {qualifier}"))
    }
}

impl Visitor for Resolver<'_> {
    type Break = ();

    fn pre_visit_query(&mut self, query: &Query) -> ControlFlow<()> {
        let ctes =
            query.with.as_ref().map(|w| w.cte_tables.iter().map(|c| norm(&c.alias.name)).collect()).unwrap_or_default();
        self.frames.push(Frame { ctes, scope_base: self.scopes.len(), last_select: None });
        ControlFlow::Continue(())
    }

    fn post_visit_query(&mut self, _query: &Query) -> ControlFlow<()> {
        self.frames.pop();
        ControlFlow::Continue(())
    }

    fn pre_visit_select(&mut self, select: &Select) -> ControlFlow<()> {
        let mut scope = Scope::default();
        for twj in &select.from {
            self.bind_joins(twj, &mut scope);
        }
        for item in &select.projection {
            if let SelectItem::ExprWithAlias { alias, .. } = item {
                scope.aliases.insert(norm(alias));
            }
        }
        self.scopes.push(scope);
        ControlFlow::Continue(())
    }

    fn post_visit_select(&mut self, _select: &Select) -> ControlFlow<()> {
        let scope = self.scopes.pop();
        if let Some(f) = self.frames.last_mut() {
            f.last_select = scope;
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_expr(&mut self, expr: &Expr) -> ControlFlow<()> {
        match expr {
            Expr::Identifier(id) => {
                let col = norm(id);
                // SQLite reads an unresolvable double-quoted identifier as a string literal
                if !self.resolve_bare(&col) && id.quote_style != Some('"') {
                    self.check.violations.push(format!("unknown column {}", id.value));
                }
            }
            Expr::CompoundIdentifier(parts) if parts.len() >= 2 => {
                let col = norm(&parts[parts.len() - 1]);
                let qualifier = norm(&parts[parts.len() - 2]);
                if let Err(v) = self.resolve_qualified(&qualifier, &col) {
                    self.check.violations.push(v);
                }
            }
            _ => {}
        }
        ControlFlow::Continue(())
    }
}
