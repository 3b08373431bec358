use std::cmp::Ordering;

use crate::db::{Cell, ResultTable};

/// Relative tolerance for numeric cells.
pub const FLOAT_TOLERANCE: f64 = 1e-6;

fn numeric(c: &Cell) -> Option<f64> {
    match c {
        Cell::Integer(i) => Some(*i as f64),
        Cell::Real(r) => Some(*r),
        _ => None,
    }
}

pub fn cells_equal(a: &Cell, b: &Cell) -> bool {
    match (a, b) {
        (Cell::Null, Cell::Null) => true,
        (Cell::Text(x), Cell::Text(y)) => x == y,
        _ => match (numeric(a), numeric(b)) {
            (Some(x), Some(y)) => x == y || (x - y).abs() <= FLOAT_TOLERANCE * x.abs().max(y.abs()),
            _ => false,
        },
    }
}

fn rank(c: &Cell) -> u8 {
    match c {
        Cell::Null => 0,
        Cell::Integer(_) | Cell::Real(_) => 1,
        Cell::Text(_) => 2,
    }
}

fn cell_order(a: &Cell, b: &Cell) -> Ordering {
    rank(a).cmp(&rank(b)).then_with(|| match (a, b) {
        (Cell::Text(x), Cell::Text(y)) => x.cmp(y),
        _ => match (numeric(a), numeric(b)) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            _ => Ordering::Equal,
        },
    })
}

fn row_order(a: &[Cell], b: &[Cell]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| cell_order(x, y)).find(|o| o.is_ne()).unwrap_or(a.len().cmp(&b.len()))
}

/// Row-multiset equality, positional over columns; row order matters only when `ordered`.
pub fn results_match(gold: &ResultTable, pred: &ResultTable, ordered: bool) -> bool {
    if gold.columns.len() != pred.columns.len() || gold.rows.len() != pred.rows.len() {
        return false;
    }
    let same = |g: &[&Vec<Cell>], p: &[&Vec<Cell>]| {
        g.iter().zip(p).all(|(x, y)| x.len() == y.len() && x.iter().zip(y.iter()).all(|(a, b)| cells_equal(a, b)))
    };
    let mut g: Vec<&Vec<Cell>> = gold.rows.iter().collect();
    let mut p: Vec<&Vec<Cell>> = pred.rows.iter().collect();
    if ordered {
        return same(&g, &p);
    }
    g.sort_by(|a, b| row_order(a, b));
    p.sort_by(|a, b| row_order(a, b));
    same(&g, &p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: Vec<Vec<Cell>>) -> ResultTable {
        ResultTable { columns: (0..rows.first().map_or(1, Vec::len)).map(|i| format!("c{i}")).collect(), rows }
    }

    #[test]
    fn tolerance_nulls_and_order() {
        let a = t(vec![vec![Cell::Integer(1), Cell::Null], vec![Cell::Real(2.0), Cell::Text("x".into())]]);
        let b = t(vec![vec![Cell::Real(2.000_000_1), Cell::Text("x".into())], vec![Cell::Real(1.0), Cell::Null]]);
        assert!(results_match(&a, &b, false));
        assert!(!results_match(&a, &b, true));
        let c = t(vec![vec![Cell::Integer(1), Cell::Null], vec![Cell::Real(2.1), Cell::Text("x".into())]]);
        assert!(!results_match(&a, &c, false));
        assert!(!cells_equal(&Cell::Text("1".into()), &Cell::Integer(1)));
    }

    #[test]
    fn multiplicity_counts() {
        let one = |v| vec![Cell::Integer(v)];
        assert!(!results_match(&t(vec![one(1), one(1), one(2)]), &t(vec![one(1), one(2), one(2)]), false));
        assert!(!results_match(&t(vec![one(1)]), &t(vec![one(1), one(1)]), false));
    }
}
