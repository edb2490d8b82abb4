#![allow(dead_code)]

use std::sync::Arc;

use keyra_core::query::{parse_query, AggQuery, Var};
use keyra_core::logic::Valuation;
use keyra_core::schema::{DatabaseInstance, NumericDomain, Schema, Signature};
use keyra_core::value::Value;

pub fn stock_schema() -> Arc<Schema> {
    Arc::new(
        Schema::new([
            Signature::new("Dealers", 2, 1, &[]).unwrap(),
            Signature::new("Stock", 3, 2, &[3]).unwrap(),
        ])
        .unwrap(),
    )
}

/// Dealers and their stock, with two conflicting towns for Smith and two
/// conflicting quantities for each Boston/New York product.
pub fn stock() -> DatabaseInstance {
    let mut db = DatabaseInstance::new(stock_schema(), NumericDomain::NonNegative);
    for (n, t) in [("Smith", "Boston"), ("Smith", "New York"), ("James", "Boston")] {
        db.insert_text("Dealers", &[n, t]).unwrap();
    }
    for (p, t, q) in [
        ("Tesla X", "Boston", "35"),
        ("Tesla X", "Boston", "40"),
        ("Tesla Y", "Boston", "35"),
        ("Tesla Y", "New York", "95"),
        ("Tesla Y", "New York", "96"),
    ] {
        db.insert_text("Stock", &[p, t, q]).unwrap();
    }
    db
}

pub fn stock_query(text: &str) -> AggQuery {
    parse_query(text, &stock_schema()).unwrap()
}

pub const SMITH_SUM: &str = r#"SUM(y) <- Dealers("Smith" | t), Stock(p, t | y)"#;
pub const JAMES_35: &str = r#"COUNT(*) <- Dealers("James" | t), Stock(p, t | 35)"#;

pub fn running_schema() -> Arc<Schema> {
    Arc::new(
        Schema::new([
            Signature::new("R", 2, 1, &[]).unwrap(),
            Signature::new("S", 4, 2, &[4]).unwrap(),
        ])
        .unwrap(),
    )
}

pub fn running_instance() -> DatabaseInstance {
    let mut db = DatabaseInstance::new(running_schema(), NumericDomain::NonNegative);
    for (x, y) in [("a1", "b1"), ("a1", "b2"), ("a2", "b2"), ("a2", "b3"), ("a3", "b4")] {
        db.insert_text("R", &[x, y]).unwrap();
    }
    for (y, z, d, r) in [
        ("b1", "c1", "d", "1"),
        ("b1", "c1", "d", "2"),
        ("b1", "c2", "d", "3"),
        ("b2", "c3", "d", "5"),
        ("b2", "c3", "d", "6"),
        ("b3", "c4", "d", "5"),
        ("b4", "c5", "d", "7"),
        ("b4", "c5", "e", "8"),
    ] {
        db.insert_text("S", &[y, z, d, r]).unwrap();
    }
    db
}

pub const RUNNING: &str = r#"SUM(r) <- R(x | y), S(y, z | "d", r)"#;

pub fn running_query() -> AggQuery {
    parse_query(RUNNING, &running_schema()).unwrap()
}

pub fn valuation(pairs: &[(&str, &str)]) -> Valuation {
    pairs
        .iter()
        .map(|(k, v)| {
            let value = match v.parse::<i64>() {
                Ok(n) => Value::int(n),
                Err(_) => Value::str(v),
            };
            (Var::new(k), value)
        })
        .collect()
}

/// The eight ∀embeddings of the running query, as (x, y, z, r).
pub const RUNNING_FORALL: [(&str, &str, &str, &str); 8] = [
    ("a1", "b1", "c1", "1"),
    ("a1", "b1", "c1", "2"),
    ("a1", "b1", "c2", "3"),
    ("a1", "b2", "c3", "5"),
    ("a1", "b2", "c3", "6"),
    ("a2", "b2", "c3", "5"),
    ("a2", "b2", "c3", "6"),
    ("a2", "b3", "c4", "5"),
];

pub fn running_forall() -> Vec<Valuation> {
    let mut rows: Vec<Valuation> = RUNNING_FORALL
        .iter()
        .map(|&(x, y, z, r)| valuation(&[("x", x), ("y", y), ("z", z), ("r", r)]))
        .collect();
    rows.sort();
    rows
}

/// Schema with the four differential shapes.
pub fn shapes_schema() -> Arc<Schema> {
    Arc::new(
        Schema::new([
            Signature::new("A", 2, 1, &[2]).unwrap(),
            Signature::new("R", 2, 1, &[]).unwrap(),
            Signature::new("S", 4, 2, &[4]).unwrap(),
            Signature::new("F", 2, 1, &[2]).unwrap(),
            Signature::new("P", 2, 1, &[]).unwrap(),
            Signature::new("Q", 2, 1, &[]).unwrap(),
            Signature::new("T", 2, 1, &[2]).unwrap(),
        ])
        .unwrap(),
    )
}

/// `(name, body)`; the head is `AGG(r)` or `COUNT(*)`.
pub const SHAPES: [(&str, &str); 4] = [
    ("1-atom", "A(x | r)"),
    ("2-atom full join", "R(x | y), F(y | r)"),
    ("2-atom partial join", r#"R(x | y), S(y, z | "d", r)"#),
    ("3-atom chain", "P(x | y), Q(y | z), T(z | r)"),
];

pub fn shape_query(op: &str, body: &str) -> AggQuery {
    let head = if op == "COUNT" { "COUNT(*)".to_string() } else { format!("{op}(r)") };
    parse_query(&format!("{head} <- {body}"), &shapes_schema()).unwrap()
}
