mod common;

use keyra_core::check::{run_check, GenConfig};
use keyra_core::classify::{classify, Status};
use keyra_core::oracle::{group_ranges, DEFAULT_CAP};
use keyra_core::query::parse_query;
use keyra_core::rewrite::{rewrite, Target};
use keyra_core::schema::{load_instance, load_schema, write_instance, write_schema};
use keyra_core::value::int;
use keyra_core::{Error, NumericDomain, RangeAnswer};

use common::*;

#[test]
fn grouped_stock_bounds_match_oracle() {
    let db = stock();
    let q = stock_query("(n, SUM(y)) <- Dealers(n | t), Stock(p, t | y)");
    let rw = rewrite(&q, Target::Glb, NumericDomain::NonNegative).unwrap();
    let ours = rw.evaluate_groups(&db).unwrap();
    let oracle: Vec<_> = group_ranges(&db, &q, DEFAULT_CAP)
        .unwrap()
        .into_iter()
        .map(|(g, r)| (g, r.glb))
        .collect();
    assert_eq!(ours, oracle);
}

#[test]
fn max_lub_of_stock_is_96() {
    let db = stock();
    let q = stock_query(r#"MAX(y) <- Stock(p, t | y)"#);
    let rw = rewrite(&q, Target::Lub, NumericDomain::NonNegative).unwrap();
    assert_eq!(rw.evaluate(&db).unwrap(), RangeAnswer::Value(int(96)));
    let q = stock_query(r#"MIN(y) <- Stock(p, t | y)"#);
    let rw = rewrite(&q, Target::Glb, NumericDomain::NonNegative).unwrap();
    assert_eq!(rw.evaluate(&db).unwrap(), RangeAnswer::Value(int(35)));
}

#[test]
fn uncertain_body_gives_bottom() {
    let db = stock();
    let q = stock_query(r#"SUM(y) <- Dealers("Smith" | t), Stock("Tesla X", t | y)"#);
    let rw = rewrite(&q, Target::Glb, NumericDomain::NonNegative).unwrap();
    assert_eq!(rw.evaluate(&db).unwrap(), RangeAnswer::Bottom);
}

#[test]
fn rewrite_refuses_what_classify_rejects() {
    let schema = running_schema();
    let q = parse_query(r#"AVG(r) <- R(x | y), S(y, z | "d", r)"#, &schema).unwrap();
    assert_ne!(classify(&q, Target::Glb, NumericDomain::NonNegative).status, Status::Rewritable);
    assert!(matches!(
        rewrite(&q, Target::Glb, NumericDomain::NonNegative),
        Err(Error::Unsupported(_))
    ));
}

#[test]
fn seeded_check_is_reproducible_and_clean() {
    let schema = running_schema();
    let q = running_query();
    let cfg = GenConfig {
        seed: 11,
        instances: 40,
        sql: true,
        ..GenConfig::default()
    };
    let a = run_check(&q, &schema, Target::Glb, NumericDomain::NonNegative, &cfg).unwrap();
    let b = run_check(&q, &schema, Target::Glb, NumericDomain::NonNegative, &cfg).unwrap();
    assert!(a.is_success(), "{}", a.summary());
    assert_eq!(a.records, b.records);
}

#[test]
fn instance_round_trips_through_csv() {
    let db = running_instance();
    let dir = tempfile::tempdir().unwrap();
    let schema_path = dir.path().join("schema.json");
    write_schema(db.schema(), &schema_path).unwrap();
    write_instance(&db, dir.path()).unwrap();
    let schema = std::sync::Arc::new(load_schema(&schema_path).unwrap());
    let back = load_instance(schema, dir.path(), NumericDomain::NonNegative).unwrap();
    assert_eq!(back, db);
}

#[test]
fn running_instance_block_structure() {
    let db = running_instance();
    let sizes = |rel: &str| -> Vec<usize> {
        db.blocks(rel).unwrap().iter().map(|b| b.members.len()).collect()
    };
    assert_eq!(sizes("R"), vec![2, 2, 1]);
    assert_eq!(sizes("S"), vec![2, 1, 2, 1, 2]);
    assert_eq!(db.repair_count(), 32u32.into());
    assert_eq!(keyra_core::oracle::repair_instances(&db, DEFAULT_CAP).unwrap().len(), 32);
}
