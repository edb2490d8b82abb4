use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SCHEMA: &str = r#"{"relations":[
  {"name":"Dealers","arity":2,"key_len":1,"numeric_positions":[]},
  {"name":"Stock","arity":3,"key_len":2,"numeric_positions":[3]}
]}"#;

const SMITH: &str = r#"SUM(y) <- Dealers("Smith" | t), Stock(p, t | y)"#;

fn stock_fixture(dir: &Path) {
    fs::write(dir.join("schema.json"), SCHEMA).unwrap();
    let db = dir.join("db");
    fs::create_dir_all(&db).unwrap();
    fs::write(db.join("Dealers.csv"), "Smith,Boston\nSmith,New York\nJames,Boston\n").unwrap();
    fs::write(
        db.join("Stock.csv"),
        "Tesla X,Boston,35\nTesla X,Boston,40\nTesla Y,Boston,35\nTesla Y,New York,95\nTesla Y,New York,96\n",
    )
    .unwrap();
}

fn keyra(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_keyra"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn classify_reports_status_route_and_tag() {
    let dir = tempfile::tempdir().unwrap();
    stock_fixture(dir.path());
    let out = keyra(dir.path(), &["--schema", "schema.json", "--json", "classify", SMITH]);
    assert!(out.status.success());
    let v = json(&out);
    let verdicts = v["verdicts"].as_array().unwrap();
    assert_eq!(verdicts[0]["target"], "glb");
    assert_eq!(verdicts[0]["status"], "Rewritable");
    assert_eq!(verdicts[0]["route"], "GeneralGlb");
    assert_eq!(verdicts[0]["citation"], "monotone-associative-glb");
    assert_eq!(verdicts[1]["status"], "Unknown");
}

#[test]
fn classify_dot_prints_graph() {
    let dir = tempfile::tempdir().unwrap();
    stock_fixture(dir.path());
    let out = keyra(dir.path(), &["--schema", "schema.json", "classify", "--dot", SMITH]);
    assert!(stdout(&out).starts_with("digraph attacks {"));
    assert!(stdout(&out).contains("n0 -> n1"));
}

#[test]
fn eval_prints_oracle_and_rewriting() {
    let dir = tempfile::tempdir().unwrap();
    stock_fixture(dir.path());
    let out = keyra(dir.path(), &["--schema", "schema.json", "--instance", "db", "eval", SMITH]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("repairs: 8"));
    assert!(text.contains("glb: 70 (rewriting: 70)"));
    assert!(text.contains("lub: 96"));
}

#[test]
fn eval_json_groups() {
    let dir = tempfile::tempdir().unwrap();
    stock_fixture(dir.path());
    let out = keyra(
        dir.path(),
        &[
            "--schema", "schema.json", "--instance", "db", "--json", "eval", "--target", "lub",
            "(n, MAX(y)) <- Dealers(n | t), Stock(p, t | y)",
        ],
    );
    let v = json(&out);
    let answers = v["answers"].as_array().unwrap();
    assert_eq!(answers.len(), 2);
    let smith = answers.iter().find(|a| a["group"][0] == "Smith").unwrap();
    assert_eq!(smith["oracle"], "96");
    assert_eq!(smith["rewriting"], "96");
}

#[test]
fn run_executes_sql_on_sqlite() {
    let dir = tempfile::tempdir().unwrap();
    stock_fixture(dir.path());
    let out = keyra(
        dir.path(),
        &["--schema", "schema.json", "--instance", "db", "run", "--dsn", "sqlite://stock.db", SMITH],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).trim(), "70");
    assert!(dir.path().join("stock.db").exists());
}

#[test]
fn run_prints_bottom_when_not_certain() {
    let dir = tempfile::tempdir().unwrap();
    stock_fixture(dir.path());
    let q = r#"SUM(y) <- Dealers("Smith" | t), Stock("Tesla X", t | y)"#;
    let out = keyra(dir.path(), &["--schema", "schema.json", "--instance", "db", "run", q]);
    assert_eq!(stdout(&out).trim(), "⊥");
}

#[test]
fn rewrite_sql_and_logic() {
    let dir = tempfile::tempdir().unwrap();
    stock_fixture(dir.path());
    let sql = stdout(&keyra(dir.path(), &["--schema", "schema.json", "rewrite", "--sql", SMITH]));
    assert!(sql.contains("CREATE TABLE \"Stock\""));
    assert!(sql.contains("NOT EXISTS"));
    let logic = stdout(&keyra(dir.path(), &["--schema", "schema.json", "rewrite", "--show-logic", SMITH]));
    assert!(logic.contains("guard :="));
    assert!(logic.contains("glb :="));
}

#[test]
fn rewrite_refuses_sum_lub() {
    let dir = tempfile::tempdir().unwrap();
    stock_fixture(dir.path());
    let out = keyra(dir.path(), &["--schema", "schema.json", "rewrite", "--target", "lub", SMITH]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("keyra classify"));
}

#[test]
fn check_random_and_fixed_instances() {
    let dir = tempfile::tempdir().unwrap();
    stock_fixture(dir.path());
    let out = keyra(
        dir.path(),
        &["--schema", "schema.json", "--seed", "3", "check", "--instances", "30", "--sql", SMITH],
    );
    assert!(out.status.success());
    assert!(stdout(&out).contains("30/30 match"));

    let out = keyra(
        dir.path(),
        &["--schema", "schema.json", "--instance", "db", "--json", "check", SMITH],
    );
    let v = json(&out);
    assert_eq!(v["total"], 1);
    assert_eq!(v["records"][0]["oracle"], "70");
    assert_eq!(v["records"][0]["rewriting"], "70");
    assert!(!dir.path().join("keyra-failures").exists());
}

#[test]
fn check_refuses_non_rewritable_target() {
    let dir = tempfile::tempdir().unwrap();
    stock_fixture(dir.path());
    let out = keyra(dir.path(), &["--schema", "schema.json", "check", "--target", "lub", SMITH]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_matching_gadget_round_trips_through_eval() {
    let dir = tempfile::tempdir().unwrap();
    let out = keyra(
        dir.path(),
        &["gen", "2dm", "--pairs", "a1:b1,a2:b2", "--out", "g"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let g = dir.path().join("g");
    let query = fs::read_to_string(g.join("query.txt")).unwrap();
    assert_eq!(query.trim(), stdout(&out).trim());
    let out = keyra(
        &g,
        &["--schema", "schema.json", "--instance", ".", "eval", "--target", "glb", query.trim()],
    );
    assert!(stdout(&out).contains("glb: 1/3"), "{}", stdout(&out));
}

#[test]
fn gen_cut_gadget_default_penalty() {
    let dir = tempfile::tempdir().unwrap();
    let out = keyra(
        dir.path(),
        &["--json", "gen", "maxcut", "--vertices", "u,v", "--edges", "u-v", "--out", "g"],
    );
    let v = json(&out);
    assert_eq!(v["facts"], 15);
    let t = fs::read_to_string(dir.path().join("g").join("T.csv")).unwrap();
    assert!(t.contains("u,u,4"));
}

#[test]
fn negative_numbers_need_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    stock_fixture(dir.path());
    fs::write(dir.path().join("db").join("Stock.csv"), "Tesla X,Boston,-1\n").unwrap();
    let args = ["--schema", "schema.json", "--instance", "db", "eval", SMITH];
    assert_eq!(keyra(dir.path(), &args).status.code(), Some(2));
    let mut with_flag = vec!["--allow-negative"];
    with_flag.extend(args);
    assert!(keyra(dir.path(), &with_flag).status.success());
}
