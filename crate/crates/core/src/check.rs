//! Differential testing of rewritings against repair enumeration.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::classify::{classify, Status};
use crate::error::{Error, Result};
use crate::logic::RangeAnswer;
use crate::oracle::{group_ranges, range_by_enumeration};
use crate::query::{AggQuery, Term};
use crate::rewrite::{rewrite, Rewriting, Target};
use crate::schema::{DatabaseInstance, Fact, NumericDomain, Schema, Signature};
use crate::sql::{emit_sql, execute, SqlScript};
use crate::value::{format_rational, Value};

#[derive(Clone, Debug)]
pub struct GenConfig {
    pub seed: u64,
    pub instances: usize,
    /// Blocks per relation, at most.
    pub max_blocks: usize,
    /// Facts per block, at most.
    pub max_block_size: usize,
    pub max_facts: usize,
    pub cap: u64,
    /// Also run the emitted SQL on an in-memory SQLite database.
    pub sql: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            instances: 200,
            max_blocks: 3,
            max_block_size: 3,
            max_facts: 12,
            cap: crate::oracle::DEFAULT_CAP,
            sql: false,
        }
    }
}

const STRINGS: [&str; 3] = ["a", "b", "c"];
const NUMBERS: [i64; 5] = [0, 1, 2, 3, 5];

/// Constants to draw from: a small pool plus the query's own constants.
struct Pool {
    strings: Vec<Value>,
    numbers: Vec<Value>,
}

impl Pool {
    fn new(q: &AggQuery, domain: NumericDomain) -> Self {
        let mut strings: BTreeSet<Value> = STRINGS.iter().map(|s| Value::str(s)).collect();
        let mut numbers: BTreeSet<Value> = NUMBERS.iter().map(|&n| Value::int(n)).collect();
        if domain == NumericDomain::Unconstrained {
            numbers.insert(Value::int(-1));
        }
        for t in q.body.iter().flat_map(|a| &a.terms) {
            if let Term::Const(v) = t {
                match v {
                    Value::Str(_) => strings.insert(v.clone()),
                    Value::Num(_) => numbers.insert(v.clone()),
                };
            }
        }
        Pool {
            strings: strings.into_iter().collect(),
            numbers: numbers.into_iter().collect(),
        }
    }

    fn draw(&self, sig: &Signature, i: usize, rng: &mut impl Rng) -> Value {
        let from = if sig.is_numeric(i) { &self.numbers } else { &self.strings };
        from.choose(rng).expect("non-empty pool").clone()
    }
}

/// A random instance over the relations of `q`: per relation 1..=B blocks of
/// 1..=S facts, at most `max_facts` facts overall.
pub fn random_instance(
    q: &AggQuery,
    schema: &Arc<Schema>,
    domain: NumericDomain,
    cfg: &GenConfig,
    rng: &mut impl Rng,
) -> Result<DatabaseInstance> {
    let pool = Pool::new(q, domain);
    let mut db = DatabaseInstance::new(schema.clone(), domain);
    let mut budget = cfg.max_facts;
    let mut atoms: Vec<&Arc<Signature>> = q.body.iter().map(|a| &a.signature).collect();
    atoms.shuffle(rng);
    for sig in atoms {
        let blocks = rng.gen_range(1..=cfg.max_blocks.max(1));
        let mut keys: BTreeSet<Vec<Value>> = BTreeSet::new();
        for _ in 0..blocks * 4 {
            if keys.len() == blocks {
                break;
            }
            keys.insert((0..sig.key_len).map(|i| pool.draw(sig, i, rng)).collect());
        }
        for key in keys {
            let size = rng.gen_range(1..=cfg.max_block_size.max(1));
            for _ in 0..size * 4 {
                if budget == 0 || db.blocks(&sig.name)?.iter().any(|b| b.key == key && b.members.len() >= size) {
                    break;
                }
                let mut tuple = key.clone();
                tuple.extend((sig.key_len..sig.arity).map(|i| pool.draw(sig, i, rng)));
                if db.insert(&sig.name, tuple)? {
                    budget -= 1;
                }
            }
        }
    }
    Ok(db)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CheckRecord {
    pub instance: usize,
    pub facts: usize,
    pub group: Vec<String>,
    pub oracle: String,
    pub rewriting: String,
    pub sql: Option<String>,
    pub matches: bool,
}

#[derive(Clone, Debug)]
pub struct Failure {
    pub instance: usize,
    pub original: DatabaseInstance,
    /// A fact-minimal instance on which the mismatch persists.
    pub shrunk: DatabaseInstance,
}

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub query: String,
    pub target: Option<Target>,
    pub records: Vec<CheckRecord>,
    pub failures: Vec<Failure>,
}

impl CheckReport {
    pub fn total(&self) -> usize {
        self.records.len()
    }

    pub fn matched(&self) -> usize {
        self.records.iter().filter(|r| r.matches).count()
    }

    pub fn mismatched(&self) -> usize {
        self.total() - self.matched()
    }

    pub fn is_success(&self) -> bool {
        self.mismatched() == 0
    }

    /// Concatenation; the merge used for parallel batches.
    pub fn merge(mut self, other: CheckReport) -> CheckReport {
        if self.query.is_empty() {
            self.query = other.query;
            self.target = other.target;
        }
        self.records.extend(other.records);
        self.failures.extend(other.failures);
        self
    }

    pub fn summary(&self) -> String {
        format!(
            "{}/{} match, {} mismatch{}",
            self.matched(),
            self.total(),
            self.mismatched(),
            if self.mismatched() == 1 { "" } else { "es" }
        )
    }
}

/// Compares one rewriting to the oracle on given instances.
pub struct Checker {
    pub query: AggQuery,
    pub target: Target,
    pub rewriting: Rewriting,
    script: Option<SqlScript>,
    cap: u64,
}

fn show(a: &RangeAnswer) -> String {
    match a {
        RangeAnswer::Value(v) => format_rational(v),
        RangeAnswer::Bottom => "⊥".into(),
    }
}

impl Checker {
    /// Refuses targets the classifier does not mark rewritable.
    pub fn new(q: &AggQuery, target: Target, domain: NumericDomain, schema: &Schema, sql: bool, cap: u64) -> Result<Self> {
        let verdict = classify(q, target, domain);
        if verdict.status != Status::Rewritable {
            return Err(Error::Unsupported(format!(
                "{} is {} for {target} [{}]: {}",
                q, verdict.status, verdict.citation, verdict.reason
            )));
        }
        let rewriting = rewrite(q, target, domain)?;
        let script = if sql { Some(emit_sql(&rewriting, schema)?) } else { None };
        Ok(Checker {
            query: q.clone(),
            target,
            rewriting,
            script,
            cap,
        })
    }

    fn pick(&self, r: &crate::oracle::Range) -> RangeAnswer {
        match self.target {
            Target::Glb => r.glb.clone(),
            Target::Lub => r.lub.clone(),
        }
    }

    /// Oracle, rewriting and (optionally) SQL answers per group.
    pub fn compare(&self, id: usize, db: &DatabaseInstance) -> Result<Vec<CheckRecord>> {
        let oracle: Vec<(Vec<Value>, RangeAnswer)> = if self.query.free_vars.is_empty() {
            vec![(Vec::new(), self.pick(&range_by_enumeration(db, &self.query, self.cap)?))]
        } else {
            group_ranges(db, &self.query, self.cap)?
                .into_iter()
                .map(|(g, r)| {
                    let a = self.pick(&r);
                    (g, a)
                })
                .collect()
        };
        let mut ours = self.rewriting.evaluate_groups(db)?;
        if !self.rewriting.is_grouped() {
            ours = vec![(Vec::new(), self.rewriting.evaluate(db)?)];
        }
        let sql = match &self.script {
            Some(s) => Some(execute("sqlite::memory:", db, s)?),
            None => None,
        };
        let groups: BTreeSet<Vec<Value>> = oracle
            .iter()
            .map(|(g, _)| g.clone())
            .chain(ours.iter().map(|(g, _)| g.clone()))
            .collect();
        let lookup = |rows: &[(Vec<Value>, RangeAnswer)], g: &Vec<Value>| {
            rows.iter()
                .find(|(h, _)| h == g)
                .map(|(_, a)| a.clone())
                .unwrap_or(RangeAnswer::Bottom)
        };
        Ok(groups
            .into_iter()
            .map(|g| {
                let o = lookup(&oracle, &g);
                let r = lookup(&ours, &g);
                let s = sql.as_ref().map(|rows| lookup(rows, &g));
                let matches = o == r && s.as_ref().is_none_or(|s| *s == o);
                CheckRecord {
                    instance: id,
                    facts: db.len(),
                    group: g.iter().map(|v| v.to_string()).collect(),
                    oracle: show(&o),
                    rewriting: show(&r),
                    sql: s.as_ref().map(show),
                    matches,
                }
            })
            .collect())
    }

    fn mismatch(&self, db: &DatabaseInstance) -> bool {
        match self.compare(0, db) {
            Ok(records) => records.iter().any(|r| !r.matches),
            Err(_) => false,
        }
    }

    /// Greedily drops facts while the mismatch persists.
    pub fn shrink(&self, db: &DatabaseInstance) -> DatabaseInstance {
        let mut current = db.clone();
        loop {
            let facts: Vec<Fact> = current.facts().collect();
            let smaller = facts.iter().find_map(|f| {
                let candidate = current.without(&[f.clone()].into_iter().collect());
                self.mismatch(&candidate).then_some(candidate)
            });
            match smaller {
                Some(c) => current = c,
                None => return current,
            }
        }
    }

    /// Runs the comparison on each instance in parallel.
    pub fn run(&self, instances: &[DatabaseInstance]) -> Result<CheckReport> {
        let reports: Vec<CheckReport> = instances
            .par_iter()
            .enumerate()
            .map(|(id, db)| {
                let records = self.compare(id, db)?;
                let failures = if records.iter().any(|r| !r.matches) {
                    vec![Failure {
                        instance: id,
                        original: db.clone(),
                        shrunk: self.shrink(db),
                    }]
                } else {
                    Vec::new()
                };
                Ok(CheckReport {
                    query: String::new(),
                    target: None,
                    records,
                    failures,
                })
            })
            .collect::<Result<_>>()?;
        let mut report = reports.into_iter().fold(CheckReport::default(), CheckReport::merge);
        report.query = self.query.to_string();
        report.target = Some(self.target);
        Ok(report)
    }
}

/// The `i`-th instance of a seeded run.
pub fn seeded_instance(
    q: &AggQuery,
    schema: &Arc<Schema>,
    domain: NumericDomain,
    cfg: &GenConfig,
    i: usize,
) -> Result<DatabaseInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(i as u64);
    random_instance(q, schema, domain, cfg, &mut rng)
}

/// Generates `cfg.instances` random instances and compares.
pub fn run_check(
    q: &AggQuery,
    schema: &Arc<Schema>,
    target: Target,
    domain: NumericDomain,
    cfg: &GenConfig,
) -> Result<CheckReport> {
    let checker = Checker::new(q, target, domain, schema, cfg.sql, cfg.cap)?;
    let instances: Vec<DatabaseInstance> = (0..cfg.instances)
        .into_par_iter()
        .map(|i| seeded_instance(q, schema, domain, cfg, i))
        .collect::<Result<_>>()?;
    checker.run(&instances)
}
