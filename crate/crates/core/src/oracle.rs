//! Ground truth by brute force.
//!
//! Nothing here uses the rewriter or the formula evaluator: embeddings are
//! found by a direct backtracking join and certainty is decided by visiting
//! every repair.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use num_bigint::BigUint;
use rayon::prelude::*;

use crate::aggregate::{AggOp, AggValue};
use crate::attack::build_attack_graph;
use crate::error::{Error, Result};
use crate::logic::{RangeAnswer, Valuation};
use crate::query::{parse_query, AggQuery, Atom, PrimTerm, Term, Var, VarSet};
use crate::schema::{DatabaseInstance, NumericDomain, Schema, Signature};
use crate::value::{Rational, Value};

/// Default cap on the number of repairs visited.
pub const DEFAULT_CAP: u64 = 1 << 20;

/// Ceiling on Bron–Kerbosch calls during MCS enumeration.
pub const MCS_CEILING: u64 = 1 << 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Range {
    pub glb: RangeAnswer,
    pub lub: RangeAnswer,
}

impl Range {
    fn bottom() -> Self {
        Range {
            glb: RangeAnswer::Bottom,
            lub: RangeAnswer::Bottom,
        }
    }
}

fn match_term(t: &Term, value: &Value, theta: &mut Valuation, bound: &mut Vec<Var>) -> bool {
    match t {
        Term::Const(c) => c == value,
        Term::Param(v) => theta.get(v) == Some(value),
        Term::Var(v) => match theta.get(v) {
            Some(w) => w == value,
            None => {
                theta.insert(v.clone(), value.clone());
                bound.push(v.clone());
                true
            }
        },
    }
}

fn extend(db: &DatabaseInstance, atoms: &[Atom], theta: &mut Valuation, out: &mut Vec<Valuation>) {
    let Some((first, rest)) = atoms.split_first() else {
        out.push(theta.clone());
        return;
    };
    let tuples = db.tuples(first.relation()).expect("query relations are in the schema");
    for tuple in tuples {
        let mut bound = Vec::new();
        let ok = first
            .terms
            .iter()
            .zip(tuple)
            .all(|(t, v)| match_term(t, v, theta, &mut bound));
        if ok {
            extend(db, rest, theta, out);
        }
        for v in bound {
            theta.remove(&v);
        }
    }
}

/// Every valuation of the body's variables extending `fixed` that maps the
/// atoms into `db`, sorted.
pub fn extensions(db: &DatabaseInstance, atoms: &[Atom], fixed: &Valuation) -> Vec<Valuation> {
    let mut out = Vec::new();
    extend(db, atoms, &mut fixed.clone(), &mut out);
    out.sort();
    out.dedup();
    out
}

/// Whether some extension of `fixed` maps the atoms into `db`.
pub fn satisfies(db: &DatabaseInstance, atoms: &[Atom], fixed: &Valuation) -> bool {
    fn any(db: &DatabaseInstance, atoms: &[Atom], theta: &mut Valuation) -> bool {
        let Some((first, rest)) = atoms.split_first() else {
            return true;
        };
        for tuple in db.tuples(first.relation()).expect("query relations are in the schema") {
            let mut bound = Vec::new();
            let ok = first
                .terms
                .iter()
                .zip(tuple)
                .all(|(t, v)| match_term(t, v, theta, &mut bound));
            let found = ok && any(db, rest, theta);
            for v in bound {
                theta.remove(&v);
            }
            if found {
                return true;
            }
        }
        false
    }
    any(db, atoms, &mut fixed.clone())
}

/// The embeddings of `body` in `db`.
pub fn embeddings(db: &DatabaseInstance, body: &[Atom]) -> Vec<Valuation> {
    extensions(db, body, &Valuation::new())
}

fn value_of(term: &PrimTerm, theta: &Valuation) -> Result<Rational> {
    match term {
        PrimTerm::Const(c) => Ok(c.clone()),
        PrimTerm::Var(v) => match theta.get(v) {
            Some(Value::Num(r)) => Ok(r.clone()),
            Some(other) => Err(Error::Eval(format!("`{v}` is bound to non-number {other}"))),
            None => Err(Error::Unbound(v.clone())),
        },
    }
}

/// The multiset aggregated by `q` on `db`: one value per embedding.
pub fn aggregated_values(db: &DatabaseInstance, q: &AggQuery) -> Result<Vec<Rational>> {
    let value = q.effective_value();
    embeddings(db, &q.body)
        .iter()
        .map(|theta| value_of(&value, theta))
        .collect()
}

/// The answer of an ungrouped query on a single instance.
pub fn query_value(db: &DatabaseInstance, q: &AggQuery) -> Result<AggValue> {
    Ok(q.agg.apply(&aggregated_values(db, q)?))
}

/// Every repair of `db` as an instance.
pub fn repair_instances(db: &DatabaseInstance, cap: u64) -> Result<Vec<DatabaseInstance>> {
    let space = db.repair_space();
    let n = space.checked_count(cap)?;
    Ok((0..n)
        .into_par_iter()
        .map(|i| space.instance(&space.repair_at(i)))
        .collect())
}

/// `[glb, lub]` over all repairs, `⊥` for both when some repair has no
/// embedding. Works for every operator.
pub fn range_by_enumeration(db: &DatabaseInstance, q: &AggQuery, cap: u64) -> Result<Range> {
    if !q.free_vars.is_empty() || !q.frozen.is_empty() {
        return Err(Error::Query(
            "range_by_enumeration takes an ungrouped query; use group_ranges".into(),
        ));
    }
    let space = db.repair_space();
    let n = space.checked_count(cap)?;
    let per_repair: Vec<Option<Rational>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let r = space.instance(&space.repair_at(i));
            match query_value(&r, q)? {
                AggValue::Value(v) => Ok(Some(v)),
                AggValue::Empty(_) => Ok(None),
            }
        })
        .collect::<Result<_>>()?;
    range_of(per_repair)
}

fn range_of(values: Vec<Option<Rational>>) -> Result<Range> {
    let mut present = Vec::with_capacity(values.len());
    for v in values {
        match v {
            Some(v) => present.push(v),
            None => return Ok(Range::bottom()),
        }
    }
    let glb = present.iter().min().cloned();
    let lub = present.iter().max().cloned();
    Ok(match (glb, lub) {
        (Some(g), Some(l)) => Range {
            glb: RangeAnswer::Value(g),
            lub: RangeAnswer::Value(l),
        },
        _ => Range::bottom(),
    })
}

/// Group values with at least one embedding in `db`, sorted.
pub fn candidate_groups(db: &DatabaseInstance, q: &AggQuery) -> Vec<Vec<Value>> {
    let groups: BTreeSet<Vec<Value>> = embeddings(db, &q.body)
        .into_iter()
        .map(|theta| q.free_vars.iter().map(|v| theta[v].clone()).collect())
        .collect();
    groups.into_iter().collect()
}

/// One range per candidate group.
pub fn group_ranges(
    db: &DatabaseInstance,
    q: &AggQuery,
    cap: u64,
) -> Result<Vec<(Vec<Value>, Range)>> {
    candidate_groups(db, q)
        .into_iter()
        .map(|g| {
            let r = range_by_enumeration(db, &q.instantiate(&g)?, cap)?;
            Ok((g, r))
        })
        .collect()
}

/// Whether every repair has an extension of `fixed` for the atoms.
pub fn is_certain(repairs: &[DatabaseInstance], atoms: &[Atom], fixed: &Valuation) -> bool {
    repairs.iter().all(|r| satisfies(r, atoms, fixed))
}

fn restrict(theta: &Valuation, vars: &VarSet) -> Valuation {
    theta
        .iter()
        .filter(|(k, _)| vars.contains(*k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

/// The ∀embeddings of `body` in `db`, computed level by level from the
/// inductive definition along the default attack order.
pub fn enumerate_forall_embeddings(
    db: &DatabaseInstance,
    body: &[Atom],
    cap: u64,
) -> Result<Vec<Valuation>> {
    let order = build_attack_graph(body)
        .topological_order()
        .ok_or(Error::CyclicAttackGraph)?;
    let repairs = repair_instances(db, cap)?;
    Ok(forall_embeddings_in(db, &repairs, body, &order))
}

/// As [`enumerate_forall_embeddings`], along a caller-chosen order of the
/// atoms and with the repairs precomputed.
pub fn forall_embeddings_in(
    db: &DatabaseInstance,
    repairs: &[DatabaseInstance],
    body: &[Atom],
    order: &[usize],
) -> Vec<Valuation> {
    let atoms: Vec<Atom> = order.iter().map(|&i| body[i].clone()).collect();
    if !is_certain(repairs, &atoms, &Valuation::new()) {
        return Vec::new();
    }
    let mut level = vec![Valuation::new()];
    let mut seen: VarSet = VarSet::new();
    for (l, atom) in atoms.iter().enumerate() {
        let mut keyed = seen.clone();
        keyed.extend(atom.key_vars());
        let mut next = Vec::new();
        for theta in &level {
            for ext in extensions(db, std::slice::from_ref(atom), theta) {
                if is_certain(repairs, &atoms[l..], &restrict(&ext, &keyed)) {
                    next.push(ext);
                }
            }
        }
        next.sort();
        next.dedup();
        level = next;
        seen.extend(atom.vars());
    }
    level
}

/// Definitional check for a single valuation over all body variables.
pub fn is_forall_embedding(
    db: &DatabaseInstance,
    body: &[Atom],
    theta: &Valuation,
    cap: u64,
) -> Result<bool> {
    Ok(enumerate_forall_embeddings(db, body, cap)?.contains(theta))
}

/// Whether two embeddings agree on every atom whose key they agree on.
pub fn compatible(a: &Valuation, b: &Valuation, body: &[Atom]) -> bool {
    body.iter().all(|atom| {
        let key = atom.key_vars();
        let same_key = key.iter().all(|v| a.get(v) == b.get(v));
        !same_key || atom.vars().iter().all(|v| a.get(v) == b.get(v))
    })
}

pub fn is_consistent_set(m: &[Valuation], body: &[Atom]) -> bool {
    m.iter()
        .enumerate()
        .all(|(i, a)| m[i + 1..].iter().all(|b| compatible(a, b, body)))
}

/// The maximal consistent subsets of `m`: maximal cliques of the
/// compatibility graph, each sorted, in sorted order.
pub fn enumerate_mcs(m: &[Valuation], body: &[Atom]) -> Result<Vec<Vec<Valuation>>> {
    let n = m.len();
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| i != j && compatible(&m[i], &m[j], body)).collect())
        .collect();
    let mut out: BTreeSet<Vec<Valuation>> = BTreeSet::new();
    let mut calls = 0u64;

    #[allow(clippy::too_many_arguments)]
    fn bron_kerbosch(
        adj: &[Vec<bool>],
        m: &[Valuation],
        r: &mut Vec<usize>,
        p: Vec<usize>,
        x: Vec<usize>,
        out: &mut BTreeSet<Vec<Valuation>>,
        calls: &mut u64,
    ) -> Result<()> {
        *calls += 1;
        if *calls > MCS_CEILING {
            return Err(Error::CapExceeded {
                count: BigUint::from(*calls),
                cap: MCS_CEILING,
            });
        }
        if p.is_empty() && x.is_empty() {
            let mut set: Vec<Valuation> = r.iter().map(|&i| m[i].clone()).collect();
            set.sort();
            out.insert(set);
            return Ok(());
        }
        let pivot = p
            .iter()
            .chain(&x)
            .copied()
            .max_by_key(|&u| p.iter().filter(|&&v| adj[u][v]).count())
            .expect("p or x non-empty");
        let candidates: Vec<usize> = p.iter().copied().filter(|&v| !adj[pivot][v]).collect();
        let mut p = p;
        let mut x = x;
        for v in candidates {
            r.push(v);
            let np = p.iter().copied().filter(|&w| adj[v][w]).collect();
            let nx = x.iter().copied().filter(|&w| adj[v][w]).collect();
            bron_kerbosch(adj, m, r, np, nx, out, calls)?;
            r.pop();
            p.retain(|&w| w != v);
            x.push(v);
        }
        Ok(())
    }

    bron_kerbosch(&adj, m, &mut Vec::new(), (0..n).collect(), Vec::new(), &mut out, &mut calls)?;
    Ok(out.into_iter().collect())
}

/// `min` over MCSs of the aggregate, `⊥` when the body is not certain.
pub fn glb_by_mcs(db: &DatabaseInstance, q: &AggQuery, cap: u64) -> Result<RangeAnswer> {
    let m = enumerate_forall_embeddings(db, &q.body, cap)?;
    if m.is_empty() {
        return Ok(RangeAnswer::Bottom);
    }
    let value = q.effective_value();
    let mut best: Option<Rational> = None;
    for n in enumerate_mcs(&m, &q.body)? {
        let values: Vec<Rational> = n.iter().map(|t| value_of(&value, t)).collect::<Result<_>>()?;
        if let AggValue::Value(v) = q.agg.apply(&values) {
            best = Some(match best {
                Some(b) if b <= v => b,
                _ => v,
            });
        }
    }
    Ok(best.map_or(RangeAnswer::Bottom, RangeAnswer::Value))
}

/// Every embedding in `repair` is a ∀embedding in `db`.
pub fn is_superfrugal(
    repair: &DatabaseInstance,
    forall_embeddings: &[Valuation],
    body: &[Atom],
) -> bool {
    embeddings(repair, body)
        .iter()
        .all(|e| forall_embeddings.binary_search(e).is_ok())
}

/// No repair has a strictly smaller set of embeddings.
pub fn is_n_minimal(repair: &DatabaseInstance, repairs: &[DatabaseInstance], body: &[Atom]) -> bool {
    let mine: BTreeSet<Valuation> = embeddings(repair, body).into_iter().collect();
    repairs.iter().all(|s| {
        let theirs: BTreeSet<Valuation> = embeddings(s, body).into_iter().collect();
        !(theirs.is_subset(&mine) && theirs.len() < mine.len())
    })
}

/// A hardness gadget: an instance together with the query it targets.
#[derive(Clone, Debug)]
pub struct Gadget {
    pub instance: DatabaseInstance,
    pub query: AggQuery,
}

fn domain_for(values: &[&Rational]) -> NumericDomain {
    if values.iter().any(|v| **v < Rational::from_integer(0.into())) {
        NumericDomain::Unconstrained
    } else {
        NumericDomain::NonNegative
    }
}

/// The matching gadget over `R(x | y, r), S1(y | x), S2(y | x)`.
///
/// Each pair `(a, b)` yields `R(a, b, t)`, `S1(b, a)`, `S2(b, a)`; the
/// extra constants `bot_A`, `bot_B` contribute the single `s` row.
pub fn gen_2dm_instance(
    pairs: &[(String, String)],
    agg: AggOp,
    s: &Rational,
    t: &Rational,
) -> Result<Gadget> {
    let schema = Arc::new(Schema::new([
        Signature::new("R", 3, 1, &[3])?,
        Signature::new("S1", 2, 1, &[])?,
        Signature::new("S2", 2, 1, &[])?,
    ])?);
    let mut db = DatabaseInstance::new(schema.clone(), domain_for(&[s, t]));
    let mut add = |a: &str, b: &str, r: &Rational| -> Result<()> {
        db.insert("R", vec![Value::str(a), Value::str(b), Value::Num(r.clone())])?;
        db.insert("S1", vec![Value::str(b), Value::str(a)])?;
        db.insert("S2", vec![Value::str(b), Value::str(a)])?;
        Ok(())
    };
    for (a, b) in pairs {
        add(a, b, t)?;
    }
    add("bot_A", "bot_B", s)?;
    let query = parse_query(
        &format!("{}(r) <- R(x | y, r), S1(y | x), S2(y | x)", agg_head(agg)),
        &schema,
    )?;
    Ok(Gadget { instance: db, query })
}

/// The cut gadget over `S1(x | "c1"), S2(y | "c2"), T(x, y | r)`.
///
/// Each vertex chooses between `c1`/`d` in `S1` and `c2`/`d` in `S2`; each
/// edge contributes `t` in both directions, each vertex a penalty row
/// `T(v, v, m)`, and `bot` the single `s` row.
pub fn gen_maxcut_instance(
    vertices: &[String],
    edges: &[(String, String)],
    agg: AggOp,
    s: &Rational,
    t: &Rational,
    m: &Rational,
) -> Result<Gadget> {
    let schema = Arc::new(Schema::new([
        Signature::new("S1", 2, 1, &[])?,
        Signature::new("S2", 2, 1, &[])?,
        Signature::new("T", 3, 2, &[3])?,
    ])?);
    let mut db = DatabaseInstance::new(schema.clone(), domain_for(&[s, t, m]));
    let all: BTreeSet<&String> = vertices
        .iter()
        .chain(edges.iter().flat_map(|(u, v)| [u, v]))
        .collect();
    let text = |v: &str| Value::str(v);
    for v in &all {
        db.insert("S1", vec![text(v), text("c1")])?;
        db.insert("S1", vec![text(v), text("d")])?;
        db.insert("S2", vec![text(v), text("c2")])?;
        db.insert("S2", vec![text(v), text("d")])?;
        db.insert("T", vec![text(v), text(v), Value::Num(m.clone())])?;
    }
    for (u, v) in edges {
        if u == v {
            return Err(Error::Instance(format!("self-loop on `{u}`")));
        }
        db.insert("T", vec![text(u), text(v), Value::Num(t.clone())])?;
        db.insert("T", vec![text(v), text(u), Value::Num(t.clone())])?;
    }
    db.insert("S1", vec![text("bot"), text("c1")])?;
    db.insert("S2", vec![text("bot"), text("c2")])?;
    db.insert("T", vec![text("bot"), text("bot"), Value::Num(s.clone())])?;
    let query = parse_query(
        &format!(
            "{}(r) <- S1(x | \"c1\"), S2(y | \"c2\"), T(x, y | r)",
            agg_head(agg)
        ),
        &schema,
    )?;
    Ok(Gadget { instance: db, query })
}

fn agg_head(agg: AggOp) -> String {
    match agg {
        AggOp::Count => "COUNT".into(),
        other => other.name().into(),
    }
}

/// Per-repair answers keyed by repair index, for reporting.
pub fn per_repair_values(
    db: &DatabaseInstance,
    q: &AggQuery,
    cap: u64,
) -> Result<BTreeMap<u64, AggValue>> {
    let space = db.repair_space();
    let n = space.checked_count(cap)?;
    (0..n)
        .into_par_iter()
        .map(|i| Ok((i, query_value(&space.instance(&space.repair_at(i)), q)?)))
        .collect()
}
