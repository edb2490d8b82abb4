//! First-order rewritings with aggregates for range answers.
//!
//! Everything is built along a topological sort `F1, ..., Fn` of the attack
//! graph. For level `j`, `x̄j` are the key variables of `Fj` not seen in
//! earlier atoms, `ȳj` the new non-key variables, and `ūj` all variables of
//! `F1..Fj`.
//!
//! * `ω(B)` over a sorted suffix holds iff every repair satisfies the suffix
//!   with the variables in `B` fixed.
//! * `Ψ(ū)` holds iff the valuation is a ∀embedding; it conjoins `Fj` and
//!   `ω([Fj..Fn], ūj-1 ∪ x̄j)` for every level.
//! * The lower bound for a monotone associative `F` nests, from the last
//!   level up: `Tn = r` and
//!   `Tℓ = F over (x̄ℓ+1, v) of v [Ψ↓ ∧ v = MIN over (ȳℓ+1, w) of w [Ψ↓ ∧ w = Tℓ+1]]`,
//!   where `Ψ↓` is `Ψ` with the not-yet-bound variables projected away.
//!   The upper bound for `MIN` is the same term with `F = MIN` and the inner
//!   `MIN` replaced by `MAX`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregate::{AggOp, AggValue};
use crate::attack::build_attack_graph;
use crate::error::{Error, Result};
use crate::logic::{Evaluator, Formula, NumTerm, RangeAnswer, Valuation};
use crate::query::{freeze_free_vars, vars_in_order, AggQuery, Atom, PrimTerm, Term, Var, VarSet};
use crate::schema::{DatabaseInstance, NumericDomain};
use crate::value::{Rational, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Glb,
    Lub,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Glb => "glb",
            Target::Lub => "lub",
        })
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glb" => Ok(Target::Glb),
            "lub" => Ok(Target::Lub),
            other => Err(Error::Query(format!("unknown target `{other}` (glb or lub)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Route {
    /// Nested aggregate over ∀embeddings for monotone associative operators.
    GeneralGlb,
    /// Plain `MIN` over all embeddings, guarded.
    MinGlb,
    /// Plain `MAX` over all embeddings, guarded.
    MaxLubPlain,
    /// The nested construction with `MIN` outside and `MAX` inside.
    MinLubReversed,
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// The rewriting route for an operator and target, when one exists
/// regardless of the body's shape (beyond acyclicity).
pub fn route_for(agg: AggOp, target: Target, domain: NumericDomain) -> Option<Route> {
    match (target, agg) {
        (Target::Glb, AggOp::Min) => Some(Route::MinGlb),
        (Target::Glb, AggOp::Max | AggOp::Count) => Some(Route::GeneralGlb),
        (Target::Glb, AggOp::Sum) if agg.is_monotone(domain) => Some(Route::GeneralGlb),
        (Target::Lub, AggOp::Min) => Some(Route::MinLubReversed),
        (Target::Lub, AggOp::Max) => Some(Route::MaxLubPlain),
        _ => None,
    }
}

#[derive(Default)]
struct Fresh {
    next: usize,
}

impl Fresh {
    fn var(&mut self, prefix: &str) -> Var {
        self.next += 1;
        Var::new(&format!("_{prefix}{}", self.next))
    }
}

/// The levels of a sorted body.
struct Levels {
    atoms: Vec<Atom>,
    /// `x̄j` per level.
    new_key: Vec<Vec<Var>>,
    /// `ȳj` per level.
    new_nonkey: Vec<Vec<Var>>,
    /// `ūj` for `j = 0..=n`.
    prefix: Vec<Vec<Var>>,
}

impl Levels {
    fn new(atoms: Vec<Atom>) -> Self {
        let mut seen: VarSet = VarSet::new();
        let mut new_key = Vec::new();
        let mut new_nonkey = Vec::new();
        let mut prefix = vec![Vec::new()];
        for a in &atoms {
            let xs: Vec<Var> = ordered_vars(a.key_terms())
                .into_iter()
                .filter(|v| !seen.contains(v))
                .collect();
            let ys: Vec<Var> = ordered_vars(a.nonkey_terms())
                .into_iter()
                .filter(|v| !seen.contains(v) && !xs.contains(v))
                .collect();
            seen.extend(xs.iter().cloned());
            seen.extend(ys.iter().cloned());
            let mut u = prefix.last().expect("u0").clone();
            u.extend(xs.iter().cloned());
            u.extend(ys.iter().cloned());
            new_key.push(xs);
            new_nonkey.push(ys);
            prefix.push(u);
        }
        Levels {
            atoms,
            new_key,
            new_nonkey,
            prefix,
        }
    }

    fn all_vars(&self) -> &[Var] {
        self.prefix.last().expect("u0")
    }
}

fn ordered_vars(terms: &[Term]) -> Vec<Var> {
    let mut out: Vec<Var> = Vec::new();
    for t in terms {
        if let Term::Var(v) = t {
            if !out.contains(v) {
                out.push(v.clone());
            }
        }
    }
    out
}

fn minus(all: &[Var], bound: &[Var]) -> Vec<Var> {
    all.iter().filter(|v| !bound.contains(v)).cloned().collect()
}

/// `ω` for atoms already in attack order, with the variables of `bound`
/// fixed by the context.
fn rewrite_sorted(atoms: &[Atom], bound: &VarSet, fresh: &mut Fresh) -> Formula {
    let Some((first, rest)) = atoms.split_first() else {
        return Formula::True;
    };
    let quantified: Vec<Var> = ordered_vars(first.key_terms())
        .into_iter()
        .filter(|v| !bound.contains(v))
        .collect();
    let mut inner_bound = bound.clone();
    inner_bound.extend(quantified.iter().cloned());

    let key: Vec<Term> = first.key_terms().to_vec();
    let nonkey = first.nonkey_terms();
    let mut pattern: Vec<Term> = Vec::with_capacity(nonkey.len());
    let mut universal: Vec<Var> = Vec::new();
    let mut equalities: Vec<Formula> = Vec::new();
    let mut existence: Vec<Var> = Vec::new();
    for t in nonkey {
        existence.push(fresh.var("e"));
        match t {
            Term::Var(v) if !inner_bound.contains(v) && !universal.contains(v) => {
                universal.push(v.clone());
                pattern.push(t.clone());
            }
            _ => {
                let z = fresh.var("f");
                universal.push(z.clone());
                pattern.push(Term::Var(z.clone()));
                equalities.push(Formula::Eq(Term::Var(z), t.clone()));
            }
        }
    }
    let body = if nonkey.is_empty() {
        Formula::and(vec![
            Formula::Atom(first.clone()),
            rewrite_sorted(rest, &first_vars_added(&inner_bound, first), fresh),
        ])
    } else {
        let some_fact = Formula::exists(
            existence.clone(),
            Formula::Atom(Atom {
                signature: first.signature.clone(),
                terms: key
                    .iter()
                    .cloned()
                    .chain(existence.iter().cloned().map(Term::Var))
                    .collect(),
            }),
        );
        let every_fact = Formula::forall(
            universal,
            Formula::implies(
                Formula::Atom(Atom {
                    signature: first.signature.clone(),
                    terms: key.iter().cloned().chain(pattern).collect(),
                }),
                Formula::and(
                    equalities
                        .into_iter()
                        .chain(std::iter::once(rewrite_sorted(
                            rest,
                            &first_vars_added(&inner_bound, first),
                            fresh,
                        )))
                        .collect(),
                ),
            ),
        );
        Formula::and(vec![some_fact, every_fact])
    };
    Formula::exists(quantified, body)
}

fn first_vars_added(bound: &VarSet, atom: &Atom) -> VarSet {
    let mut out = bound.clone();
    out.extend(atom.vars());
    out
}

/// Atoms of `body` in the default attack order, or the cyclic-graph error.
pub fn attack_order(body: &[Atom]) -> Result<Vec<usize>> {
    build_attack_graph(body)
        .topological_order()
        .ok_or(Error::CyclicAttackGraph)
}

fn freeze_atoms(body: &[Atom], frozen: &VarSet) -> Vec<Atom> {
    body.iter()
        .map(|a| {
            a.map_terms(|t| match t {
                Term::Var(v) if frozen.contains(v) => Term::Param(v.clone()),
                other => other.clone(),
            })
        })
        .collect()
}

/// `ω(frozen)`: true under a valuation of `frozen` iff every repair
/// satisfies the body with those variables fixed.
pub fn consistent_fo_rewriting(body: &[Atom], frozen: &VarSet) -> Result<Formula> {
    let atoms = freeze_atoms(body, frozen);
    let order = attack_order(&atoms)?;
    let sorted: Vec<Atom> = order.iter().map(|&i| atoms[i].clone()).collect();
    Ok(rewrite_sorted(&sorted, &VarSet::new(), &mut Fresh::default()))
}

/// `Ψ(ū)` along the default attack order.
pub fn forall_embedding_formula(body: &[Atom]) -> Result<Formula> {
    let order = attack_order(body)?;
    forall_embedding_formula_with_order(body, &order)
}

/// `Ψ(ū)` along `order`, which must be a topological sort of the attack
/// graph.
pub fn forall_embedding_formula_with_order(body: &[Atom], order: &[usize]) -> Result<Formula> {
    let graph = build_attack_graph(body);
    check_order(&graph.edges, body.len(), order)?;
    let levels = Levels::new(order.iter().map(|&i| body[i].clone()).collect());
    Ok(psi(&levels, &mut Fresh::default()))
}

fn check_order(edges: &BTreeSet<(usize, usize)>, n: usize, order: &[usize]) -> Result<()> {
    let mut position = vec![usize::MAX; n];
    for (p, &i) in order.iter().enumerate() {
        if i >= n || position[i] != usize::MAX {
            return Err(Error::Query(format!("{order:?} is not an ordering of {n} atoms")));
        }
        position[i] = p;
    }
    if order.len() != n {
        return Err(Error::Query(format!("{order:?} is not an ordering of {n} atoms")));
    }
    if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| position[a] > position[b]) {
        return Err(Error::Query(format!(
            "atom {a} attacks atom {b} but comes after it"
        )));
    }
    Ok(())
}

fn psi(levels: &Levels, fresh: &mut Fresh) -> Formula {
    let n = levels.atoms.len();
    let mut parts = Vec::with_capacity(2 * n);
    for j in 0..n {
        let mut bound: VarSet = levels.prefix[j].iter().cloned().collect();
        bound.extend(levels.new_key[j].iter().cloned());
        parts.push(Formula::Atom(levels.atoms[j].clone()));
        parts.push(rewrite_sorted(&levels.atoms[j..], &bound, fresh));
    }
    Formula::define("ψ", levels.all_vars().to_vec(), Formula::and(parts))
}

/// The nested lower-bound term with `outer` over key extensions and `inner`
/// over non-key completions.
fn nested_term(
    levels: &Levels,
    psi: &Formula,
    value: NumTerm,
    outer: AggOp,
    inner: AggOp,
    fresh: &mut Fresh,
) -> NumTerm {
    let all = levels.all_vars();
    let mut term = value;
    for l in (0..levels.atoms.len()).rev() {
        let w = fresh.var("w");
        let v = fresh.var("v");
        let completed = &levels.prefix[l + 1];
        let mut keyed = levels.prefix[l].clone();
        keyed.extend(levels.new_key[l].iter().cloned());

        let mut inner_bound = levels.new_nonkey[l].clone();
        inner_bound.push(w.clone());
        let inner_term = NumTerm::agg(
            inner,
            inner_bound,
            NumTerm::Var(w.clone()),
            Formula::and(vec![
                Formula::exists(minus(all, completed), psi.clone()),
                Formula::NumEq(w, term),
            ]),
        );
        let mut outer_bound = levels.new_key[l].clone();
        outer_bound.push(v.clone());
        term = NumTerm::agg(
            outer,
            outer_bound,
            NumTerm::Var(v.clone()),
            Formula::and(vec![
                Formula::exists(minus(all, &keyed), psi.clone()),
                Formula::NumEq(v, inner_term),
            ]),
        );
    }
    term
}

/// A guard and a numeric term whose value, when the guard holds, is the
/// requested bound.
#[derive(Clone, Debug)]
pub struct Rewriting {
    /// The query with its group variables frozen.
    pub query: AggQuery,
    pub target: Target,
    pub route: Route,
    pub order: Vec<Atom>,
    pub guard: Formula,
    pub term: NumTerm,
    /// The ∀embedding formula, for the nested routes.
    pub psi: Option<Formula>,
    pub group_params: Vec<Var>,
    /// The original body, used to enumerate candidate groups.
    group_body: Vec<Atom>,
}

/// Builds the rewriting for `target`, refusing operators without one.
pub fn rewrite(q: &AggQuery, target: Target, domain: NumericDomain) -> Result<Rewriting> {
    let route = route_for(q.agg, target, domain).ok_or_else(|| {
        Error::Unsupported(format!(
            "no first-order {target} rewriting is known for {}{}; run `keyra classify` for the verdict",
            q.agg,
            if q.agg == AggOp::Sum && domain == NumericDomain::Unconstrained {
                " over possibly negative numbers"
            } else {
                ""
            }
        ))
    })?;
    build(q, target, route)
}

/// Lower bound for monotone associative operators (`SUM`, `COUNT`, `MAX`).
pub fn glb_rewriting(q: &AggQuery, domain: NumericDomain) -> Result<Rewriting> {
    match route_for(q.agg, Target::Glb, domain) {
        Some(Route::GeneralGlb) => build(q, Target::Glb, Route::GeneralGlb),
        _ => Err(Error::Unsupported(format!(
            "{} is not monotone and associative here",
            q.agg
        ))),
    }
}

pub fn min_glb_rewriting(q: &AggQuery) -> Result<Rewriting> {
    if q.agg != AggOp::Min {
        return Err(Error::Unsupported(format!("expected MIN, got {}", q.agg)));
    }
    build(q, Target::Glb, Route::MinGlb)
}

pub fn lub_rewriting(q: &AggQuery) -> Result<Rewriting> {
    match q.agg {
        AggOp::Min => build(q, Target::Lub, Route::MinLubReversed),
        AggOp::Max => build(q, Target::Lub, Route::MaxLubPlain),
        other => Err(Error::Unsupported(format!(
            "no first-order lub rewriting is known for {other}"
        ))),
    }
}

/// Same as [`rewrite`]; group variables always become parameters.
pub fn group_by_rewriting(q: &AggQuery, target: Target, domain: NumericDomain) -> Result<Rewriting> {
    rewrite(q, target, domain)
}

fn build(q: &AggQuery, target: Target, route: Route) -> Result<Rewriting> {
    let group_body = q.body.clone();
    let frozen = freeze_free_vars(q);
    let order = attack_order(&frozen.body)?;
    let sorted: Vec<Atom> = order.iter().map(|&i| frozen.body[i].clone()).collect();
    let mut fresh = Fresh::default();
    let guard = rewrite_sorted(&sorted, &VarSet::new(), &mut fresh);
    let value = match frozen.effective_value() {
        PrimTerm::Var(v) => NumTerm::Var(v),
        PrimTerm::Const(c) => NumTerm::Const(c),
    };
    let levels = Levels::new(sorted.clone());
    let (term, psi_formula) = match route {
        Route::MinGlb | Route::MaxLubPlain => {
            let op = if route == Route::MinGlb {
                AggOp::Min
            } else {
                AggOp::Max
            };
            let body = Formula::and(sorted.iter().cloned().map(Formula::Atom).collect());
            let t = NumTerm::agg(op, vars_in_order(&sorted), value, body);
            (t, None)
        }
        Route::GeneralGlb | Route::MinLubReversed => {
            let psi_formula = psi(&levels, &mut fresh);
            let (outer, inner) = match (route, frozen.agg) {
                (Route::MinLubReversed, _) => (AggOp::Min, AggOp::Max),
                (_, AggOp::Count) => (AggOp::Sum, AggOp::Min),
                (_, op) => (op, AggOp::Min),
            };
            let t = nested_term(&levels, &psi_formula, value, outer, inner, &mut fresh);
            (t, Some(psi_formula))
        }
    };
    Ok(Rewriting {
        group_params: frozen.frozen.clone(),
        query: frozen,
        target,
        route,
        order: sorted,
        guard,
        term,
        psi: psi_formula,
        group_body,
    })
}

impl Rewriting {
    /// The body before group variables were frozen.
    pub fn original_body(&self) -> &[Atom] {
        &self.group_body
    }

    pub fn is_grouped(&self) -> bool {
        !self.group_params.is_empty()
    }

    fn params(&self, values: &[Value]) -> Result<Valuation> {
        if values.len() != self.group_params.len() {
            return Err(Error::Query(format!(
                "{} group values for {} group variables",
                values.len(),
                self.group_params.len()
            )));
        }
        Ok(self
            .group_params
            .iter()
            .cloned()
            .zip(values.iter().cloned())
            .collect())
    }

    /// The bound on `db` for an ungrouped query.
    pub fn evaluate(&self, db: &DatabaseInstance) -> Result<RangeAnswer> {
        self.evaluate_at(db, &[])
    }

    /// The bound for one group.
    pub fn evaluate_at(&self, db: &DatabaseInstance, group: &[Value]) -> Result<RangeAnswer> {
        let theta = self.params(group)?;
        let ev = Evaluator::new(db);
        if !ev.holds(&self.guard, &theta)? {
            return Ok(RangeAnswer::Bottom);
        }
        Ok(match ev.num(&self.term, &theta)? {
            AggValue::Value(v) => RangeAnswer::Value(v),
            AggValue::Empty(_) => RangeAnswer::Bottom,
        })
    }

    /// Guard truth for one group.
    pub fn guard_holds(&self, db: &DatabaseInstance, group: &[Value]) -> Result<bool> {
        let theta = self.params(group)?;
        Evaluator::new(db).holds(&self.guard, &theta)
    }

    /// Group values with at least one embedding in `db`, sorted.
    pub fn candidate_groups(&self, db: &DatabaseInstance) -> Result<Vec<Vec<Value>>> {
        let body = Formula::and(self.group_body.iter().cloned().map(Formula::Atom).collect());
        let mut groups: BTreeSet<Vec<Value>> = BTreeSet::new();
        for sol in Evaluator::new(db).solve(&body, &Valuation::new())? {
            groups.insert(self.group_params.iter().map(|v| sol[v].clone()).collect());
        }
        Ok(groups.into_iter().collect())
    }

    /// One answer per candidate group; `⊥` for groups that are not certain.
    pub fn evaluate_groups(&self, db: &DatabaseInstance) -> Result<Vec<(Vec<Value>, RangeAnswer)>> {
        self.candidate_groups(db)?
            .into_iter()
            .map(|g| {
                let answer = self.evaluate_at(db, &g)?;
                Ok((g, answer))
            })
            .collect()
    }

    /// The valuations satisfying `Ψ`, for the nested routes.
    pub fn forall_embeddings(&self, db: &DatabaseInstance, group: &[Value]) -> Result<Vec<Valuation>> {
        let psi = self
            .psi
            .as_ref()
            .ok_or_else(|| Error::Unsupported(format!("{} has no ∀embedding formula", self.route)))?;
        let theta = self.params(group)?;
        let mut sols = Evaluator::new(db).solve(psi, &theta)?;
        for s in &mut sols {
            for p in &self.group_params {
                s.remove(p);
            }
        }
        sols.sort();
        sols.dedup();
        Ok(sols)
    }

    /// The outermost aggregate's range: each new key valuation of the first
    /// level with the value contributed for it.
    pub fn top_level_values(
        &self,
        db: &DatabaseInstance,
        group: &[Value],
    ) -> Result<Vec<(Valuation, Rational)>> {
        let NumTerm::Agg(top) = &self.term else {
            return Err(Error::Unsupported("the term is not an aggregate".into()));
        };
        let theta = self.params(group)?;
        let ev = Evaluator::new(db);
        let value_var = top
            .bound
            .last()
            .cloned()
            .ok_or_else(|| Error::Eval("aggregate without bound variables".into()))?;
        let mut out: BTreeSet<(Valuation, Rational)> = BTreeSet::new();
        for sol in ev.solve(&top.body, &theta)? {
            let value = match sol.get(&value_var) {
                Some(Value::Num(r)) => r.clone(),
                _ => return Err(Error::Unbound(value_var.clone())),
            };
            let key: Valuation = top.bound[..top.bound.len() - 1]
                .iter()
                .map(|v| (v.clone(), sol[v].clone()))
                .collect();
            out.insert((key, value));
        }
        Ok(out.into_iter().collect())
    }

    /// Size of guard, term and `Ψ` with shared parts counted once.
    pub fn node_count(&self) -> usize {
        let together = Formula::and(vec![
            self.guard.clone(),
            Formula::NumEq(Var::new("_answer"), self.term.clone()),
        ]);
        together.node_count()
    }

    /// Definitions, guard and term in logical notation.
    pub fn to_logic(&self) -> String {
        let mut out = String::new();
        let mut defs = self.term.definitions();
        for d in self.guard.definitions() {
            if !defs.iter().any(|e| std::sync::Arc::ptr_eq(d_ref(e), d_ref(&d))) {
                defs.push(d);
            }
        }
        for d in defs {
            out.push_str(&format!("{d}\n"));
        }
        if self.is_grouped() {
            let names: Vec<String> = self.group_params.iter().map(|v| format!("⟨{v}⟩")).collect();
            out.push_str(&format!("parameters: {}\n", names.join(", ")));
        }
        out.push_str(&format!("guard := {}\n", self.guard));
        out.push_str(&format!("{} := {}\n", self.target, self.term));
        out
    }
}

fn d_ref(d: &std::sync::Arc<crate::logic::Definition>) -> &std::sync::Arc<crate::logic::Definition> {
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::{eval_formula, satisfying_valuations};
    use crate::query::parse_query;
    use crate::schema::{Schema, Signature};
    use crate::value::int;
    use std::sync::Arc;

    fn schema() -> Arc<Schema> {
        Arc::new(
            Schema::new([
                Signature::new("R", 2, 1, &[]).unwrap(),
                Signature::new("S", 4, 2, &[4]).unwrap(),
                Signature::new("T", 3, 1, &[]).unwrap(),
            ])
            .unwrap(),
        )
    }

    fn db0() -> DatabaseInstance {
        let mut db = DatabaseInstance::new(schema(), NumericDomain::NonNegative);
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

    fn q0() -> AggQuery {
        parse_query(r#"SUM(r) <- R(x | y), S(y, z | "d", r)"#, &schema()).unwrap()
    }

    #[test]
    fn running_example_value() {
        let rw = rewrite(&q0(), Target::Glb, NumericDomain::NonNegative).unwrap();
        assert_eq!(rw.route, Route::GeneralGlb);
        assert_eq!(rw.evaluate(&db0()).unwrap(), RangeAnswer::Value(int(9)));
    }

    #[test]
    fn running_example_forall_embeddings() {
        let rw = rewrite(&q0(), Target::Glb, NumericDomain::NonNegative).unwrap();
        let rows = rw.forall_embeddings(&db0(), &[]).unwrap();
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r[&Var::new("x")] != Value::str("a3")));
    }

    #[test]
    fn guard_on_consistent_and_empty() {
        let q = q0();
        let guard = consistent_fo_rewriting(&q.body, &VarSet::new()).unwrap();
        let empty = DatabaseInstance::new(schema(), NumericDomain::NonNegative);
        assert!(!eval_formula(&empty, &guard, &Valuation::new()).unwrap());
        let mut one = empty.clone();
        one.insert_text("R", &["a", "b"]).unwrap();
        one.insert_text("S", &["b", "c", "d", "4"]).unwrap();
        assert!(eval_formula(&one, &guard, &Valuation::new()).unwrap());
        let rw = rewrite(&q, Target::Glb, NumericDomain::NonNegative).unwrap();
        assert_eq!(rw.evaluate(&one).unwrap(), RangeAnswer::Value(int(4)));
        assert_eq!(rw.evaluate(&empty).unwrap(), RangeAnswer::Bottom);
    }

    #[test]
    fn psi_on_consistent_instance_is_all_embeddings() {
        let q = q0();
        let mut db = DatabaseInstance::new(schema(), NumericDomain::NonNegative);
        db.insert_text("R", &["a", "b"]).unwrap();
        db.insert_text("R", &["a2", "b"]).unwrap();
        db.insert_text("S", &["b", "c", "d", "4"]).unwrap();
        db.insert_text("S", &["b", "c2", "d", "5"]).unwrap();
        let psi = forall_embedding_formula(&q.body).unwrap();
        let rows = satisfying_valuations(&db, &psi, &Valuation::new()).unwrap();
        assert_eq!(rows.len(), 4);
    }

    #[test]
    fn unsupported_routes() {
        let s = schema();
        for (text, target) in [
            ("SUM(r) <- S(y, z | d, r)", Target::Lub),
            ("AVG(r) <- S(y, z | d, r)", Target::Glb),
            ("COUNT(*) <- S(y, z | d, r)", Target::Lub),
        ] {
            let q = parse_query(text, &s).unwrap();
            assert!(matches!(
                rewrite(&q, target, NumericDomain::NonNegative),
                Err(Error::Unsupported(_))
            ));
        }
        let q = parse_query("SUM(r) <- S(y, z | d, r)", &s).unwrap();
        assert!(rewrite(&q, Target::Glb, NumericDomain::Unconstrained).is_err());
    }

    #[test]
    fn cyclic_body_refused() {
        let s = Arc::new(
            Schema::new([
                Signature::new("A", 2, 1, &[]).unwrap(),
                Signature::new("B", 2, 1, &[]).unwrap(),
            ])
            .unwrap(),
        );
        let q = parse_query("COUNT(*) <- A(x | y), B(y | x)", &s).unwrap();
        assert!(matches!(
            rewrite(&q, Target::Glb, NumericDomain::NonNegative),
            Err(Error::CyclicAttackGraph)
        ));
    }

    #[test]
    fn order_must_be_topological() {
        let q = q0();
        assert!(forall_embedding_formula_with_order(&q.body, &[1, 0]).is_err());
        assert!(forall_embedding_formula_with_order(&q.body, &[0]).is_err());
        assert!(forall_embedding_formula_with_order(&q.body, &[0, 1]).is_ok());
    }

    #[test]
    fn logic_listing_mentions_psi() {
        let rw = rewrite(&q0(), Target::Glb, NumericDomain::NonNegative).unwrap();
        let text = rw.to_logic();
        assert!(text.starts_with("ψ(x, y, z, r) := "));
        assert!(text.contains("guard := "));
        assert!(text.contains("glb := SUM_("));
    }
}
