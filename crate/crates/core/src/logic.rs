//! First-order formulas with aggregate terms, and their evaluation over a
//! database instance.
//!
//! Evaluation is by "solving": a formula applied to a partial valuation
//! yields every extension over its free variables that makes it true.
//! Atoms, equalities and `NumEq` generate bindings; negations, implications,
//! universal quantifiers and comparisons only filter. `∀v̄ (A → B)` is
//! evaluated by iterating the solutions of `A`; any other universal falls
//! back to the active domain plus the formula's constants.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::ops::Bound;
use std::sync::Arc;

use crate::aggregate::{AggOp, AggValue};
use crate::error::{Error, Result};
use crate::query::{Atom, Term, Var, VarSet};
use crate::schema::DatabaseInstance;
use crate::value::{format_rational, Rational, Value};

pub type Valuation = BTreeMap<Var, Value>;

#[derive(Clone, Debug)]
pub enum Formula {
    True,
    False,
    Atom(Atom),
    Eq(Term, Term),
    Le(NumTerm, NumTerm),
    /// Binds or checks a variable against the value of a numeric term.
    NumEq(Var, NumTerm),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Exists(Vec<Var>, Box<Formula>),
    Forall(Vec<Var>, Box<Formula>),
    /// A named subformula shared between several places of a larger one.
    Ref(Arc<Definition>),
}

#[derive(Debug)]
pub struct Definition {
    pub name: String,
    pub params: Vec<Var>,
    pub body: Formula,
}

#[derive(Clone, Debug)]
pub enum NumTerm {
    Const(Rational),
    Var(Var),
    Agg(Arc<AggTerm>),
}

/// `op` over the distinct valuations of `bound` satisfying `body`, applied to
/// the multiset of `value`.
#[derive(Debug)]
pub struct AggTerm {
    pub op: AggOp,
    pub bound: Vec<Var>,
    pub value: NumTerm,
    pub body: Formula,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RangeAnswer {
    Value(Rational),
    Bottom,
}

impl RangeAnswer {
    pub fn value(&self) -> Option<&Rational> {
        match self {
            RangeAnswer::Value(v) => Some(v),
            RangeAnswer::Bottom => None,
        }
    }

    pub fn is_bottom(&self) -> bool {
        matches!(self, RangeAnswer::Bottom)
    }
}

impl fmt::Display for RangeAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RangeAnswer::Value(v) => f.write_str(&format_rational(v)),
            RangeAnswer::Bottom => f.write_str("⊥"),
        }
    }
}

impl Formula {
    pub fn and(parts: Vec<Formula>) -> Formula {
        let mut flat = Vec::with_capacity(parts.len());
        for p in parts {
            match p {
                Formula::True => {}
                Formula::And(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => Formula::True,
            1 => flat.pop().expect("one conjunct"),
            _ => Formula::And(flat),
        }
    }

    pub fn or(parts: Vec<Formula>) -> Formula {
        match parts.len() {
            0 => Formula::False,
            1 => parts.into_iter().next().expect("one disjunct"),
            _ => Formula::Or(parts),
        }
    }

    pub fn exists(vars: Vec<Var>, body: Formula) -> Formula {
        if vars.is_empty() {
            body
        } else {
            Formula::Exists(vars, Box::new(body))
        }
    }

    pub fn forall(vars: Vec<Var>, body: Formula) -> Formula {
        if vars.is_empty() {
            body
        } else {
            Formula::Forall(vars, Box::new(body))
        }
    }

    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn define(name: impl Into<String>, params: Vec<Var>, body: Formula) -> Formula {
        Formula::Ref(Arc::new(Definition {
            name: name.into(),
            params,
            body,
        }))
    }

    /// Free variables, counting parameters as variables.
    pub fn free_vars(&self) -> VarSet {
        let mut out = VarSet::new();
        self.collect_free(&mut out);
        out
    }

    fn collect_free(&self, out: &mut VarSet) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Atom(a) => {
                for t in &a.terms {
                    term_vars(t, out);
                }
            }
            Formula::Eq(a, b) => {
                term_vars(a, out);
                term_vars(b, out);
            }
            Formula::Le(a, b) => {
                a.collect_free(out);
                b.collect_free(out);
            }
            Formula::NumEq(v, t) => {
                out.insert(v.clone());
                t.collect_free(out);
            }
            Formula::Not(f) => f.collect_free(out),
            Formula::And(fs) | Formula::Or(fs) => fs.iter().for_each(|f| f.collect_free(out)),
            Formula::Implies(a, b) => {
                a.collect_free(out);
                b.collect_free(out);
            }
            Formula::Exists(vs, f) | Formula::Forall(vs, f) => {
                let mut inner = f.free_vars();
                for v in vs {
                    inner.remove(v);
                }
                out.extend(inner);
            }
            Formula::Ref(d) => d.body.collect_free(out),
        }
    }

    fn collect_constants(&self, out: &mut BTreeSet<Value>, seen: &mut HashSet<usize>) {
        let term = |t: &Term, out: &mut BTreeSet<Value>| {
            if let Term::Const(c) = t {
                out.insert(c.clone());
            }
        };
        match self {
            Formula::True | Formula::False => {}
            Formula::Atom(a) => a.terms.iter().for_each(|t| term(t, out)),
            Formula::Eq(a, b) => {
                term(a, out);
                term(b, out);
            }
            Formula::Le(a, b) => {
                a.collect_constants(out, seen);
                b.collect_constants(out, seen);
            }
            Formula::NumEq(_, t) => t.collect_constants(out, seen),
            Formula::Not(f) | Formula::Exists(_, f) | Formula::Forall(_, f) => {
                f.collect_constants(out, seen)
            }
            Formula::And(fs) | Formula::Or(fs) => {
                fs.iter().for_each(|f| f.collect_constants(out, seen))
            }
            Formula::Implies(a, b) => {
                a.collect_constants(out, seen);
                b.collect_constants(out, seen);
            }
            Formula::Ref(d) => {
                if seen.insert(Arc::as_ptr(d) as usize) {
                    d.body.collect_constants(out, seen);
                }
            }
        }
    }

    /// Syntax-tree size with every shared definition and aggregate counted once.
    pub fn node_count(&self) -> usize {
        self.count(&mut HashSet::new())
    }

    fn count(&self, seen: &mut HashSet<usize>) -> usize {
        1 + match self {
            Formula::True | Formula::False | Formula::Atom(_) | Formula::Eq(..) => 0,
            Formula::Le(a, b) => a.count(seen) + b.count(seen),
            Formula::NumEq(_, t) => t.count(seen),
            Formula::Not(f) | Formula::Exists(_, f) | Formula::Forall(_, f) => f.count(seen),
            Formula::And(fs) | Formula::Or(fs) => fs.iter().map(|f| f.count(seen)).sum(),
            Formula::Implies(a, b) => a.count(seen) + b.count(seen),
            Formula::Ref(d) => {
                if seen.insert(Arc::as_ptr(d) as usize) {
                    d.body.count(seen)
                } else {
                    0
                }
            }
        }
    }

    /// Shared definitions reachable from `self`, each before its users.
    pub fn definitions(&self) -> Vec<Arc<Definition>> {
        let mut out = Vec::new();
        self.collect_defs(&mut out, &mut HashSet::new());
        out
    }

    fn collect_defs(&self, out: &mut Vec<Arc<Definition>>, seen: &mut HashSet<usize>) {
        match self {
            Formula::True | Formula::False | Formula::Atom(_) | Formula::Eq(..) => {}
            Formula::Le(a, b) => {
                a.collect_defs(out, seen);
                b.collect_defs(out, seen);
            }
            Formula::NumEq(_, t) => t.collect_defs(out, seen),
            Formula::Not(f) | Formula::Exists(_, f) | Formula::Forall(_, f) => {
                f.collect_defs(out, seen)
            }
            Formula::And(fs) | Formula::Or(fs) => {
                fs.iter().for_each(|f| f.collect_defs(out, seen))
            }
            Formula::Implies(a, b) => {
                a.collect_defs(out, seen);
                b.collect_defs(out, seen);
            }
            Formula::Ref(d) => {
                if seen.insert(Arc::as_ptr(d) as usize) {
                    d.body.collect_defs(out, seen);
                    out.push(d.clone());
                }
            }
        }
    }
}

fn term_vars(t: &Term, out: &mut VarSet) {
    match t {
        Term::Var(v) | Term::Param(v) => {
            out.insert(v.clone());
        }
        Term::Const(_) => {}
    }
}

impl NumTerm {
    pub fn agg(op: AggOp, bound: Vec<Var>, value: NumTerm, body: Formula) -> NumTerm {
        NumTerm::Agg(Arc::new(AggTerm {
            op,
            bound,
            value,
            body,
        }))
    }

    pub fn free_vars(&self) -> VarSet {
        let mut out = VarSet::new();
        self.collect_free(&mut out);
        out
    }

    fn collect_free(&self, out: &mut VarSet) {
        match self {
            NumTerm::Const(_) => {}
            NumTerm::Var(v) => {
                out.insert(v.clone());
            }
            NumTerm::Agg(a) => {
                let mut inner = a.body.free_vars();
                a.value.collect_free(&mut inner);
                for v in &a.bound {
                    inner.remove(v);
                }
                out.extend(inner);
            }
        }
    }

    fn collect_constants(&self, out: &mut BTreeSet<Value>, seen: &mut HashSet<usize>) {
        match self {
            NumTerm::Const(c) => {
                out.insert(Value::Num(c.clone()));
            }
            NumTerm::Var(_) => {}
            NumTerm::Agg(a) => {
                a.value.collect_constants(out, seen);
                a.body.collect_constants(out, seen);
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.count(&mut HashSet::new())
    }

    fn count(&self, seen: &mut HashSet<usize>) -> usize {
        match self {
            NumTerm::Const(_) | NumTerm::Var(_) => 1,
            NumTerm::Agg(a) => {
                if seen.insert(Arc::as_ptr(a) as usize) {
                    1 + a.value.count(seen) + a.body.count(seen)
                } else {
                    1
                }
            }
        }
    }

    pub fn definitions(&self) -> Vec<Arc<Definition>> {
        let mut out = Vec::new();
        self.collect_defs(&mut out, &mut HashSet::new());
        out
    }

    fn collect_defs(&self, out: &mut Vec<Arc<Definition>>, seen: &mut HashSet<usize>) {
        if let NumTerm::Agg(a) = self {
            a.value.collect_defs(out, seen);
            a.body.collect_defs(out, seen);
        }
    }
}

/// Evaluates formulas and terms over one instance, memoizing aggregate
/// values by their free-variable bindings.
pub struct Evaluator<'a> {
    db: &'a DatabaseInstance,
    free_cache: RefCell<HashMap<usize, Arc<VarSet>>>,
    term_free_cache: RefCell<HashMap<usize, Arc<VarSet>>>,
    agg_cache: RefCell<HashMap<(usize, Vec<Value>), AggValue>>,
    domain: RefCell<Option<Vec<Value>>>,
    extra_constants: BTreeSet<Value>,
}

impl<'a> Evaluator<'a> {
    pub fn new(db: &'a DatabaseInstance) -> Self {
        Evaluator {
            db,
            free_cache: RefCell::new(HashMap::new()),
            term_free_cache: RefCell::new(HashMap::new()),
            agg_cache: RefCell::new(HashMap::new()),
            domain: RefCell::new(None),
            extra_constants: BTreeSet::new(),
        }
    }

    /// An evaluator whose quantifier fallback also ranges over the constants
    /// of `f`.
    pub fn for_formula(db: &'a DatabaseInstance, f: &Formula) -> Self {
        let mut ev = Evaluator::new(db);
        f.collect_constants(&mut ev.extra_constants, &mut HashSet::new());
        ev
    }

    pub fn for_term(db: &'a DatabaseInstance, t: &NumTerm) -> Self {
        let mut ev = Evaluator::new(db);
        t.collect_constants(&mut ev.extra_constants, &mut HashSet::new());
        ev
    }

    fn free(&self, f: &Formula) -> Arc<VarSet> {
        let key = f as *const Formula as usize;
        if let Some(v) = self.free_cache.borrow().get(&key) {
            return v.clone();
        }
        let vars = match f {
            Formula::Ref(d) => self.free(&d.body),
            _ => Arc::new(f.free_vars()),
        };
        self.free_cache.borrow_mut().insert(key, vars.clone());
        vars
    }

    fn term_free(&self, t: &NumTerm) -> Arc<VarSet> {
        let key = match t {
            NumTerm::Agg(a) => Arc::as_ptr(a) as usize,
            _ => return Arc::new(t.free_vars()),
        };
        if let Some(v) = self.term_free_cache.borrow().get(&key) {
            return v.clone();
        }
        let vars = Arc::new(t.free_vars());
        self.term_free_cache.borrow_mut().insert(key, vars.clone());
        vars
    }

    fn active_domain(&self) -> Vec<Value> {
        let mut cached = self.domain.borrow_mut();
        cached
            .get_or_insert_with(|| {
                let mut d = self.db.active_domain();
                d.extend(self.extra_constants.iter().cloned());
                d.into_iter().collect()
            })
            .clone()
    }

    fn resolve(&self, t: &Term, theta: &Valuation) -> Result<Option<Value>> {
        Ok(match t {
            Term::Const(c) => Some(c.clone()),
            Term::Var(v) => theta.get(v).cloned(),
            Term::Param(p) => Some(
                theta
                    .get(p)
                    .cloned()
                    .ok_or_else(|| Error::Unbound(p.clone()))?,
            ),
        })
    }

    /// All extensions of `theta` over the free variables of `f` satisfying it.
    pub fn solve(&self, f: &Formula, theta: &Valuation) -> Result<Vec<Valuation>> {
        let mut out = Vec::new();
        self.solve_into(f, theta, &mut out)?;
        Ok(out)
    }

    fn solve_into(&self, f: &Formula, theta: &Valuation, out: &mut Vec<Valuation>) -> Result<()> {
        match f {
            Formula::True => out.push(theta.clone()),
            Formula::False => {}
            Formula::Atom(a) => self.match_atom(a, theta, out)?,
            Formula::Eq(a, b) => {
                match (self.resolve(a, theta)?, self.resolve(b, theta)?) {
                    (Some(x), Some(y)) => {
                        if x == y {
                            out.push(theta.clone());
                        }
                    }
                    (Some(x), None) => out.push(bind(theta, b, x)),
                    (None, Some(y)) => out.push(bind(theta, a, y)),
                    (None, None) => {
                        return Err(Error::Eval(format!(
                            "unsafe equality {a} = {b}: neither side is bound"
                        )))
                    }
                }
            }
            Formula::NumEq(v, t) => {
                if let Some(r) = self.num_value(t, theta)? {
                    match theta.get(v) {
                        Some(Value::Num(x)) => {
                            if *x == r {
                                out.push(theta.clone());
                            }
                        }
                        Some(Value::Str(_)) => {}
                        None => {
                            let mut ext = theta.clone();
                            ext.insert(v.clone(), Value::Num(r));
                            out.push(ext);
                        }
                    }
                }
            }
            Formula::And(fs) => {
                let mut pending: Vec<&Formula> = fs.iter().collect();
                self.solve_and(&mut pending, theta, out)?;
            }
            Formula::Or(fs) => {
                let mut all = BTreeSet::new();
                for g in fs {
                    all.extend(self.solve(g, theta)?);
                }
                out.extend(all);
            }
            Formula::Exists(vs, g) => {
                let inner = without(theta, vs);
                let mut all = BTreeSet::new();
                for mut sol in self.solve(g, &inner)? {
                    for v in vs {
                        sol.remove(v);
                        if let Some(old) = theta.get(v) {
                            sol.insert(v.clone(), old.clone());
                        }
                    }
                    all.insert(sol);
                }
                out.extend(all);
            }
            Formula::Ref(d) => self.solve_into(&d.body, theta, out)?,
            Formula::Not(_) | Formula::Implies(..) | Formula::Forall(..) | Formula::Le(..) => {
                self.require_bound(f, theta)?;
                if self.holds(f, theta)? {
                    out.push(theta.clone());
                }
            }
        }
        Ok(())
    }

    fn require_bound(&self, f: &Formula, theta: &Valuation) -> Result<()> {
        match self.free(f).iter().find(|v| !theta.contains_key(*v)) {
            Some(v) => Err(Error::Unbound(v.clone())),
            None => Ok(()),
        }
    }

    fn solve_and(
        &self,
        pending: &mut Vec<&Formula>,
        theta: &Valuation,
        out: &mut Vec<Valuation>,
    ) -> Result<()> {
        if pending.is_empty() {
            out.push(theta.clone());
            return Ok(());
        }
        let pick = self.pick_conjunct(pending, theta)?;
        let f = pending.remove(pick);
        let result = (|| {
            if self.free(f).iter().all(|v| theta.contains_key(v)) {
                if self.holds(f, theta)? {
                    self.solve_and(pending, theta, out)?;
                }
            } else {
                for ext in self.solve(f, theta)? {
                    self.solve_and(pending, &ext, out)?;
                }
            }
            Ok(())
        })();
        pending.insert(pick, f);
        result
    }

    /// Fully bound conjuncts first, then generators, then anything solvable.
    fn pick_conjunct(&self, pending: &[&Formula], theta: &Valuation) -> Result<usize> {
        let bound = |f: &Formula| self.free(f).iter().all(|v| theta.contains_key(v));
        if let Some(i) = pending.iter().position(|f| bound(f)) {
            return Ok(i);
        }
        let ready = |f: &Formula| match f {
            Formula::Atom(a) => a.terms.iter().all(|t| match t {
                Term::Param(p) => theta.contains_key(p),
                _ => true,
            }),
            Formula::Eq(a, b) => {
                let known = |t: &Term| match t {
                    Term::Var(v) => theta.contains_key(v),
                    _ => true,
                };
                known(a) || known(b)
            }
            Formula::NumEq(_, t) => self.term_free(t).iter().all(|v| theta.contains_key(v)),
            _ => false,
        };
        if let Some(i) = pending.iter().position(|f| ready(f)) {
            return Ok(i);
        }
        if let Some(i) = pending.iter().position(|f| {
            matches!(
                f,
                Formula::Exists(..) | Formula::Or(_) | Formula::And(_) | Formula::Ref(_)
            )
        }) {
            return Ok(i);
        }
        let unbound: Vec<String> = pending
            .iter()
            .flat_map(|f| self.free(f).iter().cloned().collect::<Vec<_>>())
            .filter(|v| !theta.contains_key(v))
            .map(|v| v.to_string())
            .collect();
        Err(Error::Eval(format!(
            "formula is not range-restricted: nothing binds {}",
            unbound.join(", ")
        )))
    }

    fn match_atom(&self, a: &Atom, theta: &Valuation, out: &mut Vec<Valuation>) -> Result<()> {
        let resolved: Vec<Option<Value>> = a
            .terms
            .iter()
            .map(|t| self.resolve(t, theta))
            .collect::<Result<_>>()?;
        let prefix: Vec<Value> = resolved.iter().map_while(|v| v.clone()).collect();
        let tuples = self.db.tuples(a.relation())?;
        let candidates = tuples
            .range::<[Value], _>((Bound::Included(prefix.as_slice()), Bound::Unbounded))
            .take_while(|t| t.starts_with(&prefix));
        'tuples: for tuple in candidates {
            let mut ext: Option<Valuation> = None;
            for (i, (t, r)) in a.terms.iter().zip(&resolved).enumerate().skip(prefix.len()) {
                let value = &tuple[i];
                match r {
                    Some(expected) => {
                        if expected != value {
                            continue 'tuples;
                        }
                    }
                    None => {
                        let v = t.as_var().expect("only variables are unresolved");
                        let e = ext.get_or_insert_with(|| theta.clone());
                        match e.get(v) {
                            Some(prev) if prev != value => continue 'tuples,
                            Some(_) => {}
                            None => {
                                e.insert(v.clone(), value.clone());
                            }
                        }
                    }
                }
            }
            out.push(ext.unwrap_or_else(|| theta.clone()));
        }
        Ok(())
    }

    /// Truth of `f` under `theta`, which must bind every free variable.
    pub fn holds(&self, f: &Formula, theta: &Valuation) -> Result<bool> {
        match f {
            Formula::True => Ok(true),
            Formula::False => Ok(false),
            Formula::Atom(a) => {
                let mut tuple = Vec::with_capacity(a.terms.len());
                for t in &a.terms {
                    match self.resolve(t, theta)? {
                        Some(v) => tuple.push(v),
                        None => {
                            return Err(Error::Unbound(t.as_var().expect("variable").clone()))
                        }
                    }
                }
                Ok(self.db.contains(a.relation(), &tuple))
            }
            Formula::Eq(..) | Formula::NumEq(..) => Ok(!self.solve(f, theta)?.is_empty()),
            Formula::Le(a, b) => {
                match (self.num_value(a, theta)?, self.num_value(b, theta)?) {
                    (Some(x), Some(y)) => Ok(x <= y),
                    _ => Ok(false),
                }
            }
            Formula::Not(g) => Ok(!self.holds(g, theta)?),
            Formula::And(fs) => {
                for g in fs {
                    if !self.holds(g, theta)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            Formula::Or(fs) => {
                for g in fs {
                    if self.holds(g, theta)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Formula::Implies(a, b) => Ok(!self.holds(a, theta)? || self.holds(b, theta)?),
            Formula::Exists(vs, g) => Ok(!self.solve(g, &without(theta, vs))?.is_empty()),
            Formula::Forall(vs, g) => self.forall(vs, g, theta),
            Formula::Ref(d) => self.holds(&d.body, theta),
        }
    }

    fn forall(&self, vs: &[Var], g: &Formula, theta: &Valuation) -> Result<bool> {
        let inner = without(theta, vs);
        if let Formula::Implies(a, b) = g {
            let covers = |free: &VarSet| free.iter().all(|v| inner.contains_key(v) || vs.contains(v));
            if covers(&self.free(a)) && self.free(b).iter().all(|v| inner.contains_key(v) || vs.contains(v)) {
                if let Ok(sols) = self.solve(a, &inner) {
                    if sols.iter().all(|s| vs.iter().all(|v| s.contains_key(v))) {
                        for s in sols {
                            if !self.holds(b, &s)? {
                                return Ok(false);
                            }
                        }
                        return Ok(true);
                    }
                }
            }
        }
        let domain = self.active_domain();
        let mut assignment = inner.clone();
        self.forall_enumerate(vs, 0, g, &domain, &mut assignment)
    }

    fn forall_enumerate(
        &self,
        vs: &[Var],
        i: usize,
        g: &Formula,
        domain: &[Value],
        assignment: &mut Valuation,
    ) -> Result<bool> {
        if i == vs.len() {
            return self.holds(g, assignment);
        }
        for value in domain {
            assignment.insert(vs[i].clone(), value.clone());
            if !self.forall_enumerate(vs, i + 1, g, domain, assignment)? {
                return Ok(false);
            }
        }
        assignment.remove(&vs[i]);
        Ok(true)
    }

    /// The rational value of a term; `None` for an aggregate over the empty
    /// multiset without a conventional value.
    fn num_value(&self, t: &NumTerm, theta: &Valuation) -> Result<Option<Rational>> {
        Ok(match self.num(t, theta)? {
            AggValue::Value(v) => Some(v),
            AggValue::Empty(op) => op.empty_value(),
        })
    }

    pub fn num(&self, t: &NumTerm, theta: &Valuation) -> Result<AggValue> {
        match t {
            NumTerm::Const(c) => Ok(AggValue::Value(c.clone())),
            NumTerm::Var(v) => match theta.get(v) {
                Some(Value::Num(r)) => Ok(AggValue::Value(r.clone())),
                Some(Value::Str(s)) => Err(Error::Eval(format!(
                    "variable `{v}` is bound to the non-number `{s}`"
                ))),
                None => Err(Error::Unbound(v.clone())),
            },
            NumTerm::Agg(a) => self.aggregate(a, &self.term_free(t), theta),
        }
    }

    fn aggregate(&self, a: &Arc<AggTerm>, free: &VarSet, theta: &Valuation) -> Result<AggValue> {
        let mut key_values = Vec::with_capacity(free.len());
        for v in free {
            key_values.push(theta.get(v).cloned().ok_or_else(|| Error::Unbound(v.clone()))?);
        }
        let key = (Arc::as_ptr(a) as usize, key_values);
        if let Some(hit) = self.agg_cache.borrow().get(&key) {
            return Ok(hit.clone());
        }
        let inner = without(theta, &a.bound);
        let mut rows: BTreeMap<Vec<Value>, Rational> = BTreeMap::new();
        for sol in self.solve(&a.body, &inner)? {
            let mut row = Vec::with_capacity(a.bound.len());
            for v in &a.bound {
                row.push(sol.get(v).cloned().ok_or_else(|| Error::Unbound(v.clone()))?);
            }
            if rows.contains_key(&row) {
                continue;
            }
            let value = match self.num(&a.value, &sol)? {
                AggValue::Value(r) => r,
                AggValue::Empty(op) => op.empty_value().ok_or(Error::UndefinedEmpty(op))?,
            };
            rows.insert(row, value);
        }
        let values: Vec<Rational> = rows.into_values().collect();
        let result = a.op.apply(&values);
        self.agg_cache.borrow_mut().insert(key, result.clone());
        Ok(result)
    }
}

fn bind(theta: &Valuation, t: &Term, value: Value) -> Valuation {
    let mut ext = theta.clone();
    if let Term::Var(v) = t {
        ext.insert(v.clone(), value);
    }
    ext
}

fn without(theta: &Valuation, vs: &[Var]) -> Valuation {
    if vs.iter().any(|v| theta.contains_key(v)) {
        let mut inner = theta.clone();
        for v in vs {
            inner.remove(v);
        }
        inner
    } else {
        theta.clone()
    }
}

/// Truth of `f` under `theta` on `db`.
pub fn eval_formula(db: &DatabaseInstance, f: &Formula, theta: &Valuation) -> Result<bool> {
    if let Some(v) = f.free_vars().into_iter().find(|v| !theta.contains_key(v)) {
        return Err(Error::Unbound(v));
    }
    Evaluator::for_formula(db, f).holds(f, theta)
}

/// Every extension of `theta` over the free variables of `f` satisfying it.
pub fn satisfying_valuations(
    db: &DatabaseInstance,
    f: &Formula,
    theta: &Valuation,
) -> Result<Vec<Valuation>> {
    let mut sols = Evaluator::for_formula(db, f).solve(f, theta)?;
    sols.sort();
    sols.dedup();
    Ok(sols)
}

pub fn eval_numeric_term(db: &DatabaseInstance, t: &NumTerm, theta: &Valuation) -> Result<AggValue> {
    if let Some(v) = t.free_vars().into_iter().find(|v| !theta.contains_key(v)) {
        return Err(Error::Unbound(v));
    }
    Evaluator::for_term(db, t).num(t, theta)
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::True => f.write_str("true"),
            Formula::False => f.write_str("false"),
            Formula::Atom(a) => write!(f, "{a}"),
            Formula::Eq(a, b) => write!(f, "{a} = {b}"),
            Formula::Le(a, b) => write!(f, "{a} ≤ {b}"),
            Formula::NumEq(v, t) => write!(f, "{v} = {t}"),
            Formula::Not(g) => {
                f.write_str("¬")?;
                write_nested(f, g)
            }
            Formula::And(fs) => write_joined(f, fs, " ∧ "),
            Formula::Or(fs) => write_joined(f, fs, " ∨ "),
            Formula::Implies(a, b) => {
                write_nested(f, a)?;
                f.write_str(" → ")?;
                write_nested(f, b)
            }
            Formula::Exists(vs, g) => write_quantified(f, "∃", vs, g),
            Formula::Forall(vs, g) => write_quantified(f, "∀", vs, g),
            Formula::Ref(d) => {
                write!(f, "{}(", d.name)?;
                write_vars(f, &d.params)?;
                f.write_str(")")
            }
        }
    }
}

fn write_vars(f: &mut fmt::Formatter<'_>, vs: &[Var]) -> fmt::Result {
    for (i, v) in vs.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{v}")?;
    }
    Ok(())
}

fn write_nested(f: &mut fmt::Formatter<'_>, g: &Formula) -> fmt::Result {
    match g {
        Formula::And(_) | Formula::Or(_) | Formula::Implies(..) => write!(f, "({g})"),
        _ => write!(f, "{g}"),
    }
}

fn write_joined(f: &mut fmt::Formatter<'_>, fs: &[Formula], sep: &str) -> fmt::Result {
    for (i, g) in fs.iter().enumerate() {
        if i > 0 {
            f.write_str(sep)?;
        }
        write_nested(f, g)?;
    }
    Ok(())
}

fn write_quantified(f: &mut fmt::Formatter<'_>, q: &str, vs: &[Var], g: &Formula) -> fmt::Result {
    f.write_str(q)?;
    write_vars(f, vs)?;
    write!(f, " ({g})")
}

impl fmt::Display for NumTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumTerm::Const(c) => f.write_str(&format_rational(c)),
            NumTerm::Var(v) => write!(f, "{v}"),
            NumTerm::Agg(a) => {
                write!(f, "{}_(", a.op)?;
                write_vars(f, &a.bound)?;
                write!(f, ") {} [{}]", a.value, a.body)
            }
        }
    }
}

impl fmt::Display for Definition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        write_vars(f, &self.params)?;
        write!(f, ") := {}", self.body)
    }
}
