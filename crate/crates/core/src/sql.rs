//! SQL for rewritings, and a small SQLite driver to run it.
//!
//! Tables have one column per position, named `c1 .. cn`, with no key
//! constraint. Universal quantifiers become `NOT EXISTS`, aggregate terms
//! become scalar subqueries over a `SELECT DISTINCT` of the bound
//! variables, and the ∀embedding formula is emitted once as the common
//! table expression `psi`. Group variables are named bind parameters.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rusqlite::types::ValueRef;
use rusqlite::Connection;

use crate::aggregate::AggOp;
use crate::error::{Error, Result};
use crate::logic::{Definition, Formula, NumTerm, RangeAnswer};
use crate::query::{Atom, Term, Var};
use crate::rewrite::Rewriting;
use crate::schema::{DatabaseInstance, Schema, Signature};
use crate::value::{format_rational, parse_rational, terminating_decimal, Rational, Value};

const PSI: &str = "psi";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SqlScript {
    /// One `CREATE TABLE` per relation.
    pub ddl: Vec<String>,
    /// Returns 1 when the body is certain, else 0.
    pub guard_sql: String,
    /// Returns the bound, or NULL for `⊥`.
    pub answer_sql: String,
    /// For grouped queries: the distinct candidate groups, one column per
    /// group variable.
    pub groups_sql: Option<String>,
    /// Bind parameter names, in group-variable order.
    pub params: Vec<String>,
}

impl SqlScript {
    /// The whole script as text, statements separated by `;`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for d in &self.ddl {
            let _ = writeln!(out, "{d};");
        }
        if let Some(g) = &self.groups_sql {
            let _ = writeln!(out, "-- groups\n{g};");
        }
        let _ = writeln!(out, "-- guard\n{};", self.guard_sql);
        let _ = writeln!(out, "-- answer\n{};", self.answer_sql);
        out
    }
}

pub fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn quote_str(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn column(i: usize) -> String {
    format!("c{}", i + 1)
}

fn rational_literal(r: &Rational) -> String {
    if r.is_integer() {
        r.to_integer().to_string()
    } else if let Some(d) = terminating_decimal(r) {
        format!("CAST('{d}' AS DECIMAL)")
    } else {
        format!("(CAST({} AS DECIMAL) / {})", r.numer(), r.denom())
    }
}

fn value_literal(v: &Value) -> String {
    match v {
        Value::Str(s) => quote_str(s),
        Value::Num(r) => rational_literal(r),
    }
}

fn param_name(v: &Var) -> String {
    format!(":{}", v.name())
}

fn create_table(sig: &Signature) -> String {
    let cols: Vec<String> = (0..sig.arity)
        .map(|i| {
            let ty = if sig.is_numeric(i) { "DECIMAL" } else { "TEXT" };
            format!("{} {ty}", column(i))
        })
        .collect();
    format!("CREATE TABLE {} ({})", quote_ident(&sig.name), cols.join(", "))
}

pub fn emit_ddl(schema: &Schema) -> Vec<String> {
    schema.signatures().map(|s| create_table(s)).collect()
}

type Env = BTreeMap<Var, String>;

struct Emitter {
    next_alias: usize,
    psi: Option<Arc<Definition>>,
}

/// A `FROM ... WHERE ...` fragment with the variables it binds.
struct Core {
    from: Vec<String>,
    conds: Vec<String>,
    env: Env,
}

impl Core {
    fn where_clause(&self) -> String {
        if self.conds.is_empty() {
            String::new()
        } else {
            format!(" WHERE {}", self.conds.join(" AND "))
        }
    }
}

fn flatten(f: &Formula, out: &mut Vec<Formula>) {
    match f {
        Formula::And(parts) => parts.iter().for_each(|p| flatten(p, out)),
        Formula::True => {}
        other => out.push(other.clone()),
    }
}

fn without(env: &Env, vars: &[Var]) -> Env {
    env.iter()
        .filter(|(k, _)| !vars.contains(k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

impl Emitter {
    fn alias(&mut self, prefix: &str) -> String {
        self.next_alias += 1;
        format!("{prefix}{}", self.next_alias)
    }

    fn term(&self, t: &Term, env: &Env) -> Result<String> {
        match t {
            Term::Const(v) => Ok(value_literal(v)),
            Term::Param(v) => Ok(param_name(v)),
            Term::Var(v) => env.get(v).cloned().ok_or_else(|| Error::Unbound(v.clone())),
        }
    }

    fn bind_columns(
        &self,
        alias: &str,
        terms: impl Iterator<Item = (String, Term)>,
        core: &mut Core,
    ) -> Result<()> {
        for (col, t) in terms {
            let lhs = format!("{alias}.{col}");
            match &t {
                Term::Var(v) if !core.env.contains_key(v) => {
                    core.env.insert(v.clone(), lhs);
                }
                _ => {
                    let rhs = self.term(&t, &core.env)?;
                    core.conds.push(format!("{lhs} = {rhs}"));
                }
            }
        }
        Ok(())
    }

    fn add_atom(&mut self, a: &Atom, core: &mut Core) -> Result<()> {
        let alias = self.alias("t");
        core.from.push(format!("{} {alias}", quote_ident(a.relation())));
        let terms = a.terms.iter().enumerate().map(|(i, t)| (column(i), t.clone()));
        self.bind_columns(&alias, terms, core)
    }

    fn add_ref(&mut self, d: &Arc<Definition>, core: &mut Core) -> Result<()> {
        match &self.psi {
            Some(p) if Arc::ptr_eq(p, d) => {}
            _ => {
                return Err(Error::Unsupported(format!(
                    "definition `{}` has no SQL counterpart",
                    d.name
                )))
            }
        }
        let alias = self.alias("p");
        core.from.push(format!("{PSI} {alias}"));
        let terms = d
            .params
            .iter()
            .enumerate()
            .map(|(i, v)| (column(i), Term::Var(v.clone())));
        self.bind_columns(&alias, terms, core)
    }

    /// Whether `f` can bind variables in a `FROM` clause.
    fn generator(f: &Formula) -> bool {
        match f {
            Formula::Atom(_) | Formula::Ref(_) => true,
            Formula::Exists(_, body) => {
                let mut parts = Vec::new();
                flatten(body, &mut parts);
                parts.iter().all(|p| Self::generator(p) || matches!(p, Formula::Eq(..) | Formula::NumEq(..)))
                    && parts.iter().any(Self::generator)
            }
            _ => false,
        }
    }

    /// Builds `FROM`/`WHERE` for a conjunction evaluated under `env`.
    fn core(&mut self, conjuncts: &[Formula], env: &Env) -> Result<Core> {
        let mut core = Core {
            from: Vec::new(),
            conds: Vec::new(),
            env: env.clone(),
        };
        let mut pending: Vec<Formula> = Vec::new();
        let mut queue: Vec<Formula> = conjuncts.to_vec();
        queue.reverse();
        while let Some(f) = queue.pop() {
            match &f {
                Formula::Atom(a) => self.add_atom(a, &mut core)?,
                Formula::Ref(d) => self.add_ref(d, &mut core)?,
                Formula::Exists(vars, body) if Self::generator(&f) => {
                    for v in vars {
                        core.env.remove(v);
                    }
                    let mut parts = Vec::new();
                    flatten(body, &mut parts);
                    for p in parts.into_iter().rev() {
                        queue.push(p);
                    }
                }
                _ => pending.push(f),
            }
        }
        // equalities may bind variables; retry until nothing changes
        loop {
            let mut progress = false;
            let mut rest = Vec::new();
            for f in std::mem::take(&mut pending) {
                let bound = match &f {
                    Formula::NumEq(v, t) if !core.env.contains_key(v) => {
                        match self.num(t, &core.env) {
                            Ok(e) => {
                                core.env.insert(v.clone(), e);
                                true
                            }
                            Err(Error::Unbound(_)) => false,
                            Err(e) => return Err(e),
                        }
                    }
                    Formula::Eq(Term::Var(v), t) | Formula::Eq(t, Term::Var(v))
                        if !core.env.contains_key(v) =>
                    {
                        match self.term(t, &core.env) {
                            Ok(e) => {
                                core.env.insert(v.clone(), e);
                                true
                            }
                            Err(_) => false,
                        }
                    }
                    _ => false,
                };
                if bound {
                    progress = true;
                } else {
                    rest.push(f);
                }
            }
            pending = rest;
            if !progress {
                break;
            }
        }
        for f in pending {
            let c = self.cond(&f, &core.env)?;
            core.conds.push(c);
        }
        Ok(core)
    }

    fn exists_sql(&mut self, conjuncts: &[Formula], env: &Env) -> Result<String> {
        let core = self.core(conjuncts, env)?;
        if core.from.is_empty() {
            return Ok(if core.conds.is_empty() {
                "1 = 1".into()
            } else {
                format!("({})", core.conds.join(" AND "))
            });
        }
        Ok(format!(
            "EXISTS (SELECT 1 FROM {}{})",
            core.from.join(", "),
            core.where_clause()
        ))
    }

    fn cond(&mut self, f: &Formula, env: &Env) -> Result<String> {
        match f {
            Formula::True => Ok("1 = 1".into()),
            Formula::False => Ok("1 = 0".into()),
            Formula::Eq(a, b) => Ok(format!("{} = {}", self.term(a, env)?, self.term(b, env)?)),
            Formula::Le(a, b) => Ok(format!("{} <= {}", self.num(a, env)?, self.num(b, env)?)),
            Formula::NumEq(v, t) => {
                let lhs = env.get(v).cloned().ok_or_else(|| Error::Unbound(v.clone()))?;
                Ok(format!("{lhs} = {}", self.num(t, env)?))
            }
            Formula::Not(g) => Ok(format!("NOT ({})", self.cond(g, env)?)),
            Formula::Or(parts) => {
                let ps: Vec<String> = parts.iter().map(|p| self.cond(p, env)).collect::<Result<_>>()?;
                Ok(format!("({})", ps.join(" OR ")))
            }
            Formula::Implies(a, b) => Ok(format!(
                "(NOT ({}) OR {})",
                self.cond(a, env)?,
                self.cond(b, env)?
            )),
            Formula::Atom(_) | Formula::Ref(_) => self.exists_sql(std::slice::from_ref(f), env),
            Formula::And(_) => {
                let mut parts = Vec::new();
                flatten(f, &mut parts);
                if parts.iter().any(Self::generator) {
                    self.exists_sql(&parts, env)
                } else {
                    let ps: Vec<String> = parts.iter().map(|p| self.cond(p, env)).collect::<Result<_>>()?;
                    Ok(if ps.is_empty() {
                        "1 = 1".into()
                    } else {
                        format!("({})", ps.join(" AND "))
                    })
                }
            }
            Formula::Exists(vars, body) => {
                let mut parts = Vec::new();
                flatten(body, &mut parts);
                self.exists_sql(&parts, &without(env, vars))
            }
            Formula::Forall(vars, body) => {
                let inner = without(env, vars);
                let (premise, conclusion) = match body.as_ref() {
                    Formula::Implies(a, b) => (a.as_ref().clone(), b.as_ref().clone()),
                    other => {
                        return Ok(format!(
                            "NOT ({})",
                            self.cond(&Formula::Exists(vars.clone(), Box::new(Formula::not(other.clone()))), env)?
                        ))
                    }
                };
                let mut parts = Vec::new();
                flatten(&premise, &mut parts);
                let mut core = self.core(&parts, &inner)?;
                let c = self.cond(&conclusion, &core.env)?;
                core.conds.push(format!("NOT ({c})"));
                if core.from.is_empty() {
                    return Ok(format!("NOT ({})", core.conds.join(" AND ")));
                }
                Ok(format!(
                    "NOT EXISTS (SELECT 1 FROM {}{})",
                    core.from.join(", "),
                    core.where_clause()
                ))
            }
        }
    }

    fn num(&mut self, t: &NumTerm, env: &Env) -> Result<String> {
        match t {
            NumTerm::Const(c) => Ok(rational_literal(c)),
            NumTerm::Var(v) => env.get(v).cloned().ok_or_else(|| Error::Unbound(v.clone())),
            NumTerm::Agg(a) => {
                let op = match a.op {
                    AggOp::Sum | AggOp::Count => "SUM",
                    AggOp::Min => "MIN",
                    AggOp::Max => "MAX",
                    other => {
                        return Err(Error::Unsupported(format!("{other} has no SQL emission")))
                    }
                };
                let inner_env = without(env, &a.bound);
                let mut parts = Vec::new();
                flatten(&a.body, &mut parts);
                let core = self.core(&parts, &inner_env)?;
                if core.from.is_empty() {
                    return Err(Error::Unsupported(
                        "aggregate term without a relation to range over".into(),
                    ));
                }
                let mut cols = Vec::new();
                for (i, b) in a.bound.iter().enumerate() {
                    let e = core.env.get(b).ok_or_else(|| Error::Unbound(b.clone()))?;
                    cols.push(format!("{e} AS b{}", i + 1));
                }
                let value = self.num(&a.value, &core.env)?;
                cols.push(format!("{value} AS val"));
                let d = self.alias("d");
                Ok(format!(
                    "(SELECT {op}({d}.val) FROM (SELECT DISTINCT {} FROM {}{}) {d})",
                    cols.join(", "),
                    core.from.join(", "),
                    core.where_clause()
                ))
            }
        }
    }

    fn psi_cte(&mut self, d: &Arc<Definition>) -> Result<String> {
        let mut parts = Vec::new();
        flatten(&d.body, &mut parts);
        let core = self.core(&parts, &Env::new())?;
        let cols: Vec<String> = d
            .params
            .iter()
            .map(|v| core.env.get(v).cloned().ok_or_else(|| Error::Unbound(v.clone())))
            .collect::<Result<_>>()?;
        let names: Vec<String> = (0..d.params.len()).map(column).collect();
        Ok(format!(
            "WITH {PSI} ({}) AS (SELECT DISTINCT {} FROM {}{}) ",
            names.join(", "),
            cols.join(", "),
            core.from.join(", "),
            core.where_clause()
        ))
    }
}

/// Compiles a rewriting to SQL over `schema`.
pub fn emit_sql(rw: &Rewriting, schema: &Schema) -> Result<SqlScript> {
    let psi = rw.psi.as_ref().and_then(|f| match f {
        Formula::Ref(d) => Some(d.clone()),
        _ => None,
    });
    let mut em = Emitter { next_alias: 0, psi: psi.clone() };
    let guard = em.cond(&rw.guard, &Env::new())?;
    let term = em.num(&rw.term, &Env::new())?;
    let with = match &psi {
        Some(d) => em.psi_cte(d)?,
        None => String::new(),
    };
    let guard_sql = format!("SELECT CASE WHEN {guard} THEN 1 ELSE 0 END AS certain");
    let answer_sql = format!("{with}SELECT CASE WHEN {guard} THEN {term} END AS answer");
    let groups_sql = if rw.group_params.is_empty() {
        None
    } else {
        let body = Formula::and(rw.original_body().iter().cloned().map(Formula::Atom).collect());
        let mut parts = Vec::new();
        flatten(&body, &mut parts);
        let core = em.core(&parts, &Env::new())?;
        let cols: Vec<String> = rw
            .group_params
            .iter()
            .enumerate()
            .map(|(i, v)| {
                core.env
                    .get(v)
                    .map(|e| format!("{e} AS g{}", i + 1))
                    .ok_or_else(|| Error::Unbound(v.clone()))
            })
            .collect::<Result<_>>()?;
        Some(format!(
            "SELECT DISTINCT {} FROM {}{} ORDER BY {}",
            cols.join(", "),
            core.from.join(", "),
            core.where_clause(),
            (1..=cols.len()).map(|i| format!("g{i}")).collect::<Vec<_>>().join(", ")
        ))
    };
    Ok(SqlScript {
        ddl: emit_ddl(schema),
        guard_sql,
        answer_sql,
        groups_sql,
        params: rw.group_params.iter().map(param_name).collect(),
    })
}

/// A connection string: `sqlite::memory:` or `sqlite://<path>`.
pub fn open(dsn: &str) -> Result<Connection> {
    if dsn == "sqlite::memory:" || dsn == "sqlite://:memory:" {
        return Ok(Connection::open_in_memory()?);
    }
    match dsn.strip_prefix("sqlite://") {
        Some(path) if !path.is_empty() => Ok(Connection::open(path)?),
        _ => Err(Error::Unsupported(format!(
            "connection string `{dsn}`: expected sqlite::memory: or sqlite://<path>"
        ))),
    }
}

fn to_sql_value(v: &Value) -> rusqlite::types::Value {
    use rusqlite::types::Value as V;
    match v {
        Value::Str(s) => V::Text(s.to_string()),
        Value::Num(r) if r.is_integer() => match i64::try_from(r.to_integer()) {
            Ok(i) => V::Integer(i),
            Err(_) => V::Text(format_rational(r)),
        },
        Value::Num(r) => match terminating_decimal(r) {
            Some(d) => V::Text(d),
            None => V::Real(
                num_traits::ToPrimitive::to_f64(r).unwrap_or(f64::NAN),
            ),
        },
    }
}

/// Creates the tables (dropping existing ones) and inserts every fact.
pub fn load(conn: &mut Connection, db: &DatabaseInstance) -> Result<()> {
    let tx = conn.transaction()?;
    for sig in db.schema().signatures() {
        tx.execute(&format!("DROP TABLE IF EXISTS {}", quote_ident(&sig.name)), [])?;
        tx.execute(&create_table(sig), [])?;
        let marks: Vec<&str> = vec!["?"; sig.arity];
        let mut stmt = tx.prepare(&format!(
            "INSERT INTO {} VALUES ({})",
            quote_ident(&sig.name),
            marks.join(", ")
        ))?;
        for row in db.tuples(&sig.name)? {
            let values: Vec<rusqlite::types::Value> = row.iter().map(to_sql_value).collect();
            stmt.execute(rusqlite::params_from_iter(values))?;
        }
    }
    tx.commit()?;
    Ok(())
}

fn read_value(v: ValueRef<'_>) -> Result<Option<Value>> {
    Ok(match v {
        ValueRef::Null => None,
        ValueRef::Integer(i) => Some(Value::Num(Rational::from_integer(i.into()))),
        ValueRef::Real(f) => Some(Value::Num(
            parse_rational(&f.to_string())
                .ok_or_else(|| Error::Eval(format!("cannot read {f} as a rational")))?,
        )),
        ValueRef::Text(t) => {
            let s = std::str::from_utf8(t).map_err(|e| Error::Eval(e.to_string()))?;
            Some(match parse_rational(s) {
                Some(r) => Value::Num(r),
                None => Value::str(s),
            })
        }
        ValueRef::Blob(_) => return Err(Error::Eval("unexpected blob".into())),
    })
}

fn bind(params: &[String], group: &[Value]) -> Vec<(String, rusqlite::types::Value)> {
    params
        .iter()
        .cloned()
        .zip(group.iter().map(to_sql_value))
        .collect()
}

fn query_one(conn: &Connection, sql: &str, params: &[String], group: &[Value]) -> Result<Option<Value>> {
    let mut stmt = conn.prepare(sql)?;
    let bound = bind(params, group);
    let refs: Vec<(&str, &dyn rusqlite::ToSql)> = bound
        .iter()
        .filter(|(name, _)| stmt.parameter_index(name).ok().flatten().is_some())
        .map(|(n, v)| (n.as_str(), v as &dyn rusqlite::ToSql))
        .collect();
    let mut rows = stmt.query(refs.as_slice())?;
    let row = rows
        .next()?
        .ok_or_else(|| Error::Eval("query returned no row".into()))?;
    read_value(row.get_ref(0)?)
}

/// Runs guard then answer for one group; `⊥` when the guard is 0 or the
/// answer is NULL.
pub fn run_script(conn: &Connection, script: &SqlScript, group: &[Value]) -> Result<RangeAnswer> {
    if group.len() != script.params.len() {
        return Err(Error::Query(format!(
            "{} group values for {} parameters",
            group.len(),
            script.params.len()
        )));
    }
    let certain = query_one(conn, &script.guard_sql, &script.params, group)?;
    if certain != Some(Value::int(1)) {
        return Ok(RangeAnswer::Bottom);
    }
    match query_one(conn, &script.answer_sql, &script.params, group)? {
        None => Ok(RangeAnswer::Bottom),
        Some(Value::Num(r)) => Ok(RangeAnswer::Value(r)),
        Some(other) => Err(Error::Eval(format!("non-numeric answer {other}"))),
    }
}

/// The candidate groups of a grouped script.
pub fn run_groups(conn: &Connection, script: &SqlScript) -> Result<Vec<Vec<Value>>> {
    let Some(sql) = &script.groups_sql else {
        return Ok(vec![Vec::new()]);
    };
    let mut stmt = conn.prepare(sql)?;
    let n = stmt.column_count();
    let mut rows = stmt.query([])?;
    let mut out = Vec::new();
    while let Some(row) = rows.next()? {
        let mut g = Vec::with_capacity(n);
        for i in 0..n {
            g.push(read_value(row.get_ref(i)?)?.ok_or_else(|| Error::Eval("NULL group value".into()))?);
        }
        out.push(g);
    }
    Ok(out)
}

/// Loads `db` into a fresh connection for `dsn` and evaluates every group.
pub fn execute(
    dsn: &str,
    db: &DatabaseInstance,
    script: &SqlScript,
) -> Result<Vec<(Vec<Value>, RangeAnswer)>> {
    let mut conn = open(dsn)?;
    load(&mut conn, db)?;
    run_groups(&conn, script)?
        .into_iter()
        .map(|g| {
            let a = run_script(&conn, script, &g)?;
            Ok((g, a))
        })
        .collect()
}
