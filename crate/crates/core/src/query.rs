//! Aggregation queries `AGG(r) <- body` over self-join-free bodies.
//!
//! Surface syntax:
//!
//! ```text
//! SUM(y) <- Dealers("Smith" | t), Stock(p, t | y)
//! (x, SUM(y)) <- Dealers(x | t), Stock(p, t | y)
//! COUNT(*) <- R(x | y)
//! ```
//!
//! Variables are lowercase identifiers, opaque constants are double-quoted,
//! numbers are rational literals (`3`, `0.5`, `2/3`, `-1`) and may only sit
//! at numeric positions. `|` splits key from non-key positions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::aggregate::AggOp;
use crate::error::{Error, Result};
use crate::schema::{Schema, Signature};
use crate::value::{format_rational, int, parse_rational, Rational, Value};

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(Arc<str>);

impl Var {
    pub fn new(name: &str) -> Self {
        Var(Arc::from(name))
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub type VarSet = BTreeSet<Var>;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Var(Var),
    Const(Value),
    /// A frozen variable: behaves as a constant whose value is supplied at
    /// evaluation time under the variable's own name.
    Param(Var),
}

impl Term {
    pub fn var(name: &str) -> Self {
        Term::Var(Var::new(name))
    }

    pub fn as_var(&self) -> Option<&Var> {
        match self {
            Term::Var(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "{v}"),
            Term::Const(Value::Str(s)) => write_quoted(f, s),
            Term::Const(Value::Num(r)) => f.write_str(&format_rational(r)),
            Term::Param(v) => write!(f, "⟨{v}⟩"),
        }
    }
}

fn write_quoted(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Atom {
    pub signature: Arc<Signature>,
    pub terms: Vec<Term>,
}

impl Atom {
    pub fn relation(&self) -> &str {
        &self.signature.name
    }

    pub fn key_terms(&self) -> &[Term] {
        &self.terms[..self.signature.key_len]
    }

    pub fn nonkey_terms(&self) -> &[Term] {
        &self.terms[self.signature.key_len..]
    }

    pub fn vars(&self) -> VarSet {
        self.terms.iter().filter_map(Term::as_var).cloned().collect()
    }

    pub fn key_vars(&self) -> VarSet {
        self.key_terms().iter().filter_map(Term::as_var).cloned().collect()
    }

    pub fn nonkey_vars(&self) -> VarSet {
        let key = self.key_vars();
        self.vars().difference(&key).cloned().collect()
    }

    /// Variables in order of first occurrence.
    pub fn vars_in_order(&self) -> Vec<Var> {
        let mut seen = BTreeSet::new();
        self.terms
            .iter()
            .filter_map(Term::as_var)
            .filter(|v| seen.insert((*v).clone()))
            .cloned()
            .collect()
    }

    pub fn map_terms(&self, f: impl Fn(&Term) -> Term) -> Atom {
        Atom {
            signature: self.signature.clone(),
            terms: self.terms.iter().map(f).collect(),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.relation())?;
        let k = self.signature.key_len;
        for (i, t) in self.terms.iter().enumerate() {
            if i == k {
                f.write_str(if k == 0 { "| " } else { " | " })?;
            } else if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{t}")?;
        }
        if k == self.terms.len() {
            f.write_str(" |")?;
        }
        f.write_str(")")
    }
}

pub fn vars_of(atoms: &[Atom]) -> VarSet {
    atoms.iter().flat_map(Atom::vars).collect()
}

/// Variables of `atoms` in order of first occurrence.
pub fn vars_in_order(atoms: &[Atom]) -> Vec<Var> {
    let mut seen = BTreeSet::new();
    atoms
        .iter()
        .flat_map(Atom::vars_in_order)
        .filter(|v| seen.insert(v.clone()))
        .collect()
}

/// The aggregated primitive term.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum PrimTerm {
    Var(Var),
    Const(Rational),
}

impl fmt::Display for PrimTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrimTerm::Var(v) => write!(f, "{v}"),
            PrimTerm::Const(r) => f.write_str(&format_rational(r)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AggQuery {
    pub agg: AggOp,
    pub value: PrimTerm,
    pub free_vars: Vec<Var>,
    pub body: Vec<Atom>,
    /// Present after [`freeze_free_vars`]: the group variables now appearing
    /// as parameters in the body.
    pub frozen: Vec<Var>,
}

impl AggQuery {
    /// Checks self-join-freeness, numeric typing, and head variables.
    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for atom in &self.body {
            if !names.insert(atom.relation()) {
                return Err(Error::Query(format!(
                    "self-join on `{}`: queries with self-joins are unsupported",
                    atom.relation()
                )));
            }
            if atom.terms.len() != atom.signature.arity {
                return Err(Error::Query(format!(
                    "{} has arity {}, got {} terms",
                    atom.relation(),
                    atom.signature.arity,
                    atom.terms.len()
                )));
            }
        }
        let mut numeric: BTreeMap<Var, bool> = BTreeMap::new();
        for atom in &self.body {
            for (i, t) in atom.terms.iter().enumerate() {
                let is_num = atom.signature.is_numeric(i);
                match t {
                    Term::Var(v) | Term::Param(v) => {
                        if let Some(prev) = numeric.insert(v.clone(), is_num) {
                            if prev != is_num {
                                return Err(Error::Query(format!(
                                    "variable `{v}` occurs at both numeric and non-numeric positions"
                                )));
                            }
                        }
                    }
                    Term::Const(Value::Num(_)) if !is_num => {
                        return Err(Error::Query(format!(
                            "number at non-numeric position {} of {}",
                            i + 1,
                            atom.relation()
                        )))
                    }
                    Term::Const(Value::Str(s)) if is_num => {
                        return Err(Error::Query(format!(
                            "\"{s}\" at numeric position {} of {} is not a number",
                            i + 1,
                            atom.relation()
                        )))
                    }
                    Term::Const(_) => {}
                }
            }
        }
        if let PrimTerm::Var(r) = &self.value {
            match numeric.get(r) {
                None => {
                    return Err(Error::Query(format!(
                        "aggregated variable `{r}` does not occur in the body"
                    )))
                }
                Some(false) => {
                    return Err(Error::Query(format!(
                        "aggregated variable `{r}` is not at a numeric position"
                    )))
                }
                Some(true) => {}
            }
            if self.free_vars.contains(r) || self.frozen.contains(r) {
                return Err(Error::Query(format!(
                    "aggregated variable `{r}` cannot be a group variable"
                )));
            }
        }
        let body_vars = vars_of(&self.body);
        let mut seen = BTreeSet::new();
        for x in &self.free_vars {
            if !body_vars.contains(x) {
                return Err(Error::Query(format!("free variable `{x}` not in the body")));
            }
            if !seen.insert(x) {
                return Err(Error::Query(format!("free variable `{x}` repeated")));
            }
        }
        Ok(())
    }

    pub fn is_boolean(&self) -> bool {
        self.free_vars.is_empty()
    }

    /// The body with the group variables replaced by `values`.
    pub fn instantiate(&self, values: &[Value]) -> Result<AggQuery> {
        let groups: Vec<&Var> = if self.frozen.is_empty() {
            self.free_vars.iter().collect()
        } else {
            self.frozen.iter().collect()
        };
        if groups.len() != values.len() {
            return Err(Error::Query(format!(
                "{} group values for {} group variables",
                values.len(),
                groups.len()
            )));
        }
        let map: BTreeMap<&Var, &Value> = groups.into_iter().zip(values).collect();
        let body = self
            .body
            .iter()
            .map(|a| {
                a.map_terms(|t| match t {
                    Term::Var(v) | Term::Param(v) if map.contains_key(v) => {
                        Term::Const(map[v].clone())
                    }
                    other => other.clone(),
                })
            })
            .collect();
        Ok(AggQuery {
            agg: self.agg,
            value: self.value.clone(),
            free_vars: Vec::new(),
            body,
            frozen: Vec::new(),
        })
    }

    /// The aggregated term with `COUNT` normalized to the constant 1.
    pub fn effective_value(&self) -> PrimTerm {
        match self.agg {
            AggOp::Count => PrimTerm::Const(int(1)),
            _ => self.value.clone(),
        }
    }
}

impl fmt::Display for AggQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head = match (self.agg, &self.value) {
            (AggOp::Count, PrimTerm::Const(c)) if *c == int(1) => "COUNT(*)".to_string(),
            (op, v) => format!("{op}({v})"),
        };
        let groups: Vec<&Var> = self.free_vars.iter().chain(&self.frozen).collect();
        if groups.is_empty() {
            write!(f, "{head}")?;
        } else {
            f.write_str("(")?;
            for x in groups {
                write!(f, "{x}, ")?;
            }
            write!(f, "{head})")?;
        }
        f.write_str(" <- ")?;
        for (i, a) in self.body.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

/// `lhs -> rhs` over variable names.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Fd {
    pub lhs: VarSet,
    pub rhs: VarSet,
}

impl fmt::Display for Fd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |s: &VarSet| s.iter().map(Var::name).collect::<Vec<_>>().join("");
        write!(f, "{}→{}", join(&self.lhs), join(&self.rhs))
    }
}

pub type FdSet = Vec<Fd>;

/// One dependency `key(F) -> vars(F)` per atom.
pub fn fdset(body: &[Atom]) -> FdSet {
    body.iter()
        .map(|a| Fd {
            lhs: a.key_vars(),
            rhs: a.vars(),
        })
        .collect()
}

/// Smallest superset of `start` closed under `fds`.
pub fn fd_closure(fds: &[Fd], start: &VarSet) -> VarSet {
    let mut closure = start.clone();
    let mut used = vec![false; fds.len()];
    loop {
        let mut changed = false;
        for (fd, done) in fds.iter().zip(used.iter_mut()) {
            if !*done && fd.lhs.is_subset(&closure) {
                *done = true;
                for v in &fd.rhs {
                    changed |= closure.insert(v.clone());
                }
            }
        }
        if !changed {
            return closure;
        }
    }
}

/// Replaces each free variable by a parameter of the same name.
pub fn freeze_free_vars(q: &AggQuery) -> AggQuery {
    if q.free_vars.is_empty() {
        return q.clone();
    }
    let frozen: VarSet = q.free_vars.iter().cloned().collect();
    let body = q
        .body
        .iter()
        .map(|a| {
            a.map_terms(|t| match t {
                Term::Var(v) if frozen.contains(v) => Term::Param(v.clone()),
                other => other.clone(),
            })
        })
        .collect();
    AggQuery {
        agg: q.agg,
        value: q.value.clone(),
        free_vars: Vec::new(),
        body,
        frozen: q.free_vars.clone(),
    }
}

pub fn parse_query(text: &str, schema: &Schema) -> Result<AggQuery> {
    let mut p = Parser {
        src: text,
        pos: 0,
        schema,
    };
    let q = p.query()?;
    q.validate()?;
    Ok(q)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    schema: &'a Schema,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.rest().chars().next()
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) -> Result<()> {
        if self.eat(token) {
            Ok(())
        } else {
            self.err(format!("expected `{token}`"))
        }
    }

    fn ident(&mut self) -> Result<&'a str> {
        self.skip_ws();
        let rest = self.rest();
        let len = rest
            .char_indices()
            .find(|&(i, c)| !(c.is_ascii_alphanumeric() || c == '_' || (i == 0 && c == '_')))
            .map_or(rest.len(), |(i, _)| i);
        if len == 0 || !rest.starts_with(|c: char| c.is_ascii_alphabetic()) {
            return self.err("expected an identifier");
        }
        self.pos += len;
        Ok(&rest[..len])
    }

    fn number(&mut self) -> Result<Rational> {
        self.skip_ws();
        let rest = self.rest();
        let len = rest
            .char_indices()
            .find(|&(i, c)| {
                !(c.is_ascii_digit() || c == '.' || c == '/' || ((c == '-' || c == '+') && i == 0))
            })
            .map_or(rest.len(), |(i, _)| i);
        match parse_rational(&rest[..len]) {
            Some(r) => {
                self.pos += len;
                Ok(r)
            }
            None => self.err("expected a number"),
        }
    }

    fn string(&mut self) -> Result<String> {
        self.expect("\"")?;
        let mut out = String::new();
        let mut chars = self.rest().char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    self.pos += i + 1;
                    return Ok(out);
                }
                '\\' => match chars.next() {
                    Some((_, e)) => out.push(e),
                    None => break,
                },
                c => out.push(c),
            }
        }
        self.pos = self.src.len();
        self.err("unterminated string")
    }

    fn is_var_name(name: &str) -> bool {
        name.starts_with(|c: char| c.is_ascii_lowercase())
    }

    fn query(&mut self) -> Result<AggQuery> {
        let mut free_vars = Vec::new();
        let (agg, value) = if self.peek() == Some('(') {
            self.expect("(")?;
            loop {
                let save = self.pos;
                let name = self.ident()?;
                if Self::is_var_name(name) {
                    free_vars.push(Var::new(name));
                    self.expect(",")?;
                } else {
                    self.pos = save;
                    break;
                }
            }
            let head = self.agg_head()?;
            self.expect(")")?;
            head
        } else {
            self.agg_head()?
        };
        self.expect("<-")?;
        let mut body = vec![self.atom()?];
        while self.eat(",") {
            body.push(self.atom()?);
        }
        self.skip_ws();
        if !self.rest().is_empty() {
            return self.err("trailing input");
        }
        Ok(AggQuery {
            agg,
            value,
            free_vars,
            body,
            frozen: Vec::new(),
        })
    }

    fn agg_head(&mut self) -> Result<(AggOp, PrimTerm)> {
        let start = self.pos;
        let name = self.ident()?;
        let agg: AggOp = match name.parse() {
            Ok(op) => op,
            Err(_) => {
                self.pos = start;
                return self.err(format!("unknown aggregate `{name}`"));
            }
        };
        self.expect("(")?;
        let value = if agg == AggOp::Count && self.eat("*") {
            PrimTerm::Const(int(1))
        } else {
            match self.peek() {
                Some(c) if c.is_ascii_lowercase() => PrimTerm::Var(Var::new(self.ident()?)),
                Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                    PrimTerm::Const(self.number()?)
                }
                _ => return self.err("expected a variable or a number"),
            }
        };
        self.expect(")")?;
        let value = if agg == AggOp::Count {
            PrimTerm::Const(int(1))
        } else {
            value
        };
        Ok((agg, value))
    }

    fn atom(&mut self) -> Result<Atom> {
        let start = self.pos;
        let name = self.ident()?;
        let signature = match self.schema.get(name) {
            Some(s) => s.clone(),
            None => {
                self.pos = start;
                return Err(Error::UnknownRelation(name.to_string()));
            }
        };
        self.expect("(")?;
        let mut key = Vec::new();
        let mut nonkey = Vec::new();
        let mut in_key = true;
        if !self.eat("|") {
            loop {
                key.push(self.term()?);
                if self.eat(",") {
                    continue;
                }
                if self.eat("|") {
                    break;
                }
                if self.peek() == Some(')') {
                    return self.err("expected `|` separating key from non-key terms");
                }
                return self.err("expected `,` or `|`");
            }
        }
        if self.peek() != Some(')') {
            in_key = false;
            loop {
                nonkey.push(self.term()?);
                if !self.eat(",") {
                    break;
                }
            }
        }
        let _ = in_key;
        self.expect(")")?;
        if key.len() != signature.key_len {
            return Err(Error::Query(format!(
                "{name} has a key of length {}, got {}",
                signature.key_len,
                key.len()
            )));
        }
        if key.len() + nonkey.len() != signature.arity {
            return Err(Error::Query(format!(
                "{name} has arity {}, got {} terms",
                signature.arity,
                key.len() + nonkey.len()
            )));
        }
        key.extend(nonkey);
        Ok(Atom {
            signature,
            terms: key,
        })
    }

    fn term(&mut self) -> Result<Term> {
        match self.peek() {
            Some('"') => Ok(Term::Const(Value::str(&self.string()?))),
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                Ok(Term::Const(Value::Num(self.number()?)))
            }
            Some(c) if c.is_ascii_lowercase() => Ok(Term::Var(Var::new(self.ident()?))),
            Some(c) if c.is_ascii_alphabetic() => {
                self.err("constants must be double-quoted; variables start with a lowercase letter")
            }
            _ => self.err("expected a term"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::new([
            Signature::new("Dealers", 2, 1, &[]).unwrap(),
            Signature::new("Stock", 3, 2, &[3]).unwrap(),
            Signature::new("R", 2, 1, &[]).unwrap(),
            Signature::new("S", 4, 2, &[4]).unwrap(),
            Signature::new("F", 2, 2, &[]).unwrap(),
        ])
        .unwrap()
    }

    fn vs(names: &[&str]) -> VarSet {
        names.iter().map(|n| Var::new(n)).collect()
    }

    #[test]
    fn parses_smith_query() {
        let s = schema();
        let q = parse_query(r#"SUM(y) <- Dealers("Smith" | t), Stock(p, t | y)"#, &s).unwrap();
        assert_eq!(q.agg, AggOp::Sum);
        assert_eq!(q.value, PrimTerm::Var(Var::new("y")));
        assert!(q.free_vars.is_empty());
        assert_eq!(q.body.len(), 2);
        assert_eq!(q.body[0].terms[0], Term::Const(Value::str("Smith")));
        assert_eq!(q.body[1].key_vars(), vs(&["p", "t"]));
        assert_eq!(
            q.to_string(),
            r#"SUM(y) <- Dealers("Smith" | t), Stock(p, t | y)"#
        );
    }

    #[test]
    fn parses_group_by_query() {
        let q = parse_query("(x, SUM(y)) <- Dealers(x | t), Stock(p, t | y)", &schema()).unwrap();
        assert_eq!(q.free_vars, vec![Var::new("x")]);
        assert_eq!(q.to_string(), "(x, SUM(y)) <- Dealers(x | t), Stock(p, t | y)");
    }

    #[test]
    fn rejects_self_join() {
        let err = parse_query("SUM(r) <- R(x|y), R(y|x)", &schema()).unwrap_err();
        assert!(matches!(err, Error::Query(m) if m.contains("self-join")));
    }

    #[test]
    fn rejects_bad_queries() {
        let s = schema();
        let cases = [
            "SUM(t) <- Dealers(x | t)",
            "SUM(y) <- Nope(x | y)",
            "SUM(y) <- Stock(p | y)",
            "SUM(y) <- Stock(p, t | y, z)",
            "SUM(z) <- Stock(p, t | y)",
            "MEDIAN(y) <- Stock(p, t | y)",
            "SUM(y) <- Stock(p, 3 | y)",
            "SUM(y) <- Stock(p, t | \"35\")",
            "SUM(y) <- Stock(P, t | y)",
            "(y, SUM(y)) <- Stock(p, t | y)",
            "(q, SUM(y)) <- Stock(p, t | y)",
            "SUM(y) <- Stock(p, t | y) junk",
            "SUM(y) <- Stock(p, t, y)",
        ];
        for c in cases {
            assert!(parse_query(c, &s).is_err(), "{c}");
        }
    }

    #[test]
    fn count_star_and_constants() {
        let s = schema();
        let q = parse_query("COUNT(*) <- R(x | y)", &s).unwrap();
        assert_eq!(q.agg, AggOp::Count);
        assert_eq!(q.value, PrimTerm::Const(int(1)));
        assert_eq!(q.to_string(), "COUNT(*) <- R(x | y)");
        let q = parse_query("SUM(1/2) <- Stock(p, t | 35)", &s).unwrap();
        assert_eq!(q.to_string(), "SUM(1/2) <- Stock(p, t | 35)");
        let q = parse_query("SUM(1) <- F(x, y |)", &s).unwrap();
        assert_eq!(q.to_string(), "SUM(1) <- F(x, y |)");
    }

    #[test]
    fn fdset_of_partial_join() {
        let q = parse_query("SUM(r) <- R(x | y), S(y, z | \"d\", r)", &schema()).unwrap();
        let fds = fdset(&q.body);
        assert_eq!(fds.len(), 2);
        assert_eq!(fds[0], Fd { lhs: vs(&["x"]), rhs: vs(&["x", "y"]) });
        assert_eq!(fds[1], Fd { lhs: vs(&["y", "z"]), rhs: vs(&["y", "z", "r"]) });
        assert_eq!(fds[0].to_string(), "x→xy");
    }

    #[test]
    fn fdset_edge_cases() {
        let q = parse_query("SUM(1) <- F(x, y |)", &schema()).unwrap();
        assert_eq!(fdset(&q.body), vec![Fd { lhs: vs(&["x", "y"]), rhs: vs(&["x", "y"]) }]);
        assert!(fdset(&[]).is_empty());
    }

    #[test]
    fn closures() {
        let fds = vec![
            Fd { lhs: vs(&["x"]), rhs: vs(&["y"]) },
            Fd { lhs: vs(&["y", "z"]), rhs: vs(&["r"]) },
        ];
        assert_eq!(fd_closure(&fds, &vs(&["y", "z"])), vs(&["y", "z", "r"]));
        assert_eq!(fd_closure(&fds, &vs(&["x"])), vs(&["x", "y"]));
        assert_eq!(fd_closure(&fds, &vs(&[])), vs(&[]));
        assert_eq!(fd_closure(&fds, &vs(&["x", "z"])), vs(&["x", "y", "z", "r"]));
    }

    #[test]
    fn freezing() {
        let s = schema();
        let q = parse_query("(x, SUM(y)) <- Dealers(x | t), Stock(p, t | y)", &s).unwrap();
        let f = freeze_free_vars(&q);
        assert_eq!(f.frozen, vec![Var::new("x")]);
        assert_eq!(f.body[0].terms[0], Term::Param(Var::new("x")));
        assert!(!vars_of(&f.body).contains(&Var::new("x")));

        let plain = parse_query("SUM(y) <- Stock(p, t | y)", &s).unwrap();
        assert_eq!(freeze_free_vars(&plain), plain);

        let two = parse_query("(p, t, SUM(y)) <- Stock(p, t | y)", &s).unwrap();
        let f = freeze_free_vars(&two);
        assert_eq!(f.body[0].terms[0], Term::Param(Var::new("p")));
        assert_eq!(f.body[0].terms[1], Term::Param(Var::new("t")));
        assert_ne!(f.body[0].terms[0], f.body[0].terms[1]);
    }

    #[test]
    fn instantiate_group() {
        let s = schema();
        let q = parse_query("(x, SUM(y)) <- Dealers(x | t), Stock(p, t | y)", &s).unwrap();
        let g = q.instantiate(&[Value::str("James")]).unwrap();
        assert_eq!(g.to_string(), r#"SUM(y) <- Dealers("James" | t), Stock(p, t | y)"#);
        let g2 = freeze_free_vars(&q).instantiate(&[Value::str("James")]).unwrap();
        assert_eq!(g, g2);
    }
}
