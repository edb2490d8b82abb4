//! Which range bounds have a first-order rewriting with aggregates.
//!
//! Positive verdicts come from the acyclic attack graph plus the operator's
//! properties. Negative verdicts are only given for a cyclic attack graph or
//! for bodies isomorphic to one of the known hardness gadgets; anything else
//! is reported as unknown.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::aggregate::AggOp;
use crate::attack::build_attack_graph;
use crate::query::{freeze_free_vars, parse_query, AggQuery, Atom, PrimTerm, Term, Var, VarSet};
use crate::rewrite::{Route, Target};
use crate::schema::{NumericDomain, Schema, Signature};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Status {
    Rewritable,
    NotExpressible,
    Unknown,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Tags naming the result each verdict rests on.
pub mod citation {
    pub const CYCLIC: &str = "cyclic-attack-graph";
    pub const MONOTONE_GLB: &str = "monotone-associative-glb";
    pub const MIN_GLB: &str = "min-glb";
    pub const MINMAX_LUB: &str = "minmax-lub";
    pub const LUB_CHAIN: &str = "lub-descending-chain";
    pub const CHAIN_GADGET: &str = "descending-chain-gadget";
    pub const BOUNDED_CHAIN_GADGET: &str = "bounded-descending-chain-gadget";
    pub const NEGATIVE_SUM: &str = "negative-sum-gadget";
    pub const COUNT_DISTINCT: &str = "count-distinct-gadget";
    pub const OPEN: &str = "open-class";
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub target: Target,
    pub status: Status,
    pub route: Option<Route>,
    pub citation: &'static str,
    pub reason: String,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.target, self.status)?;
        if let Some(r) = self.route {
            write!(f, " ({r})")?;
        }
        write!(f, " [{}] {}", self.citation, self.reason)
    }
}

/// The hardness gadget bodies, compared up to renaming.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Gadget {
    /// `R(x | y, r), S1(y | x), S2(y | x)`
    Matching,
    /// `S1(x | c1), S2(y | c2), T(x, y | r)`
    Cut,
    /// `R(x | r)`
    SingleBinary,
}

fn gadget_pattern(g: Gadget) -> AggQuery {
    let (sigs, text) = match g {
        Gadget::Matching => (
            vec![
                Signature::new("R", 3, 1, &[3]),
                Signature::new("S1", 2, 1, &[]),
                Signature::new("S2", 2, 1, &[]),
            ],
            "SUM(r) <- R(x | y, r), S1(y | x), S2(y | x)",
        ),
        Gadget::Cut => (
            vec![
                Signature::new("S1", 2, 1, &[]),
                Signature::new("S2", 2, 1, &[]),
                Signature::new("T", 3, 2, &[3]),
            ],
            r#"SUM(r) <- S1(x | "c1"), S2(y | "c2"), T(x, y | r)"#,
        ),
        Gadget::SingleBinary => (
            vec![Signature::new("R", 2, 1, &[2])],
            "SUM(r) <- R(x | r)",
        ),
    };
    let schema = Schema::new(sigs.into_iter().map(|s| s.expect("valid gadget signature")))
        .expect("valid gadget schema");
    parse_query(text, &schema).expect("valid gadget query")
}

/// Whether the body of `q` is `pattern`'s body up to renaming of relations,
/// variables and constants, with the aggregated variables corresponding
/// (ignored for `COUNT(*)`). Constants may be identified with each other.
fn isomorphic(q: &AggQuery, pattern: &AggQuery) -> bool {
    if q.body.len() != pattern.body.len() {
        return false;
    }
    let n = q.body.len();
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        if atoms_match(q, pattern, &perm) {
            return true;
        }
        if !next_permutation(&mut perm) {
            return false;
        }
    }
}

fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).expect("pivot exists");
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

fn atoms_match(q: &AggQuery, pattern: &AggQuery, perm: &[usize]) -> bool {
    let mut forward: BTreeMap<&Var, &Var> = BTreeMap::new();
    let mut backward: BTreeMap<&Var, &Var> = BTreeMap::new();
    for (a, &pi) in q.body.iter().zip(perm) {
        let b = &pattern.body[pi];
        if a.signature.arity != b.signature.arity || a.signature.key_len != b.signature.key_len {
            return false;
        }
        for (s, t) in a.terms.iter().zip(&b.terms) {
            match (s, t) {
                (Term::Var(x), Term::Var(y)) => {
                    if *forward.entry(x).or_insert(y) != y || *backward.entry(y).or_insert(x) != x {
                        return false;
                    }
                }
                (Term::Const(_) | Term::Param(_), Term::Const(_)) => {}
                _ => return false,
            }
        }
    }
    match (&q.value, &pattern.value, q.agg) {
        (_, _, AggOp::Count) => true,
        (PrimTerm::Var(r), PrimTerm::Var(p), _) => forward.get(r) == Some(&p),
        _ => false,
    }
}

pub fn matching_gadget(q: &AggQuery) -> Option<Gadget> {
    let frozen = freeze_free_vars(q);
    [Gadget::Matching, Gadget::Cut, Gadget::SingleBinary]
        .into_iter()
        .find(|&g| isomorphic(&frozen, &gadget_pattern(g)))
}

fn verdict(target: Target, status: Status, route: Option<Route>, citation: &'static str, reason: String) -> Verdict {
    Verdict {
        target,
        status,
        route,
        citation,
        reason,
    }
}

pub fn classify(q: &AggQuery, target: Target, domain: NumericDomain) -> Verdict {
    let frozen = freeze_free_vars(q);
    if !build_attack_graph(&frozen.body).is_acyclic() {
        return verdict(
            target,
            Status::NotExpressible,
            None,
            citation::CYCLIC,
            "the attack graph is cyclic, so certainty of the body is not first-order".into(),
        );
    }
    let gadget = matching_gadget(q);
    let rewritable = |route, cite, reason: &str| {
        verdict(target, Status::Rewritable, Some(route), cite, reason.to_string())
    };
    let hard = |cite, reason: String| verdict(target, Status::NotExpressible, None, cite, reason);
    let open = |reason: String| verdict(target, Status::Unknown, None, citation::OPEN, reason);
    let op = q.agg;
    match target {
        Target::Glb => match op {
            AggOp::Min => rewritable(
                Route::MinGlb,
                citation::MIN_GLB,
                "MIN over all embeddings, guarded by certainty of the body",
            ),
            AggOp::Max | AggOp::Count => rewritable(
                Route::GeneralGlb,
                citation::MONOTONE_GLB,
                "monotone associative operator with an acyclic attack graph",
            ),
            AggOp::Sum if domain == NumericDomain::NonNegative => rewritable(
                Route::GeneralGlb,
                citation::MONOTONE_GLB,
                "SUM over non-negative numbers is monotone and associative",
            ),
            AggOp::Sum => match gadget {
                Some(Gadget::Cut) => hard(
                    citation::NEGATIVE_SUM,
                    "with -1 allowed, SUM has a bounded descending chain and the body is the cut gadget".into(),
                ),
                _ => open("SUM over possibly negative numbers is not monotone".into()),
            },
            AggOp::Avg | AggOp::Product => match gadget {
                Some(Gadget::Matching) => hard(
                    citation::CHAIN_GADGET,
                    format!("{op} has a descending chain and the body is the matching gadget"),
                ),
                Some(Gadget::Cut) => hard(
                    citation::BOUNDED_CHAIN_GADGET,
                    format!("{op} has a bounded descending chain and the body is the cut gadget"),
                ),
                _ => open(format!("{op} is neither monotone nor associative")),
            },
            AggOp::CountDistinct => match gadget {
                Some(Gadget::SingleBinary) => hard(
                    citation::COUNT_DISTINCT,
                    "COUNT_DISTINCT over a single binary relation is NP-hard".into(),
                ),
                _ => open("COUNT_DISTINCT is neither monotone nor associative".into()),
            },
        },
        Target::Lub => match op {
            AggOp::Min => rewritable(
                Route::MinLubReversed,
                citation::MINMAX_LUB,
                "the nested construction with MIN and MAX interchanged",
            ),
            AggOp::Max => rewritable(
                Route::MaxLubPlain,
                citation::MINMAX_LUB,
                "MAX over all embeddings, guarded by certainty of the body",
            ),
            AggOp::Sum | AggOp::Count | AggOp::Avg | AggOp::Product
                if gadget == Some(Gadget::Matching) =>
            {
                hard(
                    citation::LUB_CHAIN,
                    format!("the dual of {op} has a descending chain and the body is the matching gadget"),
                )
            }
            AggOp::Product if gadget == Some(Gadget::Cut) => hard(
                citation::LUB_CHAIN,
                "the dual of PRODUCT has a bounded descending chain and the body is the cut gadget".into(),
            ),
            other => open(format!("no known result for the lub of {other} on this body")),
        },
    }
}

/// Both targets.
pub fn classify_both(q: &AggQuery, domain: NumericDomain) -> [Verdict; 2] {
    [classify(q, Target::Glb, domain), classify(q, Target::Lub, domain)]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FuxmanClass {
    /// Body in the forest class, operator outside the aggregate class.
    Cforest,
    Caggforest,
    Neither,
}

impl fmt::Display for FuxmanClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Edge `R -> S` when a bound non-key variable of `R` occurs in `S`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FuxmanGraph {
    pub atoms: Vec<Atom>,
    pub edges: BTreeSet<(usize, usize)>,
}

/// `free` are the variables treated as free (group variables and the
/// aggregated variable).
pub fn fuxman_graph(body: &[Atom], free: &VarSet) -> FuxmanGraph {
    let mut edges = BTreeSet::new();
    for (i, r) in body.iter().enumerate() {
        for (j, s) in body.iter().enumerate() {
            if i != j
                && r.nonkey_vars()
                    .iter()
                    .any(|v| !free.contains(v) && s.vars().contains(v))
            {
                edges.insert((i, j));
            }
        }
    }
    FuxmanGraph {
        atoms: body.to_vec(),
        edges,
    }
}

impl FuxmanGraph {
    /// At most one parent per node and no directed cycle.
    pub fn is_forest(&self) -> bool {
        let n = self.atoms.len();
        let mut parent: Vec<Option<usize>> = vec![None; n];
        for &(i, j) in &self.edges {
            if parent[j].replace(i).is_some() {
                return false;
            }
        }
        (0..n).all(|start| {
            let mut seen = vec![false; n];
            let mut cur = start;
            while let Some(p) = parent[cur] {
                if seen[p] {
                    return false;
                }
                seen[p] = true;
                cur = p;
            }
            true
        })
    }
}

fn in_cforest(body: &[Atom], group: &VarSet, free: &VarSet) -> bool {
    let g = fuxman_graph(body, free);
    g.is_forest()
        && g.edges.iter().all(|&(i, j)| {
            let nonkey = body[i].nonkey_vars();
            body[j]
                .key_vars()
                .iter()
                .filter(|v| !group.contains(v))
                .all(|v| nonkey.contains(v))
        })
}

pub fn fuxman_membership(q: &AggQuery) -> FuxmanClass {
    let group: VarSet = q.free_vars.iter().chain(&q.frozen).cloned().collect();
    let mut free = group.clone();
    if let PrimTerm::Var(u) = &q.value {
        if q.agg != AggOp::Count {
            free.insert(u.clone());
        }
    }
    if !in_cforest(&q.body, &group, &free) {
        return FuxmanClass::Neither;
    }
    match q.agg {
        AggOp::Min | AggOp::Max | AggOp::Sum | AggOp::Count => FuxmanClass::Caggforest,
        _ => FuxmanClass::Cforest,
    }
}

/// Schema used by the verdict fixtures and tests.
pub fn fixture_schema() -> Arc<Schema> {
    Arc::new(
        Schema::new(
            [
                Signature::new("R", 3, 1, &[3]),
                Signature::new("S1", 2, 1, &[]),
                Signature::new("S2", 2, 1, &[]),
                Signature::new("T", 3, 2, &[3]),
                Signature::new("A", 2, 1, &[]),
                Signature::new("B", 2, 1, &[]),
            ]
            .into_iter()
            .map(|s| s.expect("valid fixture signature")),
        )
        .expect("valid fixture schema"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::new([
            Signature::new("R", 3, 1, &[3]).unwrap(),
            Signature::new("S1", 2, 1, &[]).unwrap(),
            Signature::new("S2", 2, 1, &[]).unwrap(),
            Signature::new("T", 3, 2, &[3]).unwrap(),
            Signature::new("P", 2, 1, &[]).unwrap(),
            Signature::new("Q", 4, 2, &[4]).unwrap(),
            Signature::new("V", 2, 1, &[2]).unwrap(),
            Signature::new("W", 3, 1, &[3]).unwrap(),
        ])
        .unwrap()
    }

    fn q(text: &str) -> AggQuery {
        parse_query(text, &schema()).unwrap()
    }

    #[test]
    fn gadget_shapes_up_to_renaming() {
        assert_eq!(
            matching_gadget(&q("AVG(r) <- R(x | y, r), S1(y | x), S2(y | x)")),
            Some(Gadget::Matching)
        );
        assert_eq!(
            matching_gadget(&q("AVG(m) <- S2(b | a), W(a | b, m), S1(b | a)")),
            Some(Gadget::Matching)
        );
        assert_eq!(
            matching_gadget(&q(r#"AVG(r) <- T(x, y | r), S1(x | "k"), S2(y | "k")"#)),
            Some(Gadget::Cut)
        );
        assert_eq!(matching_gadget(&q("COUNT_DISTINCT(r) <- V(x | r)")), Some(Gadget::SingleBinary));
        assert_eq!(matching_gadget(&q("AVG(r) <- R(x | y, r), S1(y | x), S2(y | z)")), None);
        // the aggregated variable must be the one at the numeric end
        assert_eq!(matching_gadget(&q(r#"AVG(r) <- S1(x | "c"), S2(y | "c"), T(x, y | r), P(x | "e")"#)), None);
    }

    #[test]
    fn acyclic_verdicts() {
        let g0 = q(r#"SUM(r) <- P(x | y), Q(y, z | "d", r)"#);
        let v = classify(&g0, Target::Glb, NumericDomain::NonNegative);
        assert_eq!((v.status, v.route, v.citation), (Status::Rewritable, Some(Route::GeneralGlb), citation::MONOTONE_GLB));
        let v = classify(&g0, Target::Lub, NumericDomain::NonNegative);
        assert_eq!((v.status, v.citation), (Status::Unknown, citation::OPEN));
        let v = classify(&g0, Target::Glb, NumericDomain::Unconstrained);
        assert_eq!(v.status, Status::Unknown);
    }

    #[test]
    fn cyclic_verdict() {
        let c = q("COUNT(*) <- S1(x | y), S2(y | x)");
        for t in [Target::Glb, Target::Lub] {
            let v = classify(&c, t, NumericDomain::NonNegative);
            assert_eq!((v.status, v.citation), (Status::NotExpressible, citation::CYCLIC));
        }
    }

    #[test]
    fn fuxman_classes() {
        assert_eq!(
            fuxman_membership(&q(r#"SUM(r) <- S1(x | "c1"), S2(y | "c2"), T(x, y | r)"#)),
            FuxmanClass::Caggforest
        );
        assert_eq!(
            fuxman_membership(&q(r#"SUM(r) <- P(x | y), Q(y, z | "d", r)"#)),
            FuxmanClass::Neither
        );
        assert_eq!(fuxman_membership(&q("AVG(r) <- V(x | r)")), FuxmanClass::Cforest);
        assert_eq!(fuxman_membership(&q("SUM(r) <- V(x | r)")), FuxmanClass::Caggforest);
        // full-key join from P's non-key into the key of R
        assert_eq!(
            fuxman_membership(&q("MAX(r) <- P(x | y), R(y | z, r)")),
            FuxmanClass::Caggforest
        );
    }

    #[test]
    fn forest_rejects_two_parents() {
        let b = q("COUNT(*) <- S1(x | z), S2(y | z), P(z | w)").body;
        let g = fuxman_graph(&b, &VarSet::new());
        assert!(!g.is_forest());
    }
}
