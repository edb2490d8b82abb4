//! Attacks between atoms of a self-join-free body.
//!
//! `keycl(F)` is the closure of `key(F)` under the key dependencies of every
//! other atom. `F` attacks `x` when a path of co-occurring variables leads
//! from a non-key variable of `F` to `x` without touching `keycl(F)`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use crate::query::{fd_closure, fdset, vars_of, Atom, Var, VarSet};

pub fn keycl(index: usize, body: &[Atom]) -> VarSet {
    let others: Vec<Atom> = body
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != index)
        .map(|(_, a)| a.clone())
        .collect();
    let closure = fd_closure(&fdset(&others), &body[index].key_vars());
    let all = vars_of(body);
    closure.intersection(&all).cloned().collect()
}

/// Every variable attacked by `body[index]`, given its `keycl`.
fn attacked_from(index: usize, body: &[Atom], closure: &VarSet) -> VarSet {
    let mut seen: VarSet = BTreeSet::new();
    let mut queue: VecDeque<Var> = VecDeque::new();
    for v in body[index].nonkey_vars() {
        if !closure.contains(&v) && seen.insert(v.clone()) {
            queue.push_back(v);
        }
    }
    let atom_vars: Vec<VarSet> = body.iter().map(Atom::vars).collect();
    while let Some(v) = queue.pop_front() {
        for vars in atom_vars.iter().filter(|vs| vs.contains(&v)) {
            for w in vars {
                if !closure.contains(w) && seen.insert(w.clone()) {
                    queue.push_back(w.clone());
                }
            }
        }
    }
    seen
}

pub fn attacks_variable(index: usize, x: &Var, body: &[Atom]) -> bool {
    let closure = keycl(index, body);
    attacked_from(index, body, &closure).contains(x)
}

#[derive(Clone, Debug)]
pub struct AttackGraph {
    pub atoms: Vec<Atom>,
    pub keycl: Vec<VarSet>,
    pub attacked: Vec<VarSet>,
    /// `(from, to)` atom indices.
    pub edges: BTreeSet<(usize, usize)>,
}

pub fn build_attack_graph(body: &[Atom]) -> AttackGraph {
    let keycl: Vec<VarSet> = (0..body.len()).map(|i| keycl(i, body)).collect();
    let attacked: Vec<VarSet> = (0..body.len())
        .map(|i| attacked_from(i, body, &keycl[i]))
        .collect();
    let mut edges = BTreeSet::new();
    for (i, hits) in attacked.iter().enumerate() {
        for (j, g) in body.iter().enumerate() {
            if i != j && g.vars().iter().any(|v| hits.contains(v)) {
                edges.insert((i, j));
            }
        }
    }
    AttackGraph {
        atoms: body.to_vec(),
        keycl,
        attacked,
        edges,
    }
}

impl AttackGraph {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.len()];
        for &(_, j) in &self.edges {
            deg[j] += 1;
        }
        deg
    }

    /// Unattacked atoms first; among the available ones the earliest in body
    /// order wins. `None` when cyclic.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut deg = self.in_degrees();
        let mut done = vec![false; self.len()];
        let mut order = Vec::with_capacity(self.len());
        while order.len() < self.len() {
            let next = (0..self.len()).find(|&i| !done[i] && deg[i] == 0)?;
            done[next] = true;
            order.push(next);
            for &(i, j) in &self.edges {
                if i == next {
                    deg[j] -= 1;
                }
            }
        }
        Some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    /// Every topological sort, in lexicographic order of index sequences,
    /// stopping after `limit`.
    pub fn all_topological_orders(&self, limit: usize) -> Vec<Vec<usize>> {
        fn go(
            g: &AttackGraph,
            deg: &mut Vec<usize>,
            done: &mut Vec<bool>,
            prefix: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
            limit: usize,
        ) {
            if out.len() >= limit {
                return;
            }
            if prefix.len() == g.len() {
                out.push(prefix.clone());
                return;
            }
            for i in 0..g.len() {
                if done[i] || deg[i] != 0 {
                    continue;
                }
                done[i] = true;
                prefix.push(i);
                for &(a, b) in &g.edges {
                    if a == i {
                        deg[b] -= 1;
                    }
                }
                go(g, deg, done, prefix, out, limit);
                for &(a, b) in &g.edges {
                    if a == i {
                        deg[b] += 1;
                    }
                }
                prefix.pop();
                done[i] = false;
            }
        }
        let mut out = Vec::new();
        go(
            self,
            &mut self.in_degrees(),
            &mut vec![false; self.len()],
            &mut Vec::new(),
            &mut out,
            limit,
        );
        out
    }

    pub fn is_transitive(&self) -> bool {
        self.edges.iter().all(|&(a, b)| {
            self.edges
                .iter()
                .filter(|&&(c, _)| c == b)
                .all(|&(_, d)| a == d || self.has_edge(a, d))
        })
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph attacks {\n");
        for (i, a) in self.atoms.iter().enumerate() {
            let label = a.to_string().replace('\\', "\\\\").replace('"', "\\\"");
            let cl: Vec<&str> = self.keycl[i].iter().map(Var::name).collect();
            let _ = writeln!(
                out,
                "  n{i} [label=\"{label}\\nkeycl = {{{}}}\"];",
                cl.join(", ")
            );
        }
        for &(i, j) in &self.edges {
            let _ = writeln!(out, "  n{i} -> n{j};");
        }
        out.push_str("}\n");
        out
    }
}

/// The atoms in attack order, or `None` when the graph is cyclic.
pub fn acyclic_topological_sort(g: &AttackGraph) -> Option<Vec<Atom>> {
    g.topological_order()
        .map(|order| order.into_iter().map(|i| g.atoms[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::parse_query;
    use crate::schema::{Schema, Signature};

    fn schema() -> Schema {
        Schema::new([
            Signature::new("R", 2, 1, &[]).unwrap(),
            Signature::new("S", 4, 2, &[4]).unwrap(),
            Signature::new("Dealers", 2, 1, &[]).unwrap(),
            Signature::new("Stock", 3, 2, &[3]).unwrap(),
            Signature::new("S2", 2, 1, &[]).unwrap(),
            Signature::new("T", 2, 1, &[]).unwrap(),
            Signature::new("U", 2, 1, &[]).unwrap(),
        ])
        .unwrap()
    }

    fn body(q: &str) -> Vec<Atom> {
        parse_query(q, &schema()).unwrap().body
    }

    fn vs(names: &[&str]) -> VarSet {
        names.iter().map(|n| Var::new(n)).collect()
    }

    #[test]
    fn partial_join_keycl() {
        let b = body(r#"SUM(r) <- R(x | y), S(y, z | "d", r)"#);
        assert_eq!(keycl(0, &b), vs(&["x"]));
        // x -> y is the only other dependency; it does not fire from {y, z}
        assert_eq!(keycl(1, &b), vs(&["y", "z"]));
    }

    #[test]
    fn partial_join_single_attack() {
        let b = body(r#"SUM(r) <- R(x | y), S(y, z | "d", r)"#);
        let g = build_attack_graph(&b);
        assert_eq!(g.edges, BTreeSet::from([(0, 1)]));
        assert!(attacks_variable(0, &Var::new("y"), &b));
        assert!(attacks_variable(0, &Var::new("r"), &b));
        assert!(!attacks_variable(1, &Var::new("x"), &b));
        let sorted = acyclic_topological_sort(&g).unwrap();
        assert_eq!(sorted[0].relation(), "R");
        assert_eq!(sorted[1].relation(), "S");
    }

    #[test]
    fn dealers_attack_stock() {
        let b = body(r#"SUM(y) <- Dealers("Smith" | t), Stock(p, t | y)"#);
        let g = build_attack_graph(&b);
        assert!(g.keycl[0].is_empty());
        assert_eq!(g.edges, BTreeSet::from([(0, 1)]));
    }

    #[test]
    fn two_cycle() {
        let b = body("SUM(1) <- S2(x | y), T(y | x)");
        let g = build_attack_graph(&b);
        assert_eq!(g.keycl[0], vs(&["x"]));
        assert_eq!(g.edges, BTreeSet::from([(0, 1), (1, 0)]));
        assert!(g.topological_order().is_none());
        assert!(acyclic_topological_sort(&g).is_none());
    }

    #[test]
    fn single_atom() {
        let b = body("SUM(1) <- R(x | y)");
        assert_eq!(keycl(0, &b), vs(&["x"]));
        assert!(!attacks_variable(0, &Var::new("x"), &b));
        assert!(build_attack_graph(&b).edges.is_empty());
    }

    #[test]
    fn edgeless_keeps_body_order() {
        let b = body("SUM(1) <- S2(x | \"a\"), T(y | \"b\"), U(z | \"c\")");
        let g = build_attack_graph(&b);
        assert!(g.edges.is_empty());
        assert_eq!(g.topological_order().unwrap(), vec![0, 1, 2]);
        assert_eq!(g.all_topological_orders(100).len(), 6);
    }

    #[test]
    fn unattacked_atoms_come_first() {
        let b = body(r#"SUM(r) <- S(y, z | "d", r), R(x | y)"#);
        let g = build_attack_graph(&b);
        assert_eq!(g.edges, BTreeSet::from([(1, 0)]));
        assert_eq!(g.topological_order().unwrap(), vec![1, 0]);
        assert!(g.is_transitive());
        assert!(g.to_dot().contains("n1 -> n0"));
    }
}
