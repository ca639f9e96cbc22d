//! Symbolic differentiation over the expression DAG.
//!
//! Derivatives are built by structural recursion with one memo table per
//! differentiation variable, so a subexpression shared by several roots is
//! differentiated once. Because every new node goes through the hash-consing
//! constructors, the derivative graph shares structure with the primal graph.

use alloc::vec;
use alloc::vec::Vec;

use hashbrown::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::expr::{ExprGraph, Node, NodeId};

/// Energy root with its gradient and (mirrored) Hessian roots.
#[derive(Clone, Debug)]
pub struct DerivativeBundle {
    pub energy: NodeId,
    pub dofs: Vec<NodeId>,
    pub gradient: Vec<NodeId>,
    /// Row-major `n x n`; entry `(i, j)` and `(j, i)` hold the same handle.
    pub hessian: Vec<NodeId>,
}

impl DerivativeBundle {
    pub fn n(&self) -> usize {
        self.dofs.len()
    }

    pub fn hessian_entry(&self, i: usize, j: usize) -> NodeId {
        self.hessian[i * self.n() + j]
    }

    /// `[energy, gradient.., hessian row-major..]`.
    pub fn output_roots(&self) -> Vec<NodeId> {
        let mut roots = Vec::with_capacity(1 + self.gradient.len() + self.hessian.len());
        roots.push(self.energy);
        roots.extend_from_slice(&self.gradient);
        roots.extend_from_slice(&self.hessian);
        roots
    }

    pub fn upper_triangle(&self) -> Vec<NodeId> {
        let n = self.n();
        (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).map(|(i, j)| self.hessian_entry(i, j)).collect()
    }
}

struct Differentiator<'a> {
    graph: &'a ExprGraph,
    wrt: NodeId,
    memo: HashMap<NodeId, NodeId>,
}

impl Differentiator<'_> {
    fn run(&mut self, root: NodeId) -> NodeId {
        for id in self.graph.topo_order(&[root]) {
            if self.memo.contains_key(&id) {
                continue;
            }
            let d = self.rule(id);
            self.memo.insert(id, d);
        }
        self.memo[&root]
    }

    fn rule(&self, id: NodeId) -> NodeId {
        let g = self.graph;
        let d = |n: NodeId| self.memo[&n];
        let zero = || g.constant_node(0.0);
        match g.node(id) {
            Node::Symbol(_) => g.constant_node(if id == self.wrt { 1.0 } else { 0.0 }),
            Node::Const(_) => zero(),
            Node::Add(a, b) => g.add(d(a), d(b)),
            Node::Sub(a, b) => g.sub(d(a), d(b)),
            Node::Mul(a, b) => g.add(g.mul(d(a), b), g.mul(a, d(b))),
            // (a/b)' = (a' - (a/b) b') / b
            Node::Div(a, b) => g.div(g.sub(d(a), g.mul(id, d(b))), b),
            Node::Neg(a) => g.neg(d(a)),
            Node::PowInt(a, n) => {
                let inner = g.mul(g.constant_node(n as f64), g.pow_int(a, n - 1));
                g.mul(inner, d(a))
            }
            Node::Sqrt(a) => g.div(d(a), g.mul(g.constant_node(2.0), id)),
            Node::Log(a) => g.div(d(a), a),
            Node::Sin(a) => g.mul(g.cos(a), d(a)),
            Node::Cos(a) => g.neg(g.mul(g.sin(a), d(a))),
            // the condition is treated as locally constant
            Node::Branch(c, a, b) => g.branch(c, d(a), d(b)),
        }
    }
}

impl ExprGraph {
    /// `d root / d wrt`.
    pub fn derivative(&self, root: NodeId, wrt: NodeId) -> Result<NodeId> {
        if !matches!(self.node(wrt), Node::Symbol(_)) {
            return Err(Error::NotASymbol);
        }
        Ok(Differentiator { graph: self, wrt, memo: HashMap::new() }.run(root))
    }

    /// Derivatives of several roots with respect to one symbol, sharing the
    /// memo table between roots.
    pub fn derivatives(&self, roots: &[NodeId], wrt: NodeId) -> Result<Vec<NodeId>> {
        if !matches!(self.node(wrt), Node::Symbol(_)) {
            return Err(Error::NotASymbol);
        }
        let mut dv = Differentiator { graph: self, wrt, memo: HashMap::new() };
        Ok(roots.iter().map(|&r| dv.run(r)).collect())
    }
}

/// Gradient and Hessian of `root` with respect to `dofs` (in order). The
/// Hessian is obtained by differentiating gradient entries, only for `i <= j`.
pub fn gradient_hessian(graph: &ExprGraph, root: NodeId, dofs: &[NodeId]) -> Result<DerivativeBundle> {
    if dofs.is_empty() {
        return Err(Error::NoDofs);
    }
    let mut seen = HashSet::new();
    for &d in dofs {
        if !matches!(graph.node(d), Node::Symbol(_)) {
            return Err(Error::NotASymbol);
        }
        if !seen.insert(d) {
            let name = graph.symbol_info(d).map(|s| s.name).unwrap_or_default();
            return Err(Error::DuplicateDof(name));
        }
    }
    let n = dofs.len();
    let gradient: Vec<NodeId> = dofs.iter().map(|&d| graph.derivative(root, d)).collect::<Result<_>>()?;
    let mut hessian = vec![NodeId(0); n * n];
    for j in 0..n {
        // column j: d(grad_i)/d(dof_j) for i <= j, one shared memo per dof
        let col = graph.derivatives(&gradient[..=j], dofs[j])?;
        for (i, h) in col.into_iter().enumerate() {
            hessian[i * n + j] = h;
            hessian[j * n + i] = h;
        }
    }
    Ok(DerivativeBundle { energy: root, dofs: dofs.to_vec(), gradient, hessian })
}

/// Topologically ordered operation nodes of the union DAG of `roots`.
#[derive(Clone, Debug)]
pub struct EvalPlan {
    pub ops: Vec<NodeId>,
}

impl EvalPlan {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

pub fn compress(graph: &ExprGraph, roots: &[NodeId]) -> EvalPlan {
    let ops = graph.topo_order(roots).into_iter().filter(|&id| graph.node(id).is_op()).collect();
    EvalPlan { ops }
}

/// Operation counts for a Hessian, separating the effect of symmetry from the
/// effect of sharing subexpressions across entries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompressionStats {
    /// Sum over all `n^2` entries of each entry's own (deduplicated) op count.
    pub per_entry: u64,
    /// Same sum restricted to the upper triangle.
    pub upper_triangle: u64,
    /// Op count of the union DAG of all entries.
    pub compressed: u64,
    /// Sum over all `n^2` entries of the fully expanded tree size.
    pub expanded_tree: u64,
}

impl CompressionStats {
    pub fn ratio(&self) -> f64 {
        self.compressed as f64 / self.per_entry as f64
    }
}

pub fn hessian_compression(graph: &ExprGraph, bundle: &DerivativeBundle) -> CompressionStats {
    let n = bundle.n();
    let mut per_entry = 0u64;
    let mut upper = 0u64;
    let mut expanded = 0u64;
    let mut cache: HashMap<NodeId, (u64, u64)> = HashMap::new();
    for i in 0..n {
        for j in 0..n {
            let h = bundle.hessian_entry(i, j);
            let (ops, tree) = *cache
                .entry(h)
                .or_insert_with(|| (graph.op_count(&[h]) as u64, graph.tree_op_count(&[h])));
            per_entry += ops;
            expanded = expanded.saturating_add(tree);
            if i <= j {
                upper += ops;
            }
        }
    }
    CompressionStats {
        per_entry,
        upper_triangle: upper,
        compressed: compress(graph, &bundle.hessian).len() as u64,
        expanded_tree: expanded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{branch, Scalar};

    fn ev(g: &ExprGraph, id: NodeId, x: &[f64]) -> f64 {
        g.eval(&[id], &|s| x[s as usize])[0]
    }

    #[test]
    fn catalog_rules() {
        let g = ExprGraph::new();
        let x = g.symbol("x", 0).unwrap();
        let dx2 = g.derivative((x * x).id(), x.id()).unwrap();
        let dlog = g.derivative(x.ln().id(), x.id()).unwrap();
        let dsin = g.derivative(x.sin().id(), x.id()).unwrap();
        let dcos = g.derivative(x.cos().id(), x.id()).unwrap();
        let dsqrt = g.derivative(x.sqrt().id(), x.id()).unwrap();
        let dpow = g.derivative(x.powi(-2).id(), x.id()).unwrap();
        for v in [0.3, 1.7, 2.5, 11.0] {
            assert_eq!(ev(&g, dx2, &[v]), v + v);
            assert_eq!(ev(&g, dlog, &[v]), 1.0 / v);
            assert_eq!(ev(&g, dsin, &[v]), libm::cos(v));
            assert_eq!(ev(&g, dcos, &[v]), -libm::sin(v));
            assert_eq!(ev(&g, dsqrt, &[v]), 1.0 / (2.0 * libm::sqrt(v)));
            assert_eq!(ev(&g, dpow, &[v]), -2.0 * (1.0 / (v * v * v)));
        }
    }

    #[test]
    fn branch_derivative_is_per_branch() {
        let g = ExprGraph::new();
        let x = g.symbol("x", 0).unwrap();
        let c = g.symbol("c", 1).unwrap();
        let e = branch(c, x.powi(2), x.powi(3));
        let d = g.derivative(e.id(), x.id()).unwrap();
        let expect = branch(c, 2.0 * x, 3.0 * x.powi(2));
        assert_eq!(d, expect.id());
    }

    #[test]
    fn non_symbol_target_is_an_error() {
        let g = ExprGraph::new();
        let x = g.symbol("x", 0).unwrap();
        let e = x * x;
        assert_eq!(g.derivative(e.id(), e.id()), Err(Error::NotASymbol));
    }

    #[test]
    fn quadratic_form_hessian() {
        let g = ExprGraph::new();
        let u = g.symbol_vector("u", 0, 2).unwrap();
        let a = [[3.0, 0.5], [0.5, 2.0]];
        let mut e = g.constant(0.0);
        for i in 0..2 {
            for j in 0..2 {
                e = e + 0.5 * a[i][j] * u[i] * u[j];
            }
        }
        let b = gradient_hessian(&g, e.id(), &u.ids()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(g.const_value(b.hessian_entry(i, j)), Some(a[i][j]));
            }
        }
    }

    #[test]
    fn independent_dof_has_zero_gradient() {
        let g = ExprGraph::new();
        let x = g.symbol("x", 0).unwrap();
        let y = g.symbol("y", 1).unwrap();
        let b = gradient_hessian(&g, (x * x).sin().id(), &[x.id(), y.id()]).unwrap();
        assert_eq!(g.const_value(b.gradient[1]), Some(0.0));
    }

    #[test]
    fn hessian_is_symmetric_by_handle() {
        let g = ExprGraph::new();
        let u = g.symbol_vector("u", 0, 3).unwrap();
        let e = (u[0] * u[1]).sin() + u[2].powi(3) * u[0] / u[1];
        let b = gradient_hessian(&g, e.id(), &u.ids()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(b.hessian_entry(i, j), b.hessian_entry(j, i));
            }
        }
    }

    #[test]
    fn duplicate_dofs_rejected() {
        let g = ExprGraph::new();
        let x = g.symbol("x", 0).unwrap();
        assert!(matches!(gradient_hessian(&g, x.id(), &[x.id(), x.id()]), Err(Error::DuplicateDof(_))));
        assert_eq!(gradient_hessian(&g, x.id(), &[]).unwrap_err(), Error::NoDofs);
    }

    #[test]
    fn compress_dedups_and_drops_dead_nodes() {
        let g = ExprGraph::new();
        let x = g.symbol("x", 0).unwrap();
        let y = g.symbol("y", 1).unwrap();
        let z = g.symbol("z", 2).unwrap();
        let xy = x * y;
        let plan = compress(&g, &[xy.id(), (xy + z).id()]);
        assert_eq!(plan.len(), 2);
        // dead subtree built but not referenced by the roots
        let _dead = (x.sin() * 3.0).cos();
        let plan = compress(&g, &[xy.id()]);
        assert_eq!(plan.len(), 1);
        let _ = Scalar::constant(&g, 4.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let g = ExprGraph::new();
        let u = g.symbol_vector("u", 0, 3).unwrap();
        let e = (u[0] * u[1]).sin() + (u[2] * u[2] + 1.0).ln() * u[0] / (u[1] + 3.0);
        let b = gradient_hessian(&g, e.id(), &u.ids()).unwrap();
        let x = [0.4, -0.7, 1.3];
        let grad = g.eval(&b.gradient, &|s| x[s as usize]);
        for i in 0..3 {
            let h = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (ev(&g, e.id(), &xp) - ev(&g, e.id(), &xm)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-8, "{i}: {fd} vs {}", grad[i]);
        }
    }
}
