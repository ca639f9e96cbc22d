//! Hash-consed scalar expression DAG.
//!
//! Every node is created through [`ExprGraph`], which folds constants, applies
//! the trivial identities (`x + 0`, `x * 1`, `x * 0`, `x^1`, ...), orders the
//! operands of commutative nodes by digest and returns the existing handle when
//! a structurally identical node is already present.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;

use hashbrown::HashMap;
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};

/// Handle of a node inside one [`ExprGraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Operation kinds accepted by [`ExprGraph::apply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    PowInt(i32),
    Sqrt,
    Log,
    Sin,
    Cos,
    Branch,
}

impl OpKind {
    pub fn arity(self) -> usize {
        match self {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => 2,
            OpKind::Branch => 3,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Neg => "neg",
            OpKind::PowInt(_) => "pow_int",
            OpKind::Sqrt => "sqrt",
            OpKind::Log => "log",
            OpKind::Sin => "sin",
            OpKind::Cos => "cos",
            OpKind::Branch => "branch",
        }
    }
}

/// One DAG node. Constants are stored by bit pattern so nodes can be hashed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Symbol(u32),
    Const(u64),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    PowInt(NodeId, i32),
    Sqrt(NodeId),
    Log(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Branch(NodeId, NodeId, NodeId),
}

impl Node {
    pub fn is_op(&self) -> bool {
        !matches!(self, Node::Symbol(_) | Node::Const(_))
    }

    /// Operand handles in evaluation order.
    pub fn operands(&self) -> impl Iterator<Item = NodeId> {
        let (buf, n): ([NodeId; 3], usize) = match *self {
            Node::Symbol(_) | Node::Const(_) => ([NodeId(0); 3], 0),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                ([a, b, NodeId(0)], 2)
            }
            Node::Neg(a)
            | Node::PowInt(a, _)
            | Node::Sqrt(a)
            | Node::Log(a)
            | Node::Sin(a)
            | Node::Cos(a) => ([a, NodeId(0), NodeId(0)], 1),
            Node::Branch(c, a, b) => ([c, a, b], 3),
        };
        buf.into_iter().take(n)
    }

    fn tag(&self) -> u8 {
        match self {
            Node::Symbol(_) => 1,
            Node::Const(_) => 2,
            Node::Add(..) => 3,
            Node::Sub(..) => 4,
            Node::Mul(..) => 5,
            Node::Div(..) => 6,
            Node::Neg(_) => 7,
            Node::PowInt(..) => 8,
            Node::Sqrt(_) => 9,
            Node::Log(_) => 10,
            Node::Sin(_) => 11,
            Node::Cos(_) => 12,
            Node::Branch(..) => 13,
        }
    }
}

/// 256-bit structural digest of a root set.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExprDigest(pub [u8; 32]);

impl ExprDigest {
    pub fn to_hex(&self) -> String {
        use core::fmt::Write;
        let mut s = String::with_capacity(64);
        for b in self.0 {
            let _ = write!(s, "{b:02x}");
        }
        s
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 64 {
            return None;
        }
        let mut out = [0u8; 32];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let hi = (chunk[0] as char).to_digit(16)?;
            let lo = (chunk[1] as char).to_digit(16)?;
            out[i] = (hi * 16 + lo) as u8;
        }
        Some(ExprDigest(out))
    }
}

impl fmt::Debug for ExprDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExprDigest({})", self.to_hex())
    }
}

impl fmt::Display for ExprDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Clone, Debug)]
pub struct SymbolInfo {
    pub name: String,
    /// Kernel input slot; `None` for internal placeholders.
    pub slot: Option<u32>,
}

#[derive(Default)]
struct GraphData {
    nodes: Vec<Node>,
    digests: Vec<[u8; 32]>,
    lookup: HashMap<Node, NodeId>,
    symbols: Vec<SymbolInfo>,
    slots: HashMap<u32, u32>,
}

/// Integer power by left-to-right repeated multiplication. Every evaluation
/// path (folding, tape, generated source) uses this exact sequence.
#[inline]
pub fn pow_int(x: f64, n: i32) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let m = n.unsigned_abs();
    let mut r = x;
    for _ in 1..m {
        r *= x;
    }
    if n < 0 {
        1.0 / r
    } else {
        r
    }
}

#[inline]
pub(crate) fn select(c: f64, a: f64, b: f64) -> f64 {
    if c >= 0.0 {
        a
    } else {
        b
    }
}

/// Expression graph with interior mutability so that symbolic values can
/// carry a shared reference and still create nodes through operators.
#[derive(Default)]
pub struct ExprGraph {
    data: RefCell<GraphData>,
}

impl fmt::Debug for ExprGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.data.borrow();
        f.debug_struct("ExprGraph")
            .field("nodes", &d.nodes.len())
            .field("symbols", &d.symbols.len())
            .finish()
    }
}

impl ExprGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.data.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, id: NodeId) -> Node {
        self.data.borrow().nodes[id.index()]
    }

    pub fn node_digest(&self, id: NodeId) -> [u8; 32] {
        self.data.borrow().digests[id.index()]
    }

    pub fn symbols(&self) -> Vec<SymbolInfo> {
        self.data.borrow().symbols.clone()
    }

    pub fn symbol_info(&self, id: NodeId) -> Option<SymbolInfo> {
        let d = self.data.borrow();
        match d.nodes[id.index()] {
            Node::Symbol(s) => Some(d.symbols[s as usize].clone()),
            _ => None,
        }
    }

    /// Number of input slots claimed so far (highest slot + 1).
    pub fn slot_count(&self) -> usize {
        self.data
            .borrow()
            .slots
            .keys()
            .map(|&s| s as usize + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn const_value(&self, id: NodeId) -> Option<f64> {
        match self.node(id) {
            Node::Const(bits) => Some(f64::from_bits(bits)),
            _ => None,
        }
    }

    fn intern(&self, node: Node) -> NodeId {
        let mut d = self.data.borrow_mut();
        if let Some(&id) = d.lookup.get(&node) {
            return id;
        }
        let mut h = Sha256::new();
        h.update([node.tag()]);
        match node {
            Node::Symbol(s) => {
                let info = &d.symbols[s as usize];
                h.update(info.slot.map_or(u32::MAX, |x| x).to_le_bytes());
                h.update((info.name.len() as u64).to_le_bytes());
                h.update(info.name.as_bytes());
            }
            Node::Const(bits) => h.update(bits.to_le_bytes()),
            Node::PowInt(a, n) => {
                h.update(d.digests[a.index()]);
                h.update(n.to_le_bytes());
            }
            other => {
                for op in other.operands() {
                    h.update(d.digests[op.index()]);
                }
            }
        }
        let digest: [u8; 32] = h.finalize().into();
        let id = NodeId(d.nodes.len() as u32);
        d.nodes.push(node);
        d.digests.push(digest);
        d.lookup.insert(node, id);
        id
    }

    /// Creates a symbol read from kernel input `slot`.
    pub fn symbol_node(&self, name: &str, slot: u32) -> Result<NodeId> {
        {
            let d = self.data.borrow();
            if let Some(&s) = d.slots.get(&slot) {
                return Err(Error::DuplicateSlot {
                    slot,
                    existing: d.symbols[s as usize].name.clone(),
                });
            }
        }
        let sym = {
            let mut d = self.data.borrow_mut();
            let s = d.symbols.len() as u32;
            d.symbols.push(SymbolInfo { name: name.into(), slot: Some(slot) });
            d.slots.insert(slot, s);
            s
        };
        Ok(self.intern(Node::Symbol(sym)))
    }

    /// Creates a symbol that has no input slot. Used for placeholders that
    /// are substituted away before lowering.
    pub fn internal_symbol_node(&self, name: &str) -> NodeId {
        let sym = {
            let mut d = self.data.borrow_mut();
            let s = d.symbols.len() as u32;
            d.symbols.push(SymbolInfo { name: name.into(), slot: None });
            s
        };
        self.intern(Node::Symbol(sym))
    }

    pub fn constant_node(&self, v: f64) -> NodeId {
        // -0.0 and 0.0 share one node
        let v = if v == 0.0 { 0.0 } else { v };
        self.intern(Node::Const(v.to_bits()))
    }

    fn ordered(&self, a: NodeId, b: NodeId) -> (NodeId, NodeId) {
        let d = self.data.borrow();
        if d.digests[b.index()] < d.digests[a.index()] {
            (b, a)
        } else {
            (a, b)
        }
    }

    pub fn add(&self, a: NodeId, b: NodeId) -> NodeId {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => return self.constant_node(x + y),
            (Some(x), _) if x == 0.0 => return b,
            (_, Some(y)) if y == 0.0 => return a,
            _ => {}
        }
        let (a, b) = self.ordered(a, b);
        self.intern(Node::Add(a, b))
    }

    pub fn sub(&self, a: NodeId, b: NodeId) -> NodeId {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => return self.constant_node(x - y),
            (_, Some(y)) if y == 0.0 => return a,
            (Some(x), _) if x == 0.0 => return self.neg(b),
            _ => {}
        }
        self.intern(Node::Sub(a, b))
    }

    pub fn mul(&self, a: NodeId, b: NodeId) -> NodeId {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => return self.constant_node(x * y),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => return self.constant_node(0.0),
            (Some(x), _) if x == 1.0 => return b,
            (_, Some(y)) if y == 1.0 => return a,
            (Some(x), _) if x == -1.0 => return self.neg(b),
            (_, Some(y)) if y == -1.0 => return self.neg(a),
            _ => {}
        }
        let (a, b) = self.ordered(a, b);
        self.intern(Node::Mul(a, b))
    }

    pub fn div(&self, a: NodeId, b: NodeId) -> NodeId {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => return self.constant_node(x / y),
            (Some(x), _) if x == 0.0 => return self.constant_node(0.0),
            (_, Some(y)) if y == 1.0 => return a,
            (_, Some(y)) if y == -1.0 => return self.neg(a),
            _ => {}
        }
        self.intern(Node::Div(a, b))
    }

    pub fn neg(&self, a: NodeId) -> NodeId {
        if let Some(x) = self.const_value(a) {
            return self.constant_node(-x);
        }
        if let Node::Neg(inner) = self.node(a) {
            return inner;
        }
        self.intern(Node::Neg(a))
    }

    pub fn pow_int(&self, a: NodeId, n: i32) -> NodeId {
        if let Some(x) = self.const_value(a) {
            return self.constant_node(pow_int(x, n));
        }
        match n {
            0 => self.constant_node(1.0),
            1 => a,
            _ => self.intern(Node::PowInt(a, n)),
        }
    }

    pub fn sqrt(&self, a: NodeId) -> NodeId {
        match self.const_value(a) {
            Some(x) => self.constant_node(libm::sqrt(x)),
            None => self.intern(Node::Sqrt(a)),
        }
    }

    pub fn log(&self, a: NodeId) -> NodeId {
        match self.const_value(a) {
            Some(x) => self.constant_node(libm::log(x)),
            None => self.intern(Node::Log(a)),
        }
    }

    pub fn sin(&self, a: NodeId) -> NodeId {
        match self.const_value(a) {
            Some(x) => self.constant_node(libm::sin(x)),
            None => self.intern(Node::Sin(a)),
        }
    }

    pub fn cos(&self, a: NodeId) -> NodeId {
        match self.const_value(a) {
            Some(x) => self.constant_node(libm::cos(x)),
            None => self.intern(Node::Cos(a)),
        }
    }

    /// `a` where `c >= 0`, `b` where `c < 0`.
    pub fn branch(&self, c: NodeId, a: NodeId, b: NodeId) -> NodeId {
        if let Some(x) = self.const_value(c) {
            return if x >= 0.0 { a } else { b };
        }
        if a == b {
            return a;
        }
        self.intern(Node::Branch(c, a, b))
    }

    /// Generic constructor with an arity check.
    pub fn apply(&self, kind: OpKind, operands: &[NodeId]) -> Result<NodeId> {
        if operands.len() != kind.arity() {
            return Err(Error::Arity { op: kind.name(), expected: kind.arity(), got: operands.len() });
        }
        let o = operands;
        Ok(match kind {
            OpKind::Add => self.add(o[0], o[1]),
            OpKind::Sub => self.sub(o[0], o[1]),
            OpKind::Mul => self.mul(o[0], o[1]),
            OpKind::Div => self.div(o[0], o[1]),
            OpKind::Neg => self.neg(o[0]),
            OpKind::PowInt(n) => self.pow_int(o[0], n),
            OpKind::Sqrt => self.sqrt(o[0]),
            OpKind::Log => self.log(o[0]),
            OpKind::Sin => self.sin(o[0]),
            OpKind::Cos => self.cos(o[0]),
            OpKind::Branch => self.branch(o[0], o[1], o[2]),
        })
    }

    /// Reachable nodes of `roots` in post order (operands before users),
    /// each node once.
    pub fn topo_order(&self, roots: &[NodeId]) -> Vec<NodeId> {
        let d = self.data.borrow();
        let mut seen = vec![false; d.nodes.len()];
        let mut order = Vec::new();
        let mut stack: Vec<(NodeId, bool)> = Vec::new();
        for &r in roots {
            stack.push((r, false));
            while let Some((id, expanded)) = stack.pop() {
                if expanded {
                    order.push(id);
                    continue;
                }
                if seen[id.index()] {
                    continue;
                }
                seen[id.index()] = true;
                stack.push((id, true));
                let ops: Vec<NodeId> = d.nodes[id.index()].operands().collect();
                for op in ops.into_iter().rev() {
                    if !seen[op.index()] {
                        stack.push((op, false));
                    }
                }
            }
        }
        order
    }

    /// Number of distinct operation nodes reachable from `roots`.
    pub fn op_count(&self, roots: &[NodeId]) -> usize {
        self.topo_order(roots).into_iter().filter(|&id| self.node(id).is_op()).count()
    }

    /// Operation count of `roots` if every root were expanded as a tree with
    /// no sharing at all. Saturates at `u64::MAX`.
    pub fn tree_op_count(&self, roots: &[NodeId]) -> u64 {
        let order = self.topo_order(roots);
        let mut size: HashMap<NodeId, u64> = HashMap::with_capacity(order.len());
        for &id in &order {
            let node = self.node(id);
            let s = if node.is_op() {
                node.operands().fold(1u64, |acc, op| acc.saturating_add(size[&op]))
            } else {
                0
            };
            size.insert(id, s);
        }
        roots.iter().fold(0u64, |acc, r| acc.saturating_add(size[r]))
    }

    /// Digest of an ordered root set.
    pub fn expr_digest(&self, roots: &[NodeId]) -> ExprDigest {
        let d = self.data.borrow();
        let mut h = Sha256::new();
        h.update((roots.len() as u64).to_le_bytes());
        for r in roots {
            h.update(d.digests[r.index()]);
        }
        ExprDigest(h.finalize().into())
    }

    /// Evaluates `roots` with memoization. `input(slot)` supplies symbol
    /// values; symbols without a slot evaluate to NaN.
    pub fn eval(&self, roots: &[NodeId], input: &dyn Fn(u32) -> f64) -> Vec<f64> {
        let order = self.topo_order(roots);
        let d = self.data.borrow();
        let mut val: HashMap<NodeId, f64> = HashMap::with_capacity(order.len());
        for &id in &order {
            let v = eval_node(&d.nodes[id.index()], &d.symbols, input, |n| val[&n]);
            val.insert(id, v);
        }
        roots.iter().map(|r| val[r]).collect()
    }

    /// Plain recursive evaluation without any memoization: every shared
    /// subexpression is recomputed at each use.
    pub fn eval_tree(&self, root: NodeId, input: &dyn Fn(u32) -> f64) -> f64 {
        let d = self.data.borrow();
        fn rec(d: &GraphData, id: NodeId, input: &dyn Fn(u32) -> f64) -> f64 {
            eval_node(&d.nodes[id.index()], &d.symbols, input, |n| rec(d, n, input))
        }
        rec(&d, root, input)
    }

    /// Rebuilds `root` with symbol nodes replaced according to `map`.
    pub fn substitute(&self, root: NodeId, map: &[(NodeId, NodeId)]) -> NodeId {
        let order = self.topo_order(&[root]);
        let mut new: HashMap<NodeId, NodeId> = HashMap::with_capacity(order.len());
        for &(from, to) in map {
            new.insert(from, to);
        }
        for id in order {
            if new.contains_key(&id) {
                continue;
            }
            let node = self.node(id);
            let m = |n: NodeId| new[&n];
            let rebuilt = match node {
                Node::Symbol(_) | Node::Const(_) => id,
                Node::Add(a, b) => self.add(m(a), m(b)),
                Node::Sub(a, b) => self.sub(m(a), m(b)),
                Node::Mul(a, b) => self.mul(m(a), m(b)),
                Node::Div(a, b) => self.div(m(a), m(b)),
                Node::Neg(a) => self.neg(m(a)),
                Node::PowInt(a, n) => self.pow_int(m(a), n),
                Node::Sqrt(a) => self.sqrt(m(a)),
                Node::Log(a) => self.log(m(a)),
                Node::Sin(a) => self.sin(m(a)),
                Node::Cos(a) => self.cos(m(a)),
                Node::Branch(c, a, b) => self.branch(m(c), m(a), m(b)),
            };
            new.insert(id, rebuilt);
        }
        new[&root]
    }

    /// Symbols reachable from `roots`, in first-visit order.
    pub fn reachable_symbols(&self, roots: &[NodeId]) -> Vec<NodeId> {
        self.topo_order(roots)
            .into_iter()
            .filter(|&id| matches!(self.node(id), Node::Symbol(_)))
            .collect()
    }
}

fn eval_node(
    node: &Node,
    symbols: &[SymbolInfo],
    input: &dyn Fn(u32) -> f64,
    mut get: impl FnMut(NodeId) -> f64,
) -> f64 {
    match *node {
        Node::Symbol(s) => symbols[s as usize].slot.map_or(f64::NAN, input),
        Node::Const(bits) => f64::from_bits(bits),
        Node::Add(a, b) => get(a) + get(b),
        Node::Sub(a, b) => get(a) - get(b),
        Node::Mul(a, b) => get(a) * get(b),
        Node::Div(a, b) => get(a) / get(b),
        Node::Neg(a) => -get(a),
        Node::PowInt(a, n) => pow_int(get(a), n),
        Node::Sqrt(a) => libm::sqrt(get(a)),
        Node::Log(a) => libm::log(get(a)),
        Node::Sin(a) => libm::sin(get(a)),
        Node::Cos(a) => libm::cos(get(a)),
        Node::Branch(c, a, b) => {
            let (c, a, b) = (get(c), get(a), get(b));
            select(c, a, b)
        }
    }
}
