//! Straight-line register programs lowered from the expression DAG.

use alloc::vec::Vec;

use hashbrown::HashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{pow_int, select, ExprGraph, Node, NodeId};

/// One tape instruction. Operands are register indices; the destination is
/// implicit: instruction `k` writes register `first_instr_reg() + k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Instr {
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    PowInt(u32, i32),
    Sqrt(u32),
    Log(u32),
    Sin(u32),
    Cos(u32),
    Branch(u32, u32, u32),
}

/// Register layout: `[inputs | constants | instruction results]`. Every
/// register is assigned exactly once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tape {
    pub n_inputs: u32,
    /// Constant values stored as bit patterns so that serialization is exact.
    pub constants: Vec<u64>,
    pub instrs: Vec<Instr>,
    pub outputs: Vec<u32>,
}

impl Tape {
    pub fn n_inputs(&self) -> usize {
        self.n_inputs as usize
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn first_instr_reg(&self) -> usize {
        self.n_inputs as usize + self.constants.len()
    }

    pub fn n_regs(&self) -> usize {
        self.first_instr_reg() + self.instrs.len()
    }

    /// Evaluates `lanes` independent input sets at once. `inputs` holds
    /// `n_inputs x lanes` values with lanes contiguous per slot; `outputs`
    /// receives `n_outputs x lanes` in the same layout.
    pub fn eval_lanes(&self, inputs: &[f64], outputs: &mut [f64], lanes: usize, regs: &mut Vec<f64>) {
        let w = lanes;
        let n_in = self.n_inputs as usize;
        debug_assert_eq!(inputs.len(), n_in * w);
        debug_assert_eq!(outputs.len(), self.outputs.len() * w);
        regs.clear();
        regs.resize(self.n_regs() * w, 0.0);
        regs[..n_in * w].copy_from_slice(inputs);
        for (k, &bits) in self.constants.iter().enumerate() {
            let v = f64::from_bits(bits);
            regs[(n_in + k) * w..(n_in + k + 1) * w].fill(v);
        }
        let base = self.first_instr_reg();
        for (k, ins) in self.instrs.iter().enumerate() {
            let (lo, hi) = regs.split_at_mut((base + k) * w);
            let out = &mut hi[..w];
            let r = |i: u32| &lo[i as usize * w..(i as usize + 1) * w];
            match *ins {
                Instr::Add(a, b) => lanes2(out, r(a), r(b), |x, y| x + y),
                Instr::Sub(a, b) => lanes2(out, r(a), r(b), |x, y| x - y),
                Instr::Mul(a, b) => lanes2(out, r(a), r(b), |x, y| x * y),
                Instr::Div(a, b) => lanes2(out, r(a), r(b), |x, y| x / y),
                Instr::Neg(a) => lanes1(out, r(a), |x| -x),
                Instr::PowInt(a, n) => lanes1(out, r(a), |x| pow_int(x, n)),
                Instr::Sqrt(a) => lanes1(out, r(a), libm::sqrt),
                Instr::Log(a) => lanes1(out, r(a), libm::log),
                Instr::Sin(a) => lanes1(out, r(a), libm::sin),
                Instr::Cos(a) => lanes1(out, r(a), libm::cos),
                Instr::Branch(c, a, b) => {
                    let (c, a, b) = (r(c), r(a), r(b));
                    for l in 0..w {
                        out[l] = select(c[l], a[l], b[l]);
                    }
                }
            }
        }
        for (o, &reg) in self.outputs.iter().enumerate() {
            let reg = reg as usize;
            outputs[o * w..(o + 1) * w].copy_from_slice(&regs[reg * w..(reg + 1) * w]);
        }
    }

    /// Single input set convenience wrapper.
    pub fn eval(&self, inputs: &[f64]) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.outputs.len()];
        let mut regs = Vec::new();
        self.eval_lanes(inputs, &mut out, 1, &mut regs);
        out
    }
}

#[inline(always)]
fn lanes1(out: &mut [f64], a: &[f64], f: impl Fn(f64) -> f64) {
    for (o, &x) in out.iter_mut().zip(a) {
        *o = f(x);
    }
}

#[inline(always)]
fn lanes2(out: &mut [f64], a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = f(x, y);
    }
}

/// Lowers `roots` (in output order) into a tape reading `n_inputs` slots.
/// Fails if a reachable symbol has no slot below `n_inputs`.
pub fn lower(graph: &ExprGraph, roots: &[NodeId], n_inputs: usize) -> Result<Tape> {
    let order = graph.topo_order(roots);
    let mut missing = Vec::new();
    let mut constants = Vec::new();
    let mut const_reg: HashMap<u64, u32> = HashMap::new();
    // symbols and constants first so their registers precede all instructions
    let mut reg: HashMap<NodeId, u32> = HashMap::with_capacity(order.len());
    for &id in &order {
        match graph.node(id) {
            Node::Symbol(_) => {
                let info = graph.symbol_info(id).expect("symbol");
                match info.slot {
                    Some(s) if (s as usize) < n_inputs => {
                        reg.insert(id, s);
                    }
                    _ => missing.push(info.name),
                }
            }
            Node::Const(bits) => {
                let r = *const_reg.entry(bits).or_insert_with(|| {
                    constants.push(bits);
                    (n_inputs + constants.len() - 1) as u32
                });
                reg.insert(id, r);
            }
            _ => {}
        }
    }
    if !missing.is_empty() {
        return Err(Error::UnassignedSymbols(missing));
    }
    let base = n_inputs + constants.len();
    let mut instrs = Vec::new();
    for &id in &order {
        let node = graph.node(id);
        if !node.is_op() {
            continue;
        }
        let r = |n: NodeId| reg[&n];
        let ins = match node {
            Node::Add(a, b) => Instr::Add(r(a), r(b)),
            Node::Sub(a, b) => Instr::Sub(r(a), r(b)),
            Node::Mul(a, b) => Instr::Mul(r(a), r(b)),
            Node::Div(a, b) => Instr::Div(r(a), r(b)),
            Node::Neg(a) => Instr::Neg(r(a)),
            Node::PowInt(a, n) => Instr::PowInt(r(a), n),
            Node::Sqrt(a) => Instr::Sqrt(r(a)),
            Node::Log(a) => Instr::Log(r(a)),
            Node::Sin(a) => Instr::Sin(r(a)),
            Node::Cos(a) => Instr::Cos(r(a)),
            Node::Branch(c, a, b) => Instr::Branch(r(c), r(a), r(b)),
            Node::Symbol(_) | Node::Const(_) => unreachable!(),
        };
        reg.insert(id, (base + instrs.len()) as u32);
        instrs.push(ins);
    }
    let outputs = roots.iter().map(|r| reg[r]).collect();
    Ok(Tape { n_inputs: n_inputs as u32, constants, instrs, outputs })
}
