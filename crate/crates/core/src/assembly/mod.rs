//! Element evaluation and global assembly.
//!
//! Assembly runs in two phases. All active elements are evaluated in
//! parallel into per-element output buffers; then the Hessian is scattered
//! per block row in parallel, each row consuming its contributions in
//! (energy, element, local entry) order. The gradient and energy are summed
//! sequentially in the same order. Results are therefore bit-identical for
//! any thread count.

mod bcrs;
mod dense;

pub use bcrs::BcrsMatrix;
pub use dense::DenseEval;

use alloc::vec;
use alloc::vec::Vec;

use crate::bind::{element_dofs, gather_lanes, DofLayout, EnergyId, EnergyRuntime, Problem, ProblemData};
use crate::error::{Error, Result};
use crate::expr::Condition;
use crate::kernel::Kernel;
use crate::par;

/// Raw per-element results of one energy.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementOutputs {
    pub element: usize,
    pub energy: f64,
    pub gradient: Vec<f64>,
    /// Row-major `n x n`.
    pub hessian: Vec<f64>,
    pub dofs: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct GlobalEval {
    pub energy: f64,
    pub gradient: Vec<f64>,
    pub hessian: BcrsMatrix,
    /// Active element count per energy.
    pub active: Vec<usize>,
    /// Seconds spent in element kernels (including activation checks).
    pub t_eval: f64,
    /// Seconds spent summing and scattering.
    pub t_assemble: f64,
}

/// Sparsity pattern and scatter plan for one set of active elements.
pub(crate) struct AssemblyCache {
    total: usize,
    active: Vec<Vec<usize>>,
    dofs: Vec<Vec<usize>>,
    pattern: BcrsMatrix,
    /// Contributions of block row `r` are `contrib_ptr[r]..contrib_ptr[r+1]`.
    contrib_ptr: Vec<usize>,
    /// Destination offset inside the row's value slice.
    contrib_dst: Vec<u32>,
    /// Index into the concatenated element output buffer.
    contrib_src: Vec<usize>,
}

struct Scratch {
    inputs: Vec<f64>,
    acc: Vec<f64>,
    out: Vec<f64>,
    regs: Vec<f64>,
}

fn scratch() -> Scratch {
    Scratch { inputs: Vec::new(), acc: Vec::new(), out: Vec::new(), regs: Vec::new() }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Outputs {
    Full,
    Value,
}

/// Evaluates `elems` of one energy into `out` (element-major, `n_out` values
/// per element). Fixed summations are accumulated after the main part, item
/// by item.
fn eval_energy(
    data: &ProblemData,
    layout: &DofLayout,
    u: &[f64],
    rt: &EnergyRuntime,
    elems: &[usize],
    lanes: usize,
    which: Outputs,
    out: &mut [f64],
) {
    let n_out = match which {
        Outputs::Full => rt.n_full_outputs(),
        Outputs::Value => 1,
    };
    let n_in = rt.n_inputs();
    debug_assert_eq!(out.len(), elems.len() * n_out);
    par::for_each_chunk(out, lanes * n_out, scratch, |s, i, chunk| {
        let es = &elems[i * lanes..i * lanes + chunk.len() / n_out];
        let w = es.len();
        s.inputs.resize(n_in * w, 0.0);
        gather_lanes(data, layout, u, rt, es, &mut s.inputs);
        s.acc.clear();
        s.acc.resize(n_out * w, 0.0);
        s.out.resize(n_out * w, 0.0);
        if let Some(main) = &rt.main {
            let k = match which {
                Outputs::Full => &main.0,
                Outputs::Value => &main.1,
            };
            k.eval_into(&s.inputs, &mut s.acc, w, &mut s.regs);
        }
        for t in &rt.terms {
            let k = match which {
                Outputs::Full => &t.full,
                Outputs::Value => &t.value,
            };
            for item in &t.items {
                for (c, &v) in item.iter().enumerate() {
                    s.inputs[(t.item_slot + c) * w..(t.item_slot + c + 1) * w].fill(v);
                }
                k.eval_into(&s.inputs, &mut s.out, w, &mut s.regs);
                for (a, b) in s.acc.iter_mut().zip(&s.out) {
                    *a += *b;
                }
            }
        }
        for l in 0..w {
            for o in 0..n_out {
                chunk[l * n_out + o] = s.acc[o * w + l];
            }
        }
    });
}

/// Values of a single-output kernel over `elems`.
fn eval_plain(data: &ProblemData, layout: &DofLayout, u: &[f64], rt: &EnergyRuntime, kernel: &Kernel, elems: &[usize], lanes: usize) -> Vec<f64> {
    let mut out = vec![0.0; elems.len()];
    par::for_each_chunk(&mut out, lanes, scratch, |s, i, chunk| {
        let es = &elems[i * lanes..i * lanes + chunk.len()];
        let w = es.len();
        s.inputs.resize(rt.n_inputs() * w, 0.0);
        gather_lanes(data, layout, u, rt, es, &mut s.inputs);
        kernel.eval_into(&s.inputs, chunk, w, &mut s.regs);
    });
    out
}

impl Problem {
    fn check_state(&mut self, u: &[f64]) -> Result<DofLayout> {
        if !self.topology_checked {
            self.refresh_topology()?;
        }
        let layout = self.layout();
        if u.len() != layout.total {
            return Err(Error::StateLength { expected: layout.total, got: u.len() });
        }
        if let Some(c) = &self.cache {
            if c.total != layout.total {
                self.cache = None;
            }
        }
        Ok(layout)
    }

    fn active_in(&self, layout: &DofLayout, u: &[f64], k: usize) -> Vec<usize> {
        let rt = &self.energies[k].rt;
        let n = self.data.conns[rt.conn].len();
        let all: Vec<usize> = (0..n).collect();
        match &rt.activation {
            None => all,
            Some((kernel, strict)) => {
                let v = eval_plain(&self.data, layout, u, rt, kernel, &all, self.lanes);
                all.into_iter().filter(|&e| Condition::holds(*strict, v[e])).collect()
            }
        }
    }

    /// Elements of `energy` whose activation condition holds at `u`.
    pub fn active_elements(&mut self, energy: EnergyId, u: &[f64]) -> Result<Vec<usize>> {
        let layout = self.check_state(u)?;
        Ok(self.active_in(&layout, u, energy.0))
    }

    fn active_sets(&self, layout: &DofLayout, u: &[f64]) -> Vec<Vec<usize>> {
        (0..self.energies.len()).map(|k| self.active_in(layout, u, k)).collect()
    }

    /// Total energy at `u` using value-only kernels. Activation conditions
    /// are re-evaluated; the result may be non-finite.
    pub fn energy_value(&mut self, u: &[f64]) -> Result<f64> {
        let layout = self.check_state(u)?;
        let active = self.active_sets(&layout, u);
        let mut total = 0.0;
        for (k, elems) in active.iter().enumerate() {
            let mut vals = vec![0.0; elems.len()];
            eval_energy(&self.data, &layout, u, &self.energies[k].rt, elems, self.lanes, Outputs::Value, &mut vals);
            for v in vals {
                total += v;
            }
        }
        Ok(total)
    }

    /// Per-element results of one energy over its active elements.
    pub fn element_outputs(&mut self, energy: EnergyId, u: &[f64]) -> Result<Vec<ElementOutputs>> {
        let layout = self.check_state(u)?;
        let elems = self.active_in(&layout, u, energy.0);
        let rt = &self.energies[energy.0].rt;
        let n = rt.n_dofs();
        let n_out = rt.n_full_outputs();
        let mut buf = vec![0.0; elems.len() * n_out];
        eval_energy(&self.data, &layout, u, rt, &elems, self.lanes, Outputs::Full, &mut buf);
        let mut out = Vec::with_capacity(elems.len());
        for (p, &e) in elems.iter().enumerate() {
            let o = &buf[p * n_out..(p + 1) * n_out];
            let mut dofs = Vec::with_capacity(n);
            element_dofs(&self.data, &layout, rt, e, &mut dofs);
            out.push(ElementOutputs {
                element: e,
                energy: o[0],
                gradient: o[1..1 + n].to_vec(),
                hessian: o[1 + n..].to_vec(),
                dofs,
            });
        }
        Ok(out)
    }

    /// Guard distances of every element of `energy` (all elements, active
    /// or not). Empty when the energy declares no guard.
    pub fn guard_values(&mut self, energy: EnergyId, u: &[f64]) -> Result<Vec<f64>> {
        let layout = self.check_state(u)?;
        let rt = &self.energies[energy.0].rt;
        let Some(g) = &rt.guard else { return Ok(Vec::new()) };
        let all: Vec<usize> = (0..self.data.conns[rt.conn].len()).collect();
        Ok(eval_plain(&self.data, &layout, u, rt, g, &all, self.lanes))
    }

    /// Smallest guard distance over all guarded energies, `None` if there
    /// are no guarded elements. NaN distances count as violations.
    pub fn min_guard(&mut self, u: &[f64]) -> Result<Option<f64>> {
        let mut min: Option<f64> = None;
        for k in 0..self.energies.len() {
            for d in self.guard_values(EnergyId(k), u)? {
                let d = if d.is_nan() { f64::NEG_INFINITY } else { d };
                min = Some(min.map_or(d, |m| m.min(d)));
            }
        }
        Ok(min)
    }

    pub fn has_guards(&self) -> bool {
        self.energies.iter().any(|e| e.rt.guard.is_some())
    }

    /// Zeroed Hessian pattern for the elements active at `u`.
    pub fn build_pattern(&mut self, u: &[f64]) -> Result<BcrsMatrix> {
        let layout = self.check_state(u)?;
        let active = self.active_sets(&layout, u);
        Ok(self.plan(&layout, active).pattern)
    }

    fn plan(&self, layout: &DofLayout, active: Vec<Vec<usize>>) -> AssemblyCache {
        let b = layout.block_size();
        let n_rows = layout.total.div_ceil(b);
        let mut dofs = Vec::with_capacity(active.len());
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n_rows];
        for (k, elems) in active.iter().enumerate() {
            let rt = &self.energies[k].rt;
            let n = rt.n_dofs();
            let mut d = Vec::with_capacity(elems.len() * n);
            for &e in elems {
                let start = d.len();
                element_dofs(&self.data, layout, rt, e, &mut d);
                for &gi in &d[start..] {
                    for &gj in &d[start..] {
                        cols[gi / b].push(gj / b);
                    }
                }
            }
            dofs.push(d);
        }
        let pattern = BcrsMatrix::from_pattern(b, layout.total, cols).expect("pattern rows match layout");
        let row_ptr = pattern.row_ptr();
        let bb = b * b;
        let mut per_row: Vec<Vec<(u32, usize)>> = vec![Vec::new(); n_rows];
        let mut base = 0;
        for (k, elems) in active.iter().enumerate() {
            let rt = &self.energies[k].rt;
            let n = rt.n_dofs();
            let n_out = rt.n_full_outputs();
            for p in 0..elems.len() {
                let d = &dofs[k][p * n..(p + 1) * n];
                let src0 = base + p * n_out + 1 + n;
                for (i, &gi) in d.iter().enumerate() {
                    let r = gi / b;
                    for (j, &gj) in d.iter().enumerate() {
                        let blk = pattern.block_index(r, gj / b).expect("pattern covers element");
                        let dst = (blk - row_ptr[r]) * bb + (gi % b) * b + gj % b;
                        per_row[r].push((dst as u32, src0 + i * n + j));
                    }
                }
            }
            base += elems.len() * n_out;
        }
        let mut contrib_ptr = Vec::with_capacity(n_rows + 1);
        let mut contrib_dst = Vec::new();
        let mut contrib_src = Vec::new();
        contrib_ptr.push(0);
        for row in per_row {
            for (d, s) in row {
                contrib_dst.push(d);
                contrib_src.push(s);
            }
            contrib_ptr.push(contrib_dst.len());
        }
        AssemblyCache { total: layout.total, active, dofs, pattern, contrib_ptr, contrib_dst, contrib_src }
    }

    /// Runs the registered prepasses, then evaluates and assembles the total
    /// energy, gradient and Hessian at `u`.
    pub fn evaluate_global(&mut self, u: &[f64]) -> Result<GlobalEval> {
        let layout = self.check_state(u)?;
        let mut prepasses = core::mem::take(&mut self.prepasses);
        let res = prepasses.iter_mut().try_for_each(|f| f(&mut self.data, u));
        self.prepasses = prepasses;
        res?;

        let clock = par::Stopwatch::start();
        let active = self.active_sets(&layout, u);
        let reuse = matches!(&self.cache, Some(c) if c.active == active);
        if !reuse {
            self.cache = Some(self.plan(&layout, active));
        }
        let cache = self.cache.as_ref().expect("plan");

        // phase 1: element kernels
        let mut offsets = Vec::with_capacity(self.energies.len() + 1);
        let mut len = 0;
        for (k, elems) in cache.active.iter().enumerate() {
            offsets.push(len);
            len += elems.len() * self.energies[k].rt.n_full_outputs();
        }
        offsets.push(len);
        let mut buf = vec![0.0; len];
        for (k, elems) in cache.active.iter().enumerate() {
            let rt = &self.energies[k].rt;
            eval_energy(&self.data, &layout, u, rt, elems, self.lanes, Outputs::Full, &mut buf[offsets[k]..offsets[k + 1]]);
        }
        for (k, elems) in cache.active.iter().enumerate() {
            let n_out = self.energies[k].rt.n_full_outputs();
            let seg = &buf[offsets[k]..offsets[k + 1]];
            if let Some(pos) = seg.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { energy: self.energies[k].name.clone(), element: elems[pos / n_out] });
            }
        }

        let t_eval = clock.elapsed();

        // phase 2: sums and scatter
        let clock = par::Stopwatch::start();
        let mut energy = 0.0;
        let mut gradient = vec![0.0; layout.total];
        for (k, elems) in cache.active.iter().enumerate() {
            let n = self.energies[k].rt.n_dofs();
            let n_out = n + 1 + n * n;
            for p in 0..elems.len() {
                let o = &buf[offsets[k] + p * n_out..offsets[k] + (p + 1) * n_out];
                energy += o[0];
                for (i, &gi) in cache.dofs[k][p * n..(p + 1) * n].iter().enumerate() {
                    gradient[gi] += o[1 + i];
                }
            }
        }
        let mut hessian = cache.pattern.clone();
        {
            let mut rows = hessian.row_slices_mut();
            let (ptr, dst, src) = (&cache.contrib_ptr, &cache.contrib_dst, &cache.contrib_src);
            par::for_each_item(&mut rows, |r, vals| {
                for c in ptr[r]..ptr[r + 1] {
                    vals[dst[c] as usize] += buf[src[c]];
                }
            });
        }
        let active = cache.active.iter().map(Vec::len).collect();
        Ok(GlobalEval { energy, gradient, hessian, active, t_eval, t_assemble: clock.elapsed() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bind::{ArrayId, ConnId};

    fn quad_problem(nodes: usize, conn: Vec<usize>, arity: usize) -> (Problem, ArrayId, ConnId) {
        let mut p = Problem::new();
        let x = p.add_dof_array("x", (0..nodes * 3).map(|v| 0.1 * v as f64).collect(), 3).unwrap();
        let c = p.add_connectivity("c", conn, arity).unwrap();
        (p, x, c)
    }

    #[test]
    fn one_tet_pattern_has_sixteen_blocks() {
        let (mut p, x, c) = quad_problem(4, vec![0, 1, 2, 3], 4);
        p.add_energy("e", c, |b| {
            let xs = b.vectors(x)?;
            b.set(xs[0].dot(&xs[1]) + xs[2].dot(&xs[3]));
            Ok(())
        })
        .unwrap();
        let u = p.gather_dofs();
        assert_eq!(p.build_pattern(&u).unwrap().nnz_blocks(), 16);
    }

    #[test]
    fn two_tets_sharing_a_face() {
        let (mut p, x, c) = quad_problem(5, vec![0, 1, 2, 3, 1, 2, 3, 4], 4);
        p.add_energy("e", c, |b| {
            let xs = b.vectors(x)?;
            b.set(xs[0].dot(&xs[1]) + xs[2].dot(&xs[3]));
            Ok(())
        })
        .unwrap();
        let u = p.gather_dofs();
        let h = p.build_pattern(&u).unwrap();
        assert_eq!(h.n_block_rows(), 5);
        assert_eq!(h.nnz_blocks(), 23);
    }

    #[test]
    fn all_inactive_gives_zero() {
        let (mut p, x, c) = quad_problem(3, vec![0, 1, 2], 1);
        p.add_energy("e", c, |b| {
            let v = b.vector(x, 0)?;
            b.set_with_condition(v.norm_sq(), v[0].ge(100.0));
            Ok(())
        })
        .unwrap();
        let u = p.gather_dofs();
        let r = p.evaluate_global(&u).unwrap();
        assert_eq!(r.energy, 0.0);
        assert!(r.gradient.iter().all(|&g| g == 0.0));
        assert_eq!(r.hessian.nnz_blocks(), 0);
        assert_eq!(r.active, vec![0]);
    }

    #[test]
    fn non_finite_output_names_element() {
        let (mut p, x, c) = quad_problem(3, vec![0, 1, 2], 1);
        p.add_energy("logx", c, |b| {
            let v = b.vector(x, 0)?;
            b.set(v[0].ln());
            Ok(())
        })
        .unwrap();
        let u = p.gather_dofs();
        match p.evaluate_global(&u) {
            Err(Error::NonFinite { energy, element: 0 }) => assert_eq!(energy, "logx"),
            other => panic!("{:?}", other.map(|r| r.energy)),
        }
    }

    #[test]
    fn fixed_summation_matches_direct_sum() {
        let (mut p, x, c) = quad_problem(2, vec![0, 1], 1);
        let direct = {
            let (mut q, y, d) = quad_problem(2, vec![0, 1], 1);
            q.add_energy("direct", d, |b| {
                let v = b.vector(y, 0)?;
                b.set((0.3 + 0.7) * v[0] * v[1] + v[2]);
                Ok(())
            })
            .unwrap();
            let u = q.gather_dofs();
            q.evaluate_global(&u).unwrap()
        };
        p.add_energy("sum", c, |b| {
            let v = b.vector(x, 0)?;
            let s = b.add_for_each(&[[0.3], [0.7]], |w| Ok(w[0] * v[0] * v[1]))?;
            b.set(s + v[2]);
            Ok(())
        })
        .unwrap();
        let u = p.gather_dofs();
        let r = p.evaluate_global(&u).unwrap();
        assert!((r.energy - direct.energy).abs() < 1e-14);
        for (a, b) in r.gradient.iter().zip(&direct.gradient) {
            assert!((a - b).abs() < 1e-14);
        }
        let e = p.energy(EnergyId(0));
        assert_eq!(e.terms().len(), 1);
    }

    #[test]
    fn quadrature_weights_sum() {
        let (mut p, x, c) = quad_problem(1, vec![0], 1);
        p.add_energy("w", c, |b| {
            let v = b.vector(x, 0)?;
            let s = b.add_for_each(&[[0.25]; 4], |w| Ok(w[0] + v[0] * 0.0))?;
            b.set(s + v[0] * 0.0);
            Ok(())
        })
        .unwrap();
        let u = p.gather_dofs();
        assert_eq!(p.energy_value(&u).unwrap(), 1.0);
        let (mut q, y, d) = quad_problem(1, vec![0], 1);
        q.add_energy("empty", d, |b| {
            let v = b.vector(y, 0)?;
            let s = b.add_for_each::<[f64; 1], _>(&[], |w| Ok(w[0]))?;
            b.set(s + v[1]);
            Ok(())
        })
        .unwrap();
        let u = q.gather_dofs();
        assert_eq!(q.energy_value(&u).unwrap(), u[1]);
    }

    #[test]
    fn topology_change_grows_pattern() {
        let (mut p, x, c) = quad_problem(6, vec![0, 1], 2);
        p.add_energy("spring", c, |b| {
            let xs = b.vectors(x)?;
            b.set(xs[0].try_sub(&xs[1])?.norm_sq());
            Ok(())
        })
        .unwrap();
        let u = p.gather_dofs();
        assert_eq!(p.evaluate_global(&u).unwrap().hessian.nnz_blocks(), 4);
        p.set_connectivity(c, vec![0, 1, 4, 5]).unwrap();
        let r = p.evaluate_global(&u).unwrap();
        assert_eq!(r.hessian.nnz_blocks(), 8);
        assert_eq!(r.active, vec![2]);
        p.set_connectivity(c, vec![]).unwrap();
        let r = p.evaluate_global(&u).unwrap();
        assert_eq!(r.energy, 0.0);
        p.set_connectivity(c, vec![0, 7]).unwrap();
        assert!(matches!(p.evaluate_global(&u), Err(Error::IndexOutOfBounds { .. })));
    }
}
