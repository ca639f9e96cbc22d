//! Slow dense reference for [`Problem::evaluate_global`].
//!
//! Every energy is differentiated again at call time and its expressions are
//! evaluated straight from the DAG (no kernels, no sparsity pattern). Sums
//! follow the (energy, element, local entry) order of the assembler, so the
//! two paths agree to the last bit when the kernels are exact tape replays.

use alloc::vec;
use alloc::vec::Vec;

use crate::bind::{element_dofs, gather_element, Problem, SlotSource};
use crate::diff::gradient_hessian;
use crate::error::{Error, Result};
use crate::expr::Condition;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseEval {
    pub energy: f64,
    pub gradient: Vec<f64>,
    /// Row-major `n x n`.
    pub hessian: Vec<f64>,
    pub active: Vec<usize>,
}

impl Problem {
    /// Dense `(E, g, H)` at `u` by direct substitution into the symbolic
    /// derivatives. Prepasses are run first, as in `evaluate_global`.
    pub fn evaluate_dense(&mut self, u: &[f64]) -> Result<DenseEval> {
        if !self.topology_checked {
            self.refresh_topology()?;
        }
        let layout = self.layout();
        if u.len() != layout.total {
            return Err(Error::StateLength { expected: layout.total, got: u.len() });
        }
        let mut prepasses = core::mem::take(&mut self.prepasses);
        let res = prepasses.iter_mut().try_for_each(|f| f(&mut self.data, u));
        self.prepasses = prepasses;
        res?;

        let n = layout.total;
        let mut out = DenseEval { energy: 0.0, gradient: vec![0.0; n], hessian: vec![0.0; n * n], active: Vec::new() };
        for def in &self.energies {
            let g = &def.graph;
            let nd = def.dofs.len();
            let main = gradient_hessian(g, def.outer, &def.dofs)?.output_roots();
            let terms = def
                .terms()
                .iter()
                .map(|t| gradient_hessian(g, t.root, &def.dofs).map(|b| b.output_roots()))
                .collect::<Result<Vec<_>>>()?;
            let mut active = 0;
            let mut dofs = Vec::with_capacity(nd);
            for e in 0..self.data.conns[def.rt.conn].len() {
                let mut inputs = gather_element(&self.data, &layout, u, def, e);
                if let Some((c, strict)) = def.condition {
                    let v = g.eval(&[c], &|s| inputs[s as usize])[0];
                    if !Condition::holds(strict, v) {
                        continue;
                    }
                }
                active += 1;
                let mut acc = if def.rt.main.is_some() { g.eval(&main, &|s| inputs[s as usize]) } else { vec![0.0; 1 + nd + nd * nd] };
                for (k, (t, roots)) in def.terms().iter().zip(&terms).enumerate() {
                    for item in &t.items {
                        for (slot, src) in def.sources().iter().enumerate() {
                            if let SlotSource::Item { term, component } = *src {
                                if term == k {
                                    inputs[slot] = item[component];
                                }
                            }
                        }
                        let vals = g.eval(roots, &|s| inputs[s as usize]);
                        for (a, b) in acc.iter_mut().zip(&vals) {
                            *a += *b;
                        }
                    }
                }
                if acc.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { energy: def.name.clone(), element: e });
                }
                dofs.clear();
                element_dofs(&self.data, &layout, &def.rt, e, &mut dofs);
                out.energy += acc[0];
                for (i, &gi) in dofs.iter().enumerate() {
                    out.gradient[gi] += acc[1 + i];
                }
                for (i, &gi) in dofs.iter().enumerate() {
                    for (j, &gj) in dofs.iter().enumerate() {
                        out.hessian[gi * n + gj] += acc[1 + nd + i * nd + j];
                    }
                }
            }
            out.active.push(active);
        }
        Ok(out)
    }
}
