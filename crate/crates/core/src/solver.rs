//! Newton's method with preconditioned conjugate gradients and a
//! backtracking line search, plus a backward Euler driver.

use alloc::vec;
use alloc::vec::Vec;

use crate::assembly::{BcrsMatrix, GlobalEval};
use crate::bind::{ArrayId, ParamId, Problem};
use crate::error::{Error, Result};
use crate::par::Stopwatch;

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonOptions {
    /// Convergence threshold on the infinity norm of the free gradient.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub cg_rel_tol: f64,
    pub cg_max_iters: usize,
    pub armijo: f64,
    pub backtrack: f64,
    /// First regularization is `tau_init * mean |diag H|`.
    pub tau_init: f64,
    pub tau_growth: f64,
    pub max_regularizations: usize,
    /// Line-search failure below this step length.
    pub min_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            grad_tol: 1e-6,
            max_iters: 50,
            cg_rel_tol: 1e-4,
            cg_max_iters: 10_000,
            armijo: 1e-4,
            backtrack: 0.5,
            tau_init: 1e-6,
            tau_growth: 10.0,
            max_regularizations: 30,
            min_step: 1e-12,
        }
    }
}

impl NewtonOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.grad_tol, self.cg_rel_tol, self.armijo, self.tau_init, self.tau_growth, self.min_step];
        if positive.iter().any(|v| !(*v > 0.0)) || self.max_iters == 0 || self.cg_max_iters == 0 {
            return Err(Error::Invalid("Newton options must be positive".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::Invalid("backtracking factor must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One Newton iteration, recorded at the iterate it starts from.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub energy: f64,
    pub grad_inf: f64,
    pub cg_iters: usize,
    /// Accepted step length (0 when the line search failed).
    pub step: f64,
    pub tau: f64,
    /// Smallest guard distance at the accepted iterate, if any guard exists.
    pub min_guard: Option<f64>,
}

/// Outcome of one Newton solve. Recorded energies never increase, except
/// by at most `64 eps |E|` on a full step whose predicted decrease is
/// below that rounding level.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub line_search_failed: bool,
    /// Newton stopped at floating-point resolution: the line search made
    /// no progress in the energy, or a rounding-level step did not reduce
    /// the gradient.
    pub stalled: bool,
    pub final_energy: f64,
    pub final_grad_inf: f64,
    /// Active elements per energy at the final iterate.
    pub active: Vec<usize>,
    pub t_eval: f64,
    pub t_assemble: f64,
    pub t_solve: f64,
}

impl StepReport {
    pub fn newton_iters(&self) -> usize {
        self.iterations.len()
    }

    /// Energies at which iterations started, followed by the final energy.
    pub fn energy_sequence(&self) -> Vec<f64> {
        let mut e: Vec<f64> = self.iterations.iter().map(|r| r.energy).collect();
        e.push(self.final_energy);
        e
    }

    pub fn csv_header() -> &'static str {
        "newton_iters,E,grad_inf,t_eval_ms,t_assemble_ms,t_solve_ms"
    }

    /// Report fields in the order of [`StepReport::csv_header`].
    pub fn csv_fields(&self) -> alloc::string::String {
        alloc::format!(
            "{},{:e},{:e},{:.3},{:.3},{:.3}",
            self.newton_iters(),
            self.final_energy,
            self.final_grad_inf,
            self.t_eval * 1e3,
            self.t_assemble * 1e3,
            self.t_solve * 1e3
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final residual norm relative to `|b|`.
    pub rel_residual: f64,
    pub converged: bool,
    /// A search direction with `p^T H p <= 0` was met.
    pub negative_curvature: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Inverted diagonal blocks. Blocks that are not positive definite fall
/// back to the inverse absolute diagonal so the preconditioner stays SPD.
struct BlockJacobi {
    b: usize,
    n: usize,
    inv: Vec<f64>,
}

impl BlockJacobi {
    fn new(h: &BcrsMatrix) -> Self {
        let (b, n) = (h.block_size(), h.dim());
        let rows = h.n_block_rows();
        let mut inv = vec![0.0; rows * b * b];
        for r in 0..rows {
            let mut blk = vec![0.0; b * b];
            if let Some(k) = h.block_index(r, r) {
                blk.copy_from_slice(h.block(k));
            }
            for ii in 0..b {
                if r * b + ii >= n {
                    for jj in 0..b {
                        blk[ii * b + jj] = 0.0;
                        blk[jj * b + ii] = 0.0;
                    }
                    blk[ii * b + ii] = 1.0;
                }
            }
            let out = &mut inv[r * b * b..(r + 1) * b * b];
            if !spd_inverse(&blk, b, out) {
                out.fill(0.0);
                for ii in 0..b {
                    let d = blk[ii * b + ii].abs();
                    out[ii * b + ii] = if d > 0.0 && d.is_finite() { 1.0 / d } else { 1.0 };
                }
            }
        }
        BlockJacobi { b, n, inv }
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let b = self.b;
        for (blk, (zr, rr)) in self.inv.chunks(b * b).zip(z.chunks_mut(b).zip(r.chunks(b))) {
            for (ii, zi) in zr.iter_mut().enumerate() {
                let mut s = 0.0;
                for (jj, rj) in rr.iter().enumerate() {
                    s += blk[ii * b + jj] * rj;
                }
                *zi = s;
            }
        }
        debug_assert_eq!(z.len(), self.n);
    }
}

/// Inverse of a symmetric positive definite `b x b` matrix via Cholesky.
fn spd_inverse(a: &[f64], b: usize, out: &mut [f64]) -> bool {
    if b == 1 {
        out[0] = 1.0 / a[0];
        return a[0] > 0.0 && a[0].is_finite();
    }
    let mut l = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..=i {
            let mut s = a[i * b + j];
            for k in 0..j {
                s -= l[i * b + k] * l[j * b + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return false;
                }
                l[i * b + i] = libm::sqrt(s);
            } else {
                l[i * b + j] = s / l[j * b + j];
            }
        }
    }
    // columns of the inverse by forward and back substitution
    let mut y = vec![0.0; b];
    for c in 0..b {
        for i in 0..b {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l[i * b + k] * y[k];
            }
            y[i] = s / l[i * b + i];
        }
        for i in (0..b).rev() {
            let mut s = y[i];
            for k in i + 1..b {
                s -= l[k * b + i] * out[k * b + c];
            }
            out[i * b + c] = s / l[i * b + i];
        }
    }
    true
}

/// Block-Jacobi preconditioned conjugate gradients for `H x = b` from
/// `x = 0`. Stops when `|r| <= rel_tol |b|`, after `max_iters`, or at the
/// first direction of non-positive curvature.
pub fn cg_solve(h: &BcrsMatrix, b: &[f64], rel_tol: f64, max_iters: usize) -> Result<CgResult> {
    let n = h.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch { op: "cg_solve", lhs: (n, n), rhs: (b.len(), 1) });
    }
    let mut x = vec![0.0; n];
    let bnorm = libm::sqrt(dot(b, b));
    if bnorm == 0.0 {
        return Ok(CgResult { x, iterations: 0, rel_residual: 0.0, converged: true, negative_curvature: false });
    }
    let pre = BlockJacobi::new(h);
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    pre.apply(&r, &mut z);
    let mut p = z.clone();
    let mut hp = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    for it in 0..max_iters {
        h.matvec(&p, &mut hp)?;
        let php = dot(&p, &hp);
        if !(php > 0.0) {
            return Ok(CgResult { x, iterations: it, rel_residual: rel, converged: false, negative_curvature: true });
        }
        let alpha = rz / php;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * hp[i];
        }
        rel = libm::sqrt(dot(&r, &r)) / bnorm;
        if rel <= rel_tol {
            return Ok(CgResult { x, iterations: it + 1, rel_residual: rel, converged: true, negative_curvature: false });
        }
        pre.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(CgResult { x, iterations: max_iters, rel_residual: rel, converged: false, negative_curvature: false })
}

/// Zeroes rows and columns of fixed dofs and puts 1 on their diagonal.
pub fn constrain_hessian(h: &mut BcrsMatrix, fixed: &[bool]) {
    let b = h.block_size();
    let n = h.dim();
    let rows = h.n_block_rows();
    for r in 0..rows {
        for k in h.row_ptr()[r]..h.row_ptr()[r + 1] {
            let c = h.col_idx()[k];
            let blk = h.block_mut(k);
            for ii in 0..b {
                for jj in 0..b {
                    let (i, j) = (r * b + ii, c * b + jj);
                    if i < n && j < n && (fixed[i] || fixed[j]) {
                        blk[ii * b + jj] = if i == j { 1.0 } else { 0.0 };
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineSearchResult {
    pub alpha: f64,
    pub energy: f64,
    pub failed: bool,
    /// The direction was not a descent direction.
    pub ascent: bool,
    pub guard_halvings: usize,
    pub min_guard: Option<f64>,
    /// The full step was taken because the predicted decrease is below the
    /// rounding level of the energy, so `energy` cannot rank the trial.
    pub below_rounding: bool,
}

/// Relative rounding level of an assembled energy value.
const ENERGY_ROUNDING: f64 = 64.0 * f64::EPSILON;

/// Backtracking Armijo line search from `alpha = 1`. While any guard
/// distance is non-positive the step is halved first; non-finite energies
/// are treated as insufficient decrease.
pub fn line_search(problem: &mut Problem, u: &[f64], du: &[f64], energy: f64, g: &[f64], opts: &NewtonOptions) -> Result<LineSearchResult> {
    let slope = dot(g, du);
    let fail = |ascent, alpha| LineSearchResult { alpha, energy, failed: true, ascent, guard_halvings: 0, min_guard: None, below_rounding: false };
    if !(slope < 0.0) {
        return Ok(fail(true, 0.0));
    }
    let guarded = problem.has_guards();
    let mut alpha = 1.0;
    let mut halvings = 0;
    let mut trial = vec![0.0; u.len()];
    let step_to = |alpha: f64, trial: &mut [f64]| {
        for i in 0..u.len() {
            trial[i] = u[i] + alpha * du[i];
        }
    };
    let mut min_guard = None;
    if guarded {
        loop {
            step_to(alpha, &mut trial);
            min_guard = problem.min_guard(&trial)?;
            match min_guard {
                Some(d) if !(d > 0.0) => {
                    alpha *= 0.5;
                    halvings += 1;
                    if alpha < opts.min_step {
                        return Ok(LineSearchResult { guard_halvings: halvings, ..fail(false, 0.0) });
                    }
                }
                _ => break,
            }
        }
    }
    let rounding = ENERGY_ROUNDING * energy.abs();
    loop {
        step_to(alpha, &mut trial);
        let e = problem.energy_value(&trial)?;
        let armijo = e <= energy + opts.armijo * alpha * slope;
        let below_rounding = alpha == 1.0 && -slope <= rounding && e <= energy + rounding;
        if e.is_finite() && (armijo || below_rounding) {
            if guarded {
                min_guard = problem.min_guard(&trial)?;
            }
            return Ok(LineSearchResult { alpha, energy: e, failed: false, ascent: false, guard_halvings: halvings, min_guard, below_rounding });
        }
        alpha *= opts.backtrack;
        if alpha < opts.min_step {
            return Ok(LineSearchResult { guard_halvings: halvings, ..fail(false, 0.0) });
        }
    }
}

fn free_gradient(eval: &GlobalEval, fixed: &[bool]) -> Vec<f64> {
    eval.gradient.iter().zip(fixed).map(|(&g, &f)| if f { 0.0 } else { g }).collect()
}

/// Minimizes the problem's total energy from `u`, keeping dofs marked in
/// `fixed` at their current values. Returns the last accepted iterate.
pub fn minimize_newton(problem: &mut Problem, u: &mut [f64], fixed: &[bool], opts: &NewtonOptions) -> Result<StepReport> {
    opts.validate()?;
    if fixed.len() != u.len() {
        return Err(Error::StateLength { expected: u.len(), got: fixed.len() });
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("initial state is not finite".into()));
    }
    let mut report = StepReport::default();
    let mut eval = problem.evaluate_global(u)?;
    report.t_eval += eval.t_eval;
    report.t_assemble += eval.t_assemble;
    if !eval.energy.is_finite() {
        return Err(Error::Invalid("initial energy is not finite".into()));
    }
    let n_free = fixed.iter().filter(|f| !**f).count().max(1);
    loop {
        let g = free_gradient(&eval, fixed);
        let gnorm = norm_inf(&g);
        report.final_energy = eval.energy;
        report.final_grad_inf = gnorm;
        report.active = eval.active.clone();
        if gnorm <= opts.grad_tol {
            report.converged = true;
            break;
        }
        if report.iterations.len() >= opts.max_iters {
            break;
        }
        let clock = Stopwatch::start();
        let mut h = eval.hessian;
        constrain_hessian(&mut h, fixed);
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let tol = opts.cg_rel_tol.min(gnorm);
        let mean_diag = {
            let d = h.diagonal();
            d.iter().zip(fixed).filter(|(_, f)| !**f).map(|(v, _)| v.abs()).sum::<f64>() / n_free as f64
        };
        let mut tau = 0.0;
        let mut cg_iters = 0;
        let mut direction = None;
        for _ in 0..=opts.max_regularizations {
            let mut hr = h.clone();
            if tau > 0.0 {
                hr.add_diagonal(tau);
            }
            let res = cg_solve(&hr, &rhs, tol, opts.cg_max_iters)?;
            cg_iters += res.iterations;
            if !res.negative_curvature && dot(&res.x, &g) < 0.0 {
                direction = Some(res.x);
                break;
            }
            tau = if tau == 0.0 { opts.tau_init * mean_diag.max(f64::MIN_POSITIVE) } else { tau * opts.tau_growth };
        }
        report.t_solve += clock.elapsed();
        let Some(du) = direction else {
            report.line_search_failed = true;
            report.iterations.push(IterationRecord { energy: eval.energy, grad_inf: gnorm, cg_iters, step: 0.0, tau, min_guard: None });
            break;
        };
        let ls = line_search(problem, u, &du, eval.energy, &g, opts)?;
        report.iterations.push(IterationRecord {
            energy: eval.energy,
            grad_inf: gnorm,
            cg_iters,
            step: ls.alpha,
            tau,
            min_guard: ls.min_guard,
        });
        if ls.failed {
            report.line_search_failed = true;
            break;
        }
        // Near the optimum the required decrease can fall below the rounding
        // of E; the accepted step then leaves E unchanged and the next
        // iteration would repeat it exactly.
        if ls.energy >= eval.energy && !ls.below_rounding {
            report.stalled = true;
            break;
        }
        let previous = ls.below_rounding.then(|| u.to_vec());
        for (ui, di) in u.iter_mut().zip(&du) {
            *ui += ls.alpha * di;
        }
        let next = problem.evaluate_global(u)?;
        report.t_eval += next.t_eval;
        report.t_assemble += next.t_assemble;
        // a step the energy cannot rank is kept only if it shrinks the gradient
        if let Some(prev) = previous {
            if norm_inf(&free_gradient(&next, fixed)) >= gnorm {
                u.copy_from_slice(&prev);
                report.stalled = true;
                break;
            }
        }
        eval = next;
    }
    Ok(report)
}

/// Positions, previous positions and velocities of one dof set.
#[derive(Clone, Copy, Debug)]
pub struct DofState {
    pub x: ArrayId,
    pub x_prev: ArrayId,
    pub v: ArrayId,
}

/// Backward Euler on the incremental potential: the registered energies
/// must include an inertia term reading `x_prev`, `v` and the time step
/// parameter.
#[derive(Clone, Debug)]
pub struct BackwardEuler {
    pub sets: Vec<DofState>,
    pub dt: ParamId,
    pub options: NewtonOptions,
}

impl BackwardEuler {
    /// Advances one step. `prescribe` may overwrite entries of the initial
    /// guess (scripted dofs); `fixed` marks dofs that keep those values.
    pub fn step(&self, problem: &mut Problem, fixed: &[bool], prescribe: &mut dyn FnMut(&mut [f64])) -> Result<StepReport> {
        let dt = problem.param(self.dt);
        if !(dt > 0.0) {
            return Err(Error::Invalid("time step must be positive".into()));
        }
        for s in &self.sets {
            let x = problem.array(s.x).to_vec();
            problem.set_array(s.x_prev, x)?;
        }
        let mut u = problem.gather_dofs();
        prescribe(&mut u);
        let report = minimize_newton(problem, &mut u, fixed, &self.options)?;
        problem.scatter_dofs(&u)?;
        for s in &self.sets {
            let x = problem.array(s.x).to_vec();
            let xp = problem.array(s.x_prev);
            let v: Vec<f64> = x.iter().zip(xp).map(|(a, b)| (a - b) / dt).collect();
            problem.set_array(s.v, v)?;
        }
        Ok(report)
    }
}
