//! Quadratic bending and strain limiting for triangle meshes.
//!
//! Bending uses the constant quadratic form of a two-triangle flap. With the
//! shared edge `(x0, x1)`, opposite vertices `x2` and `x3`, and rest edges
//! `e0 = x1-x0, e1 = x2-x0, e2 = x3-x0, e3 = x2-x1, e4 = x3-x1`:
//!
//! ```text
//! c01 = cot(e0, e1)   c02 = cot(e0, e2)   c03 = cot(-e0, e3)   c04 = cot(-e0, e4)
//! K   = [c03 + c04, c01 + c02, -c01 - c03, -c02 - c04]
//! Q   = 3 / (A0 + A1) * (K^T K) (x) I3
//! ```
//!
//! where `A0, A1` are the rest areas of the two triangles. `K` annihilates
//! any planar configuration, so a flat rest flap has zero energy.

use alloc::vec::Vec;

use super::Conditional;
use crate::error::{Error, Result};
use crate::expr::{Matrix, Scalar, Vector, STABLE_NORM_EPS};

/// Per-edge bending data: the scaled stencil `k` with `Q = (k k^T) (x) I3`.
#[derive(Clone, Debug, PartialEq)]
pub struct BendingPrecompute {
    pub k: [f64; 4],
}

impl BendingPrecompute {
    /// The 12x12 quadratic form, row-major.
    pub fn q(&self) -> Vec<f64> {
        let mut q = alloc::vec![0.0; 144];
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..3 {
                    q[(3 * a + c) * 12 + 3 * b + c] = self.k[a] * self.k[b];
                }
            }
        }
        q
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    libm::sqrt(dot(a, a))
}

fn cot(a: [f64; 3], b: [f64; 3]) -> Result<f64> {
    let s = norm(cross(a, b));
    if !(s > 0.0) {
        return Err(Error::Invalid("degenerate bending flap".into()));
    }
    Ok(dot(a, b) / s)
}

/// Bending stencil of the flap `[x0, x1, x2, x3]` (shared edge first) at rest.
/// The assembled form is checked to be positive semi-definite.
pub fn precompute_bending(x: [[f64; 3]; 4]) -> Result<BendingPrecompute> {
    let e0 = sub(x[1], x[0]);
    let e1 = sub(x[2], x[0]);
    let e2 = sub(x[3], x[0]);
    let e3 = sub(x[2], x[1]);
    let e4 = sub(x[3], x[1]);
    let ne0 = [-e0[0], -e0[1], -e0[2]];
    let c01 = cot(e0, e1)?;
    let c02 = cot(e0, e2)?;
    let c03 = cot(ne0, e3)?;
    let c04 = cot(ne0, e4)?;
    let a0 = 0.5 * norm(cross(e0, e1));
    let a1 = 0.5 * norm(cross(e0, e2));
    let s = libm::sqrt(3.0 / (a0 + a1));
    let k = [s * (c03 + c04), s * (c01 + c02), -s * (c01 + c03), -s * (c02 + c04)];
    let pre = BendingPrecompute { k };
    check_psd(&pre.q(), 12)?;
    Ok(pre)
}

/// Symmetrizes `m` and rejects it if an eigenvalue is below
/// `-1e-10 * max |eigenvalue|`.
fn check_psd(m: &[f64], n: usize) -> Result<()> {
    let a = nalgebra::DMatrix::from_row_slice(n, n, m);
    let sym = (&a + a.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if min < -1e-10 * max {
        return Err(Error::Invalid(alloc::format!("bending form is not positive semi-definite (eigenvalue {min})")));
    }
    Ok(())
}

/// `k_b / 2 x_e^T Q x_e` for a 12-vector `x_e`.
pub fn bending_energy<'g>(x_e: &Vector<'g>, q: &Matrix<'g>, k_b: Scalar<'g>) -> Result<Scalar<'g>> {
    let qx = q.try_mul_vec(x_e)?;
    Ok(k_b * 0.5 * x_e.try_dot(&qx)?)
}

/// Same energy as [`bending_energy`] from the stencil: `k_b / 2 |sum_i k_i x_i|^2`.
pub fn bending_stencil_energy<'g>(x: &[Vector<'g>], k: &[Scalar<'g>], k_b: Scalar<'g>) -> Result<Scalar<'g>> {
    if x.len() != 4 || k.len() != 4 {
        return Err(Error::Arity { op: "bending_stencil_energy", expected: 4, got: x.len().min(k.len()) });
    }
    let mut lap = x[0].scale(k[0]);
    for i in 1..4 {
        lap = lap.try_add(&x[i].scale(k[i]))?;
    }
    Ok(k_b * 0.5 * lap.norm_sq())
}

/// Largest singular value of a 2x2 matrix `[[a, b], [c, d]]`:
/// `(|(a+d, b-c)| + |(a-d, b+c)|) / 2`, with stable norms.
pub fn max_singular_value_2x2<'g>(f: &Matrix<'g>) -> Result<Scalar<'g>> {
    if f.dims() != (2, 2) {
        return Err(Error::UnsupportedDimension { op: "max_singular_value_2x2", rows: f.rows(), cols: f.cols() });
    }
    let (a, b, c, d) = (f.get(0, 0), f.get(0, 1), f.get(1, 0), f.get(1, 1));
    let p = Vector::new(alloc::vec![a + d, b - c]).stable_norm(STABLE_NORM_EPS);
    let q = Vector::new(alloc::vec![a - d, b + c]).stable_norm(STABLE_NORM_EPS);
    Ok((p + q) * 0.5)
}

/// Strain limiting parameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StrainLimitParams {
    pub sigma_l: f64,
    pub k_sl: f64,
}

/// `k_sl A_e (sigma_1 - sigma_l)^3 / 3`, active while `sigma_1 > sigma_l`.
pub fn strain_limit_energy<'g>(f: &Matrix<'g>, area: Scalar<'g>, sigma_l: Scalar<'g>, k_sl: Scalar<'g>) -> Result<Conditional<'g>> {
    let s = max_singular_value_2x2(f)?;
    let c = s - sigma_l;
    Ok(Conditional { energy: area * k_sl * c * c * c / 3.0, condition: s.gt(sigma_l) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Condition, ExprGraph};

    const FLAT: [[f64; 3]; 4] = [[0.0, 0.0, 0.0], [1.0, 0.1, 0.0], [0.4, 0.9, 0.0], [0.6, -0.8, 0.0]];

    fn stencil_energy(pre: &BendingPrecompute, x: &[[f64; 3]; 4], k_b: f64) -> f64 {
        let g = ExprGraph::new();
        let xs: Vec<Vector> = x.iter().map(|p| Vector::from_consts(&g, p)).collect();
        let k: Vec<Scalar> = pre.k.iter().map(|&v| g.constant(v)).collect();
        bending_stencil_energy(&xs, &k, g.constant(k_b)).unwrap().as_const().unwrap()
    }

    #[test]
    fn flat_flap_has_zero_energy() {
        let pre = precompute_bending(FLAT).unwrap();
        assert!(stencil_energy(&pre, &FLAT, 1.0) < 1e-28);
        // any rigid motion of a flat flap stays flat
        let moved: [[f64; 3]; 4] = core::array::from_fn(|i| [FLAT[i][0] + 0.3, FLAT[i][2] - 1.0, FLAT[i][1]]);
        assert!(stencil_energy(&pre, &moved, 1.0) < 1e-28);
    }

    #[test]
    fn quadratic_form_matches_stencil() {
        let pre = precompute_bending(FLAT).unwrap();
        let bent = [[0.0, 0.0, 0.0], [1.0, 0.1, 0.0], [0.4, 0.9, 0.3], [0.6, -0.8, 0.2]];
        let g = ExprGraph::new();
        let xe = Vector::from_consts(&g, &bent.concat());
        let q = Matrix::from_consts(&g, 12, 12, &pre.q()).unwrap();
        let e = bending_energy(&xe, &q, g.constant(2.0)).unwrap().as_const().unwrap();
        let s = stencil_energy(&pre, &bent, 2.0);
        assert!(e > 0.0 && (e - s).abs() < 1e-12 * s);
        assert!((stencil_energy(&pre, &bent, 4.0) - 2.0 * s).abs() < 1e-12 * s);
    }

    #[test]
    fn degenerate_flap_is_rejected() {
        let bad = [[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(precompute_bending(bad).is_err());
    }

    fn sigma(f: [f64; 4]) -> f64 {
        let g = ExprGraph::new();
        let m = Matrix::from_consts(&g, 2, 2, &f).unwrap();
        max_singular_value_2x2(&m).unwrap().as_const().unwrap()
    }

    #[test]
    fn singular_value_examples() {
        assert_eq!(sigma([2.0, 0.0, 0.0, 1.0]), 2.0);
        assert_eq!(sigma([0.0, 2.0, 1.0, 0.0]), 2.0);
        assert_eq!(sigma([1.0, 0.0, 0.0, 1.0]), 1.0);
        let f = [0.3, -1.2, 0.7, 0.9];
        let m = nalgebra::Matrix2::new(f[0], f[1], f[2], f[3]);
        let sv = m.singular_values();
        assert!((sigma(f) - sv.max()).abs() < 1e-14);
    }

    #[test]
    fn strain_limit_value_and_activation() {
        let g = ExprGraph::new();
        let m = Matrix::from_consts(&g, 2, 2, &[2.0, 0.0, 0.0, 1.0]).unwrap();
        let c = strain_limit_energy(&m, g.constant(1.0), g.constant(1.5), g.constant(3.0)).unwrap();
        assert_eq!(c.energy.as_const(), Some(0.125));
        assert!(Condition::holds(c.condition.strict, c.condition.value.as_const().unwrap()));
        let c = strain_limit_energy(&m, g.constant(1.0), g.constant(2.0), g.constant(3.0)).unwrap();
        assert!(!Condition::holds(c.condition.strict, c.condition.value.as_const().unwrap()));
    }
}
