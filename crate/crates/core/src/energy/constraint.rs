use crate::error::Result;
use crate::expr::{branch, Scalar, Vector, STABLE_NORM_EPS};

/// `k/2 |x_a - x_b|^2`.
pub fn ball_joint<'g>(xa: &Vector<'g>, xb: &Vector<'g>, k: Scalar<'g>) -> Result<Scalar<'g>> {
    Ok(k * 0.5 * xa.try_sub(xb)?.norm_sq())
}

/// `k/2 |d_a - d_b|^2` for unit directions.
pub fn direction_lock<'g>(da: &Vector<'g>, db: &Vector<'g>, k: Scalar<'g>) -> Result<Scalar<'g>> {
    Ok(k * 0.5 * da.try_sub(db)?.norm_sq())
}

/// `k/2 |r - (r . d_a) d_a|^2` with `r = x_b - x_a`: keeps `x_b` on the
/// line through `x_a` along the unit direction `d_a`.
pub fn slider<'g>(xa: &Vector<'g>, xb: &Vector<'g>, da: &Vector<'g>, k: Scalar<'g>) -> Result<Scalar<'g>> {
    let r = xb.try_sub(xa)?;
    let along = r.try_dot(da)?;
    Ok(k * 0.5 * r.try_sub(&da.scale(along))?.norm_sq())
}

/// `k_sp/2 (L/l0 - 1)^2 + alpha/(2 l0) ((v_a - v_b) . n)^2` with
/// `L = |x_a - x_b|` and `n = (x_a - x_b) / L`. Both terms use a stable
/// norm; the damping term is zero for coincident endpoints.
pub fn damped_spring<'g>(
    xa: &Vector<'g>,
    xb: &Vector<'g>,
    va: &Vector<'g>,
    vb: &Vector<'g>,
    k_sp: Scalar<'g>,
    l0: Scalar<'g>,
    alpha: Scalar<'g>,
) -> Result<Scalar<'g>> {
    let d = xa.try_sub(xb)?;
    let len = d.stable_norm(STABLE_NORM_EPS);
    let stretch = len / l0 - 1.0;
    let rate = va.try_sub(vb)?.try_dot(&d)?;
    let zero = Scalar::constant(len.graph(), 0.0);
    let sq = d.norm_sq();
    let proj = branch(sq - STABLE_NORM_EPS * STABLE_NORM_EPS, rate / sq.sqrt(), zero);
    Ok(k_sp * 0.5 * stretch * stretch + alpha / (l0 * 2.0) * proj * proj)
}

/// Cross-system attachment `k/2 |x_a - x_b|^2`; the two nodes may belong
/// to different dof sets.
pub fn attachment_energy<'g>(xa: &Vector<'g>, xb: &Vector<'g>, k: Scalar<'g>) -> Result<Scalar<'g>> {
    ball_joint(xa, xb, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ExprGraph;

    fn v<'g>(g: &'g ExprGraph, p: [f64; 3]) -> Vector<'g> {
        Vector::from_consts(g, &p)
    }

    #[test]
    fn constraint_manifolds() {
        let g = ExprGraph::new();
        let k = g.constant(10.0);
        let a = v(&g, [0.1, 0.2, 0.3]);
        assert_eq!(ball_joint(&a, &a, k).unwrap().as_const(), Some(0.0));
        assert_eq!(direction_lock(&a, &a, k).unwrap().as_const(), Some(0.0));
        let s = 1.0 / libm::sqrt(3.0);
        let dir = v(&g, [s, s, s]);
        let b = v(&g, [2.1, 2.2, 2.3]);
        assert!(slider(&a, &b, &dir, k).unwrap().as_const().unwrap().abs() < 1e-28);
        let off = v(&g, [2.1, 2.2, 2.8]);
        assert!(slider(&a, &off, &dir, k).unwrap().as_const().unwrap() > 0.0);
        assert_eq!(ball_joint(&a, &v(&g, [1.1, 0.2, 0.3]), k).unwrap().as_const(), Some(5.0));
    }

    #[test]
    fn spring_rest_and_damping() {
        let g = ExprGraph::new();
        let (k, l0, alpha) = (g.constant(4.0), g.constant(2.0), g.constant(3.0));
        let xa = v(&g, [0.0, 0.0, 2.0]);
        let xb = v(&g, [0.0, 0.0, 0.0]);
        let vel = v(&g, [0.3, -0.1, 0.2]);
        assert_eq!(damped_spring(&xa, &xb, &vel, &vel, k, l0, alpha).unwrap().as_const(), Some(0.0));
        // only the velocity along the spring is damped
        let va = v(&g, [5.0, 1.0, 0.5]);
        let zero = Vector::zeros(&g, 3);
        let e = damped_spring(&xa, &xb, &va, &zero, k, l0, alpha).unwrap().as_const().unwrap();
        assert!((e - 3.0 / 4.0 * 0.25).abs() < 1e-15);
        // coincident endpoints: deterministic, damping term dropped
        let e = damped_spring(&xb, &xb, &va, &zero, k, l0, alpha).unwrap().as_const().unwrap();
        assert_eq!(e, 2.0);
    }

    #[test]
    fn attachment_cross_block() {
        let g = ExprGraph::new();
        let xa = g.symbol_vector("a", 0, 3).unwrap();
        let xb = g.symbol_vector("b", 3, 3).unwrap();
        let e = attachment_energy(&xa, &xb, g.constant(7.0)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let d = g.derivative(g.derivative(e.id(), xa[i].id()).unwrap(), xb[j].id()).unwrap();
                assert_eq!(g.const_value(d), Some(if i == j { -7.0 } else { 0.0 }));
            }
        }
    }
}
