use alloc::vec::Vec;

use super::kinematics::{deformation_gradient_tet, tet_volume};
use crate::bind::EnergyBuilder;
use crate::error::{Error, Result};
use crate::expr::{Matrix, Scalar, Vector};

/// Tetrahedral element family. Quadratic tets use the VTK node order:
/// corners 0..4, then edge midpoints (0,1), (1,2), (0,2), (0,3), (1,3), (2,3).
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TetFamily {
    Linear,
    Quadratic,
}

/// Edge midpoint nodes of a quadratic tet as corner pairs, in node order.
pub const QUADRATIC_TET_EDGES: [(usize, usize); 6] = [(0, 1), (1, 2), (0, 2), (0, 3), (1, 3), (2, 3)];

impl TetFamily {
    pub fn nodes(self) -> usize {
        match self {
            TetFamily::Linear => 4,
            TetFamily::Quadratic => 10,
        }
    }

    /// Shape function gradients with respect to the reference coordinates,
    /// evaluated at a symbolic point.
    fn shape_gradients<'g>(self, xi: &[Scalar<'g>]) -> Vec<[Scalar<'g>; 3]> {
        let g = xi[0].graph();
        let c = |v: f64| g.constant(v);
        let (zero, one) = (c(0.0), c(1.0));
        let dl = [[-one, -one, -one], [one, zero, zero], [zero, one, zero], [zero, zero, one]];
        match self {
            TetFamily::Linear => dl.to_vec(),
            TetFamily::Quadratic => {
                let l = [1.0 - xi[0] - xi[1] - xi[2], xi[0], xi[1], xi[2]];
                let mut out = Vec::with_capacity(10);
                for i in 0..4 {
                    let s = l[i] * 4.0 - 1.0;
                    out.push([s * dl[i][0], s * dl[i][1], s * dl[i][2]]);
                }
                for &(a, b) in &QUADRATIC_TET_EDGES {
                    out.push(core::array::from_fn(|k| (l[a] * dl[b][k] + l[b] * dl[a][k]) * 4.0));
                }
                out
            }
        }
    }
}

/// Quadrature points in reference tet coordinates with their weights.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(points: Vec<[f64; 3]>, weights: Vec<f64>) -> Result<Self> {
        let r = QuadratureRule { points, weights };
        r.validate()?;
        Ok(r)
    }

    /// Centroid rule, exact for linear integrands.
    pub fn tet_1point() -> Self {
        QuadratureRule { points: alloc::vec![[0.25; 3]], weights: alloc::vec![1.0 / 6.0] }
    }

    /// Symmetric 4-point rule, exact for quadratic integrands.
    pub fn tet_4point() -> Self {
        let a = 0.5854101966249685;
        let b = 0.1381966011250105;
        QuadratureRule {
            points: alloc::vec![[b, b, b], [a, b, b], [b, a, b], [b, b, a]],
            weights: alloc::vec![1.0 / 24.0; 4],
        }
    }

    /// Default rule for a family: 1 point for linear, 4 for quadratic.
    pub fn for_family(family: TetFamily) -> Self {
        match family {
            TetFamily::Linear => Self::tet_1point(),
            TetFamily::Quadratic => Self::tet_4point(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() || self.points.len() != self.weights.len() {
            return Err(Error::Invalid("quadrature rule needs one weight per point".into()));
        }
        if self.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Invalid("quadrature weights must be positive".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0 / 6.0).abs() > 1e-12 {
            return Err(Error::Invalid(alloc::format!("quadrature weights sum to {sum}, reference tet volume is 1/6")));
        }
        Ok(())
    }

    /// Items `[w, xi0, xi1, xi2]` for a fixed summation.
    pub fn items(&self) -> Vec<[f64; 4]> {
        self.points.iter().zip(&self.weights).map(|(p, &w)| [w, p[0], p[1], p[2]]).collect()
    }
}

/// `J = sum_a x_a (grad_xi N_a)^T` at reference point `xi`.
pub fn tet_jacobian<'g>(family: TetFamily, nodes: &[Vector<'g>], xi: &[Scalar<'g>]) -> Result<Matrix<'g>> {
    if nodes.len() != family.nodes() {
        return Err(Error::Arity { op: "tet_jacobian", expected: family.nodes(), got: nodes.len() });
    }
    if xi.len() != 3 || nodes.iter().any(|n| n.len() != 3) {
        return Err(Error::Shape { expected: 3, got: xi.len() });
    }
    let dn = family.shape_gradients(xi);
    let mut entries = Vec::with_capacity(9);
    for r in 0..3 {
        for c in 0..3 {
            let mut acc: Option<Scalar<'g>> = None;
            for (x, d) in nodes.iter().zip(&dn) {
                let t = x[r] * d[c];
                acc = Some(match acc {
                    Some(a) => a + t,
                    None => t,
                });
            }
            entries.push(acc.expect("nodes"));
        }
    }
    Matrix::from_row_major(3, 3, entries)
}

/// One quadrature term `psi(F) w det J0` with `F = j J0^-1`, for the item
/// `ip = [w, xi0, xi1, xi2]`.
pub fn fem_point_energy<'g, P>(family: TetFamily, rest: &[Vector<'g>], x: &[Vector<'g>], ip: &Vector<'g>, psi: P) -> Result<Scalar<'g>>
where
    P: FnOnce(&Matrix<'g>) -> Result<Scalar<'g>>,
{
    if ip.len() != 4 {
        return Err(Error::Shape { expected: 4, got: ip.len() });
    }
    let w = ip[0];
    let xi = &ip.entries()[1..];
    let j0 = tet_jacobian(family, rest, xi)?;
    let j = tet_jacobian(family, x, xi)?;
    let f = j.try_matmul(&j0.inverse()?)?;
    Ok(psi(&f)? * w * j0.det()?)
}

/// Quadrature element energy `sum_i w_i det J0(xi_i) psi(F(xi_i))`,
/// registered as a fixed summation so one kernel serves every point.
pub fn fem_element_energy<'g, P>(
    b: &mut EnergyBuilder<'g>,
    family: TetFamily,
    rule: &QuadratureRule,
    rest: &[Vector<'g>],
    x: &[Vector<'g>],
    psi: P,
) -> Result<Scalar<'g>>
where
    P: FnOnce(&Matrix<'g>) -> Result<Scalar<'g>>,
{
    rule.validate()?;
    if rest.len() != family.nodes() || x.len() != family.nodes() {
        return Err(Error::Arity { op: "fem_element_energy", expected: family.nodes(), got: rest.len().min(x.len()) });
    }
    if family == TetFamily::Quadratic && rule.points.len() < 4 {
        return Err(Error::Invalid("quadratic tets need a rule exact for quadratics (4 or more points)".into()));
    }
    b.add_for_each(&rule.items(), |ip| fem_point_energy(family, rest, x, ip, psi))
}

/// Linear tet energy `V_e psi(F)` in closed form, without a summation.
pub fn linear_tet_energy<'g, P>(rest: &[Vector<'g>], x: &[Vector<'g>], psi: P) -> Result<Scalar<'g>>
where
    P: FnOnce(&Matrix<'g>) -> Result<Scalar<'g>>,
{
    let f = deformation_gradient_tet(rest, x)?;
    Ok(tet_volume(rest)? * psi(&f)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ExprGraph;

    fn affine(p: [f64; 3]) -> [f64; 3] {
        let a = [[1.1, 0.2, -0.1], [0.05, 0.9, 0.3], [-0.2, 0.1, 1.2]];
        core::array::from_fn(|r| a[r][0] * p[0] + a[r][1] * p[1] + a[r][2] * p[2] + [0.3, -0.1, 0.2][r])
    }

    fn quadratic_nodes(c: [[f64; 3]; 4]) -> Vec<[f64; 3]> {
        let mut out = c.to_vec();
        for &(a, b) in &QUADRATIC_TET_EDGES {
            out.push(core::array::from_fn(|k| 0.5 * (c[a][k] + c[b][k])));
        }
        out
    }

    const CORNERS: [[f64; 3]; 4] = [[0.0, 0.0, 0.0], [1.0, 0.1, 0.0], [0.2, 1.0, 0.1], [0.1, 0.0, 0.9]];

    #[test]
    fn rules_integrate_constants_and_quadratics() {
        for rule in [QuadratureRule::tet_1point(), QuadratureRule::tet_4point()] {
            rule.validate().unwrap();
        }
        // integral of xi^2 over the reference tet is 1/60
        let r = QuadratureRule::tet_4point();
        let s: f64 = r.points.iter().zip(&r.weights).map(|(p, w)| w * p[0] * p[0]).sum();
        assert!((s - 1.0 / 60.0).abs() < 1e-15);
        assert!(QuadratureRule::new(alloc::vec![[0.25; 3]], alloc::vec![0.2]).is_err());
    }

    #[test]
    fn quadratic_affine_matches_linear() {
        let g = ExprGraph::new();
        let rest_q: Vec<Vector> = quadratic_nodes(CORNERS).iter().map(|p| Vector::from_consts(&g, p)).collect();
        let def_q: Vec<Vector> = quadratic_nodes(CORNERS).iter().map(|&p| Vector::from_consts(&g, &affine(p))).collect();
        fn psi<'g>(f: &Matrix<'g>) -> Result<Scalar<'g>> {
            Ok(f.frobenius_norm_sq() + f.det()?)
        }
        let rule = QuadratureRule::tet_4point();
        let mut sum = 0.0;
        for it in rule.items() {
            let ip = Vector::from_consts(&g, &it);
            let e = fem_point_energy(TetFamily::Quadratic, &rest_q, &def_q, &ip, psi).unwrap();
            sum += g.eval(&[e.id()], &|_| 0.0)[0];
        }
        let e_lin = linear_tet_energy(&rest_q[..4], &def_q[..4], psi).unwrap();
        let lin = g.eval(&[e_lin.id()], &|_| 0.0)[0];
        assert!((sum - lin).abs() < 1e-12 * lin.abs(), "{sum} {lin}");
    }

    #[test]
    fn unit_density_gives_volume() {
        let g = ExprGraph::new();
        let rest: Vec<Vector> = CORNERS.iter().map(|p| Vector::from_consts(&g, p)).collect();
        let ip = Vector::from_consts(&g, &QuadratureRule::tet_1point().items()[0]);
        let e = fem_point_energy(TetFamily::Linear, &rest, &rest, &ip, |f| Ok(Scalar::constant(f.get(0, 0).graph(), 1.0))).unwrap();
        let v = tet_volume(&rest).unwrap();
        assert!((e.as_const().unwrap() - v.as_const().unwrap()).abs() < 1e-15);
    }

    #[test]
    fn node_count_mismatch_is_an_error() {
        let g = ExprGraph::new();
        let rest: Vec<Vector> = CORNERS.iter().map(|p| Vector::from_consts(&g, p)).collect();
        let ip = Vector::from_consts(&g, &[1.0 / 6.0, 0.25, 0.25, 0.25]);
        assert!(fem_point_energy(TetFamily::Quadratic, &rest, &rest, &ip, |f| Ok(f.get(0, 0))).is_err());
    }
}
