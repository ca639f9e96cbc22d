//! Signed distance functions, negative inside. Symbolic builders are used
//! for contact energies; [`Sdf`] evaluates the same shapes numerically.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::expr::{branch, Scalar, Vector, STABLE_NORM_EPS};

/// `n . p - offset` for a unit normal `n`.
pub fn halfspace<'g>(p: &Vector<'g>, n: &Vector<'g>, offset: Scalar<'g>) -> Result<Scalar<'g>> {
    Ok(p.try_dot(n)? - offset)
}

/// `|p - c| - r`.
pub fn sphere<'g>(p: &Vector<'g>, c: &Vector<'g>, r: Scalar<'g>) -> Result<Scalar<'g>> {
    Ok(p.try_sub(c)?.norm() - r)
}

/// Capped cylinder of radius `r` around the segment `a`-`b`.
///
/// Works on squared distances scaled by `|b - a|^2` to avoid square roots
/// until the end; the region (inside, beside the side wall, beyond a cap,
/// past a rim) is selected with nested branches.
pub fn capped_cylinder<'g>(p: &Vector<'g>, a: &Vector<'g>, b: &Vector<'g>, r: Scalar<'g>) -> Result<Scalar<'g>> {
    let ba = b.try_sub(a)?;
    let pa = p.try_sub(a)?;
    let baba = ba.norm_sq();
    let paba = pa.try_dot(&ba)?;
    let radial = pa.scale(baba).try_sub(&ba.scale(paba))?;
    let x = radial.stable_norm(STABLE_NORM_EPS) - r * baba;
    let y = (paba - baba * 0.5).abs() - baba * 0.5;
    let x2 = x * x;
    let y2 = y * y * baba;
    let zero = Scalar::constant(x.graph(), 0.0);
    let outside = branch(x, x2, zero) + branch(y, y2, zero);
    let inside = -x2.min(y2);
    let d = branch(x.max(y), outside, inside);
    Ok(branch(d, d.sqrt(), -(-d).sqrt()) / baba)
}

/// A numeric signed distance function.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Sdf {
    Halfspace { normal: [f64; 3], offset: f64 },
    Sphere { center: [f64; 3], radius: f64 },
    CappedCylinder { a: [f64; 3], b: [f64; 3], radius: f64 },
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl Sdf {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Sdf::Halfspace { normal, offset } => (dot(*normal, *normal) - 1.0).abs() < 1e-9 && offset.is_finite(),
            Sdf::Sphere { radius, .. } => *radius > 0.0,
            Sdf::CappedCylinder { a, b, radius } => *radius > 0.0 && dot(sub(*b, *a), sub(*b, *a)) > 0.0,
        };
        if !ok {
            return Err(Error::Invalid(alloc::format!("invalid collider {self:?}")));
        }
        Ok(())
    }

    /// Shape parameters in the order [`Sdf::build`] reads them.
    pub fn params(&self) -> Vec<f64> {
        match self {
            Sdf::Halfspace { normal, offset } => [&normal[..], &[*offset]].concat(),
            Sdf::Sphere { center, radius } => [&center[..], &[*radius]].concat(),
            Sdf::CappedCylinder { a, b, radius } => [&a[..], &b[..], &[*radius]].concat(),
        }
    }

    /// Builds the symbolic distance of `p` with shape parameters `q`
    /// (laid out as in [`Sdf::params`]).
    pub fn build<'g>(&self, p: &Vector<'g>, q: &[Scalar<'g>]) -> Result<Scalar<'g>> {
        let n = self.params().len();
        if q.len() != n {
            return Err(Error::Shape { expected: n, got: q.len() });
        }
        let v = |r: core::ops::Range<usize>| Vector::new(q[r].to_vec());
        match self {
            Sdf::Halfspace { .. } => halfspace(p, &v(0..3), q[3]),
            Sdf::Sphere { .. } => sphere(p, &v(0..3), q[3]),
            Sdf::CappedCylinder { .. } => capped_cylinder(p, &v(0..3), &v(3..6), q[6]),
        }
    }

    pub fn distance(&self, p: [f64; 3]) -> f64 {
        match self {
            Sdf::Halfspace { normal, offset } => dot(p, *normal) - offset,
            Sdf::Sphere { center, radius } => libm::sqrt(dot(sub(p, *center), sub(p, *center))) - radius,
            Sdf::CappedCylinder { a, b, radius } => {
                // distance to a rectangle in (axial, radial) coordinates
                let ba = sub(*b, *a);
                let len = libm::sqrt(dot(ba, ba));
                let pa = sub(p, *a);
                let t = dot(pa, ba) / len;
                let rho = libm::sqrt((dot(pa, pa) - t * t).max(0.0));
                let qa = libm::fabs(t - 0.5 * len) - 0.5 * len;
                let qr = rho - radius;
                let (oa, or) = (qa.max(0.0), qr.max(0.0));
                let out = libm::sqrt(oa * oa + or * or);
                out + qa.max(qr).min(0.0)
            }
        }
    }

    /// Outward unit normal at `p` (central differences for the cylinder).
    pub fn normal(&self, p: [f64; 3]) -> [f64; 3] {
        let g = match self {
            Sdf::Halfspace { normal, .. } => *normal,
            Sdf::Sphere { center, .. } => sub(p, *center),
            Sdf::CappedCylinder { .. } => {
                let h = 1e-7;
                core::array::from_fn(|k| {
                    let mut a = p;
                    let mut b = p;
                    a[k] += h;
                    b[k] -= h;
                    (self.distance(a) - self.distance(b)) / (2.0 * h)
                })
            }
        };
        let n = libm::sqrt(dot(g, g));
        if n > 0.0 {
            [g[0] / n, g[1] / n, g[2] / n]
        } else {
            [0.0, 0.0, 1.0]
        }
    }

    /// The shape moved by `d`.
    pub fn translated(&self, d: [f64; 3]) -> Sdf {
        let add = |a: [f64; 3]| [a[0] + d[0], a[1] + d[1], a[2] + d[2]];
        match self {
            Sdf::Halfspace { normal, offset } => Sdf::Halfspace { normal: *normal, offset: offset + dot(*normal, d) },
            Sdf::Sphere { center, radius } => Sdf::Sphere { center: add(*center), radius: *radius },
            Sdf::CappedCylinder { a, b, radius } => Sdf::CappedCylinder { a: add(*a), b: add(*b), radius: *radius },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ExprGraph;

    fn sym_distance(s: &Sdf, p: [f64; 3]) -> f64 {
        let g = ExprGraph::new();
        let pv = Vector::from_consts(&g, &p);
        let q: Vec<Scalar> = s.params().iter().map(|&v| g.constant(v)).collect();
        let d = s.build(&pv, &q).unwrap();
        g.eval(&[d.id()], &|_| 0.0)[0]
    }

    #[test]
    fn simple_shapes() {
        let sp = Sdf::Sphere { center: [1.0, 2.0, 3.0], radius: 0.5 };
        assert_eq!(sym_distance(&sp, [1.0, 2.0, 3.0]), -0.5);
        let hs = Sdf::Halfspace { normal: [0.0, 0.0, 1.0], offset: 0.0 };
        assert_eq!(sym_distance(&hs, [0.0, 0.0, 2.0]), 2.0);
        assert_eq!(hs.translated([0.0, 0.0, 1.0]).distance([0.0, 0.0, 2.0]), 1.0);
    }

    #[test]
    fn cylinder_regions() {
        let c = Sdf::CappedCylinder { a: [0.0, 0.0, 0.0], b: [0.0, 0.0, 2.0], radius: 1.0 };
        let cases = [
            ([0.0, 0.0, 1.0], -1.0),
            ([3.0, 0.0, 1.0], 2.0),
            ([0.0, 0.0, 5.0], 3.0),
            ([0.5, 0.0, -1.0], 1.0),
            ([4.0, 0.0, 6.0], 5.0),
            ([0.0, 0.9, 1.0], -0.1),
            ([0.0, 0.0, 1.9], -0.1),
        ];
        for (p, d) in cases {
            assert!((sym_distance(&c, p) - d).abs() < 1e-12, "{p:?}");
            assert!((c.distance(p) - d).abs() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn normals() {
        let c = Sdf::CappedCylinder { a: [0.0, 0.0, 0.0], b: [0.0, 0.0, 2.0], radius: 1.0 };
        let n = c.normal([2.0, 0.0, 1.0]);
        assert!((n[0] - 1.0).abs() < 1e-6 && n[2].abs() < 1e-6);
        let s = Sdf::Sphere { center: [0.0; 3], radius: 1.0 };
        assert_eq!(s.normal([0.0, 3.0, 0.0]), [0.0, 1.0, 0.0]);
    }
}
