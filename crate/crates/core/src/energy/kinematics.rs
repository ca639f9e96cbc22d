use crate::error::{Error, Result};
use crate::expr::{Matrix, Scalar, Vector};

fn edge_matrix<'g>(p: &[Vector<'g>]) -> Result<Matrix<'g>> {
    let e: alloc::vec::Vec<Vector<'g>> = p[1..].iter().map(|q| q.try_sub(&p[0])).collect::<Result<_>>()?;
    Matrix::from_columns(&e)
}

/// `F = [x1-x0, x2-x0, x3-x0] [X1-X0, X2-X0, X3-X0]^-1`.
pub fn deformation_gradient_tet<'g>(rest: &[Vector<'g>], x: &[Vector<'g>]) -> Result<Matrix<'g>> {
    if rest.len() != 4 || x.len() != 4 {
        return Err(Error::Arity { op: "deformation_gradient_tet", expected: 4, got: rest.len().min(x.len()) });
    }
    let dm = edge_matrix(rest)?;
    let ds = edge_matrix(x)?;
    ds.try_matmul(&dm.inverse()?)
}

/// Signed volume `det([X1-X0, X2-X0, X3-X0]) / 6`.
pub fn tet_volume<'g>(rest: &[Vector<'g>]) -> Result<Scalar<'g>> {
    Ok(edge_matrix(rest)?.det()? / 6.0)
}

/// 2x2 deformation gradient of a triangle. `rest` holds 2D rest
/// coordinates; the deformed edges are expressed in an orthonormal frame of
/// the deformed triangle's plane (first axis along `x1 - x0`).
pub fn deformation_gradient_tri<'g>(rest: &[Vector<'g>], x: &[Vector<'g>]) -> Result<Matrix<'g>> {
    if rest.len() != 3 || x.len() != 3 {
        return Err(Error::Arity { op: "deformation_gradient_tri", expected: 3, got: rest.len().min(x.len()) });
    }
    if rest.iter().any(|r| r.len() != 2) {
        return Err(Error::DimensionMismatch { op: "deformation_gradient_tri", lhs: (2, 1), rhs: (rest[0].len(), 1) });
    }
    let e1 = x[1].try_sub(&x[0])?;
    let e2 = x[2].try_sub(&x[0])?;
    let l1 = e1.norm();
    let t1 = e1.scale(1.0 / l1);
    let p = e2.dot(&t1);
    let n = e2.try_sub(&t1.scale(p))?;
    let h = n.norm();
    let g = l1.graph();
    let ds = Matrix::from_row_major(2, 2, alloc::vec![l1, p, g.constant(0.0), h])?;
    let dm = edge_matrix(rest)?;
    ds.try_matmul(&dm.inverse()?)
}

/// Rest area of a triangle from 2D rest coordinates.
pub fn tri_area<'g>(rest: &[Vector<'g>]) -> Result<Scalar<'g>> {
    Ok(edge_matrix(rest)?.det()? * 0.5)
}

/// 2D rest coordinates of a 3D triangle in its own plane: `X0` at the
/// origin, `X1` on the first axis.
pub fn rest_frame_tri(p: [[f64; 3]; 3]) -> Result<[[f64; 2]; 3]> {
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let e1 = sub(p[1], p[0]);
    let e2 = sub(p[2], p[0]);
    let l1 = libm::sqrt(dot(e1, e1));
    if !(l1 > 0.0) {
        return Err(Error::Invalid("degenerate triangle".into()));
    }
    let t1 = [e1[0] / l1, e1[1] / l1, e1[2] / l1];
    let px = dot(e2, t1);
    let n = [e2[0] - px * t1[0], e2[1] - px * t1[1], e2[2] - px * t1[2]];
    let h = libm::sqrt(dot(n, n));
    if !(h > 1e-14 * l1) {
        return Err(Error::Invalid("degenerate triangle".into()));
    }
    Ok([[0.0, 0.0], [l1, 0.0], [px, h]])
}
