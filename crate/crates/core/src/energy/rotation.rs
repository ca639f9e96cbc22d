use alloc::boxed::Box;

use crate::bind::{ArrayId, ConnId, Prepass};
use crate::error::{Error, Result};

/// Rotation factor `R = U V^T` of the polar decomposition of a row-major
/// 3x3 matrix. Reflections are removed by flipping the singular vector of
/// the smallest singular value.
pub fn polar_rotation(f: &[f64; 9]) -> [f64; 9] {
    let m = nalgebra::Matrix3::from_row_slice(f);
    let svd = m.svd(true, true);
    let (mut u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let k = svd.singular_values.imin();
        u.column_mut(k).neg_mut();
        r = u * v_t;
    }
    core::array::from_fn(|i| r[(i / 3, i % 3)])
}

/// Prepass that writes, for every tet of `tets`, the rotation of the
/// current deformation gradient (from the first four nodes) into `rot`
/// (stride 9, one entry per tet). `x` is a stride-3 dof array and `rest`
/// holds rest positions with the same node indexing.
pub fn rotation_prepass(x: ArrayId, rest: ArrayId, tets: ConnId, rot: ArrayId) -> Prepass {
    Box::new(move |data, u| {
        let pos = data.dof_slice(u, x).ok_or_else(|| Error::Invalid("rotation prepass: positions must be a dof array".into()))?;
        let conn = data.connectivity(tets).clone();
        let xr = data.array(rest).to_vec();
        let out = data.array_mut(rot);
        if out.len() != conn.len() * 9 {
            return Err(Error::Shape { expected: conn.len() * 9, got: out.len() });
        }
        for e in 0..conn.len() {
            let n = conn.element(e);
            let f = deformation_gradient(&xr, pos, [n[0], n[1], n[2], n[3]])?;
            out[9 * e..9 * e + 9].copy_from_slice(&polar_rotation(&f));
        }
        Ok(())
    })
}

fn deformation_gradient(rest: &[f64], x: &[f64], n: [usize; 4]) -> Result<[f64; 9]> {
    let edges = |p: &[f64]| {
        let mut m = nalgebra::Matrix3::zeros();
        for c in 0..3 {
            for r in 0..3 {
                m[(r, c)] = p[3 * n[c + 1] + r] - p[3 * n[0] + r];
            }
        }
        m
    };
    let dm = edges(rest).try_inverse().ok_or_else(|| Error::Invalid("degenerate rest tet".into()))?;
    let f = edges(x) * dm;
    Ok(core::array::from_fn(|i| f[(i / 3, i % 3)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_of_rotated_stretch() {
        let (c, s) = (libm::cos(0.8), libm::sin(0.8));
        let q = nalgebra::Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        let stretch = nalgebra::Matrix3::new(2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5);
        let f = q * stretch;
        let fr: [f64; 9] = core::array::from_fn(|i| f[(i / 3, i % 3)]);
        let r = polar_rotation(&fr);
        for i in 0..9 {
            assert!((r[i] - q[(i / 3, i % 3)]).abs() < 1e-12);
        }
    }

    #[test]
    fn inverted_input_gives_proper_rotation() {
        let f = [-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0];
        let r = polar_rotation(&f);
        let m = nalgebra::Matrix3::from_row_slice(&r);
        assert!((m.determinant() - 1.0).abs() < 1e-12);
        assert!((m * m.transpose() - nalgebra::Matrix3::identity()).norm() < 1e-12);
    }
}
