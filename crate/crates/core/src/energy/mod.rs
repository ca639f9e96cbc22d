//! Symbolic energy builders: inertia, hyperelastic materials, quadrature
//! FEM, contact barrier and friction, cloth bending and strain limiting,
//! penalty constraints and signed distance functions.
//!
//! Builders take symbolic values and return symbolic values; binding to
//! data happens in [`crate::bind::EnergyBuilder`].

mod cloth;
mod constraint;
mod contact;
mod fem;
mod kinematics;
mod material;
mod rotation;
pub mod sdf;

pub use cloth::{bending_energy, bending_stencil_energy, max_singular_value_2x2, precompute_bending, strain_limit_energy, BendingPrecompute, StrainLimitParams};
pub use constraint::{attachment_energy, ball_joint, damped_spring, direction_lock, slider};
pub use contact::{contact_barrier, friction_energy, ContactParams};
pub use fem::{fem_element_energy, fem_point_energy, linear_tet_energy, tet_jacobian, QuadratureRule, TetFamily, QUADRATIC_TET_EDGES};
pub use kinematics::{deformation_gradient_tet, deformation_gradient_tri, rest_frame_tri, tet_volume, tri_area};
pub use material::{strain_energy_density, MaterialModel, MaterialParams};
pub use rotation::{polar_rotation, rotation_prepass};

use crate::error::{Error, Result};
use crate::expr::{Condition, Scalar, Vector};

/// An energy together with the activation condition under which it applies.
#[derive(Clone, Copy)]
pub struct Conditional<'g> {
    pub energy: Scalar<'g>,
    pub condition: Condition<'g>,
}

/// Backward Euler inertia `m / (2 dt^2) |x - x_tilde|^2` with
/// `x_tilde = x0 + dt v0 + dt^2 a`.
pub fn inertia_energy<'g>(x: &Vector<'g>, x0: &Vector<'g>, v0: &Vector<'g>, a: &Vector<'g>, dt: Scalar<'g>, m: Scalar<'g>) -> Result<Scalar<'g>> {
    if dt.as_const() == Some(0.0) {
        return Err(Error::Invalid("inertia energy needs a nonzero time step".into()));
    }
    let x_tilde = x0.try_add(&v0.scale(dt))?.try_add(&a.scale(dt * dt))?;
    let d = x.try_sub(&x_tilde)?;
    Ok(m / (dt * dt * 2.0) * d.norm_sq())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::gradient_hessian;
    use crate::expr::ExprGraph;

    #[test]
    fn inertia_examples() {
        let g = ExprGraph::new();
        let x = g.symbol_vector("x", 0, 3).unwrap();
        let zero = Vector::from_consts(&g, &[0.0; 3]);
        let e = inertia_energy(&x, &zero, &zero, &zero, g.constant(1.0), g.constant(2.0)).unwrap();
        assert_eq!(g.eval(&[e.id()], &|s| [1.0, 0.0, 0.0][s as usize])[0], 1.0);
        let b = gradient_hessian(&g, e.id(), &x.ids()).unwrap();
        let v = g.eval(&b.output_roots(), &|s| [0.3, -0.2, 0.9][s as usize]);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(v[4 + i * 3 + j], if i == j { 2.0 } else { 0.0 });
            }
        }
        assert!(inertia_energy(&x, &zero, &zero, &zero, g.constant(0.0), g.constant(1.0)).is_err());
    }

    #[test]
    fn inertia_vanishes_at_predicted_position() {
        let g = ExprGraph::new();
        let x = g.symbol_vector("x", 0, 3).unwrap();
        let x0 = Vector::from_consts(&g, &[1.0, 2.0, 3.0]);
        let v0 = Vector::from_consts(&g, &[0.5, 0.0, -1.0]);
        let a = Vector::from_consts(&g, &[0.0, 0.0, -9.81]);
        let dt = 0.01;
        let e = inertia_energy(&x, &x0, &v0, &a, g.constant(dt), g.constant(3.0)).unwrap();
        let xt = [1.0 + dt * 0.5, 2.0, 3.0 - dt - dt * dt * 9.81];
        let b = gradient_hessian(&g, e.id(), &x.ids()).unwrap();
        let v = g.eval(&b.output_roots(), &|s| xt[s as usize]);
        assert!(v[0].abs() < 1e-20);
        assert!(v[1..4].iter().all(|g| g.abs() < 1e-9));
    }
}
