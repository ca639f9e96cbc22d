use super::Conditional;
use crate::error::{Error, Result};
use crate::expr::{branch, Matrix, Scalar, Vector, STABLE_NORM_EPS};

/// Barrier and friction constants shared by a contact energy.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ContactParams {
    /// Barrier stiffness.
    pub k_c: f64,
    /// Activation distance.
    pub d_hat: f64,
    /// Friction coefficient.
    pub mu_f: f64,
    /// Stick/slip velocity threshold.
    pub y_hat: f64,
    /// Stable-norm floor on the tangential velocity.
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    STABLE_NORM_EPS
}

impl ContactParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.k_c > 0.0 && self.d_hat > 0.0 && self.y_hat > 0.0 && self.eps > 0.0 && self.mu_f >= 0.0;
        if !ok {
            return Err(Error::Invalid(alloc::format!("contact parameters need k_c, d_hat, y_hat, eps > 0 and mu_f >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// `-k_c (d - d_hat)^2 ln(d / d_hat)`, active while `d <= d_hat`.
pub fn contact_barrier<'g>(d: Scalar<'g>, d_hat: Scalar<'g>, k_c: Scalar<'g>) -> Conditional<'g> {
    let gap = d - d_hat;
    Conditional { energy: -k_c * gap * gap * (d / d_hat).ln(), condition: d.le(d_hat) }
}

/// Smoothed Coulomb friction potential of the relative velocity
/// `y = |T (v_a - v_b)|`: `mu_f f_n y` above `y_hat`, and the C1 cubic
/// `mu_f f_n (-y^3 / (3 y_hat^2) + y^2 / y_hat + y_hat / 3)` below.
pub fn friction_energy<'g>(
    va: &Vector<'g>,
    vb: &Vector<'g>,
    t: &Matrix<'g>,
    mu_f: Scalar<'g>,
    f_n: Scalar<'g>,
    y_hat: Scalar<'g>,
    eps: f64,
) -> Result<Scalar<'g>> {
    let yt = t.try_mul_vec(&va.try_sub(vb)?)?;
    let y = yt.stable_norm(eps);
    let stick = -(y * y * y) / (y_hat * y_hat * 3.0) + y * y / y_hat + y_hat / 3.0;
    Ok(mu_f * f_n * branch(y - y_hat, y, stick))
}
