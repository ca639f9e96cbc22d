use crate::error::{Error, Result};
use crate::expr::{Matrix, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum MaterialModel {
    #[serde(rename = "NH")]
    NeoHookean,
    #[serde(rename = "StableNH")]
    StableNeoHookean,
    #[serde(rename = "StVK")]
    StVK,
    #[serde(rename = "ARAP")]
    Arap,
    #[serde(rename = "FixedCorot")]
    FixedCorotated,
}

impl MaterialModel {
    pub const ALL: [MaterialModel; 5] = [
        MaterialModel::Arap,
        MaterialModel::FixedCorotated,
        MaterialModel::StVK,
        MaterialModel::NeoHookean,
        MaterialModel::StableNeoHookean,
    ];

    /// Whether the model reads a rotation field.
    pub fn needs_rotation(self) -> bool {
        matches!(self, MaterialModel::Arap | MaterialModel::FixedCorotated)
    }

    pub fn name(self) -> &'static str {
        match self {
            MaterialModel::NeoHookean => "NH",
            MaterialModel::StableNeoHookean => "StableNH",
            MaterialModel::StVK => "StVK",
            MaterialModel::Arap => "ARAP",
            MaterialModel::FixedCorotated => "FixedCorot",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaterialParams {
    pub model: MaterialModel,
    pub mu: f64,
    pub lambda: f64,
}

impl MaterialParams {
    pub fn new(model: MaterialModel, mu: f64, lambda: f64) -> Result<Self> {
        let p = MaterialParams { model, mu, lambda };
        p.validate()?;
        Ok(p)
    }

    /// Lamé parameters from Young's modulus and Poisson ratio.
    pub fn from_young_poisson(model: MaterialModel, young: f64, poisson: f64) -> Result<Self> {
        if !(poisson > -1.0 && poisson < 0.5) {
            return Err(Error::Invalid("Poisson ratio must lie in (-1, 0.5)".into()));
        }
        let mu = young / (2.0 * (1.0 + poisson));
        let lambda = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
        Self::new(model, mu, lambda)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || !(self.lambda >= 0.0) || !self.mu.is_finite() || !self.lambda.is_finite() {
            return Err(Error::Invalid(alloc::format!("material needs mu > 0 and lambda >= 0, got mu={} lambda={}", self.mu, self.lambda)));
        }
        Ok(())
    }
}

/// Strain energy density `psi(F)` per unit rest volume (or area for 2x2 F).
///
/// With `d` the dimension of `F`, `Ic = tr(F^T F)` and `J = det F`:
/// - NH: `mu/2 (Ic - d) - mu log J + lambda/2 log^2 J`
/// - StableNH (3x3 only): `mu_/2 (Ic - 3) + lambda_/2 (J - alpha)^2 - mu_/2 log(Ic + 1)`,
///   constants from [`stable_nh_constants`]
/// - StVK: `mu |E|^2 + lambda/2 tr(E)^2`, `E = (F^T F - I) / 2`
/// - FixedCorot: `mu |F - R|^2 + lambda/2 (J - 1)^2`
/// - ARAP: `mu/2 (Ic - 2 tr(F^T R) + d) + lambda/2 (J - 1)^2`
///
/// `r` is required for FixedCorot and ARAP and ignored otherwise.
pub fn strain_energy_density<'g>(model: MaterialModel, f: &Matrix<'g>, r: Option<&Matrix<'g>>, mu: Scalar<'g>, lambda: Scalar<'g>) -> Result<Scalar<'g>> {
    let (rows, cols) = f.dims();
    if rows != cols || !(rows == 2 || rows == 3) {
        return Err(Error::UnsupportedDimension { op: "strain_energy_density", rows, cols });
    }
    let d = rows as f64;
    let ic = f.frobenius_norm_sq();
    let j = f.det()?;
    let rotation = || -> Result<&Matrix<'g>> {
        let r = r.ok_or_else(|| Error::Invalid(alloc::format!("{} needs a rotation", model.name())))?;
        if r.dims() != f.dims() {
            return Err(Error::DimensionMismatch { op: "strain_energy_density", lhs: f.dims(), rhs: r.dims() });
        }
        Ok(r)
    };
    Ok(match model {
        MaterialModel::NeoHookean => {
            let log_j = j.ln();
            mu * 0.5 * (ic - d) - mu * log_j + lambda * 0.5 * log_j * log_j
        }
        MaterialModel::StableNeoHookean => {
            if rows != 3 {
                return Err(Error::UnsupportedDimension { op: "stable Neo-Hookean", rows, cols });
            }
            let (mu_, lambda_, alpha) = stable_nh_constants(mu, lambda);
            let dj = j - alpha;
            mu_ * 0.5 * (ic - 3.0) + lambda_ * 0.5 * dj * dj - mu_ * 0.5 * (ic + 1.0).ln()
        }
        MaterialModel::StVK => {
            let g = mu.graph();
            let e = f.transpose().try_matmul(f)?.try_sub(&Matrix::identity(g, rows))?.scale_f64(0.5);
            let tr = e.trace()?;
            mu * e.frobenius_norm_sq() + lambda * 0.5 * tr * tr
        }
        MaterialModel::FixedCorotated => {
            let r = rotation()?;
            let dj = j - 1.0;
            mu * f.try_sub(r)?.frobenius_norm_sq() + lambda * 0.5 * dj * dj
        }
        MaterialModel::Arap => {
            let r = rotation()?;
            let dj = j - 1.0;
            let tr_ftr = f.transpose().try_matmul(r)?.trace()?;
            mu * 0.5 * (ic - tr_ftr * 2.0 + d) + lambda * 0.5 * dj * dj
        }
    })
}

/// `(mu_, lambda_, alpha)` of the stable Neo-Hookean model:
/// `mu_ = 4/3 mu`, `lambda_ = lambda + 5/6 lambda`,
/// `alpha = 1 + mu_/lambda_ - mu_/(4 lambda_)`.
fn stable_nh_constants<'g>(mu: Scalar<'g>, lambda: Scalar<'g>) -> (Scalar<'g>, Scalar<'g>, Scalar<'g>) {
    let mu_ = mu * (4.0 / 3.0);
    let lambda_ = lambda + lambda * (5.0 / 6.0);
    let alpha = 1.0 + mu_ / lambda_ - mu_ / (lambda_ * 4.0);
    (mu_, lambda_, alpha)
}
