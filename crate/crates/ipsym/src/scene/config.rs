//! Scene file schema (JSON). Unknown keys are rejected. Relative paths are
//! resolved against the directory of the scene file. See `scenes/README.md`
//! for a field-by-field description.

use std::path::{Path, PathBuf};

use ipsym_core::energy::sdf::Sdf;
use ipsym_core::energy::{MaterialModel, MaterialParams, TetFamily};
use ipsym_core::solver::NewtonOptions;
use serde::Deserialize;

use crate::cache::BackendKind;

use super::SceneError;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub dt: f64,
    pub steps: usize,
    #[serde(default)]
    pub gravity: [f64; 3],
    #[serde(default = "default_threads")]
    pub threads: usize,
    /// Element lanes per kernel call; the problem default when absent.
    #[serde(default)]
    pub lanes: Option<usize>,
    #[serde(default)]
    pub backend: BackendKind,
    /// Generated-source backend only: compile with `-ffast-math`.
    #[serde(default)]
    pub fast_math: bool,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverConfig,
    pub systems: Vec<SystemConfig>,
    #[serde(default)]
    pub energies: Vec<EnergyConfig>,
    #[serde(default)]
    pub colliders: Vec<ColliderConfig>,
    #[serde(default)]
    pub boundary: Vec<BoundaryConfig>,
    /// Also write one frame sequence per system into `<output>/<system>/`.
    #[serde(default)]
    pub split_outputs: bool,
}

fn default_threads() -> usize {
    1
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub grad_tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub cg_rel_tol: Option<f64>,
    pub cg_max_iters: Option<usize>,
}

impl SolverConfig {
    pub fn options(&self) -> NewtonOptions {
        let d = NewtonOptions::default();
        NewtonOptions {
            grad_tol: self.grad_tol.unwrap_or(d.grad_tol),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            cg_rel_tol: self.cg_rel_tol.unwrap_or(d.cg_rel_tol),
            cg_max_iters: self.cg_max_iters.unwrap_or(d.cg_max_iters),
            ..d
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub name: String,
    pub mesh: MeshSource,
    /// Tet family for volumetric meshes.
    #[serde(default = "default_family")]
    pub element: TetFamily,
    /// Mass density (per volume for tets, per area for triangles).
    #[serde(default)]
    pub density: f64,
    /// Mass of every node of a point system.
    #[serde(default)]
    pub point_mass: f64,
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Reorient inverted tets instead of rejecting the mesh.
    #[serde(default)]
    pub reorient: bool,
}

fn default_family() -> TetFamily {
    TetFamily::Linear
}

fn default_stride() -> usize {
    3
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSource {
    TetFile(PathBuf),
    TriFile(PathBuf),
    Box { min: [f64; 3], max: [f64; 3], cells: [usize; 3] },
    Grid { origin: [f64; 3], u: [f64; 3], v: [f64; 3], cells: [usize; 2] },
    Points(Vec<[f64; 3]>),
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub model: MaterialModel,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub young: Option<f64>,
    #[serde(default)]
    pub poisson: Option<f64>,
}

impl MaterialConfig {
    pub fn params(&self) -> Result<MaterialParams, SceneError> {
        let r = match (self.mu, self.lambda, self.young, self.poisson) {
            (Some(mu), Some(lambda), None, None) => MaterialParams::new(self.model, mu, lambda),
            (None, None, Some(e), Some(nu)) => MaterialParams::from_young_poisson(self.model, e, nu),
            _ => return Err(SceneError::Config("material needs either mu and lambda or young and poisson".into())),
        };
        r.map_err(|e| SceneError::Config(e.to_string()))
    }
}

/// Node pairs between two systems, listed or matched by position.
#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Pairing {
    Pairs(Vec<[usize; 2]>),
    /// Every node of `b` paired with the node of `a` closest to it, if
    /// within this distance at rest.
    MatchWithin(f64),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnergyConfig {
    Elastic {
        system: String,
        material: MaterialConfig,
    },
    Bending {
        system: String,
        k_b: f64,
    },
    StrainLimit {
        system: String,
        sigma_l: f64,
        k_sl: f64,
    },
    Contact {
        system: String,
        collider: String,
        k_c: f64,
        d_hat: f64,
        #[serde(default)]
        mu_f: f64,
        #[serde(default = "default_y_hat")]
        y_hat: f64,
    },
    Attachment {
        a: String,
        b: String,
        pairs: Pairing,
        k: f64,
    },
    BallJoint {
        a: String,
        b: String,
        pairs: Pairing,
        k: f64,
    },
    DampedSpring {
        a: String,
        b: String,
        pairs: Pairing,
        k_sp: f64,
        /// Rest length; the rest distance of each pair when absent.
        #[serde(default)]
        l0: Option<f64>,
        #[serde(default)]
        alpha: f64,
    },
}

fn default_y_hat() -> f64 {
    1e-3
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColliderConfig {
    pub name: String,
    pub sdf: Sdf,
    #[serde(default)]
    pub velocity: [f64; 3],
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub system: String,
    pub select: Selection,
    pub motion: Motion,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Selection {
    Nodes(Vec<usize>),
    /// Nodes whose coordinate along `axis` is within `tol` of the mesh
    /// minimum or maximum.
    Plane { axis: usize, side: Side, #[serde(default = "default_tol")] tol: f64 },
}

fn default_tol() -> f64 {
    1e-9
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Min,
    Max,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    Fixed,
    Translate { velocity: [f64; 3] },
    /// Rotation at a constant rate (rad/s) about `axis` through `center`
    /// (the rest centroid of the selection when absent), plus an optional
    /// drift.
    Rotate {
        axis: [f64; 3],
        angular_velocity: f64,
        #[serde(default)]
        center: Option<[f64; 3]>,
        #[serde(default)]
        velocity: [f64; 3],
    },
}

impl SceneConfig {
    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        serde_json::from_str(text).map_err(|e| SceneError::Config(format!("scene: {e}")))
    }

    /// Loads a scene and makes its relative paths absolute.
    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|e| SceneError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| SceneError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for s in &mut self.systems {
            if let MeshSource::TetFile(p) | MeshSource::TriFile(p) = &mut s.mesh {
                fix(p);
            }
        }
        if let Some(p) = &mut self.cache_dir {
            fix(p);
        }
        if let Some(p) = &mut self.output_dir {
            fix(p);
        }
    }

    /// Checks values that the schema cannot express.
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Config(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        if self.lanes == Some(0) {
            return bad("lanes must be at least 1".into());
        }
        if self.systems.is_empty() {
            return bad("scene has no systems".into());
        }
        if let Err(e) = self.solver.options().validate() {
            return bad(format!("solver: {e}"));
        }
        let mut names = std::collections::BTreeSet::new();
        for s in &self.systems {
            if !names.insert(s.name.as_str()) {
                return bad(format!("duplicate system name `{}`", s.name));
            }
            if s.stride != 3 {
                return bad(format!("system `{}`: only stride 3 (positions in 3D) is supported", s.name));
            }
            if let MeshSource::Points(_) = s.mesh {
                if !(s.point_mass > 0.0) {
                    return bad(format!("system `{}`: point systems need point_mass > 0", s.name));
                }
            } else if !(s.density > 0.0) {
                return bad(format!("system `{}`: density must be positive", s.name));
            }
        }
        let mut colliders = std::collections::BTreeSet::new();
        for c in &self.colliders {
            if !colliders.insert(c.name.as_str()) {
                return bad(format!("duplicate collider name `{}`", c.name));
            }
            c.sdf.validate().map_err(|e| SceneError::Config(format!("collider `{}`: {e}", c.name)))?;
        }
        let system = |n: &str| -> Result<(), SceneError> {
            if names.contains(n) {
                Ok(())
            } else {
                Err(SceneError::Config(format!("unknown system `{n}`")))
            }
        };
        for e in &self.energies {
            match e {
                EnergyConfig::Elastic { system: s, material } => {
                    system(s)?;
                    material.params()?;
                }
                EnergyConfig::Bending { system: s, k_b } => {
                    system(s)?;
                    if !(*k_b > 0.0) {
                        return bad("bending: k_b must be positive".into());
                    }
                }
                EnergyConfig::StrainLimit { system: s, sigma_l, k_sl } => {
                    system(s)?;
                    if !(*k_sl > 0.0 && *sigma_l > 0.0) {
                        return bad("strain_limit: sigma_l and k_sl must be positive".into());
                    }
                }
                EnergyConfig::Contact { system: s, collider, k_c, d_hat, mu_f, y_hat } => {
                    system(s)?;
                    let c = self
                        .colliders
                        .iter()
                        .find(|c| &c.name == collider)
                        .ok_or_else(|| SceneError::Config(format!("unknown collider `{collider}`")))?;
                    if !(*k_c > 0.0 && *d_hat > 0.0 && *y_hat > 0.0 && *mu_f >= 0.0) {
                        return bad("contact needs k_c, d_hat, y_hat > 0 and mu_f >= 0".into());
                    }
                    let speed = c.velocity.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if speed * self.dt >= *d_hat {
                        return bad(format!(
                            "collider `{collider}` moves {} per step, which must stay below d_hat = {d_hat}",
                            speed * self.dt
                        ));
                    }
                }
                EnergyConfig::Attachment { a, b, k, .. } | EnergyConfig::BallJoint { a, b, k, .. } => {
                    system(a)?;
                    system(b)?;
                    if !(*k > 0.0) {
                        return bad("penalty stiffness k must be positive".into());
                    }
                }
                EnergyConfig::DampedSpring { a, b, k_sp, l0, alpha, .. } => {
                    system(a)?;
                    system(b)?;
                    if !(*k_sp > 0.0) || l0.is_some_and(|l| !(l > 0.0)) || !(*alpha >= 0.0) {
                        return bad("damped_spring needs k_sp > 0, l0 > 0 and alpha >= 0".into());
                    }
                }
            }
        }
        for b in &self.boundary {
            system(&b.system)?;
            if let Selection::Plane { axis, .. } = b.select {
                if axis > 2 {
                    return bad(format!("boundary plane axis {axis} out of range"));
                }
            }
            if let Motion::Rotate { axis, .. } = b.motion {
                if !(axis.iter().map(|v| v * v).sum::<f64>() > 0.0) {
                    return bad("rotation axis must be nonzero".into());
                }
            }
        }
        Ok(())
    }
}
