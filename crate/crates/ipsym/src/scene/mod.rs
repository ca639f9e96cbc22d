//! Scene assembly: meshes and a [`SceneConfig`] become a [`Problem`] with
//! one dof set per system, plus the per-step bookkeeping (scripted
//! boundaries, moving colliders, lagged friction data).

mod config;
mod run;

use std::path::PathBuf;

use ipsym_core::bind::{ArrayId, ConnId, EnergyId, ParamId, Problem};
use ipsym_core::energy::{
    attachment_energy, ball_joint, bending_stencil_energy, contact_barrier, damped_spring, deformation_gradient_tri,
    fem_element_energy, friction_energy, inertia_energy, linear_tet_energy, precompute_bending, rest_frame_tri,
    rotation_prepass, strain_energy_density, strain_limit_energy, tri_area, MaterialModel, QuadratureRule,
    TetFamily,
};
use ipsym_core::energy::sdf::Sdf;
use ipsym_core::expr::{Matrix, Scalar, Vector, STABLE_NORM_EPS};
use ipsym_core::solver::{BackwardEuler, DofState, StepReport};

pub use config::{
    BoundaryConfig, ColliderConfig, EnergyConfig, MaterialConfig, MeshSource, Motion, Pairing, SceneConfig, Selection,
    Side, SolverConfig, SystemConfig,
};
pub use run::{run_config, run_scene, RunOptions, RunSummary, StepLog, LOG_HEADER};

use crate::cache::{BackendKind, DiskKernelCache};
use crate::codegen::SourceOptions;
use crate::mesh::{self, MeshError};

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl SceneError {
    /// Process exit status: 1 for configuration errors, 2 for runtime errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            SceneError::Config(_) => 1,
            SceneError::Runtime(_) => 2,
        }
    }
}

impl From<MeshError> for SceneError {
    fn from(e: MeshError) -> Self {
        SceneError::Config(e.to_string())
    }
}

/// Setup errors from the core are configuration problems, except kernel
/// backend failures.
fn setup_err(context: &str) -> impl Fn(ipsym_core::Error) -> SceneError + '_ {
    move |e| match e {
        ipsym_core::Error::Backend(_) => SceneError::Runtime(format!("{context}: {e}")),
        _ => SceneError::Config(format!("{context}: {e}")),
    }
}

fn runtime_err(e: ipsym_core::Error) -> SceneError {
    SceneError::Runtime(e.to_string())
}

#[derive(Clone, Debug, PartialEq)]
pub enum SystemKind {
    /// Tets with `family.nodes()` nodes each.
    Volume { family: TetFamily, elements: Vec<Vec<usize>> },
    Shell { tris: Vec<[usize; 3]> },
    Points,
}

/// Geometry and handles of one simulated system.
#[derive(Clone, Debug)]
pub struct SystemState {
    pub name: String,
    pub kind: SystemKind,
    pub rest: Vec<[f64; 3]>,
    /// Outward boundary faces (tets) or the triangles themselves (shells).
    pub surface: Vec<[usize; 3]>,
    pub mass: Vec<f64>,
    /// Dof set index (registration order).
    pub set: usize,
    pub x: ArrayId,
    pub x_prev: ArrayId,
    pub v: ArrayId,
    rest_id: ArrayId,
    nodes: ConnId,
}

struct ColliderState {
    name: String,
    sdf: Sdf,
    velocity: [f64; 3],
    q: Vec<ParamId>,
    v: [ParamId; 3],
}

struct ContactState {
    barrier: EnergyId,
    system: usize,
    collider: usize,
    d_hat: f64,
    k_c: f64,
    /// Friction energy and its lagged `[f_n, T (2x3)]` array.
    friction: Option<(EnergyId, ArrayId)>,
}

struct Script {
    dofs: [usize; 3],
    rest: [f64; 3],
    motion: Motion,
    center: [f64; 3],
}

/// Settings that may be overridden from the command line.
#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub backend: BackendKind,
    pub cache_dir: Option<PathBuf>,
    pub lanes: Option<usize>,
    pub fast_math: bool,
}

impl BuildOptions {
    pub fn from_config(cfg: &SceneConfig) -> Self {
        BuildOptions { backend: cfg.backend, cache_dir: cfg.cache_dir.clone(), lanes: cfg.lanes, fast_math: cfg.fast_math }
    }
}

/// Result of one time step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub report: StepReport,
    /// Smallest contact distance over the initial guess and every accepted
    /// iterate; `None` without contact energies.
    pub min_distance: Option<f64>,
    pub active_contacts: usize,
}

pub struct Scene {
    pub config: SceneConfig,
    pub problem: Problem,
    pub systems: Vec<SystemState>,
    integrator: BackwardEuler,
    colliders: Vec<ColliderState>,
    contacts: Vec<ContactState>,
    scripts: Vec<Script>,
    fixed: Vec<bool>,
    dt: f64,
    /// Completed steps.
    pub step_index: usize,
}

fn load_geometry(s: &SystemConfig) -> Result<(Vec<[f64; 3]>, SystemKind, Vec<[usize; 3]>), SceneError> {
    let ctx = |e: MeshError| SceneError::Config(format!("system `{}`: {e}", s.name));
    let volume = |m: mesh::TetMesh| -> (Vec<[f64; 3]>, SystemKind, Vec<[usize; 3]>) {
        let surface = m.boundary_faces();
        match s.element {
            TetFamily::Linear => {
                let elements = m.tets.iter().map(|t| t.to_vec()).collect();
                (m.vertices, SystemKind::Volume { family: TetFamily::Linear, elements }, surface)
            }
            TetFamily::Quadratic => {
                let q = m.to_quadratic();
                let elements = q.tets.iter().map(|t| t.to_vec()).collect();
                (q.vertices, SystemKind::Volume { family: TetFamily::Quadratic, elements }, surface)
            }
        }
    };
    Ok(match &s.mesh {
        MeshSource::TetFile(p) => volume(mesh::load_tet_mesh(p, s.reorient).map_err(ctx)?),
        MeshSource::Box { min, max, cells } => {
            if cells.contains(&0) || (0..3).any(|a| !(max[a] > min[a])) {
                return Err(SceneError::Config(format!("system `{}`: empty box", s.name)));
            }
            volume(mesh::box_tet_mesh(*min, *max, *cells))
        }
        MeshSource::TriFile(p) => {
            let m = mesh::load_tri_mesh(p).map_err(ctx)?;
            (m.vertices, SystemKind::Shell { tris: m.tris.clone() }, m.tris)
        }
        MeshSource::Grid { origin, u, v, cells } => {
            if cells.contains(&0) {
                return Err(SceneError::Config(format!("system `{}`: empty grid", s.name)));
            }
            let m = mesh::grid_tri_mesh(*origin, *u, *v, *cells);
            if m.tris.iter().any(|t| !(mesh::tri_area(&m.vertices, *t) > 0.0)) {
                return Err(SceneError::Config(format!("system `{}`: degenerate grid", s.name)));
            }
            (m.vertices, SystemKind::Shell { tris: m.tris.clone() }, m.tris)
        }
        MeshSource::Points(p) => {
            if p.is_empty() {
                return Err(SceneError::Config(format!("system `{}`: no points", s.name)));
            }
            (p.clone(), SystemKind::Points, Vec::new())
        }
    })
}

/// Lumped masses: linear tets `rho V / 4` per corner, quadratic tets
/// `rho V / 10` per node, triangles `rho A / 3` per corner.
fn lumped_masses(s: &SystemConfig, rest: &[[f64; 3]], kind: &SystemKind) -> Result<Vec<f64>, SceneError> {
    let mut m = vec![0.0; rest.len()];
    match kind {
        SystemKind::Volume { elements, .. } => {
            for (e, t) in elements.iter().enumerate() {
                let v = mesh::tet_volume(rest, [t[0], t[1], t[2], t[3]]);
                if !(v > 0.0) {
                    return Err(SceneError::Config(format!("system `{}`: element {e} has non-positive volume", s.name)));
                }
                let share = s.density * v / t.len() as f64;
                for &n in t {
                    m[n] += share;
                }
            }
        }
        SystemKind::Shell { tris } => {
            for t in tris {
                let share = s.density * mesh::tri_area(rest, *t) / 3.0;
                for &n in t {
                    m[n] += share;
                }
            }
        }
        SystemKind::Points => m.iter_mut().for_each(|v| *v = s.point_mass),
    }
    if let Some(i) = m.iter().position(|v| !(*v > 0.0)) {
        return Err(SceneError::Config(format!("system `{}`: node {i} belongs to no element", s.name)));
    }
    Ok(m)
}

fn flatten(v: &[[f64; 3]]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Derivative magnitude of `-k (d - d_hat)^2 ln(d / d_hat)`, zero outside
/// `(0, d_hat)`.
pub fn barrier_force(d: f64, d_hat: f64, k_c: f64) -> f64 {
    if !(d > 0.0 && d < d_hat) {
        return 0.0;
    }
    let g = d - d_hat;
    (k_c * (2.0 * g * (d / d_hat).ln() + g * g / d)).abs()
}

/// Two unit tangents orthogonal to `n`, as the rows of a 2x3 matrix.
pub fn tangent_basis(n: [f64; 3]) -> [f64; 6] {
    let a = if n[0].abs() <= n[1].abs() && n[0].abs() <= n[2].abs() {
        [1.0, 0.0, 0.0]
    } else if n[1].abs() <= n[2].abs() {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let cross = |a: [f64; 3], b: [f64; 3]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let t1 = cross(n, a);
    let l = norm(t1);
    let t1 = [t1[0] / l, t1[1] / l, t1[2] / l];
    let t2 = cross(n, t1);
    [t1[0], t1[1], t1[2], t2[0], t2[1], t2[2]]
}

fn rotate(axis: [f64; 3], angle: f64, p: [f64; 3]) -> [f64; 3] {
    let l = norm(axis);
    let k = [axis[0] / l, axis[1] / l, axis[2] / l];
    let (s, c) = angle.sin_cos();
    let kxp = [k[1] * p[2] - k[2] * p[1], k[2] * p[0] - k[0] * p[2], k[0] * p[1] - k[1] * p[0]];
    let kdp = k[0] * p[0] + k[1] * p[1] + k[2] * p[2];
    std::array::from_fn(|i| p[i] * c + kxp[i] * s + k[i] * kdp * (1.0 - c))
}

impl Script {
    fn position(&self, t: f64) -> [f64; 3] {
        match &self.motion {
            Motion::Fixed => self.rest,
            Motion::Translate { velocity } => std::array::from_fn(|i| self.rest[i] + velocity[i] * t),
            Motion::Rotate { axis, angular_velocity, velocity, .. } => {
                let rel = std::array::from_fn(|i| self.rest[i] - self.center[i]);
                let r = rotate(*axis, angular_velocity * t, rel);
                std::array::from_fn(|i| self.center[i] + r[i] + velocity[i] * t)
            }
        }
    }
}

fn pairs_for(p: &Pairing, a: &SystemState, b: &SystemState) -> Result<Vec<[usize; 2]>, SceneError> {
    match p {
        Pairing::Pairs(v) => {
            for &[i, j] in v {
                if i >= a.rest.len() || j >= b.rest.len() {
                    return Err(SceneError::Config(format!("pair ({i}, {j}) out of range for `{}`/`{}`", a.name, b.name)));
                }
            }
            Ok(v.clone())
        }
        Pairing::MatchWithin(tol) => {
            let mut out = Vec::new();
            for (j, pb) in b.rest.iter().enumerate() {
                let best = a
                    .rest
                    .iter()
                    .enumerate()
                    .map(|(i, pa)| (norm([pa[0] - pb[0], pa[1] - pb[1], pa[2] - pb[2]]), i))
                    .filter(|(d, i)| !(a.name == b.name && *i == j) && *d <= *tol)
                    .min_by(|x, y| x.0.total_cmp(&y.0));
                if let Some((_, i)) = best {
                    out.push([i, j]);
                }
            }
            if out.is_empty() {
                return Err(SceneError::Config(format!("no node pairs between `{}` and `{}` within {tol}", a.name, b.name)));
            }
            Ok(out)
        }
    }
}

impl Scene {
    pub fn build(config: SceneConfig, opts: &BuildOptions) -> Result<Scene, SceneError> {
        config.validate()?;
        let source = SourceOptions { fast_math: opts.fast_math, ..SourceOptions::default() };
        let provider = DiskKernelCache::with_source_options(opts.cache_dir.clone(), opts.backend, source).map_err(runtime_err)?;
        let mut problem = Problem::with_provider(Box::new(provider));
        if let Some(l) = opts.lanes {
            problem.set_lanes(l).map_err(setup_err("lanes"))?;
        }

        // geometry and dof arrays first: the layout freezes with the first energy
        let mut geo = Vec::with_capacity(config.systems.len());
        for s in &config.systems {
            let (rest, kind, surface) = load_geometry(s)?;
            let mass = lumped_masses(s, &rest, &kind)?;
            let x = problem.add_dof_array(&format!("{}.x", s.name), flatten(&rest), 3).map_err(setup_err(&s.name))?;
            geo.push((rest, kind, surface, mass, x));
        }
        let mut systems = Vec::with_capacity(geo.len());
        for (set, (s, (rest, kind, surface, mass, x))) in config.systems.iter().zip(geo).enumerate() {
            let n = rest.len();
            let e = setup_err(&s.name);
            let x_prev = problem.add_array(&format!("{}.x_prev", s.name), flatten(&rest), 3).map_err(&e)?;
            let v0: Vec<f64> = (0..n).flat_map(|_| s.velocity).collect();
            let v = problem.add_array(&format!("{}.v", s.name), v0, 3).map_err(&e)?;
            let rest_id = problem.add_array(&format!("{}.rest", s.name), flatten(&rest), 3).map_err(&e)?;
            let nodes = problem.add_connectivity(&format!("{}.nodes", s.name), (0..n).collect(), 1).map_err(&e)?;
            systems.push(SystemState { name: s.name.clone(), kind, rest, surface, mass, set, x, x_prev, v, rest_id, nodes });
        }
        let dt = problem.add_param("dt", config.dt);

        for (s, cfg) in systems.iter().zip(&config.systems) {
            let mass = problem.add_array(&format!("{}.mass", s.name), s.mass.clone(), 1).map_err(setup_err(&s.name))?;
            let gravity = config.gravity;
            let (x, x_prev, v) = (s.x, s.x_prev, s.v);
            problem
                .add_energy(&format!("{}.inertia", s.name), s.nodes, |b| {
                    let xv = b.vector(x, 0)?;
                    let x0 = b.vector(x_prev, 0)?;
                    let v0 = b.vector(v, 0)?;
                    let m = b.scalar(mass, 0)?;
                    let h = b.runtime_scalar(dt)?;
                    let a = Vector::from_consts(b.graph(), &gravity);
                    b.set(inertia_energy(&xv, &x0, &v0, &a, h, m)?);
                    Ok(())
                })
                .map_err(setup_err(&cfg.name))?;
        }

        let mut colliders = Vec::with_capacity(config.colliders.len());
        for c in &config.colliders {
            let q = c.sdf.params().iter().enumerate().map(|(k, &v)| problem.add_param(&format!("{}.q{k}", c.name), v)).collect();
            let v = std::array::from_fn(|k| problem.add_param(&format!("{}.v{k}", c.name), c.velocity[k]));
            colliders.push(ColliderState { name: c.name.clone(), sdf: c.sdf.clone(), velocity: c.velocity, q, v });
        }

        let sys = |name: &str| systems.iter().position(|s| s.name == name).expect("validated system name");
        let mut contacts = Vec::new();
        for (k, ecfg) in config.energies.iter().enumerate() {
            match ecfg {
                EnergyConfig::Elastic { system, material } => {
                    let s = &systems[sys(system)];
                    register_elastic(&mut problem, s, material)?;
                }
                EnergyConfig::Bending { system, k_b } => {
                    let s = &systems[sys(system)];
                    register_bending(&mut problem, s, *k_b)?;
                }
                EnergyConfig::StrainLimit { system, sigma_l, k_sl } => {
                    let s = &systems[sys(system)];
                    register_strain_limit(&mut problem, s, *sigma_l, *k_sl)?;
                }
                EnergyConfig::Contact { system, collider, k_c, d_hat, mu_f, y_hat } => {
                    let si = sys(system);
                    let ci = config.colliders.iter().position(|c| &c.name == collider).expect("validated collider");
                    let c = register_contact(&mut problem, &systems[si], si, &colliders[ci], ci, dt, *k_c, *d_hat, *mu_f, *y_hat)?;
                    contacts.push(c);
                }
                EnergyConfig::Attachment { a, b, pairs, k } | EnergyConfig::BallJoint { a, b, pairs, k } => {
                    let (sa, sb) = (&systems[sys(a)], &systems[sys(b)]);
                    let pairs = pairs_for(pairs, sa, sb)?;
                    let attach = matches!(ecfg, EnergyConfig::Attachment { .. });
                    let name = format!("{}.{k}", if attach { "attachment" } else { "ball_joint" });
                    let conn = problem.add_connectivity(&name, pairs.into_iter().flatten().collect(), 2).map_err(setup_err(&name))?;
                    let (xa, xb, stiff) = (sa.x, sb.x, *k);
                    problem
                        .add_energy(&name, conn, |bld| {
                            let pa = bld.vector(xa, 0)?;
                            let pb = bld.vector(xb, 1)?;
                            let kk = bld.constant(stiff);
                            bld.set(if attach { attachment_energy(&pa, &pb, kk)? } else { ball_joint(&pa, &pb, kk)? });
                            Ok(())
                        })
                        .map_err(setup_err(&name))?;
                }
                EnergyConfig::DampedSpring { a, b, pairs, k_sp, l0, alpha } => {
                    let (sa, sb) = (&systems[sys(a)], &systems[sys(b)]);
                    let pairs = pairs_for(pairs, sa, sb)?;
                    let name = format!("damped_spring.{k}");
                    let lengths: Vec<f64> = pairs
                        .iter()
                        .map(|&[i, j]| {
                            l0.unwrap_or_else(|| {
                                let (p, q) = (sa.rest[i], sb.rest[j]);
                                norm([p[0] - q[0], p[1] - q[1], p[2] - q[2]])
                            })
                        })
                        .collect();
                    if let Some(i) = lengths.iter().position(|l| !(*l > 0.0)) {
                        return Err(SceneError::Config(format!("{name}: pair {i} has zero rest length")));
                    }
                    let l0_id = problem.add_array(&format!("{name}.l0"), lengths, 1).map_err(setup_err(&name))?;
                    let idx = pairs.iter().enumerate().flat_map(|(p, &[i, j])| [i, j, p]).collect();
                    let conn = problem.add_connectivity(&name, idx, 3).map_err(setup_err(&name))?;
                    let (xa, xb, pa_prev, pb_prev, ks, al) = (sa.x, sb.x, sa.x_prev, sb.x_prev, *k_sp, *alpha);
                    problem
                        .add_energy(&name, conn, |bld| {
                            let pa = bld.vector(xa, 0)?;
                            let pb = bld.vector(xb, 1)?;
                            let qa = bld.vector(pa_prev, 0)?;
                            let qb = bld.vector(pb_prev, 1)?;
                            let h = bld.runtime_scalar(dt)?;
                            let rest = bld.scalar(l0_id, 2)?;
                            let va = pa.try_sub(&qa)?.scale(1.0 / h);
                            let vb = pb.try_sub(&qb)?.scale(1.0 / h);
                            let e = damped_spring(&pa, &pb, &va, &vb, bld.constant(ks), rest, bld.constant(al))?;
                            bld.set(e);
                            Ok(())
                        })
                        .map_err(setup_err(&name))?;
                }
            }
        }

        let layout = problem.layout();
        let mut fixed = vec![false; layout.total];
        let mut scripts = Vec::new();
        for bc in &config.boundary {
            let si = sys(&bc.system);
            let s = &systems[si];
            let nodes: Vec<usize> = match &bc.select {
                Selection::Nodes(v) => {
                    if let Some(&bad) = v.iter().find(|&&i| i >= s.rest.len()) {
                        return Err(SceneError::Config(format!("boundary node {bad} out of range for `{}`", s.name)));
                    }
                    v.clone()
                }
                Selection::Plane { axis, side, tol } => {
                    let vals = s.rest.iter().map(|p| p[*axis]);
                    let target = match side {
                        Side::Min => vals.fold(f64::INFINITY, f64::min),
                        Side::Max => vals.fold(f64::NEG_INFINITY, f64::max),
                    };
                    (0..s.rest.len()).filter(|&i| (s.rest[i][*axis] - target).abs() <= *tol).collect()
                }
            };
            if nodes.is_empty() {
                return Err(SceneError::Config(format!("boundary selection on `{}` is empty", s.name)));
            }
            let center = match &bc.motion {
                Motion::Rotate { center: Some(c), .. } => *c,
                _ => {
                    let mut c = [0.0; 3];
                    for &i in &nodes {
                        (0..3).for_each(|k| c[k] += s.rest[i][k] / nodes.len() as f64);
                    }
                    c
                }
            };
            for i in nodes {
                let dofs = std::array::from_fn(|c| layout.global_index(s.set, i, c));
                dofs.iter().for_each(|&d| fixed[d] = true);
                scripts.push(Script { dofs, rest: s.rest[i], motion: bc.motion.clone(), center });
            }
        }

        let integrator = BackwardEuler {
            sets: systems.iter().map(|s| DofState { x: s.x, x_prev: s.x_prev, v: s.v }).collect(),
            dt,
            options: config.solver.options(),
        };
        let mut scene =
            Scene { dt: config.dt, config, problem, systems, integrator, colliders, contacts, scripts, fixed, step_index: 0 };
        let u = scene.problem.gather_dofs();
        if let Some(d) = scene.problem.min_guard(&u).map_err(runtime_err)? {
            if !(d > 0.0) {
                return Err(SceneError::Config(format!("initial state penetrates a collider (distance {d:e})")));
            }
        }
        Ok(scene)
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.dt
    }

    pub fn positions(&self, system: usize) -> &[f64] {
        self.problem.array(self.systems[system].x)
    }

    fn collider_at(&self, c: usize, t: f64) -> Sdf {
        let col = &self.colliders[c];
        col.sdf.translated(col.velocity.map(|v| v * t))
    }

    /// Refreshes the lagged friction data from the current positions and
    /// the colliders at time `t`.
    fn update_friction(&mut self, t: f64) {
        for k in 0..self.contacts.len() {
            let c = &self.contacts[k];
            let Some((_, arr)) = c.friction else { continue };
            let sdf = self.collider_at(c.collider, t);
            let (d_hat, k_c) = (c.d_hat, c.k_c);
            let x = self.problem.array(self.systems[c.system].x).to_vec();
            let out = self.problem.array_mut(arr);
            for (i, p) in x.chunks_exact(3).enumerate() {
                let p = [p[0], p[1], p[2]];
                let f_n = barrier_force(sdf.distance(p), d_hat, k_c);
                out[7 * i] = f_n;
                out[7 * i + 1..7 * i + 7].copy_from_slice(&tangent_basis(sdf.normal(p)));
            }
        }
    }

    /// Advances one time step.
    pub fn step(&mut self) -> Result<StepOutcome, SceneError> {
        let t0 = self.time();
        let t1 = t0 + self.dt;
        self.update_friction(t0);
        for c in 0..self.colliders.len() {
            let q = self.collider_at(c, t1).params();
            for (id, v) in self.colliders[c].q.clone().into_iter().zip(q) {
                self.problem.set_param(id, v);
            }
            let vel = self.colliders[c].velocity;
            for (id, v) in self.colliders[c].v.into_iter().zip(vel) {
                self.problem.set_param(id, v);
            }
        }

        // initial guess: previous positions, vertices near a moving collider
        // carried along with it, scripted nodes at their targets
        let layout = self.problem.layout();
        let mut u = self.problem.gather_dofs();
        for c in &self.contacts {
            let col = &self.colliders[c.collider];
            let disp = col.velocity.map(|v| v * self.dt);
            let reach = c.d_hat + norm(disp);
            if norm(disp) == 0.0 {
                continue;
            }
            let sdf = self.collider_at(c.collider, t0);
            let s = &self.systems[c.system];
            for i in 0..s.rest.len() {
                let idx: [usize; 3] = std::array::from_fn(|k| layout.global_index(s.set, i, k));
                if idx.iter().any(|&d| self.fixed[d]) {
                    continue;
                }
                if sdf.distance(idx.map(|d| u[d])) < reach {
                    (0..3).for_each(|k| u[idx[k]] += disp[k]);
                }
            }
        }
        for s in &self.scripts {
            let p = s.position(t1);
            (0..3).for_each(|k| u[s.dofs[k]] = p[k]);
        }
        let start_guard = self.problem.min_guard(&u).map_err(runtime_err)?;
        if let Some(d) = start_guard {
            if !(d > 0.0) {
                return Err(SceneError::Runtime(format!(
                    "step {}: initial guess penetrates a collider (distance {d:e}); reduce dt or collider speed",
                    self.step_index
                )));
            }
        }

        let report = self.integrator.step(&mut self.problem, &self.fixed, &mut |v| v.copy_from_slice(&u)).map_err(runtime_err)?;
        self.step_index += 1;
        let min_distance = report
            .iterations
            .iter()
            .filter_map(|r| r.min_guard)
            .chain(start_guard)
            .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d))));
        let active_contacts = self.contacts.iter().map(|c| report.active.get(c.barrier.index()).copied().unwrap_or(0)).sum();
        if !report.final_energy.is_finite() {
            return Err(SceneError::Runtime(format!("step {}: energy is not finite", self.step_index)));
        }
        Ok(StepOutcome { report, min_distance, active_contacts })
    }
}

fn register_elastic(problem: &mut Problem, s: &SystemState, material: &MaterialConfig) -> Result<(), SceneError> {
    let p = material.params()?;
    let name = format!("{}.elastic", s.name);
    let err = setup_err(&name);
    let (x, rest) = (s.x, s.rest_id);
    match &s.kind {
        SystemKind::Volume { family, elements } => {
            let family = *family;
            let nn = family.nodes();
            let rot = p.model.needs_rotation();
            let arity = nn + usize::from(rot);
            let idx: Vec<usize> = elements.iter().enumerate().flat_map(|(e, t)| t.iter().copied().chain(rot.then_some(e))).collect();
            let conn = problem.add_connectivity(&name, idx, arity).map_err(&err)?;
            let rot_id = if rot {
                let identity = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
                let id = problem.add_array(&format!("{}.rotation", s.name), identity.repeat(elements.len()), 9).map_err(&err)?;
                problem.add_prepass(rotation_prepass(x, rest, conn, id));
                Some(id)
            } else {
                None
            };
            let rule = QuadratureRule::for_family(family);
            problem
                .add_energy(&name, conn, |b| {
                    let xs: Vec<Vector> = (0..nn).map(|i| b.vector(x, i)).collect::<Result<_, _>>()?;
                    let rs: Vec<Vector> = (0..nn).map(|i| b.vector(rest, i)).collect::<Result<_, _>>()?;
                    let r: Option<Matrix> = match rot_id {
                        Some(id) => Some(b.matrix(id, nn, 3, 3)?),
                        None => None,
                    };
                    let (mu, lambda) = (b.constant(p.mu), b.constant(p.lambda));
                    let psi = density(p.model, r, mu, lambda);
                    let e = match family {
                        TetFamily::Linear => linear_tet_energy(&rs, &xs, psi)?,
                        TetFamily::Quadratic => fem_element_energy(b, family, &rule, &rs, &xs, psi)?,
                    };
                    b.set(e);
                    Ok(())
                })
                .map_err(&err)?;
        }
        SystemKind::Shell { tris } => {
            if p.model.needs_rotation() || p.model == MaterialModel::StableNeoHookean {
                return Err(SceneError::Config(format!("{name}: membranes support NH and StVK only")));
            }
            let (conn, rest2) = shell_frames(problem, s, tris)?;
            problem
                .add_energy(&name, conn, |b| {
                    let xs: Vec<Vector> = (0..3).map(|i| b.vector(x, i)).collect::<Result<_, _>>()?;
                    let r2 = b.vector(rest2, 3)?;
                    let rs: Vec<Vector> = (0..3).map(|i| Vector::new(r2.entries()[2 * i..2 * i + 2].to_vec())).collect();
                    let f = deformation_gradient_tri(&rs, &xs)?;
                    let psi = strain_energy_density(p.model, &f, None, b.constant(p.mu), b.constant(p.lambda))?;
                    b.set(tri_area(&rs)? * psi);
                    Ok(())
                })
                .map_err(&err)?;
        }
        SystemKind::Points => return Err(SceneError::Config(format!("{name}: point systems have no elements"))),
    }
    Ok(())
}

fn density<'g>(model: MaterialModel, r: Option<Matrix<'g>>, mu: Scalar<'g>, lambda: Scalar<'g>) -> impl FnOnce(&Matrix<'g>) -> ipsym_core::Result<Scalar<'g>> {
    move |f| strain_energy_density(model, f, r.as_ref(), mu, lambda)
}

/// Triangle connectivity `[i0, i1, i2, e]` and the per-triangle 2D rest
/// frame array (stride 6), shared by membrane and strain-limit energies.
fn shell_frames(problem: &mut Problem, s: &SystemState, tris: &[[usize; 3]]) -> Result<(ConnId, ArrayId), SceneError> {
    let name = format!("{}.tris", s.name);
    let mut frames = Vec::with_capacity(6 * tris.len());
    for (e, t) in tris.iter().enumerate() {
        let f = rest_frame_tri([s.rest[t[0]], s.rest[t[1]], s.rest[t[2]]])
            .map_err(|err| SceneError::Config(format!("system `{}` triangle {e}: {err}", s.name)))?;
        frames.extend(f.iter().flatten());
    }
    let idx = tris.iter().enumerate().flat_map(|(e, t)| [t[0], t[1], t[2], e]).collect();
    let conn = problem.add_connectivity(&name, idx, 4).map_err(setup_err(&name))?;
    let arr = problem.add_array(&format!("{}.rest_frames", s.name), frames, 6).map_err(setup_err(&name))?;
    Ok((conn, arr))
}

fn register_bending(problem: &mut Problem, s: &SystemState, k_b: f64) -> Result<(), SceneError> {
    let name = format!("{}.bending", s.name);
    let SystemKind::Shell { tris } = &s.kind else {
        return Err(SceneError::Config(format!("{name}: bending needs a triangle mesh")));
    };
    let flaps = mesh::TriMesh { vertices: s.rest.clone(), tris: tris.clone() }.flaps();
    if flaps.is_empty() {
        return Err(SceneError::Config(format!("{name}: mesh has no interior edges")));
    }
    let mut stencils = Vec::with_capacity(4 * flaps.len());
    for f in &flaps {
        let k = precompute_bending(f.map(|i| s.rest[i])).map_err(setup_err(&name))?;
        stencils.extend(k.k);
    }
    let arr = problem.add_array(&format!("{name}.stencil"), stencils, 4).map_err(setup_err(&name))?;
    let idx = flaps.iter().enumerate().flat_map(|(e, f)| [f[0], f[1], f[2], f[3], e]).collect();
    let conn = problem.add_connectivity(&name, idx, 5).map_err(setup_err(&name))?;
    let x = s.x;
    problem
        .add_energy(&name, conn, |b| {
            let xs: Vec<Vector> = (0..4).map(|i| b.vector(x, i)).collect::<Result<_, _>>()?;
            let k: Vec<Scalar> = b.vector(arr, 4)?.into_entries();
            let kb = b.constant(k_b);
            b.set(bending_stencil_energy(&xs, &k, kb)?);
            Ok(())
        })
        .map_err(setup_err(&name))?;
    Ok(())
}

fn register_strain_limit(problem: &mut Problem, s: &SystemState, sigma_l: f64, k_sl: f64) -> Result<(), SceneError> {
    let name = format!("{}.strain_limit", s.name);
    let SystemKind::Shell { tris } = &s.kind else {
        return Err(SceneError::Config(format!("{name}: strain limiting needs a triangle mesh")));
    };
    let (conn, rest2) = shell_frames(problem, s, tris)?;
    let x = s.x;
    problem
        .add_energy(&name, conn, |b| {
            let xs: Vec<Vector> = (0..3).map(|i| b.vector(x, i)).collect::<Result<_, _>>()?;
            let r2 = b.vector(rest2, 3)?;
            let rs: Vec<Vector> = (0..3).map(|i| Vector::new(r2.entries()[2 * i..2 * i + 2].to_vec())).collect();
            let f = deformation_gradient_tri(&rs, &xs)?;
            let c = strain_limit_energy(&f, tri_area(&rs)?, b.constant(sigma_l), b.constant(k_sl))?;
            b.set_with_condition(c.energy, c.condition);
            Ok(())
        })
        .map_err(setup_err(&name))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn register_contact(
    problem: &mut Problem,
    s: &SystemState,
    system: usize,
    col: &ColliderState,
    collider: usize,
    dt: ParamId,
    k_c: f64,
    d_hat: f64,
    mu_f: f64,
    y_hat: f64,
) -> Result<ContactState, SceneError> {
    let name = format!("contact.{}.{}", s.name, col.name);
    let (x, sdf, q) = (s.x, col.sdf.clone(), col.q.clone());
    let barrier = problem
        .add_energy(&name, s.nodes, |b| {
            let p = b.vector(x, 0)?;
            let qs: Vec<Scalar> = q.iter().map(|&id| b.runtime_scalar(id)).collect::<Result<_, _>>()?;
            let d = sdf.build(&p, &qs)?;
            let c = contact_barrier(d, b.constant(d_hat), b.constant(k_c));
            b.set_with_condition(c.energy, c.condition);
            b.set_guard(d);
            Ok(())
        })
        .map_err(setup_err(&name))?;
    let friction = if mu_f > 0.0 {
        let fname = format!("friction.{}.{}", s.name, col.name);
        let arr = problem.add_array(&format!("{fname}.lagged"), vec![0.0; 7 * s.rest.len()], 7).map_err(setup_err(&fname))?;
        let (x_prev, cv) = (s.x_prev, col.v);
        let id = problem
            .add_energy(&fname, s.nodes, |b| {
                let p = b.vector(x, 0)?;
                let p0 = b.vector(x_prev, 0)?;
                let h = b.runtime_scalar(dt)?;
                let lag = b.vector(arr, 0)?;
                let f_n = lag.entries()[0];
                let t = Matrix::from_row_major(2, 3, lag.entries()[1..7].to_vec())?;
                let vb = Vector::new(cv.iter().map(|&id| b.runtime_scalar(id)).collect::<Result<_, _>>()?);
                let va = p.try_sub(&p0)?.scale(1.0 / h);
                let e = friction_energy(&va, &vb, &t, b.constant(mu_f), f_n, b.constant(y_hat), STABLE_NORM_EPS)?;
                b.set_with_condition(h * e, f_n.gt(0.0));
                Ok(())
            })
            .map_err(setup_err(&fname))?;
        Some((id, arr))
    } else {
        None
    };
    Ok(ContactState { barrier, system, collider, d_hat, k_c, friction })
}
