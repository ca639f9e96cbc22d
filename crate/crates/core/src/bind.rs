//! Simulation data, dof layout and energy registration.
//!
//! A [`Problem`] owns flat data arrays, connectivity arrays and runtime
//! parameters. Energies are registered with [`Problem::add_energy`]; the
//! builder closure binds symbols to element-local array entries and the
//! resulting expressions are differentiated and lowered to kernels through
//! the configured [`KernelProvider`].

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::assembly::AssemblyCache;
use crate::diff::gradient_hessian;
use crate::error::{Error, Result};
use crate::expr::{Condition, ExprGraph, Matrix, NodeId, Scalar, Vector};
use crate::kernel::{kernel_digest, lower, lower_bundle, Kernel, KernelKind, KernelProvider, MemoryKernelCache, DEFAULT_LANES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArrayId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConnId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EnergyId(pub(crate) usize);

impl EnergyId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct DataArray {
    pub name: String,
    pub data: Vec<f64>,
    pub stride: usize,
    /// Dof set index when the array holds degrees of freedom.
    pub dof_set: Option<usize>,
}

impl DataArray {
    pub fn items(&self) -> usize {
        self.data.len() / self.stride
    }
}

#[derive(Clone, Debug)]
pub struct Connectivity {
    pub name: String,
    pub arity: usize,
    pub indices: Vec<usize>,
}

impl Connectivity {
    pub fn len(&self) -> usize {
        if self.arity == 0 {
            0
        } else {
            self.indices.len() / self.arity
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn element(&self, e: usize) -> &[usize] {
        &self.indices[e * self.arity..(e + 1) * self.arity]
    }
}

/// Placement of every dof set inside the concatenated global vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DofLayout {
    pub offsets: Vec<usize>,
    pub sizes: Vec<usize>,
    pub strides: Vec<usize>,
    pub total: usize,
}

impl DofLayout {
    /// Block size used for the global Hessian: 3 as soon as any dof set has
    /// stride 3, otherwise 1.
    pub fn block_size(&self) -> usize {
        if self.strides.contains(&3) {
            3
        } else {
            1
        }
    }

    pub fn global_index(&self, set: usize, item: usize, component: usize) -> usize {
        self.offsets[set] + item * self.strides[set] + component
    }
}

/// Arrays, connectivity and runtime parameters of a problem.
#[derive(Clone, Debug, Default)]
pub struct ProblemData {
    pub(crate) arrays: Vec<DataArray>,
    pub(crate) conns: Vec<Connectivity>,
    pub(crate) params: Vec<(String, f64)>,
    /// Array index of every dof set, in registration order.
    pub(crate) dof_arrays: Vec<usize>,
}

impl ProblemData {
    pub fn array(&self, id: ArrayId) -> &[f64] {
        &self.arrays[id.0].data
    }

    pub fn array_mut(&mut self, id: ArrayId) -> &mut [f64] {
        &mut self.arrays[id.0].data
    }

    pub fn array_info(&self, id: ArrayId) -> &DataArray {
        &self.arrays[id.0]
    }

    pub fn connectivity(&self, id: ConnId) -> &Connectivity {
        &self.conns[id.0]
    }

    pub fn param(&self, id: ParamId) -> f64 {
        self.params[id.0].1
    }

    pub fn layout(&self) -> DofLayout {
        let mut offsets = Vec::with_capacity(self.dof_arrays.len());
        let mut sizes = Vec::with_capacity(self.dof_arrays.len());
        let mut strides = Vec::with_capacity(self.dof_arrays.len());
        let mut total = 0;
        for &a in &self.dof_arrays {
            offsets.push(total);
            let n = self.arrays[a].data.len();
            sizes.push(n);
            strides.push(self.arrays[a].stride);
            total += n;
        }
        DofLayout { offsets, sizes, strides, total }
    }

    /// The part of a global vector `u` that belongs to dof array `id`.
    pub fn dof_slice<'u>(&self, u: &'u [f64], id: ArrayId) -> Option<&'u [f64]> {
        let set = self.arrays[id.0].dof_set?;
        let mut off = 0;
        for &a in &self.dof_arrays[..set] {
            off += self.arrays[a].data.len();
        }
        u.get(off..off + self.arrays[id.0].data.len())
    }
}

/// Where a kernel input slot takes its value from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotSource {
    /// Component `component` of `array[tuple[element_slot]]`.
    Element { array: usize, element_slot: usize, component: usize },
    Param(usize),
    /// Component of the current fixed summation item.
    Item { term: usize, component: usize },
}

/// One fixed-value summation: `kernel(item)` summed over `items`.
pub struct ForEachTerm {
    pub items: Vec<Vec<f64>>,
    /// First input slot of the item symbols.
    pub item_slot: usize,
    /// Term root, already multiplied by its coefficient in the energy.
    pub root: NodeId,
    pub(crate) full: Kernel,
    pub(crate) value: Kernel,
}

/// Kernels and binding tables used during evaluation. Everything here is
/// immutable after registration and shared between worker threads.
pub struct EnergyRuntime {
    pub(crate) conn: usize,
    pub(crate) sources: Vec<SlotSource>,
    pub(crate) dof_slots: Vec<usize>,
    pub(crate) main: Option<(Kernel, Kernel)>,
    pub(crate) terms: Vec<ForEachTerm>,
    pub(crate) activation: Option<(Kernel, bool)>,
    pub(crate) guard: Option<Kernel>,
}

impl EnergyRuntime {
    pub fn n_inputs(&self) -> usize {
        self.sources.len()
    }

    pub fn n_dofs(&self) -> usize {
        self.dof_slots.len()
    }

    pub fn n_full_outputs(&self) -> usize {
        let n = self.n_dofs();
        1 + n + n * n
    }
}

/// A registered energy.
pub struct EnergyDef {
    pub name: String,
    /// Graph holding every root below. Kept for inspection and oracles.
    pub graph: ExprGraph,
    /// Energy without the fixed summations.
    pub outer: NodeId,
    pub dofs: Vec<NodeId>,
    pub condition: Option<(NodeId, bool)>,
    pub guard: Option<NodeId>,
    pub(crate) rt: EnergyRuntime,
}

impl EnergyDef {
    pub fn connectivity(&self) -> ConnId {
        ConnId(self.rt.conn)
    }

    pub fn sources(&self) -> &[SlotSource] {
        &self.rt.sources
    }

    /// Input slot of each dof symbol, in builder order.
    pub fn dof_slots(&self) -> &[usize] {
        &self.rt.dof_slots
    }

    pub fn n_dofs(&self) -> usize {
        self.rt.n_dofs()
    }

    pub fn n_inputs(&self) -> usize {
        self.rt.n_inputs()
    }

    pub fn terms(&self) -> &[ForEachTerm] {
        &self.rt.terms
    }

    /// Full-derivative kernel of the part outside fixed summations.
    pub fn main_kernel(&self) -> Option<&Kernel> {
        self.rt.main.as_ref().map(|(f, _)| f)
    }

    pub fn term_kernel(&self, k: usize) -> &Kernel {
        &self.rt.terms[k].full
    }

    pub fn activation_kernel(&self) -> Option<&Kernel> {
        self.rt.activation.as_ref().map(|(k, _)| k)
    }

    pub fn guard_kernel(&self) -> Option<&Kernel> {
        self.rt.guard.as_ref()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProblemCounters {
    /// Derivative bundles computed (only on kernel cache misses).
    pub differentiations: usize,
    pub kernel_builds: usize,
    pub cache_hits: usize,
}

pub type Prepass = Box<dyn FnMut(&mut ProblemData, &[f64]) -> Result<()> + Send>;

/// Arrays, energies and kernels of one simulation.
pub struct Problem {
    pub(crate) data: ProblemData,
    pub(crate) energies: Vec<EnergyDef>,
    provider: Box<dyn KernelProvider + Send>,
    differentiations: usize,
    frozen: bool,
    pub(crate) lanes: usize,
    pub(crate) prepasses: Vec<Prepass>,
    pub(crate) topology_checked: bool,
    pub(crate) cache: Option<AssemblyCache>,
}

impl Default for Problem {
    fn default() -> Self {
        Self::new()
    }
}

impl Problem {
    pub fn new() -> Self {
        Self::with_provider(Box::new(MemoryKernelCache::new()))
    }

    pub fn with_provider(provider: Box<dyn KernelProvider + Send>) -> Self {
        Problem {
            data: ProblemData::default(),
            energies: Vec::new(),
            provider,
            differentiations: 0,
            frozen: false,
            lanes: DEFAULT_LANES,
            prepasses: Vec::new(),
            topology_checked: false,
            cache: None,
        }
    }

    pub fn data(&self) -> &ProblemData {
        &self.data
    }

    pub fn set_lanes(&mut self, lanes: usize) -> Result<()> {
        if lanes == 0 {
            return Err(Error::Invalid("lane count must be at least 1".into()));
        }
        self.lanes = lanes;
        Ok(())
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    fn push_array(&mut self, name: &str, data: Vec<f64>, stride: usize, dof: bool) -> Result<ArrayId> {
        if stride == 0 {
            return Err(Error::ZeroStride);
        }
        if data.len() % stride != 0 {
            return Err(Error::RaggedArray { len: data.len(), stride });
        }
        let dof_set = if dof {
            if self.frozen {
                return Err(Error::LayoutFrozen);
            }
            self.data.dof_arrays.push(self.data.arrays.len());
            Some(self.data.dof_arrays.len() - 1)
        } else {
            None
        };
        self.data.arrays.push(DataArray { name: name.to_string(), data, stride, dof_set });
        Ok(ArrayId(self.data.arrays.len() - 1))
    }

    /// Registers a non-dof data array (rest positions, masses, ...).
    pub fn add_array(&mut self, name: &str, data: Vec<f64>, stride: usize) -> Result<ArrayId> {
        self.push_array(name, data, stride, false)
    }

    /// Registers a dof array; it forms its own dof set appended to the layout.
    pub fn add_dof_array(&mut self, name: &str, data: Vec<f64>, stride: usize) -> Result<ArrayId> {
        self.push_array(name, data, stride, true)
    }

    pub fn add_connectivity(&mut self, name: &str, indices: Vec<usize>, arity: usize) -> Result<ConnId> {
        if arity == 0 || indices.len() % arity != 0 {
            return Err(Error::BadConnectivity);
        }
        self.data.conns.push(Connectivity { name: name.to_string(), arity, indices });
        self.topology_checked = false;
        Ok(ConnId(self.data.conns.len() - 1))
    }

    pub fn add_param(&mut self, name: &str, value: f64) -> ParamId {
        self.data.params.push((name.to_string(), value));
        ParamId(self.data.params.len() - 1)
    }

    pub fn set_param(&mut self, id: ParamId, value: f64) {
        self.data.params[id.0].1 = value;
    }

    pub fn param(&self, id: ParamId) -> f64 {
        self.data.param(id)
    }

    pub fn array(&self, id: ArrayId) -> &[f64] {
        self.data.array(id)
    }

    /// Mutable view of an array's contents; the length is fixed here, use
    /// [`Problem::set_array`] to resize.
    pub fn array_mut(&mut self, id: ArrayId) -> &mut [f64] {
        self.data.array_mut(id)
    }

    /// Replaces an array's contents, possibly changing its length. Dof arrays
    /// that change length shift the layout of every later dof set.
    pub fn set_array(&mut self, id: ArrayId, data: Vec<f64>) -> Result<()> {
        let a = self.data.arrays.get_mut(id.0).ok_or(Error::UnknownHandle("array"))?;
        if data.len() % a.stride != 0 {
            return Err(Error::RaggedArray { len: data.len(), stride: a.stride });
        }
        if data.len() != a.data.len() {
            self.topology_checked = false;
        }
        a.data = data;
        Ok(())
    }

    pub fn connectivity(&self, id: ConnId) -> &Connectivity {
        self.data.connectivity(id)
    }

    pub fn set_connectivity(&mut self, id: ConnId, indices: Vec<usize>) -> Result<()> {
        let c = self.data.conns.get_mut(id.0).ok_or(Error::UnknownHandle("connectivity"))?;
        if indices.len() % c.arity != 0 {
            return Err(Error::BadConnectivity);
        }
        c.indices = indices;
        self.topology_checked = false;
        Ok(())
    }

    pub fn layout(&self) -> DofLayout {
        self.data.layout()
    }

    /// Concatenation of all dof arrays.
    pub fn gather_dofs(&self) -> Vec<f64> {
        let mut u = Vec::with_capacity(self.layout().total);
        for &a in &self.data.dof_arrays {
            u.extend_from_slice(&self.data.arrays[a].data);
        }
        u
    }

    /// Writes a global vector back into the dof arrays.
    pub fn scatter_dofs(&mut self, u: &[f64]) -> Result<()> {
        let total = self.layout().total;
        if u.len() != total {
            return Err(Error::StateLength { expected: total, got: u.len() });
        }
        let mut off = 0;
        for &a in &self.data.dof_arrays {
            let arr = &mut self.data.arrays[a].data;
            let n = arr.len();
            arr.copy_from_slice(&u[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Registers a hook that refreshes derived runtime arrays (rotations,
    /// frames) from the current iterate before each full evaluation.
    pub fn add_prepass(&mut self, f: Prepass) {
        self.prepasses.push(f);
    }

    pub fn energies(&self) -> &[EnergyDef] {
        &self.energies
    }

    pub fn energy(&self, id: EnergyId) -> &EnergyDef {
        &self.energies[id.0]
    }

    pub fn energy_by_name(&self, name: &str) -> Option<EnergyId> {
        self.energies.iter().position(|e| e.name == name).map(EnergyId)
    }

    pub fn counters(&self) -> ProblemCounters {
        let c = self.provider.counters();
        ProblemCounters {
            differentiations: self.differentiations,
            kernel_builds: c.kernel_builds,
            cache_hits: c.cache_hits,
        }
    }

    /// Validates every connectivity index against the arrays it addresses
    /// and drops the cached sparsity pattern.
    pub fn refresh_topology(&mut self) -> Result<()> {
        self.cache = None;
        for def in &self.energies {
            let conn = &self.data.conns[def.rt.conn];
            for src in &def.rt.sources {
                if let SlotSource::Element { array, element_slot, .. } = *src {
                    let len = self.data.arrays[array].items();
                    for e in 0..conn.len() {
                        let idx = conn.indices[e * conn.arity + element_slot];
                        if idx >= len {
                            return Err(Error::IndexOutOfBounds { energy: def.name.clone(), element: e, index: idx, len });
                        }
                    }
                }
            }
        }
        self.topology_checked = true;
        Ok(())
    }

    /// Registers an energy summed over the elements of `conn`. The closure
    /// binds symbols and must finish with [`EnergyBuilder::set`] or
    /// [`EnergyBuilder::set_with_condition`].
    pub fn add_energy<F>(&mut self, name: &str, conn: ConnId, build: F) -> Result<EnergyId>
    where
        F: for<'g> FnOnce(&mut EnergyBuilder<'g>) -> Result<()>,
    {
        let arity = self.data.conns.get(conn.0).ok_or(Error::UnknownHandle("connectivity"))?.arity;
        let graph = ExprGraph::new();
        let draft = {
            let mut b = EnergyBuilder::new(&graph, &self.data, name, arity);
            build(&mut b)?;
            b.finish()?
        };
        self.frozen = true;
        let def = self.compile(name, conn.0, graph, draft)?;
        self.energies.push(def);
        self.topology_checked = false;
        self.cache = None;
        Ok(EnergyId(self.energies.len() - 1))
    }

    fn compile(&mut self, name: &str, conn: usize, graph: ExprGraph, d: Draft) -> Result<EnergyDef> {
        let n_in = d.sources.len();
        let dofs = d.dofs.clone();
        let mut diffs = 0usize;
        let provider = &mut self.provider;
        let mut full_value = |root: NodeId| -> Result<(Kernel, Kernel)> {
            let fd = kernel_digest(&graph, KernelKind::Full, &[root], &dofs, n_in);
            let full = provider.get_or_build(fd, dofs.len(), &mut || {
                diffs += 1;
                let bundle = gradient_hessian(&graph, root, &dofs)?;
                lower_bundle(&graph, &bundle, n_in)
            })?;
            let vd = kernel_digest(&graph, KernelKind::Value, &[root], &dofs, n_in);
            let value = provider.get_or_build(vd, dofs.len(), &mut || lower(&graph, &[root], n_in))?;
            Ok((full, value))
        };
        let main = if graph.const_value(d.outer) == Some(0.0) && !d.terms.is_empty() {
            None
        } else {
            Some(full_value(d.outer)?)
        };
        let mut terms = Vec::with_capacity(d.terms.len());
        for t in d.terms {
            let (full, value) = full_value(t.root)?;
            terms.push(ForEachTerm { items: t.items, item_slot: t.item_slot, root: t.root, full, value });
        }
        let mut plain = |root: NodeId| -> Result<Kernel> {
            let pd = kernel_digest(&graph, KernelKind::Plain, &[root], &[], n_in);
            provider.get_or_build(pd, 0, &mut || lower(&graph, &[root], n_in))
        };
        let activation = match d.condition {
            Some((c, strict)) => Some((plain(c)?, strict)),
            None => None,
        };
        let guard = match d.guard {
            Some(g) => Some(plain(g)?),
            None => None,
        };
        self.differentiations += diffs;
        let rt = EnergyRuntime { conn, sources: d.sources, dof_slots: d.dof_slots, main, terms, activation, guard };
        Ok(EnergyDef { name: name.to_string(), outer: d.outer, dofs: d.dofs, condition: d.condition, guard: d.guard, graph, rt })
    }
}

struct TermDraft {
    items: Vec<Vec<f64>>,
    item_slot: usize,
    root: NodeId,
}

struct Draft {
    sources: Vec<SlotSource>,
    dofs: Vec<NodeId>,
    dof_slots: Vec<usize>,
    outer: NodeId,
    terms: Vec<TermDraft>,
    condition: Option<(NodeId, bool)>,
    guard: Option<NodeId>,
}

struct PendingTerm {
    placeholder: NodeId,
    items: Vec<Vec<f64>>,
    item_slot: usize,
    body: NodeId,
}

/// Binds element-local data to symbols while an energy is being built.
pub struct EnergyBuilder<'g> {
    graph: &'g ExprGraph,
    data: &'g ProblemData,
    name: String,
    arity: usize,
    sources: Vec<SlotSource>,
    bound: BTreeMap<(usize, usize), Vec<Scalar<'g>>>,
    params: BTreeMap<usize, Scalar<'g>>,
    dofs: Vec<NodeId>,
    dof_slots: Vec<usize>,
    energy: Option<Scalar<'g>>,
    condition: Option<Condition<'g>>,
    guard: Option<Scalar<'g>>,
    pending: Vec<PendingTerm>,
}

impl<'g> EnergyBuilder<'g> {
    fn new(graph: &'g ExprGraph, data: &'g ProblemData, name: &str, arity: usize) -> Self {
        EnergyBuilder {
            graph,
            data,
            name: name.to_string(),
            arity,
            sources: Vec::new(),
            bound: BTreeMap::new(),
            params: BTreeMap::new(),
            dofs: Vec::new(),
            dof_slots: Vec::new(),
            energy: None,
            condition: None,
            guard: None,
            pending: Vec::new(),
        }
    }

    pub fn graph(&self) -> &'g ExprGraph {
        self.graph
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Energy { energy: self.name.clone(), message: message.into() }
    }

    fn new_slot(&mut self, name: &str, src: SlotSource) -> Result<Scalar<'g>> {
        let slot = self.sources.len();
        let id = self.graph.symbol_node(name, slot as u32)?;
        self.sources.push(src);
        Ok(Scalar::from_node(self.graph, id))
    }

    fn bind(&mut self, array: ArrayId, element_slot: usize) -> Result<Vec<Scalar<'g>>> {
        if element_slot >= self.arity {
            return Err(Error::SlotOutOfRange { slot: element_slot, arity: self.arity });
        }
        let a = self.data.arrays.get(array.0).ok_or(Error::UnknownHandle("array"))?;
        if let Some(v) = self.bound.get(&(array.0, element_slot)) {
            return Ok(v.clone());
        }
        let mut out = Vec::with_capacity(a.stride);
        for c in 0..a.stride {
            let name = format!("{}[{}].{}", a.name, element_slot, c);
            let s = self.new_slot(&name, SlotSource::Element { array: array.0, element_slot, component: c })?;
            if a.dof_set.is_some() {
                self.dofs.push(s.id());
                self.dof_slots.push(self.sources.len() - 1);
            }
            out.push(s);
        }
        self.bound.insert((array.0, element_slot), out.clone());
        Ok(out)
    }

    /// All components of `array[tuple[element_slot]]` as a vector.
    pub fn vector(&mut self, array: ArrayId, element_slot: usize) -> Result<Vector<'g>> {
        Ok(Vector::new(self.bind(array, element_slot)?))
    }

    /// One vector per element slot.
    pub fn vectors(&mut self, array: ArrayId) -> Result<Vec<Vector<'g>>> {
        (0..self.arity).map(|s| self.vector(array, s)).collect()
    }

    /// A stride-1 array entry.
    pub fn scalar(&mut self, array: ArrayId, element_slot: usize) -> Result<Scalar<'g>> {
        let v = self.bind(array, element_slot)?;
        if v.len() != 1 {
            return Err(Error::Shape { expected: 1, got: v.len() });
        }
        Ok(v[0])
    }

    /// An array entry read as a row-major `rows x cols` matrix.
    pub fn matrix(&mut self, array: ArrayId, element_slot: usize, rows: usize, cols: usize) -> Result<Matrix<'g>> {
        let v = self.bind(array, element_slot)?;
        if v.len() != rows * cols {
            return Err(Error::Shape { expected: rows * cols, got: v.len() });
        }
        Matrix::from_row_major(rows, cols, v)
    }

    /// A scalar read from a runtime parameter at every evaluation. Changing
    /// the parameter value never rebuilds a kernel.
    pub fn runtime_scalar(&mut self, param: ParamId) -> Result<Scalar<'g>> {
        if let Some(s) = self.params.get(&param.0) {
            return Ok(*s);
        }
        let (name, _) = self.data.params.get(param.0).ok_or(Error::UnknownHandle("parameter"))?;
        let name = name.clone();
        let s = self.new_slot(&name, SlotSource::Param(param.0))?;
        self.params.insert(param.0, s);
        Ok(s)
    }

    /// A constant baked into the kernel (part of its digest).
    pub fn constant(&self, v: f64) -> Scalar<'g> {
        Scalar::constant(self.graph, v)
    }

    pub fn set(&mut self, energy: Scalar<'g>) {
        self.energy = Some(energy);
        self.condition = None;
    }

    /// Sets the energy and an activation condition; elements whose
    /// condition does not hold contribute nothing.
    pub fn set_with_condition(&mut self, energy: Scalar<'g>, condition: Condition<'g>) {
        self.energy = Some(energy);
        self.condition = Some(condition);
    }

    /// Declares a distance that must stay positive at accepted iterates.
    /// The line search shrinks steps that make it non-positive.
    pub fn set_guard(&mut self, distance: Scalar<'g>) {
        self.guard = Some(distance);
    }

    /// Sum of `body(item)` over constant item tuples. One kernel is built for
    /// a symbolic item and evaluated once per item, accumulating outputs in
    /// item order. The returned value must enter the energy linearly.
    pub fn add_for_each<I, F>(&mut self, items: &[I], body: F) -> Result<Scalar<'g>>
    where
        I: AsRef<[f64]>,
        F: FnOnce(&Vector<'g>) -> Result<Scalar<'g>>,
    {
        if items.is_empty() {
            log::warn!("energy `{}`: fixed summation over an empty item list is 0", self.name);
            return Ok(self.constant(0.0));
        }
        let width = items[0].as_ref().len();
        if items.iter().any(|i| i.as_ref().len() != width) {
            return Err(self.err("fixed summation items must have identical length"));
        }
        let term = self.pending.len();
        let item_slot = self.sources.len();
        let mut comps = Vec::with_capacity(width);
        for c in 0..width {
            let name = format!("item{term}.{c}");
            comps.push(self.new_slot(&name, SlotSource::Item { term, component: c })?);
        }
        let value = body(&Vector::new(comps))?;
        let placeholder = self.graph.internal_symbol_node(&format!("sum{term}"));
        self.pending.push(PendingTerm {
            placeholder,
            items: items.iter().map(|i| i.as_ref().to_vec()).collect(),
            item_slot,
            body: value.id(),
        });
        Ok(Scalar::from_node(self.graph, placeholder))
    }

    fn finish(self) -> Result<Draft> {
        let energy = self.energy.ok_or_else(|| Error::EnergyNotSet(self.name.clone()))?;
        let g = self.graph;
        let placeholders: Vec<NodeId> = self.pending.iter().map(|p| p.placeholder).collect();

        // every reachable symbol must be bound by this builder
        let check = |root: NodeId, item_term: Option<usize>, what: &str| -> Result<()> {
            for s in g.reachable_symbols(&[root]) {
                let info = g.symbol_info(s).expect("symbol");
                let ok = match info.slot {
                    None => what == "energy" && placeholders.contains(&s),
                    Some(slot) => match self.sources.get(slot as usize) {
                        None => false,
                        Some(SlotSource::Item { term, .. }) => item_term == Some(*term),
                        Some(_) => true,
                    },
                };
                if !ok {
                    return Err(self.err(format!("{what} references unbound symbol `{}`", info.name)));
                }
            }
            Ok(())
        };
        check(energy.id(), None, "energy")?;
        if let Some(c) = &self.condition {
            check(c.value.id(), None, "condition")?;
        }
        if let Some(d) = &self.guard {
            check(d.id(), None, "guard")?;
        }
        for (k, t) in self.pending.iter().enumerate() {
            check(t.body, Some(k), "summation body")?;
        }
        if self.dofs.is_empty() {
            return Err(Error::NoDofSymbols(self.name.clone()));
        }

        let zero = g.constant_node(0.0);
        let subs: Vec<(NodeId, NodeId)> = placeholders.iter().map(|&p| (p, zero)).collect();
        let outer = if subs.is_empty() { energy.id() } else { g.substitute(energy.id(), &subs) };
        let mut terms = Vec::with_capacity(self.pending.len());
        for t in &self.pending {
            let coeff = g.derivative(energy.id(), t.placeholder)?;
            let c = g
                .const_value(coeff)
                .ok_or_else(|| self.err("a fixed summation must enter the energy linearly with a constant coefficient"))?;
            let root = g.mul(g.constant_node(c), t.body);
            terms.push(TermDraft { items: t.items.clone(), item_slot: t.item_slot, root });
        }
        Ok(Draft {
            sources: self.sources,
            dofs: self.dofs,
            dof_slots: self.dof_slots,
            outer,
            terms,
            condition: self.condition.map(|c| (c.value.id(), c.strict)),
            guard: self.guard.map(|d| d.id()),
        })
    }
}

/// Element-local input values of `def` for element `e`, with the item slots
/// of every summation left at zero.
pub fn gather_element(data: &ProblemData, layout: &DofLayout, u: &[f64], def: &EnergyDef, e: usize) -> Vec<f64> {
    let mut inputs = vec![0.0; def.rt.sources.len()];
    gather_lanes(data, layout, u, &def.rt, &[e], &mut inputs);
    inputs
}

/// Fills `inputs` (slot-major, `elems.len()` lanes) for the given elements.
pub(crate) fn gather_lanes(data: &ProblemData, layout: &DofLayout, u: &[f64], rt: &EnergyRuntime, elems: &[usize], inputs: &mut [f64]) {
    let w = elems.len();
    let conn = &data.conns[rt.conn];
    for (slot, src) in rt.sources.iter().enumerate() {
        let dst = &mut inputs[slot * w..(slot + 1) * w];
        match *src {
            SlotSource::Element { array, element_slot, component } => {
                let a = &data.arrays[array];
                match a.dof_set {
                    Some(set) => {
                        let base = layout.offsets[set] + component;
                        for (l, &e) in elems.iter().enumerate() {
                            dst[l] = u[base + conn.indices[e * conn.arity + element_slot] * a.stride];
                        }
                    }
                    None => {
                        for (l, &e) in elems.iter().enumerate() {
                            dst[l] = a.data[conn.indices[e * conn.arity + element_slot] * a.stride + component];
                        }
                    }
                }
            }
            SlotSource::Param(p) => dst.fill(data.params[p].1),
            SlotSource::Item { .. } => dst.fill(0.0),
        }
    }
}

/// Global dof indices of element `e`, in local dof order.
pub(crate) fn element_dofs(data: &ProblemData, layout: &DofLayout, rt: &EnergyRuntime, e: usize, out: &mut Vec<usize>) {
    let conn = &data.conns[rt.conn];
    for &slot in &rt.dof_slots {
        if let SlotSource::Element { array, element_slot, component } = rt.sources[slot] {
            let a = &data.arrays[array];
            let set = a.dof_set.expect("dof slot bound to a dof array");
            out.push(layout.offsets[set] + conn.indices[e * conn.arity + element_slot] * a.stride + component);
        }
    }
}
