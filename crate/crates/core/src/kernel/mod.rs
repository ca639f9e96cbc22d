//! Compiled evaluation units and the digest-keyed kernel cache interface.
//!
//! A [`Kernel`] always carries its [`Tape`]; the executable body is either
//! the tape interpreter or an externally compiled implementation supplied
//! through [`KernelBody`].

mod tape;

pub use tape::{lower, Instr, Tape};

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use sha2::{Digest as _, Sha256};

use crate::diff::DerivativeBundle;
use crate::error::{Error, Result};
use crate::expr::{ExprDigest, ExprGraph, NodeId};

/// Bumped whenever the tape layout or digest recipe changes.
pub const FORMAT_VERSION: u32 = 1;

/// Default lane width (four doubles per 256-bit vector register).
pub const DEFAULT_LANES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    InterpretedTape,
    GeneratedSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelSignature {
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub n_dofs: usize,
    pub digest: ExprDigest,
}

/// An executable kernel body. Inputs and outputs use the lane layout of
/// [`Tape::eval_lanes`].
pub trait KernelBody: Send + Sync {
    fn eval(&self, inputs: &[f64], outputs: &mut [f64], lanes: usize, scratch: &mut Vec<f64>);
    fn backend(&self) -> Backend;
}

impl KernelBody for Tape {
    fn eval(&self, inputs: &[f64], outputs: &mut [f64], lanes: usize, scratch: &mut Vec<f64>) {
        self.eval_lanes(inputs, outputs, lanes, scratch)
    }

    fn backend(&self) -> Backend {
        Backend::InterpretedTape
    }
}

#[derive(Clone)]
pub struct Kernel {
    signature: KernelSignature,
    tape: Arc<Tape>,
    body: Arc<dyn KernelBody>,
    /// Seconds since the Unix epoch, when known.
    pub created_at: Option<u64>,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("signature", &self.signature)
            .field("backend", &self.body.backend())
            .field("instructions", &self.tape.instrs.len())
            .finish()
    }
}

impl Kernel {
    pub fn interpreted(tape: Tape, n_dofs: usize, digest: ExprDigest) -> Self {
        let tape = Arc::new(tape);
        Self::with_body(tape.clone(), tape, n_dofs, digest)
    }

    pub fn with_body(tape: Arc<Tape>, body: Arc<dyn KernelBody>, n_dofs: usize, digest: ExprDigest) -> Self {
        let signature = KernelSignature {
            n_inputs: tape.n_inputs(),
            n_outputs: tape.n_outputs(),
            n_dofs,
            digest,
        };
        Kernel { signature, tape, body, created_at: None }
    }

    pub fn signature(&self) -> &KernelSignature {
        &self.signature
    }

    pub fn tape(&self) -> &Arc<Tape> {
        &self.tape
    }

    pub fn backend(&self) -> Backend {
        self.body.backend()
    }

    /// Unchecked hot path used by assembly.
    #[inline]
    pub fn eval_into(&self, inputs: &[f64], outputs: &mut [f64], lanes: usize, scratch: &mut Vec<f64>) {
        self.body.eval(inputs, outputs, lanes, scratch)
    }

    /// Evaluates `lanes` input sets laid out slot-major (`inputs[slot * lanes + lane]`).
    pub fn evaluate_batch(&self, inputs: &[f64], lanes: usize) -> Result<Vec<f64>> {
        if lanes == 0 {
            return Err(Error::Invalid("lane count must be at least 1".into()));
        }
        let expected = self.signature.n_inputs * lanes;
        if inputs.len() != expected {
            return Err(Error::Shape { expected, got: inputs.len() });
        }
        let mut out = vec![0.0; self.signature.n_outputs * lanes];
        let mut scratch = Vec::new();
        self.body.eval(inputs, &mut out, lanes, &mut scratch);
        Ok(out)
    }

    pub fn evaluate(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        self.evaluate_batch(inputs, 1)
    }
}

/// Lowers a derivative bundle; outputs are `[energy, gradient.., hessian row-major..]`.
pub fn lower_bundle(graph: &ExprGraph, bundle: &DerivativeBundle, n_inputs: usize) -> Result<Tape> {
    lower(graph, &bundle.output_roots(), n_inputs)
}

/// What a kernel computes for its roots.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    /// Energy, gradient and Hessian.
    Full,
    /// Energy value only.
    Value,
    /// Raw values of the roots (activation or guard expressions).
    Plain,
}

impl KernelKind {
    fn tag(self) -> &'static [u8] {
        match self {
            KernelKind::Full => b"full",
            KernelKind::Value => b"value",
            KernelKind::Plain => b"plain",
        }
    }
}

/// Cache key of a kernel: covers the format version, the kernel kind, the
/// structure of the roots (including baked constants), the differentiation
/// variables and the input count.
pub fn kernel_digest(graph: &ExprGraph, kind: KernelKind, roots: &[NodeId], dofs: &[NodeId], n_inputs: usize) -> ExprDigest {
    let mut h = Sha256::new();
    h.update(b"ipsym-kernel");
    h.update(FORMAT_VERSION.to_le_bytes());
    h.update(kind.tag());
    h.update(graph.expr_digest(roots).0);
    h.update(graph.expr_digest(dofs).0);
    h.update((n_inputs as u64).to_le_bytes());
    ExprDigest(h.finalize().into())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BuildCounters {
    /// Kernels produced by running the builder or an external compiler.
    pub kernel_builds: usize,
    pub cache_hits: usize,
}

/// Source of kernels keyed by digest. `build` lowers the tape and is only
/// invoked on a miss.
pub trait KernelProvider {
    fn get_or_build(&mut self, digest: ExprDigest, n_dofs: usize, build: &mut dyn FnMut() -> Result<Tape>) -> Result<Kernel>;
    fn counters(&self) -> BuildCounters;
}

/// In-memory provider producing interpreted kernels.
#[derive(Default)]
pub struct MemoryKernelCache {
    kernels: BTreeMap<ExprDigest, Kernel>,
    counters: BuildCounters,
}

impl MemoryKernelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }
}

impl KernelProvider for MemoryKernelCache {
    fn get_or_build(&mut self, digest: ExprDigest, n_dofs: usize, build: &mut dyn FnMut() -> Result<Tape>) -> Result<Kernel> {
        if let Some(k) = self.kernels.get(&digest) {
            self.counters.cache_hits += 1;
            return Ok(k.clone());
        }
        let tape = build()?;
        self.counters.kernel_builds += 1;
        let k = Kernel::interpreted(tape, n_dofs, digest);
        self.kernels.insert(digest, k.clone());
        Ok(k)
    }

    fn counters(&self) -> BuildCounters {
        self.counters
    }
}
