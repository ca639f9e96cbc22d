//! Generated-source backend: emits one C translation unit per tape, builds
//! it with the host C compiler and loads the shared object.
//!
//! `log`, `sin` and `cos` are called back into the same Rust implementations
//! the tape interpreter uses, and the compiler is told not to contract
//! multiply-adds, so both backends produce identical results by default.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use ipsym_core::kernel::{Backend, Instr, KernelBody, Tape};
use ipsym_core::{Error, Result};

const ENTRY: &[u8] = b"ipsym_kernel\0";

#[repr(C)]
struct MathTable {
    log: extern "C" fn(f64) -> f64,
    sin: extern "C" fn(f64) -> f64,
    cos: extern "C" fn(f64) -> f64,
}

extern "C" fn math_log(x: f64) -> f64 {
    libm::log(x)
}

extern "C" fn math_sin(x: f64) -> f64 {
    libm::sin(x)
}

extern "C" fn math_cos(x: f64) -> f64 {
    libm::cos(x)
}

static MATH: MathTable = MathTable { log: math_log, sin: math_sin, cos: math_cos };

type EntryFn = unsafe extern "C" fn(*const f64, *mut f64, i64, *const MathTable);

/// Compiler settings for generated kernels.
#[derive(Clone, Debug)]
pub struct SourceOptions {
    /// Compiler executable; defaults to `$CC` or `cc`.
    pub compiler: String,
    /// Opt-in `-ffast-math`. Results then differ from the interpreter.
    pub fast_math: bool,
}

impl Default for SourceOptions {
    fn default() -> Self {
        SourceOptions { compiler: std::env::var("CC").unwrap_or_else(|_| "cc".into()), fast_math: false }
    }
}

/// C source for `tape`. Registers become locals; each lane is evaluated in
/// turn with the same straight-line code.
pub fn emit_c(tape: &Tape) -> String {
    let mut s = String::with_capacity(64 + tape.instrs.len() * 40);
    s.push_str("#include <math.h>\n#include <stdint.h>\n#include <string.h>\n\n");
    s.push_str("typedef struct { double (*log)(double); double (*sin)(double); double (*cos)(double); } ipsym_math;\n\n");
    s.push_str("static inline double bits(uint64_t b) { double d; memcpy(&d, &b, 8); return d; }\n\n");
    s.push_str("void ipsym_kernel(const double* in, double* out, long w, const ipsym_math* m) {\n");
    s.push_str("  for (long l = 0; l < w; ++l) {\n");
    let n_in = tape.n_inputs();
    for i in 0..n_in {
        let _ = writeln!(s, "    const double r{i} = in[{i} * w + l];");
    }
    for (k, &b) in tape.constants.iter().enumerate() {
        let _ = writeln!(s, "    const double r{} = bits(0x{b:016x}ULL);", n_in + k);
    }
    let base = tape.first_instr_reg();
    for (k, ins) in tape.instrs.iter().enumerate() {
        let d = base + k;
        let _ = match *ins {
            Instr::Add(a, b) => writeln!(s, "    const double r{d} = r{a} + r{b};"),
            Instr::Sub(a, b) => writeln!(s, "    const double r{d} = r{a} - r{b};"),
            Instr::Mul(a, b) => writeln!(s, "    const double r{d} = r{a} * r{b};"),
            Instr::Div(a, b) => writeln!(s, "    const double r{d} = r{a} / r{b};"),
            Instr::Neg(a) => writeln!(s, "    const double r{d} = -r{a};"),
            Instr::PowInt(a, n) => writeln!(s, "    const double r{d} = {};", pow_expr(a, n)),
            Instr::Sqrt(a) => writeln!(s, "    const double r{d} = sqrt(r{a});"),
            Instr::Log(a) => writeln!(s, "    const double r{d} = m->log(r{a});"),
            Instr::Sin(a) => writeln!(s, "    const double r{d} = m->sin(r{a});"),
            Instr::Cos(a) => writeln!(s, "    const double r{d} = m->cos(r{a});"),
            Instr::Branch(c, a, b) => writeln!(s, "    const double r{d} = (r{c} >= 0.0) ? r{a} : r{b};"),
        };
    }
    for (o, &r) in tape.outputs.iter().enumerate() {
        let _ = writeln!(s, "    out[{o} * w + l] = r{r};");
    }
    s.push_str("  }\n}\n");
    s
}

/// Left-to-right product, matching the interpreter's integer power.
fn pow_expr(a: u32, n: i32) -> String {
    if n == 0 {
        return "1.0".into();
    }
    let mut e = format!("r{a}");
    for _ in 1..n.unsigned_abs() {
        e = format!("({e} * r{a})");
    }
    if n < 0 {
        format!("(1.0 / {e})")
    } else {
        e
    }
}

/// Compiles `source` into the shared object `out`.
pub fn compile(source: &str, out: &Path, opts: &SourceOptions) -> Result<()> {
    let dir = tempfile::tempdir().map_err(|e| Error::Backend(format!("temporary directory: {e}")))?;
    let src = dir.path().join("kernel.c");
    std::fs::write(&src, source).map_err(|e| Error::Backend(format!("writing {}: {e}", src.display())))?;
    let tmp_out = dir.path().join("kernel.so");
    let mut cmd = Command::new(&opts.compiler);
    cmd.args(["-O2", "-shared", "-fPIC", "-fno-math-errno"]);
    cmd.arg(if opts.fast_math { "-ffast-math" } else { "-ffp-contract=off" });
    cmd.arg("-o").arg(&tmp_out).arg(&src);
    let output = cmd
        .output()
        .map_err(|e| Error::Backend(format!("generated-source backend needs a C compiler; running `{}` failed: {e}", opts.compiler)))?;
    if !output.status.success() {
        return Err(Error::Backend(format!(
            "`{}` failed with {}: {}",
            opts.compiler,
            output.status,
            String::from_utf8_lossy(&output.stderr).lines().take(20).collect::<Vec<_>>().join("\n")
        )));
    }
    std::fs::copy(&tmp_out, out).map_err(|e| Error::Backend(format!("storing {}: {e}", out.display())))?;
    Ok(())
}

/// A loaded shared-object kernel body.
pub struct NativeKernel {
    // keeps the library mapped while `entry` is callable
    _lib: libloading::Library,
    entry: EntryFn,
    n_inputs: usize,
    n_outputs: usize,
    path: PathBuf,
}

impl std::fmt::Debug for NativeKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NativeKernel").field("path", &self.path).finish()
    }
}

impl NativeKernel {
    /// Loads a shared object produced by [`compile`] for `tape`.
    pub fn load(path: &Path, tape: &Tape) -> Result<Self> {
        // SAFETY: the library is one we generated; its only exported symbol
        // has the `EntryFn` signature and runs no initialisers.
        unsafe {
            let lib = libloading::Library::new(path).map_err(|e| Error::Backend(format!("loading {}: {e}", path.display())))?;
            let entry = *lib
                .get::<EntryFn>(ENTRY)
                .map_err(|e| Error::Backend(format!("{}: missing kernel entry point: {e}", path.display())))?;
            Ok(NativeKernel { _lib: lib, entry, n_inputs: tape.n_inputs(), n_outputs: tape.n_outputs(), path: path.to_path_buf() })
        }
    }

    /// Generates, compiles and loads `tape`, keeping the object at `out`.
    pub fn build(tape: &Tape, out: &Path, opts: &SourceOptions) -> Result<Arc<Self>> {
        compile(&emit_c(tape), out, opts)?;
        Ok(Arc::new(Self::load(out, tape)?))
    }
}

impl KernelBody for NativeKernel {
    fn eval(&self, inputs: &[f64], outputs: &mut [f64], lanes: usize, _scratch: &mut Vec<f64>) {
        assert!(inputs.len() >= self.n_inputs * lanes && outputs.len() >= self.n_outputs * lanes);
        // SAFETY: buffer sizes checked above; the kernel reads
        // `n_inputs * lanes` and writes `n_outputs * lanes` doubles.
        unsafe { (self.entry)(inputs.as_ptr(), outputs.as_mut_ptr(), lanes as i64, &MATH) }
    }

    fn backend(&self) -> Backend {
        Backend::GeneratedSource
    }
}
