//! Digest-keyed kernel cache on disk.
//!
//! Layout under the cache directory, per kernel digest `<d>` (hex):
//! - `<d>.tape`: versioned JSON tape (constants stored as bit patterns)
//! - `<d>.meta`: signature fields (inputs, outputs, dofs, format version)
//! - `<d>.bin`: shared object, generated-source backend only
//!
//! Entries with a different format version or unreadable contents are
//! rebuilt and overwritten.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ipsym_core::expr::ExprDigest;
use ipsym_core::kernel::{BuildCounters, Kernel, KernelProvider, Tape, FORMAT_VERSION};
use ipsym_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::codegen::{NativeKernel, SourceOptions};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Tape interpreter.
    #[default]
    #[value(name = "interp")]
    #[serde(alias = "interp")]
    Interpreted,
    /// Generated C compiled by the host toolchain.
    #[value(name = "source")]
    #[serde(alias = "source")]
    Source,
}

#[derive(Serialize, Deserialize)]
struct TapeFile {
    format_version: u32,
    tape: Tape,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct MetaFile {
    format_version: u32,
    digest: String,
    n_inputs: usize,
    n_outputs: usize,
    n_dofs: usize,
    created_at: u64,
}

/// Kernel provider backed by an optional cache directory. Without a
/// directory it caches in memory only (and generated objects live in a
/// temporary directory for the provider's lifetime).
pub struct DiskKernelCache {
    dir: Option<PathBuf>,
    backend: BackendKind,
    source: SourceOptions,
    scratch: Option<tempfile::TempDir>,
    loaded: HashMap<ExprDigest, Kernel>,
    counters: BuildCounters,
}

impl DiskKernelCache {
    pub fn new(dir: Option<PathBuf>, backend: BackendKind) -> Result<Self> {
        Self::with_source_options(dir, backend, SourceOptions::default())
    }

    pub fn with_source_options(dir: Option<PathBuf>, backend: BackendKind, source: SourceOptions) -> Result<Self> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(|e| Error::Backend(format!("creating cache directory {}: {e}", d.display())))?;
        }
        Ok(DiskKernelCache { dir, backend, source, scratch: None, loaded: HashMap::new(), counters: BuildCounters::default() })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn object_path(&mut self, hex: &str) -> Result<PathBuf> {
        if let Some(d) = &self.dir {
            return Ok(d.join(format!("{hex}.bin")));
        }
        if self.scratch.is_none() {
            self.scratch = Some(tempfile::tempdir().map_err(|e| Error::Backend(format!("temporary directory: {e}")))?);
        }
        Ok(self.scratch.as_ref().expect("scratch").path().join(format!("{hex}.bin")))
    }

    fn read_entry(dir: &Path, hex: &str, n_dofs: usize) -> Option<Tape> {
        let meta: MetaFile = serde_json::from_slice(&std::fs::read(dir.join(format!("{hex}.meta"))).ok()?).ok()?;
        let file: TapeFile = serde_json::from_slice(&std::fs::read(dir.join(format!("{hex}.tape"))).ok()?).ok()?;
        let ok = meta.format_version == FORMAT_VERSION
            && file.format_version == FORMAT_VERSION
            && meta.digest == hex
            && meta.n_dofs == n_dofs
            && meta.n_inputs == file.tape.n_inputs()
            && meta.n_outputs == file.tape.n_outputs();
        if !ok {
            log::warn!("kernel cache entry {hex} is stale or inconsistent; rebuilding");
            return None;
        }
        Some(file.tape)
    }

    fn write_entry(dir: &Path, hex: &str, tape: &Tape, n_dofs: usize) -> Result<()> {
        let created_at = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let meta = MetaFile {
            format_version: FORMAT_VERSION,
            digest: hex.into(),
            n_inputs: tape.n_inputs(),
            n_outputs: tape.n_outputs(),
            n_dofs,
            created_at,
        };
        let tape_json = serde_json::to_vec(&TapeFile { format_version: FORMAT_VERSION, tape: tape.clone() }).map_err(|e| Error::Backend(e.to_string()))?;
        let meta_json = serde_json::to_vec_pretty(&meta).map_err(|e| Error::Backend(e.to_string()))?;
        // tape first: a reader only trusts entries whose meta exists
        write_atomic(&dir.join(format!("{hex}.tape")), &tape_json)?;
        write_atomic(&dir.join(format!("{hex}.meta")), &meta_json)
    }

    fn make_kernel(&mut self, tape: Tape, n_dofs: usize, digest: ExprDigest, built: &mut bool) -> Result<Kernel> {
        match self.backend {
            BackendKind::Interpreted => Ok(Kernel::interpreted(tape, n_dofs, digest)),
            BackendKind::Source => {
                let hex = digest.to_hex();
                let obj = self.object_path(&hex)?;
                let body = match obj.exists().then(|| NativeKernel::load(&obj, &tape)) {
                    Some(Ok(k)) => Arc::new(k),
                    other => {
                        if let Some(Err(e)) = other {
                            log::warn!("reloading {} failed ({e}); recompiling", obj.display());
                        }
                        *built = true;
                        NativeKernel::build(&tape, &obj, &self.source)?
                    }
                };
                Ok(Kernel::with_body(Arc::new(tape), body, n_dofs, digest))
            }
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::Backend(format!("writing {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::Backend(format!("writing {}: {e}", path.display())))
}

impl KernelProvider for DiskKernelCache {
    fn get_or_build(&mut self, digest: ExprDigest, n_dofs: usize, build: &mut dyn FnMut() -> Result<Tape>) -> Result<Kernel> {
        if let Some(k) = self.loaded.get(&digest) {
            self.counters.cache_hits += 1;
            return Ok(k.clone());
        }
        let hex = digest.to_hex();
        let stored = self.dir.as_deref().and_then(|d| Self::read_entry(d, &hex, n_dofs));
        let mut built = stored.is_none();
        let tape = match stored {
            Some(t) => t,
            None => {
                let t = build()?;
                if let Some(d) = &self.dir {
                    Self::write_entry(d, &hex, &t, n_dofs)?;
                }
                t
            }
        };
        let kernel = self.make_kernel(tape, n_dofs, digest, &mut built)?;
        if built {
            self.counters.kernel_builds += 1;
        } else {
            self.counters.cache_hits += 1;
        }
        self.loaded.insert(digest, kernel.clone());
        Ok(kernel)
    }

    fn counters(&self) -> BuildCounters {
        self.counters
    }
}
