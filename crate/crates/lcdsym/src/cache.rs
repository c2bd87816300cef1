//! On-disk cache of optimized sample sets, keyed by (dimension, total
//! sample count).
//!
//! Optimizing a large set takes minutes; reusing it takes a file read.
//! Entries live under a root directory as `d{N}_m{M}.lcdsym` files: a
//! 24-byte header followed by the generator matrix, row-major, as
//! little-endian 64-bit floats. The binary format round-trips every
//! finite float bit-exactly, which text formats do not. Writes go to a
//! temporary file first and are renamed into place, so readers never
//! observe a partial file; the last concurrent writer wins.
//!
//! The key deliberately ignores optimizer settings: a stored set is
//! treated as the approximation for its (N, M). Callers that want a
//! fresh computation bypass the lookup (see `load_or_optimize`).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::mixture::SymmetricSampleSet;
use crate::optimizer::{self, OptimizationReport, OptimizerConfig};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"LCDSYM01";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;
const EXTENSION: &str = "lcdsym";

/// Environment variable that overrides the default cache root.
pub const CACHE_DIR_ENV: &str = "LCDSYM_CACHE_DIR";

/// Default cache root, relative to the working directory.
pub const DEFAULT_CACHE_DIR: &str = "sample-cache";

/// Identifies one cached sample set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey {
    pub dim: usize,
    pub total_samples: usize,
}

impl CacheKey {
    pub fn new(dim: usize, total_samples: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("cache key needs dim >= 1".into()));
        }
        if total_samples < 2 * dim {
            return Err(Error::InvalidConfig(format!(
                "cache key needs at least 2N = {} samples in dimension {dim} (got {total_samples})",
                2 * dim
            )));
        }
        Ok(CacheKey { dim, total_samples })
    }

    pub fn for_set(set: &SymmetricSampleSet) -> Self {
        CacheKey {
            dim: set.dim(),
            total_samples: set.total_samples(),
        }
    }

    pub fn half_count(&self) -> usize {
        self.total_samples / 2
    }

    pub fn includes_center(&self) -> bool {
        self.total_samples % 2 == 1
    }

    pub fn file_name(&self) -> String {
        format!("d{}_m{}.{EXTENSION}", self.dim, self.total_samples)
    }

    pub fn path_in(&self, root: &Path) -> PathBuf {
        root.join(self.file_name())
    }

    fn parse_file_name(name: &str) -> Option<CacheKey> {
        let stem = name.strip_suffix(&format!(".{EXTENSION}"))?;
        let rest = stem.strip_prefix('d')?;
        let (dim, m) = rest.split_once("_m")?;
        let dim: usize = dim.parse().ok()?;
        let total: usize = m.parse().ok()?;
        (dim > 0 && total > 0).then_some(CacheKey {
            dim,
            total_samples: total,
        })
    }
}

/// Cache root precedence: explicit argument, then `LCDSYM_CACHE_DIR`,
/// then `./sample-cache`.
pub fn resolve_root(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(CACHE_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_CACHE_DIR),
    }
}

fn integrity_error(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::CacheIntegrity(format!("{}: {what}", path.display()))
}

fn io_context(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

/// Fetch the set stored for `key` under `root`. A missing file is a
/// normal miss, not an error; a file that fails any structural check
/// (magic, version, header consistency with the filename, payload
/// size, finiteness) is an integrity error naming the path.
pub fn lookup(key: &CacheKey, root: &Path) -> Result<Option<SymmetricSampleSet>> {
    let path = key.path_in(root);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(io_context(&path, e)),
    };
    decode_bytes(key, &bytes).map(Some).map_err(|e| match e {
        Error::CacheIntegrity(msg) => integrity_error(&path, msg),
        other => other,
    })
}

/// Parse one cache entry from raw bytes, enforcing every structural
/// check `lookup` applies: magic, version, header agreement with the
/// expected key, payload length, and finiteness. Never panics on
/// arbitrary input.
pub fn decode_bytes(key: &CacheKey, bytes: &[u8]) -> Result<SymmetricSampleSet> {
    let reject = |what: String| Err(Error::CacheIntegrity(what));
    if bytes.len() < HEADER_LEN {
        return reject(format!("truncated header ({} bytes)", bytes.len()));
    }
    if &bytes[0..8] != MAGIC {
        return reject("bad magic tag".into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(8);
    if version != VERSION {
        return reject(format!(
            "unsupported version {version} (expected {VERSION})"
        ));
    }
    let dim = u32_at(12) as usize;
    let half_count = u32_at(16) as usize;
    let center_flag = bytes[20];
    if center_flag > 1 {
        return reject(format!("invalid center flag {center_flag}"));
    }
    if bytes[21..24] != [0, 0, 0] {
        return reject("nonzero reserved header bytes".into());
    }
    let includes_center = center_flag == 1;
    let total = 2 * half_count + usize::from(includes_center);
    if dim != key.dim || total != key.total_samples || includes_center != key.includes_center() {
        return reject(format!(
            "header says dim={dim}, samples={total}; filename says dim={}, samples={}",
            key.dim, key.total_samples
        ));
    }
    let want = half_count
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(HEADER_LEN));
    let Some(want) = want else {
        return reject(format!("implausible payload size {half_count}x{dim}"));
    };
    if bytes.len() != want {
        return reject(format!("payload is {} bytes, expected {want}", bytes.len()));
    }
    let mut rows = DMatrix::zeros(half_count, dim);
    for i in 0..half_count {
        for d in 0..dim {
            let o = HEADER_LEN + (i * dim + d) * 8;
            let v = f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
            if !v.is_finite() {
                return reject(format!("non-finite value at sample {i}, coordinate {d}"));
            }
            rows[(i, d)] = v;
        }
    }
    SymmetricSampleSet::new(rows, includes_center)
        .map_err(|e| Error::CacheIntegrity(format!("payload rejected: {e}")))
}

fn encode(set: &SymmetricSampleSet) -> Vec<u8> {
    let s = set.half_positions();
    let (l, n) = (s.nrows(), s.ncols());
    let mut out = Vec::with_capacity(HEADER_LEN + l * n * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(l as u32).to_le_bytes());
    out.push(u8::from(set.includes_center()));
    out.extend_from_slice(&[0, 0, 0]);
    for i in 0..l {
        for d in 0..n {
            out.extend_from_slice(&s[(i, d)].to_le_bytes());
        }
    }
    out
}

/// Persist `set` under `root`, creating the directory if needed.
/// The write lands in a temporary file that is renamed over the final
/// name, so a concurrent reader sees either the old file or the new
/// one, never a partial write.
pub fn store(set: &SymmetricSampleSet, root: &Path) -> Result<PathBuf> {
    let key = CacheKey::for_set(set);
    fs::create_dir_all(root).map_err(|e| io_context(root, e))?;
    let path = key.path_in(root);
    let mut tmp = tempfile::Builder::new()
        .prefix(".lcdsym-write")
        .tempfile_in(root)
        .map_err(|e| io_context(root, e))?;
    tmp.write_all(&encode(set))
        .map_err(|e| io_context(&path, e))?;
    tmp.flush().map_err(|e| io_context(&path, e))?;
    tmp.persist(&path).map_err(|e| io_context(&path, e.error))?;
    Ok(path)
}

/// One cache file whose name parses as a key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub path: PathBuf,
    pub bytes: u64,
}

/// All recognizable entries under `root`, sorted by key. A missing
/// root is an empty cache. Files with foreign names are ignored.
pub fn list(root: &Path) -> Result<Vec<CacheEntry>> {
    let rd = match fs::read_dir(root) {
        Ok(rd) => rd,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_context(root, e)),
    };
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| io_context(root, e))?;
        let name = entry.file_name();
        let Some(key) = name.to_str().and_then(CacheKey::parse_file_name) else {
            continue;
        };
        let meta = entry.metadata().map_err(|e| io_context(&entry.path(), e))?;
        if meta.is_file() {
            out.push(CacheEntry {
                key,
                path: entry.path(),
                bytes: meta.len(),
            });
        }
    }
    out.sort_by_key(|e| e.key);
    Ok(out)
}

/// Check every entry under `root`; returns per-entry problems
/// (None = healthy).
pub fn validate_all(root: &Path) -> Result<Vec<(CacheEntry, Option<String>)>> {
    list(root)?
        .into_iter()
        .map(|entry| {
            let problem = match lookup(&entry.key, root) {
                Ok(Some(_)) => None,
                Ok(None) => Some("file vanished during validation".to_string()),
                Err(e) => Some(e.to_string()),
            };
            Ok((entry, problem))
        })
        .collect()
}

/// Delete every recognizable cache file under `root`; returns how many
/// were removed.
pub fn purge(root: &Path) -> Result<usize> {
    let entries = list(root)?;
    let mut removed = 0;
    for entry in entries {
        fs::remove_file(&entry.path).map_err(|e| io_context(&entry.path, e))?;
        removed += 1;
    }
    Ok(removed)
}

/// Cache-backed generation: return the stored set when present (no
/// optimization work at all), otherwise optimize, store, and return.
/// `force` skips the lookup and overwrites. The report is present only
/// when an optimization actually ran.
pub fn load_or_optimize(
    key: &CacheKey,
    root: &Path,
    cfg: &OptimizerConfig,
    force: bool,
) -> Result<(SymmetricSampleSet, Option<OptimizationReport>)> {
    if !force {
        if let Some(set) = lookup(key, root)? {
            return Ok((set, None));
        }
    }
    let (set, report) = optimizer::optimize(key.dim, key.total_samples, cfg)?;
    store(&set, root)?;
    Ok((set, Some(report)))
}
