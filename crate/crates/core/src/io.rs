//! Artifact formats: binary field containers, CSV tables stamped with the
//! config hash, and atomic file writes.
//!
//! Binary containers are little-endian. Corrector container:
//!
//! ```text
//! "HOMGCOR\0" | u32 dim | u32 n_y | u32 n_s | u8 regime | 3 pad
//! | 32 bytes config sha256 (zero if unknown) | f64 payload [j][k][node]
//! ```
//!
//! with one s-slice for SuperCritical correctors and `n_s` otherwise.
//!
//! Space-time container:
//!
//! ```text
//! "HOMGSTF\0" | u32 dim | u32 n_t | u32 cells per dim (x dim)
//! | 32 bytes config sha256 | f64 lo, hi per dim | f64 times | f64 values [k][node]
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::cellproblems::CorrectorField;
use crate::error::{HomogError, Result};
use crate::grid::{BoxGrid, CellGrid};
use crate::homogenized::SpaceTimeField;
use crate::regime::Regime;

const COR_MAGIC: &[u8; 8] = b"HOMGCOR\0";
const STF_MAGIC: &[u8; 8] = b"HOMGSTF\0";
pub const HASH_PREFIX: &str = "# config-sha256: ";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Git-style content hash: sha256 over `"blob <len>\0" + content`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

fn hash_bytes(hash: Option<&str>) -> Result<[u8; 32]> {
    let mut out = [0u8; 32];
    if let Some(h) = hash {
        let raw = hex::decode(h).map_err(|e| HomogError::config(format!("bad hash {h}: {e}")))?;
        if raw.len() != 32 {
            return Err(HomogError::config(format!("hash {h} is not 32 bytes")));
        }
        out.copy_from_slice(&raw);
    }
    Ok(out)
}

/// Writes via a uniquely named temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| HomogError::config(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    let tmp = dir.join(format!(".{name}.{}.{nanos}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(HomogError::config("truncated container"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn hash_field(raw: &[u8]) -> Option<String> {
    if raw.iter().all(|b| *b == 0) {
        None
    } else {
        Some(hex::encode(raw))
    }
}

pub fn encode_correctors(c: &CorrectorField, hash: Option<&str>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(COR_MAGIC);
    out.extend_from_slice(&(c.grid.dim as u32).to_le_bytes());
    out.extend_from_slice(&(c.grid.n_y as u32).to_le_bytes());
    out.extend_from_slice(&(c.grid.n_s as u32).to_le_bytes());
    out.push(c.regime.tag());
    out.extend_from_slice(&[0u8; 3]);
    out.extend_from_slice(&hash_bytes(hash)?);
    for v in c.slices.iter().flatten().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_correctors(bytes: &[u8]) -> Result<(CorrectorField, Option<String>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != COR_MAGIC {
        return Err(HomogError::config("not a corrector container"));
    }
    let dim = r.u32()? as usize;
    let n_y = r.u32()? as usize;
    let n_s = r.u32()? as usize;
    let tag = r.take(4)?[0];
    let regime = Regime::from_tag(tag).ok_or_else(|| HomogError::config(format!("bad regime tag {tag}")))?;
    let hash = hash_field(r.take(32)?);
    let grid = CellGrid::new(dim, n_y, n_s)?;
    let nodes = grid.node_count();
    let n_s = if regime == Regime::SuperCritical { 1 } else { n_s };
    let mut slices = Vec::with_capacity(dim);
    for _ in 0..dim {
        let mut per_j = Vec::with_capacity(n_s);
        for _ in 0..n_s {
            per_j.push(r.f64s(nodes)?);
        }
        slices.push(per_j);
    }
    if r.pos != bytes.len() {
        return Err(HomogError::config("trailing bytes in corrector container"));
    }
    Ok((CorrectorField { regime, grid, slices }, hash))
}

pub fn encode_field(f: &SpaceTimeField, hash: Option<&str>) -> Result<Vec<u8>> {
    let g = &f.grid;
    let mut out = Vec::new();
    out.extend_from_slice(STF_MAGIC);
    out.extend_from_slice(&(g.dim as u32).to_le_bytes());
    out.extend_from_slice(&(f.times.len() as u32).to_le_bytes());
    for c in &g.cells {
        out.extend_from_slice(&(*c as u32).to_le_bytes());
    }
    out.extend_from_slice(&hash_bytes(hash)?);
    for d in 0..g.dim {
        out.extend_from_slice(&g.lo[d].to_le_bytes());
        out.extend_from_slice(&g.hi[d].to_le_bytes());
    }
    for v in f.times.iter().chain(f.values.iter().flatten()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_field(bytes: &[u8]) -> Result<(SpaceTimeField, Option<String>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != STF_MAGIC {
        return Err(HomogError::config("not a space-time container"));
    }
    let dim = r.u32()? as usize;
    if !(1..=2).contains(&dim) {
        return Err(HomogError::config(format!("bad dimension {dim}")));
    }
    let n_t = r.u32()? as usize;
    let cells = (0..dim).map(|_| r.u32().map(|c| c as usize)).collect::<Result<Vec<_>>>()?;
    let hash = hash_field(r.take(32)?);
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for _ in 0..dim {
        lo.push(r.f64()?);
        hi.push(r.f64()?);
    }
    let grid = BoxGrid::new(lo, hi, cells)?;
    let times = r.f64s(n_t)?;
    let n = grid.unknowns();
    let values = (0..n_t).map(|_| r.f64s(n)).collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(HomogError::config("trailing bytes in space-time container"));
    }
    Ok((SpaceTimeField { grid, times, values }, hash))
}

/// A CSV table whose first line records the producing config's hash.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Shortest round-trip decimal.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        CsvTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self, hash: &str) -> String {
        let mut s = format!("{HASH_PREFIX}{hash}\n{}\n", self.header.join(","));
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// Hash recorded in the first line of an artifact, if any.
pub fn recorded_hash(path: &Path) -> Result<Option<String>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(COR_MAGIC) {
        return Ok(decode_correctors(&bytes)?.1);
    }
    if bytes.starts_with(STF_MAGIC) {
        return Ok(decode_field(&bytes)?.1);
    }
    let text = String::from_utf8_lossy(&bytes);
    let first = text.lines().next().unwrap_or("");
    if let Some(h) = first.strip_prefix(HASH_PREFIX) {
        return Ok(Some(h.trim().to_string()));
    }
    if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value = serde_json::from_slice(&bytes)?;
        return Ok(v.get("config_sha256").and_then(|h| h.as_str()).map(String::from));
    }
    Ok(None)
}

/// Artifacts in `dir` whose recorded hash differs from `hash` or is missing.
pub fn stale_artifacts(dir: &Path, hash: &str) -> Result<Vec<PathBuf>> {
    let mut stale = Vec::new();
    if !dir.is_dir() {
        return Ok(stale);
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
        .collect();
    entries.sort();
    for p in entries {
        if recorded_hash(&p)?.as_deref() != Some(hash) {
            stale.push(p);
        }
    }
    Ok(stale)
}

/// Slice `k` of every corrector direction: `j, y1[, y2], chi`.
pub fn corrector_slice_csv(c: &CorrectorField, k: usize) -> CsvTable {
    let lat = c.grid.lattice();
    let mut t = if c.grid.dim == 2 {
        CsvTable::new(&["j", "s", "y1", "y2", "chi"])
    } else {
        CsvTable::new(&["j", "s", "y1", "chi"])
    };
    let s = if c.s_extent() == 1 { 0.0 } else { c.grid.s_at(k) };
    for j in 0..c.dim() {
        let slice = c.slice(j, k);
        for idx in 0..lat.size() {
            let y = lat.coords(lat.node(idx));
            let mut row = vec![(j + 1).to_string(), fmt_f64(s), fmt_f64(y[0])];
            if c.grid.dim == 2 {
                row.push(fmt_f64(y[1]));
            }
            row.push(fmt_f64(slice[idx]));
            t.push(row);
        }
    }
    t
}

/// `x1[, x2], t, u` for every interior node and slice.
pub fn field_csv(f: &SpaceTimeField) -> CsvTable {
    let mut t = if f.grid.dim == 2 {
        CsvTable::new(&["x1", "x2", "t", "u"])
    } else {
        CsvTable::new(&["x1", "t", "u"])
    };
    let pts = f.grid.interior_points();
    for (k, tk) in f.times.iter().enumerate() {
        for (i, x) in pts.iter().enumerate() {
            let mut row = vec![fmt_f64(x[0])];
            if f.grid.dim == 2 {
                row.push(fmt_f64(x[1]));
            }
            row.push(fmt_f64(*tk));
            row.push(fmt_f64(f.values[k][i]));
            t.push(row);
        }
    }
    t
}
