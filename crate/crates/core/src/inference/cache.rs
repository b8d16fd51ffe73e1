//! On-disk null references keyed by configuration digest.
//!
//! File layout, little-endian: magic `VCNULL`, format version `u16`,
//! digest and method as length-prefixed UTF-8, `B: u64`, `B` sorted `f64`
//! samples, then a `u8` flag followed, when set, by the divergence table:
//! rule `u8`, candidate count `u64`, candidate days `u64`, and per
//! candidate a length-prefixed sorted `f64` column. Writes go to a
//! temporary file in the same directory and are renamed into place, so
//! readers never see a partial file.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::baselines::{DivergenceTable, PValueRule};
use crate::error::{Error, Result};
use crate::inference::null::{NullDistribution, NullReference};

const MAGIC: &[u8; 6] = b"VCNULL";
const VERSION: u16 = 1;

#[derive(Debug, Clone)]
pub struct NullCache {
    dir: PathBuf,
}

impl NullCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(NullCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("null-{digest}.bin"))
    }

    /// Cached reference for `digest`; `None` when absent or stored under
    /// another digest.
    pub fn load(&self, digest: &str) -> Result<Option<NullReference>> {
        let path = self.path_for(digest);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let reference = decode(&bytes)?;
        if reference.null.config_digest() != digest {
            log::warn!("cache file {} holds another digest; ignoring", path.display());
            return Ok(None);
        }
        Ok(Some(reference))
    }

    pub fn store(&self, reference: &NullReference) -> Result<PathBuf> {
        let path = self.path_for(reference.null.config_digest());
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&encode(reference))?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| Error::Io(e.error))?;
        Ok(path)
    }

    /// Loads `digest`, or builds, stores, and returns it. Unreadable cache
    /// files are rebuilt.
    pub fn get_or_build(
        &self,
        digest: &str,
        build: impl FnOnce() -> Result<NullReference>,
    ) -> Result<NullReference> {
        match self.load(digest) {
            Ok(Some(r)) => return Ok(r),
            Ok(None) => {}
            Err(e) => log::warn!("rebuilding unreadable null cache {digest}: {e}"),
        }
        let reference = build()?;
        if reference.null.config_digest() != digest {
            return Err(Error::Cache(format!(
                "built digest {} differs from requested {digest}",
                reference.null.config_digest()
            )));
        }
        self.store(&reference)?;
        Ok(reference)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    out.extend_from_slice(&(xs.len() as u64).to_le_bytes());
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode(reference: &NullReference) -> Vec<u8> {
    let nd = &reference.null;
    let mut out = Vec::with_capacity(64 + 8 * nd.b());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, nd.config_digest());
    put_str(&mut out, nd.method());
    put_f64s(&mut out, nd.samples());
    match &reference.divergence {
        None => out.push(0),
        Some(table) => {
            out.push(1);
            out.push(match table.rule {
                PValueRule::Plain => 0,
                PValueRule::Smoothed => 1,
            });
            out.extend_from_slice(&(table.days.len() as u64).to_le_bytes());
            for d in &table.days {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for col in &table.null {
                put_f64s(&mut out, col);
            }
        }
    }
    out
}

struct Reader<'a> {
    rest: &'a [u8],
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.rest
            .read_exact(&mut buf)
            .map_err(|_| Error::Cache("truncated null cache file".into()))?;
        Ok(buf)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take::<8>()?))
    }

    fn len(&mut self, width: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(width) > self.rest.len() {
            return Err(Error::Cache(format!("length {n} exceeds remaining bytes")));
        }
        Ok(n)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len(1)?;
        let (s, rest) = self.rest.split_at(n);
        self.rest = rest;
        String::from_utf8(s.to_vec()).map_err(|_| Error::Cache("invalid UTF-8".into()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| Ok(f64::from_le_bytes(self.take::<8>()?))).collect()
    }
}

pub fn decode(bytes: &[u8]) -> Result<NullReference> {
    let mut r = Reader { rest: bytes };
    if &r.take::<6>()? != MAGIC {
        return Err(Error::Cache("not a null cache file".into()));
    }
    let version = u16::from_le_bytes(r.take::<2>()?);
    if version != VERSION {
        return Err(Error::Cache(format!("unsupported cache version {version}")));
    }
    let digest = r.string()?;
    let method = r.string()?;
    let samples = r.f64s()?;
    let null = NullDistribution::new(samples, method, digest)?;
    let divergence = match r.take::<1>()?[0] {
        0 => None,
        1 => {
            let rule = match r.take::<1>()?[0] {
                0 => PValueRule::Plain,
                1 => PValueRule::Smoothed,
                x => return Err(Error::Cache(format!("unknown p-value rule {x}"))),
            };
            let n = r.len(8)?;
            let days = (0..n).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let cols = (0..n).map(|_| r.f64s()).collect::<Result<Vec<_>>>()?;
            Some(DivergenceTable { days, null: cols, rule })
        }
        x => return Err(Error::Cache(format!("unknown table flag {x}"))),
    };
    if !r.rest.is_empty() {
        return Err(Error::Cache("trailing bytes in null cache file".into()));
    }
    Ok(NullReference { null, divergence })
}
