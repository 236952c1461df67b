//! Binary dataset files, little-endian throughout:
//!
//! ```text
//! magic  b"ADDSET01"
//! K N M  u64 x 3
//! w*     f64 x M
//! per agent k = 0..K:
//!   σ_v,k     f64
//!   features  f64 x N*M (row-major, sample n in row n)
//!   labels    f64 x N
//! ```

use std::io::{Read, Write};
use std::path::Path;

use asyncdiff_core::regression::{AgentDataset, Problem};
use asyncdiff_core::Vector;

use crate::CliError;

pub const MAGIC: &[u8; 8] = b"ADDSET01";

fn put(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode(problem: &Problem) -> Vec<u8> {
    let k = problem.datasets.len();
    let n = problem.datasets.first().map_or(0, |d| d.samples());
    let m = problem.w_star.len();
    let mut out = Vec::with_capacity(32 + 8 * (m + k * (1 + n * (m + 1))));
    out.extend_from_slice(MAGIC);
    for v in [k, n, m] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    put(&mut out, problem.w_star.as_slice());
    for ds in &problem.datasets {
        put(&mut out, &[ds.noise_std]);
        put(&mut out, ds.features());
        put(&mut out, ds.labels());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, len: usize) -> Result<&[u8], CliError> {
        let end = self.at.checked_add(len).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CliError::Dataset("truncated file".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>, CliError> {
        let len = count.checked_mul(8).ok_or_else(|| CliError::Dataset("size overflow".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Problem, CliError> {
    let mut cur = Cursor { bytes, at: 0 };
    if cur.take(8)? != MAGIC {
        return Err(CliError::Dataset("bad magic".into()));
    }
    let k = cur.u64()? as usize;
    let n = cur.u64()? as usize;
    let m = cur.u64()? as usize;
    let w_star = Vector::from_vec(cur.f64s(m)?);
    let mut datasets = Vec::with_capacity(k);
    for _ in 0..k {
        let sigma = cur.f64s(1)?[0];
        let features = cur.f64s(n * m)?;
        let labels = cur.f64s(n)?;
        datasets.push(AgentDataset::from_parts(features, labels, m, sigma)?);
    }
    if cur.at != bytes.len() {
        return Err(CliError::Dataset("trailing bytes".into()));
    }
    Ok(Problem { datasets, w_star })
}

pub fn dump(problem: &Problem, path: &Path) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(&encode(problem)).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> Result<Problem, CliError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CliError::io(path, e))?;
    decode(&bytes)
}
