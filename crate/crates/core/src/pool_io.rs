//! Pool persistence: a flat little-endian binary format and a one-column CSV.
//!
//! Binary layout (40-byte header, then `size` IEEE-754 `f64` LE values):
//!
//! | offset | field      | type      |
//! |--------|------------|-----------|
//! | 0      | magic      | `SFPEPOOL`|
//! | 8      | version    | u32       |
//! | 12     | reserved   | u32 (0)   |
//! | 16     | size       | u64       |
//! | 24     | generation | u64       |
//! | 32     | seed       | u64       |

use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use crate::engine::SamplePool;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"SFPEPOOL";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 40;

fn io(e: std::io::Error) -> Error {
    Error::PoolFormat(e.to_string())
}

pub fn write_binary<F: Scalar, W: Write>(pool: &SamplePool<F>, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    let mut h = Vec::with_capacity(HEADER_LEN);
    h.extend_from_slice(MAGIC);
    h.extend_from_slice(&VERSION.to_le_bytes());
    h.extend_from_slice(&0u32.to_le_bytes());
    h.extend_from_slice(&(pool.len() as u64).to_le_bytes());
    h.extend_from_slice(&pool.generation.to_le_bytes());
    h.extend_from_slice(&pool.seed.to_le_bytes());
    w.write_all(&h).map_err(io)?;
    for x in &pool.values {
        w.write_all(&x.f64().to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_binary<F: Scalar, R: Read>(r: R) -> Result<SamplePool<F>> {
    let mut r = BufReader::new(r);
    let mut h = [0u8; HEADER_LEN];
    r.read_exact(&mut h).map_err(|_| Error::PoolFormat("truncated header".into()))?;
    if &h[..8] != MAGIC {
        return Err(Error::PoolFormat("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(h[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(h[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != VERSION {
        return Err(Error::PoolFormat(format!("unsupported version {version}")));
    }
    let size = u64_at(16) as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io)?;
    if bytes.len() != size * 8 {
        return Err(Error::PoolFormat(format!("expected {} value bytes, found {}", size * 8, bytes.len())));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| F::of(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Ok(SamplePool { values, generation: u64_at(24), seed: u64_at(32), target_mean: None })
}

/// One `value` column in shortest round-trip decimal form.
pub fn write_csv<F: Scalar, W: Write>(pool: &SamplePool<F>, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "value").map_err(io)?;
    for x in &pool.values {
        writeln!(w, "{}", x.f64()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a `value` column; generation and seed are not stored in CSV.
pub fn read_csv<F: Scalar, R: Read>(r: R) -> Result<Vec<F>> {
    let mut lines = BufReader::new(r).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "value" => {}
        _ => return Err(Error::PoolFormat("missing `value` header".into())),
    }
    lines
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, l)| {
            let l = l.map_err(io)?;
            l.trim()
                .parse::<f64>()
                .map(F::of)
                .map_err(|e| Error::PoolFormat(format!("line {}: {e}", i + 2)))
        })
        .collect()
}

pub fn save<F: Scalar>(pool: &SamplePool<F>, path: &std::path::Path) -> Result<()> {
    write_binary(pool, std::fs::File::create(path).map_err(io)?)
}

pub fn load<F: Scalar>(path: &std::path::Path) -> Result<SamplePool<F>> {
    read_binary(std::fs::File::open(path).map_err(io)?)
}
