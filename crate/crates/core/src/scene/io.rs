//! Binary snapshot-batch format.
//!
//! Layout (all little-endian):
//! - 8 bytes magic `BSBLSNAP`
//! - u32 `N_r`, u32 `U`, u32 `L`, u32 `N_t`, u32 schema version, u32 reserved
//! - `Y` (`N_r U x L`) column-major, each entry as `re, im` f64
//! - `X` (`N_t x U`) column-major, same encoding

use std::fs;
use std::io::Write;
use std::path::Path;

use faer::{c64, Mat};

use crate::error::{Error, Result};
use crate::scene::SnapshotBatch;

pub const MAGIC: &[u8; 8] = b"BSBLSNAP";
pub const SCHEMA_VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

pub fn encode_batch(batch: &SnapshotBatch) -> Result<Vec<u8>> {
    let n_sub = batch.n_subpulses();
    if batch.n_rx == 0 || batch.y.nrows() != batch.n_rx * n_sub {
        return Err(Error::Dimension(format!(
            "Y has {} rows, expected N_r * U = {} * {}",
            batch.y.nrows(),
            batch.n_rx,
            n_sub
        )));
    }
    let entries = batch.y.nrows() * batch.y.ncols() + batch.tx.nrows() * batch.tx.ncols();
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * entries);
    out.extend_from_slice(MAGIC);
    for v in [batch.n_rx, n_sub, batch.n_snapshots(), batch.n_tx()] {
        let v = u32::try_from(v).map_err(|_| Error::BatchFormat(format!("dimension {v} overflows u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for m in [&batch.y, &batch.tx] {
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                out.extend_from_slice(&m[(i, j)].re.to_le_bytes());
                out.extend_from_slice(&m[(i, j)].im.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_batch(bytes: &[u8]) -> Result<SnapshotBatch> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::BatchFormat(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::BatchFormat("bad magic".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[8 + 4 * k..12 + 4 * k].try_into().unwrap()) as usize;
    let (n_rx, n_sub, l, n_tx, version) = (word(0), word(1), word(2), word(3), word(4) as u32);
    if version != SCHEMA_VERSION {
        return Err(Error::BatchFormat(format!("unsupported schema version {version}")));
    }
    let m = n_rx
        .checked_mul(n_sub)
        .ok_or_else(|| Error::BatchFormat("dimensions overflow".into()))?;
    let entries = m
        .checked_mul(l)
        .and_then(|a| n_tx.checked_mul(n_sub).and_then(|b| a.checked_add(b)))
        .ok_or_else(|| Error::BatchFormat("dimensions overflow".into()))?;
    let expected = HEADER_LEN + 16 * entries;
    if bytes.len() != expected {
        return Err(Error::BatchFormat(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut pos = HEADER_LEN;
    let mut next = || {
        let re = f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
        let im = f64::from_le_bytes(bytes[pos + 8..pos + 16].try_into().unwrap());
        pos += 16;
        c64::new(re, im)
    };
    let mut y = Mat::zeros(m, l);
    for j in 0..l {
        for i in 0..m {
            y[(i, j)] = next();
        }
    }
    let mut tx = Mat::zeros(n_tx, n_sub);
    for j in 0..n_sub {
        for i in 0..n_tx {
            tx[(i, j)] = next();
        }
    }
    Ok(SnapshotBatch { y, tx, n_rx })
}

pub fn write_batch(path: &Path, batch: &SnapshotBatch) -> Result<()> {
    let bytes = encode_batch(batch)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_batch(path: &Path) -> Result<SnapshotBatch> {
    decode_batch(&fs::read(path)?)
}
