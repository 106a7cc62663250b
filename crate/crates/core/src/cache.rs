//! Binary cache for sequences of epoch correlation matrices.
//!
//! Layout, all integers `u64` little-endian:
//!
//! ```text
//! b"RMTCORR1"  n  count
//! count x { tau  epoch_len  n*n f64 (row-major, little-endian) }
//! footer_len  footer (JSON: asset_ids, labels)
//! b"RMTCEND1"
//! ```
//!
//! Cache files are named by the SHA-256 of the return panel together with
//! the epoch length and shift.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correlation::{self, CorrelationMatrix, ReturnMatrix};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RMTCORR1";
const END: &[u8; 8] = b"RMTCEND1";

#[derive(Serialize, Deserialize)]
struct Footer {
    asset_ids: Vec<String>,
    labels: Vec<String>,
}

/// Hex SHA-256 over shape, labels and return values.
pub fn panel_hash(returns: &ReturnMatrix) -> String {
    let mut h = Sha256::new();
    h.update((returns.n_assets() as u64).to_le_bytes());
    h.update((returns.n_days() as u64).to_le_bytes());
    for id in returns.asset_ids.iter().chain(&returns.dates) {
        h.update((id.len() as u64).to_le_bytes());
        h.update(id.as_bytes());
    }
    for i in 0..returns.n_assets() {
        for t in 0..returns.n_days() {
            h.update(returns.returns[(i, t)].to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn cache_path(dir: &Path, returns: &ReturnMatrix, epoch_len: usize, shift: usize) -> PathBuf {
    dir.join(format!(
        "{}-m{epoch_len}-s{shift}.rmtc",
        panel_hash(returns)
    ))
}

pub fn write_sequence(path: &Path, seq: &[CorrelationMatrix]) -> Result<()> {
    let n = seq.first().map_or(0, CorrelationMatrix::dim);
    if seq
        .iter()
        .any(|c| c.dim() != n || c.asset_ids != seq[0].asset_ids)
    {
        return Err(Error::param(
            "all cached matrices must share dimension and asset ids",
        ));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let e = |err| Error::io(path, err);
    w.write_all(MAGIC).map_err(e)?;
    w.write_all(&(n as u64).to_le_bytes()).map_err(e)?;
    w.write_all(&(seq.len() as u64).to_le_bytes()).map_err(e)?;
    for c in seq {
        w.write_all(&(c.tau as u64).to_le_bytes()).map_err(e)?;
        w.write_all(&(c.epoch_len as u64).to_le_bytes())
            .map_err(e)?;
        for i in 0..n {
            for j in 0..n {
                w.write_all(&c.c[(i, j)].to_le_bytes()).map_err(e)?;
            }
        }
    }
    let footer = serde_json::to_vec(&Footer {
        asset_ids: seq.first().map(|c| c.asset_ids.clone()).unwrap_or_default(),
        labels: seq.iter().map(|c| c.label.clone()).collect(),
    })?;
    w.write_all(&(footer.len() as u64).to_le_bytes())
        .map_err(e)?;
    w.write_all(&footer).map_err(e)?;
    w.write_all(END).map_err(e)?;
    w.flush().map_err(e)
}

fn corrupt(path: &Path, msg: &str) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("corrupt cache: {msg}"),
    }
}

pub fn read_sequence(path: &Path) -> Result<Vec<CorrelationMatrix>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut buf8 = [0u8; 8];
    let mut read8 = |r: &mut BufReader<std::fs::File>| -> Result<[u8; 8]> {
        r.read_exact(&mut buf8)
            .map_err(|_| corrupt(path, "truncated"))?;
        Ok(buf8)
    };
    if &read8(&mut r)? != MAGIC {
        return Err(corrupt(path, "bad magic"));
    }
    let n = u64::from_le_bytes(read8(&mut r)?) as usize;
    let count = u64::from_le_bytes(read8(&mut r)?) as usize;
    let mut raw = Vec::with_capacity(count);
    for _ in 0..count {
        let tau = u64::from_le_bytes(read8(&mut r)?) as usize;
        let epoch_len = u64::from_le_bytes(read8(&mut r)?) as usize;
        let mut values = Vec::with_capacity(n * n);
        for _ in 0..n * n {
            values.push(f64::from_le_bytes(read8(&mut r)?));
        }
        raw.push((tau, epoch_len, DMatrix::from_row_slice(n, n, &values)));
    }
    let footer_len = u64::from_le_bytes(read8(&mut r)?) as usize;
    let mut footer = vec![0u8; footer_len];
    r.read_exact(&mut footer)
        .map_err(|_| corrupt(path, "truncated footer"))?;
    let footer: Footer =
        serde_json::from_slice(&footer).map_err(|_| corrupt(path, "bad footer"))?;
    if &read8(&mut r)? != END {
        return Err(corrupt(path, "bad end marker"));
    }
    if footer.labels.len() != count || footer.asset_ids.len() != n {
        return Err(corrupt(path, "footer does not match body"));
    }
    raw.into_iter()
        .zip(footer.labels)
        .map(|((tau, epoch_len, c), label)| {
            let mut m = CorrelationMatrix::new(c, tau, epoch_len, footer.asset_ids.clone())?;
            m.label = label;
            Ok(m)
        })
        .collect()
}

/// Loads the rolling sequence from `dir` if cached, otherwise computes and stores it.
pub fn rolling_correlations_cached(
    dir: &Path,
    returns: &ReturnMatrix,
    epoch_len: usize,
    shift: usize,
) -> Result<Vec<CorrelationMatrix>> {
    let path = cache_path(dir, returns, epoch_len, shift);
    if path.exists() {
        return read_sequence(&path);
    }
    let seq = correlation::rolling_correlations(returns, epoch_len, shift)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    // Write then rename so a partially written file is never picked up.
    let tmp = path.with_extension("tmp");
    write_sequence(&tmp, &seq)?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(seq)
}
