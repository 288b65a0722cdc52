//! Shared binary container: 8-byte magic, little-endian `u64` header length,
//! UTF-8 JSON header, then a payload of little-endian `f64` values.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Result, TacError};

pub(crate) fn write_container<W: Write, H: Serialize>(
    mut w: W,
    magic: &[u8; 8],
    header: &H,
    payload: &[f64],
) -> Result<()> {
    let json = serde_json::to_vec(header).map_err(|e| TacError::Format(e.to_string()))?;
    w.write_all(magic)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(payload.len() * 8);
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Reads the header and the whole remaining payload.
pub(crate) fn read_container<R: Read, H: DeserializeOwned>(
    mut r: R,
    magic: &[u8; 8],
) -> Result<(H, Vec<f64>)> {
    let mut got = [0u8; 8];
    r.read_exact(&mut got)?;
    if &got != magic {
        return Err(TacError::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header = serde_json::from_slice(&json).map_err(|e| TacError::Format(e.to_string()))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() % 8 != 0 {
        return Err(TacError::Format(format!("payload of {} bytes is not a whole number of f64", rest.len())));
    }
    let payload = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, payload))
}
