//! Binary checkpoint of the server state: versioned header, then the global
//! model and every stored local model as little-endian 64-bit floats.
//!
//! Layout:
//!   bytes 0..8   magic `FOBPCKPT`
//!   bytes 8..12  format version (u32 LE)
//!   bytes 12..20 round number (u64 LE)
//!   bytes 20..28 parameter count K (u64 LE)
//!   bytes 28..36 client count N (u64 LE)
//!   then K f64 LE (global model), then N * K f64 LE (stored locals, by id).

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::federation::ServerStateG;
use crate::layout::LayerLayout;
use crate::params::ParamVectorG;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"FOBPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint<S: Scalar>(path: &Path, server: &ServerStateG<S>) -> Result<()> {
    let k = server.global_model.len();
    let n = server.stored_locals.len();
    let mut buf = Vec::with_capacity(36 + 8 * k * (n + 1));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(server.round as u64).to_le_bytes());
    buf.extend_from_slice(&(k as u64).to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    for &v in server.global_model.values() {
        buf.extend_from_slice(&v.to_f64c().to_le_bytes());
    }
    for local in &server.stored_locals {
        for &v in local.values() {
            buf.extend_from_slice(&v.to_f64c().to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint<S: Scalar>(
    path: &Path,
    layout: Arc<LayerLayout>,
) -> Result<ServerStateG<S>> {
    let display = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| Error::io(display.clone(), e))?;
    let malformed =
        |reason: &str| Error::Malformed { path: display.clone(), reason: reason.to_string() };

    if bytes.len() < 36 {
        return Err(malformed("shorter than the header"));
    }
    if &bytes[0..8] != MAGIC {
        return Err(malformed("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(malformed(&format!("unsupported version {version}")));
    }
    let round = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let k = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(bytes[28..36].try_into().unwrap()) as usize;
    if k != layout.total_params() {
        return Err(malformed(&format!(
            "{k} parameters in file, layout expects {}",
            layout.total_params()
        )));
    }
    let expected = 36 + 8 * k * (n + 1);
    if bytes.len() != expected {
        return Err(malformed(&format!("{} bytes, expected {expected}", bytes.len())));
    }

    let read_vector = |offset: usize| -> Result<ParamVectorG<S>> {
        let mut values = Vec::with_capacity(k);
        for i in 0..k {
            let at = offset + 8 * i;
            let raw = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
            values.push(S::from_f64c(raw));
        }
        ParamVectorG::new(values, layout.clone())
    };

    let global_model = read_vector(36)?;
    let mut stored_locals = Vec::with_capacity(n);
    for c in 0..n {
        stored_locals.push(read_vector(36 + 8 * k * (c + 1))?);
    }
    Ok(ServerStateG { global_model, stored_locals, round })
}
