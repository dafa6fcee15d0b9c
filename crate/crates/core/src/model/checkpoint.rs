//! `ETMDL1` checkpoint: magic, then `dim, context, v_in, v_out` as u32 LE, a
//! 32-byte vocabulary hash, then `e_in, e_out, w, b` as row-major f64 LE.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, ToyModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"ETMDL1";

pub fn write_checkpoint(params: &ToyModelParams, vocab_hash: &[u8; 32], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let res: std::io::Result<()> = (|| {
        w.write_all(MAGIC)?;
        for n in [params.dim, params.context, params.v_in, params.v_out] {
            w.write_all(&(n as u32).to_le_bytes())?;
        }
        w.write_all(vocab_hash)?;
        for t in params.tensors() {
            for x in t {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Returns the parameters and the stored vocabulary hash.
pub fn read_checkpoint(path: &Path) -> Result<(ToyModelParams, [u8; 32])> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(f).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::BadFormat { kind: "checkpoint", reason };
    if bytes.len() < 54 || &bytes[..6] != MAGIC {
        return Err(bad("missing ETMDL1 header".into()));
    }
    let dims: Vec<usize> =
        bytes[6..22].chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize).collect();
    let hash: [u8; 32] = bytes[22..54].try_into().expect("32 bytes");
    let mut params = ToyModelParams::zeros(ModelConfig { dim: dims[0], context: dims[1] }, dims[2], dims[3]);
    let body = &bytes[54..];
    if body.len() != params.num_params() * 8 {
        return Err(bad(format!("expected {} parameters, found {} bytes", params.num_params(), body.len())));
    }
    let mut vals = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for t in params.tensors_mut() {
        for x in t.iter_mut() {
            *x = vals.next().expect("length checked");
        }
    }
    if !params.is_finite() {
        return Err(bad("non-finite parameter".into()));
    }
    Ok((params, hash))
}
