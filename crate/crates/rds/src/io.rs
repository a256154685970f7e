//! `RTN1` tensor files, their JSON sidecars and 8-bit PGM previews.
//!
//! Layout: magic `RTN1`, rank as u64, each dim as u64, then the values as
//! f64; all little-endian.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rds_core::Tensor;

use crate::error::{RdsError, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"RTN1";
/// Range convention recorded in every sidecar.
pub const RANGE_CONVENTION: &str = "[-1,1]";
const MAX_RANK: u64 = 16;

/// A decoding failure at a byte offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeError {
    pub offset: u64,
    pub message: String,
}

pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn fail<T>(&self, message: impl Into<String>) -> std::result::Result<T, DecodeError> {
        Err(DecodeError {
            offset: self.offset(),
            message: message.into(),
        })
    }

    pub(crate) fn take(
        &mut self,
        n: usize,
        what: &str,
    ) -> std::result::Result<&'a [u8], DecodeError> {
        if self.buf.len() - self.pos < n {
            return self.fail(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.buf.len() - self.pos
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> std::result::Result<(), DecodeError> {
        let start = self.pos;
        let got = self.take(4, "magic")?;
        if got != magic {
            self.pos = start;
            return self.fail(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            ));
        }
        Ok(())
    }

    pub(crate) fn u64(&mut self, what: &str) -> std::result::Result<u64, DecodeError> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self, what: &str) -> std::result::Result<f64, DecodeError> {
        Ok(f64::from_bits(self.u64(what)?))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// Rank, dims and values, as shared by `RTN1` files and the external protocol.
    pub(crate) fn tensor_body(&mut self) -> std::result::Result<Tensor, DecodeError> {
        let rank_at = self.offset();
        let rank = self.u64("rank")?;
        if rank == 0 || rank > MAX_RANK {
            return Err(DecodeError {
                offset: rank_at,
                message: format!("rank {rank} outside 1..={MAX_RANK}"),
            });
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut len: usize = 1;
        for _ in 0..rank {
            let at = self.offset();
            let d = self.u64("dim")?;
            len = usize::try_from(d)
                .ok()
                .and_then(|d| len.checked_mul(d))
                .filter(|&l| l.checked_mul(8).is_some())
                .ok_or_else(|| DecodeError {
                    offset: at,
                    message: format!("dim {d} overflows the element count"),
                })?;
            shape.push(d as usize);
        }
        if self.remaining() < len * 8 {
            return self.fail(format!(
                "truncated data: need {} bytes, {} left",
                len * 8,
                self.remaining()
            ));
        }
        let data_at = self.offset();
        let data: Vec<f64> = self
            .take(len * 8, "data")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(DecodeError {
                offset: data_at + 8 * i as u64,
                message: "non-finite value".into(),
            });
        }
        Ok(Tensor::new(shape, data).expect("length and finiteness checked"))
    }
}

pub(crate) fn put_tensor_body(out: &mut Vec<u8>, t: &Tensor) {
    out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 8 * (1 + t.shape().len() + t.len()));
    out.extend_from_slice(TENSOR_MAGIC);
    put_tensor_body(&mut out, t);
    out
}

pub fn decode_tensor(bytes: &[u8]) -> std::result::Result<Tensor, DecodeError> {
    let mut c = Cursor::new(bytes);
    c.magic(TENSOR_MAGIC)?;
    let t = c.tensor_body()?;
    if c.remaining() != 0 {
        return c.fail(format!("{} trailing bytes", c.remaining()));
    }
    Ok(t)
}

/// `x.rtn` -> `x.rtn.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Write the tensor and its sidecar.
pub fn save_tensor(path: &Path, t: &Tensor, provenance: &str) -> Result<()> {
    fs::write(path, encode_tensor(t)).map_err(|e| RdsError::io(path, e))?;
    let side = serde_json::json!({
        "format": "RTN1",
        "shape": t.shape(),
        "range": RANGE_CONVENTION,
        "provenance": provenance,
    });
    let sp = sidecar_path(path);
    let text = serde_json::to_string_pretty(&side).expect("json value serializes");
    fs::write(&sp, text + "\n").map_err(|e| RdsError::io(sp, e))
}

/// Read a tensor; the sidecar is not required.
pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| RdsError::io(path, e))?;
    decode_tensor(&bytes).map_err(|e| RdsError::Format {
        path: path.to_owned(),
        offset: e.offset,
        message: e.message,
    })
}

/// Binary PGM bytes for a 2-D tensor, mapping `[-1, 1]` onto `[0, 255]` with clamping.
pub fn encode_pgm(t: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match *t.shape() {
        [h, w] => (h, w),
        _ => {
            return Err(rds_core::Error::Unsupported("PGM export needs a 2-D tensor").into());
        }
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(t.as_slice().iter().map(|&v| {
        let u = (v.clamp(-1.0, 1.0) + 1.0) * 127.5;
        u.round() as u8
    }));
    Ok(out)
}

pub fn save_pgm(path: &Path, t: &Tensor) -> Result<()> {
    let bytes = encode_pgm(t)?;
    let mut f = fs::File::create(path).map_err(|e| RdsError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| RdsError::io(path, e))
}
