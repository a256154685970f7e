//! Child-process denoisers speaking `RDX1` over stdin/stdout.
//!
//! Request: magic `RDX1`, payload length (u64), then the payload
//! `t (f64), rank (u64), dims (u64 each), values (f64 each)`.
//! Response: magic `RDX1`, payload length, then `rank, dims, values`.
//! All fields little-endian.

use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use rds_core::denoiser::DataPredictionModel;
use rds_core::schedule::NoiseSchedule;
use rds_core::Tensor;

use crate::error::{RdsError, Result};
use crate::io::{put_tensor_body, Cursor};

pub const PROTOCOL_MAGIC: &[u8; 4] = b"RDX1";
/// Upper bound on a single payload, 1 GiB.
const MAX_PAYLOAD: u64 = 1 << 30;

pub fn encode_request(t: f64, x: &Tensor) -> Vec<u8> {
    let mut payload = t.to_le_bytes().to_vec();
    put_tensor_body(&mut payload, x);
    frame(payload)
}

pub fn encode_response(x: &Tensor) -> Vec<u8> {
    let mut payload = Vec::new();
    put_tensor_body(&mut payload, x);
    frame(payload)
}

fn frame(payload: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + payload.len());
    out.extend_from_slice(PROTOCOL_MAGIC);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

/// Read one frame's payload; `Ok(None)` on a clean end of stream before the magic.
fn read_frame(r: &mut impl Read) -> Result<Option<Vec<u8>>> {
    let mut head = [0u8; 12];
    let mut got = 0;
    while got < head.len() {
        match r.read(&mut head[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => {
                return Err(RdsError::Protocol(format!(
                    "stream ended inside a frame header at byte {got}"
                )))
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(RdsError::Protocol(format!("read failed: {e}"))),
        }
    }
    if &head[..4] != PROTOCOL_MAGIC {
        return Err(RdsError::Protocol(format!(
            "bad magic {:?} at byte 0",
            String::from_utf8_lossy(&head[..4])
        )));
    }
    let len = u64::from_le_bytes(head[4..].try_into().expect("8 bytes"));
    if len > MAX_PAYLOAD {
        return Err(RdsError::Protocol(format!(
            "payload length {len} exceeds {MAX_PAYLOAD} at byte 4"
        )));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)
        .map_err(|e| RdsError::Protocol(format!("truncated payload of {len} bytes: {e}")))?;
    Ok(Some(payload))
}

fn decode_payload<T>(
    payload: &[u8],
    body: impl FnOnce(&mut Cursor<'_>) -> std::result::Result<T, crate::io::DecodeError>,
) -> Result<T> {
    let mut c = Cursor::new(payload);
    let out = body(&mut c)
        .map_err(|e| RdsError::Protocol(format!("{} at payload byte {}", e.message, e.offset)))?;
    if c.remaining() != 0 {
        return Err(RdsError::Protocol(format!(
            "{} trailing payload bytes at byte {}",
            c.remaining(),
            c.offset()
        )));
    }
    Ok(out)
}

pub fn read_request(r: &mut impl Read) -> Result<Option<(f64, Tensor)>> {
    let Some(payload) = read_frame(r)? else {
        return Ok(None);
    };
    decode_payload(&payload, |c| Ok((c.f64("t")?, c.tensor_body()?))).map(Some)
}

pub fn read_response(r: &mut impl Read) -> Result<Tensor> {
    let payload =
        read_frame(r)?.ok_or_else(|| RdsError::Protocol("denoiser closed its output".into()))?;
    decode_payload(&payload, |c| c.tensor_body())
}

/// Answer requests with `model` until the input stream ends.
pub fn serve<M: DataPredictionModel + ?Sized>(
    model: &mut M,
    schedule: &NoiseSchedule,
    input: &mut impl Read,
    output: &mut impl Write,
) -> Result<()> {
    while let Some((t, x)) = read_request(input)? {
        let (alpha, sigma) = schedule.eval(t)?;
        let x0 = model.predict(&x, t, alpha, sigma)?;
        output
            .write_all(&encode_response(&x0))
            .and_then(|_| output.flush())
            .map_err(|e| RdsError::Protocol(format!("write failed: {e}")))?;
    }
    Ok(())
}

/// A data-prediction model served by a child process.
#[derive(Debug)]
pub struct ExternalModel {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    stdout: BufReader<ChildStdout>,
}

impl ExternalModel {
    /// `command[0]` is the program, the rest its arguments.
    pub fn spawn(command: &[String]) -> Result<Self> {
        let (prog, args) = command
            .split_first()
            .ok_or_else(|| RdsError::Config("prior.command must not be empty".into()))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| RdsError::io(prog, e))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(ExternalModel {
            child,
            stdin: Some(BufWriter::new(stdin)),
            stdout: BufReader::new(stdout),
        })
    }

    fn round_trip(&mut self, x: &Tensor, t: f64) -> Result<Tensor> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| RdsError::Protocol("denoiser already closed".into()))?;
        stdin
            .write_all(&encode_request(t, x))
            .and_then(|_| stdin.flush())
            .map_err(|e| RdsError::Protocol(format!("write failed: {e}")))?;
        let out = read_response(&mut self.stdout)?;
        if out.shape() != x.shape() {
            return Err(RdsError::Protocol(format!(
                "response shape {:?} does not match request shape {:?}",
                out.shape(),
                x.shape()
            )));
        }
        Ok(out)
    }
}

impl DataPredictionModel for ExternalModel {
    fn predict(
        &mut self,
        x_t: &Tensor,
        t: f64,
        _alpha: f64,
        _sigma: f64,
    ) -> rds_core::Result<Tensor> {
        self.round_trip(x_t, t)
            .map_err(|e| rds_core::Error::External(e.to_string()))
    }
}

impl Drop for ExternalModel {
    fn drop(&mut self) {
        // closing stdin lets a well-behaved server exit on its own
        drop(self.stdin.take());
        if !matches!(self.child.try_wait(), Ok(Some(_))) {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rds_core::denoiser::{AnalyticPrior, GaussianPrior};

    #[test]
    fn request_layout() {
        let x = Tensor::from_fn(&[2], |i| i as f64);
        let b = encode_request(0.5, &x);
        assert_eq!(&b[..4], b"RDX1");
        assert_eq!(
            u64::from_le_bytes(b[4..12].try_into().unwrap()),
            8 + 8 + 8 + 16
        );
        assert_eq!(f64::from_le_bytes(b[12..20].try_into().unwrap()), 0.5);
        let (t, back) = read_request(&mut &b[..]).unwrap().unwrap();
        assert_eq!((t, back), (0.5, x));
        assert!(read_request(&mut &b[..0]).unwrap().is_none());
        assert!(read_request(&mut &b[..7]).is_err());
    }

    #[test]
    fn serve_matches_in_process_model() {
        let shape = [3, 3];
        let mut prior = AnalyticPrior::Gaussian(
            GaussianPrior::new(Tensor::full(&shape, 0.2), Tensor::full(&shape, 0.1)).unwrap(),
        );
        let schedule = NoiseSchedule::default();
        let x = Tensor::from_fn(&shape, |i| i as f64 * 0.1 - 0.4);
        let mut input = encode_request(0.3, &x);
        input.extend(encode_request(0.7, &x));
        let mut output = Vec::new();
        serve(&mut prior, &schedule, &mut &input[..], &mut output).unwrap();
        let mut r = &output[..];
        for t in [0.3, 0.7] {
            let (a, s) = schedule.eval(t).unwrap();
            assert_eq!(
                read_response(&mut r).unwrap(),
                prior.predict(&x, t, a, s).unwrap()
            );
        }
        assert!(r.is_empty());
    }
}
