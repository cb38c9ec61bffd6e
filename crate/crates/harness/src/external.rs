//! Subprocess protocol for external denoisers.
//!
//! The harness writes request frames to the child's stdin and reads one
//! response frame per request from its stdout. All integers and floats are
//! little-endian.
//!
//! ```text
//! request:  b"DPSQ" | d: u32 | samples: u32 | sigma: f64 | seed: u64 | x_noisy: d x f64
//! response: b"DPSR" | status: u32 (0 = ok)
//!           ok:    samples: u32 | d: u32 | draws: samples x d x f64 (one draw after another)
//!           error: len: u32 | message: len bytes of UTF-8
//! ```
//!
//! `x_noisy` is on the clean-signal scale (`x_0 + sigma n`). The seed lets a
//! deterministic server reproduce its draws; servers may ignore it.

use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use anyhow::{bail, ensure, Context, Result};
use dpsbench::diffusion::Denoiser;
use dpsbench::levy::Signal;
use dpsbench::rng::{stream, BenchRng};
use nalgebra::DMatrix;
use rand::RngCore;

pub const REQUEST_MAGIC: &[u8; 4] = b"DPSQ";
pub const RESPONSE_MAGIC: &[u8; 4] = b"DPSR";
const MAX_ELEMENTS: usize = 1 << 28;

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub sigma: f64,
    pub samples: usize,
    pub seed: u64,
    pub x_noisy: Vec<f64>,
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

pub fn write_request(w: &mut impl Write, req: &Request) -> Result<()> {
    w.write_all(REQUEST_MAGIC)?;
    w.write_all(&u32::try_from(req.x_noisy.len())?.to_le_bytes())?;
    w.write_all(&u32::try_from(req.samples)?.to_le_bytes())?;
    w.write_all(&req.sigma.to_le_bytes())?;
    w.write_all(&req.seed.to_le_bytes())?;
    for v in &req.x_noisy {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one request; `None` on a clean end of stream.
pub fn read_request(r: &mut impl Read) -> Result<Option<Request>> {
    let mut magic = [0u8; 4];
    match r.read_exact(&mut magic) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    ensure!(&magic == REQUEST_MAGIC, "bad request magic {magic:?}");
    let d = read_u32(r)? as usize;
    let samples = read_u32(r)? as usize;
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    let sigma = f64::from_le_bytes(b);
    r.read_exact(&mut b)?;
    let seed = u64::from_le_bytes(b);
    ensure!(d <= MAX_ELEMENTS, "request dimension {d} too large");
    let x_noisy = read_f64s(r, d)?;
    Ok(Some(Request { sigma, samples, seed, x_noisy }))
}

/// Writes either the draws (`d x samples`, one draw per column) or an error.
pub fn write_response(w: &mut impl Write, result: &Result<DMatrix<f64>>) -> Result<()> {
    w.write_all(RESPONSE_MAGIC)?;
    match result {
        Ok(draws) => {
            w.write_all(&0u32.to_le_bytes())?;
            w.write_all(&u32::try_from(draws.ncols())?.to_le_bytes())?;
            w.write_all(&u32::try_from(draws.nrows())?.to_le_bytes())?;
            for v in draws.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Err(e) => {
            let msg = format!("{e:#}");
            w.write_all(&1u32.to_le_bytes())?;
            w.write_all(&u32::try_from(msg.len())?.to_le_bytes())?;
            w.write_all(msg.as_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_response(r: &mut impl Read) -> Result<DMatrix<f64>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).context("external denoiser closed its output")?;
    ensure!(&magic == RESPONSE_MAGIC, "bad response magic {magic:?}");
    let status = read_u32(r)?;
    if status != 0 {
        let len = read_u32(r)? as usize;
        ensure!(len <= MAX_ELEMENTS, "error message too long");
        let mut msg = vec![0u8; len];
        r.read_exact(&mut msg)?;
        bail!("external denoiser error: {}", String::from_utf8_lossy(&msg));
    }
    let samples = read_u32(r)? as usize;
    let d = read_u32(r)? as usize;
    ensure!(samples.saturating_mul(d) <= MAX_ELEMENTS, "response of {samples} x {d} too large");
    Ok(DMatrix::from_vec(d, samples, read_f64s(r, samples * d)?))
}

/// Answers requests from `input` with `denoiser` until end of stream.
pub fn serve(denoiser: &dyn Denoiser, input: impl Read, output: impl Write) -> Result<usize> {
    let mut input = BufReader::new(input);
    let mut output = BufWriter::new(output);
    let mut served = 0;
    while let Some(req) = read_request(&mut input)? {
        let x = Signal::from_vec(req.x_noisy);
        let mut rng = stream(req.seed, &[]);
        let result = denoiser.denoise(&x, req.sigma, req.samples, &mut rng).map_err(anyhow::Error::from);
        write_response(&mut output, &result)?;
        served += 1;
    }
    Ok(served)
}

struct Pipe {
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

/// A denoiser living in a child process. Calls are serialized over one pipe.
pub struct ExternalDenoiser {
    command: Vec<String>,
    child: Mutex<Child>,
    pipe: Mutex<Pipe>,
}

impl ExternalDenoiser {
    pub fn spawn(command: &[String]) -> Result<Self> {
        Self::spawn_with_env(command, &[])
    }

    pub fn spawn_with_env(command: &[String], env: &[(&str, String)]) -> Result<Self> {
        let (program, args) = command.split_first().context("empty external denoiser command")?;
        let mut child = Command::new(program)
            .args(args)
            .envs(env.iter().map(|(k, v)| (*k, v.as_str())))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .with_context(|| format!("spawning external denoiser {program:?}"))?;
        let stdin = child.stdin.take().context("child stdin")?;
        let stdout = child.stdout.take().context("child stdout")?;
        Ok(Self {
            command: command.to_vec(),
            child: Mutex::new(child),
            pipe: Mutex::new(Pipe {
                stdin: BufWriter::new(stdin),
                stdout: BufReader::new(stdout),
            }),
        })
    }

    pub fn command(&self) -> &[String] {
        &self.command
    }

    fn call(&self, req: &Request) -> Result<DMatrix<f64>> {
        let mut pipe = self.pipe.lock().map_err(|_| anyhow::anyhow!("external denoiser pipe poisoned"))?;
        write_request(&mut pipe.stdin, req)?;
        let draws = read_response(&mut pipe.stdout)?;
        ensure!(
            draws.nrows() == req.x_noisy.len() && draws.ncols() == req.samples,
            "external denoiser returned {} x {}, expected {} x {}",
            draws.nrows(),
            draws.ncols(),
            req.x_noisy.len(),
            req.samples
        );
        Ok(draws)
    }
}

impl Drop for ExternalDenoiser {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Denoiser for ExternalDenoiser {
    fn name(&self) -> &str {
        "external"
    }

    fn denoise(&self, x_noisy: &Signal, sigma: f64, samples: usize, rng: &mut BenchRng) -> dpsbench::Result<DMatrix<f64>> {
        let req = Request {
            sigma,
            samples,
            seed: rng.next_u64(),
            x_noisy: x_noisy.as_slice().to_vec(),
        };
        self.call(&req).map_err(|e| dpsbench::Error::Denoiser(format!("{e:#}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn frames_round_trip() {
        let req = Request {
            sigma: 0.3,
            samples: 2,
            seed: 9,
            x_noisy: vec![1.0, -1.0, 0.5],
        };
        let mut buf = Vec::new();
        write_request(&mut buf, &req).unwrap();
        assert_eq!(&buf[..4], b"DPSQ");
        assert_eq!(buf.len(), 4 + 4 + 4 + 8 + 8 + 3 * 8);
        let mut cur = Cursor::new(buf);
        assert_eq!(read_request(&mut cur).unwrap(), Some(req));
        assert_eq!(read_request(&mut cur).unwrap(), None);

        let draws = DMatrix::from_fn(3, 2, |i, j| (i + 10 * j) as f64);
        let mut out = Vec::new();
        write_response(&mut out, &Ok(draws.clone())).unwrap();
        assert_eq!(read_response(&mut Cursor::new(out)).unwrap(), draws);

        let mut err = Vec::new();
        write_response(&mut err, &Err(anyhow::anyhow!("boom"))).unwrap();
        let e = read_response(&mut Cursor::new(err)).unwrap_err();
        assert!(format!("{e}").contains("boom"));
    }

    #[test]
    fn truncated_and_corrupt_frames_fail() {
        assert!(read_request(&mut Cursor::new(b"XXXX".to_vec())).is_err());
        assert!(read_request(&mut Cursor::new(b"DPSQ\x02".to_vec())).is_err());
        assert!(read_response(&mut Cursor::new(Vec::new())).is_err());
    }
}
