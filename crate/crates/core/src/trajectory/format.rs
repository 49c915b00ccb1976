//! Binary checkpoint files.
//!
//! Little-endian layout:
//!
//! ```text
//! "LPVF" | u32 version | u64 step | u64 param_count
//! f64[param_count] θ | f64[param_count] m | f64[param_count] v
//! f64 val_loss | u64 fingerprint_len | f64[fingerprint_len] fingerprint
//! u8 regime | u64 seed
//! ```
//!
//! Runs live under `<root>/runs/<task>/<seed>/ckpt_<step>.lpv`.

use std::fs;
use std::path::{Path, PathBuf};

use super::Checkpoint;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::optim::Moments;
use crate::param::ParamVector;
use crate::regime::RegimeLabel;

pub const MAGIC: &[u8; 4] = b"LPVF";
pub const FORMAT_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 8 + 8;

pub fn run_dir(root: &Path, task: &str, seed: u64) -> PathBuf {
    root.join("runs").join(task).join(seed.to_string())
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt_{step}.lpv"))
}

pub fn encode_checkpoint(c: &Checkpoint) -> Result<Vec<u8>> {
    let n = c.theta.len();
    c.theta.check_same_len(&c.moments.m)?;
    c.theta.check_same_len(&c.moments.v)?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (3 * n + c.fingerprint.len() + 3) + 1);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&c.step.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for vec in [&c.theta, &c.moments.m, &c.moments.v] {
        for x in vec.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out.extend_from_slice(&c.val_loss.to_le_bytes());
    out.extend_from_slice(&(c.fingerprint.len() as u64).to_le_bytes());
    for x in &c.fingerprint {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.push(c.regime.code());
    out.extend_from_slice(&c.seed.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Corrupt {
                path: self.path.to_path_buf(),
                reason: format!("truncated at byte {} (file is {} bytes)", self.pos, self.bytes.len()),
            }),
        }
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| self.corrupt("length overflow"))?;
        let raw = self.take(len)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn corrupt(&self, reason: &str) -> Error {
        Error::Corrupt {
            path: self.path.to_path_buf(),
            reason: reason.to_string(),
        }
    }
}

/// Decodes a checkpoint; `path` is only used for error messages.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "bad magic bytes".into(),
        });
    }
    let mut r = Reader { bytes, pos: 4, path };
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("unsupported version {version} (expected {FORMAT_VERSION})"),
        });
    }
    let step = r.u64()?;
    let n = usize::try_from(r.u64()?).map_err(|_| r.corrupt("param_count overflow"))?;
    if n == 0 {
        return Err(r.corrupt("param_count is zero"));
    }
    // everything after the header has a length fixed by the two counts; check
    // the parameter payload fits before allocating
    let min_rest = n
        .checked_mul(24)
        .and_then(|x| x.checked_add(8 + 8 + 1 + 8))
        .ok_or_else(|| r.corrupt("param_count overflow"))?;
    if bytes.len() - r.pos < min_rest {
        return Err(r.corrupt(&format!(
            "header declares {n} parameters but the payload is too short"
        )));
    }
    let theta = r.f64s(n)?;
    let m = r.f64s(n)?;
    let v = r.f64s(n)?;
    let val_loss = r.f64()?;
    let fp_len = usize::try_from(r.u64()?).map_err(|_| r.corrupt("fingerprint length overflow"))?;
    let fingerprint = r.f64s(fp_len)?;
    let code = r.take(1)?[0];
    let regime = RegimeLabel::from_code(code).ok_or_else(|| r.corrupt(&format!("bad regime code {code}")))?;
    let seed = r.u64()?;
    if r.pos != bytes.len() {
        return Err(r.corrupt(&format!(
            "{} trailing bytes; payload does not match header counts",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        step,
        theta: ParamVector::new(theta)?,
        moments: Moments {
            m: ParamVector::new(m)?,
            v: ParamVector::new(v)?,
        },
        val_loss,
        fingerprint,
        regime,
        seed,
    })
}

pub fn save_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(c)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Checkpoint files in `dir`, sorted by step.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(step) = name
            .strip_prefix("ckpt_")
            .and_then(|s| s.strip_suffix(".lpv"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            out.push((step, entry.path()));
        }
    }
    out.sort_by_key(|(s, _)| *s);
    Ok(out)
}

pub fn load_run(dir: &Path) -> Result<Vec<Checkpoint>> {
    let files = list_checkpoints(dir)?;
    if files.is_empty() {
        return Err(Error::MissingCheckpoints(format!("no checkpoints in {}", dir.display())));
    }
    files.iter().map(|(_, p)| load_checkpoint(p)).collect()
}
