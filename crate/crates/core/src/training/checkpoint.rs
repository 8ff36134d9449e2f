//! Binary checkpoint files.
//!
//! ```text
//! MSCR1\n
//! precision=f64\n
//! tensor_count=<n>\n
//! <key>=<value>\n ...        (full run configuration)
//! ---\n
//! n × { name_len: u32 LE, name: utf-8, ndim: u32 LE, dims: ndim × u64 LE, values: f64 LE }
//! ```

use std::path::Path;

use crate::autodiff::Tensor;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::ModelParams;

const MAGIC: &[u8] = b"MSCR1\n";
const END_OF_MANIFEST: &str = "---";

pub fn encode_checkpoint(params: &ModelParams, cfg: &RunConfig) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(b"precision=f64\n");
    out.extend_from_slice(format!("tensor_count={}\n", params.tensors().len()).as_bytes());
    for (k, v) in cfg.to_pairs() {
        out.extend_from_slice(format!("{k}={v}\n").as_bytes());
    }
    out.extend_from_slice(END_OF_MANIFEST.as_bytes());
    out.push(b'\n');
    for (name, t) in params.names().iter().zip(params.tensors()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return self.fail(format!("truncated while reading {what}"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.buf[self.pos..];
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            return self.fail("manifest is not terminated");
        };
        let Ok(s) = std::str::from_utf8(&rest[..end]) else {
            return self.fail("manifest line is not valid UTF-8");
        };
        self.pos += end + 1;
        Ok(s)
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<(ModelParams, RunConfig)> {
    let mut r = Reader { buf, pos: 0 };
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return r.fail("bad magic, expected MSCR1");
    }
    r.pos = MAGIC.len();

    let mut cfg = RunConfig::default();
    let mut count: Option<usize> = None;
    let mut precision_seen = false;
    loop {
        let at = r.pos;
        let line = r.line()?;
        if line == END_OF_MANIFEST {
            break;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Format {
                offset: at,
                message: format!("manifest line `{line}` is not key=value"),
            });
        };
        let bad = |message: String| Error::Format { offset: at, message };
        match k {
            "precision" if v == "f64" => precision_seen = true,
            "precision" => return Err(bad(format!("field `precision` is `{v}`, only f64 is supported"))),
            "tensor_count" => {
                count = Some(v.parse().map_err(|_| bad(format!("field `tensor_count` has invalid value `{v}`")))?)
            }
            _ => cfg.set(k, v).map_err(|m| bad(format!("field `{k}`: {m}")))?,
        }
    }
    if !precision_seen {
        return r.fail("manifest lacks field `precision`");
    }
    let Some(count) = count else {
        return r.fail("manifest lacks field `tensor_count`");
    };

    let mut named = Vec::with_capacity(count.min(4096));
    while r.pos < buf.len() {
        let start = r.pos;
        let len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::Format {
                offset: start,
                message: "tensor name is not valid UTF-8".into(),
            })?
            .to_string();
        let ndim = r.u32("tensor rank")? as usize;
        if ndim == 0 || ndim > 8 {
            return r.fail(format!("tensor `{name}` has implausible rank {ndim}"));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64("tensor dimension")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let Some(n) = n.filter(|&n| n > 0 && n <= (buf.len() - r.pos) / 8) else {
            return r.fail(format!("truncated data for tensor `{name}` with shape {shape:?}"));
        };
        let bytes = r.take(n * 8, "tensor values")?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format {
            offset: start,
            message: e.to_string(),
        })?;
        named.push((name, t));
    }
    if named.len() != count {
        return Err(Error::Format {
            offset: r.pos,
            message: format!(
                "field `tensor_count` says {count} tensors, file holds {}",
                named.len()
            ),
        });
    }
    let params = ModelParams::from_named(&cfg.model, named).map_err(|e| Error::Format {
        offset: r.pos,
        message: e.to_string(),
    })?;
    Ok((params, cfg))
}

pub fn save_checkpoint(params: &ModelParams, cfg: &RunConfig, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params, cfg)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, RunConfig)> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn sample() -> (ModelParams, RunConfig) {
        let mut cfg = RunConfig::default();
        cfg.model = ModelConfig::tiny();
        cfg.preprocess.window_len = 64;
        cfg.preprocess.beat_len = 16;
        (ModelParams::init(&cfg.model).unwrap(), cfg)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (p, c) = sample();
        let bytes = encode_checkpoint(&p, &c);
        let (p2, c2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(p2, p);
        assert_eq!(c2, c);
        assert_eq!(encode_checkpoint(&p2, &c2), bytes);
    }

    #[test]
    fn corruption_is_reported() {
        let (p, c) = sample();
        let bytes = encode_checkpoint(&p, &c);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 0, .. })));

        for cut in [3, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }

        let text = String::from_utf8_lossy(&bytes[..200]).to_string();
        let n = p.tensors().len();
        assert!(text.contains(&format!("tensor_count={n}\n")));
        let needle = format!("tensor_count={n}\n");
        let pos = bytes.windows(needle.len()).position(|w| w == needle.as_bytes()).unwrap();
        let mut bad = bytes[..pos].to_vec();
        bad.extend_from_slice(format!("tensor_count={}\n", n + 1).as_bytes());
        bad.extend_from_slice(&bytes[pos + needle.len()..]);
        match decode_checkpoint(&bad) {
            Err(Error::Format { message, .. }) => assert!(message.contains("tensor_count"), "{message}"),
            other => panic!("{other:?}"),
        }
    }
}
