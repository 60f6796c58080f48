//! Binary model checkpoints.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic      8 bytes  "PBBNET01"
//! family     u8       0 = gaussian, 1 = laplace
//! p_min      f64
//! layers     u32
//! per layer  in_dim u32, out_dim u32, then eight f64 blocks:
//!            weights mu, weights rho, prior weights mu, prior weights scale,
//!            biases mu, biases rho, prior biases mu, prior biases scale
//! ```
//!
//! Values are stored as raw bit patterns, so a round trip is exact.

use std::path::Path;

use crate::distributions::{CoordDistribution, Family, PriorSnapshot};
use crate::error::{Error, Result};
use crate::network::{ProbLayer, ProbNetwork};

pub const MAGIC: &[u8; 8] = b"PBBNET01";

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn to_bytes(net: &ProbNetwork) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 16 * net.num_coordinates() * 2);
    out.extend_from_slice(MAGIC);
    out.push(match net.family() {
        Family::Gaussian => 0,
        Family::Laplace => 1,
    });
    out.extend_from_slice(&net.p_min().to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for l in net.layers() {
        out.extend_from_slice(&(l.in_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(l.out_dim() as u32).to_le_bytes());
        put_f64s(&mut out, &l.weights.mu);
        put_f64s(&mut out, &l.weights.rho);
        put_f64s(&mut out, l.prior_weights().mu());
        put_f64s(&mut out, l.prior_weights().scale());
        put_f64s(&mut out, &l.biases.mu);
        put_f64s(&mut out, &l.biases.rho);
        put_f64s(&mut out, l.prior_biases().mu());
        put_f64s(&mut out, l.prior_biases().scale());
    }
    out
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated checkpoint: need {n} bytes, {} remain",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let need = n.checked_mul(8).ok_or_else(|| self.err("block size overflows"))?;
        let b = self.take(need)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

/// Parses checkpoint bytes; `path` only labels errors.
pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<ProbNetwork> {
    let mut r = Reader { path, bytes, pos: 0 };
    let magic = r.take(8)?.to_vec();
    if magic != MAGIC {
        r.pos = 0;
        return Err(r.err(format!(
            "bad magic: expected {:?}, found {:?}",
            String::from_utf8_lossy(MAGIC),
            String::from_utf8_lossy(&magic)
        )));
    }
    let family = match r.take(1)?[0] {
        0 => Family::Gaussian,
        1 => Family::Laplace,
        other => {
            r.pos -= 1;
            return Err(r.err(format!("unknown family tag {other}")));
        }
    };
    let p_min = r.f64()?;
    let depth = r.u32()?;
    let mut layers = Vec::with_capacity(depth.min(1024));
    let wrap = |r: &Reader, e: Error| r.err(e.to_string());
    for _ in 0..depth {
        let (n_in, n_out) = (r.u32()?, r.u32()?);
        let nw = n_in
            .checked_mul(n_out)
            .ok_or_else(|| r.err("layer size overflows"))?;
        let wmu = r.f64s(nw)?;
        let wrho = r.f64s(nw)?;
        let pwmu = r.f64s(nw)?;
        let pwscale = r.f64s(nw)?;
        let bmu = r.f64s(n_out)?;
        let brho = r.f64s(n_out)?;
        let pbmu = r.f64s(n_out)?;
        let pbscale = r.f64s(n_out)?;
        let layer = (|| {
            ProbLayer::from_parts(
                n_in,
                n_out,
                CoordDistribution::new(family, wmu, wrho)?,
                CoordDistribution::new(family, bmu, brho)?,
                PriorSnapshot::new(family, pwmu, pwscale)?,
                PriorSnapshot::new(family, pbmu, pbscale)?,
            )
        })()
        .map_err(|e| wrap(&r, e))?;
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    ProbNetwork::from_layers(layers, p_min).map_err(|e| wrap(&r, e))
}

pub fn save_checkpoint(net: &ProbNetwork, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ProbNetwork> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
