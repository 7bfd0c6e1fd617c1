//! Binary checkpoint format.
//!
//! All integers are little-endian `u32`, all reals little-endian IEEE-754
//! `f64`:
//!
//! ```text
//! "MSS1"                         magic
//! version                        currently 1
//! n_z n_u n_y n_normals
//! 4 × net header                 transition, weight, mean, sigma:
//!     n_hidden, width × n_hidden, activation tag × n_hidden, bypass flag
//! u_mean[n_u] u_scale[n_u] y_mean[n_y] y_scale[n_y]
//! 4 × net parameters             per layer: weight (row-major), bias;
//!                                then bypass if present
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::diffcore::{Activation, Dense, MlpParams};
use crate::error::{Error, Result};
use crate::model::{MssDims, MssModel, MssNets, Normalization};
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"MSS1";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64<T: Real>(buf: &mut Vec<u8>, v: T) {
    buf.extend_from_slice(&v.as_f64().to_le_bytes());
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} exceeds u32")))
}

pub fn encode<T: Real>(model: &MssModel<T>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    let d = model.dims();
    for v in [d.n_z, d.n_u, d.n_y, d.n_normals] {
        put_u32(&mut buf, to_u32(v)?);
    }
    for net in model.nets().nets() {
        let widths = net.hidden_widths();
        put_u32(&mut buf, to_u32(widths.len())?);
        for w in &widths {
            put_u32(&mut buf, to_u32(*w)?);
        }
        for a in net.activations() {
            put_u32(&mut buf, a.tag());
        }
        put_u32(&mut buf, u32::from(net.bypass().is_some()));
    }
    let norm = model.normalization();
    for v in norm
        .u_mean
        .iter()
        .chain(&norm.u_scale)
        .chain(&norm.y_mean)
        .chain(&norm.y_scale)
    {
        put_f64(&mut buf, *v);
    }
    for net in model.nets().nets() {
        for layer in net.layers() {
            for v in layer.weight.iter().chain(layer.bias.iter()) {
                put_f64(&mut buf, *v);
            }
        }
        if let Some(b) = net.bypass() {
            for v in b.iter() {
                put_f64(&mut buf, *v);
            }
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated checkpoint while reading {what} at byte {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn f64<T: Real>(&mut self, what: &str) -> Result<T> {
        let b = self.take(8, what)?;
        Ok(T::lit(f64::from_le_bytes(b.try_into().unwrap())))
    }

    fn f64s<T: Real>(&mut self, n: usize, what: &str) -> Result<Vec<T>> {
        (0..n).map(|_| self.f64(what)).collect()
    }
}

struct NetHeader {
    hidden: Vec<usize>,
    activations: Vec<Activation>,
    bypass: bool,
}

// Upper bound on any single dimension in a header; guards allocations when
// the header itself is corrupt.
const MAX_DIM: usize = 1 << 20;

pub fn decode<T: Real>(bytes: &[u8]) -> Result<MssModel<T>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic bytes, not an MSS checkpoint".into()));
    }
    let version = c.u32("version")? as u32;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let dims = MssDims {
        n_z: c.u32("n_z")?,
        n_u: c.u32("n_u")?,
        n_y: c.u32("n_y")?,
        n_normals: c.u32("n_normals")?,
    };
    if [dims.n_z, dims.n_u, dims.n_y, dims.n_normals]
        .iter()
        .any(|&v| v == 0 || v > MAX_DIM)
    {
        return Err(Error::Format(format!("inconsistent dimension header {dims:?}")));
    }
    let mut headers = Vec::with_capacity(4);
    for _ in 0..4 {
        let n_hidden = c.u32("hidden layer count")?;
        if n_hidden > 64 {
            return Err(Error::Format(format!("implausible hidden layer count {n_hidden}")));
        }
        let hidden = (0..n_hidden)
            .map(|_| c.u32("layer width"))
            .collect::<Result<Vec<_>>>()?;
        if hidden.iter().any(|&w| w == 0 || w > MAX_DIM) {
            return Err(Error::Format("layer width out of range".into()));
        }
        let activations = (0..n_hidden)
            .map(|_| {
                let tag = c.u32("activation tag")? as u32;
                Activation::from_tag(tag)
                    .ok_or_else(|| Error::Format(format!("unknown activation tag {tag}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let bypass = match c.u32("bypass flag")? {
            0 => false,
            1 => true,
            other => return Err(Error::Format(format!("bad bypass flag {other}"))),
        };
        headers.push(NetHeader {
            hidden,
            activations,
            bypass,
        });
    }
    let norm = Normalization {
        u_mean: c.f64s(dims.n_u, "normalization")?,
        u_scale: c.f64s(dims.n_u, "normalization")?,
        y_mean: c.f64s(dims.n_y, "normalization")?,
        y_scale: c.f64s(dims.n_y, "normalization")?,
    };
    let outputs = [
        dims.n_z,
        dims.n_normals,
        dims.n_normals * dims.n_y,
        dims.n_normals * dims.n_y,
    ];
    let mut nets = Vec::with_capacity(4);
    for (h, out) in headers.into_iter().zip(outputs) {
        let mut widths = vec![dims.xi_dim()];
        widths.extend_from_slice(&h.hidden);
        widths.push(out);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for w in widths.windows(2) {
            let weight = c.f64s(w[0] * w[1], "weights")?;
            let bias = c.f64s(w[1], "biases")?;
            layers.push(Dense {
                weight: Array2::from_shape_vec((w[1], w[0]), weight).unwrap(),
                bias: Array1::from_vec(bias),
            });
        }
        let bypass = if h.bypass {
            let v = c.f64s(out * dims.xi_dim(), "bypass")?;
            Some(Array2::from_shape_vec((out, dims.xi_dim()), v).unwrap())
        } else {
            None
        };
        nets.push(
            MlpParams::from_parts(layers, h.activations, bypass)
                .map_err(|e| Error::Format(e.to_string()))?,
        );
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after parameters; dimension header inconsistent with payload",
            bytes.len() - c.pos
        )));
    }
    let mut it = nets.into_iter();
    let nets = MssNets {
        transition: it.next().unwrap(),
        weight_head: it.next().unwrap(),
        mean_head: it.next().unwrap(),
        sigma_head: it.next().unwrap(),
    };
    MssModel::from_parts(dims, nets, norm).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_model<T: Real>(model: &MssModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(model)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<MssModel<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
