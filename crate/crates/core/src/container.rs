//! Binary containers for cached matrices and network checkpoints.
//!
//! Matrix caches: 4 magic bytes (`DMGD` distances, `DMGS` similarities), a
//! little-endian `u64` node count, then `n * n` little-endian `f64` values in
//! row-major order.
//!
//! Checkpoints: magic `DMGW`, a version byte, `u64` seed, `u64` layer count,
//! then per layer a kind byte, an activation byte, `u64` in/out dims, the
//! weight (row-major) and the bias, all little-endian `f64`.

use std::fs;
use std::io::{self, Read};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::network::{Activation, Layer, LayerKind, LayerSpec, NetworkParams};

pub const DISTANCE_MAGIC: [u8; 4] = *b"DMGD";
pub const SIMILARITY_MAGIC: [u8; 4] = *b"DMGS";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DMGW";
pub const CHECKPOINT_VERSION: u8 = 1;

fn container_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Container {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Writes to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn put_f64s<'a>(out: &mut Vec<u8>, vals: impl Iterator<Item = &'a f64>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_matrix(magic: [u8; 4], m: &Array2<f64>) -> Vec<u8> {
    assert_eq!(m.nrows(), m.ncols(), "cached matrices are square");
    let n = m.nrows();
    let mut out = Vec::with_capacity(12 + 8 * n * n);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    put_f64s(&mut out, m.iter());
    out
}

pub fn write_matrix(path: &Path, magic: [u8; 4], m: &Array2<f64>) -> Result<()> {
    write_atomic(path, &encode_matrix(magic, m))
}

struct Reader<'a> {
    path: &'a Path,
    inner: io::Cursor<Vec<u8>>,
}

impl<'a> Reader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path,
            inner: io::Cursor::new(bytes),
        })
    }

    fn exact<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| container_err(self.path, "truncated file"))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.exact::<1>()?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.exact()?))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        (0..count)
            .map(|_| Ok(f64::from_le_bytes(self.exact()?)))
            .collect()
    }

    fn magic(&mut self, expect: [u8; 4]) -> Result<()> {
        let got = self.exact::<4>()?;
        if got != expect {
            return Err(container_err(
                self.path,
                format!(
                    "magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&got),
                    String::from_utf8_lossy(&expect)
                ),
            ));
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if (self.inner.position() as usize) != self.inner.get_ref().len() {
            return Err(container_err(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

pub fn read_matrix(path: &Path, magic: [u8; 4]) -> Result<Array2<f64>> {
    let mut r = Reader::open(path)?;
    r.magic(magic)?;
    let n = r.u64()? as usize;
    let data = r.f64s(n.checked_mul(n).ok_or_else(|| container_err(path, "size overflow"))?)?;
    r.finish()?;
    Array2::from_shape_vec((n, n), data).map_err(|e| container_err(path, e.to_string()))
}

fn kind_byte(k: LayerKind) -> u8 {
    match k {
        LayerKind::Fc => 0,
        LayerKind::Fca => 1,
    }
}

fn activation_byte(a: Activation) -> u8 {
    match a {
        Activation::Linear => 0,
        Activation::Relu => 1,
        Activation::LeakyRelu => 2,
    }
}

pub fn encode_checkpoint(params: &NetworkParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&params.seed.to_le_bytes());
    out.extend_from_slice(&(params.layers.len() as u64).to_le_bytes());
    for l in &params.layers {
        out.push(kind_byte(l.spec.kind));
        out.push(activation_byte(l.spec.activation));
        out.extend_from_slice(&(l.spec.in_dim as u64).to_le_bytes());
        out.extend_from_slice(&(l.spec.out_dim as u64).to_le_bytes());
        put_f64s(&mut out, l.weight.iter());
        put_f64s(&mut out, l.bias.iter());
    }
    out
}

pub fn save_checkpoint(path: &Path, params: &NetworkParams) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params))
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let mut r = Reader::open(path)?;
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u8()?;
    if version != CHECKPOINT_VERSION {
        return Err(container_err(path, format!("unsupported version {version}")));
    }
    let seed = r.u64()?;
    let count = r.u64()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let kind = match r.u8()? {
            0 => LayerKind::Fc,
            1 => LayerKind::Fca,
            k => return Err(container_err(path, format!("unknown layer kind {k}"))),
        };
        let activation = match r.u8()? {
            0 => Activation::Linear,
            1 => Activation::Relu,
            2 => Activation::LeakyRelu,
            a => return Err(container_err(path, format!("unknown activation {a}"))),
        };
        let in_dim = r.u64()? as usize;
        let out_dim = r.u64()? as usize;
        let w = r.f64s(in_dim * out_dim)?;
        let b = r.f64s(out_dim)?;
        layers.push(Layer {
            spec: LayerSpec {
                kind,
                in_dim,
                out_dim,
                activation,
            },
            weight: Array2::from_shape_vec((in_dim, out_dim), w)
                .map_err(|e| container_err(path, e.to_string()))?,
            bias: Array1::from(b),
        });
    }
    r.finish()?;
    NetworkParams::new(layers, seed)
}
