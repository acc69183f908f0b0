//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "HRTFFLD\0"
//! version    u32
//! variant    u8 length + ASCII tag ("a", "b", "c1", "c2")
//! N          u64
//! K          u64
//! count      u64
//! count x    name length u32, UTF-8 name, rank u32, rank x u64 dims,
//!            prod(dims) x f64
//! ```
//!
//! Model tensors come first in flat-view order. Anthropometry statistics, if
//! present, follow as `anthro_norm.mean` and `anthro_norm.std` (`[12]` each).

use std::io::{Read, Write};

use super::{ModelParams, ParamTensor, Variant};
use crate::error::{Error, Result};
use crate::spectra::NormStats;
use crate::{ANTHRO_FEATURES, BINS};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"HRTFFLD\0";
pub const CHECKPOINT_VERSION: u32 = 1;

const NORM_MEAN: &str = "anthro_norm.mean";
const NORM_STD: &str = "anthro_norm.std";
const MAX_NAME_LEN: u32 = 4096;
const MAX_RANK: u32 = 8;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn write_tensor(w: &mut impl Write, name: &str, dims: &[usize], data: &[f64]) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint(w: &mut impl Write, params: &ModelParams) -> Result<()> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let tag = params.variant().tag();
    w.write_all(&[tag.len() as u8])?;
    w.write_all(tag.as_bytes())?;
    w.write_all(&(params.n_neighbors() as u64).to_le_bytes())?;
    w.write_all(&(BINS as u64).to_le_bytes())?;
    let extra = if params.anthro_norm().is_some() { 2 } else { 0 };
    w.write_all(&((params.tensors().len() + extra) as u64).to_le_bytes())?;
    for t in params.tensors() {
        write_tensor(w, &t.name, &t.dims, &t.data)?;
    }
    if let Some(norm) = params.anthro_norm() {
        write_tensor(w, NORM_MEAN, &[ANTHRO_FEATURES], norm.mean())?;
        write_tensor(w, NORM_STD, &[ANTHRO_FEATURES], norm.std())?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const L: usize>(&mut self, what: &str) -> Result<[u8; L]> {
        let mut buf = [0u8; L];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => bad(format!("truncated while reading {what}")),
                _ => Error::Io(e),
            })?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(what)?))
    }

    fn string(&mut self, len: usize, what: &str) -> Result<String> {
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| bad(format!("truncated while reading {what}")))?;
        String::from_utf8(buf).map_err(|_| bad(format!("{what} is not UTF-8")))
    }

    fn tensor(&mut self) -> Result<ParamTensor> {
        let name_len = self.u32("tensor name length")?;
        if name_len > MAX_NAME_LEN {
            return Err(bad(format!("tensor name length {name_len} is implausible")));
        }
        let name = self.string(name_len as usize, "tensor name")?;
        let rank = self.u32("tensor rank")?;
        if rank > MAX_RANK {
            return Err(bad(format!("tensor {name} has implausible rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        let mut len: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(self.u64("tensor dims")?)
                .map_err(|_| bad(format!("tensor {name} is too large")))?;
            len = len
                .checked_mul(d)
                .filter(|&l| l <= 1 << 32)
                .ok_or_else(|| bad(format!("tensor {name} is too large")))?;
            dims.push(d);
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let v = f64::from_le_bytes(self.bytes("tensor data")?);
            if !v.is_finite() {
                return Err(Error::NonFinite { name });
            }
            data.push(v);
        }
        Ok(ParamTensor { name, dims, data })
    }
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<ModelParams> {
    let mut r = Reader { inner: r };
    if r.bytes::<8>("magic")? != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic bytes)"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let [tag_len] = r.bytes::<1>("variant tag")?;
    let tag = r.string(tag_len as usize, "variant tag")?;
    let variant: Variant = tag
        .parse()
        .map_err(|_| bad(format!("unknown variant tag {tag:?}")))?;
    let n = r.u64("N")?;
    if n == 0 || n > 1024 {
        return Err(bad(format!("implausible neighbor count {n}")));
    }
    let k = r.u64("K")?;
    if k != BINS as u64 {
        return Err(bad(format!("checkpoint has K = {k}, expected {BINS}")));
    }
    let count = r.u64("tensor count")?;
    let mut params = ModelParams::init(variant, n as usize, 0)?;
    if count > params.tensors().len() as u64 + 2 {
        return Err(bad(format!("too many tensors ({count})")));
    }
    let mut tensors = (0..count).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;

    let mut norm = None;
    if tensors.last().is_some_and(|t| t.name == NORM_STD) {
        let std = tensors.pop().unwrap();
        let mean = tensors
            .pop()
            .filter(|t| t.name == NORM_MEAN)
            .ok_or_else(|| bad("anthropometry std without mean"))?;
        let arr = |t: &ParamTensor| -> Result<[f64; ANTHRO_FEATURES]> {
            <[f64; ANTHRO_FEATURES]>::try_from(t.data.as_slice())
                .map_err(|_| bad(format!("{} must have {ANTHRO_FEATURES} values", t.name)))
        };
        norm = Some(NormStats::new(arr(&mean)?, arr(&std)?)?);
    }
    params.load_tensors(tensors).map_err(|e| bad(e.to_string()))?;
    params.set_anthro_norm(norm);
    Ok(params)
}

impl ModelParams {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, self)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut slice = bytes.as_slice();
        let p = read_checkpoint(&mut slice)?;
        if !slice.is_empty() {
            return Err(bad(format!("{} trailing bytes", slice.len())));
        }
        Ok(p)
    }
}
