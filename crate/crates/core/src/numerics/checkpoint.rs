//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"STPRXCKP"
//! version u32
//! step    u64                 optimizer step counter
//! meta    u64 length + UTF-8  free-form JSON metadata
//! count   u32
//! count × {
//!     name     u32 length + UTF-8
//!     tag      u8   0 shared, 1 head, 2 tail, 3 relation
//!     frozen   u8
//!     ndim     u32, dims u64 × ndim
//!     values   f64 × numel
//!     adam m   f64 × numel
//!     adam v   f64 × numel
//! }
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Parameter, ParameterStore, Partition, Tensor};
use crate::error::{Error, Result};
use crate::Real;

const MAGIC: &[u8; 8] = b"STPRXCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Real, W: Write>(out: &mut W, store: &ParameterStore<T>, meta: &str) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&store.step().to_le_bytes())?;
    out.write_all(&(meta.len() as u64).to_le_bytes())?;
    out.write_all(meta.as_bytes())?;
    out.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, p) in store.iter() {
        out.write_all(&(p.name.len() as u32).to_le_bytes())?;
        out.write_all(p.name.as_bytes())?;
        out.write_all(&[p.partition.code(), p.frozen as u8])?;
        out.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for t in [&p.value, &p.m, &p.v] {
            for x in t.data() {
                out.write_all(&x.as_f64().to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn save_checkpoint<T: Real>(path: &Path, store: &ParameterStore<T>, meta: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, store, meta)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated container: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn string(&mut self, len: usize) -> Result<String> {
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated container: {e}")))?;
        String::from_utf8(buf).map_err(|_| Error::Checkpoint("non UTF-8 string".into()))
    }

    fn floats<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        (0..n)
            .map(|_| Ok(T::lit(f64::from_le_bytes(self.bytes()?))))
            .collect()
    }
}

/// Returns the store and its metadata string.
pub fn read_checkpoint<T: Real, R: Read>(input: R) -> Result<(ParameterStore<T>, String)> {
    let mut r = Reader { inner: input };
    if &r.bytes::<8>()? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let step = r.u64()?;
    let meta_len = r.u64()? as usize;
    let meta = r.string(meta_len)?;
    let count = r.u32()?;
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = r.string(name_len)?;
        let [tag, frozen] = r.bytes::<2>()?;
        let partition = Partition::from_code(tag)
            .ok_or_else(|| Error::Checkpoint(format!("bad partition tag {tag} for `{name}`")))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().product();
        let value = Tensor::new(shape.clone(), r.floats(numel)?)?;
        let m = Tensor::new(shape.clone(), r.floats(numel)?)?;
        let v = Tensor::new(shape, r.floats(numel)?)?;
        store.push_raw(Parameter {
            name,
            partition,
            value,
            m,
            v,
            frozen: frozen != 0,
        })?;
    }
    store.set_step(step);
    Ok((store, meta))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(ParameterStore<T>, String)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}
