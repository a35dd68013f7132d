//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic            4 bytes, "SFIT"
//! version          u32 (currently 1)
//! arch id          u32 length + UTF-8 string (see ArchSpec::id_string)
//! classes          u32
//! input shape      3 x u32 (channels, height, width)
//! element tag      u8 (1 = f32, 2 = f64)
//! iteration        u64
//! tensor count     u32
//! tensor record*   u32 name length + name, u8 element tag, u32 rank,
//!                  u32 per dim, raw element data
//! adam flag        u8 (0 absent, 1 present)
//! adam state       u64 step count, u64 length + raw m, u64 length + raw v
//! ```
//!
//! Tensor records appear in the model's canonical state order, so
//! save -> load -> save reproduces the file byte for byte.

use std::path::Path;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::models::{ArchSpec, Model};
use crate::optim::AdamState;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"SFIT";
pub const FORMAT_VERSION: u32 = 1;

pub struct Checkpoint<T: Element> {
    pub model: Model<T>,
    pub adam: Option<AdamState<T>>,
}

// ---------------------------------------------------------------------------
// encoding
// ---------------------------------------------------------------------------

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_elems<T: Element>(out: &mut Vec<u8>, data: &[T]) {
    out.reserve(data.len() * T::BYTE_WIDTH);
    for &v in data {
        v.append_le(out);
    }
}

pub fn encode<T: Element>(model: &Model<T>, adam: Option<&AdamState<T>>) -> Result<Vec<u8>> {
    if let Some(state) = adam {
        if state.m.len() != model.param_count() || state.v.len() != model.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer state holds {} elements, model has {}",
                state.m.len(),
                model.param_count()
            )));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_str(&mut out, &model.arch().id_string());
    put_u32(&mut out, model.classes() as u32);
    for d in model.input_shape() {
        put_u32(&mut out, d as u32);
    }
    out.push(T::DTYPE_TAG);
    put_u64(&mut out, model.iteration);

    let entries = model.state_entries();
    put_u32(&mut out, entries.len() as u32);
    for (name, tensor) in entries {
        put_str(&mut out, &name);
        out.push(T::DTYPE_TAG);
        put_u32(&mut out, tensor.rank() as u32);
        for &d in tensor.shape() {
            put_u32(&mut out, d as u32);
        }
        put_elems(&mut out, tensor.data());
    }

    match adam {
        None => out.push(0),
        Some(state) => {
            out.push(1);
            put_u64(&mut out, state.t);
            put_u64(&mut out, state.m.len() as u64);
            put_elems(&mut out, &state.m);
            put_u64(&mut out, state.v.len() as u64);
            put_elems(&mut out, &state.v);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// decoding
// ---------------------------------------------------------------------------

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated(format!(
                "file ends inside {what} (need {n} bytes at offset {})",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::Format(format!("{what} is not valid UTF-8")))
    }

    fn elems<T: Element>(&mut self, count: usize, what: &str) -> Result<Vec<T>> {
        let raw = self.take(count * T::BYTE_WIDTH, what)?;
        Ok(raw.chunks_exact(T::BYTE_WIDTH).map(T::read_le).collect())
    }
}

pub fn decode<T: Element>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, pos: 0 };

    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let arch = ArchSpec::parse(&r.string("architecture id")?)?;
    let classes = r.u32("class count")? as usize;
    let mut shape = [0usize; 3];
    for d in &mut shape {
        *d = r.u32("input shape")? as usize;
    }
    if classes != arch.classes() || shape != arch.input_shape() {
        return Err(Error::Format(format!(
            "header says {classes} classes and input {shape:?}, architecture {:?} disagrees",
            arch.id_string()
        )));
    }
    let tag = r.u8("element tag")?;
    if tag != T::DTYPE_TAG {
        return Err(Error::Format(format!(
            "checkpoint stores element tag {tag}, reader expects {} ({})",
            T::DTYPE_TAG,
            T::NAME
        )));
    }
    let iteration = r.u64("iteration counter")?;

    let mut model: Model<T> = arch.build(0)?;
    model.iteration = iteration;
    let expected: Vec<String> = model.state_entries().iter().map(|(n, _)| n.clone()).collect();

    let n_tensors = r.u32("tensor count")? as usize;
    if n_tensors != expected.len() {
        return Err(Error::ShapeMismatch(format!(
            "{n_tensors} tensor records, architecture has {}",
            expected.len()
        )));
    }
    for want in &expected {
        let name = r.string("tensor name")?;
        if &name != want {
            return Err(Error::Format(format!(
                "tensor record {name:?} out of order, expected {want:?}"
            )));
        }
        let rec_tag = r.u8("tensor element tag")?;
        if rec_tag != T::DTYPE_TAG {
            return Err(Error::Format(format!(
                "tensor {name:?} stores element tag {rec_tag}, expected {}",
                T::DTYPE_TAG
            )));
        }
        let rank = r.u32("tensor rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("tensor dims")? as usize);
        }
        let numel: usize = dims.iter().product();
        let data = r.elems::<T>(numel, "tensor data")?;
        model.load_state_entry(&name, Tensor::new(dims, data)?)?;
    }

    let adam = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let t = r.u64("optimizer step count")?;
            let m_len = r.u64("optimizer m length")? as usize;
            let m = r.elems::<T>(m_len, "optimizer m data")?;
            let v_len = r.u64("optimizer v length")? as usize;
            let v = r.elems::<T>(v_len, "optimizer v data")?;
            if m_len != model.param_count() || v_len != model.param_count() {
                return Err(Error::ShapeMismatch(format!(
                    "optimizer state holds {m_len}/{v_len} elements, model has {}",
                    model.param_count()
                )));
            }
            Some(AdamState { t, m, v })
        }
        other => {
            return Err(Error::Format(format!(
                "optimizer flag must be 0 or 1, got {other}"
            )));
        }
    };

    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint body",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint { model, adam })
}

/// Reads just enough of the header to learn which element type the file
/// stores, so callers can pick the right `load::<T>` monomorphization.
pub fn peek_dtype(bytes: &[u8]) -> Result<u8> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    r.string("architecture id")?;
    r.u32("class count")?;
    for _ in 0..3 {
        r.u32("input shape")?;
    }
    r.u8("element tag")
}

pub fn save<T: Element>(
    path: impl AsRef<Path>,
    model: &Model<T>,
    adam: Option<&AdamState<T>>,
) -> Result<()> {
    std::fs::write(path, encode(model, adam)?)?;
    Ok(())
}

pub fn load<T: Element>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    decode(&std::fs::read(path)?)
}

// ---------------------------------------------------------------------------
