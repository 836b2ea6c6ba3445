//! Binary checkpoint format.
//!
//! ```text
//! "CVAE1"  u16 version
//! u32 resize_h  u32 resize_w  u32 channels  u32 latent_dim
//! f64 learning_rate  u32 batch_size  u32 epochs  u64 seed
//! u32 tensor count, then per tensor: u16 name length, name, u8 rank, u32 dims
//! f32 data of every tensor in table order
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{CvaeConfig, CvaeError, CvaeModel, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"CVAE1";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn write_checkpoint<W: Write>(model: &CvaeModel<f32>, mut out: W) -> Result<()> {
    let c = model.config();
    let mut buf = Vec::with_capacity(64 + 4 * model.parameter_count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [c.resize_h, c.resize_w, c.first_hidden_channels, c.latent_dim] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&c.learning_rate.to_le_bytes());
    buf.extend_from_slice(&(c.batch_size as u32).to_le_bytes());
    buf.extend_from_slice(&(c.epochs as u32).to_le_bytes());
    buf.extend_from_slice(&c.seed.to_le_bytes());
    buf.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (name, p) in model.names().iter().zip(model.params()) {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(p.shape().len() as u8);
        for &d in p.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for p in model.params() {
        for v in p.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CvaeError::Corrupt(format!("file ends inside {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<CvaeModel<f32>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(CvaeError::BadMagic);
    }
    let mut cur = Cursor { bytes: &bytes, pos: CHECKPOINT_MAGIC.len() };
    let version = cur.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CvaeError::Version { expected: CHECKPOINT_VERSION, found: version });
    }
    let config = CvaeConfig {
        resize_h: cur.u32("config")?,
        resize_w: cur.u32("config")?,
        first_hidden_channels: cur.u32("config")?,
        latent_dim: cur.u32("config")?,
        learning_rate: cur.f64("config")?,
        batch_size: cur.u32("config")?,
        epochs: cur.u32("config")?,
        seed: cur.u64("config")?,
    };
    config.validate()?;
    let expected = config.parameter_shapes();
    let count = cur.u32("shape table")?;
    if count != expected.len() {
        return Err(CvaeError::ShapeTable(format!("{count} tensors listed, config needs {}", expected.len())));
    }
    let mut shapes = Vec::with_capacity(count);
    for (want_name, want_shape) in &expected {
        let len = cur.u16("shape table")? as usize;
        let name = String::from_utf8_lossy(cur.take(len, "shape table")?).into_owned();
        let rank = cur.u8("shape table")? as usize;
        let shape = (0..rank).map(|_| cur.u32("shape table")).collect::<Result<Vec<_>>>()?;
        if &name != want_name || &shape != want_shape {
            return Err(CvaeError::ShapeTable(format!(
                "found {name} {shape:?}, config needs {want_name} {want_shape:?}"
            )));
        }
        shapes.push(shape);
    }
    let mut params = Vec::with_capacity(count);
    for shape in shapes {
        let n: usize = shape.iter().product();
        let raw = cur.take(4 * n, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        params.push(Tensor::new(shape, data)?);
    }
    if cur.pos != bytes.len() {
        return Err(CvaeError::Corrupt(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    CvaeModel::from_parts(config, params)
}

pub fn checkpoint_save(model: &CvaeModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    write_checkpoint(model, std::io::BufWriter::new(file))
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<CvaeModel<f32>> {
    read_checkpoint(std::io::BufReader::new(fs::File::open(path)?))
}
