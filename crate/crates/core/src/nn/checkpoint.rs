//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `PSNA`, `u32` version, `u32` length plus
//! UTF-8 model config text, `u32` tensor count, then per tensor a `u32`
//! length plus name, four `u32` dims and the values as `f32`.

use std::io::{Read, Write};

use super::sna::{ModelConfig, Sna};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PSNA";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("length {n} does not fit the checkpoint format")))
}

pub fn write_checkpoint(model: &Sna, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, CHECKPOINT_VERSION)?;
    let text = model.config().to_text();
    put_u32(w, len_u32(text.len())?)?;
    w.write_all(text.as_bytes())?;
    let store = model.params();
    put_u32(w, len_u32(store.len())?)?;
    for (name, t) in store.iter() {
        put_u32(w, len_u32(name.len())?)?;
        w.write_all(name.as_bytes())?;
        for d in t.shape() {
            put_u32(w, len_u32(d)?)?;
        }
        for &v in t.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Sna> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model checkpoint".into()));
    }
    let version = get_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let text = read_string(r)?;
    let mut model = Sna::new(ModelConfig::from_text(&text)?)?;
    let count = get_u32(r)? as usize;
    if count != model.params().len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, model expects {}",
            model.params().len()
        )));
    }
    for _ in 0..count {
        let name = read_string(r)?;
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = get_u32(r)? as usize;
        }
        let id = model
            .params()
            .id_of(&name)
            .ok_or_else(|| Error::Format(format!("unexpected tensor '{name}'")))?;
        if model.params().get(id).shape() != shape {
            return Err(Error::Format(format!("tensor '{name}' has shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        let mut buf = vec![0u8; 4 * n];
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        *model.params_mut().get_mut(id) = Tensor::from_vec(shape, data)?;
    }
    Ok(model)
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let n = get_u32(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("invalid UTF-8 in checkpoint".into()))
}

pub fn save_checkpoint(model: &Sna, path: &std::path::Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(model, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<Sna> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut f)
}
