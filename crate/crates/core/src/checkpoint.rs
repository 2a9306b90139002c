//! Parameter checkpoints: configuration plus every named tensor as `f32`.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "HYBQCKPT" | version u32 | config_len u32 | config TOML
//! tensor_count u32
//! per tensor: name_len u16 | name | rank u8 | dims u64 * rank | values f32 * prod(dims)
//! ```
//!
//! Tensors are the trainable tensors in `Trainable::tensors` order followed by
//! `bn_running.mean` and `bn_running.var`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{write_f32s, Reader};
use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::params::{init_parameters, ParameterSet};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HYBQCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const KIND: &str = "checkpoint";

fn write_tensor<W: Write>(w: &mut W, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    w.write_all(&(name.len() as u16).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[shape.len() as u8])?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    write_f32s(w, data)
}

/// Serialises `params`; values are stored with `f32` precision.
pub fn write_checkpoint<W: Write>(params: &ParameterSet, mut w: W) -> Result<()> {
    let toml = params.config.to_toml_string();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(toml.len() as u32).to_le_bytes())?;
    w.write_all(toml.as_bytes())?;
    let tensors = params.trainable.tensors();
    w.write_all(&((tensors.len() + 2) as u32).to_le_bytes())?;
    for t in &tensors {
        write_tensor(&mut w, &t.name, &t.shape, t.data)?;
    }
    let r = &params.running;
    write_tensor(&mut w, "bn_running.mean", &[r.mean.len()], &r.mean)?;
    write_tensor(&mut w, "bn_running.var", &[r.var.len()], &r.var)?;
    w.flush()?;
    Ok(())
}

fn read_tensor_into<R: Read>(
    r: &mut Reader<R>,
    name: &str,
    shape: &[usize],
    out: &mut [f64],
) -> Result<()> {
    let len = r.u16()? as usize;
    let mut buf = vec![0u8; len];
    r.bytes(&mut buf)?;
    if buf != name.as_bytes() {
        return Err(r.fail(format!(
            "expected tensor {name}, found {}",
            String::from_utf8_lossy(&buf)
        )));
    }
    let rank = r.u8()? as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.u64()? as usize);
    }
    if dims != shape {
        return Err(r.fail(format!(
            "tensor {name} has shape {dims:?}, config implies {shape:?}"
        )));
    }
    let values = r.f32s(out.len())?;
    out.copy_from_slice(&values);
    Ok(())
}

/// Reads a checkpoint, checking every tensor's name and shape against the
/// embedded configuration.
pub fn read_checkpoint<R: Read>(r: R) -> Result<ParameterSet> {
    let mut r = Reader::new(r, KIND);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let mut toml = vec![0u8; len];
    r.bytes(&mut toml)?;
    let toml = String::from_utf8(toml).map_err(|_| r.fail("config is not UTF-8"))?;
    let config = EngineConfig::from_toml_str(&toml)?;
    let mut params = init_parameters(&config)?;
    let count = r.u32()? as usize;
    let expected = params.trainable.tensors().len() + 2;
    if count != expected {
        return Err(r.fail(format!("expected {expected} tensors, found {count}")));
    }
    for t in params.trainable.tensors_mut() {
        read_tensor_into(&mut r, &t.name, &t.shape, t.data)?;
    }
    let n = params.running.mean.len();
    read_tensor_into(&mut r, "bn_running.mean", &[n], &mut params.running.mean)?;
    read_tensor_into(&mut r, "bn_running.var", &[n], &mut params.running.var)?;
    r.expect_end()?;
    if !params.trainable.is_finite() {
        return Err(Error::NonFinite("checkpoint parameters"));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParameterSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::Io(e).with_path(path))?;
    write_checkpoint(params, BufWriter::new(f)).map_err(|e| e.with_path(path))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParameterSet> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::Io(e).with_path(path))?;
    read_checkpoint(BufReader::new(f)).map_err(|e| e.with_path(path))
}

/// Rounds every stored value to `f32` precision in place, so that in-memory
/// parameters equal what a checkpoint round trip would produce.
pub fn round_to_storage(params: &mut ParameterSet) {
    fn round(v: &mut [f64]) {
        v.iter_mut().for_each(|x| *x = *x as f32 as f64);
    }
    for t in params.trainable.tensors_mut() {
        round(t.data);
    }
    round(&mut params.running.mean);
    round(&mut params.running.var);
}
