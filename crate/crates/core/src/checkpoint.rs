//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//! magic `EPWCKPT\n`, `u32` format version, `u32` header length and UTF-8
//! header (config key-value text), `u32` location count and length-prefixed
//! location ids, then `u32` block count and named `f64` blocks
//! (`u32` name length, name, `u32` rank, `u64` dims, values).

use std::collections::BTreeMap;
use std::io::{Read, Write};

use epiwatch_tensor::Tensor;

use crate::config::ForecastConfig;
use crate::error::{Error, Result};
use crate::model::Forecaster;

pub const MAGIC: &[u8; 8] = b"EPWCKPT\n";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_block(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_str(out, name);
    put_u32(out, shape.len() as u32);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Named state outside the parameter store: normalization statistics and scales.
fn state_blocks(model: &Forecaster) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    let norms = model
        .layer_norms
        .iter()
        .enumerate()
        .map(|(l, n)| (format!("dgnn{l}.norm"), n.as_ref()))
        .chain(std::iter::once(("head.norm".to_string(), model.head.norm.as_ref())));
    for (name, bn) in norms {
        if let Some(bn) = bn {
            out.push((format!("state.{name}.running_mean"), bn.running_mean.clone()));
            out.push((format!("state.{name}.running_var"), bn.running_var.clone()));
        }
    }
    out.push(("state.location_scales".into(), model.scales.clone()));
    out
}

pub fn encode_checkpoint(model: &Forecaster) -> Result<Vec<u8>> {
    if !model.store.all_finite() {
        return Err(Error::Data("refusing to save non-finite parameters".into()));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_str(&mut out, &model.config.to_kv_string());
    put_u32(&mut out, model.locations.len() as u32);
    for l in &model.locations {
        put_str(&mut out, l);
    }
    let state = state_blocks(model);
    put_u32(&mut out, (model.store.len() + state.len()) as u32);
    for p in model.store.iter() {
        put_block(&mut out, &p.name, p.value.shape(), p.value.data());
    }
    for (name, v) in &state {
        put_block(&mut out, name, &[v.len()], v);
    }
    Ok(out)
}

pub fn save_checkpoint<W: Write>(mut w: W, model: &Forecaster) -> Result<()> {
    w.write_all(&encode_checkpoint(model)?)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Integrity(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Integrity("invalid UTF-8 string".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Forecaster> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(Error::Compatibility("not a checkpoint file".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Compatibility(format!(
            "format version {version}, this build reads version {FORMAT_VERSION}"
        )));
    }
    let config = ForecastConfig::from_kv_str(&c.string()?).map_err(|e| Error::Integrity(format!("bad header: {e}")))?;
    let n_loc = c.u32()? as usize;
    let locations = (0..n_loc).map(|_| c.string()).collect::<Result<Vec<_>>>()?;
    let mut model = Forecaster::new(&config, &locations, 0).map_err(|e| Error::Integrity(e.to_string()))?;

    let n_blocks = c.u32()? as usize;
    let mut blocks: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for _ in 0..n_blocks {
        let name = c.string()?;
        let rank = c.u32()? as usize;
        if rank > 8 {
            return Err(Error::Integrity(format!("block `{name}` has implausible rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= (bytes.len() - c.pos) / 8)
            .ok_or_else(|| Error::Integrity(format!("block `{name}` shape {shape:?} exceeds the file")))?;
        let data = c
            .take(len * 8)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        if blocks.insert(name.clone(), (shape, data)).is_some() {
            return Err(Error::Integrity(format!("duplicate block `{name}`")));
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::Integrity("trailing bytes after the last block".into()));
    }

    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let name = model.store.get(id).name.clone();
        let (shape, data) = blocks
            .remove(&name)
            .ok_or_else(|| Error::Integrity(format!("missing parameter `{name}`")))?;
        let expected = model.store.value(id).shape().to_vec();
        if shape != expected {
            return Err(Error::Integrity(format!(
                "parameter `{name}` has shape {shape:?}, configuration implies {expected:?}"
            )));
        }
        model.store.get_mut(id).value = Tensor::new(shape, data)?;
    }
    let expected_state = state_blocks(&model);
    let mut state = BTreeMap::new();
    for (name, v) in expected_state {
        let (shape, data) = blocks
            .remove(&name)
            .ok_or_else(|| Error::Integrity(format!("missing state block `{name}`")))?;
        if shape != [v.len()] {
            return Err(Error::Integrity(format!(
                "state block `{name}` has shape {shape:?}, expected [{}]",
                v.len()
            )));
        }
        state.insert(name, data);
    }
    if let Some(extra) = blocks.keys().next() {
        return Err(Error::Integrity(format!("unexpected block `{extra}`")));
    }
    let mut take = |name: String| state.remove(&name).expect("checked above");
    for (l, bn) in model.layer_norms.iter_mut().enumerate() {
        if let Some(bn) = bn {
            bn.running_mean = take(format!("state.dgnn{l}.norm.running_mean"));
            bn.running_var = take(format!("state.dgnn{l}.norm.running_var"));
        }
    }
    if let Some(bn) = model.head.norm.as_mut() {
        bn.running_mean = take("state.head.norm.running_mean".into());
        bn.running_var = take("state.head.norm.running_var".into());
    }
    model.scales = take("state.location_scales".into());
    if !model.store.all_finite() {
        return Err(Error::Integrity("checkpoint holds non-finite parameters".into()));
    }
    Ok(model)
}

pub fn load_checkpoint<R: Read>(mut r: R) -> Result<Forecaster> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
