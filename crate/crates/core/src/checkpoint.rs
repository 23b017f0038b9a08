//! Binary checkpoint format.
//!
//! ```text
//! "KSRL"                       magic
//! u32 version                  = 1
//! u32 n, u32 dims[n]           layer_dims (input, hidden.., trunk)
//! u32 num_actions
//! f64 params[..]               per layer in order hidden.., policy, value:
//!                              weights (input-major) then biases
//! f64 learning_rate
//! f64 entropy_cost
//! f64 distill_global
//! u32 k, f64 distill_per_teacher[k]
//! ```
//!
//! All integers and floats are little-endian. Decoding rejects trailing
//! bytes, so `encode(decode(b)) == b` for every accepted `b`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nets::{Dense, NetSpec, PolicyValueNet};
use crate::schedule::HyperParams;

pub const MAGIC: &[u8; 4] = b"KSRL";
pub const FORMAT_VERSION: u32 = 1;

pub(crate) struct Writer(pub Vec<u8>);

impl Writer {
    pub fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn finish(&self) -> std::result::Result<(), String> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(format!("{} trailing bytes", self.buf.len() - self.pos))
        }
    }
}

pub fn encode(net: &PolicyValueNet, hypers: &HyperParams) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(16 + 8 * net.param_count()));
    w.bytes(MAGIC);
    w.u32(FORMAT_VERSION);
    let spec = net.spec();
    w.u32(spec.layer_dims.len() as u32);
    for &d in &spec.layer_dims {
        w.u32(d as u32);
    }
    w.u32(spec.num_actions as u32);
    for layer in net.layers() {
        for &v in layer.iter() {
            w.f64(v);
        }
    }
    w.f64(hypers.learning_rate);
    w.f64(hypers.entropy_cost);
    w.f64(hypers.distill_global);
    w.u32(hypers.distill_per_teacher.len() as u32);
    for &r in &hypers.distill_per_teacher {
        w.f64(r);
    }
    w.0
}

pub(crate) fn decode_from(r: &mut Reader<'_>) -> std::result::Result<(PolicyValueNet, HyperParams), String> {
    if r.take(4)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let n = r.u32()? as usize;
    if n == 0 || n > 64 {
        return Err(format!("implausible layer count {n}"));
    }
    let layer_dims = (0..n)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let num_actions = r.u32()? as usize;
    let spec = NetSpec {
        layer_dims,
        num_actions,
    };
    let template = PolicyValueNet::zeros(&spec).map_err(|e| e.to_string())?;
    let mut layers = Vec::with_capacity(template.num_layers());
    for t in template.layers() {
        let mut d = Dense::zeros(t.fan_in, t.fan_out);
        for v in d.iter_mut() {
            *v = r.f64()?;
        }
        layers.push(d);
    }
    let net = PolicyValueNet::from_layers(spec, layers).map_err(|e| e.to_string())?;
    let learning_rate = r.f64()?;
    let entropy_cost = r.f64()?;
    let distill_global = r.f64()?;
    let k = r.u32()? as usize;
    let distill_per_teacher = (0..k)
        .map(|_| r.f64())
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((
        net,
        HyperParams {
            learning_rate,
            entropy_cost,
            distill_global,
            distill_per_teacher,
        },
    ))
}

pub fn decode(bytes: &[u8]) -> std::result::Result<(PolicyValueNet, HyperParams), String> {
    let mut r = Reader::new(bytes);
    let out = decode_from(&mut r)?;
    r.finish()?;
    Ok(out)
}

pub fn save(path: &Path, net: &PolicyValueNet, hypers: &HyperParams) -> Result<()> {
    std::fs::write(path, encode(net, hypers)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(PolicyValueNet, HyperParams)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|m| Error::format(path, m))
}
