//! `RBON` checkpoint files.
//!
//! Layout: magic `RBON`, `u32` version, `u32` record count, then records of
//! `u32 kind, u32 payload length, payload, u32 crc32(kind, length, payload)`.
//! Integers and floats are little-endian; floats are 32-bit IEEE-754, so
//! `f32` networks round-trip bit-exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::binarize::ScaleDiag;
use crate::error::{Error, Result};
use crate::model::{BatchNorm, BinaryConv, Conv, Layer, Linear, MaxPool, Network, PRelu};
use crate::rbonn::BacktrackState;
use crate::scalar::Scalar;
use crate::tensor::{ConvGeometry, Tensor};
use crate::train::{param_groups, Moments, OptimizerState};

pub const MAGIC: [u8; 4] = *b"RBON";
pub const VERSION: u32 = 1;

const KIND_NETWORK: u32 = 0;
const KIND_REAL_CONV: u32 = 1;
const KIND_BINARY_CONV: u32 = 2;
const KIND_BATCH_NORM: u32 = 3;
const KIND_PRELU: u32 = 4;
const KIND_MAX_POOL: u32 = 5;
const KIND_FLATTEN: u32 = 6;
const KIND_LINEAR: u32 = 7;
const KIND_OPTIMIZER: u32 = 16;
const KIND_META: u32 = 17;

/// Contents of a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub net: Network<T>,
    pub optimizer: Option<OptimizerState<T>>,
    /// Free-form UTF-8 text (run configuration and progress).
    pub meta: Option<String>,
}

#[derive(Default)]
struct Payload(Vec<u8>);

impl Payload {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn f32<T: Scalar>(&mut self, v: T) {
        let x = v.to_f64_lossy() as f32;
        self.0.extend_from_slice(&x.to_le_bytes());
    }

    fn floats<T: Scalar>(&mut self, v: &[T]) {
        self.u32(v.len());
        for &x in v {
            self.f32(x);
        }
    }

    fn dims(&mut self, d: &[usize]) {
        self.u32(d.len());
        for &x in d {
            self.u32(x);
        }
    }

    fn geometry(&mut self, g: &ConvGeometry) {
        for v in [g.c_in, g.height, g.width, g.c_out, g.kernel, g.stride, g.padding] {
            self.u32(v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    record: usize,
}

impl<'a> Reader<'a> {
    fn bad(&self, detail: impl Into<String>) -> Error {
        Error::CheckpointRecord {
            index: self.record,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.bad(format!(
                "payload needs {n} more bytes at offset {}, has {}",
                self.pos,
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f32<T: Scalar>(&mut self) -> Result<T> {
        let x = f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes"));
        Ok(T::lit(f64::from(x)))
    }

    fn floats<T: Scalar>(&mut self, expect: usize, what: &str) -> Result<Vec<T>> {
        let n = self.u32()?;
        if n != expect {
            return Err(self.bad(format!("{what}: {n} values, shape requires {expect}")));
        }
        (0..n).map(|_| self.f32()).collect()
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()?;
        if n > 8 {
            return Err(self.bad(format!("{n} dimensions")));
        }
        (0..n).map(|_| self.u32()).collect()
    }

    fn geometry(&mut self) -> Result<ConvGeometry> {
        let mut v = [0usize; 7];
        for x in &mut v {
            *x = self.u32()?;
        }
        let [c_in, h, w, c_out, k, stride, pad] = v;
        ConvGeometry::new([c_in, h, w], c_out, k, stride, pad).map_err(|e| self.bad(e.to_string()))
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u32()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(self.bad(format!("flag value {v}"))),
        }
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.bad(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn layer_record<T: Scalar>(layer: &Layer<T>) -> (u32, Payload) {
    let mut p = Payload::default();
    let kind = match layer {
        Layer::RealConv(c) => {
            p.geometry(&c.geom);
            p.floats(c.weight.data());
            p.floats(&c.bias);
            KIND_REAL_CONV
        }
        Layer::BinaryConv(b) => {
            p.geometry(&b.geom);
            p.floats(b.weight.data());
            p.floats(b.scale.inv_alpha());
            p.floats(&b.state.u);
            match &b.state.w_prev {
                Some(w) => {
                    p.u32(1);
                    p.floats(w.data());
                }
                None => p.u32(0),
            }
            match &b.state.a_prev {
                Some(a) => {
                    p.u32(1);
                    p.floats(a.inv_alpha());
                }
                None => p.u32(0),
            }
            KIND_BINARY_CONV
        }
        Layer::BatchNorm(b) => {
            p.dims(&b.shape);
            p.f32(b.momentum);
            p.f32(b.eps);
            for v in [&b.gamma, &b.beta, &b.running_mean, &b.running_var] {
                p.floats(v);
            }
            KIND_BATCH_NORM
        }
        Layer::PRelu(r) => {
            p.dims(&r.shape);
            p.floats(&r.slope);
            KIND_PRELU
        }
        Layer::MaxPool(m) => {
            p.u32(m.size);
            p.dims(&m.in_shape);
            KIND_MAX_POOL
        }
        Layer::Flatten { in_shape } => {
            p.dims(in_shape);
            KIND_FLATTEN
        }
        Layer::Linear(l) => {
            p.u32(l.weight.shape()[0]);
            p.u32(l.weight.shape()[1]);
            p.floats(l.weight.data());
            p.floats(&l.bias);
            KIND_LINEAR
        }
    };
    (kind, p)
}

fn read_layer<T: Scalar>(kind: u32, r: &mut Reader<'_>) -> Result<Layer<T>> {
    let scale = |r: &Reader<'_>, v: Vec<T>| ScaleDiag::new(v).map_err(|e| r.bad(e.to_string()));
    let tensor = |r: &Reader<'_>, shape: Vec<usize>, v: Vec<T>| Tensor::new(shape, v).map_err(|e| r.bad(e.to_string()));
    let layer = match kind {
        KIND_REAL_CONV => {
            let geom = r.geometry()?;
            let weight = r.floats(geom.c_out * geom.patch_len(), "weight")?;
            let bias = r.floats(geom.c_out, "bias")?;
            Layer::RealConv(Conv {
                weight: tensor(r, geom.weight_shape().to_vec(), weight)?,
                bias,
                geom,
            })
        }
        KIND_BINARY_CONV => {
            let geom = r.geometry()?;
            let n = geom.c_out * geom.patch_len();
            let weight = r.floats(n, "weight")?;
            let weight = tensor(r, geom.weight_shape().to_vec(), weight)?;
            let inv = r.floats(geom.c_out, "inv_alpha")?;
            let u = r.floats(geom.c_out, "recurrent gains")?;
            if u.iter().any(|&v| !(v >= T::zero())) {
                return Err(r.bad("negative recurrent gain"));
            }
            let w_prev = if r.flag()? {
                let w = r.floats(n, "previous weight")?;
                Some(tensor(r, geom.weight_shape().to_vec(), w)?)
            } else {
                None
            };
            let a_prev = if r.flag()? {
                let v = r.floats(geom.c_out, "previous inv_alpha")?;
                Some(scale(r, v)?)
            } else {
                None
            };
            Layer::BinaryConv(BinaryConv {
                weight,
                scale: scale(r, inv)?,
                state: BacktrackState { u, w_prev, a_prev },
                geom,
            })
        }
        KIND_BATCH_NORM => {
            let shape = r.dims()?;
            if shape.is_empty() || shape.contains(&0) {
                return Err(r.bad(format!("batch-norm shape {shape:?}")));
            }
            let c = shape[0];
            let momentum = r.f32()?;
            let eps = r.f32()?;
            Layer::BatchNorm(BatchNorm {
                gamma: r.floats(c, "gamma")?,
                beta: r.floats(c, "beta")?,
                running_mean: r.floats(c, "running mean")?,
                running_var: r.floats(c, "running variance")?,
                momentum,
                eps,
                shape,
            })
        }
        KIND_PRELU => {
            let shape = r.dims()?;
            if shape.is_empty() || shape.contains(&0) {
                return Err(r.bad(format!("prelu shape {shape:?}")));
            }
            let slope = r.floats(shape[0], "slope")?;
            Layer::PRelu(PRelu { slope, shape })
        }
        KIND_MAX_POOL => {
            let size = r.u32()?;
            let d = r.dims()?;
            let in_shape: [usize; 3] = d.as_slice().try_into().map_err(|_| r.bad("max-pool needs 3 dims"))?;
            if size == 0 || in_shape[1] < size || in_shape[2] < size {
                return Err(r.bad(format!("pool size {size} on {in_shape:?}")));
            }
            Layer::MaxPool(MaxPool { size, in_shape })
        }
        KIND_FLATTEN => Layer::Flatten { in_shape: r.dims()? },
        KIND_LINEAR => {
            let (o, i) = (r.u32()?, r.u32()?);
            if o == 0 || i == 0 {
                return Err(r.bad("empty linear layer"));
            }
            let weight = r.floats(o * i, "weight")?;
            Layer::Linear(Linear {
                weight: tensor(r, vec![o, i], weight)?,
                bias: r.floats(o, "bias")?,
            })
        }
        other => return Err(r.bad(format!("unknown layer kind {other}"))),
    };
    r.finish()?;
    Ok(layer)
}

fn push_record(out: &mut Vec<u8>, kind: u32, payload: &[u8]) {
    let start = out.len();
    out.extend_from_slice(&kind.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
}

/// Serializes a network plus optional optimizer state and metadata.
pub fn encode<T: Scalar>(net: &Network<T>, optimizer: Option<&OptimizerState<T>>, meta: Option<&str>) -> Vec<u8> {
    let mut records: Vec<(u32, Vec<u8>)> = Vec::new();
    let mut head = Payload::default();
    head.dims(net.input_shape());
    head.u32(net.layers().len());
    records.push((KIND_NETWORK, head.0));
    for l in net.layers() {
        let (k, p) = layer_record(l);
        records.push((k, p.0));
    }
    if let Some(opt) = optimizer {
        let mut p = Payload::default();
        p.u32((opt.step & 0xffff_ffff) as usize);
        p.u32((opt.step >> 32) as usize);
        for layer in &opt.moments {
            for m in layer {
                p.floats(&m.m);
                p.floats(&m.v);
            }
        }
        records.push((KIND_OPTIMIZER, p.0));
    }
    if let Some(text) = meta {
        records.push((KIND_META, text.as_bytes().to_vec()));
    }
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (k, p) in &records {
        push_record(&mut out, *k, p);
    }
    out
}

fn header_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or(Error::CheckpointTruncated { what })
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let magic: [u8; 4] = bytes
        .get(..4)
        .ok_or(Error::CheckpointTruncated { what: "magic" })?
        .try_into()
        .expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::CheckpointMagic { found: magic });
    }
    let version = header_u32(bytes, 4, "version")?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            supported: VERSION,
        });
    }
    let count = header_u32(bytes, 8, "record count")? as usize;
    let mut pos = 12;
    let mut records = Vec::with_capacity(count.min(1024));
    for index in 0..count {
        let kind = header_u32(bytes, pos, "record header")?;
        let len = header_u32(bytes, pos + 4, "record header")? as usize;
        let body = pos + 8;
        let end = body.checked_add(len).ok_or(Error::CheckpointTruncated { what: "record payload" })?;
        let crc_stored = header_u32(bytes, end, "record payload")?;
        if crc32fast::hash(&bytes[pos..end]) != crc_stored {
            return Err(Error::CheckpointRecord {
                index,
                detail: "checksum mismatch".into(),
            });
        }
        records.push((index, kind, &bytes[body..end]));
        pos = end + 4;
    }
    if pos != bytes.len() {
        return Err(Error::CheckpointRecord {
            index: count,
            detail: format!("{} bytes after the last record", bytes.len() - pos),
        });
    }

    let mut it = records.into_iter();
    let (index, kind, body) = it.next().ok_or(Error::CheckpointTruncated { what: "network header" })?;
    let mut r = Reader { bytes: body, pos: 0, record: index };
    if kind != KIND_NETWORK {
        return Err(r.bad(format!("expected network header, found kind {kind}")));
    }
    let input_shape = r.dims()?;
    let layer_count = r.u32()?;
    r.finish()?;
    let mut layers = Vec::with_capacity(layer_count.min(1024));
    for _ in 0..layer_count {
        let (index, kind, body) = it.next().ok_or(Error::CheckpointTruncated { what: "layer records" })?;
        let mut r = Reader { bytes: body, pos: 0, record: index };
        layers.push(read_layer(kind, &mut r)?);
    }
    let net = Network::from_layers(input_shape, layers).map_err(|e| Error::CheckpointRecord {
        index: 0,
        detail: e.to_string(),
    })?;

    let mut optimizer = None;
    let mut meta = None;
    for (index, kind, body) in it {
        let mut r = Reader { bytes: body, pos: 0, record: index };
        match kind {
            KIND_OPTIMIZER if optimizer.is_none() => {
                let step = r.u32()? as u64 | (r.u32()? as u64) << 32;
                let mut moments = Vec::with_capacity(net.layers().len());
                for l in net.layers() {
                    let mut ms = Vec::new();
                    for n in param_groups(l) {
                        ms.push(Moments {
                            m: r.floats(n, "first moment")?,
                            v: r.floats(n, "second moment")?,
                        });
                    }
                    moments.push(ms);
                }
                r.finish()?;
                optimizer = Some(OptimizerState { step, moments });
            }
            KIND_META if meta.is_none() => {
                meta = Some(String::from_utf8(body.to_vec()).map_err(|_| r.bad("metadata is not UTF-8"))?);
            }
            other => return Err(r.bad(format!("unexpected record kind {other}"))),
        }
    }
    Ok(Checkpoint { net, optimizer, meta })
}

/// Writes atomically: the file is written next to `path` and renamed over it.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    net: &Network<T>,
    optimizer: Option<&OptimizerState<T>>,
    meta: Option<&str>,
) -> Result<()> {
    let bytes = encode(net, optimizer, meta);
    let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Network<f32> {
        Network::bincnn4(&[1, 8, 8], 3, 5).unwrap()
    }

    #[test]
    fn round_trip_in_memory() {
        let n = net();
        let back: Checkpoint<f32> = decode(&encode(&n, None, Some("epoch=1"))).unwrap();
        assert_eq!(back.net, n);
        assert_eq!(back.meta.as_deref(), Some("epoch=1"));
        assert!(back.optimizer.is_none());
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut b = encode(&net(), None, None);
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode::<f32>(&b), Err(Error::CheckpointMagic { found }) if &found == b"XXXX"));
        let mut b = encode(&net(), None, None);
        b[4] = 2;
        assert!(matches!(decode::<f32>(&b), Err(Error::CheckpointVersion { found: 2, .. })));
    }

    #[test]
    fn truncation_is_reported() {
        let b = encode(&net(), None, None);
        assert!(matches!(decode::<f32>(&b[..2]), Err(Error::CheckpointTruncated { .. })));
        assert!(matches!(decode::<f32>(&b[..b.len() - 3]), Err(Error::CheckpointTruncated { .. })));
    }
}
