//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"HPCK" u32:version
//! str:scalar_name str:network_config_toml
//! u32:n_params  { str:name u32:ndim u64*ndim:dims  value*numel }
//! u32:n_buffers { str:name u32:channels f64:eps f64:momentum value*channels (mean) value*channels (var) }
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8. Values are stored at the
//! width of the scalar type (4 or 8 bytes), so a save/load round trip is bit
//! exact and saving twice gives identical bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{Network, NetworkConfig, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{BatchNormState, Tensor};

pub const MAGIC: &[u8; 4] = b"HPCK";
pub const VERSION: u32 = 1;

struct Writer<T> {
    buf: Vec<u8>,
    _t: std::marker::PhantomData<T>,
}

impl<T: Scalar> Writer<T> {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn values(&mut self, vs: &[T]) {
        for v in vs {
            if T::NAME == "f32" {
                self.buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            } else {
                self.buf.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
    }
}

pub fn to_bytes<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let mut w = Writer::<T> { buf: MAGIC.to_vec(), _t: Default::default() };
    w.u32(VERSION);
    w.str(T::NAME);
    w.str(&net.config().to_toml());
    let store = net.store();
    w.u32(store.params().len() as u32);
    for p in store.params() {
        w.str(&p.name);
        w.u32(p.value.shape().len() as u32);
        for &d in p.value.shape() {
            w.buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        w.values(p.value.data());
    }
    w.u32(store.buffers().len() as u32);
    for (name, s) in store.buffers() {
        w.str(name);
        w.u32(s.mean.len() as u32);
        w.buf.extend_from_slice(&s.eps.as_f64().to_le_bytes());
        w.buf.extend_from_slice(&s.momentum.as_f64().to_le_bytes());
        w.values(&s.mean);
        w.values(&s.var);
    }
    w.buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Format {
            location: format!("byte {}", self.pos),
            detail: format!("checkpoint truncated, wanted {n} more bytes"),
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format { location: format!("byte {at}"), detail: "invalid UTF-8".into() })
    }
    fn values<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let width = if T::NAME == "f32" { 4 } else { 8 };
        let raw = self.take(n.checked_mul(width).ok_or_else(|| Error::Format {
            location: format!("byte {}", self.pos),
            detail: "element count overflows".into(),
        })?)?;
        Ok(raw
            .chunks_exact(width)
            .map(|c| {
                if width == 4 {
                    T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64)
                } else {
                    T::lit(f64::from_le_bytes(c.try_into().unwrap()))
                }
            })
            .collect())
    }
}

/// Scalar type name (`"f32"` or `"f64"`) recorded in checkpoint bytes.
pub fn scalar_name(bytes: &[u8]) -> Result<String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(&MAGIC[..]) {
        return Err(Error::Version("not a heatpose checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version(format!("checkpoint version {version}, this build reads {VERSION}")));
    }
    r.str()
}

/// Rebuild a network from checkpoint bytes.
///
/// Fails with a version error when the magic, format version, scalar type
/// or parameter layout do not match.
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Network<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(&MAGIC[..]) {
        return Err(Error::Version("not a heatpose checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version(format!("checkpoint version {version}, this build reads {VERSION}")));
    }
    let scalar = r.str()?;
    if scalar != T::NAME {
        return Err(Error::Version(format!("checkpoint holds {scalar} values, expected {}", T::NAME)));
    }
    let config = NetworkConfig::from_toml(&r.str()?)?;
    let mut stored = ParamStore::new();
    for _ in 0..r.u32()? {
        let name = r.str()?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let data = r.values::<T>(shape.iter().product())?;
        stored.add(name, Tensor::from_vec(shape, data)?);
    }
    for _ in 0..r.u32()? {
        let name = r.str()?;
        let c = r.u32()? as usize;
        let eps = T::lit(r.f64()?);
        let momentum = T::lit(r.f64()?);
        let mean = r.values::<T>(c)?;
        let var = r.values::<T>(c)?;
        stored.add_buffer(name, BatchNormState { mean, var, eps, momentum });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format { location: format!("byte {}", r.pos), detail: "trailing data after checkpoint".into() });
    }
    let mut net = Network::new(config, 0)?;
    net.store_mut().load_from(&stored)?;
    Ok(net)
}

pub fn save<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<Network<T>> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trained_looking(seed: u64) -> Network<f64> {
        let mut net = Network::<f64>::new(NetworkConfig::tiny(), seed).unwrap();
        for (i, (_, s)) in net.store_mut().buffers_mut().iter_mut().enumerate() {
            s.mean.iter_mut().for_each(|m| *m = 0.1 * i as f64 + 1e-17);
            s.var.iter_mut().for_each(|v| *v = 1.0 + 1.0 / 3.0);
        }
        net
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = trained_looking(3);
        let bytes = to_bytes(&net);
        let back: Network<f64> = from_bytes(&bytes).unwrap();
        assert_eq!(back.store(), net.store());
        assert_eq!(back.config(), net.config());
        assert_eq!(to_bytes(&back), bytes);
        let x = Tensor::from_vec(vec![1, 3, 16, 16], (0..768).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        assert_eq!(back.predict(&x).unwrap(), net.predict(&x).unwrap());
    }

    #[test]
    fn single_precision_round_trip() {
        let net = Network::<f32>::new(NetworkConfig::tiny(), 4).unwrap();
        let back: Network<f32> = from_bytes(&to_bytes(&net)).unwrap();
        assert_eq!(back.store(), net.store());
    }

    #[test]
    fn rejects_mismatches() {
        let net = trained_looking(5);
        let bytes = to_bytes(&net);
        assert_eq!(from_bytes::<f32>(&bytes).unwrap_err().code(), "E_VERSION");
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert_eq!(from_bytes::<f64>(&bad).unwrap_err().code(), "E_VERSION");
        assert_eq!(from_bytes::<f64>(b"PNG!").unwrap_err().code(), "E_VERSION");
        assert_eq!(from_bytes::<f64>(&bytes[..bytes.len() - 3]).unwrap_err().code(), "E_FORMAT");
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(from_bytes::<f64>(&long).unwrap_err().code(), "E_FORMAT");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let net = trained_looking(6);
        save(&net, &path).unwrap();
        assert_eq!(load::<f64>(&path).unwrap().store(), net.store());
        assert_eq!(load::<f64>(&dir.path().join("none")).unwrap_err().code(), "E_MISSING_PATH");
    }
}
