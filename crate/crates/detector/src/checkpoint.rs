//! Checkpoints: `LIMCKPT1`, a manifest of `(name, shape, offset)` records and
//! a little-endian `f32` payload; the detector config is written next to it
//! as `<path>.cfg` in `key = value` form.
//!
//! Manifest layout after the magic: `u32` entry count, then per entry a `u32`
//! name length, the UTF-8 name, four `u32` extents and a `u64` offset counted
//! in values from the start of the payload.

use std::fs;
use std::path::{Path, PathBuf};

use lim_core::{ParamStore, Shape4, Tensor4};

use crate::config::DetectorConfig;
use crate::error::{Error, Result};
use crate::model::Detector;

pub const MAGIC: &[u8; 8] = b"LIMCKPT1";

pub fn config_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, store: &ParamStore<f32>, cfg: &DetectorConfig) -> Result<()> {
    let path = path.as_ref();
    let mut head = Vec::new();
    head.extend_from_slice(MAGIC);
    head.extend_from_slice(&(store.len() as u32).to_le_bytes());
    let mut payload = Vec::new();
    let mut offset = 0u64;
    for e in store.entries() {
        let s = e.value.shape();
        head.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        head.extend_from_slice(e.name.as_bytes());
        for d in [s.n, s.c, s.h, s.w] {
            head.extend_from_slice(&(d as u32).to_le_bytes());
        }
        head.extend_from_slice(&offset.to_le_bytes());
        for v in e.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        offset += s.len() as u64;
    }
    head.extend_from_slice(&payload);
    fs::write(path, head).map_err(io_err(path))?;
    let cp = config_path(path);
    fs::write(&cp, cfg.to_key_values()).map_err(io_err(&cp))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint {
                path: self.path.to_path_buf(),
                message: "truncated file".into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Named tensors of a checkpoint, in file order.
pub fn read_tensors(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor4<f32>)>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bad = |message: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(bad("missing LIMCKPT1 magic".into()));
    }
    let count = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| bad("entry name is not UTF-8".into()))?;
        let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|d| d as usize);
        let offset = r.u64()? as usize;
        manifest.push((name, Shape4::new(dims[0], dims[1], dims[2], dims[3]), offset));
    }
    let payload = &bytes[r.pos..];
    manifest
        .into_iter()
        .map(|(name, shape, offset)| {
            let (start, end) = (offset * 4, (offset + shape.len()) * 4);
            let raw = payload
                .get(start..end)
                .ok_or_else(|| bad(format!("payload of {name} out of range")))?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            Ok((name, Tensor4::from_vec(shape, data)?))
        })
        .collect()
}

/// Rebuilds a detector from a checkpoint and its config file.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Detector, ParamStore<f32>)> {
    let path = path.as_ref();
    let cp = config_path(path);
    let cfg = DetectorConfig::from_key_values(&fs::read_to_string(&cp).map_err(io_err(&cp))?)?;
    let mut store = ParamStore::new();
    let model = Detector::init(&cfg, &mut store, 0)?;
    let tensors = read_tensors(path)?;
    if tensors.len() != store.len() {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            message: format!("{} tensors, model expects {}", tensors.len(), store.len()),
        });
    }
    for (name, t) in tensors {
        let id = store.id(&name).ok_or_else(|| Error::Checkpoint {
            path: path.to_path_buf(),
            message: format!("unknown parameter {name}"),
        })?;
        store.set(id, t)?;
    }
    Ok((model, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;
    use crate::model::Phase;

    #[test]
    fn round_trip_restores_predictions() {
        let cfg = DetectorConfig {
            resolution: 32,
            width: 4,
            stem_channels: 2,
            variant: Variant::Full,
            ..DetectorConfig::default()
        };
        let mut store = ParamStore::<f32>::new();
        let m = Detector::init(&cfg, &mut store, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &store, &cfg).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let (m2, s2) = load_checkpoint(&path).unwrap();
        assert_eq!(m2.cfg, cfg);
        let x = Tensor4::randn(m.input_shape(2), 0, 1.0);
        assert_eq!(
            m.predict(&store, &x, Phase::Train).unwrap(),
            m2.predict(&s2, &x, Phase::Train).unwrap()
        );
    }

    #[test]
    fn corrupt_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"NOTACKPT").unwrap();
        assert!(read_tensors(&path).is_err());
        fs::write(&path, b"LIMCKPT1\x05\x00\x00\x00").unwrap();
        assert!(read_tensors(&path).is_err());
    }
}
