//! Checkpoint file format.
//!
//! Layout (all integers little-endian):
//!   magic "DPCN-CKPT" | u32 version | u32 topo-len + topo descriptor |
//!   u64 step count | u64 config hash | u32 record count |
//!   records: u32 name-len + name | u32 rank | u32 extents... | f32 data...
//!
//! Parameters are stored as 32-bit floats regardless of the in-memory
//! scalar width, so save -> load -> save is byte-identical.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use crate::diff::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::features::{ExtractorSet, FeatureExtractor, Role, Topology};

pub const MAGIC: &[u8; 9] = b"DPCN-CKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub steps: u64,
    pub config_hash: u64,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
    path: &'a str,
}

impl Reader<'_> {
    fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            path: self.path.to_string(),
            msg: msg.into(),
        })
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut v = vec![0u8; n];
        if self.cur.read_exact(&mut v).is_err() {
            return self.fail("truncated file");
        }
        Ok(v)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        if n > 1 << 20 {
            return self.fail(format!("implausible string length {n}"));
        }
        String::from_utf8(self.bytes(n)?).or_else(|_| self.fail("invalid utf-8"))
    }
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    set: &ExtractorSet<T>,
    meta: CheckpointMeta,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_str(&mut buf, &set.topology().descriptor());
    buf.extend_from_slice(&meta.steps.to_le_bytes());
    buf.extend_from_slice(&meta.config_hash.to_le_bytes());
    let n_records: usize = Role::ALL
        .iter()
        .map(|&r| set.get(r).params().len())
        .sum();
    put_u32(&mut buf, n_records as u32);
    for role in Role::ALL {
        let fx = set.get(role);
        for (name, tensor) in fx.params() {
            put_str(&mut buf, &format!("{}/{}", role.tag(), name));
            put_u32(&mut buf, tensor.shape().len() as u32);
            for &e in tensor.shape() {
                put_u32(&mut buf, e as u32);
            }
            for &v in tensor.data() {
                buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
            }
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
) -> Result<(ExtractorSet<T>, CheckpointMeta)> {
    let path_str = path.as_ref().display().to_string();
    let bytes = fs::read(path.as_ref())?;
    let mut r = Reader {
        cur: Cursor::new(bytes.as_slice()),
        path: &path_str,
    };
    if r.bytes(MAGIC.len())? != MAGIC {
        return r.fail("bad magic; not a checkpoint file");
    }
    let version = r.u32()?;
    if version != VERSION {
        return r.fail(format!("unsupported version {version}, expected {VERSION}"));
    }
    let topo = Topology::from_descriptor(&r.string()?).map_err(|e| Error::Format {
        path: path_str.clone(),
        msg: e.to_string(),
    })?;
    let meta = CheckpointMeta {
        steps: r.u64()?,
        config_hash: r.u64()?,
    };
    let n_records = r.u32()? as usize;
    let mut per_role: Vec<Vec<(String, Tensor<T>)>> = vec![Vec::new(); 4];
    for _ in 0..n_records {
        let full_name = r.string()?;
        let Some((role_tag, name)) = full_name.split_once('/') else {
            return r.fail(format!("record '{full_name}' lacks role prefix"));
        };
        let Some(role) = Role::from_tag(role_tag) else {
            return r.fail(format!("unknown role '{role_tag}'"));
        };
        let rank = r.u32()? as usize;
        if rank > 8 {
            return r.fail(format!("implausible rank {rank}"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        if n > 1 << 28 {
            return r.fail(format!("implausible tensor size {n}"));
        }
        let raw = r.bytes(4 * n)?;
        let data: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        let tensor = Tensor::from_vec(&shape, data).map_err(|e| Error::Format {
            path: path_str.clone(),
            msg: e.to_string(),
        })?;
        let slot = Role::ALL.iter().position(|&x| x == role).unwrap();
        per_role[slot].push((name.to_string(), tensor));
    }
    let mut built: Vec<FeatureExtractor<T>> = Vec::with_capacity(4);
    for (slot, params) in per_role.into_iter().enumerate() {
        let role = Role::ALL[slot];
        let fx =
            FeatureExtractor::from_params(topo.clone(), role, params).map_err(|e| Error::Format {
                path: path_str.clone(),
                msg: format!("{} ({})", e, role.tag()),
            })?;
        built.push(fx);
    }
    let mut it = built.into_iter();
    let set = ExtractorSet {
        template_rot: it.next().unwrap(),
        source_rot: it.next().unwrap(),
        template_trans: it.next().unwrap(),
        source_trans: it.next().unwrap(),
    };
    Ok((set, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_save_is_byte_identical() {
        let topo = Topology::new(1, 2, 8);
        let set = ExtractorSet::<f32>::init(&topo, 42).unwrap();
        let dir = std::env::temp_dir().join("phasereg-ckpt-test");
        fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.ckpt");
        let p2 = dir.join("b.ckpt");
        let meta = CheckpointMeta {
            steps: 17,
            config_hash: 0xdead_beef,
        };
        save_checkpoint(&p1, &set, meta).unwrap();
        let (loaded, meta2) = load_checkpoint::<f32>(&p1).unwrap();
        assert_eq!(meta, meta2);
        save_checkpoint(&p2, &loaded, meta2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_file_is_a_clean_error() {
        let topo = Topology::new(1, 2, 8);
        let set = ExtractorSet::<f32>::init(&topo, 1).unwrap();
        let dir = std::env::temp_dir().join("phasereg-ckpt-test");
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("trunc.ckpt");
        save_checkpoint(
            &p,
            &set,
            CheckpointMeta {
                steps: 0,
                config_hash: 0,
            },
        )
        .unwrap();
        let full = fs::read(&p).unwrap();
        fs::write(&p, &full[..full.len() / 2]).unwrap();
        let err = load_checkpoint::<f32>(&p).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = std::env::temp_dir().join("phasereg-ckpt-test");
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("junk.ckpt");
        fs::write(&p, b"not a checkpoint at all").unwrap();
        assert!(load_checkpoint::<f32>(&p).is_err());
    }
}
