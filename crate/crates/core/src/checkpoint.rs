//! Named-tensor container.
//!
//! Layout (all integers u64 little-endian):
//! `b"MNKYCKPT"`, tensor count, then per tensor: name length, UTF-8 name,
//! rank, extents, and `numel` f64 values in little-endian order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MNKYCKPT";

// Guards against allocating absurd buffers from a corrupt header.
const MAX_NAME: u64 = 1 << 16;
const MAX_RANK: u64 = 8;

pub fn write_tensors<W: Write>(mut w: W, tensors: &[(String, Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u64).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        w.write_all(&t.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let count = read_u64(&mut r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = read_u64(&mut r)?;
        if name_len > MAX_NAME {
            return Err(Error::Format(format!("tensor name of {name_len} bytes")));
        }
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = read_u64(&mut r)?;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format(format!("tensor `{name}` has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
        let mut bytes = vec![0u8; numel * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Saves every tensor whose name starts with `prefix` (empty for all).
pub fn save(store: &ParamStore, prefix: &str, path: &Path) -> Result<()> {
    let tensors: Vec<(String, Tensor)> = store
        .with_prefix(prefix)
        .map(|id| {
            let t = store.get(id);
            let plain = Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid shape");
            (store.name(id).to_string(), plain)
        })
        .collect();
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensors(f, &tensors)
}

/// Copies values from a checkpoint into matching tensors of `store`.
/// Every stored tensor must exist in the store with the same shape.
/// Returns the number of tensors loaded.
pub fn load(store: &mut ParamStore, path: &Path) -> Result<usize> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let tensors = read_tensors(f)?;
    for (name, t) in &tensors {
        let id = store
            .id(name)
            .ok_or_else(|| Error::Format(format!("checkpoint tensor `{name}` is unknown")))?;
        if store.get(id).shape() != t.shape() {
            return Err(Error::Dimension {
                op: "checkpoint::load",
                lhs: store.get(id).shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
    }
    for (name, t) in tensors.iter() {
        let id = store.id(name).expect("checked above");
        store.get_mut(id).data_mut().copy_from_slice(t.data());
    }
    Ok(tensors.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_in_memory() {
        let ts = vec![
            (
                "a.w".to_string(),
                Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-300, -0.0]).unwrap(),
            ),
            ("b".to_string(), Tensor::new(vec![1], vec![f64::MAX]).unwrap()),
        ];
        let mut buf = Vec::new();
        write_tensors(&mut buf, &ts).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let back = read_tensors(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for ((n0, t0), (n1, t1)) in ts.iter().zip(&back) {
            assert_eq!(n0, n1);
            assert_eq!(t0.to_le_bytes(), t1.to_le_bytes());
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let r = read_tensors(&b"NOTACKPT\0\0\0\0\0\0\0\0"[..]);
        assert!(matches!(r, Err(Error::Format(_))));
    }
}
