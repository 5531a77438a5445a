//! Binary parameter file.
//!
//! ```text
//! magic    8 bytes  "PTTCKPT1"
//! version  u32 LE   (1)
//! count    u32 LE   number of tensors
//! per tensor:
//!   name_len u32 LE, name bytes (UTF-8)
//!   rank     u32 LE, dims u64 LE × rank
//!   payload  f64 LE × product(dims)
//! ```

use std::io::{Read, Write};

use super::{NnError, ParamStore, ParamTensor};

pub const MAGIC: &[u8; 8] = b"PTTCKPT1";
pub const VERSION: u32 = 1;

pub fn write_params<W: Write>(store: &ParamStore, mut w: W) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, p) in store.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.shape.len() as u32).to_le_bytes())?;
        for &d in &p.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &p.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_params<R: Read>(mut r: R) -> Result<ParamStore, NnError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(NnError::Checkpoint(format!("name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| NnError::Checkpoint("name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(NnError::Checkpoint(format!("rank {rank} for {name}")));
        }
        let shape = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= 1 << 28)
            .ok_or_else(|| NnError::Checkpoint(format!("oversized tensor {name}")))?;
        let mut t = ParamTensor::zeros(name, shape);
        debug_assert_eq!(t.numel(), numel);
        for v in &mut t.values {
            *v = f64::from_le_bytes({
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                b
            });
        }
        store.add(t)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut s = ParamStore::new();
        s.add_weight("a.weight", 3, 4, &SplitMix64::new(11)).unwrap();
        let mut odd = ParamTensor::zeros("b", vec![3]);
        odd.values = vec![f64::MIN_POSITIVE, -0.0, 1e308];
        s.add(odd).unwrap();
        let mut buf = Vec::new();
        write_params(&s, &mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let back = read_params(buf.as_slice()).unwrap();
        for ((_, a), (_, b)) in s.iter().zip(back.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let ab: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(read_params(&b"NOTACKPT\x01\0\0\0\0\0\0\0"[..]), Err(NnError::Checkpoint(_))));
        let mut s = ParamStore::new();
        s.add_bias("x", 4).unwrap();
        let mut buf = Vec::new();
        write_params(&s, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_params(buf.as_slice()), Err(NnError::Io(_))));
    }
}
