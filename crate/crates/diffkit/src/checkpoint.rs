//! Named-parameter checkpoint records.
//!
//! Layout (little-endian): magic `MSFM`, version `u32`, record count `u32`,
//! then per record: name length `u16`, name bytes (UTF-8), rank `u8`,
//! dims `u32 × rank`, `f32` data. EMA shadows use the `ema/` name prefix.
//! Callers may append their own trailer after the records.

use std::io::{Read, Write};

use crate::adam::{AdamState, ParamStore};
use crate::error::{DiffError, Result};
use crate::tensor::{Tensor, MAX_RANK};

pub const MAGIC: &[u8; 4] = b"MSFM";
pub const VERSION: u32 = 1;
pub const EMA_PREFIX: &str = "ema/";

fn bad(msg: impl Into<String>) -> DiffError {
    DiffError::Checkpoint(msg.into())
}

pub fn write_records<'a, W: Write>(
    w: &mut W,
    records: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    let records: Vec<_> = records.into_iter().collect();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, t) in records {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len()).map_err(|_| bad(format!("name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[t.rank() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_records<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let mut len = [0u8; 2];
        r.read_exact(&mut len).map_err(|_| bad("truncated"))?;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        r.read_exact(&mut name).map_err(|_| bad("truncated"))?;
        let name = String::from_utf8(name).map_err(|_| bad("name is not UTF-8"))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank).map_err(|_| bad("truncated"))?;
        let rank = rank[0] as usize;
        if rank > MAX_RANK {
            return Err(bad(format!("rank {rank} for `{name}`")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(r)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut raw = vec![0u8; len * 4];
        r.read_exact(&mut raw).map_err(|_| bad("truncated"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}

/// Parameters followed by their EMA shadows (when an optimizer is given).
pub fn write_params<W: Write>(w: &mut W, params: &ParamStore, adam: Option<&AdamState>) -> Result<()> {
    let ema_names: Vec<String> = params.iter().map(|(n, _)| format!("{EMA_PREFIX}{n}")).collect();
    let mut records: Vec<(&str, &Tensor)> = params.iter().collect();
    if let Some(adam) = adam {
        records.extend(ema_names.iter().map(String::as_str).zip(adam.ema()));
    }
    write_records(w, records)
}

/// Splits records into (parameters, EMA shadows) in file order.
pub fn split_params(records: Vec<(String, Tensor)>) -> (ParamStore, ParamStore) {
    let mut params = ParamStore::new();
    let mut ema = ParamStore::new();
    for (name, t) in records {
        match name.strip_prefix(EMA_PREFIX) {
            Some(base) => ema.add(base, t),
            None => params.add(name, t),
        };
    }
    (params, ema)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_shapes_and_bits() {
        let mut params = ParamStore::new();
        params.add("a", Tensor::new(&[2, 3], vec![1.0, -2.5, 3.25, 0.0, f32::MIN_POSITIVE, 7.0]).unwrap());
        params.add("blocks/0/w", Tensor::scalar(0.125));
        let adam = AdamState::new(Default::default(), &params);
        let mut buf = Vec::new();
        write_params(&mut buf, &params, Some(&adam)).unwrap();
        let records = read_records(&mut buf.as_slice()).unwrap();
        let (p, e) = split_params(records);
        assert_eq!(p, params);
        assert_eq!(e, params);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut params = ParamStore::new();
        params.add("x", Tensor::zeros(&[4]));
        let mut buf = Vec::new();
        write_params(&mut buf, &params, None).unwrap();
        let mut broken = buf.clone();
        broken[0] = b'X';
        assert!(read_records(&mut broken.as_slice()).is_err());
        let truncated = &buf[..buf.len() - 3];
        assert!(read_records(&mut &truncated[..]).is_err());
    }
}
