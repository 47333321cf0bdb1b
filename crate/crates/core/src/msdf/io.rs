//! Little-endian binary container for a single [`MosaicSdf`].
//!
//! Layout: `"MSDF"`, version, n, k, flags, reserved (all `u32` after the magic),
//! then centers (n×3), scales (n), values (n·k³) as `f32`, then an optional
//! stats block of 6 `f32` when flag bit 0 is set.

use std::path::Path;

use crate::error::{Error, Result};

use super::{ChannelStats, MosaicSdf};

pub const MAGIC: &[u8; 4] = b"MSDF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;
const FLAG_STATS: u32 = 1;

/// Size in bytes of a saved file.
pub fn file_len(n: usize, k: usize, with_stats: bool) -> usize {
    HEADER_LEN + 4 * n * (4 + k * k * k) + if with_stats { 24 } else { 0 }
}

pub fn to_bytes(x: &MosaicSdf, stats: Option<&ChannelStats>) -> Vec<u8> {
    let mut out = Vec::with_capacity(file_len(x.n(), x.k(), stats.is_some()));
    out.extend_from_slice(MAGIC);
    let flags = if stats.is_some() { FLAG_STATS } else { 0 };
    for v in [VERSION, x.n() as u32, x.k() as u32, flags, 0] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let floats = x
        .centers()
        .iter()
        .flatten()
        .chain(x.scales())
        .chain(x.values())
        .copied()
        .chain(stats.into_iter().flat_map(|s| s.to_array()));
    for v in floats {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(MosaicSdf, Option<ChannelStats>)> {
    let bad = |m: String| Error::Format(m);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (version, n, k, flags) = (word(0), word(1) as usize, word(2) as usize, word(3));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    if flags & !FLAG_STATS != 0 {
        return Err(bad(format!("unknown flags {flags:#x}")));
    }
    let with_stats = flags & FLAG_STATS != 0;
    let expect = n
        .checked_mul(k.checked_pow(3).and_then(|g| g.checked_add(4)).unwrap_or(usize::MAX))
        .and_then(|c| c.checked_mul(4))
        .map(|b| b + HEADER_LEN + if with_stats { 24 } else { 0 });
    if expect != Some(bytes.len()) {
        return Err(bad(format!(
            "size {} does not match n={n}, k={k} (expected {})",
            bytes.len(),
            expect.map_or("overflow".into(), |e| e.to_string())
        )));
    }
    let mut floats = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let centers = (0..n)
        .map(|_| [0; 3].map(|_| floats.next().unwrap()))
        .collect();
    let scales = floats.by_ref().take(n).collect();
    let values = floats.by_ref().take(n * k * k * k).collect();
    let stats = if with_stats {
        let a = [0; 6].map(|_| floats.next().unwrap());
        Some(ChannelStats::from_array(a).map_err(|e| bad(e.to_string()))?)
    } else {
        None
    };
    let x = MosaicSdf::new(k, centers, scales, values).map_err(|e| bad(e.to_string()))?;
    Ok((x, stats))
}

pub fn save(x: &MosaicSdf, stats: Option<&ChannelStats>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(x, stats))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(MosaicSdf, Option<ChannelStats>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}
