//! Binary dataset files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "RBD1" | u32 version | u32 state_dim | u32 action_dim | u64 n
//! f32 states[n·state_dim] | f32 actions[n·action_dim] | f32 rewards[n]
//! f32 next_states[n·state_dim] | f32 next_actions[n·action_dim]
//! u8 dones[n] | u32 crc32 of everything before it
//! ```
//!
//! Metadata lives next to the data in a `<stem>.meta.json` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use rebrac_core::dataset::{DatasetMeta, OfflineDataset};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"RBD1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8;

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn to_bytes(ds: &OfflineDataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let n = ds.len();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * (2 * ds.state_dim + 2 * ds.action_dim + 1) + n + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.state_dim as u32).to_le_bytes());
    out.extend_from_slice(&(ds.action_dim as u32).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for block in [&ds.states, &ds.actions, &ds.rewards, &ds.next_states, &ds.next_actions] {
        for v in block.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&ds.dones);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if end > self.buf.len() {
            return Err(Error::Truncated {
                needed: end,
                have: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let raw = self.take(count * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

/// Parses the binary part; `meta` comes from the sidecar.
pub fn from_bytes(bytes: &[u8], meta: DatasetMeta) -> Result<OfflineDataset> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4).map_err(|_| Error::BadMagic {
        expected: MAGIC,
        found: bytes.to_vec(),
    })?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic.to_vec(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let state_dim = r.u32()? as usize;
    let action_dim = r.u32()? as usize;
    let n = usize::try_from(r.u64()?).map_err(|_| Error::Format("row count overflows usize".into()))?;
    let body = n
        .checked_mul(4 * (2 * state_dim + 2 * action_dim + 1) + 1)
        .ok_or_else(|| Error::Format("row count overflows usize".into()))?;
    let needed = HEADER_LEN + body + 4;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            have: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - needed)));
    }
    let stored = u32::from_le_bytes(bytes[needed - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..needed - 4]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let ds = OfflineDataset {
        state_dim,
        action_dim,
        states: r.f32s(n * state_dim)?,
        actions: r.f32s(n * action_dim)?,
        rewards: r.f32s(n)?,
        next_states: r.f32s(n * state_dim)?,
        next_actions: r.f32s(n * action_dim)?,
        dones: r.take(n)?.to_vec(),
        meta,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes the data file and its sidecar.
pub fn save(ds: &OfflineDataset, path: &Path) -> Result<()> {
    let bytes = to_bytes(ds)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let meta = serde_json::to_string_pretty(&ds.meta)?;
    let side = sidecar_path(path);
    fs::write(&side, meta + "\n").map_err(|e| Error::io(&side, e))
}

pub fn load(path: &Path) -> Result<OfflineDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let meta_text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text)?;
    from_bytes(&bytes, meta)
}
