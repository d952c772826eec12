//! EPO1 binary epoch files with a JSON metadata sidecar.
//!
//! Layout (all little-endian):
//!
//! | offset | size          | field                          |
//! |--------|---------------|--------------------------------|
//! | 0      | 4             | magic `EPO1`                   |
//! | 4      | 4             | u32 version (= 1)              |
//! | 8      | 4             | u32 n_trials                   |
//! | 12     | 4             | u32 n_channels                 |
//! | 16     | 4             | u32 n_samples                  |
//! | 20     | 4             | f32 fs                         |
//! | 24     | n_trials      | u8 labels                      |
//! | 24+T   | 4·T·C·S       | f32 data, trial/channel/sample |
//!
//! `<stem>.meta.json` next to the file holds `subject_id` and
//! `channel_names`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::epoch::EpochSet;
use crate::error::{Error, Result};

pub const EPO_MAGIC: &[u8; 4] = b"EPO1";
pub const EPO_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochMeta {
    pub subject_id: String,
    pub channel_names: Vec<String>,
}

/// `dir/S01.epo` → `dir/S01.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn save_epochs(e: &EpochSet, path: &Path) -> Result<()> {
    e.ensure_valid()?;
    let dim = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::invalid(format!("{what} = {v} does not fit in u32")))
    };
    let mut buf = Vec::with_capacity(HEADER_LEN + e.n_trials + 4 * e.data.len());
    buf.extend_from_slice(EPO_MAGIC);
    buf.extend_from_slice(&EPO_VERSION.to_le_bytes());
    buf.extend_from_slice(&dim(e.n_trials, "n_trials")?.to_le_bytes());
    buf.extend_from_slice(&dim(e.n_channels, "n_channels")?.to_le_bytes());
    buf.extend_from_slice(&dim(e.n_samples, "n_samples")?.to_le_bytes());
    buf.extend_from_slice(&e.fs.to_le_bytes());
    buf.extend_from_slice(&e.labels);
    for v in &e.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, &buf).map_err(|err| Error::io(path, err))?;

    let meta = EpochMeta {
        subject_id: e.subject_id.clone(),
        channel_names: e.channel_names.clone(),
    };
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&side, json).map_err(|err| Error::io(&side, err))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated file: need {n} bytes for {what}, {} left",
                    self.buf.len() - self.pos
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn load_epochs(path: &Path) -> Result<EpochSet> {
    let bytes = std::fs::read(path).map_err(|err| Error::io(path, err))?;
    let side = sidecar_path(path);
    let meta_text = std::fs::read_to_string(&side).map_err(|err| Error::io(&side, err))?;
    let meta: EpochMeta = serde_json::from_str(&meta_text)?;
    let e = decode(&bytes, meta)?;
    e.ensure_valid()?;
    Ok(e)
}

fn decode(bytes: &[u8], meta: EpochMeta) -> Result<EpochSet> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != EPO_MAGIC {
        return Err(Error::format(
            0,
            format!(
                "bad magic {:?}, expected \"EPO1\"",
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let version = r.u32("version")?;
    if version != EPO_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let n_trials = r.u32("n_trials")? as usize;
    let n_channels = r.u32("n_channels")? as usize;
    let n_samples = r.u32("n_samples")? as usize;
    let fs_bytes = r.take(4, "fs")?;
    let fs = f32::from_le_bytes([fs_bytes[0], fs_bytes[1], fs_bytes[2], fs_bytes[3]]);

    let n_values = n_trials
        .checked_mul(n_channels)
        .and_then(|v| v.checked_mul(n_samples))
        .filter(|v| v.checked_mul(4).is_some())
        .ok_or_else(|| Error::format(8, "dimension product overflows"))?;
    let expected = HEADER_LEN as u64 + n_trials as u64 + 4 * n_values as u64;
    if (bytes.len() as u64) > expected {
        return Err(Error::format(
            expected,
            format!(
                "{} trailing bytes after data",
                bytes.len() as u64 - expected
            ),
        ));
    }

    let labels = r.take(n_trials, "labels")?.to_vec();
    let raw = r.take(4 * n_values, "sample data")?;
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();

    Ok(EpochSet {
        subject_id: meta.subject_id,
        fs,
        n_trials,
        n_channels,
        n_samples,
        data,
        labels,
        channel_names: meta.channel_names,
    })
}
