//! Binary embedding cache.
//!
//! Layout, all integers little-endian:
//! `"EMB1"`, u32 version, u32 modality count, then per modality a
//! u32-length-prefixed label, u32 raw_dim, u64 row count, the row ids
//! (u32-length-prefixed UTF-8) and the row-major f32 data. The file ends
//! with the 32-byte encoder fingerprint.

use std::path::Path;

use kgbridge_core::encoder::{CacheBlock, EmbeddingCache};

use crate::binary::{Reader, Writer};
use crate::error::{read_file, write_file, Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"EMB1";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FingerprintCheck {
    /// Report a mismatch but return the cache.
    #[default]
    Warn,
    Strict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCache {
    pub cache: EmbeddingCache,
    /// Set when an expected fingerprint was given and differs.
    pub fingerprint_mismatch: bool,
}

pub fn encode_cache(cache: &EmbeddingCache) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(CACHE_MAGIC);
    w.u32(CACHE_VERSION);
    w.u32(cache.blocks().len() as u32);
    for b in cache.blocks() {
        w.str(&b.modality);
        w.u32(b.raw_dim as u32);
        w.u64(b.ids.len() as u64);
        for id in &b.ids {
            w.str(id);
        }
        for &x in &b.data {
            w.f32(x);
        }
    }
    w.bytes(cache.fingerprint());
    w.into_inner()
}

pub fn decode_cache(path: &Path, bytes: &[u8]) -> Result<EmbeddingCache> {
    let mut r = Reader::new(path, bytes);
    r.magic(CACHE_MAGIC)?;
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::format(path, format!("unsupported cache version {version}")));
    }
    let count = r.u32()? as usize;
    let mut blocks = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let modality = r.str()?;
        let raw_dim = r.u32()? as usize;
        let rows = r.u64()? as usize;
        let mut ids = Vec::with_capacity(rows.min(1 << 20));
        for _ in 0..rows {
            ids.push(r.str()?);
        }
        let n = rows
            .checked_mul(raw_dim)
            .ok_or_else(|| Error::format(path, "row count overflows"))?;
        let data = r.f32s(n)?;
        blocks.push(CacheBlock {
            modality,
            raw_dim,
            ids,
            data,
        });
    }
    let fp: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    r.finish()?;
    Ok(EmbeddingCache::new(blocks, fp)?)
}

pub fn persist_cache(cache: &EmbeddingCache, path: &Path) -> Result<()> {
    write_file(path, &encode_cache(cache))
}

/// Loads a cache; with `expected` set, the stored fingerprint is compared
/// and a mismatch is an error under [`FingerprintCheck::Strict`].
pub fn load_cache(path: &Path, expected: Option<&[u8; 32]>, check: FingerprintCheck) -> Result<LoadedCache> {
    let cache = decode_cache(path, &read_file(path)?)?;
    let mismatch = expected.is_some_and(|e| e != cache.fingerprint());
    if mismatch && check == FingerprintCheck::Strict {
        return Err(Error::format(
            path,
            format!(
                "encoder fingerprint {} does not match expected {}",
                hex::encode(cache.fingerprint()),
                hex::encode(expected.unwrap())
            ),
        ));
    }
    Ok(LoadedCache {
        cache,
        fingerprint_mismatch: mismatch,
    })
}
