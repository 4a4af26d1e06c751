//! Binary embedding cache, one file per video.
//!
//! Layout (all integers little-endian):
//!
//! | field          | size            |
//! |----------------|-----------------|
//! | magic `IDSQ`   | 4               |
//! | version        | u32             |
//! | d              | u32             |
//! | ℓ              | u32             |
//! | backend_id     | u16 len + UTF-8 |
//! | video_id       | u16 len + UTF-8 |
//! | aux vector     | d × f32         |
//! | frame vectors  | ℓ × d × f32     |
//! | CRC-32 (IEEE)  | u32, over all preceding bytes |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{EmbeddingSequence, IdentityVector};
use crate::error::{Error, Result};

pub const CACHE_MAGIC: [u8; 4] = *b"IDSQ";
pub const CACHE_VERSION: u32 = 1;

fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::InvalidArgument(format!("string too long for cache header: {s:?}")))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn encode(seq: &EmbeddingSequence) -> Result<Vec<u8>> {
    seq.validate()?;
    let d = seq.dim();
    let mut buf = Vec::with_capacity(64 + 4 * d * (seq.len() + 1));
    buf.extend_from_slice(&CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    put_str(&mut buf, seq.backend_id())?;
    put_str(&mut buf, &seq.video_id)?;
    for v in std::iter::once(&seq.aux_vector).chain(&seq.vectors) {
        for x in &v.values {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("truncated embedding cache".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Format("non-UTF-8 string in cache header".into()))
    }
}

pub fn decode(buf: &[u8]) -> Result<EmbeddingSequence> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != CACHE_MAGIC {
        return Err(Error::Format("bad magic, not an embedding cache".into()));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CACHE_VERSION,
        });
    }
    if buf.len() < 4 {
        return Err(Error::Format("truncated embedding cache".into()));
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let d = r.u32()? as usize;
    let len = r.u32()? as usize;
    let backend_id = r.string()?;
    let video_id = r.string()?;
    let payload_len = (len + 1)
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("cache dimensions overflow".into()))?;
    if r.pos + payload_len != body.len() {
        return Err(Error::Format(format!(
            "payload is {} bytes, header implies {payload_len}",
            body.len() - r.pos
        )));
    }
    let read_vec = |r: &mut Reader| -> Result<IdentityVector> {
        let bytes = r.take(4 * d)?;
        Ok(IdentityVector {
            values: bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
            backend_id: backend_id.clone(),
        })
    };
    let aux_vector = read_vec(&mut r)?;
    let vectors = (0..len).map(|_| read_vec(&mut r)).collect::<Result<Vec<_>>>()?;
    EmbeddingSequence::new(video_id, vectors, aux_vector)
}

pub fn cache_write(seq: &EmbeddingSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(seq)?;
    // write-then-rename keeps readers from seeing a partial file
    let tmp = path.with_extension("idsq.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn cache_read(path: impl AsRef<Path>) -> Result<EmbeddingSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::input(path, e.to_string()))?;
    decode(&bytes)
}

/// A directory holding one cache file per video id.
#[derive(Debug, Clone)]
pub struct EmbeddingCacheDir {
    root: PathBuf,
}

impl EmbeddingCacheDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, video_id: &str) -> PathBuf {
        let name: String = video_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
            .collect();
        self.root.join(format!("{name}.idsq"))
    }

    pub fn write(&self, seq: &EmbeddingSequence) -> Result<()> {
        fs::create_dir_all(&self.root)?;
        cache_write(seq, self.path_for(&seq.video_id))
    }

    pub fn read(&self, video_id: &str) -> Result<EmbeddingSequence> {
        let seq = cache_read(self.path_for(video_id))?;
        if seq.video_id != video_id {
            return Err(Error::Format(format!(
                "cache for {video_id} holds video {}",
                seq.video_id
            )));
        }
        Ok(seq)
    }

    /// Reads the caches of all given video ids.
    pub fn read_all<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<BTreeMap<String, EmbeddingSequence>> {
        let ids: Vec<&str> = ids.into_iter().collect();
        let seqs = crate::par::try_map(&ids, |id| self.read(id))?;
        Ok(seqs.into_iter().map(|s| (s.video_id.clone(), s)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::synthetic_identity_vector;

    fn sample(len: usize, d: usize) -> EmbeddingSequence {
        let v = |i: u64| IdentityVector {
            values: synthetic_identity_vector(d, "A", i, 0.3, 0, 0),
            backend_id: "synthetic".into(),
        };
        EmbeddingSequence::new("vid/0", (0..len as u64).map(v).collect(), v(999)).unwrap()
    }

    #[test]
    fn write_then_read_is_equal() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCacheDir::new(dir.path());
        let seq = sample(64, 16);
        cache.write(&seq).unwrap();
        assert_eq!(cache.read("vid/0").unwrap(), seq);
    }

    #[test]
    fn flipped_payload_byte_fails_checksum() {
        let mut bytes = encode(&sample(4, 8)).unwrap();
        let n = bytes.len();
        bytes[n - 20] ^= 0x01;
        assert!(matches!(decode(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn unknown_version_rejected() {
        let mut bytes = encode(&sample(4, 8)).unwrap();
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Version { found: 7, .. })));
    }

    #[test]
    fn truncated_file_is_format_error() {
        let bytes = encode(&sample(4, 8)).unwrap();
        assert!(decode(&bytes[..10]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn round_trip_is_bit_exact(len in 2usize..12, d in 1usize..16, seed in 0u64..100) {
            let v = |i: u64| IdentityVector {
                values: synthetic_identity_vector(d, "X", i, 0.5, seed, seed),
                backend_id: "b".into(),
            };
            let seq = EmbeddingSequence::new("x", (0..len as u64).map(v).collect(), v(77)).unwrap();
            let back = decode(&encode(&seq).unwrap()).unwrap();
            for (a, b) in back.vectors.iter().zip(&seq.vectors) {
                let same = a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits());
                proptest::prop_assert!(same);
            }
            proptest::prop_assert_eq!(back, seq);
        }
    }
}
