//! Binary latent files.
//!
//! Layout: `MEVG`, a version byte, the dims `F c h w` as little-endian `u32`,
//! then every value as a little-endian `f32` in frame-major, row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{MevgError, Result};
use crate::latent::{LatentDims, VideoLatent};

pub const MAGIC: &[u8; 4] = b"MEVG";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 16;

pub fn encode_latent(latent: &VideoLatent) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * latent.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for d in latent.dims().as_array() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in latent.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_latent(bytes: &[u8]) -> Result<VideoLatent> {
    if bytes.len() < HEADER_LEN {
        return Err(MevgError::LatentFormat(format!(
            "file too short ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(MevgError::LatentFormat("bad magic bytes".into()));
    }
    if bytes[4] != VERSION {
        return Err(MevgError::LatentFormat(format!(
            "unsupported version {}",
            bytes[4]
        )));
    }
    let mut d = [0usize; 4];
    for (i, chunk) in bytes[5..HEADER_LEN].chunks_exact(4).enumerate() {
        d[i] = u32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as usize;
    }
    let dims = LatentDims::new(d[0], d[1], d[2], d[3]);
    let body = &bytes[HEADER_LEN..];
    let expected = dims
        .len()
        .checked_mul(4)
        .ok_or_else(|| MevgError::LatentFormat("dims overflow".into()))?;
    if body.len() != expected {
        return Err(MevgError::LatentFormat(format!(
            "dims {dims} need {expected} payload bytes, found {}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    VideoLatent::new(dims, data)
}

pub fn read_latent(path: &Path) -> Result<VideoLatent> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_latent(&bytes)
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| MevgError::Io(e.error))?;
    Ok(())
}

pub fn write_latent(path: &Path, latent: &VideoLatent) -> Result<()> {
    write_atomic(path, &encode_latent(latent))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let v = VideoLatent::new(LatentDims::new(1, 1, 1, 2), vec![1.0, -2.5]).unwrap();
        let b = encode_latent(&v);
        assert_eq!(&b[..5], b"MEVG\x01");
        assert_eq!(&b[5..9], &1u32.to_le_bytes());
        assert_eq!(&b[17..21], &2u32.to_le_bytes());
        assert_eq!(&b[21..25], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 29);
    }

    #[test]
    fn rejects_corrupt_files() {
        let v = VideoLatent::zeros(LatentDims::new(2, 1, 2, 2));
        let b = encode_latent(&v);
        assert!(decode_latent(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode_latent(&bad).is_err());
        let mut bad = b;
        bad[4] = 9;
        assert!(decode_latent(&bad).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clip.latent");
        let v = VideoLatent::new(
            LatentDims::new(2, 1, 1, 3),
            vec![0.5, 1.0, -1.0, 3.0, 1e-30, -7.25],
        )
        .unwrap();
        write_latent(&p, &v).unwrap();
        assert_eq!(read_latent(&p).unwrap(), v);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    proptest! {
        #[test]
        fn codec_is_identity(f in 1usize..4, c in 1usize..4, h in 1usize..4, w in 1usize..4, seed in any::<u64>()) {
            use rand::SeedableRng;
            let dims = LatentDims::new(f, c, h, w);
            let v = VideoLatent::standard_normal(dims, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let back = decode_latent(&encode_latent(&v)).unwrap();
            prop_assert!(back.as_slice().iter().zip(v.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
