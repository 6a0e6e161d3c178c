//! `ADWF` feature container, little-endian:
//!
//! ```text
//! magic "ADWF" | version u16 = 1 | scale count u16
//! per scale: C u32 | H u32 | W u32 | C*H*W f32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{FeatureTensor, MultiScaleFeatures};
use crate::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"ADWF";
pub const FEATURE_VERSION: u16 = 1;

/// Refuse tensors above 2^31 values; larger headers are corrupt in practice.
const MAX_VALUES: u64 = 1 << 31;

pub fn encode_feature_file<W: Write>(mut w: W, tensors: &[FeatureTensor]) -> std::io::Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u16).to_le_bytes())?;
    for t in tensors {
        for d in [t.channels(), t.height(), t.width()] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.data().len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], scale: Option<usize>) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated { scale },
        _ => Error::io("<feature stream>", e),
    })
}

pub fn decode_feature_file<R: Read>(mut r: R) -> Result<Vec<FeatureTensor>> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, None)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected \"ADWF\""
        )));
    }
    let mut b2 = [0u8; 2];
    read_exact_or(&mut r, &mut b2, None)?;
    let version = u16::from_le_bytes(b2);
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!(
            "unsupported feature file version {version}"
        )));
    }
    read_exact_or(&mut r, &mut b2, None)?;
    let count = u16::from_le_bytes(b2) as usize;
    let mut out = Vec::with_capacity(count);
    for s in 0..count {
        let mut dims = [0u32; 3];
        for d in &mut dims {
            let mut b4 = [0u8; 4];
            read_exact_or(&mut r, &mut b4, Some(s))?;
            *d = u32::from_le_bytes(b4);
        }
        let n = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
            .unwrap_or(u64::MAX);
        if n > MAX_VALUES {
            return Err(Error::Format(format!(
                "scale {s}: dimensions {}x{}x{} overflow the value limit",
                dims[0], dims[1], dims[2]
            )));
        }
        let mut raw = vec![0u8; n as usize * 4];
        read_exact_or(&mut r, &mut raw, Some(s))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = FeatureTensor::new(dims[0] as usize, dims[1] as usize, dims[2] as usize, data)
            .map_err(|e| Error::Format(format!("scale {s}: {e}")))?;
        out.push(t);
    }
    let mut extra = [0u8; 1];
    match r.read(&mut extra) {
        Ok(0) => Ok(out),
        Ok(_) => Err(Error::Format("trailing bytes after last scale".into())),
        Err(e) => Err(Error::io("<feature stream>", e)),
    }
}

pub fn write_feature_file(path: &Path, tensors: &[FeatureTensor]) -> Result<()> {
    let mut buf = Vec::new();
    encode_feature_file(&mut buf, tensors).map_err(|e| Error::io(path, e))?;
    crate::io::write_atomic(path, &buf)
}

pub fn read_feature_file(path: &Path) -> Result<Vec<FeatureTensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_file(bytes.as_slice())
}

pub fn write_features(path: &Path, ms: &MultiScaleFeatures) -> Result<()> {
    write_feature_file(path, ms.scales())
}

pub fn read_features(path: &Path) -> Result<MultiScaleFeatures> {
    MultiScaleFeatures::new(read_feature_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RngStream;

    fn random_ms(seed: u64) -> MultiScaleFeatures {
        let mut rng = RngStream::new(seed);
        let mk = |h: usize, w: usize, rng: &mut RngStream| {
            FeatureTensor::new(
                3,
                h,
                w,
                (0..3 * h * w).map(|_| rng.normal() as f32).collect(),
            )
            .unwrap()
        };
        let a = mk(6, 5, &mut rng);
        let b = mk(3, 2, &mut rng);
        let c = mk(1, 1, &mut rng);
        MultiScaleFeatures::new(vec![a, b, c]).unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.adwf");
        let ms = random_ms(1);
        write_features(&p, &ms).unwrap();
        let back = read_features(&p).unwrap();
        for (a, b) in ms.scales().iter().zip(back.scales()) {
            let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
            assert_eq!(a.dims(), b.dims());
        }
    }

    #[test]
    fn header_layout_is_exact() {
        let t = FeatureTensor::new(1, 1, 2, vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        encode_feature_file(&mut buf, &[t]).unwrap();
        let mut expected = b"ADWF".to_vec();
        expected.extend([1, 0, 1, 0]);
        expected.extend([1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.0f32).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn wrong_magic() {
        let mut buf = Vec::new();
        encode_feature_file(&mut buf, random_ms(2).scales()).unwrap();
        buf[0] = b'X';
        assert!(matches!(
            decode_feature_file(buf.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn truncation_names_scale() {
        let ms = random_ms(3);
        let mut buf = Vec::new();
        encode_feature_file(&mut buf, ms.scales()).unwrap();
        // header, all of scale 0, the dims of scale 1 and 5 of its 18 values
        let cut = 8 + 12 + 90 * 4 + 12 + 5 * 4;
        match decode_feature_file(&buf[..cut]) {
            Err(Error::Truncated { scale: Some(1) }) => {}
            other => panic!("expected truncation at scale 1, got {other:?}"),
        }
        match decode_feature_file(&buf[..6]) {
            Err(Error::Truncated { scale: None }) => {}
            other => panic!("expected header truncation, got {other:?}"),
        }
    }

    #[test]
    fn dimension_overflow() {
        let mut buf = b"ADWF".to_vec();
        buf.extend([1, 0, 1, 0]);
        for _ in 0..3 {
            buf.extend(u32::MAX.to_le_bytes());
        }
        assert!(matches!(
            decode_feature_file(buf.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut buf = Vec::new();
        encode_feature_file(&mut buf, random_ms(4).scales()).unwrap();
        buf.push(0);
        assert!(decode_feature_file(buf.as_slice()).is_err());
    }
}
