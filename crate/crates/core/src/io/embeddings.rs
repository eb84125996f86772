use std::path::Path;

use super::binary::{check_preamble, put_f64s, put_preamble, put_string, Reader};
use crate::data::Sample;
use crate::{Error, FormatError, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"AVFE";
pub const EMBEDDING_VERSION: u16 = 1;

/// Contents of an embedding file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub d_audio: usize,
    pub d_video: usize,
    pub samples: Vec<Sample>,
}

/// Layout: preamble, `d_audio: u32`, `d_video: u32`, `count: u64`, then per
/// record the identity and sample ids (u32 length + UTF-8) followed by the
/// audio and video values as f64.
pub fn encode_embeddings(samples: &[Sample]) -> Result<Vec<u8>> {
    let (da, dv) = samples.first().map_or((0, 0), |s| (s.audio.len(), s.video.len()));
    let mut out = Vec::with_capacity(24 + samples.len() * (8 * (da + dv) + 32));
    put_preamble(&mut out, EMBEDDING_MAGIC, EMBEDDING_VERSION);
    out.extend_from_slice(&(da as u32).to_le_bytes());
    out.extend_from_slice(&(dv as u32).to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        if s.identity_id.is_empty() || s.sample_id.is_empty() {
            return Err(Error::Degenerate("embedding records need nonempty identifiers".into()));
        }
        if s.audio.len() != da || s.video.len() != dv {
            return Err(Error::shape(
                "embedding record",
                format!("{da}/{dv}"),
                format!("{}/{} in {}", s.audio.len(), s.video.len(), s.sample_id),
            ));
        }
        put_string(&mut out, &s.identity_id);
        put_string(&mut out, &s.sample_id);
        put_f64s(&mut out, &s.audio);
        put_f64s(&mut out, &s.video);
    }
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingFile, FormatError> {
    let mut r = Reader::new(bytes);
    check_preamble(&mut r, EMBEDDING_MAGIC, EMBEDDING_VERSION)?;
    let da = r.u32("d_audio")? as usize;
    let dv = r.u32("d_video")? as usize;
    let count = r.u64("count")?;
    // every record needs at least its two length prefixes and values
    let min_record = 8 + 8 * (da + dv);
    if count.saturating_mul(min_record as u64) > bytes.len() as u64 {
        return Err(FormatError::Dimension(format!(
            "header declares {count} records of {da}+{dv} values, file has {} bytes",
            bytes.len()
        )));
    }
    let mut samples = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let identity_id = r.string("identity id")?;
        let sample_id = r.string("sample id")?;
        if identity_id.is_empty() || sample_id.is_empty() {
            return Err(FormatError::Record("empty identifier".into()));
        }
        let audio = r.f64s(da, "audio values")?;
        let video = r.f64s(dv, "video values")?;
        if audio.iter().chain(&video).any(|x| !x.is_finite()) {
            return Err(FormatError::Record(format!("non-finite value in {sample_id}")));
        }
        samples.push(Sample {
            identity_id,
            sample_id,
            audio,
            video,
        });
    }
    r.finish()?;
    Ok(EmbeddingFile {
        d_audio: da,
        d_video: dv,
        samples,
    })
}

pub fn write_embeddings(path: &Path, samples: &[Sample]) -> Result<()> {
    super::write_bytes(path, &encode_embeddings(samples)?)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingFile> {
    decode_embeddings(&super::read_bytes(path)?).map_err(|source| Error::Format {
        path: path.into(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn samples(n: usize, da: usize, dv: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                identity_id: format!("id{}", i % 3),
                sample_id: format!("s{i}"),
                audio: (0..da).map(|k| (i * 31 + k) as f64 / 7.0).collect(),
                video: (0..dv).map(|k| -((i + k) as f64).sqrt()).collect(),
            })
            .collect()
    }

    #[test]
    fn empty_file_is_valid() {
        let bytes = encode_embeddings(&[]).unwrap();
        let f = decode_embeddings(&bytes).unwrap();
        assert_eq!(f.samples.len(), 0);
        assert_eq!(bytes.len(), 24);
    }

    #[test]
    fn distinct_errors() {
        let good = encode_embeddings(&samples(3, 2, 3)).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_embeddings(&bad), Err(FormatError::BadMagic(_))));
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(decode_embeddings(&bad), Err(FormatError::Version(9))));
        let mut bad = good.clone();
        bad[6] = 2;
        assert!(matches!(decode_embeddings(&bad), Err(FormatError::ByteOrder(2))));
        assert!(matches!(decode_embeddings(&good[..good.len() - 3]), Err(FormatError::Truncated(_))));
        let mut bad = good.clone();
        bad[16..24].copy_from_slice(&1_000_000u64.to_le_bytes());
        assert!(matches!(decode_embeddings(&bad), Err(FormatError::Dimension(_))));
        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(decode_embeddings(&bad), Err(FormatError::Trailing)));
        assert!(matches!(decode_embeddings(&good[..3]), Err(FormatError::Truncated(_))));
    }

    #[test]
    fn inconsistent_dimensions_are_rejected_on_write() {
        let mut s = samples(2, 2, 2);
        s[1].audio.push(1.0);
        assert!(encode_embeddings(&s).is_err());
    }

    #[test]
    fn file_round_trip_with_path_context() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("e.avfe");
        let s = samples(5, 4, 2);
        write_embeddings(&p, &s).unwrap();
        assert_eq!(read_embeddings(&p).unwrap().samples, s);
        std::fs::write(&p, b"junkjunkjunk").unwrap();
        let err = read_embeddings(&p).unwrap_err();
        assert!(err.to_string().contains("e.avfe"));
        assert_eq!(err.class(), crate::ErrorClass::Data);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn round_trip_is_bit_exact(
            raw in prop::collection::vec(
                (prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 3),
                 prop::collection::vec(-1e300f64..1e300, 2),
                 "[a-z0-9]{1,6}"),
                0..40),
        ) {
            let s: Vec<Sample> = raw
                .into_iter()
                .enumerate()
                .map(|(i, (a, v, id))| Sample { identity_id: id, sample_id: format!("x{i}"), audio: a, video: v })
                .collect();
            let back = decode_embeddings(&encode_embeddings(&s).unwrap()).unwrap().samples;
            prop_assert_eq!(back.len(), s.len());
            for (x, y) in back.iter().zip(&s) {
                prop_assert_eq!(&x.identity_id, &y.identity_id);
                prop_assert!(x.audio.iter().zip(&y.audio).all(|(p, q)| p.to_bits() == q.to_bits()));
                prop_assert!(x.video.iter().zip(&y.video).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
        }
    }

    #[test]
    fn thousand_samples_round_trip() {
        let s = samples(1000, 16, 32);
        assert_eq!(decode_embeddings(&encode_embeddings(&s).unwrap()).unwrap().samples, s);
    }
}
