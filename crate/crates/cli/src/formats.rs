//! Binary file formats: NMNF feature files and NMNP parameter
//! checkpoints. Both are little-endian and round-trip bit-exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Read, Write};

use nmn_core::executor::FeatureSet;
use nmn_core::guidance::BBox;
use nmn_core::params::ParameterStore;
use nmn_core::tensor::{Real, Tensor};

pub const NMNF_MAGIC: &[u8; 4] = b"NMNF";
pub const NMNP_MAGIC: &[u8; 4] = b"NMNP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug)]
pub enum FormatError {
    Io(io::Error),
    BadMagic { found: [u8; 4] },
    UnsupportedVersion(u32),
    Truncated,
    BadString,
    DimMismatch { what: String },
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatError::Io(e) => write!(f, "io error: {e}"),
            FormatError::BadMagic { found } => {
                write!(f, "bad magic {:?}", String::from_utf8_lossy(found))
            }
            FormatError::UnsupportedVersion(v) => write!(f, "unsupported format version {v}"),
            FormatError::Truncated => write!(f, "truncated file"),
            FormatError::BadString => write!(f, "invalid UTF-8 in string field"),
            FormatError::DimMismatch { what } => write!(f, "dimension mismatch: {what}"),
        }
    }
}

impl std::error::Error for FormatError {}

impl From<io::Error> for FormatError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            FormatError::Truncated
        } else {
            FormatError::Io(e)
        }
    }
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<(), FormatError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f32<W: Write>(w: &mut W, v: f32) -> Result<(), FormatError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<(), FormatError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, FormatError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32, FormatError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, FormatError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn write_string<W: Write>(w: &mut W, s: &str) -> Result<(), FormatError> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_string<R: Read>(r: &mut R) -> Result<String, FormatError> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| FormatError::BadString)
}

fn check_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<(), FormatError> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found)?;
    if &found != magic {
        return Err(FormatError::BadMagic { found });
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    Ok(())
}

/// Writes a feature set: magic, version, d, n_boxes, box coordinates,
/// visual features (f32, column-major), then text-argument embeddings in
/// sorted argument order.
pub fn write_nmnf<W: Write>(w: &mut W, features: &FeatureSet) -> Result<(), FormatError> {
    let (d, n) = (features.visual.rows(), features.visual.cols());
    w.write_all(NMNF_MAGIC)?;
    write_u32(w, FORMAT_VERSION)?;
    write_u32(w, d as u32)?;
    write_u32(w, n as u32)?;
    for b in &features.boxes {
        for v in [b.x1, b.y1, b.x2, b.y2] {
            write_f32(w, v as f32)?;
        }
    }
    for j in 0..n {
        for i in 0..d {
            write_f32(w, features.visual.get(i, j) as f32)?;
        }
    }
    write_u32(w, features.text_args.len() as u32)?;
    for (arg, emb) in &features.text_args {
        write_string(w, arg)?;
        for i in 0..d {
            write_f32(w, emb.data()[i] as f32)?;
        }
    }
    Ok(())
}

/// Reads an NMNF file. The answer vocabulary is dataset-level metadata
/// (the format carries no vocabulary section) and is supplied by the
/// caller.
pub fn read_nmnf<R: Read>(
    r: &mut R,
    answer_vocab: Vec<String>,
) -> Result<FeatureSet, FormatError> {
    check_magic(r, NMNF_MAGIC)?;
    let d = read_u32(r)? as usize;
    let n = read_u32(r)? as usize;
    if d == 0 || n == 0 {
        return Err(FormatError::DimMismatch {
            what: format!("d = {d}, n_boxes = {n}"),
        });
    }
    let mut boxes = Vec::with_capacity(n);
    for _ in 0..n {
        let x1 = read_f32(r)? as f64;
        let y1 = read_f32(r)? as f64;
        let x2 = read_f32(r)? as f64;
        let y2 = read_f32(r)? as f64;
        boxes.push(BBox::new(x1, y1, x2, y2));
    }
    let mut visual = Tensor::zeros(d, n);
    for j in 0..n {
        for i in 0..d {
            visual.set(i, j, read_f32(r)? as Real);
        }
    }
    let n_args = read_u32(r)? as usize;
    let mut text_args = BTreeMap::new();
    for _ in 0..n_args {
        let arg = read_string(r)?;
        let mut data = Vec::with_capacity(d);
        for _ in 0..d {
            data.push(read_f32(r)? as Real);
        }
        text_args.insert(arg, Tensor::column(&data));
    }
    Ok(FeatureSet {
        boxes,
        visual,
        text_args,
        answer_vocab,
    })
}

/// Writes a parameter checkpoint: magic, version, slot count, then per
/// slot a length-prefixed name, rank, dims, and the raw f64 payload.
pub fn write_checkpoint<W: Write>(w: &mut W, store: &ParameterStore) -> Result<(), FormatError> {
    w.write_all(NMNP_MAGIC)?;
    write_u32(w, FORMAT_VERSION)?;
    write_u32(w, store.len() as u32)?;
    for (name, value) in store.iter() {
        write_string(w, name)?;
        write_u32(w, value.shape().len() as u32)?;
        for &dim in value.shape() {
            write_u32(w, dim as u32)?;
        }
        for &v in value.data() {
            write_f64(w, v as f64)?;
        }
    }
    Ok(())
}

/// Reads a checkpoint into a fresh store (optimizer state starts clean).
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<ParameterStore, FormatError> {
    check_magic(r, NMNP_MAGIC)?;
    let count = read_u32(r)? as usize;
    let mut slots = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_string(r)?;
        let rank = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(read_f64(r)? as Real);
        }
        let tensor = Tensor::new(shape, data).map_err(|e| FormatError::DimMismatch {
            what: e.to_string(),
        })?;
        slots.push((name, tensor));
    }
    ParameterStore::from_slots(0, slots).map_err(|e| FormatError::DimMismatch {
        what: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nmn_core::modules::{register_parameters, ModelDims};
    use nmn_core::program::Catalog;

    fn sample_features() -> FeatureSet {
        let d = 5;
        let n = 3;
        let mut text_args = BTreeMap::new();
        text_args.insert("cat".to_string(), Tensor::column(&[0.5, -0.25, 0.125, 1.0, 0.0]));
        text_args.insert("red".to_string(), Tensor::column(&[1.5, 2.5, -3.5, 0.0, 0.75]));
        let visual = Tensor::new(
            vec![d, n],
            (0..d * n).map(|i| (i as Real) * 0.25 - 1.5).collect(),
        )
        .unwrap();
        FeatureSet {
            boxes: vec![
                BBox::new(0.0, 0.0, 0.25, 0.25),
                BBox::new(0.5, 0.5, 0.75, 1.0),
                BBox::new(0.125, 0.25, 0.5, 0.625),
            ],
            visual,
            text_args,
            answer_vocab: vec!["yes".into(), "no".into()],
        }
    }

    #[test]
    fn nmnf_round_trip_is_bit_exact() {
        let f = sample_features();
        let mut bytes = Vec::new();
        write_nmnf(&mut bytes, &f).unwrap();
        let g = read_nmnf(&mut bytes.as_slice(), f.answer_vocab.clone()).unwrap();
        let mut bytes2 = Vec::new();
        write_nmnf(&mut bytes2, &g).unwrap();
        assert_eq!(bytes, bytes2, "write-read-write must be byte-identical");
        assert_eq!(f.boxes.len(), g.boxes.len());
        assert_eq!(f.visual, g.visual, "f32-exact values survive");
        assert_eq!(f.text_args, g.text_args);
    }

    #[test]
    fn nmnf_rejects_bad_magic_and_truncation() {
        let err = read_nmnf(&mut &b"XXXX\x01\x00\x00\x00"[..], vec![]).unwrap_err();
        assert!(matches!(err, FormatError::BadMagic { .. }));

        let f = sample_features();
        let mut bytes = Vec::new();
        write_nmnf(&mut bytes, &f).unwrap();
        bytes.truncate(bytes.len() - 3);
        let err = read_nmnf(&mut bytes.as_slice(), vec![]).unwrap_err();
        assert!(matches!(err, FormatError::Truncated));
    }

    #[test]
    fn nmnf_rejects_wrong_version() {
        let f = sample_features();
        let mut bytes = Vec::new();
        write_nmnf(&mut bytes, &f).unwrap();
        bytes[4] = 9;
        let err = read_nmnf(&mut bytes.as_slice(), vec![]).unwrap_err();
        assert!(matches!(err, FormatError::UnsupportedVersion(9)));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut store = ParameterStore::new(21);
        register_parameters(
            &mut store,
            &Catalog::standard(),
            &ModelDims {
                d: 6,
                n_boxes: 4,
                n_answers: 5,
            },
        )
        .unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &store).unwrap();
        let restored = read_checkpoint(&mut bytes.as_slice()).unwrap();
        let mut bytes2 = Vec::new();
        write_checkpoint(&mut bytes2, &restored).unwrap();
        assert_eq!(bytes, bytes2);
        assert_eq!(store.len(), restored.len());
        for ((n1, t1), (n2, t2)) in store.iter().zip(restored.iter()) {
            assert_eq!(n1, n2, "slot order preserved");
            assert_eq!(t1, t2, "values bit-exact");
        }
    }
}
