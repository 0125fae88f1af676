//! Reader and writer for the big-endian IDX format used by the MNIST files.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::DataError;
use crate::real::Real;
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| DataError::Truncated(format!("{what}: header ends at byte {}", bytes.len())))
}

/// Labels from an IDX1 byte stream.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(DataError::BadMagic { expected: LABELS_MAGIC, found: magic });
    }
    let count = be_u32(bytes, 4, "labels")? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(DataError::Truncated(format!("labels: expected {count} bytes, found {}", payload.len())));
    }
    let labels = payload[..count].to_vec();
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(DataError::Invalid(format!("label {bad} outside 0..=9")));
    }
    Ok(labels)
}

/// Images from an IDX3 byte stream as an (n, 1, rows, cols) tensor scaled to [0, 1].
pub fn parse_idx_images<T: Real>(bytes: &[u8]) -> Result<Tensor<T>, DataError> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::BadMagic { expected: IMAGES_MAGIC, found: magic });
    }
    let count = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let needed = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < needed {
        return Err(DataError::Truncated(format!("images: expected {needed} pixel bytes, found {}", payload.len())));
    }
    if count == 0 || rows == 0 || cols == 0 {
        return Err(DataError::Invalid(format!("empty image file ({count} x {rows} x {cols})")));
    }
    let scale = T::from_f64_lossy(255.0);
    let data = payload[..needed].iter().map(|&b| T::from_f64_lossy(b as f64) / scale).collect();
    Ok(Tensor::new(vec![count, 1, rows, cols], data)?)
}

/// Parses a matching image/label pair.
pub fn parse_idx<T: Real>(images: &[u8], labels: &[u8]) -> Result<(Tensor<T>, Vec<u8>), DataError> {
    let inputs = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if inputs.batch_size() != labels.len() {
        return Err(DataError::CountMismatch { images: inputs.batch_size(), labels: labels.len() });
    }
    Ok((inputs, labels))
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Encodes an (n, 1, rows, cols) tensor of [0, 1] values, rounding to the nearest byte.
pub fn encode_idx_images<T: Real>(images: &Tensor<T>) -> Vec<u8> {
    let shape = images.shape();
    let (rows, cols) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let mut out = Vec::with_capacity(16 + images.len());
    for v in [IMAGES_MAGIC, images.batch_size() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(images.data().iter().map(|v| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

/// Reads a file, transparently inflating it when the name ends in `.gz`.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, DataError> {
    let io = |e: std::io::Error| DataError::Io(format!("{}: {e}", path.display()));
    let file = File::open(path).map_err(io)?;
    let mut bytes = Vec::new();
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(BufReader::new(file)).read_to_end(&mut bytes).map_err(io)?;
    } else {
        BufReader::new(file).read_to_end(&mut bytes).map_err(io)?;
    }
    Ok(bytes)
}

pub fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let io = |e: std::io::Error| DataError::Io(format!("{}: {e}", path.display()));
    let file = File::create(path).map_err(io)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes).map_err(io)?;
        enc.finish().map_err(io)?;
    } else {
        let mut file = file;
        file.write_all(bytes).map_err(io)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// Loads one split from a directory holding the standard MNIST file names,
/// with or without `.gz` suffixes.
pub fn load_mnist_split<T: Real>(dir: &Path, split: Split) -> Result<(Tensor<T>, Vec<u8>), DataError> {
    let find = |stem: String| -> Result<std::path::PathBuf, DataError> {
        for name in [format!("{stem}.gz"), stem.clone()] {
            let p = dir.join(&name);
            if p.exists() {
                return Ok(p);
            }
        }
        Err(DataError::Io(format!("{}: no file named {stem}[.gz]", dir.display())))
    };
    let images = read_maybe_gz(&find(format!("{}-images-idx3-ubyte", split.prefix()))?)?;
    let labels = read_maybe_gz(&find(format!("{}-labels-idx1-ubyte", split.prefix()))?)?;
    parse_idx(&images, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_three_labels() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 3, 7, 2, 1];
        assert_eq!(parse_idx_labels(&bytes).unwrap(), vec![7, 2, 1]);
    }

    #[test]
    fn full_byte_scales_to_one() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 2];
        bytes.extend([255, 0]);
        let t: Tensor<f64> = parse_idx_images(&bytes).unwrap();
        assert_eq!(t.shape(), &[1, 1, 1, 2]);
        assert_eq!(t.data(), &[1.0, 0.0]);
    }

    #[test]
    fn distinct_errors() {
        let labels = encode_idx_labels(&[1, 2, 3]);
        let images = encode_idx_images(&Tensor::<f64>::zeros(vec![2, 1, 28, 28]));
        assert!(matches!(parse_idx::<f64>(&images, &labels), Err(DataError::CountMismatch { images: 2, labels: 3 })));
        assert!(matches!(parse_idx::<f64>(&labels, &labels), Err(DataError::BadMagic { .. })));
        assert!(matches!(parse_idx_images::<f64>(&images[..100]), Err(DataError::Truncated(_))));
        assert!(matches!(parse_idx_labels(&labels[..9]), Err(DataError::Truncated(_))));
        assert!(matches!(parse_idx_labels(&[0, 0]), Err(DataError::Truncated(_))));
        assert!(matches!(parse_idx_labels(&encode_idx_labels(&[12])), Err(DataError::Invalid(_))));
    }

    #[test]
    fn gz_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.gz");
        write_maybe_gz(&path, b"hello idx").unwrap();
        assert_eq!(read_maybe_gz(&path).unwrap(), b"hello idx");
    }

    proptest! {
        #[test]
        fn byte_images_survive_encode_parse(pixels in prop::collection::vec(any::<u8>(), 784 * 2)) {
            let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 28, 0, 0, 0, 28];
            bytes.extend(&pixels);
            let t: Tensor<f32> = parse_idx_images(&bytes).unwrap();
            prop_assert_eq!(encode_idx_images(&t), bytes);
        }
    }
}
