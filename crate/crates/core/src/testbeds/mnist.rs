//! IDX (MNIST) reader.

use std::path::{Path, PathBuf};

use super::logreg::Dataset;
use crate::error::{PsgdError, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn fmt(msg: impl Into<String>) -> PsgdError {
    PsgdError::Format(msg.into())
}

fn header(bytes: &[u8], magic: u32, ndims: usize) -> Result<Vec<usize>> {
    let word = |i: usize| -> Result<u32> {
        let b = bytes.get(4 * i..4 * i + 4).ok_or_else(|| fmt("truncated IDX header"))?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    };
    let found = word(0)?;
    if found != magic {
        return Err(fmt(format!("bad IDX magic {found:#010x}, expected {magic:#010x}")));
    }
    (1..=ndims).map(|i| word(i).map(|w| w as usize)).collect()
}

/// Parses an IDX3 image file into `(rows, cols, pixels)` with pixels scaled to `[0, 1]`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let dims = header(bytes, IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let size = rows * cols;
    let body = &bytes[16..];
    if body.len() != count * size {
        return Err(fmt(format!("image payload has {} bytes, header promises {}", body.len(), count * size)));
    }
    let images =
        body.chunks_exact(size.max(1)).take(count).map(|c| c.iter().map(|&p| p as f64 / 255.0).collect()).collect();
    Ok((rows, cols, images))
}

/// Parses an IDX1 label file; labels must lie in `0..=9`.
pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let count = header(bytes, LABELS_MAGIC, 1)?[0];
    let body = &bytes[8..];
    if body.len() != count {
        return Err(fmt(format!("label payload has {} bytes, header promises {count}", body.len())));
    }
    if let Some(bad) = body.iter().find(|&&l| l > 9) {
        return Err(fmt(format!("label {bad} outside 0..=9")));
    }
    Ok(body.to_vec())
}

pub fn parse(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (rows, cols, images) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if rows != cols {
        return Err(fmt(format!("images are {rows}x{cols}, expected square")));
    }
    if images.len() != labels.len() {
        return Err(fmt(format!("{} images but {} labels", images.len(), labels.len())));
    }
    Dataset::new(rows, images, labels, 10)
}

pub fn mnist_load(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    parse(&std::fs::read(images_path)?, &std::fs::read(labels_path)?)
}

/// Loads `(train, test)` from the canonical file names in `dir`.
pub fn load_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let p = |name: &str| -> PathBuf { dir.join(name) };
    let train = mnist_load(&p("train-images-idx3-ubyte"), &p("train-labels-idx1-ubyte"))?;
    let test = mnist_load(&p("t10k-images-idx3-ubyte"), &p("t10k-labels-idx1-ubyte"))?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(magic: u32, count: u32, side: u32, payload: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for w in [magic, count, side, side] {
            b.extend_from_slice(&w.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    fn labels(count: u32, payload: &[u8]) -> Vec<u8> {
        let mut b = LABELS_MAGIC.to_be_bytes().to_vec();
        b.extend_from_slice(&count.to_be_bytes());
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn parses_small_file() {
        let img = images(IMAGES_MAGIC, 2, 2, &[0, 255, 51, 0, 1, 2, 3, 4]);
        let ds = parse(&img, &labels(2, &[3, 9])).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.side(), 2);
        assert_eq!(ds.image(0), &[0.0, 1.0, 0.2, 0.0]);
        assert_eq!(ds.labels(), &[3, 9]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let img = images(0x0000_0802, 1, 2, &[0; 4]);
        assert!(matches!(parse_images(&img), Err(PsgdError::Format(_))));
        assert!(parse_images(&images(IMAGES_MAGIC, 2, 2, &[0; 7])).is_err());
        assert!(parse_images(&[0, 0, 8]).is_err());
        assert!(parse_labels(&labels(2, &[1, 10])).is_err());
        let img = images(IMAGES_MAGIC, 2, 2, &[0; 8]);
        assert!(parse(&img, &labels(3, &[1, 2, 3])).is_err());
    }

    #[test]
    fn missing_files_are_io_errors() {
        let err = load_dir(Path::new("/nonexistent/psgd")).unwrap_err();
        assert!(matches!(err, PsgdError::Io(_)));
    }
}
