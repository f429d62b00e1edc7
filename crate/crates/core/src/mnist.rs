//! Reduced MNIST: standard IDX files, center-cropped from 28x28 to 20x20
//! and normalized, served as flat 400-component rows.

use crate::error::{Error, Result};
use flate2::read::GzDecoder;
use ndarray::Array2;
use std::io::Read;
use std::path::Path;

pub const IMAGE_SIDE: usize = 28;
pub const CROP_SIDE: usize = 20;
pub const CROP_MARGIN: usize = 4;
pub const INPUT_DIM: usize = CROP_SIDE * CROP_SIDE;

/// Normalization constants applied after scaling raw bytes to [0, 1].
pub const PIXEL_MEAN: f64 = 0.1307;
pub const PIXEL_SCALE: f64 = 0.3801;

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

/// Cropped, normalized image rows plus digit labels for both splits.
#[derive(Debug, Clone)]
pub struct ReducedMnist {
    /// (n, 400) rows, normalized.
    pub train_images: Array2<f64>,
    pub train_labels: Vec<u8>,
    pub test_images: Array2<f64>,
    pub test_labels: Vec<u8>,
}

pub fn normalize_pixel(raw: u8) -> f64 {
    (raw as f64 / 255.0 - PIXEL_MEAN) / PIXEL_SCALE
}

/// Inverse of [`normalize_pixel`] up to float rounding, returning the
/// [0, 1]-scaled value.
pub fn denormalize_pixel(v: f64) -> f64 {
    v * PIXEL_SCALE + PIXEL_MEAN
}

fn data_error(path: &Path, detail: impl Into<String>) -> Error {
    Error::DataFormat {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

/// Reads `<dir>/<base>`, falling back to `<dir>/<base>.gz`.
fn read_maybe_gz(dir: &Path, base: &str) -> Result<Vec<u8>> {
    let plain = dir.join(base);
    if plain.exists() {
        return Ok(std::fs::read(plain)?);
    }
    let gz = dir.join(format!("{base}.gz"));
    if !gz.exists() {
        return Err(data_error(
            &plain,
            "file not found (neither plain nor .gz)",
        ));
    }
    let mut out = Vec::new();
    GzDecoder::new(std::fs::File::open(&gz)?)
        .read_to_end(&mut out)
        .map_err(|e| data_error(&gz, format!("gzip decode failed: {e}")))?;
    Ok(out)
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| data_error(path, "truncated header"))
}

fn parse_images(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(data_error(path, format!("bad image magic {magic}")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(data_error(path, format!("expected 28x28, got {rows}x{cols}")));
    }
    let data = &bytes[16..];
    if data.len() != n * rows * cols {
        return Err(data_error(
            path,
            format!("expected {} pixels, got {}", n * rows * cols, data.len()),
        ));
    }
    let mut out = Array2::zeros((n, INPUT_DIM));
    for i in 0..n {
        let img = &data[i * rows * cols..(i + 1) * rows * cols];
        for r in 0..CROP_SIDE {
            for c in 0..CROP_SIDE {
                let px = img[(r + CROP_MARGIN) * cols + (c + CROP_MARGIN)];
                out[[i, r * CROP_SIDE + c]] = normalize_pixel(px);
            }
        }
    }
    Ok(out)
}

fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(data_error(path, format!("bad label magic {magic}")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let data = &bytes[8..];
    if data.len() != n {
        return Err(data_error(
            path,
            format!("expected {n} labels, got {}", data.len()),
        ));
    }
    if let Some(&bad) = data.iter().find(|&&l| l > 9) {
        return Err(data_error(path, format!("label {bad} out of range")));
    }
    Ok(data.to_vec())
}

/// Loads the four standard IDX files (plain or gzipped) from `dir`.
pub fn load_reduced_mnist(dir: &Path) -> Result<ReducedMnist> {
    let load_split = |images: &str, labels: &str| -> Result<(Array2<f64>, Vec<u8>)> {
        let imgs = parse_images(&read_maybe_gz(dir, images)?, &dir.join(images))?;
        let lbls = parse_labels(&read_maybe_gz(dir, labels)?, &dir.join(labels))?;
        if imgs.nrows() != lbls.len() {
            return Err(data_error(
                &dir.join(images),
                format!("{} images vs {} labels", imgs.nrows(), lbls.len()),
            ));
        }
        Ok((imgs, lbls))
    };
    let (train_images, train_labels) =
        load_split("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?;
    let (test_images, test_labels) = load_split("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?;
    Ok(ReducedMnist {
        train_images,
        train_labels,
        test_images,
        test_labels,
    })
}

/// Directory of the vendored MNIST files inside this repository; test and
/// benchmark helper.
pub fn vendored_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_header(n: u32) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        v.extend_from_slice(&n.to_be_bytes());
        v.extend_from_slice(&28u32.to_be_bytes());
        v.extend_from_slice(&28u32.to_be_bytes());
        v
    }

    #[test]
    fn normalization_constants_and_inverse() {
        let v = normalize_pixel(0);
        assert!((v - (0.0 - 0.1307) / 0.3801).abs() < 1e-15);
        assert!((v + 0.34385687976848197).abs() < 1e-12);
        for raw in [0u8, 1, 17, 128, 254, 255] {
            let round_trip = denormalize_pixel(normalize_pixel(raw));
            assert!((round_trip - raw as f64 / 255.0).abs() < 1e-15);
        }
    }

    #[test]
    fn crop_takes_center_window() {
        let mut bytes = image_header(1);
        let mut img = vec![0u8; 28 * 28];
        // Distinct values at the crop corners and just outside them.
        img[4 * 28 + 4] = 100;
        img[23 * 28 + 23] = 200;
        img[3 * 28 + 4] = 255;
        img[4 * 28 + 3] = 255;
        bytes.extend_from_slice(&img);
        let out = parse_images(&bytes, Path::new("mem")).unwrap();
        assert_eq!(out.shape(), &[1, 400]);
        assert!((out[[0, 0]] - normalize_pixel(100)).abs() < 1e-15);
        assert!((out[[0, 399]] - normalize_pixel(200)).abs() < 1e-15);
        // The 255s sit outside the crop, so no cropped pixel carries them.
        let hot = normalize_pixel(255);
        assert!(out.iter().all(|&v| (v - hot).abs() > 1e-9));
    }

    #[test]
    fn header_and_size_validation() {
        let mut bad_magic = image_header(1);
        bad_magic[3] = 7;
        bad_magic.extend_from_slice(&[0u8; 28 * 28]);
        assert!(parse_images(&bad_magic, Path::new("mem")).is_err());

        let mut truncated = image_header(2);
        truncated.extend_from_slice(&[0u8; 28 * 28]);
        assert!(parse_images(&truncated, Path::new("mem")).is_err());

        let mut labels = Vec::new();
        labels.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        labels.extend_from_slice(&3u32.to_be_bytes());
        labels.extend_from_slice(&[1, 2, 11]);
        assert!(parse_labels(&labels, Path::new("mem")).is_err());
        labels[8 + 2] = 9;
        assert_eq!(parse_labels(&labels, Path::new("mem")).unwrap(), vec![1, 2, 9]);
    }

    #[test]
    fn vendored_dataset_loads_with_expected_shape() {
        let m = load_reduced_mnist(&vendored_dir()).unwrap();
        assert_eq!(m.train_images.shape(), &[60_000, 400]);
        assert_eq!(m.test_images.shape(), &[10_000, 400]);
        assert_eq!(m.train_labels.len(), 60_000);
        assert_eq!(m.test_labels.len(), 10_000);
        assert!(m.train_labels.iter().all(|&l| l <= 9));
        // Background pixels dominate; the most common value must be the
        // normalized zero.
        let zero = normalize_pixel(0);
        let zeros = m
            .test_images
            .iter()
            .filter(|&&v| (v - zero).abs() < 1e-15)
            .count();
        assert!(zeros > m.test_images.len() / 2);
    }
}
