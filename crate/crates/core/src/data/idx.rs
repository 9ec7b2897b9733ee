//! IDX image/label file decoding (big-endian, unsigned-byte payloads).

use std::path::Path;

use crate::data::DatasetG;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::TensorG;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::IdxFormat {
            path: path.display().to_string(),
            reason: format!("truncated before {what}"),
        });
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

/// Decode an image/label file pair into a dataset with pixels scaled by
/// 1/255. Images use magic 0x00000803 with dims (N, H, W); labels use magic
/// 0x00000801 with dim (N).
pub fn load_idx<S: Scalar>(images_path: &Path, labels_path: &Path) -> Result<DatasetG<S>> {
    let img_bytes = std::fs::read(images_path)
        .map_err(|e| Error::io(images_path.display().to_string(), e))?;
    let magic = be_u32(&img_bytes, 0, images_path, "magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::IdxFormat {
            path: images_path.display().to_string(),
            reason: format!("bad magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}"),
        });
    }
    let n = be_u32(&img_bytes, 4, images_path, "count")? as usize;
    let h = be_u32(&img_bytes, 8, images_path, "height")? as usize;
    let w = be_u32(&img_bytes, 12, images_path, "width")? as usize;
    let expected = 16 + n * h * w;
    if img_bytes.len() != expected {
        return Err(Error::IdxFormat {
            path: images_path.display().to_string(),
            reason: format!("payload is {} bytes, expected {}", img_bytes.len(), expected),
        });
    }

    let lbl_bytes = std::fs::read(labels_path)
        .map_err(|e| Error::io(labels_path.display().to_string(), e))?;
    let magic = be_u32(&lbl_bytes, 0, labels_path, "magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::IdxFormat {
            path: labels_path.display().to_string(),
            reason: format!("bad magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}"),
        });
    }
    let n_labels = be_u32(&lbl_bytes, 4, labels_path, "count")? as usize;
    if n_labels != n {
        return Err(Error::IdxFormat {
            path: labels_path.display().to_string(),
            reason: format!("{n_labels} labels for {n} images"),
        });
    }
    if lbl_bytes.len() != 8 + n {
        return Err(Error::IdxFormat {
            path: labels_path.display().to_string(),
            reason: format!("payload is {} bytes, expected {}", lbl_bytes.len(), 8 + n),
        });
    }

    let scale = 1.0 / 255.0;
    let pixels: Vec<S> =
        img_bytes[16..].iter().map(|&b| S::from_f64c(b as f64 * scale)).collect();
    let labels: Vec<usize> = lbl_bytes[8..].iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;

    let images = TensorG::new(vec![n, 1, h, w], pixels)?;
    DatasetG::new(images, labels, num_classes.max(2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_bytes(n: u32, h: u32, w: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        out.extend_from_slice(&n.to_be_bytes());
        out.extend_from_slice(&h.to_be_bytes());
        out.extend_from_slice(&w.to_be_bytes());
        out.extend_from_slice(pixels);
        out
    }

    fn label_bytes(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    fn write_pair(images: &[u8], labels: &[u8]) -> (tempfile::TempDir, std::path::PathBuf, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("images.idx3-ubyte");
        let lp = dir.path().join("labels.idx1-ubyte");
        std::fs::write(&ip, images).unwrap();
        std::fs::write(&lp, labels).unwrap();
        (dir, ip, lp)
    }

    #[test]
    fn decodes_two_images() {
        let pixels: Vec<u8> = (0..2 * 28 * 28).map(|i| (i % 256) as u8).collect();
        let (_dir, ip, lp) = write_pair(&image_bytes(2, 28, 28, &pixels), &label_bytes(&[3, 7]));
        let ds = load_idx::<f64>(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.images.shape(), &[2, 1, 28, 28]);
        assert_eq!(ds.labels, vec![3, 7]);
    }

    #[test]
    fn pixel_255_becomes_exactly_one() {
        let (_dir, ip, lp) = write_pair(&image_bytes(1, 1, 2, &[255, 0]), &label_bytes(&[1]));
        let ds = load_idx::<f64>(&ip, &lp).unwrap();
        assert_eq!(ds.images.data(), &[1.0, 0.0]);
    }

    #[test]
    fn rejects_label_count_mismatch() {
        let pixels = vec![0u8; 2 * 4];
        let (_dir, ip, lp) = write_pair(&image_bytes(2, 2, 2, &pixels), &label_bytes(&[1]));
        let err = load_idx::<f64>(&ip, &lp).unwrap_err();
        assert!(matches!(err, Error::IdxFormat { .. }), "{err}");
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = image_bytes(1, 2, 2, &[0; 4]);
        bytes[3] = 0x99;
        let (_dir, ip, lp) = write_pair(&bytes, &label_bytes(&[0]));
        let err = load_idx::<f64>(&ip, &lp).unwrap_err();
        assert!(matches!(err, Error::IdxFormat { .. }));
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut bytes = image_bytes(2, 2, 2, &[0; 8]);
        bytes.truncate(bytes.len() - 3);
        let (_dir, ip, lp) = write_pair(&bytes, &label_bytes(&[0, 1]));
        let err = load_idx::<f64>(&ip, &lp).unwrap_err();
        assert!(matches!(err, Error::IdxFormat { .. }));
    }
}
