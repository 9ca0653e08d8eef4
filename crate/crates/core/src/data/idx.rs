use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{DataKind, Dataset, LabelEncoder};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads a file, transparently inflating gzip content.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: bad gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses an unsigned-byte IDX container into its dimensions and payload.
pub fn parse_idx(bytes: &[u8], expected_magic: u32) -> Result<(Vec<usize>, &[u8])> {
    if bytes.len() < 4 {
        return Err(Error::Format("IDX file shorter than its magic number".into()));
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if magic != expected_magic {
        return Err(Error::Format(format!(
            "bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )));
    }
    let rank = (magic & 0xff) as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Format("truncated IDX header".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let total: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < total {
        return Err(Error::Format(format!(
            "truncated IDX payload: {} bytes for dimensions {dims:?}",
            payload.len()
        )));
    }
    Ok((dims, &payload[..total]))
}

/// Loads an IDX image/label pair as an `N x H x W x 1` image dataset with
/// raw pixel values in `[0, 255]`. Files may be gzip-compressed.
///
/// Classes are the distinct label bytes in ascending order unless a fixed
/// class list is given.
pub fn load_idx<T: Scalar>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    classes: Option<&[String]>,
) -> Result<Dataset<T>> {
    let image_bytes = read_maybe_gz(images_path.as_ref())?;
    let label_bytes = read_maybe_gz(labels_path.as_ref())?;
    from_idx_bytes(&image_bytes, &label_bytes, classes)
}

pub(crate) fn from_idx_bytes<T: Scalar>(
    image_bytes: &[u8],
    label_bytes: &[u8],
    classes: Option<&[String]>,
) -> Result<Dataset<T>> {
    let (dims, pixels) = parse_idx(image_bytes, IMAGES_MAGIC)?;
    let (ldims, labels) = parse_idx(label_bytes, LABELS_MAGIC)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    if ldims[0] != n {
        return Err(Error::Data(format!("{} labels for {n} images", ldims[0])));
    }

    let mut encoder = match classes {
        Some(fixed) => LabelEncoder::new(Some(fixed)),
        None => {
            let mut seen = [false; 256];
            for &b in labels {
                seen[b as usize] = true;
            }
            let names: Vec<String> = (0..256).filter(|&b| seen[b]).map(|b| b.to_string()).collect();
            LabelEncoder::new(Some(&names))
        }
    };
    let indices = labels
        .iter()
        .enumerate()
        .map(|(i, b)| {
            encoder
                .encode(&b.to_string())
                .ok_or_else(|| Error::Data(format!("label {b} of image {i} is not a known class")))
        })
        .collect::<Result<Vec<_>>>()?;

    let features = Tensor::new(vec![n, h, w, 1], pixels.iter().map(|&p| T::lit(f64::from(p))).collect())?;
    let kind = DataKind::Image { height: h, width: w, channels: 1 };
    Dataset::new(features, &indices, encoder.into_names(), kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Two 2x3 images and their labels, laid out byte by byte.
    const IMAGES: [u8; 28] = [
        0x00, 0x00, 0x08, 0x03, // magic
        0x00, 0x00, 0x00, 0x02, // count
        0x00, 0x00, 0x00, 0x02, // rows
        0x00, 0x00, 0x00, 0x03, // cols
        0, 1, 2, 127, 128, 255, //
        9, 8, 7, 6, 5, 4,
    ];
    const LABELS: [u8; 10] = [0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x02, 7, 3];

    #[test]
    fn hand_built_fixture() {
        let ds: Dataset<f64> = from_idx_bytes(&IMAGES, &LABELS, None).unwrap();
        assert_eq!(ds.features.shape(), &[2, 2, 3, 1]);
        assert_eq!(ds.features.data(), &[0.0, 1.0, 2.0, 127.0, 128.0, 255.0, 9.0, 8.0, 7.0, 6.0, 5.0, 4.0]);
        assert_eq!(ds.class_names, vec!["3", "7"]);
        assert_eq!(ds.class_indices(), vec![1, 0]);
        assert_eq!(ds.kind, DataKind::Image { height: 2, width: 3, channels: 1 });
    }

    #[test]
    fn gzip_and_plain_agree() {
        use flate2::{write::GzEncoder, Compression};
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let plain = dir.path().join("img");
        let gz = dir.path().join("img.gz");
        let labels = dir.path().join("lbl");
        fs::write(&plain, IMAGES).unwrap();
        fs::write(&labels, LABELS).unwrap();
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&IMAGES).unwrap();
        fs::write(&gz, enc.finish().unwrap()).unwrap();
        let a: Dataset<f64> = load_idx(&plain, &labels, None).unwrap();
        let b: Dataset<f64> = load_idx(&gz, &labels, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn count_mismatch_is_data_error() {
        let mut images = vec![0x00, 0x00, 0x08, 0x03];
        images.extend(10_000u32.to_be_bytes());
        images.extend(1u32.to_be_bytes());
        images.extend(1u32.to_be_bytes());
        images.extend((0..10_000).map(|i| (i % 256) as u8));
        let mut labels = vec![0x00, 0x00, 0x08, 0x01];
        labels.extend(9_999u32.to_be_bytes());
        labels.extend((0..9_999).map(|i| (i % 10) as u8));
        let err = from_idx_bytes::<f64>(&images, &labels, None).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err:?}");
    }

    #[test]
    fn bad_magic_and_truncation_are_format_errors() {
        let mut bad = IMAGES;
        bad[3] = 0x02;
        assert!(matches!(from_idx_bytes::<f64>(&bad, &LABELS, None), Err(Error::Format(_))));
        assert!(matches!(from_idx_bytes::<f64>(&IMAGES[..20], &LABELS, None), Err(Error::Format(_))));
        assert!(matches!(from_idx_bytes::<f64>(&IMAGES, &LABELS[..6], None), Err(Error::Format(_))));
    }

    #[test]
    fn mnist_subset_files() {
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data");
        let images = Path::new(dir).join("mnist-test-images-idx3-ubyte.gz");
        if !images.exists() {
            return;
        }
        let ds: Dataset<f32> = load_idx(&images, Path::new(dir).join("mnist-test-labels-idx1-ubyte.gz"), None).unwrap();
        assert_eq!(ds.features.shape(), &[2000, 28, 28, 1]);
        assert_eq!(ds.num_classes(), 10);
    }

    /// Set `GBNET_MNIST_DIR` to a directory holding the original training files.
    #[test]
    fn full_mnist_train_files() {
        let Some(dir) = std::env::var_os("GBNET_MNIST_DIR") else { return };
        let dir = Path::new(&dir);
        let find = |stem: &str| {
            let plain = dir.join(stem);
            if plain.exists() {
                plain
            } else {
                dir.join(format!("{stem}.gz"))
            }
        };
        let ds: Dataset<f32> =
            load_idx(find("train-images-idx3-ubyte"), find("train-labels-idx1-ubyte"), None).unwrap();
        assert_eq!(ds.features.shape(), &[60_000, 28, 28, 1]);
        assert_eq!(ds.num_classes(), 10);
    }
}
