//! MNIST IDX file handling, the complementary two-minicolumn input code,
//! and PGM image output.
//!
//! Every pixel becomes one input hypercolumn with two minicolumns carrying
//! `(x, 1 - x)` for intensity `x = value / 255`, so each hypercolumn is a
//! valid probability distribution without binarizing the image.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{BcpnnError, Result};
use crate::geometry::{ActivityBatch, ActivityVector, LayerGeometry};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
/// IDX magic for unsigned-byte rank-3 tensors (image files).
pub const IMAGES_MAGIC: u32 = 0x0000_0803;
/// IDX magic for unsigned-byte rank-1 tensors (label files).
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// The fixed input-layer shape: one hypercolumn per pixel, two minicolumns.
pub fn input_geometry() -> LayerGeometry {
    LayerGeometry::new(IMAGE_PIXELS, 2).unwrap()
}

/// One 28x28 grayscale digit image with an optional class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub pixels: Vec<u8>,
    pub label: Option<u8>,
}

impl RawImage {
    pub fn new(pixels: Vec<u8>, label: Option<u8>) -> Result<Self> {
        if pixels.len() != IMAGE_PIXELS {
            return Err(BcpnnError::InvalidParameter(format!(
                "image has {} pixels, expected {IMAGE_PIXELS}",
                pixels.len()
            )));
        }
        if let Some(l) = label {
            if l > 9 {
                return Err(BcpnnError::InvalidParameter(format!(
                    "label {l} out of range"
                )));
            }
        }
        Ok(Self { pixels, label })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * IMAGE_SIDE + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * IMAGE_SIDE + x] = v;
    }
}

fn read_u32_be(data: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let bytes: [u8; 4] = data
        .get(offset..offset + 4)
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| BcpnnError::Parse {
            file: path.to_path_buf(),
            offset: offset as u64,
            message: "file truncated in header".into(),
        })?;
    Ok(u32::from_be_bytes(bytes))
}

/// Parses an IDX image file: big-endian magic 0x00000803, count, rows, cols,
/// then row-major pixel bytes.
pub fn load_idx_images(path: &Path) -> Result<Vec<Vec<u8>>> {
    let data = fs::read(path).map_err(|e| BcpnnError::io(path, e))?;
    let magic = read_u32_be(&data, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(BcpnnError::Parse {
            file: path.to_path_buf(),
            offset: 0,
            message: format!("bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let count = read_u32_be(&data, 4, path)? as usize;
    let rows = read_u32_be(&data, 8, path)? as usize;
    let cols = read_u32_be(&data, 12, path)? as usize;
    if count > 0 && (rows != IMAGE_SIDE || cols != IMAGE_SIDE) {
        return Err(BcpnnError::Parse {
            file: path.to_path_buf(),
            offset: 8,
            message: format!("unsupported image size {rows}x{cols}, expected 28x28"),
        });
    }
    let need = 16 + count * rows * cols;
    if data.len() < need {
        return Err(BcpnnError::Parse {
            file: path.to_path_buf(),
            offset: data.len() as u64,
            message: format!("file truncated: {} bytes, need {need}", data.len()),
        });
    }
    Ok((0..count)
        .map(|i| data[16 + i * rows * cols..16 + (i + 1) * rows * cols].to_vec())
        .collect())
}

/// Parses an IDX label file: big-endian magic 0x00000801, count, then bytes.
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let data = fs::read(path).map_err(|e| BcpnnError::io(path, e))?;
    let magic = read_u32_be(&data, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(BcpnnError::Parse {
            file: path.to_path_buf(),
            offset: 0,
            message: format!("bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }
    let count = read_u32_be(&data, 4, path)? as usize;
    let need = 8 + count;
    if data.len() < need {
        return Err(BcpnnError::Parse {
            file: path.to_path_buf(),
            offset: data.len() as u64,
            message: format!("file truncated: {} bytes, need {need}", data.len()),
        });
    }
    Ok(data[8..8 + count].to_vec())
}

/// Loads an image/label file pair into labeled images.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<RawImage>> {
    let images = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(BcpnnError::Parse {
            file: images_path.to_path_buf(),
            offset: 4,
            message: format!(
                "{} images but {} labels in {}",
                images.len(),
                labels.len(),
                labels_path.display()
            ),
        });
    }
    images
        .into_iter()
        .zip(labels)
        .map(|(pixels, label)| RawImage::new(pixels, Some(label)))
        .collect()
}

pub fn write_idx_images(path: &Path, images: &[RawImage]) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + images.len() * IMAGE_PIXELS);
    buf.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    buf.extend_from_slice(&(images.len() as u32).to_be_bytes());
    buf.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    buf.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    for img in images {
        buf.extend_from_slice(&img.pixels);
    }
    fs::write(path, buf).map_err(|e| BcpnnError::io(path, e))
}

pub fn write_idx_labels(path: &Path, images: &[RawImage]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + images.len());
    buf.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    buf.extend_from_slice(&(images.len() as u32).to_be_bytes());
    for img in images {
        buf.push(img.label.ok_or_else(|| {
            BcpnnError::InvalidParameter("cannot write labels for unlabeled images".into())
        })?);
    }
    fs::write(path, buf).map_err(|e| BcpnnError::io(path, e))
}

/// Pixel `k` becomes hypercolumn `k` with activities `(x, 1 - x)`,
/// `x = intensity / 255`.
pub fn encode_image(image: &RawImage) -> ActivityVector {
    let geometry = input_geometry();
    let mut values = Vec::with_capacity(geometry.total_units());
    for &p in &image.pixels {
        let x = p as f64 / 255.0;
        values.push(x);
        values.push(1.0 - x);
    }
    ActivityVector::from_normalized(geometry, values)
}

pub(crate) fn encode_image_into(pixels: &[u8], out: &mut [f64]) {
    for (k, &p) in pixels.iter().enumerate() {
        let x = p as f64 / 255.0;
        out[2 * k] = x;
        out[2 * k + 1] = 1.0 - x;
    }
}

/// Per-pixel "on"-minicolumn activations of an input-layer activity; the
/// 784-dimensional view used for image similarity and reconstruction
/// readout.
pub fn on_unit_values(activity: &ActivityVector) -> Vec<f64> {
    let g = activity.geometry();
    debug_assert_eq!(g.minicolumns(), 2);
    activity.values().iter().step_by(2).copied().collect()
}

/// Converts on-unit activations back to pixel bytes for visualization.
pub fn on_units_to_pixels(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Source-file provenance kept with a loaded dataset.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetMetadata {
    pub images_path: Option<PathBuf>,
    pub labels_path: Option<PathBuf>,
    pub images_crc32: u32,
    pub labels_crc32: u32,
}

/// A set of digit images exposed as input-layer activities. Images are kept
/// as bytes; the complementary code is materialized on access (it is a pure
/// function of the pixels, so repeated access is identical).
#[derive(Debug, Clone)]
pub struct EncodedDataset {
    images: Vec<RawImage>,
    metadata: DatasetMetadata,
}

impl EncodedDataset {
    pub fn from_images(images: Vec<RawImage>) -> Self {
        Self {
            images,
            metadata: DatasetMetadata::default(),
        }
    }

    pub fn load(images_path: &Path, labels_path: &Path) -> Result<Self> {
        let images = load_idx(images_path, labels_path)?;
        let images_crc32 =
            crc32fast::hash(&fs::read(images_path).map_err(|e| BcpnnError::io(images_path, e))?);
        let labels_crc32 =
            crc32fast::hash(&fs::read(labels_path).map_err(|e| BcpnnError::io(labels_path, e))?);
        Ok(Self {
            images,
            metadata: DatasetMetadata {
                images_path: Some(images_path.to_path_buf()),
                labels_path: Some(labels_path.to_path_buf()),
                images_crc32,
                labels_crc32,
            },
        })
    }

    #[inline]
    pub fn geometry(&self) -> LayerGeometry {
        input_geometry()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.images.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    #[inline]
    pub fn image(&self, k: usize) -> &RawImage {
        &self.images[k]
    }

    pub fn images(&self) -> &[RawImage] {
        &self.images
    }

    #[inline]
    pub fn label(&self, k: usize) -> Option<u8> {
        self.images[k].label
    }

    pub fn metadata(&self) -> &DatasetMetadata {
        &self.metadata
    }

    pub fn activity(&self, k: usize) -> ActivityVector {
        encode_image(&self.images[k])
    }

    /// Encoded activities for the given sample indices, in order.
    pub fn batch(&self, indices: &[usize]) -> ActivityBatch {
        ActivityBatch::from_rows_parallel(self.geometry(), indices.len(), |k, row| {
            encode_image_into(&self.images[indices[k]].pixels, row);
        })
    }

    /// Keeps only the first `limit` samples (no-op when `limit` is zero or
    /// past the end).
    pub fn truncate(&mut self, limit: usize) {
        if limit > 0 && limit < self.images.len() {
            self.images.truncate(limit);
        }
    }
}

/// Writes a binary PGM (P5, maxval 255) 28x28 image.
pub fn write_pgm(path: &Path, pixels: &[u8]) -> Result<()> {
    debug_assert_eq!(pixels.len(), IMAGE_PIXELS);
    let mut buf = Vec::with_capacity(IMAGE_PIXELS + 16);
    write!(buf, "P5\n{IMAGE_SIDE} {IMAGE_SIDE}\n255\n").expect("in-memory write");
    buf.extend_from_slice(pixels);
    fs::write(path, buf).map_err(|e| BcpnnError::io(path, e))
}
