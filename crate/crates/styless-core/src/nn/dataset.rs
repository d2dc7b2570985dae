//! In-memory dataset and the SLDS file format.
//!
//! Layout: magic `SLDS`, u32 record count, u32 class count, then per record a
//! u8 label followed by the raw little-endian float32 image (3x32x32).
//! Images are stored as f32 so the on-disk and in-memory pipelines see the
//! same values; they widen to f64 when entering a tape.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const DATASET_MAGIC: &[u8; 4] = b"SLDS";
/// The fixed record geometry the format implies.
pub const IMAGE_SHAPE: (usize, usize, usize) = (3, 32, 32);
pub const IMAGE_LEN: usize = 3 * 32 * 32;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes: expected SLDS")]
    BadMagic,
    #[error("file length does not match {count} records of {expected} bytes")]
    BadLength { count: u32, expected: usize },
    #[error("record {index} has label {label} but class count is {classes}")]
    LabelOutOfRange {
        index: usize,
        label: u8,
        classes: u32,
    },
    #[error("image {index} has length {len}, expected {expected}")]
    BadImageLength {
        index: usize,
        len: usize,
        expected: usize,
    },
}

/// Labelled images, pixels in [0, 1].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<Vec<f32>>,
    pub labels: Vec<u8>,
    pub num_classes: u32,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Image widened to f64 for tape work.
    pub fn image_f64(&self, index: usize) -> Vec<f64> {
        self.images[index].iter().map(|&v| v as f64).collect()
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index] as usize
    }

    /// First `n` records as a shallow slice of indices.
    pub fn head_indices(&self, n: usize) -> Vec<usize> {
        (0..self.len().min(n)).collect()
    }

    fn validate(&self) -> Result<(), DatasetError> {
        for (index, img) in self.images.iter().enumerate() {
            if img.len() != IMAGE_LEN {
                return Err(DatasetError::BadImageLength {
                    index,
                    len: img.len(),
                    expected: IMAGE_LEN,
                });
            }
        }
        for (index, &label) in self.labels.iter().enumerate() {
            if u32::from(label) >= self.num_classes {
                return Err(DatasetError::LabelOutOfRange {
                    index,
                    label,
                    classes: self.num_classes,
                });
            }
        }
        Ok(())
    }
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), DatasetError> {
    dataset.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&(dataset.len() as u32).to_le_bytes())?;
    w.write_all(&dataset.num_classes.to_le_bytes())?;
    for (img, &label) in dataset.images.iter().zip(&dataset.labels) {
        w.write_all(&[label])?;
        for &v in img {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf);
    r.read_exact(&mut u32buf)?;
    let num_classes = u32::from_le_bytes(u32buf);

    let mut images = Vec::with_capacity(count as usize);
    let mut labels = Vec::with_capacity(count as usize);
    let mut record = vec![0u8; 1 + IMAGE_LEN * 4];
    for index in 0..count as usize {
        if let Err(e) = r.read_exact(&mut record) {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                return Err(DatasetError::BadLength {
                    count,
                    expected: record.len(),
                });
            }
            return Err(e.into());
        }
        let label = record[0];
        if u32::from(label) >= num_classes {
            return Err(DatasetError::LabelOutOfRange {
                index,
                label,
                classes: num_classes,
            });
        }
        let img: Vec<f32> = record[1..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        images.push(img);
        labels.push(label);
    }
    // Trailing bytes mean the file does not match the fixed record size.
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(DatasetError::BadLength {
            count,
            expected: record.len(),
        });
    }
    Ok(Dataset {
        images,
        labels,
        num_classes,
    })
}
