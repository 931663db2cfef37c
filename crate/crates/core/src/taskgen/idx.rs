//! Reader for the IDX image/label container format used by the MNIST
//! distribution: big-endian magic, dimension sizes, then raw bytes.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};

use crate::error::{Error, Result};
use crate::real::Real;

use super::Corpus;

/// Which half of the dataset directory to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn dataset_err(field: &str, message: String) -> Error {
    Error::Dataset { field: field.into(), message }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        // Absent files stay io errors (with the kind intact) so callers can
        // tell "not downloaded" from "present but malformed".
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        } else {
            dataset_err("path", format!("{}: {e}", path.display()))
        }
    })
}

fn read_images(path: &Path) -> Result<(Vec<Vec<u8>>, usize, usize)> {
    let mut r = open(path)?;
    let magic = r
        .read_u32::<BigEndian>()
        .map_err(|e| dataset_err("magic", format!("{}: {e}", path.display())))?;
    if magic != IMAGE_MAGIC {
        return Err(dataset_err("magic", format!("{}: got {magic:#010x}, expected {IMAGE_MAGIC:#010x}", path.display())));
    }
    let count = r.read_u32::<BigEndian>().map_err(|e| dataset_err("count", e.to_string()))? as usize;
    let rows = r.read_u32::<BigEndian>().map_err(|e| dataset_err("rows", e.to_string()))? as usize;
    let cols = r.read_u32::<BigEndian>().map_err(|e| dataset_err("cols", e.to_string()))? as usize;
    if rows == 0 || cols == 0 {
        return Err(dataset_err("rows", format!("{}: empty image shape {rows}x{cols}", path.display())));
    }
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| dataset_err("pixels", e.to_string()))?;
    if raw.len() != count * rows * cols {
        return Err(dataset_err(
            "pixels",
            format!("{}: {} bytes for {count} images of {rows}x{cols}", path.display(), raw.len()),
        ));
    }
    let images = raw.chunks_exact(rows * cols).map(|c| c.to_vec()).collect();
    Ok((images, rows, cols))
}

fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let mut r = open(path)?;
    let magic = r
        .read_u32::<BigEndian>()
        .map_err(|e| dataset_err("magic", format!("{}: {e}", path.display())))?;
    if magic != LABEL_MAGIC {
        return Err(dataset_err("magic", format!("{}: got {magic:#010x}, expected {LABEL_MAGIC:#010x}", path.display())));
    }
    let count = r.read_u32::<BigEndian>().map_err(|e| dataset_err("count", e.to_string()))? as usize;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| dataset_err("labels", e.to_string()))?;
    if raw.len() != count {
        return Err(dataset_err("labels", format!("{}: {} bytes for {count} labels", path.display(), raw.len())));
    }
    Ok(raw)
}

/// Average-pool an image by an integer factor; rows and columns must divide
/// evenly.
fn pool(img: &[u8], rows: usize, cols: usize, k: usize) -> Vec<f64> {
    let (pr, pc) = (rows / k, cols / k);
    let mut out = vec![0.0; pr * pc];
    for i in 0..pr {
        for j in 0..pc {
            let mut s = 0.0;
            for di in 0..k {
                for dj in 0..k {
                    s += img[(i * k + di) * cols + (j * k + dj)] as f64;
                }
            }
            out[i * pc + j] = s / (k * k) as f64 / 255.0;
        }
    }
    out
}

/// Load an MNIST-format directory (`train-images-idx3-ubyte` and friends)
/// into a corpus, optionally average-pooling each image by `downsample`.
/// Pixels are scaled to [0, 1].
pub fn load_mnist<T: Real>(dir: &Path, split: Split, downsample: usize) -> Result<Corpus<T>> {
    if downsample == 0 {
        return Err(Error::InvalidArgument("downsample factor must be at least 1".into()));
    }
    let images_path = dir.join(format!("{}-images-idx3-ubyte", split.prefix()));
    let labels_path = dir.join(format!("{}-labels-idx1-ubyte", split.prefix()));
    let (raw_images, rows, cols) = read_images(&images_path)?;
    let raw_labels = read_labels(&labels_path)?;
    if raw_images.len() != raw_labels.len() {
        return Err(dataset_err(
            "count",
            format!("{} images but {} labels in {}", raw_images.len(), raw_labels.len(), dir.display()),
        ));
    }
    if rows % downsample != 0 || cols % downsample != 0 {
        return Err(Error::InvalidArgument(format!(
            "downsample factor {downsample} does not divide image shape {rows}x{cols}"
        )));
    }

    let images: Vec<Vec<T>> = raw_images
        .iter()
        .map(|img| pool(img, rows, cols, downsample).into_iter().map(T::of).collect())
        .collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let n_classes = 1 + labels.iter().copied().max().unwrap_or(0);
    Corpus::new(images, labels, n_classes)
}
