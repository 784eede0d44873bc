//! File formats and dataset handling.

mod binio;
pub mod checkpoint;
pub mod fmap;
pub mod manifest;
pub mod pgm;
pub mod resize;
pub mod synth;

use std::path::Path;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use fmap::{decode_feature_map, encode_feature_map, load_feature_map, save_feature_map};
pub use manifest::{load_manifest, parse_manifest, write_manifest, SampleRecord, Split};
pub use pgm::{encode_pgm, parse_pgm, read_pgm, write_pgm};
pub use resize::{resize_bilinear, resize_nearest};
pub use synth::{generate_samples, generate_synthetic_dataset, SynthConfig, SynthSample};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// A loaded image with its optional binary lesion mask, both `1 x S x S`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub mask: Option<Tensor>,
    pub label: u8,
}

impl From<SynthSample> for Sample {
    fn from(s: SynthSample) -> Self {
        Sample {
            image: s.image,
            mask: Some(s.mask),
            label: s.label,
        }
    }
}

/// Reads one record, resizing to `size x size` (bilinear for the image,
/// nearest for the mask) when needed. Mask pixels are binarized at 0.5.
pub fn load_sample(record: &SampleRecord, size: usize) -> Result<Sample> {
    let raw = read_pgm(&record.image)?;
    let image = fit(&raw, size, resize_bilinear);
    let mask = match &record.mask {
        None => None,
        Some(path) => {
            let m = read_pgm(path)?;
            if m.dims() != raw.dims() {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    offset: 0,
                    msg: format!(
                        "mask dims {:?} differ from image dims {:?}",
                        m.dims(),
                        raw.dims()
                    ),
                });
            }
            let mut m = fit(&m, size, resize_nearest);
            for v in m.data_mut() {
                *v = if *v >= 0.5 { 1.0 } else { 0.0 };
            }
            Some(m)
        }
    };
    Ok(Sample {
        image,
        mask,
        label: record.label,
    })
}

fn fit(t: &Tensor, size: usize, resize: fn(&Tensor, usize, usize) -> Tensor) -> Tensor {
    if t.dims()[1] == size && t.dims()[2] == size {
        t.clone()
    } else {
        resize(t, size, size)
    }
}

pub fn load_split(records: &[SampleRecord], split: Split, size: usize) -> Result<Vec<Sample>> {
    records
        .iter()
        .filter(|r| r.split == split)
        .map(|r| load_sample(r, size))
        .collect()
}

/// Loads the manifest at `path` and the samples of one split.
pub fn load_manifest_split(
    path: impl AsRef<Path>,
    split: Split,
    size: usize,
) -> Result<Vec<Sample>> {
    load_split(&load_manifest(path)?, split, size)
}
