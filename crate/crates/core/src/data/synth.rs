//! Synthetic lesion images.
//!
//! Class 0 images are Gaussian background noise. Class 1 images add `k`
//! Gaussian bumps `A·exp(−ln 6·d²/r²)`, whose contribution crosses the mask
//! threshold 0.1 exactly at distance `r`. With `position_dependent` set, lesion
//! centres are kept at least `1.5·r` above the horizontal midline so the
//! whole lesion lies in the top half, and class 0 images receive the mirrored
//! bumps in the bottom half with an empty mask: the two classes then differ
//! only in where the bumps are.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, SampleRecord, Split};
use super::pgm::write_pgm;
use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::numeric::{stream, Rng, Tensor};

pub const MASK_THRESHOLD: f64 = 0.1;
/// Keeps the tails of up to three bumps below the mask threshold across the midline.
const MIDLINE_MARGIN: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub image_size: usize,
    pub lesion_count_range: (usize, usize),
    pub lesion_radius_px: (f64, f64),
    pub lesion_amplitude: f64,
    pub background_mean: f64,
    pub background_std: f64,
    pub position_dependent: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_per_class: 100,
            image_size: 64,
            lesion_count_range: (1, 3),
            lesion_radius_px: (3.0, 8.0),
            lesion_amplitude: 0.6,
            background_mean: 0.2,
            background_std: 0.05,
            position_dependent: false,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let d = BackboneConfig::default().downsample();
        if self.image_size == 0 || !self.image_size.is_multiple_of(d) {
            return Err(Error::Config(format!(
                "image size {} must be a positive multiple of {d}",
                self.image_size
            )));
        }
        let (rlo, rhi) = self.lesion_radius_px;
        if !(rlo >= 1.0 && rlo <= rhi) {
            return Err(Error::Config(format!(
                "lesion radii ({rlo}, {rhi}) must satisfy 1 <= lo <= hi"
            )));
        }
        let (clo, chi) = self.lesion_count_range;
        if clo == 0 || clo > chi {
            return Err(Error::Config(format!(
                "lesion count range ({clo}, {chi}) must satisfy 1 <= lo <= hi"
            )));
        }
        if self.position_dependent && MIDLINE_MARGIN * rhi > self.image_size as f64 / 2.0 {
            return Err(Error::Config(format!(
                "image size {} too small to keep radius-{rhi} lesions in the top half",
                self.image_size
            )));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        2 * self.n_per_class
    }
}

/// Split of record `index` out of `total`: first 80% train, next 10% val, rest test.
pub fn split_for_index(index: usize, total: usize) -> Split {
    let n_train = total * 8 / 10;
    let n_val = total / 10;
    if index < n_train {
        Split::Train
    } else if index < n_train + n_val {
        Split::Val
    } else {
        Split::Test
    }
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub image: Tensor,
    pub mask: Tensor,
    pub label: u8,
    pub split: Split,
}

struct Bump {
    cy: f64,
    cx: f64,
    r: f64,
}

fn draw_bumps(cfg: &SynthConfig, rng: &mut Rng, mirrored: bool) -> Vec<Bump> {
    let s = cfg.image_size as f64;
    let (clo, chi) = cfg.lesion_count_range;
    let k = clo + rng.below(chi - clo + 1);
    (0..k)
        .map(|_| {
            let r = rng.uniform(cfg.lesion_radius_px.0, cfg.lesion_radius_px.1);
            let cy = if cfg.position_dependent {
                rng.uniform(0.0, s / 2.0 - MIDLINE_MARGIN * r)
            } else {
                rng.uniform(0.0, s)
            };
            let cx = rng.uniform(0.0, s);
            let cy = if mirrored { s - 1.0 - cy } else { cy };
            Bump { cy, cx, r }
        })
        .collect()
}

fn render(cfg: &SynthConfig, rng: &mut Rng, label: u8) -> (Tensor, Tensor) {
    let n = cfg.image_size;
    let mut image = Tensor::zeros(&[1, n, n]);
    for v in image.data_mut() {
        *v = rng.gauss(cfg.background_mean, cfg.background_std);
    }
    let bumps = match (label, cfg.position_dependent) {
        (1, _) => draw_bumps(cfg, rng, false),
        (_, true) => draw_bumps(cfg, rng, true),
        _ => Vec::new(),
    };
    let mut mask = Tensor::zeros(&[1, n, n]);
    for y in 0..n {
        for x in 0..n {
            let mut contribution = 0.0;
            for b in &bumps {
                let d2 = (y as f64 - b.cy).powi(2) + (x as f64 - b.cx).powi(2);
                contribution += cfg.lesion_amplitude * (-(6f64.ln()) * d2 / (b.r * b.r)).exp();
            }
            let i = y * n + x;
            let px = &mut image.data_mut()[i];
            *px = (*px + contribution).clamp(0.0, 1.0);
            if label == 1 && contribution > MASK_THRESHOLD {
                mask.data_mut()[i] = 1.0;
            }
        }
    }
    (image, mask)
}

/// Renders every record in memory. Record `k` has label `k % 2`.
pub fn generate_samples(cfg: &SynthConfig) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    let mut rng = Rng::derive(cfg.seed, stream::SYNTH);
    let total = cfg.total();
    Ok((0..total)
        .map(|k| {
            let label = (k % 2) as u8;
            let (image, mask) = render(cfg, &mut rng, label);
            SynthSample {
                image,
                mask,
                label,
                split: split_for_index(k, total),
            }
        })
        .collect())
}

/// Writes `images/NNNNN.pgm`, `masks/NNNNN.pgm` and `manifest.jsonl` under
/// `out_dir` and returns the manifest path.
pub fn generate_synthetic_dataset(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    let samples = generate_samples(cfg)?;
    for sub in ["images", "masks"] {
        let dir = out_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut records = Vec::with_capacity(samples.len());
    for (k, s) in samples.iter().enumerate() {
        let image = PathBuf::from(format!("images/{k:05}.pgm"));
        let mask = PathBuf::from(format!("masks/{k:05}.pgm"));
        write_pgm(&s.image, out_dir.join(&image))?;
        write_pgm(&s.mask, out_dir.join(&mask))?;
        records.push(SampleRecord {
            image,
            mask: Some(mask),
            label: s.label,
            split: s.split,
        });
    }
    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&records, &manifest)?;
    Ok(manifest)
}
