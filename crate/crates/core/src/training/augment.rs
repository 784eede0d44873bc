//! Geometric and intensity augmentation. Image and mask always receive the
//! same flip and rotation; only the image is intensity-jittered.

use serde::{Deserialize, Serialize};

use crate::numeric::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub flip_prob: f64,
    /// Rotation drawn from `U(-rotate_deg, rotate_deg)`.
    pub rotate_deg: f64,
    pub jitter_scale: (f64, f64),
    pub jitter_shift: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            flip_prob: 0.5,
            rotate_deg: 15.0,
            jitter_scale: (0.9, 1.1),
            jitter_shift: (-0.05, 0.05),
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            enabled: false,
            ..AugmentConfig::default()
        }
    }
}

/// One concrete set of random choices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub angle_rad: f64,
    pub scale: f64,
    pub shift: f64,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        flip: false,
        angle_rad: 0.0,
        scale: 1.0,
        shift: 0.0,
    };

    pub fn sample(cfg: &AugmentConfig, rng: &mut Rng) -> Self {
        let flip = rng.next_f64() < cfg.flip_prob;
        let deg = rng.uniform(-cfg.rotate_deg, cfg.rotate_deg);
        let scale = rng.uniform(cfg.jitter_scale.0, cfg.jitter_scale.1);
        let shift = rng.uniform(cfg.jitter_shift.0, cfg.jitter_shift.1);
        AugmentDraw {
            flip,
            angle_rad: deg.to_radians(),
            scale,
            shift,
        }
    }
}

pub fn augment(
    image: &Tensor,
    mask: Option<&Tensor>,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> (Tensor, Option<Tensor>) {
    if !cfg.enabled {
        return (image.clone(), mask.cloned());
    }
    let draw = AugmentDraw::sample(cfg, rng);
    apply(image, mask, &draw)
}

pub fn apply(
    image: &Tensor,
    mask: Option<&Tensor>,
    draw: &AugmentDraw,
) -> (Tensor, Option<Tensor>) {
    let mut img = image.clone();
    let mut msk = mask.cloned();
    if draw.flip {
        img = hflip(&img);
        msk = msk.map(|m| hflip(&m));
    }
    img = rotate(&img, draw.angle_rad, Sampling::Bilinear);
    msk = msk.map(|m| rotate(&m, draw.angle_rad, Sampling::Nearest));
    for v in img.data_mut() {
        *v = (*v * draw.scale + draw.shift).clamp(0.0, 1.0);
    }
    (img, msk)
}

fn plane_dims(t: &Tensor) -> (usize, usize) {
    let d = t.dims();
    (d[d.len() - 2], d[d.len() - 1])
}

/// Mirror columns.
pub fn hflip(t: &Tensor) -> Tensor {
    let (h, w) = plane_dims(t);
    let mut out = t.clone();
    let planes = t.len() / (h * w);
    for p in 0..planes {
        for y in 0..h {
            let row = &t.data()[(p * h + y) * w..(p * h + y + 1) * w];
            let dst = &mut out.data_mut()[(p * h + y) * w..(p * h + y + 1) * w];
            for (d, s) in dst.iter_mut().zip(row.iter().rev()) {
                *d = *s;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Bilinear,
    Nearest,
}

/// Rotation about the image center by inverse mapping: output `(y, x)`
/// reads the input at the back-rotated coordinate; samples outside the frame
/// read 0.
pub fn rotate(t: &Tensor, angle_rad: f64, sampling: Sampling) -> Tensor {
    let (h, w) = plane_dims(t);
    let planes = t.len() / (h * w);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = angle_rad.sin_cos();
    let mut out = Tensor::zeros(t.dims());
    for p in 0..planes {
        let src = &t.data()[p * h * w..(p + 1) * h * w];
        let at = |y: isize, x: isize| -> f64 {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                0.0
            } else {
                src[y as usize * w + x as usize]
            }
        };
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let sy = cy + cos * dy - sin * dx;
                let sx = cx + sin * dy + cos * dx;
                let v = match sampling {
                    Sampling::Nearest => at(sy.round() as isize, sx.round() as isize),
                    Sampling::Bilinear => {
                        let (y0, x0) = (sy.floor(), sx.floor());
                        let (fy, fx) = (sy - y0, sx - x0);
                        let (y0, x0) = (y0 as isize, x0 as isize);
                        let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
                        let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
                        top * (1.0 - fy) + bottom * fy
                    }
                };
                out.data_mut()[(p * h + y) * w + x] = v;
            }
        }
    }
    out
}
