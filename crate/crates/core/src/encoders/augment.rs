use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Pixels;
use crate::error::{Error, Result};

/// Random flip / rotation / translation / scale applied to training images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    pub flip_prob: f64,
    pub max_rotation_deg: f64,
    /// Largest shift as a fraction of the image side.
    pub max_translate_frac: f64,
    pub scale_range: [f64; 2],
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            max_rotation_deg: 15.0,
            max_translate_frac: 0.1,
            scale_range: [0.9, 1.1],
            seed: 0,
        }
    }
}

impl AugmentParams {
    pub fn disabled() -> Self {
        Self {
            flip_prob: 0.0,
            max_rotation_deg: 0.0,
            max_translate_frac: 0.0,
            scale_range: [1.0, 1.0],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        let ok = (0.0..=1.0).contains(&self.flip_prob)
            && self.max_rotation_deg >= 0.0
            && self.max_translate_frac >= 0.0
            && lo > 0.0
            && lo <= hi;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid augmentation parameters {self:?}")))
        }
    }
}

fn symmetric(rng: &mut impl Rng, max: f64) -> f64 {
    if max > 0.0 {
        rng.gen_range(-max..=max)
    } else {
        0.0
    }
}

fn mirror(img: &Pixels) -> Pixels {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            out.set(y, x, img.get(y, img.width - 1 - x));
        }
    }
    out
}

/// Returns a randomly perturbed copy of the same size. Regions uncovered by
/// the geometric warp take the nearest border pixel.
pub fn transform_image(img: &Pixels, params: &AugmentParams, rng: &mut impl Rng) -> Pixels {
    let flip = params.flip_prob > 0.0 && rng.gen_bool(params.flip_prob);
    let angle = symmetric(rng, params.max_rotation_deg).to_radians();
    let tx = symmetric(rng, params.max_translate_frac) * img.width as f64;
    let ty = symmetric(rng, params.max_translate_frac) * img.height as f64;
    let [lo, hi] = params.scale_range;
    let scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };

    let src = if flip { mirror(img) } else { img.clone() };
    if angle == 0.0 && tx == 0.0 && ty == 0.0 && scale == 1.0 {
        return src;
    }

    let (cy, cx) = ((img.height as f64 - 1.0) / 2.0, (img.width as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    let mut out = src.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            // inverse map: undo translation, rotation, then scale
            let u = x as f64 - cx - tx;
            let v = y as f64 - cy - ty;
            let su = (cos * u + sin * v) / scale + cx;
            let sv = (-sin * u + cos * v) / scale + cy;
            let sx = su.round().clamp(0.0, img.width as f64 - 1.0) as usize;
            let sy = sv.round().clamp(0.0, img.height as f64 - 1.0) as usize;
            out.set(y, x, src.get(sy, sx));
        }
    }
    out
}

/// Bilinear resize to `size × size`; returns the input unchanged when it
/// already has that shape.
pub fn resize_square(img: &Pixels, size: usize) -> Pixels {
    if img.height == size && img.width == size {
        return img.clone();
    }
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .expect("pixel buffer matches its dimensions");
    let resized = image::imageops::resize(&buf, size as u32, size as u32, image::imageops::FilterType::Triangle);
    Pixels {
        height: size,
        width: size,
        data: resized.into_raw(),
    }
}
