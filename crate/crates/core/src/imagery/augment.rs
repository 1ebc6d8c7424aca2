//! Training-time augmentation: paired geometric transforms plus photometric
//! jitter on the image alone.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::AnnotatedSample;
use super::{BinaryMask, RasterImage};
use crate::predictor::D4Element;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub flip_probability: f64,
    /// Allowed rotations in degrees; each must be one of 0, 90, 180, 270.
    pub rotation_choices: Vec<u32>,
    /// Zoom factor drawn uniformly from this interval (1.0 = none).
    pub scale_jitter: (f64, f64),
    /// Additive brightness offset interval.
    pub brightness_jitter: (f64, f64),
    /// Multiplicative contrast interval around mid-gray.
    pub contrast_jitter: (f64, f64),
    pub blur_probability: f64,
    pub blur_sigma: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            flip_probability: 0.5,
            rotation_choices: vec![0, 90, 180, 270],
            scale_jitter: (0.9, 1.1),
            brightness_jitter: (-0.15, 0.15),
            contrast_jitter: (0.85, 1.15),
            blur_probability: 0.2,
            blur_sigma: (0.5, 1.5),
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    /// Configuration that leaves every sample untouched.
    pub fn identity() -> Self {
        Self {
            flip_probability: 0.0,
            rotation_choices: vec![0],
            scale_jitter: (1.0, 1.0),
            brightness_jitter: (0.0, 0.0),
            contrast_jitter: (1.0, 1.0),
            blur_probability: 0.0,
            blur_sigma: (0.5, 0.5),
            seed: 0,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error;
        let prob = |p: f64, name: &str| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {p} outside [0, 1]")))
            }
        };
        prob(self.flip_probability, "flip_probability")?;
        prob(self.blur_probability, "blur_probability")?;
        let range = |r: (f64, f64), name: &str| {
            if r.0.is_finite() && r.1.is_finite() && r.0 <= r.1 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {r:?} is not a finite interval")))
            }
        };
        range(self.scale_jitter, "scale_jitter")?;
        range(self.brightness_jitter, "brightness_jitter")?;
        range(self.contrast_jitter, "contrast_jitter")?;
        range(self.blur_sigma, "blur_sigma")?;
        if self.scale_jitter.0 <= 0.0 || self.blur_sigma.0 < 0.0 {
            return Err(Error::Config("scale and blur ranges must be positive".into()));
        }
        if self.rotation_choices.is_empty()
            || self.rotation_choices.iter().any(|d| d % 90 != 0 || *d >= 360)
        {
            return Err(Error::Config(format!(
                "rotation_choices {:?} must be a non-empty subset of {{0, 90, 180, 270}}",
                self.rotation_choices
            )));
        }
        Ok(())
    }
}

/// The geometric half of a draw; applied identically to image and mask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometricDraw {
    /// Zoom about the image center, applied before the dihedral element.
    pub zoom: f64,
    pub dihedral: D4Element,
}

impl GeometricDraw {
    pub fn apply_image(&self, img: &RasterImage) -> RasterImage {
        let zoomed = if self.zoom == 1.0 {
            img.clone()
        } else {
            zoom_image(img, self.zoom)
        };
        self.dihedral.transform_image(&zoomed)
    }

    pub fn apply_mask(&self, mask: &BinaryMask) -> BinaryMask {
        let zoomed = if self.zoom == 1.0 {
            mask.clone()
        } else {
            zoom_mask(mask, self.zoom)
        };
        self.dihedral.transform_mask(&zoomed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentationDraw {
    pub geometric: GeometricDraw,
    pub brightness: f64,
    pub contrast: f64,
    pub blur_sigma: Option<f64>,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draw one set of augmentation parameters. The number of RNG calls is fixed,
/// so streams stay aligned regardless of which branches fire.
pub fn draw_augmentation<R: Rng + ?Sized>(config: &AugmentationConfig, rng: &mut R) -> AugmentationDraw {
    let flip = rng.random::<f64>() < config.flip_probability;
    let rot = config.rotation_choices[rng.random_range(0..config.rotation_choices.len())];
    let zoom = uniform(rng, config.scale_jitter);
    let brightness = uniform(rng, config.brightness_jitter);
    let contrast = uniform(rng, config.contrast_jitter);
    let blur = rng.random::<f64>() < config.blur_probability;
    let sigma = uniform(rng, config.blur_sigma);
    AugmentationDraw {
        geometric: GeometricDraw {
            zoom,
            dihedral: D4Element::new((rot / 90) as u8, flip),
        },
        brightness,
        contrast,
        blur_sigma: (blur && sigma > 0.0).then_some(sigma),
    }
}

impl AugmentationDraw {
    pub fn apply(&self, sample: &AnnotatedSample) -> AnnotatedSample {
        let mut image = self.geometric.apply_image(&sample.image);
        let mask = self.geometric.apply_mask(&sample.mask);
        if self.brightness != 0.0 || self.contrast != 1.0 {
            let (b, c) = (self.brightness as f32, self.contrast as f32);
            image.map_intensities(|v| (v - 0.5) * c + 0.5 + b);
        }
        if let Some(sigma) = self.blur_sigma {
            image = gaussian_blur(&image, sigma);
        }
        AnnotatedSample {
            image,
            mask,
            source_id: sample.source_id.clone(),
        }
    }
}

pub fn augment<R: Rng + ?Sized>(
    sample: &AnnotatedSample,
    config: &AugmentationConfig,
    rng: &mut R,
) -> AnnotatedSample {
    draw_augmentation(config, rng).apply(sample)
}

/// Source coordinate sampled by output pixel `i` when zooming by `z` about the center.
fn zoom_source(i: usize, len: usize, z: f64) -> f64 {
    let c = len as f64 / 2.0;
    c + (i as f64 + 0.5 - c) / z
}

fn zoom_image(img: &RasterImage, z: f64) -> RasterImage {
    let (w, h) = (img.width(), img.height());
    let mut out = RasterImage::new(w, h).expect("non-empty");
    let clamp = |v: f64, len: usize| v.clamp(0.0, (len - 1) as f64);
    for y in 0..h {
        let fy = clamp(zoom_source(y, h, z) - 0.5, h);
        let (y0, ty) = (fy.floor() as usize, fy - fy.floor());
        let y1 = (y0 + 1).min(h - 1);
        for x in 0..w {
            let fx = clamp(zoom_source(x, w, z) - 0.5, w);
            let (x0, tx) = (fx.floor() as usize, fx - fx.floor());
            let x1 = (x0 + 1).min(w - 1);
            for c in 0..3 {
                let top = img.get(c, x0, y0) as f64 * (1.0 - tx) + img.get(c, x1, y0) as f64 * tx;
                let bot = img.get(c, x0, y1) as f64 * (1.0 - tx) + img.get(c, x1, y1) as f64 * tx;
                out.set(c, x, y, (top * (1.0 - ty) + bot * ty) as f32);
            }
        }
    }
    out
}

fn zoom_mask(mask: &BinaryMask, z: f64) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let near = |v: f64, len: usize| (v.floor().max(0.0) as usize).min(len - 1);
    BinaryMask::from_fn(w, h, |x, y| {
        mask.get(near(zoom_source(x, w, z), w), near(zoom_source(y, h, z), h))
    })
    .expect("non-empty")
}

/// Separable Gaussian blur with edge replication; kernel radius 3 sigma.
pub(crate) fn gaussian_blur(img: &RasterImage, sigma: f64) -> RasterImage {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);

    let (w, h) = (img.width(), img.height());
    let mut tmp = vec![0f32; w * h];
    let mut out = img.clone();
    for c in 0..3 {
        let src = img.plane(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, wgt) in kernel.iter().enumerate() {
                    let sx = (x as isize + k as isize - radius).clamp(0, w as isize - 1) as usize;
                    acc += wgt * src[y * w + sx] as f64;
                }
                tmp[y * w + x] = acc as f32;
            }
        }
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, wgt) in kernel.iter().enumerate() {
                    let sy = (y as isize + k as isize - radius).clamp(0, h as isize - 1) as usize;
                    acc += wgt * tmp[sy * w + x] as f64;
                }
                dst[y * w + x] = (acc as f32).clamp(0.0, 1.0);
            }
        }
    }
    out
}
