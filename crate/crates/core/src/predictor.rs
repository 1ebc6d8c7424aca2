//! Inference with dihedral test-time averaging, thresholding and overlays.

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::imagery::{BinaryMask, RasterImage};
use crate::netbuilder::NetworkHandle;
use crate::nn::Tensor;

/// Symmetry of the square: `quarter_turns` clockwise rotations applied after
/// an optional horizontal reflection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct D4Element {
    quarter_turns: u8,
    reflected: bool,
}

impl D4Element {
    pub const IDENTITY: D4Element = D4Element {
        quarter_turns: 0,
        reflected: false,
    };

    pub fn new(quarter_turns: u8, reflected: bool) -> Self {
        Self {
            quarter_turns: quarter_turns % 4,
            reflected,
        }
    }

    /// All eight elements, rotations first.
    pub fn all() -> [D4Element; 8] {
        let mut out = [Self::IDENTITY; 8];
        for (i, g) in out.iter_mut().enumerate() {
            *g = Self::new((i % 4) as u8, i >= 4);
        }
        out
    }

    pub fn quarter_turns(&self) -> u8 {
        self.quarter_turns
    }

    pub fn reflected(&self) -> bool {
        self.reflected
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &D4Element) -> D4Element {
        // A reflection conjugates a rotation into its inverse.
        let turns = if self.reflected {
            self.quarter_turns + 4 - other.quarter_turns
        } else {
            self.quarter_turns + other.quarter_turns
        };
        Self::new(turns, self.reflected ^ other.reflected)
    }

    pub fn inverse(&self) -> D4Element {
        if self.reflected {
            *self
        } else {
            Self::new(4 - self.quarter_turns, false)
        }
    }

    /// Output dimensions for a `width x height` input.
    pub fn output_dims(&self, width: usize, height: usize) -> (usize, usize) {
        if self.quarter_turns % 2 == 1 {
            (height, width)
        } else {
            (width, height)
        }
    }

    /// Where source pixel `(x, y)` of a `width x height` grid lands.
    pub fn map_point(&self, x: usize, y: usize, width: usize, height: usize) -> (usize, usize) {
        let (mut x, mut y, mut w, mut h) = (x, y, width, height);
        if self.reflected {
            x = w - 1 - x;
        }
        for _ in 0..self.quarter_turns {
            (x, y) = (h - 1 - y, x);
            (w, h) = (h, w);
        }
        (x, y)
    }

    fn permute<T: Copy>(&self, src: &[T], width: usize, height: usize, dst: &mut [T]) {
        let (ow, _) = self.output_dims(width, height);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = self.map_point(x, y, width, height);
                dst[v * ow + u] = src[y * width + x];
            }
        }
    }

    /// Exact pixel permutation of every channel.
    pub fn transform_image(&self, img: &RasterImage) -> RasterImage {
        let (w, h) = (img.width(), img.height());
        let (ow, oh) = self.output_dims(w, h);
        let mut out = RasterImage::new(ow, oh).expect("non-empty");
        for c in 0..3 {
            self.permute(img.plane(c), w, h, out.plane_mut(c));
        }
        out
    }

    pub fn transform_mask(&self, mask: &BinaryMask) -> BinaryMask {
        let (w, h) = (mask.width(), mask.height());
        let (ow, oh) = self.output_dims(w, h);
        let mut data = vec![0u8; w * h];
        self.permute(mask.values(), w, h, &mut data);
        BinaryMask::from_values(ow, oh, data).expect("permutation of a valid mask")
    }

    pub fn transform_map(&self, map: &ProbabilityMap) -> ProbabilityMap {
        let mut values = vec![0.0; map.values.len()];
        self.permute(&map.values, map.side, map.side, &mut values);
        ProbabilityMap {
            side: map.side,
            values,
        }
    }

    /// Transform a single square plane in place of a `side x side` buffer.
    pub fn transform_plane(&self, src: &[f32], side: usize) -> Vec<f32> {
        let mut out = vec![0.0; src.len()];
        self.permute(src, side, side, &mut out);
        out
    }
}

/// Anything the D4 group can act on.
pub trait D4Target: Sized {
    fn square_side(&self) -> Option<usize>;
    fn transformed(&self, g: D4Element) -> Self;
}

impl D4Target for RasterImage {
    fn square_side(&self) -> Option<usize> {
        self.is_square().then(|| self.width())
    }
    fn transformed(&self, g: D4Element) -> Self {
        g.transform_image(self)
    }
}

impl D4Target for BinaryMask {
    fn square_side(&self) -> Option<usize> {
        (self.width() == self.height()).then(|| self.width())
    }
    fn transformed(&self, g: D4Element) -> Self {
        g.transform_mask(self)
    }
}

impl D4Target for ProbabilityMap {
    fn square_side(&self) -> Option<usize> {
        Some(self.side)
    }
    fn transformed(&self, g: D4Element) -> Self {
        g.transform_map(self)
    }
}

/// Act on a square image or map; non-square inputs are rejected.
pub fn apply_d4<T: D4Target>(x: &T, g: D4Element) -> Result<T> {
    x.square_side()
        .ok_or_else(|| Error::Shape("dihedral transforms need a square input".into()))?;
    Ok(x.transformed(g))
}

/// Per-pixel foreground probabilities on a square grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    side: usize,
    values: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(side: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != side * side {
            return Err(Error::Shape(format!(
                "{} probabilities for a {side}x{side} map",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("probability {v} outside [0, 1]")));
        }
        Ok(Self { side, values })
    }

    pub fn filled(side: usize, p: f32) -> Result<Self> {
        Self::new(side, vec![p; side * side])
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.side + x]
    }

    /// Write as a 16-bit grayscale PNG, 0..=65535 spanning [0, 1].
    pub fn save_png16(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let buf: Vec<u16> = self
            .values
            .iter()
            .map(|&p| (p as f64 * 65535.0).round() as u16)
            .collect();
        let img: ImageBuffer<Luma<u16>, _> =
            ImageBuffer::from_raw(self.side as u32, self.side as u32, buf).expect("buffer size");
        img.save(path).map_err(|e| Error::image(path, e))
    }
}

/// Source of logits for a square RGB batch; the network and test stubs.
pub trait Segmenter {
    fn input_side(&self) -> usize;
    /// `B x 3 x S x S` intensities to `B x 1 x S x S` logits.
    fn logits(&self, batch: &Tensor) -> Result<Tensor>;
}

impl Segmenter for NetworkHandle {
    fn input_side(&self) -> usize {
        self.config().input_side
    }
    fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        self.forward(batch)
    }
}

impl<S: Segmenter + ?Sized> Segmenter for &S {
    fn input_side(&self) -> usize {
        (**self).input_side()
    }
    fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        (**self).logits(batch)
    }
}

/// Where the eight predictions are averaged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Probability,
    Logit,
}

fn sigmoid(z: f32) -> f32 {
    crate::objectives::sigmoid(z as f64) as f32
}

fn check_input(seg: &impl Segmenter, image: &RasterImage) -> Result<usize> {
    let side = seg.input_side();
    if image.width() != side || image.height() != side {
        return Err(Error::Shape(format!(
            "image is {}x{}, network expects {side}x{side}",
            image.width(),
            image.height()
        )));
    }
    Ok(side)
}

/// Foreground probabilities for one image, optionally averaged over the
/// eight symmetries of the square (evaluated as a single batch of eight).
pub fn predict_averaged(seg: &impl Segmenter, image: &RasterImage, use_d4: bool) -> Result<ProbabilityMap> {
    predict_averaged_with(seg, image, use_d4, Averaging::Probability)
}

pub fn predict_averaged_with(
    seg: &impl Segmenter,
    image: &RasterImage,
    use_d4: bool,
    averaging: Averaging,
) -> Result<ProbabilityMap> {
    let mut maps = predict_many(seg, std::slice::from_ref(image), use_d4, averaging)?;
    Ok(maps.pop().expect("one map per image"))
}

/// [`predict_averaged_with`] for several images sharing one network batch
/// (`n` or `8n` samples).
pub fn predict_many(
    seg: &impl Segmenter,
    images: &[RasterImage],
    use_d4: bool,
    averaging: Averaging,
) -> Result<Vec<ProbabilityMap>> {
    let mut side = seg.input_side();
    for img in images {
        side = check_input(seg, img)?;
    }
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let group: &[D4Element] = if use_d4 { &D4Element::all() } else { &[D4Element::IDENTITY] };
    let variants: Vec<RasterImage> = images
        .iter()
        .flat_map(|img| group.iter().map(move |g| g.transform_image(img)))
        .collect();
    let batch = Tensor::stack(variants.iter().map(RasterImage::as_planar), 3, side, side)?;
    let logits = seg.logits(&batch)?;
    if logits.shape() != [variants.len(), 1, side, side] {
        return Err(Error::Shape(format!("segmenter returned {:?}", logits.shape())));
    }

    let n = group.len() as f64;
    (0..images.len())
        .map(|k| {
            let mut acc = vec![0.0f64; side * side];
            for (i, g) in group.iter().enumerate() {
                let plane: Vec<f32> = match averaging {
                    Averaging::Probability => logits.sample(k * group.len() + i).iter().map(|&z| sigmoid(z)).collect(),
                    Averaging::Logit => logits.sample(k * group.len() + i).to_vec(),
                };
                let back = g.inverse().transform_plane(&plane, side);
                for (a, v) in acc.iter_mut().zip(back) {
                    *a += v as f64;
                }
            }
            let values = acc
                .into_iter()
                .map(|s| {
                    let mean = s / n;
                    match averaging {
                        Averaging::Probability => mean.clamp(0.0, 1.0) as f32,
                        Averaging::Logit => sigmoid(mean as f32),
                    }
                })
                .collect();
            ProbabilityMap::new(side, values)
        })
        .collect()
}

/// Foreground where `p >= threshold`.
pub fn binarize(p: &ProbabilityMap, threshold: f64) -> BinaryMask {
    let data = p.values.iter().map(|&v| u8::from(v as f64 >= threshold)).collect();
    BinaryMask::from_values(p.side, p.side, data).expect("square map")
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 0.4;
const RED: [f32; 3] = [1.0, 0.0, 0.0];
const YELLOW: [f32; 3] = [1.0, 1.0, 0.0];

/// Tint mask pixels red and the rest yellow.
pub fn render_overlay(image: &RasterImage, mask: &BinaryMask, alpha: f64) -> Result<RasterImage> {
    if image.width() != mask.width() || image.height() != mask.height() {
        return Err(Error::Shape(format!(
            "overlay image {}x{} vs mask {}x{}",
            image.width(),
            image.height(),
            mask.width(),
            mask.height()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Validation(format!("alpha {alpha} outside [0, 1]")));
    }
    let a = alpha as f32;
    let mut out = image.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            let tint = if mask.get(x, y) { RED } else { YELLOW };
            let src = image.pixel(x, y);
            let px = std::array::from_fn(|c| ((1.0 - a) * src[c] + a * tint[c]).clamp(0.0, 1.0));
            out.set_pixel(x, y, px);
        }
    }
    Ok(out)
}
