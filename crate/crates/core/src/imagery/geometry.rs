//! Square crop windows and the crop-then-resize resampler.

use serde::{Deserialize, Serialize};

use super::{BinaryMask, RasterImage};
use crate::error::{Error, Result};

/// Square window in source-photo coordinates (origin top-left, x right, y down).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropWindow {
    pub center: (f64, f64),
    pub side: usize,
    pub scale_factor: f64,
}

impl CropWindow {
    pub fn new(center: (f64, f64), side: usize, scale_factor: f64) -> Result<Self> {
        let w = Self {
            center,
            side,
            scale_factor,
        };
        w.validate()?;
        Ok(w)
    }

    /// Largest centered square inside a `width x height` photo.
    pub fn centered_square(width: usize, height: usize) -> Self {
        Self {
            center: (width as f64 / 2.0, height as f64 / 2.0),
            side: width.min(height),
            scale_factor: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.center.0.is_finite() && self.center.1.is_finite()) {
            return Err(Error::Geometry("window center is not finite".into()));
        }
        if self.side < 2 {
            return Err(Error::Geometry(format!("window side {} < 2", self.side)));
        }
        if !(self.scale_factor > 0.0 && self.scale_factor <= 1.0) {
            return Err(Error::Geometry(format!(
                "scale factor {} outside (0, 1]",
                self.scale_factor
            )));
        }
        if self.effective_side() < 2 {
            return Err(Error::Geometry(format!(
                "effective side {} < 2",
                self.effective_side()
            )));
        }
        Ok(())
    }

    pub fn effective_side(&self) -> usize {
        (self.side as f64 * self.scale_factor).round() as usize
    }

    pub fn with_scale(self, scale_factor: f64) -> Self {
        Self {
            scale_factor,
            ..self
        }
    }

    /// Geometry mapping an `out_side` output grid onto this window.
    pub fn geometry(&self, out_side: usize) -> CropGeometry {
        let es = self.effective_side() as f64;
        CropGeometry {
            origin: (self.center.0 - es / 2.0, self.center.1 - es / 2.0),
            source_side: es,
            out_side,
        }
    }
}

/// Affine map between crop output coordinates and source-photo coordinates.
///
/// Both coordinate systems are continuous with pixel `i` covering `[i, i+1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropGeometry {
    pub origin: (f64, f64),
    pub source_side: f64,
    pub out_side: usize,
}

impl CropGeometry {
    /// Source pixels per output pixel.
    pub fn step(&self) -> f64 {
        self.source_side / self.out_side as f64
    }

    pub fn to_source(&self, u: f64, v: f64) -> (f64, f64) {
        let k = self.step();
        (self.origin.0 + u * k, self.origin.1 + v * k)
    }

    pub fn to_output(&self, x: f64, y: f64) -> (f64, f64) {
        let k = self.step();
        ((x - self.origin.0) / k, (y - self.origin.1) / k)
    }

    fn overlaps(&self, width: usize, height: usize) -> bool {
        let (x0, y0) = self.origin;
        let (x1, y1) = (x0 + self.source_side, y0 + self.source_side);
        x1 > 0.0 && y1 > 0.0 && x0 < width as f64 && y0 < height as f64
    }
}

/// Crop the window out of `photo` and resample it to `out_side x out_side`.
///
/// Bilinear interpolation at output pixel centers; samples falling outside
/// the photo replicate the nearest edge pixel.
pub fn crop_resize(
    photo: &RasterImage,
    window: &CropWindow,
    out_side: usize,
) -> Result<(RasterImage, CropGeometry)> {
    window.validate()?;
    if out_side < 2 {
        return Err(Error::Geometry(format!("output side {out_side} < 2")));
    }
    let geom = window.geometry(out_side);
    if !geom.overlaps(photo.width(), photo.height()) {
        return Err(Error::Geometry(format!(
            "window centered at ({:.1}, {:.1}) lies outside the {}x{} photo",
            window.center.0,
            window.center.1,
            photo.width(),
            photo.height()
        )));
    }

    let (w, h) = (photo.width(), photo.height());
    let xs: Vec<Tap> = (0..out_side)
        .map(|i| Tap::new(geom.origin.0 + (i as f64 + 0.5) * geom.step() - 0.5, w))
        .collect();
    let ys: Vec<Tap> = (0..out_side)
        .map(|j| Tap::new(geom.origin.1 + (j as f64 + 0.5) * geom.step() - 0.5, h))
        .collect();

    let mut out = RasterImage::new(out_side, out_side)?;
    for c in 0..RasterImage::CHANNELS {
        let src = photo.plane(c);
        let dst = out.plane_mut(c);
        for (j, ty) in ys.iter().enumerate() {
            let r0 = &src[ty.i0 * w..(ty.i0 + 1) * w];
            let r1 = &src[ty.i1 * w..(ty.i1 + 1) * w];
            for (i, tx) in xs.iter().enumerate() {
                let top = r0[tx.i0] as f64 * (1.0 - tx.t) + r0[tx.i1] as f64 * tx.t;
                let bot = r1[tx.i0] as f64 * (1.0 - tx.t) + r1[tx.i1] as f64 * tx.t;
                dst[j * out_side + i] = (top * (1.0 - ty.t) + bot * ty.t) as f32;
            }
        }
    }
    Ok((out, geom))
}

/// Nearest-neighbour resampling of a source-resolution mask onto a crop grid.
pub fn resample_mask(mask: &BinaryMask, geom: &CropGeometry) -> Result<BinaryMask> {
    let (w, h) = (mask.width(), mask.height());
    let n = geom.out_side;
    let idx = |v: f64, len: usize| (v.floor().max(0.0) as usize).min(len - 1);
    BinaryMask::from_fn(n, n, |i, j| {
        let (x, y) = geom.to_source(i as f64 + 0.5, j as f64 + 0.5);
        mask.get(idx(x, w), idx(y, h))
    })
}

/// One axis of a bilinear tap with edge clamping.
struct Tap {
    i0: usize,
    i1: usize,
    t: f64,
}

impl Tap {
    fn new(pos: f64, len: usize) -> Self {
        let last = (len - 1) as f64;
        if pos <= 0.0 {
            return Tap { i0: 0, i1: 0, t: 0.0 };
        }
        if pos >= last {
            return Tap {
                i0: len - 1,
                i1: len - 1,
                t: 0.0,
            };
        }
        let f = pos.floor();
        Tap {
            i0: f as usize,
            i1: f as usize + 1,
            t: pos - f,
        }
    }
}
