//! Synthetic fruit scenes with exact ground truth.
//!
//! A scene is a textured, unevenly lit background with leaf-like clutter,
//! optional distractor fruits, and one roundish central fruit drawn last so
//! it is never occluded. The central mask is the set of pixels whose centers
//! fall inside the analytic ellipse.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::annotation::{write_annotation, PolygonAnnotation};
use super::augment::gaussian_blur;
use super::{BinaryMask, RasterImage};
use crate::error::{Error, Result};

/// Declarative scene parameters. Ranges are `(min, max)` and sampled uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Semi-major axis of the central fruit, pixels.
    pub radius: (f64, f64),
    /// Minor/major axis ratio of the central fruit.
    pub aspect: (f64, f64),
    /// Maximum offset of the central fruit from the canvas center, as a fraction of the shorter side.
    pub center_jitter: f64,
    /// Fixed central-fruit center; overrides `center_jitter`.
    pub center: Option<(f64, f64)>,
    pub distractors: (usize, usize),
    pub distractor_radius: (f64, f64),
    /// Number of leaf-like background ellipses.
    pub clutter: usize,
    pub background_level: (f64, f64),
    /// Amplitude of the smooth background texture.
    pub texture: f64,
    /// Amplitude of the linear lighting gradient.
    pub lighting: f64,
    /// Per-pixel noise amplitude.
    pub noise: f64,
    /// Gaussian blur sigma applied to the finished image; 0 disables.
    pub blur_sigma: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            radius: (18.0, 40.0),
            aspect: (0.8, 1.0),
            center_jitter: 0.1,
            center: None,
            distractors: (0, 3),
            distractor_radius: (10.0, 30.0),
            clutter: 12,
            background_level: (0.15, 0.45),
            texture: 0.08,
            lighting: 0.15,
            noise: 0.02,
            blur_sigma: 0.0,
        }
    }
}

impl SceneSpec {
    /// Single disk of the given radius at the canvas center on a flat background.
    pub fn plain_disk(side: usize, radius: f64) -> Self {
        Self {
            width: side,
            height: side,
            radius: (radius, radius),
            aspect: (1.0, 1.0),
            center_jitter: 0.0,
            center: None,
            distractors: (0, 0),
            distractor_radius: (1.0, 1.0),
            clutter: 0,
            background_level: (0.2, 0.2),
            texture: 0.0,
            lighting: 0.0,
            noise: 0.0,
            blur_sigma: 0.0,
        }
    }

    /// The default scene with lengths rescaled to a `side x side` canvas.
    pub fn at_side(side: usize) -> Self {
        let d = Self::default();
        let k = side as f64 / d.width as f64;
        Self {
            width: side,
            height: side,
            radius: (d.radius.0 * k, d.radius.1 * k),
            distractor_radius: (d.distractor_radius.0 * k, d.distractor_radius.1 * k),
            ..d
        }
    }

    /// Many same-colored distractors and dense clutter.
    pub fn hard(side: usize) -> Self {
        let s = side as f64;
        Self {
            width: side,
            height: side,
            radius: (0.12 * s, 0.25 * s),
            distractors: (3, 6),
            distractor_radius: (0.1 * s, 0.28 * s),
            clutter: 30,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::Config("canvas must be at least 2x2".into()));
        }
        let ranges = [
            ("radius", self.radius),
            ("aspect", self.aspect),
            ("distractor_radius", self.distractor_radius),
            ("background_level", self.background_level),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo > 0.0) {
                return Err(Error::Config(format!("{name} = ({lo}, {hi}) is not a positive interval")));
            }
        }
        if self.aspect.1 > 1.0 {
            return Err(Error::Config("aspect must be <= 1".into()));
        }
        if self.distractors.0 > self.distractors.1 {
            return Err(Error::Config("distractors range is reversed".into()));
        }
        let short = self.width.min(self.height) as f64;
        if 2.0 * self.radius.1 > short {
            return Err(Error::Config(format!(
                "central radius {} too large for a {}x{} canvas",
                self.radius.1, self.width, self.height
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub image: RasterImage,
    pub mask: BinaryMask,
    /// Analytic area of the central ellipse, pixels squared.
    pub true_area: f64,
    pub true_centroid: (f64, f64),
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    fn disk(cx: f64, cy: f64, r: f64) -> Self {
        Self {
            cx,
            cy,
            a: r,
            b: r,
            theta: 0.0,
        }
    }

    /// Normalized squared radius of a point; < 1 inside.
    fn rho2(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.theta.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2)
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        self.rho2(x, y) <= 1.0
    }

    fn area(&self) -> f64 {
        PI * self.a * self.b
    }

    fn bounds(&self, w: usize, h: usize) -> (usize, usize, usize, usize) {
        let r = self.a.max(self.b) + 1.0;
        let lo = |v: f64| v.floor().max(0.0) as usize;
        (
            lo(self.cx - r),
            lo(self.cy - r),
            ((self.cx + r).ceil().max(0.0) as usize).min(w),
            ((self.cy + r).ceil().max(0.0) as usize).min(h),
        )
    }

    fn outline(&self, n: usize) -> Vec<(f64, f64)> {
        let (s, c) = self.theta.sin_cos();
        (0..n)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / n as f64;
                let (u, v) = (self.a * t.cos(), self.b * t.sin());
                (self.cx + u * c - v * s, self.cy + u * s + v * c)
            })
            .collect()
    }
}

fn range<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn fruit_color<R: Rng>(rng: &mut R) -> [f32; 3] {
    // Yellow-green pear tones.
    let r = rng.random_range(0.55..0.85);
    let g = rng.random_range(0.6..0.85);
    let b = rng.random_range(0.1..0.3);
    [r, g, b]
}

/// Paint a shaded fruit; interior pixels only (center test identical to the mask).
fn paint_fruit(img: &mut RasterImage, e: &Ellipse, color: [f32; 3], light: (f64, f64)) {
    let (x0, y0, x1, y1) = e.bounds(img.width(), img.height());
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let rho2 = e.rho2(px, py);
            if rho2 > 1.0 {
                continue;
            }
            let r = e.a.max(e.b);
            let lx = (px - e.cx) / r - light.0 * 0.4;
            let ly = (py - e.cy) / r - light.1 * 0.4;
            let spot = (-(lx * lx + ly * ly) * 4.0).exp();
            let shade = (0.78 + 0.22 * (1.0 - rho2) + 0.15 * spot) as f32;
            img.set_pixel(x, y, color.map(|c| (c * shade).clamp(0.0, 1.0)));
        }
    }
}

fn paint_leaf(img: &mut RasterImage, e: &Ellipse, color: [f32; 3]) {
    let (x0, y0, x1, y1) = e.bounds(img.width(), img.height());
    for y in y0..y1 {
        for x in x0..x1 {
            if e.contains(x as f64 + 0.5, y as f64 + 0.5) {
                img.set_pixel(x, y, color);
            }
        }
    }
}

/// Smooth value noise: bilinear upsampling of a coarse random grid.
fn value_noise<R: Rng>(rng: &mut R, w: usize, h: usize, cell: f64) -> Vec<f32> {
    let gw = (w as f64 / cell).ceil() as usize + 2;
    let gh = (h as f64 / cell).ceil() as usize + 2;
    let grid: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        let fy = y as f64 / cell;
        let (iy, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..w {
            let fx = x as f64 / cell;
            let (ix, tx) = (fx.floor() as usize, fx.fract());
            let g = |i: usize, j: usize| grid[j * gw + i];
            let top = g(ix, iy) * (1.0 - tx) + g(ix + 1, iy) * tx;
            let bot = g(ix, iy + 1) * (1.0 - tx) + g(ix + 1, iy + 1) * tx;
            out[y * w + x] = (top * (1.0 - ty) + bot * ty) as f32;
        }
    }
    out
}

/// Background with texture, lighting gradient and leaf clutter.
fn paint_background<R: Rng>(rng: &mut R, spec: &SceneSpec) -> RasterImage {
    let (w, h) = (spec.width, spec.height);
    let level = range(rng, spec.background_level) as f32;
    let base = [level * 0.8, level * 1.1, level * 0.6];
    let cell = (w.min(h) as f64 / 6.0).max(2.0);
    let noise = value_noise(rng, w, h, cell);
    let angle = rng.random_range(0.0..2.0 * PI);
    let (gx, gy) = (angle.cos(), angle.sin());
    let mut img = RasterImage::from_fn(w, h, |x, y| {
        let u = (x as f64 / w as f64 - 0.5) * gx + (y as f64 / h as f64 - 0.5) * gy;
        let shift = (spec.lighting * u) as f32 + spec.texture as f32 * noise[y * w + x];
        base.map(|c| (c + shift).clamp(0.0, 1.0))
    })
    .expect("validated dims");
    let short = w.min(h) as f64;
    for _ in 0..spec.clutter {
        let e = Ellipse {
            cx: rng.random_range(0.0..w as f64),
            cy: rng.random_range(0.0..h as f64),
            a: rng.random_range(0.04..0.14) * short,
            b: rng.random_range(0.015..0.05) * short,
            theta: rng.random_range(0.0..PI),
        };
        let g = rng.random_range(0.2..0.5);
        paint_leaf(&mut img, &e, [g * 0.4, g, g * 0.3]);
    }
    img
}

fn add_noise<R: Rng>(rng: &mut R, img: &mut RasterImage, amp: f64) {
    if amp <= 0.0 {
        return;
    }
    let amp = amp as f32;
    img.map_intensities(|v| v + amp * rng.random_range(-1.0f32..1.0));
}

/// Place distractors that keep a clearance from every disk in `keep_clear`.
fn place_distractors<R: Rng>(
    rng: &mut R,
    spec: &SceneSpec,
    count: usize,
    keep_clear: &[(f64, f64, f64)],
) -> Vec<Ellipse> {
    let mut out = Vec::with_capacity(count);
    let (w, h) = (spec.width as f64, spec.height as f64);
    for _ in 0..count {
        for _attempt in 0..50 {
            let r = range(rng, spec.distractor_radius);
            let e = Ellipse {
                cx: rng.random_range(0.0..w),
                cy: rng.random_range(0.0..h),
                a: r,
                b: r * rng.random_range(0.8..1.0),
                theta: rng.random_range(0.0..PI),
            };
            let clear = keep_clear.iter().all(|&(x, y, rc)| {
                ((e.cx - x).powi(2) + (e.cy - y).powi(2)).sqrt() >= rc + 0.6 * r
            });
            if clear {
                out.push(e);
                break;
            }
        }
    }
    out
}

fn mask_of(e: &Ellipse, w: usize, h: usize) -> BinaryMask {
    let mut mask = BinaryMask::new(w, h).expect("validated dims");
    let (x0, y0, x1, y1) = e.bounds(w, h);
    for y in y0..y1 {
        for x in x0..x1 {
            if e.contains(x as f64 + 0.5, y as f64 + 0.5) {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

fn finish<R: Rng>(rng: &mut R, mut img: RasterImage, spec: &SceneSpec) -> RasterImage {
    add_noise(rng, &mut img, spec.noise);
    if spec.blur_sigma > 0.0 {
        img = gaussian_blur(&img, spec.blur_sigma);
    }
    img
}

/// Render one scene; identical `(spec, seed)` pairs give identical scenes.
pub fn generate_synthetic_scene(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width, spec.height);

    let a = range(&mut rng, spec.radius);
    let b = a * range(&mut rng, spec.aspect);
    let theta = rng.random_range(0.0..PI);
    let (cx, cy) = match spec.center {
        Some(c) => c,
        None => {
            let j = spec.center_jitter * w.min(h) as f64;
            let mut off = || if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
            (w as f64 / 2.0 + off(), h as f64 / 2.0 + off())
        }
    };
    let central = Ellipse { cx, cy, a, b, theta };
    let color = fruit_color(&mut rng);
    let light = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));

    let mut img = paint_background(&mut rng, spec);
    let n_distractors = rng.random_range(spec.distractors.0..=spec.distractors.1);
    for d in place_distractors(&mut rng, spec, n_distractors, &[(cx, cy, a)]) {
        let c = fruit_color(&mut rng);
        paint_fruit(&mut img, &d, c, light);
    }
    paint_fruit(&mut img, &central, color, light);
    let img = finish(&mut rng, img, spec);

    Ok(SyntheticScene {
        image: img,
        mask: mask_of(&central, w, h),
        true_area: central.area(),
        true_centroid: (cx, cy),
    })
}

/// Time-lapse of one fruit drifting and growing in front of a fixed camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceSpec {
    pub scene: SceneSpec,
    pub frames: usize,
    pub start_center: (f64, f64),
    pub start_radius: f64,
    /// Maximum per-frame displacement, pixels.
    pub max_drift: f64,
    /// Relative area growth per frame.
    pub area_growth: f64,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        Self {
            scene: SceneSpec {
                width: 480,
                height: 360,
                distractors: (2, 4),
                distractor_radius: (20.0, 40.0),
                clutter: 40,
                ..SceneSpec::default()
            },
            frames: 60,
            start_center: (240.0, 180.0),
            start_radius: 36.0,
            max_drift: 10.0,
            area_growth: 0.005,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SequenceFrame {
    pub image: RasterImage,
    pub mask: BinaryMask,
    pub true_area: f64,
    pub true_centroid: (f64, f64),
}

/// Render a drift-and-grow sequence. Background and distractors are fixed;
/// the fruit moves along a smooth random walk that stays inside the frame.
pub fn render_sequence(spec: &SequenceSpec, seed: u64) -> Result<Vec<SequenceFrame>> {
    spec.scene.validate()?;
    if spec.frames == 0 {
        return Err(Error::Config("sequence needs at least one frame".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.scene.width as f64, spec.scene.height as f64);
    let final_radius = spec.start_radius * (1.0 + spec.area_growth).powf(spec.frames as f64 / 2.0);
    let margin = final_radius + 2.0;

    let mut path = Vec::with_capacity(spec.frames);
    let (mut x, mut y) = spec.start_center;
    let mut heading = rng.random_range(0.0..2.0 * PI);
    for i in 0..spec.frames {
        let r = spec.start_radius * (1.0 + spec.area_growth).powf(i as f64 / 2.0);
        path.push((x, y, r));
        heading += rng.random_range(-0.6..0.6);
        let step = spec.max_drift * rng.random_range(0.3..1.0);
        let (mut nx, mut ny) = (x + step * heading.cos(), y + step * heading.sin());
        if nx < margin || nx > w - margin || ny < margin || ny > h - margin {
            heading += PI;
            nx = (x + step * heading.cos()).clamp(margin, w - margin);
            ny = (y + step * heading.sin()).clamp(margin, h - margin);
        }
        x = nx;
        y = ny;
    }

    let color = fruit_color(&mut rng);
    let light = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let mut background = paint_background(&mut rng, &spec.scene);
    let n_distractors = rng.random_range(spec.scene.distractors.0..=spec.scene.distractors.1);
    // Distractors may come close but never touch the tracked fruit.
    let gap = 8.0 + 0.4 * spec.scene.distractor_radius.1;
    let clear: Vec<(f64, f64, f64)> = path.iter().map(|&(x, y, r)| (x, y, r + gap)).collect();
    for d in place_distractors(&mut rng, &spec.scene, n_distractors, &clear) {
        let c = fruit_color(&mut rng);
        paint_fruit(&mut background, &d, c, light);
    }

    path.iter()
        .enumerate()
        .map(|(i, &(cx, cy, r))| {
            let e = Ellipse::disk(cx, cy, r);
            let mut img = background.clone();
            paint_fruit(&mut img, &e, color, light);
            let mut frame_rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9 + i as u64));
            let img = finish(&mut frame_rng, img, &spec.scene);
            Ok(SequenceFrame {
                image: img,
                mask: mask_of(&e, spec.scene.width, spec.scene.height),
                true_area: e.area(),
                true_centroid: (cx, cy),
            })
        })
        .collect()
}

/// One frame of a drift-and-grow scene, cropped the way the tracker crops
/// it: a square window around the fruit (center off by up to `max_offset`
/// photo pixels) in which the fruit diameter fills a fraction `fill` of the
/// side, resampled to `out_side`. The mask and the truth are in crop pixels.
pub fn generate_tracking_crop(
    spec: &SequenceSpec,
    out_side: usize,
    fill: (f64, f64),
    max_offset: f64,
    seed: u64,
) -> Result<SyntheticScene> {
    if !(fill.0 > 0.0 && fill.0 <= fill.1 && fill.1 <= 1.0) {
        return Err(Error::Config(format!("fill = {fill:?} is not a sub-interval of (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.scene.width as f64, spec.scene.height as f64);
    let grown = (1.0 + spec.area_growth).powf(spec.frames as f64 / 2.0);
    let r = rng.random_range(0.85 * spec.start_radius..=spec.start_radius * grown * 1.05);
    let margin = r + 2.0;
    if 2.0 * margin >= w.min(h) {
        return Err(Error::Config(format!("radius {r} too large for the canvas")));
    }
    let c = (rng.random_range(margin..w - margin), rng.random_range(margin..h - margin));
    let one = SequenceSpec {
        frames: 1,
        start_center: c,
        start_radius: r,
        area_growth: 0.0,
        ..spec.clone()
    };
    let frame = render_sequence(&one, rng.random())?.remove(0);

    let q = (range(&mut rng, (fill.0.ln(), fill.1.ln()))).exp();
    let side = ((2.0 * r / q).round() as usize).max(2);
    let (ang, dist) = (rng.random_range(0.0..2.0 * PI), max_offset * rng.random::<f64>().sqrt());
    let window = super::CropWindow::new((c.0 + dist * ang.cos(), c.1 + dist * ang.sin()), side, 1.0)?;
    let (image, geom) = super::crop_resize(&frame.image, &window, out_side)?;
    let mask = BinaryMask::from_fn(out_side, out_side, |u, v| {
        let (x, y) = geom.to_source(u as f64 + 0.5, v as f64 + 0.5);
        (x - c.0).powi(2) + (y - c.1).powi(2) <= r * r
    })?;
    let k = geom.step();
    Ok(SyntheticScene {
        image,
        mask,
        true_area: PI * r * r / (k * k),
        true_centroid: geom.to_output(c.0, c.1),
    })
}

/// Write `count` scenes as PNG + labelme JSON pairs, plus `truth.csv`.
///
/// The central fruit's polygon is a 96-vertex approximation of its ellipse.
pub fn write_synthetic_dataset(
    dir: impl AsRef<Path>,
    spec: &SceneSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<SyntheticScene>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut truth = String::from("scene,cx,cy,area\n");
    let mut scenes = Vec::with_capacity(count);
    for i in 0..count {
        let scene_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let scene = generate_synthetic_scene(spec, scene_seed)?;
        let stem = format!("scene_{i:04}");
        scene.image.save(dir.join(format!("{stem}.png")))?;
        let outline = outline_of(spec, scene_seed)?;
        let ann = PolygonAnnotation::new(outline, "fruit", spec.width, spec.height)?;
        write_annotation(dir.join(format!("{stem}.json")), &format!("{stem}.png"), &ann)?;
        truth.push_str(&format!(
            "{stem},{},{},{}\n",
            scene.true_centroid.0, scene.true_centroid.1, scene.true_area
        ));
        scenes.push(scene);
    }
    let path = dir.join("truth.csv");
    fs::write(&path, truth).map_err(|e| Error::io(&path, e))?;
    Ok(scenes)
}

/// Default crop distribution for [`generate_tracking_crop`]: the fruit fills
/// a fifth of a full-frame probe up to two thirds of the tightest scale.
pub const TRACKING_FILL: (f64, f64) = (0.18, 0.72);
pub const TRACKING_OFFSET: f64 = 12.0;

/// Write `count` tracker-style crops as PNG + labelme JSON pairs, plus `truth.csv`.
pub fn write_tracking_crops(
    dir: impl AsRef<Path>,
    spec: &SequenceSpec,
    side: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<SyntheticScene>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut truth = String::from("scene,cx,cy,area\n");
    let mut scenes = Vec::with_capacity(count);
    for i in 0..count {
        let crop_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let scene = generate_tracking_crop(spec, side, TRACKING_FILL, TRACKING_OFFSET, crop_seed)?;
        let stem = format!("crop_{i:04}");
        scene.image.save(dir.join(format!("{stem}.png")))?;
        let (cx, cy) = scene.true_centroid;
        let r = (scene.true_area / PI).sqrt();
        let outline = Ellipse::disk(cx, cy, r).outline(96);
        let ann = PolygonAnnotation::new(outline, "fruit", side, side)?;
        write_annotation(dir.join(format!("{stem}.json")), &format!("{stem}.png"), &ann)?;
        truth.push_str(&format!("{stem},{cx},{cy},{}\n", scene.true_area));
        scenes.push(scene);
    }
    let path = dir.join("truth.csv");
    fs::write(&path, truth).map_err(|e| Error::io(&path, e))?;
    Ok(scenes)
}

/// Re-derive the central ellipse for a seed (same draw order as the renderer).
fn outline_of(spec: &SceneSpec, seed: u64) -> Result<Vec<(f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width, spec.height);
    let a = range(&mut rng, spec.radius);
    let b = a * range(&mut rng, spec.aspect);
    let theta = rng.random_range(0.0..PI);
    let (cx, cy) = match spec.center {
        Some(c) => c,
        None => {
            let j = spec.center_jitter * w.min(h) as f64;
            let mut off = || if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
            (w as f64 / 2.0 + off(), h as f64 / 2.0 + off())
        }
    };
    Ok(Ellipse { cx, cy, a, b, theta }.outline(96))
}
