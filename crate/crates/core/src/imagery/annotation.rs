//! Polygon annotations in the labelme JSON layout and their rasterization.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use super::BinaryMask;
use crate::error::{Error, Result};

/// On-disk labelme document. Unknown fields (e.g. `imageData`, `flags`) are ignored.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LabelmeFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    pub shapes: Vec<LabelmeShape>,
    #[serde(rename = "imagePath")]
    pub image_path: String,
    #[serde(rename = "imageWidth")]
    pub image_width: u32,
    #[serde(rename = "imageHeight")]
    pub image_height: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LabelmeShape {
    pub label: String,
    pub points: Vec<[f64; 2]>,
    #[serde(default = "default_shape_type")]
    pub shape_type: String,
}

fn default_shape_type() -> String {
    "polygon".to_string()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolygonAnnotation {
    points: Vec<(f64, f64)>,
    label: String,
    image_width: usize,
    image_height: usize,
}

impl PolygonAnnotation {
    /// Validates the vertex count and clips vertices into `[0, width] x [0, height]`.
    pub fn new(
        points: Vec<(f64, f64)>,
        label: impl Into<String>,
        image_width: usize,
        image_height: usize,
    ) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Validation(format!(
                "polygon needs at least 3 vertices, got {}",
                points.len()
            )));
        }
        if image_width == 0 || image_height == 0 {
            return Err(Error::Validation("annotation image size must be positive".into()));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Validation("polygon vertex is not finite".into()));
        }
        let (w, h) = (image_width as f64, image_height as f64);
        let points = points
            .into_iter()
            .map(|(x, y)| (x.clamp(0.0, w), y.clamp(0.0, h)))
            .collect();
        Ok(Self {
            points,
            label: label.into(),
            image_width,
            image_height,
        })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn image_width(&self) -> usize {
        self.image_width
    }

    pub fn image_height(&self) -> usize {
        self.image_height
    }

    /// Signed shoelace area.
    pub fn signed_area(&self) -> f64 {
        let n = self.points.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (x0, y0) = self.points[i];
            let (x1, y1) = self.points[(i + 1) % n];
            acc += x0 * y1 - x1 * y0;
        }
        acc / 2.0
    }

    /// True when every vertex lies on one line, so the polygon encloses nothing.
    pub fn is_degenerate(&self) -> bool {
        let a = self.points[0];
        let Some(&b) = self.points.iter().find(|&&p| p != a) else {
            return true;
        };
        self.points.iter().all(|&c| orient(a, b, c) == 0.0)
    }

    /// True when two non-adjacent edges properly cross.
    pub fn is_self_intersecting(&self) -> bool {
        let n = self.points.len();
        let edge = |i: usize| (self.points[i], self.points[(i + 1) % n]);
        for i in 0..n {
            for j in i + 1..n {
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = edge(i);
                let (c, d) = edge(j);
                if segments_cross(a, b, c, d) {
                    return true;
                }
            }
        }
        false
    }
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn segments_cross(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    (d1 > 0.0 && d2 < 0.0 || d1 < 0.0 && d2 > 0.0) && (d3 > 0.0 && d4 < 0.0 || d3 < 0.0 && d4 > 0.0)
}

/// Parse a labelme file and pick the central-object polygon.
///
/// The first polygon whose label equals `label` is used (any polygon when
/// `label` is `None`); remaining polygons are ignored with a warning. The
/// returned image path is resolved relative to the annotation file.
pub fn load_annotation(
    path: impl AsRef<Path>,
    label: Option<&str>,
) -> Result<(PathBuf, PolygonAnnotation)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let doc: LabelmeFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })?;

    let mut chosen = None;
    let mut ignored = 0usize;
    for shape in &doc.shapes {
        let usable = shape.shape_type == "polygon" && label.is_none_or(|l| l == shape.label);
        if usable && chosen.is_none() {
            chosen = Some(shape);
        } else {
            ignored += 1;
        }
    }
    if ignored > 0 {
        warn!("{}: ignoring {ignored} shape(s) besides the central object", path.display());
    }
    let shape = chosen.ok_or_else(|| {
        Error::Validation(format!(
            "{}: no polygon with label {:?}",
            path.display(),
            label.unwrap_or("<any>")
        ))
    })?;

    let points = shape.points.iter().map(|p| (p[0], p[1])).collect();
    let annotation = PolygonAnnotation::new(
        points,
        shape.label.clone(),
        doc.image_width as usize,
        doc.image_height as usize,
    )?;
    let image_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&doc.image_path);
    Ok((image_path, annotation))
}

/// Write a single-polygon labelme document. `image_path` is stored verbatim.
pub fn write_annotation(
    path: impl AsRef<Path>,
    image_path: &str,
    annotation: &PolygonAnnotation,
) -> Result<()> {
    let path = path.as_ref();
    let doc = LabelmeFile {
        version: Some("5.0.1".to_string()),
        shapes: vec![LabelmeShape {
            label: annotation.label.clone(),
            points: annotation.points.iter().map(|&(x, y)| [x, y]).collect(),
            shape_type: "polygon".to_string(),
        }],
        image_path: image_path.to_string(),
        image_width: annotation.image_width as u32,
        image_height: annotation.image_height as u32,
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        field: String::new(),
        message: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Fill the polygon with the even-odd rule, sampling at pixel centers.
pub fn rasterize_polygon(annotation: &PolygonAnnotation) -> BinaryMask {
    let (w, h) = (annotation.image_width, annotation.image_height);
    let mut mask = BinaryMask::new(w, h).expect("annotation dims validated");
    if annotation.is_degenerate() {
        warn!("zero-area polygon rasterizes to an empty mask");
        return mask;
    }
    if annotation.is_self_intersecting() {
        warn!("self-intersecting polygon; filling with the even-odd rule");
    }

    let pts = &annotation.points;
    let n = pts.len();
    let mut xs: Vec<f64> = Vec::with_capacity(n);
    for row in 0..h {
        let py = row as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let (xi, yi) = pts[i];
            let (xj, yj) = pts[(i + n - 1) % n];
            if (yi > py) != (yj > py) {
                xs.push((xj - xi) * (py - yi) / (yj - yi) + xi);
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            // Pixel centers px with span[0] <= px < span[1].
            let start = first_center_at_or_after(span[0], w);
            let end = first_center_at_or_after(span[1], w);
            for x in start..end {
                mask.set(x, row, true);
            }
        }
    }
    mask
}

/// Smallest column index whose center `x + 0.5` is `>= s`, clamped to `[0, w]`.
fn first_center_at_or_after(s: f64, w: usize) -> usize {
    let guess = (s - 0.5).ceil().clamp(0.0, w as f64) as usize;
    let mut x = guess;
    while x < w && (x as f64 + 0.5) < s {
        x += 1;
    }
    while x > 0 && ((x - 1) as f64 + 0.5) >= s {
        x -= 1;
    }
    x
}
