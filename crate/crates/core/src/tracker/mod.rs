//! Time-lapse measurement of one fruit: eleven-scale area estimate with
//! median selection, center-of-mass re-centering, outlier clamping.

mod report;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{crop_resize, BinaryMask, CropGeometry, CropWindow, RasterImage};
use crate::predictor::{binarize, predict_many, Averaging, Segmenter, DEFAULT_THRESHOLD};

pub use report::{render_thumbnails, report, write_frame_artifacts, ReportOptions, ReportFiles};

/// Crop scale ladder, largest first.
pub const SCALES: [f64; 11] = [1.00, 0.95, 0.90, 0.85, 0.80, 0.75, 0.70, 0.65, 0.60, 0.55, 0.50];

/// Point-mode window as a multiple of the detected bounding square. Large
/// enough that the fruit stays whole inside the smallest (x0.5) crop.
pub const AUTO_WINDOW_FACTOR: f64 = 3.0;

/// Default area cap for outlier clamping.
pub const DEFAULT_CAP: f64 = 400_000.0;

/// Eleven crops of one photo, segmented and counted.
#[derive(Clone, Debug)]
pub struct Measurement {
    pub photo_id: u64,
    pub scale_factors: [f64; 11],
    pub raw_counts: [usize; 11],
    /// Areas in original-photo pixels.
    pub rescaled_counts: [f64; 11],
    pub median_index: usize,
    pub chosen_area: f64,
    pub chosen_mask: BinaryMask,
    pub crop_window: CropWindow,
    pub crop_geometry: CropGeometry,
    /// Crop the median mask was predicted on (network scale).
    pub chosen_crop: RasterImage,
    /// All eleven binarized masks, in ladder order.
    pub masks: Vec<BinaryMask>,
}

impl Measurement {
    pub fn low_confidence(&self) -> bool {
        self.chosen_mask.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub clamped: bool,
    pub low_confidence: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub photo_id: u64,
    pub timestamp: Option<String>,
    /// Original-photo pixels from the top-left corner.
    pub center: (f64, f64),
    pub area: f64,
    pub rescaled_counts: [f64; 11],
    pub flags: Flags,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhotoEntry {
    pub photo_id: u64,
    pub path: PathBuf,
    pub timestamp: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackConfig {
    /// Window side at scale 1.0; `None` sizes it from the first frame.
    pub base_window: Option<usize>,
    pub use_d4: bool,
    pub threshold: f64,
    pub averaging: Averaging,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            base_window: None,
            use_d4: true,
            threshold: DEFAULT_THRESHOLD,
            averaging: Averaging::Probability,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackSeries {
    pub records: Vec<TrackRecord>,
    pub manifest: Vec<PhotoEntry>,
    pub config: TrackConfig,
    /// Window side actually used (resolved when `config.base_window` is unset).
    pub base_window: usize,
}

/// Median by value; among equal values the lowest ladder index wins.
pub fn median_index(values: &[f64; 11]) -> usize {
    let mut sorted = *values;
    sorted.sort_by(f64::total_cmp);
    let m = sorted[5];
    values.iter().position(|&v| v.total_cmp(&m).is_eq()).expect("median is an element")
}

fn check_center(photo: &RasterImage, center: (f64, f64)) -> Result<()> {
    let (x, y) = center;
    if !(x >= 0.0 && y >= 0.0 && x < photo.width() as f64 && y < photo.height() as f64) {
        return Err(Error::Geometry(format!(
            "center ({x:.2}, {y:.2}) outside the {}x{} photo",
            photo.width(),
            photo.height()
        )));
    }
    Ok(())
}

/// Segment eleven crops around `center` and keep the median-area one.
pub fn multiscale_measure(
    seg: &impl Segmenter,
    photo: &RasterImage,
    photo_id: u64,
    center: (f64, f64),
    base_window: usize,
    config: &TrackConfig,
) -> Result<Measurement> {
    check_center(photo, center)?;
    let side = seg.input_side();
    let base = CropWindow::new(center, base_window, 1.0)?;

    let mut crops = Vec::with_capacity(11);
    let mut windows = Vec::with_capacity(11);
    for &s in &SCALES {
        let w = base.with_scale(s);
        w.validate()?;
        let (crop, geom) = crop_resize(photo, &w, side)?;
        crops.push(crop);
        windows.push((w, geom));
    }
    let maps = predict_many(seg, &crops, config.use_d4, config.averaging)?;
    let masks: Vec<BinaryMask> = maps.iter().map(|p| binarize(p, config.threshold)).collect();

    let mut raw_counts = [0usize; 11];
    let mut rescaled_counts = [0f64; 11];
    for i in 0..11 {
        raw_counts[i] = masks[i].count();
        let k = windows[i].0.effective_side() as f64 / side as f64;
        rescaled_counts[i] = raw_counts[i] as f64 * k * k;
    }
    let median_index = median_index(&rescaled_counts);
    let (crop_window, crop_geometry) = windows[median_index];
    Ok(Measurement {
        photo_id,
        scale_factors: SCALES,
        raw_counts,
        rescaled_counts,
        median_index,
        chosen_area: rescaled_counts[median_index],
        chosen_mask: masks[median_index].clone(),
        crop_window,
        crop_geometry,
        chosen_crop: crops.swap_remove(median_index),
        masks,
    })
}

/// Mean foreground pixel center, in original-photo coordinates.
pub fn center_of_mass(mask: &BinaryMask, geometry: &CropGeometry) -> Result<(f64, f64)> {
    if mask.width() != geometry.out_side || mask.height() != geometry.out_side {
        return Err(Error::Shape(format!(
            "mask is {}x{}, crop grid is {}",
            mask.width(),
            mask.height(),
            geometry.out_side
        )));
    }
    let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0usize);
    for (x, y) in mask.foreground() {
        sx += x as f64 + 0.5;
        sy += y as f64 + 0.5;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("mask has no foreground".into()));
    }
    Ok(geometry.to_source(sx / n as f64, sy / n as f64))
}

/// Window side for a point-only target: segment the largest centered square
/// around `center`, take the connected component under (or nearest to) the
/// point, and scale its bounding square by [`AUTO_WINDOW_FACTOR`].
pub fn auto_window(seg: &impl Segmenter, photo: &RasterImage, center: (f64, f64), config: &TrackConfig) -> Result<usize> {
    check_center(photo, center)?;
    let side = seg.input_side();
    let probe_side = photo.width().min(photo.height()).max(2);
    let window = CropWindow::new(center, probe_side, 1.0)?;
    let (crop, geom) = crop_resize(photo, &window, side)?;
    let map = predict_many(seg, std::slice::from_ref(&crop), config.use_d4, config.averaging)?.remove(0);
    let mask = binarize(&map, config.threshold);
    let (u, v) = geom.to_output(center.0, center.1);
    let seed = nearest_foreground(&mask, (u, v))
        .ok_or_else(|| Error::Empty("no fruit detected around the initial center".into()))?;
    let (x0, y0, x1, y1) = component_bounds(&mask, seed);
    let extent = (x1 - x0 + 1).max(y1 - y0 + 1) as f64 * geom.step();
    let w = (AUTO_WINDOW_FACTOR * extent).round() as usize;
    Ok(w.clamp(16, probe_side.max(16) * 2))
}

fn nearest_foreground(mask: &BinaryMask, (u, v): (f64, f64)) -> Option<(usize, usize)> {
    mask.foreground().min_by(|a, b| {
        let d = |p: &(usize, usize)| (p.0 as f64 + 0.5 - u).powi(2) + (p.1 as f64 + 0.5 - v).powi(2);
        d(a).total_cmp(&d(b))
    })
}

/// Bounding box (inclusive) of the 4-connected component containing `seed`.
fn component_bounds(mask: &BinaryMask, seed: (usize, usize)) -> (usize, usize, usize, usize) {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut stack = vec![seed];
    seen[seed.1 * w + seed.0] = true;
    let (mut x0, mut y0, mut x1, mut y1) = (seed.0, seed.1, seed.0, seed.1);
    while let Some((x, y)) = stack.pop() {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
        let mut visit = |nx: usize, ny: usize| {
            if mask.get(nx, ny) && !seen[ny * w + nx] {
                seen[ny * w + nx] = true;
                stack.push((nx, ny));
            }
        };
        if x > 0 {
            visit(x - 1, y);
        }
        if x + 1 < w {
            visit(x + 1, y);
        }
        if y > 0 {
            visit(x, y - 1);
        }
        if y + 1 < h {
            visit(x, y + 1);
        }
    }
    (x0, y0, x1, y1)
}

/// What the tracker hands to a per-frame observer.
pub enum FrameOutcome<'a> {
    Measured(&'a Measurement),
    /// The photo could not be read; the record carries the previous center.
    Unreadable(&'a Error),
}

/// Follow the fruit through `photos`, re-centering every frame on the
/// center of mass of the median measurement. Photos are loaded lazily by
/// `load`; a failed load yields a flagged, zero-area record.
pub fn track_with(
    seg: &impl Segmenter,
    photos: &[PhotoEntry],
    initial_center: (f64, f64),
    config: &TrackConfig,
    mut load: impl FnMut(&PhotoEntry) -> Result<RasterImage>,
    mut on_frame: impl FnMut(&PhotoEntry, FrameOutcome<'_>) -> Result<()>,
) -> Result<TrackSeries> {
    if photos.is_empty() {
        return Err(Error::Empty("no photos to track".into()));
    }
    if photos.windows(2).any(|p| p[0].photo_id >= p[1].photo_id) {
        return Err(Error::Validation("photo ids must be strictly increasing".into()));
    }
    if !(config.threshold > 0.0 && config.threshold < 1.0) {
        return Err(Error::Config(format!("threshold {} outside (0, 1)", config.threshold)));
    }

    let first = load(&photos[0])?;
    check_center(&first, initial_center)?;
    let base_window = match config.base_window {
        Some(w) => w,
        None => auto_window(seg, &first, initial_center, config)?,
    };
    if base_window < 2 {
        return Err(Error::Geometry(format!("base window {base_window} < 2")));
    }

    let mut first = Some(first);
    let mut center = initial_center;
    let mut records = Vec::with_capacity(photos.len());
    for entry in photos {
        let photo = match first.take() {
            Some(p) => Ok(p),
            None => load(entry),
        };
        let mut record = TrackRecord {
            photo_id: entry.photo_id,
            timestamp: entry.timestamp.clone(),
            center,
            area: 0.0,
            rescaled_counts: [0.0; 11],
            flags: Flags {
                clamped: false,
                low_confidence: true,
            },
        };
        match photo {
            Ok(photo) => {
                // A carried-forward center may fall off a differently sized photo.
                let c = (
                    center.0.clamp(0.0, photo.width() as f64 - 1e-6),
                    center.1.clamp(0.0, photo.height() as f64 - 1e-6),
                );
                let m = multiscale_measure(seg, &photo, entry.photo_id, c, base_window, config)?;
                record.rescaled_counts = m.rescaled_counts;
                if let Ok(com) = center_of_mass(&m.chosen_mask, &m.crop_geometry) {
                    let com = (
                        com.0.clamp(0.0, photo.width() as f64 - 1e-6),
                        com.1.clamp(0.0, photo.height() as f64 - 1e-6),
                    );
                    record.center = com;
                    record.area = m.chosen_area;
                    record.flags.low_confidence = false;
                    center = com;
                }
                on_frame(entry, FrameOutcome::Measured(&m))?;
            }
            Err(e) => {
                log::warn!("photo {} unreadable: {e}", entry.photo_id);
                on_frame(entry, FrameOutcome::Unreadable(&e))?;
            }
        }
        records.push(record);
    }
    Ok(TrackSeries {
        records,
        manifest: photos.to_vec(),
        config: config.clone(),
        base_window,
    })
}

/// [`track_with`] reading photos from disk, without per-frame output.
pub fn track(
    seg: &impl Segmenter,
    photos: &[PhotoEntry],
    initial_center: (f64, f64),
    config: &TrackConfig,
) -> Result<TrackSeries> {
    track_with(seg, photos, initial_center, config, |e| RasterImage::load(&e.path), |_, _| Ok(()))
}

/// Replace areas above `cap` by `cap`, flagging them.
pub fn clamp_outliers(series: &TrackSeries, cap: f64) -> Result<TrackSeries> {
    if !(cap > 0.0 && cap.is_finite()) {
        return Err(Error::Config(format!("cap {cap} must be positive")));
    }
    let mut out = series.clone();
    for r in &mut out.records {
        if r.area > cap {
            r.area = cap;
            r.flags.clamped = true;
        }
    }
    Ok(out)
}

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "tif", "tiff", "bmp"];

/// Photos from a directory (sorted by file name, ids from 1) or from a
/// `photo_id,path[,timestamp]` CSV with paths relative to the CSV.
pub fn load_manifest(path: &Path) -> Result<Vec<PhotoEntry>> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let mut entries = if meta.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
            })
            .collect();
        files.sort();
        files
            .into_iter()
            .enumerate()
            .map(|(i, p)| PhotoEntry {
                photo_id: i as u64 + 1,
                path: p,
                timestamp: None,
            })
            .collect::<Vec<_>>()
    } else {
        read_manifest_csv(path)?
    };
    if entries.is_empty() {
        return Err(Error::Empty(format!("no photos in {}", path.display())));
    }
    entries.sort_by_key(|e| e.photo_id);
    if entries.windows(2).any(|p| p[0].photo_id == p[1].photo_id) {
        return Err(Error::Validation(format!("duplicate photo id in {}", path.display())));
    }
    Ok(entries)
}

fn read_manifest_csv(path: &Path) -> Result<Vec<PhotoEntry>> {
    #[derive(Deserialize)]
    struct Row {
        photo_id: u64,
        path: PathBuf,
        #[serde(default)]
        timestamp: Option<String>,
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    r.deserialize::<Row>()
        .map(|row| {
            let row = row.map_err(|e| Error::csv(path, e))?;
            Ok(PhotoEntry {
                photo_id: row.photo_id,
                path: base.join(row.path),
                timestamp: row.timestamp.filter(|t| !t.is_empty()),
            })
        })
        .collect()
}

/// Column names of the per-photo CSV.
pub fn csv_header() -> Vec<String> {
    let mut h: Vec<String> = ["photo_id", "cx", "cy", "area", "clamped", "low_confidence"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(SCALES.iter().map(|s| format!("count_s{:03}", (s * 100.0).round() as u32)));
    h
}

/// One row per record. Floats use the shortest representation that parses
/// back to the same value.
pub fn write_track_csv(path: &Path, records: &[TrackRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(csv_header()).map_err(|e| Error::csv(path, e))?;
    for r in records {
        let mut row = vec![
            r.photo_id.to_string(),
            r.center.0.to_string(),
            r.center.1.to_string(),
            r.area.to_string(),
            r.flags.clamped.to_string(),
            r.flags.low_confidence.to_string(),
        ];
        row.extend(r.rescaled_counts.iter().map(f64::to_string));
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Inverse of [`write_track_csv`]; timestamps are not stored and come back `None`.
pub fn read_track_csv(path: &Path) -> Result<Vec<TrackRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    if header.iter().ne(csv_header().iter().map(String::as_str)) {
        return Err(Error::Validation(format!("{}: unexpected header", path.display())));
    }
    let bad = |line: usize, field: &str, msg: String| Error::Parse {
        path: path.to_path_buf(),
        field: format!("line {line}: {field}"),
        message: msg,
    };
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let line = i + 2;
        let f = |k: usize| -> Result<f64> { row[k].parse().map_err(|e: std::num::ParseFloatError| bad(line, &header[k], e.to_string())) };
        let b = |k: usize| -> Result<bool> { row[k].parse().map_err(|e: std::str::ParseBoolError| bad(line, &header[k], e.to_string())) };
        let mut counts = [0.0; 11];
        for (j, c) in counts.iter_mut().enumerate() {
            *c = f(6 + j)?;
        }
        out.push(TrackRecord {
            photo_id: row[0].parse().map_err(|e: std::num::ParseIntError| bad(line, "photo_id", e.to_string()))?,
            timestamp: None,
            center: (f(1)?, f(2)?),
            area: f(3)?,
            rescaled_counts: counts,
            flags: Flags {
                clamped: b(4)?,
                low_confidence: b(5)?,
            },
        });
    }
    Ok(out)
}
