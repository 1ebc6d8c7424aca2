//! Plots, summary CSVs and per-photo images for a tracked series.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Measurement, TrackSeries, SCALES};
use crate::error::{Error, Result};
use crate::imagery::RasterImage;
use crate::plot::{time_color, BoxChart, BoxStats, LineChart, Series, Span, Style, BLUE, GRID, HIGHLIGHT, NIGHT};
use crate::predictor::{render_overlay, DEFAULT_ALPHA};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportOptions {
    /// Photo-id intervals shaded as night.
    pub night_spans: Vec<(f64, f64)>,
    /// Photo-id intervals to draw attention to.
    pub highlight_spans: Vec<(f64, f64)>,
    pub width: u32,
    pub height: u32,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            night_spans: Vec::new(),
            highlight_spans: Vec::new(),
            width: 960,
            height: 480,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub area_plot: PathBuf,
    pub box_plot: PathBuf,
    pub position_plot: PathBuf,
    pub timeline_csv: PathBuf,
    pub box_csv: PathBuf,
}

impl ReportFiles {
    pub fn all(&self) -> [&Path; 5] {
        [
            &self.area_plot,
            &self.box_plot,
            &self.position_plot,
            &self.timeline_csv,
            &self.box_csv,
        ]
    }
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Area timeline, per-photo box plot of the eleven counts, and the position
/// trace, each with the numbers behind it as CSV.
pub fn report(series: &TrackSeries, out_dir: &Path, opts: &ReportOptions) -> Result<ReportFiles> {
    let recs = &series.records;
    if recs.is_empty() {
        return Err(Error::Empty("series has no records".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let files = ReportFiles {
        area_plot: out_dir.join("area_timeline.png"),
        box_plot: out_dir.join("area_boxplot.png"),
        position_plot: out_dir.join("positions.png"),
        timeline_csv: out_dir.join("timeline.csv"),
        box_csv: out_dir.join("boxplot.csv"),
    };

    write_rows(
        &files.timeline_csv,
        &["photo_id", "area", "cx", "cy", "clamped", "low_confidence"],
        recs.iter().map(|r| {
            vec![
                r.photo_id.to_string(),
                r.area.to_string(),
                r.center.0.to_string(),
                r.center.1.to_string(),
                r.flags.clamped.to_string(),
                r.flags.low_confidence.to_string(),
            ]
        }),
    )?;

    let mut area = LineChart::new("Fruit area over time", "photo id", "area (pixels)");
    area.series.push(Series::line(
        "area",
        recs.iter().map(|r| (r.photo_id as f64, r.area)).collect(),
        BLUE,
    ));
    for (spans, color) in [(&opts.night_spans, NIGHT), (&opts.highlight_spans, HIGHLIGHT)] {
        area.spans.extend(spans.iter().map(|&(start, end)| Span { start, end, color }));
    }
    area.save(&files.area_plot, opts.width, opts.height)?;

    let stats: Vec<(f64, BoxStats)> = recs
        .iter()
        .map(|r| (r.photo_id as f64, BoxStats::from_values(&r.rescaled_counts)))
        .collect();
    write_rows(
        &files.box_csv,
        &["photo_id", "q1", "median", "q3", "whisker_low", "whisker_high", "outliers"],
        stats.iter().map(|(id, b)| {
            let outliers: Vec<String> = b.outliers.iter().map(f64::to_string).collect();
            vec![
                id.to_string(),
                b.q1.to_string(),
                b.median.to_string(),
                b.q3.to_string(),
                b.whisker_low.to_string(),
                b.whisker_high.to_string(),
                outliers.join(" "),
            ]
        }),
    )?;
    BoxChart {
        title: "Eleven-scale area estimates per photo".into(),
        x_label: "photo id".into(),
        y_label: "area (pixels)".into(),
        boxes: stats,
    }
    .save(&files.box_plot, opts.width, opts.height)?;

    let n = recs.len();
    let t = |i: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
    let points: Vec<(f64, f64)> = recs.iter().map(|r| r.center).collect();
    let mut pos = LineChart::new("Fruit position (image coordinates)", "x (pixels)", "y (pixels)");
    pos.invert_y = true;
    let mut trace = Series::line("trace", points.clone(), GRID);
    trace.style = Style::Line;
    pos.series.push(trace);
    pos.series.push(Series {
        label: "position".into(),
        points,
        color: BLUE,
        style: Style::Points,
        point_colors: Some((0..n).map(|i| time_color(t(i))).collect()),
    });
    pos.save(&files.position_plot, opts.height + 120, opts.height)?;
    Ok(files)
}

/// The eleven masks side by side in ladder order, the chosen one framed.
pub fn render_thumbnails(m: &Measurement) -> Result<RasterImage> {
    const COLS: usize = 6;
    const GAP: usize = 4;
    let s = m.chosen_mask.width();
    let rows = SCALES.len().div_ceil(COLS);
    let (w, h) = (COLS * (s + GAP) + GAP, rows * (s + GAP) + GAP);
    let mut img = RasterImage::filled(w, h, [0.5, 0.5, 0.5])?;
    for (k, mask) in m.masks.iter().enumerate() {
        let (ox, oy) = (GAP + (k % COLS) * (s + GAP), GAP + (k / COLS) * (s + GAP));
        if k == m.median_index {
            for i in 0..s + 2 * GAP - 2 {
                for &(x, y) in &[(ox - GAP / 2 + i, oy - GAP / 2), (ox - GAP / 2 + i, oy + s + GAP / 2 - 1)] {
                    if x < w && y < h {
                        img.set_pixel(x, y, [1.0, 0.0, 0.0]);
                    }
                }
                for &(x, y) in &[(ox - GAP / 2, oy - GAP / 2 + i), (ox + s + GAP / 2 - 1, oy - GAP / 2 + i)] {
                    if x < w && y < h {
                        img.set_pixel(x, y, [1.0, 0.0, 0.0]);
                    }
                }
            }
        }
        for y in 0..s {
            for x in 0..s {
                let v = if mask.get(x, y) { 1.0 } else { 0.0 };
                img.set_pixel(ox + x, oy + y, [v, v, v]);
            }
        }
    }
    Ok(img)
}

/// `thumbnails/photo_NNNNN.png` and `overlays/photo_NNNNN.png` under `dir`.
pub fn write_frame_artifacts(dir: &Path, m: &Measurement) -> Result<(PathBuf, PathBuf)> {
    let thumbs = dir.join("thumbnails");
    let overlays = dir.join("overlays");
    for d in [&thumbs, &overlays] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let name = format!("photo_{:05}.png", m.photo_id);
    let (t, o) = (thumbs.join(&name), overlays.join(&name));
    render_thumbnails(m)?.save(&t)?;
    render_overlay(&m.chosen_crop, &m.chosen_mask, DEFAULT_ALPHA)?.save(&o)?;
    Ok((t, o))
}
