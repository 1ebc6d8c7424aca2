//! Minimal raster charts: line/scatter plots with shaded spans and box plots.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

pub const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
pub const GRID: Rgb<u8> = Rgb([225, 225, 225]);
pub const BLUE: Rgb<u8> = Rgb([31, 119, 180]);
pub const ORANGE: Rgb<u8> = Rgb([255, 127, 14]);
pub const GREEN: Rgb<u8> = Rgb([44, 160, 44]);
pub const RED: Rgb<u8> = Rgb([214, 39, 40]);
pub const NIGHT: Rgb<u8> = Rgb([215, 215, 230]);
pub const HIGHLIGHT: Rgb<u8> = Rgb([255, 236, 179]);

const GLYPH_W: u32 = 5;

fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '.' => [0, 0, 0, 0, 0, 0x0C, 0x0C],
        ',' => [0, 0, 0, 0, 0x0C, 0x04, 0x08],
        '-' => [0, 0, 0, 0x1F, 0, 0, 0],
        '+' => [0, 0x04, 0x04, 0x1F, 0x04, 0x04, 0],
        ':' => [0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0],
        '/' => [0, 0x01, 0x02, 0x04, 0x08, 0x10, 0],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        '_' => [0, 0, 0, 0, 0, 0, 0x1F],
        '=' => [0, 0, 0x1F, 0, 0x1F, 0, 0],
        '%' => [0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03],
        _ => [0; 7],
    }
}

/// Drawing surface with clipped primitives.
pub struct Canvas {
    img: RgbImage,
}

impl Canvas {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            img: RgbImage::from_pixel(width, height, WHITE),
        }
    }

    pub fn into_image(self) -> RgbImage {
        self.img
    }

    pub fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.put(x, y, c);
            }
        }
    }

    pub fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        // Guard against absurd spans from far off-canvas points.
        for _ in 0..=(dx - dy).min(100_000) {
            self.put(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn rect_outline(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        self.line((x0, y0), (x1, y0), c);
        self.line((x1, y0), (x1, y1), c);
        self.line((x1, y1), (x0, y1), c);
        self.line((x0, y1), (x0, y0), c);
    }

    pub fn dot(&mut self, x: i64, y: i64, r: i64, c: Rgb<u8>) {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    self.put(x + dx, y + dy, c);
                }
            }
        }
    }

    pub fn text(&mut self, x: i64, y: i64, s: &str, c: Rgb<u8>) {
        for (i, ch) in s.chars().enumerate() {
            let rows = glyph(ch);
            let ox = x + i as i64 * (GLYPH_W as i64 + 1);
            for (r, bits) in rows.iter().enumerate() {
                for b in 0..GLYPH_W {
                    if bits & (1 << (GLYPH_W - 1 - b)) != 0 {
                        self.put(ox + b as i64, y + r as i64, c);
                    }
                }
            }
        }
    }

    pub fn text_width(s: &str) -> i64 {
        s.chars().count() as i64 * (GLYPH_W as i64 + 1)
    }

    /// Text rotated a quarter turn counter-clockwise, reading bottom to top.
    pub fn text_vertical(&mut self, x: i64, y_bottom: i64, s: &str, c: Rgb<u8>) {
        for (i, ch) in s.chars().enumerate() {
            let rows = glyph(ch);
            let oy = y_bottom - i as i64 * (GLYPH_W as i64 + 1);
            for (r, bits) in rows.iter().enumerate() {
                for b in 0..GLYPH_W {
                    if bits & (1 << (GLYPH_W - 1 - b)) != 0 {
                        self.put(x + r as i64, oy - b as i64, c);
                    }
                }
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.img.save(path).map_err(|e| Error::image(path, e))
    }
}

/// Round step for about `target` ticks over `span`.
pub fn nice_step(span: f64, target: usize) -> f64 {
    if !(span > 0.0) || !span.is_finite() {
        return 1.0;
    }
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f < 1.5 {
        1.0
    } else if f < 3.0 {
        2.0
    } else if f < 7.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn format_tick(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let s = format!("{v:.decimals$}");
    if s == "-0" || s.starts_with("-0.") && s.trim_start_matches(['-', '0', '.']).is_empty() {
        s[1..].to_string()
    } else {
        s
    }
}

fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 1e-12 { lo.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    Line,
    Points,
    LinePoints,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: Rgb<u8>,
    pub style: Style,
    /// Per-point colors overriding `color` for markers.
    pub point_colors: Option<Vec<Rgb<u8>>>,
}

impl Series {
    pub fn line(label: &str, points: Vec<(f64, f64)>, color: Rgb<u8>) -> Self {
        Self {
            label: label.into(),
            points,
            color,
            style: Style::LinePoints,
            point_colors: None,
        }
    }
}

/// Background band across an x interval.
#[derive(Clone, Copy, Debug)]
pub struct Span {
    pub start: f64,
    pub end: f64,
    pub color: Rgb<u8>,
}

struct Frame {
    left: i64,
    top: i64,
    right: i64,
    bottom: i64,
    x: (f64, f64),
    y: (f64, f64),
    invert_y: bool,
}

impl Frame {
    fn px(&self, x: f64) -> i64 {
        let t = (x - self.x.0) / (self.x.1 - self.x.0);
        self.left + (t * (self.right - self.left) as f64).round() as i64
    }

    fn py(&self, y: f64) -> i64 {
        let mut t = (y - self.y.0) / (self.y.1 - self.y.0);
        if self.invert_y {
            t = 1.0 - t;
        }
        self.bottom - (t * (self.bottom - self.top) as f64).round() as i64
    }

    fn draw_axes(&self, c: &mut Canvas, title: &str, x_label: &str, y_label: &str, x_ticks: bool) {
        let ys = nice_step(self.y.1 - self.y.0, 6);
        let mut v = (self.y.0 / ys).ceil() * ys;
        while v <= self.y.1 + 1e-9 * ys {
            let y = self.py(v);
            c.line((self.left, y), (self.right, y), GRID);
            let label = format_tick(v, ys);
            c.text(self.left - 6 - Canvas::text_width(&label), y - 3, &label, BLACK);
            v += ys;
        }
        if x_ticks {
            let xs = nice_step(self.x.1 - self.x.0, 8);
            let mut v = (self.x.0 / xs).ceil() * xs;
            while v <= self.x.1 + 1e-9 * xs {
                let x = self.px(v);
                c.line((x, self.bottom), (x, self.bottom + 4), BLACK);
                let label = format_tick(v, xs);
                c.text(x - Canvas::text_width(&label) / 2, self.bottom + 8, &label, BLACK);
                v += xs;
            }
        }
        c.rect_outline(self.left, self.top, self.right, self.bottom, BLACK);
        let w = c.img.width() as i64;
        c.text((w - Canvas::text_width(title)) / 2, 10, title, BLACK);
        c.text(
            (self.left + self.right - Canvas::text_width(x_label)) / 2,
            self.bottom + 24,
            x_label,
            BLACK,
        );
        c.text_vertical(8, (self.top + self.bottom + Canvas::text_width(y_label)) / 2, y_label, BLACK);
    }
}

/// Line, scatter or mixed chart.
#[derive(Clone, Debug, Default)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub spans: Vec<Span>,
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
    /// Put larger y values lower, as in image coordinates.
    pub invert_y: bool,
}

impl LineChart {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            ..Default::default()
        }
    }

    fn data_range(&self, pick: impl Fn(&(f64, f64)) -> f64) -> (f64, f64) {
        let vals = self.series.iter().flat_map(|s| s.points.iter().map(&pick));
        let (lo, hi) = vals
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        padded_range(lo, hi)
    }

    pub fn render(&self, width: u32, height: u32) -> Canvas {
        let mut c = Canvas::new(width, height);
        let frame = Frame {
            left: 70,
            top: 30,
            right: width as i64 - 20,
            bottom: height as i64 - 45,
            x: self.x_range.unwrap_or_else(|| self.data_range(|p| p.0)),
            y: self.y_range.unwrap_or_else(|| self.data_range(|p| p.1)),
            invert_y: self.invert_y,
        };
        for s in &self.spans {
            let (a, b) = (frame.px(s.start).max(frame.left), frame.px(s.end).min(frame.right));
            if a <= b {
                c.fill_rect(a, frame.top, b, frame.bottom, s.color);
            }
        }
        frame.draw_axes(&mut c, &self.title, &self.x_label, &self.y_label, true);

        for s in &self.series {
            let pts: Vec<(i64, i64)> = s.points.iter().map(|&(x, y)| (frame.px(x), frame.py(y))).collect();
            if matches!(s.style, Style::Line | Style::LinePoints) {
                for w in pts.windows(2) {
                    c.line(w[0], w[1], s.color);
                }
            }
            if matches!(s.style, Style::Points | Style::LinePoints) || pts.len() == 1 {
                for (i, &(x, y)) in pts.iter().enumerate() {
                    let col = s.point_colors.as_ref().and_then(|v| v.get(i).copied()).unwrap_or(s.color);
                    c.dot(x, y, 2, col);
                }
            }
        }

        let mut ly = frame.top + 6;
        for s in self.series.iter().filter(|s| !s.label.is_empty()) {
            let x = frame.right - 10 - Canvas::text_width(&s.label) - 16;
            c.fill_rect(x, ly + 2, x + 10, ly + 4, s.color);
            c.text(x + 16, ly, &s.label, BLACK);
            ly += 12;
        }
        c
    }

    pub fn save(&self, path: impl AsRef<Path>, width: u32, height: u32) -> Result<()> {
        self.render(width, height).save(path)
    }
}

/// Quantile with linear interpolation between order statistics (type 7).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Five-number summary with whiskers at the most extreme data within 1.5 IQR.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = v.iter().copied().filter(|x| (lo_fence..=hi_fence).contains(x)).collect();
        Self {
            q1,
            median,
            q3,
            whisker_low: inside.first().copied().unwrap_or(q1),
            whisker_high: inside.last().copied().unwrap_or(q3),
            outliers: v.into_iter().filter(|x| !(lo_fence..=hi_fence).contains(x)).collect(),
        }
    }
}

/// One box per x position.
#[derive(Clone, Debug, Default)]
pub struct BoxChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub boxes: Vec<(f64, BoxStats)>,
}

impl BoxChart {
    pub fn render(&self, width: u32, height: u32) -> Canvas {
        let mut c = Canvas::new(width, height);
        let xs: Vec<f64> = self.boxes.iter().map(|b| b.0).collect();
        let x_lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let x_hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (y_lo, y_hi) = self
            .boxes
            .iter()
            .flat_map(|(_, b)| b.outliers.iter().copied().chain([b.whisker_low, b.whisker_high]))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let x = padded_range(x_lo - 0.5, x_hi + 0.5);
        let frame = Frame {
            left: 70,
            top: 30,
            right: width as i64 - 20,
            bottom: height as i64 - 45,
            x,
            y: padded_range(y_lo, y_hi),
            invert_y: false,
        };
        frame.draw_axes(&mut c, &self.title, &self.x_label, &self.y_label, true);
        let slot = (frame.right - frame.left) as f64 / (x.1 - x.0);
        let half = ((slot * 0.35) as i64).clamp(1, 12);
        for (xv, b) in &self.boxes {
            let cx = frame.px(*xv);
            c.line((cx, frame.py(b.whisker_low)), (cx, frame.py(b.q1)), BLACK);
            c.line((cx, frame.py(b.q3)), (cx, frame.py(b.whisker_high)), BLACK);
            c.line((cx - half / 2, frame.py(b.whisker_low)), (cx + half / 2, frame.py(b.whisker_low)), BLACK);
            c.line((cx - half / 2, frame.py(b.whisker_high)), (cx + half / 2, frame.py(b.whisker_high)), BLACK);
            c.fill_rect(cx - half, frame.py(b.q3), cx + half, frame.py(b.q1), Rgb([173, 206, 230]));
            c.rect_outline(cx - half, frame.py(b.q3), cx + half, frame.py(b.q1), BLUE);
            c.line((cx - half, frame.py(b.median)), (cx + half, frame.py(b.median)), RED);
            for &o in &b.outliers {
                c.dot(cx, frame.py(o), 1, BLACK);
            }
        }
        c
    }

    pub fn save(&self, path: impl AsRef<Path>, width: u32, height: u32) -> Result<()> {
        self.render(width, height).save(path)
    }
}

/// Blue-to-red ramp for `t` in [0, 1].
pub fn time_color(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    Rgb([lerp(31.0, 214.0), lerp(119.0, 39.0), lerp(180.0, 40.0)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn whiskers_stop_at_fences() {
        let b = BoxStats::from_values(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 100.0]);
        assert_eq!((b.q1, b.median, b.q3), (3.5, 6.0, 8.5));
        assert_eq!(b.whisker_low, 1.0);
        assert_eq!(b.whisker_high, 10.0);
        assert_eq!(b.outliers, vec![100.0]);
    }

    #[test]
    fn nice_steps() {
        assert_eq!(nice_step(10.0, 5), 2.0);
        assert_eq!(nice_step(1.0, 5), 0.2);
        assert_eq!(nice_step(400_000.0, 6), 50_000.0);
        assert_eq!(format_tick(0.30000000000000004, 0.1), "0.3");
        assert_eq!(format_tick(-0.0, 0.5), "0.0");
    }

    #[test]
    fn charts_render_degenerate_inputs() {
        let mut chart = LineChart::new("ONE POINT", "X", "Y");
        chart.series.push(Series::line("a", vec![(1.0, 5.0)], BLUE));
        let img = chart.render(200, 150).into_image();
        assert_eq!(img.dimensions(), (200, 150));
        assert!(img.pixels().any(|p| *p == BLUE));

        let boxes = BoxChart {
            boxes: vec![(0.0, BoxStats::from_values(&[2.0; 11]))],
            ..Default::default()
        };
        assert_eq!(boxes.render(120, 100).into_image().dimensions(), (120, 100));
    }

    #[test]
    fn text_draws_known_glyph() {
        let mut c = Canvas::new(10, 10);
        c.text(0, 0, "1", BLACK);
        let img = c.into_image();
        // Top row of '1' has only the centre column set.
        let row: Vec<bool> = (0..5).map(|x| img.get_pixel(x, 0) == &BLACK).collect();
        assert_eq!(row, [false, false, true, false, false]);
    }
}
