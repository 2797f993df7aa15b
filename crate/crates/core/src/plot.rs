//! Static PNG charts of training logs: loss curves and per-class IoU bars.
//!
//! Charts carry no text. Series colors follow [`PALETTE`] in the order the logs are given.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::losses::TERM_NAMES;
use crate::train::LogRecord;

pub const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

const PANEL_W: u32 = 240;
const PANEL_H: u32 = 140;
const MARGIN: u32 = 10;
const BG: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([90, 90, 90]);

struct Canvas(RgbImage);

impl Canvas {
    fn new(w: u32, h: u32) -> Self {
        Canvas(RgbImage::from_pixel(w, h, BG))
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.0.width() && (y as u32) < self.0.height() {
            self.0.put_pixel(x as u32, y as u32, c);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
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

    fn rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.put(x, y, c);
            }
        }
    }

    fn frame(&mut self, x0: i64, y0: i64, x1: i64, y1: i64) {
        self.line((x0, y0), (x0, y1), AXIS);
        self.line((x0, y1), (x1, y1), AXIS);
    }

    fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        self.0.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

fn color(i: usize) -> Rgb<u8> {
    Rgb(PALETTE[i % PALETTE.len()])
}

/// One panel per loss term plus the weighted total, laid out 4 x 2; each log is one line.
pub fn plot_loss_curves(logs: &[Vec<LogRecord>], path: &Path) -> Result<()> {
    let series_names: Vec<&str> = TERM_NAMES.iter().copied().chain(["total"]).collect();
    let cols = 4u32;
    let rows = (series_names.len() as u32).div_ceil(cols);
    let mut canvas = Canvas::new(cols * (PANEL_W + MARGIN) + MARGIN, rows * (PANEL_H + MARGIN) + MARGIN);
    for (k, _) in series_names.iter().enumerate() {
        let px = (MARGIN + (k as u32 % cols) * (PANEL_W + MARGIN)) as i64;
        let py = (MARGIN + (k as u32 / cols) * (PANEL_H + MARGIN)) as i64;
        let (pw, ph) = (PANEL_W as i64, PANEL_H as i64);
        canvas.frame(px, py, px + pw, py + ph);
        let curves: Vec<Vec<(f64, f64)>> = logs
            .iter()
            .map(|log| {
                log.iter()
                    .filter_map(|r| match r {
                        LogRecord::Step(s) => {
                            let v = if k < TERM_NAMES.len() { s.report.terms.0[k] } else { s.report.total };
                            v.is_finite().then_some((s.iteration as f64, v))
                        }
                        LogRecord::Eval(_) => None,
                    })
                    .collect()
            })
            .collect();
        let pts = curves.iter().flatten();
        let (mut xmax, mut ymin, mut ymax) = (1.0f64, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
        if !ymin.is_finite() {
            continue;
        }
        if ymax - ymin < 1e-12 {
            ymax = ymin + 1.0;
        }
        for (i, curve) in curves.iter().enumerate() {
            let to_px = |(x, y): (f64, f64)| {
                (
                    px + 1 + ((x / xmax) * (pw - 2) as f64).round() as i64,
                    py + ph - 1 - (((y - ymin) / (ymax - ymin)) * (ph - 2) as f64).round() as i64,
                )
            };
            for w in curve.windows(2) {
                canvas.line(to_px(w[0]), to_px(w[1]), color(i));
            }
            if curve.len() == 1 {
                let (x, y) = to_px(curve[0]);
                canvas.rect(x - 1, y - 1, x + 1, y + 1, color(i));
            }
        }
    }
    canvas.save(path)
}

/// Grouped bars: one group per class, one bar per log from its last eval record, on a 0..1 axis.
/// Undefined classes leave a gap.
pub fn plot_iou_bars(logs: &[Vec<LogRecord>], path: &Path) -> Result<()> {
    let finals: Vec<&Vec<Option<f64>>> = logs
        .iter()
        .filter_map(|log| {
            log.iter().rev().find_map(|r| match r {
                LogRecord::Eval(e) => Some(&e.per_class_iou),
                LogRecord::Step(_) => None,
            })
        })
        .collect();
    if finals.is_empty() {
        return Err(Error::Data("no eval records to plot".into()));
    }
    let classes = finals.iter().map(|f| f.len()).max().unwrap_or(0);
    let bar = 10i64;
    let group = bar * finals.len() as i64 + 12;
    let (w, h) = (MARGIN as i64 * 2 + group * classes as i64, 220i64);
    let mut canvas = Canvas::new(w as u32, h as u32);
    let (x0, y0, y1) = (MARGIN as i64, MARGIN as i64, h - MARGIN as i64);
    for t in 1..=4 {
        let y = y1 - (y1 - y0) * t / 4;
        for x in (x0..w - MARGIN as i64).step_by(4) {
            canvas.put(x, y, Rgb([210, 210, 210]));
        }
    }
    for (i, f) in finals.iter().enumerate() {
        for (c, iou) in f.iter().enumerate() {
            if let Some(v) = iou {
                let left = x0 + 6 + c as i64 * group + i as i64 * bar;
                let top = y1 - ((y1 - y0) as f64 * v.clamp(0.0, 1.0)).round() as i64;
                canvas.rect(left, top, left + bar - 2, y1, color(i));
            }
        }
    }
    canvas.frame(x0, y0, w - MARGIN as i64, y1);
    canvas.save(path)
}
