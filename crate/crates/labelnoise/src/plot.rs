//! Static PNG figures: per-epoch curves and a transition-matrix heatmap.
//! Images carry no text; the CSV written beside them is the record.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use labelnoise_core::eval::Matrix;
use labelnoise_core::semi::SemiReport;
use labelnoise_core::train::RunReport;

use crate::error::{Error, Result};
use crate::report;

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const MARGIN: u32 = 40;
const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

pub const ACCURACY_FILE: &str = "accuracy.png";
pub const LOSSES_FILE: &str = "losses.png";
pub const HEATMAP_FILE: &str = "transition.png";
pub const CSV_FILE: &str = "report.csv";

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn draw_line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
            let (px, py) = (x.round() as i64 + dx, y.round() as i64 + dy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, c);
            }
        }
    }
}

/// Line chart of each series against its index; missing points break the line.
pub fn line_chart(series: &[Vec<Option<f64>>], path: &Path) -> Result<()> {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let values = series.iter().flatten().flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() {
        (lo, if hi > lo { hi } else { lo + 1.0 })
    } else {
        (0.0, 1.0)
    };
    let n = series.iter().map(Vec::len).max().unwrap_or(0).max(2);
    let (left, right) = (MARGIN as f64, (WIDTH - MARGIN) as f64);
    let (top, bottom) = (MARGIN as f64, (HEIGHT - MARGIN) as f64);
    let axis = Rgb([0, 0, 0]);
    draw_line(&mut img, (left, top), (left, bottom), axis);
    draw_line(&mut img, (left, bottom), (right, bottom), axis);
    let to_px = |i: usize, v: f64| {
        (
            left + (right - left) * i as f64 / (n - 1) as f64,
            bottom - (bottom - top) * (v - lo) / (hi - lo),
        )
    };
    for (s, points) in series.iter().enumerate() {
        let color = Rgb(PALETTE[s % PALETTE.len()]);
        for i in 1..points.len() {
            if let (Some(a), Some(b)) = (points[i - 1], points[i]) {
                if a.is_finite() && b.is_finite() {
                    draw_line(&mut img, to_px(i - 1, a), to_px(i, b), color);
                }
            }
        }
        if points.len() == 1 {
            if let Some(v) = points[0].filter(|v| v.is_finite()) {
                let p = to_px(0, v);
                draw_line(&mut img, p, (p.0 + 3.0, p.1), color);
            }
        }
    }
    save(&img, path)
}

/// Heatmap of a row-stochastic matrix, white at 0 to dark blue at 1.
pub fn heatmap(m: &Matrix, path: &Path) -> Result<()> {
    let k = m.len().max(1) as u32;
    let cell = (HEIGHT / k).max(4);
    let mut img = RgbImage::from_pixel(cell * k, cell * k, Rgb([255, 255, 255]));
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let t = v.clamp(0.0, 1.0);
            let shade = |full: f64| (255.0 - t * (255.0 - full)).round() as u8;
            let c = Rgb([shade(8.0), shade(48.0), shade(107.0)]);
            for y in 0..cell {
                for x in 0..cell {
                    img.put_pixel(j as u32 * cell + x, i as u32 * cell + y, c);
                }
            }
        }
    }
    save(&img, path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the CSV, accuracy and loss curves, and (when the report has one)
/// the transition heatmap. Returns the paths written.
pub fn plot_report(report: &RunReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if report.epochs.is_empty() {
        return Err(Error::Config("report has no epochs".into()));
    }
    ensure_dir(out_dir)?;
    let csv = out_dir.join(CSV_FILE);
    report::write_epoch_csv(&csv, &report.epochs)?;
    let e = &report.epochs;
    let col = |f: &dyn Fn(&labelnoise_core::train::EpochRecord) -> Option<f64>| e.iter().map(f).collect::<Vec<_>>();
    let acc = out_dir.join(ACCURACY_FILE);
    line_chart(
        &[
            col(&|r| Some(r.train_accuracy[0])),
            col(&|r| Some(r.train_accuracy[1])),
            col(&|r| r.test_accuracy.map(|t| t[0])),
            col(&|r| r.test_accuracy.map(|t| t[1])),
        ],
        &acc,
    )?;
    let losses = out_dir.join(LOSSES_FILE);
    line_chart(
        &[
            col(&|r| Some(r.coteaching)),
            col(&|r| Some(r.transition_ce)),
            col(&|r| Some(r.policy_gradient)),
            col(&|r| Some(r.decorrelation)),
            col(&|r| Some(r.total)),
        ],
        &losses,
    )?;
    let mut paths = vec![csv, acc, losses];
    if let Some(m) = &report.transition_matrix {
        let p = out_dir.join(HEATMAP_FILE);
        heatmap(m, &p)?;
        paths.push(p);
    }
    Ok(paths)
}

pub fn plot_semi_report(report: &SemiReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if report.epochs.is_empty() {
        return Err(Error::Config("report has no epochs".into()));
    }
    ensure_dir(out_dir)?;
    let csv = out_dir.join(CSV_FILE);
    report::write_semi_csv(&csv, &report.epochs)?;
    let e = &report.epochs;
    let acc = out_dir.join(ACCURACY_FILE);
    line_chart(
        &[
            e.iter().map(|r| Some(r.train_accuracy)).collect(),
            e.iter().map(|r| r.test_accuracy).collect(),
        ],
        &acc,
    )?;
    let losses = out_dir.join(LOSSES_FILE);
    line_chart(
        &[
            e.iter().map(|r| Some(r.clean)).collect(),
            e.iter().map(|r| Some(r.noisy)).collect(),
            e.iter().map(|r| Some(r.policy_gradient)).collect(),
            e.iter().map(|r| Some(r.decorrelation)).collect(),
            e.iter().map(|r| Some(r.total)).collect(),
        ],
        &losses,
    )?;
    Ok(vec![csv, acc, losses])
}
