//! CSV and PNG exports: training curves, node time series, heatmaps of
//! space-time matrices and spectrograms, and labeled bar charts.

use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{ErrorMap, Spectrogram};
use crate::train::CurvePoint;

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut out = String::from("step,train_loss,val_loss\n");
    for p in curve {
        match p.val_loss {
            Some(v) => out.push_str(&format!("{},{:.12e},{:.12e}\n", p.step, p.train_loss, v)),
            None => out.push_str(&format!("{},{:.12e},\n", p.step, p.train_loss)),
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One node's time series, one row per sample.
pub fn write_node_csv(path: &Path, dt: f64, series: &[f64]) -> Result<()> {
    let mut out = String::from("time,value\n");
    for (i, v) in series.iter().enumerate() {
        out.push_str(&format!("{:.9e},{:.12e}\n", i as f64 * dt, v));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Row-major matrix as CSV.
pub fn write_matrix_csv(path: &Path, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    if data.len() != rows * cols {
        return Err(Error::config("matrix size mismatch in csv export"));
    }
    let mut out = String::new();
    for r in 0..rows {
        for c in 0..cols {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&format!("{:.9e}", data[r * cols + c]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// PNG rendering
// ---------------------------------------------------------------------------

/// Perceptually ordered five-stop colormap (dark blue → yellow).
fn colormap(t: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [0.267, 0.005, 0.329],
        [0.229, 0.322, 0.545],
        [0.128, 0.567, 0.551],
        [0.369, 0.789, 0.383],
        [0.993, 0.906, 0.144],
    ];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let mut rgb = [0u8; 3];
    for c in 0..3 {
        let v = STOPS[i][c] + f * (STOPS[i + 1][c] - STOPS[i][c]);
        rgb[c] = (v * 255.0).round() as u8;
    }
    rgb
}

/// Renders a row-major matrix as a color-mapped PNG (rows map to y, top row
/// first), auto-scaled to the data range.
pub fn save_heatmap_png(path: &Path, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    if data.len() != rows * cols || rows == 0 || cols == 0 {
        return Err(Error::config("heatmap size mismatch"));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in data {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || hi <= lo {
        hi = lo + 1.0;
    }
    // upscale small matrices so figures stay legible
    let sx = (800 / cols).clamp(1, 24);
    let sy = (600 / rows).clamp(1, 24);
    let (w, h) = (cols * sx, rows * sy);
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let r = y as usize / sy;
        let c = x as usize / sx;
        let v = data[r * cols + c];
        let t = if v.is_finite() { (v - lo) / (hi - lo) } else { 0.0 };
        *px = image::Rgb(colormap(t));
    }
    img.save(path)
        .map_err(|e| Error::format(format!("png encode: {e}")))?;
    Ok(())
}

pub fn save_error_map_png(path: &Path, map: &ErrorMap) -> Result<()> {
    save_heatmap_png(path, map.rows, map.m, &map.data)
}

pub fn save_spectrogram_png(path: &Path, spec: &Spectrogram) -> Result<()> {
    // time on x, frequency on y (low at the bottom)
    let frames = spec.db.len();
    let bins = spec.bins;
    let mut data = vec![0.0; frames * bins];
    for (f, row) in spec.db.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            data[(bins - 1 - b) * frames + f] = v;
        }
    }
    save_heatmap_png(path, bins, frames, &data)
}

// 5x7 bitmap glyphs (column bitmasks, LSB = top row) for bar-chart labels.
fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_uppercase() {
        '0' => [0x3e, 0x51, 0x49, 0x45, 0x3e],
        '1' => [0x00, 0x42, 0x7f, 0x40, 0x00],
        '2' => [0x42, 0x61, 0x51, 0x49, 0x46],
        '3' => [0x21, 0x41, 0x45, 0x4b, 0x31],
        '4' => [0x18, 0x14, 0x12, 0x7f, 0x10],
        '5' => [0x27, 0x45, 0x45, 0x45, 0x39],
        '6' => [0x3c, 0x4a, 0x49, 0x49, 0x30],
        '7' => [0x01, 0x71, 0x09, 0x05, 0x03],
        '8' => [0x36, 0x49, 0x49, 0x49, 0x36],
        '9' => [0x06, 0x49, 0x49, 0x29, 0x1e],
        'A' => [0x7e, 0x11, 0x11, 0x11, 0x7e],
        'B' => [0x7f, 0x49, 0x49, 0x49, 0x36],
        'C' => [0x3e, 0x41, 0x41, 0x41, 0x22],
        'D' => [0x7f, 0x41, 0x41, 0x22, 0x1c],
        'E' => [0x7f, 0x49, 0x49, 0x49, 0x41],
        'F' => [0x7f, 0x09, 0x09, 0x09, 0x01],
        'G' => [0x3e, 0x41, 0x49, 0x49, 0x7a],
        'H' => [0x7f, 0x08, 0x08, 0x08, 0x7f],
        'I' => [0x00, 0x41, 0x7f, 0x41, 0x00],
        'J' => [0x20, 0x40, 0x41, 0x3f, 0x01],
        'K' => [0x7f, 0x08, 0x14, 0x22, 0x41],
        'L' => [0x7f, 0x40, 0x40, 0x40, 0x40],
        'M' => [0x7f, 0x02, 0x0c, 0x02, 0x7f],
        'N' => [0x7f, 0x04, 0x08, 0x10, 0x7f],
        'O' => [0x3e, 0x41, 0x41, 0x41, 0x3e],
        'P' => [0x7f, 0x09, 0x09, 0x09, 0x06],
        'Q' => [0x3e, 0x41, 0x51, 0x21, 0x5e],
        'R' => [0x7f, 0x09, 0x19, 0x29, 0x46],
        'S' => [0x46, 0x49, 0x49, 0x49, 0x31],
        'T' => [0x01, 0x01, 0x7f, 0x01, 0x01],
        'U' => [0x3f, 0x40, 0x40, 0x40, 0x3f],
        'V' => [0x1f, 0x20, 0x40, 0x20, 0x1f],
        'W' => [0x3f, 0x40, 0x38, 0x40, 0x3f],
        'X' => [0x63, 0x14, 0x08, 0x14, 0x63],
        'Y' => [0x07, 0x08, 0x70, 0x08, 0x07],
        'Z' => [0x61, 0x51, 0x49, 0x45, 0x43],
        '.' => [0x00, 0x60, 0x60, 0x00, 0x00],
        '-' => [0x08, 0x08, 0x08, 0x08, 0x08],
        '+' => [0x08, 0x08, 0x3e, 0x08, 0x08],
        '_' => [0x40, 0x40, 0x40, 0x40, 0x40],
        '/' => [0x60, 0x10, 0x08, 0x04, 0x03],
        ':' => [0x00, 0x36, 0x36, 0x00, 0x00],
        ' ' => [0x00, 0x00, 0x00, 0x00, 0x00],
        _ => [0x7f, 0x41, 0x41, 0x41, 0x7f],
    }
}

fn draw_text(img: &mut image::RgbImage, x: i64, y: i64, text: &str, color: [u8; 3]) {
    let mut cx = x;
    for ch in text.chars() {
        let g = glyph(ch);
        for (col, bits) in g.iter().enumerate() {
            for row in 0..7 {
                if bits & (1 << row) != 0 {
                    let px = cx + col as i64;
                    let py = y + row as i64;
                    if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height()
                    {
                        img.put_pixel(px as u32, py as u32, image::Rgb(color));
                    }
                }
            }
        }
        cx += 6;
    }
}

/// Labeled bar chart on a log scale when the value range spans decades;
/// values are printed above each bar.
pub fn save_bar_chart_png(path: &Path, labels: &[&str], values: &[f64]) -> Result<()> {
    if labels.len() != values.len() || values.is_empty() {
        return Err(Error::config("bar chart input mismatch"));
    }
    let w = (values.len() * 90 + 60).max(300) as u32;
    let h = 360u32;
    let mut img = image::RgbImage::from_pixel(w, h, image::Rgb([250, 250, 250]));

    let positive: Vec<f64> = values.iter().cloned().filter(|v| *v > 0.0).collect();
    let log_scale = !positive.is_empty()
        && positive.iter().cloned().fold(f64::INFINITY, f64::min) > 0.0
        && positive.iter().cloned().fold(0.0, f64::max)
            / positive.iter().cloned().fold(f64::INFINITY, f64::min)
            > 100.0;
    let transform = |v: f64| -> f64 {
        if log_scale {
            v.max(1e-300).log10()
        } else {
            v
        }
    };
    let tv: Vec<f64> = values.iter().map(|&v| transform(v.max(0.0))).collect();
    let lo = tv.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
    let hi = tv.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(lo + 1e-9);

    let plot_top = 40i64;
    let plot_bottom = (h as i64) - 40;
    for (i, (&v, label)) in tv.iter().zip(labels).enumerate() {
        let x0 = 40 + i as i64 * 90;
        let frac = (v - lo) / (hi - lo);
        let bar_h = ((plot_bottom - plot_top) as f64 * frac).round() as i64;
        for x in x0..x0 + 60 {
            for y in (plot_bottom - bar_h)..plot_bottom {
                if x >= 0 && y >= 0 && (x as u32) < w && (y as u32) < h {
                    img.put_pixel(x as u32, y as u32, image::Rgb([52, 101, 164]));
                }
            }
        }
        draw_text(&mut img, x0, plot_bottom + 8, label, [20, 20, 20]);
        let txt = format!("{:.2E}", values[i]);
        draw_text(&mut img, x0, plot_bottom - bar_h - 12, &txt, [20, 20, 20]);
    }
    img.save(path)
        .map_err(|e| Error::format(format!("png encode: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_writers_produce_expected_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let curve = vec![
            CurvePoint {
                step: 1,
                train_loss: 0.5,
                val_loss: None,
            },
            CurvePoint {
                step: 2,
                train_loss: 0.25,
                val_loss: Some(0.3),
            },
        ];
        let p = dir.path().join("curve.csv");
        write_curve_csv(&p, &curve).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(2).unwrap().contains("3.000000000000e-1"));

        let p2 = dir.path().join("mat.csv");
        write_matrix_csv(&p2, 2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let text = std::fs::read_to_string(&p2).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 3);
    }

    #[test]
    fn png_exports_write_valid_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("heat.png");
        save_heatmap_png(&p, 4, 6, &(0..24).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");

        let p2 = dir.path().join("bars.png");
        save_bar_chart_png(&p2, &["RHO", "MU", "T"], &[1e-4, 2e-2, 5e-7]).unwrap();
        let bytes = std::fs::read(&p2).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }
}
