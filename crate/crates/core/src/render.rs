//! PNG rendering for scaleograms and attribution overlays.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const STOPS: [(f64, [f64; 3]); 5] = [
    (0.00, [68.0, 1.0, 84.0]),
    (0.25, [59.0, 82.0, 139.0]),
    (0.50, [33.0, 145.0, 140.0]),
    (0.75, [94.0, 201.0, 98.0]),
    (1.00, [253.0, 231.0, 37.0]),
];

/// Maps `[0, 1]` to a perceptually ordered colour ramp.
pub fn colormap(v: f64) -> Rgb<u8> {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    for w in STOPS.windows(2) {
        let ((a, ca), (b, cb)) = (w[0], w[1]);
        if v <= b {
            let t = (v - a) / (b - a);
            let c: Vec<u8> = (0..3).map(|k| (ca[k] + t * (cb[k] - ca[k])).round() as u8).collect();
            return Rgb([c[0], c[1], c[2]]);
        }
    }
    let c = STOPS[4].1;
    Rgb([c[0] as u8, c[1] as u8, c[2] as u8])
}

/// Writes a `[H, W]` matrix with values in `[0, 1]` as an image, row 0 at the top.
pub fn heatmap_png(m: &Tensor<f64>, path: &Path) -> Result<()> {
    let (h, w) = (m.rows(), m.cols());
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| colormap(m.at2(y as usize, x as usize)));
    img.save(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Line plot of one or more signals over a heat strip.
///
/// Each column's background colour is the heat value at that time step; the
/// signals are min-max scaled jointly into the plot height.
pub fn signal_heat_png(signals: &[&[f64]], heat: &[f64], height: u32, path: &Path) -> Result<()> {
    let n = heat.len();
    if n == 0 || signals.iter().any(|s| s.len() != n) {
        return Err(Error::Shape("signals and heat must share a non-zero length".into()));
    }
    let width = n as u32;
    let mut img = RgbImage::from_fn(width, height, |x, _| {
        let Rgb(c) = colormap(heat[x as usize]);
        // Lighten so the traces stay readable.
        Rgb(c.map(|v| ((v as u16 + 255) / 2) as u8))
    });
    let lo = signals.iter().flat_map(|s| s.iter()).cloned().fold(f64::INFINITY, f64::min);
    let hi = signals.iter().flat_map(|s| s.iter()).cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let row = |v: f64| {
        let t = (v - lo) / span;
        ((1.0 - t) * (height - 1) as f64).round().clamp(0.0, (height - 1) as f64) as u32
    };
    let palette = [Rgb([200, 30, 30]), Rgb([30, 30, 200]), Rgb([20, 120, 20])];
    for (k, s) in signals.iter().enumerate() {
        let colour = palette[k % palette.len()];
        for x in 0..n {
            let y0 = row(s[x]);
            let y1 = row(s[(x + 1).min(n - 1)]);
            for y in y0.min(y1)..=y0.max(y1) {
                img.put_pixel(x as u32, y, colour);
            }
        }
    }
    img.save(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Heat over a greyscale background, both `[H, W]` in `[0, 1]`; stronger heat is
/// more opaque.
pub fn overlay_png(background: &Tensor<f64>, heat: &Tensor<f64>, path: &Path) -> Result<()> {
    if background.ndim() != 2 || background.shape() != heat.shape() {
        return Err(Error::Shape(format!(
            "background {:?} and heat {:?} must be equal 2D shapes",
            background.shape(),
            heat.shape()
        )));
    }
    let (h, w) = (heat.rows(), heat.cols());
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        let g = background.at2(r, c).clamp(0.0, 1.0) * 255.0;
        let a = 0.7 * heat.at2(r, c).clamp(0.0, 1.0);
        let Rgb(hc) = colormap(heat.at2(r, c));
        Rgb(hc.map(|v| ((1.0 - a) * g + a * v as f64).round() as u8))
    });
    img.save(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}
