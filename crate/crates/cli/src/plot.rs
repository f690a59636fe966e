use std::path::Path;

use anyhow::anyhow;
use image::{Rgb, RgbImage};
use plotters_backend::{BackendColor, BackendCoord, DrawingBackend, DrawingErrorKind};
use plotters::prelude::*;

/// In-memory RGB canvas; plotters rasterizes into it pixel by pixel.
struct Canvas<'a> {
    img: &'a mut RgbImage,
}

#[derive(Debug)]
struct NoError;

impl std::fmt::Display for NoError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("canvas error")
    }
}

impl std::error::Error for NoError {}

impl DrawingBackend for Canvas<'_> {
    type ErrorType = NoError;

    fn get_size(&self) -> (u32, u32) {
        self.img.dimensions()
    }

    fn ensure_prepared(&mut self) -> Result<(), DrawingErrorKind<NoError>> {
        Ok(())
    }

    fn present(&mut self) -> Result<(), DrawingErrorKind<NoError>> {
        Ok(())
    }

    fn draw_pixel(&mut self, (x, y): BackendCoord, color: BackendColor) -> Result<(), DrawingErrorKind<NoError>> {
        let (w, h) = self.img.dimensions();
        if x < 0 || y < 0 || x as u32 >= w || y as u32 >= h || color.alpha <= 0.0 {
            return Ok(());
        }
        let a = color.alpha.min(1.0);
        let px = self.img.get_pixel_mut(x as u32, y as u32);
        let (r, g, b) = color.rgb;
        for (dst, src) in px.0.iter_mut().zip([r, g, b]) {
            *dst = (src as f64 * a + *dst as f64 * (1.0 - a)).round() as u8;
        }
        Ok(())
    }
}

/// One panel per channel, stacked vertically: prediction in red, ground
/// truth in black, a grey zero line. No text is drawn, so no font is needed.
pub fn draw_panels(path: &Path, width: u32, panel_height: u32, series: &[(Vec<f64>, Vec<f64>)]) -> anyhow::Result<()> {
    let height = panel_height * series.len() as u32;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let err = |e: DrawingAreaErrorKind<NoError>| anyhow!("drawing {}: {e}", path.display());
    {
        let root = Canvas { img: &mut img }.into_drawing_area();
        let panels = root.split_evenly((series.len(), 1));
        for (area, (pred, gt)) in panels.iter().zip(series) {
            let last = (pred.len().max(gt.len()).max(2) - 1) as f64;
            let (lo, hi) = pred
                .iter()
                .chain(gt)
                .fold((0.0f64, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let pad = ((hi - lo) * 0.05).max(1e-3);
            let mut chart = ChartBuilder::on(area)
                .margin(6)
                .build_cartesian_2d(0f64..last, (lo - pad)..(hi + pad))
                .map_err(err)?;
            chart
                .draw_series(LineSeries::new([(0.0, 0.0), (last, 0.0)], RGBColor(200, 200, 200)))
                .map_err(err)?;
            for (data, style) in [(gt, BLACK.stroke_width(2)), (pred, RED.stroke_width(2))] {
                chart
                    .draw_series(LineSeries::new(data.iter().enumerate().map(|(t, &v)| (t as f64, v)), style))
                    .map_err(err)?;
            }
            let (w, h) = area.dim_in_pixel();
            area.draw(&Rectangle::new([(0, 0), (w as i32 - 1, h as i32 - 1)], RGBColor(220, 220, 220)))
                .map_err(err)?;
        }
        root.present().map_err(err)?;
    }
    img.save(path).map_err(|e| anyhow!("writing {}: {e}", path.display()))?;
    Ok(())
}
