use std::path::Path;

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const SSIM_WINDOW: usize = 8;

/// Grayscale image with intensities in `[0, 1]`, stored `[height × width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage<S> {
    pixels: Array2<S>,
}

impl<S: Real> GrayImage<S> {
    pub fn new(pixels: Array2<S>) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::Image("image has no pixels".into()));
        }
        if let Some(v) = pixels.iter().find(|v| !(**v >= S::zero() && **v <= S::one())) {
            return Err(Error::Image(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { pixels })
    }

    /// From 8-bit luma rows.
    pub fn from_luma8(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Image(format!("{} bytes for a {width}×{height} image", data.len())));
        }
        let pixels = Array2::from_shape_fn((height, width), |(y, x)| S::lit(data[y * width + x] as f64 / 255.0));
        Self::new(pixels)
    }

    pub fn pixels(&self) -> &Array2<S> {
        &self.pixels
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }
}

/// Loads a PNG or PGM (any format the decoder accepts). Colour is reduced
/// with `0.299 R + 0.587 G + 0.114 B`.
pub fn load_gray_image<S: Real>(path: impl AsRef<Path>) -> Result<GrayImage<S>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let rgb = img.to_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let pixels = Array2::from_shape_fn((h, w), |(y, x)| {
        let p = rgb.get_pixel(x as u32, y as u32).0;
        let luma = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
        S::lit(luma.clamp(0.0, 1.0))
    });
    GrayImage::new(pixels)
}

fn same_dims<S: Real>(a: &GrayImage<S>, b: &GrayImage<S>) -> Result<()> {
    if a.pixels.dim() != b.pixels.dim() {
        return Err(Error::Shape(format!(
            "images are {}×{} and {}×{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; `+∞` for identical images.
pub fn psnr<S: Real>(a: &GrayImage<S>, b: &GrayImage<S>, peak: S) -> Result<S> {
    same_dims(a, b)?;
    let mse = (&a.pixels - &b.pixels).mapv(|d| d * d).mean().expect("non-empty");
    if mse == S::zero() {
        return Ok(S::infinity());
    }
    Ok(S::lit(10.0) * (peak * peak / mse).log10())
}

/// Mean structural similarity over every 8×8 window, unit peak.
pub fn ssim<S: Real>(a: &GrayImage<S>, b: &GrayImage<S>) -> Result<S> {
    same_dims(a, b)?;
    let (h, w) = a.pixels.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Image(format!("SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {w}×{h}")));
    }
    let c1 = 0.01f64.powi(2);
    let c2 = 0.03f64.powi(2);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let pa = a.pixels.mapv(S::as_f64);
    let pb = b.pixels.mapv(S::as_f64);
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..=h - SSIM_WINDOW {
        for x in 0..=w - SSIM_WINDOW {
            let wa = pa.slice(s![y..y + SSIM_WINDOW, x..x + SSIM_WINDOW]);
            let wb = pb.slice(s![y..y + SSIM_WINDOW, x..x + SSIM_WINDOW]);
            let ma = wa.sum() / n;
            let mb = wb.sum() / n;
            let mut va = 0.0;
            let mut vb = 0.0;
            let mut cov = 0.0;
            for (&p, &q) in wa.iter().zip(wb.iter()) {
                va += (p - ma) * (p - ma);
                vb += (q - mb) * (q - mb);
                cov += (p - ma) * (q - mb);
            }
            va /= n;
            vb /= n;
            cov /= n;
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(S::lit(total / count as f64))
}

/// Sharpness-metric constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CpbdConfig {
    pub beta: f64,
    pub p_jnb: f64,
    /// Block contrast (0..1 scale) at or below which the wider width applies.
    pub contrast_threshold: f64,
    pub width_low_contrast: f64,
    pub width_high_contrast: f64,
    pub block: usize,
    /// Minimum share of edge pixels for a block to be analysed.
    pub edge_block_fraction: f64,
}

impl Default for CpbdConfig {
    fn default() -> Self {
        Self {
            beta: 3.6,
            p_jnb: 0.63,
            contrast_threshold: 50.0 / 255.0,
            width_low_contrast: 5.0,
            width_high_contrast: 3.0,
            block: 64,
            edge_block_fraction: 0.002,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CpbdScore {
    pub value: f64,
    /// Set when no edge pixel qualified; `value` is then 0.
    pub no_edges: bool,
}

pub fn cpbd<S: Real>(img: &GrayImage<S>) -> Result<CpbdScore> {
    cpbd_with(img, &CpbdConfig::default())
}

/// Horizontal Sobel response.
fn sobel_x(p: &Array2<f64>) -> Array2<f64> {
    let (h, w) = p.dim();
    let at = |y: isize, x: isize| p[[y.clamp(0, h as isize - 1) as usize, x.clamp(0, w as isize - 1) as usize]];
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (y, x) = (y as isize, x as isize);
        (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)) - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1))
    })
}

/// Width of the edge through `(y, x)`: distance between the intensity
/// extrema on either side along the row, following the gradient sign.
fn edge_width(p: &Array2<f64>, y: usize, x: usize, rising: bool) -> f64 {
    let w = p.ncols();
    let up = |a: f64, b: f64| if rising { b > a } else { b < a };
    let mut right = x;
    while right + 1 < w && up(p[[y, right]], p[[y, right + 1]]) {
        right += 1;
    }
    let mut left = x;
    while left > 0 && up(p[[y, left - 1]], p[[y, left]]) {
        left -= 1;
    }
    (right - left) as f64
}

/// Cumulative probability of blur detection: the share of edge pixels
/// whose blur is below the just-noticeable threshold.
pub fn cpbd_with<S: Real>(img: &GrayImage<S>, cfg: &CpbdConfig) -> Result<CpbdScore> {
    let (h, w) = img.pixels.dim();
    if h < cfg.block || w < cfg.block {
        return Err(Error::Image(format!("CPBD needs at least {0}×{0} pixels, got {w}×{h}", cfg.block)));
    }
    let p = img.pixels.mapv(S::as_f64);
    let gx = sobel_x(&p);
    let mean_sq = gx.iter().map(|g| g * g).sum::<f64>() / gx.len() as f64;
    let threshold = 4.0 * mean_sq;
    let mut edges = Array2::from_elem((h, w), false);
    if mean_sq > 0.0 {
        for y in 0..h {
            for x in 0..w {
                let m = gx[[y, x]].abs();
                let left = if x > 0 { gx[[y, x - 1]].abs() } else { 0.0 };
                let right = if x + 1 < w { gx[[y, x + 1]].abs() } else { 0.0 };
                edges[[y, x]] = m * m > threshold && m >= left && m > right;
            }
        }
    }

    let min_edges = cfg.edge_block_fraction * (cfg.block * cfg.block) as f64;
    let mut total = 0usize;
    let mut sharp = 0usize;
    for by in (0..=h - cfg.block).step_by(cfg.block) {
        for bx in (0..=w - cfg.block).step_by(cfg.block) {
            let region = s![by..by + cfg.block, bx..bx + cfg.block];
            let count = edges.slice(region).iter().filter(|&&e| e).count();
            if (count as f64) <= min_edges {
                continue;
            }
            let block = p.slice(region);
            let (lo, hi) = block.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| (l.min(v), u.max(v)));
            let jnb = if hi - lo <= cfg.contrast_threshold {
                cfg.width_low_contrast
            } else {
                cfg.width_high_contrast
            };
            for y in by..by + cfg.block {
                for x in bx..bx + cfg.block {
                    if !edges[[y, x]] {
                        continue;
                    }
                    let width = edge_width(&p, y, x, gx[[y, x]] > 0.0);
                    let p_blur = 1.0 - (-(width / jnb).powf(cfg.beta)).exp();
                    total += 1;
                    if p_blur <= cfg.p_jnb {
                        sharp += 1;
                    }
                }
            }
        }
    }
    if total == 0 {
        return Ok(CpbdScore { value: 0.0, no_edges: true });
    }
    Ok(CpbdScore {
        value: sharp as f64 / total as f64,
        no_edges: false,
    })
}
