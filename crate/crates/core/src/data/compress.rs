//! Lossy 8×8 block-DCT degradation.
//!
//! Each RGB channel is split into 8×8 blocks (edges replicated), level
//! shifted by 128, transformed with an orthonormal DCT-II, quantized with
//! the IJG luminance table scaled to the requested quality and
//! reconstructed. There is no chroma subsampling or entropy coding; only
//! the quantization loss matters here.

use image::RgbImage;

use super::AnnotatedImage;
use crate::error::{Error, Result};

const LUMA: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Quantizer step sizes for `quality ∈ [1, 100]` (row-major 8×8).
pub fn quantization_table(quality: u8) -> Result<[f64; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::config(format!(
            "compression quality must be in [1, 100], got {quality}"
        )));
    }
    let q = u32::from(quality);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &base) in out.iter_mut().zip(&LUMA) {
        *o = ((u32::from(base) * scale + 50) / 100).clamp(1, 255) as f64;
    }
    Ok(out)
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (k, row) in m.iter_mut().enumerate() {
        let a = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = a * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / 16.0).cos();
        }
    }
    m
}

/// Run the block-DCT quantizer over a whole image.
pub fn degrade_image(img: &RgbImage, quality: u8) -> Result<RgbImage> {
    let table = quantization_table(quality)?;
    let basis = dct_basis();
    let (w, h) = img.dimensions();
    let mut out = img.clone();
    let mut block = [[0.0f64; 8]; 8];
    let mut tmp = [[0.0f64; 8]; 8];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for c in 0..3 {
                for (y, row) in block.iter_mut().enumerate() {
                    for (x, v) in row.iter_mut().enumerate() {
                        let sx = (bx + x as u32).min(w - 1);
                        let sy = (by + y as u32).min(h - 1);
                        *v = f64::from(img.get_pixel(sx, sy).0[c]) - 128.0;
                    }
                }
                // forward: C · B · Cᵀ
                for u in 0..8 {
                    for x in 0..8 {
                        tmp[u][x] = (0..8).map(|y| basis[u][y] * block[y][x]).sum();
                    }
                }
                for u in 0..8 {
                    for v in 0..8 {
                        let coef: f64 = (0..8).map(|x| tmp[u][x] * basis[v][x]).sum();
                        let q = table[u * 8 + v];
                        block[u][v] = (coef / q).round() * q;
                    }
                }
                // inverse: Cᵀ · F · C
                for y in 0..8 {
                    for v in 0..8 {
                        tmp[y][v] = (0..8).map(|u| basis[u][y] * block[u][v]).sum();
                    }
                }
                for y in 0..8u32 {
                    for x in 0..8u32 {
                        let (px, py) = (bx + x, by + y);
                        if px >= w || py >= h {
                            continue;
                        }
                        let val: f64 = (0..8)
                            .map(|v| tmp[y as usize][v] * basis[v][x as usize])
                            .sum();
                        out.get_pixel_mut(px, py).0[c] = (val + 128.0).round().clamp(0.0, 255.0) as u8;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Degrade the image of `sample`; landmarks and box are untouched.
pub fn degrade_quality(sample: &AnnotatedImage, quality: u8) -> Result<AnnotatedImage> {
    Ok(AnnotatedImage {
        image: degrade_image(&sample.image, quality)?,
        ..sample.clone()
    })
}
