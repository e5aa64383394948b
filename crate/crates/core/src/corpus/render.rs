//! Deterministic crop rendering.
//!
//! Segment crops are drawn with a pseudo-glyph font: each character maps to
//! a fixed 3x5 dot pattern derived from its code point, scaled by font size
//! and thickened by weight. The result is not legible typography, but it
//! carries exactly the signal the visual channel needs: glyph identity,
//! size, weight, and indent all survive into pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::child_seed;

/// Fixed-size grayscale crop, values quantized to the u8 grid in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphRaster {
    h: usize,
    w: usize,
    pixels: Vec<f32>,
}

/// Font-size/weight/indent cues attached to a block's segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleSpec {
    /// Glyph scale, 1..=4.
    pub font_size: u8,
    /// Stroke thickness, 1..=3.
    pub weight: u8,
    /// Left offset in 4-pixel steps, 0..=3.
    pub indent: u8,
}

impl GlyphRaster {
    pub fn new(h: usize, w: usize, pixels: Vec<f32>) -> Self {
        assert_eq!(pixels.len(), h * w, "raster data does not match {h}x{w}");
        // Quantize onto the u8 grid so PNG round trips are exact.
        let pixels = pixels
            .into_iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
            .collect();
        GlyphRaster { h, w, pixels }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        GlyphRaster {
            h,
            w,
            pixels: vec![0.0; h * w],
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    /// Pixels on the u8 grid (exact, since construction quantizes).
    pub fn pixels_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    /// Fraction of pixels that differ between two rasters of equal size.
    pub fn pixel_diff_ratio(&self, other: &GlyphRaster) -> f64 {
        assert_eq!((self.h, self.w), (other.h, other.w), "raster size mismatch");
        let differing = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .filter(|(a, b)| a != b)
            .count();
        differing as f64 / self.pixels.len() as f64
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.w as u32, self.h as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc
                .write_header()
                .map_err(|e| Error::Corpus(format!("png header: {e}")))?;
            let bytes: Vec<u8> = self
                .pixels
                .iter()
                .map(|v| (v * 255.0).round() as u8)
                .collect();
            writer
                .write_image_data(&bytes)
                .map_err(|e| Error::Corpus(format!("png body: {e}")))?;
        }
        Ok(out)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::Corpus(format!("png decode: {e}")))?;
        let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Corpus(format!("png frame: {e}")))?;
        if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Corpus(format!(
                "crop must be 8-bit grayscale PNG, got {:?}/{:?}",
                info.color_type, info.bit_depth
            )));
        }
        let (w, h) = (info.width as usize, info.height as usize);
        let pixels = buf[..w * h].iter().map(|&b| f32::from(b) / 255.0).collect();
        Ok(GlyphRaster { h, w, pixels })
    }
}

/// 3x5 dot pattern for a character; never blank.
fn glyph_pattern(c: char) -> u16 {
    let h = child_seed(0x67_6c_79_70_68, c as u64);
    let bits = (h & 0x7fff) as u16;
    if bits == 0 {
        0b101_010_101_010_101
    } else {
        bits
    }
}

/// Renders segment text into a fixed-size crop.
///
/// Deterministic in `(text, style, seed)`. The seed adds a small horizontal
/// jitter and intensity variation so identical lines in different documents
/// are not pixel-identical.
pub fn render_crop(text: &str, style: StyleSpec, seed: u64, h: usize, w: usize) -> GlyphRaster {
    let mut pixels = vec![0.0f32; h * w];
    let s = style.font_size.clamp(1, 4) as usize;
    let weight = style.weight.clamp(1, 3) as usize;
    let jitter = (child_seed(seed, 1) % 3) as usize;
    let intensity = {
        let base = 0.55 + 0.15 * weight as f32;
        let wobble = (child_seed(seed, 2) % 16) as f32 / 255.0;
        (base + wobble).min(1.0)
    };

    let glyph_w = 3 * s + (weight - 1);
    let glyph_h = 5 * s;
    let top = h.saturating_sub(glyph_h) / 2;
    let mut pen_x = 2 + style.indent as usize * 4 + jitter;

    for c in text.chars() {
        if pen_x + glyph_w + 1 >= w {
            break;
        }
        if c.is_whitespace() {
            pen_x += 2 * s;
            continue;
        }
        let pattern = glyph_pattern(c.to_ascii_lowercase());
        for cell in 0..15 {
            if pattern & (1 << cell) == 0 {
                continue;
            }
            let (cx, cy) = (cell % 3, cell / 3);
            for dy in 0..s {
                let py = top + cy * s + dy;
                if py >= h {
                    continue;
                }
                // Weight thickens each cell horizontally.
                for dx in 0..(s + weight - 1) {
                    let px = pen_x + cx * s + dx;
                    if px < w {
                        pixels[py * w + px] = intensity;
                    }
                }
            }
        }
        pen_x += glyph_w + s;
    }
    GlyphRaster::new(h, w, pixels)
}
