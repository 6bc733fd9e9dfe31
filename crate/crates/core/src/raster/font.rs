use super::patch::{grid_label, validate_grid};
use super::RasterImage;
use crate::error::Result;

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;
const LABEL_INSET: usize = 2;

const WHITE: [u8; 3] = [255, 255, 255];
const BLACK: [u8; 3] = [0, 0, 0];

// 5x7 bitmaps, one byte per row, bit 4 is the leftmost column.
const LETTERS: [[u8; GLYPH_H]; 26] = [
    [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11], // A
    [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E], // B
    [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E], // C
    [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E], // D
    [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F], // E
    [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10], // F
    [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F], // G
    [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11], // H
    [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E], // I
    [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C], // J
    [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11], // K
    [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F], // L
    [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11], // M
    [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11], // N
    [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E], // O
    [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10], // P
    [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D], // Q
    [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11], // R
    [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E], // S
    [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04], // T
    [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E], // U
    [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04], // V
    [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A], // W
    [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11], // X
    [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04], // Y
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F], // Z
];

const DIGITS: [[u8; GLYPH_H]; 10] = [
    [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E], // 0
    [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E], // 1
    [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F], // 2
    [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E], // 3
    [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02], // 4
    [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E], // 5
    [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E], // 6
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08], // 7
    [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E], // 8
    [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C], // 9
];

fn glyph(c: char) -> Option<&'static [u8; GLYPH_H]> {
    match c {
        'A'..='Z' => Some(&LETTERS[c as usize - 'A' as usize]),
        '0'..='9' => Some(&DIGITS[c as usize - '0' as usize]),
        _ => None,
    }
}

/// Pixel coordinates (relative to the text origin) lit by `text`.
fn text_pixels(text: &str) -> Vec<(i64, i64)> {
    let mut lit = Vec::new();
    for (i, c) in text.chars().enumerate() {
        let Some(rows) = glyph(c) else { continue };
        let x0 = (i * (GLYPH_W + 1)) as i64;
        for (y, bits) in rows.iter().enumerate() {
            for x in 0..GLYPH_W {
                if bits & (0x10 >> x) != 0 {
                    lit.push((x0 + x as i64, y as i64));
                }
            }
        }
    }
    lit
}

fn put(img: &mut RasterImage, x: i64, y: i64, rgb: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as usize) < img.width() && (y as usize) < img.height() {
        img.set_pixel(x as usize, y as usize, rgb);
    }
}

/// Cell boundaries of an `n`-way split of `len` pixels, excluding 0 and `len`.
pub(crate) fn boundaries(len: usize, n: usize) -> impl Iterator<Item = usize> {
    (1..n).map(move |k| k * len / n)
}

/// Draws the visual prompt: 1-pixel black grid lines at the `n`x`n` cell
/// boundaries and each cell's label (white, black outline) at its top-left.
pub fn overlay_grid(img: &RasterImage, n: usize) -> Result<RasterImage> {
    validate_grid(img, n)?;
    let mut out = img.clone();
    let (w, h) = (img.width(), img.height());
    for x in boundaries(w, n) {
        for y in 0..h {
            out.set_pixel(x, y, BLACK);
        }
    }
    for y in boundaries(h, n) {
        for x in 0..w {
            out.set_pixel(x, y, BLACK);
        }
    }
    for row in 0..n {
        for col in 0..n {
            let ox = (col * w / n + LABEL_INSET) as i64;
            let oy = (row * h / n + LABEL_INSET) as i64;
            let lit = text_pixels(&grid_label(row, col));
            for &(x, y) in &lit {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        put(&mut out, ox + x + dx, oy + y + dy, BLACK);
                    }
                }
            }
            for &(x, y) in &lit {
                put(&mut out, ox + x, oy + y, WHITE);
            }
        }
    }
    Ok(out)
}
