//! 8-bit RGB rasters: decoding, grid overlay, patch splitting and the
//! geometric/photometric perturbations used by the robustness suite.

mod font;
mod patch;
mod resample;
mod transform;

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

pub use font::overlay_grid;
pub use patch::{grid_label, parse_grid_label, split_patches, Patch};
pub use resample::{AxisTaps, Bilinear};
pub use transform::{transform, PerturbationSpec};

/// Row-major interleaved RGB image, three `u8` samples per pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RasterImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width * height * 3;
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} RGB image needs {expected} samples, got {}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// One channel as a row-major `f64` plane on the 0..=255 scale.
    pub fn channel_plane(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).map(|&v| f64::from(v)).collect()
    }

    /// Copies the `w`x`h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Self::new(w, h, data)
    }

    /// Binary PPM (P6, maxval 255) encoding. Also the canonical byte form
    /// used for content digests.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut cursor = HeaderCursor { bytes, pos: 0 };
        let magic = cursor.token()?;
        if magic != b"P6" {
            return Err(Error::MalformedHeader(format!(
                "expected P6 magic, found {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let width = cursor.number("width")?;
        let height = cursor.number("height")?;
        let maxval = cursor.number("maxval")?;
        if maxval == 0 {
            return Err(Error::MalformedHeader("maxval must be positive".into()));
        }
        if maxval != 255 {
            return Err(Error::UnsupportedEncoding(format!(
                "PPM maxval {maxval}; only 8-bit (255) is supported"
            )));
        }
        // exactly one whitespace byte separates the header from the samples
        match bytes.get(cursor.pos) {
            Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
            _ => return Err(Error::MalformedHeader("missing separator after maxval".into())),
        }
        if width == 0 || height == 0 {
            return Err(Error::MalformedHeader(format!("zero dimension {width}x{height}")));
        }
        let expected = width * height * 3;
        let body = &bytes[cursor.pos..];
        if body.len() < expected {
            return Err(Error::Truncated { expected, found: body.len() });
        }
        Self::new(width, height, body[..expected].to_vec())
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let mut decoder = png::Decoder::new(Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND);
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::MalformedHeader(format!("png: {e}")))?;
        let (color, depth) = reader.output_color_type();
        if color != png::ColorType::Rgb || depth != png::BitDepth::Eight {
            return Err(Error::UnsupportedEncoding(format!(
                "png {color:?} at {depth:?}; only 8-bit RGB is supported"
            )));
        }
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::MalformedHeader("png frame too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::MalformedHeader(format!("png data: {e}")))?;
        buf.truncate(info.buffer_size());
        Self::new(info.width as usize, info.height as usize, buf)
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_ppm())
    }
}

/// Decodes a P6 PPM or 8-bit RGB PNG file, chosen by content signature.
pub fn load_image(path: &Path) -> Result<RasterImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        RasterImage::from_png(&bytes)
    } else if bytes.starts_with(b"P") {
        RasterImage::from_ppm(&bytes)
    } else {
        Err(Error::UnsupportedEncoding(format!(
            "{}: neither P6 PPM nor PNG",
            path.display()
        )))
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::MalformedHeader("unexpected end of header".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .filter(|s| s.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                Error::MalformedHeader(format!(
                    "bad {what} field {:?}",
                    String::from_utf8_lossy(tok)
                ))
            })
    }
}

/// Rounds to the nearest level (halves go up) and clamps to `0..=255`.
pub fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// RGB image with samples normalized to `[0, 1]`, the space in which
/// gradient attacks operate.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl UnitImage {
    pub fn from_raster(img: &RasterImage) -> Self {
        Self {
            width: img.width,
            height: img.height,
            data: img.data.iter().map(|&v| f64::from(v) / 255.0).collect(),
        }
    }

    pub fn to_raster(&self) -> RasterImage {
        let data = self.data.iter().map(|&v| quantize(v * 255.0)).collect();
        RasterImage { width: self.width, height: self.height, data }
    }

    pub fn channel_plane(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ppm(header: &str, body: &[u8]) -> Vec<u8> {
        let mut v = header.as_bytes().to_vec();
        v.extend_from_slice(body);
        v
    }

    #[test]
    fn decodes_single_white_pixel() {
        let img = RasterImage::from_ppm(&ppm("P6\n1 1\n255\n", &[255, 255, 255])).unwrap();
        assert_eq!((img.width(), img.height()), (1, 1));
        assert_eq!(img.data(), &[255, 255, 255]);
    }

    #[test]
    fn decodes_two_by_two() {
        let body = [0, 0, 0, 255, 0, 0, 0, 255, 0, 0, 0, 255];
        let img = RasterImage::from_ppm(&ppm("P6 2 2 255\n", &body)).unwrap();
        assert_eq!(img.data(), &body);
        assert_eq!(img.pixel(1, 0), [255, 0, 0]);
        assert_eq!(img.pixel(0, 1), [0, 255, 0]);
    }

    #[test]
    fn truncated_body_is_reported() {
        let err = RasterImage::from_ppm(&ppm("P6\n2 2\n255\n", &[0; 9])).unwrap_err();
        assert!(matches!(err, Error::Truncated { expected: 12, found: 9 }), "{err}");
    }

    #[test]
    fn header_errors_are_distinct() {
        assert!(matches!(
            RasterImage::from_ppm(b"P5\n1 1\n255\n\0").unwrap_err(),
            Error::MalformedHeader(_)
        ));
        assert!(matches!(
            RasterImage::from_ppm(b"P6\n1 x\n255\n\0\0\0").unwrap_err(),
            Error::MalformedHeader(_)
        ));
        assert!(matches!(
            RasterImage::from_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").unwrap_err(),
            Error::UnsupportedEncoding(_)
        ));
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = RasterImage::from_ppm(&ppm("P6\n# made by hand\n1 1\n255\n", &[1, 2, 3])).unwrap();
        assert_eq!(img.data(), &[1, 2, 3]);
    }

    #[test]
    fn ppm_round_trip() {
        let img = RasterImage::new(3, 2, (0..18).collect()).unwrap();
        assert_eq!(RasterImage::from_ppm(&img.to_ppm()).unwrap(), img);
    }

    #[test]
    fn load_missing_file() {
        let err = load_image(Path::new("/nonexistent/definitely.ppm")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }

    #[test]
    fn png_rgb8_decodes() {
        let mut bytes = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut bytes, 2, 1);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[10, 20, 30, 40, 50, 60]).unwrap();
        }
        let img = RasterImage::from_png(&bytes).unwrap();
        assert_eq!(img.data(), &[10, 20, 30, 40, 50, 60]);
    }

    #[test]
    fn png_sixteen_bit_is_unsupported() {
        let mut bytes = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut bytes, 1, 1);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Sixteen);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0; 6]).unwrap();
        }
        assert!(matches!(
            RasterImage::from_png(&bytes).unwrap_err(),
            Error::UnsupportedEncoding(_)
        ));
    }

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.5), 1);
        assert_eq!(quantize(1.49), 1);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(300.0), 255);
    }
}
