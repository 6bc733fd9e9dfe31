use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{quantize, Bilinear, RasterImage};
use crate::error::{Error, Result};

/// A deterministic image perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationSpec {
    /// Bilinear resize to an absolute size.
    Resize { width: usize, height: usize },
    /// Counter-clockwise rotation about the image center, black fill.
    Rotate { degrees: f64 },
    /// Scale about the center, then shift by whole pixels, black fill.
    ScaleTranslate { scale: f64, dx: i64, dy: i64 },
    /// Gaussian blur with a `2*radius+1` tap kernel, edges clamped.
    Blur { radius: usize, sigma: f64 },
    /// Multiply every sample, then clamp.
    Brightness { factor: f64 },
}

impl PerturbationSpec {
    pub const DEFAULT_ROTATION_DEGREES: f64 = 15.0;
    pub const DEFAULT_SCALE: f64 = 0.9;
    pub const DEFAULT_SHIFT: i64 = 10;

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match *self {
            PerturbationSpec::Resize { width, height } if width == 0 || height == 0 => {
                bad(format!("resize target {width}x{height} must be positive"))
            }
            PerturbationSpec::Rotate { degrees } if !degrees.is_finite() => {
                bad("rotation angle must be finite".into())
            }
            PerturbationSpec::ScaleTranslate { scale, .. } if !(scale.is_finite() && scale > 0.0) => {
                bad(format!("scale {scale} must be positive"))
            }
            PerturbationSpec::Blur { sigma, .. } if !(sigma.is_finite() && sigma > 0.0) => {
                bad(format!("blur sigma {sigma} must be positive"))
            }
            PerturbationSpec::Brightness { factor } if !(factor.is_finite() && factor > 0.0) => {
                bad(format!("brightness factor {factor} must be positive"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for PerturbationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PerturbationSpec::Resize { width, height } => write!(f, "resize:{width}x{height}"),
            PerturbationSpec::Rotate { degrees } => write!(f, "rotate:{degrees}"),
            PerturbationSpec::ScaleTranslate { scale, dx, dy } => {
                write!(f, "scale_translate:{scale}:{dx}:{dy}")
            }
            PerturbationSpec::Blur { radius, sigma } => write!(f, "blur:{radius}:{sigma}"),
            PerturbationSpec::Brightness { factor } => write!(f, "brightness:{factor}"),
        }
    }
}

/// Parses the compact `kind:arg:arg` form used on the command line, e.g.
/// `blur:2:1.0`, `resize:52x52`, `rotate` (default angle).
impl FromStr for PerturbationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let num = |i: usize, default: Option<f64>| -> Result<f64> {
            match args.get(i) {
                Some(a) => a
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad number {a:?} in {s:?}"))),
                None => default.ok_or_else(|| {
                    Error::InvalidArgument(format!("missing argument {} in {s:?}", i + 1))
                }),
            }
        };
        let spec = match kind {
            "resize" => {
                let dims = args
                    .first()
                    .ok_or_else(|| Error::InvalidArgument(format!("resize needs WxH in {s:?}")))?;
                let (w, h) = dims
                    .split_once('x')
                    .and_then(|(w, h)| Some((w.parse().ok()?, h.parse().ok()?)))
                    .ok_or_else(|| Error::InvalidArgument(format!("bad size {dims:?}")))?;
                PerturbationSpec::Resize { width: w, height: h }
            }
            "rotate" => PerturbationSpec::Rotate {
                degrees: num(0, Some(Self::DEFAULT_ROTATION_DEGREES))?,
            },
            "scale_translate" => PerturbationSpec::ScaleTranslate {
                scale: num(0, Some(Self::DEFAULT_SCALE))?,
                dx: num(1, Some(Self::DEFAULT_SHIFT as f64))? as i64,
                dy: num(2, Some(Self::DEFAULT_SHIFT as f64))? as i64,
            },
            "blur" => PerturbationSpec::Blur {
                radius: num(0, Some(2.0))? as usize,
                sigma: num(1, Some(1.0))?,
            },
            "brightness" => PerturbationSpec::Brightness { factor: num(0, None)? },
            other => {
                return Err(Error::InvalidArgument(format!("unknown perturbation kind {other:?}")))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Applies `spec` to a copy of `img`.
pub fn transform(img: &RasterImage, spec: &PerturbationSpec) -> Result<RasterImage> {
    spec.validate()?;
    match *spec {
        PerturbationSpec::Resize { width, height } => resize(img, width, height),
        PerturbationSpec::Rotate { degrees } => {
            let (s, c) = degrees.to_radians().sin_cos();
            // inverse map: rotate output coordinates by -theta
            Ok(warp(img, |x, y| (c * x + s * y, -s * x + c * y)))
        }
        PerturbationSpec::ScaleTranslate { scale, dx, dy } => {
            Ok(warp(img, |x, y| ((x - dx as f64) / scale, (y - dy as f64) / scale)))
        }
        PerturbationSpec::Blur { radius, sigma } => Ok(blur(img, radius, sigma)),
        PerturbationSpec::Brightness { factor } => {
            let data = img.data().iter().map(|&v| quantize(f64::from(v) * factor)).collect();
            RasterImage::new(img.width(), img.height(), data)
        }
    }
}

pub(crate) fn resize(img: &RasterImage, width: usize, height: usize) -> Result<RasterImage> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!("resize target {width}x{height}")));
    }
    let op = Bilinear::new(img.width(), img.height(), width, height);
    let planes: Vec<Vec<f64>> = (0..3).map(|c| op.apply(&img.channel_plane(c))).collect();
    let data = (0..width * height)
        .flat_map(|i| planes.iter().map(move |p| quantize(p[i])))
        .collect();
    RasterImage::new(width, height, data)
}

/// Resamples through `inverse`, which maps an output position (relative to
/// the image center) to the source position (also center-relative).
/// Samples outside the source contribute black.
fn warp(img: &RasterImage, inverse: impl Fn(f64, f64) -> (f64, f64)) -> RasterImage {
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut out = RasterImage::filled(w, h, [0, 0, 0]).expect("nonzero dims");
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inverse(x as f64 - cx, y as f64 - cy);
            out.set_pixel(x, y, sample_zero_padded(img, sx + cx, sy + cy));
        }
    }
    out
}

fn sample_zero_padded(img: &RasterImage, sx: f64, sy: f64) -> [u8; 3] {
    let (x0, y0) = (sx.floor(), sy.floor());
    let (fx, fy) = (sx - x0, sy - y0);
    let mut acc = [0.0f64; 3];
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let (xi, yi) = (x0 as i64 + dx, y0 as i64 + dy);
            let weight = wx * wy;
            if weight == 0.0
                || xi < 0
                || yi < 0
                || xi >= img.width() as i64
                || yi >= img.height() as i64
            {
                continue;
            }
            let px = img.pixel(xi as usize, yi as usize);
            for c in 0..3 {
                acc[c] += weight * f64::from(px[c]);
            }
        }
    }
    acc.map(quantize)
}

fn gaussian_kernel(radius: usize, sigma: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn blur(img: &RasterImage, radius: usize, sigma: f64) -> RasterImage {
    let kernel = gaussian_kernel(radius, sigma);
    let (w, h) = (img.width(), img.height());
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut data = vec![0u8; w * h * 3];
    for c in 0..3 {
        let plane = img.channel_plane(c);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * plane[y * w + clamp(x as i64 + k as i64 - radius as i64, w)])
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * tmp[clamp(y as i64 + k as i64 - radius as i64, h) * w + x])
                    .sum();
                data[(y * w + x) * 3 + c] = quantize(v);
            }
        }
    }
    RasterImage::new(w, h, data).expect("dimensions preserved")
}
