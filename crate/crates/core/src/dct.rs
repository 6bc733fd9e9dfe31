//! Orthonormal 2D DCT-II and the log-magnitude "spectrum image" that is fed
//! to the image embedder alongside each patch.

use crate::error::{Error, Result};
use crate::raster::{quantize, Patch, RasterImage};

/// DCT coefficients of one `height`x`width` plane, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumPlane {
    pub height: usize,
    pub width: usize,
    pub coeffs: Vec<f64>,
}

/// Orthonormal DCT-II basis: `basis[u * n + x] = a(u) cos(pi (2x+1) u / 2n)`.
fn basis(n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    let nf = n as f64;
    for u in 0..n {
        let alpha = if u == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for x in 0..n {
            c[u * n + x] =
                alpha * (std::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / (2.0 * nf)).cos();
        }
    }
    c
}

fn check_dims(len: usize, height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("DCT input must be non-empty".into()));
    }
    if len != height * width {
        return Err(Error::DimensionMismatch(format!(
            "{height}x{width} plane needs {} values, got {len}",
            height * width
        )));
    }
    Ok(())
}

/// `out = L · m · Rᵀ` for an `h`x`w` matrix `m`, where `L` is `h`x`h` and `R`
/// is `w`x`w`; `transpose` swaps both to `Lᵀ · m · R`.
fn separable(m: &[f64], h: usize, w: usize, left: &[f64], right: &[f64], transpose: bool) -> Vec<f64> {
    let l = |i: usize, k: usize| if transpose { left[k * h + i] } else { left[i * h + k] };
    let r = |j: usize, k: usize| if transpose { right[k * w + j] } else { right[j * w + k] };
    // rows: tmp[y][v] = sum_x m[y][x] r(v, x)
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &m[y * w..(y + 1) * w];
        for v in 0..w {
            tmp[y * w + v] = row.iter().enumerate().map(|(x, &val)| val * r(v, x)).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            out[u * w + v] = (0..h).map(|y| l(u, y) * tmp[y * w + v]).sum();
        }
    }
    out
}

/// Forward transform of a row-major `height`x`width` plane.
pub fn dct2(values: &[f64], height: usize, width: usize) -> Result<SpectrumPlane> {
    check_dims(values.len(), height, width)?;
    let coeffs = separable(values, height, width, &basis(height), &basis(width), false);
    Ok(SpectrumPlane { height, width, coeffs })
}

/// Inverse of [`dct2`]. Also the adjoint, since the basis is orthonormal.
pub fn idct2(spectrum: &SpectrumPlane) -> Result<Vec<f64>> {
    let SpectrumPlane { height, width, ref coeffs } = *spectrum;
    check_dims(coeffs.len(), height, width)?;
    Ok(separable(coeffs, height, width, &basis(height), &basis(width), true))
}

/// Intermediates of [`visual_plane`] kept for the backward pass.
#[derive(Debug, Clone)]
pub struct VisualTrace {
    height: usize,
    width: usize,
    coeffs: Vec<f64>,
    log_mag: Vec<f64>,
    argmin: usize,
    argmax: usize,
}

impl VisualTrace {
    /// Distance of the nearest coefficient from the `|c|` kink at zero.
    pub fn min_abs_coeff(&self) -> f64 {
        self.coeffs.iter().map(|c| c.abs()).fold(f64::INFINITY, f64::min)
    }
}

/// Continuous spectrum image of one channel: `log(1 + |dct2|)` min-max
/// scaled to `[0, 255]`; a constant log plane maps to zeros.
pub fn visual_plane(plane: &[f64], height: usize, width: usize) -> Result<(Vec<f64>, VisualTrace)> {
    let spectrum = dct2(plane, height, width)?;
    let log_mag: Vec<f64> = spectrum.coeffs.iter().map(|c| c.abs().ln_1p()).collect();
    let (mut argmin, mut argmax) = (0, 0);
    for (i, &s) in log_mag.iter().enumerate() {
        if s < log_mag[argmin] {
            argmin = i;
        }
        if s > log_mag[argmax] {
            argmax = i;
        }
    }
    let (lo, hi) = (log_mag[argmin], log_mag[argmax]);
    let range = hi - lo;
    let out = if range > 0.0 {
        log_mag.iter().map(|&s| 255.0 * (s - lo) / range).collect()
    } else {
        vec![0.0; log_mag.len()]
    };
    let trace = VisualTrace { height, width, coeffs: spectrum.coeffs, log_mag, argmin, argmax };
    Ok((out, trace))
}

/// Vector-Jacobian product of [`visual_plane`]: maps a gradient on the
/// spectrum image back to the input plane.
pub fn visual_plane_backward(trace: &VisualTrace, grad: &[f64]) -> Vec<f64> {
    let (lo, hi) = (trace.log_mag[trace.argmin], trace.log_mag[trace.argmax]);
    let range = hi - lo;
    let n = trace.log_mag.len();
    if range <= 0.0 {
        return vec![0.0; n];
    }
    let mut g_log: Vec<f64> = grad.iter().map(|g| 255.0 * g / range).collect();
    let (mut g_lo, mut g_hi) = (0.0, 0.0);
    for (g, s) in grad.iter().zip(&trace.log_mag) {
        g_lo += g * 255.0 * (s - hi) / (range * range);
        g_hi -= g * 255.0 * (s - lo) / (range * range);
    }
    g_log[trace.argmin] += g_lo;
    g_log[trace.argmax] += g_hi;
    let g_coeffs = g_log
        .iter()
        .zip(&trace.coeffs)
        .map(|(g, &c)| if c == 0.0 { 0.0 } else { g * c.signum() / (1.0 + c.abs()) })
        .collect();
    let spectrum = SpectrumPlane { height: trace.height, width: trace.width, coeffs: g_coeffs };
    idct2(&spectrum).expect("trace dimensions are consistent")
}

/// Per-channel spectrum image of a patch, quantized to `u8`.
pub fn dct_visual(patch: &Patch) -> Result<RasterImage> {
    spectrum_image(&patch.pixels)
}

pub fn spectrum_image(img: &RasterImage) -> Result<RasterImage> {
    let (w, h) = (img.width(), img.height());
    let mut data = vec![0u8; w * h * 3];
    for c in 0..3 {
        let (plane, _) = visual_plane(&img.channel_plane(c), h, w)?;
        for (i, v) in plane.into_iter().enumerate() {
            data[i * 3 + c] = quantize(v);
        }
    }
    RasterImage::new(w, h, data)
}
