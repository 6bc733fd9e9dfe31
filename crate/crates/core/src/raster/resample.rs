//! Separable bilinear resampling as an explicit linear operator, so the
//! same taps serve the forward resize and its adjoint (needed when
//! back-propagating attack gradients to pixels).

/// Two-tap interpolation weights for one axis, half-pixel-center convention
/// with edge clamping.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisTaps {
    src: usize,
    taps: Vec<[(usize, f64); 2]>,
}

impl AxisTaps {
    pub fn new(src: usize, dst: usize) -> Self {
        assert!(src > 0 && dst > 0, "axis lengths must be positive");
        let ratio = src as f64 / dst as f64;
        let taps = (0..dst)
            .map(|d| {
                let s = ((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                let w1 = s - i0 as f64;
                [(i0, 1.0 - w1), (i1, w1)]
            })
            .collect();
        Self { src, taps }
    }

    pub fn src_len(&self) -> usize {
        self.src
    }

    pub fn dst_len(&self) -> usize {
        self.taps.len()
    }

    pub fn taps(&self, d: usize) -> [(usize, f64); 2] {
        self.taps[d]
    }
}

/// 2D bilinear resize of single-channel row-major planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Bilinear {
    cols: AxisTaps,
    rows: AxisTaps,
}

impl Bilinear {
    pub fn new(src_w: usize, src_h: usize, dst_w: usize, dst_h: usize) -> Self {
        Self { cols: AxisTaps::new(src_w, dst_w), rows: AxisTaps::new(src_h, dst_h) }
    }

    pub fn src_dims(&self) -> (usize, usize) {
        (self.cols.src_len(), self.rows.src_len())
    }

    pub fn dst_dims(&self) -> (usize, usize) {
        (self.cols.dst_len(), self.rows.dst_len())
    }

    pub fn apply(&self, plane: &[f64]) -> Vec<f64> {
        let (sw, sh) = self.src_dims();
        let (dw, dh) = self.dst_dims();
        debug_assert_eq!(plane.len(), sw * sh);
        // horizontal pass: sh x dw
        let mut tmp = vec![0.0; sh * dw];
        for y in 0..sh {
            let row = &plane[y * sw..(y + 1) * sw];
            for x in 0..dw {
                let [(i0, w0), (i1, w1)] = self.cols.taps(x);
                tmp[y * dw + x] = w0 * row[i0] + w1 * row[i1];
            }
        }
        let mut out = vec![0.0; dh * dw];
        for y in 0..dh {
            let [(j0, w0), (j1, w1)] = self.rows.taps(y);
            for x in 0..dw {
                out[y * dw + x] = w0 * tmp[j0 * dw + x] + w1 * tmp[j1 * dw + x];
            }
        }
        out
    }

    /// Transpose of [`Bilinear::apply`]: maps a gradient on the output grid
    /// back onto the input grid.
    pub fn adjoint(&self, grad: &[f64]) -> Vec<f64> {
        let (sw, sh) = self.src_dims();
        let (dw, dh) = self.dst_dims();
        debug_assert_eq!(grad.len(), dw * dh);
        let mut tmp = vec![0.0; sh * dw];
        for y in 0..dh {
            let [(j0, w0), (j1, w1)] = self.rows.taps(y);
            for x in 0..dw {
                let g = grad[y * dw + x];
                tmp[j0 * dw + x] += w0 * g;
                tmp[j1 * dw + x] += w1 * g;
            }
        }
        let mut out = vec![0.0; sh * sw];
        for y in 0..sh {
            for x in 0..dw {
                let g = tmp[y * dw + x];
                let [(i0, w0), (i1, w1)] = self.cols.taps(x);
                out[y * sw + i0] += w0 * g;
                out[y * sw + i1] += w1 * g;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let plane: Vec<f64> = (0..35).map(|v| v as f64 * 1.7).collect();
        let op = Bilinear::new(7, 5, 7, 5);
        assert_eq!(op.apply(&plane), plane);
    }

    #[test]
    fn adjoint_satisfies_inner_product_identity() {
        let op = Bilinear::new(9, 6, 4, 11);
        let x: Vec<f64> = (0..54).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let y: Vec<f64> = (0..44).map(|i| ((i * 13) % 7) as f64 * 0.5).collect();
        let ax = op.apply(&x);
        let aty = op.adjoint(&y);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn constant_stays_constant() {
        let op = Bilinear::new(13, 8, 5, 17);
        let out = op.apply(&vec![3.25; 13 * 8]);
        assert!(out.iter().all(|&v| (v - 3.25).abs() < 1e-12));
    }
}
