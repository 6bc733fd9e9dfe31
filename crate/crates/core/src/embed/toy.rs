//! Seeded random-projection embedder.
//!
//! Image path: BT.601 grayscale on the `[0, 1]` scale, bilinear resample to
//! 16x16, flatten, then `tanh(P · g)` where `P` is `dim`x256 with entries
//! uniform in `[-1/16, 1/16)`, drawn row-major from a ChaCha8 stream seeded
//! with `seed` (`rand_chacha::ChaCha8Rng::seed_from_u64`).
//!
//! Token path: SHA-256 of the lowercased token; its first eight bytes
//! (little-endian) XOR `seed` seed a ChaCha8 stream that emits `dim` values
//! uniform in `[-1, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingProvider, EmbeddingVector, ProviderKind};
use crate::error::{Error, Result};
use crate::io::sha256;
use crate::raster::{Bilinear, Patch, RasterImage};

/// Side of the resampled grayscale grid.
pub const TOY_GRID: usize = 16;
const FLAT: usize = TOY_GRID * TOY_GRID;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone)]
pub struct ToyProvider {
    seed: u64,
    image_dim: usize,
    text_dim: usize,
    projection: Vec<f64>,
}

/// What the backward pass needs from one image embedding.
#[derive(Debug, Clone)]
pub struct ToyTrace {
    resample: Bilinear,
    output: Vec<f64>,
}

impl ToyProvider {
    pub fn new(seed: u64, image_dim: usize, text_dim: usize) -> Result<Self> {
        if image_dim == 0 || text_dim == 0 {
            return Err(Error::InvalidArgument("embedding dimensions must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / TOY_GRID as f64;
        let projection = (0..image_dim * FLAT).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        Ok(Self { seed, image_dim, text_dim, projection })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Embeds an image given as three `[0, 1]`-scaled channel planes.
    pub fn embed_planes(&self, planes: &[Vec<f64>; 3], width: usize, height: usize) -> (Vec<f64>, ToyTrace) {
        let resample = Bilinear::new(width, height, TOY_GRID, TOY_GRID);
        let gray: Vec<f64> = (0..width * height)
            .map(|i| (0..3).map(|c| LUMA[c] * planes[c][i]).sum())
            .collect();
        let g = resample.apply(&gray);
        let output: Vec<f64> = self
            .projection
            .chunks_exact(FLAT)
            .map(|row| row.iter().zip(&g).map(|(p, x)| p * x).sum::<f64>().tanh())
            .collect();
        (output.clone(), ToyTrace { resample, output })
    }

    /// Jacobian-vector product: directional derivative of the embedding for a
    /// pixel-space tangent (three planes, `[0, 1]` scale).
    pub fn jvp(&self, trace: &ToyTrace, tangent: &[Vec<f64>; 3]) -> Vec<f64> {
        let n = tangent[0].len();
        let gray: Vec<f64> = (0..n).map(|i| (0..3).map(|c| LUMA[c] * tangent[c][i]).sum()).collect();
        let tg = trace.resample.apply(&gray);
        self.projection
            .chunks_exact(FLAT)
            .zip(&trace.output)
            .map(|(row, y)| (1.0 - y * y) * row.iter().zip(&tg).map(|(p, t)| p * t).sum::<f64>())
            .collect()
    }

    /// Vector-Jacobian product: pulls an embedding-space gradient back to
    /// the three pixel planes.
    pub fn vjp(&self, trace: &ToyTrace, grad: &[f64]) -> [Vec<f64>; 3] {
        let mut g_flat = vec![0.0; FLAT];
        for ((row, y), g) in self.projection.chunks_exact(FLAT).zip(&trace.output).zip(grad) {
            let pre = g * (1.0 - y * y);
            if pre != 0.0 {
                for (acc, p) in g_flat.iter_mut().zip(row) {
                    *acc += pre * p;
                }
            }
        }
        let gray = trace.resample.adjoint(&g_flat);
        LUMA.map(|w| gray.iter().map(|g| w * g).collect())
    }

    fn embed_raster(&self, img: &RasterImage) -> EmbeddingVector {
        let planes = [0, 1, 2].map(|c| img.channel_plane(c).into_iter().map(|v| v / 255.0).collect());
        let (out, _) = self.embed_planes(&planes, img.width(), img.height());
        EmbeddingVector(out)
    }

    fn embed_token(&self, token: &str) -> Result<EmbeddingVector> {
        if token.is_empty() {
            return Err(Error::InvalidArgument("cannot embed an empty token".into()));
        }
        let digest = sha256(token.to_lowercase().as_bytes());
        let key = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(key ^ self.seed);
        Ok(EmbeddingVector((0..self.text_dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()))
    }
}

impl EmbeddingProvider for ToyProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Toy
    }

    fn id(&self) -> String {
        format!("toy:seed={}:image={}:text={}", self.seed, self.image_dim, self.text_dim)
    }

    fn image_dim(&self) -> usize {
        self.image_dim
    }

    fn text_dim(&self) -> usize {
        self.text_dim
    }

    fn embed_images(&self, images: &[RasterImage]) -> Result<Vec<EmbeddingVector>> {
        Ok(images.iter().map(|img| self.embed_raster(img)).collect())
    }

    fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<EmbeddingVector>> {
        tokens.iter().map(|t| self.embed_token(t)).collect()
    }

    fn as_toy(&self) -> Option<&ToyProvider> {
        Some(self)
    }
}

pub fn toy_embed_image(patch: &Patch, seed: u64, dim: usize) -> Result<EmbeddingVector> {
    Ok(ToyProvider::new(seed, dim, 1)?.embed_raster(&patch.pixels))
}

pub fn toy_embed_text(token: &str, seed: u64, dim: usize) -> Result<EmbeddingVector> {
    ToyProvider::new(seed, 1, dim)?.embed_token(token)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_raster(w: usize, h: usize, seed: u64) -> RasterImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RasterImage::new(w, h, (0..w * h * 3).map(|_| rng.gen()).collect()).unwrap()
    }

    fn patch_of(img: RasterImage) -> Patch {
        Patch { label: "A1".into(), row: 0, col: 0, pixels: img }
    }

    #[test]
    fn black_patch_embeds_to_zero() {
        let p = patch_of(RasterImage::filled(8, 8, [0, 0, 0]).unwrap());
        assert!(toy_embed_image(&p, 3, 64).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let p = patch_of(random_raster(10, 12, 1));
        assert_eq!(toy_embed_image(&p, 9, 16).unwrap(), toy_embed_image(&p, 9, 16).unwrap());
        assert_ne!(toy_embed_image(&p, 9, 16).unwrap(), toy_embed_image(&p, 10, 16).unwrap());
    }

    #[test]
    fn matches_stepwise_oracle() {
        let (w, h, dim, seed) = (20, 13, 8, 42u64);
        let img = random_raster(w, h, 2);
        let got = toy_embed_image(&patch_of(img.clone()), seed, dim).unwrap();

        // independent walk through the documented steps
        let gray: Vec<f64> = (0..w * h)
            .map(|i| {
                let d = img.data();
                (0.299 * d[i * 3] as f64 + 0.587 * d[i * 3 + 1] as f64 + 0.114 * d[i * 3 + 2] as f64)
                    / 255.0
            })
            .collect();
        let src = |d: usize, s: usize| -> (usize, usize, f64) {
            let x = ((d as f64 + 0.5) * s as f64 / 16.0 - 0.5).clamp(0.0, (s - 1) as f64);
            let i0 = x.floor() as usize;
            (i0, (i0 + 1).min(s - 1), x - i0 as f64)
        };
        let mut g = vec![0.0; 256];
        for oy in 0..16 {
            let (y0, y1, fy) = src(oy, h);
            for ox in 0..16 {
                let (x0, x1, fx) = src(ox, w);
                let at = |x: usize, y: usize| gray[y * w + x];
                g[oy * 16 + ox] = (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x1, y0))
                    + fy * ((1.0 - fx) * at(x0, y1) + fx * at(x1, y1));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..dim * 256).map(|_| rng.gen_range(-1.0..1.0) / 16.0).collect();
        for k in 0..dim {
            let expect = (0..256).map(|j| p[k * 256 + j] * g[j]).sum::<f64>().tanh();
            assert!((got.values()[k] - expect).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn jvp_matches_central_differences() {
        let provider = ToyProvider::new(5, 12, 4).unwrap();
        let (w, h) = (9, 7);
        let img = random_raster(w, h, 3);
        let planes = [0, 1, 2].map(|c| img.channel_plane(c).iter().map(|v| v / 255.0).collect::<Vec<_>>());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tangent = [0, 1, 2].map(|_| (0..w * h).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>());
        let (_, trace) = provider.embed_planes(&planes, w, h);
        let analytic = provider.jvp(&trace, &tangent);
        let step = 1e-5;
        let shifted = |sign: f64| {
            let p = [0, 1, 2].map(|c| {
                planes[c].iter().zip(&tangent[c]).map(|(x, t)| x + sign * step * t).collect::<Vec<_>>()
            });
            provider.embed_planes(&p, w, h).0
        };
        let (up, dn) = (shifted(1.0), shifted(-1.0));
        for k in 0..12 {
            let numeric = (up[k] - dn[k]) / (2.0 * step);
            let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-5, "k={k} {} vs {numeric}", analytic[k]);
        }
        // vjp is the transpose of jvp
        let cot: Vec<f64> = (0..12).map(|k| (k as f64 * 0.37).sin()).collect();
        let back = provider.vjp(&trace, &cot);
        let lhs: f64 = analytic.iter().zip(&cot).map(|(a, b)| a * b).sum();
        let rhs: f64 = (0..3).map(|c| back[c].iter().zip(&tangent[c]).map(|(a, b)| a * b).sum::<f64>()).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn text_is_case_insensitive_and_bounded() {
        let a = toy_embed_text("The", 1, 32).unwrap();
        assert_eq!(a, toy_embed_text("the", 1, 32).unwrap());
        assert_eq!(a, toy_embed_text("the", 1, 32).unwrap());
        assert!(a.values().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_ne!(toy_embed_text("shadow", 1, 32).unwrap(), toy_embed_text("shadows", 1, 32).unwrap());
    }

    #[test]
    fn invalid_arguments() {
        assert!(toy_embed_text("", 1, 4).is_err());
        assert!(toy_embed_text("x", 1, 0).is_err());
        let p = patch_of(random_raster(2, 2, 0));
        assert!(toy_embed_image(&p, 1, 0).is_err());
    }
}
