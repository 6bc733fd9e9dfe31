//! Image-modality evasion attacks and the perturbation robustness suite.
//!
//! Gradients flow from the classifier logits through the node features and
//! the toy embedder back to pixels. Quantization (spectrum images to `u8`,
//! attacked images back to rasters) is treated as the identity in the
//! backward pass. Explanations are held fixed throughout.

mod generator;
mod suite;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dct::{visual_plane, visual_plane_backward, VisualTrace};
use crate::dualgraph::DualGraph;
use crate::embed::{node_features, EmbeddingProvider, ToyProvider, ToyTrace};
use crate::error::{Error, Result};
use crate::gnn::{loss_ce, loss_ce_grad, GraphBatch, Mode, Model};
use crate::raster::{quantize, split_patches, Bilinear, RasterImage, UnitImage};

pub use generator::{toy_generator_attack, GeneratorConfig, GeneratorInput, GeneratorOutcome, GeneratorReport};
pub use suite::{default_suite, run_robustness_suite, RobustnessRow, SuiteSample, SuiteSpec, CLEAN_SPEC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Pgd,
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgsm" => Ok(AttackKind::Fgsm),
            "pgd" => Ok(AttackKind::Pgd),
            other => Err(Error::InvalidArgument(format!("unknown attack kind {other:?}"))),
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
        })
    }
}

/// L∞ attack settings; `epsilon` and `alpha` are in `[0, 1]` pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
}

impl AttackConfig {
    pub const DEFAULT_PGD_STEPS: usize = 10;

    pub fn fgsm(epsilon: f64) -> Self {
        Self { kind: AttackKind::Fgsm, epsilon, alpha: epsilon, steps: 1 }
    }

    /// PGD with step `epsilon / 4` and ten steps.
    pub fn pgd(epsilon: f64) -> Self {
        Self { kind: AttackKind::Pgd, epsilon, alpha: epsilon / 4.0, steps: Self::DEFAULT_PGD_STEPS }
    }

    pub fn new(kind: AttackKind, epsilon: f64) -> Self {
        match kind {
            AttackKind::Fgsm => Self::fgsm(epsilon),
            AttackKind::Pgd => Self::pgd(epsilon),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon {} must be finite and non-negative", self.epsilon)));
        }
        if self.kind == AttackKind::Pgd {
            if self.steps == 0 {
                return Err(Error::InvalidArgument("pgd needs at least one step".into()));
            }
            // a zero budget makes the step size irrelevant
            if self.epsilon > 0.0 && !(self.alpha.is_finite() && self.alpha > 0.0) {
                return Err(Error::InvalidArgument(format!("pgd step size {} must be positive", self.alpha)));
            }
        }
        Ok(())
    }
}

/// `fgsm:EPS` or `pgd:EPS[:ALPHA:STEPS]`.
impl fmt::Display for AttackConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            AttackKind::Pgd if *self != Self::pgd(self.epsilon) => {
                write!(f, "pgd:{}:{}:{}", self.epsilon, self.alpha, self.steps)
            }
            kind => write!(f, "{kind}:{}", self.epsilon),
        }
    }
}

impl FromStr for AttackConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| -> Result<f64> {
            t.parse().map_err(|_| Error::InvalidArgument(format!("bad number {t:?} in {s:?}")))
        };
        let kind: AttackKind = parts[0].parse()?;
        let cfg = match (kind, &parts[1..]) {
            (_, [eps]) => Self::new(kind, num(eps)?),
            (AttackKind::Pgd, [eps, alpha, steps]) => Self {
                kind,
                epsilon: num(eps)?,
                alpha: num(alpha)?,
                steps: steps.parse().map_err(|_| Error::InvalidArgument(format!("bad step count in {s:?}")))?,
            },
            _ => return Err(Error::InvalidArgument(format!("cannot parse attack {s:?}"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Binary cross-entropy of the real-class probability `p` against target
/// `y`, with `0 * ln 0 = 0`.
pub fn adv_loss_from_prob(p: f64, y: f64) -> f64 {
    let term = |w: f64, q: f64| if w == 0.0 { 0.0 } else { w * q.ln() };
    -(term(y, p) + term(1.0 - y, 1.0 - p))
}

/// Surrogate adversarial loss: BCE toward `y` of `p = softmax(z)[0]`, the
/// probability of the real class. Computed in log space.
pub fn surrogate_adv_loss(z: [f64; 2], y: f64) -> f64 {
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    -(y * (z[0] - lse) + (1.0 - y) * (z[1] - lse))
}

/// Mean of [`surrogate_adv_loss`] over a set.
pub fn mean_surrogate_adv_loss(zs: &[[f64; 2]], y: f64) -> f64 {
    if zs.is_empty() {
        return 0.0;
    }
    zs.iter().map(|&z| surrogate_adv_loss(z, y)).sum::<f64>() / zs.len() as f64
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct PatchTrace {
    spatial: ToyTrace,
    spectral: ToyTrace,
    visual: [VisualTrace; 3],
}

/// One sample prepared for gradient attacks: the classifier, the toy
/// embedder and the sample's graph with its text part frozen.
pub struct AttackTarget<'a> {
    model: &'a Model,
    toy: &'a ToyProvider,
    grid_n: usize,
    batch: GraphBatch,
}

impl<'a> AttackTarget<'a> {
    /// Fails unless `provider` is the differentiable toy embedder.
    pub fn new(model: &'a Model, provider: &'a dyn EmbeddingProvider, graph: &DualGraph) -> Result<Self> {
        let toy = provider
            .as_toy()
            .ok_or_else(|| Error::InvalidArgument(format!("gradient attacks need the toy provider, not {}", provider.id())))?;
        let batch = GraphBatch::from_graph(graph, model.config().input_dim)?;
        Ok(Self { model, toy, grid_n: graph.grid_n, batch })
    }

    fn with_patch_rows(&self, rows: &[Vec<f64>]) -> Result<GraphBatch> {
        let mut x: Array2<f64> = self.batch.features().clone();
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                x[[i, j]] = v;
            }
        }
        self.batch.with_features(x)
    }

    /// Inference logits for `img`, exactly as a rebuilt graph would score.
    pub fn logits(&self, img: &RasterImage) -> Result<[f64; 2]> {
        let patches = split_patches(img, self.grid_n)?;
        let rows: Vec<Vec<f64>> = node_features(&patches, self.toy)?.into_iter().map(|v| v.into_values()).collect();
        let batch = self.with_patch_rows(&rows)?;
        Ok(self.model.forward(&batch, Mode::Infer)?.logits[0])
    }

    /// Cross-entropy toward `label` of the quantized `img`.
    pub fn loss(&self, img: &RasterImage, label: u8) -> Result<f64> {
        Ok(loss_ce(self.logits(img)?, usize::from(label)))
    }

    /// Cross-entropy toward `label` and its gradient in `x`'s layout, with
    /// quantization steps passed straight through.
    pub fn loss_and_grad(&self, x: &UnitImage, label: u8) -> Result<(f64, Vec<f64>)> {
        self.relaxed_loss_and_grad(x, label, true)
    }

    /// With `quantize_spectrum` off the spectrum images stay continuous and
    /// the gradient is exact.
    fn relaxed_loss_and_grad(&self, x: &UnitImage, label: u8, quantize_spectrum: bool) -> Result<(f64, Vec<f64>)> {
        let relaxed = self.relaxed_rows(x, quantize_spectrum)?;
        let batch = self.with_patch_rows(&relaxed.rows)?;
        let fwd = self.model.forward(&batch, Mode::Infer)?;
        let z = fwd.logits[0];
        let y = usize::from(label);
        let grads = self.model.backward(&batch, &fwd, &[loss_ce_grad(z, y)])?;
        Ok((loss_ce(z, y), self.pixel_grad(&relaxed, &grads.input)))
    }

    /// Patch feature rows of a continuous image.
    fn relaxed_rows(&self, x: &UnitImage, quantize_spectrum: bool) -> Result<Relaxed> {
        let n = self.grid_n;
        let (w, h) = (x.width, x.height);
        let (aw, ah) = (w - w % n, h - h % n);
        if aw == 0 || ah == 0 {
            return Err(Error::InvalidArgument(format!("{w}x{h} image is smaller than the {n}x{n} grid")));
        }
        let resize = ((aw, ah) != (w, h)).then(|| Bilinear::new(w, h, aw, ah));
        let planes: Vec<Vec<f64>> = (0..3)
            .map(|c| {
                let p = x.channel_plane(c);
                match &resize {
                    Some(op) => op.apply(&p),
                    None => p,
                }
            })
            .collect();
        let (pw, ph) = (aw / n, ah / n);
        let crop = |plane: &[f64], r: usize, c: usize| -> Vec<f64> {
            (0..ph).flat_map(|y| (0..pw).map(move |xx| (y, xx))).map(|(y, xx)| plane[(r * ph + y) * aw + c * pw + xx]).collect()
        };

        let mut rows = Vec::with_capacity(n * n);
        let mut traces = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                let patch: [Vec<f64>; 3] = [0, 1, 2].map(|ch| crop(&planes[ch], r, c));
                let (s, spatial) = self.toy.embed_planes(&patch, pw, ph);
                let mut visual = Vec::with_capacity(3);
                let mut spectrum: [Vec<f64>; 3] = Default::default();
                for ch in 0..3 {
                    let scaled: Vec<f64> = patch[ch].iter().map(|v| v * 255.0).collect();
                    let (vis, vt) = visual_plane(&scaled, ph, pw)?;
                    spectrum[ch] = vis
                        .iter()
                        .map(|&v| if quantize_spectrum { f64::from(quantize(v)) } else { v } / 255.0)
                        .collect();
                    visual.push(vt);
                }
                let (f, spectral) = self.toy.embed_planes(&spectrum, pw, ph);
                rows.push(s.iter().zip(&f).map(|(a, b)| 0.5 * (a + b)).collect::<Vec<f64>>());
                let visual: [VisualTrace; 3] = visual.try_into().map_err(|_| Error::Numeric("trace count".into()))?;
                traces.push(PatchTrace { spatial, spectral, visual });
            }
        }
        Ok(Relaxed { rows, traces, resize, width: w, height: h, aligned: (aw, ah) })
    }

    /// Pulls gradients on the patch feature rows back to pixels.
    fn pixel_grad(&self, relaxed: &Relaxed, row_grads: &Array2<f64>) -> Vec<f64> {
        let n = self.grid_n;
        let (aw, ah) = relaxed.aligned;
        let (pw, ph) = (aw / n, ah / n);
        let dim = self.toy.image_dim();
        let mut plane_grads = vec![vec![0.0; aw * ah]; 3];
        for (i, t) in relaxed.traces.iter().enumerate() {
            let g: Vec<f64> = (0..dim).map(|j| 0.5 * row_grads[[i, j]]).collect();
            let gs = self.toy.vjp(&t.spatial, &g);
            let gf = self.toy.vjp(&t.spectral, &g);
            let (r, c) = (i / n, i % n);
            for ch in 0..3 {
                // the 1/255 of the spectrum scale and the 255 of the pixel
                // scale cancel
                let back = visual_plane_backward(&t.visual[ch], &gf[ch]);
                for y in 0..ph {
                    for xx in 0..pw {
                        let k = y * pw + xx;
                        plane_grads[ch][(r * ph + y) * aw + c * pw + xx] += gs[ch][k] + back[k];
                    }
                }
            }
        }
        if let Some(op) = &relaxed.resize {
            for p in plane_grads.iter_mut() {
                *p = op.adjoint(p);
            }
        }
        let mut out = vec![0.0; relaxed.width * relaxed.height * 3];
        for (i, v) in out.iter_mut().enumerate() {
            *v = plane_grads[i % 3][i / 3];
        }
        out
    }
}

impl Relaxed {
    #[cfg(test)]
    fn kink_margin(&self) -> f64 {
        self.traces.iter().flat_map(|t| t.visual.iter().map(|v| v.min_abs_coeff())).fold(f64::INFINITY, f64::min)
    }
}

struct Relaxed {
    rows: Vec<Vec<f64>>,
    traces: Vec<PatchTrace>,
    resize: Option<Bilinear>,
    width: usize,
    height: usize,
    aligned: (usize, usize),
}

/// Attacked image before re-quantization.
pub fn perturb_unit(img: &RasterImage, target: &AttackTarget<'_>, label: u8, cfg: &AttackConfig) -> Result<UnitImage> {
    cfg.validate()?;
    let x0 = UnitImage::from_raster(img);
    let mut x = x0.clone();
    if cfg.epsilon == 0.0 {
        return Ok(x);
    }
    let eps = cfg.epsilon;
    for _ in 0..cfg.steps {
        let (_, g) = target.loss_and_grad(&x, label)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite input gradient".into()));
        }
        for ((v, &v0), &gi) in x.data.iter_mut().zip(&x0.data).zip(&g) {
            *v = (*v + cfg.alpha * sign(gi)).clamp(v0 - eps, v0 + eps).clamp(0.0, 1.0);
        }
    }
    Ok(x)
}

/// FGSM or PGD on one image, re-quantized.
pub fn attack(img: &RasterImage, target: &AttackTarget<'_>, label: u8, cfg: &AttackConfig) -> Result<RasterImage> {
    Ok(perturb_unit(img, target, label, cfg)?.to_raster())
}

pub fn fgsm(img: &RasterImage, target: &AttackTarget<'_>, label: u8, epsilon: f64) -> Result<RasterImage> {
    attack(img, target, label, &AttackConfig::fgsm(epsilon))
}

pub fn pgd(img: &RasterImage, target: &AttackTarget<'_>, label: u8, epsilon: f64) -> Result<RasterImage> {
    attack(img, target, label, &AttackConfig::pgd(epsilon))
}

#[cfg(test)]
mod tests;
