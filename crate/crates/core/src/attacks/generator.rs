//! A two-parameter artifact generator tuned against a surrogate detector.
//!
//! Each fake is `base + a * cos(pi * (x + y) + phi)` over its artifact
//! cells. Adam adjusts `(a, phi)` per sample to push the surrogate toward
//! calling the image real; the lowest-loss iterate is kept.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{surrogate_adv_loss, AttackTarget};
use crate::error::{Error, Result};
use crate::gnn::{Adam, Model};
use crate::pipeline::{build_graph, plant_checkerboard, predicted_label, raster_from_values, GraphContext};
use crate::raster::{RasterImage, UnitImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub steps: usize,
    /// Adam step size on the normalized amplitude and on the phase.
    pub lr: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { steps: 30, lr: 0.05 }
    }
}

/// One fake to regenerate: the clean base and where the artifact goes.
#[derive(Debug, Clone)]
pub struct GeneratorInput {
    pub base: Vec<f64>,
    pub size: usize,
    pub cells: Vec<usize>,
    pub amplitude: f64,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorOutcome {
    pub image: RasterImage,
    pub amplitude: f64,
    pub phase: f64,
    pub loss_before: f64,
    pub loss_after: f64,
    /// Surrogate now predicts real.
    pub evaded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorReport {
    pub samples: Vec<GeneratorOutcome>,
    pub evasion_rate: f64,
}

/// Target of the surrogate loss: the real class.
const REAL_TARGET: f64 = 1.0;

fn attack_one(
    surrogate: &Model,
    ctx: &GraphContext<'_>,
    input: &GeneratorInput,
    cfg: &GeneratorConfig,
) -> Result<GeneratorOutcome> {
    let render = |a: f64, phi: f64| plant_checkerboard(&input.base, input.size, ctx.grid_n, &input.cells, a, phi);
    let scale = if input.amplitude > 0.0 { input.amplitude } else { 1.0 };
    let start = raster_from_values(&render(input.amplitude, 0.0), input.size)?;
    let (graph, _) = build_graph(&start, &input.explanation, ctx)?;
    let target = AttackTarget::new(surrogate, ctx.provider, &graph)?;

    let loss_before = surrogate_adv_loss(target.logits(&start)?, REAL_TARGET);
    let mut best = (loss_before, input.amplitude, 0.0, start);
    // theta = (a / scale, phi)
    let mut theta = [input.amplitude / scale, 0.0];
    let mut adam = Adam::new(2);
    let pattern = plant_checkerboard(&vec![0.0; input.base.len()], input.size, ctx.grid_n, &input.cells, 1.0, 0.0);
    for step in 0..cfg.steps {
        let (a, phi) = (theta[0] * scale, theta[1]);
        let values = render(a, phi);
        let x = UnitImage {
            width: input.size,
            height: input.size,
            data: values.iter().map(|v| (v / 255.0).clamp(0.0, 1.0)).collect(),
        };
        // cross-entropy toward label 0 is the surrogate loss toward "real"
        let (_, g) = target.loss_and_grad(&x, 0)?;
        let (mut da, mut dphi) = (0.0, 0.0);
        for (gi, s) in g.iter().zip(&pattern) {
            da += gi * s * phi.cos() * scale / 255.0;
            dphi -= gi * s * a * phi.sin() / 255.0;
        }
        if !(da.is_finite() && dphi.is_finite()) {
            return Err(Error::Numeric(format!("generator gradient diverged at step {step} (a {a}, phase {phi})")));
        }
        adam.step(&mut theta, &[da, dphi], cfg.lr)?;
        let (a, phi) = (theta[0] * scale, theta[1]);
        let img = raster_from_values(&render(a, phi), input.size)?;
        let loss = surrogate_adv_loss(target.logits(&img)?, REAL_TARGET);
        if loss.is_nan() {
            return Err(Error::Numeric(format!("generator loss is NaN at step {step} (a {a}, phase {phi})")));
        }
        if loss < best.0 {
            best = (loss, a, phi, img);
        }
    }
    let (loss_after, amplitude, phase, image) = best;
    let evaded = predicted_label(target.logits(&image)?) == 0;
    Ok(GeneratorOutcome { image, amplitude, phase, loss_before, loss_after, evaded })
}

/// Regenerates every input against `surrogate`, in input order.
pub fn toy_generator_attack(
    surrogate: &Model,
    ctx: &GraphContext<'_>,
    inputs: &[GeneratorInput],
    cfg: &GeneratorConfig,
) -> Result<GeneratorReport> {
    let samples: Vec<GeneratorOutcome> =
        inputs.par_iter().map(|input| attack_one(surrogate, ctx, input, cfg)).collect::<Result<_>>()?;
    let evasion_rate = if samples.is_empty() {
        0.0
    } else {
        samples.iter().filter(|s| s.evaded).count() as f64 / samples.len() as f64
    };
    Ok(GeneratorReport { samples, evasion_rate })
}
