//! Clean versus perturbed evaluation over a fixed set of test samples.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{attack, AttackConfig, AttackKind, AttackTarget};
use crate::error::Result;
use crate::gnn::Model;
use crate::pipeline::{build_graph, predicted_label, GraphContext, MetricsReport};
use crate::raster::{transform, PerturbationSpec, RasterImage};

/// Spec label of the unperturbed row.
pub const CLEAN_SPEC: &str = "clean";

#[derive(Debug, Clone, PartialEq)]
pub enum SuiteSpec {
    Perturb(PerturbationSpec),
    Attack(AttackConfig),
}

impl fmt::Display for SuiteSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SuiteSpec::Perturb(p) => p.fmt(f),
            SuiteSpec::Attack(a) => a.fmt(f),
        }
    }
}

impl FromStr for SuiteSpec {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        let head = s.split(':').next().unwrap_or_default();
        if head.parse::<AttackKind>().is_ok() {
            Ok(SuiteSpec::Attack(s.parse()?))
        } else {
            Ok(SuiteSpec::Perturb(s.parse()?))
        }
    }
}

/// Blur, brightness, rotation, scale plus shift, three resizes (half,
/// 1.5x and double `size`), then FGSM and PGD at 1e-4, 1e-3 and 1e-2.
pub fn default_suite(size: usize) -> Vec<SuiteSpec> {
    let mut specs = vec![
        SuiteSpec::Perturb(PerturbationSpec::Blur { radius: 2, sigma: 1.0 }),
        SuiteSpec::Perturb(PerturbationSpec::Brightness { factor: 1.2 }),
        SuiteSpec::Perturb(PerturbationSpec::Rotate { degrees: PerturbationSpec::DEFAULT_ROTATION_DEGREES }),
        SuiteSpec::Perturb(PerturbationSpec::ScaleTranslate {
            scale: PerturbationSpec::DEFAULT_SCALE,
            dx: PerturbationSpec::DEFAULT_SHIFT,
            dy: PerturbationSpec::DEFAULT_SHIFT,
        }),
    ];
    for side in [size / 2, size * 3 / 2, size * 2] {
        specs.push(SuiteSpec::Perturb(PerturbationSpec::Resize { width: side.max(1), height: side.max(1) }));
    }
    for kind in [AttackKind::Fgsm, AttackKind::Pgd] {
        for eps in [1e-4, 1e-3, 1e-2] {
            specs.push(SuiteSpec::Attack(AttackConfig::new(kind, eps)));
        }
    }
    specs
}

#[derive(Debug, Clone)]
pub struct SuiteSample {
    pub image: RasterImage,
    pub explanation: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub spec: String,
    pub metrics: MetricsReport,
    pub pass_tau_r: bool,
}

fn row(spec: String, pairs: Vec<(u8, u8)>, tau_r: f64) -> RobustnessRow {
    let metrics = MetricsReport::from_pairs(pairs);
    let pass_tau_r = metrics.accuracy >= tau_r;
    RobustnessRow { spec, metrics, pass_tau_r }
}

/// Evaluates `model` on the clean samples, then once per spec with every
/// image perturbed or attacked. Explanations are reused unchanged. The
/// first row is always the clean one.
pub fn run_robustness_suite(
    model: &Model,
    samples: &[SuiteSample],
    ctx: &GraphContext<'_>,
    specs: &[SuiteSpec],
    tau_r: f64,
) -> Result<Vec<RobustnessRow>> {
    let predict = |img: &RasterImage, text: &str| -> Result<u8> {
        let (g, _) = build_graph(img, text, ctx)?;
        Ok(predicted_label(model.predict(&g)?))
    };
    let clean: Vec<(u8, u8)> = samples
        .par_iter()
        .map(|s| Ok((predict(&s.image, &s.explanation)?, s.label)))
        .collect::<Result<_>>()?;
    let mut rows = vec![row(CLEAN_SPEC.into(), clean, tau_r)];
    for spec in specs {
        let pairs: Vec<(u8, u8)> = samples
            .par_iter()
            .map(|s| {
                let img = match spec {
                    SuiteSpec::Perturb(p) => transform(&s.image, p)?,
                    SuiteSpec::Attack(cfg) => {
                        let (g, _) = build_graph(&s.image, &s.explanation, ctx)?;
                        let target = AttackTarget::new(model, ctx.provider, &g)?;
                        attack(&s.image, &target, s.label, cfg)?
                    }
                };
                Ok((predict(&img, &s.explanation)?, s.label))
            })
            .collect::<Result<_>>()?;
        log::info!("{spec}: {} of {} correct", pairs.iter().filter(|(p, y)| p == y).count(), pairs.len());
        rows.push(row(spec.to_string(), pairs, tau_r));
    }
    Ok(rows)
}
