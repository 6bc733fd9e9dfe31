//! Desk-scale synthetic data: real/fake pairs that share a smooth noisy base
//! image, where the fake adds a pixel checkerboard to one to three grid
//! cells.
//!
//! Explanations are drawn from one sentence pool for both labels. Fakes
//! anchor them on the artifact cells, reals on an equally sized random set
//! of cells, so the text alone carries no label information.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestEntry, Split};
use crate::embed::ProviderConfig;
use crate::error::{Error, Result};
use crate::io;
use crate::raster::{grid_label, quantize, RasterImage};
use crate::textgraph::{format_explanations, tokenize, DependencyConfig, DependencyFixture, ExplanationRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub count: usize,
    pub grid_n: usize,
    pub seed: u64,
    /// Checkerboard amplitude in 0..255 pixel units.
    pub artifact_strength: f64,
    /// Side of the square images.
    pub size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { count: 400, grid_n: 4, seed: 7, artifact_strength: 24.0, size: 60 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: RasterImage,
    pub label: u8,
    pub split: Split,
    /// Row-major cell indices carrying the artifact (fakes only).
    pub artifact_cells: Vec<usize>,
    /// Unquantized shared base of the pair, `size`x`size` RGB.
    pub base: Vec<f64>,
    pub records: Vec<ExplanationRecord>,
}

/// Explanation sentences with dependency heads per token (`-1` marks the
/// root), in the tokenization produced by [`tokenize`].
pub const SENTENCE_POOL: &[(&str, &[i8])] = &[
    ("The lighting on this surface looks uneven.", &[1, 5, 1, 4, 2, -1, 5, 5]),
    ("Shadows here fall in a consistent direction.", &[2, 2, -1, 2, 6, 6, 3, 2]),
    ("The texture appears smooth and natural.", &[1, 2, -1, 2, 3, 3, 2]),
    ("Edges in this region seem slightly blurred.", &[4, 0, 3, 1, -1, 6, 4, 4]),
    ("The color gradient transitions without visible seams.", &[2, 2, 3, -1, 3, 6, 4, 3]),
    ("Reflections on the object match the scene lighting.", &[4, 0, 3, 1, -1, 7, 7, 4, 4]),
    ("Fine detail in this area looks repetitive.", &[1, 5, 1, 4, 2, -1, 5, 5]),
    ("The pattern here does not follow the surrounding structure.", &[1, 5, 1, 5, 5, -1, 8, 8, 5, 5]),
    ("Noise levels differ from the rest of the image.", &[1, 2, -1, 2, 5, 3, 5, 8, 6, 2]),
    ("Contrast in this patch is unusually sharp.", &[4, 0, 3, 1, -1, 6, 4, 4]),
];

/// Dependency fixture covering every pool sentence.
pub fn pool_dependency_fixture() -> DependencyFixture {
    let mut fx = DependencyFixture::default();
    for (sentence, heads) in SENTENCE_POOL {
        let edges = heads
            .iter()
            .enumerate()
            .filter(|(_, &h)| h >= 0)
            .map(|(d, &h)| (h as usize, d))
            .collect();
        fx.insert(sentence, tokenize(sentence), edges);
    }
    fx
}

fn base_image(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let s = size as f64;
    let params: Vec<[f64; 6]> = (0..3)
        .map(|_| {
            [
                rng.gen_range(90.0..165.0),
                rng.gen_range(-30.0..30.0),
                rng.gen_range(-30.0..30.0),
                rng.gen_range(0.0..15.0),
                rng.gen_range(0.5..1.5),
                rng.gen_range(0.0..std::f64::consts::TAU),
            ]
        })
        .collect();
    let mut data = vec![0.0; size * size * 3];
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 / s, y as f64 / s);
            for (c, p) in params.iter().enumerate() {
                let wave = p[3] * (std::f64::consts::TAU * p[4] * (u + v) + p[5]).sin();
                let noise = rng.gen_range(-2i32..=2) as f64;
                data[(y * size + x) * 3 + c] = p[0] + p[1] * (u - 0.5) + p[2] * (v - 0.5) + wave + noise;
            }
        }
    }
    data
}

fn to_raster(values: &[f64], size: usize) -> Result<RasterImage> {
    RasterImage::new(size, size, values.iter().map(|&v| quantize(v)).collect())
}

/// Cell bounds along one axis, matching the patch split of a `size` image.
fn cell_span(size: usize, n: usize, k: usize) -> (usize, usize) {
    let aligned = size - size % n;
    let p = aligned / n;
    (k * p, (k + 1) * p)
}

/// Adds `amplitude * cos(pi * (x + y) + phase)` to every channel inside
/// `cells`. At integer pixel positions this is the alternating checkerboard
/// scaled by `cos(phase)`.
pub fn plant_checkerboard(base: &[f64], size: usize, n: usize, cells: &[usize], amplitude: f64, phase: f64) -> Vec<f64> {
    let mut out = base.to_vec();
    let a = amplitude * phase.cos();
    for &cell in cells {
        let (y0, y1) = cell_span(size, n, cell / n);
        let (x0, x1) = cell_span(size, n, cell % n);
        for y in y0..y1 {
            for x in x0..x1 {
                let sign = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
                for c in 0..3 {
                    out[(y * size + x) * 3 + c] += sign * a;
                }
            }
        }
    }
    out
}

/// Quantizes a `size`x`size` RGB float buffer.
pub fn raster_from_values(values: &[f64], size: usize) -> Result<RasterImage> {
    to_raster(values, size)
}

fn records_for(rng: &mut ChaCha8Rng, cells: &[usize], n: usize) -> Vec<ExplanationRecord> {
    let count = rng.gen_range(1..=2).min(cells.len());
    (0..count)
        .map(|r| {
            let mut labels: Vec<usize> = cells.iter().copied().skip(r).step_by(count).collect();
            labels.sort_unstable();
            let sentence = SENTENCE_POOL[rng.gen_range(0..SENTENCE_POOL.len())].0;
            ExplanationRecord::new(labels.iter().map(|&c| grid_label(c / n, c % n)).collect(), sentence)
        })
        .collect()
}

/// Generates the samples in memory; deterministic for a given config.
pub fn synth_samples(cfg: &SynthConfig) -> Result<Vec<SynthSample>> {
    if cfg.count < 4 {
        return Err(Error::InvalidArgument(format!("synthetic count {} is below 4", cfg.count)));
    }
    if cfg.grid_n == 0 || cfg.size < 2 * cfg.grid_n {
        return Err(Error::InvalidArgument(format!(
            "image side {} is too small for a {}x{} grid",
            cfg.size, cfg.grid_n, cfg.grid_n
        )));
    }
    if !(cfg.artifact_strength >= 0.0 && cfg.artifact_strength <= 255.0) {
        return Err(Error::InvalidArgument(format!("artifact strength {} outside [0, 255]", cfg.artifact_strength)));
    }
    let (n, size) = (cfg.grid_n, cfg.size);
    let pairs = cfg.count.div_ceil(2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut order: Vec<usize> = (0..pairs).collect();
    order.shuffle(&mut rng);
    let n_test = (pairs / 10).max(1);
    let n_val = if pairs - n_test >= 2 { (pairs / 10).max(1) } else { 0 };
    let mut split_of = vec![Split::Train; pairs];
    for (pos, &p) in order.iter().enumerate() {
        if pos >= pairs - n_test {
            split_of[p] = Split::Test;
        } else if pos >= pairs - n_test - n_val {
            split_of[p] = Split::Val;
        }
    }

    let mut samples = Vec::with_capacity(cfg.count);
    for (p, split) in split_of.into_iter().enumerate() {
        let base = base_image(&mut rng, size);
        let mut all_cells: Vec<usize> = (0..n * n).collect();
        let k = rng.gen_range(1..=3usize).min(n * n);

        all_cells.shuffle(&mut rng);
        let decoys = all_cells[..k].to_vec();
        let real_records = records_for(&mut rng, &decoys, n);
        samples.push(SynthSample {
            image: to_raster(&base, size)?,
            label: 0,
            split: split.clone(),
            artifact_cells: Vec::new(),
            base: base.clone(),
            records: real_records,
        });
        if 2 * p + 1 >= cfg.count {
            break;
        }

        all_cells.shuffle(&mut rng);
        let mut artifact = all_cells[..k].to_vec();
        artifact.sort_unstable();
        let fake = plant_checkerboard(&base, size, n, &artifact, cfg.artifact_strength, 0.0);
        let fake_records = records_for(&mut rng, &artifact, n);
        samples.push(SynthSample {
            image: to_raster(&fake, size)?,
            label: 1,
            split,
            artifact_cells: artifact,
            base,
            records: fake_records,
        });
    }
    Ok(samples)
}

/// File next to a generated manifest recording the config that produced it.
pub const SYNTH_RECIPE: &str = "synth.json";

/// Reads the recipe stored beside a synthetic manifest.
pub fn load_synth_recipe(dir: &Path) -> Result<SynthConfig> {
    let path = dir.join(SYNTH_RECIPE);
    serde_json::from_slice(&io::read(&path)?).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

/// Writes images, explanations, the dependency fixture, `manifest.json`
/// and the recipe under `out_dir`, and returns the manifest.
pub fn synth_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let samples = synth_samples(cfg)?;
    let mut manifest = DatasetManifest::new(cfg.grid_n, ProviderConfig::default(), out_dir);
    manifest.dependencies = DependencyConfig::Fixture { path: "deps.jsonl".into() };
    for (i, s) in samples.iter().enumerate() {
        let image = format!("images/{i:04}.ppm");
        let explanation = format!("explanations/{i:04}.txt");
        s.image.save_ppm(&out_dir.join(&image))?;
        io::write_atomic(&out_dir.join(&explanation), format_explanations(&s.records).as_bytes())?;
        manifest.entries.push(ManifestEntry {
            image: image.into(),
            explanation: Some(explanation.into()),
            explanation_text: None,
            label: s.label,
            split: s.split.clone(),
        });
    }
    pool_dependency_fixture().save(&out_dir.join("deps.jsonl"))?;
    let mut recipe = serde_json::to_vec_pretty(cfg).expect("config serializes");
    recipe.push(b'\n');
    io::write_atomic(&out_dir.join(SYNTH_RECIPE), &recipe)?;
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
