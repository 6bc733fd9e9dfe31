use super::*;
use crate::embed::{EmbeddingFixture, FixtureProvider};
use crate::gnn::GnnConfig;
use crate::pipeline::{build_graph, pool_dependency_fixture, synth_samples, GraphContext, SynthConfig};
use crate::textgraph::{format_explanations, DependencySource};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::LN_2;

struct Setup {
    toy: ToyProvider,
    deps: DependencySource,
    model: Model,
}

impl Setup {
    fn new(seed: u64) -> Self {
        let cfg = GnnConfig { input_dim: 16, hidden: 6, ..GnnConfig::default() };
        Self {
            toy: ToyProvider::new(11, 16, 8).unwrap(),
            deps: DependencySource::Fixture(pool_dependency_fixture()),
            model: Model::new(cfg, seed).unwrap(),
        }
    }

    fn ctx(&self) -> GraphContext<'_> {
        GraphContext { grid_n: 4, provider: &self.toy, deps: &self.deps, deps_id: "pool".into() }
    }
}

fn samples(count: usize) -> Vec<SuiteSample> {
    synth_samples(&SynthConfig { count, ..SynthConfig::default() })
        .unwrap()
        .into_iter()
        .map(|s| SuiteSample { explanation: format_explanations(&s.records), image: s.image, label: s.label })
        .collect()
}

fn target<'a>(setup: &'a Setup, s: &SuiteSample) -> AttackTarget<'a> {
    let (g, _) = build_graph(&s.image, &s.explanation, &setup.ctx()).unwrap();
    AttackTarget::new(&setup.model, &setup.toy, &g).unwrap()
}

fn resized(img: &RasterImage, w: usize, h: usize) -> RasterImage {
    crate::raster::transform(img, &crate::raster::PerturbationSpec::Resize { width: w, height: h }).unwrap()
}

/// Central differences of the unquantized relaxed loss along random
/// directions. Integer images put some DCT coefficients exactly on the
/// `|c|` kink, so the point is jittered off the lattice first and redrawn
/// until every coefficient clears the margin.
fn directional_check(t: &AttackTarget<'_>, img: &RasterImage, label: u8, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..20)
        .map(|_| {
            let mut x = UnitImage::from_raster(img);
            for v in x.data.iter_mut() {
                *v = (*v + rng.gen_range(-1.0..1.0) / 255.0).clamp(0.0, 1.0);
            }
            x
        })
        .find(|x| t.relaxed_rows(x, false).unwrap().kink_margin() > 1e-4)
        .expect("a jittered point clears the kink margin");
    let (_, g) = t.relaxed_loss_and_grad(&x, label, false).unwrap();
    for _ in 0..3 {
        let d: Vec<f64> = (0..x.data.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = 1e-7;
        let shifted = |s: f64| {
            let data = x.data.iter().zip(&d).map(|(v, di)| v + s * di).collect();
            let xs = UnitImage { width: x.width, height: x.height, data };
            t.relaxed_loss_and_grad(&xs, label, false).unwrap().0
        };
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        let an: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
        assert!(rel < 1e-4, "fd {fd} analytic {an}");
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    let setup = Setup::new(3);
    for (i, s) in samples(4).iter().enumerate() {
        let t = target(&setup, s);
        directional_check(&t, &s.image, s.label, i as u64);
    }
}

#[test]
fn input_gradient_through_the_grid_resize() {
    let setup = Setup::new(4);
    let s = &samples(4)[1];
    let img = resized(&s.image, 62, 61);
    let t = target(&setup, &SuiteSample { image: img.clone(), ..s.clone() });
    directional_check(&t, &img, 1, 9);
}

#[test]
fn target_logits_match_a_rebuilt_graph() {
    let setup = Setup::new(5);
    let s = &samples(4)[1];
    let t = target(&setup, s);
    let other = &samples(6)[5].image;
    let (g, _) = build_graph(other, &s.explanation, &setup.ctx()).unwrap();
    assert_eq!(t.logits(other).unwrap(), setup.model.predict(&g).unwrap());
}

#[test]
fn zero_budget_is_the_identity() {
    let setup = Setup::new(6);
    let s = &samples(4)[0];
    let t = target(&setup, s);
    assert_eq!(fgsm(&s.image, &t, s.label, 0.0).unwrap(), s.image);
    for steps in [1, 3, 10] {
        let cfg = AttackConfig { steps, ..AttackConfig::pgd(0.0) };
        assert_eq!(attack(&s.image, &t, s.label, &cfg).unwrap(), s.image);
    }
}

#[test]
fn fgsm_moves_each_sample_by_exactly_epsilon() {
    let setup = Setup::new(7);
    let s = &samples(4)[1];
    let t = target(&setup, s);
    let eps = 0.01;
    let x0 = UnitImage::from_raster(&s.image);
    let (_, g) = t.loss_and_grad(&x0, s.label).unwrap();
    let x = perturb_unit(&s.image, &t, s.label, &AttackConfig::fgsm(eps)).unwrap();
    let mut moved = 0;
    for ((a, b), gi) in x.data.iter().zip(&x0.data).zip(&g) {
        let clamped = (b + eps * sign(*gi)).clamp(0.0, 1.0);
        assert_eq!(*a, clamped);
        if *gi != 0.0 && clamped == b + eps * sign(*gi) {
            assert!(((a - b).abs() - eps).abs() < 1e-15);
            moved += 1;
        }
    }
    assert!(moved > x.data.len() / 2);
}

#[test]
fn pgd_stays_in_the_ball_and_collapses_to_fgsm() {
    let setup = Setup::new(8);
    let s = &samples(4)[0];
    let t = target(&setup, s);
    let eps = 0.02;
    let x0 = UnitImage::from_raster(&s.image);
    let x = perturb_unit(&s.image, &t, s.label, &AttackConfig::pgd(eps)).unwrap();
    for (a, b) in x.data.iter().zip(&x0.data) {
        assert!((a - b).abs() <= eps + 1e-15);
        assert!((0.0..=1.0).contains(a));
    }
    let one = AttackConfig { kind: AttackKind::Pgd, epsilon: eps, alpha: eps, steps: 1 };
    assert_eq!(attack(&s.image, &t, s.label, &one).unwrap(), fgsm(&s.image, &t, s.label, eps).unwrap());
}

#[test]
fn fgsm_raises_the_loss() {
    let setup = Setup::new(9);
    let all = samples(10);
    let (mut before, mut after) = (0.0, 0.0);
    for s in &all {
        let t = target(&setup, s);
        // first order: a small sign step on the continuous image
        let x0 = UnitImage::from_raster(&s.image);
        let (l0, g) = t.relaxed_loss_and_grad(&x0, s.label, false).unwrap();
        let data = x0.data.iter().zip(&g).map(|(v, gi)| v + 1e-4 * sign(*gi)).collect();
        let (l1, _) = t.relaxed_loss_and_grad(&UnitImage { data, ..x0.clone() }, s.label, false).unwrap();
        assert!(l1 > l0, "{l0} -> {l1}");
        // quantized attack, on average
        before += t.loss(&s.image, s.label).unwrap();
        after += t.loss(&fgsm(&s.image, &t, s.label, 0.03).unwrap(), s.label).unwrap();
    }
    assert!(after > before, "{before} -> {after}");
}

#[test]
fn attacks_need_the_toy_embedder() {
    let setup = Setup::new(1);
    let s = &samples(4)[0];
    let (g, _) = build_graph(&s.image, &s.explanation, &setup.ctx()).unwrap();
    let fixture = FixtureProvider::new(EmbeddingFixture::new(16), EmbeddingFixture::new(8));
    assert!(AttackTarget::new(&setup.model, &fixture, &g).is_err());
}

#[test]
fn surrogate_loss_examples() {
    assert_eq!(adv_loss_from_prob(1.0, 1.0), 0.0);
    assert!((adv_loss_from_prob(0.5, 1.0) - LN_2).abs() < 1e-15);
    assert!((adv_loss_from_prob(0.5, 0.0) - LN_2).abs() < 1e-15);
    let mean = (adv_loss_from_prob(0.5, 1.0) + adv_loss_from_prob(1.0, 1.0)) / 2.0;
    assert_eq!(format!("{mean:.6}"), "0.346574");
    assert!((surrogate_adv_loss([0.3, 0.3], 1.0) - LN_2).abs() < 1e-15);
    assert!((mean_surrogate_adv_loss(&[[0.0, 0.0], [1.0, 1.0]], 0.0) - LN_2).abs() < 1e-15);
    assert!(surrogate_adv_loss([800.0, -800.0], 1.0).abs() < 1e-300);
}

#[test]
fn attack_specs_round_trip() {
    for s in ["fgsm:0.01", "pgd:0.001", "pgd:0.01:0.005:3"] {
        let cfg: AttackConfig = s.parse().unwrap();
        assert_eq!(cfg.to_string(), s);
    }
    assert_eq!("pgd:0.01".parse::<AttackConfig>().unwrap().alpha, 0.0025);
    for bad in ["fgsm:-1", "pgd:0.1:0.1:0", "pgd:0.1:0:3", "cw:0.1", "fgsm"] {
        assert!(bad.parse::<AttackConfig>().is_err(), "{bad}");
    }
    assert!(matches!("blur:1:0.5".parse::<SuiteSpec>().unwrap(), SuiteSpec::Perturb(_)));
    assert!(matches!("pgd:0.1".parse::<SuiteSpec>().unwrap(), SuiteSpec::Attack(_)));
}

#[test]
fn suite_rows_conserve_counts() {
    let setup = Setup::new(10);
    let all = samples(8);
    let only_clean = run_robustness_suite(&setup.model, &all, &setup.ctx(), &[], 0.5).unwrap();
    assert_eq!(only_clean.len(), 1);
    assert_eq!(only_clean[0].spec, CLEAN_SPEC);

    let specs: Vec<SuiteSpec> =
        ["brightness:1", "blur:1:0.8", "rotate", "resize:30x30", "fgsm:0.01"].iter().map(|s| s.parse().unwrap()).collect();
    let rows = run_robustness_suite(&setup.model, &all, &setup.ctx(), &specs, 0.5).unwrap();
    assert_eq!(rows.len(), specs.len() + 1);
    assert_eq!(rows[1].metrics, rows[0].metrics);
    for r in &rows {
        assert_eq!(r.metrics.total(), all.len());
        assert_eq!(r.pass_tau_r, r.metrics.accuracy >= 0.5);
    }
    let v = serde_json::to_value(&rows).unwrap();
    assert_eq!(v[1]["spec"], "brightness:1");
    assert!(v[0]["metrics"]["fn"].is_u64());
}

#[test]
fn default_suite_layout() {
    let names: Vec<String> = default_suite(60).iter().map(|s| s.to_string()).collect();
    assert_eq!(names.len(), 13);
    assert!(names.contains(&"resize:90x90".to_string()));
    assert_eq!(names.iter().filter(|n| n.starts_with("pgd:")).count(), 3);
}

fn generator_inputs(count: usize) -> (Vec<GeneratorInput>, Vec<RasterImage>) {
    let cfg = SynthConfig { count, ..SynthConfig::default() };
    let fakes: Vec<_> = synth_samples(&cfg).unwrap().into_iter().filter(|s| s.label == 1).collect();
    let inputs = fakes
        .iter()
        .map(|s| GeneratorInput {
            base: s.base.clone(),
            size: cfg.size,
            cells: s.artifact_cells.clone(),
            amplitude: cfg.artifact_strength,
            explanation: format_explanations(&s.records),
        })
        .collect();
    (inputs, fakes.into_iter().map(|s| s.image).collect())
}

#[test]
fn generator_without_steps_returns_the_fakes() {
    let setup = Setup::new(12);
    let (inputs, fakes) = generator_inputs(6);
    let report = toy_generator_attack(&setup.model, &setup.ctx(), &inputs, &GeneratorConfig { steps: 0, lr: 0.1 }).unwrap();
    for (out, fake) in report.samples.iter().zip(&fakes) {
        assert_eq!(&out.image, fake);
        assert_eq!(out.loss_after, out.loss_before);
    }
}

#[test]
fn generator_never_ends_worse() {
    let setup = Setup::new(13);
    let (inputs, _) = generator_inputs(6);
    let report = toy_generator_attack(&setup.model, &setup.ctx(), &inputs, &GeneratorConfig { steps: 5, lr: 0.1 }).unwrap();
    for s in &report.samples {
        assert!(s.loss_after <= s.loss_before);
    }
    assert!((0.0..=1.0).contains(&report.evasion_rate));
}

proptest! {
    #[test]
    fn surrogate_loss_is_monotone_in_p(a in 0.01f64..0.98, d in 0.001f64..0.01) {
        let b = a + d;
        prop_assert!(adv_loss_from_prob(b, 1.0) < adv_loss_from_prob(a, 1.0));
        prop_assert!(adv_loss_from_prob(b, 0.0) > adv_loss_from_prob(a, 0.0));
    }

    #[test]
    fn logit_form_matches_probability_form(z0 in -8.0f64..8.0, z1 in -8.0f64..8.0, y in 0.0f64..=1.0) {
        let p = 1.0 / (1.0 + (z1 - z0).exp());
        prop_assert!((surrogate_adv_loss([z0, z1], y) - adv_loss_from_prob(p, y)).abs() < 1e-9);
    }
}

