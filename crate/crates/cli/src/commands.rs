use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use vigtext::attacks::{
    default_suite, run_robustness_suite, toy_generator_attack, AttackConfig, AttackKind, GeneratorConfig, GeneratorInput,
    SuiteSample, SuiteSpec,
};
use vigtext::dualgraph::DualGraph;
use vigtext::embed::ProviderConfig;
use vigtext::gnn::{load_checkpoint, save_checkpoint, GnnConfig, LrSchedule, Model};
use vigtext::io::{read_string, write_atomic};
use vigtext::pipeline::{
    build_entries, evaluate, history_csv, load_manifest, load_synth_recipe, synth_dataset, synth_samples, train,
    DatasetManifest, GraphCache, ManifestGraphs, Split, SynthConfig, TrainConfig,
};
use vigtext::raster::{load_image, overlay_grid};
use vigtext::textgraph::format_explanations;
use vigtext::{Error, Result};

use crate::table::{render, rows_from_json, Row};
use crate::{AttackChoice, Cli, Command, DataArgs, ProviderChoice};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, count, grid, strength, size } => {
            let cfg = SynthConfig { count, grid_n: grid, seed: cli.seed, artifact_strength: strength, size };
            let manifest = synth_dataset(&cfg, &out)?;
            eprintln!("wrote {} samples to {}", manifest.entries.len(), out.display());
            Ok(())
        }
        Command::Overlay { image, grid, out } => overlay_grid(&load_image(&image)?, grid)?.save_ppm(&out),
        Command::BuildGraphs { data, out } => build_graphs(&data, &out, cli.workers),
        Command::Train { data, out, epochs, lr, batch_size } => {
            run_train(&data, &out, cli.seed, cli.workers, epochs, lr, batch_size)
        }
        Command::Eval { data, checkpoint, out, split, tau_g } => {
            run_eval(&data, &checkpoint, &out, &split.parse()?, tau_g, cli.workers)
        }
        Command::Attack { data, checkpoint, out, kind, eps, spec, suite, tau_r, split, steps } => {
            let split: Split = split.parse()?;
            if kind == Some(AttackChoice::Generator) {
                return run_generator(&data, &checkpoint, &out, &split, steps);
            }
            let mut specs = vec![];
            match kind {
                Some(AttackChoice::Fgsm) => specs.push(SuiteSpec::Attack(AttackConfig::new(AttackKind::Fgsm, eps))),
                Some(AttackChoice::Pgd) => specs.push(SuiteSpec::Attack(AttackConfig::new(AttackKind::Pgd, eps))),
                _ => {}
            }
            for s in &spec {
                specs.push(s.parse()?);
            }
            run_attack(&data, &checkpoint, &out, &split, suite, specs, tau_r)
        }
        Command::Report { input, out } => {
            let v: Value = serde_json::from_str(&read_string(&input)?)?;
            let table = render(&rows_from_json(&v)?);
            print!("{table}");
            match out {
                Some(path) => write_atomic(&path, table.as_bytes()),
                None => Ok(()),
            }
        }
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    if p.is_absolute() {
        return Ok(p.to_path_buf());
    }
    let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
    Ok(cwd.join(p))
}

/// The manifest with command-line overrides applied, and its graph sources.
fn dataset(data: &DataArgs) -> Result<(DatasetManifest, ManifestGraphs)> {
    let mut manifest = load_manifest(&data.manifest)?;
    if let Some(n) = data.grid {
        manifest.grid_n = n;
    }
    match data.provider {
        None => {}
        Some(ProviderChoice::Toy) => manifest.provider = ProviderConfig::default(),
        Some(ProviderChoice::Fixture) => {
            let (Some(image), Some(text)) = (&data.fixture_image, &data.fixture_text) else {
                return Err(Error::InvalidArgument("--provider fixture needs --fixture-image and --fixture-text".into()));
            };
            manifest.provider = ProviderConfig::Fixture { image: absolute(image)?, text: absolute(text)? };
        }
        Some(ProviderChoice::Remote) => {
            let endpoint = data
                .endpoint
                .clone()
                .ok_or_else(|| Error::InvalidArgument("--provider remote needs --endpoint or VIGTEXT_ENDPOINT".into()))?;
            manifest.provider = ProviderConfig::remote(endpoint);
        }
    }
    manifest.validate()?;
    let graphs = ManifestGraphs::open(&manifest)?;
    Ok((manifest, graphs))
}

type SplitGraphs = (Split, Vec<DualGraph>);

/// Labelled graphs of every entry in `splits`, keyed by split, in
/// manifest order.
fn split_graphs(
    data: &DataArgs,
    out: &Path,
    splits: &[Split],
    workers: usize,
) -> Result<(ManifestGraphs, Vec<SplitGraphs>)> {
    let (manifest, graphs) = dataset(data)?;
    let ctx = graphs.context(manifest.grid_n);
    let cache = cache_for(data, out);
    let mut result = Vec::new();
    for split in splits {
        let entries = manifest.split(split);
        let built = build_entries(&manifest, &entries, &ctx, cache.as_ref(), workers)?;
        result.push((split.clone(), built.into_iter().map(|b| b.graph).collect()));
    }
    drop(ctx);
    Ok((graphs, result))
}

fn cache_for(data: &DataArgs, out: &Path) -> Option<GraphCache> {
    if data.no_cache {
        None
    } else {
        Some(GraphCache::new(data.cache.clone().unwrap_or_else(|| out.join("cache"))))
    }
}

fn build_graphs(data: &DataArgs, out: &Path, workers: usize) -> Result<()> {
    let (manifest, graphs) = dataset(data)?;
    let ctx = graphs.context(manifest.grid_n);
    let entries: Vec<_> = manifest.entries.iter().collect();
    // Everything is built before anything is written, so a provider
    // failure leaves no partial graph directory behind.
    let built = build_entries(&manifest, &entries, &ctx, cache_for(data, out).as_ref(), workers)?;
    let mut log = String::new();
    let mut hits = 0;
    for (i, b) in built.iter().enumerate() {
        let name = format!("graphs/{i:04}.json");
        write_atomic(&out.join(&name), &b.graph.serialize()?)?;
        log.push_str(&format!("OK {} -> {name}\n", b.image.display()));
        for note in &b.notes {
            eprintln!("{}: {note}", b.image.display());
        }
        hits += usize::from(b.cached);
    }
    write_atomic(&out.join("build.log"), log.as_bytes())?;
    eprintln!("built {} graphs ({hits} from cache)", built.len());
    Ok(())
}

fn run_train(data: &DataArgs, out: &Path, seed: u64, workers: usize, epochs: usize, lr: f64, batch_size: usize) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate {lr} must be positive")));
    }
    let (graphs, mut splits) = split_graphs(data, out, &[Split::Train, Split::Val, Split::Test], workers)?;
    let test = splits.pop().map(|s| s.1).unwrap_or_default();
    let val = splits.pop().map(|s| s.1).unwrap_or_default();
    let train_set = splits.pop().map(|s| s.1).unwrap_or_default();
    if train_set.is_empty() {
        return Err(Error::Validation("the train split is empty".into()));
    }
    let cfg = TrainConfig {
        gnn: GnnConfig { input_dim: graphs.input_dim(), ..GnnConfig::default() },
        epochs,
        seed,
        schedule: LrSchedule { base: lr, ..LrSchedule::default() },
        batch_size,
    };
    let outcome = train(&train_set, &val, &cfg)?;
    save_checkpoint(&outcome.model, &out.join("model.vgmd"))?;
    write_atomic(&out.join("history.csv"), history_csv(&outcome.history).as_bytes())?;
    let test_metrics = if test.is_empty() { None } else { Some(evaluate(&outcome.model, &test)?) };
    let summary = json!({
        "best_epoch": outcome.best_epoch,
        "config": cfg,
        "sizes": {"train": train_set.len(), "val": val.len(), "test": test.len()},
        "test": test_metrics,
    });
    write_atomic(&out.join("summary.json"), &pretty(&summary)?)?;
    if let Some(m) = &test_metrics {
        print!("{}", render(&[Row { name: "test".into(), metrics: m.clone(), pass: None }]));
    }
    Ok(())
}

fn pretty(v: &impl serde::Serialize) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn checked_model(checkpoint: &Path, graphs: &ManifestGraphs) -> Result<Model> {
    let model = load_checkpoint(checkpoint)?;
    let need = graphs.input_dim();
    if need > model.config().input_dim {
        return Err(Error::DimensionMismatch(format!(
            "provider features are {need} wide but the checkpoint expects at most {}",
            model.config().input_dim
        )));
    }
    Ok(model)
}

fn run_eval(data: &DataArgs, checkpoint: &Path, out: &Path, split: &Split, tau_g: f64, workers: usize) -> Result<()> {
    let manifest = load_manifest(&data.manifest)?;
    let mut splits = vec![split.clone()];
    let mut extras: Vec<Split> =
        manifest.entries.iter().map(|e| e.split.clone()).filter(|s| matches!(s, Split::Extra(_))).collect();
    extras.sort();
    extras.dedup();
    splits.extend(extras.into_iter().filter(|s| s != split));
    let (graphs, built) = split_graphs(data, out, &splits, workers)?;
    let model = checked_model(checkpoint, &graphs)?;
    let mut report = Vec::new();
    let mut rows = Vec::new();
    for (s, g) in &built {
        let metrics = evaluate(&model, g)?;
        let pass = matches!(s, Split::Extra(_)).then_some(metrics.accuracy >= tau_g);
        report.push(json!({"split": s.to_string(), "metrics": metrics, "pass_tau_g": pass}));
        rows.push(Row { name: s.to_string(), metrics, pass });
    }
    write_atomic(&out.join("report.json"), &pretty(&report)?)?;
    print!("{}", render(&rows));
    Ok(())
}

fn suite_samples(manifest: &DatasetManifest, split: &Split) -> Result<Vec<SuiteSample>> {
    manifest
        .split(split)
        .into_iter()
        .map(|e| {
            Ok(SuiteSample {
                image: load_image(&manifest.resolve(&e.image))?,
                explanation: manifest.explanation_text(e)?,
                label: e.label,
            })
        })
        .collect()
}

fn run_attack(
    data: &DataArgs,
    checkpoint: &Path,
    out: &Path,
    split: &Split,
    suite: bool,
    extra: Vec<SuiteSpec>,
    tau_r: f64,
) -> Result<()> {
    let (manifest, graphs) = dataset(data)?;
    let model = checked_model(checkpoint, &graphs)?;
    let samples = suite_samples(&manifest, split)?;
    if samples.is_empty() {
        return Err(Error::Validation(format!("split {split} is empty")));
    }
    // Default resizes are relative to the first sample's width.
    let mut specs = if suite { default_suite(samples[0].image.width()) } else { vec![] };
    specs.extend(extra);
    if specs.is_empty() {
        return Err(Error::InvalidArgument("nothing to run: pass --kind, --spec or --suite".into()));
    }
    let rows = run_robustness_suite(&model, &samples, &graphs.context(manifest.grid_n), &specs, tau_r)?;
    write_atomic(&out.join("robustness.json"), &pretty(&rows)?)?;
    let table: Vec<Row> =
        rows.into_iter().map(|r| Row { name: r.spec, metrics: r.metrics, pass: Some(r.pass_tau_r) }).collect();
    print!("{}", render(&table));
    Ok(())
}

/// Regenerates the fakes of `split` from the dataset's synthesis recipe
/// and tunes their artifacts against the checkpoint.
fn run_generator(data: &DataArgs, checkpoint: &Path, out: &Path, split: &Split, steps: usize) -> Result<()> {
    let (manifest, graphs) = dataset(data)?;
    let model = checked_model(checkpoint, &graphs)?;
    let recipe = load_synth_recipe(&manifest.base_dir)?;
    let inputs: Vec<GeneratorInput> = synth_samples(&recipe)?
        .into_iter()
        .filter(|s| s.label == 1 && &s.split == split)
        .map(|s| GeneratorInput {
            base: s.base,
            size: recipe.size,
            cells: s.artifact_cells,
            amplitude: recipe.artifact_strength,
            explanation: format_explanations(&s.records),
        })
        .collect();
    if inputs.is_empty() {
        return Err(Error::Validation(format!("split {split} has no fakes")));
    }
    let cfg = GeneratorConfig { steps, ..GeneratorConfig::default() };
    let report = toy_generator_attack(&model, &graphs.context(manifest.grid_n), &inputs, &cfg)?;
    let mut samples = Vec::new();
    for (i, s) in report.samples.iter().enumerate() {
        let name = format!("generated/{i:04}.ppm");
        s.image.save_ppm(&out.join(&name))?;
        samples.push(json!({
            "image": name,
            "amplitude": s.amplitude,
            "phase": s.phase,
            "loss_before": s.loss_before,
            "loss_after": s.loss_after,
            "evaded": s.evaded,
        }));
    }
    let summary = json!({"config": cfg, "evasion_rate": report.evasion_rate, "samples": samples});
    write_atomic(&out.join("generator.json"), &pretty(&summary)?)?;
    println!("evasion rate {:.4} over {} fakes", report.evasion_rate, report.samples.len());
    Ok(())
}
