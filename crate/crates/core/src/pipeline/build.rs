//! Turning (image, explanation) pairs into dual graphs, with an on-disk cache.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::manifest::{DatasetManifest, ManifestEntry};
use crate::dualgraph::{build_image_graph, DualGraph};
use crate::embed::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::io::{self, sha256_hex};
use crate::raster::{load_image, split_patches, RasterImage};
use crate::textgraph::{build_text_graph, parse_explanations, DependencySource};

/// Everything graph construction depends on besides the pixels and text.
pub struct GraphContext<'a> {
    pub grid_n: usize,
    pub provider: &'a dyn EmbeddingProvider,
    pub deps: &'a DependencySource,
    /// Identity of the dependency source, for cache keys.
    pub deps_id: String,
}

/// Builds the dual graph of one image and its explanation text. Records
/// that cannot be used (no tokens) are skipped; the returned strings
/// describe everything dropped along the way.
pub fn build_graph(image: &RasterImage, explanation: &str, ctx: &GraphContext<'_>) -> Result<(DualGraph, Vec<String>)> {
    let patches = split_patches(image, ctx.grid_n)?;
    let image_graph = build_image_graph(&patches, ctx.provider)?;
    let parsed = parse_explanations(explanation, ctx.grid_n);
    let mut notes: Vec<String> = parsed.diagnostics.iter().map(|d| d.to_string()).collect();
    let mut text_graphs = Vec::new();
    for record in parsed.records {
        let (record, diags) = ctx.deps.enrich(record)?;
        notes.extend(diags.iter().map(|d| d.to_string()));
        if record.tokens.is_empty() {
            notes.push(format!("record {:?} has no tokens; skipped", record.patch_labels));
            continue;
        }
        text_graphs.push(build_text_graph(&record, ctx.provider)?);
    }
    Ok((image_graph.integrate(&text_graphs)?, notes))
}

/// Cache key over the inputs that determine a graph.
pub fn cache_key(image: &RasterImage, explanation: &str, ctx: &GraphContext<'_>) -> String {
    let parts = [
        sha256_hex(&image.to_ppm()),
        sha256_hex(explanation.as_bytes()),
        ctx.grid_n.to_string(),
        ctx.provider.id(),
        ctx.deps_id.clone(),
    ];
    sha256_hex(parts.join("\n").as_bytes())
}

/// Directory of `<key>.json` graph files.
#[derive(Debug, Clone)]
pub struct GraphCache {
    dir: PathBuf,
}

impl GraphCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// A cached graph, or `None` when absent or unreadable.
    pub fn get(&self, key: &str) -> Option<DualGraph> {
        let bytes = std::fs::read(self.path(key)).ok()?;
        match DualGraph::deserialize(&bytes) {
            Ok(g) => Some(g),
            Err(e) => {
                log::warn!("ignoring damaged cache entry {key}: {e}");
                None
            }
        }
    }

    pub fn put(&self, key: &str, g: &DualGraph) -> Result<()> {
        let mut unlabeled = g.clone();
        unlabeled.label = None;
        io::write_atomic(&self.path(key), &unlabeled.serialize()?)
    }
}

#[derive(Debug, Clone)]
pub struct BuiltGraph {
    pub image: PathBuf,
    pub graph: DualGraph,
    pub cached: bool,
    pub notes: Vec<String>,
}

/// Builds (or loads from `cache`) the labelled graph of every entry, in
/// entry order, on `workers` threads (0 picks the default).
pub fn build_entries(
    manifest: &DatasetManifest,
    entries: &[&ManifestEntry],
    ctx: &GraphContext<'_>,
    cache: Option<&GraphCache>,
    workers: usize,
) -> Result<Vec<BuiltGraph>> {
    let one = |entry: &&ManifestEntry| -> Result<BuiltGraph> {
        let image = load_image(&manifest.resolve(&entry.image))?;
        let text = manifest.explanation_text(entry)?;
        let key = cache_key(&image, &text, ctx);
        if let Some(g) = cache.and_then(|c| c.get(&key)) {
            return Ok(BuiltGraph { image: entry.image.clone(), graph: g.with_label(entry.label), cached: true, notes: vec![] });
        }
        let (graph, notes) = build_graph(&image, &text, ctx)?;
        if let Some(c) = cache {
            c.put(&key, &graph)?;
        }
        Ok(BuiltGraph { image: entry.image.clone(), graph: graph.with_label(entry.label), cached: false, notes })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    pool.install(|| entries.par_iter().map(one).collect())
}

/// Convenience wrapper: provider and dependency source from the manifest.
pub struct ManifestGraphs {
    pub provider: Box<dyn EmbeddingProvider>,
    pub deps: DependencySource,
    pub deps_id: String,
}

impl ManifestGraphs {
    pub fn open(manifest: &DatasetManifest) -> Result<Self> {
        Ok(Self {
            provider: manifest.provider.build(&manifest.base_dir)?,
            deps: manifest.dependencies.build(&manifest.base_dir)?,
            deps_id: manifest.dependencies.id(&manifest.base_dir)?,
        })
    }

    pub fn with_provider(manifest: &DatasetManifest, provider: Box<dyn EmbeddingProvider>) -> Result<Self> {
        Ok(Self {
            provider,
            deps: manifest.dependencies.build(&manifest.base_dir)?,
            deps_id: manifest.dependencies.id(&manifest.base_dir)?,
        })
    }

    pub fn context(&self, grid_n: usize) -> GraphContext<'_> {
        GraphContext { grid_n, provider: self.provider.as_ref(), deps: &self.deps, deps_id: self.deps_id.clone() }
    }

    /// Input width the classifier needs for these features.
    pub fn input_dim(&self) -> usize {
        self.provider.image_dim().max(self.provider.text_dim())
    }
}

/// Reads one `vigtext-graph/1` file.
pub fn read_graph(path: &Path) -> Result<DualGraph> {
    DualGraph::deserialize(&io::read(path)?)
}
