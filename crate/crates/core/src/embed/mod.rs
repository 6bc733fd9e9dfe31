//! Embedding providers for patch images and word tokens.
//!
//! Three interchangeable backends share one contract: a deterministic toy
//! projection (differentiable, used for attacks and offline tests), a
//! precomputed fixture file keyed by content digest, and an HTTP client for
//! the model server.

mod fixture;
mod remote;
mod toy;

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dct::dct_visual;
use crate::error::{Error, Result};
use crate::raster::{Patch, RasterImage};

pub use fixture::{EmbeddingFixture, FixtureProvider};
pub use remote::{ModelServerClient, RemoteConfig, RemoteProvider};
pub use toy::{toy_embed_image, toy_embed_text, ToyProvider, ToyTrace, TOY_GRID};

/// A finite feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("embedding value {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    /// Elementwise mean of two vectors of equal dimension.
    pub fn average(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!(
                "cannot average dims {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| 0.5 * (a + b)).collect()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Toy,
    Fixture,
    Remote,
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::Toy => "toy",
            ProviderKind::Fixture => "fixture",
            ProviderKind::Remote => "remote",
        })
    }
}

/// Deterministic image and word embedder. Implementations are immutable
/// after construction and may be shared across threads.
pub trait EmbeddingProvider: Send + Sync {
    fn kind(&self) -> ProviderKind;

    /// Stable identity string; part of graph cache keys.
    fn id(&self) -> String;

    fn image_dim(&self) -> usize;

    fn text_dim(&self) -> usize;

    /// Embeds each image; output order matches input order.
    fn embed_images(&self, images: &[RasterImage]) -> Result<Vec<EmbeddingVector>>;

    /// Embeds each token; output order matches input order.
    fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<EmbeddingVector>>;

    /// The differentiable backend, when this provider has one.
    fn as_toy(&self) -> Option<&ToyProvider> {
        None
    }
}

/// Patch node feature: mean of the embeddings of the patch and of its
/// spectrum image, both through the same image embedder.
pub fn node_feature(patch: &Patch, provider: &dyn EmbeddingProvider) -> Result<EmbeddingVector> {
    let mut v = node_features(std::slice::from_ref(patch), provider)?;
    Ok(v.remove(0))
}

/// Batched [`node_feature`]: one provider call for all patches and spectra.
pub fn node_features(
    patches: &[Patch],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<EmbeddingVector>> {
    let mut images: Vec<RasterImage> = patches.iter().map(|p| p.pixels.clone()).collect();
    for p in patches {
        images.push(dct_visual(p)?);
    }
    let embedded = provider.embed_images(&images)?;
    if embedded.len() != images.len() {
        return Err(Error::Provider(format!(
            "provider returned {} vectors for {} images",
            embedded.len(),
            images.len()
        )));
    }
    let (spatial, spectral) = embedded.split_at(patches.len());
    spatial
        .iter()
        .zip(spectral)
        .map(|(s, f)| {
            if s.dim() != provider.image_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "image embedding has dim {}, provider declares {}",
                    s.dim(),
                    provider.image_dim()
                )));
            }
            s.average(f)
        })
        .collect()
}

/// Serializable provider selection, as stored in manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Toy {
        #[serde(default = "default_toy_seed")]
        seed: u64,
        #[serde(default = "default_toy_image_dim")]
        image_dim: usize,
        #[serde(default = "default_toy_text_dim")]
        text_dim: usize,
    },
    Fixture {
        image: PathBuf,
        text: PathBuf,
    },
    Remote {
        endpoint: String,
        #[serde(default = "default_remote_dim")]
        image_dim: usize,
        #[serde(default = "default_remote_dim")]
        text_dim: usize,
        #[serde(default = "default_parallelism")]
        parallelism: usize,
    },
}

fn default_toy_seed() -> u64 {
    0x5eed
}
fn default_toy_image_dim() -> usize {
    64
}
fn default_toy_text_dim() -> usize {
    32
}
fn default_remote_dim() -> usize {
    768
}
fn default_parallelism() -> usize {
    4
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Toy {
            seed: default_toy_seed(),
            image_dim: default_toy_image_dim(),
            text_dim: default_toy_text_dim(),
        }
    }
}

impl ProviderConfig {
    pub fn remote(endpoint: impl Into<String>) -> Self {
        ProviderConfig::Remote {
            endpoint: endpoint.into(),
            image_dim: default_remote_dim(),
            text_dim: default_remote_dim(),
            parallelism: default_parallelism(),
        }
    }

    /// Instantiates the provider; relative fixture paths resolve against
    /// `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match self {
            ProviderConfig::Toy { seed, image_dim, text_dim } => {
                Box::new(ToyProvider::new(*seed, *image_dim, *text_dim)?)
            }
            ProviderConfig::Fixture { image, text } => {
                Box::new(FixtureProvider::open(&base_dir.join(image), &base_dir.join(text))?)
            }
            ProviderConfig::Remote { endpoint, image_dim, text_dim, parallelism } => {
                let cfg = RemoteConfig {
                    endpoint: endpoint.clone(),
                    parallelism: *parallelism,
                    chunk_size: 16,
                    max_attempts: 3,
                    backoff: Duration::from_millis(200),
                    timeout: Duration::from_secs(120),
                };
                Box::new(RemoteProvider::new(cfg, *image_dim, *text_dim)?)
            }
        })
    }
}
