//! Precomputed embeddings keyed by SHA-256 content digest.
//!
//! File layout (`VGFX1`): the 5 magic bytes, a little-endian `u32` vector
//! dimension, then fixed-size records of a 32-byte digest followed by `dim`
//! little-endian `f64` values. Image keys digest the P6 PPM encoding of the
//! image; token keys digest the token's UTF-8 bytes as-is.

use std::collections::BTreeMap;
use std::path::Path;

use super::{EmbeddingProvider, EmbeddingVector, ProviderKind};
use crate::error::{Error, Result};
use crate::io::{self, sha256, Digest32};
use crate::raster::RasterImage;

const MAGIC: &[u8; 5] = b"VGFX1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingFixture {
    dim: usize,
    records: BTreeMap<Digest32, Vec<f64>>,
}

impl EmbeddingFixture {
    pub fn new(dim: usize) -> Self {
        Self { dim, records: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image_key(img: &RasterImage) -> Digest32 {
        sha256(&img.to_ppm())
    }

    pub fn token_key(token: &str) -> Digest32 {
        sha256(token.as_bytes())
    }

    pub fn insert(&mut self, key: Digest32, values: Vec<f64>) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "fixture dim is {}, record has {}",
                self.dim,
                values.len()
            )));
        }
        self.records.insert(key, values);
        Ok(())
    }

    pub fn lookup(&self, key: &Digest32) -> Result<EmbeddingVector> {
        let values = self
            .records
            .get(key)
            .ok_or_else(|| Error::NotFound(format!("no fixture record for digest {}", hex::encode(key))))?;
        EmbeddingVector::new(values.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + self.records.len() * (32 + 8 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (key, values) in &self.records {
            out.extend_from_slice(key);
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 9 || &bytes[..5] != MAGIC {
            return Err(Error::Schema("embedding fixture lacks VGFX1 magic".into()));
        }
        let dim = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
        if dim == 0 {
            return Err(Error::Schema("embedding fixture declares dim 0".into()));
        }
        let record = 32 + 8 * dim;
        let body = &bytes[9..];
        if !body.len().is_multiple_of(record) {
            return Err(Error::Schema(format!(
                "fixture body of {} bytes is not a whole number of {record}-byte records (dim {dim})",
                body.len()
            )));
        }
        let mut records = BTreeMap::new();
        for chunk in body.chunks_exact(record) {
            let key: Digest32 = chunk[..32].try_into().expect("32 bytes");
            let values = chunk[32..]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            records.insert(key, values);
        }
        Ok(Self { dim, records })
    }

    pub fn open(path: &Path) -> Result<Self> {
        Self::from_bytes(&io::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_bytes())
    }
}

/// Serves embeddings from an image fixture and a token fixture (which may be
/// the same file).
#[derive(Debug, Clone)]
pub struct FixtureProvider {
    image: EmbeddingFixture,
    text: EmbeddingFixture,
    id: String,
}

impl FixtureProvider {
    pub fn new(image: EmbeddingFixture, text: EmbeddingFixture) -> Self {
        let mut ident = image.to_bytes();
        ident.extend_from_slice(&text.to_bytes());
        let id = format!("fixture:{}", &crate::io::sha256_hex(&ident)[..16]);
        Self { image, text, id }
    }

    pub fn open(image_path: &Path, text_path: &Path) -> Result<Self> {
        Ok(Self::new(EmbeddingFixture::open(image_path)?, EmbeddingFixture::open(text_path)?))
    }
}

impl EmbeddingProvider for FixtureProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Fixture
    }

    fn id(&self) -> String {
        self.id.clone()
    }

    fn image_dim(&self) -> usize {
        self.image.dim()
    }

    fn text_dim(&self) -> usize {
        self.text.dim()
    }

    fn embed_images(&self, images: &[RasterImage]) -> Result<Vec<EmbeddingVector>> {
        images.iter().map(|img| self.image.lookup(&EmbeddingFixture::image_key(img))).collect()
    }

    fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<EmbeddingVector>> {
        tokens.iter().map(|t| self.text.lookup(&EmbeddingFixture::token_key(t))).collect()
    }
}
