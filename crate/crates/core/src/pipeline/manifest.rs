//! Dataset manifests (`vigtext-manifest/1`).
//!
//! ```json
//! {"format": "vigtext-manifest/1", "grid_n": 4,
//!  "provider": {"kind": "toy"},
//!  "dependencies": {"kind": "fixture", "path": "deps.jsonl"},
//!  "entries": [{"image": "images/0000.ppm", "explanation": "explanations/0000.txt",
//!               "label": 1, "split": "train"}]}
//! ```
//!
//! Each entry carries either `explanation` (a file path) or
//! `explanation_text` (inline). Relative paths resolve against the
//! manifest's directory. `split` is `train`, `val`, `test` or `extra:<name>`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::embed::ProviderConfig;
use crate::error::{Error, Result};
use crate::io;
use crate::textgraph::DependencyConfig;

pub const MANIFEST_FORMAT: &str = "vigtext-manifest/1";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
    Extra(String),
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => f.write_str("train"),
            Split::Val => f.write_str("val"),
            Split::Test => f.write_str("test"),
            Split::Extra(name) => write!(f, "extra:{name}"),
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => match s.strip_prefix("extra:") {
                Some(name) if !name.is_empty() => Ok(Split::Extra(name.to_string())),
                _ => Err(Error::Schema(format!("unknown split {s:?}"))),
            },
        }
    }
}

impl Serialize for Split {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Split {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation_text: Option<String>,
    pub label: u8,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub grid_n: usize,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub dependencies: DependencyConfig,
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(grid_n: usize, provider: ProviderConfig, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            grid_n,
            provider,
            dependencies: DependencyConfig::default(),
            entries: Vec::new(),
            base_dir: base_dir.into(),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn split(&self, split: &Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| &e.split == split).collect()
    }

    /// Explanation text of `entry`, read from disk if it is a path.
    pub fn explanation_text(&self, entry: &ManifestEntry) -> Result<String> {
        match (&entry.explanation, &entry.explanation_text) {
            (_, Some(text)) => Ok(text.clone()),
            (Some(p), None) => io::read_string(&self.resolve(p)),
            (None, None) => Err(Error::Schema(format!("entry {} has no explanation", entry.image.display()))),
        }
    }

    /// Structural checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.format != MANIFEST_FORMAT {
            return Err(Error::Version { expected: MANIFEST_FORMAT.into(), found: self.format.clone() });
        }
        if self.grid_n == 0 {
            return Err(Error::Schema("grid_n must be at least 1".into()));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if e.label > 1 {
                return Err(Error::Schema(format!("entry {} has label {}; expected 0 or 1", e.image.display(), e.label)));
            }
            if e.explanation.is_some() == e.explanation_text.is_some() {
                return Err(Error::Schema(format!(
                    "entry {} needs exactly one of explanation and explanation_text",
                    e.image.display()
                )));
            }
            if !seen.insert(&e.image) {
                return Err(Error::Validation(format!("image {} is listed twice", e.image.display())));
            }
        }
        Ok(())
    }

    fn check_assets(&self) -> Result<()> {
        for e in &self.entries {
            for p in [Some(&e.image), e.explanation.as_ref()].into_iter().flatten() {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::MissingFile(full));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("manifest serializes");
        out.push(b'\n');
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_json())
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = io::read(path)?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    match value.get("format").and_then(|v| v.as_str()) {
        Some(MANIFEST_FORMAT) => {}
        Some(other) => return Err(Error::Version { expected: MANIFEST_FORMAT.into(), found: other.into() }),
        None => return Err(Error::Schema(format!("{}: missing format", path.display()))),
    }
    let mut m: DatasetManifest =
        serde_json::from_value(value).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    m.validate()?;
    m.check_assets()?;
    Ok(m)
}
