//! Explanation text: parsing patch-referenced lines, tokenizing, attaching
//! dependency arcs and building one word graph per explanation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingProvider, EmbeddingVector, ModelServerClient, RemoteConfig};
use crate::error::{Error, Result};
use crate::io::{self, sha256_hex};
use crate::raster::{grid_label, parse_grid_label};

/// Default visual-prompt instructions sent with `/explain`.
pub const DEFAULT_PROMPT: &str = include_str!("../assets/explain_prompt.txt");

/// Loads the prompt template from `path`, or the built-in default.
pub fn prompt_template(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) => io::read_string(p),
        None => Ok(DEFAULT_PROMPT.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExplanationRecord {
    /// Upper-case grid labels, deduplicated, in row-major grid order.
    pub patch_labels: Vec<String>,
    pub sentence: String,
    pub tokens: Vec<String>,
    /// `(head, dependent)` token indices.
    pub dep_edges: Vec<(usize, usize)>,
}

impl ExplanationRecord {
    pub fn new(patch_labels: Vec<String>, sentence: impl Into<String>) -> Self {
        Self { patch_labels, sentence: sentence.into(), tokens: Vec::new(), dep_edges: Vec::new() }
    }

    pub fn sentence_digest(&self) -> String {
        sha256_hex(self.sentence.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    OutOfGrid,
    UnmatchedLine,
    SelfLoop,
    DuplicateEdge,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    /// 1-based source line, when the diagnostic comes from parsing.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedExplanations {
    pub records: Vec<ExplanationRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

fn looks_like_label(s: &str) -> bool {
    let letters = s.bytes().take_while(u8::is_ascii_alphabetic).count();
    letters > 0 && letters < s.len() && s.bytes().skip(letters).all(|b| b.is_ascii_digit())
}

/// Parses VLLM output of the form `{A1, B2}: sentence`, one record per line.
///
/// Braces (or square brackets) around the label list are optional, as is a
/// leading quote or list bullet. Labels outside the `n`x`n` grid are dropped
/// with an [`DiagnosticKind::OutOfGrid`] diagnostic; a line left with no
/// valid label is skipped. Never fails.
pub fn parse_explanations(text: &str, n: usize) -> ParsedExplanations {
    let mut out = ParsedExplanations::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let unmatched = |out: &mut ParsedExplanations| {
            out.diagnostics.push(Diagnostic {
                kind: DiagnosticKind::UnmatchedLine,
                line: Some(line_no),
                message: format!("not an explanation line: {line:?}"),
            })
        };
        let Some((prefix, sentence)) = line.split_once(':') else {
            unmatched(&mut out);
            continue;
        };
        let prefix = prefix
            .trim()
            .trim_start_matches(['\'', '"', '`', '-', '*', '•'])
            .trim()
            .trim_start_matches(['{', '['])
            .trim_end_matches(['}', ']'])
            .trim();
        let candidates: Vec<&str> = prefix.split(',').map(str::trim).collect();
        if !candidates.iter().all(|c| looks_like_label(c)) {
            unmatched(&mut out);
            continue;
        }
        let mut cells = BTreeSet::new();
        for c in candidates {
            match parse_grid_label(c, n) {
                Some(cell) => {
                    cells.insert(cell);
                }
                None => out.diagnostics.push(Diagnostic {
                    kind: DiagnosticKind::OutOfGrid,
                    line: Some(line_no),
                    message: format!("label {c} is outside the {n}x{n} grid"),
                }),
            }
        }
        if cells.is_empty() {
            continue;
        }
        let labels = cells.into_iter().map(|(r, c)| grid_label(r, c)).collect();
        out.records.push(ExplanationRecord::new(labels, sentence.trim()));
    }
    out
}

/// Renders records in the canonical `{A1,B2}: sentence` form.
pub fn format_explanations(records: &[ExplanationRecord]) -> String {
    records
        .iter()
        .map(|r| format!("{{{}}}: {}\n", r.patch_labels.join(","), r.sentence))
        .collect()
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '—' | '–' | '…')
}

/// Whitespace split; leading and trailing punctuation characters become
/// single-character tokens, internal punctuation (`don't`) stays.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in sentence.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let lead = chars.iter().take_while(|c| is_punct(**c)).count();
        if lead == chars.len() {
            tokens.extend(chars.iter().map(char::to_string));
            continue;
        }
        let trail = chars.iter().rev().take_while(|c| is_punct(**c)).count();
        tokens.extend(chars[..lead].iter().map(char::to_string));
        tokens.push(chars[lead..chars.len() - trail].iter().collect());
        tokens.extend(chars[chars.len() - trail..].iter().map(char::to_string));
    }
    tokens
}

/// Validates `edges` against the record's tokens and stores them, dropping
/// self-loops and repeated (including reversed) pairs.
pub fn attach_dependencies(
    mut record: ExplanationRecord,
    edges: &[(usize, usize)],
) -> Result<(ExplanationRecord, Vec<Diagnostic>)> {
    let n = record.tokens.len();
    let mut seen = BTreeSet::new();
    let mut kept = Vec::new();
    let mut diags = Vec::new();
    for &(h, d) in edges {
        if h >= n || d >= n {
            return Err(Error::IndexOutOfRange(format!(
                "dependency edge ({h}, {d}) for {n} tokens"
            )));
        }
        if h == d {
            diags.push(Diagnostic {
                kind: DiagnosticKind::SelfLoop,
                line: None,
                message: format!("self-loop on token {h} removed"),
            });
            continue;
        }
        if !seen.insert((h.min(d), h.max(d))) {
            diags.push(Diagnostic {
                kind: DiagnosticKind::DuplicateEdge,
                line: None,
                message: format!("duplicate edge ({h}, {d}) removed"),
            });
            continue;
        }
        kept.push((h, d));
    }
    record.dep_edges = kept;
    Ok((record, diags))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct DependencyLine {
    sentence_digest: String,
    tokens: Vec<String>,
    edges: Vec<[usize; 2]>,
}

type DepEdge = (usize, usize);
type ParsedSentence = (Vec<String>, Vec<DepEdge>);

/// Frozen parser output keyed by SHA-256 of the sentence (JSON lines of
/// `{"sentence_digest", "tokens", "edges"}`).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DependencyFixture {
    entries: BTreeMap<String, ParsedSentence>,
}

impl DependencyFixture {
    pub fn insert(&mut self, sentence: &str, tokens: Vec<String>, edges: Vec<(usize, usize)>) {
        self.entries.insert(sha256_hex(sentence.as_bytes()), (tokens, edges));
    }

    pub fn get(&self, sentence: &str) -> Option<(&[String], &[DepEdge])> {
        self.entries
            .get(&sha256_hex(sentence.as_bytes()))
            .map(|(t, e)| (t.as_slice(), e.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: DependencyLine = serde_json::from_str(line)
                .map_err(|e| Error::Schema(format!("dependency fixture line {}: {e}", i + 1)))?;
            let edges = parsed.edges.iter().map(|e| (e[0], e[1])).collect();
            entries.insert(parsed.sentence_digest, (parsed.tokens, edges));
        }
        Ok(Self { entries })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (digest, (tokens, edges)) in &self.entries {
            let line = DependencyLine {
                sentence_digest: digest.clone(),
                tokens: tokens.clone(),
                edges: edges.iter().map(|&(h, d)| [h, d]).collect(),
            };
            out.push_str(&serde_json::to_string(&line).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn open(path: &Path) -> Result<Self> {
        Self::from_jsonl(&io::read_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_jsonl().as_bytes())
    }
}

/// Where tokens and dependency arcs come from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DependencyConfig {
    /// Local tokenizer with a left-to-right chain of arcs.
    #[default]
    Sequential,
    Fixture { path: PathBuf },
    Remote { endpoint: String },
}

pub enum DependencySource {
    Sequential,
    Fixture(DependencyFixture),
    Remote(ModelServerClient),
}

impl DependencyConfig {
    pub fn build(&self, base_dir: &Path) -> Result<DependencySource> {
        Ok(match self {
            DependencyConfig::Sequential => DependencySource::Sequential,
            DependencyConfig::Fixture { path } => {
                DependencySource::Fixture(DependencyFixture::open(&base_dir.join(path))?)
            }
            DependencyConfig::Remote { endpoint } => {
                DependencySource::Remote(ModelServerClient::new(RemoteConfig::new(endpoint.clone()))?)
            }
        })
    }

    pub fn id(&self, base_dir: &Path) -> Result<String> {
        Ok(match self {
            DependencyConfig::Sequential => "sequential".into(),
            DependencyConfig::Fixture { path } => {
                format!("fixture:{}", &sha256_hex(&io::read(&base_dir.join(path))?)[..16])
            }
            DependencyConfig::Remote { endpoint } => format!("remote:{endpoint}"),
        })
    }
}

impl DependencySource {
    /// Fills in `tokens` and `dep_edges` for a freshly parsed record.
    pub fn enrich(&self, record: ExplanationRecord) -> Result<(ExplanationRecord, Vec<Diagnostic>)> {
        let (tokens, edges) = match self {
            DependencySource::Sequential => {
                let tokens = tokenize(&record.sentence);
                let edges = (1..tokens.len()).map(|i| (i - 1, i)).collect();
                (tokens, edges)
            }
            DependencySource::Fixture(fx) => {
                let (t, e) = fx.get(&record.sentence).ok_or_else(|| {
                    Error::NotFound(format!("no dependency parse for sentence {:?}", record.sentence))
                })?;
                (t.to_vec(), e.to_vec())
            }
            DependencySource::Remote(client) => {
                let parsed = client.parse(&record.sentence)?;
                let edges = parsed.edges.iter().map(|e| (e[0], e[1])).collect();
                (parsed.tokens, edges)
            }
        };
        attach_dependencies(ExplanationRecord { tokens, ..record }, &edges)
    }
}

/// Word graph of one explanation.
#[derive(Debug, Clone, PartialEq)]
pub struct TextGraph {
    pub tokens: Vec<String>,
    pub features: Vec<EmbeddingVector>,
    /// Undirected, stored as `(low, high)`, sorted.
    pub edges: Vec<(usize, usize)>,
    pub anchor_labels: Vec<String>,
}

impl TextGraph {
    pub fn node_count(&self) -> usize {
        self.features.len()
    }
}

pub fn build_text_graph(record: &ExplanationRecord, provider: &dyn EmbeddingProvider) -> Result<TextGraph> {
    if record.tokens.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "explanation {:?} has no tokens",
            record.sentence
        )));
    }
    let features = provider.embed_tokens(&record.tokens)?;
    let edges: BTreeSet<(usize, usize)> = record
        .dep_edges
        .iter()
        .filter(|(h, d)| h != d)
        .map(|&(h, d)| (h.min(d), h.max(d)))
        .collect();
    Ok(TextGraph {
        tokens: record.tokens.clone(),
        features,
        edges: edges.into_iter().collect(),
        anchor_labels: record.patch_labels.clone(),
    })
}
