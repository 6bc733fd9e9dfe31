//! The unified graph: patch nodes from the image grid plus word nodes from
//! each explanation, joined by cross edges to the patches a record names.
//!
//! Patch nodes always come first, in row-major grid order, so node `i < n²`
//! is cell `(i / n, i % n)`.
//!
//! Serialized form (`vigtext-graph/1`) is compact JSON with sorted keys:
//!
//! ```text
//! {"edges":[{"a":0,"b":1,"kind":"adjacency"},...],
//!  "format":"vigtext-graph/1","grid_n":4,"label":1,
//!  "nodes":[{"feature":"3ff0000000000000...","kind":"patch","label":"A1"},
//!           {"feature":"...","kind":"word","record":0,"text":"The","token":0},...]}
//! ```
//!
//! Each feature is the concatenation of the 16-hex-digit big-endian bit
//! patterns of its `f64` values. `label` is `null`, `0` (real) or `1` (fake).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::embed::{node_features, EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::raster::{grid_label, parse_grid_label, Patch};
use crate::textgraph::TextGraph;

pub const GRAPH_FORMAT: &str = "vigtext-graph/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Patch,
    Word,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeOrigin {
    Patch { label: String },
    Word { record: usize, token: usize, text: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub feature: EmbeddingVector,
    pub origin: NodeOrigin,
}

impl Node {
    pub fn kind(&self) -> NodeKind {
        match self.origin {
            NodeOrigin::Patch { .. } => NodeKind::Patch,
            NodeOrigin::Word { .. } => NodeKind::Word,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Adjacency,
    Dependency,
    Cross,
}

/// Undirected edge stored once with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn new(x: usize, y: usize, kind: EdgeKind) -> Self {
        Self { a: x.min(y), b: x.max(y), kind }
    }
}

/// Which grid neighbours are joined by adjacency edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjacency {
    /// Horizontal and vertical neighbours: `2n(n-1)` edges.
    #[default]
    Four,
    /// Adds diagonals: `2n(n-1) + 2(n-1)²` edges.
    Eight,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualGraph {
    pub grid_n: usize,
    /// 0 real, 1 fake.
    pub label: Option<u8>,
    pub nodes: Vec<Node>,
    /// Sorted by `(a, b)`, no duplicates.
    pub edges: Vec<Edge>,
}

/// Adjacency edges of an `n`x`n` grid with row-major node numbering.
pub fn grid_edges(n: usize, adjacency: Adjacency) -> Vec<Edge> {
    let mut edges = Vec::new();
    for r in 0..n {
        for c in 0..n {
            let i = r * n + c;
            if c + 1 < n {
                edges.push(Edge::new(i, i + 1, EdgeKind::Adjacency));
            }
            if r + 1 < n {
                edges.push(Edge::new(i, i + n, EdgeKind::Adjacency));
            }
            if adjacency == Adjacency::Eight && r + 1 < n {
                if c + 1 < n {
                    edges.push(Edge::new(i, i + n + 1, EdgeKind::Adjacency));
                }
                if c > 0 {
                    edges.push(Edge::new(i, i + n - 1, EdgeKind::Adjacency));
                }
            }
        }
    }
    edges.sort();
    edges
}

/// Patch-only graph with 4-adjacency.
pub fn build_image_graph(patches: &[Patch], provider: &dyn EmbeddingProvider) -> Result<DualGraph> {
    build_image_graph_with(patches, provider, Adjacency::Four)
}

pub fn build_image_graph_with(
    patches: &[Patch],
    provider: &dyn EmbeddingProvider,
    adjacency: Adjacency,
) -> Result<DualGraph> {
    let n = (patches.len() as f64).sqrt().round() as usize;
    if n == 0 || n * n != patches.len() {
        return Err(Error::Validation(format!("{} patches do not form a square grid", patches.len())));
    }
    let mut slots: Vec<Option<&Patch>> = vec![None; n * n];
    for p in patches {
        if p.row >= n || p.col >= n || slots[p.row * n + p.col].replace(p).is_some() {
            return Err(Error::Validation(format!("patch {} repeats or lies outside the {n}x{n} grid", p.label)));
        }
    }
    let ordered: Vec<Patch> = slots.into_iter().map(|p| p.expect("all cells filled").clone()).collect();
    let features = node_features(&ordered, provider)?;
    let nodes = ordered
        .iter()
        .zip(features)
        .map(|(p, feature)| Node { feature, origin: NodeOrigin::Patch { label: grid_label(p.row, p.col) } })
        .collect();
    Ok(DualGraph { grid_n: n, label: None, nodes, edges: grid_edges(n, adjacency) })
}

impl DualGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn patch_count(&self) -> usize {
        self.grid_n * self.grid_n
    }

    pub fn word_count(&self) -> usize {
        self.nodes.len() - self.patch_count()
    }

    pub fn edge_count(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    pub fn with_label(mut self, label: u8) -> Self {
        self.label = Some(label);
        self
    }

    /// Largest feature dimension over all nodes.
    pub fn feature_dim(&self) -> usize {
        self.nodes.iter().map(|n| n.feature.dim()).max().unwrap_or(0)
    }

    fn record_count(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| match n.origin {
                NodeOrigin::Word { record, .. } => Some(record + 1),
                NodeOrigin::Patch { .. } => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Appends each text graph's words and dependency edges, and a cross
    /// edge from every word to every patch its record names.
    pub fn integrate(&self, text_graphs: &[TextGraph]) -> Result<DualGraph> {
        let n = self.grid_n;
        let mut out = self.clone();
        let mut edges: BTreeSet<Edge> = out.edges.iter().copied().collect();
        let first_record = self.record_count();
        for (k, tg) in text_graphs.iter().enumerate() {
            if tg.tokens.len() != tg.features.len() {
                return Err(Error::Validation(format!(
                    "text graph {k}: {} tokens but {} features",
                    tg.tokens.len(),
                    tg.features.len()
                )));
            }
            let anchors = tg
                .anchor_labels
                .iter()
                .map(|l| {
                    parse_grid_label(l, n).map(|(r, c)| r * n + c).ok_or_else(|| {
                        Error::Validation(format!("anchor {l} does not name a patch of the {n}x{n} grid"))
                    })
                })
                .collect::<Result<BTreeSet<usize>>>()?;
            let base = out.nodes.len();
            for (t, (text, feature)) in tg.tokens.iter().zip(&tg.features).enumerate() {
                out.nodes.push(Node {
                    feature: feature.clone(),
                    origin: NodeOrigin::Word { record: first_record + k, token: t, text: text.clone() },
                });
                for &p in &anchors {
                    edges.insert(Edge::new(p, base + t, EdgeKind::Cross));
                }
            }
            for &(x, y) in &tg.edges {
                if x >= tg.tokens.len() || y >= tg.tokens.len() || x == y {
                    return Err(Error::Validation(format!("text graph {k}: bad dependency edge ({x}, {y})")));
                }
                edges.insert(Edge::new(base + x, base + y, EdgeKind::Dependency));
            }
        }
        out.edges = edges.into_iter().collect();
        Ok(out)
    }

    /// Copy with the patch node features replaced (cell order).
    pub fn with_patch_features(&self, features: Vec<EmbeddingVector>) -> Result<DualGraph> {
        if features.len() != self.patch_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} patch features for {} patches",
                features.len(),
                self.patch_count()
            )));
        }
        let mut out = self.clone();
        for (node, f) in out.nodes.iter_mut().zip(features) {
            node.feature = f;
        }
        Ok(out)
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.grid_n;
        let bad = |msg: String| Err(Error::Validation(msg));
        if n == 0 {
            return bad("grid_n must be at least 1".into());
        }
        if let Some(l) = self.label {
            if l > 1 {
                return bad(format!("label {l} is not 0 or 1"));
            }
        }
        if self.nodes.len() < n * n {
            return bad(format!("{} nodes, fewer than {} patches", self.nodes.len(), n * n));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.feature.dim() == 0 || node.feature.values().iter().any(|v| !v.is_finite()) {
                return bad(format!("node {i} has an empty or non-finite feature"));
            }
            match &node.origin {
                NodeOrigin::Patch { label } if i < n * n => {
                    if *label != grid_label(i / n, i % n) {
                        return bad(format!("node {i} should be patch {} not {label}", grid_label(i / n, i % n)));
                    }
                }
                NodeOrigin::Word { .. } if i >= n * n => {}
                _ => return bad(format!("node {i} is out of place: patches must be the first {} nodes", n * n)),
            }
        }
        for w in self.edges.windows(2) {
            if (w[0].a, w[0].b) >= (w[1].a, w[1].b) {
                return bad("edges are not sorted and unique".into());
            }
        }
        let mut words_per_record: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for node in &self.nodes {
            if let NodeOrigin::Word { record, token, .. } = node.origin {
                if !words_per_record.entry(record).or_default().insert(token) {
                    return bad(format!("record {record} token {token} appears twice"));
                }
            }
        }
        for e in &self.edges {
            if e.a >= e.b || e.b >= self.nodes.len() {
                return bad(format!("edge ({}, {}) is not an ordered pair of node indices", e.a, e.b));
            }
            let (ka, kb) = (self.nodes[e.a].kind(), self.nodes[e.b].kind());
            let ok = match e.kind {
                EdgeKind::Adjacency => ka == NodeKind::Patch && kb == NodeKind::Patch,
                EdgeKind::Cross => ka == NodeKind::Patch && kb == NodeKind::Word,
                EdgeKind::Dependency => match (&self.nodes[e.a].origin, &self.nodes[e.b].origin) {
                    (NodeOrigin::Word { record: r1, .. }, NodeOrigin::Word { record: r2, .. }) => r1 == r2,
                    _ => false,
                },
            };
            if !ok {
                return bad(format!("{:?} edge ({}, {}) joins {ka:?} and {kb:?}", e.kind, e.a, e.b));
            }
        }
        Ok(())
    }

    /// Canonical `vigtext-graph/1` bytes.
    pub fn serialize(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let wire = WireGraph {
            format: GRAPH_FORMAT.into(),
            grid_n: self.grid_n,
            label: self.label,
            nodes: self
                .nodes
                .iter()
                .map(|n| {
                    let feature = encode_feature(n.feature.values());
                    match &n.origin {
                        NodeOrigin::Patch { label } => WireNode::Patch { label: label.clone(), feature },
                        NodeOrigin::Word { record, token, text } => WireNode::Word {
                            record: *record,
                            token: *token,
                            text: text.clone(),
                            feature,
                        },
                    }
                })
                .collect(),
            edges: self.edges.iter().map(|e| WireEdge { kind: e.kind, a: e.a, b: e.b }).collect(),
        };
        // Value maps are BTreeMaps, so this sorts keys at every level.
        let value = serde_json::to_value(&wire)?;
        let mut bytes = serde_json::to_vec(&value)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn deserialize(bytes: &[u8]) -> Result<DualGraph> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| Error::Schema(format!("graph is not JSON: {e}")))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(GRAPH_FORMAT) => {}
            Some(other) => return Err(Error::Version { expected: GRAPH_FORMAT.into(), found: other.into() }),
            None => return Err(Error::Schema("graph lacks a format string".into())),
        }
        let wire: WireGraph =
            serde_json::from_value(value).map_err(|e| Error::Schema(format!("graph schema: {e}")))?;
        let nodes = wire
            .nodes
            .into_iter()
            .map(|n| {
                Ok(match n {
                    WireNode::Patch { label, feature } => {
                        Node { feature: decode_feature(&feature)?, origin: NodeOrigin::Patch { label } }
                    }
                    WireNode::Word { record, token, text, feature } => Node {
                        feature: decode_feature(&feature)?,
                        origin: NodeOrigin::Word { record, token, text },
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let g = DualGraph {
            grid_n: wire.grid_n,
            label: wire.label,
            nodes,
            edges: wire.edges.into_iter().map(|e| Edge { a: e.a, b: e.b, kind: e.kind }).collect(),
        };
        g.validate().map_err(|e| Error::Schema(e.to_string()))?;
        Ok(g)
    }
}

fn encode_feature(values: &[f64]) -> String {
    values.iter().map(|v| format!("{:016x}", v.to_bits())).collect()
}

fn decode_feature(s: &str) -> Result<EmbeddingVector> {
    if s.is_empty() || !s.len().is_multiple_of(16) || !s.is_ascii() {
        return Err(Error::Schema(format!("feature string of length {} is not whole f64 words", s.len())));
    }
    let values = (0..s.len() / 16)
        .map(|i| {
            u64::from_str_radix(&s[i * 16..(i + 1) * 16], 16)
                .map(f64::from_bits)
                .map_err(|e| Error::Schema(format!("feature word {i}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingVector::new(values).map_err(|e| Error::Schema(e.to_string()))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireGraph {
    format: String,
    grid_n: usize,
    label: Option<u8>,
    nodes: Vec<WireNode>,
    edges: Vec<WireEdge>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum WireNode {
    Patch { label: String, feature: String },
    Word { record: usize, token: usize, text: String, feature: String },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireEdge {
    kind: EdgeKind,
    a: usize,
    b: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::ToyProvider;
    use crate::raster::{split_patches, RasterImage};
    use crate::textgraph::{build_text_graph, parse_explanations, DependencySource};
    use proptest::prelude::*;

    fn toy() -> ToyProvider {
        ToyProvider::new(11, 6, 4).unwrap()
    }

    fn image(side: usize) -> RasterImage {
        let data = (0..side * side * 3).map(|i| (i * 37 % 253) as u8).collect();
        RasterImage::new(side, side, data).unwrap()
    }

    fn image_graph(n: usize) -> DualGraph {
        build_image_graph(&split_patches(&image(2 * n), n).unwrap(), &toy()).unwrap()
    }

    fn text_graphs(text: &str, n: usize) -> Vec<TextGraph> {
        parse_explanations(text, n)
            .records
            .into_iter()
            .map(|r| {
                let (r, _) = DependencySource::Sequential.enrich(r).unwrap();
                build_text_graph(&r, &toy()).unwrap()
            })
            .collect()
    }

    #[test]
    fn image_graph_sizes() {
        for (n, edges) in [(1, 0), (2, 4), (4, 24)] {
            let g = image_graph(n);
            assert_eq!((g.node_count(), g.edges.len()), (n * n, edges));
            g.validate().unwrap();
        }
    }

    #[test]
    fn eight_adjacency_adds_diagonals() {
        let patches = split_patches(&image(6), 3).unwrap();
        let g = build_image_graph_with(&patches, &toy(), Adjacency::Eight).unwrap();
        assert_eq!(g.edges.len(), 2 * 3 * 2 + 2 * 4);
        assert!(g.edges.contains(&Edge::new(1, 3, EdgeKind::Adjacency)));
    }

    #[test]
    fn incomplete_grid_is_rejected() {
        let mut patches = split_patches(&image(4), 2).unwrap();
        patches.pop();
        assert!(build_image_graph(&patches, &toy()).is_err());
        let mut patches = split_patches(&image(4), 2).unwrap();
        patches[3] = patches[0].clone();
        assert!(build_image_graph(&patches, &toy()).is_err());
    }

    #[test]
    fn shuffled_patches_build_the_same_graph() {
        let mut patches = split_patches(&image(8), 4).unwrap();
        let g = build_image_graph(&patches, &toy()).unwrap();
        patches.reverse();
        assert_eq!(build_image_graph(&patches, &toy()).unwrap(), g);
    }

    #[test]
    fn integrate_without_text_is_identity() {
        let g = image_graph(3);
        assert_eq!(g.integrate(&[]).unwrap(), g);
    }

    #[test]
    fn integrate_counts() {
        let g = image_graph(4);
        let tgs = text_graphs("{A1,B2}: one two three", 4);
        let h = g.integrate(&tgs).unwrap();
        h.validate().unwrap();
        assert_eq!(h.node_count(), 16 + 3);
        assert_eq!(h.edge_count(EdgeKind::Dependency), 2);
        assert_eq!(h.edge_count(EdgeKind::Cross), 6);
        assert_eq!(h.edge_count(EdgeKind::Adjacency), 24);
    }

    #[test]
    fn unresolvable_anchor_is_an_error() {
        let mut tgs = text_graphs("{A1}: word", 4);
        tgs[0].anchor_labels = vec!["E1".into()];
        assert!(image_graph(4).integrate(&tgs).is_err());
    }

    #[test]
    fn repeated_integration_numbers_records_onward() {
        let g = image_graph(2);
        let once = g.integrate(&text_graphs("{A1}: a b", 2)).unwrap();
        let twice = once.integrate(&text_graphs("{B2}: c", 2)).unwrap();
        twice.validate().unwrap();
        assert!(matches!(twice.nodes.last().unwrap().origin, NodeOrigin::Word { record: 1, .. }));
    }

    #[test]
    fn validator_catches_bad_edges() {
        let g = image_graph(2).integrate(&text_graphs("{A1}: a b\n{B1}: c d", 2)).unwrap();
        g.validate().unwrap();
        let mut bad = g.clone();
        bad.edges.push(Edge::new(0, 4, EdgeKind::Adjacency));
        bad.edges.sort();
        assert!(bad.validate().is_err());
        let mut bad = g.clone();
        bad.edges.push(Edge::new(5, 6, EdgeKind::Dependency));
        bad.edges.sort();
        assert!(bad.validate().is_err());
        let mut bad = g;
        bad.edges.push(bad.edges[0]);
        bad.edges.sort();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn serialization_is_canonical_and_round_trips() {
        let g = image_graph(3).integrate(&text_graphs("{A1,C3}: Lighting is off.", 3)).unwrap().with_label(1);
        let bytes = g.serialize().unwrap();
        assert_eq!(bytes, g.clone().serialize().unwrap());
        assert_eq!(DualGraph::deserialize(&bytes).unwrap(), g);
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("{\"edges\":[{\"a\":0,\"b\":1,\"kind\":\"adjacency\"}"));
    }

    #[test]
    fn schema_and_version_errors() {
        let g = image_graph(2).integrate(&text_graphs("{A1}: a b", 2)).unwrap();
        let text = String::from_utf8(g.serialize().unwrap()).unwrap();
        let weird = text.replacen("\"kind\":\"dependency\"", "\"kind\":\"weird\"", 1);
        assert!(matches!(DualGraph::deserialize(weird.as_bytes()).unwrap_err(), Error::Schema(_)));
        let v2 = text.replace("vigtext-graph/1", "vigtext-graph/2");
        assert!(matches!(DualGraph::deserialize(v2.as_bytes()).unwrap_err(), Error::Version { .. }));
        assert!(DualGraph::deserialize(b"[]").is_err());
        let short = text.replacen("\"feature\":\"", "\"feature\":\"0", 1);
        assert!(matches!(DualGraph::deserialize(short.as_bytes()).unwrap_err(), Error::Schema(_)));
    }

    #[test]
    fn feature_hex_is_exact() {
        let values = [0.1, -0.0, f64::MIN_POSITIVE, 1e308, -3.5];
        let back = decode_feature(&encode_feature(&values)).unwrap();
        assert!(back.values().iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    fn brute_adjacent(n: usize) -> usize {
        let cells: Vec<(i64, i64)> = (0..n as i64).flat_map(|r| (0..n as i64).map(move |c| (r, c))).collect();
        let mut count = 0;
        for (i, a) in cells.iter().enumerate() {
            for b in &cells[i + 1..] {
                if (a.0 - b.0).abs() + (a.1 - b.1).abs() == 1 {
                    count += 1;
                }
            }
        }
        count
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn counts_match_enumeration(
            n in 1usize..=8,
            layout in prop::collection::vec((prop::collection::btree_set((0usize..8, 0usize..8), 1..4), 1usize..6), 0..5),
        ) {
            let lines: String = layout
                .iter()
                .map(|(cells, words)| {
                    let labels: Vec<String> = cells.iter().map(|&(r, c)| grid_label(r % n, c % n)).collect();
                    let sentence: Vec<String> = (0..*words).map(|w| format!("w{w}")).collect();
                    format!("{{{}}}: {}\n", labels.join(","), sentence.join(" "))
                })
                .collect();
            let tgs = text_graphs(&lines, n);
            let g = image_graph(n).integrate(&tgs).unwrap();
            g.validate().unwrap();
            let tokens: usize = tgs.iter().map(|t| t.tokens.len()).sum();
            let cross: usize = tgs.iter().map(|t| t.tokens.len() * t.anchor_labels.len()).sum();
            prop_assert_eq!(g.node_count(), n * n + tokens);
            prop_assert_eq!(g.edge_count(EdgeKind::Adjacency), 2 * n * (n - 1));
            prop_assert_eq!(g.edge_count(EdgeKind::Adjacency), brute_adjacent(n));
            prop_assert_eq!(g.edge_count(EdgeKind::Cross), cross);
            prop_assert_eq!(DualGraph::deserialize(&g.serialize().unwrap()).unwrap(), g);
        }
    }
}
