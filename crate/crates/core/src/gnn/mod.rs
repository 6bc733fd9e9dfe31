//! Graph attention classifier with hand-written reverse mode.
//!
//! Architecture: `layers` x [GAT (multi-head, concatenated) -> batch norm ->
//! ReLU -> dropout], global mean pool over all nodes of each graph, then a
//! linear map to two logits (0 real, 1 fake).
//!
//! All trainable parameters live in one flat `Vec<f64>` so the optimizer and
//! gradient checks can treat them uniformly. Per layer the order is, for each
//! head, `W` (`hidden` x `in_dim`, row-major), `a_left`, `a_right`; then the
//! batch-norm `gamma` and `beta`. The output weight (2 x pooled, row-major)
//! and bias come last.

mod checkpoint;
mod optim;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dualgraph::DualGraph;
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use optim::{batch_loss, loss_ce, loss_ce_grad, Adam, LrSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub input_dim: usize,
    /// Output width of each head; a layer emits `heads * hidden` columns.
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
    pub negative_slope: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            input_dim: 64,
            hidden: 64,
            heads: 2,
            layers: 3,
            dropout: 0.2,
            negative_slope: 0.2,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl GnnConfig {
    pub fn width(&self) -> usize {
        self.heads * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.heads == 0 || self.layers == 0 {
            return Err(Error::InvalidArgument("GNN dimensions must all be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.bn_eps > 0.0 && (0.0..=1.0).contains(&self.bn_momentum)) {
            return Err(Error::InvalidArgument("batch-norm eps must be > 0 and momentum in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm, dropout mask drawn from `seed`.
    Train { seed: u64 },
    /// Running statistics, no dropout.
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
struct HeadSlots {
    w: usize,
    a_left: usize,
    a_right: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct LayerSlots {
    in_dim: usize,
    heads: Vec<HeadSlots>,
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    layers: Vec<LayerSlots>,
    out_w: usize,
    out_b: usize,
    len: usize,
}

impl Layout {
    fn new(cfg: &GnnConfig) -> Self {
        let (f, width) = (cfg.hidden, cfg.width());
        let mut at = 0;
        let mut take = |n: usize| {
            at += n;
            at - n
        };
        let layers = (0..cfg.layers)
            .map(|l| {
                let in_dim = if l == 0 { cfg.input_dim } else { width };
                let heads = (0..cfg.heads)
                    .map(|_| HeadSlots { w: take(f * in_dim), a_left: take(f), a_right: take(f) })
                    .collect();
                LayerSlots { in_dim, heads, gamma: take(width), beta: take(width) }
            })
            .collect();
        let out_w = take(2 * width);
        let out_b = take(2);
        Self { layers, out_w, out_b, len: at }
    }
}

fn mat(buf: &[f64], at: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), &buf[at..at + rows * cols]).expect("layout")
}

fn vec_view(buf: &[f64], at: usize, len: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&buf[at..at + len])
}

fn mat_mut(buf: &mut [f64], at: usize, rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), &mut buf[at..at + rows * cols]).expect("layout")
}

fn vec_mut(buf: &mut [f64], at: usize, len: usize) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut buf[at..at + len])
}

/// Batch-norm running statistics of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: GnnConfig,
    layout: Layout,
    params: Vec<f64>,
    running: Vec<RunningStats>,
}

/// Nodes of one or more graphs stacked block-diagonally, with neighbour
/// lists (self included) in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    x: Array2<f64>,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    segments: Vec<(usize, usize)>,
}

/// Node feature matrix of `g`, each row zero-padded to `input_dim`.
pub fn graph_features(g: &DualGraph, input_dim: usize) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((g.node_count(), input_dim));
    for (i, node) in g.nodes.iter().enumerate() {
        let v = node.feature.values();
        if v.len() > input_dim {
            return Err(Error::DimensionMismatch(format!(
                "node {i} has feature dim {}, model input is {input_dim}",
                v.len()
            )));
        }
        x.slice_mut(s![i, ..v.len()]).assign(&ArrayView1::from(v));
    }
    Ok(x)
}

impl GraphBatch {
    /// `edges` are undirected node-index pairs; `segments` are half-open node
    /// ranges, one per graph, covering all rows in order.
    pub fn new(x: Array2<f64>, edges: &[(usize, usize)], segments: Vec<(usize, usize)>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("cannot run the classifier on an empty graph".into()));
        }
        let mut at = 0;
        for &(a, b) in &segments {
            if a != at || b <= a {
                return Err(Error::InvalidArgument("graph segments must tile the node rows".into()));
            }
            at = b;
        }
        if at != n {
            return Err(Error::InvalidArgument("graph segments must tile the node rows".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite node feature".into()));
        }
        let mut adj: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::IndexOutOfRange(format!("edge ({a}, {b}) in a {n}-node batch")));
            }
            if a != b {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        let mut offsets = vec![0];
        let mut cols = Vec::new();
        for mut list in adj {
            list.sort_unstable();
            list.dedup();
            cols.extend(list);
            offsets.push(cols.len());
        }
        Ok(Self { x, offsets, cols, segments })
    }

    pub fn from_graph(g: &DualGraph, input_dim: usize) -> Result<Self> {
        Self::from_graphs(&[g], input_dim)
    }

    pub fn from_graphs(graphs: &[&DualGraph], input_dim: usize) -> Result<Self> {
        let total: usize = graphs.iter().map(|g| g.node_count()).sum();
        let mut x = Array2::zeros((total, input_dim));
        let mut edges = Vec::new();
        let mut segments = Vec::new();
        let mut base = 0;
        for g in graphs {
            let n = g.node_count();
            if n == 0 {
                return Err(Error::InvalidArgument("cannot run the classifier on an empty graph".into()));
            }
            x.slice_mut(s![base..base + n, ..]).assign(&graph_features(g, input_dim)?);
            edges.extend(g.edges.iter().map(|e| (base + e.a, base + e.b)));
            segments.push((base, base + n));
            base += n;
        }
        Self::new(x, &edges, segments)
    }

    /// Same structure with different node features.
    pub fn with_features(&self, x: Array2<f64>) -> Result<Self> {
        if x.dim() != self.x.dim() {
            return Err(Error::DimensionMismatch(format!("features {:?} vs batch {:?}", x.dim(), self.x.dim())));
        }
        Ok(Self { x, ..self.clone() })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn node_count(&self) -> usize {
        self.x.nrows()
    }

    pub fn graph_count(&self) -> usize {
        self.segments.len()
    }

    /// Neighbours of `i`, itself included, ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.cols[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// Standalone parameters of one attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct GatHead {
    /// `out` x `in`.
    pub w: Array2<f64>,
    pub a_left: Array1<f64>,
    pub a_right: Array1<f64>,
}

struct HeadView<'a> {
    w: ArrayView2<'a, f64>,
    a_left: ArrayView1<'a, f64>,
    a_right: ArrayView1<'a, f64>,
}

struct GatOut {
    z: Vec<Array2<f64>>,
    /// Per head, aligned with the batch CSR columns.
    pre: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
    h: Array2<f64>,
}

fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

fn gat_forward(x: &Array2<f64>, batch: &GraphBatch, heads: &[HeadView<'_>], slope: f64) -> GatOut {
    let n = x.nrows();
    let f = heads[0].w.nrows();
    let mut h = Array2::zeros((n, f * heads.len()));
    let mut out = GatOut { z: Vec::new(), pre: Vec::new(), alpha: Vec::new(), h: Array2::zeros((0, 0)) };
    for (k, head) in heads.iter().enumerate() {
        let z = x.dot(&head.w.t());
        let sl = z.dot(&head.a_left);
        let tr = z.dot(&head.a_right);
        let mut pre = vec![0.0; batch.cols.len()];
        let mut alpha = vec![0.0; batch.cols.len()];
        let mut block = h.slice_mut(s![.., k * f..(k + 1) * f]);
        for i in 0..n {
            let range = batch.offsets[i]..batch.offsets[i + 1];
            let mut max = f64::NEG_INFINITY;
            for p in range.clone() {
                pre[p] = sl[i] + tr[batch.cols[p]];
                max = max.max(leaky(pre[p], slope));
            }
            let mut sum = 0.0;
            for p in range.clone() {
                alpha[p] = (leaky(pre[p], slope) - max).exp();
                sum += alpha[p];
            }
            let mut row = block.row_mut(i);
            for p in range {
                alpha[p] /= sum;
                row.scaled_add(alpha[p], &z.row(batch.cols[p]));
            }
        }
        out.z.push(z);
        out.pre.push(pre);
        out.alpha.push(alpha);
    }
    out.h = h;
    out
}

/// Multi-head attention layer on its own: heads concatenated, self-loops
/// added to every node.
pub fn gat_layer(x: &Array2<f64>, edges: &[(usize, usize)], heads: &[GatHead], slope: f64) -> Result<Array2<f64>> {
    let Some(first) = heads.first() else {
        return Err(Error::InvalidArgument("attention layer needs at least one head".into()));
    };
    for hd in heads {
        if hd.w.ncols() != x.ncols() || hd.w.nrows() != first.w.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "head weight {:?} for input width {}",
                hd.w.dim(),
                x.ncols()
            )));
        }
        if hd.a_left.len() != hd.w.nrows() || hd.a_right.len() != hd.w.nrows() {
            return Err(Error::DimensionMismatch("attention vector length differs from head width".into()));
        }
    }
    let batch = GraphBatch::new(x.clone(), edges, vec![(0, x.nrows())])?;
    let views: Vec<HeadView<'_>> = heads
        .iter()
        .map(|hd| HeadView { w: hd.w.view(), a_left: hd.a_left.view(), a_right: hd.a_right.view() })
        .collect();
    Ok(gat_forward(x, &batch, &views, slope).h)
}

struct LayerCache {
    input: Array2<f64>,
    gat: GatOut,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    y: Array2<f64>,
    mask: Option<Array2<f64>>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
}

/// Result of a forward pass, kept for the matching backward pass.
pub struct Forward {
    /// One `[real, fake]` logit pair per graph in the batch.
    pub logits: Vec<[f64; 2]>,
    layers: Vec<LayerCache>,
    pooled: Array2<f64>,
    training: bool,
    nodes: usize,
}

impl Forward {
    /// Row sums of every attention matrix (one per head per layer per node).
    pub fn attention_row_sums(&self, batch: &GraphBatch) -> Vec<f64> {
        let mut sums = Vec::new();
        for layer in &self.layers {
            for alpha in &layer.gat.alpha {
                for i in 0..batch.node_count() {
                    sums.push(alpha[batch.offsets[i]..batch.offsets[i + 1]].iter().sum());
                }
            }
        }
        sums
    }

    /// Smallest distance of any ReLU or LeakyReLU input from its kink.
    pub fn kink_margin(&self) -> f64 {
        let mut m = f64::INFINITY;
        for layer in &self.layers {
            for pre in &layer.gat.pre {
                m = pre.iter().fold(m, |acc, v| acc.min(v.abs()));
            }
            m = layer.y.iter().fold(m, |acc, v| acc.min(v.abs()));
        }
        m
    }
}

pub struct Gradients {
    /// Same layout as [`Model::params`].
    pub params: Vec<f64>,
    /// Gradient with respect to the (padded) node features.
    pub input: Array2<f64>,
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, out: &mut [f64]) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in out {
        *v = rng.gen_range(-limit..limit);
    }
}

impl Model {
    /// Xavier-uniform weights from a seeded stream; unit `gamma`, zero
    /// `beta` and biases; running mean 0 and variance 1.
    pub fn new(config: GnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f, width) = (config.hidden, config.width());
        for ls in &layout.layers {
            for hs in &ls.heads {
                xavier(&mut rng, ls.in_dim, f, &mut params[hs.w..hs.w + f * ls.in_dim]);
                xavier(&mut rng, 2 * f, 1, &mut params[hs.a_left..hs.a_left + f]);
                xavier(&mut rng, 2 * f, 1, &mut params[hs.a_right..hs.a_right + f]);
            }
            params[ls.gamma..ls.gamma + width].fill(1.0);
        }
        xavier(&mut rng, width, 2, &mut params[layout.out_w..layout.out_w + 2 * width]);
        let running = (0..config.layers)
            .map(|_| RunningStats { mean: vec![0.0; width], var: vec![1.0; width] })
            .collect();
        Ok(Self { config, layout, params, running })
    }

    pub fn from_parts(config: GnnConfig, params: Vec<f64>, running: Vec<RunningStats>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.len {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a model that needs {}",
                params.len(),
                layout.len
            )));
        }
        let width = config.width();
        if running.len() != config.layers || running.iter().any(|r| r.mean.len() != width || r.var.len() != width) {
            return Err(Error::DimensionMismatch("running statistics do not match the layer widths".into()));
        }
        Ok(Self { config, layout, params, running })
    }

    pub fn config(&self) -> &GnnConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn running(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn param_count(&self) -> usize {
        self.layout.len
    }

    fn heads(&self, layer: usize) -> Vec<HeadView<'_>> {
        let ls = &self.layout.layers[layer];
        let f = self.config.hidden;
        ls.heads
            .iter()
            .map(|hs| HeadView {
                w: mat(&self.params, hs.w, f, ls.in_dim),
                a_left: vec_view(&self.params, hs.a_left, f),
                a_right: vec_view(&self.params, hs.a_right, f),
            })
            .collect()
    }

    pub fn forward(&self, batch: &GraphBatch, mode: Mode) -> Result<Forward> {
        if batch.x.ncols() != self.config.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "batch features have {} columns, model expects {}",
                batch.x.ncols(),
                self.config.input_dim
            )));
        }
        let cfg = &self.config;
        let width = cfg.width();
        let n = batch.node_count();
        let mut rng = match mode {
            Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Mode::Infer => None,
        };
        let mut x = batch.x.clone();
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let ls = &self.layout.layers[l];
            let gat = gat_forward(&x, batch, &self.heads(l), cfg.negative_slope);
            let (batch_mean, batch_var) = if rng.is_some() {
                let mean = gat.h.mean_axis(Axis(0)).expect("nonempty");
                let var = (&gat.h - &mean).mapv(|v| v * v).mean_axis(Axis(0)).expect("nonempty");
                (mean, var)
            } else {
                (Array1::from(self.running[l].mean.clone()), Array1::from(self.running[l].var.clone()))
            };
            let inv_std = batch_var.mapv(|v| 1.0 / (v + cfg.bn_eps).sqrt());
            let xhat = (&gat.h - &batch_mean) * &inv_std;
            let gamma = vec_view(&self.params, ls.gamma, width);
            let beta = vec_view(&self.params, ls.beta, width);
            let y = &xhat * &gamma + beta;
            let mut out = y.mapv(|v| v.max(0.0));
            let mask = match rng.as_mut() {
                Some(r) if cfg.dropout > 0.0 => {
                    let keep = 1.0 / (1.0 - cfg.dropout);
                    let m = Array2::from_shape_fn((n, width), |_| if r.gen::<f64>() >= cfg.dropout { keep } else { 0.0 });
                    out *= &m;
                    Some(m)
                }
                _ => None,
            };
            layers.push(LayerCache { input: x, gat, xhat, inv_std, y, mask, batch_mean, batch_var });
            x = out;
        }
        let mut pooled = Array2::zeros((batch.graph_count(), width));
        for (g, &(a, b)) in batch.segments.iter().enumerate() {
            pooled.row_mut(g).assign(&x.slice(s![a..b, ..]).mean_axis(Axis(0)).expect("nonempty"));
        }
        let w_out = mat(&self.params, self.layout.out_w, 2, width);
        let b_out = vec_view(&self.params, self.layout.out_b, 2);
        let z = pooled.dot(&w_out.t()) + b_out;
        let logits: Vec<[f64; 2]> = z.rows().into_iter().map(|r| [r[0], r[1]]).collect();
        if logits.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("classifier produced non-finite logits".into()));
        }
        Ok(Forward { logits, layers, pooled, training: rng.is_some(), nodes: n })
    }

    /// Inference-mode logits of one graph.
    pub fn predict(&self, g: &DualGraph) -> Result<[f64; 2]> {
        let batch = GraphBatch::from_graph(g, self.config.input_dim)?;
        Ok(self.forward(&batch, Mode::Infer)?.logits[0])
    }

    /// Reverse pass for upstream logit gradients `dlogits` (one per graph).
    pub fn backward(&self, batch: &GraphBatch, fwd: &Forward, dlogits: &[[f64; 2]]) -> Result<Gradients> {
        if fwd.nodes != batch.node_count() || dlogits.len() != batch.graph_count() || fwd.layers.len() != self.config.layers
        {
            return Err(Error::InvalidArgument("backward called with a cache from a different batch".into()));
        }
        let cfg = &self.config;
        let (f, width) = (cfg.hidden, cfg.width());
        let n = batch.node_count();
        let mut grad = vec![0.0; self.layout.len];

        let dz = Array2::from_shape_fn((dlogits.len(), 2), |(g, c)| dlogits[g][c]);
        mat_mut(&mut grad, self.layout.out_w, 2, width).assign(&dz.t().dot(&fwd.pooled));
        vec_mut(&mut grad, self.layout.out_b, 2).assign(&dz.sum_axis(Axis(0)));
        let dpooled = dz.dot(&mat(&self.params, self.layout.out_w, 2, width));
        let mut dout = Array2::zeros((n, width));
        for (g, &(a, b)) in batch.segments.iter().enumerate() {
            let share = &dpooled.row(g) / (b - a) as f64;
            for i in a..b {
                dout.row_mut(i).assign(&share);
            }
        }

        for l in (0..cfg.layers).rev() {
            let ls = &self.layout.layers[l];
            let c = &fwd.layers[l];
            let mut dy = match &c.mask {
                Some(m) => dout * m,
                None => dout,
            };
            dy.zip_mut_with(&c.y, |d, &y| {
                if y <= 0.0 {
                    *d = 0.0
                }
            });
            vec_mut(&mut grad, ls.gamma, width).assign(&(&dy * &c.xhat).sum_axis(Axis(0)));
            vec_mut(&mut grad, ls.beta, width).assign(&dy.sum_axis(Axis(0)));
            let dxhat = &dy * &vec_view(&self.params, ls.gamma, width);
            let dh = if fwd.training {
                let nf = n as f64;
                let sum = dxhat.sum_axis(Axis(0));
                let dot = (&dxhat * &c.xhat).sum_axis(Axis(0));
                ((&dxhat * nf - &sum) - &c.xhat * &dot) * &(&c.inv_std / nf)
            } else {
                &dxhat * &c.inv_std
            };

            let mut dx = Array2::zeros(c.input.dim());
            for (k, hs) in ls.heads.iter().enumerate() {
                let z = &c.gat.z[k];
                let (pre, alpha) = (&c.gat.pre[k], &c.gat.alpha[k]);
                let dho = dh.slice(s![.., k * f..(k + 1) * f]);
                let mut dzh = Array2::zeros((n, f));
                let mut ds = Array1::zeros(n);
                let mut dt = Array1::zeros(n);
                let mut dalpha = Vec::new();
                for i in 0..n {
                    let range = batch.offsets[i]..batch.offsets[i + 1];
                    dalpha.clear();
                    let mut weighted = 0.0;
                    for p in range.clone() {
                        let j = batch.cols[p];
                        let da = dho.row(i).dot(&z.row(j));
                        weighted += alpha[p] * da;
                        dalpha.push(da);
                        dzh.row_mut(j).scaled_add(alpha[p], &dho.row(i));
                    }
                    for (q, p) in range.enumerate() {
                        let de = alpha[p] * (dalpha[q] - weighted);
                        let dpre = if pre[p] > 0.0 { de } else { cfg.negative_slope * de };
                        ds[i] += dpre;
                        dt[batch.cols[p]] += dpre;
                    }
                }
                vec_mut(&mut grad, hs.a_left, f).assign(&z.t().dot(&ds));
                vec_mut(&mut grad, hs.a_right, f).assign(&z.t().dot(&dt));
                let a_left = vec_view(&self.params, hs.a_left, f);
                let a_right = vec_view(&self.params, hs.a_right, f);
                for i in 0..n {
                    let mut row = dzh.row_mut(i);
                    row.scaled_add(ds[i], &a_left);
                    row.scaled_add(dt[i], &a_right);
                }
                mat_mut(&mut grad, hs.w, f, ls.in_dim).assign(&dzh.t().dot(&c.input));
                dx += &dzh.dot(&mat(&self.params, hs.w, f, ls.in_dim));
            }
            dout = dx;
        }
        Ok(Gradients { params: grad, input: dout })
    }

    /// Folds the batch statistics of a training-mode forward pass into the
    /// running estimates (unbiased variance).
    pub fn update_running_stats(&mut self, fwd: &Forward) {
        if !fwd.training {
            return;
        }
        let m = self.config.bn_momentum;
        let n = fwd.nodes as f64;
        let correction = if fwd.nodes > 1 { n / (n - 1.0) } else { 1.0 };
        for (rs, c) in self.running.iter_mut().zip(&fwd.layers) {
            for (r, b) in rs.mean.iter_mut().zip(&c.batch_mean) {
                *r = (1.0 - m) * *r + m * b;
            }
            for (r, b) in rs.var.iter_mut().zip(&c.batch_var) {
                *r = (1.0 - m) * *r + m * b * correction;
            }
        }
    }
}
