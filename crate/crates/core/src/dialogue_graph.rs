//! Windowed, speaker-aware dialogue graph and the two graph-convolution stages.
//!
//! Node `i` receives an edge from every `j` inside its window
//! `[i - p, i + f]` (clipped to the conversation), itself included. Layer one
//! is relational: each non-self edge is routed through a weight matrix chosen
//! by `(speaker(j), speaker(i), j > i)` and scaled by its attention weight,
//! while the node's own state goes through a separate self matrix. Layer two
//! is an unweighted convolution over the same topology.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Conversation;
use crate::error::{Error, Result};
use crate::numerics::{Init, Matrix, ParamDecl, ParamStore, RngStream, Tape, Var};

/// Lower bound applied to learned relation normalisers.
pub const NORM_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub p: usize,
    pub f: usize,
}

impl Default for Window {
    fn default() -> Self {
        Self { p: 10, f: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationNorm {
    /// one learnable positive scalar per relation
    #[default]
    Learned,
    /// the number of same-relation in-neighbours
    Count,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub window: Window,
    /// M; relation ids range over `2 M^2`
    pub max_speakers: usize,
    pub d_h1: usize,
    pub d_h2: usize,
    pub relation_norm: RelationNorm,
    pub drop_rate: f64,
    pub rescale: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            window: Window::default(),
            max_speakers: 2,
            d_h1: 16,
            d_h2: 16,
            relation_norm: RelationNorm::Learned,
            drop_rate: 0.1,
            rescale: true,
        }
    }
}

impl GraphConfig {
    pub fn n_relations(&self) -> usize {
        2 * self.max_speakers * self.max_speakers
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_speakers == 0 {
            return Err(Error::Config("max_speakers must be positive".into()));
        }
        if self.d_h1 == 0 || self.d_h2 == 0 {
            return Err(Error::Config("graph widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(Error::Config(format!("drop_rate must lie in [0, 1), got {}", self.drop_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub relation: Option<usize>,
    pub weight: Option<f64>,
}

/// Edges are stored sorted by destination, then source; node indices are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueGraph {
    pub n_nodes: usize,
    pub edges: Vec<Edge>,
    pub window: Window,
    pub speaker_of: Vec<usize>,
    pub n_speakers: usize,
}

pub fn build_graph(conv: &Conversation, window: Window) -> Result<DialogueGraph> {
    if conv.is_empty() {
        return Err(Error::Dataset(format!("conversation {} has no utterances", conv.id)));
    }
    let (speaker_of, n_speakers) = conv.speaker_indices();
    Ok(build_graph_for(speaker_of, n_speakers, window))
}

/// Graph over nodes with known local speaker ids.
pub fn build_graph_for(speaker_of: Vec<usize>, n_speakers: usize, window: Window) -> DialogueGraph {
    let n = speaker_of.len();
    let mut edges = Vec::new();
    for i in 0..n {
        let lo = i.saturating_sub(window.p);
        let hi = (i + window.f).min(n - 1);
        for j in lo..=hi {
            edges.push(Edge {
                src: j,
                dst: i,
                relation: None,
                weight: None,
            });
        }
    }
    DialogueGraph {
        n_nodes: n,
        edges,
        window,
        speaker_of,
        n_speakers,
    }
}

/// `(src speaker, dst speaker, j > i)` packed into one id below `2 M^2`.
pub fn relation_id(src_speaker: usize, dst_speaker: usize, future: bool, max_speakers: usize) -> usize {
    (src_speaker * max_speakers + dst_speaker) * 2 + usize::from(future)
}

impl DialogueGraph {
    pub fn assign_relations(&mut self, max_speakers: usize) -> Result<()> {
        if self.n_speakers > max_speakers {
            return Err(Error::Config(format!(
                "conversation has {} speakers but max_speakers is {max_speakers}",
                self.n_speakers
            )));
        }
        for e in &mut self.edges {
            e.relation = Some(relation_id(self.speaker_of[e.src], self.speaker_of[e.dst], e.src > e.dst, max_speakers));
        }
        Ok(())
    }

    /// `N x N` 0/1 matrix with `[i][j] = 1` for each edge `j -> i`.
    pub fn adjacency(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n_nodes, self.n_nodes);
        for e in &self.edges {
            m.set(e.dst, e.src, 1.0);
        }
        m
    }

    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.dst == i).map(|e| e.src).collect()
    }

    pub fn relation_count(&self) -> Result<usize> {
        let mut ids = Vec::new();
        for e in &self.edges {
            let r = e.relation.ok_or_else(|| Error::State("relations not assigned".into()))?;
            if !ids.contains(&r) {
                ids.push(r);
            }
        }
        Ok(ids.len())
    }

    /// Copies `alpha[i][j]` onto each edge `j -> i`.
    pub fn set_weights(&mut self, alpha: &Matrix) -> Result<()> {
        if alpha.shape() != (self.n_nodes, self.n_nodes) {
            return Err(Error::Shape(format!(
                "edge weights are {:?}, graph has {} nodes",
                alpha.shape(),
                self.n_nodes
            )));
        }
        for e in &mut self.edges {
            e.weight = Some(alpha.get(e.dst, e.src));
        }
        Ok(())
    }

    /// One line per edge: `src dst relation weight`, nodes 1-indexed, `-` for unset fields.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            let r = e.relation.map_or("-".to_string(), |r| r.to_string());
            let w = e.weight.map_or("-".to_string(), |w| format!("{w:.6}"));
            let _ = writeln!(out, "{} {} {r} {w}", e.src + 1, e.dst + 1);
        }
        out
    }
}

pub fn declare_params(d_g2: usize, cfg: &GraphConfig, out: &mut Vec<ParamDecl>) {
    out.push(ParamDecl::new("graph.w_e", d_g2, d_g2, Init::Xavier));
    for r in 0..cfg.n_relations() {
        out.push(ParamDecl::new(format!("graph.rgcn.rel{r}.w"), d_g2, cfg.d_h1, Init::Xavier));
        if cfg.relation_norm == RelationNorm::Learned {
            out.push(ParamDecl::new(format!("graph.rgcn.rel{r}.norm"), 1, 1, Init::Const(1.0)));
        }
    }
    out.push(ParamDecl::new("graph.rgcn.self.w", d_g2, cfg.d_h1, Init::Xavier));
    out.push(ParamDecl::new("graph.gcn.w", cfg.d_h1, cfg.d_h2, Init::Xavier));
    out.push(ParamDecl::new("graph.gcn.self.w", cfg.d_h1, cfg.d_h2, Init::Xavier));
}

/// Attention weights `alpha = masked_softmax(G W_e G^T)` over each node's window.
/// Writes the weights onto the graph and returns them as an `N x N` variable.
pub fn compute_edge_weights(tape: &mut Tape, store: &ParamStore, g: Var, graph: &mut DialogueGraph) -> Result<Var> {
    let w_e = tape.param(store, "graph.w_e")?;
    let (n, width) = tape.shape(g);
    if n != graph.n_nodes || width != tape.shape(w_e).0 {
        return Err(Error::Shape(format!(
            "context features {:?} do not fit a {}-node graph with W_e {:?}",
            (n, width),
            graph.n_nodes,
            tape.shape(w_e)
        )));
    }
    let gw = tape.matmul(g, w_e)?;
    let gt = tape.transpose(g);
    let scores = tape.matmul(gw, gt)?;
    let alpha = tape.masked_softmax_rows(scores, &graph.adjacency())?;
    graph.set_weights(tape.value(alpha))?;
    Ok(alpha)
}

/// Bernoulli keep flags for node messages and non-self edges.
#[derive(Debug, Clone, PartialEq)]
pub struct DropMask {
    pub node_keep: Vec<bool>,
    /// aligned with `graph.edges`; self-loops are always kept
    pub edge_keep: Vec<bool>,
    pub rate: f64,
    pub rescale: bool,
}

impl DropMask {
    pub fn keep_all(graph: &DialogueGraph) -> Self {
        Self {
            node_keep: vec![true; graph.n_nodes],
            edge_keep: vec![true; graph.edges.len()],
            rate: 0.0,
            rescale: false,
        }
    }

    pub fn draw(graph: &DialogueGraph, rate: f64, rescale: bool, rng: &mut RngStream, training: bool) -> Result<Self> {
        if !training {
            return Ok(Self::keep_all(graph));
        }
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("drop rate must lie in [0, 1) during training, got {rate}")));
        }
        if rate == 0.0 {
            return Ok(Self::keep_all(graph));
        }
        let node_keep = (0..graph.n_nodes).map(|_| !rng.bernoulli(rate)).collect();
        let edge_keep = graph
            .edges
            .iter()
            .map(|e| e.src == e.dst || !rng.bernoulli(rate))
            .collect();
        Ok(Self {
            node_keep,
            edge_keep,
            rate,
            rescale,
        })
    }

    fn kept_value(&self) -> f64 {
        if self.rescale {
            1.0 / (1.0 - self.rate)
        } else {
            1.0
        }
    }

    /// `N x width` multiplier that zeroes dropped node messages.
    pub fn node_factors(&self, width: usize) -> Matrix {
        let k = self.kept_value();
        let mut m = Matrix::zeros(self.node_keep.len(), width);
        for (i, &keep) in self.node_keep.iter().enumerate() {
            if keep {
                m.row_mut(i).fill(k);
            }
        }
        m
    }

    /// `N x N` edge multipliers `e~[i][j]` for edge `j -> i`; self-loops stay 1.
    pub fn edge_factors(&self, graph: &DialogueGraph) -> Matrix {
        let k = self.kept_value();
        let mut m = Matrix::zeros(graph.n_nodes, graph.n_nodes);
        for (e, &keep) in graph.edges.iter().zip(&self.edge_keep) {
            let v = if e.src == e.dst {
                1.0
            } else if keep {
                k
            } else {
                0.0
            };
            m.set(e.dst, e.src, v);
        }
        m
    }

    pub fn dropped_fraction(&self) -> f64 {
        let dropped = self.node_keep.iter().filter(|k| !**k).count();
        dropped as f64 / self.node_keep.len().max(1) as f64
    }
}

/// Applies the node mask to the context features.
pub fn drop_message(tape: &mut Tape, g: Var, mask: &DropMask) -> Result<Var> {
    let (n, width) = tape.shape(g);
    if n != mask.node_keep.len() {
        return Err(Error::Shape(format!("mask covers {} nodes, features have {n}", mask.node_keep.len())));
    }
    tape.mul_const(g, mask.node_factors(width))
}

/// Pre-activation of the relational layer:
/// `sum_r (alpha * e~ * M_r / c_r) (G~ W_r) + (alpha * I) (G~ W_0)`,
/// where `M_r` selects the non-self edges of relation `r`.
pub fn rgcn_aggregate(
    tape: &mut Tape,
    store: &ParamStore,
    g_tilde: Var,
    alpha: Var,
    mask: &DropMask,
    graph: &DialogueGraph,
    cfg: &GraphConfig,
) -> Result<Var> {
    let n = graph.n_nodes;
    if tape.shape(alpha) != (n, n) || tape.shape(g_tilde).0 != n {
        return Err(Error::Shape("rgcn inputs do not match the graph".into()));
    }
    if graph.edges.iter().any(|e| e.weight.is_none()) {
        return Err(Error::State("edge weights not computed".into()));
    }
    let edge_factor = mask.edge_factors(graph);
    let mut per_relation: Vec<Matrix> = vec![Matrix::zeros(n, n); cfg.n_relations()];
    let mut used = vec![false; cfg.n_relations()];
    for e in graph.edges.iter().filter(|e| e.src != e.dst) {
        let r = e.relation.ok_or_else(|| Error::State("relations not assigned".into()))?;
        if r >= per_relation.len() {
            return Err(Error::State(format!("relation {r} outside the configured {}", per_relation.len())));
        }
        per_relation[r].set(e.dst, e.src, edge_factor.get(e.dst, e.src));
        used[r] = true;
    }
    if cfg.relation_norm == RelationNorm::Count {
        // divide row i of M_r by |N_i^r|
        let mut counts = vec![vec![0usize; n]; cfg.n_relations()];
        for e in graph.edges.iter().filter(|e| e.src != e.dst) {
            counts[e.relation.unwrap_or(0)][e.dst] += 1;
        }
        for (r, m) in per_relation.iter_mut().enumerate() {
            for i in 0..n {
                if counts[r][i] > 0 {
                    let c = counts[r][i] as f64;
                    m.row_mut(i).iter_mut().for_each(|v| *v /= c);
                }
            }
        }
    }
    let mut terms = Vec::new();
    for (r, m) in per_relation.into_iter().enumerate() {
        if !used[r] {
            continue;
        }
        let mut a_r = tape.mul_const(alpha, m)?;
        if cfg.relation_norm == RelationNorm::Learned {
            let s = tape.param(store, &format!("graph.rgcn.rel{r}.norm"))?;
            let s = tape.clamp_min(s, NORM_FLOOR);
            let inv = tape.recip(s)?;
            a_r = tape.scalar_mul(a_r, inv)?;
        }
        let w = tape.param(store, &format!("graph.rgcn.rel{r}.w"))?;
        let msg = tape.matmul(g_tilde, w)?;
        terms.push(tape.matmul(a_r, msg)?);
    }
    let w0 = tape.param(store, "graph.rgcn.self.w")?;
    let diag = tape.mul_const(alpha, Matrix::identity(n))?;
    let own = tape.matmul(g_tilde, w0)?;
    let mut acc = tape.matmul(diag, own)?;
    for t in terms {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

pub fn rgcn_layer(
    tape: &mut Tape,
    store: &ParamStore,
    g_tilde: Var,
    alpha: Var,
    mask: &DropMask,
    graph: &DialogueGraph,
    cfg: &GraphConfig,
) -> Result<Var> {
    let pre = rgcn_aggregate(tape, store, g_tilde, alpha, mask, graph, cfg)?;
    Ok(tape.relu(pre))
}

/// `ReLU(A H1 W + H1 W_0)` with the 0/1 adjacency `A` of the windowed graph.
pub fn gcn_layer(tape: &mut Tape, store: &ParamStore, h1: Var, graph: &DialogueGraph) -> Result<Var> {
    if tape.shape(h1).0 != graph.n_nodes {
        return Err(Error::Shape(format!(
            "H1 has {} rows, graph has {} nodes",
            tape.shape(h1).0,
            graph.n_nodes
        )));
    }
    let w = tape.param(store, "graph.gcn.w")?;
    let w0 = tape.param(store, "graph.gcn.self.w")?;
    let adj = tape.constant(graph.adjacency());
    let neigh = tape.matmul(adj, h1)?;
    let neigh = tape.matmul(neigh, w)?;
    let own = tape.matmul(h1, w0)?;
    let sum = tape.add(neigh, own)?;
    Ok(tape.relu(sum))
}

/// Edge weights, DropMessage and both layers. Returns `H2` (`N x d_h2`).
pub fn graph_encode(
    tape: &mut Tape,
    store: &ParamStore,
    g: Var,
    graph: &mut DialogueGraph,
    mask: &DropMask,
    cfg: &GraphConfig,
) -> Result<Var> {
    let alpha = compute_edge_weights(tape, store, g, graph)?;
    let g_tilde = drop_message(tape, g, mask)?;
    let h1 = rgcn_layer(tape, store, g_tilde, alpha, mask, graph, cfg)?;
    gcn_layer(tape, store, h1, graph)
}
