//! Cross-modal alignment: per-modality projections, co-attention transformer
//! blocks over the three modality pairs, and the fused per-utterance feature.
//!
//! Attention runs over the utterance axis of one conversation. There is no
//! positional encoding; order is picked up later by the BiGRU.

use serde::{Deserialize, Serialize};

use crate::data::{Conversation, Modality, ModalityDims};
use crate::error::{Error, Result};
use crate::numerics::{Init, Matrix, ParamDecl, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CamConfig {
    pub d_model: usize,
    /// attention heads
    pub h: usize,
    /// per-head width
    pub d_h: usize,
    /// stacked co-attention blocks per pair
    #[serde(rename = "T")]
    pub t: usize,
    /// FFN hidden width; `None` means `4 * d_model`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_ff: Option<usize>,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
    pub dims_in: ModalityDims,
}

fn default_ln_eps() -> f64 {
    1e-5
}

impl Default for CamConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl CamConfig {
    pub fn desk() -> Self {
        Self {
            d_model: 16,
            h: 2,
            d_h: 8,
            t: 2,
            d_ff: None,
            ln_eps: default_ln_eps(),
            dims_in: ModalityDims::default(),
        }
    }

    pub fn paper() -> Self {
        Self {
            d_model: 512,
            h: 8,
            d_h: 64,
            ..Self::desk()
        }
    }

    pub fn ffn_width(&self) -> usize {
        self.d_ff.unwrap_or(4 * self.d_model)
    }

    /// Width of the fused feature: six cross-modal blocks plus the raw inputs.
    pub fn fused_width(&self) -> usize {
        6 * self.d_model + self.dims_in.total()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.h == 0 || self.d_h == 0 {
            return Err(Error::Config("d_model, h and d_h must be positive".into()));
        }
        if self.d_model != self.h * self.d_h {
            return Err(Error::Config(format!(
                "d_model ({}) must equal h * d_h ({} * {})",
                self.d_model, self.h, self.d_h
            )));
        }
        if self.t == 0 {
            return Err(Error::Config("co-attention transformer needs at least one block (T >= 1)".into()));
        }
        if self.dims_in.as_array().contains(&0) {
            return Err(Error::Config("dims_in must be positive".into()));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config(format!("ln_eps must be positive, got {}", self.ln_eps)));
        }
        Ok(())
    }
}

/// Modality pairs in fused-feature order; the first member is the left-side query.
pub const PAIRS: [(Modality, Modality); 3] = [
    (Modality::Text, Modality::Audio),
    (Modality::Visual, Modality::Audio),
    (Modality::Text, Modality::Visual),
];

pub fn pair_name(pair: (Modality, Modality)) -> String {
    format!("{}{}", pair.0.letter(), pair.1.letter()).to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

pub fn block_prefix(pair: &str, block: usize, side: Side) -> String {
    format!("cam.{pair}.block{block}.{}", side.name())
}

/// Parameters of one side of a co-attention block under `prefix`.
pub fn declare_block_side(cfg: &CamConfig, prefix: &str, out: &mut Vec<ParamDecl>) {
    let d = cfg.d_model;
    for i in 0..cfg.h {
        for w in ["wq", "wk", "wv"] {
            out.push(ParamDecl::new(format!("{prefix}.head{i}.{w}"), d, cfg.d_h, Init::Xavier));
        }
    }
    out.push(ParamDecl::new(format!("{prefix}.wo"), cfg.h * cfg.d_h, d, Init::Xavier));
    let ff = cfg.ffn_width();
    out.push(ParamDecl::new(format!("{prefix}.ffn.w1"), d, ff, Init::Xavier));
    out.push(ParamDecl::new(format!("{prefix}.ffn.b1"), 1, ff, Init::Zeros));
    out.push(ParamDecl::new(format!("{prefix}.ffn.w2"), ff, d, Init::Xavier));
    out.push(ParamDecl::new(format!("{prefix}.ffn.b2"), 1, d, Init::Zeros));
    for ln in ["ln1", "ln2"] {
        out.push(ParamDecl::new(format!("{prefix}.{ln}.gain"), 1, d, Init::Const(1.0)));
        out.push(ParamDecl::new(format!("{prefix}.{ln}.bias"), 1, d, Init::Zeros));
    }
}

pub fn declare_projection(cfg: &CamConfig, out: &mut Vec<ParamDecl>) {
    for m in Modality::ALL {
        let din = cfg.dims_in.as_array()[m.index()];
        out.push(ParamDecl::new(format!("cam.proj.{}.w", m.name()), din, cfg.d_model, Init::Xavier));
        out.push(ParamDecl::new(format!("cam.proj.{}.b", m.name()), 1, cfg.d_model, Init::Zeros));
    }
}

/// Projection plus every co-attention block of all three pairs.
pub fn declare_params(cfg: &CamConfig, out: &mut Vec<ParamDecl>) {
    declare_projection(cfg, out);
    for pair in PAIRS {
        let name = pair_name(pair);
        for t in 0..cfg.t {
            for side in [Side::Left, Side::Right] {
                declare_block_side(cfg, &block_prefix(&name, t, side), out);
            }
        }
    }
}

/// Projected `N x d_model` streams and the untouched raw features, indexed by
/// [`Modality::index`].
#[derive(Debug, Clone, Copy)]
pub struct ModalityStreams {
    pub projected: [Var; 3],
    pub raw: [Var; 3],
}

/// Raw features of `conv` for one modality as an `N x dim` matrix.
pub fn raw_features(conv: &Conversation, m: Modality) -> Result<Matrix> {
    let rows: Vec<&[f64]> = conv.utterances.iter().map(|u| u.modality(m)).collect();
    Matrix::from_rows(&rows)
}

/// Maps each modality into `d_model` with its own affine layer. Modalities with
/// `active[m] == false` are replaced by zeros in both the projected and raw views.
pub fn project_modalities(
    tape: &mut Tape,
    store: &ParamStore,
    conv: &Conversation,
    cfg: &CamConfig,
    active: [bool; 3],
) -> Result<ModalityStreams> {
    if conv.is_empty() {
        return Err(Error::Dataset(format!("conversation {} has no utterances", conv.id)));
    }
    let n = conv.len();
    let mut projected = Vec::with_capacity(3);
    let mut raw = Vec::with_capacity(3);
    for m in Modality::ALL {
        let din = cfg.dims_in.as_array()[m.index()];
        let x = raw_features(conv, m)?;
        if x.cols() != din {
            return Err(Error::Config(format!(
                "{} features are {} wide, config expects {din}",
                m.name(),
                x.cols()
            )));
        }
        if !active[m.index()] {
            projected.push(tape.constant(Matrix::zeros(n, cfg.d_model)));
            raw.push(tape.constant(Matrix::zeros(n, din)));
            continue;
        }
        let xv = tape.constant(x);
        let w = tape.param(store, &format!("cam.proj.{}.w", m.name()))?;
        let b = tape.param(store, &format!("cam.proj.{}.b", m.name()))?;
        let xw = tape.matmul(xv, w)?;
        projected.push(tape.add_bias(xw, b)?);
        raw.push(xv);
    }
    Ok(ModalityStreams {
        projected: [projected[0], projected[1], projected[2]],
        raw: [raw[0], raw[1], raw[2]],
    })
}

/// Multi-head attention with `query` rows attending over `kv` rows, using the
/// parameters of one block side. Returns the output and each head's
/// row-stochastic attention matrix.
pub fn cross_attention_with_weights(
    tape: &mut Tape,
    store: &ParamStore,
    query: Var,
    kv: Var,
    prefix: &str,
    cfg: &CamConfig,
) -> Result<(Var, Vec<Var>)> {
    let (nq, dq) = tape.shape(query);
    let (nk, dk) = tape.shape(kv);
    if dq != cfg.d_model || dk != cfg.d_model {
        return Err(Error::Dimension {
            op: "cross_attention",
            left: (nq, dq),
            right: (nk, dk),
        });
    }
    let scale = 1.0 / (cfg.d_h as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.h);
    let mut weights = Vec::with_capacity(cfg.h);
    for i in 0..cfg.h {
        let wq = tape.param(store, &format!("{prefix}.head{i}.wq"))?;
        let wk = tape.param(store, &format!("{prefix}.head{i}.wk"))?;
        let wv = tape.param(store, &format!("{prefix}.head{i}.wv"))?;
        let q = tape.matmul(query, wq)?;
        let k = tape.matmul(kv, wk)?;
        let v = tape.matmul(kv, wv)?;
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, scale);
        let att = tape.softmax_rows(scores)?;
        heads.push(tape.matmul(att, v)?);
        weights.push(att);
    }
    let cat = tape.concat_cols(&heads)?;
    let wo = tape.param(store, &format!("{prefix}.wo"))?;
    Ok((tape.matmul(cat, wo)?, weights))
}

pub fn cross_attention(
    tape: &mut Tape,
    store: &ParamStore,
    query: Var,
    kv: Var,
    prefix: &str,
    cfg: &CamConfig,
) -> Result<Var> {
    Ok(cross_attention_with_weights(tape, store, query, kv, prefix, cfg)?.0)
}

/// `y = LN(x_q + attn(x_q, x_kv))`, then `LN(y + FFN(y))` with a ReLU after each
/// FFN layer.
pub fn ct_block(
    tape: &mut Tape,
    store: &ParamStore,
    x_q: Var,
    x_kv: Var,
    prefix: &str,
    cfg: &CamConfig,
) -> Result<Var> {
    let att = cross_attention(tape, store, x_q, x_kv, prefix, cfg)?;
    let res = tape.add(x_q, att)?;
    let g1 = tape.param(store, &format!("{prefix}.ln1.gain"))?;
    let b1 = tape.param(store, &format!("{prefix}.ln1.bias"))?;
    let y = tape.layer_norm(res, g1, b1, cfg.ln_eps)?;

    let w1 = tape.param(store, &format!("{prefix}.ffn.w1"))?;
    let fb1 = tape.param(store, &format!("{prefix}.ffn.b1"))?;
    let w2 = tape.param(store, &format!("{prefix}.ffn.w2"))?;
    let fb2 = tape.param(store, &format!("{prefix}.ffn.b2"))?;
    let hidden = tape.matmul(y, w1)?;
    let hidden = tape.add_bias(hidden, fb1)?;
    let hidden = tape.relu(hidden);
    let ff = tape.matmul(hidden, w2)?;
    let ff = tape.add_bias(ff, fb2)?;
    let ff = tape.relu(ff);

    let res = tape.add(y, ff)?;
    let g2 = tape.param(store, &format!("{prefix}.ln2.gain"))?;
    let b2 = tape.param(store, &format!("{prefix}.ln2.bias"))?;
    tape.layer_norm(res, g2, b2, cfg.ln_eps)
}

/// Runs the `T` stacked blocks of pair `pair`. At each depth the left side
/// queries with `a` against `b`, the right side with `b` against `a`, and both
/// outputs feed the next depth. Returns `(E^{a-b}, E^{b-a})`.
pub fn co_attention_transformer(
    tape: &mut Tape,
    store: &ParamStore,
    a: Var,
    b: Var,
    pair: &str,
    cfg: &CamConfig,
) -> Result<(Var, Var)> {
    if cfg.t == 0 {
        return Err(Error::Config("co-attention transformer needs at least one block (T >= 1)".into()));
    }
    let (mut left, mut right) = (a, b);
    for t in 0..cfg.t {
        let l = ct_block(tape, store, left, right, &block_prefix(pair, t, Side::Left), cfg)?;
        let r = ct_block(tape, store, right, left, &block_prefix(pair, t, Side::Right), cfg)?;
        left = l;
        right = r;
    }
    Ok((left, right))
}

/// `F = [E^{T-A}, E^{A-T}, E^{V-A}, E^{A-V}, E^{T-V}, E^{V-T}, U^T, U^A, U^V]`.
///
/// A pair touching an inactive modality contributes zero blocks.
pub fn fuse_features(
    tape: &mut Tape,
    store: &ParamStore,
    streams: &ModalityStreams,
    cfg: &CamConfig,
    active: [bool; 3],
) -> Result<Var> {
    let n = tape.shape(streams.projected[0]).0;
    for v in streams.projected.iter().chain(&streams.raw) {
        if tape.shape(*v).0 != n {
            return Err(Error::Shape("modality streams disagree on utterance count".into()));
        }
    }
    let mut parts = Vec::with_capacity(9);
    for pair in PAIRS {
        let (a, b) = (pair.0.index(), pair.1.index());
        if active[a] && active[b] {
            let (ea, eb) = co_attention_transformer(
                tape,
                store,
                streams.projected[a],
                streams.projected[b],
                &pair_name(pair),
                cfg,
            )?;
            parts.push(ea);
            parts.push(eb);
        } else {
            let z = tape.constant(Matrix::zeros(n, cfg.d_model));
            parts.push(z);
            parts.push(z);
        }
    }
    parts.extend_from_slice(&streams.raw);
    let fused = tape.concat_cols(&parts)?;
    debug_assert_eq!(tape.shape(fused).1, cfg.fused_width());
    Ok(fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Utterance;
    use crate::numerics::{grad_check, init_params, RngStream, Purpose};

    fn small_cfg() -> CamConfig {
        CamConfig {
            d_model: 8,
            h: 2,
            d_h: 4,
            t: 1,
            d_ff: None,
            ln_eps: 1e-5,
            dims_in: ModalityDims {
                text: 5,
                audio: 3,
                visual: 4,
            },
        }
    }

    fn conversation(n: usize, dims: ModalityDims, seed: u64) -> Conversation {
        let mut rng = RngStream::new(Purpose::DataGen, seed);
        let mut v = |d: usize| (0..d).map(|_| rng.normal()).collect::<Vec<f64>>();
        Conversation {
            id: "c".into(),
            utterances: (0..n)
                .map(|i| Utterance {
                    speaker: format!("s{}", i % 2),
                    label: "happy".into(),
                    text: v(dims.text),
                    audio: v(dims.audio),
                    visual: v(dims.visual),
                })
                .collect(),
        }
    }

    fn params(cfg: &CamConfig, seed: u64) -> ParamStore {
        let mut decls = Vec::new();
        declare_params(cfg, &mut decls);
        init_params(&decls, seed).unwrap()
    }

    fn random(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn fused_width_arithmetic() {
        assert_eq!(CamConfig::paper().fused_width(), 3472);
        assert_eq!(CamConfig::desk().fused_width(), 496);
        assert!(CamConfig::paper().validate().is_ok());
        let bad = CamConfig { d_h: 5, ..CamConfig::desk() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = CamConfig { t: 0, ..CamConfig::desk() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_projection_gives_zero_streams() {
        let cfg = small_cfg();
        let mut store = params(&cfg, 1);
        for m in Modality::ALL {
            store.get_mut(&format!("cam.proj.{}.w", m.name())).unwrap().value.data_mut().fill(0.0);
        }
        let conv = conversation(3, cfg.dims_in, 2);
        let mut tape = Tape::new();
        let s = project_modalities(&mut tape, &store, &conv, &cfg, [true; 3]).unwrap();
        for p in s.projected {
            assert_eq!(tape.value(p).max_abs(), 0.0);
        }
    }

    #[test]
    fn identity_projection_returns_prefix() {
        let cfg = CamConfig {
            dims_in: ModalityDims {
                text: 10,
                audio: 8,
                visual: 9,
            },
            ..small_cfg()
        };
        let mut store = params(&cfg, 1);
        for m in Modality::ALL {
            let w = &mut store.get_mut(&format!("cam.proj.{}.w", m.name())).unwrap().value;
            w.data_mut().fill(0.0);
            for k in 0..cfg.d_model {
                w.set(k, k, 1.0);
            }
        }
        let conv = conversation(1, cfg.dims_in, 5);
        let mut tape = Tape::new();
        let s = project_modalities(&mut tape, &store, &conv, &cfg, [true; 3]).unwrap();
        for m in Modality::ALL {
            let out = tape.value(s.projected[m.index()]).row(0);
            assert_eq!(out, &conv.utterances[0].modality(m)[..cfg.d_model]);
        }
    }

    #[test]
    fn width_mismatch_is_config_error() {
        let cfg = small_cfg();
        let store = params(&cfg, 1);
        let conv = conversation(2, ModalityDims { text: 6, audio: 3, visual: 4 }, 1);
        let mut tape = Tape::new();
        assert!(matches!(
            project_modalities(&mut tape, &store, &conv, &cfg, [true; 3]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn singleton_attention_is_value_path() {
        let cfg = small_cfg();
        let store = params(&cfg, 3);
        let mut rng = RngStream::new(Purpose::DataGen, 4);
        let xq = random(1, 8, &mut rng);
        let xkv = random(1, 8, &mut rng);
        let prefix = block_prefix("ta", 0, Side::Left);
        let mut tape = Tape::new();
        let q = tape.constant(xq);
        let kv = tape.constant(xkv.clone());
        let (out, weights) = cross_attention_with_weights(&mut tape, &store, q, kv, &prefix, &cfg).unwrap();
        for w in weights {
            assert_eq!(tape.value(w).data(), &[1.0]);
        }
        let heads: Vec<Matrix> = (0..cfg.h)
            .map(|i| xkv.matmul(store.value(&format!("{prefix}.head{i}.wv")).unwrap()).unwrap())
            .collect();
        let refs: Vec<&Matrix> = heads.iter().collect();
        let expected = Matrix::concat_cols(&refs)
            .unwrap()
            .matmul(store.value(&format!("{prefix}.wo")).unwrap())
            .unwrap();
        assert_eq!(tape.value(out), &expected);
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let cfg = small_cfg();
        let store = params(&cfg, 3);
        let mut rng = RngStream::new(Purpose::DataGen, 8);
        for _ in 0..20 {
            let n = 1 + rng.index(7);
            let mut tape = Tape::new();
            let q = tape.constant(random(n, 8, &mut rng));
            let kv = tape.constant(random(n, 8, &mut rng));
            let (_, weights) =
                cross_attention_with_weights(&mut tape, &store, q, kv, &block_prefix("tv", 0, Side::Right), &cfg)
                    .unwrap();
            for w in weights {
                let m = tape.value(w);
                for r in 0..m.rows() {
                    assert!((m.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(m.row(r).iter().all(|&p| p > 0.0 && p < 1.0) || n == 1);
                }
            }
        }
    }

    /// Direct loop evaluation of multi-head attention, independent of the tape.
    fn attention_oracle(xq: &Matrix, xkv: &Matrix, store: &ParamStore, prefix: &str, cfg: &CamConfig) -> Matrix {
        let n = xq.rows();
        let d = cfg.d_model;
        let dh = cfg.d_h;
        let proj = |x: &Matrix, w: &Matrix, r: usize, c: usize| -> f64 { (0..d).map(|k| x.get(r, k) * w.get(k, c)).sum() };
        let mut concat = vec![vec![0.0; cfg.h * dh]; n];
        for i in 0..cfg.h {
            let wq = store.value(&format!("{prefix}.head{i}.wq")).unwrap();
            let wk = store.value(&format!("{prefix}.head{i}.wk")).unwrap();
            let wv = store.value(&format!("{prefix}.head{i}.wv")).unwrap();
            for r in 0..n {
                let scores: Vec<f64> = (0..xkv.rows())
                    .map(|s| (0..dh).map(|c| proj(xq, wq, r, c) * proj(xkv, wk, s, c)).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let ex: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = ex.iter().sum();
                for c in 0..dh {
                    concat[r][i * dh + c] = (0..xkv.rows()).map(|s| ex[s] / z * proj(xkv, wv, s, c)).sum();
                }
            }
        }
        let wo = store.value(&format!("{prefix}.wo")).unwrap();
        let mut out = Matrix::zeros(n, d);
        for r in 0..n {
            for c in 0..d {
                out.set(r, c, (0..cfg.h * dh).map(|k| concat[r][k] * wo.get(k, c)).sum());
            }
        }
        out
    }

    #[test]
    fn attention_matches_direct_formula() {
        let cfg = small_cfg();
        let store = params(&cfg, 21);
        let mut rng = RngStream::new(Purpose::DataGen, 22);
        let xq = random(2, 8, &mut rng);
        let xkv = random(2, 8, &mut rng);
        let prefix = block_prefix("va", 0, Side::Left);
        let expected = attention_oracle(&xq, &xkv, &store, &prefix, &cfg);
        let mut tape = Tape::new();
        let q = tape.constant(xq);
        let kv = tape.constant(xkv);
        let out = cross_attention(&mut tape, &store, q, kv, &prefix, &cfg).unwrap();
        let got = tape.value(out);
        for (a, b) in got.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn residual_only_block_is_double_layer_norm() {
        let cfg = small_cfg();
        let mut store = params(&cfg, 5);
        let prefix = block_prefix("ta", 0, Side::Left);
        for w in ["wo", "ffn.w1", "ffn.w2"] {
            store.get_mut(&format!("{prefix}.{w}")).unwrap().value.data_mut().fill(0.0);
        }
        let mut rng = RngStream::new(Purpose::DataGen, 6);
        let x = random(3, 8, &mut rng);
        let mut tape = Tape::new();
        let q = tape.constant(x.clone());
        let kv = tape.constant(random(3, 8, &mut rng));
        let out = ct_block(&mut tape, &store, q, kv, &prefix, &cfg).unwrap();
        assert_eq!(tape.shape(out), (3, 8));
        let g = tape.constant(Matrix::ones(1, 8));
        let b = tape.constant(Matrix::zeros(1, 8));
        let xv = tape.constant(x);
        let once = tape.layer_norm(xv, g, b, cfg.ln_eps).unwrap();
        let twice = tape.layer_norm(once, g, b, cfg.ln_eps).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(tape.value(twice).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_depth_is_one_block_pair() {
        let cfg = small_cfg();
        let store = params(&cfg, 7);
        let mut rng = RngStream::new(Purpose::DataGen, 8);
        let (xa, xb) = (random(4, 8, &mut rng), random(4, 8, &mut rng));
        let mut tape = Tape::new();
        let a = tape.constant(xa);
        let b = tape.constant(xb);
        let (ea, eb) = co_attention_transformer(&mut tape, &store, a, b, "ta", &cfg).unwrap();
        let l = ct_block(&mut tape, &store, a, b, &block_prefix("ta", 0, Side::Left), &cfg).unwrap();
        let r = ct_block(&mut tape, &store, b, a, &block_prefix("ta", 0, Side::Right), &cfg).unwrap();
        assert_eq!(tape.value(ea), tape.value(l));
        assert_eq!(tape.value(eb), tape.value(r));
    }

    #[test]
    fn swapping_inputs_with_mirrored_params_swaps_outputs() {
        let cfg = CamConfig { t: 2, ..small_cfg() };
        let store = params(&cfg, 9);
        // mirrored copy: left <-> right
        let mut mirrored = ParamStore::new();
        for (name, p) in store.iter() {
            let swapped = if name.contains(".left.") {
                name.replace(".left.", ".right.")
            } else {
                name.replace(".right.", ".left.")
            };
            mirrored.insert(swapped, p.value.clone()).unwrap();
        }
        let mut rng = RngStream::new(Purpose::DataGen, 10);
        let (xa, xb) = (random(3, 8, &mut rng), random(3, 8, &mut rng));
        let mut tape = Tape::new();
        let a = tape.constant(xa);
        let b = tape.constant(xb);
        let (ea, eb) = co_attention_transformer(&mut tape, &store, a, b, "tv", &cfg).unwrap();
        let mut tape2 = Tape::new();
        let a2 = tape2.constant(tape.value(a).clone());
        let b2 = tape2.constant(tape.value(b).clone());
        let (fb, fa) = co_attention_transformer(&mut tape2, &mirrored, b2, a2, "tv", &cfg).unwrap();
        assert_eq!(tape.value(ea), tape2.value(fa));
        assert_eq!(tape.value(eb), tape2.value(fb));
    }

    #[test]
    fn two_depths_compose() {
        let cfg2 = CamConfig { t: 2, ..small_cfg() };
        let store = params(&cfg2, 11);
        let mut rng = RngStream::new(Purpose::DataGen, 12);
        let (xa, xb) = (random(3, 8, &mut rng), random(3, 8, &mut rng));
        let mut tape = Tape::new();
        let a = tape.constant(xa);
        let b = tape.constant(xb);
        let (ea, eb) = co_attention_transformer(&mut tape, &store, a, b, "ta", &cfg2).unwrap();

        // Two T=1 calls, the second reading block1's parameters under block0's names.
        let cfg1 = CamConfig { t: 1, ..cfg2.clone() };
        let mut second = ParamStore::new();
        for (name, p) in store.iter() {
            if name.contains(".block1.") {
                second.insert(name.replace(".block1.", ".block0."), p.value.clone()).unwrap();
            }
        }
        let (a1, b1) = co_attention_transformer(&mut tape, &store, a, b, "ta", &cfg1).unwrap();
        // a fresh tape, since a tape caches parameters by name
        let mut tape2 = Tape::new();
        let a1 = tape2.constant(tape.value(a1).clone());
        let b1 = tape2.constant(tape.value(b1).clone());
        let (a2, b2) = co_attention_transformer(&mut tape2, &second, a1, b1, "ta", &cfg1).unwrap();
        assert_eq!(tape.value(ea), tape2.value(a2));
        assert_eq!(tape.value(eb), tape2.value(b2));
    }

    fn fused(cfg: &CamConfig, store: &ParamStore, conv: &Conversation, active: [bool; 3]) -> (Tape, Var) {
        let mut tape = Tape::new();
        let s = project_modalities(&mut tape, store, conv, cfg, active).unwrap();
        let f = fuse_features(&mut tape, store, &s, cfg, active).unwrap();
        (tape, f)
    }

    #[test]
    fn fused_layout_keeps_raw_text_block() {
        let cfg = small_cfg();
        let store = params(&cfg, 13);
        let conv = conversation(4, cfg.dims_in, 14);
        let (tape, f) = fused(&cfg, &store, &conv, [true; 3]);
        let fm = tape.value(f);
        assert_eq!(fm.shape(), (4, cfg.fused_width()));
        let raw_t = fm.slice_cols(6 * cfg.d_model, cfg.dims_in.text).unwrap();
        assert_eq!(raw_t, raw_features(&conv, Modality::Text).unwrap());
    }

    #[test]
    fn inactive_modality_zeroes_its_pairs() {
        let cfg = small_cfg();
        let store = params(&cfg, 15);
        let conv = conversation(3, cfg.dims_in, 16);
        let (tape, f) = fused(&cfg, &store, &conv, [true, false, true]);
        let fm = tape.value(f);
        let d = cfg.d_model;
        // T-A and V-A pairs are zero, T-V is live
        assert_eq!(fm.slice_cols(0, 4 * d).unwrap().max_abs(), 0.0);
        assert!(fm.slice_cols(4 * d, 2 * d).unwrap().max_abs() > 0.0);
        let audio_raw = fm.slice_cols(6 * d + cfg.dims_in.text, cfg.dims_in.audio).unwrap();
        assert_eq!(audio_raw.max_abs(), 0.0);
    }

    #[test]
    fn permuting_utterances_permutes_rows() {
        let cfg = small_cfg();
        let store = params(&cfg, 17);
        let conv = conversation(5, cfg.dims_in, 18);
        let perm = [3, 0, 4, 1, 2];
        let permuted = Conversation {
            id: conv.id.clone(),
            utterances: perm.iter().map(|&i| conv.utterances[i].clone()).collect(),
        };
        let (t1, f1) = fused(&cfg, &store, &conv, [true; 3]);
        let (t2, f2) = fused(&cfg, &store, &permuted, [true; 3]);
        for (k, &i) in perm.iter().enumerate() {
            for (a, b) in t2.value(f2).row(k).iter().zip(t1.value(f1).row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoder_gradcheck() {
        let cfg = small_cfg();
        let mut store = params(&cfg, 19);
        let conv = conversation(3, cfg.dims_in, 20);
        let mut rng = RngStream::new(Purpose::DataGen, 21);
        let weights = random(3, cfg.fused_width(), &mut rng);
        let report = grad_check(
            |st: &mut ParamStore| {
                st.zero_grads();
                let mut tape = Tape::new();
                let s = project_modalities(&mut tape, st, &conv, &cfg, [true; 3])?;
                let f = fuse_features(&mut tape, st, &s, &cfg, [true; 3])?;
                let f = tape.tanh(f);
                let f = tape.mul_const(f, weights.clone())?;
                let loss = tape.sum(f);
                tape.backward_into(loss, 1.0, st)?;
                Ok(tape.value(loss).item())
            },
            &mut store,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{:?}", report.worst());
    }
}
