//! Attention pooling over `[g_i, h_i]`, the MLP decoder and the coarse/fine
//! multi-task objective.

use serde::{Deserialize, Serialize};

use crate::data::LabelTaxonomy;
use crate::error::{Error, Result};
use crate::numerics::{Init, Matrix, ParamDecl, ParamStore, Tape, Var};

/// Probabilities are clamped to this before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// coarse weight; `None` picks the taxonomy default
    pub alpha: Option<f64>,
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: None,
            lambda: 1e-5,
        }
    }
}

/// 0.5 for meld7, 0.7 otherwise.
pub fn default_alpha(taxonomy: &LabelTaxonomy) -> f64 {
    if *taxonomy == LabelTaxonomy::meld7() {
        0.5
    } else {
        0.7
    }
}

impl LossConfig {
    pub fn resolved_alpha(&self, taxonomy: &LabelTaxonomy) -> f64 {
        self.alpha.unwrap_or_else(|| default_alpha(taxonomy))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(a) = self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!("alpha must lie in [0, 1], got {a}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

pub fn declare_params(d_h: usize, mlp_hidden: usize, n_fine: usize, out: &mut Vec<ParamDecl>) {
    out.push(ParamDecl::new("head.w_beta", d_h, d_h, Init::Xavier));
    out.push(ParamDecl::new("head.mlp.w", d_h, mlp_hidden, Init::Xavier));
    out.push(ParamDecl::new("head.mlp.b", 1, mlp_hidden, Init::Zeros));
    out.push(ParamDecl::new("head.out.w", mlp_hidden, n_fine, Init::Xavier));
    out.push(ParamDecl::new("head.out.b", 1, n_fine, Init::Zeros));
}

/// `h = [g, H2]`, `beta = softmax(h W_beta h^T)`, returns `beta h`.
pub fn fuse_and_pool(tape: &mut Tape, store: &ParamStore, g: Var, h2: Var) -> Result<Var> {
    if tape.shape(g).0 != tape.shape(h2).0 {
        return Err(Error::Shape(format!(
            "context has {} rows, graph encoding has {}",
            tape.shape(g).0,
            tape.shape(h2).0
        )));
    }
    let h = tape.concat_cols(&[g, h2])?;
    let w = tape.param(store, "head.w_beta")?;
    let hw = tape.matmul(h, w)?;
    let ht = tape.transpose(h);
    let scores = tape.matmul(hw, ht)?;
    let beta = tape.softmax_rows(scores)?;
    tape.matmul(beta, h)
}

/// Fine-label probabilities `N x |fine|`.
pub fn classify(tape: &mut Tape, store: &ParamStore, pooled: Var) -> Result<Var> {
    let w = tape.param(store, "head.mlp.w")?;
    let b = tape.param(store, "head.mlp.b")?;
    let hidden = tape.matmul(pooled, w)?;
    let hidden = tape.add_bias(hidden, b)?;
    let hidden = tape.relu(hidden);
    let w = tape.param(store, "head.out.w")?;
    let b = tape.param(store, "head.out.b")?;
    let logits = tape.matmul(hidden, w)?;
    let logits = tape.add_bias(logits, b)?;
    tape.softmax_rows(logits)
}

pub fn predict(probs: &Matrix) -> Vec<usize> {
    probs.argmax_rows()
}

/// Sums fine probabilities within each coarse group.
pub fn coarse_probs(tape: &mut Tape, probs: Var, taxonomy: &LabelTaxonomy) -> Result<Var> {
    let grouping = tape.constant(taxonomy.grouping_matrix());
    tape.matmul(probs, grouping)
}

/// `alpha * sum(-ln P^C[y^C]) + (1 - alpha) * sum(-ln P[y^F])` over the rows.
/// Divide by the batch utterance count to get the mean loss.
pub fn multitask_loss_sum(
    tape: &mut Tape,
    probs: Var,
    fine_targets: &[usize],
    taxonomy: &LabelTaxonomy,
    alpha: f64,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let coarse_targets = fine_targets
        .iter()
        .map(|&y| taxonomy.coarse_index_of(y))
        .collect::<Result<Vec<_>>>()?;
    let coarse = coarse_probs(tape, probs, taxonomy)?;
    let l_c = tape.nll_sum(coarse, &coarse_targets, PROB_FLOOR)?;
    let l_f = tape.nll_sum(probs, fine_targets, PROB_FLOOR)?;
    let l_c = tape.scale(l_c, alpha);
    let l_f = tape.scale(l_f, 1.0 - alpha);
    tape.add(l_c, l_f)
}

/// Mean multi-task loss over the rows of `probs`, without the weight penalty.
pub fn multitask_loss(
    tape: &mut Tape,
    probs: Var,
    fine_targets: &[usize],
    taxonomy: &LabelTaxonomy,
    alpha: f64,
) -> Result<Var> {
    if fine_targets.is_empty() {
        return Err(Error::Shape("loss over zero utterances".into()));
    }
    let sum = multitask_loss_sum(tape, probs, fine_targets, taxonomy, alpha)?;
    Ok(tape.scale(sum, 1.0 / fine_targets.len() as f64))
}

/// Plain-value loss including `lambda * ||theta||^2`, for reporting.
pub fn loss_value(probs: &Matrix, fine_targets: &[usize], taxonomy: &LabelTaxonomy, alpha: f64, lambda: f64, params: &ParamStore) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone());
    let l = multitask_loss(&mut tape, p, fine_targets, taxonomy, alpha)?;
    Ok(tape.value(l).item() + lambda * params.l2_sq_norm())
}
