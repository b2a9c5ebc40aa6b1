use super::TrainConfig;
use crate::classifier_loss::{self, default_alpha};
use crate::context_gru;
use crate::data::{Conversation, Dataset, LabelTaxonomy, Modality};
use crate::dialogue_graph::{self, build_graph, DropMask, GraphConfig};
use crate::encoder_cam::{self, pair_name, PAIRS};
use crate::error::{Error, Result};
use crate::numerics::{init_params, Matrix, ParamDecl, ParamStore, RngStream, Tape, Var};

/// The full pipeline: projections and co-attention fusion, BiGRU context,
/// dialogue graph and the pooled classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: TrainConfig,
    pub taxonomy: LabelTaxonomy,
}

impl Model {
    pub fn new(cfg: TrainConfig, taxonomy: LabelTaxonomy) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, taxonomy })
    }

    pub fn active(&self) -> [bool; 3] {
        self.cfg.ablation.active()
    }

    pub fn alpha(&self) -> f64 {
        self.cfg.alpha.unwrap_or_else(|| default_alpha(&self.taxonomy))
    }

    pub fn graph_config(&self) -> GraphConfig {
        self.cfg.graph_config()
    }

    pub fn gru_input_width(&self) -> usize {
        if self.cfg.ablation.disable_cam {
            3 * self.cfg.cam.d_model
        } else {
            self.cfg.cam.fused_width()
        }
    }

    pub fn head_width(&self) -> usize {
        2 * self.cfg.d_g + self.cfg.d_h2
    }

    /// Only parameters reachable under the current ablation are declared.
    pub fn param_decls(&self) -> Vec<ParamDecl> {
        let active = self.active();
        let mut cam = Vec::new();
        encoder_cam::declare_params(&self.cfg.cam, &mut cam);
        let mut decls: Vec<ParamDecl> = cam
            .into_iter()
            .filter(|d| {
                for m in Modality::ALL {
                    if d.name.starts_with(&format!("cam.proj.{}.", m.name())) {
                        return active[m.index()];
                    }
                }
                for pair in PAIRS {
                    if d.name.starts_with(&format!("cam.{}.", pair_name(pair))) {
                        return !self.cfg.ablation.disable_cam && active[pair.0.index()] && active[pair.1.index()];
                    }
                }
                true
            })
            .collect();
        context_gru::declare_params(self.gru_input_width(), self.cfg.d_g, &mut decls);
        if !self.cfg.ablation.disable_graph {
            dialogue_graph::declare_params(2 * self.cfg.d_g, &self.graph_config(), &mut decls);
        }
        classifier_loss::declare_params(self.head_width(), self.cfg.mlp_hidden, self.taxonomy.n_fine(), &mut decls);
        decls
    }

    pub fn init_params(&self) -> Result<ParamStore> {
        init_params(&self.param_decls(), self.cfg.seed)
    }

    /// Startup checks so that mismatches surface before any training step.
    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.dims() != self.cfg.cam.dims_in {
            return Err(Error::Config(format!(
                "dataset dims {:?} differ from cam.dims_in {:?}",
                ds.dims(),
                self.cfg.cam.dims_in
            )));
        }
        if ds.taxonomy != self.taxonomy {
            return Err(Error::Taxonomy("dataset taxonomy differs from the model's".into()));
        }
        if !self.cfg.ablation.disable_graph && ds.max_speakers() > self.cfg.max_speakers {
            return Err(Error::Config(format!(
                "a conversation has {} speakers but max_speakers is {}",
                ds.max_speakers(),
                self.cfg.max_speakers
            )));
        }
        Ok(())
    }

    pub fn targets(&self, conv: &Conversation) -> Result<Vec<usize>> {
        conv.utterances.iter().map(|u| self.taxonomy.fine_index(&u.label)).collect()
    }

    /// Fine-label probabilities, `N x |fine|`. Passing a DropMessage stream
    /// selects training mode.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        conv: &Conversation,
        drop: Option<&mut RngStream>,
    ) -> Result<Var> {
        let cfg = &self.cfg;
        let active = self.active();
        let streams = encoder_cam::project_modalities(tape, store, conv, &cfg.cam, active)?;
        let fused = if cfg.ablation.disable_cam {
            tape.concat_cols(&streams.projected)?
        } else {
            encoder_cam::fuse_features(tape, store, &streams, &cfg.cam, active)?
        };
        let g = context_gru::bigru_forward(tape, store, fused)?;
        let h2 = if cfg.ablation.disable_graph {
            tape.constant(Matrix::zeros(conv.len(), cfg.d_h2))
        } else {
            let gcfg = self.graph_config();
            let mut graph = build_graph(conv, gcfg.window)?;
            graph.assign_relations(gcfg.max_speakers)?;
            let mask = match drop {
                Some(rng) => DropMask::draw(&graph, gcfg.drop_rate, gcfg.rescale, rng, true)?,
                None => DropMask::keep_all(&graph),
            };
            dialogue_graph::graph_encode(tape, store, g, &mut graph, &mask, &gcfg)?
        };
        let pooled = classifier_loss::fuse_and_pool(tape, store, g, h2)?;
        classifier_loss::classify(tape, store, pooled)
    }

    /// Eval-mode probabilities as a plain matrix.
    pub fn predict_probs(&self, store: &ParamStore, conv: &Conversation) -> Result<Matrix> {
        let mut tape = Tape::with_mode(self.cfg.float_mode);
        let p = self.forward(&mut tape, store, conv, None)?;
        Ok(tape.value(p).clone())
    }
}
