use std::thread;

use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use super::model::Model;
use super::train::{evaluate, loss_and_grad, train};
use super::TrainConfig;
use crate::data::{Conversation, Dataset, LabelTaxonomy, Modality, Utterance};
use crate::error::{Error, Result};
use crate::numerics::{grad_check, FloatMode, GradCheckReport, ParamStore, Purpose, RngStream};

/// Trains one configuration on `train_set` and scores it on `test_set`.
pub fn run_cell(train_set: &Dataset, test_set: &Dataset, cfg: &TrainConfig) -> Result<Metrics> {
    let model = Model::new(cfg.clone(), train_set.taxonomy.clone())?;
    let out = train(&model, train_set, None)?;
    Ok(evaluate(&model, &out.params, test_set)?.metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub name: String,
    pub disable_cam: bool,
    pub disable_graph: bool,
    pub modalities: String,
    pub accuracy: f64,
    pub weighted_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    /// CAM and graph switched on and off, all modalities
    pub modules: Vec<CellResult>,
    /// every non-empty modality subset, full model
    pub modality_subsets: Vec<CellResult>,
}

impl AblationReport {
    pub fn cell(&self, name: &str) -> Option<&CellResult> {
        self.modules.iter().chain(&self.modality_subsets).find(|c| c.name == name)
    }
}

/// The seven subsets in table order: T, V, A, T-V, T-A, A-V, T-A-V.
pub fn modality_grid() -> Vec<Vec<Modality>> {
    use Modality::{Audio as A, Text as T, Visual as V};
    vec![vec![T], vec![V], vec![A], vec![T, V], vec![T, A], vec![A, V], vec![T, A, V]]
}

pub fn subset_name(mods: &[Modality]) -> String {
    mods.iter().map(|m| m.letter()).collect::<Vec<_>>().join("-")
}

fn run_parallel(train_set: &Dataset, test_set: &Dataset, cells: Vec<(CellResult, TrainConfig)>) -> Result<Vec<CellResult>> {
    let results: Vec<Result<CellResult>> = thread::scope(|s| {
        let handles: Vec<_> = cells
            .into_iter()
            .map(|(mut cell, cfg)| {
                s.spawn(move || {
                    let m = run_cell(train_set, test_set, &cfg)?;
                    cell.accuracy = m.accuracy;
                    cell.weighted_f1 = m.weighted_f1;
                    Ok(cell)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::State("ablation worker panicked".into()))))
            .collect()
    });
    results.into_iter().collect()
}

/// Module grid and modality grid, one training run per cell with the shared seed.
/// Cells are independent and run on separate threads.
pub fn ablate(train_set: &Dataset, test_set: &Dataset, cfg: &TrainConfig) -> Result<AblationReport> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for (name, cam_off, graph_off) in [
        ("full", false, false),
        ("no_cam", true, false),
        ("no_graph", false, true),
        ("no_cam_no_graph", true, true),
    ] {
        let mut c = cfg.clone();
        c.ablation.disable_cam = cam_off;
        c.ablation.disable_graph = graph_off;
        c.ablation.modalities = Modality::ALL.to_vec();
        cells.push((cell(name, &c), c));
    }
    for mods in modality_grid() {
        let mut c = cfg.clone();
        c.ablation.disable_cam = false;
        c.ablation.disable_graph = false;
        c.ablation.modalities = mods.clone();
        cells.push((cell(&subset_name(&mods), &c), c));
    }
    let mut all = run_parallel(train_set, test_set, cells)?;
    let modality_subsets = all.split_off(4);
    Ok(AblationReport {
        seed: cfg.seed,
        modules: all,
        modality_subsets,
    })
}

fn cell(name: &str, cfg: &TrainConfig) -> CellResult {
    CellResult {
        name: name.to_string(),
        disable_cam: cfg.ablation.disable_cam,
        disable_graph: cfg.ablation.disable_graph,
        modalities: subset_name(&cfg.ablation.modalities),
        accuracy: 0.0,
        weighted_f1: 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaPoint {
    pub alpha: f64,
    pub accuracy: f64,
    pub weighted_f1: f64,
}

/// 0, 0.1, ..., 1.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

pub fn sweep_alpha(train_set: &Dataset, test_set: &Dataset, cfg: &TrainConfig, grid: &[f64]) -> Result<Vec<AlphaPoint>> {
    if grid.is_empty() {
        return Err(Error::Config("alpha grid is empty".into()));
    }
    if let Some(a) = grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::Config(format!("alpha grid value {a} outside [0, 1]")));
    }
    let cells = grid
        .iter()
        .map(|&a| {
            let mut c = cfg.clone();
            c.alpha = Some(a);
            (cell(&format!("alpha={a}"), &c), c)
        })
        .collect();
    let results = run_parallel(train_set, test_set, cells)?;
    Ok(grid
        .iter()
        .zip(results)
        .map(|(&alpha, r)| AlphaPoint {
            alpha,
            accuracy: r.accuracy,
            weighted_f1: r.weighted_f1,
        })
        .collect())
}

/// A random `n`-utterance, two-speaker conversation shaped for `cfg`.
fn probe_conversation(cfg: &TrainConfig, taxonomy: &LabelTaxonomy, n: usize) -> Conversation {
    let mut rng = RngStream::new(Purpose::DataGen, cfg.seed);
    let dims = cfg.cam.dims_in;
    let vec_of = |d: usize, rng: &mut RngStream| (0..d).map(|_| rng.normal()).collect::<Vec<f64>>();
    let utterances = (0..n)
        .map(|i| Utterance {
            // both speakers appear regardless of n
            speaker: if i % 3 == 1 { "B".into() } else { "A".into() },
            label: taxonomy.fine_labels()[rng.index(taxonomy.n_fine())].clone(),
            text: vec_of(dims.text, &mut rng),
            audio: vec_of(dims.audio, &mut rng),
            visual: vec_of(dims.visual, &mut rng),
        })
        .collect();
    Conversation {
        id: "gradcheck".into(),
        utterances,
    }
}

/// Central-difference check of the whole objective on one random conversation
/// of `n_utterances`, DropMessage off.
pub fn gradcheck_pipeline(cfg: &TrainConfig, n_utterances: usize, step: f64, tol: f64) -> Result<GradCheckReport> {
    if cfg.float_mode != FloatMode::F64 {
        return Err(Error::Config("gradient checking requires float_mode = \"f64\"".into()));
    }
    if n_utterances == 0 {
        return Err(Error::Config("gradient check needs at least one utterance".into()));
    }
    let taxonomy = LabelTaxonomy::iemocap6();
    let model = Model::new(cfg.clone(), taxonomy.clone())?;
    let conv = probe_conversation(cfg, &taxonomy, n_utterances);
    let mut store = model.init_params()?;
    // move biases and normalisers off their exact initial values
    let mut rng = RngStream::new(Purpose::Init, cfg.seed.wrapping_add(1));
    for (_, p) in store.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v += 0.05 * rng.normal());
    }
    grad_check(
        |st: &mut ParamStore| loss_and_grad(&model, st, &[&conv], None),
        &mut store,
        step,
        tol,
    )
}
