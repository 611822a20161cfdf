//! Training loops for the desk-scale transformer: plain cross-entropy
//! training, distillation against a frozen teacher with logit and
//! frequency-alignment supervision, validation accuracy, spectral profiles
//! of a trained model, and NPY-backed checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::model::{backward, forward, ActivationCache, Layout, ModelConfig, ModelParams, TinyVitError};
use super::optim::{AdamState, AdamW};
use crate::distill::{total_loss, DistillConfig, DistillError, LossBreakdown};
use crate::spectral::{model_profile, LayerSelection, ModelProfile};
use crate::tensor::{npy, tokens_to_spatial, spatial_to_tokens, FeatureMap, TensorError, TokenMap};

#[derive(Debug)]
pub enum TrainError {
    Model(TinyVitError),
    Loss(DistillError),
    BadData(String),
    BadPlan(String),
}

impl std::fmt::Display for TrainError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Model(e) => write!(f, "{e}"),
            Self::Loss(e) => write!(f, "{e}"),
            Self::BadData(why) => write!(f, "bad training data: {why}"),
            Self::BadPlan(why) => write!(f, "bad distillation plan: {why}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<TinyVitError> for TrainError {
    fn from(e: TinyVitError) -> Self {
        Self::Model(e)
    }
}

impl From<DistillError> for TrainError {
    fn from(e: DistillError) -> Self {
        Self::Loss(e)
    }
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        Self::Model(TinyVitError::Tensor(e))
    }
}

impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        Self::Model(TinyVitError::Tensor(TensorError::Io(e)))
    }
}

/// Knobs of one training run. The optimizer is AdamW with its standard
/// settings; only the learning rate varies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

/// A frozen teacher plus the layer pairing and loss weights to distill with.
#[derive(Debug, Clone)]
pub struct DistillPlan<'a> {
    pub teacher: &'a ModelParams,
    pub selection: LayerSelection,
    pub distill: DistillConfig,
}

/// Per-step loss history of a finished run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub history: Vec<LossBreakdown>,
}

impl TrainRun {
    pub fn steps(&self) -> usize {
        self.history.len()
    }
}

/// Pulls the cached tokens of a 1-indexed layer into spatial (B, C, H, W)
/// layout. The token count is side^2 by construction, so the reshape cannot
/// fail.
fn layer_feature(cache: &ActivationCache, layer: usize, cfg: &ModelConfig) -> FeatureMap {
    let tokens = TokenMap {
        dims: [cache.batch, cfg.tokens(), cfg.embed_dim],
        data: cache.layer(layer).to_vec(),
    };
    tokens_to_spatial(&tokens, cfg.side(), cfg.side(), false)
        .expect("square token grid always reshapes")
}

fn check_dataset(cfg: &ModelConfig, data: &Dataset, settings: &TrainSettings) -> Result<usize, TrainError> {
    if settings.batch == 0 {
        return Err(TrainError::BadData("batch size must be >= 1".into()));
    }
    let usable = (data.len() / settings.batch) * settings.batch;
    if usable == 0 {
        return Err(TrainError::BadData(format!(
            "dataset of {} samples cannot fill a batch of {}",
            data.len(),
            settings.batch
        )));
    }
    let pixels = cfg.image_size * cfg.image_size;
    for (i, img) in data.images.iter().enumerate() {
        if img.len() != pixels {
            return Err(TrainError::BadData(format!(
                "image {i} has {} pixels, model expects {pixels}",
                img.len()
            )));
        }
    }
    Ok(usable)
}

fn check_plan(cfg: &ModelConfig, plan: &DistillPlan) -> Result<(), TrainError> {
    let sel = &plan.selection;
    if sel.teacher_layers.len() != sel.student_layers.len() {
        return Err(TrainError::BadPlan(format!(
            "{} teacher layers paired with {} student layers",
            sel.teacher_layers.len(),
            sel.student_layers.len()
        )));
    }
    let t_depth = plan.teacher.cfg.depth;
    if let Some(&l) = sel.teacher_layers.iter().find(|&&l| l == 0 || l > t_depth) {
        return Err(TrainError::BadPlan(format!(
            "teacher layer {l} outside depth {t_depth}"
        )));
    }
    if let Some(&l) = sel.student_layers.iter().find(|&&l| l == 0 || l > cfg.depth) {
        return Err(TrainError::BadPlan(format!(
            "student layer {l} outside depth {}",
            cfg.depth
        )));
    }
    if plan.teacher.cfg.side() != cfg.side() {
        return Err(TrainError::BadPlan(format!(
            "teacher token grid {0}x{0} does not match student {1}x{1}",
            plan.teacher.cfg.side(),
            cfg.side()
        )));
    }
    if plan.teacher.cfg.class_count != cfg.class_count {
        return Err(TrainError::BadPlan(format!(
            "teacher has {} classes, student {}",
            plan.teacher.cfg.class_count, cfg.class_count
        )));
    }
    plan.distill.validate().map_err(TrainError::Loss)
}

/// Trains a freshly initialized model on `data`.
///
/// Without a plan the objective is plain cross-entropy. With a plan each
/// step also runs the frozen teacher, pairs the selected layer features,
/// and descends the combined logit and frequency-alignment objective, with
/// feature gradients routed into the student through its cached layer
/// outputs. Batches walk the dataset in order and a trailing partial batch
/// is skipped, so the whole run is deterministic for a fixed seed.
pub fn train(
    cfg: &ModelConfig,
    data: &Dataset,
    settings: &TrainSettings,
    plan: Option<&DistillPlan>,
) -> Result<(ModelParams, TrainRun), TrainError> {
    let mut params = ModelParams::init(cfg)?;
    let usable = check_dataset(cfg, data, settings)?;
    if let Some(pl) = plan {
        check_plan(cfg, pl)?;
    }

    // Plain training is the distillation objective with the teacher terms
    // switched off, which keeps both paths on the same loss code.
    let ce_only = DistillConfig {
        temperature: 1.0,
        alpha: 0.0,
        beta: 0.0,
    };
    let classes = cfg.class_count;
    let opt = AdamW::with_lr(settings.lr);
    let mut state = AdamState::new(params.layout.total);
    let mut history = Vec::new();

    for _epoch in 0..settings.epochs {
        for start in (0..usable).step_by(settings.batch) {
            let images = &data.images[start..start + settings.batch];
            let labels = &data.labels[start..start + settings.batch];
            let (s_logits, s_cache) = forward(&params, images);

            let total = match plan {
                None => total_loss(&[], &s_logits, &s_logits, labels, classes, &ce_only)?,
                Some(pl) => {
                    let (t_logits, t_cache) = forward(pl.teacher, images);
                    let s_feats: Vec<FeatureMap> = pl
                        .selection
                        .student_layers
                        .iter()
                        .map(|&l| layer_feature(&s_cache, l, cfg))
                        .collect();
                    let t_feats: Vec<FeatureMap> = pl
                        .selection
                        .teacher_layers
                        .iter()
                        .map(|&l| layer_feature(&t_cache, l, &pl.teacher.cfg))
                        .collect();
                    let pairs: Vec<(&FeatureMap, &FeatureMap)> =
                        s_feats.iter().zip(t_feats.iter()).collect();
                    total_loss(&pairs, &s_logits, &t_logits, labels, classes, &pl.distill)?
                }
            };

            let token_grads: Vec<(usize, TokenMap)> = match plan {
                None => Vec::new(),
                Some(pl) => pl
                    .selection
                    .student_layers
                    .iter()
                    .zip(&total.feature_grads)
                    .map(|(&l, g)| (l, spatial_to_tokens(g)))
                    .collect(),
            };
            let grad_refs: Vec<(usize, &[f64])> = token_grads
                .iter()
                .map(|(l, tm)| (*l, tm.data.as_slice()))
                .collect();
            let grads = backward(&params, &s_cache, &total.logit_grad, &grad_refs)?;
            opt.step(&mut params.data, &grads, &mut state);
            history.push(total.breakdown);
        }
    }

    Ok((params, TrainRun { history }))
}

/// Fraction of samples whose argmax logit matches the label. Ties resolve
/// to the lower class index; an empty dataset scores zero.
pub fn accuracy(params: &ModelParams, data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let k = params.cfg.class_count;
    let mut correct = 0usize;
    for (imgs, labels) in data.images.chunks(64).zip(data.labels.chunks(64)) {
        let (logits, _) = forward(params, imgs);
        for (row, &label) in logits.chunks(k).zip(labels) {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            if best == label {
                correct += 1;
            }
        }
    }
    correct as f64 / data.len() as f64
}

/// Layer-intensity profile of a model over one batch of images, computed
/// from the cached post-block features.
pub fn feature_profile(params: &ModelParams, images: &[Vec<f64>]) -> ModelProfile {
    let (_, cache) = forward(params, images);
    let maps: Vec<FeatureMap> = (1..=params.cfg.depth)
        .map(|l| layer_feature(&cache, l, &params.cfg))
        .collect();
    model_profile(&maps)
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    file: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    tensors: BTreeMap<String, TensorEntry>,
}

/// Writes every parameter tensor as one NPY file plus a JSON manifest
/// carrying the config and the tensor index. The manifest's map is ordered,
/// so identical parameters always serialize to identical bytes.
pub fn save_checkpoint(params: &ModelParams, dir: &Path) -> Result<(), TrainError> {
    fs::create_dir_all(dir)?;
    let mut tensors = BTreeMap::new();
    for spec in &params.layout.specs {
        let file = format!("{}.npy", spec.name);
        npy::write_raw(&dir.join(&file), &spec.shape, &params.data[spec.range()])?;
        tensors.insert(
            spec.name.clone(),
            TensorEntry {
                file,
                shape: spec.shape.clone(),
            },
        );
    }
    let manifest = Manifest {
        config: params.cfg,
        tensors,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| TrainError::Model(TinyVitError::Manifest(e.to_string())))?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`], validating the config
/// and every tensor shape against the layout it implies.
pub fn load_checkpoint(dir: &Path) -> Result<ModelParams, TrainError> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| TrainError::Model(TinyVitError::Manifest(e.to_string())))?;
    manifest.config.validate()?;
    let layout = Layout::new(&manifest.config);
    if manifest.tensors.len() != layout.specs.len() {
        return Err(TrainError::Model(TinyVitError::Manifest(format!(
            "manifest lists {} tensors, config implies {}",
            manifest.tensors.len(),
            layout.specs.len()
        ))));
    }
    let mut data = vec![0.0; layout.total];
    for spec in &layout.specs {
        let entry = manifest.tensors.get(&spec.name).ok_or_else(|| {
            TrainError::Model(TinyVitError::Manifest(format!(
                "manifest is missing tensor {}",
                spec.name
            )))
        })?;
        if entry.shape != spec.shape {
            return Err(TrainError::Model(TinyVitError::ShapeMismatch(format!(
                "tensor {} has manifest shape {:?}, config implies {:?}",
                spec.name, entry.shape, spec.shape
            ))));
        }
        let (dims, values) = npy::read_raw(&dir.join(&entry.file))?;
        if dims != spec.shape {
            return Err(TrainError::Model(TinyVitError::ShapeMismatch(format!(
                "tensor file {} holds shape {:?}, expected {:?}",
                entry.file, dims, spec.shape
            ))));
        }
        data[spec.range()].copy_from_slice(&values);
    }
    Ok(ModelParams {
        cfg: manifest.config,
        layout,
        data,
    })
}
