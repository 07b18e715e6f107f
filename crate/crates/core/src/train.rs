//! Training loop, learning-rate schedule, metrics log and checkpoint
//! evaluation.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{load_image_tensor, Manifest, Normalization, PkSampler, Split};
use crate::error::{CanError, Result};
use crate::eval::{cosine_distance_matrix, evaluate, DistanceMatrix, EvalReport, ItemMeta};
use crate::losses::{composite_loss, BatchLabels, LossBreakdown, LossConfig};
use crate::model::{load_checkpoint, save_checkpoint, BackboneConfig, BranchSpec, CanModel, ModelConfig};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;

/// Images per forward pass when computing descriptors.
const EVAL_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub backbone: BackboneConfig,
    pub branches: Vec<usize>,
    pub collaborative_attention: bool,
    pub embed_dim: usize,
    /// Inferred from the training ids when absent.
    pub num_classes: Option<usize>,
    pub p: usize,
    pub k: usize,
    pub margin: f64,
    pub center_weight: f64,
    pub center_lr: f64,
    pub center_unsquared: bool,
    pub cosine_scale: f64,
    pub base_lr: f64,
    pub decay_epochs: Vec<u64>,
    pub decay_factor: f64,
    pub total_epochs: u64,
    /// Hard cap on optimizer steps, on top of `total_epochs`.
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub use_ce: bool,
    pub use_triplet: bool,
    pub use_center: bool,
    pub supervise_local: bool,
    /// Top up ids with fewer than K training images instead of failing.
    pub sample_with_replacement: bool,
    /// Evaluate every N epochs (0: only at the end).
    pub eval_every: u64,
    /// Write a checkpoint every N epochs (0: only at the end).
    pub checkpoint_every: u64,
    pub eval_max_rank: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    /// Desk scale: 96×32 input, branches {1,3,5,7}, embed 64, P=4, K=4,
    /// 200 epochs.
    pub fn desk() -> Self {
        TrainConfig {
            backbone: BackboneConfig::desk(),
            branches: BranchSpec::can().part_counts,
            collaborative_attention: true,
            embed_dim: 64,
            num_classes: None,
            p: 4,
            k: 4,
            margin: 0.3,
            center_weight: 0.0005,
            center_lr: 0.5,
            center_unsquared: false,
            cosine_scale: 16.0,
            base_lr: 1e-3,
            decay_epochs: vec![150],
            decay_factor: 0.1,
            total_epochs: 200,
            max_steps: None,
            seed: 0,
            use_ce: true,
            use_triplet: true,
            use_center: true,
            supervise_local: true,
            sample_with_replacement: false,
            eval_every: 20,
            checkpoint_every: 0,
            eval_max_rank: 10,
        }
    }

    /// Full-size schedule: 384×128, embed 256, P=8, K=4, 3e-4 decayed ten-fold
    /// at epochs 250, 350 and 450, 600 epochs.
    pub fn full_size() -> Self {
        TrainConfig {
            backbone: BackboneConfig::full_size(),
            embed_dim: 256,
            p: 8,
            base_lr: 3e-4,
            decay_epochs: vec![250, 350, 450],
            total_epochs: 600,
            ..TrainConfig::desk()
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CanError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CanError::Config(format!("{}: {e}", path.display())))
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            use_ce: self.use_ce,
            use_triplet: self.use_triplet,
            use_center: self.use_center,
            supervise_local: self.supervise_local,
            margin: self.margin,
            center_weight: self.center_weight,
            center_lr: self.center_lr,
            center_unsquared: self.center_unsquared,
        }
    }

    pub fn model_config(&self, num_classes: usize) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone.clone(),
            branches: BranchSpec::new(self.branches.clone()),
            embed_dim: self.embed_dim,
            num_classes,
            cosine_scale: self.cosine_scale,
            collaborative_attention: self.collaborative_attention,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(CanError::Config("base_lr must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(CanError::Config("decay_factor must lie in (0, 1]".into()));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CanError::Config("decay_epochs must be strictly increasing".into()));
        }
        if self.eval_max_rank == 0 {
            return Err(CanError::Config("eval_max_rank must be at least 1".into()));
        }
        if self.p < 2 && self.use_triplet {
            return Err(CanError::Config("triplet loss needs P >= 2".into()));
        }
        if self.k < 2 && self.use_triplet {
            return Err(CanError::Config("triplet loss needs K >= 2".into()));
        }
        self.loss_config().validate()?;
        self.model_config(self.num_classes.unwrap_or(2)).validate()
    }
}

/// Base lr times `decay_factor` for every boundary `<= epoch`.
pub fn lr_at(epoch: u64, config: &TrainConfig) -> f64 {
    let passed = config.decay_epochs.iter().filter(|&&b| epoch >= b).count();
    config.base_lr * config.decay_factor.powi(passed as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: u64,
    pub step: u64,
    pub lr: f64,
    pub total: f64,
    pub ce: f64,
    pub triplet: f64,
    pub center: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: u64,
    pub step: u64,
    pub report: EvalReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl MetricsLog {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.total).collect()
    }

    pub fn final_report(&self) -> Option<&EvalReport> {
        self.evals.last().map(|e| &e.report)
    }
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LogLine<'a> {
    Step(&'a StepRecord),
    Eval(&'a EvalRecord),
}

/// Appends JSON lines to `metrics.jsonl` and mirrors them in memory.
struct MetricsWriter {
    log: MetricsLog,
    out: Option<(PathBuf, BufWriter<File>)>,
}

impl MetricsWriter {
    fn new(dir: Option<&Path>) -> Result<Self> {
        let out = match dir {
            Some(d) => {
                let path = d.join("metrics.jsonl");
                let f = File::create(&path).map_err(|e| CanError::io(&path, e))?;
                Some((path, BufWriter::new(f)))
            }
            None => None,
        };
        Ok(MetricsWriter { log: MetricsLog::default(), out })
    }

    fn write(&mut self, line: LogLine) -> Result<()> {
        if let Some((path, w)) = &mut self.out {
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n").map_err(|e| CanError::io(&*path, e))?;
        }
        Ok(())
    }

    fn step(&mut self, rec: StepRecord) -> Result<()> {
        self.write(LogLine::Step(&rec))?;
        self.log.steps.push(rec);
        Ok(())
    }

    fn eval(&mut self, rec: EvalRecord) -> Result<()> {
        log::info!(
            "epoch {} step {}: mAP {:.4} rank-1 {:.4}",
            rec.epoch,
            rec.step,
            rec.report.map,
            rec.report.rank1()
        );
        self.write(LogLine::Eval(&rec))?;
        self.log.evals.push(rec);
        Ok(())
    }

    fn finish(mut self) -> Result<MetricsLog> {
        if let Some((path, w)) = &mut self.out {
            w.flush().map_err(|e| CanError::io(&*path, e))?;
        }
        Ok(self.log)
    }
}

/// Query and gallery images with their metas, loaded once.
pub struct EvalSet {
    pub query: Vec<Tensor>,
    pub query_meta: Vec<ItemMeta>,
    pub gallery: Vec<Tensor>,
    pub gallery_meta: Vec<ItemMeta>,
}

impl EvalSet {
    pub fn load(manifest: &Manifest, h: usize, w: usize) -> Result<Self> {
        let (query, query_meta) = load_split(manifest, Split::Query, h, w)?;
        let (gallery, gallery_meta) = load_split(manifest, Split::Gallery, h, w)?;
        if query.is_empty() || gallery.is_empty() {
            return Err(CanError::Data("evaluation needs non-empty query and gallery splits".into()));
        }
        Ok(EvalSet { query, query_meta, gallery, gallery_meta })
    }

    pub fn distances(&self, model: &CanModel) -> Result<DistanceMatrix> {
        let q = descriptors(model, &self.query)?;
        let g = descriptors(model, &self.gallery)?;
        DistanceMatrix::new(
            cosine_distance_matrix(&q, &g)?,
            self.query_meta.clone(),
            self.gallery_meta.clone(),
        )
    }

    pub fn evaluate(&self, model: &CanModel, max_rank: usize) -> Result<EvalReport> {
        evaluate(&self.distances(model)?, max_rank)
    }
}

fn load_split(manifest: &Manifest, split: Split, h: usize, w: usize) -> Result<(Vec<Tensor>, Vec<ItemMeta>)> {
    let norm = Normalization::default();
    let mut images = Vec::new();
    let mut metas = Vec::new();
    for i in manifest.split_indices(split) {
        let r = &manifest.records[i];
        images.push(load_image_tensor(manifest, r, h, w, &norm)?);
        metas.push(ItemMeta { id: r.person_id, cam: r.camera_id });
    }
    Ok((images, metas))
}

fn stack(images: &[&Tensor]) -> Result<Tensor> {
    let parts: Vec<Tensor> = images
        .iter()
        .map(|t| {
            let mut s = vec![1];
            s.extend_from_slice(t.shape());
            t.reshape(&s)
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::concat(&refs, 0)
}

/// Unit descriptors, one row per image, computed in chunks.
pub fn descriptors(model: &CanModel, images: &[Tensor]) -> Result<Tensor> {
    let mut rows = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_CHUNK) {
        let refs: Vec<&Tensor> = chunk.iter().collect();
        rows.push(model.inference_descriptors(&stack(&refs)?)?);
    }
    let refs: Vec<&Tensor> = rows.iter().collect();
    Tensor::concat(&refs, 0)
}

pub fn evaluate_model(model: &CanModel, manifest: &Manifest, max_rank: usize) -> Result<EvalReport> {
    let bb = &model.config.backbone;
    EvalSet::load(manifest, bb.input_h, bb.input_w)?.evaluate(model, max_rank)
}

pub fn evaluate_checkpoint(dir: impl AsRef<Path>, manifest: &Manifest, max_rank: usize) -> Result<EvalReport> {
    let (model, _) = load_checkpoint(dir)?;
    evaluate_model(&model, manifest, max_rank)
}

pub struct TrainOutcome {
    pub model: CanModel,
    pub log: MetricsLog,
    /// Training person id to class index.
    pub classes: BTreeMap<i64, usize>,
}

/// Trains from scratch. With `out_dir`, writes `metrics.jsonl`,
/// `train_config.json` and a `checkpoint/` directory.
pub fn train(config: &TrainConfig, manifest: &Manifest, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let classes: BTreeMap<i64, usize> = manifest.train_ids().into_iter().enumerate().map(|(c, id)| (id, c)).collect();
    let num_classes = config.num_classes.unwrap_or(classes.len());
    if num_classes != classes.len() {
        return Err(CanError::Config(format!(
            "num_classes is {num_classes} but the manifest has {} training ids",
            classes.len()
        )));
    }
    let sampler = if config.sample_with_replacement {
        PkSampler::with_replacement(manifest, config.p, config.k, config.seed)?
    } else {
        PkSampler::new(manifest, config.p, config.k, config.seed)?
    };
    let mut model = CanModel::build(config.model_config(num_classes), config.seed)?;
    let loss_cfg = config.loss_config();
    let (h, w) = (config.backbone.input_h, config.backbone.input_w);

    let norm = Normalization::default();
    let train_images: BTreeMap<usize, Tensor> = manifest
        .split_indices(Split::Train)
        .into_iter()
        .map(|i| Ok((i, load_image_tensor(manifest, &manifest.records[i], h, w, &norm)?)))
        .collect::<Result<_>>()?;
    let eval_set = match EvalSet::load(manifest, h, w) {
        Ok(s) => Some(s),
        Err(e) => {
            log::warn!("evaluation disabled: {e}");
            None
        }
    };

    if let Some(d) = out_dir {
        fs::create_dir_all(d).map_err(|e| CanError::io(d, e))?;
        let p = d.join("train_config.json");
        fs::write(&p, serde_json::to_string_pretty(config)?).map_err(|e| CanError::io(&p, e))?;
    }
    let mut metrics = MetricsWriter::new(out_dir)?;
    let mut adam = AdamState::new(&model.store, AdamConfig::default());
    let ckpt_dir = out_dir.map(|d| d.join("checkpoint"));
    let save = |model: &CanModel, epoch: u64, step: u64| -> Result<()> {
        match &ckpt_dir {
            Some(dir) => save_checkpoint(
                model,
                dir,
                serde_json::json!({"epoch": epoch, "step": step, "classes": classes.len()}),
            ),
            None => Ok(()),
        }
    };

    let mut step = 0u64;
    let mut epoch = 0u64;
    let step_cap = config.max_steps.unwrap_or(u64::MAX);
    'epochs: while epoch < config.total_epochs {
        let lr = lr_at(epoch, config);
        for batch in sampler.epoch_batches(epoch) {
            if step >= step_cap {
                break 'epochs;
            }
            let refs: Vec<&Tensor> = batch.iter().map(|i| &train_images[i]).collect();
            let labels = BatchLabels::new(batch.iter().map(|&i| classes[&manifest.records[i].person_id]).collect());
            let br = train_step(&mut model, &mut adam, &stack(&refs)?, &labels, &loss_cfg, lr)
                .map_err(|e| match e {
                    CanError::NonFinite(msg) => {
                        CanError::NonFinite(format!("epoch {epoch} step {step}: {msg}; aborting"))
                    }
                    other => other,
                })?;
            step += 1;
            metrics.step(StepRecord {
                epoch,
                step,
                lr,
                total: br.total,
                ce: br.ce,
                triplet: br.triplet,
                center: br.center,
            })?;
        }
        epoch += 1;
        if config.eval_every > 0 && epoch.is_multiple_of(config.eval_every) && epoch < config.total_epochs {
            if let Some(set) = &eval_set {
                let report = set.evaluate(&model, config.eval_max_rank)?;
                metrics.eval(EvalRecord { epoch, step, report })?;
            }
        }
        if config.checkpoint_every > 0 && epoch.is_multiple_of(config.checkpoint_every) {
            save(&model, epoch, step)?;
        }
    }
    if let Some(set) = &eval_set {
        let report = set.evaluate(&model, config.eval_max_rank)?;
        metrics.eval(EvalRecord { epoch, step, report })?;
    }
    save(&model, epoch, step)?;
    Ok(TrainOutcome { model, log: metrics.finish()?, classes })
}

/// One optimizer step on a prepared batch; also moves the class centers.
pub fn train_step(
    model: &mut CanModel,
    adam: &mut AdamState,
    images: &Tensor,
    labels: &BatchLabels,
    loss_cfg: &LossConfig,
    lr: f64,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let x = tape.leaf(images.clone());
    let out = model.forward(&mut tape, x)?;
    let (loss, br) = composite_loss(&mut tape, &out, &model.streams, labels, &model.centers, loss_cfg)?;
    model.store.zero_grads();
    tape.backward(loss, &mut model.store)?;
    adam.step(&mut model.store, lr)?;
    if loss_cfg.use_center {
        for (i, s) in model.streams.iter().enumerate() {
            if loss_cfg.supervises(s) {
                model.centers[i].update(tape.value(out.features[i]), labels, loss_cfg.center_lr)?;
            }
        }
    }
    Ok(br)
}
