use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment_patch, AugmentConfig};
use super::dataset::{Batch, FrameDataset};
use super::eval::frame_outputs;
use super::losses::{loss_action_frame, loss_local, loss_object, LossWeights};
use super::model::{ClassCounts, Generator, ModelConfig};
use super::PipelineError;
use crate::image::Image;
use crate::nn::checkpoint::{load_checkpoint, Metadata};
use crate::nn::{rng, Graph, NnError, Optimizer, OptimizerKind, ParamId, ParamStore, SgdSchedule, Tensor, Var};
use crate::temporal::{loss_action_temporal, TemporalConfig, TemporalModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Local,
    Object,
    Joint,
    Temporal,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Local, Stage::Object, Stage::Joint, Stage::Temporal];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Local => "local",
            Stage::Object => "object",
            Stage::Joint => "joint",
            Stage::Temporal => "temporal",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}` (expected local, object, joint or temporal)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Epochs between learning-rate halvings.
    pub halving_period: usize,
    /// SGD momentum; ignored by Adam.
    pub momentum: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 0.001,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
            halving_period: 50,
            momentum: 0.0,
        }
    }
}

impl StageConfig {
    fn schedule(&self) -> SgdSchedule {
        SgdSchedule {
            base_lr: self.lr,
            halving_period: self.halving_period,
        }
    }

    fn validate(&self, name: &str) -> Result<(), PipelineError> {
        if self.batch_size == 0 || !(self.lr > 0.0 && self.lr.is_finite()) || self.halving_period == 0 {
            return Err(PipelineError::Config(format!(
                "stage {name}: batch_size, lr and halving_period must be positive"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stages {
    pub local: StageConfig,
    pub object: StageConfig,
    pub joint: StageConfig,
    pub temporal: StageConfig,
}

impl Default for Stages {
    fn default() -> Self {
        Self {
            local: StageConfig {
                epochs: 12,
                lr: 0.0004,
                batch_size: 64,
                ..Default::default()
            },
            object: StageConfig {
                epochs: 4,
                lr: 0.0001,
                batch_size: 32,
                ..Default::default()
            },
            joint: StageConfig {
                epochs: 8,
                lr: 0.001,
                batch_size: 64,
                ..Default::default()
            },
            temporal: StageConfig {
                epochs: 30,
                lr: 0.003,
                batch_size: 16,
                ..Default::default()
            },
        }
    }
}

/// Stage section as written in a config file; absent keys keep that
/// stage's own defaults rather than the generic [`StageConfig`] ones.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialStage {
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    optimizer: Option<OptimizerKind>,
    halving_period: Option<usize>,
    momentum: Option<f64>,
}

impl PartialStage {
    fn over(self, mut base: StageConfig) -> StageConfig {
        base.epochs = self.epochs.unwrap_or(base.epochs);
        base.lr = self.lr.unwrap_or(base.lr);
        base.batch_size = self.batch_size.unwrap_or(base.batch_size);
        base.optimizer = self.optimizer.unwrap_or(base.optimizer);
        base.halving_period = self.halving_period.unwrap_or(base.halving_period);
        base.momentum = self.momentum.unwrap_or(base.momentum);
        base
    }
}

impl<'de> Deserialize<'de> for Stages {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            local: Option<PartialStage>,
            object: Option<PartialStage>,
            joint: Option<PartialStage>,
            temporal: Option<PartialStage>,
        }
        let raw = Raw::deserialize(d)?;
        let base = Stages::default();
        let pick = |p: Option<PartialStage>, b: StageConfig| match p {
            Some(p) => p.over(b),
            None => b,
        };
        Ok(Stages {
            local: pick(raw.local, base.local),
            object: pick(raw.object, base.object),
            joint: pick(raw.joint, base.joint),
            temporal: pick(raw.temporal, base.temporal),
        })
    }
}

impl Stages {
    pub fn get(&self, stage: Stage) -> &StageConfig {
        match stage {
            Stage::Local => &self.local,
            Stage::Object => &self.object,
            Stage::Joint => &self.joint,
            Stage::Temporal => &self.temporal,
        }
    }
}

/// Everything that determines a training run besides the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    /// Box jitter of the oracle detector, as a fraction of the frame.
    pub detection_noise: f64,
    pub model: ModelConfig,
    pub temporal: TemporalConfig,
    pub loss: LossWeights,
    pub augment: AugmentConfig,
    pub stages: Stages,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            detection_noise: 0.0,
            model: ModelConfig {
                patch_size: 16,
                feature_width: 64,
                grasp_hidden: 64,
                grasp_embedding: 32,
                curvature_hidden: 64,
                relation_hidden: 32,
                interaction_width: 32,
                mixture_hidden: 128,
                embedding_width: 64,
                dropout: 0.1,
                ..ModelConfig::default()
            },
            temporal: TemporalConfig {
                hidden: 32,
                fc_widths: [32, 32],
                ..TemporalConfig::default()
            },
            loss: LossWeights::default(),
            augment: AugmentConfig::default(),
            stages: Stages::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.model.validate()?;
        self.temporal.validate().map_err(PipelineError::Config)?;
        self.loss.validate().map_err(PipelineError::Config)?;
        if !(0.0..0.5).contains(&self.detection_noise) {
            return Err(PipelineError::Config(format!(
                "detection_noise {} outside [0, 0.5)",
                self.detection_noise
            )));
        }
        for st in Stage::ALL {
            self.stages.get(st).validate(st.as_str())?;
        }
        Ok(())
    }
}

pub const METRICS_HEADER: &str = "stage,epoch,lr,loss,grasp_acc,object_acc,action_acc,curvature_mse";

/// One epoch of training statistics, averaged over its batches.
/// Accuracies that a stage does not measure are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub stage: Stage,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub grasp_acc: Option<f64>,
    pub object_acc: Option<f64>,
    pub action_acc: Option<f64>,
    pub curvature_mse: Option<f64>,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let o = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        format!(
            "{},{},{},{},{},{},{},{}",
            self.stage,
            self.epoch,
            self.lr,
            self.loss,
            o(self.grasp_acc),
            o(self.object_acc),
            o(self.action_acc),
            o(self.curvature_mse)
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{METRICS_HEADER}\n");
        for r in &self.rows {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }

    pub fn stage_rows(&self, stage: Stage) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(move |r| r.stage == stage)
    }
}

/// Running sums for one epoch.
#[derive(Default)]
struct EpochStats {
    loss: f64,
    batches: usize,
    grasp: (usize, usize),
    object: (usize, usize),
    action: (usize, usize),
    sq_err: (f64, f64),
}

impl EpochStats {
    fn hits(counter: &mut (usize, usize), logits: &Tensor, targets: &[usize]) {
        for (p, t) in logits.argmax_rows().into_iter().zip(targets) {
            counter.0 += usize::from(p == *t);
            counter.1 += 1;
        }
    }

    fn row(&self, stage: Stage, epoch: usize, lr: f64) -> MetricsRow {
        let acc = |c: (usize, usize)| (c.1 > 0).then(|| c.0 as f64 / c.1 as f64);
        MetricsRow {
            stage,
            epoch,
            lr,
            loss: self.loss / self.batches.max(1) as f64,
            grasp_acc: acc(self.grasp),
            object_acc: acc(self.object),
            action_acc: acc(self.action),
            curvature_mse: (self.sq_err.1 > 0.0).then(|| self.sq_err.0 / self.sq_err.1),
        }
    }
}

fn non_finite(stage: Stage, epoch: usize) -> impl Fn(NnError) -> PipelineError {
    move |e| match e {
        NnError::NonFinite(detail) | NnError::NonFiniteGradient(detail) => PipelineError::NonFiniteLoss {
            stage: stage.to_string(),
            epoch,
            detail,
        },
        other => PipelineError::Nn(other),
    }
}

fn chw_to_image(data: &[f64], p: usize) -> Image {
    let mut hwc = vec![0.0; data.len()];
    for c in 0..3 {
        for i in 0..p * p {
            hwc[i * 3 + c] = data[c * p * p + i];
        }
    }
    Image::new(p, p, 3, hwc).expect("patch buffer sized by construction")
}

fn augment_batch(batch: &mut Batch, p: usize, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) {
    if !cfg.enabled {
        return;
    }
    for t in [&mut batch.hand, &mut batch.object] {
        let per = 3 * p * p;
        for chunk in t.data_mut().chunks_mut(per) {
            let img = augment_patch(&chw_to_image(chunk, p), cfg, rng);
            chunk.copy_from_slice(&img.to_chw());
        }
    }
}

/// Interior-masked squared error summed over the batch, and the entry count.
fn masked_sums(pred: &Tensor, batch: &Batch) -> (f64, f64) {
    let mut s = 0.0;
    for ((p, t), m) in pred.data().iter().zip(batch.curvature.data()).zip(batch.mask.data()) {
        s += m * (p - t) * (p - t);
    }
    (s, batch.mask.sum())
}

/// Eval-mode frame embeddings of every sample, in dataset order.
pub fn frame_embeddings(gen: &Generator, data: &FrameDataset) -> Result<Vec<Vec<f64>>, PipelineError> {
    Ok(frame_outputs(gen, data)?.into_iter().map(|o| o.embedding).collect())
}

/// Checkpoint metadata that lets [`load_generator`] rebuild the architecture.
pub fn generator_metadata(gen: &Generator, completed: &[Stage]) -> Result<Metadata, PipelineError> {
    let mut m = Metadata::new();
    m.insert("kind".into(), "generator".into());
    m.insert(
        "model".into(),
        toml::to_string(&gen.config).map_err(|e| PipelineError::Config(e.to_string()))?,
    );
    let c = gen.classes;
    m.insert("classes".into(), format!("{},{},{}", c.grasp, c.object, c.action));
    m.insert(
        "stages".into(),
        completed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(","),
    );
    Ok(m)
}

fn parse_classes(s: &str) -> Option<ClassCounts> {
    let v: Vec<usize> = s.split(',').map(|p| p.parse().ok()).collect::<Option<_>>()?;
    match v.as_slice() {
        &[grasp, object, action] => Some(ClassCounts { grasp, object, action }),
        _ => None,
    }
}

fn meta_field<'a>(m: &'a Metadata, key: &str) -> Result<&'a str, PipelineError> {
    m.get(key)
        .map(String::as_str)
        .ok_or_else(|| PipelineError::Nn(NnError::Checkpoint(format!("metadata lacks `{key}`"))))
}

/// Restores a generator and its completed stages from a checkpoint file.
pub fn load_generator(path: &Path) -> Result<(Generator, Vec<Stage>), PipelineError> {
    let (store, meta) = load_checkpoint(path)?;
    if meta_field(&meta, "kind")? != "generator" {
        return Err(NnError::Checkpoint(format!("{} is not a generator checkpoint", path.display())).into());
    }
    let config: ModelConfig =
        toml::from_str(meta_field(&meta, "model")?).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let classes = parse_classes(meta_field(&meta, "classes")?)
        .ok_or_else(|| NnError::Checkpoint("bad `classes` metadata".into()))?;
    let stages = meta_field(&meta, "stages")?
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<Stage>().map_err(|e| NnError::Checkpoint(e).into()))
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let mut gen = Generator::new(&config, classes, &mut rng(0))?;
    gen.store.load_values(&store)?;
    Ok((gen, stages))
}

/// Metadata for a temporal-model checkpoint.
pub fn temporal_metadata(model: &TemporalModel) -> Result<Metadata, PipelineError> {
    let mut m = Metadata::new();
    m.insert("kind".into(), "temporal".into());
    m.insert(
        "temporal".into(),
        toml::to_string(&model.config).map_err(|e| PipelineError::Config(e.to_string()))?,
    );
    m.insert("input_width".into(), model.input_width.to_string());
    m.insert("n_actions".into(), model.n_actions.to_string());
    Ok(m)
}

pub fn load_temporal(path: &Path) -> Result<TemporalModel, PipelineError> {
    let (store, meta) = load_checkpoint(path)?;
    if meta_field(&meta, "kind")? != "temporal" {
        return Err(NnError::Checkpoint(format!("{} is not a temporal checkpoint", path.display())).into());
    }
    let cfg: TemporalConfig =
        toml::from_str(meta_field(&meta, "temporal")?).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let num = |k: &str| -> Result<usize, PipelineError> {
        meta_field(&meta, k)?
            .parse()
            .map_err(|_| NnError::Checkpoint(format!("bad `{k}` metadata")).into())
    };
    let mut model =
        TemporalModel::new(&cfg, num("input_width")?, num("n_actions")?, &mut rng(0)).map_err(PipelineError::Config)?;
    model.store.load_values(&store)?;
    Ok(model)
}

/// Runs the training stages in order and records per-epoch metrics.
pub struct Trainer {
    pub config: TrainConfig,
    pub generator: Generator,
    pub temporal: Option<TemporalModel>,
    pub completed: Vec<Stage>,
    pub log: MetricsLog,
}

/// Index of a stage in the seed derivation; keeps streams apart.
fn stage_stream(stage: Stage) -> u64 {
    match stage {
        Stage::Local => 11,
        Stage::Object => 12,
        Stage::Joint => 13,
        Stage::Temporal => 14,
    }
}

impl Trainer {
    pub fn new(config: TrainConfig, classes: ClassCounts) -> Result<Self, PipelineError> {
        config.validate()?;
        let generator = Generator::new(&config.model, classes, &mut rng(config.seed))?;
        Ok(Self {
            config,
            generator,
            temporal: None,
            completed: Vec::new(),
            log: MetricsLog::default(),
        })
    }

    /// Continues from an existing generator, e.g. one loaded from disk.
    pub fn resume(config: TrainConfig, generator: Generator, completed: Vec<Stage>) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self {
            config,
            generator,
            temporal: None,
            completed,
            log: MetricsLog::default(),
        })
    }

    fn stage_rng(&self, stage: Stage) -> ChaCha8Rng {
        let mut r = rng(self.config.seed);
        r.set_stream(stage_stream(stage));
        r
    }

    pub fn run_stage(&mut self, stage: Stage, data: &FrameDataset) -> Result<(), PipelineError> {
        if data.is_empty() {
            return Err(PipelineError::Dataset("no training frames".into()));
        }
        match stage {
            Stage::Temporal => {
                if !self.completed.contains(&Stage::Joint) {
                    return Err(PipelineError::MissingStage {
                        needed: Stage::Joint.to_string(),
                        requested: stage.to_string(),
                    });
                }
                self.train_temporal(data)?;
            }
            Stage::Local if !self.completed.contains(&Stage::Local) => {
                self.generator.init_curvature_bias(&data.curvature_mean())?;
                self.train_generator_stage(stage, data)?;
            }
            _ => self.train_generator_stage(stage, data)?,
        }
        if !self.completed.contains(&stage) {
            self.completed.push(stage);
        }
        Ok(())
    }

    fn train_generator_stage(&mut self, stage: Stage, data: &FrameDataset) -> Result<(), PipelineError> {
        let sc = self.config.stages.get(stage).clone();
        let ids: Vec<ParamId> = match stage {
            Stage::Local => self.generator.local_params(),
            Stage::Object => self.generator.object_params(),
            _ => self.generator.all_params(),
        };
        let mut opt = Optimizer::new(sc.optimizer, &self.generator.store, &ids, sc.schedule(), sc.momentum);
        let mut r = self.stage_rng(stage);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let w = self.config.loss;
        let p = self.config.model.patch_size;
        for epoch in 0..sc.epochs {
            order.shuffle(&mut r);
            let mut stats = EpochStats::default();
            for idx in order.chunks(sc.batch_size) {
                let mut batch = data.batch(idx);
                augment_batch(&mut batch, p, &self.config.augment, &mut r);
                let dropout_seed: u64 = r.random();
                let gen = &self.generator;
                let mut g = Graph::new(&gen.store, true, rng(dropout_seed));
                let loss = Self::generator_loss(gen, &mut g, stage, &batch, &w, &mut stats)
                    .map_err(non_finite(stage, epoch))?;
                stats.loss += g.value(loss).item();
                stats.batches += 1;
                let grads = g.backward(loss).map_err(non_finite(stage, epoch))?;
                drop(g);
                self.generator.store.accumulate(&grads);
                opt.step(&mut self.generator.store, &ids, epoch)
                    .map_err(non_finite(stage, epoch))?;
            }
            self.log.rows.push(stats.row(stage, epoch, opt.lr(epoch)));
        }
        Ok(())
    }

    fn generator_loss(
        gen: &Generator,
        g: &mut Graph,
        stage: Stage,
        batch: &Batch,
        w: &LossWeights,
        stats: &mut EpochStats,
    ) -> Result<Var, NnError> {
        let local_loss = |g: &mut Graph, out: &super::model::LocalOutput, stats: &mut EpochStats| {
            EpochStats::hits(&mut stats.grasp, g.value(out.grasp_logits), &batch.grasp);
            if let Some(c) = out.curvature {
                let (s, n) = masked_sums(g.value(c), batch);
                stats.sq_err.0 += s;
                stats.sq_err.1 += n;
            }
            let curv = out.curvature.map(|c| (c, &batch.curvature, &batch.mask));
            loss_local(g, out.grasp_logits, &batch.grasp, curv, w)
        };
        match stage {
            Stage::Local => {
                let out = gen.forward_local(g, &batch.hand)?;
                local_loss(g, &out, stats)
            }
            Stage::Object => {
                let (logits, _) = gen.forward_object(g, &batch.object)?;
                EpochStats::hits(&mut stats.object, g.value(logits), &batch.object_ids);
                loss_object(g, logits, &batch.object_ids)
            }
            _ => {
                let out = gen.forward(g, &batch.input())?;
                let l_local = local_loss(g, &out.local, stats)?;
                EpochStats::hits(&mut stats.object, g.value(out.object_logits), &batch.object_ids);
                let l_object = loss_object(g, out.object_logits, &batch.object_ids)?;
                EpochStats::hits(&mut stats.action, g.value(out.action_logits), &batch.actions);
                loss_action_frame(g, out.action_logits, &batch.actions, l_object, l_local, w)
            }
        }
    }

    /// Trains the temporal model on frozen, eval-mode frame embeddings.
    fn train_temporal(&mut self, data: &FrameDataset) -> Result<(), PipelineError> {
        let stage = Stage::Temporal;
        let sc = self.config.stages.temporal.clone();
        let embeddings = frame_embeddings(&self.generator, data)?;
        let width = self.generator.config.embedding_width;
        let mut r = self.stage_rng(stage);
        let mut model = TemporalModel::new(&self.config.temporal, width, self.generator.classes.action, &mut r)
            .map_err(PipelineError::Config)?;
        let ids = model.params();
        let mut opt = Optimizer::new(sc.optimizer, &model.store, &ids, sc.schedule(), sc.momentum);

        // Episodes of equal length share batches.
        let mut by_len: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, ep) in data.episodes.iter().enumerate() {
            by_len.entry(ep.len).or_default().push(i);
        }
        for epoch in 0..sc.epochs {
            let mut stats = EpochStats::default();
            let mut batches: Vec<Vec<usize>> = Vec::new();
            for eps in by_len.values() {
                let mut eps = eps.clone();
                eps.shuffle(&mut r);
                batches.extend(eps.chunks(sc.batch_size).map(<[usize]>::to_vec));
            }
            batches.shuffle(&mut r);
            for b in &batches {
                let len = data.episodes[b[0]].len;
                let targets: Vec<usize> = b.iter().map(|&e| data.episodes[e].action).collect();
                let mut g = Graph::new(&model.store, true, rng(0));
                let seq = (0..len)
                    .map(|t| {
                        let mut rows = Vec::with_capacity(b.len() * width);
                        for &e in b {
                            rows.extend_from_slice(&embeddings[data.episodes[e].start + t]);
                        }
                        Tensor::new(&[b.len(), width], rows).map(|x| g.input(x))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let (steps, video) = model.forward(&mut g, &seq).map_err(non_finite(stage, epoch))?;
                EpochStats::hits(&mut stats.action, g.value(video), &targets);
                let loss = loss_action_temporal(&mut g, &steps, video, &targets).map_err(non_finite(stage, epoch))?;
                stats.loss += g.value(loss).item();
                stats.batches += 1;
                let grads = g.backward(loss).map_err(non_finite(stage, epoch))?;
                drop(g);
                model.store.accumulate(&grads);
                opt.step(&mut model.store, &ids, epoch)
                    .map_err(non_finite(stage, epoch))?;
            }
            self.log.rows.push(stats.row(stage, epoch, opt.lr(epoch)));
        }
        self.temporal = Some(model);
        Ok(())
    }

    /// Snapshot of the generator parameters.
    pub fn generator_store(&self) -> &ParamStore {
        &self.generator.store
    }
}
