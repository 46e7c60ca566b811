//! The frame-embedding generator and its sub-networks.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::detection::GLOBAL_WIDTH;
use crate::mesh::CurvatureKind;
use crate::nn::{Conv2d, Graph, Linear, NnError, ParamId, ParamStore, Var};
use crate::synth::meshes::TEMPLATE_VERTICES;

/// Curvature field regressed by the local network, or none at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurvatureVariant {
    None,
    Mean,
    Gaussian,
    Max,
    Min,
}

impl CurvatureVariant {
    pub const ALL: [CurvatureVariant; 5] = [
        CurvatureVariant::Mean,
        CurvatureVariant::Gaussian,
        CurvatureVariant::Max,
        CurvatureVariant::Min,
        CurvatureVariant::None,
    ];

    pub fn kind(self) -> Option<CurvatureKind> {
        match self {
            CurvatureVariant::None => None,
            CurvatureVariant::Mean => Some(CurvatureKind::Mean),
            CurvatureVariant::Gaussian => Some(CurvatureKind::Gaussian),
            CurvatureVariant::Max => Some(CurvatureKind::Maximum),
            CurvatureVariant::Min => Some(CurvatureKind::Minimum),
        }
    }

    pub fn as_str(self) -> &'static str {
        self.kind().map_or("none", CurvatureKind::as_str)
    }
}

impl fmt::Display for CurvatureVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CurvatureVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("none") {
            return Ok(CurvatureVariant::None);
        }
        match s.parse::<CurvatureKind>().map_err(|e| e.to_string())? {
            CurvatureKind::Mean => Ok(CurvatureVariant::Mean),
            CurvatureKind::Gaussian => Ok(CurvatureVariant::Gaussian),
            CurvatureKind::Maximum => Ok(CurvatureVariant::Max),
            CurvatureKind::Minimum => Ok(CurvatureVariant::Min),
        }
    }
}

/// Layer widths of the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Side of the square hand and object patches.
    pub patch_size: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    /// Backbone output width.
    pub feature_width: usize,
    pub grasp_hidden: usize,
    /// Width of the grasp head's penultimate activation.
    pub grasp_embedding: usize,
    pub curvature_hidden: usize,
    pub relation_hidden: usize,
    pub interaction_width: usize,
    pub object_embedding: usize,
    pub mixture_hidden: usize,
    pub embedding_width: usize,
    pub dropout: f64,
    pub curvature: CurvatureVariant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_size: 32,
            conv1_channels: 8,
            conv2_channels: 16,
            feature_width: 128,
            grasp_hidden: 128,
            grasp_embedding: 64,
            curvature_hidden: 128,
            relation_hidden: 64,
            interaction_width: 64,
            object_embedding: 256,
            mixture_hidden: 256,
            embedding_width: 256,
            dropout: 0.3,
            curvature: CurvatureVariant::Mean,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.patch_size < 4 || !self.patch_size.is_multiple_of(4) {
            return Err(PipelineError::Config(format!(
                "patch_size {} must be a positive multiple of 4",
                self.patch_size
            )));
        }
        let widths = [
            self.conv1_channels,
            self.conv2_channels,
            self.feature_width,
            self.grasp_hidden,
            self.grasp_embedding,
            self.curvature_hidden,
            self.relation_hidden,
            self.interaction_width,
            self.object_embedding,
            self.mixture_hidden,
            self.embedding_width,
        ];
        if widths.contains(&0) {
            return Err(PipelineError::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(PipelineError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Class counts: grasp types, object classes, actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub grasp: usize,
    pub object: usize,
    pub action: usize,
}

/// conv 3×3 stride 2 → relu → conv 3×3 → relu → 2×2 average pool → linear → relu.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub fc: Linear,
    pub patch_size: usize,
}

impl Backbone {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        let pooled = cfg.patch_size / 4;
        Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), 3, cfg.conv1_channels, 3, 2, 1, rng),
            conv2: Conv2d::new(
                store,
                &format!("{name}.conv2"),
                cfg.conv1_channels,
                cfg.conv2_channels,
                3,
                1,
                1,
                rng,
            ),
            fc: Linear::new(
                store,
                &format!("{name}.fc"),
                cfg.conv2_channels * pooled * pooled,
                cfg.feature_width,
                rng,
            ),
            patch_size: cfg.patch_size,
        }
    }

    /// `x: [B, 3, P, P]` → `[B, feature_width]`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let h = self.conv1.forward(g, x)?;
        let h = g.relu(h)?;
        let h = self.conv2.forward(g, h)?;
        let h = g.relu(h)?;
        let h = g.avg_pool2(h)?;
        let b = g.value(h).shape()[0];
        let flat = g.value(h).len() / b.max(1);
        let h = g.reshape(h, &[b, flat])?;
        self.fc.forward_relu(g, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![
            self.conv1.w,
            self.conv1.b,
            self.conv2.w,
            self.conv2.b,
            self.fc.w,
            self.fc.b,
        ]
    }
}

/// Grasp head plus the optional curvature head.
#[derive(Debug, Clone)]
pub struct LocalNet {
    pub grasp1: Linear,
    pub grasp2: Linear,
    pub grasp_out: Linear,
    pub curvature: Option<(Linear, Linear)>,
}

pub struct LocalOutput {
    pub grasp_logits: Var,
    pub curvature: Option<Var>,
    pub grasp_embedding: Var,
}

impl LocalNet {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, n_grasp: usize, rng: &mut R) -> Self {
        let curvature = cfg.curvature.kind().map(|_| {
            (
                Linear::new(
                    store,
                    "local.curv1",
                    cfg.feature_width + cfg.grasp_embedding,
                    cfg.curvature_hidden,
                    rng,
                ),
                Linear::new(store, "local.curv_out", cfg.curvature_hidden, TEMPLATE_VERTICES, rng),
            )
        });
        Self {
            grasp1: Linear::new(store, "local.grasp1", cfg.feature_width, cfg.grasp_hidden, rng),
            grasp2: Linear::new(store, "local.grasp2", cfg.grasp_hidden, cfg.grasp_embedding, rng),
            grasp_out: Linear::new(store, "local.grasp_out", cfg.grasp_embedding, n_grasp, rng),
            curvature,
        }
    }

    pub fn forward(&self, g: &mut Graph, hand_feature: Var) -> Result<LocalOutput, NnError> {
        let h = self.grasp1.forward_relu(g, hand_feature)?;
        let emb = self.grasp2.forward_relu(g, h)?;
        let logits = self.grasp_out.forward(g, emb)?;
        let curvature = match &self.curvature {
            Some((c1, c2)) => {
                let x = g.concat(&[hand_feature, emb])?;
                let h = c1.forward_relu(g, x)?;
                Some(c2.forward(g, h)?)
            }
            None => None,
        };
        Ok(LocalOutput {
            grasp_logits: logits,
            curvature,
            grasp_embedding: emb,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![
            self.grasp1.w,
            self.grasp1.b,
            self.grasp2.w,
            self.grasp2.b,
            self.grasp_out.w,
            self.grasp_out.b,
        ];
        if let Some((c1, c2)) = &self.curvature {
            p.extend([c1.w, c1.b, c2.w, c2.b]);
        }
        p
    }
}

/// Hand/object features → interaction embedding.
#[derive(Debug, Clone)]
pub struct RelationNet {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl RelationNet {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        Self {
            fc1: Linear::new(store, "relation.fc1", 2 * cfg.feature_width, cfg.relation_hidden, rng),
            fc2: Linear::new(store, "relation.fc2", cfg.relation_hidden, cfg.interaction_width, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, hand: Var, object: Var) -> Result<Var, NnError> {
        let x = g.concat(&[hand, object])?;
        let h = self.fc1.forward_relu(g, x)?;
        self.fc2.forward_relu(g, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.fc1.w, self.fc1.b, self.fc2.w, self.fc2.b]
    }
}

/// Object embedding tap plus classifier.
#[derive(Debug, Clone)]
pub struct ObjectNet {
    pub embed: Linear,
    pub out: Linear,
}

impl ObjectNet {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, n_objects: usize, rng: &mut R) -> Self {
        Self {
            embed: Linear::new(store, "object.embed", cfg.feature_width, cfg.object_embedding, rng),
            out: Linear::new(store, "object.out", cfg.object_embedding, n_objects, rng),
        }
    }

    /// Returns `(logits, embedding)`.
    pub fn forward(&self, g: &mut Graph, feature: Var) -> Result<(Var, Var), NnError> {
        let emb = self.embed.forward_relu(g, feature)?;
        Ok((self.out.forward(g, emb)?, emb))
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.embed.w, self.embed.b, self.out.w, self.out.b]
    }
}

/// Concatenated local, object, and global inputs → frame embedding and action logits.
#[derive(Debug, Clone)]
pub struct MixtureNet {
    pub fc1: Linear,
    pub fc2: Linear,
    pub fc3: Linear,
    pub action: Linear,
    pub dropout: f64,
    pub input_width: usize,
}

impl MixtureNet {
    pub fn input_width(cfg: &ModelConfig) -> usize {
        let curv = if cfg.curvature.kind().is_some() {
            TEMPLATE_VERTICES
        } else {
            0
        };
        cfg.grasp_embedding + curv + cfg.interaction_width + cfg.object_embedding + GLOBAL_WIDTH
    }

    pub fn new<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, n_actions: usize, rng: &mut R) -> Self {
        let input_width = Self::input_width(cfg);
        Self {
            fc1: Linear::new(store, "mixture.fc1", input_width, cfg.mixture_hidden, rng),
            fc2: Linear::new(store, "mixture.fc2", cfg.mixture_hidden, cfg.mixture_hidden, rng),
            fc3: Linear::new(store, "mixture.fc3", cfg.mixture_hidden, cfg.embedding_width, rng),
            action: Linear::new(store, "mixture.action", cfg.embedding_width, n_actions, rng),
            dropout: cfg.dropout,
            input_width,
        }
    }

    /// `parts` in canonical order: grasp embedding, curvature (if any),
    /// interaction embedding, object embedding, global feature.
    /// Returns `(embedding, action_logits)`.
    pub fn forward(&self, g: &mut Graph, parts: &[Var]) -> Result<(Var, Var), NnError> {
        let x = g.concat(parts)?;
        let width = g.value(x).row_len();
        if width != self.input_width {
            return Err(NnError::ShapeMismatch(format!(
                "mixture input width {width}, expected {}",
                self.input_width
            )));
        }
        let h = self.fc1.forward_relu(g, x)?;
        let h = g.dropout(h, self.dropout)?;
        let h = self.fc2.forward_relu(g, h)?;
        let h = g.dropout(h, self.dropout)?;
        let emb = self.fc3.forward_relu(g, h)?;
        let logits = self.action.forward(g, emb)?;
        Ok((emb, logits))
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![
            self.fc1.w,
            self.fc1.b,
            self.fc2.w,
            self.fc2.b,
            self.fc3.w,
            self.fc3.b,
            self.action.w,
            self.action.b,
        ]
    }
}

/// Inputs for a batch of frames.
pub struct BatchInput<'a> {
    /// `[B·3·P·P]` channel-major hand patches.
    pub hand: &'a crate::nn::Tensor,
    pub object: &'a crate::nn::Tensor,
    /// 1 where the frame has an object, 0 otherwise; `[B, 1]`.
    pub object_present: &'a crate::nn::Tensor,
    pub global: &'a crate::nn::Tensor,
}

pub struct GeneratorOutput {
    pub local: LocalOutput,
    pub object_logits: Var,
    pub embedding: Var,
    pub action_logits: Var,
}

/// The full frame-embedding generator. All parameters live in one store.
#[derive(Debug, Clone)]
pub struct Generator {
    pub config: ModelConfig,
    pub classes: ClassCounts,
    pub store: ParamStore,
    pub hand_backbone: Backbone,
    pub object_backbone: Backbone,
    pub local: LocalNet,
    pub relation: RelationNet,
    pub object: ObjectNet,
    pub mixture: MixtureNet,
}

impl Generator {
    pub fn new<R: Rng>(config: &ModelConfig, classes: ClassCounts, rng: &mut R) -> Result<Self, PipelineError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let hand_backbone = Backbone::new(&mut store, "hand", config, rng);
        let object_backbone = Backbone::new(&mut store, "object_backbone", config, rng);
        let local = LocalNet::new(&mut store, config, classes.grasp, rng);
        let relation = RelationNet::new(&mut store, config, rng);
        let object = ObjectNet::new(&mut store, config, classes.object, rng);
        let mixture = MixtureNet::new(&mut store, config, classes.action, rng);
        Ok(Self {
            config: config.clone(),
            classes,
            store,
            hand_backbone,
            object_backbone,
            local,
            relation,
            object,
            mixture,
        })
    }

    /// Sets the curvature output bias to `mean`, typically the per-vertex
    /// training-set mean, so the head starts from the average field.
    pub fn init_curvature_bias(&mut self, mean: &[f64]) -> Result<(), PipelineError> {
        let Some((_, out)) = &self.local.curvature else {
            return Ok(());
        };
        let b = self.store.get_mut(out.b);
        if b.value.len() != mean.len() {
            return Err(PipelineError::Config(format!(
                "curvature bias has {} entries, mean has {}",
                b.value.len(),
                mean.len()
            )));
        }
        b.value.data_mut().copy_from_slice(mean);
        Ok(())
    }

    /// Parameters trained on the local loss.
    pub fn local_params(&self) -> Vec<ParamId> {
        let mut p = self.hand_backbone.params();
        p.extend(self.local.params());
        p
    }

    /// Parameters trained on the object loss.
    pub fn object_params(&self) -> Vec<ParamId> {
        let mut p = self.object_backbone.params();
        p.extend(self.object.params());
        p
    }

    pub fn all_params(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }

    fn patches(&self, g: &mut Graph, data: &crate::nn::Tensor) -> Result<Var, NnError> {
        let p = self.config.patch_size;
        let per = 3 * p * p;
        if !data.len().is_multiple_of(per) {
            return Err(NnError::ShapeMismatch(format!(
                "patch buffer of {} values is not a multiple of 3x{p}x{p}",
                data.len()
            )));
        }
        let t = data.clone().reshape(&[data.len() / per, 3, p, p])?;
        Ok(g.input(t))
    }

    pub fn hand_feature(&self, g: &mut Graph, hand: &crate::nn::Tensor) -> Result<Var, NnError> {
        let x = self.patches(g, hand)?;
        self.hand_backbone.forward(g, x)
    }

    pub fn object_feature(&self, g: &mut Graph, object: &crate::nn::Tensor) -> Result<Var, NnError> {
        let x = self.patches(g, object)?;
        self.object_backbone.forward(g, x)
    }

    /// Local network only.
    pub fn forward_local(&self, g: &mut Graph, hand: &crate::nn::Tensor) -> Result<LocalOutput, NnError> {
        let f = self.hand_feature(g, hand)?;
        self.local.forward(g, f)
    }

    /// Object network only; returns `(logits, embedding)`.
    pub fn forward_object(&self, g: &mut Graph, object: &crate::nn::Tensor) -> Result<(Var, Var), NnError> {
        let f = self.object_feature(g, object)?;
        self.object.forward(g, f)
    }

    /// Everything: local, relation, object, and mixture networks.
    pub fn forward(&self, g: &mut Graph, input: &BatchInput<'_>) -> Result<GeneratorOutput, NnError> {
        let hand = self.hand_feature(g, input.hand)?;
        let obj_raw = self.object_feature(g, input.object)?;
        let present = g.input(input.object_present.clone());
        let present = broadcast_cols(g, present, self.config.feature_width)?;
        let obj = g.mul(obj_raw, present)?;
        let local = self.local.forward(g, hand)?;
        let interaction = self.relation.forward(g, hand, obj)?;
        let (object_logits, object_emb) = self.object.forward(g, obj)?;
        let global = g.input(input.global.clone());
        let mut parts = vec![local.grasp_embedding];
        parts.extend(local.curvature);
        parts.extend([interaction, object_emb, global]);
        let (embedding, action_logits) = self.mixture.forward(g, &parts)?;
        Ok(GeneratorOutput {
            local,
            object_logits,
            embedding,
            action_logits,
        })
    }
}

/// Repeats a `[B, 1]` column `width` times as a constant input.
fn broadcast_cols(g: &mut Graph, col: Var, width: usize) -> Result<Var, NnError> {
    let t = g.value(col);
    let data: Vec<f64> = t.data().iter().flat_map(|&v| std::iter::repeat_n(v, width)).collect();
    let out = crate::nn::Tensor::new(&[t.rows(), width], data)?;
    Ok(g.input(out))
}
