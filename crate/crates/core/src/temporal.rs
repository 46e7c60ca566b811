//! Sequence-level action classification over frame embeddings.
//!
//! A stacked bidirectional GRU produces per-step states. A linear head turns
//! each state into per-frame action logits; the states are also mean-pooled
//! over time and passed through a three-layer fully-connected head that
//! gives the video logits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{argmax, BiGru, Graph, Linear, NnError, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalConfig {
    pub layers: usize,
    pub hidden: usize,
    /// Widths of the two hidden aggregation layers; a third, linear layer
    /// maps to the action logits.
    pub fc_widths: [usize; 2],
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 256,
            fc_widths: [128, 64],
        }
    }
}

impl TemporalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.layers == 0 || self.hidden == 0 || self.fc_widths.contains(&0) {
            return Err(format!(
                "temporal layers, hidden and fc widths must be positive: {self:?}"
            ));
        }
        Ok(())
    }
}

/// Per-frame and video logits for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodePrediction {
    /// `[N, C_a]`.
    pub frame_logits: Tensor,
    pub video_logits: Vec<f64>,
}

impl EpisodePrediction {
    pub fn video_action(&self) -> usize {
        argmax(&self.video_logits)
    }
}

#[derive(Debug, Clone)]
pub struct TemporalModel {
    pub config: TemporalConfig,
    pub input_width: usize,
    pub n_actions: usize,
    pub store: ParamStore,
    pub gru: BiGru,
    pub step_head: Linear,
    pub fc: [Linear; 3],
}

impl TemporalModel {
    pub fn new<R: Rng>(
        config: &TemporalConfig,
        input_width: usize,
        n_actions: usize,
        rng: &mut R,
    ) -> Result<Self, String> {
        config.validate()?;
        let mut store = ParamStore::new();
        let h2 = 2 * config.hidden;
        let gru = BiGru::new(
            &mut store,
            "temporal.gru",
            input_width,
            config.hidden,
            config.layers,
            rng,
        );
        let step_head = Linear::new(&mut store, "temporal.step", h2, n_actions, rng);
        let [w1, w2] = config.fc_widths;
        let fc = [
            Linear::new(&mut store, "temporal.fc1", h2, w1, rng),
            Linear::new(&mut store, "temporal.fc2", w1, w2, rng),
            Linear::new(&mut store, "temporal.fc3", w2, n_actions, rng),
        ];
        Ok(Self {
            config: config.clone(),
            input_width,
            n_actions,
            store,
            gru,
            step_head,
            fc,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }

    /// `seq[t]` is `[B, input_width]`. Returns per-step logits and video logits.
    pub fn forward(&self, g: &mut Graph, seq: &[Var]) -> Result<(Vec<Var>, Var), NnError> {
        let states = self.gru.forward(g, seq)?;
        let steps = states
            .iter()
            .map(|&s| self.step_head.forward(g, s))
            .collect::<Result<Vec<_>, _>>()?;
        let pooled = g.mean_of(&states)?;
        let h = self.fc[0].forward_relu(g, pooled)?;
        let h = self.fc[1].forward_relu(g, h)?;
        let video = self.fc[2].forward(g, h)?;
        Ok((steps, video))
    }

    /// Eval-mode prediction for one episode given its frame embeddings.
    pub fn predict(&self, embeddings: &[Vec<f64>]) -> Result<EpisodePrediction, NnError> {
        if embeddings.is_empty() {
            return Err(NnError::EmptySequence);
        }
        let mut g = Graph::new(&self.store, false, crate::nn::rng(0));
        let seq = embeddings
            .iter()
            .map(|e| Tensor::new(&[1, e.len()], e.clone()).map(|t| g.input(t)))
            .collect::<Result<Vec<_>, _>>()?;
        let (steps, video) = self.forward(&mut g, &seq)?;
        let mut frame = Vec::with_capacity(steps.len() * self.n_actions);
        for s in &steps {
            frame.extend_from_slice(g.value(*s).data());
        }
        Ok(EpisodePrediction {
            frame_logits: Tensor::new(&[steps.len(), self.n_actions], frame)?,
            video_logits: g.value(video).data().to_vec(),
        })
    }
}

/// `(1/N)·Σ_t CE(step_t, y) + CE(video, y)`, averaged over the batch.
pub fn loss_action_temporal(g: &mut Graph, steps: &[Var], video: Var, targets: &[usize]) -> Result<Var, NnError> {
    if steps.is_empty() {
        return Err(NnError::EmptySequence);
    }
    let per_step = steps
        .iter()
        .map(|&s| g.softmax_cross_entropy(s, targets))
        .collect::<Result<Vec<_>, _>>()?;
    let frame_term = g.mean_of(&per_step)?;
    let frame_term = g.mean(frame_term)?;
    let video_ce = g.softmax_cross_entropy(video, targets)?;
    let video_term = g.mean(video_ce)?;
    g.weighted_sum(&[(frame_term, 1.0), (video_term, 1.0)])
}

/// Argmax of the video logits.
pub fn predict_video(model: &TemporalModel, embeddings: &[Vec<f64>]) -> Result<usize, NnError> {
    Ok(model.predict(embeddings)?.video_action())
}
