use super::dataset::FrameDataset;
use super::model::Generator;
use super::PipelineError;
use crate::nn::{rng, Graph};
use crate::temporal::TemporalModel;

/// Frames per forward pass during evaluation.
const EVAL_CHUNK: usize = 256;

/// Eval-mode outputs of the generator for one frame.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FrameOutput {
    pub grasp: usize,
    pub object: usize,
    pub action: usize,
    pub curvature: Option<Vec<f64>>,
    pub embedding: Vec<f64>,
}

pub(crate) fn frame_outputs(gen: &Generator, data: &FrameDataset) -> Result<Vec<FrameOutput>, PipelineError> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let batch = data.batch(chunk);
        let mut g = Graph::new(&gen.store, false, rng(0));
        let o = gen.forward(&mut g, &batch.input())?;
        let grasp = g.value(o.local.grasp_logits).argmax_rows();
        let object = g.value(o.object_logits).argmax_rows();
        let action = g.value(o.action_logits).argmax_rows();
        let emb = g.value(o.embedding);
        for r in 0..chunk.len() {
            out.push(FrameOutput {
                grasp: grasp[r],
                object: object[r],
                action: action[r],
                curvature: o.local.curvature.map(|c| g.value(c).row(r).to_vec()),
                embedding: emb.row(r).to_vec(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_episodes: usize,
    pub n_frames: usize,
    /// Top-1 video accuracy of the temporal model, when one is given.
    pub video_accuracy: Option<f64>,
    /// Per-frame accuracy of the mixture network's action head.
    pub frame_action_accuracy: f64,
    pub grasp_accuracy: f64,
    pub object_accuracy: f64,
    pub curvature_mse: Option<f64>,
    /// `1 − SSE/SST` over interior vertices, SST about each vertex's mean.
    pub curvature_r2: Option<f64>,
    /// `[true][predicted]` video counts (frame counts without a temporal model).
    pub action_confusion: Vec<Vec<usize>>,
    pub grasp_confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        format!(
            "metric,value\nepisodes,{}\nframes,{}\nvideo_accuracy,{}\nframe_action_accuracy,{}\n\
             grasp_accuracy,{}\nobject_accuracy,{}\ncurvature_mse,{}\ncurvature_r2,{}\n",
            self.n_episodes,
            self.n_frames,
            opt(self.video_accuracy),
            self.frame_action_accuracy,
            self.grasp_accuracy,
            self.object_accuracy,
            opt(self.curvature_mse),
            opt(self.curvature_r2),
        )
    }
}

/// Confusion matrix as CSV with rows `true_<i>` and columns `pred_<j>`.
pub fn confusion_csv(m: &[Vec<usize>]) -> String {
    let n = m.len();
    let mut s = String::from("true");
    for j in 0..n {
        s.push_str(&format!(",pred_{j}"));
    }
    s.push('\n');
    for (i, row) in m.iter().enumerate() {
        s.push_str(&format!("true_{i}"));
        for c in row {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
    }
    s
}

fn accuracy(pairs: impl Iterator<Item = (usize, usize)>) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for (a, b) in pairs {
        hit += usize::from(a == b);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}

/// Scores a generator, and optionally a temporal model, on a dataset.
/// Neither model is modified.
pub fn evaluate(
    gen: &Generator,
    temporal: Option<&TemporalModel>,
    data: &FrameDataset,
) -> Result<EvalReport, PipelineError> {
    let outs = frame_outputs(gen, data)?;
    let s = &data.samples;
    let c = gen.classes;
    let mut grasp_confusion = vec![vec![0; c.grasp]; c.grasp];
    for (o, t) in outs.iter().zip(s) {
        grasp_confusion[t.grasp][o.grasp] += 1;
    }
    let mut action_confusion = vec![vec![0; c.action]; c.action];
    let video_accuracy = match temporal {
        Some(model) => {
            let mut pairs = Vec::with_capacity(data.episodes.len());
            for ep in &data.episodes {
                let emb: Vec<Vec<f64>> = outs[ep.start..ep.start + ep.len]
                    .iter()
                    .map(|o| o.embedding.clone())
                    .collect();
                let pred = model.predict(&emb)?.video_action();
                action_confusion[ep.action][pred] += 1;
                pairs.push((ep.action, pred));
            }
            Some(accuracy(pairs.into_iter()))
        }
        None => {
            for (o, t) in outs.iter().zip(s) {
                action_confusion[t.action][o.action] += 1;
            }
            None
        }
    };

    let (curvature_mse, curvature_r2) = if gen.config.curvature.kind().is_some() && !s.is_empty() {
        let width = s[0].curvature.len();
        let mut mean = vec![0.0; width];
        for t in s {
            for (m, v) in mean.iter_mut().zip(&t.curvature) {
                *m += v / s.len() as f64;
            }
        }
        let (mut sse, mut sst, mut n) = (0.0, 0.0, 0usize);
        for (o, t) in outs.iter().zip(s) {
            let pred = o.curvature.as_ref().expect("curvature head present");
            for d in 0..width {
                if t.mask[d] > 0.0 {
                    sse += (pred[d] - t.curvature[d]).powi(2);
                    sst += (t.curvature[d] - mean[d]).powi(2);
                    n += 1;
                }
            }
        }
        let r2 = if sst > 0.0 { Some(1.0 - sse / sst) } else { None };
        (Some(sse / n.max(1) as f64), r2)
    } else {
        (None, None)
    };

    Ok(EvalReport {
        n_episodes: data.episodes.len(),
        n_frames: s.len(),
        video_accuracy,
        frame_action_accuracy: accuracy(outs.iter().zip(s).map(|(o, t)| (o.action, t.action))),
        grasp_accuracy: accuracy(outs.iter().zip(s).map(|(o, t)| (o.grasp, t.grasp))),
        object_accuracy: accuracy(outs.iter().zip(s).map(|(o, t)| (o.object, t.object_id))),
        curvature_mse,
        curvature_r2,
        action_confusion,
        grasp_confusion,
    })
}
