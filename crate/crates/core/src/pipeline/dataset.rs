use std::collections::BTreeMap;

use super::model::BatchInput;
use super::PipelineError;
use crate::detection::{crop_and_resize, global_feature, oracle_detect, resolve_primary_hand};
use crate::image::Image;
use crate::mesh::{build_adjacency, compute_field, io::parse_off, CurvatureKind};
use crate::nn::{rng, Tensor};
use crate::synth::Corpus;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub patch_size: usize,
    /// Field used as the curvature regression target.
    pub curvature: CurvatureKind,
    /// Box jitter applied by the oracle detector.
    pub detection_noise: f64,
    pub seed: u64,
}

/// One preprocessed frame with every training target.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSample {
    /// Channel-major `3 × P × P` patches.
    pub hand: Vec<f64>,
    pub object: Vec<f64>,
    pub object_present: bool,
    pub global: Vec<f64>,
    pub grasp: usize,
    pub object_id: usize,
    pub action: usize,
    pub curvature: Vec<f64>,
    /// 1 at interior vertices, 0 at boundary vertices.
    pub mask: Vec<f64>,
}

/// Contiguous run of samples belonging to one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSpan {
    pub episode_id: usize,
    pub action: usize,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct FrameDataset {
    pub patch_size: usize,
    pub samples: Vec<FrameSample>,
    pub episodes: Vec<EpisodeSpan>,
}

pub struct Batch {
    pub hand: Tensor,
    pub object: Tensor,
    pub present: Tensor,
    pub global: Tensor,
    pub grasp: Vec<usize>,
    pub object_ids: Vec<usize>,
    pub actions: Vec<usize>,
    pub curvature: Tensor,
    pub mask: Tensor,
}

impl Batch {
    pub fn input(&self) -> BatchInput<'_> {
        BatchInput {
            hand: &self.hand,
            object: &self.object,
            object_present: &self.present,
            global: &self.global,
        }
    }

    pub fn len(&self) -> usize {
        self.grasp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grasp.is_empty()
    }
}

fn flat(rows: usize, width: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(&[rows, width], data).expect("batch buffers are sized by construction")
}

impl FrameDataset {
    /// Detects, crops and labels every frame of the listed episodes, in order.
    pub fn from_corpus(corpus: &Corpus, episode_ids: &[usize], cfg: &DatasetConfig) -> Result<Self, PipelineError> {
        let p = cfg.patch_size;
        let mut det_rng = rng(cfg.seed ^ 0x00d3_7ec7);
        let mut fields: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        let mut samples = Vec::new();
        let mut episodes = Vec::with_capacity(episode_ids.len());
        for &id in episode_ids {
            let ep = corpus
                .episode(id)
                .ok_or_else(|| PipelineError::Dataset(format!("episode {id} not in corpus")))?;
            episodes.push(EpisodeSpan {
                episode_id: id,
                action: ep.action_id,
                start: samples.len(),
                len: ep.frames.len(),
            });
            for f in &ep.frames {
                let image = Image::load(&corpus.root.join(&f.image_path))?;
                let det = oracle_detect(f, cfg.detection_noise, &mut det_rng)?;
                let hand_box = resolve_primary_hand(&det)?;
                let hand = crop_and_resize(&image, &hand_box, p).to_chw();
                let (object, present) = match det.object {
                    Some(b) => (crop_and_resize(&image, &b, p).to_chw(), true),
                    None => (vec![0.0; 3 * p * p], false),
                };
                if !fields.contains_key(&f.mesh_path) {
                    let text = std::fs::read_to_string(corpus.root.join(&f.mesh_path))?;
                    let mesh = parse_off(&text)?;
                    let field = compute_field(&mesh, &build_adjacency(&mesh)?, cfg.curvature)?;
                    if field.values.iter().any(|v| !v.is_finite()) {
                        return Err(PipelineError::Dataset(format!(
                            "non-finite curvature in {}",
                            f.mesh_path
                        )));
                    }
                    let mask = field.boundary_mask.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect();
                    fields.insert(f.mesh_path.clone(), (field.values, mask));
                }
                let (curvature, mask) = fields[&f.mesh_path].clone();
                samples.push(FrameSample {
                    hand,
                    object,
                    object_present: present,
                    global: global_feature(&image, &det),
                    grasp: f.grasp_id,
                    object_id: f.object_id,
                    action: f.action_id,
                    curvature,
                    mask,
                });
            }
        }
        Ok(Self {
            patch_size: p,
            samples,
            episodes,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Per-vertex mean of the curvature targets.
    pub fn curvature_mean(&self) -> Vec<f64> {
        let width = self.samples.first().map_or(0, |s| s.curvature.len());
        let mut mean = vec![0.0; width];
        for s in &self.samples {
            for (m, v) in mean.iter_mut().zip(&s.curvature) {
                *m += v;
            }
        }
        let n = self.samples.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Stacks the indexed samples into batch tensors.
    pub fn batch(&self, idx: &[usize]) -> Batch {
        let n = idx.len();
        let pw = 3 * self.patch_size * self.patch_size;
        let gw = self.samples.first().map_or(0, |s| s.global.len());
        let cw = self.samples.first().map_or(0, |s| s.curvature.len());
        let gather = |f: &dyn Fn(&FrameSample) -> &[f64], w: usize| {
            let mut v = Vec::with_capacity(n * w);
            for &i in idx {
                v.extend_from_slice(f(&self.samples[i]));
            }
            flat(n, w, v)
        };
        Batch {
            hand: gather(&|s| &s.hand, pw),
            object: gather(&|s| &s.object, pw),
            present: flat(
                n,
                1,
                idx.iter()
                    .map(|&i| f64::from(u8::from(self.samples[i].object_present)))
                    .collect(),
            ),
            global: gather(&|s| &s.global, gw),
            grasp: idx.iter().map(|&i| self.samples[i].grasp).collect(),
            object_ids: idx.iter().map(|&i| self.samples[i].object_id).collect(),
            actions: idx.iter().map(|&i| self.samples[i].action).collect(),
            curvature: gather(&|s| &s.curvature, cw),
            mask: gather(&|s| &s.mask, cw),
        }
    }
}
