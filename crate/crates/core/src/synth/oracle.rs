//! Brute-force decoders that check every label is recoverable from clean data.

use super::corpus::{generate_episode, MeshLibrary};
use super::{GeneratorConfig, SynthError};
use crate::detection::crop_and_resize;
use crate::image::Image;
use crate::taxonomy::minimal_transitions;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    /// Nearest-centroid accuracy on hand patches.
    pub grasp_accuracy: f64,
    /// Nearest-centroid accuracy on object patches.
    pub object_accuracy: f64,
    /// Script matching plus checker-amplitude matching, per episode.
    pub action_accuracy: f64,
}

fn nearest_centroid_accuracy(samples: &[(usize, Vec<f64>)], n_classes: usize) -> f64 {
    let dim = samples[0].1.len();
    let mut sums = vec![vec![0.0; dim]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (y, x) in samples {
        counts[*y] += 1;
        for (s, v) in sums[*y].iter_mut().zip(x) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    let correct = samples
        .iter()
        .filter(|(y, x)| {
            let best = (0..n_classes)
                .filter(|&c| counts[c] > 0)
                .min_by(|&a, &b| {
                    let d = |c: usize| sums[c].iter().zip(x).map(|(m, v)| (m - v) * (m - v)).sum::<f64>();
                    d(a).total_cmp(&d(b))
                })
                .expect("at least one class");
            best == *y
        })
        .count();
    correct as f64 / samples.len() as f64
}

/// Mean of `±pixel` under the same parity checker the renderer uses.
fn checker_amplitude(patch: &Image) -> f64 {
    let mut s = 0.0;
    for y in 0..patch.height() {
        for x in 0..patch.width() {
            let sign = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
            s += sign * patch.pixel(x, y).iter().sum::<f64>();
        }
    }
    s / (patch.width() * patch.height() * patch.channels()) as f64
}

/// Regenerates the corpus in memory at zero pixel noise and decodes every label.
pub fn oracle_report(cfg: &GeneratorConfig, taxonomy_size: usize) -> Result<OracleReport, SynthError> {
    let clean = GeneratorConfig {
        noise_level: 0.0,
        ..cfg.clone()
    };
    clean.validate(taxonomy_size)?;
    let library = MeshLibrary::build(&clean)?;
    let hand_px = clean.image_size / 2;
    let obj_px = clean.image_size * 3 / 8;
    let mut hands = Vec::new();
    let mut objects = Vec::new();
    let mut action_correct = 0usize;
    for id in 0..clean.n_episodes() {
        let (ep, images) = generate_episode(&clean, &library, taxonomy_size, id)?;
        let mut grasps = Vec::with_capacity(images.len());
        let mut votes = [0usize; 2];
        for (f, img) in ep.frames.iter().zip(&images) {
            let grasp = clean
                .grasp_from_taxonomy(f.grasp_id, taxonomy_size)
                .ok_or_else(|| SynthError::Corpus(format!("grasp id {} outside the synthetic set", f.grasp_id)))?;
            grasps.push(grasp);
            let hp = crop_and_resize(img, &f.hand_r.expect("generated frames have a hand"), hand_px);
            let op = crop_and_resize(img, &f.object.expect("generated frames have an object"), obj_px);
            let amp = checker_amplitude(&hp);
            let level = library
                .entries
                .iter()
                .filter(|(k, _)| k.grasp == grasp)
                .min_by(|(_, a), (_, b)| {
                    let d = |dev: f64| (clean.curvature_texture * dev - amp).abs();
                    d(a.deviation).total_cmp(&d(b.deviation))
                })
                .map(|(k, _)| k.level)
                .expect("library covers every grasp");
            votes[level] += 1;
            hands.push((grasp, hp.data().to_vec()));
            objects.push((f.object_id, op.data().to_vec()));
        }
        let script: Vec<usize> = minimal_transitions(&grasps)?.entries().iter().map(|e| e.1).collect();
        let level = usize::from(votes[1] > votes[0]);
        let decoded = (0..clean.n_pairs())
            .find(|&p| clean.pair_script(p) == script)
            .map(|p| 2 * p + level);
        if decoded == Some(ep.action_id) {
            action_correct += 1;
        }
    }
    Ok(OracleReport {
        grasp_accuracy: nearest_centroid_accuracy(&hands, clean.n_grasp_types),
        object_accuracy: nearest_centroid_accuracy(&objects, clean.n_objects),
        action_accuracy: action_correct as f64 / clean.n_episodes() as f64,
    })
}
