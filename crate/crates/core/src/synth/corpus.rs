use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::meshes::{deform, hand_template, GraspShape};
use super::render::{render_frame, FrameLayout, RenderParams};
use super::{GeneratorConfig, SynthError, AMPLITUDE_LEVELS};
use crate::image::Image;
use crate::manifest::{load_manifest, write_manifest, FrameRecord};
use crate::mesh::io::{parse_off, to_off_string};
use crate::mesh::{build_adjacency, mean_curvature, TriangleMesh};
use crate::taxonomy::{
    expand_transitions, load_taxonomy, minimal_transitions, Taxonomy, TaxonomyError, TransitionAnnotation,
};

/// Written into the corpus root and excluded from [`corpus_digest`].
pub const DIGEST_FILE: &str = "digest.txt";
const CONFIG_FILE: &str = "generator.toml";
const MANIFEST_FILE: &str = "manifest.txt";
const TAXONOMY_FILE: &str = "taxonomy.tsv";
const TRAIN_FILE: &str = "train.txt";
const TEST_FILE: &str = "test.txt";

/// Identifies one emitted mesh; frames with equal keys share the file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MeshKey {
    pub grasp: usize,
    pub level: usize,
    pub phase: usize,
    pub variant: usize,
}

impl MeshKey {
    pub fn file_name(&self) -> String {
        format!(
            "meshes/g{}_l{}_p{}_v{}.off",
            self.grasp, self.level, self.phase, self.variant
        )
    }
}

#[derive(Debug, Clone)]
pub struct LibraryEntry {
    /// The mesh as read back from its 6-decimal OFF text.
    pub mesh: TriangleMesh,
    pub off: String,
    /// RMS mean-curvature deviation from the template over interior vertices.
    pub deviation: f64,
    pub mean_curvature: Vec<f64>,
}

/// Every mesh a corpus can reference, keyed by deformation parameters.
#[derive(Debug, Clone)]
pub struct MeshLibrary {
    pub entries: BTreeMap<MeshKey, LibraryEntry>,
}

fn deformation_scale(cfg: &GeneratorConfig, level: usize, phase: usize) -> f64 {
    let frac = if cfg.phase_levels > 1 {
        phase as f64 / (cfg.phase_levels - 1) as f64
    } else {
        0.5
    };
    cfg.deformation * AMPLITUDE_LEVELS[level] * (0.9 + 0.2 * frac)
}

fn shape_variant(cfg: &GeneratorConfig, grasp: usize, variant: usize) -> GraspShape {
    let mut shape = GraspShape::for_grasp(grasp);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5a5a_0000);
    rng.set_stream((grasp * 1024 + variant) as u64);
    for b in &mut shape.bumps {
        b.2 *= 1.0 + cfg.shape_noise * rng.random_range(-1.0..=1.0);
    }
    shape
}

impl MeshLibrary {
    /// Builds every mesh and checks the grasp-separation floor.
    pub fn build(cfg: &GeneratorConfig) -> Result<Self, SynthError> {
        let template = hand_template();
        let adj = build_adjacency(&template)?;
        let h0 = mean_curvature(&template, &adj)?;
        let mut entries = BTreeMap::new();
        for grasp in 0..cfg.n_grasp_types {
            for variant in 0..cfg.shape_variants {
                let shape = shape_variant(cfg, grasp, variant);
                for level in 0..AMPLITUDE_LEVELS.len() {
                    for phase in 0..cfg.phase_levels {
                        let off = to_off_string(&deform(&shape, deformation_scale(cfg, level, phase)), Some(6));
                        let mesh = parse_off(&off)?;
                        let h = mean_curvature(&mesh, &build_adjacency(&mesh)?)?;
                        let (mut ss, mut n) = (0.0, 0usize);
                        for ((a, b), &bd) in h.values.iter().zip(&h0.values).zip(&h.boundary_mask) {
                            if !bd {
                                ss += (a - b) * (a - b);
                                n += 1;
                            }
                        }
                        let key = MeshKey {
                            grasp,
                            level,
                            phase,
                            variant,
                        };
                        entries.insert(
                            key,
                            LibraryEntry {
                                mesh,
                                off,
                                deviation: (ss / n.max(1) as f64).sqrt(),
                                mean_curvature: h.values,
                            },
                        );
                    }
                }
            }
        }
        let lib = Self { entries };
        if cfg.deformation > 0.0 {
            lib.check_separation(cfg)?;
        }
        Ok(lib)
    }

    fn check_separation(&self, cfg: &GeneratorConfig) -> Result<(), SynthError> {
        let reference = |g| {
            &self.entries[&MeshKey {
                grasp: g,
                level: AMPLITUDE_LEVELS.len() - 1,
                phase: 0,
                variant: 0,
            }]
                .mean_curvature
        };
        for a in 0..cfg.n_grasp_types {
            for b in 0..a {
                let d = reference(a)
                    .iter()
                    .zip(reference(b))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                if d < cfg.grasp_separation_floor {
                    return Err(SynthError::GraspSeparation {
                        a,
                        b,
                        distance: d,
                        floor: cfg.grasp_separation_floor,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &MeshKey) -> &LibraryEntry {
        &self.entries[key]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeManifest {
    pub episode_id: usize,
    pub action_id: usize,
    pub object_id: usize,
    pub frames: Vec<FrameRecord>,
    /// Grasp transitions in taxonomy ids.
    pub transitions: TransitionAnnotation,
}

impl EpisodeManifest {
    pub fn grasp_labels(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.grasp_id).collect()
    }
}

fn episode_rng(cfg: &GeneratorConfig, episode_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(episode_id as u64 + 1);
    rng
}

/// Per-frame synthetic grasp indices: the action's script split into
/// near-equal segments with cut points jittered by one frame.
fn sample_grasp_labels<R: Rng>(cfg: &GeneratorConfig, action: usize, rng: &mut R) -> Vec<usize> {
    let script = cfg.action_script(action);
    let n = cfg.frames_per_episode;
    let segs = script.len().min(n);
    let mut cuts = vec![0];
    for i in 1..segs {
        let base = (i * n / segs) as i64;
        let lo = cuts[i - 1] as i64 + 1;
        let hi = (n - (segs - i)) as i64;
        let c = (base + rng.random_range(-1..=1i64)).clamp(lo, hi);
        cuts.push(c as usize);
    }
    cuts.push(n);
    (0..segs)
        .flat_map(|s| std::iter::repeat_n(script[s], cuts[s + 1] - cuts[s]))
        .collect()
}

fn phase_bucket(cfg: &GeneratorConfig, t: usize) -> usize {
    let n = cfg.frames_per_episode;
    (t * (cfg.phase_levels - 1) + (n - 1) / 2) / (n - 1)
}

fn mesh_keys<R: Rng>(cfg: &GeneratorConfig, action: usize, grasps: &[usize], rng: &mut R) -> Vec<MeshKey> {
    grasps
        .iter()
        .enumerate()
        .map(|(t, &grasp)| MeshKey {
            grasp,
            level: cfg.amplitude_level(action),
            phase: phase_bucket(cfg, t),
            variant: rng.random_range(0..cfg.shape_variants),
        })
        .collect()
}

/// Per-frame meshes for an action and per-frame synthetic grasp indices.
pub fn generate_mesh_sequence<R: Rng>(
    library: &MeshLibrary,
    cfg: &GeneratorConfig,
    action: usize,
    grasps: &[usize],
    rng: &mut R,
) -> Vec<TriangleMesh> {
    mesh_keys(cfg, action, grasps, rng)
        .iter()
        .map(|k| library.get(k).mesh.clone())
        .collect()
}

/// One episode and its rendered frames; a pure function of config and id.
pub fn generate_episode(
    cfg: &GeneratorConfig,
    library: &MeshLibrary,
    taxonomy_size: usize,
    episode_id: usize,
) -> Result<(EpisodeManifest, Vec<Image>), SynthError> {
    let action = episode_id / cfg.episodes_per_action;
    let mut rng = episode_rng(cfg, episode_id);
    let object = cfg.object_pool(action)[rng.random_range(0..2usize)];
    let layout = FrameLayout::sample(cfg.image_size, rng.random_bool(cfg.left_hand_rate), &mut rng);
    let grasps = sample_grasp_labels(cfg, action, &mut rng);
    let keys = mesh_keys(cfg, action, &grasps, &mut rng);
    let mut frames = Vec::with_capacity(grasps.len());
    let mut images = Vec::with_capacity(grasps.len());
    for (t, (&grasp, key)) in grasps.iter().zip(&keys).enumerate() {
        let params = RenderParams {
            grasp,
            object,
            n_objects: cfg.n_objects,
            checker: cfg.curvature_texture * library.get(key).deviation,
            noise: cfg.noise_level,
        };
        let mut img = render_frame(&layout, &params, &mut rng);
        img.quantize();
        images.push(img);
        frames.push(FrameRecord {
            episode_id,
            frame_idx: t,
            image_path: format!("images/e{episode_id:04}_f{t:02}.ppm"),
            action_id: action,
            grasp_id: cfg.taxonomy_id(grasp, taxonomy_size),
            object_id: object,
            mesh_path: key.file_name(),
            hand_r: Some(layout.hand_box()),
            hand_l: layout.left_hand_box(),
            object: Some(layout.object_box()),
        });
    }
    let labels: Vec<usize> = frames.iter().map(|f| f.grasp_id).collect();
    let manifest = EpisodeManifest {
        episode_id,
        action_id: action,
        object_id: object,
        frames,
        transitions: minimal_transitions(&labels)?,
    };
    Ok((manifest, images))
}

fn split_hash(seed: u64, episode_id: usize) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((episode_id as u64).to_le_bytes());
    h.finalize().into()
}

/// Train/test episode ids. Within each action, episodes are ordered by a
/// seeded hash and the first `round(train_fraction · n)` go to training.
pub fn split_episodes(cfg: &GeneratorConfig) -> (Vec<usize>, Vec<usize>) {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let n = cfg.episodes_per_action;
    let n_train = ((cfg.train_fraction * n as f64).round() as usize).clamp(1.min(n), n.saturating_sub(1).max(1));
    for a in 0..cfg.n_actions {
        let mut ids: Vec<usize> = (a * n..(a + 1) * n).collect();
        ids.sort_by_key(|&e| split_hash(cfg.seed, e));
        train.extend_from_slice(&ids[..n_train]);
        test.extend_from_slice(&ids[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// A generated or loaded corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub config: GeneratorConfig,
    pub taxonomy: Taxonomy,
    pub episodes: Vec<EpisodeManifest>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Corpus {
    pub fn episode(&self, id: usize) -> Option<&EpisodeManifest> {
        self.episodes.iter().find(|e| e.episode_id == id)
    }

    pub fn frames(&self) -> impl Iterator<Item = &FrameRecord> {
        self.episodes.iter().flat_map(|e| e.frames.iter())
    }

    pub fn n_frames(&self) -> usize {
        self.episodes.iter().map(|e| e.frames.len()).sum()
    }
}

fn ids_text(ids: &[usize]) -> String {
    ids.iter().map(|i| format!("{i}\n")).collect()
}

fn parse_ids(text: &str) -> Result<Vec<usize>, SynthError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|e| SynthError::Corpus(format!("bad episode id `{l}`: {e}")))
        })
        .collect()
}

/// Writes the whole corpus under `root` (created if missing) and returns it.
pub fn generate_corpus(cfg: &GeneratorConfig, taxonomy: &Taxonomy, root: &Path) -> Result<Corpus, SynthError> {
    cfg.validate(taxonomy.len())?;
    let library = MeshLibrary::build(cfg)?;
    for sub in ["images", "meshes", "annotations"] {
        fs::create_dir_all(root.join(sub))?;
    }
    for (key, entry) in &library.entries {
        fs::write(root.join(key.file_name()), &entry.off)?;
    }
    let mut episodes = Vec::with_capacity(cfg.n_episodes());
    for id in 0..cfg.n_episodes() {
        let (ep, images) = generate_episode(cfg, &library, taxonomy.len(), id)?;
        for (f, img) in ep.frames.iter().zip(&images) {
            img.save_pnm(&root.join(&f.image_path))?;
        }
        fs::write(root.join(format!("annotations/e{id:04}.tsv")), ep.transitions.to_text())?;
        episodes.push(ep);
    }
    let records: Vec<FrameRecord> = episodes.iter().flat_map(|e| e.frames.iter().cloned()).collect();
    fs::write(root.join(MANIFEST_FILE), write_manifest(&records)?)?;
    let (train, test) = split_episodes(cfg);
    fs::write(root.join(TRAIN_FILE), ids_text(&train))?;
    fs::write(root.join(TEST_FILE), ids_text(&test))?;
    fs::write(root.join(TAXONOMY_FILE), taxonomy.to_tsv())?;
    let toml = toml::to_string(cfg).map_err(|e| SynthError::Corpus(e.to_string()))?;
    fs::write(root.join(CONFIG_FILE), toml)?;
    fs::write(root.join(DIGEST_FILE), format!("{}\n", corpus_digest(root)?))?;
    Ok(Corpus {
        root: root.to_path_buf(),
        config: cfg.clone(),
        taxonomy: taxonomy.clone(),
        episodes,
        train,
        test,
    })
}

/// Reads a corpus written by [`generate_corpus`] and cross-checks its annotations.
pub fn load_corpus(root: &Path) -> Result<Corpus, SynthError> {
    let read = |name: &str| {
        fs::read_to_string(root.join(name))
            .map_err(|e| SynthError::Corpus(format!("{}: {e}", root.join(name).display())))
    };
    let config: GeneratorConfig =
        toml::from_str(&read(CONFIG_FILE)?).map_err(|e| SynthError::Corpus(format!("{CONFIG_FILE}: {e}")))?;
    let taxonomy = load_taxonomy(&root.join(TAXONOMY_FILE))?;
    let records = load_manifest(&root.join(MANIFEST_FILE))?;
    let mut grouped: BTreeMap<usize, Vec<FrameRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.episode_id).or_default().push(r);
    }
    let mut episodes = Vec::with_capacity(grouped.len());
    for (id, mut frames) in grouped {
        frames.sort_by_key(|f| f.frame_idx);
        if frames.iter().enumerate().any(|(t, f)| f.frame_idx != t) {
            return Err(SynthError::Corpus(format!("episode {id} has missing frames")));
        }
        let first = &frames[0];
        let (action, object) = (first.action_id, first.object_id);
        if frames.iter().any(|f| f.action_id != action) {
            return Err(SynthError::Corpus(format!("episode {id} mixes action labels")));
        }
        let ann_path = root.join(format!("annotations/e{id:04}.tsv"));
        let transitions = TransitionAnnotation::parse(&fs::read_to_string(&ann_path)?)?;
        transitions.validate(&taxonomy)?;
        let labels: Vec<usize> = frames.iter().map(|f| f.grasp_id).collect();
        if expand_transitions(&transitions, frames.len())? != labels {
            return Err(SynthError::Taxonomy(TaxonomyError::InvalidAnnotation(format!(
                "episode {id}: annotation disagrees with manifest grasp labels"
            ))));
        }
        episodes.push(EpisodeManifest {
            episode_id: id,
            action_id: action,
            object_id: object,
            frames,
            transitions,
        });
    }
    Ok(Corpus {
        root: root.to_path_buf(),
        config,
        taxonomy,
        episodes,
        train: parse_ids(&read(TRAIN_FILE)?)?,
        test: parse_ids(&read(TEST_FILE)?)?,
    })
}

fn collect_files(dir: &Path, root: &Path, out: &mut Vec<(String, PathBuf)>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, root, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("walk stays under root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            if rel != DIGEST_FILE {
                out.push((rel, path));
            }
        }
    }
    Ok(())
}

/// SHA-256 over every file's relative path and contents, in path order.
pub fn corpus_digest(root: &Path) -> Result<String, SynthError> {
    let mut files = Vec::new();
    collect_files(root, root, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for (rel, path) in files {
        let data = fs::read(&path)?;
        h.update((rel.len() as u64).to_le_bytes());
        h.update(rel.as_bytes());
        h.update((data.len() as u64).to_le_bytes());
        h.update(&data);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            n_actions: 4,
            n_grasp_types: 4,
            n_objects: 3,
            episodes_per_action: 5,
            frames_per_episode: 6,
            phase_levels: 2,
            ..Default::default()
        }
    }

    #[test]
    fn grasp_labels_cover_script_in_order() {
        let cfg = GeneratorConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for a in 0..cfg.n_actions {
            for _ in 0..20 {
                let labels = sample_grasp_labels(&cfg, a, &mut rng);
                assert_eq!(labels.len(), 16);
                let ann = minimal_transitions(&labels).unwrap();
                let seq: Vec<usize> = ann.entries().iter().map(|e| e.1).collect();
                assert_eq!(seq, cfg.action_script(a));
            }
        }
        let two = GeneratorConfig {
            frames_per_episode: 2,
            ..cfg
        };
        assert_eq!(sample_grasp_labels(&two, 0, &mut rng), vec![0, 1]);
    }

    #[test]
    fn phase_buckets_span_range() {
        let cfg = GeneratorConfig::default();
        let b: Vec<usize> = (0..16).map(|t| phase_bucket(&cfg, t)).collect();
        assert_eq!(b[0], 0);
        assert_eq!(b[15], 3);
        assert!(b.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn split_is_exact_and_disjoint() {
        let cfg = GeneratorConfig::default();
        let (train, test) = split_episodes(&cfg);
        assert_eq!(train.len(), 160);
        assert_eq!(test.len(), 40);
        assert!(train.iter().all(|e| !test.contains(e)));
    }

    #[test]
    fn zero_deformation_gives_template() {
        let cfg = GeneratorConfig {
            deformation: 0.0,
            ..small()
        };
        let lib = MeshLibrary::build(&cfg).unwrap();
        let template = parse_off(&to_off_string(&hand_template(), Some(6))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in generate_mesh_sequence(&lib, &cfg, 1, &[0, 1, 1, 2], &mut rng) {
            assert_eq!(m, template);
        }
    }

    #[test]
    fn episodes_are_reproducible() {
        let cfg = GeneratorConfig {
            noise_level: 0.0,
            ..small()
        };
        let lib = MeshLibrary::build(&cfg).unwrap();
        let a = generate_episode(&cfg, &lib, 36, 7).unwrap();
        let b = generate_episode(&cfg, &lib, 36, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corpus_round_trip_and_digest() {
        let cfg = small();
        let tax = Taxonomy::default();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let c = generate_corpus(&cfg, &tax, d1.path()).unwrap();
        generate_corpus(&cfg, &tax, &d2.path().join("nested/out")).unwrap();
        assert_eq!(
            corpus_digest(d1.path()).unwrap(),
            corpus_digest(&d2.path().join("nested/out")).unwrap()
        );
        let back = load_corpus(d1.path()).unwrap();
        assert_eq!(back.episodes, c.episodes);
        assert_eq!(
            (back.train.clone(), back.test.clone()),
            (c.train.clone(), c.test.clone())
        );
        for f in back.frames() {
            assert!(d1.path().join(&f.image_path).exists());
            assert!(d1.path().join(&f.mesh_path).exists());
        }
    }
}
