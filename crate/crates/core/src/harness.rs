//! Library side of the `handact` commands. Each function does the work of
//! one subcommand and writes its outputs under a run directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::mesh::io::{load_mesh, MeshFormat};
use crate::mesh::{build_adjacency, compute_field, write_field_csv, CurvatureField, CurvatureKind};
use crate::nn::checkpoint::save_checkpoint;
use crate::pipeline::{
    confusion_csv, evaluate, generator_metadata, load_generator, load_temporal, temporal_metadata, ClassCounts,
    CurvatureVariant, DatasetConfig, EvalReport, FrameDataset, MetricsLog, PipelineError, Stage, TrainConfig, Trainer,
    METRICS_HEADER,
};
use crate::synth::{corpus_digest, generate_corpus, load_corpus, Corpus, SynthError, DIGEST_FILE};
use crate::taxonomy::{label_statistics, DistributionReport, Taxonomy, TaxonomyError};

pub const GENERATOR_CKPT: &str = "generator.ckpt";
pub const TEMPORAL_CKPT: &str = "temporal.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RESOLVED_CONFIG: &str = "config.resolved";
pub const VERSION_FILE: &str = "version.txt";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Mesh(#[from] crate::mesh::MeshError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// 2 for usage errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Creates `out` and records the resolved config and the tool version.
pub fn write_run_info(out: &Path, cfg: &RunConfig) -> Result<(), HarnessError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    write(&out.join(RESOLVED_CONFIG), &cfg.to_toml())?;
    write(&out.join(VERSION_FILE), &format!("handact {}\n", crate::VERSION))
}

/// Per-vertex curvature of a mesh file (`.off` or `.obj`) as CSV.
pub fn cmd_curvature(mesh_path: &Path, kind: CurvatureKind, out_csv: &Path) -> Result<CurvatureField, HarnessError> {
    let format = MeshFormat::from_path(mesh_path)
        .ok_or_else(|| HarnessError::Usage(format!("{}: expected a .off or .obj file", mesh_path.display())))?;
    let mesh = load_mesh(mesh_path, format)?;
    let field = compute_field(&mesh, &build_adjacency(&mesh)?, kind)?;
    if let Some(parent) = out_csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = fs::File::create(out_csv).map_err(io_err(out_csv))?;
    write_field_csv(&field, std::io::BufWriter::new(file)).map_err(io_err(out_csv))?;
    Ok(field)
}

/// Generates a corpus into `out` and returns it with its digest.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<(Corpus, String), HarnessError> {
    let corpus = generate_corpus(&cfg.generator, &Taxonomy::default_36(), out)?;
    write_run_info(out, cfg)?;
    let digest = fs::read_to_string(out.join(DIGEST_FILE))
        .map(|s| s.trim().to_string())
        .or_else(|_| corpus_digest(out))?;
    Ok((corpus, digest))
}

/// Which stages `cmd_train` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainTarget {
    Stage(Stage),
    All,
}

impl std::str::FromStr for TrainTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            Ok(TrainTarget::All)
        } else {
            s.parse().map(TrainTarget::Stage)
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub completed: Vec<Stage>,
    pub log: MetricsLog,
    pub seconds: f64,
    pub generator_path: PathBuf,
    pub temporal_path: Option<PathBuf>,
}

fn class_counts(corpus: &Corpus) -> ClassCounts {
    ClassCounts {
        grasp: corpus.taxonomy.len(),
        object: corpus.config.n_objects,
        action: corpus.config.n_actions,
    }
}

fn dataset_config(train: &TrainConfig) -> DatasetConfig {
    DatasetConfig {
        patch_size: train.model.patch_size,
        curvature: train.model.curvature.kind().unwrap_or(CurvatureKind::Mean),
        detection_noise: train.detection_noise,
        seed: train.seed,
    }
}

/// Runs every stage on the corpus's training split without touching disk.
pub fn train_all(corpus: &Corpus, train: &TrainConfig) -> Result<Trainer, PipelineError> {
    let data = FrameDataset::from_corpus(corpus, &corpus.train, &dataset_config(train))?;
    let mut trainer = Trainer::new(train.clone(), class_counts(corpus))?;
    for stage in Stage::ALL {
        trainer.run_stage(stage, &data)?;
    }
    Ok(trainer)
}

/// Trains one stage, or all of them, on the training split. A single stage
/// resumes from `out/generator.ckpt` when it exists; `all` starts fresh.
pub fn cmd_train(
    corpus_dir: &Path,
    target: TrainTarget,
    cfg: &RunConfig,
    out: &Path,
) -> Result<TrainOutcome, HarnessError> {
    let start = Instant::now();
    let corpus = load_corpus(corpus_dir)?;
    let gen_path = out.join(GENERATOR_CKPT);
    let mut cfg = cfg.clone();
    let mut trainer = match target {
        TrainTarget::Stage(_) if gen_path.exists() => {
            let (gen, completed) = load_generator(&gen_path)?;
            cfg.train.model = gen.config.clone();
            Trainer::resume(cfg.train.clone(), gen, completed)?
        }
        _ => Trainer::new(cfg.train.clone(), class_counts(&corpus))?,
    };
    let stages: Vec<Stage> = match target {
        TrainTarget::All => Stage::ALL.to_vec(),
        TrainTarget::Stage(s) => vec![s],
    };
    if stages == [Stage::Temporal] && !trainer.completed.contains(&Stage::Joint) {
        return Err(PipelineError::MissingStage {
            needed: Stage::Joint.to_string(),
            requested: Stage::Temporal.to_string(),
        }
        .into());
    }
    write_run_info(out, &cfg)?;
    let data = FrameDataset::from_corpus(&corpus, &corpus.train, &dataset_config(&cfg.train))?;
    for &stage in &stages {
        trainer.run_stage(stage, &data)?;
        if stage != Stage::Temporal {
            let meta = generator_metadata(&trainer.generator, &trainer.completed)?;
            save_checkpoint(&gen_path, &trainer.generator.store, &meta).map_err(PipelineError::from)?;
        }
    }
    let temporal_path = match &trainer.temporal {
        Some(model) => {
            let p = out.join(TEMPORAL_CKPT);
            save_checkpoint(&p, &model.store, &temporal_metadata(model)?).map_err(PipelineError::from)?;
            Some(p)
        }
        None => None,
    };
    let metrics_path = out.join(METRICS_FILE);
    let text = trainer.log.to_csv();
    if target == TrainTarget::All || !metrics_path.exists() {
        write(&metrics_path, &text)?;
    } else {
        let mut existing = fs::read_to_string(&metrics_path).map_err(io_err(&metrics_path))?;
        existing.push_str(
            text.strip_prefix(METRICS_HEADER)
                .unwrap_or(&text)
                .trim_start_matches('\n'),
        );
        write(&metrics_path, &existing)?;
    }
    Ok(TrainOutcome {
        completed: trainer.completed,
        log: trainer.log,
        seconds: start.elapsed().as_secs_f64(),
        generator_path: gen_path,
        temporal_path,
    })
}

/// Scores a trained run on the test split. `checkpoint` is a run directory
/// or a generator checkpoint; a `temporal.ckpt` beside it is used if present.
/// Outputs go to `out`; checkpoints are only read.
pub fn cmd_eval(corpus_dir: &Path, checkpoint: &Path, cfg: &RunConfig, out: &Path) -> Result<EvalReport, HarnessError> {
    let corpus = load_corpus(corpus_dir)?;
    let (gen_path, dir) = if checkpoint.is_dir() {
        (checkpoint.join(GENERATOR_CKPT), checkpoint.to_path_buf())
    } else {
        let dir = checkpoint.parent().map_or_else(PathBuf::new, Path::to_path_buf);
        (checkpoint.to_path_buf(), dir)
    };
    if !gen_path.exists() {
        return Err(HarnessError::Usage(format!(
            "no generator checkpoint at {}",
            gen_path.display()
        )));
    }
    let (gen, _) = load_generator(&gen_path)?;
    let temporal_path = dir.join(TEMPORAL_CKPT);
    let temporal = if temporal_path.exists() {
        Some(load_temporal(&temporal_path)?)
    } else {
        None
    };
    let mut train = cfg.train.clone();
    train.model = gen.config.clone();
    let data = FrameDataset::from_corpus(&corpus, &corpus.test, &dataset_config(&train))?;
    let report = evaluate(&gen, temporal.as_ref(), &data)?;
    write_run_info(out, cfg)?;
    write(&out.join("eval.csv"), &report.to_csv())?;
    write(
        &out.join("action_confusion.csv"),
        &confusion_csv(&report.action_confusion),
    )?;
    write(
        &out.join("grasp_confusion.csv"),
        &confusion_csv(&report.grasp_confusion),
    )?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: CurvatureVariant,
    pub video_accuracy: f64,
    pub frame_action_accuracy: f64,
    pub grasp_accuracy: f64,
    pub curvature_r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("curvature,video_accuracy,frame_action_accuracy,grasp_accuracy,curvature_r2\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.variant,
                r.video_accuracy,
                r.frame_action_accuracy,
                r.grasp_accuracy,
                r.curvature_r2.map_or(String::new(), |v| v.to_string())
            ));
        }
        s
    }

    pub fn row(&self, variant: CurvatureVariant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

/// Trains one pipeline per curvature variant (mean, gaussian, max, min,
/// none) with otherwise identical settings and tabulates test accuracy.
pub fn cmd_ablate(corpus_dir: &Path, cfg: &RunConfig, out: &Path) -> Result<AblationTable, HarnessError> {
    let corpus = load_corpus(corpus_dir)?;
    write_run_info(out, cfg)?;
    let mut rows = Vec::new();
    for variant in CurvatureVariant::ALL {
        let mut train = cfg.train.clone();
        train.model.curvature = variant;
        let trainer = train_all(&corpus, &train)?;
        let test = FrameDataset::from_corpus(&corpus, &corpus.test, &dataset_config(&train))?;
        let report = evaluate(&trainer.generator, trainer.temporal.as_ref(), &test)?;
        let dir = out.join(variant.as_str());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write(&dir.join(METRICS_FILE), &trainer.log.to_csv())?;
        write(&dir.join("eval.csv"), &report.to_csv())?;
        rows.push(AblationRow {
            variant,
            video_accuracy: report.video_accuracy.unwrap_or(0.0),
            frame_action_accuracy: report.frame_action_accuracy,
            grasp_accuracy: report.grasp_accuracy,
            curvature_r2: report.curvature_r2,
        });
    }
    let table = AblationTable { rows };
    write(&out.join("ablation.csv"), &table.to_csv())?;
    Ok(table)
}

/// Grasp-type histogram, grasp-by-action matrix and per-action summary.
pub fn cmd_stats(corpus_dir: &Path, out: &Path) -> Result<DistributionReport, HarnessError> {
    let corpus = load_corpus(corpus_dir)?;
    let episodes: Vec<(usize, Vec<usize>)> = corpus
        .episodes
        .iter()
        .map(|e| (e.action_id, e.grasp_labels()))
        .collect();
    let report = label_statistics(&episodes, corpus.taxonomy.len(), corpus.config.n_actions);
    fs::create_dir_all(out).map_err(io_err(out))?;
    write(&out.join("grasp_histogram.csv"), &report.histogram_csv())?;
    write(&out.join("grasp_action_matrix.csv"), &report.matrix_csv())?;
    let mut actions = String::from("action_id,episodes,frames,grasp_types\n");
    for a in 0..report.n_actions() {
        let eps = episodes.iter().filter(|(x, _)| *x == a).count();
        let frames: usize = report.matrix.iter().map(|row| row[a]).sum();
        actions.push_str(&format!("{a},{eps},{frames},{}\n", report.grasps_for_action(a)));
    }
    write(&out.join("actions.csv"), &actions)?;
    write(&out.join(VERSION_FILE), &format!("handact {}\n", crate::VERSION))?;
    Ok(report)
}
