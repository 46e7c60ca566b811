//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints its own PASS/FAIL line, then exits nonzero if any failed.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use handact_core::config::RunConfig;
use handact_core::harness::{self, TrainTarget, GENERATOR_CKPT, METRICS_FILE};
use handact_core::mesh::primitives::{grid, icosphere};
use handact_core::mesh::{
    angle_defects, build_adjacency, gaussian_curvature, mean_curvature, principal_curvatures, TriangleMesh,
};
use handact_core::nn::checkpoint::{read_checkpoint, write_checkpoint};
use handact_core::nn::gradcheck::{gradient_check, GraphObjective};
use handact_core::nn::{rng, Conv2d, Graph, GruCell, Linear, NnError, ParamId, ParamStore, SgdSchedule, Tensor, Var};
use handact_core::pipeline::{
    load_generator, loss_action_frame, loss_local, loss_object, BatchInput, ClassCounts, CurvatureVariant,
    DatasetConfig, FrameDataset, Generator, LossWeights, ModelConfig, Stage, Trainer,
};
use handact_core::synth::meshes::{cylinder, deform, hand_template, GraspShape};
use handact_core::synth::{load_corpus, Corpus};
use handact_core::temporal::{loss_action_temporal, TemporalConfig, TemporalModel};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Turns a panic inside a check into a failed criterion.
fn guard(f: impl FnOnce() -> Outcome + std::panic::UnwindSafe) -> Outcome {
    std::panic::catch_unwind(f).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn rms_vs_one(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0.0);
    for v in values {
        s += (v - 1.0) * (v - 1.0);
        n += 1.0;
    }
    (s / n).sqrt()
}

fn sphere_rms(subdiv: u32) -> (f64, f64) {
    let m = icosphere(subdiv);
    let adj = build_adjacency(&m).unwrap();
    let h = mean_curvature(&m, &adj).unwrap();
    let k = gaussian_curvature(&m, &adj).unwrap();
    (rms_vs_one(h.values.into_iter()), rms_vs_one(k.values.into_iter()))
}

fn curvature_oracles() -> Outcome {
    let start = Instant::now();
    let (h3, k3) = sphere_rms(3);
    let (h2, _) = sphere_rms(2);

    let plane = grid(9, 9, 0.125);
    let adj = build_adjacency(&plane).unwrap();
    let ph = mean_curvature(&plane, &adj).unwrap();
    let pk = gaussian_curvature(&plane, &adj).unwrap();
    let planar = ph
        .interior_values()
        .chain(pk.interior_values())
        .map(f64::abs)
        .fold(0.0, f64::max);

    let cyl = cylinder(0.5, 2.0, 48, 24);
    let adj = build_adjacency(&cyl).unwrap();
    let ch = mean_curvature(&cyl, &adj).unwrap();
    let cyl_err = ch.interior_values().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);

    let sphere = icosphere(3);
    let defects: f64 = angle_defects(&sphere, &build_adjacency(&sphere).unwrap()).iter().sum();
    let gb = (defects - 4.0 * PI).abs();

    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "sphere H rms {:.3}%, K rms {:.3}%, plane max {planar:.1e}, cylinder max H err {:.2}%, \
         Gauss-Bonnet err {gb:.1e}, H rms subdiv2 {:.3}% > subdiv3, {secs:.2}s",
        100.0 * h3,
        100.0 * k3,
        100.0 * cyl_err,
        100.0 * h2
    );
    ensure(
        h3 <= 0.02 && k3 <= 0.03 && planar <= 1e-9 && cyl_err <= 0.05 && gb <= 1e-9 && h2 > h3 && secs < 10.0,
        detail,
    )
}

fn identity_meshes() -> Vec<(&'static str, TriangleMesh)> {
    let bumpy = icosphere(2)
        .map_vertices(|p| p * (1.0 + 0.15 * (3.0 * p.x).sin() * (2.0 * p.y).cos()))
        .unwrap();
    vec![
        ("icosphere2", icosphere(2)),
        ("icosphere3", icosphere(3)),
        ("bumpy", bumpy),
        ("grid", grid(7, 5, 0.2)),
        ("cylinder", cylinder(0.5, 2.0, 24, 12)),
        ("hand", hand_template()),
        ("hand_grasp3", deform(&GraspShape::for_grasp(3), 1.0)),
    ]
}

fn algebraic_identities() -> Outcome {
    let (mut sum_err, mut prod_err, mut checked) = (0.0f64, 0.0f64, 0usize);
    for (_, mesh) in identity_meshes() {
        let adj = build_adjacency(&mesh).unwrap();
        let h = mean_curvature(&mesh, &adj).unwrap();
        let k = gaussian_curvature(&mesh, &adj).unwrap();
        let (kmax, kmin) = principal_curvatures(&mesh, &adj).unwrap();
        for i in 0..mesh.n_vertices() {
            let (hv, kv) = (h.values[i], k.values[i]);
            sum_err = sum_err.max((kmax.values[i] + kmin.values[i] - 2.0 * hv).abs() / (2.0 * hv).abs().max(1.0));
            if hv * hv >= kv {
                prod_err = prod_err.max((kmax.values[i] * kmin.values[i] - kv).abs() / kv.abs().max(1.0));
            }
            checked += 1;
        }
    }
    ensure(
        sum_err <= 1e-9 && prod_err <= 1e-9,
        format!("{checked} vertices on 7 meshes, sum rel err {sum_err:.1e}, product rel err {prod_err:.1e}"),
    )
}

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

fn readout(g: &mut Graph, y: Var, seed: u64) -> Result<Var, NnError> {
    let c = g.input(random(g.value(y).shape(), seed, -1.0, 1.0));
    let p = g.mul(y, c)?;
    g.mean(p)
}

fn max_error<F>(store: &mut ParamStore, build: F, training: bool) -> f64
where
    F: Fn(&mut Graph) -> Result<Var, NnError>,
{
    let ids: Vec<ParamId> = store.ids().collect();
    let obj = GraphObjective::new(build);
    let obj = if training { obj.training(3) } else { obj };
    gradient_check(store, &ids, &obj, 1e-4).unwrap().max_rel_error
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut errors = Vec::new();

    let mut s = ParamStore::new();
    let x = s.add("x", random(&[3, 4], 1, -1.0, 1.0));
    let lin = Linear::new(&mut s, "fc", 4, 5, &mut rng(2));
    let linear = max_error(
        &mut s,
        |g| {
            let xv = g.param(x);
            let y = lin.forward(g, xv)?;
            readout(g, y, 3)
        },
        false,
    );

    let mut s = ParamStore::new();
    let x = s.add("x", random(&[2, 2, 8, 8], 4, -1.0, 1.0));
    let conv = Conv2d::new(&mut s, "conv", 2, 3, 3, 2, 1, &mut rng(5));
    errors.push((
        "conv+pool+relu",
        max_error(
            &mut s,
            |g| {
                let xv = g.param(x);
                let y = conv.forward(g, xv)?;
                let y = g.relu(y)?;
                let y = g.avg_pool2(y)?;
                readout(g, y, 6)
            },
            false,
        ),
    ));

    let mut s = ParamStore::new();
    let x = s.add("x", random(&[2, 3], 7, -1.0, 1.0));
    let h = s.add("h", random(&[2, 4], 8, -1.0, 1.0));
    let cell = GruCell::new(&mut s, "gru", 3, 4, &mut rng(9));
    errors.push((
        "gru cell",
        max_error(
            &mut s,
            |g| {
                let (xv, hv) = (g.param(x), g.param(h));
                let y = cell.step(g, xv, hv)?;
                readout(g, y, 10)
            },
            false,
        ),
    ));

    let cfg = ModelConfig {
        patch_size: 8,
        conv1_channels: 2,
        conv2_channels: 2,
        feature_width: 4,
        grasp_hidden: 4,
        grasp_embedding: 3,
        curvature_hidden: 3,
        relation_hidden: 3,
        interaction_width: 3,
        object_embedding: 4,
        mixture_hidden: 4,
        embedding_width: 4,
        dropout: 0.2,
        curvature: CurvatureVariant::Mean,
    };
    let classes = ClassCounts {
        grasp: 5,
        object: 3,
        action: 4,
    };
    let mut gen = Generator::new(&cfg, classes, &mut rng(11)).unwrap();
    let (hand, object) = (random(&[2, 192], 12, 0.0, 1.0), random(&[2, 192], 13, 0.0, 1.0));
    let present = Tensor::new(&[2, 1], vec![1.0, 0.0]).unwrap();
    let global = random(&[2, 79], 14, 0.0, 1.0);
    let target = random(&[2, 778], 15, -0.5, 0.5);
    let mask = Tensor::full(&[2, 778], 1.0);
    let mean: Vec<f64> = (0..778)
        .map(|j| (target.data()[j] + target.data()[778 + j]) / 2.0)
        .collect();
    gen.init_curvature_bias(&mean).unwrap();
    let w = LossWeights::default();
    let mut store = gen.store.clone();
    errors.push((
        "generator",
        max_error(
            &mut store,
            |g| {
                let input = BatchInput {
                    hand: &hand,
                    object: &object,
                    object_present: &present,
                    global: &global,
                };
                let out = gen.forward(g, &input)?;
                let curv = out.local.curvature.map(|c| (c, &target, &mask));
                let l_local = loss_local(g, out.local.grasp_logits, &[1, 4], curv, &w)?;
                let l_object = loss_object(g, out.object_logits, &[2, 0])?;
                loss_action_frame(g, out.action_logits, &[3, 1], l_object, l_local, &w)
            },
            true,
        ),
    ));

    let tcfg = TemporalConfig {
        layers: 2,
        hidden: 3,
        fc_widths: [4, 3],
    };
    let model = TemporalModel::new(&tcfg, 5, 4, &mut rng(16)).unwrap();
    let seq: Vec<Tensor> = (0..4).map(|t| random(&[2, 5], 17 + t, -1.0, 1.0)).collect();
    let mut store = model.store.clone();
    errors.push((
        "temporal",
        max_error(
            &mut store,
            |g| {
                let vars: Vec<_> = seq.iter().map(|t| g.input(t.clone())).collect();
                let (steps, video) = model.forward(g, &vars)?;
                loss_action_temporal(g, &steps, video, &[2, 0])
            },
            false,
        ),
    ));

    let secs = start.elapsed().as_secs_f64();
    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let mut detail = format!("linear {linear:.1e}");
    for (name, e) in &errors {
        detail.push_str(&format!(", {name} {e:.1e}"));
    }
    detail.push_str(&format!(", {secs:.1}s"));
    ensure(linear < 1e-6 && worst < 1e-4 && secs < 60.0, detail)
}

fn loss_arithmetic() -> Outcome {
    let store = ParamStore::new();
    let mut g = Graph::new(&store, false, rng(0));
    let logits = random(&[3, 7], 20, -2.0, 2.0);
    let targets = [4, 0, 6];
    let ce_direct: f64 = targets
        .iter()
        .enumerate()
        .map(|(r, &t)| {
            let row = logits.row(r);
            let m = row.iter().cloned().fold(f64::MIN, f64::max);
            m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - row[t]
        })
        .sum::<f64>()
        / 3.0;
    let (l_obj, l_loc) = (1.375, 2.625);
    let a = g.input(logits);
    let lo = g.input(Tensor::scalar(l_obj));
    let ll = g.input(Tensor::scalar(l_loc));
    let total = loss_action_frame(&mut g, a, &targets, lo, ll, &LossWeights::default()).unwrap();
    let expected = ce_direct + 0.2 * l_obj + 0.5 * l_loc;
    let composite_err = (g.value(total).item() - expected).abs() / expected;

    let mut uniform_err = 0.0f64;
    for c in [2usize, 10, 36] {
        let z = g.input(Tensor::zeros(&[2, c]));
        let l = loss_object(&mut g, z, &[0, c - 1]).unwrap();
        uniform_err = uniform_err.max((g.value(l).item() - (c as f64).ln()).abs() / (c as f64).ln());
    }
    ensure(
        composite_err <= 1e-12 && uniform_err <= 1e-12,
        format!("composite rel err {composite_err:.1e}, uniform CE rel err {uniform_err:.1e}"),
    )
}

fn lr_schedule() -> Outcome {
    let s = SgdSchedule {
        base_lr: 0.001,
        halving_period: 50,
    };
    let got = [s.lr(0), s.lr(50), s.lr(120)];
    ensure(
        got == [0.001, 0.0005, 0.00025],
        format!("lr(0), lr(50), lr(120) = {got:?}"),
    )
}

struct Run {
    seconds: f64,
    metrics: Vec<u8>,
    ablation: Vec<u8>,
    ablation_rows: Vec<(CurvatureVariant, f64)>,
    video: f64,
    grasp: f64,
    r2: f64,
}

fn full_run(corpus_dir: &Path, out: &Path, cfg: &RunConfig) -> Run {
    let train_dir = out.join("train");
    let outcome = harness::cmd_train(corpus_dir, TrainTarget::All, cfg, &train_dir).unwrap();
    let report = harness::cmd_eval(corpus_dir, &train_dir, cfg, &out.join("eval")).unwrap();
    let table = harness::cmd_ablate(corpus_dir, cfg, &out.join("ablate")).unwrap();
    Run {
        seconds: outcome.seconds,
        metrics: std::fs::read(train_dir.join(METRICS_FILE)).unwrap(),
        ablation: std::fs::read(out.join("ablate").join("ablation.csv")).unwrap(),
        ablation_rows: table.rows.iter().map(|r| (r.variant, r.video_accuracy)).collect(),
        video: report.video_accuracy.unwrap_or(0.0),
        grasp: report.grasp_accuracy,
        r2: report.curvature_r2.unwrap_or(f64::NEG_INFINITY),
    }
}

fn end_to_end(corpus: &Corpus, run: &Run) -> Outcome {
    let c = &corpus.config;
    let shape = c.n_actions == 10
        && c.n_grasp_types == 8
        && c.n_objects == 5
        && corpus.episodes.len() == 200
        && c.frames_per_episode == 16
        && c.image_size == 32;
    ensure(
        shape && run.seconds < 600.0 && run.video >= 0.9 && run.grasp >= 0.9 && run.r2 >= 0.8,
        format!(
            "train all {:.1}s, video acc {:.3}, grasp acc {:.3}, curvature R2 {:.3}",
            run.seconds, run.video, run.grasp, run.r2
        ),
    )
}

fn ablation(run: &Run) -> Outcome {
    let get = |v| run.ablation_rows.iter().find(|r| r.0 == v).map_or(f64::NAN, |r| r.1);
    let (mean, none) = (get(CurvatureVariant::Mean), get(CurvatureVariant::None));
    let listing: Vec<String> = run.ablation_rows.iter().map(|(v, a)| format!("{v} {a:.3}")).collect();
    ensure(
        run.ablation_rows.len() == 5 && mean - none >= 0.03,
        format!(
            "video acc {}; mean minus none {:.1} points",
            listing.join(", "),
            100.0 * (mean - none)
        ),
    )
}

fn stage_freeze(corpus_dir: &Path, cfg: &RunConfig, run_dir: &Path) -> Outcome {
    let ckpt = run_dir.join(GENERATOR_CKPT);
    let before = std::fs::read(&ckpt).unwrap();

    // In memory: temporal training must not touch a single generator value.
    let (gen, completed) = load_generator(&ckpt).unwrap();
    let (_, meta) = read_checkpoint(before.as_slice()).unwrap();
    let corpus = load_corpus(corpus_dir).unwrap();
    let dc = DatasetConfig {
        patch_size: gen.config.patch_size,
        curvature: gen
            .config
            .curvature
            .kind()
            .unwrap_or(handact_core::mesh::CurvatureKind::Mean),
        detection_noise: cfg.train.detection_noise,
        seed: cfg.train.seed,
    };
    let data = FrameDataset::from_corpus(&corpus, &corpus.train, &dc).unwrap();
    let mut train = cfg.train.clone();
    train.model = gen.config.clone();
    let mut trainer = Trainer::resume(train, gen, completed).unwrap();
    trainer.run_stage(Stage::Temporal, &data).unwrap();
    let mut after_memory = Vec::new();
    write_checkpoint(&mut after_memory, &trainer.generator.store, &meta).unwrap();

    // Through the harness: a temporal-only run next to the checkpoint.
    harness::cmd_train(corpus_dir, TrainTarget::Stage(Stage::Temporal), cfg, run_dir).unwrap();
    let after_file = std::fs::read(&ckpt).unwrap();
    ensure(
        before == after_memory && before == after_file,
        format!(
            "{} checkpoint bytes; in-memory diff {}, on-disk diff {}",
            before.len(),
            if before == after_memory { "empty" } else { "NONEMPTY" },
            if before == after_file { "empty" } else { "NONEMPTY" }
        ),
    )
}

fn determinism(a: &Run, b: &Run) -> Outcome {
    ensure(
        a.metrics == b.metrics && a.ablation == b.ablation,
        format!(
            "metrics.csv {} bytes {}, ablation.csv {} bytes {}",
            a.metrics.len(),
            if a.metrics == b.metrics { "identical" } else { "DIFFER" },
            a.ablation.len(),
            if a.ablation == b.ablation {
                "identical"
            } else {
                "DIFFER"
            }
        ),
    )
}

fn statistics(corpus_dir: &Path, corpus: &Corpus, out: &Path) -> Outcome {
    let r = harness::cmd_stats(corpus_dir, out).unwrap();
    let frames: usize = corpus.episodes.iter().map(|e| e.frames.len()).sum();
    let hist_total: usize = r.histogram.iter().sum();
    let rows_ok = r
        .matrix
        .iter()
        .zip(&r.histogram)
        .all(|(row, &h)| row.iter().sum::<usize>() == h);
    let read_rows = |name: &str| -> Vec<Vec<usize>> {
        std::fs::read_to_string(out.join(name))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| {
                l.split(',')
                    .skip(1)
                    .map(|v| v.parse::<f64>().unwrap() as usize)
                    .collect()
            })
            .collect()
    };
    let hist_csv: Vec<usize> = read_rows("grasp_histogram.csv").iter().map(|r| r[0]).collect();
    let csv_total: usize = hist_csv.iter().sum();
    let csv_rows_ok = read_rows("grasp_action_matrix.csv")
        .iter()
        .zip(&hist_csv)
        .all(|(row, &h)| row.iter().sum::<usize>() == h);
    let rows_ok = rows_ok && csv_rows_ok;
    ensure(
        hist_total == frames && csv_total == frames && rows_ok && r.n_episodes == corpus.episodes.len(),
        format!("histogram total {hist_total}, csv total {csv_total}, frames {frames}, matrix rows match: {rows_ok}"),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "curvature oracle suite", guard(curvature_oracles)),
        (2, "principal curvature identities", guard(algebraic_identities)),
        (3, "gradient suite", guard(gradient_suite)),
        (4, "loss arithmetic", guard(loss_arithmetic)),
        (5, "learning-rate schedule", guard(lr_schedule)),
    ];
    for (n, name, r) in &results {
        report(*n, name, r);
    }

    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let corpus_dir = tmp.path().join("corpus");
    let (corpus, _) = harness::cmd_synth(&cfg, &corpus_dir).unwrap();
    let first = full_run(&corpus_dir, &tmp.path().join("run1"), &cfg);
    let second = full_run(&corpus_dir, &tmp.path().join("run2"), &cfg);

    let late: Vec<(usize, &str, Outcome)> = vec![
        (6, "end-to-end synthetic run", guard(|| end_to_end(&corpus, &first))),
        (7, "curvature ablation", guard(|| ablation(&first))),
        (
            8,
            "stage-freeze contract",
            guard(|| stage_freeze(&corpus_dir, &cfg, &tmp.path().join("run1/train"))),
        ),
        (9, "determinism", guard(|| determinism(&first, &second))),
        (
            10,
            "statistics totals",
            guard(|| statistics(&corpus_dir, &corpus, &tmp.path().join("stats"))),
        ),
    ];
    for (n, name, r) in &late {
        report(*n, name, r);
    }
    results.extend(late);

    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn report(n: usize, name: &str, r: &Outcome) {
    match r {
        Ok(d) => println!("criterion {n:>2} PASS  {name}: {d}"),
        Err(d) => println!("criterion {n:>2} FAIL  {name}: {d}"),
    }
}
