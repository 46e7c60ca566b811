use handact_core::detection::{crop_and_resize, BoundingBox, BoxClass, GLOBAL_WIDTH};
use handact_core::image::Image;
use handact_core::mesh::CurvatureKind;
use handact_core::nn::{rng, Graph, NnError, Tensor};
use handact_core::pipeline::{
    loss_object, BatchInput, ClassCounts, CurvatureVariant, DatasetConfig, FrameDataset, Generator, ModelConfig, Stage,
    TrainConfig, Trainer,
};
use handact_core::synth::{generate_corpus, GeneratorConfig};
use handact_core::taxonomy::Taxonomy;
use handact_core::temporal::{TemporalConfig, TemporalModel};
use rand::Rng;

const CLASSES: ClassCounts = ClassCounts {
    grasp: 6,
    object: 5,
    action: 4,
};

fn small_config() -> ModelConfig {
    ModelConfig {
        patch_size: 8,
        conv1_channels: 3,
        conv2_channels: 4,
        feature_width: 8,
        grasp_hidden: 8,
        grasp_embedding: 4,
        curvature_hidden: 4,
        relation_hidden: 4,
        interaction_width: 4,
        object_embedding: 6,
        mixture_hidden: 8,
        embedding_width: 8,
        dropout: 0.3,
        curvature: CurvatureVariant::Mean,
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()
}

fn eval_forward(gen: &Generator, input: &BatchInput<'_>) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::new(&gen.store, false, rng(0));
    let out = gen.forward(&mut g, input).unwrap();
    (
        g.value(out.embedding).data().to_vec(),
        g.value(out.action_logits).data().to_vec(),
    )
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn action_logits_ignore_scene_translation() {
    let gen = Generator::new(&small_config(), CLASSES, &mut rng(1)).unwrap();
    let size = 64;
    let mut r = rng(2);
    let mut scene = Image::filled(size, size, &[0.2, 0.2, 0.2]);
    for y in 0..40 {
        for x in 0..40 {
            for c in 0..3 {
                scene.set(x, y, c, r.random_range(0.0..1.0));
            }
        }
    }
    // Shift by exactly 8 pixels so the box corners stay dyadic.
    let shift = 8;
    let mut moved = Image::filled(size, size, &[0.2, 0.2, 0.2]);
    for y in 0..size - shift {
        for x in 0..size - shift {
            for c in 0..3 {
                moved.set(x + shift, y + shift, c, scene.get(x, y, c));
            }
        }
    }
    let d = shift as f64 / size as f64;
    let hand = BoundingBox::new(0.0625, 0.125, 0.25, 0.25, BoxClass::Hand).unwrap();
    let object = BoundingBox::new(0.3125, 0.25, 0.25, 0.1875, BoxClass::Object).unwrap();
    let shifted = |b: &BoundingBox| BoundingBox::new(b.x + d, b.y + d, b.w, b.h, b.class).unwrap();
    let p = 8;
    let patches = |img: &Image, h: &BoundingBox, o: &BoundingBox| {
        let hp = Tensor::new(&[1, 3 * p * p], crop_and_resize(img, h, p).to_chw()).unwrap();
        let op = Tensor::new(&[1, 3 * p * p], crop_and_resize(img, o, p).to_chw()).unwrap();
        (hp, op)
    };
    let (h0, o0) = patches(&scene, &hand, &object);
    let (h1, o1) = patches(&moved, &shifted(&hand), &shifted(&object));
    assert_eq!(h0, h1);
    assert_eq!(o0, o1);
    let present = Tensor::new(&[1, 1], vec![1.0]).unwrap();
    let global = random(&[1, GLOBAL_WIDTH], 3);
    let run = |h: &Tensor, o: &Tensor| {
        eval_forward(
            &gen,
            &BatchInput {
                hand: h,
                object: o,
                object_present: &present,
                global: &global,
            },
        )
        .1
    };
    assert!(max_diff(&run(&h0, &o0), &run(&h1, &o1)) < 1e-12);
}

#[test]
fn zero_parameters_give_zero_embedding() {
    let mut gen = Generator::new(&small_config(), CLASSES, &mut rng(4)).unwrap();
    gen.store.zero_values();
    let (hand, object) = (random(&[3, 192], 5), random(&[3, 192], 6));
    let present = Tensor::new(&[3, 1], vec![1.0, 0.0, 1.0]).unwrap();
    let global = random(&[3, GLOBAL_WIDTH], 7);
    let input = BatchInput {
        hand: &hand,
        object: &object,
        object_present: &present,
        global: &global,
    };
    let (emb, logits) = eval_forward(&gen, &input);
    assert_eq!(emb.len(), 3 * 8);
    assert!(emb.iter().chain(&logits).all(|v| *v == 0.0));
}

#[test]
fn absent_object_ignores_object_patch() {
    let gen = Generator::new(&small_config(), CLASSES, &mut rng(8)).unwrap();
    let hand = random(&[1, 192], 9);
    let absent = Tensor::new(&[1, 1], vec![0.0]).unwrap();
    let global = random(&[1, GLOBAL_WIDTH], 10);
    let run = |object: &Tensor| {
        eval_forward(
            &gen,
            &BatchInput {
                hand: &hand,
                object,
                object_present: &absent,
                global: &global,
            },
        )
    };
    let (e0, a0) = run(&Tensor::zeros(&[1, 192]));
    let (e1, a1) = run(&random(&[1, 192], 11));
    assert!(e0.iter().chain(&a0).all(|v| v.is_finite()));
    assert_eq!((e0, a0), (e1, a1));
}

#[test]
fn default_object_embedding_is_256_wide() {
    let gen = Generator::new(&ModelConfig::default(), CLASSES, &mut rng(12)).unwrap();
    let p = gen.config.patch_size;
    let mut g = Graph::new(&gen.store, false, rng(0));
    let (logits, emb) = gen.forward_object(&mut g, &random(&[2, 3 * p * p], 13)).unwrap();
    assert_eq!(g.value(emb).shape(), &[2, 256]);
    assert_eq!(g.value(logits).shape(), &[2, CLASSES.object]);
}

#[test]
fn zeroed_object_head_gives_ln_c() {
    let mut gen = Generator::new(&small_config(), CLASSES, &mut rng(14)).unwrap();
    for id in [gen.object.out.w, gen.object.out.b] {
        gen.store.get_mut(id).value.fill(0.0);
    }
    let mut g = Graph::new(&gen.store, false, rng(0));
    let (logits, _) = gen.forward_object(&mut g, &random(&[4, 192], 15)).unwrap();
    let loss = loss_object(&mut g, logits, &[0, 1, 2, 4]).unwrap();
    let expected = (CLASSES.object as f64).ln();
    assert!((g.value(loss).item() - expected).abs() <= 1e-12 * expected);
}

#[test]
fn object_loss_matches_direct_log_softmax() {
    let logits = Tensor::new(&[2, 3], vec![0.5, -1.25, 2.0, 3.0, 0.0, -0.5]).unwrap();
    let targets = [2, 1];
    let store = handact_core::nn::ParamStore::new();
    let mut g = Graph::new(&store, false, rng(0));
    let x = g.input(logits.clone());
    let loss = loss_object(&mut g, x, &targets).unwrap();
    let mut expected = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let m = row.iter().cloned().fold(f64::MIN, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        expected += lse - row[t];
    }
    expected /= 2.0;
    assert!((g.value(loss).item() - expected).abs() <= 1e-12 * expected);
}

#[test]
fn mixture_input_order_is_checked() {
    let gen = Generator::new(&small_config(), CLASSES, &mut rng(16)).unwrap();
    let mut g = Graph::new(&gen.store, false, rng(0));
    let grasp = g.input(random(&[1, 4], 17));
    let curv = g.input(random(&[1, 778], 18));
    let inter = g.input(random(&[1, 4], 19));
    let obj = g.input(random(&[1, 6], 20));
    let global = g.input(random(&[1, GLOBAL_WIDTH], 21));
    let (_, canonical) = gen.mixture.forward(&mut g, &[grasp, curv, inter, obj, global]).unwrap();
    let canonical = g.value(canonical).data().to_vec();
    // Same total width, swapped slots: accepted but the output changes.
    let (_, swapped) = gen.mixture.forward(&mut g, &[inter, curv, grasp, obj, global]).unwrap();
    assert!(max_diff(&canonical, g.value(swapped).data()) > 1e-9);
    // A missing slot changes the width.
    assert!(matches!(
        gen.mixture.forward(&mut g, &[grasp, inter, obj, global]),
        Err(NnError::ShapeMismatch(_))
    ));
}

#[test]
fn stage_a_loss_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let gc = GeneratorConfig {
        n_actions: 4,
        episodes_per_action: 8,
        frames_per_episode: 8,
        ..GeneratorConfig::default()
    };
    let corpus = generate_corpus(&gc, &Taxonomy::default_36(), dir.path()).unwrap();
    let mut tc = TrainConfig::default();
    tc.stages.local.epochs = 10;
    tc.stages.local.batch_size = 16;
    let dc = DatasetConfig {
        patch_size: tc.model.patch_size,
        curvature: CurvatureKind::Mean,
        detection_noise: 0.0,
        seed: 1,
    };
    let data = FrameDataset::from_corpus(&corpus, &corpus.train, &dc).unwrap();
    let classes = ClassCounts {
        grasp: 36,
        object: gc.n_objects,
        action: gc.n_actions,
    };
    let mut trainer = Trainer::new(tc, classes).unwrap();
    trainer.run_stage(Stage::Local, &data).unwrap();
    let losses: Vec<f64> = trainer.log.stage_rows(Stage::Local).map(|r| r.loss).collect();
    assert_eq!(losses.len(), 10);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    assert!(losses[9] < 0.8 * losses[0], "{losses:?}");
}

fn temporal(layers: usize, seed: u64) -> TemporalModel {
    let cfg = TemporalConfig {
        layers,
        hidden: 5,
        fc_widths: [6, 4],
    };
    TemporalModel::new(&cfg, 3, 4, &mut rng(seed)).unwrap()
}

fn frames(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect()
}

#[test]
fn constant_input_without_recurrence_is_length_invariant() {
    let mut m = temporal(2, 30);
    for (fwd, bwd) in m.gru.layers.clone() {
        for cell in [fwd, bwd] {
            for id in [cell.u_z, cell.u_r, cell.u_h, cell.w_z] {
                m.store.get_mut(id).value.fill(0.0);
            }
            // z = 1 exactly: every state is the fresh candidate.
            m.store.get_mut(cell.b_z).value.fill(40.0);
        }
    }
    let frame = frames(1, 31).remove(0);
    let short = m.predict(&vec![frame.clone(); 3]).unwrap();
    let long = m.predict(&vec![frame; 6]).unwrap();
    assert!(max_diff(&short.video_logits, &long.video_logits) < 1e-12);
    assert_eq!(long.frame_logits.rows(), 6);
}

#[test]
fn reversal_swaps_direction_halves() {
    let mut m = temporal(1, 32);
    let (fwd, bwd) = m.gru.layers[0].clone();
    let pairs = [
        (fwd.w_z, bwd.w_z),
        (fwd.u_z, bwd.u_z),
        (fwd.b_z, bwd.b_z),
        (fwd.w_r, bwd.w_r),
        (fwd.u_r, bwd.u_r),
        (fwd.b_r, bwd.b_r),
        (fwd.w_h, bwd.w_h),
        (fwd.u_h, bwd.u_h),
        (fwd.b_h, bwd.b_h),
    ];
    for (f, b) in pairs {
        let v = m.store.value(f).clone();
        m.store.get_mut(b).value = v;
    }
    let seq = frames(5, 33);
    let states = |seq: &[Vec<f64>]| {
        let mut g = Graph::new(&m.store, false, rng(0));
        let vars: Vec<_> = seq
            .iter()
            .map(|e| g.input(Tensor::new(&[1, 3], e.clone()).unwrap()))
            .collect();
        let out = m.gru.forward(&mut g, &vars).unwrap();
        out.iter().map(|&v| g.value(v).data().to_vec()).collect::<Vec<_>>()
    };
    let ahead = states(&seq);
    let mut rev = seq.clone();
    rev.reverse();
    let back = states(&rev);
    let h = 5;
    for t in 0..seq.len() {
        let mirror = &ahead[seq.len() - 1 - t];
        assert_eq!(&back[t][..h], &mirror[h..]);
        assert_eq!(&back[t][h..], &mirror[..h]);
    }
}

#[test]
fn video_logits_depend_on_every_frame() {
    let m = temporal(2, 34);
    let seq = frames(6, 35);
    let base = m.predict(&seq).unwrap().video_logits;
    for t in 0..seq.len() {
        let mut changed = seq.clone();
        changed[t] = vec![0.0; 3];
        let v = m.predict(&changed).unwrap().video_logits;
        assert!(max_diff(&base, &v) > 1e-12, "frame {t}");
    }
}
