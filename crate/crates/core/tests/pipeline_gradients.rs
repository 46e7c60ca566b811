use handact_core::detection::GLOBAL_WIDTH;
use handact_core::nn::gradcheck::{gradient_check, GraphObjective};
use handact_core::nn::{rng, Graph, ParamId, ParamStore, Tensor};
use handact_core::pipeline::{
    loss_action_frame, loss_local, loss_object, BatchInput, ClassCounts, CurvatureVariant, Generator, LossWeights,
    ModelConfig,
};
use handact_core::temporal::{loss_action_temporal, TemporalConfig, TemporalModel};
use rand::Rng;

const TOL: f64 = 1e-4;
const BATCH: usize = 2;

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

fn tiny_config(curvature: CurvatureVariant) -> ModelConfig {
    ModelConfig {
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
        curvature,
    }
}

const CLASSES: ClassCounts = ClassCounts {
    grasp: 5,
    object: 3,
    action: 4,
};

struct Inputs {
    hand: Tensor,
    object: Tensor,
    present: Tensor,
    global: Tensor,
    curvature: Tensor,
    mask: Tensor,
}

fn inputs() -> Inputs {
    let patch = 3 * 8 * 8;
    let mut mask = random(&[BATCH, 778], 15, 0.0, 1.0);
    mask.data_mut()
        .iter_mut()
        .for_each(|m| *m = if *m < 0.1 { 0.0 } else { 1.0 });
    Inputs {
        hand: random(&[BATCH, patch], 11, 0.0, 1.0),
        object: random(&[BATCH, patch], 12, 0.0, 1.0),
        // Second frame has no object.
        present: Tensor::new(&[BATCH, 1], vec![1.0, 0.0]).unwrap(),
        global: random(&[BATCH, GLOBAL_WIDTH], 13, 0.0, 1.0),
        curvature: random(&[BATCH, 778], 14, -0.5, 0.5),
        mask,
    }
}

fn frame_loss_check(variant: CurvatureVariant) {
    let mut gen = Generator::new(&tiny_config(variant), CLASSES, &mut rng(21)).unwrap();
    let x = inputs();
    if variant.kind().is_some() {
        // Same start as training: the residual begins near the target mean,
        // which keeps the loss small enough for clean finite differences.
        let d = x.curvature.data();
        let mean: Vec<f64> = (0..778).map(|j| (d[j] + d[778 + j]) / 2.0).collect();
        gen.init_curvature_bias(&mean).unwrap();
    }
    let w = LossWeights::default();
    let (grasp, objects, actions) = ([1, 4], [2, 0], [3, 1]);
    let obj = GraphObjective::new(|g: &mut Graph| {
        let input = BatchInput {
            hand: &x.hand,
            object: &x.object,
            object_present: &x.present,
            global: &x.global,
        };
        let out = gen.forward(g, &input)?;
        let curv = out.local.curvature.map(|c| (c, &x.curvature, &x.mask));
        let l_local = loss_local(g, out.local.grasp_logits, &grasp, curv, &w)?;
        let l_object = loss_object(g, out.object_logits, &objects)?;
        loss_action_frame(g, out.action_logits, &actions, l_object, l_local, &w)
    })
    .training(5);
    let mut store = gen.store.clone();
    let ids: Vec<ParamId> = store.ids().collect();
    let report = gradient_check(&mut store, &ids, &obj, TOL).unwrap();
    assert!(report.passed(), "{report:?}");
    assert_eq!(store, gen.store);
}

#[test]
fn full_generator_with_curvature() {
    frame_loss_check(CurvatureVariant::Mean);
}

#[test]
fn full_generator_without_curvature() {
    frame_loss_check(CurvatureVariant::None);
}

#[test]
fn frame_loss_reaches_every_subnetwork() {
    let gen = Generator::new(&tiny_config(CurvatureVariant::Mean), CLASSES, &mut rng(22)).unwrap();
    let x = inputs();
    let w = LossWeights::default();
    let mut g = Graph::new(&gen.store, false, rng(0));
    let input = BatchInput {
        hand: &x.hand,
        object: &x.object,
        object_present: &x.present,
        global: &x.global,
    };
    let out = gen.forward(&mut g, &input).unwrap();
    let curv = out.local.curvature.map(|c| (c, &x.curvature, &x.mask));
    let l_local = loss_local(&mut g, out.local.grasp_logits, &[0, 1], curv, &w).unwrap();
    let l_object = loss_object(&mut g, out.object_logits, &[0, 1]).unwrap();
    let loss = loss_action_frame(&mut g, out.action_logits, &[0, 1], l_object, l_local, &w).unwrap();
    let grads = g.backward(loss).unwrap();
    let nonzero = |ids: Vec<ParamId>| {
        ids.iter()
            .any(|&id| grads.get(id).is_some_and(|t| t.data().iter().any(|v| *v != 0.0)))
    };
    assert!(nonzero(gen.local_params()));
    assert!(nonzero(gen.object_params()));
    assert!(nonzero(gen.mixture.params()));
    assert!(nonzero(gen.relation.params()));
}

#[test]
fn temporal_model_and_loss() {
    let cfg = TemporalConfig {
        layers: 2,
        hidden: 3,
        fc_widths: [4, 3],
    };
    let model = TemporalModel::new(&cfg, 5, 4, &mut rng(31)).unwrap();
    let seq: Vec<Tensor> = (0..4).map(|t| random(&[BATCH, 5], 40 + t, -1.0, 1.0)).collect();
    let obj = GraphObjective::new(|g: &mut Graph| {
        let vars: Vec<_> = seq.iter().map(|t| g.input(t.clone())).collect();
        let (steps, video) = model.forward(g, &vars)?;
        loss_action_temporal(g, &steps, video, &[2, 0])
    });
    let mut store: ParamStore = model.store.clone();
    let ids: Vec<ParamId> = store.ids().collect();
    let report = gradient_check(&mut store, &ids, &obj, TOL).unwrap();
    assert!(report.passed(), "{report:?}");
}
