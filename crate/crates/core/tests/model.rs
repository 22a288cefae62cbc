use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use texrefine::model::{mask_fusion, Model, ModelConfig, RefineMode, SIGMA_FLOOR};
use texrefine::tensor::{Mode, Tape, Tensor};
use texrefine::Error;

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn inputs(b: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    (random(&[b, 3, 128, 64], seed, -1.0, 1.0), random(&[b, 1, 128, 64], seed + 1, 0.0, 1.0).map(|v| (v * 6.0).floor() / 6.0))
}

fn small(refine: RefineMode) -> Model<f64> {
    Model::new(ModelConfig { width: 4, refine }, 7).unwrap()
}

#[test]
fn output_shapes_for_every_branch() {
    let model = small(RefineMode::Deformable);
    let tape = Tape::inference();
    let (i, p) = inputs(2, 1);
    let est = model.estimate_texture(&tape, tape.constant(i.clone()), tape.constant(p)).unwrap();
    assert!(est.refined);
    for out in [est.output, est.intermediate] {
        assert_eq!(out.flow.shape(), [2, 2, 128, 128]);
        assert_eq!(out.rgb.shape(), [2, 3, 128, 128]);
        assert_eq!(out.mask.shape(), [2, 1, 128, 128]);
        assert_eq!(out.texture.shape(), [2, 3, 128, 128]);
    }
    let sigma = model.confidence_forward(&tape, tape.constant(i)).unwrap();
    assert_eq!(sigma.shape(), [2, 1, 128, 64]);
    assert!(sigma.value().data().iter().all(|&s| s >= SIGMA_FLOOR));
}

#[test]
fn wrong_input_geometry_is_a_contract_error() {
    let model = small(RefineMode::None);
    let tape = Tape::inference();
    let bad = tape.constant(Tensor::zeros(&[1, 3, 64, 64]));
    let parts = tape.constant(Tensor::zeros(&[1, 1, 64, 64]));
    assert!(matches!(model.estimate_texture(&tape, bad, parts), Err(Error::Contract { .. })));
    let (i, _) = inputs(1, 0);
    let short = tape.constant(Tensor::zeros(&[1, 1, 128, 32]));
    assert!(matches!(model.backbone_forward(&tape, tape.constant(i), short), Err(Error::Contract { .. })));
}

#[test]
fn zero_head_gives_neutral_maps() {
    for refine in [RefineMode::None, RefineMode::Deformable] {
        let mut model = small(refine);
        model.zero_head();
        let tape = Tape::inference();
        let (i, p) = inputs(1, 2);
        let out = model.estimate_texture(&tape, tape.constant(i), tape.constant(p)).unwrap().output;
        assert!(out.flow.value().data().iter().all(|&v| v == 0.0));
        assert!(out.rgb.value().data().iter().all(|&v| v == 0.0));
        assert!(out.mask.value().data().iter().all(|&v| v == 0.5));
    }
}

#[test]
fn zero_confidence_head_gives_ln_two() {
    let mut model = small(RefineMode::None);
    model.zero_confidence_head();
    let tape = Tape::inference();
    let sigma = model.confidence_forward(&tape, tape.constant(inputs(1, 3).0)).unwrap().value();
    assert!(sigma.data().iter().all(|&s| (s - std::f64::consts::LN_2).abs() < 1e-12));
}

#[test]
fn mask_fusion_limits_and_cancellation() {
    let tape = Tape::inference();
    let image = tape.constant(random(&[1, 3, 128, 64], 5, -1.0, 1.0));
    let flow = tape.constant(random(&[1, 2, 128, 128], 6, -1.0, 1.0));
    let rgb = tape.constant(random(&[1, 3, 128, 128], 7, -1.0, 1.0));
    let sampled = image.grid_sample(flow).unwrap().value();
    let fuse = |m: f64, rgb| mask_fusion(rgb, flow, tape.constant(Tensor::full(&[1, 1, 128, 128], m)), image).unwrap().value();

    assert_eq!(fuse(1.0, rgb), sampled);
    assert_eq!(fuse(0.0, rgb), rgb.value());
    let negated = tape.constant(sampled.map(|v| -v));
    assert!(fuse(0.5, negated).data().iter().all(|&v| v.abs() < 1e-15));
}

#[test]
fn fused_texture_recomputes_bitwise_and_stays_in_range() {
    let model = small(RefineMode::Deformable);
    let tape = Tape::inference();
    let (i, p) = inputs(1, 8);
    let image = tape.constant(i);
    let est = model.estimate_texture(&tape, image, tape.constant(p)).unwrap();
    for out in [est.output, est.intermediate] {
        let again = mask_fusion(out.rgb, out.flow, out.mask, image).unwrap().value();
        assert_eq!(again, out.texture.value());
        assert!(out.texture.value().data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(out.flow.value().data().iter().all(|v| v.abs() < 1.0));
        assert!(out.mask.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn forward_is_deterministic() {
    let (a, b) = (small(RefineMode::Deformable), small(RefineMode::Deformable));
    let (i, p) = inputs(1, 9);
    let run = |m: &Model<f64>| {
        let tape = Tape::new(Mode::Train);
        m.estimate_texture(&tape, tape.constant(i.clone()), tape.constant(p.clone())).unwrap().output.texture.value()
    };
    assert_eq!(run(&a), run(&b));
    assert_eq!(run(&a), run(&a));
}

#[test]
fn parameter_count_at_full_width() {
    let model = Model::<f32>::new(ModelConfig { width: 128, refine: RefineMode::Deformable }, 0).unwrap();
    let count = model.texture_param_count() as f64;
    assert!((count / 8.2e6 - 1.0).abs() <= 0.15, "{count}");
}

/// Central-difference derivative of a weighted sum of the final texture with
/// respect to one element of a named parameter, against the tape gradient.
fn spot_check(refine: RefineMode, name: &str, index: usize) {
    let mut model = small(refine);
    let (i, p) = inputs(1, 10);
    let probe = random(&[1, 3, 128, 128], 11, -1.0, 1.0);
    let objective = |m: &Model<f64>| -> (f64, Option<Tensor<f64>>) {
        let tape = Tape::new(Mode::Train);
        let t = m.estimate_texture(&tape, tape.constant(i.clone()), tape.constant(p.clone())).unwrap().output.texture;
        let loss = t.mul(tape.constant(probe.clone())).unwrap().sum();
        let id = m.store.id(name).unwrap();
        let grads = tape.backward(loss).unwrap();
        (loss.item().unwrap(), grads.param(id).cloned())
    };
    let (_, grad) = objective(&model);
    let analytic = grad.expect("parameter reached by the loss").data()[index];
    let id = model.store.id(name).unwrap();
    // ReLU and bilinear kinks are dense at this size; a tiny step keeps the
    // central difference on one smooth piece.
    let eps = 1e-8;
    let original = model.store.value(id).data()[index];
    model.store.get_mut(id).value.data_mut()[index] = original + eps;
    let up = objective(&model).0;
    model.store.get_mut(id).value.data_mut()[index] = original - eps;
    let down = objective(&model).0;
    let numeric = (up - down) / (2.0 * eps);
    assert!(analytic.abs() > 1e-8, "{name}: zero gradient");
    assert!((analytic - numeric).abs() <= 1e-4 * numeric.abs().max(1.0), "{name}: {analytic} vs {numeric}");
}

#[test]
fn gradient_reaches_first_layer_weights() {
    spot_check(RefineMode::None, "backbone.key.l1.conv.weight", 5);
    spot_check(RefineMode::None, "backbone.value.l1.conv.weight", 17);
}

#[test]
fn gradient_reaches_deformable_and_offset_weights() {
    spot_check(RefineMode::Deformable, "refine.l1.weight", 3);
    spot_check(RefineMode::Deformable, "refine.l3.weight", 8);
    spot_check(RefineMode::Deformable, "refine.offset.weight", 4);
}
