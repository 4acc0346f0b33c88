//! Network construction, preset shape, and transfer-compatibility tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ugan_core::autodiff::Tape;
use ugan_core::nn::{
    self, bind, build_network, preset_mnist, preset_mnist_classifier, preset_toy2d, Conditioning,
    ForwardCtx, Init, LayerKind, LayerSpec, NetworkSpec, Role,
};
use ugan_core::Tensor;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn mnist_generator_maps_latent_to_image() {
    let spec = preset_mnist(Role::GeneratorOrDecoder, Conditioning::None);
    let (net, store) = build_network::<f32>(spec, Init::Normal { std: 0.02 }, &mut rng(1)).unwrap();
    let mut tape = Tape::new();
    let binding = bind(&mut tape, &store, false);
    let z = tape.constant(Tensor::randn(&[3, 128], 1.0, &mut rng(2)));
    let out = net
        .forward(&mut tape, &binding, z, &mut ForwardCtx::eval())
        .unwrap();
    assert_eq!(tape.value(out.output).shape(), &[3, 1, 28, 28]);
    // tanh output range
    assert!(tape
        .value(out.output)
        .data()
        .iter()
        .all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn initialized_weight_std_matches_requested() {
    // One wide dense layer gives 1e6+ draws to estimate the std from.
    let spec = NetworkSpec {
        layers: vec![LayerSpec::new(
            "wide",
            LayerKind::Dense {
                input: 1000,
                output: 1000,
            },
        )],
        heads: None,
        input_shape: vec![1000],
        output_shape: vec![1000],
    };
    let (_, store) = build_network::<f32>(spec, Init::Normal { std: 0.02 }, &mut rng(3)).unwrap();
    let w = &store.get("wide.weight").unwrap().value;
    let n = w.numel() as f64;
    let mean: f64 = w.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var: f64 = w
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    assert!((std - 0.02).abs() <= 0.001, "std {std}");
    assert!(mean.abs() < 1e-3, "mean {mean}");
}

#[test]
fn transferred_init_copies_bitwise() {
    let spec = preset_toy2d(Role::GeneratorOrDecoder);
    let (_, source) =
        build_network::<f32>(spec.clone(), Init::Normal { std: 0.02 }, &mut rng(4)).unwrap();
    let (_, copy) = build_network::<f32>(spec, Init::Transferred(&source), &mut rng(5)).unwrap();
    assert!(copy.bit_eq(&source));
}

#[test]
fn building_twice_from_same_seed_is_bitwise_identical() {
    let spec = preset_mnist(Role::Discriminator { critic: false }, Conditioning::None);
    let (_, a) = build_network::<f32>(spec.clone(), Init::Normal { std: 0.02 }, &mut rng(6)).unwrap();
    let (_, b) = build_network::<f32>(spec, Init::Normal { std: 0.02 }, &mut rng(6)).unwrap();
    assert!(a.bit_eq(&b));
}

#[test]
fn discriminator_and_encoder_trunks_share_shapes() {
    let disc = preset_mnist(Role::Discriminator { critic: false }, Conditioning::None);
    let enc = preset_mnist(Role::Encoder, Conditioning::None);
    // Identical layer stacks up to the output layer(s).
    let disc_trunk: Vec<_> = disc
        .layers
        .iter()
        .take_while(|l| l.name != "fc_out")
        .collect();
    let enc_trunk: Vec<_> = enc.layers.iter().collect();
    assert_eq!(disc_trunk, enc_trunk);
}

#[test]
fn encoder_heads_have_latent_shape() {
    let spec = preset_mnist(Role::Encoder, Conditioning::None);
    let (net, store) = build_network::<f32>(spec, Init::Normal { std: 0.02 }, &mut rng(7)).unwrap();
    let mut tape = Tape::new();
    let binding = bind(&mut tape, &store, false);
    let x = tape.constant(Tensor::randn(&[5, 1, 28, 28], 1.0, &mut rng(8)));
    let out = net
        .forward(&mut tape, &binding, x, &mut ForwardCtx::eval())
        .unwrap();
    let (mu, lv) = out.heads.unwrap();
    assert_eq!(tape.value(mu).shape(), &[5, 128]);
    assert_eq!(tape.value(lv).shape(), &[5, 128]);
}

#[test]
fn toy_presets_have_declared_shapes_and_transfer_compat() {
    let gen = preset_toy2d(Role::GeneratorOrDecoder);
    let (net, gen_store) =
        build_network::<f32>(gen, Init::Normal { std: 0.02 }, &mut rng(9)).unwrap();
    let mut tape = Tape::new();
    let binding = bind(&mut tape, &gen_store, false);
    let z = tape.constant(Tensor::randn(&[7, 16], 1.0, &mut rng(10)));
    let out = net
        .forward(&mut tape, &binding, z, &mut ForwardCtx::eval())
        .unwrap();
    assert_eq!(tape.value(out.output).shape(), &[7, 2]);

    let enc = preset_toy2d(Role::Encoder);
    let (enc_net, enc_store) =
        build_network::<f32>(enc, Init::Normal { std: 0.02 }, &mut rng(11)).unwrap();
    let x = tape.constant(Tensor::randn(&[7, 2], 1.0, &mut rng(12)));
    let ebind = bind(&mut tape, &enc_store, false);
    let eout = enc_net
        .forward(&mut tape, &ebind, x, &mut ForwardCtx::eval())
        .unwrap();
    let (mu, lv) = eout.heads.unwrap();
    assert_eq!(tape.value(mu).shape(), &[7, 16]);
    assert_eq!(tape.value(lv).shape(), &[7, 16]);

    // decoder preset is the same preset; stores must be transfer-compatible
    let dec = preset_toy2d(Role::GeneratorOrDecoder);
    let (_, dec_store) = build_network::<f32>(dec, Init::Normal { std: 0.02 }, &mut rng(13)).unwrap();
    assert!(dec_store.compatibility_diff(&gen_store).is_empty());
}

#[test]
fn mnist_generator_and_decoder_are_transfer_compatible() {
    let (_, g) = build_network::<f32>(
        preset_mnist(Role::GeneratorOrDecoder, Conditioning::None),
        Init::Normal { std: 0.02 },
        &mut rng(14),
    )
    .unwrap();
    let (_, d) = build_network::<f32>(
        preset_mnist(Role::GeneratorOrDecoder, Conditioning::None),
        Init::Normal { std: 0.02 },
        &mut rng(15),
    )
    .unwrap();
    assert!(d.compatibility_diff(&g).is_empty());
}

#[test]
fn wasserstein_critic_has_no_sigmoid() {
    let critic = preset_mnist(Role::Discriminator { critic: true }, Conditioning::None);
    assert!(critic.layers.iter().all(|l| l.name != "score"));
    let disc = preset_mnist(Role::Discriminator { critic: false }, Conditioning::None);
    assert!(disc.layers.iter().any(|l| l.name == "score"));
}

#[test]
fn validation_names_first_offending_layer() {
    let spec = NetworkSpec {
        layers: vec![
            LayerSpec::new(
                "a",
                LayerKind::Dense {
                    input: 4,
                    output: 8,
                },
            ),
            LayerSpec::new(
                "bad",
                LayerKind::Dense {
                    input: 9,
                    output: 2,
                },
            ),
        ],
        heads: None,
        input_shape: vec![4],
        output_shape: vec![2],
    };
    let err = spec.validate().unwrap_err().to_string();
    assert!(err.contains("`bad`"), "{err}");
}

#[test]
fn validation_rejects_duplicate_names() {
    let spec = NetworkSpec {
        layers: vec![
            LayerSpec::new("x", LayerKind::Flatten),
            LayerSpec::new("x", LayerKind::Flatten),
        ],
        heads: None,
        input_shape: vec![2, 2],
        output_shape: vec![4],
    };
    let err = spec.validate().unwrap_err().to_string();
    assert!(err.contains("duplicate"), "{err}");
}

#[test]
fn validation_rejects_wrong_declared_output() {
    let mut spec = preset_toy2d(Role::GeneratorOrDecoder);
    spec.output_shape = vec![3];
    assert!(spec.validate().is_err());
}

#[test]
fn transfer_mismatch_lists_every_difference() {
    let (_, gen) = build_network::<f32>(
        preset_toy2d(Role::GeneratorOrDecoder),
        Init::Normal { std: 0.02 },
        &mut rng(16),
    )
    .unwrap();
    let (_, mut other) = build_network::<f32>(
        preset_toy2d(Role::GeneratorOrDecoder),
        Init::Normal { std: 0.02 },
        &mut rng(17),
    )
    .unwrap();
    // induce one extra, one missing, one shape change
    other.insert(
        "extra.weight".into(),
        ugan_core::nn::ParamKind::Weight,
        Tensor::zeros(&[1]),
    );
    let mut source = gen.clone();
    source.insert(
        "ghost.bias".into(),
        ugan_core::nn::ParamKind::Bias,
        Tensor::zeros(&[2]),
    );
    source.get_mut("fc1.weight").unwrap().value = Tensor::zeros(&[2, 2]);

    let diffs = source.compatibility_diff(&other);
    let text = diffs.join("\n");
    assert!(text.contains("extra.weight"), "{text}");
    assert!(text.contains("ghost.bias"), "{text}");
    assert!(text.contains("fc1.weight"), "{text}");
    assert_eq!(diffs.len(), 3, "{text}");

    let err = other.transfer_from(&source).unwrap_err();
    assert!(matches!(err, ugan_core::Error::TransferMismatch { .. }));
}

#[test]
fn conditioned_presets_consume_label_block() {
    let spec = preset_mnist(Role::GeneratorOrDecoder, Conditioning::LabelOnehot);
    let (net, store) =
        build_network::<f32>(spec, Init::Normal { std: 0.02 }, &mut rng(18)).unwrap();
    let mut tape = Tape::new();
    let binding = bind(&mut tape, &store, false);
    let z = tape.constant(Tensor::randn(&[2, 128], 1.0, &mut rng(19)));

    // forward without labels errors
    let err = net
        .forward(&mut tape, &binding, z, &mut ForwardCtx::eval())
        .unwrap_err();
    assert!(err.to_string().contains("label"), "{err}");

    // with labels the output shape is unchanged
    let onehot = nn::one_hot::<f32>(&[3, 7], 10).unwrap();
    let cond = tape.constant(onehot);
    let mut ctx = ForwardCtx::eval();
    ctx.cond = Some(cond);
    let out = net.forward(&mut tape, &binding, z, &mut ctx).unwrap();
    assert_eq!(tape.value(out.output).shape(), &[2, 1, 28, 28]);
}

#[test]
fn classifier_preset_emits_probability_rows() {
    let spec = preset_mnist_classifier();
    let (net, store) = build_network::<f32>(spec, Init::Normal { std: 0.02 }, &mut rng(20)).unwrap();
    let mut tape = Tape::new();
    let binding = bind(&mut tape, &store, false);
    let x = tape.constant(Tensor::randn(&[4, 1, 28, 28], 1.0, &mut rng(21)));
    let out = net
        .forward(&mut tape, &binding, x, &mut ForwardCtx::eval())
        .unwrap();
    assert_eq!(tape.value(out.output).shape(), &[4, 10]);
    for row in tape.value(out.output).data().chunks_exact(10) {
        let s: f32 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-5, "row sum {s}");
        assert!(row.iter().all(|&p| p >= 0.0));
    }
}
