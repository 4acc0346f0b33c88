//! The preset architectures.
//!
//! Image presets follow DCGAN-style guidelines at 28x28: 3x3 stride-2 convs
//! for downsampling, 3x3 stride-2 fractional convs for upsampling, leaky ReLU
//! in generator/decoder hidden layers, plain ReLU in encoder/discriminator
//! hidden layers, tanh on the generator output, sigmoid on the discriminator
//! output (dropped for the Wasserstein critic, which must be unbounded).
//! Batch norm sits between all layers except the generator output layer and
//! the encoder/discriminator input layer.
//!
//! The generator and decoder share one preset, so their parameter stores are
//! transfer-compatible by construction. The encoder mirrors the discriminator
//! trunk but ends in two dense heads (mu, log-variance).

use super::{ActKind, LayerKind, LayerSpec, NetworkSpec};

pub const MNIST_LATENT: usize = 128;
pub const TOY_LATENT: usize = 16;
pub const MNIST_CLASSES: usize = 10;

/// Which of the four networks to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Generator and variational decoder (identical architecture).
    GeneratorOrDecoder,
    /// `critic: true` drops the output sigmoid for the Wasserstein variant.
    Discriminator { critic: bool },
    Encoder,
}

/// Optional label conditioning: one-hot concatenated to the latent vector
/// (generator/decoder) or to the flattened features (discriminator/encoder).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    None,
    LabelOnehot,
}

fn act(name: &str, kind: ActKind) -> LayerSpec {
    LayerSpec::new(name, LayerKind::Activation { kind, slope: 0.0 })
}

fn leaky(name: &str, slope: f64) -> LayerSpec {
    LayerSpec::new(
        name,
        LayerKind::Activation {
            kind: ActKind::LeakyRelu,
            slope,
        },
    )
}

/// 28x28 single-channel preset with the hidden widths (64, 128) and the
/// 7x7x128 bottleneck the stride-2 geometry forces.
pub fn preset_mnist(role: Role, conditioning: Conditioning) -> NetworkSpec {
    preset_mnist_with(role, conditioning, 0.2, 0.25)
}

pub fn preset_mnist_with(
    role: Role,
    conditioning: Conditioning,
    slope: f64,
    dropout: f64,
) -> NetworkSpec {
    let cond = matches!(conditioning, Conditioning::LabelOnehot);
    match role {
        Role::GeneratorOrDecoder => {
            let mut layers = Vec::new();
            let mut fc_in = MNIST_LATENT;
            if cond {
                layers.push(LayerSpec::new(
                    "cond",
                    LayerKind::ConcatCond {
                        classes: MNIST_CLASSES,
                    },
                ));
                fc_in += MNIST_CLASSES;
            }
            layers.extend([
                LayerSpec::new(
                    "fc",
                    LayerKind::Dense {
                        input: fc_in,
                        output: 128 * 7 * 7,
                    },
                ),
                LayerSpec::new(
                    "reshape",
                    LayerKind::Reshape {
                        shape: vec![128, 7, 7],
                    },
                ),
                LayerSpec::new("bn0", LayerKind::BatchNorm { features: 128 }),
                leaky("act0", slope),
                LayerSpec::new(
                    "up1",
                    LayerKind::ConvTranspose {
                        in_ch: 128,
                        out_ch: 64,
                    },
                ),
                LayerSpec::new("bn1", LayerKind::BatchNorm { features: 64 }),
                leaky("act1", slope),
                LayerSpec::new(
                    "up2",
                    LayerKind::ConvTranspose {
                        in_ch: 64,
                        out_ch: 1,
                    },
                ),
                act("out", ActKind::Tanh),
            ]);
            NetworkSpec {
                layers,
                heads: None,
                input_shape: vec![MNIST_LATENT],
                output_shape: vec![1, 28, 28],
            }
        }
        Role::Discriminator { critic } => {
            let mut layers = mnist_trunk(cond, dropout);
            layers.push(LayerSpec::new(
                "fc_out",
                LayerKind::Dense {
                    input: 128 * 7 * 7 + if cond { MNIST_CLASSES } else { 0 },
                    output: 1,
                },
            ));
            if !critic {
                layers.push(act("score", ActKind::Sigmoid));
            }
            NetworkSpec {
                layers,
                heads: None,
                input_shape: vec![1, 28, 28],
                output_shape: vec![1],
            }
        }
        Role::Encoder => {
            let trunk_out = 128 * 7 * 7 + if cond { MNIST_CLASSES } else { 0 };
            NetworkSpec {
                layers: mnist_trunk(cond, dropout),
                heads: Some(Box::new((
                    LayerSpec::new(
                        "head_mu",
                        LayerKind::Dense {
                            input: trunk_out,
                            output: MNIST_LATENT,
                        },
                    ),
                    LayerSpec::new(
                        "head_logvar",
                        LayerKind::Dense {
                            input: trunk_out,
                            output: MNIST_LATENT,
                        },
                    ),
                ))),
                input_shape: vec![1, 28, 28],
                output_shape: vec![MNIST_LATENT],
            }
        }
    }
}

/// Shared downsampling trunk of the discriminator and encoder:
/// 28x28 -> 14x14 -> 7x7 with dropout after each hidden activation.
fn mnist_trunk(cond: bool, dropout: f64) -> Vec<LayerSpec> {
    let mut layers = vec![
        LayerSpec::new(
            "down1",
            LayerKind::Conv {
                in_ch: 1,
                out_ch: 64,
            },
        ),
        act("act1", ActKind::Relu),
        LayerSpec::new("drop1", LayerKind::Dropout { rate: dropout }),
        LayerSpec::new(
            "down2",
            LayerKind::Conv {
                in_ch: 64,
                out_ch: 128,
            },
        ),
        LayerSpec::new("bn2", LayerKind::BatchNorm { features: 128 }),
        act("act2", ActKind::Relu),
        LayerSpec::new("drop2", LayerKind::Dropout { rate: dropout }),
        LayerSpec::new("flatten", LayerKind::Flatten),
    ];
    if cond {
        layers.push(LayerSpec::new(
            "cond",
            LayerKind::ConcatCond {
                classes: MNIST_CLASSES,
            },
        ));
    }
    layers
}

/// MLP preset over 2-d points, the desk-scale testbed for mode coverage.
/// The generator output is linear: mixture supports are unbounded, so the
/// image preset's tanh would be wrong here.
pub fn preset_toy2d(role: Role) -> NetworkSpec {
    preset_toy2d_with(role, 0.2)
}

pub fn preset_toy2d_with(role: Role, slope: f64) -> NetworkSpec {
    match role {
        Role::GeneratorOrDecoder => NetworkSpec {
            layers: vec![
                LayerSpec::new(
                    "fc1",
                    LayerKind::Dense {
                        input: TOY_LATENT,
                        output: 128,
                    },
                ),
                leaky("act1", slope),
                LayerSpec::new(
                    "fc2",
                    LayerKind::Dense {
                        input: 128,
                        output: 128,
                    },
                ),
                leaky("act2", slope),
                LayerSpec::new(
                    "out",
                    LayerKind::Dense {
                        input: 128,
                        output: 2,
                    },
                ),
            ],
            heads: None,
            input_shape: vec![TOY_LATENT],
            output_shape: vec![2],
        },
        Role::Discriminator { critic } => {
            let mut layers = toy_trunk();
            layers.push(LayerSpec::new(
                "fc_out",
                LayerKind::Dense {
                    input: 128,
                    output: 1,
                },
            ));
            if !critic {
                layers.push(act("score", ActKind::Sigmoid));
            }
            NetworkSpec {
                layers,
                heads: None,
                input_shape: vec![2],
                output_shape: vec![1],
            }
        }
        Role::Encoder => NetworkSpec {
            layers: toy_trunk(),
            heads: Some(Box::new((
                LayerSpec::new(
                    "head_mu",
                    LayerKind::Dense {
                        input: 128,
                        output: TOY_LATENT,
                    },
                ),
                LayerSpec::new(
                    "head_logvar",
                    LayerKind::Dense {
                        input: 128,
                        output: TOY_LATENT,
                    },
                ),
            ))),
            input_shape: vec![2],
            output_shape: vec![TOY_LATENT],
        },
    }
}

fn toy_trunk() -> Vec<LayerSpec> {
    vec![
        LayerSpec::new(
            "fc1",
            LayerKind::Dense {
                input: 2,
                output: 128,
            },
        ),
        act("act1", ActKind::Relu),
        LayerSpec::new(
            "fc2",
            LayerKind::Dense {
                input: 128,
                output: 128,
            },
        ),
        act("act2", ActKind::Relu),
    ]
}

/// Small convolutional digit classifier used as the score network.
/// Probability outputs over ten classes via a softmax output layer.
pub fn preset_mnist_classifier() -> NetworkSpec {
    NetworkSpec {
        layers: vec![
            LayerSpec::new(
                "cls_conv1",
                LayerKind::Conv {
                    in_ch: 1,
                    out_ch: 16,
                },
            ),
            act("cls_act1", ActKind::Relu),
            LayerSpec::new(
                "cls_conv2",
                LayerKind::Conv {
                    in_ch: 16,
                    out_ch: 32,
                },
            ),
            act("cls_act2", ActKind::Relu),
            LayerSpec::new("cls_flatten", LayerKind::Flatten),
            LayerSpec::new(
                "cls_fc1",
                LayerKind::Dense {
                    input: 32 * 7 * 7,
                    output: 64,
                },
            ),
            act("cls_act3", ActKind::Relu),
            LayerSpec::new(
                "cls_out",
                LayerKind::Dense {
                    input: 64,
                    output: MNIST_CLASSES,
                },
            ),
            act("cls_softmax", ActKind::Softmax),
        ],
        heads: None,
        input_shape: vec![1, 28, 28],
        output_shape: vec![MNIST_CLASSES],
    }
}
