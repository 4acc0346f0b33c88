//! The full training pipeline: VAE pretraining, decoder-to-generator weight
//! transfer, adversarial training, and paired ordinary-vs-transferred
//! experiment orchestration.
//!
//! Every random draw comes from a named stream derived from the run seed, so
//! a config reruns bitwise-identically, and the two arms of a paired
//! experiment share every draw except generator initialization.

use crate::autodiff::{Mode, Tape};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    self, bind, build_network, one_hot, preset_mnist_with, preset_toy2d_with, Conditioning,
    ForwardCtx, Init, Network, ParamStore, Role, BN_MOMENTUM, MNIST_CLASSES, MNIST_LATENT,
    TOY_LATENT,
};
use crate::objectives::{
    gan_loss_d, gan_loss_g, vae_loss, GanLossVariant, LatentPosterior, ReconKind,
};
use crate::optim::{clip_weights, AdamConfig, AdamState};
use crate::rng::{self, replicate_seed, StreamLabels};
use crate::scalar::Real;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetPreset {
    Mnist,
    Toy2d,
}

/// How the generator's weights start a GAN run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorInit {
    Random,
    /// Transferred from a pretrained variational decoder.
    Transferred,
}

/// Every knob of a run. `seed` plus the stream labels determine all draws.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub preset: DatasetPreset,
    pub variant: GanLossVariant,
    pub latent_dim: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub init_std: f64,
    pub vae_steps: usize,
    pub gan_steps: usize,
    pub n_critic: usize,
    pub generator_init: GeneratorInit,
    pub conditioning: bool,
    pub seed: u64,
    pub streams: StreamLabels,
}

impl TrainConfig {
    pub fn defaults(preset: DatasetPreset) -> Self {
        TrainConfig {
            preset,
            variant: GanLossVariant::BceMinimax,
            latent_dim: match preset {
                DatasetPreset::Mnist => MNIST_LATENT,
                DatasetPreset::Toy2d => TOY_LATENT,
            },
            batch_size: 64,
            adam: AdamConfig::default(),
            leaky_slope: 0.2,
            dropout: 0.25,
            init_std: 0.02,
            vae_steps: match preset {
                DatasetPreset::Mnist => 468, // three epochs of a 10k subset
                DatasetPreset::Toy2d => 3000,
            },
            gan_steps: match preset {
                DatasetPreset::Mnist => 156,
                DatasetPreset::Toy2d => 2000,
            },
            n_critic: 1,
            generator_init: GeneratorInit::Random,
            conditioning: false,
            seed: 0,
            streams: StreamLabels::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected_latent = match self.preset {
            DatasetPreset::Mnist => MNIST_LATENT,
            DatasetPreset::Toy2d => TOY_LATENT,
        };
        if self.latent_dim != expected_latent {
            return Err(Error::Config(format!(
                "latent_dim {} does not match the preset's fixed latent dimension {expected_latent}",
                self.latent_dim
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.adam.lr <= 0.0 || self.adam.lr.is_nan() {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.adam.lr
            )));
        }
        for (name, beta) in [("beta1", self.adam.beta1), ("beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!(
                    "{name} must lie in [0, 1), got {beta}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.init_std <= 0.0 || self.init_std.is_nan() {
            return Err(Error::Config(format!(
                "init_std must be positive, got {}",
                self.init_std
            )));
        }
        if self.n_critic == 0 {
            return Err(Error::Config("n_critic must be at least 1".into()));
        }
        if self.conditioning && self.preset == DatasetPreset::Toy2d {
            return Err(Error::Config(
                "label conditioning is only available on the image preset".into(),
            ));
        }
        if !self.streams.distinct() {
            return Err(Error::Config("stream labels must be distinct".into()));
        }
        self.variant.validate()
    }

    fn conditioning_mode(&self) -> Conditioning {
        if self.conditioning {
            Conditioning::LabelOnehot
        } else {
            Conditioning::None
        }
    }

    pub fn generator_spec(&self) -> nn::NetworkSpec {
        match self.preset {
            DatasetPreset::Mnist => preset_mnist_with(
                Role::GeneratorOrDecoder,
                self.conditioning_mode(),
                self.leaky_slope,
                self.dropout,
            ),
            DatasetPreset::Toy2d => preset_toy2d_with(Role::GeneratorOrDecoder, self.leaky_slope),
        }
    }

    pub fn discriminator_spec(&self) -> nn::NetworkSpec {
        let critic = matches!(self.variant, GanLossVariant::WassersteinClip { .. });
        match self.preset {
            DatasetPreset::Mnist => preset_mnist_with(
                Role::Discriminator { critic },
                self.conditioning_mode(),
                self.leaky_slope,
                self.dropout,
            ),
            DatasetPreset::Toy2d => {
                preset_toy2d_with(Role::Discriminator { critic }, self.leaky_slope)
            }
        }
    }

    pub fn encoder_spec(&self) -> nn::NetworkSpec {
        match self.preset {
            DatasetPreset::Mnist => preset_mnist_with(
                Role::Encoder,
                self.conditioning_mode(),
                self.leaky_slope,
                self.dropout,
            ),
            DatasetPreset::Toy2d => preset_toy2d_with(Role::Encoder, self.leaky_slope),
        }
    }

    fn recon_kind(&self) -> ReconKind {
        match self.preset {
            DatasetPreset::Mnist => ReconKind::PixelBce,
            DatasetPreset::Toy2d => ReconKind::Gaussian,
        }
    }

    fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        if dataset.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        let expected = match self.preset {
            DatasetPreset::Mnist => vec![1, 28, 28],
            DatasetPreset::Toy2d => vec![2],
        };
        if dataset.item_shape() != expected {
            return Err(Error::Data(format!(
                "dataset items have shape {:?}, preset expects {expected:?}",
                dataset.item_shape()
            )));
        }
        if self.conditioning && dataset.labels().is_none() {
            return Err(Error::Data(
                "label conditioning requested but the dataset has no labels".into(),
            ));
        }
        Ok(())
    }
}

/// Trained VAE: encoder and decoder networks plus their parameters.
#[derive(Debug)]
pub struct VaeModel<T> {
    pub encoder: Network,
    pub decoder: Network,
    pub encoder_params: ParamStore<T>,
    pub decoder_params: ParamStore<T>,
}

/// Trained GAN: generator and discriminator plus their parameters.
#[derive(Debug)]
pub struct GanModel<T> {
    pub generator: Network,
    pub discriminator: Network,
    pub generator_params: ParamStore<T>,
    pub discriminator_params: ParamStore<T>,
    pub variant: GanLossVariant,
}

/// Per-run record: loss series keyed by name, wall time, summary metrics, and
/// a digest of the consumed batch indices (for verifying paired arms saw
/// identical batches).
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub series: BTreeMap<String, Vec<f64>>,
    pub wall_time_s: f64,
    pub shuffle_digest: u64,
    pub metrics: BTreeMap<String, f64>,
}

impl RunReport {
    fn push(&mut self, name: &str, value: f64) {
        self.series.entry(name.to_string()).or_default().push(value);
    }

    pub fn series_of(&self, name: &str) -> &[f64] {
        self.series.get(name).map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Epoch-reshuffled minibatch index source with drop-last semantics.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    digest: u64,
}

impl BatchSampler {
    fn new(n: usize, batch: usize) -> Result<Self> {
        if n < batch {
            return Err(Error::Data(format!(
                "dataset of {n} items cannot fill one batch of {batch}"
            )));
        }
        Ok(BatchSampler {
            order: (0..n).collect(),
            pos: usize::MAX, // force a shuffle on first use
            batch,
            digest: 0xcbf2_9ce4_8422_2325,
        })
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if self.pos == usize::MAX || self.pos + self.batch > self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let idx = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        for &i in &idx {
            self.digest ^= i as u64;
            self.digest = self.digest.wrapping_mul(0x0000_0100_0000_01b3);
        }
        idx
    }
}

fn sample_latent<T: Real>(batch: usize, dim: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::randn(&[batch, dim], T::one(), rng)
}

fn ensure_finite(name: &str, step: usize, value: f64) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::Numeric(format!(
            "{name} became {value} at step {step}"
        )));
    }
    Ok(value)
}

/// Train the VAE for `config.vae_steps` steps: encode, reparametrize
/// (z = mu + exp(log_var / 2) * eps), decode, and descend the summed
/// regularization and reconstruction losses with Adam on both networks.
pub fn train_vae<T: Real>(
    config: &TrainConfig,
    dataset: &Dataset,
) -> Result<(VaeModel<T>, RunReport)> {
    config.validate()?;
    config.check_dataset(dataset)?;
    let started = Instant::now();
    let seed = config.seed;
    let labels = &config.streams;

    let mut init_rng = rng::stream(seed, &["vae", &labels.init, "encoder"]);
    let (encoder, mut enc_params) = build_network::<T>(
        config.encoder_spec(),
        Init::Normal {
            std: config.init_std,
        },
        &mut init_rng,
    )?;
    let mut init_rng = rng::stream(seed, &["vae", &labels.init, "decoder"]);
    let (decoder, mut dec_params) = build_network::<T>(
        config.generator_spec(),
        Init::Normal {
            std: config.init_std,
        },
        &mut init_rng,
    )?;

    let mut report = RunReport::default();
    let mut shuffle_rng = rng::stream(seed, &["vae", &labels.shuffle]);
    let mut reparam_rng = rng::stream(seed, &["vae", &labels.reparam]);
    let mut dropout_rng = rng::stream(seed, &["vae", &labels.dropout]);
    let mut adam_enc = AdamState::new(config.adam);
    let mut adam_dec = AdamState::new(config.adam);
    let recon_kind = config.recon_kind();
    let momentum = T::from_f64(BN_MOMENTUM);

    if config.vae_steps > 0 {
        let mut sampler = BatchSampler::new(dataset.len(), config.batch_size)?;
        for step in 0..config.vae_steps {
            let idx = sampler.next(&mut shuffle_rng);
            let enc_input = dataset.batch_signed::<T>(&idx)?;
            let target = match recon_kind {
                ReconKind::PixelBce => dataset.batch_unit::<T>(&idx)?,
                ReconKind::Gaussian => enc_input.clone(),
            };

            let mut tape = Tape::new();
            let enc_bind = bind(&mut tape, &enc_params, true);
            let dec_bind = bind(&mut tape, &dec_params, true);
            let cond = match config.conditioning {
                true => {
                    let block = one_hot::<T>(
                        &dataset.batch_labels(&idx).expect("labels checked"),
                        MNIST_CLASSES,
                    )?;
                    Some(tape.constant(block))
                }
                false => None,
            };

            let x = tape.constant(enc_input);
            let mut enc_ctx = ForwardCtx {
                mode: Mode::Train,
                dropout_rng: Some(&mut dropout_rng),
                cond,
            };
            let enc_out = encoder.forward(&mut tape, &enc_bind, x, &mut enc_ctx)?;
            let (mu, log_var) = enc_out.heads.expect("encoder preset has heads");

            let eps = tape.constant(sample_latent::<T>(
                idx.len(),
                config.latent_dim,
                &mut reparam_rng,
            ));
            let half_lv = tape.affine(log_var, T::from_f64(0.5), T::zero());
            let sd = tape.exp(half_lv);
            let noise = tape.mul(sd, eps)?;
            let z = tape.add(mu, noise)?;

            let mut dec_ctx = ForwardCtx {
                mode: Mode::Train,
                dropout_rng: None,
                cond,
            };
            let dec_out = decoder.forward(&mut tape, &dec_bind, z, &mut dec_ctx)?;

            let target_var = tape.constant(target);
            let parts = vae_loss(
                &mut tape,
                &LatentPosterior { mu, log_var },
                dec_out.output,
                target_var,
                recon_kind,
            )?;
            let total = ensure_finite("vae loss", step, tape.value(parts.total).item().as_f64())?;
            let recon = tape.value(parts.recon).item().as_f64();
            let kl = tape.value(parts.kl).item().as_f64();

            tape.backward(parts.total)?;
            enc_bind.accumulate_grads(&tape, &mut enc_params);
            dec_bind.accumulate_grads(&tape, &mut dec_params);
            adam_enc.step(&mut enc_params)?;
            adam_dec.step(&mut dec_params)?;
            for (layer, stats) in &enc_out.bn_stats {
                enc_params.update_running_stats(layer, stats, momentum);
            }
            for (layer, stats) in &dec_out.bn_stats {
                dec_params.update_running_stats(layer, stats, momentum);
            }

            report.push("loss_total", total);
            report.push("loss_recon", recon);
            report.push("loss_kl", kl);
        }
        report.shuffle_digest = sampler.digest;
    }

    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok((
        VaeModel {
            encoder,
            decoder,
            encoder_params: enc_params,
            decoder_params: dec_params,
        },
        report,
    ))
}

/// Copy the decoder's parameters (weights, biases, batch-norm affines, and
/// running statistics) into the generator store. All-or-nothing: any name or
/// shape difference aborts with the complete difference list.
pub fn transfer_weights<T: Real>(source: &ParamStore<T>, target: &mut ParamStore<T>) -> Result<()> {
    target.transfer_from(source)
}

/// Callback invoked at each epoch boundary (including epoch 0, before the
/// first update) with the current generator. Lets callers export per-epoch
/// sample artifacts without breaking stream continuity.
pub type EpochHook<'a, T> = &'a mut dyn FnMut(usize, &Network, &ParamStore<T>) -> Result<()>;

/// Adversarial training for `config.gan_steps` steps. Each step updates the
/// discriminator `n_critic` times on a real batch plus a fresh fake batch
/// (clipping weights after each critic update for the Wasserstein variant),
/// then updates the generator on its own fresh latent batch.
pub fn train_gan<T: Real>(
    config: &TrainConfig,
    dataset: &Dataset,
    transfer_source: Option<&ParamStore<T>>,
) -> Result<(GanModel<T>, RunReport)> {
    train_gan_with(config, dataset, transfer_source, None)
}

/// [`train_gan`] with an optional per-epoch callback.
pub fn train_gan_with<T: Real>(
    config: &TrainConfig,
    dataset: &Dataset,
    transfer_source: Option<&ParamStore<T>>,
    mut hook: Option<EpochHook<'_, T>>,
) -> Result<(GanModel<T>, RunReport)> {
    config.validate()?;
    config.check_dataset(dataset)?;
    match (config.generator_init, transfer_source.is_some()) {
        (GeneratorInit::Transferred, false) => {
            return Err(Error::Contract(
                "generator_init is `transferred` but no decoder store was supplied".into(),
            ))
        }
        (GeneratorInit::Random, true) => {
            return Err(Error::Contract(
                "a decoder store was supplied but generator_init is `random`".into(),
            ))
        }
        _ => {}
    }
    let started = Instant::now();
    let seed = config.seed;
    let labels = &config.streams;

    let mut gen_init_rng = rng::stream(seed, &["gan", &labels.init, "generator"]);
    let gen_init = match transfer_source {
        Some(store) => Init::Transferred(store),
        None => Init::Normal {
            std: config.init_std,
        },
    };
    let (generator, mut gen_params) =
        build_network::<T>(config.generator_spec(), gen_init, &mut gen_init_rng)?;
    let mut disc_init_rng = rng::stream(seed, &["gan", &labels.init, "discriminator"]);
    let (discriminator, mut disc_params) = build_network::<T>(
        config.discriminator_spec(),
        Init::Normal {
            std: config.init_std,
        },
        &mut disc_init_rng,
    )?;

    let mut report = RunReport::default();
    let mut shuffle_rng = rng::stream(seed, &["gan", &labels.shuffle]);
    let mut latent_rng = rng::stream(seed, &["gan", &labels.latent]);
    let mut dropout_rng = rng::stream(seed, &["gan", &labels.dropout]);
    let mut adam_gen = AdamState::new(config.adam);
    let mut adam_disc = AdamState::new(config.adam);
    let momentum = T::from_f64(BN_MOMENTUM);
    let clip_bound = match config.variant {
        GanLossVariant::WassersteinClip { c } => Some(c),
        _ => None,
    };

    if config.gan_steps > 0 {
        let mut sampler = BatchSampler::new(dataset.len(), config.batch_size)?;
        let steps_per_epoch = (dataset.len() / config.batch_size).max(1);
        for step in 0..config.gan_steps {
            if step % steps_per_epoch == 0 {
                if let Some(h) = hook.as_mut() {
                    h(step / steps_per_epoch, &generator, &gen_params)?;
                }
            }
            // discriminator phase
            for _ in 0..config.n_critic {
                let idx = sampler.next(&mut shuffle_rng);
                let real = dataset.batch_signed::<T>(&idx)?;
                let cond_labels = dataset.batch_labels(&idx);

                let mut tape = Tape::new();
                let gen_bind = bind(&mut tape, &gen_params, false);
                let disc_bind = bind(&mut tape, &disc_params, true);
                let cond = match config.conditioning {
                    true => {
                        let block = one_hot::<T>(
                            &cond_labels.expect("labels checked"),
                            MNIST_CLASSES,
                        )?;
                        Some(tape.constant(block))
                    }
                    false => None,
                };

                let z_d = tape.constant(sample_latent::<T>(
                    idx.len(),
                    config.latent_dim,
                    &mut latent_rng,
                ));
                let mut gen_ctx = ForwardCtx {
                    mode: Mode::Train,
                    dropout_rng: Some(&mut dropout_rng),
                    cond,
                };
                let fake = generator.forward(&mut tape, &gen_bind, z_d, &mut gen_ctx)?;

                let real_var = tape.constant(real);
                let mut d_real_ctx = ForwardCtx {
                    mode: Mode::Train,
                    dropout_rng: Some(&mut dropout_rng),
                    cond,
                };
                let d_real =
                    discriminator.forward(&mut tape, &disc_bind, real_var, &mut d_real_ctx)?;
                let mut d_fake_ctx = ForwardCtx {
                    mode: Mode::Train,
                    dropout_rng: Some(&mut dropout_rng),
                    cond,
                };
                let d_fake =
                    discriminator.forward(&mut tape, &disc_bind, fake.output, &mut d_fake_ctx)?;

                let loss_d = gan_loss_d(&mut tape, config.variant, d_real.output, d_fake.output)?;
                let loss_d_val = ensure_finite(
                    "discriminator loss",
                    step,
                    tape.value(loss_d).item().as_f64(),
                )?;
                tape.backward(loss_d)?;
                disc_bind.accumulate_grads(&tape, &mut disc_params);
                adam_disc.step(&mut disc_params)?;
                if let Some(c) = clip_bound {
                    clip_weights(&mut disc_params, c)?;
                }
                for (layer, stats) in &fake.bn_stats {
                    gen_params.update_running_stats(layer, stats, momentum);
                }
                for (layer, stats) in d_real.bn_stats.iter().chain(d_fake.bn_stats.iter()) {
                    disc_params.update_running_stats(layer, stats, momentum);
                }
                report.push("loss_d", loss_d_val);
            }

            // generator phase, on a fresh latent batch
            let mut tape = Tape::new();
            let gen_bind = bind(&mut tape, &gen_params, true);
            let disc_bind = bind(&mut tape, &disc_params, false);
            let cond = match config.conditioning {
                true => {
                    // labels for generated samples cycle deterministically
                    let labels_vec: Vec<u8> = (0..config.batch_size)
                        .map(|i| (i % MNIST_CLASSES) as u8)
                        .collect();
                    Some(tape.constant(one_hot::<T>(&labels_vec, MNIST_CLASSES)?))
                }
                false => None,
            };
            let z_g = tape.constant(sample_latent::<T>(
                config.batch_size,
                config.latent_dim,
                &mut latent_rng,
            ));
            let mut gen_ctx = ForwardCtx {
                mode: Mode::Train,
                dropout_rng: Some(&mut dropout_rng),
                cond,
            };
            let fake = generator.forward(&mut tape, &gen_bind, z_g, &mut gen_ctx)?;
            let mut disc_ctx = ForwardCtx {
                mode: Mode::Train,
                dropout_rng: Some(&mut dropout_rng),
                cond,
            };
            let d_fake = discriminator.forward(&mut tape, &disc_bind, fake.output, &mut disc_ctx)?;
            let loss_g = gan_loss_g(&mut tape, config.variant, d_fake.output)?;
            let loss_g_val =
                ensure_finite("generator loss", step, tape.value(loss_g).item().as_f64())?;
            tape.backward(loss_g)?;
            gen_bind.accumulate_grads(&tape, &mut gen_params);
            adam_gen.step(&mut gen_params)?;
            for (layer, stats) in &fake.bn_stats {
                gen_params.update_running_stats(layer, stats, momentum);
            }
            for (layer, stats) in &d_fake.bn_stats {
                disc_params.update_running_stats(layer, stats, momentum);
            }
            report.push("loss_g", loss_g_val);
        }
        report.shuffle_digest = sampler.digest;
    }

    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok((
        GanModel {
            generator,
            discriminator,
            generator_params: gen_params,
            discriminator_params: disc_params,
            variant: config.variant,
        },
        report,
    ))
}

/// One seed's worth of a paired experiment.
#[derive(Debug)]
pub struct PairedRun<T> {
    pub seed_index: usize,
    pub replicate_seed: u64,
    pub vae_model: VaeModel<T>,
    pub vae_report: RunReport,
    pub ordinary_model: GanModel<T>,
    pub ordinary_report: RunReport,
    pub unbalanced_model: GanModel<T>,
    pub unbalanced_report: RunReport,
}

/// For each replicate seed: pretrain one VAE, then train two GANs with
/// identical GAN-phase streams — one generator randomly initialized, one
/// initialized from the pretrained decoder. Everything except generator
/// initialization (shuffles, latents, dropout, discriminator init) coincides
/// between the arms.
pub fn run_paired_experiment<T: Real>(
    config: &TrainConfig,
    dataset: &Dataset,
    n_seeds: usize,
) -> Result<Vec<PairedRun<T>>> {
    config.validate()?;
    if n_seeds == 0 {
        return Err(Error::Contract(
            "paired experiment needs n_seeds >= 1".into(),
        ));
    }
    let mut runs = Vec::with_capacity(n_seeds);
    for s in 0..n_seeds {
        let seed = replicate_seed(config.seed, s);
        let mut cfg = config.clone();
        cfg.seed = seed;

        let (vae_model, mut vae_report) = train_vae::<T>(&cfg, dataset)?;

        let mut ordinary_cfg = cfg.clone();
        ordinary_cfg.generator_init = GeneratorInit::Random;
        let (ordinary_model, mut ordinary_report) = train_gan::<T>(&ordinary_cfg, dataset, None)?;

        let mut unbalanced_cfg = cfg.clone();
        unbalanced_cfg.generator_init = GeneratorInit::Transferred;
        let (unbalanced_model, mut unbalanced_report) =
            train_gan::<T>(&unbalanced_cfg, dataset, Some(&vae_model.decoder_params))?;

        for report in [
            &mut vae_report,
            &mut ordinary_report,
            &mut unbalanced_report,
        ] {
            let names: Vec<String> = report.series.keys().cloned().collect();
            for name in names {
                if let Ok(stats) = crate::metrics::loss_stats(report.series_of(&name)) {
                    report.metrics.insert(format!("{name}_mean"), stats.mean);
                    report.metrics.insert(format!("{name}_std"), stats.std);
                }
            }
        }

        runs.push(PairedRun {
            seed_index: s,
            replicate_seed: seed,
            vae_model,
            vae_report,
            ordinary_model,
            ordinary_report,
            unbalanced_model,
            unbalanced_report,
        });
    }
    Ok(runs)
}

/// Run a network in eval mode over a batched input (no labels, batch norm on
/// running statistics, dropout off).
pub fn forward_eval<T: Real>(
    net: &Network,
    params: &ParamStore<T>,
    input: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let binding = bind(&mut tape, params, false);
    let x = tape.constant(input.clone());
    let out = net.forward(&mut tape, &binding, x, &mut ForwardCtx::eval())?;
    Ok(tape.value(out.output).clone())
}

/// Sample `n` generator outputs in eval mode, batching internally. The latent
/// draws come from the provided stream.
pub fn generate_samples<T: Real>(
    model: &GanModel<T>,
    n: usize,
    latent_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>> {
    if n == 0 {
        return Err(Error::Contract("generate_samples needs n >= 1".into()));
    }
    let mut chunks: Vec<Tensor<T>> = Vec::new();
    let mut remaining = n;
    while remaining > 0 {
        let take = remaining.min(256);
        let z = sample_latent::<T>(take, latent_dim, rng);
        chunks.push(forward_eval(
            &model.generator,
            &model.generator_params,
            &z,
        )?);
        remaining -= take;
    }
    let item: usize = chunks[0].shape()[1..].iter().product();
    let mut shape = vec![n];
    shape.extend_from_slice(&chunks[0].shape()[1..]);
    let mut data = Vec::with_capacity(n * item);
    for c in &chunks {
        data.extend_from_slice(c.data());
    }
    Tensor::new(shape, data)
}

/// Generator samples as 2-d points (toy preset).
pub fn generate_points<T: Real>(
    model: &GanModel<T>,
    n: usize,
    latent_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<[f64; 2]>> {
    let t = generate_samples(model, n, latent_dim, rng)?;
    if t.shape().len() != 2 || t.shape()[1] != 2 {
        return Err(Error::Dimension {
            op: "generate_points",
            detail: format!("expected [n, 2] samples, got {:?}", t.shape()),
        });
    }
    Ok(t
        .data()
        .chunks_exact(2)
        .map(|c| [c[0].as_f64(), c[1].as_f64()])
        .collect())
}
