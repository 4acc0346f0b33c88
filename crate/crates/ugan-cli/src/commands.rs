//! The five subcommands. Each writes into its own run directory under the
//! output root: `<out>/<run-name>/{config.resolved, checkpoints/, csv/,
//! grids/}`. All artifacts are byte-deterministic given config + seed.

use crate::config::{render_resolved, Resolved};
use std::fs;
use std::path::{Path, PathBuf};
use ugan_core::data::{
    export_image_grid, load_checkpoint, load_mnist_idx, sample_mixture, save_checkpoint,
    synthetic_digits, write_series_csv, Dataset,
};
use ugan_core::metrics::{classifier_score, mode_coverage, train_classifier, Classifier};
use ugan_core::nn::{build_network, Init, ParamStore};
use ugan_core::pipeline::{
    forward_eval, generate_points, generate_samples, run_paired_experiment, train_gan_with,
    train_vae, DatasetPreset, GanModel, GeneratorInit, PairedRun, RunReport,
};
use ugan_core::rng::{self, ChaCha8Rng};
use ugan_core::{Error, Result, Tensor};

const SCORE_SAMPLES: usize = 5000;
const COVERAGE_SAMPLES: usize = 10_000;
const CLASSIFIER_STEPS: usize = 600;

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn create(out_root: &Path, name: &str, resolved: &Resolved) -> Result<Self> {
        let root = out_root.join(name);
        for sub in ["checkpoints", "csv", "grids"] {
            fs::create_dir_all(root.join(sub)).map_err(|e| Error::io(&root, e))?;
        }
        fs::write(root.join("config.resolved"), render_resolved(resolved))
            .map_err(|e| Error::io(&root, e))?;
        Ok(RunDir { root })
    }

    fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(name)
    }

    fn csv(&self, name: &str) -> PathBuf {
        self.root.join("csv").join(name)
    }

    fn grid(&self, name: &str) -> PathBuf {
        self.root.join("grids").join(name)
    }
}

/// Materialize the dataset a config names: IDX files when paths are given,
/// otherwise the seeded synthetic source for the preset.
pub fn load_dataset(resolved: &Resolved) -> Result<Dataset> {
    let ds = match resolved.train.preset {
        DatasetPreset::Mnist => match &resolved.io.mnist_images {
            Some(images) => load_mnist_idx(images, resolved.io.mnist_labels.as_deref())?,
            None => synthetic_digits(resolved.io.max_items, resolved.train.seed),
        },
        DatasetPreset::Toy2d => {
            let mut data_rng = rng::stream(resolved.train.seed, &["data", "mixture"]);
            sample_mixture(&resolved.ring, resolved.io.max_items, &mut data_rng)?
        }
    };
    Ok(ds.truncated(resolved.io.max_items))
}

fn write_gan_csv(dir: &RunDir, report: &RunReport, n_critic: usize) -> Result<()> {
    // one row per generator step; the discriminator column carries the last
    // critic update of that step
    let d_all = report.series_of("loss_d");
    let g = report.series_of("loss_g");
    let d_last: Vec<f64> = (0..g.len())
        .map(|i| d_all[(i + 1) * n_critic - 1])
        .collect();
    write_series_csv(&dir.csv("gan_loss.csv"), &["loss_d", "loss_g"], &[&d_last, g])
}

fn export_samples(
    dir: &RunDir,
    name: &str,
    model: &GanModel<f32>,
    resolved: &Resolved,
    latent_rng: &mut ChaCha8Rng,
) -> Result<()> {
    match resolved.train.preset {
        DatasetPreset::Mnist => {
            let samples = generate_samples(model, 64, resolved.train.latent_dim, latent_rng)?;
            export_image_grid(&samples, 8, &dir.grid(&format!("{name}.pgm")))
        }
        DatasetPreset::Toy2d => {
            let points = generate_points(model, 2000, resolved.train.latent_dim, latent_rng)?;
            write_points_csv(&dir.csv(&format!("{name}.csv")), &points)
        }
    }
}

fn write_points_csv(path: &Path, points: &[[f64; 2]]) -> Result<()> {
    let mut text = String::from("x,y\n");
    for p in points {
        text.push_str(&format!("{},{}\n", p[0], p[1]));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `pretrain-vae`: train the VAE, write encoder/decoder checkpoints, the loss
/// CSV, and a reconstruction artifact.
pub fn cmd_pretrain_vae(resolved: &Resolved, quiet: bool) -> Result<()> {
    let dataset = load_dataset(resolved)?;
    let dir = RunDir::create(&resolved.io.out_dir, "vae", resolved)?;
    let (model, report) = train_vae::<f32>(&resolved.train, &dataset)?;

    save_checkpoint(&model.encoder_params, &dir.checkpoint("encoder.ugan"))?;
    save_checkpoint(&model.decoder_params, &dir.checkpoint("decoder.ugan"))?;
    write_series_csv(
        &dir.csv("vae_loss.csv"),
        &["loss_total", "loss_recon", "loss_kl"],
        &[
            report.series_of("loss_total"),
            report.series_of("loss_recon"),
            report.series_of("loss_kl"),
        ],
    )?;

    // reconstruction artifact: decode prior draws through the trained decoder
    let mut preview_rng = rng::stream(resolved.train.seed, &["preview", "latent"]);
    let z = Tensor::<f32>::randn(&[16, resolved.train.latent_dim], 1.0, &mut preview_rng);
    let decoded = forward_eval(&model.decoder, &model.decoder_params, &z)?;
    match resolved.train.preset {
        DatasetPreset::Mnist => export_image_grid(&decoded, 4, &dir.grid("reconstruction.pgm"))?,
        DatasetPreset::Toy2d => {
            let points: Vec<[f64; 2]> = decoded
                .data()
                .chunks_exact(2)
                .map(|c| [c[0] as f64, c[1] as f64])
                .collect();
            write_points_csv(&dir.csv("reconstruction.csv"), &points)?;
        }
    }
    if !quiet {
        let last = report.series_of("loss_total").last().copied().unwrap_or(f64::NAN);
        println!(
            "pretrain-vae: {} steps, final loss {last}, artifacts in {}",
            resolved.train.vae_steps,
            dir.root.display()
        );
    }
    Ok(())
}

/// `train-gan`: adversarial training with optional decoder transfer; writes
/// checkpoints, the loss CSV, and per-epoch sample artifacts.
pub fn cmd_train_gan(resolved: &Resolved, vae_checkpoint: Option<&Path>, quiet: bool) -> Result<()> {
    let dataset = load_dataset(resolved)?;
    let ckpt_path = vae_checkpoint.or(resolved.io.vae_checkpoint.as_deref());
    let transfer_store: Option<ParamStore<f32>> = match (resolved.train.generator_init, ckpt_path) {
        (GeneratorInit::Transferred, Some(p)) => Some(load_checkpoint(p)?),
        (GeneratorInit::Transferred, None) => {
            return Err(Error::Config(
                "generator_init = vae requires a decoder checkpoint (--vae-checkpoint or [io] vae_checkpoint)"
                    .into(),
            ))
        }
        (GeneratorInit::Random, _) => None,
    };

    let dir = RunDir::create(&resolved.io.out_dir, "gan", resolved)?;
    let mut preview_rng = rng::stream(resolved.train.seed, &["preview", "latent"]);
    let preview_z = Tensor::<f32>::randn(&[64, resolved.train.latent_dim], 1.0, &mut preview_rng);

    let is_image = resolved.train.preset == DatasetPreset::Mnist;
    let dir_ref = &dir;
    let z_ref = &preview_z;
    let mut epoch_hook = move |epoch: usize,
                               net: &ugan_core::nn::Network,
                               params: &ParamStore<f32>|
          -> Result<()> {
        if !is_image {
            return Ok(());
        }
        let samples = forward_eval(net, params, z_ref)?;
        export_image_grid(&samples, 8, &dir_ref.grid(&format!("samples_epoch{epoch:03}.pgm")))
    };
    let (model, report) = train_gan_with(
        &resolved.train,
        &dataset,
        transfer_store.as_ref(),
        Some(&mut epoch_hook),
    )?;

    save_checkpoint(&model.generator_params, &dir.checkpoint("generator.ugan"))?;
    save_checkpoint(
        &model.discriminator_params,
        &dir.checkpoint("discriminator.ugan"),
    )?;
    write_gan_csv(&dir, &report, resolved.train.n_critic)?;
    let mut sample_rng = rng::stream(resolved.train.seed, &["preview", "final"]);
    export_samples(&dir, "samples_final", &model, resolved, &mut sample_rng)?;
    if !quiet {
        println!(
            "train-gan: {} steps, artifacts in {}",
            resolved.train.gan_steps,
            dir.root.display()
        );
    }
    Ok(())
}

fn arm_metrics(
    resolved: &Resolved,
    run: &PairedRun<f32>,
    classifier: Option<&Classifier<f32>>,
) -> Result<(Vec<String>, Vec<String>)> {
    // returns (ordinary cells, unbalanced cells) for score/coverage columns
    let mut ordinary = Vec::new();
    let mut unbalanced = Vec::new();
    match resolved.train.preset {
        DatasetPreset::Toy2d => {
            for (model, cells) in [
                (&run.ordinary_model, &mut ordinary),
                (&run.unbalanced_model, &mut unbalanced),
            ] {
                let mut eval_rng =
                    rng::stream(run.replicate_seed, &["eval", "coverage-latent"]);
                let points =
                    generate_points(model, COVERAGE_SAMPLES, resolved.train.latent_dim, &mut eval_rng)?;
                let cov = mode_coverage(&points, &resolved.ring)?;
                cells.push(String::new()); // score column empty for toy2d
                cells.push(cov.modes_covered.to_string());
                cells.push(cov.high_quality_fraction.to_string());
            }
        }
        DatasetPreset::Mnist => {
            for (model, cells) in [
                (&run.ordinary_model, &mut ordinary),
                (&run.unbalanced_model, &mut unbalanced),
            ] {
                match classifier {
                    Some(clf) => {
                        let mut eval_rng =
                            rng::stream(run.replicate_seed, &["eval", "score-latent"]);
                        let samples = generate_samples(
                            model,
                            SCORE_SAMPLES,
                            resolved.train.latent_dim,
                            &mut eval_rng,
                        )?;
                        let report = classifier_score(&samples, clf)?;
                        cells.push(report.score.to_string());
                    }
                    None => cells.push(String::new()),
                }
                cells.push(String::new()); // coverage columns empty for mnist
                cells.push(String::new());
            }
        }
    }
    Ok((ordinary, unbalanced))
}

/// `experiment`: paired ordinary-vs-transferred runs over n_seeds, one run
/// directory per arm plus an aggregate delta CSV at the output root.
pub fn cmd_experiment(resolved: &Resolved, quiet: bool) -> Result<()> {
    let dataset = load_dataset(resolved)?;
    let runs = run_paired_experiment::<f32>(&resolved.train, &dataset, resolved.n_seeds)?;

    let classifier: Option<Classifier<f32>> = match (
        resolved.train.preset,
        resolved.io.classifier.as_deref(),
    ) {
        (DatasetPreset::Mnist, Some(path)) if path.exists() => {
            Some(Classifier::from_params(load_checkpoint(path)?)?)
        }
        _ => None,
    };

    let mut aggregate_rows: Vec<Vec<String>> = Vec::new();
    for run in &runs {
        for (arm, model, report) in [
            ("ordinary", &run.ordinary_model, &run.ordinary_report),
            ("unbalanced", &run.unbalanced_model, &run.unbalanced_report),
        ] {
            let mut arm_resolved = resolved.clone();
            arm_resolved.train.seed = run.replicate_seed;
            arm_resolved.train.generator_init = match arm {
                "ordinary" => GeneratorInit::Random,
                _ => GeneratorInit::Transferred,
            };
            let dir = RunDir::create(
                &resolved.io.out_dir,
                &format!("seed{}-{arm}", run.seed_index),
                &arm_resolved,
            )?;
            save_checkpoint(&model.generator_params, &dir.checkpoint("generator.ugan"))?;
            save_checkpoint(
                &model.discriminator_params,
                &dir.checkpoint("discriminator.ugan"),
            )?;
            write_gan_csv(&dir, report, resolved.train.n_critic)?;
            if arm == "unbalanced" {
                save_checkpoint(
                    &run.vae_model.decoder_params,
                    &dir.checkpoint("decoder.ugan"),
                )?;
                write_series_csv(
                    &dir.csv("vae_loss.csv"),
                    &["loss_total", "loss_recon", "loss_kl"],
                    &[
                        run.vae_report.series_of("loss_total"),
                        run.vae_report.series_of("loss_recon"),
                        run.vae_report.series_of("loss_kl"),
                    ],
                )?;
            }
            let mut sample_rng = rng::stream(run.replicate_seed, &["preview", "final"]);
            export_samples(&dir, "samples_final", model, resolved, &mut sample_rng)?;
        }

        let g_ord = run.ordinary_report.metrics.get("loss_g_std").copied();
        let g_unb = run.unbalanced_report.metrics.get("loss_g_std").copied();
        let d_ord = run.ordinary_report.metrics.get("loss_d_std").copied();
        let d_unb = run.unbalanced_report.metrics.get("loss_d_std").copied();
        let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let delta = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => (b - a).to_string(),
            _ => String::new(),
        };
        let (ord_cells, unb_cells) = arm_metrics(resolved, run, classifier.as_ref())?;
        let num_delta = |a: &str, b: &str| -> String {
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(a), Ok(b)) => (b - a).to_string(),
                _ => String::new(),
            }
        };
        let mut row = vec![
            run.seed_index.to_string(),
            fmt(g_ord),
            fmt(g_unb),
            delta(g_ord, g_unb),
            fmt(d_ord),
            fmt(d_unb),
            delta(d_ord, d_unb),
        ];
        for i in 0..3 {
            row.push(ord_cells[i].clone());
            row.push(unb_cells[i].clone());
            row.push(num_delta(&ord_cells[i], &unb_cells[i]));
        }
        aggregate_rows.push(row);
    }

    let header = "seed,gen_loss_std_ordinary,gen_loss_std_unbalanced,gen_loss_std_delta,\
                  disc_loss_std_ordinary,disc_loss_std_unbalanced,disc_loss_std_delta,\
                  score_ordinary,score_unbalanced,score_delta,\
                  modes_ordinary,modes_unbalanced,modes_delta,\
                  hq_ordinary,hq_unbalanced,hq_delta"
        .replace(' ', "");
    let mut text = header;
    text.push('\n');
    for row in &aggregate_rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    let agg_path = resolved.io.out_dir.join("aggregate.csv");
    fs::create_dir_all(&resolved.io.out_dir).map_err(|e| Error::io(&resolved.io.out_dir, e))?;
    fs::write(&agg_path, text).map_err(|e| Error::io(&agg_path, e))?;
    if !quiet {
        println!(
            "experiment: {} paired seeds, aggregate in {}",
            resolved.n_seeds,
            agg_path.display()
        );
    }
    Ok(())
}

fn load_generator(resolved: &Resolved, checkpoint: &Path) -> Result<GanModel<f32>> {
    let params: ParamStore<f32> = load_checkpoint(checkpoint)?;
    let mut probe_rng = rng::stream(0, &["checkpoint-shape-probe"]);
    let (generator, fresh) = build_network::<f32>(
        resolved.train.generator_spec(),
        Init::Normal {
            std: resolved.train.init_std,
        },
        &mut probe_rng,
    )?;
    let diffs = params.compatibility_diff(&fresh);
    if !diffs.is_empty() {
        return Err(Error::TransferMismatch { differences: diffs });
    }
    let mut probe_rng = rng::stream(1, &["checkpoint-shape-probe"]);
    let (discriminator, disc_params) = build_network::<f32>(
        resolved.train.discriminator_spec(),
        Init::Normal {
            std: resolved.train.init_std,
        },
        &mut probe_rng,
    )?;
    Ok(GanModel {
        generator,
        discriminator,
        generator_params: params,
        discriminator_params: disc_params,
        variant: resolved.train.variant,
    })
}

/// `eval`: score (mnist, classifier required) or mode coverage (toy2d) for a
/// checkpointed generator, plus a sample artifact.
pub fn cmd_eval(
    resolved: &Resolved,
    checkpoint_flag: Option<&Path>,
    train_classifier_if_missing: bool,
    quiet: bool,
) -> Result<()> {
    let ckpt = checkpoint_flag
        .or(resolved.io.checkpoint.as_deref())
        .ok_or_else(|| {
            Error::Config("eval needs a generator checkpoint (--checkpoint or [io] checkpoint)".into())
        })?;
    let model = load_generator(resolved, ckpt)?;
    let dir = RunDir::create(&resolved.io.out_dir, "eval", resolved)?;

    match resolved.train.preset {
        DatasetPreset::Toy2d => {
            let mut eval_rng = rng::stream(resolved.train.seed, &["eval", "coverage-latent"]);
            let points =
                generate_points(&model, COVERAGE_SAMPLES, resolved.train.latent_dim, &mut eval_rng)?;
            let cov = mode_coverage(&points, &resolved.ring)?;
            let mut text = String::from("component,mean_x,mean_y,assigned,high_quality,covered\n");
            for (i, (assigned, hq, covered)) in cov.per_mode.iter().enumerate() {
                text.push_str(&format!(
                    "{i},{},{},{assigned},{hq},{covered}\n",
                    resolved.ring.means[i][0], resolved.ring.means[i][1]
                ));
            }
            let path = dir.csv("coverage.csv");
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            write_points_csv(&dir.csv("samples.csv"), &points[..2000.min(points.len())])?;
            if !quiet {
                println!(
                    "eval: modes covered {} of {}, high-quality fraction {:.4}",
                    cov.modes_covered,
                    resolved.ring.means.len(),
                    cov.high_quality_fraction
                );
            }
        }
        DatasetPreset::Mnist => {
            let classifier_path = resolved.io.classifier.clone().ok_or_else(|| {
                Error::Config(
                    "mnist scoring needs [io] classifier; train one with --train-classifier".into(),
                )
            })?;
            let classifier: Classifier<f32> = if classifier_path.exists() {
                Classifier::from_params(load_checkpoint(&classifier_path)?)?
            } else if train_classifier_if_missing {
                let data = load_dataset(resolved)?;
                let train_idx: Vec<usize> = (0..data.len() * 4 / 5).collect();
                let clf = train_classifier::<f32>(&data, &train_idx, CLASSIFIER_STEPS, 12345)?;
                save_checkpoint(&clf.params, &classifier_path)?;
                clf
            } else {
                return Err(Error::Config(format!(
                    "classifier checkpoint {} not found; rerun with --train-classifier to create it",
                    classifier_path.display()
                )));
            };
            let mut eval_rng = rng::stream(resolved.train.seed, &["eval", "score-latent"]);
            let samples =
                generate_samples(&model, SCORE_SAMPLES, resolved.train.latent_dim, &mut eval_rng)?;
            let report = classifier_score(&samples, &classifier)?;
            let mut text = String::from("score,samples");
            for k in 0..report.marginal.len() {
                text.push_str(&format!(",marginal_{k}"));
            }
            text.push('\n');
            text.push_str(&format!("{},{}", report.score, report.sample_count));
            for m in &report.marginal {
                text.push_str(&format!(",{m}"));
            }
            text.push('\n');
            let path = dir.csv("score.csv");
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            let grid = Tensor::new(
                samples.shape()[..].to_vec(),
                samples.data().to_vec(),
            )?;
            let preview = Tensor::new(
                vec![64, 1, 28, 28],
                grid.data()[..64 * 784].to_vec(),
            )?;
            export_image_grid(&preview, 8, &dir.grid("samples.pgm"))?;
            if !quiet {
                println!("eval: classifier score {:.4}", report.score);
            }
        }
    }
    Ok(())
}

/// `sample`: emit a sample artifact from a checkpointed generator.
pub fn cmd_sample(
    resolved: &Resolved,
    checkpoint_flag: Option<&Path>,
    count: usize,
    columns: usize,
    quiet: bool,
) -> Result<()> {
    let ckpt = checkpoint_flag
        .or(resolved.io.checkpoint.as_deref())
        .ok_or_else(|| {
            Error::Config("sample needs a generator checkpoint (--checkpoint or [io] checkpoint)".into())
        })?;
    let model = load_generator(resolved, ckpt)?;
    let dir = RunDir::create(&resolved.io.out_dir, "sample", resolved)?;
    let mut latent_rng = rng::stream(resolved.train.seed, &["sample", "latent"]);
    match resolved.train.preset {
        DatasetPreset::Mnist => {
            let samples = generate_samples(&model, count, resolved.train.latent_dim, &mut latent_rng)?;
            export_image_grid(&samples, columns, &dir.grid("samples.pgm"))?;
        }
        DatasetPreset::Toy2d => {
            let points = generate_points(&model, count, resolved.train.latent_dim, &mut latent_rng)?;
            write_points_csv(&dir.csv("samples.csv"), &points)?;
        }
    }
    if !quiet {
        println!("sample: {count} samples written to {}", dir.root.display());
    }
    Ok(())
}
