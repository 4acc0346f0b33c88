//! End-to-end command tests against the compiled binary: artifact layout,
//! byte determinism, exit codes, and the transfer-identity contract.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn ugan() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ugan"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn toy_config(out: &Path, vae_steps: usize, gan_steps: usize) -> String {
    format!(
        "[run]\npreset = toy2d\nseed = 7\nn_seeds = 1\n\
         [vae]\nsteps = {vae_steps}\n[gan]\nsteps = {gan_steps}\n\
         [hyper]\nbatch = 32\n\
         [io]\nout_dir = {}\nmax_items = 256\n",
        out.display()
    )
}

fn mnist_config(out: &Path, vae_steps: usize, gan_steps: usize) -> String {
    format!(
        "[run]\npreset = mnist\nseed = 7\n\
         [vae]\nsteps = {vae_steps}\n[gan]\nsteps = {gan_steps}\n\
         [hyper]\nbatch = 8\n\
         [io]\nout_dir = {}\nmax_items = 64\n",
        out.display()
    )
}

#[test]
fn pretrain_with_zero_steps_writes_initial_checkpoint_and_empty_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "c.ini", &toy_config(&out, 0, 0));
    let status = ugan()
        .args(["--config", cfg.to_str().unwrap(), "--quiet", "pretrain-vae"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("vae/checkpoints/decoder.ugan").exists());
    assert!(out.join("vae/checkpoints/encoder.ugan").exists());
    let csv = fs::read_to_string(out.join("vae/csv/vae_loss.csv")).unwrap();
    assert_eq!(csv, "step,loss_total,loss_recon,loss_kl\n");
    assert!(out.join("vae/config.resolved").exists());
}

#[test]
fn reruns_with_the_same_seed_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        let cfg = write_config(tmp.path(), "c.ini", &toy_config(out, 12, 8));
        for cmd in ["pretrain-vae", "train-gan"] {
            let status = ugan()
                .args(["--config", cfg.to_str().unwrap(), "--quiet", cmd])
                .status()
                .unwrap();
            assert!(status.success(), "{cmd} failed");
        }
    }
    for rel in [
        "vae/csv/vae_loss.csv",
        "vae/checkpoints/decoder.ugan",
        "vae/checkpoints/encoder.ugan",
        "gan/csv/gan_loss.csv",
        "gan/checkpoints/generator.ugan",
        "gan/checkpoints/discriminator.ugan",
    ] {
        let a = fs::read(out_a.join(rel)).unwrap();
        let b = fs::read(out_b.join(rel)).unwrap();
        assert_eq!(a, b, "{rel} differs between reruns");
    }
}

#[test]
fn mnist_pretrain_emits_a_valid_pgm_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "c.ini", &mnist_config(&out, 2, 0));
    let status = ugan()
        .args(["--config", cfg.to_str().unwrap(), "--quiet", "pretrain-vae"])
        .status()
        .unwrap();
    assert!(status.success());
    let bytes = fs::read(out.join("vae/grids/reconstruction.pgm")).unwrap();
    assert!(bytes.starts_with(b"P5\n"));
    let header = String::from_utf8_lossy(&bytes[..32]);
    // 4 columns of 28px + 2px separators: 4*28 + 3*2 = 118
    assert!(header.contains("118 118"), "{header}");
}

#[test]
fn vae_init_without_checkpoint_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let body = format!(
        "[run]\npreset = toy2d\n[gan]\ngenerator_init = vae\nsteps = 1\n[hyper]\nbatch = 32\n[io]\nout_dir = {}\nmax_items = 256\n",
        out.display()
    );
    let cfg = write_config(tmp.path(), "c.ini", &body);
    let output = ugan()
        .args(["--config", cfg.to_str().unwrap(), "--quiet", "train-gan"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("checkpoint"), "{err}");
}

#[test]
fn incompatible_checkpoint_exits_with_transfer_mismatch_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    // train a toy decoder, then try to transfer it into the mnist generator
    let toy_cfg = write_config(tmp.path(), "toy.ini", &toy_config(&out, 4, 0));
    assert!(ugan()
        .args(["--config", toy_cfg.to_str().unwrap(), "--quiet", "pretrain-vae"])
        .status()
        .unwrap()
        .success());
    let decoder = out.join("vae/checkpoints/decoder.ugan");

    let mnist_out = tmp.path().join("out2");
    let body = format!(
        "[run]\npreset = mnist\n[gan]\ngenerator_init = vae\nsteps = 1\n[hyper]\nbatch = 8\n[io]\nout_dir = {}\nmax_items = 64\n",
        mnist_out.display()
    );
    let cfg = write_config(tmp.path(), "m.ini", &body);
    let output = ugan()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--quiet",
            "train-gan",
            "--vae-checkpoint",
            decoder.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(4));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("fc1.weight") || err.contains("fc.weight"), "{err}");
}

#[test]
fn transferred_generator_first_grid_matches_the_decoder() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "c.ini", &mnist_config(&out, 2, 1));
    assert!(ugan()
        .args(["--config", cfg.to_str().unwrap(), "--quiet", "pretrain-vae"])
        .status()
        .unwrap()
        .success());
    let decoder_path = out.join("vae/checkpoints/decoder.ugan");

    let body = format!(
        "[run]\npreset = mnist\nseed = 7\n[vae]\nsteps = 2\n[gan]\ngenerator_init = vae\nsteps = 1\n[hyper]\nbatch = 8\n[io]\nout_dir = {}\nmax_items = 64\n",
        out.display()
    );
    let cfg2 = write_config(tmp.path(), "c2.ini", &body);
    assert!(ugan()
        .args([
            "--config",
            cfg2.to_str().unwrap(),
            "--quiet",
            "train-gan",
            "--vae-checkpoint",
            decoder_path.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());

    // reproduce the epoch-0 grid from the decoder checkpoint and the same
    // preview latents
    use ugan_core::data::{image_grid_pgm, load_checkpoint};
    use ugan_core::nn::{build_network, Init, Role};
    use ugan_core::pipeline::forward_eval;
    use ugan_core::rng;
    use ugan_core::Tensor;
    let params: ugan_core::nn::ParamStore<f32> = load_checkpoint(&decoder_path).unwrap();
    let (decoder, _) = build_network::<f32>(
        ugan_core::nn::preset_mnist(Role::GeneratorOrDecoder, ugan_core::nn::Conditioning::None),
        Init::Normal { std: 0.02 },
        &mut rng::stream(0, &["probe"]),
    )
    .unwrap();
    let mut preview_rng = rng::stream(7, &["preview", "latent"]);
    let z = Tensor::<f32>::randn(&[64, 128], 1.0, &mut preview_rng);
    let decoded = forward_eval(&decoder, &params, &z).unwrap();
    let expected = image_grid_pgm(&decoded, 8).unwrap();

    let emitted = fs::read(out.join("gan/grids/samples_epoch000.pgm")).unwrap();
    assert_eq!(emitted, expected, "first emitted grid differs from the decoder's");
}

#[test]
fn wgan_final_discriminator_is_clipped() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let body = format!(
        "[run]\npreset = toy2d\nvariant = wgan\n[gan]\nsteps = 6\nclip_c = 0.01\n[hyper]\nbatch = 32\n[io]\nout_dir = {}\nmax_items = 256\n",
        out.display()
    );
    let cfg = write_config(tmp.path(), "c.ini", &body);
    assert!(ugan()
        .args(["--config", cfg.to_str().unwrap(), "--quiet", "train-gan"])
        .status()
        .unwrap()
        .success());
    let store: ugan_core::nn::ParamStore<f32> =
        ugan_core::data::load_checkpoint(&out.join("gan/checkpoints/discriminator.ugan")).unwrap();
    assert!(store.max_abs_learnable() <= 0.01 + 1e-9);
}

#[test]
fn experiment_creates_exactly_two_run_dirs_per_seed_and_aggregate_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "c.ini", &toy_config(&out, 4, 4));
    assert!(ugan()
        .args(["--config", cfg.to_str().unwrap(), "--quiet", "experiment"])
        .status()
        .unwrap()
        .success());
    let dirs: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| {
            let e = e.unwrap();
            e.file_type().unwrap().is_dir().then(|| e.file_name().into_string().unwrap())
        })
        .collect();
    assert_eq!(dirs.len(), 2, "{dirs:?}");
    assert!(dirs.contains(&"seed0-ordinary".to_string()));
    assert!(dirs.contains(&"seed0-unbalanced".to_string()));
    let agg = fs::read_to_string(out.join("aggregate.csv")).unwrap();
    let rows: Vec<&str> = agg.lines().collect();
    assert_eq!(rows.len(), 2); // header + one seed
    assert!(rows[0].starts_with("seed,gen_loss_std_ordinary"));
}

#[test]
fn eval_is_deterministic_and_collapsed_generators_cover_one_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");

    // hand-build a collapsed toy generator: all zeros except the output bias
    // pinned to the first ring mean (2, 0)
    use ugan_core::data::save_checkpoint;
    use ugan_core::nn::{build_network, Init, Role};
    let (_, mut params) = build_network::<f32>(
        ugan_core::nn::preset_toy2d(Role::GeneratorOrDecoder),
        Init::Normal { std: 0.02 },
        &mut ugan_core::rng::stream(0, &["fixture"]),
    )
    .unwrap();
    for name in ["fc1.weight", "fc2.weight", "out.weight"] {
        let entry = params.get_mut(name).unwrap();
        entry.value = ugan_core::Tensor::zeros(entry.value.shape());
    }
    params.get_mut("out.bias").unwrap().value =
        ugan_core::Tensor::new(vec![2], vec![2.0f32, 0.0]).unwrap();
    let ckpt = tmp.path().join("collapsed.ugan");
    save_checkpoint(&params, &ckpt).unwrap();

    let cfg = write_config(tmp.path(), "c.ini", &toy_config(&out, 0, 0));
    for _ in 0..2 {
        assert!(ugan()
            .args([
                "--config",
                cfg.to_str().unwrap(),
                "--quiet",
                "eval",
                "--checkpoint",
                ckpt.to_str().unwrap(),
            ])
            .status()
            .unwrap()
            .success());
    }
    let coverage = fs::read_to_string(out.join("eval/csv/coverage.csv")).unwrap();
    let covered = coverage.lines().filter(|l| l.ends_with("true")).count();
    assert_eq!(covered, 1, "{coverage}");
    // coverage CSV has one row per component
    assert_eq!(coverage.lines().count(), 9, "{coverage}");

    // determinism: rerun produced identical bytes (file was overwritten)
    let first = fs::read(out.join("eval/csv/coverage.csv")).unwrap();
    assert!(ugan()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--quiet",
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());
    assert_eq!(first, fs::read(out.join("eval/csv/coverage.csv")).unwrap());
}

#[test]
fn bad_config_and_missing_data_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.ini", "[run]\npreset = nope\n");
    let output = ugan()
        .args(["--config", cfg.to_str().unwrap(), "pretrain-vae"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));

    let body = format!(
        "[run]\npreset = mnist\n[io]\nout_dir = {}\nmnist_images = /nonexistent/images.idx\n",
        tmp.path().display()
    );
    let cfg = write_config(tmp.path(), "missing.ini", &body);
    let output = ugan()
        .args(["--config", cfg.to_str().unwrap(), "pretrain-vae"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));

    // config validation fires before any dataset read: invalid hyper with a
    // missing data path still reports the config error
    let body = "[run]\npreset = mnist\n[hyper]\ndropout = 1.5\n[io]\nmnist_images = /nonexistent\n";
    let cfg = write_config(tmp.path(), "order.ini", body);
    let output = ugan()
        .args(["--config", cfg.to_str().unwrap(), "pretrain-vae"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn sample_command_writes_requested_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "c.ini", &toy_config(&out, 0, 2));
    assert!(ugan()
        .args(["--config", cfg.to_str().unwrap(), "--quiet", "train-gan"])
        .status()
        .unwrap()
        .success());
    assert!(ugan()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--quiet",
            "sample",
            "--checkpoint",
            out.join("gan/checkpoints/generator.ugan").to_str().unwrap(),
            "--count",
            "50",
        ])
        .status()
        .unwrap()
        .success());
    let samples = fs::read_to_string(out.join("sample/csv/samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 51); // header + 50 points
}
