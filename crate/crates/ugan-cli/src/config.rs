//! Experiment config files: INI-style sections with key = value lines.
//!
//! Sections: [run], [vae], [gan], [hyper], [io]. Unknown sections or keys are
//! rejected; missing keys fall back to the preset defaults. The fully
//! resolved config is echoed into each run directory as `config.resolved`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use ugan_core::data::MixtureSpec;
use ugan_core::objectives::GanLossVariant;
use ugan_core::pipeline::{DatasetPreset, GeneratorInit, TrainConfig};
use ugan_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantName {
    Dcgan,
    Lsgan,
    Wgan,
}

#[derive(Debug, Clone)]
pub struct IoConfig {
    pub mnist_images: Option<PathBuf>,
    pub mnist_labels: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub max_items: usize,
    pub vae_checkpoint: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub train: TrainConfig,
    pub variant_name: VariantName,
    pub nonsaturating: bool,
    pub clip_c: f64,
    pub n_seeds: usize,
    pub ring: MixtureSpec,
    pub ring_modes: usize,
    pub ring_radius: f64,
    pub ring_std: f64,
    pub io: IoConfig,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

struct Raw {
    // (section, key) -> value
    entries: BTreeMap<(String, String), String>,
}

impl Raw {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| cfg_err(format!("line {}: malformed section header", lineno + 1)))?
                    .trim();
                if !matches!(name, "run" | "vae" | "gan" | "hyper" | "io") {
                    return Err(cfg_err(format!(
                        "line {}: unknown section [{name}]",
                        lineno + 1
                    )));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {}: expected key = value", lineno + 1)))?;
            if section.is_empty() {
                return Err(cfg_err(format!(
                    "line {}: key outside any section",
                    lineno + 1
                )));
            }
            let key = key.trim().to_string();
            if entries
                .insert((section.clone(), key.clone()), value.trim().to_string())
                .is_some()
            {
                return Err(cfg_err(format!(
                    "line {}: duplicate key `{key}` in [{section}]",
                    lineno + 1
                )));
            }
        }
        Ok(Raw { entries })
    }

    fn take(&mut self, section: &str, key: &str) -> Option<String> {
        self.entries.remove(&(section.to_string(), key.to_string()))
    }

    fn reject_leftovers(&self) -> Result<()> {
        if let Some(((section, key), _)) = self.entries.iter().next() {
            return Err(cfg_err(format!("unknown key `{key}` in [{section}]")));
        }
        Ok(())
    }
}

fn parse_value<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| cfg_err(format!("[{section}] {key}: cannot parse `{value}`")))
}

fn parse_bool(section: &str, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(cfg_err(format!("[{section}] {key}: expected a boolean, got `{other}`"))),
    }
}

macro_rules! take_parsed {
    ($raw:expr, $section:literal, $key:literal, $target:expr) => {
        if let Some(v) = $raw.take($section, $key) {
            $target = parse_value($section, $key, &v)?;
        }
    };
}

/// Parse a config file and resolve every knob to its effective value.
pub fn load(path: &Path) -> Result<Resolved> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    resolve(&text)
}

pub fn resolve(text: &str) -> Result<Resolved> {
    let mut raw = Raw::parse(text)?;

    let preset = match raw.take("run", "preset").as_deref() {
        None | Some("mnist") => DatasetPreset::Mnist,
        Some("toy2d") => DatasetPreset::Toy2d,
        Some(other) => return Err(cfg_err(format!("[run] preset: unknown preset `{other}`"))),
    };
    let mut train = TrainConfig::defaults(preset);

    let variant_name = match raw.take("run", "variant").as_deref() {
        None | Some("dcgan") => VariantName::Dcgan,
        Some("lsgan") => VariantName::Lsgan,
        Some("wgan") => VariantName::Wgan,
        Some(other) => return Err(cfg_err(format!("[run] variant: unknown variant `{other}`"))),
    };
    take_parsed!(raw, "run", "seed", train.seed);
    let mut n_seeds = 1usize;
    take_parsed!(raw, "run", "n_seeds", n_seeds);
    if n_seeds == 0 {
        return Err(cfg_err("[run] n_seeds must be at least 1"));
    }
    let mut ring_modes = 8usize;
    let mut ring_radius = 2.0f64;
    let mut ring_std = 0.05f64;
    take_parsed!(raw, "run", "ring_modes", ring_modes);
    take_parsed!(raw, "run", "ring_radius", ring_radius);
    take_parsed!(raw, "run", "ring_std", ring_std);

    take_parsed!(raw, "vae", "steps", train.vae_steps);

    take_parsed!(raw, "gan", "steps", train.gan_steps);
    train.generator_init = match raw.take("gan", "generator_init").as_deref() {
        None | Some("random") => GeneratorInit::Random,
        Some("vae") => GeneratorInit::Transferred,
        Some(other) => {
            return Err(cfg_err(format!(
                "[gan] generator_init: expected random|vae, got `{other}`"
            )))
        }
    };
    take_parsed!(raw, "gan", "n_critic", train.n_critic);
    let mut clip_c = 0.01f64;
    take_parsed!(raw, "gan", "clip_c", clip_c);
    let nonsaturating = match raw.take("gan", "nonsaturating") {
        Some(v) => parse_bool("gan", "nonsaturating", &v)?,
        None => false,
    };

    take_parsed!(raw, "hyper", "lr", train.adam.lr);
    take_parsed!(raw, "hyper", "beta1", train.adam.beta1);
    take_parsed!(raw, "hyper", "beta2", train.adam.beta2);
    take_parsed!(raw, "hyper", "batch", train.batch_size);
    take_parsed!(raw, "hyper", "latent", train.latent_dim);
    take_parsed!(raw, "hyper", "slope", train.leaky_slope);
    take_parsed!(raw, "hyper", "dropout", train.dropout);
    take_parsed!(raw, "hyper", "init_std", train.init_std);

    let io = IoConfig {
        mnist_images: raw.take("io", "mnist_images").map(PathBuf::from),
        mnist_labels: raw.take("io", "mnist_labels").map(PathBuf::from),
        out_dir: raw
            .take("io", "out_dir")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("out")),
        max_items: match raw.take("io", "max_items") {
            Some(v) => parse_value("io", "max_items", &v)?,
            None => 10_000,
        },
        vae_checkpoint: raw.take("io", "vae_checkpoint").map(PathBuf::from),
        checkpoint: raw.take("io", "checkpoint").map(PathBuf::from),
        classifier: raw.take("io", "classifier").map(PathBuf::from),
    };
    raw.reject_leftovers()?;

    train.variant = match variant_name {
        VariantName::Dcgan => {
            if nonsaturating {
                GanLossVariant::BceNonSaturating
            } else {
                GanLossVariant::BceMinimax
            }
        }
        VariantName::Lsgan => GanLossVariant::LeastSquares,
        VariantName::Wgan => GanLossVariant::WassersteinClip { c: clip_c },
    };
    if nonsaturating && variant_name != VariantName::Dcgan {
        return Err(cfg_err(
            "[gan] nonsaturating applies to the dcgan variant only",
        ));
    }

    train.validate()?;
    let ring = MixtureSpec::ring(ring_modes, ring_radius, ring_std);
    ring.validate()?;
    if io.max_items < train.batch_size {
        return Err(cfg_err(format!(
            "[io] max_items {} is below one batch of {}",
            io.max_items, train.batch_size
        )));
    }

    Ok(Resolved {
        train,
        variant_name,
        nonsaturating,
        clip_c,
        n_seeds,
        ring,
        ring_modes,
        ring_radius,
        ring_std,
        io,
    })
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

/// Deterministic echo of every effective value.
pub fn render_resolved(r: &Resolved) -> String {
    let preset = match r.train.preset {
        DatasetPreset::Mnist => "mnist",
        DatasetPreset::Toy2d => "toy2d",
    };
    let variant = match r.variant_name {
        VariantName::Dcgan => "dcgan",
        VariantName::Lsgan => "lsgan",
        VariantName::Wgan => "wgan",
    };
    let generator_init = match r.train.generator_init {
        GeneratorInit::Random => "random",
        GeneratorInit::Transferred => "vae",
    };
    format!(
        "[run]\npreset = {preset}\nvariant = {variant}\nseed = {seed}\nn_seeds = {n_seeds}\n\
         ring_modes = {ring_modes}\nring_radius = {ring_radius}\nring_std = {ring_std}\n\n\
         [vae]\nsteps = {vae_steps}\n\n\
         [gan]\nsteps = {gan_steps}\ngenerator_init = {generator_init}\nn_critic = {n_critic}\n\
         clip_c = {clip_c}\nnonsaturating = {nonsaturating}\n\n\
         [hyper]\nlr = {lr}\nbeta1 = {beta1}\nbeta2 = {beta2}\nbatch = {batch}\nlatent = {latent}\n\
         slope = {slope}\ndropout = {dropout}\ninit_std = {init_std}\n\n\
         [io]\nmnist_images = {mnist_images}\nmnist_labels = {mnist_labels}\nout_dir = {out_dir}\n\
         max_items = {max_items}\nvae_checkpoint = {vae_checkpoint}\ncheckpoint = {checkpoint}\n\
         classifier = {classifier}\n",
        seed = r.train.seed,
        n_seeds = r.n_seeds,
        ring_modes = r.ring_modes,
        ring_radius = r.ring_radius,
        ring_std = r.ring_std,
        vae_steps = r.train.vae_steps,
        gan_steps = r.train.gan_steps,
        n_critic = r.train.n_critic,
        clip_c = r.clip_c,
        nonsaturating = r.nonsaturating,
        lr = r.train.adam.lr,
        beta1 = r.train.adam.beta1,
        beta2 = r.train.adam.beta2,
        batch = r.train.batch_size,
        latent = r.train.latent_dim,
        slope = r.train.leaky_slope,
        dropout = r.train.dropout,
        init_std = r.train.init_std,
        mnist_images = path_str(&r.io.mnist_images),
        mnist_labels = path_str(&r.io.mnist_labels),
        out_dir = r.io.out_dir.display(),
        max_items = r.io.max_items,
        vae_checkpoint = path_str(&r.io.vae_checkpoint),
        checkpoint = path_str(&r.io.checkpoint),
        classifier = path_str(&r.io.classifier),
    )
}
