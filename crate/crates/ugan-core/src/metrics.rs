//! Quantitative evaluation: loss statistics, a classifier-based sample
//! quality/diversity score, mixture mode coverage, and the closed-form
//! discriminator check.
//!
//! The score network is a small digit classifier trained in-repo; absolute
//! score values are not comparable across classifiers, only deltas between
//! runs evaluated with the same classifier are.

use crate::autodiff::{Mode, Tape};
use crate::data::{Dataset, MixtureSpec};
use crate::error::{Error, Result};
use crate::nn::{bind, build_network, preset_mnist_classifier, ForwardCtx, Init, Network, ParamStore};
use crate::optim::{AdamConfig, AdamState};
use crate::pipeline::forward_eval;
use crate::rng;
use crate::scalar::Real;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;

/// Mean and population standard deviation of a loss series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossStats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn loss_stats(series: &[f64]) -> Result<LossStats> {
    if series.is_empty() {
        return Err(Error::Contract("loss_stats of an empty series".into()));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(LossStats {
        mean,
        std: var.sqrt(),
        n: series.len(),
    })
}

/// A probability-emitting digit classifier.
pub struct Classifier<T> {
    pub network: Network,
    pub params: ParamStore<T>,
}

impl<T: Real> Classifier<T> {
    pub fn from_params(params: ParamStore<T>) -> Result<Self> {
        let spec = preset_mnist_classifier();
        // reuse the builder's validation; parameters come from the store
        let (network, fresh) = build_network::<T>(
            spec,
            Init::Normal { std: 0.02 },
            &mut rng::stream(0, &["classifier-shape-probe"]),
        )?;
        let diffs = params.compatibility_diff(&fresh);
        if !diffs.is_empty() {
            return Err(Error::TransferMismatch { differences: diffs });
        }
        Ok(Classifier { network, params })
    }

    /// Class probabilities for a batch of images, eval mode, chunked.
    pub fn predict_proba(&self, samples: &Tensor<T>) -> Result<Tensor<T>> {
        let n = samples.shape()[0];
        let item: usize = samples.shape()[1..].iter().product();
        let mut rows = Vec::with_capacity(n * 10);
        let mut start = 0usize;
        while start < n {
            let take = (n - start).min(256);
            let mut shape = vec![take];
            shape.extend_from_slice(&samples.shape()[1..]);
            let chunk = Tensor::new(
                shape,
                samples.data()[start * item..(start + take) * item].to_vec(),
            )?;
            let probs = forward_eval(&self.network, &self.params, &chunk)?;
            rows.extend_from_slice(probs.data());
            start += take;
        }
        Tensor::new(vec![n, 10], rows)
    }

    /// Top-1 accuracy over the indexed subset of a labeled dataset.
    pub fn accuracy(&self, dataset: &Dataset, idx: &[usize]) -> Result<f64> {
        let labels = dataset
            .batch_labels(idx)
            .ok_or_else(|| Error::Data("accuracy needs a labeled dataset".into()))?;
        let batch = dataset.batch_signed::<T>(idx)?;
        let probs = self.predict_proba(&batch)?;
        let mut correct = 0usize;
        for (i, &label) in labels.iter().enumerate() {
            let row = &probs.data()[i * 10..(i + 1) * 10];
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap();
            if argmax == label as usize {
                correct += 1;
            }
        }
        Ok(correct as f64 / labels.len() as f64)
    }
}

/// Train the score classifier with cross entropy on a labeled image dataset.
pub fn train_classifier<T: Real>(
    dataset: &Dataset,
    train_idx: &[usize],
    steps: usize,
    seed: u64,
) -> Result<Classifier<T>> {
    if dataset.labels().is_none() {
        return Err(Error::Data("classifier training needs labels".into()));
    }
    let batch_size = 64usize;
    if train_idx.len() < batch_size {
        return Err(Error::Data(format!(
            "classifier training needs at least {batch_size} items, got {}",
            train_idx.len()
        )));
    }
    let mut init_rng = rng::stream(seed, &["classifier", "init"]);
    let (network, mut params) =
        build_network::<T>(preset_mnist_classifier(), Init::Normal { std: 0.02 }, &mut init_rng)?;
    let mut adam = AdamState::new(AdamConfig {
        lr: 1e-3,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    });
    let mut shuffle_rng = rng::stream(seed, &["classifier", "shuffle"]);
    let mut order: Vec<usize> = train_idx.to_vec();
    let mut pos = usize::MAX;
    let eps = T::from_f64(1e-7);
    for _ in 0..steps {
        if pos == usize::MAX || pos + batch_size > order.len() {
            order.shuffle(&mut shuffle_rng);
            pos = 0;
        }
        let idx = &order[pos..pos + batch_size];
        pos += batch_size;
        let x = dataset.batch_signed::<T>(idx)?;
        let y: Vec<usize> = dataset
            .batch_labels(idx)
            .expect("labels checked")
            .iter()
            .map(|&l| l as usize)
            .collect();
        let mut tape = Tape::new();
        let binding = bind(&mut tape, &params, true);
        let input = tape.constant(x);
        let mut ctx = ForwardCtx {
            mode: Mode::Train,
            dropout_rng: None,
            cond: None,
        };
        let out = network.forward(&mut tape, &binding, input, &mut ctx)?;
        let picked = tape.row_gather(out.output, y)?;
        let clamped = tape.clamp(picked, eps, T::one());
        let logp = tape.ln(clamped);
        let mean = tape.mean_all(logp);
        let loss = tape.affine(mean, -T::one(), T::zero());
        if !tape.value(loss).item().is_finite() {
            return Err(Error::Numeric("classifier loss diverged".into()));
        }
        tape.backward(loss)?;
        binding.accumulate_grads(&tape, &mut params);
        adam.step(&mut params)?;
    }
    Ok(Classifier { network, params })
}

/// Sample quality/diversity score plus the class marginal it was computed
/// against.
#[derive(Debug, Clone)]
pub struct ScoreReport {
    pub score: f64,
    pub marginal: Vec<f64>,
    pub sample_count: usize,
}

/// exp of the mean KL divergence between per-sample class posteriors and the
/// marginal class distribution. 1 when the classifier is indifferent,
/// `k` when every sample is confidently classified and classes are uniformly
/// covered.
pub fn classifier_score<T: Real>(
    samples: &Tensor<T>,
    classifier: &Classifier<T>,
) -> Result<ScoreReport> {
    let n = samples.shape()[0];
    if n < 100 {
        return Err(Error::Contract(format!(
            "classifier_score needs at least 100 samples, got {n}"
        )));
    }
    let probs = classifier.predict_proba(samples)?;
    score_from_probabilities(&probs.to_f64_vec(), n)
}

/// Score from an [n, k] row-major probability table. Exposed so the
/// double-loop oracle in tests can feed hand-built tables through the same
/// validation.
pub fn score_from_probabilities(probs: &[f64], n: usize) -> Result<ScoreReport> {
    let k = probs.len() / n;
    if k * n != probs.len() {
        return Err(Error::Contract("ragged probability table".into()));
    }
    for i in 0..n {
        let row = &probs[i * k..(i + 1) * k];
        if row.iter().any(|&p| p < 0.0 || p.is_nan()) {
            return Err(Error::Contract(format!(
                "sample {i} has a negative class probability"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!(
                "sample {i} probabilities sum to {sum}"
            )));
        }
    }
    let mut marginal = vec![0.0f64; k];
    for i in 0..n {
        for (m, &p) in marginal.iter_mut().zip(&probs[i * k..(i + 1) * k]) {
            *m += p;
        }
    }
    marginal.iter_mut().for_each(|m| *m /= n as f64);
    let mut mean_kl = 0.0f64;
    for i in 0..n {
        let row = &probs[i * k..(i + 1) * k];
        let mut kl = 0.0f64;
        for (&p, &m) in row.iter().zip(&marginal) {
            if p > 0.0 {
                kl += p * (p / m).ln();
            }
        }
        mean_kl += kl;
    }
    mean_kl /= n as f64;
    Ok(ScoreReport {
        score: mean_kl.max(0.0).exp(),
        marginal,
        sample_count: n,
    })
}

/// Mode-coverage verdict over a 2-d sample set.
#[derive(Debug, Clone)]
pub struct ModeCoverage {
    pub modes_covered: usize,
    pub high_quality_fraction: f64,
    /// Per component: (assigned samples, high-quality samples, covered).
    pub per_mode: Vec<(usize, usize, bool)>,
}

/// Assign each point to its nearest component mean; a point is high-quality
/// within 3 standard deviations of that mean, and a mode counts as covered
/// once it holds at least max(20, 1% of samples) high-quality points.
pub fn mode_coverage(points: &[[f64; 2]], spec: &MixtureSpec) -> Result<ModeCoverage> {
    spec.validate()?;
    if points.len() < 100 {
        return Err(Error::Contract(format!(
            "mode_coverage needs at least 100 samples, got {}",
            points.len()
        )));
    }
    let mut assigned = vec![0usize; spec.means.len()];
    let mut high_quality = vec![0usize; spec.means.len()];
    let radius = 3.0 * spec.std;
    for p in points {
        let mut best = 0usize;
        let mut best_d2 = f64::INFINITY;
        for (i, m) in spec.means.iter().enumerate() {
            let d2 = (p[0] - m[0]) * (p[0] - m[0]) + (p[1] - m[1]) * (p[1] - m[1]);
            if d2 < best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        assigned[best] += 1;
        if best_d2.sqrt() <= radius {
            high_quality[best] += 1;
        }
    }
    let threshold = (points.len() as f64 * 0.01).max(20.0);
    let per_mode: Vec<(usize, usize, bool)> = assigned
        .iter()
        .zip(&high_quality)
        .map(|(&a, &h)| (a, h, h as f64 >= threshold))
        .collect();
    let modes_covered = per_mode.iter().filter(|(_, _, c)| *c).count();
    let hq_total: usize = high_quality.iter().sum();
    Ok(ModeCoverage {
        modes_covered,
        high_quality_fraction: hq_total as f64 / points.len() as f64,
        per_mode,
    })
}

/// Error statistics between a trained discriminator and the closed-form best
/// response on a 1-d grid.
#[derive(Debug, Clone, Copy)]
pub struct DiscriminatorFit {
    pub max_abs_err: f64,
    pub mean_abs_err: f64,
}

pub fn analytic_discriminator_check(
    p_data: impl Fn(f64) -> f64,
    p_g: impl Fn(f64) -> f64,
    trained_d: impl Fn(f64) -> f64,
    grid: &[f64],
) -> Result<DiscriminatorFit> {
    if grid.is_empty() {
        return Err(Error::Contract("empty evaluation grid".into()));
    }
    let mut max_abs = 0.0f64;
    let mut sum_abs = 0.0f64;
    for &x in grid {
        let target = crate::objectives::optimal_discriminator(p_data(x), p_g(x))?;
        let err = (trained_d(x) - target).abs();
        max_abs = max_abs.max(err);
        sum_abs += err;
    }
    Ok(DiscriminatorFit {
        max_abs_err: max_abs,
        mean_abs_err: sum_abs / grid.len() as f64,
    })
}

/// Inclusive evaluation grid lo, lo+step, ..., hi.
pub fn grid_points(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut i = 0usize;
    loop {
        let x = lo + i as f64 * step;
        if x > hi + step * 0.5 {
            break;
        }
        out.push(x);
        i += 1;
    }
    out
}

/// Standard normal density, the building block of the 1-d oracle checks.
pub fn normal_density(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}
