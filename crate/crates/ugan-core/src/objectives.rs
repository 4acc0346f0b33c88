//! Loss functions and the closed-form GAN quantities.
//!
//! The differentiable losses build tape subgraphs and return scalar vars;
//! the closed-form pieces (optimal discriminator, generator optimum, discrete
//! JSD) are plain functions.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP] before any log.
pub const PROB_CLAMP: f64 = 1e-7;

/// Gaussian posterior handles produced by an encoder forward.
#[derive(Debug, Clone, Copy)]
pub struct LatentPosterior {
    pub mu: Var,
    pub log_var: Var,
}

/// The GAN loss family being trained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GanLossVariant {
    /// Algorithm-literal min-max BCE; the generator descends E[log(1 - D(G(z)))].
    BceMinimax,
    /// Same discriminator loss; the generator descends -E[log D(G(z))].
    BceNonSaturating,
    /// Least squares with targets (a, b, c) = (0, 1, 1).
    LeastSquares,
    /// Critic scores with post-step weight clipping at the given bound.
    WassersteinClip { c: f64 },
}

impl GanLossVariant {
    pub fn validate(&self) -> Result<()> {
        if let GanLossVariant::WassersteinClip { c } = self {
            if *c <= 0.0 || c.is_nan() {
                return Err(Error::Config(format!(
                    "wasserstein clip bound must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }

    /// Whether discriminator outputs are probabilities (vs unbounded scores).
    pub fn expects_probabilities(&self) -> bool {
        !matches!(self, GanLossVariant::WassersteinClip { .. })
    }
}

fn batch_of<T: Real>(tape: &Tape<T>, v: Var) -> usize {
    tape.value(v).shape()[0]
}

/// Mean over the batch of the KL divergence from the posterior to the unit
/// Gaussian prior: -1/2 sum_j (1 + log_var - mu^2 - exp(log_var)).
pub fn kl_gaussian<T: Real>(tape: &mut Tape<T>, post: &LatentPosterior) -> Result<Var> {
    let mu_shape = tape.value(post.mu).shape().to_vec();
    if mu_shape != tape.value(post.log_var).shape() {
        return Err(Error::Dimension {
            op: "kl_gaussian",
            detail: format!(
                "mu {:?} vs log_var {:?}",
                mu_shape,
                tape.value(post.log_var).shape()
            ),
        });
    }
    let batch = batch_of(tape, post.mu);
    let mu_sq = tape.mul(post.mu, post.mu)?;
    let lv_plus_one = tape.affine(post.log_var, T::one(), T::one());
    let var = tape.exp(post.log_var);
    let a = tape.sub(lv_plus_one, mu_sq)?;
    let integrand = tape.sub(a, var)?;
    let total = tape.sum_all(integrand);
    Ok(tape.affine(total, T::from_f64(-0.5 / batch as f64), T::zero()))
}

/// Pixel-wise binary cross entropy between a tanh-range reconstruction and a
/// unit-range target: x_hat is mapped through p = (x_hat + 1) / 2, clamped,
/// and scored against x; per-item pixel sums are averaged over the batch.
pub fn recon_bce<T: Real>(tape: &mut Tape<T>, x_hat: Var, x: Var) -> Result<Var> {
    if tape.value(x_hat).shape() != tape.value(x).shape() {
        return Err(Error::Dimension {
            op: "recon_bce",
            detail: format!(
                "x_hat {:?} vs x {:?}",
                tape.value(x_hat).shape(),
                tape.value(x).shape()
            ),
        });
    }
    let batch = batch_of(tape, x);
    let half = T::from_f64(0.5);
    let eps = T::from_f64(PROB_CLAMP);
    let p = tape.affine(x_hat, half, half);
    let p = tape.clamp(p, eps, T::one() - eps);
    let log_p = tape.ln(p);
    let one_minus_p = tape.affine(p, -T::one(), T::one());
    let log_q = tape.ln(one_minus_p);
    let one_minus_x = tape.affine(x, -T::one(), T::one());
    let pos = tape.mul(x, log_p)?;
    let neg = tape.mul(one_minus_x, log_q)?;
    let both = tape.add(pos, neg)?;
    let total = tape.sum_all(both);
    Ok(tape.affine(total, T::from_f64(-1.0 / batch as f64), T::zero()))
}

/// Unit-variance Gaussian reconstruction error for real-valued targets:
/// 1/2 the per-item squared-error sum, averaged over the batch. Used by the
/// 2-d preset, whose decoder output is linear rather than tanh.
pub fn recon_gaussian<T: Real>(tape: &mut Tape<T>, x_hat: Var, x: Var) -> Result<Var> {
    if tape.value(x_hat).shape() != tape.value(x).shape() {
        return Err(Error::Dimension {
            op: "recon_gaussian",
            detail: format!(
                "x_hat {:?} vs x {:?}",
                tape.value(x_hat).shape(),
                tape.value(x).shape()
            ),
        });
    }
    let batch = batch_of(tape, x);
    let diff = tape.sub(x_hat, x)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum_all(sq);
    Ok(tape.affine(total, T::from_f64(0.5 / batch as f64), T::zero()))
}

/// Which reconstruction term the VAE objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconKind {
    PixelBce,
    Gaussian,
}

pub struct VaeLossParts {
    pub total: Var,
    pub kl: Var,
    pub recon: Var,
}

/// Full VAE objective: KL regularizer plus reconstruction, both batch means.
pub fn vae_loss<T: Real>(
    tape: &mut Tape<T>,
    post: &LatentPosterior,
    x_hat: Var,
    x: Var,
    recon_kind: ReconKind,
) -> Result<VaeLossParts> {
    let kl = kl_gaussian(tape, post)?;
    let recon = match recon_kind {
        ReconKind::PixelBce => recon_bce(tape, x_hat, x)?,
        ReconKind::Gaussian => recon_gaussian(tape, x_hat, x)?,
    };
    let total = tape.add(kl, recon)?;
    Ok(VaeLossParts { total, kl, recon })
}

fn check_probability_range<T: Real>(tape: &Tape<T>, v: Var, role: &str) -> Result<()> {
    for &p in tape.value(v).data() {
        let p = p.as_f64();
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(Error::Contract(format!(
                "{role} value {p} is not a probability in [0, 1]"
            )));
        }
    }
    Ok(())
}

/// Mean of log(x) (or log(1 - x)) with the probability clamp applied first.
fn mean_log_clamped<T: Real>(tape: &mut Tape<T>, v: Var, one_minus: bool) -> Var {
    let eps = T::from_f64(PROB_CLAMP);
    let c = tape.clamp(v, eps, T::one() - eps);
    let arg = if one_minus {
        tape.affine(c, -T::one(), T::one())
    } else {
        c
    };
    let l = tape.ln(arg);
    tape.mean_all(l)
}

/// Discriminator loss for one (real batch, fake batch) score pair.
pub fn gan_loss_d<T: Real>(
    tape: &mut Tape<T>,
    variant: GanLossVariant,
    d_real: Var,
    d_fake: Var,
) -> Result<Var> {
    variant.validate()?;
    if variant.expects_probabilities() {
        check_probability_range(tape, d_real, "d_real")?;
        check_probability_range(tape, d_fake, "d_fake")?;
    }
    match variant {
        GanLossVariant::BceMinimax | GanLossVariant::BceNonSaturating => {
            let lr = mean_log_clamped(tape, d_real, false);
            let lf = mean_log_clamped(tape, d_fake, true);
            let s = tape.add(lr, lf)?;
            Ok(tape.affine(s, -T::one(), T::zero()))
        }
        GanLossVariant::LeastSquares => {
            let rm1 = tape.affine(d_real, T::one(), -T::one());
            let rsq = tape.mul(rm1, rm1)?;
            let fsq = tape.mul(d_fake, d_fake)?;
            let mr = tape.mean_all(rsq);
            let mf = tape.mean_all(fsq);
            let s = tape.add(mr, mf)?;
            Ok(tape.affine(s, T::from_f64(0.5), T::zero()))
        }
        GanLossVariant::WassersteinClip { .. } => {
            let mf = tape.mean_all(d_fake);
            let mr = tape.mean_all(d_real);
            tape.sub(mf, mr)
        }
    }
}

/// Generator loss from the fake batch's scores.
pub fn gan_loss_g<T: Real>(
    tape: &mut Tape<T>,
    variant: GanLossVariant,
    d_fake: Var,
) -> Result<Var> {
    variant.validate()?;
    if variant.expects_probabilities() {
        check_probability_range(tape, d_fake, "d_fake")?;
    }
    match variant {
        // Saturating form, descended exactly as the training pseudocode
        // writes it: minimize E[log(1 - D(G(z)))].
        GanLossVariant::BceMinimax => Ok(mean_log_clamped(tape, d_fake, true)),
        GanLossVariant::BceNonSaturating => {
            let m = mean_log_clamped(tape, d_fake, false);
            Ok(tape.affine(m, -T::one(), T::zero()))
        }
        GanLossVariant::LeastSquares => {
            let fm1 = tape.affine(d_fake, T::one(), -T::one());
            let sq = tape.mul(fm1, fm1)?;
            let m = tape.mean_all(sq);
            Ok(tape.affine(m, T::from_f64(0.5), T::zero()))
        }
        GanLossVariant::WassersteinClip { .. } => {
            let m = tape.mean_all(d_fake);
            Ok(tape.affine(m, -T::one(), T::zero()))
        }
    }
}

/// Both adversarial losses from one (real, fake) score pair. Training loops
/// that draw separate fake batches for the two updates call [`gan_loss_d`]
/// and [`gan_loss_g`] with their respective scores instead.
pub fn gan_losses<T: Real>(
    tape: &mut Tape<T>,
    variant: GanLossVariant,
    d_real: Var,
    d_fake: Var,
) -> Result<(Var, Var)> {
    let loss_d = gan_loss_d(tape, variant, d_real, d_fake)?;
    let loss_g = gan_loss_g(tape, variant, d_fake)?;
    Ok((loss_d, loss_g))
}

/// Best-response discriminator value at a point with known densities:
/// p_data / (p_data + p_g).
pub fn optimal_discriminator(p_data: f64, p_g: f64) -> Result<f64> {
    if p_data < 0.0 || p_g < 0.0 {
        return Err(Error::Contract(format!(
            "densities must be nonnegative, got ({p_data}, {p_g})"
        )));
    }
    if p_data == 0.0 && p_g == 0.0 {
        return Err(Error::Contract(
            "optimal discriminator undefined where both densities vanish".into(),
        ));
    }
    Ok(p_data / (p_data + p_g))
}

/// Generator objective value at the discriminator's best response:
/// -ln 4 + 2 * JSD(p_data || p_g). Minimized at JSD = 0 with value -ln 4.
pub fn generator_optimum_value(jsd: f64) -> Result<f64> {
    if jsd < 0.0 || jsd.is_nan() {
        return Err(Error::Contract(format!(
            "jsd must be nonnegative, got {jsd}"
        )));
    }
    Ok(-(4.0f64.ln()) + 2.0 * jsd)
}

/// Jensen-Shannon divergence between two normalized histograms on the same
/// support, with the 0 * log 0 = 0 convention. Lies in [0, ln 2].
pub fn jsd_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Contract(format!(
            "histogram supports differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    for (label, h) in [("p", p), ("q", q)] {
        if h.iter().any(|&v| v < 0.0 || v.is_nan()) {
            return Err(Error::Contract(format!(
                "histogram {label} has negative mass"
            )));
        }
        let sum: f64 = h.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!(
                "histogram {label} is not normalized: sum {sum}"
            )));
        }
    }
    let half_kl = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b.iter())
            .filter(|(&av, _)| av > 0.0)
            .map(|(&av, &bv)| {
                let m = 0.5 * (av + bv);
                av * (av / m).ln()
            })
            .sum::<f64>()
    };
    Ok(0.5 * half_kl(p, q) + 0.5 * half_kl(q, p))
}
