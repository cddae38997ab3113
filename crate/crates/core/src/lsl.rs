//! Latent subclass classifier head.
//!
//! The head scores `N` latent classes with `z = W x` and marginalizes them
//! against a fixed zero null logit: `p(y = 1 | x) = σ(log Σ_i exp z_i)`.
//! The softmax over `z` is the latent class distribution `C(x)` and its
//! argmax the hard assignment.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{argmax, entropy, log_sum_exp, sigmoid, softplus, Matrix};

/// Floor for probabilities inside the cross-entropy logs.
pub const LOG_CLAMP: f64 = 1e-12;

pub const DEFAULT_NUM_LATENT: usize = 32;
pub const DEFAULT_ALPHA: f64 = 1.5;
pub const DEFAULT_BETA: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct LslHead {
    /// `N × hidden`
    pub weight: Matrix,
}

impl LslHead {
    pub fn new(weight: Matrix) -> Result<Self> {
        if weight.rows() == 0 {
            return Err(Error::invalid("LSL head needs at least one latent class"));
        }
        if !weight.is_finite() {
            return Err(Error::invalid("LSL head weight is not finite"));
        }
        Ok(Self { weight })
    }

    /// Uniform in `±1/√hidden`.
    pub fn init<R: Rng + ?Sized>(num_latent: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            weight: Matrix::uniform(num_latent, hidden, bound, rng),
        }
    }

    pub fn num_latent(&self) -> usize {
        self.weight.rows()
    }

    pub fn hidden(&self) -> usize {
        self.weight.cols()
    }

    pub fn latent_logits(&self, x: &[f64]) -> Vec<f64> {
        self.weight.matvec(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPosterior {
    pub latent_logits: Vec<f64>,
    /// Softmax of the latent logits.
    pub distribution: Vec<f64>,
    /// Zero-based argmax of the latent logits, lowest index on ties.
    pub hard_class: usize,
    /// `log Σ_i exp z_i`, the marginal binary logit.
    pub binary_logit: f64,
    pub binary_prob: f64,
}

impl LatentPosterior {
    pub fn from_logits(latent_logits: Vec<f64>) -> Self {
        let lse = log_sum_exp(&latent_logits);
        let distribution = latent_logits.iter().map(|z| (z - lse).exp()).collect();
        let hard_class = argmax(&latent_logits);
        Self {
            distribution,
            hard_class,
            binary_logit: lse,
            binary_prob: sigmoid(lse),
            latent_logits,
        }
    }

    pub fn num_latent(&self) -> usize {
        self.latent_logits.len()
    }

    /// `log p(y=1)`, clamped.
    fn log_prob_positive(&self) -> f64 {
        (-softplus(-self.binary_logit)).max(LOG_CLAMP.ln())
    }

    /// `log p(y=0)`, clamped.
    fn log_prob_negative(&self) -> f64 {
        (-softplus(self.binary_logit)).max(LOG_CLAMP.ln())
    }

    /// Entropy of the latent distribution, using `log C_k = z_k - lse` so
    /// saturated classes contribute exactly zero.
    pub fn entropy(&self) -> f64 {
        -self
            .distribution
            .iter()
            .zip(&self.latent_logits)
            .filter(|(&c, _)| c > 0.0)
            .map(|(&c, &z)| c * (z - self.binary_logit))
            .sum::<f64>()
    }
}

pub fn forward(x: &[f64], head: &LslHead) -> LatentPosterior {
    LatentPosterior::from_logits(head.latent_logits(x))
}

fn check_batch(posteriors: &[LatentPosterior]) -> Result<usize> {
    let n = posteriors
        .first()
        .ok_or_else(|| Error::invalid("empty batch"))?
        .num_latent();
    if posteriors.iter().any(|p| p.num_latent() != n) {
        return Err(Error::invalid(
            "posteriors disagree on the number of latent classes",
        ));
    }
    Ok(n)
}

/// Mean binary cross-entropy of the marginal probability.
pub fn loss_lsl(posteriors: &[LatentPosterior], labels: &[bool]) -> Result<f64> {
    check_batch(posteriors)?;
    if labels.len() != posteriors.len() {
        return Err(Error::invalid("labels and posteriors differ in length"));
    }
    let sum: f64 = posteriors
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            if y {
                -p.log_prob_positive()
            } else {
                -p.log_prob_negative()
            }
        })
        .sum();
    Ok(sum / posteriors.len() as f64)
}

fn mean_distribution(posteriors: &[LatentPosterior], n: usize) -> Vec<f64> {
    let mut mean = vec![0.0; n];
    for p in posteriors {
        for (m, c) in mean.iter_mut().zip(&p.distribution) {
            *m += c;
        }
    }
    let b = posteriors.len() as f64;
    mean.iter_mut().for_each(|m| *m /= b);
    mean
}

/// `log N − H(mean_x C(x))`, in `[0, log N]`.
pub fn loss_batch_entropy(posteriors: &[LatentPosterior]) -> Result<f64> {
    let n = check_batch(posteriors)?;
    let h = entropy(&mean_distribution(posteriors, n));
    Ok(((n as f64).ln() - h).max(0.0))
}

/// `mean_x H(C(x))`, in `[0, log N]`.
pub fn loss_instance_entropy(posteriors: &[LatentPosterior]) -> Result<f64> {
    check_batch(posteriors)?;
    let sum: f64 = posteriors.iter().map(LatentPosterior::entropy).sum();
    Ok(sum / posteriors.len() as f64)
}

/// `H(mean_x C(x)) − mean_x H(C(x))`.
pub fn mutual_information(posteriors: &[LatentPosterior]) -> Result<f64> {
    let n = check_batch(posteriors)?;
    let marginal = entropy(&mean_distribution(posteriors, n));
    Ok(marginal - loss_instance_entropy(posteriors)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub lsl: f64,
    pub batch_entropy: f64,
    pub instance_entropy: f64,
}

/// Regularization weights `α` (batch entropy) and `β` (instance entropy).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularization {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
        }
    }
}

impl Regularization {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be finite and ≥ 0, got {v}"
                )));
            }
        }
        Ok(Self { alpha, beta })
    }
}

/// Regularized batch loss and its gradient with respect to each example's
/// latent logits.
pub fn loss_and_logit_grads(
    posteriors: &[LatentPosterior],
    labels: &[bool],
    reg: Regularization,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    let n = check_batch(posteriors)?;
    let lsl = loss_lsl(posteriors, labels)?;
    let batch_entropy = loss_batch_entropy(posteriors)?;
    let instance_entropy = loss_instance_entropy(posteriors)?;
    let b = posteriors.len() as f64;

    let mean = mean_distribution(posteriors, n);
    // ∂(−H(m))/∂m_k = log m_k + 1; the constant vanishes under the softmax
    // Jacobian so only log m_k is kept
    let log_mean: Vec<f64> = mean
        .iter()
        .map(|&m| m.max(f64::MIN_POSITIVE).ln())
        .collect();

    let grads = posteriors
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            let prob = p.binary_prob;
            // d CE / d lse, zero on the clamped branch
            let floor = LOG_CLAMP.ln();
            let d_lse = if y {
                if -softplus(-p.binary_logit) < floor {
                    0.0
                } else {
                    -sigmoid(-p.binary_logit)
                }
            } else if -softplus(p.binary_logit) < floor {
                0.0
            } else {
                prob
            };
            let c = &p.distribution;
            let h = p.entropy();
            let be_dot: f64 = c.iter().zip(&log_mean).map(|(ck, lm)| ck * lm).sum();
            (0..n)
                .map(|j| {
                    let cj = c[j];
                    let log_cj = p.latent_logits[j] - p.binary_logit;
                    let d_lsl = d_lse * cj;
                    let d_be = cj * (log_mean[j] - be_dot);
                    let d_ie = if cj > 0.0 { -cj * (log_cj + h) } else { 0.0 };
                    (d_lsl + reg.alpha * d_be + reg.beta * d_ie) / b
                })
                .collect()
        })
        .collect();

    Ok((
        LossBreakdown {
            total: lsl + reg.alpha * batch_entropy + reg.beta * instance_entropy,
            lsl,
            batch_entropy,
            instance_entropy,
        },
        grads,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(z: &[f64]) -> LatentPosterior {
        LatentPosterior::from_logits(z.to_vec())
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn forward_examples() {
        assert_eq!(post(&[0.0]).binary_prob, 0.5);
        assert!(close(post(&[0.0, 0.0]).binary_prob, 2.0 / 3.0, 1e-15));
        let p = post(&[1000.0, 0.0, 0.0]);
        assert!(close(p.binary_prob, 1.0, 1e-15));
        assert_eq!(p.hard_class, 0);
        assert!(p.distribution.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn distribution_sums_to_one_and_ties_go_low() {
        let p = post(&[0.3, 2.0, 2.0, -1.0]);
        assert!(close(p.distribution.iter().sum(), 1.0, 1e-12));
        assert_eq!(p.hard_class, 1);
        let s: f64 = p.latent_logits.iter().map(|z| z.exp()).sum();
        assert!(close(p.binary_prob, s / (1.0 + s), 1e-15));
    }

    #[test]
    fn extreme_logits_stay_finite() {
        for z in [[1e4, -1e4], [-1e4, -1e4], [1e4, 1e4]] {
            let p = post(&z);
            assert!(p.binary_prob.is_finite() && p.entropy().is_finite());
            let (l, g) = loss_and_logit_grads(
                std::slice::from_ref(&p),
                &[false],
                Regularization::default(),
            )
            .unwrap();
            assert!(l.total.is_finite(), "{z:?}");
            assert!(g[0].iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn lsl_loss_examples() {
        let half = post(&[0.0]);
        let l = loss_lsl(&[half.clone(), half], &[true, false]).unwrap();
        assert!(close(l, 2f64.ln(), 1e-15));
        let two = post(&[0.0, 0.0]);
        let l = loss_lsl(&[two.clone(), two], &[true, false]).unwrap();
        let expected = (-(2.0f64 / 3.0).ln() - (1.0f64 / 3.0).ln()) / 2.0;
        assert!(close(l, expected, 1e-14));
        // saturated and correct
        let l = loss_lsl(&[post(&[800.0]), post(&[-800.0])], &[true, false]).unwrap();
        assert!(l < 1e-300);
        // saturated and wrong: clamped
        let l = loss_lsl(&[post(&[-800.0])], &[true]).unwrap();
        assert!(close(l, -LOG_CLAMP.ln(), 1e-9));
        assert!(loss_lsl(&[], &[]).is_err());
    }

    #[test]
    fn entropy_loss_examples() {
        let ln2 = 2f64.ln();
        let ln3 = 3f64.ln();
        let uniform = post(&[0.0, 0.0, 0.0]);
        assert!(close(
            loss_batch_entropy(std::slice::from_ref(&uniform)).unwrap(),
            0.0,
            1e-15
        ));
        assert!(close(
            loss_instance_entropy(&[uniform]).unwrap(),
            ln3,
            1e-15
        ));
        let hot = post(&[900.0, 0.0, 0.0]);
        assert!(close(
            loss_batch_entropy(&[hot.clone(), hot.clone()]).unwrap(),
            ln3,
            1e-15
        ));
        assert_eq!(loss_instance_entropy(&[hot.clone(), hot]).unwrap(), 0.0);
        let a = post(&[900.0, 0.0]);
        let b = post(&[0.0, 900.0]);
        assert!(close(
            loss_batch_entropy(&[a.clone(), b.clone()]).unwrap(),
            0.0,
            1e-15
        ));
        assert!(close(
            mutual_information(&[a.clone(), b]).unwrap(),
            ln2,
            1e-15
        ));
        let half = post(&[0.0, 0.0]);
        assert!(close(
            loss_instance_entropy(&[half, a.clone()]).unwrap(),
            ln2 / 2.0,
            1e-15
        ));
        assert!(close(
            mutual_information(&[a.clone(), a]).unwrap(),
            0.0,
            1e-15
        ));
    }

    #[test]
    fn negative_coefficients_rejected() {
        assert!(Regularization::new(-0.1, 1.0).is_err());
        assert!(Regularization::new(1.0, f64::NAN).is_err());
        assert!(Regularization::new(0.0, 0.0).is_ok());
    }

    #[test]
    fn logit_grads_match_finite_differences() {
        let batch = vec![
            vec![0.3, -1.2, 0.8],
            vec![-0.5, 0.1, 2.0],
            vec![1.5, 0.4, -0.9],
        ];
        let labels = [true, false, true];
        let reg = Regularization::new(0.7, 1.3).unwrap();
        let loss = |zs: &[Vec<f64>]| {
            let ps: Vec<_> = zs.iter().map(|z| post(z)).collect();
            loss_and_logit_grads(&ps, &labels, reg).unwrap().0.total
        };
        let ps: Vec<_> = batch.iter().map(|z| post(z)).collect();
        let (_, grads) = loss_and_logit_grads(&ps, &labels, reg).unwrap();
        let eps = 1e-6;
        for i in 0..batch.len() {
            for j in 0..3 {
                let mut plus = batch.clone();
                plus[i][j] += eps;
                let mut minus = batch.clone();
                minus[i][j] -= eps;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                assert!(
                    close(fd, grads[i][j], 1e-8),
                    "{i},{j}: {fd} vs {}",
                    grads[i][j]
                );
            }
        }
    }
}
