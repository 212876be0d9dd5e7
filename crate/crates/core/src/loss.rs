//! Rating-count weighted Huber loss.
//!
//! With `mu` the training-set mean of `ln(1 + r)`, sample `i` is weighted by
//! `min(ln(1 + r_i) / mu, clip)` and a batch of size `B` scores
//! `(1/B) * sum_i w_i * huber(pred_i, target_i)`. Evaluation uses the same
//! Huber with unit weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CLIP: f64 = 5.0;
pub const DEFAULT_DELTA: f64 = 1.0;

/// Statistics of the training split that fix every sample weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightingStats {
    pub mu: f64,
    pub clip: f64,
    pub n_train: usize,
}

impl WeightingStats {
    pub fn with_clip(mut self, clip: f64) -> Result<Self> {
        if !(clip > 0.0 && clip.is_finite()) {
            return Err(Error::Config(format!("weight clip must be positive, got {clip}")));
        }
        self.clip = clip;
        Ok(self)
    }
}

/// Mean of `ln(1 + r)` over the whole training split.
///
/// The mean gets one correction pass (`m + sum(x - m) / N`), which makes it
/// exact whenever every count is equal; equal counts then give weights of
/// exactly 1.
pub fn compute_mu(rating_numbers: &[u64]) -> Result<WeightingStats> {
    if rating_numbers.is_empty() {
        return Err(Error::Empty("rating numbers"));
    }
    let n = rating_numbers.len() as f64;
    let logs = || rating_numbers.iter().map(|&r| (r as f64).ln_1p());
    let first = logs().sum::<f64>() / n;
    let mu = first + logs().map(|x| x - first).sum::<f64>() / n;
    if mu == 0.0 {
        log::warn!("all rating numbers are zero; every sample weight falls back to 1");
    }
    Ok(WeightingStats {
        mu,
        clip: DEFAULT_CLIP,
        n_train: rating_numbers.len(),
    })
}

pub fn sample_weight(rating_number: u64, stats: &WeightingStats) -> f64 {
    if stats.mu == 0.0 {
        return 1.0;
    }
    ((rating_number as f64).ln_1p() / stats.mu).min(stats.clip)
}

/// How per-sample weights are produced during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weighting {
    Unit,
    RatingCount(WeightingStats),
}

impl Weighting {
    pub fn weight(&self, rating_number: u64) -> f64 {
        match self {
            Weighting::Unit => 1.0,
            Weighting::RatingCount(stats) => sample_weight(rating_number, stats),
        }
    }
}

/// Huber loss with a validated threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Huber {
    delta: f64,
}

impl Default for Huber {
    fn default() -> Self {
        Self { delta: DEFAULT_DELTA }
    }
}

impl TryFrom<f64> for Huber {
    type Error = Error;

    fn try_from(delta: f64) -> Result<Self> {
        Self::new(delta)
    }
}

impl From<Huber> for f64 {
    fn from(h: Huber) -> f64 {
        h.delta
    }
}

impl Huber {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!("huber delta must be positive, got {delta}")));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn loss(&self, pred: f64, target: f64) -> f64 {
        let e = pred - target;
        if e.abs() <= self.delta {
            0.5 * e * e
        } else {
            self.delta * (e.abs() - 0.5 * self.delta)
        }
    }

    /// Derivative with respect to `pred`.
    pub fn grad(&self, pred: f64, target: f64) -> f64 {
        let e = pred - target;
        if e.abs() <= self.delta {
            e
        } else {
            self.delta * e.signum()
        }
    }
}

fn check_lengths(preds: &[f64], targets: &[f64]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if preds.len() != targets.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    Ok(())
}

fn mean_weighted(preds: &[f64], targets: &[f64], weights: impl Iterator<Item = f64>, huber: &Huber) -> f64 {
    let sum: f64 = preds
        .iter()
        .zip(targets)
        .zip(weights)
        .map(|((&p, &t), w)| w * huber.loss(p, t))
        .sum();
    sum / preds.len() as f64
}

/// `(1/B) * sum w_i * huber(pred_i, target_i)`.
pub fn weighted_batch_loss(preds: &[f64], targets: &[f64], weights: &[f64], huber: &Huber) -> Result<f64> {
    check_lengths(preds, targets)?;
    if weights.len() != preds.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions vs {} weights",
            preds.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| w.is_nan() || *w < 0.0) {
        return Err(Error::Config("sample weights must be non-negative".into()));
    }
    Ok(mean_weighted(preds, targets, weights.iter().copied(), huber))
}

/// Unweighted mean Huber, used for validation and test.
pub fn eval_loss(preds: &[f64], targets: &[f64], huber: &Huber) -> Result<f64> {
    check_lengths(preds, targets)?;
    Ok(mean_weighted(preds, targets, std::iter::repeat(1.0), huber))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn mu_examples() {
        assert_eq!(compute_mu(&[0]).unwrap().mu, 0.0);
        assert_relative_eq!(compute_mu(&[9, 9, 9]).unwrap().mu, 10f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(compute_mu(&[0, 9, 99]).unwrap().mu, 10f64.ln(), epsilon = 1e-9);
        assert!(matches!(compute_mu(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn weight_examples() {
        let stats = compute_mu(&[9, 9, 9]).unwrap();
        assert_eq!(sample_weight(9, &stats), 1.0);
        assert_relative_eq!(sample_weight(99, &stats), 2.0, epsilon = 1e-12);
        let huge = (20f64.exp() - 1.0).round() as u64;
        assert_eq!(sample_weight(huge, &stats), 5.0);
        assert_eq!(sample_weight(0, &stats), 0.0);
    }

    #[test]
    fn degenerate_mu_gives_unit_weights() {
        let stats = compute_mu(&[0, 0]).unwrap();
        assert_eq!(sample_weight(0, &stats), 1.0);
        assert_eq!(sample_weight(1000, &stats), 1.0);
    }

    #[test]
    fn huber_examples() {
        let h = Huber::new(1.0).unwrap();
        assert_eq!(h.loss(3.0, 3.0), 0.0);
        assert_eq!(h.loss(3.5, 3.0), 0.125);
        assert_eq!(h.loss(5.0, 3.0), 1.5);
        assert_eq!(h.grad(3.0, 3.0), 0.0);
        assert_eq!(h.grad(3.5, 3.0), 0.5);
        assert_eq!(h.grad(0.0, 3.0), -1.0);
        assert!(Huber::new(0.0).is_err());
        assert!(Huber::new(-1.0).is_err());
    }

    #[test]
    fn batch_loss_examples() {
        let h = Huber::default();
        let preds = [3.5, 5.0];
        let targets = [3.0, 3.0];
        assert_eq!(weighted_batch_loss(&preds, &targets, &[1.0, 2.0], &h).unwrap(), 1.5625);
        assert_eq!(
            weighted_batch_loss(&preds, &targets, &[1.0, 1.0], &h).unwrap(),
            eval_loss(&preds, &targets, &h).unwrap()
        );
        assert_eq!(weighted_batch_loss(&targets, &targets, &[3.0, 0.5], &h).unwrap(), 0.0);
        assert_eq!(eval_loss(&[5.0], &[3.0], &h).unwrap(), 1.5);
    }

    #[test]
    fn batch_loss_errors() {
        let h = Huber::default();
        assert!(weighted_batch_loss(&[], &[], &[], &h).is_err());
        assert!(weighted_batch_loss(&[1.0], &[1.0, 2.0], &[1.0], &h).is_err());
        assert!(weighted_batch_loss(&[1.0], &[1.0], &[1.0, 1.0], &h).is_err());
        assert!(weighted_batch_loss(&[1.0], &[1.0], &[-1.0], &h).is_err());
        assert!(eval_loss(&[], &[], &h).is_err());
    }

    proptest! {
        #[test]
        fn weights_bounded_and_monotone(counts in prop::collection::vec(0u64..1_000_000, 1..50), r in 0u64..1_000_000) {
            let stats = compute_mu(&counts).unwrap();
            let w = sample_weight(r, &stats);
            prop_assert!((0.0..=stats.clip).contains(&w));
            prop_assert!(sample_weight(r + 1, &stats) >= w);
            if stats.mu > 0.0 {
                prop_assert_eq!(w == 0.0, r == 0);
            }
        }

        #[test]
        fn equal_counts_reduce_to_unweighted(
            r in 0u64..1_000_000,
            n in 1usize..300,
            residuals in prop::collection::vec(-4.0f64..4.0, 1..64),
        ) {
            let stats = compute_mu(&vec![r; n]).unwrap();
            let w = sample_weight(r, &stats);
            prop_assert_eq!(w, 1.0);
            let targets = vec![3.0; residuals.len()];
            let preds: Vec<f64> = residuals.iter().map(|e| 3.0 + e).collect();
            let weights = vec![w; residuals.len()];
            let h = Huber::default();
            prop_assert_eq!(
                weighted_batch_loss(&preds, &targets, &weights, &h).unwrap().to_bits(),
                eval_loss(&preds, &targets, &h).unwrap().to_bits()
            );
        }

        #[test]
        fn grad_matches_finite_differences(e in -5.0f64..5.0, delta in 0.1f64..3.0) {
            prop_assume!((e.abs() - delta).abs() > 1e-3);
            let h = Huber::new(delta).unwrap();
            let step = 1e-5;
            let fd = (h.loss(e + step, 0.0) - h.loss(e - step, 0.0)) / (2.0 * step);
            let an = h.grad(e, 0.0);
            prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "fd {} an {}", fd, an);
        }

        #[test]
        fn loss_is_non_negative(p in -10.0f64..10.0, t in -10.0f64..10.0) {
            let l = Huber::default().loss(p, t);
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, p == t);
        }
    }
}
