//! Training objective: scaled-residual targets and density-weighted MSE.
//!
//! The target enlarges the emotional shift, f_t = f_n + alpha * (f_e - f_n),
//! and each sample's squared error is normalized by its element count and
//! weighted by the inverse KDE density of its V-A location.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::EncodedSample;
use crate::density::DensityModel;
use crate::net::{eit_backward, eit_forward_cached, EITParams, NetError, ParamSet, PromptFeature};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: {0} vs {1}")]
    ShapeMismatch(String, String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("weight must be positive, got {0}")]
    BadWeight(f64),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Residual scale factor; 1.5 is the trade-off default.
    pub alpha: f64,
    /// Density floor forwarded to the KDE weighting.
    pub min_density: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.5,
            min_density: crate::density::DEFAULT_MIN_DENSITY,
        }
    }
}

fn check_shapes(a: &PromptFeature, b: &PromptFeature) -> Result<(), LossError> {
    if a.data().raw_dim() != b.data().raw_dim() {
        return Err(LossError::ShapeMismatch(
            format!("{:?}", a.data().shape()),
            format!("{:?}", b.data().shape()),
        ));
    }
    Ok(())
}

/// f_n + alpha * (f_e - f_n), elementwise. Exactly collinear with the
/// residual: the result minus f_n is alpha times (f_e - f_n).
pub fn scaled_target(
    f_n: &PromptFeature,
    f_e: &PromptFeature,
    alpha: f64,
) -> Result<PromptFeature, LossError> {
    check_shapes(f_n, f_e)?;
    let data = f_n.data() + &((f_e.data() - f_n.data()) * alpha);
    Ok(PromptFeature::new(data)?)
}

/// weight * ||f_hat - f_target||^2 / n, with n the number of feature
/// elements.
pub fn weighted_sample_loss(
    f_hat: &PromptFeature,
    f_target: &PromptFeature,
    weight: f64,
) -> Result<f64, LossError> {
    check_shapes(f_hat, f_target)?;
    if !(weight > 0.0) {
        return Err(LossError::BadWeight(weight));
    }
    let n = f_hat.data().len() as f64;
    let sq: f64 = f_hat
        .data()
        .iter()
        .zip(f_target.data().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(weight * sq / n)
}

/// Per-sample inverse-density weights, computed once because V-A values are
/// static over training.
pub fn sample_weights(batch: &[EncodedSample], density: &DensityModel) -> Vec<f64> {
    batch.iter().map(|s| density.loss_weight(&s.va)).collect()
}

/// Mean over the batch of the weighted per-sample losses of the network's
/// predictions against the scaled targets.
pub fn batch_loss(
    params: &EITParams,
    batch: &[EncodedSample],
    density: &DensityModel,
    cfg: &LossConfig,
) -> Result<f64, LossError> {
    let weights = sample_weights(batch, density);
    batch_loss_weighted(params, batch, &weights, cfg.alpha)
}

pub fn batch_loss_weighted(
    params: &EITParams,
    batch: &[EncodedSample],
    weights: &[f64],
    alpha: f64,
) -> Result<f64, LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mut total = 0.0;
    for (sample, &w) in batch.iter().zip(weights) {
        let f_hat = crate::net::eit_forward(params, &sample.f_n, &sample.va)?;
        let target = scaled_target(&sample.f_n, &sample.f_e, alpha)?;
        total += weighted_sample_loss(&f_hat, &target, w)?;
    }
    Ok(total / batch.len() as f64)
}

/// Batch loss plus its gradient w.r.t. every parameter tensor. Summation
/// order over the batch is fixed (file order), so results are deterministic.
pub fn batch_loss_and_grads(
    params: &EITParams,
    batch: &[EncodedSample],
    weights: &[f64],
    alpha: f64,
) -> Result<(f64, ParamSet), LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut grads = params.set.zeros_like();
    let mut total = 0.0;
    for (sample, &w) in batch.iter().zip(weights) {
        if !(w > 0.0) {
            return Err(LossError::BadWeight(w));
        }
        let (f_hat, cache) = eit_forward_cached(params, &sample.f_n, &sample.va)?;
        let target = scaled_target(&sample.f_n, &sample.f_e, alpha)?;
        total += weighted_sample_loss(&f_hat, &target, w)?;
        let n = f_hat.data().len() as f64;
        let d_out: Array2<f64> = (f_hat.data() - target.data()) * (2.0 * w / n * inv_b);
        eit_backward(params, &cache, &d_out, &mut grads);
    }
    Ok((total * inv_b, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::EITConfig;
    use crate::va::VAPoint;
    use approx::assert_relative_eq;
    use ndarray::arr2;

    fn feat(rows: &[[f64; 2]]) -> PromptFeature {
        PromptFeature::new(arr2(rows)).unwrap()
    }

    #[test]
    fn scaled_target_alpha_endpoints() {
        let f_n = feat(&[[1.0, 2.0], [3.0, -1.0]]);
        let f_e = feat(&[[0.5, 2.5], [2.0, 0.0]]);
        assert_eq!(scaled_target(&f_n, &f_e, 1.0).unwrap(), f_e);
        assert_eq!(scaled_target(&f_n, &f_e, 0.0).unwrap(), f_n);
    }

    #[test]
    fn scaled_target_default_alpha_on_zero_base() {
        let f_n = feat(&[[0.0, 0.0]]);
        let f_e = feat(&[[2.0, -4.0]]);
        let t = scaled_target(&f_n, &f_e, 1.5).unwrap();
        assert_eq!(t, feat(&[[3.0, -6.0]]));
    }

    #[test]
    fn scaled_target_collinearity() {
        let f_n = feat(&[[1.0, -2.0], [0.5, 0.25]]);
        let f_e = feat(&[[2.0, 1.0], [-0.5, 4.0]]);
        for alpha in [0.0, 0.5, 1.0, 1.5, 2.0] {
            let t = scaled_target(&f_n, &f_e, alpha).unwrap();
            let lhs = t.data() - f_n.data();
            let rhs = (f_e.data() - f_n.data()) * alpha;
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn weighted_loss_hand_example() {
        // diff [1,2,2] over 3 elements with weight 0.5 -> 0.5*9/3 = 1.5
        let f_hat = PromptFeature::new(arr2(&[[1.0, 2.0, 2.0]])).unwrap();
        let f_t = PromptFeature::new(arr2(&[[0.0, 0.0, 0.0]])).unwrap();
        assert_relative_eq!(weighted_sample_loss(&f_hat, &f_t, 0.5).unwrap(), 1.5);
    }

    #[test]
    fn weighted_loss_zero_on_match_and_linear_in_weight() {
        let f = feat(&[[0.3, -0.7], [1.1, 2.2]]);
        assert_eq!(weighted_sample_loss(&f, &f, 3.0).unwrap(), 0.0);
        let g = feat(&[[0.5, -0.2], [1.0, 2.0]]);
        let l1 = weighted_sample_loss(&f, &g, 1.25).unwrap();
        let l2 = weighted_sample_loss(&f, &g, 2.5).unwrap();
        assert_relative_eq!(l2, 2.0 * l1, max_relative = 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = feat(&[[1.0, 2.0]]);
        let b = feat(&[[1.0, 2.0], [3.0, 4.0]]);
        assert!(matches!(
            weighted_sample_loss(&a, &b, 1.0),
            Err(LossError::ShapeMismatch(..))
        ));
        assert!(matches!(
            scaled_target(&a, &b, 1.0),
            Err(LossError::ShapeMismatch(..))
        ));
    }

    fn tiny_batch(cfg: &EITConfig) -> (Vec<EncodedSample>, DensityModel) {
        let mk = |scale: f64| {
            PromptFeature::new(Array2::from_shape_fn((cfg.l, cfg.d_prompt), |(i, j)| {
                scale * ((i * cfg.d_prompt + j) as f64 * 0.37).sin()
            }))
            .unwrap()
        };
        let samples = vec![
            EncodedSample {
                f_n: mk(1.0),
                f_e: mk(1.2),
                va: VAPoint::new(0.5, -0.5).unwrap(),
            },
            EncodedSample {
                f_n: mk(0.8),
                f_e: mk(0.5),
                va: VAPoint::new(-1.5, 2.0).unwrap(),
            },
        ];
        let density = crate::density::fit_kde(
            &samples.iter().map(|s| s.va).collect::<Vec<_>>(),
            1e-4,
        )
        .unwrap();
        (samples, density)
    }

    #[test]
    fn zero_head_alpha_zero_gives_zero_loss() {
        let cfg = EITConfig::desk_scale();
        let params = EITParams::init(&cfg, 0).unwrap();
        let (batch, density) = tiny_batch(&cfg);
        let cfg_loss = LossConfig {
            alpha: 0.0,
            min_density: 1e-4,
        };
        let l = batch_loss(&params, &batch, &density, &cfg_loss).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn single_sample_batch_reduces_to_sample_loss() {
        let cfg = EITConfig::desk_scale();
        let params = EITParams::init(&cfg, 1).unwrap();
        let (batch, density) = tiny_batch(&cfg);
        let one = &batch[..1];
        let w = density.loss_weight(&one[0].va);
        let f_hat = crate::net::eit_forward(&params, &one[0].f_n, &one[0].va).unwrap();
        let target = scaled_target(&one[0].f_n, &one[0].f_e, 1.5).unwrap();
        let expected = weighted_sample_loss(&f_hat, &target, w).unwrap();
        let got = batch_loss(&params, one, &density, &LossConfig::default()).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-15);
    }

    #[test]
    fn two_sample_batch_hand_mean() {
        // Zero-head params make f_hat == f_n, so the per-sample loss is
        // w * alpha^2 * ||f_e - f_n||^2 / n, computable by hand.
        let cfg = EITConfig::desk_scale();
        let params = EITParams::init(&cfg, 2).unwrap();
        let (batch, density) = tiny_batch(&cfg);
        let alpha = 1.5;
        let mut expected = 0.0;
        for s in &batch {
            let w = density.loss_weight(&s.va);
            let n = s.f_n.data().len() as f64;
            let sq: f64 = (s.f_e.data() - s.f_n.data()).mapv(|v| v * v).sum();
            expected += w * alpha * alpha * sq / n;
        }
        expected /= batch.len() as f64;
        let got = batch_loss(&params, &batch, &density, &LossConfig::default()).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-12);
    }

    #[test]
    fn empty_batch_rejected() {
        let cfg = EITConfig::desk_scale();
        let params = EITParams::init(&cfg, 0).unwrap();
        let (_, density) = tiny_batch(&cfg);
        assert!(matches!(
            batch_loss(&params, &[], &density, &LossConfig::default()),
            Err(LossError::EmptyBatch)
        ));
    }

    #[test]
    fn sparse_sample_contributes_more() {
        // Two identical samples except for V-A placement: one in a dense
        // cluster, one isolated. The sparse one must carry more loss.
        let cfg = EITConfig::desk_scale();
        let params = EITParams::init(&cfg, 3).unwrap();
        let mk = |scale: f64| {
            PromptFeature::new(Array2::from_shape_fn((cfg.l, cfg.d_prompt), |(i, j)| {
                scale * ((i + j) as f64 * 0.21).cos()
            }))
            .unwrap()
        };
        let mut cluster: Vec<VAPoint> = (0..20)
            .map(|i| VAPoint::new(0.5 + 0.01 * i as f64, 0.5).unwrap())
            .collect();
        cluster.push(VAPoint::new(-2.5, -2.5).unwrap());
        let density = crate::density::fit_kde(&cluster, 1e-9).unwrap();
        let dense = EncodedSample {
            f_n: mk(1.0),
            f_e: mk(1.3),
            va: VAPoint::new(0.55, 0.5).unwrap(),
        };
        let sparse = EncodedSample {
            f_n: mk(1.0),
            f_e: mk(1.3),
            va: VAPoint::new(-2.5, -2.5).unwrap(),
        };
        let cfg_loss = LossConfig {
            alpha: 1.0,
            min_density: 1e-9,
        };
        let l_dense = batch_loss(&params, &[dense], &density, &cfg_loss).unwrap();
        let l_sparse = batch_loss(&params, &[sparse], &density, &cfg_loss).unwrap();
        assert!(l_sparse > l_dense);
    }
}
