//! End-to-end gradient verification: the analytic gradient of the weighted
//! batch loss, taken through every parameter tensor, is compared against
//! central finite differences.

use emoembed::dataset::EncodedSample;
use emoembed::loss::{batch_loss_and_grads, batch_loss_weighted};
use emoembed::net::{EITConfig, EITParams, PromptFeature};
use emoembed::va::VAPoint;
use ndarray::Array2;

fn lcg_stream(seed: u64) -> impl FnMut() -> f64 {
    let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
    move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    }
}

fn rand_feature(rows: usize, cols: usize, seed: u64) -> PromptFeature {
    let mut next = lcg_stream(seed);
    PromptFeature::new(Array2::from_shape_fn((rows, cols), |_| next())).unwrap()
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let cfg = EITConfig {
        num_blocks: 2,
        d_model: 8,
        d_prompt: 8,
        l: 3,
        l_e: 1,
        num_heads: 2,
        d_ffn: 12,
        mlp_hidden: 8,
        ln_epsilon: 1e-5,
        causal_mask: false,
    };
    let mut params = EITParams::init(&cfg, 0).unwrap();
    // Kick the network away from identity so every path carries signal.
    let mut next = lcg_stream(42);
    for (_, t) in params.set.iter_mut() {
        for v in t.iter_mut() {
            *v += 0.15 * next();
        }
    }
    let batch = vec![
        EncodedSample {
            f_n: rand_feature(3, 8, 1),
            f_e: rand_feature(3, 8, 2),
            va: VAPoint::new(1.0, -1.5).unwrap(),
        },
        EncodedSample {
            f_n: rand_feature(2, 8, 3),
            f_e: rand_feature(2, 8, 4),
            va: VAPoint::new(-2.0, 0.5).unwrap(),
        },
    ];
    let weights = vec![1.0, 3.5];
    let alpha = 1.5;

    let (_, grads) = batch_loss_and_grads(&params, &batch, &weights, alpha).unwrap();

    let eps = 1e-5;
    let names: Vec<String> = params.set.iter().map(|(n, _)| n.to_string()).collect();
    let mut checked = 0usize;
    for name in &names {
        let dim = params.set.get(name).raw_dim();
        for i in 0..dim[0] {
            for j in 0..dim[1] {
                let orig = params.set.get(name)[[i, j]];
                params.set.get_mut(name)[[i, j]] = orig + eps;
                let up = batch_loss_weighted(&params, &batch, &weights, alpha).unwrap();
                params.set.get_mut(name)[[i, j]] = orig - eps;
                let down = batch_loss_weighted(&params, &batch, &weights, alpha).unwrap();
                params.set.get_mut(name)[[i, j]] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = grads.get(name)[[i, j]];
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                let rel = (analytic - numeric).abs() / denom;
                assert!(
                    rel < 1e-4,
                    "{name}[{i},{j}]: analytic {analytic} vs numeric {numeric} (rel {rel})"
                );
                checked += 1;
            }
        }
    }
    // Sanity: the sweep actually covered the whole parameter set.
    assert_eq!(checked, params.set.num_scalars());
    assert!(checked > 1000, "expected a nontrivial parameter count, got {checked}");
}
