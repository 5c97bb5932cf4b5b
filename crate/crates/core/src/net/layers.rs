//! Differentiable building blocks: linear, LayerNorm, GELU, multi-head
//! attention. Each forward returns the cache its backward needs; backward
//! passes are hand-derived and checked against finite differences in the
//! test suite.

use ndarray::{s, Array1, Array2, Axis};
use statrs::function::erf::erf;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.3989422804014327;

/// y = x W + b, with b shaped (1, D_out).
pub fn linear(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    x.dot(w) + b
}

/// Returns (dx, dw, db).
pub fn linear_bwd(
    x: &Array2<f64>,
    w: &Array2<f64>,
    dy: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let dx = dy.dot(&w.t());
    let dw = x.t().dot(dy);
    let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    (dx, dw, db)
}

pub struct LnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Row-wise LayerNorm with learned scale/shift (gamma, beta shaped (1, D)).
pub fn layernorm(
    x: &Array2<f64>,
    gamma: &Array2<f64>,
    beta: &Array2<f64>,
    eps: f64,
) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let mut xhat = x.clone();
    for (mut row, &m) in xhat.rows_mut().into_iter().zip(mean.iter()) {
        row -= m;
    }
    let var = xhat.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
    for (mut row, &is) in xhat.rows_mut().into_iter().zip(inv_std.iter()) {
        row *= is;
    }
    let y = &xhat * gamma + beta;
    (y, LnCache { xhat, inv_std })
}

/// Returns (dx, dgamma, dbeta).
pub fn layernorm_bwd(
    cache: &LnCache,
    gamma: &Array2<f64>,
    dy: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let d = dy.ncols() as f64;
    let dgamma = (dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * gamma;
    let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
    let mean_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / d;
    let mut dx = dxhat;
    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
        let m1 = mean_dxhat[i];
        let m2 = mean_dxhat_xhat[i];
        let is = cache.inv_std[i];
        for (j, v) in row.iter_mut().enumerate() {
            *v = is * (*v - m1 - cache.xhat[[i, j]] * m2);
        }
    }
    (dx, dgamma, dbeta)
}

/// Exact (erf-based) GELU.
pub fn gelu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| 0.5 * v * (1.0 + erf(v / SQRT_2)))
}

pub fn gelu_bwd(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = x.mapv(|v| {
        0.5 * (1.0 + erf(v / SQRT_2)) + v * INV_SQRT_2PI * (-0.5 * v * v).exp()
    });
    dx *= dy;
    dx
}

/// Attention masking for the self-attention sublayer. `key_valid` limits
/// which key positions may be attended (right padding); `causal` is a debug
/// switch that restores the next-token mask the architecture removes.
#[derive(Debug, Clone, Copy)]
pub struct AttnMaskSpec {
    pub key_valid: usize,
    pub causal: bool,
}

impl AttnMaskSpec {
    fn blocked(&self, query: usize, key: usize) -> bool {
        key >= self.key_valid || (self.causal && key > query)
    }
}

pub struct MhaParams<'a> {
    pub wq: &'a Array2<f64>,
    pub bq: &'a Array2<f64>,
    pub wk: &'a Array2<f64>,
    pub bk: &'a Array2<f64>,
    pub wv: &'a Array2<f64>,
    pub bv: &'a Array2<f64>,
    pub wo: &'a Array2<f64>,
    pub bo: &'a Array2<f64>,
}

pub struct MhaCache {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Per-head attention probabilities, each (L_q, L_k).
    pub probs: Vec<Array2<f64>>,
    pub concat: Array2<f64>,
}

/// Multi-head scaled-dot-product attention. Queries come from `q_in`
/// (L_q, D); keys and values from `kv_in` (L_k, D). With `q_in == kv_in`
/// this is self-attention; with a short emotion-feature context it is
/// cross-attention.
pub fn mha(
    q_in: &Array2<f64>,
    kv_in: &Array2<f64>,
    p: &MhaParams,
    num_heads: usize,
    mask: Option<AttnMaskSpec>,
) -> (Array2<f64>, MhaCache) {
    let d_model = q_in.ncols();
    let dk = d_model / num_heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let q = linear(q_in, p.wq, p.bq);
    let k = linear(kv_in, p.wk, p.bk);
    let v = linear(kv_in, p.wv, p.bv);
    let l_q = q_in.nrows();
    let mut concat = Array2::zeros((l_q, d_model));
    let mut probs = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let mut scores = qh.dot(&kh.t());
        scores *= scale;
        if let Some(m) = mask {
            for ((i, j), val) in scores.indexed_iter_mut() {
                if m.blocked(i, j) {
                    *val = f64::NEG_INFINITY;
                }
            }
        }
        let ph = softmax_rows(&scores);
        let oh = ph.dot(&vh);
        concat.slice_mut(cols).assign(&oh);
        probs.push(ph);
    }
    let y = linear(&concat, p.wo, p.bo);
    (y, MhaCache { q, k, v, probs, concat })
}

pub struct MhaGrads {
    pub dq_in: Array2<f64>,
    pub dkv_in: Array2<f64>,
    pub dwq: Array2<f64>,
    pub dbq: Array2<f64>,
    pub dwk: Array2<f64>,
    pub dbk: Array2<f64>,
    pub dwv: Array2<f64>,
    pub dbv: Array2<f64>,
    pub dwo: Array2<f64>,
    pub dbo: Array2<f64>,
}

pub fn mha_bwd(
    q_in: &Array2<f64>,
    kv_in: &Array2<f64>,
    p: &MhaParams,
    num_heads: usize,
    cache: &MhaCache,
    dy: &Array2<f64>,
) -> MhaGrads {
    let d_model = q_in.ncols();
    let dk_dim = d_model / num_heads;
    let scale = 1.0 / (dk_dim as f64).sqrt();
    let (d_concat, dwo, dbo) = linear_bwd(&cache.concat, p.wo, dy);
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for h in 0..num_heads {
        let cols = s![.., h * dk_dim..(h + 1) * dk_dim];
        let qh = cache.q.slice(cols);
        let kh = cache.k.slice(cols);
        let vh = cache.v.slice(cols);
        let ph = &cache.probs[h];
        let doh = d_concat.slice(cols);
        let dp = doh.dot(&vh.t());
        dv.slice_mut(cols).assign(&ph.t().dot(&doh));
        // Softmax backward; masked entries have p = 0 so they vanish.
        let rowdot = (&dp * ph).sum_axis(Axis(1));
        let mut ds = dp * ph;
        for (i, mut row) in ds.rows_mut().into_iter().enumerate() {
            for (j, val) in row.iter_mut().enumerate() {
                *val -= ph[[i, j]] * rowdot[i];
            }
        }
        ds *= scale;
        dq.slice_mut(cols).assign(&ds.dot(&kh));
        dk.slice_mut(cols).assign(&ds.t().dot(&qh));
    }
    let (dq_in, dwq, dbq) = linear_bwd(q_in, p.wq, &dq);
    let (dkv_k, dwk, dbk) = linear_bwd(kv_in, p.wk, &dk);
    let (dkv_v, dwv, dbv) = linear_bwd(kv_in, p.wv, &dv);
    MhaGrads {
        dq_in,
        dkv_in: dkv_k + dkv_v,
        dwq,
        dbq,
        dwk,
        dbk,
        dwv,
        dbv,
        dwo,
        dbo,
    }
}

fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::arr2;

    #[test]
    fn linear_matches_hand_math() {
        let x = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        let w = arr2(&[[1.0, 0.0, 1.0], [0.0, 1.0, -1.0]]);
        let b = arr2(&[[0.5, 0.5, 0.5]]);
        let y = linear(&x, &w, &b);
        assert_eq!(y, arr2(&[[1.5, 2.5, -0.5], [3.5, 4.5, -0.5]]));
    }

    #[test]
    fn layernorm_rows_standardized() {
        let x = arr2(&[[1.0, 2.0, 3.0, 4.0]]);
        let gamma = Array2::ones((1, 4));
        let beta = Array2::zeros((1, 4));
        let (y, _) = layernorm(&x, &gamma, &beta, 1e-12);
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert_relative_eq!(mean, 0.0, epsilon = 1e-10);
        assert_relative_eq!(var, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let s = arr2(&[[0.1, 2.0, -1.0], [5.0, 5.0, 5.0]]);
        let p = softmax_rows(&s);
        for row in p.rows() {
            assert_relative_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn masked_positions_get_zero_probability() {
        let q = Array2::from_shape_fn((3, 4), |(i, j)| (i + j) as f64 * 0.1);
        let w = Array2::from_shape_fn((4, 4), |(i, j)| ((i * 4 + j) as f64).sin() * 0.3);
        let b = Array2::zeros((1, 4));
        let p = MhaParams {
            wq: &w,
            bq: &b,
            wk: &w,
            bk: &b,
            wv: &w,
            bv: &b,
            wo: &w,
            bo: &b,
        };
        let (_, cache) = mha(
            &q,
            &q,
            &p,
            2,
            Some(AttnMaskSpec {
                key_valid: 2,
                causal: true,
            }),
        );
        for ph in &cache.probs {
            // key 2 padded out everywhere; key 1 blocked for query 0.
            for i in 0..3 {
                assert_eq!(ph[[i, 2]], 0.0);
            }
            assert_eq!(ph[[0, 1]], 0.0);
            assert!(ph[[1, 0]] > 0.0);
        }
    }

    // Finite-difference checks of each backward pass on small random shapes.
    fn numeric_grad<F: FnMut(&Array2<f64>) -> f64>(x: &Array2<f64>, mut f: F) -> Array2<f64> {
        let h = 1e-6;
        let mut g = Array2::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let mut xm = x.clone();
            xm[[r, c]] -= h;
            g[[r, c]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn rand_mat(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut state = seed;
        Array2::from_shape_fn((rows, cols), |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        })
    }

    #[test]
    fn layernorm_bwd_matches_finite_diff() {
        let x = rand_mat(3, 5, 1);
        let gamma = rand_mat(1, 5, 2);
        let beta = rand_mat(1, 5, 3);
        let dy = rand_mat(3, 5, 4);
        let eps = 1e-5;
        let (_, cache) = layernorm(&x, &gamma, &beta, eps);
        let (dx, dgamma, dbeta) = layernorm_bwd(&cache, &gamma, &dy);
        let loss = |x_: &Array2<f64>, g_: &Array2<f64>, b_: &Array2<f64>| {
            let (y, _) = layernorm(x_, g_, b_, eps);
            (&y * &dy).sum()
        };
        let ndx = numeric_grad(&x, |x_| loss(x_, &gamma, &beta));
        let ndg = numeric_grad(&gamma, |g_| loss(&x, g_, &beta));
        let ndb = numeric_grad(&beta, |b_| loss(&x, &gamma, b_));
        for (a, b) in dx.iter().zip(ndx.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-6, max_relative = 1e-5);
        }
        for (a, b) in dgamma.iter().zip(ndg.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-6, max_relative = 1e-5);
        }
        for (a, b) in dbeta.iter().zip(ndb.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-6, max_relative = 1e-5);
        }
    }

    #[test]
    fn gelu_bwd_matches_finite_diff() {
        let x = rand_mat(2, 6, 9);
        let dy = rand_mat(2, 6, 10);
        let dx = gelu_bwd(&x, &dy);
        let ndx = numeric_grad(&x, |x_| (&gelu(x_) * &dy).sum());
        for (a, b) in dx.iter().zip(ndx.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-7, max_relative = 1e-5);
        }
    }

    #[test]
    fn mha_bwd_matches_finite_diff() {
        let d = 4;
        let heads = 2;
        let q_in = rand_mat(3, d, 20);
        let kv_in = rand_mat(2, d, 21);
        let mats: Vec<Array2<f64>> = (0..4).map(|i| rand_mat(d, d, 30 + i)).collect();
        let bias: Vec<Array2<f64>> = (0..4).map(|i| rand_mat(1, d, 40 + i)).collect();
        let dy = rand_mat(3, d, 50);
        fn params<'a>(m: &'a [Array2<f64>], b: &'a [Array2<f64>]) -> MhaParams<'a> {
            MhaParams {
                wq: &m[0],
                bq: &b[0],
                wk: &m[1],
                bk: &b[1],
                wv: &m[2],
                bv: &b[2],
                wo: &m[3],
                bo: &b[3],
            }
        }
        let (_, cache) = mha(&q_in, &kv_in, &params(&mats, &bias), heads, None);
        let g = mha_bwd(&q_in, &kv_in, &params(&mats, &bias), heads, &cache, &dy);
        let loss_qin = numeric_grad(&q_in, |x_| {
            (&mha(x_, &kv_in, &params(&mats, &bias), heads, None).0 * &dy).sum()
        });
        let loss_kvin = numeric_grad(&kv_in, |x_| {
            (&mha(&q_in, x_, &params(&mats, &bias), heads, None).0 * &dy).sum()
        });
        for (a, b) in g.dq_in.iter().zip(loss_qin.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-6, max_relative = 1e-4);
        }
        for (a, b) in g.dkv_in.iter().zip(loss_kvin.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-6, max_relative = 1e-4);
        }
        // One weight and one bias as spot checks for the parameter path.
        let nwq = numeric_grad(&mats[0], |w_| {
            let mut m2 = mats.clone();
            m2[0] = w_.clone();
            (&mha(&q_in, &kv_in, &params(&m2, &bias), heads, None).0 * &dy).sum()
        });
        for (a, b) in g.dwq.iter().zip(nwq.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-6, max_relative = 1e-4);
        }
        let nbv = numeric_grad(&bias[2], |b_| {
            let mut b2 = bias.clone();
            b2[2] = b_.clone();
            (&mha(&q_in, &kv_in, &params(&mats, &b2), heads, None).0 * &dy).sum()
        });
        for (a, b) in g.dbv.iter().zip(nbv.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-6, max_relative = 1e-4);
        }
    }
}
