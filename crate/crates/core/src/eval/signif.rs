//! Paired significance statistics: Shapiro-Wilk normality on the
//! differences and the two-sided Wilcoxon signed-rank test, exact for small
//! samples (n <= 25, via the full rank-sum distribution, midranks included)
//! and normal-approximated with tie correction above.

use statrs::distribution::{ContinuousCDF, Normal};

use super::EvalError;

/// Switch point between the exact signed-rank distribution and the normal
/// approximation.
pub const EXACT_LIMIT: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceReport {
    /// Shapiro-Wilk statistic and upper-tail p on the differences; absent
    /// when the differences have zero spread.
    pub shapiro_w: Option<f64>,
    pub shapiro_p: Option<f64>,
    /// Signed-rank statistic W+ (sum of positive-difference midranks).
    pub wilcoxon_w: f64,
    /// Two-sided p-value.
    pub wilcoxon_p: f64,
    pub wilcoxon_exact: bool,
    /// Pair count after zero differences are dropped.
    pub n_effective: usize,
}

/// Runs both tests on paired score vectors.
pub fn significance_tests(
    paired_a: &[f64],
    paired_b: &[f64],
) -> Result<SignificanceReport, EvalError> {
    if paired_a.len() != paired_b.len() {
        return Err(EvalError::LengthMismatch {
            left: paired_a.len(),
            right: paired_b.len(),
        });
    }
    if paired_a.len() < 5 {
        return Err(EvalError::TooFewPairs {
            got: paired_a.len(),
            need: 5,
        });
    }
    let diffs: Vec<f64> = paired_a
        .iter()
        .zip(paired_b)
        .map(|(a, b)| a - b)
        .collect();
    let (w_stat, p_value, exact, n_eff) = wilcoxon_signed_rank(&diffs)?;
    let sw = shapiro_wilk(&diffs).ok();
    Ok(SignificanceReport {
        shapiro_w: sw.map(|(w, _)| w),
        shapiro_p: sw.map(|(_, p)| p),
        wilcoxon_w: w_stat,
        wilcoxon_p: p_value,
        wilcoxon_exact: exact,
        n_effective: n_eff,
    })
}

/// Two-sided Wilcoxon signed-rank on raw differences. Zeros dropped,
/// midranks for tied magnitudes. Returns (W+, p, exact?, effective n).
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<(f64, f64, bool, usize), EvalError> {
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    if nonzero.is_empty() {
        return Err(EvalError::AllZeroDifferences);
    }
    let n = nonzero.len();
    // Midranks of |d|, doubled so they are exact integers even at ties.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| nonzero[i].abs().partial_cmp(&nonzero[j].abs()).unwrap());
    let mut rank2 = vec![0u64; n];
    let mut tie_groups: Vec<u64> = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && nonzero[order[j + 1]].abs() == nonzero[order[i]].abs() {
            j += 1;
        }
        // Positions i+1..=j+1 share midrank (i+j+2)/2; doubled: i+j+2.
        for &k in &order[i..=j] {
            rank2[k] = (i + j + 2) as u64;
        }
        tie_groups.push((j - i + 1) as u64);
        i = j + 1;
    }
    let w2_plus: u64 = (0..n)
        .filter(|&k| nonzero[k] > 0.0)
        .map(|k| rank2[k])
        .sum();
    let w_plus = w2_plus as f64 / 2.0;

    let p = if n <= EXACT_LIMIT {
        exact_two_sided_p(&rank2, w2_plus)
    } else {
        approx_two_sided_p(n, &tie_groups, w_plus)
    };
    Ok((w_plus, p, n <= EXACT_LIMIT, n))
}

/// Exact distribution of the doubled rank sum over all 2^n sign
/// assignments, by subset-sum dynamic programming.
fn exact_two_sided_p(rank2: &[u64], w2_observed: u64) -> f64 {
    let total: u64 = rank2.iter().sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    for &r in rank2 {
        let r = r as usize;
        for s in (r..counts.len()).rev() {
            counts[s] += counts[s - r];
        }
    }
    let denom = 2f64.powi(rank2.len() as i32);
    let cdf_le: f64 = counts[..=w2_observed as usize].iter().sum::<f64>() / denom;
    let cdf_ge: f64 = counts[w2_observed as usize..].iter().sum::<f64>() / denom;
    (2.0 * cdf_le.min(cdf_ge)).min(1.0)
}

fn approx_two_sided_p(n: usize, tie_groups: &[u64], w_plus: f64) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_groups
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum::<f64>()
        / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let z = (w_plus - mean) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).unwrap();
    (2.0 * (1.0 - normal.cdf(z.abs()))).min(1.0)
}

/// Shapiro-Wilk W and upper-tail p-value (Royston's approximation,
/// 3 <= n <= 5000). Errors on zero spread.
pub fn shapiro_wilk(x: &[f64]) -> Result<(f64, f64), EvalError> {
    let n = x.len();
    if !(3..=5000).contains(&n) {
        return Err(EvalError::TooFewPairs { got: n, need: 3 });
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let range = sorted[n - 1] - sorted[0];
    if range == 0.0 {
        return Err(EvalError::AllZeroDifferences);
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let nf = n as f64;
    let m: Vec<f64> = (1..=n)
        .map(|i| normal.inverse_cdf((i as f64 - 0.375) / (nf + 0.25)))
        .collect();
    let m_sq: f64 = m.iter().map(|v| v * v).sum();
    let c: Vec<f64> = m.iter().map(|v| v / m_sq.sqrt()).collect();
    let u = 1.0 / nf.sqrt();

    let mut a = vec![0.0f64; n];
    if n <= 5 {
        let a_n = c[n - 1]
            + 0.221157 * u
            - 0.147981 * u.powi(2)
            - 2.071190 * u.powi(3)
            + 4.434685 * u.powi(4)
            - 2.706056 * u.powi(5);
        let phi = (m_sq - 2.0 * m[n - 1] * m[n - 1]) / (1.0 - 2.0 * a_n * a_n);
        a[n - 1] = a_n;
        a[0] = -a_n;
        for i in 1..n - 1 {
            a[i] = m[i] / phi.sqrt();
        }
    } else {
        let a_n = c[n - 1]
            + 0.221157 * u
            - 0.147981 * u.powi(2)
            - 2.071190 * u.powi(3)
            + 4.434685 * u.powi(4)
            - 2.706056 * u.powi(5);
        let a_n1 = c[n - 2]
            + 0.042981 * u
            - 0.293762 * u.powi(2)
            - 1.752461 * u.powi(3)
            + 5.682633 * u.powi(4)
            - 3.582633 * u.powi(5);
        let phi = (m_sq - 2.0 * m[n - 1] * m[n - 1] - 2.0 * m[n - 2] * m[n - 2])
            / (1.0 - 2.0 * a_n * a_n - 2.0 * a_n1 * a_n1);
        a[n - 1] = a_n;
        a[n - 2] = a_n1;
        a[0] = -a_n;
        a[1] = -a_n1;
        for i in 2..n - 2 {
            a[i] = m[i] / phi.sqrt();
        }
    }

    let mean = sorted.iter().sum::<f64>() / nf;
    let ssq: f64 = sorted.iter().map(|v| (v - mean).powi(2)).sum();
    let num: f64 = a.iter().zip(&sorted).map(|(ai, xi)| ai * xi).sum();
    let w = (num * num / ssq).min(1.0);

    let p = if n == 3 {
        let pi = std::f64::consts::PI;
        ((6.0 / pi) * (w.sqrt().asin() - (0.75f64).sqrt().asin())).clamp(0.0, 1.0)
    } else if n <= 11 {
        let g = -2.273 + 0.459 * nf;
        let mu = 0.5440 - 0.39978 * nf + 0.025054 * nf * nf - 0.0006714 * nf * nf * nf;
        let sigma = (1.3822 - 0.77857 * nf + 0.062767 * nf * nf - 0.0020322 * nf * nf * nf).exp();
        let z = (-((g - (1.0 - w).ln()).ln()) - mu) / sigma;
        1.0 - normal.cdf(z)
    } else {
        let ln_n = nf.ln();
        let mu = -1.5861 - 0.31082 * ln_n - 0.083751 * ln_n * ln_n + 0.0038915 * ln_n.powi(3);
        let sigma = (-0.4803 - 0.082676 * ln_n + 0.0030302 * ln_n * ln_n).exp();
        let z = ((1.0 - w).ln() - mu) / sigma;
        1.0 - normal.cdf(z)
    };
    Ok((w, p))
}
