//! 2-D Gaussian kernel density estimation over training-set V-A values.
//!
//! The fitted density weights the training loss inversely to how crowded a
//! sample's V-A neighborhood is, so rare emotions are not drowned out by
//! common ones. The kernel is a normalized bivariate Gaussian with diagonal
//! bandwidth; per-axis bandwidths come from Silverman's rule of thumb for
//! two-dimensional data, h_i = sigma_i * n^(-1/6), with the n-1 sample
//! standard deviation. A degenerate axis (sigma = 0) falls back to h = 0.1
//! so the kernel never collapses to a delta.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::va::VAPoint;

/// Default floor applied to the density before inversion; caps the loss
/// weight so one rare sample cannot dominate a batch gradient.
pub const DEFAULT_MIN_DENSITY: f64 = 1e-4;

/// Fallback bandwidth for axes with zero sample variance.
pub const DEGENERATE_BANDWIDTH: f64 = 0.1;

#[derive(Debug, Error)]
pub enum DensityError {
    #[error("cannot fit a density model on an empty sample set")]
    EmptySamples,
    #[error("min_density must be positive, got {0}")]
    BadFloor(f64),
    #[error("density sidecar {path}: {reason}")]
    BadSidecar { path: String, reason: String },
}

/// Fitted KDE: the training V-A points plus per-axis bandwidths and the
/// density floor. Immutable after fit; evaluation is pure and thread-safe.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    samples: Vec<VAPoint>,
    bandwidth: (f64, f64),
    min_density: f64,
}

/// Sample standard deviation with the n-1 denominator; 0.0 for n = 1.
fn sample_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    var.sqrt()
}

/// Fits the KDE with Silverman-rule bandwidths.
pub fn fit_kde(samples: &[VAPoint], min_density: f64) -> Result<DensityModel, DensityError> {
    if samples.is_empty() {
        return Err(DensityError::EmptySamples);
    }
    if !(min_density > 0.0) {
        return Err(DensityError::BadFloor(min_density));
    }
    let n = samples.len() as f64;
    let factor = n.powf(-1.0 / 6.0);
    let h_of = |std: f64| {
        if std > 0.0 {
            std * factor
        } else {
            DEGENERATE_BANDWIDTH
        }
    };
    let h_v = h_of(sample_std(samples.iter().map(|p| p.valence())));
    let h_a = h_of(sample_std(samples.iter().map(|p| p.arousal())));
    Ok(DensityModel {
        samples: samples.to_vec(),
        bandwidth: (h_v, h_a),
        min_density,
    })
}

impl DensityModel {
    pub fn bandwidth(&self) -> (f64, f64) {
        self.bandwidth
    }

    pub fn min_density(&self) -> f64 {
        self.min_density
    }

    pub fn samples(&self) -> &[VAPoint] {
        &self.samples
    }

    /// Evaluates the density: (1/n) sum of bivariate Gaussian kernels
    /// centered at the training points. Strictly positive everywhere finite.
    pub fn density_at(&self, p: &VAPoint) -> f64 {
        self.density_at_unchecked(p.valence(), p.arousal())
    }

    /// Kernel-sum evaluation at an arbitrary coordinate, without the V-A
    /// domain check; used for normalization checks and diagnostics that
    /// integrate past the domain boundary.
    pub fn density_at_unchecked(&self, valence: f64, arousal: f64) -> f64 {
        let (h_v, h_a) = self.bandwidth;
        let norm = 1.0 / (2.0 * PI * h_v * h_a);
        let sum: f64 = self
            .samples
            .iter()
            .map(|s| {
                let zv = (valence - s.valence()) / h_v;
                let za = (arousal - s.arousal()) / h_a;
                norm * (-0.5 * (zv * zv + za * za)).exp()
            })
            .sum();
        sum / self.samples.len() as f64
    }

    /// Inverse-density loss weight, floored at `min_density`.
    pub fn loss_weight(&self, p: &VAPoint) -> f64 {
        1.0 / self.density_at(p).max(self.min_density)
    }

    /// Writes the fitted model to a versioned text sidecar so training runs
    /// are reproducible without re-fitting.
    pub fn save(&self, path: &Path) -> Result<(), DensityError> {
        let mut out = String::new();
        out.push_str(SIDECAR_MAGIC);
        out.push('\n');
        out.push_str(&format!(
            "bandwidth {} {}\nmin_density {}\nsamples {}\n",
            hexf(self.bandwidth.0),
            hexf(self.bandwidth.1),
            hexf(self.min_density),
            self.samples.len()
        ));
        for s in &self.samples {
            out.push_str(&format!("{} {}\n", hexf(s.valence()), hexf(s.arousal())));
        }
        let mut f = std::fs::File::create(path).map_err(|e| DensityError::BadSidecar {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        f.write_all(out.as_bytes()).map_err(|e| DensityError::BadSidecar {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, DensityError> {
        let bad = |reason: String| DensityError::BadSidecar {
            path: path.display().to_string(),
            reason,
        };
        let mut text = String::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|e| bad(e.to_string()))?;
        let mut lines = text.lines();
        if lines.next() != Some(SIDECAR_MAGIC) {
            return Err(bad("bad magic header".to_string()));
        }
        let mut bandwidth = None;
        let mut min_density = None;
        let mut count = None;
        for line in lines.by_ref() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["bandwidth", v, a] => {
                    bandwidth = Some((
                        unhexf(v).map_err(|e| bad(e))?,
                        unhexf(a).map_err(|e| bad(e))?,
                    ))
                }
                ["min_density", m] => min_density = Some(unhexf(m).map_err(|e| bad(e))?),
                ["samples", n] => {
                    count = Some(n.parse::<usize>().map_err(|e| bad(e.to_string()))?);
                    break;
                }
                _ => return Err(bad(format!("unexpected line {line:?}"))),
            }
        }
        let count = count.ok_or_else(|| bad("missing samples count".to_string()))?;
        let mut samples = Vec::with_capacity(count);
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if let [v, a] = parts.as_slice() {
                let v = unhexf(v).map_err(|e| bad(e))?;
                let a = unhexf(a).map_err(|e| bad(e))?;
                samples.push(VAPoint::new(v, a).map_err(|e| bad(e.to_string()))?);
            } else if !line.trim().is_empty() {
                return Err(bad(format!("unexpected sample line {line:?}")));
            }
        }
        if samples.len() != count {
            return Err(bad(format!(
                "expected {count} samples, found {}",
                samples.len()
            )));
        }
        Ok(Self {
            samples,
            bandwidth: bandwidth.ok_or_else(|| bad("missing bandwidth".to_string()))?,
            min_density: min_density.ok_or_else(|| bad("missing min_density".to_string()))?,
        })
    }
}

const SIDECAR_MAGIC: &str = "VADENSITY 1";

// Floats stored as bit patterns so save/load is bit-exact.
fn hexf(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

fn unhexf(s: &str) -> Result<f64, String> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|e| format!("bad float field {s:?}: {e}"))
}
