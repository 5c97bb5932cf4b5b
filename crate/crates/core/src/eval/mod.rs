//! Evaluation metric suite: V/A absolute error, sweep continuity, rank
//! consistency, paired significance statistics, and the alpha-ablation
//! runner. Pretrained predictors (V-A regressors, CLIP-style similarity,
//! perceptual distance) sit behind ports; the math here is self-contained.

pub mod ablation;
pub mod rank;
pub mod signif;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::va::VAPoint;

pub use ablation::{run_alpha_ablation, AblationRow};
pub use rank::{kendall_tau_b, kendall_tau_b_bruteforce};
pub use signif::{shapiro_wilk, significance_tests, wilcoxon_signed_rank, SignificanceReport};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("degenerate ranking: all items tied")]
    DegenerateRanking,
    #[error("non-finite input value")]
    NonFiniteInput,
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("need at least {need} pairs, got {got}")]
    TooFewPairs { got: usize, need: usize },
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("bad sweep spec: {0}")]
    BadSweep(String),
    #[error("metric report {path}: {reason}")]
    BadReport { path: String, reason: String },
}

/// Componentwise absolute V/A error, reported (arousal, valence) to match
/// the A-Error / V-Error table layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaErrors {
    pub a_err: f64,
    pub v_err: f64,
}

pub fn va_error(pred: &VAPoint, target: &VAPoint) -> VaErrors {
    VaErrors {
        a_err: (pred.arousal() - target.arousal()).abs(),
        v_err: (pred.valence() - target.valence()).abs(),
    }
}

/// Mean pairwise distance over consecutive sweep items; the feature-space
/// analogue of perceptual-continuity scoring. `distance` must be symmetric,
/// nonnegative, and zero on identical inputs.
pub fn continuity_score<T>(
    distance: impl Fn(&T, &T) -> f64,
    items: &[T],
) -> Result<f64, EvalError> {
    if items.len() < 2 {
        return Err(EvalError::TooFewItems(items.len()));
    }
    let total: f64 = items.windows(2).map(|w| distance(&w[0], &w[1])).sum();
    Ok(total / (items.len() - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Valence,
    Arousal,
    BothGrid,
}

/// A V-A sweep: prompt, axis selection, and an inclusive [start, stop] range
/// walked in `step` increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub prompt: String,
    pub axis: SweepAxis,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.step > 0.0) {
            return Err(EvalError::BadSweep(format!("step {} not positive", self.step)));
        }
        if self.start > self.stop {
            return Err(EvalError::BadSweep(format!(
                "start {} exceeds stop {}",
                self.start, self.stop
            )));
        }
        for v in [self.start, self.stop] {
            if !(-3.0..=3.0).contains(&v) {
                return Err(EvalError::BadSweep(format!("bound {v} outside [-3, 3]")));
            }
        }
        let span = self.stop - self.start;
        let steps = span / self.step;
        if (steps - steps.round()).abs() > 1e-9 * (1.0 + steps.abs()) {
            return Err(EvalError::BadSweep(format!(
                "step {} does not divide span {span}",
                self.step
            )));
        }
        Ok(())
    }

    /// Points along one axis: floor((stop-start)/step) + 1 values.
    pub fn axis_points(&self) -> Vec<f64> {
        let count = ((self.stop - self.start) / self.step).round() as usize + 1;
        (0..count).map(|i| self.start + i as f64 * self.step).collect()
    }

    /// The full (v, a) grid in row-major order. Single-axis sweeps hold the
    /// other coordinate at `fixed`.
    pub fn grid(&self, fixed: f64) -> Vec<(f64, f64)> {
        let pts = self.axis_points();
        match self.axis {
            SweepAxis::Valence => pts.iter().map(|&v| (v, fixed)).collect(),
            SweepAxis::Arousal => pts.iter().map(|&a| (fixed, a)).collect(),
            SweepAxis::BothGrid => {
                let mut grid = Vec::with_capacity(pts.len() * pts.len());
                for &a in &pts {
                    for &v in &pts {
                        grid.push((v, a));
                    }
                }
                grid
            }
        }
    }
}

/// One evaluated item of a metric run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricItem {
    pub va_in: (f64, f64),
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub va_pred: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub similarity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub quality: Option<f64>,
}

/// Per-item records plus (mean, std) aggregates and run metadata. The
/// aggregates are recomputed and checked whenever a report is loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub items: Vec<MetricItem>,
    pub summary: BTreeMap<String, (f64, f64)>,
    pub metadata: BTreeMap<String, String>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl MetricReport {
    pub fn from_items(items: Vec<MetricItem>, metadata: BTreeMap<String, String>) -> Self {
        let summary = Self::compute_summary(&items);
        Self {
            items,
            summary,
            metadata,
        }
    }

    fn compute_summary(items: &[MetricItem]) -> BTreeMap<String, (f64, f64)> {
        let mut summary = BTreeMap::new();
        let collect = |f: &dyn Fn(&MetricItem) -> Option<f64>| -> Vec<f64> {
            items.iter().filter_map(f).collect()
        };
        let a_errs: Vec<f64> = items
            .iter()
            .filter_map(|it| it.va_pred.map(|(_, a)| (a - it.va_in.1).abs()))
            .collect();
        let v_errs: Vec<f64> = items
            .iter()
            .filter_map(|it| it.va_pred.map(|(v, _)| (v - it.va_in.0).abs()))
            .collect();
        if !a_errs.is_empty() {
            summary.insert("a_error".to_string(), mean_std(&a_errs));
            summary.insert("v_error".to_string(), mean_std(&v_errs));
        }
        let sims = collect(&|it| it.similarity);
        if !sims.is_empty() {
            summary.insert("similarity".to_string(), mean_std(&sims));
        }
        let quals = collect(&|it| it.quality);
        if !quals.is_empty() {
            summary.insert("quality".to_string(), mean_std(&quals));
        }
        summary
    }

    /// Writes items as line-delimited records followed by a summary block.
    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let bad = |reason: String| EvalError::BadReport {
            path: path.display().to_string(),
            reason,
        };
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&serde_json::to_string(item).map_err(|e| bad(e.to_string()))?);
            out.push('\n');
        }
        let tail = serde_json::json!({
            "summary": self.summary.iter().map(|(k, (m, s))| {
                (k.clone(), serde_json::json!({"mean": m, "std": s}))
            }).collect::<serde_json::Map<String, serde_json::Value>>(),
            "metadata": self.metadata,
        });
        out.push_str(&tail.to_string());
        out.push('\n');
        std::fs::write(path, out).map_err(|e| bad(e.to_string()))
    }

    /// Loads a report and verifies the stored aggregates against the
    /// per-item records.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let bad = |reason: String| EvalError::BadReport {
            path: path.display().to_string(),
            reason,
        };
        let file = std::fs::File::open(path).map_err(|e| bad(e.to_string()))?;
        let mut items = Vec::new();
        let mut tail: Option<serde_json::Value> = None;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            if value.get("summary").is_some() {
                tail = Some(value);
            } else {
                items.push(serde_json::from_value(value).map_err(|e| bad(e.to_string()))?);
            }
        }
        let tail = tail.ok_or_else(|| bad("missing summary block".to_string()))?;
        let mut summary = BTreeMap::new();
        for (k, v) in tail["summary"].as_object().ok_or_else(|| bad("bad summary".into()))? {
            let mean = v["mean"].as_f64().ok_or_else(|| bad("bad mean".into()))?;
            let std = v["std"].as_f64().ok_or_else(|| bad("bad std".into()))?;
            summary.insert(k.clone(), (mean, std));
        }
        let metadata: BTreeMap<String, String> =
            serde_json::from_value(tail["metadata"].clone()).unwrap_or_default();
        let recomputed = Self::compute_summary(&items);
        if recomputed.len() != summary.len() {
            return Err(bad("summary keys do not match per-item records".into()));
        }
        for (k, (m, s)) in &recomputed {
            let (sm, ss) = summary
                .get(k)
                .ok_or_else(|| bad(format!("missing summary key {k}")))?;
            if (m - sm).abs() > 1e-9 || (s - ss).abs() > 1e-9 {
                return Err(bad(format!(
                    "aggregate {k} mismatch: stored ({sm}, {ss}) recomputed ({m}, {s})"
                )));
            }
        }
        Ok(Self {
            items,
            summary,
            metadata,
        })
    }

    /// Plain-text table with one row per metric, mean +/- std.
    pub fn render_table(&self) -> String {
        let mut out = String::from(format!("{:<12} {:>10} {:>10}\n", "metric", "mean", "std"));
        for (k, (m, s)) in &self.summary {
            out.push_str(&format!("{k:<12} {m:>10.4} {s:>10.4}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pt(v: f64, a: f64) -> VAPoint {
        VAPoint::new(v, a).unwrap()
    }

    #[test]
    fn va_error_basics() {
        let e = va_error(&pt(1.0, 1.0), &pt(1.0, 1.0));
        assert_eq!((e.a_err, e.v_err), (0.0, 0.0));
        let e = va_error(&pt(-3.0, 3.0), &pt(3.0, -3.0));
        assert_eq!((e.a_err, e.v_err), (6.0, 6.0));
        let e = va_error(&pt(0.5, -1.25), &pt(1.0, 0.25));
        assert_eq!((e.a_err, e.v_err), (1.5, 0.5));
    }

    #[test]
    fn va_error_triangle_inequality() {
        let (p, q, r) = (pt(1.0, -2.0), pt(-0.5, 0.5), pt(2.5, 1.0));
        let pq = va_error(&p, &q);
        let qr = va_error(&q, &r);
        let pr = va_error(&p, &r);
        assert!(pr.a_err <= pq.a_err + qr.a_err + 1e-12);
        assert!(pr.v_err <= pq.v_err + qr.v_err + 1e-12);
    }

    #[test]
    fn continuity_basics() {
        let euclid = |a: &(f64, f64), b: &(f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        let same = vec![(1.0, 1.0); 4];
        assert_eq!(continuity_score(euclid, &same).unwrap(), 0.0);
        let items = vec![(0.0, 0.0), (3.0, 4.0), (3.0, 4.0)];
        assert_relative_eq!(continuity_score(euclid, &items).unwrap(), 2.5);
        assert!(matches!(
            continuity_score(euclid, &items[..1]),
            Err(EvalError::TooFewItems(1))
        ));
    }

    #[test]
    fn continuity_symmetric_under_reversal() {
        let euclid = |a: &(f64, f64), b: &(f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        let items = vec![(0.0, 0.0), (1.0, 0.5), (2.0, -1.0), (0.5, 0.5)];
        let mut rev = items.clone();
        rev.reverse();
        assert_relative_eq!(
            continuity_score(euclid, &items).unwrap(),
            continuity_score(euclid, &rev).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn sweep_point_counts() {
        let spec = SweepSpec {
            prompt: "a river".into(),
            axis: SweepAxis::Valence,
            start: -3.0,
            stop: 3.0,
            step: 0.2,
        };
        spec.validate().unwrap();
        assert_eq!(spec.axis_points().len(), 31);
        let grid = SweepSpec {
            axis: SweepAxis::BothGrid,
            ..spec
        };
        assert_eq!(grid.grid(0.0).len(), 31 * 31);
    }

    #[test]
    fn sweep_validation_errors() {
        let mut spec = SweepSpec {
            prompt: String::new(),
            axis: SweepAxis::Arousal,
            start: -1.0,
            stop: 1.0,
            step: 0.3,
        };
        assert!(spec.validate().is_err()); // 2.0 / 0.3 is not integral
        spec.step = 0.5;
        assert!(spec.validate().is_ok());
        spec.start = 2.0;
        spec.stop = 1.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn report_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let items = vec![
            MetricItem {
                va_in: (1.0, 0.5),
                va_pred: Some((0.8, 0.7)),
                similarity: Some(0.9),
                quality: None,
            },
            MetricItem {
                va_in: (-2.0, 1.0),
                va_pred: Some((-1.5, 1.2)),
                similarity: Some(0.7),
                quality: None,
            },
        ];
        let report = MetricReport::from_items(items, BTreeMap::new());
        let path = dir.path().join("report.jsonl");
        report.save(&path).unwrap();
        let loaded = MetricReport::load(&path).unwrap();
        assert_eq!(report, loaded);

        // Corrupt one per-item record; the stored summary no longer matches.
        let text = std::fs::read_to_string(&path).unwrap();
        let corrupted = text.replacen("0.9", "0.1", 1);
        std::fs::write(&path, corrupted).unwrap();
        assert!(matches!(
            MetricReport::load(&path),
            Err(EvalError::BadReport { .. })
        ));
    }
}
