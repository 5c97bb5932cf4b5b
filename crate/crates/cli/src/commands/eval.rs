//! `eval`: score a sweep directory. Computes the feature-space continuity of
//! consecutive grid points, the rank agreement between the swept coordinate
//! and the residual magnitude, and writes a metric report plus a rendered
//! table.

use std::collections::BTreeMap;
use std::path::Path;

use emoembed::dataset::read_feature;
use emoembed::eval::{continuity_score, kendall_tau_b, MetricItem, MetricReport, SweepAxis};
use emoembed::net::PromptFeature;
use serde::{Deserialize, Serialize};

use super::ensure_dir;
use super::sweep::{SweepIndex, INDEX_FILE};
use crate::manifest::RunManifest;
use crate::{CliError, EvalArgs};

#[derive(Serialize, Deserialize)]
struct EvalResolved {
    sweep_dir: String,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let resolved = EvalResolved {
        sweep_dir: args.sweep_dir.display().to_string(),
    };
    let mut manifest = RunManifest::new(
        "eval",
        serde_json::to_value(&resolved).expect("resolved args serialize"),
    );
    manifest.record_input("sweep_index", &args.sweep_dir.join(INDEX_FILE))?;
    execute(&resolved, &manifest, &args.out)
}

pub fn rerun_eval(manifest: &RunManifest, out: &Path) -> Result<(), CliError> {
    let resolved: EvalResolved = serde_json::from_value(manifest.resolved.clone())
        .map_err(|e| CliError::validation(format!("manifest resolved block: {e}")))?;
    execute(&resolved, manifest, out)
}

fn execute(r: &EvalResolved, manifest: &RunManifest, out: &Path) -> Result<(), CliError> {
    let sweep_dir = Path::new(&r.sweep_dir);
    let index_text = std::fs::read_to_string(sweep_dir.join(INDEX_FILE))
        .map_err(|e| CliError::runtime(format!("reading sweep index: {e}")))?;
    let index: SweepIndex = serde_json::from_str(&index_text)
        .map_err(|e| CliError::validation(format!("sweep index: {e}")))?;
    if index.entries.is_empty() {
        return Err(CliError::validation("sweep index holds no entries"));
    }
    ensure_dir(out)?;

    let mut tensors: Vec<PromptFeature> = Vec::with_capacity(index.entries.len());
    for e in &index.entries {
        // Dimensions are validated against the first tensor's shape below;
        // read_feature itself checks the per-file header.
        let path = sweep_dir.join(&e.tensor);
        let dims = probe_dims(&path)?;
        tensors.push(read_feature(&path, dims)?);
    }
    let first_dims = (tensors[0].tokens(), tensors[0].dim());
    for (e, t) in index.entries.iter().zip(&tensors) {
        if (t.tokens(), t.dim()) != first_dims {
            return Err(CliError::validation(format!(
                "tensor {} has shape ({}, {}), expected ({}, {})",
                e.tensor,
                t.tokens(),
                t.dim(),
                first_dims.0,
                first_dims.1
            )));
        }
    }

    let euclid = |a: &PromptFeature, b: &PromptFeature| {
        a.data()
            .iter()
            .zip(b.data().iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let continuity = continuity_score(euclid, &tensors)?;

    // Rank agreement between the swept coordinate and the residual
    // magnitude; only meaningful on a single axis.
    let tau = match index.axis {
        SweepAxis::Valence | SweepAxis::Arousal => {
            let coord: Vec<f64> = index
                .entries
                .iter()
                .map(|e| match index.axis {
                    SweepAxis::Valence => e.v,
                    _ => e.a,
                })
                .collect();
            let norms: Vec<f64> = index.entries.iter().map(|e| e.residual_norm).collect();
            kendall_tau_b(&coord, &norms).ok()
        }
        SweepAxis::BothGrid => None,
    };

    let items: Vec<MetricItem> = index
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| MetricItem {
            va_in: (e.v, e.a),
            va_pred: None,
            similarity: if i > 0 {
                Some(euclid(&tensors[i - 1], &tensors[i]))
            } else {
                None
            },
            quality: Some(e.residual_norm),
        })
        .collect();

    let mut metadata = BTreeMap::new();
    metadata.insert("sweep_dir".to_string(), r.sweep_dir.clone());
    metadata.insert("backend".to_string(), index.backend.clone());
    metadata.insert("continuity".to_string(), format!("{continuity:.17e}"));
    if let Some(t) = tau {
        metadata.insert("tau_coord_vs_residual".to_string(), format!("{t:.17e}"));
    }
    let report = MetricReport::from_items(items, metadata);
    report.save(&out.join("report.jsonl"))?;
    std::fs::write(out.join("table.txt"), report.render_table())
        .map_err(|e| CliError::runtime(format!("writing table: {e}")))?;
    manifest.save(out)?;
    eprintln!(
        "evaluated {} grid points; continuity {continuity:.6}",
        index.entries.len()
    );
    Ok(())
}

/// Reads the (rows, cols) header of a feature file without loading the body.
fn probe_dims(path: &Path) -> Result<(usize, usize), CliError> {
    use std::io::Read;
    let mut f = std::fs::File::open(path)
        .map_err(|e| CliError::runtime(format!("opening {}: {e}", path.display())))?;
    let mut header = [0u8; 16];
    f.read_exact(&mut header)
        .map_err(|e| CliError::runtime(format!("reading {}: {e}", path.display())))?;
    let rows = u64::from_le_bytes(header[..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(header[8..].try_into().unwrap()) as usize;
    Ok((rows, cols))
}
