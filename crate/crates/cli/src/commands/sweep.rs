//! `sweep`: encode the prompt once, run the network across a (v, a) grid,
//! and hand each conditioning tensor to the backend. Outputs are row-major
//! over the grid with an index file mapping coordinates to filenames.

use std::path::Path;

use emoembed::dataset::{write_feature, PromptEncoderPort, ToyHashEncoder};
use emoembed::eval::{SweepAxis, SweepSpec};
use emoembed::net::checkpoint::load_checkpoint;
use emoembed::net::eit_forward;
use emoembed::va::{PresetTable, VAPoint};
use serde::{Deserialize, Serialize};

use super::ensure_dir;
use crate::backend::{make_backend, GenerationRequest};
use crate::manifest::RunManifest;
use crate::{CliError, SweepArgs};

pub const INDEX_FILE: &str = "index.json";

#[derive(Serialize, Deserialize)]
struct SweepResolved {
    checkpoint: String,
    prompt: String,
    axis: SweepAxis,
    start: f64,
    stop: f64,
    step: f64,
    fixed: f64,
    backend: String,
    seed: u64,
}

/// One grid point of the index, in row-major emission order.
#[derive(Serialize, Deserialize)]
pub struct IndexEntry {
    pub row: usize,
    pub col: usize,
    pub v: f64,
    pub a: f64,
    pub tensor: String,
    pub image: String,
    pub residual_norm: f64,
}

#[derive(Serialize, Deserialize)]
pub struct SweepIndex {
    pub prompt: String,
    pub axis: SweepAxis,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    pub fixed: f64,
    pub seed: u64,
    pub backend: String,
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<IndexEntry>,
}

fn parse_axis(name: &str) -> Result<SweepAxis, CliError> {
    match name {
        "valence" => Ok(SweepAxis::Valence),
        "arousal" => Ok(SweepAxis::Arousal),
        "both-grid" => Ok(SweepAxis::BothGrid),
        other => Err(CliError::validation(format!(
            "unknown axis {other:?} (expected valence, arousal, or both-grid)"
        ))),
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let axis = parse_axis(&args.axis)?;
    let fixed = match &args.emotion {
        Some(name) => {
            let table = match &args.presets {
                Some(p) => PresetTable::load(p)?,
                None => PresetTable::shipped(),
            };
            let point = table.get(name)?;
            // The preset supplies the coordinate on the axis we are NOT
            // sweeping; for a grid sweep there is nothing to hold fixed.
            match axis {
                SweepAxis::Valence => point.arousal(),
                SweepAxis::Arousal => point.valence(),
                SweepAxis::BothGrid => {
                    return Err(CliError::validation(
                        "--emotion has no effect on a both-grid sweep",
                    ))
                }
            }
        }
        None => args.fixed,
    };
    let resolved = SweepResolved {
        checkpoint: args.checkpoint.display().to_string(),
        prompt: args.prompt.clone(),
        axis,
        start: args.start,
        stop: args.stop,
        step: args.step,
        fixed,
        backend: args.backend.clone(),
        seed: args.seed,
    };
    let mut manifest = RunManifest::new(
        "sweep",
        serde_json::to_value(&resolved).expect("resolved args serialize"),
    );
    manifest.record_input("checkpoint", &args.checkpoint)?;
    if let Some(p) = &args.presets {
        manifest.record_input("presets", p)?;
    }
    execute(&resolved, &manifest, &args.out)
}

pub fn rerun_sweep(manifest: &RunManifest, out: &Path) -> Result<(), CliError> {
    let resolved: SweepResolved = serde_json::from_value(manifest.resolved.clone())
        .map_err(|e| CliError::validation(format!("manifest resolved block: {e}")))?;
    execute(&resolved, manifest, out)
}

fn execute(r: &SweepResolved, manifest: &RunManifest, out: &Path) -> Result<(), CliError> {
    let spec = SweepSpec {
        prompt: r.prompt.clone(),
        axis: r.axis,
        start: r.start,
        stop: r.stop,
        step: r.step,
    };
    spec.validate()?;
    if matches!(r.axis, SweepAxis::Valence | SweepAxis::Arousal) {
        // The fixed coordinate must itself be a legal V-A value.
        VAPoint::new(r.fixed, r.fixed).map_err(|e| CliError::validation(e.to_string()))?;
    }
    ensure_dir(out)?;

    let params = load_checkpoint(Path::new(&r.checkpoint))?;
    let cfg = &params.config;
    let encoder = ToyHashEncoder {
        tokens: cfg.l,
        dim: cfg.d_prompt,
    };
    let f_n = encoder
        .encode(&r.prompt)
        .map_err(|e| CliError::runtime(format!("encoding prompt: {e}")))?;
    let backend = make_backend(&r.backend, cfg.l, cfg.d_prompt)?;

    let grid = spec.grid(r.fixed);
    let cols = spec.axis_points().len();
    let rows = grid.len() / cols;
    let mut entries = Vec::with_capacity(grid.len());
    for (i, &(v, a)) in grid.iter().enumerate() {
        let p = VAPoint::new(v, a)?;
        let f_hat = eit_forward(&params, &f_n, &p)?;
        let residual_norm = f_hat
            .data()
            .iter()
            .zip(f_n.data().iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let (row, col) = (i / cols, i % cols);
        let tensor = format!("point_{row:03}_{col:03}.feat");
        let image = format!("point_{row:03}_{col:03}.png");
        write_feature(&out.join(&tensor), &f_hat)?;
        backend.generate(
            &GenerationRequest {
                conditioning: &f_hat,
                va: (v, a),
                residual_norm,
                seed: r.seed,
            },
            &out.join(&image),
        )?;
        entries.push(IndexEntry {
            row,
            col,
            v,
            a,
            tensor,
            image,
            residual_norm,
        });
    }

    let index = SweepIndex {
        prompt: r.prompt.clone(),
        axis: r.axis,
        start: r.start,
        stop: r.stop,
        step: r.step,
        fixed: r.fixed,
        seed: r.seed,
        backend: backend.identity(),
        rows,
        cols,
        entries,
    };
    let text = serde_json::to_string_pretty(&index)
        .map_err(|e| CliError::runtime(format!("serializing index: {e}")))?;
    std::fs::write(out.join(INDEX_FILE), text)
        .map_err(|e| CliError::runtime(format!("writing index: {e}")))?;
    manifest.save(out)?;
    eprintln!("swept {} grid points ({rows}x{cols})", grid.len());
    Ok(())
}
