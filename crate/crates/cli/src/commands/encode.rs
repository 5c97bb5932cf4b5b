//! `encode`: push a dataset's prompts through the encoder once, populating
//! the on-disk feature cache and writing a summary of what was produced.

use std::path::Path;

use emoembed::dataset::{encode_dataset, load_dataset, ToyHashEncoder};
use serde::{Deserialize, Serialize};

use super::ensure_dir;
use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::{CliError, EncodeArgs};

#[derive(Serialize, Deserialize)]
struct EncodeResolved {
    tokens: usize,
    dim: usize,
    dataset: String,
}

pub fn cmd_encode(args: &EncodeArgs) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(args.config.as_deref(), None)?;
    let resolved = EncodeResolved {
        tokens: cfg.model.l,
        dim: cfg.model.d_prompt,
        dataset: args.dataset.display().to_string(),
    };
    let mut manifest = RunManifest::new(
        "encode",
        serde_json::to_value(&resolved).expect("resolved args serialize"),
    );
    manifest.record_input("dataset", &args.dataset)?;
    if let Some(c) = &args.config {
        manifest.record_input("config", c)?;
    }
    execute(&resolved, &manifest, &args.out)
}

pub fn rerun_encode(manifest: &RunManifest, out: &Path) -> Result<(), CliError> {
    let resolved: EncodeResolved = serde_json::from_value(manifest.resolved.clone())
        .map_err(|e| CliError::validation(format!("manifest resolved block: {e}")))?;
    execute(&resolved, manifest, out)
}

#[derive(Serialize)]
struct EncodeSummary {
    encoder: String,
    samples: usize,
    encoder_calls: usize,
    cache_hits: usize,
}

fn execute(r: &EncodeResolved, manifest: &RunManifest, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let pairs = load_dataset(Path::new(&r.dataset))?;
    let encoder = ToyHashEncoder {
        tokens: r.tokens,
        dim: r.dim,
    };
    let (encoded, stats) = encode_dataset(&pairs, &encoder, &out.join("cache"))?;
    let summary = EncodeSummary {
        encoder: format!("toy-hash-v1-{}x{}", r.tokens, r.dim),
        samples: encoded.len(),
        encoder_calls: stats.encoder_calls,
        cache_hits: stats.cache_hits,
    };
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::runtime(format!("serializing summary: {e}")))?;
    std::fs::write(out.join("encode_summary.json"), text)
        .map_err(|e| CliError::runtime(format!("writing summary: {e}")))?;
    manifest.save(out)?;
    eprintln!(
        "encoded {} samples ({} encoder calls, {} cache hits)",
        encoded.len(),
        stats.encoder_calls,
        stats.cache_hits
    );
    Ok(())
}
