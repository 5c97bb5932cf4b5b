//! `train`: dataset in, fitted density + trained checkpoints + metrics out.

use std::path::Path;

use emoembed::dataset::{encode_dataset, load_dataset, split_train_val, ToyHashEncoder};
use emoembed::density::fit_kde;
use emoembed::training::{train, JsonlSink};
use emoembed::va::VAPoint;
use serde::{Deserialize, Serialize};

use super::ensure_dir;
use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::{CliError, TrainArgs};

#[derive(Serialize, Deserialize)]
struct TrainResolved {
    run_config: RunConfig,
    dataset: String,
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(args.config.as_deref(), args.seed)?;
    let resolved = TrainResolved {
        run_config: cfg,
        dataset: args.dataset.display().to_string(),
    };
    let mut manifest = RunManifest::new(
        "train",
        serde_json::to_value(&resolved).expect("resolved args serialize"),
    );
    manifest.record_input("dataset", &args.dataset)?;
    if let Some(c) = &args.config {
        manifest.record_input("config", c)?;
    }
    execute(&resolved, &manifest, &args.out)
}

pub fn rerun_train(manifest: &RunManifest, out: &Path) -> Result<(), CliError> {
    let resolved: TrainResolved = serde_json::from_value(manifest.resolved.clone())
        .map_err(|e| CliError::validation(format!("manifest resolved block: {e}")))?;
    execute(&resolved, manifest, out)
}

fn execute(resolved: &TrainResolved, manifest: &RunManifest, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let cfg = &resolved.run_config;
    let pairs = load_dataset(Path::new(&resolved.dataset))?;
    if pairs.is_empty() {
        return Err(CliError::validation(format!(
            "dataset {} holds no samples",
            resolved.dataset
        )));
    }

    let encoder = ToyHashEncoder {
        tokens: cfg.model.l,
        dim: cfg.model.d_prompt,
    };
    let ids: Vec<Option<String>> = pairs.iter().map(|p| p.source_id.clone()).collect();
    let (encoded, stats) = encode_dataset(&pairs, &encoder, &out.join("cache"))?;
    let (train_set, val_set) = split_train_val(encoded, &ids, cfg.train.seed);
    if train_set.is_empty() {
        return Err(CliError::validation(
            "train split is empty after the 95/5 partition",
        ));
    }

    let vas: Vec<VAPoint> = train_set.iter().map(|s| s.va).collect();
    let density = fit_kde(&vas, cfg.train.loss.min_density)?;
    density.save(&out.join("density.txt"))?;

    let metrics_file = std::fs::File::create(out.join("metrics.jsonl"))
        .map_err(|e| CliError::runtime(format!("creating metrics file: {e}")))?;
    let mut sink = JsonlSink(std::io::BufWriter::new(metrics_file));
    let trainer = train(
        &cfg.train,
        &cfg.model,
        &train_set,
        &val_set,
        &density,
        &mut sink,
        Some(out),
    )?;

    manifest.save(out)?;
    eprintln!(
        "trained {} epochs on {} samples ({} val, {} encoder calls, {} cache hits); \
         final step {}",
        cfg.train.epochs,
        train_set.len(),
        val_set.len(),
        stats.encoder_calls,
        stats.cache_hits,
        trainer.state.step,
    );
    Ok(())
}
