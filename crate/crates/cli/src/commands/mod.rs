//! Subcommand implementations. Each command resolves its arguments into a
//! serializable blob, does the work, and writes a manifest; `rerun` replays
//! any command from that blob.

pub mod encode;
pub mod eval;
pub mod sweep;
pub mod train;

use std::path::Path;

use crate::manifest::RunManifest;
use crate::{CliError, RerunArgs};

pub fn rerun(args: &RerunArgs) -> Result<(), CliError> {
    let manifest = RunManifest::load(&args.manifest)?;
    manifest.verify_inputs()?;
    match manifest.command.as_str() {
        "train" => train::rerun_train(&manifest, &args.out),
        "sweep" => sweep::rerun_sweep(&manifest, &args.out),
        "eval" => eval::rerun_eval(&manifest, &args.out),
        "encode" => encode::rerun_encode(&manifest, &args.out),
        other => Err(CliError::validation(format!(
            "manifest records unknown command {other:?}"
        ))),
    }
}

pub(crate) fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::runtime(format!("creating {}: {e}", path.display())))
}
