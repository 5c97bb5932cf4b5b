//! The diffusion-backend port. The real generator is an external system; the
//! shipped null backend renders a small diagnostic image per grid point (V-A
//! position marker over residual-norm shading) so the sweep and evaluation
//! plumbing can run end to end with no network access or model weights.

use std::path::{Path, PathBuf};

use emoembed::net::PromptFeature;
use image::{ImageBuffer, Rgb};

use crate::CliError;

/// One generation request: the conditioning tensor plus the context the
/// diagnostic rendering needs.
pub struct GenerationRequest<'a> {
    pub conditioning: &'a PromptFeature,
    pub va: (f64, f64),
    pub residual_norm: f64,
    pub seed: u64,
}

pub trait DiffusionBackendPort {
    fn identity(&self) -> String;
    /// (tokens, dim) the backend expects for conditioning input.
    fn conditioning_dims(&self) -> (usize, usize);
    /// Produces the image for one request. Must be deterministic given
    /// (conditioning, seed).
    fn generate(&self, req: &GenerationRequest, out_png: &Path) -> Result<PathBuf, CliError>;
}

const IMG_SIZE: u32 = 64;

pub struct NullBackend {
    pub tokens: usize,
    pub dim: usize,
}

impl DiffusionBackendPort for NullBackend {
    fn identity(&self) -> String {
        format!("null-diagnostic-v1-{}x{}", self.tokens, self.dim)
    }

    fn conditioning_dims(&self) -> (usize, usize) {
        (self.tokens, self.dim)
    }

    fn generate(&self, req: &GenerationRequest, out_png: &Path) -> Result<PathBuf, CliError> {
        // Background shade encodes the residual norm (saturating map into
        // [0, 255]); a crosshair marks the (v, a) position in [-3, 3]^2.
        let shade = (255.0 * (1.0 - (-req.residual_norm).exp())) as u8;
        let to_px = |x: f64| {
            let unit = ((x + 3.0) / 6.0).clamp(0.0, 1.0);
            (unit * f64::from(IMG_SIZE - 1)).round() as u32
        };
        let cx = to_px(req.va.0);
        // Image rows grow downward; arousal grows upward.
        let cy = IMG_SIZE - 1 - to_px(req.va.1);
        let img = ImageBuffer::from_fn(IMG_SIZE, IMG_SIZE, |x, y| {
            let on_marker = (x == cx && y.abs_diff(cy) <= 3) || (y == cy && x.abs_diff(cx) <= 3);
            if on_marker {
                Rgb([255, 64, 64])
            } else {
                Rgb([shade, shade, shade])
            }
        });
        img.save(out_png)
            .map_err(|e| CliError::runtime(format!("writing {}: {e}", out_png.display())))?;
        Ok(out_png.to_path_buf())
    }
}

pub fn make_backend(name: &str, tokens: usize, dim: usize) -> Result<Box<dyn DiffusionBackendPort>, CliError> {
    match name {
        "null" => Ok(Box::new(NullBackend { tokens, dim })),
        "external" => Err(CliError::runtime(
            "no external diffusion backend is configured in this build",
        )),
        other => Err(CliError::validation(format!(
            "unknown backend {other:?} (expected \"null\" or \"external\")"
        ))),
    }
}
