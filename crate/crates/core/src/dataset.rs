//! Paired-prompt dataset: schema, JSONL ingestion, the pluggable
//! prompt-encoder port with an on-disk feature cache, and a synthetic
//! generator with a planted ground-truth shift for desk-scale training
//! tests.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::net::{NetError, PromptFeature};
use crate::va::VAPoint;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("validation error at line {line}, field {field}: {msg}")]
    Validation {
        line: usize,
        field: &'static str,
        msg: String,
    },
    #[error("prompt encoder failed on {text:?}: {msg}")]
    EncoderFailure { text: String, msg: String },
    #[error("corrupt feature cache entry {path}: {reason}")]
    CacheCorruption { path: String, reason: String },
}

/// One dataset record: a neutral prompt, its emotional rewrite, and the
/// V-A values the rewrite targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub neutral_prompt: String,
    pub emotional_prompt: String,
    pub va: VAPoint,
    pub source_id: Option<String>,
}

/// Encoded counterpart of a pair: both prompts pushed through the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub f_n: PromptFeature,
    pub f_e: PromptFeature,
    pub va: VAPoint,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    neutral_prompt: String,
    emotional_prompt: String,
    valence: f64,
    arousal: f64,
    #[serde(default)]
    source_id: Option<String>,
}

#[derive(Debug, Serialize)]
struct RawRecordOut<'a> {
    neutral_prompt: &'a str,
    emotional_prompt: &'a str,
    valence: f64,
    arousal: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    source_id: Option<&'a str>,
}

/// Loads a line-delimited JSON dataset, validating every record. Samples
/// come back in file order.
pub fn load_dataset(path: &Path) -> Result<Vec<PairedSample>, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let neutral = raw.neutral_prompt.trim();
        if neutral.is_empty() {
            return Err(DatasetError::Validation {
                line: lineno,
                field: "neutral_prompt",
                msg: "empty after trimming".into(),
            });
        }
        let emotional = raw.emotional_prompt.trim();
        if emotional.is_empty() {
            return Err(DatasetError::Validation {
                line: lineno,
                field: "emotional_prompt",
                msg: "empty after trimming".into(),
            });
        }
        let va = VAPoint::new(raw.valence, raw.arousal).map_err(|e| {
            let field = match &e {
                crate::va::VaError::OutOfRange { axis, .. }
                | crate::va::VaError::NotFinite { axis } => match axis {
                    crate::va::Axis::Valence => "valence",
                    crate::va::Axis::Arousal => "arousal",
                },
                _ => "va",
            };
            DatasetError::Validation {
                line: lineno,
                field,
                msg: e.to_string(),
            }
        })?;
        samples.push(PairedSample {
            neutral_prompt: neutral.to_string(),
            emotional_prompt: emotional.to_string(),
            va,
            source_id: raw.source_id,
        });
    }
    Ok(samples)
}

/// Writes samples back out in the dataset file format.
pub fn save_dataset(samples: &[PairedSample], path: &Path) -> Result<(), DatasetError> {
    let mut out = String::new();
    for s in samples {
        let rec = RawRecordOut {
            neutral_prompt: &s.neutral_prompt,
            emotional_prompt: &s.emotional_prompt,
            valence: s.va.valence(),
            arousal: s.va.arousal(),
            source_id: s.source_id.as_deref(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Abstract prompt encoder. Implementations must be deterministic: the same
/// text always yields the same feature.
pub trait PromptEncoderPort {
    fn encode(&self, text: &str) -> Result<PromptFeature, String>;
    /// (token count, feature dimension) of every produced feature.
    fn dims(&self) -> (usize, usize);
    /// Stable identity string used for cache keying.
    fn identity(&self) -> String;
}

/// Deterministic hash-seeded stand-in for a real text encoder; lets the
/// whole pipeline run with no model downloads.
#[derive(Debug, Clone)]
pub struct ToyHashEncoder {
    pub tokens: usize,
    pub dim: usize,
}

impl PromptEncoderPort for ToyHashEncoder {
    fn encode(&self, text: &str) -> Result<PromptFeature, String> {
        let mut hasher = Sha256::new();
        hasher.update(self.identity().as_bytes());
        hasher.update([0u8]);
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let data = Array2::from_shape_fn((self.tokens, self.dim), |_| {
            let z: f64 = rng.sample(StandardNormal);
            0.5 * z
        });
        PromptFeature::new(data).map_err(|e| e.to_string())
    }

    fn dims(&self) -> (usize, usize) {
        (self.tokens, self.dim)
    }

    fn identity(&self) -> String {
        format!("toy-hash-v1-{}x{}", self.tokens, self.dim)
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct CacheStats {
    pub encoder_calls: usize,
    pub cache_hits: usize,
}

/// Encodes every sample, computing each distinct (encoder, text) feature at
/// most once and persisting it under `cache_dir`.
pub fn encode_dataset(
    samples: &[PairedSample],
    encoder: &dyn PromptEncoderPort,
    cache_dir: &Path,
) -> Result<(Vec<EncodedSample>, CacheStats), DatasetError> {
    let mut stats = CacheStats::default();
    let mut run_cache: std::collections::HashMap<String, PromptFeature> =
        std::collections::HashMap::new();
    let mut encoded = Vec::with_capacity(samples.len());
    for s in samples {
        let f_n = cached_encode(&s.neutral_prompt, encoder, cache_dir, &mut run_cache, &mut stats)?;
        let f_e = cached_encode(
            &s.emotional_prompt,
            encoder,
            cache_dir,
            &mut run_cache,
            &mut stats,
        )?;
        encoded.push(EncodedSample {
            f_n,
            f_e,
            va: s.va,
        });
    }
    Ok((encoded, stats))
}

fn cache_path(cache_dir: &Path, encoder_id: &str, text: &str) -> PathBuf {
    let digest = Sha256::digest(text.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    cache_dir.join(encoder_id).join(format!("{hex}.feat"))
}

fn cached_encode(
    text: &str,
    encoder: &dyn PromptEncoderPort,
    cache_dir: &Path,
    run_cache: &mut std::collections::HashMap<String, PromptFeature>,
    stats: &mut CacheStats,
) -> Result<PromptFeature, DatasetError> {
    if let Some(f) = run_cache.get(text) {
        stats.cache_hits += 1;
        return Ok(f.clone());
    }
    let path = cache_path(cache_dir, &encoder.identity(), text);
    if path.exists() {
        let f = read_feature(&path, encoder.dims())?;
        stats.cache_hits += 1;
        run_cache.insert(text.to_string(), f.clone());
        return Ok(f);
    }
    let f = encoder
        .encode(text)
        .map_err(|msg| DatasetError::EncoderFailure {
            text: text.to_string(),
            msg,
        })?;
    stats.encoder_calls += 1;
    write_feature(&path, &f)?;
    run_cache.insert(text.to_string(), f.clone());
    Ok(f)
}

/// Writes one feature tensor in the binary cache format (atomic rename).
pub fn write_feature(path: &Path, f: &PromptFeature) -> Result<(), DatasetError> {
    let io_err = |source: std::io::Error| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err)?;
    }
    let mut buf = Vec::with_capacity(16 + f.data().len() * 8);
    buf.extend_from_slice(&(f.tokens() as u64).to_le_bytes());
    buf.extend_from_slice(&(f.dim() as u64).to_le_bytes());
    for v in f.data().iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    // Concurrent writers of the same key race benignly: rename is atomic and
    // both write identical bytes.
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    std::fs::write(&tmp, &buf).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)
}

/// Reads one feature tensor, checking it has the expected dimensions.
pub fn read_feature(path: &Path, expected_dims: (usize, usize)) -> Result<PromptFeature, DatasetError> {
    let corrupt = |reason: String| DatasetError::CacheCorruption {
        path: path.display().to_string(),
        reason,
    };
    let buf = std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if buf.len() < 16 {
        return Err(corrupt("truncated header".into()));
    }
    let rows = u64::from_le_bytes(buf[0..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    if (rows, cols) != expected_dims {
        return Err(corrupt(format!(
            "shape {rows}x{cols} does not match encoder dims {}x{}",
            expected_dims.0, expected_dims.1
        )));
    }
    let expected_len = 16 + rows * cols * 8;
    if buf.len() != expected_len {
        return Err(corrupt(format!(
            "expected {expected_len} bytes, found {}",
            buf.len()
        )));
    }
    let values: Vec<f64> = buf[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let data = Array2::from_shape_vec((rows, cols), values).expect("shape checked");
    PromptFeature::new(data).map_err(|e: NetError| corrupt(e.to_string()))
}

/// Seeded 95/5 train/validation split keyed by a hash of the source id (or
/// the sample index when absent).
pub fn split_train_val(
    samples: Vec<EncodedSample>,
    ids: &[Option<String>],
    seed: u64,
) -> (Vec<EncodedSample>, Vec<EncodedSample>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (idx, sample) in samples.into_iter().enumerate() {
        let key = match ids.get(idx).and_then(|i| i.as_deref()) {
            Some(id) => id.to_string(),
            None => format!("index:{idx}"),
        };
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(key.as_bytes());
        let digest = hasher.finalize();
        let bucket = u64::from_le_bytes(digest[..8].try_into().unwrap()) % 20;
        if bucket == 0 {
            val.push(sample);
        } else {
            train.push(sample);
        }
    }
    (train, val)
}

/// The known ground-truth emotion shift of the synthetic dataset:
/// G(v, a) = v*B_v + a*B_a + v*a*B_va with fixed seeded basis matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedMapping {
    pub b_v: Array2<f64>,
    pub b_a: Array2<f64>,
    pub b_va: Array2<f64>,
}

impl PlantedMapping {
    pub fn shift(&self, va: &VAPoint) -> Array2<f64> {
        let (v, a) = (va.valence(), va.arousal());
        &self.b_v * v + &self.b_a * a + &self.b_va * (v * a)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub samples: Vec<EncodedSample>,
    pub planted: PlantedMapping,
}

/// Default dense-mode probability of the V-A mixture.
pub const DEFAULT_DENSE_PROB: f64 = 0.9;

/// Generates a reproducible toy dataset: random neutral features, emotional
/// features displaced by the planted mapping, and V-A values drawn from a
/// two-mode mixture (dense around (1, 1), sparse around (-2, -2)) so that
/// density weighting has something to push against.
pub fn synth_toy_dataset(seed: u64, count: usize, l: usize, d_prompt: usize) -> SyntheticDataset {
    synth_toy_dataset_with_mix(seed, count, l, d_prompt, DEFAULT_DENSE_PROB)
}

pub fn synth_toy_dataset_with_mix(
    seed: u64,
    count: usize,
    l: usize,
    d_prompt: usize,
    dense_prob: f64,
) -> SyntheticDataset {
    assert!(count >= 1, "count must be >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis = || {
        Array2::from_shape_fn((l, d_prompt), |_| {
            let z: f64 = rng.sample(StandardNormal);
            0.1 * z
        })
    };
    let planted = PlantedMapping {
        b_v: basis(),
        b_a: basis(),
        b_va: basis(),
    };
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let (center, std) = if rng.gen::<f64>() < dense_prob {
            ((1.0, 1.0), 0.4)
        } else {
            ((-2.0, -2.0), 0.4)
        };
        let va = loop {
            let v = center.0 + std * rng.sample::<f64, _>(StandardNormal);
            let a = center.1 + std * rng.sample::<f64, _>(StandardNormal);
            if let Ok(p) = VAPoint::new(v, a) {
                break p;
            }
        };
        let f_n = Array2::from_shape_fn((l, d_prompt), |_| {
            let z: f64 = rng.sample(StandardNormal);
            0.5 * z
        });
        let f_e = &f_n + &planted.shift(&va);
        samples.push(EncodedSample {
            f_n: PromptFeature::new(f_n).expect("finite"),
            f_e: PromptFeature::new(f_e).expect("finite"),
            va,
        });
    }
    SyntheticDataset { samples, planted }
}
