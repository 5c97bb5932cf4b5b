//! Valence-Arousal domain types and the discrete-emotion preset table.
//!
//! Both axes live in `[-3, 3]`. Valence runs from unpleasant to pleasant,
//! arousal from calm to excited. Out-of-range inputs are rejected, never
//! clamped: silent saturation hides caller bugs in sweep generation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Inclusive bound of both axes.
pub const VA_RANGE: f64 = 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum VaError {
    #[error("{axis} value {value} is outside [-3, 3]")]
    OutOfRange { axis: Axis, value: f64 },
    #[error("{axis} value is not finite")]
    NotFinite { axis: Axis },
    #[error("unknown emotion {name:?}; available: {available}")]
    UnknownEmotion { name: String, available: String },
    #[error("preset table {path}: {reason}")]
    BadPresetTable { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    Valence,
    Arousal,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axis::Valence => write!(f, "valence"),
            Axis::Arousal => write!(f, "arousal"),
        }
    }
}

/// A point in the Valence-Arousal plane, guaranteed finite and in range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VAPoint {
    valence: f64,
    arousal: f64,
}

impl VAPoint {
    /// Validates and constructs; values pass through unmodified (no clamping).
    pub fn new(valence: f64, arousal: f64) -> Result<Self, VaError> {
        check_axis(Axis::Valence, valence)?;
        check_axis(Axis::Arousal, arousal)?;
        Ok(Self { valence, arousal })
    }

    pub fn valence(&self) -> f64 {
        self.valence
    }

    pub fn arousal(&self) -> f64 {
        self.arousal
    }
}

fn check_axis(axis: Axis, value: f64) -> Result<(), VaError> {
    if !value.is_finite() {
        return Err(VaError::NotFinite { axis });
    }
    if !(-VA_RANGE..=VA_RANGE).contains(&value) {
        return Err(VaError::OutOfRange { axis, value });
    }
    Ok(())
}

/// Range-checks a (valence, arousal) pair. Identity on the accepted domain.
pub fn validate_va(valence: f64, arousal: f64) -> Result<VAPoint, VaError> {
    VAPoint::new(valence, arousal)
}

/// A named discrete emotion anchored at a fixed V-A coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionPreset {
    pub name: String,
    pub point: VAPoint,
}

/// Table of discrete-emotion presets, keyed by lowercase name.
///
/// The circumplex model places each emotion in a quadrant of the V-A plane;
/// numeric coordinates are a project convention (magnitude 2.0 on each
/// relevant axis), not measured values. The table is data, not code, and a
/// user-supplied file can replace it wholesale.
#[derive(Debug, Clone)]
pub struct PresetTable {
    presets: BTreeMap<String, VAPoint>,
}

/// Shipped defaults, one per circumplex quadrant plus the neutral center:
/// anger (-V, +A), fear (-V, +A), sadness (-V, -A), boredom (-V, -A),
/// relaxation (+V, -A), contentment (+V, -A), amusement (+V, +A),
/// excitement (+V, +A), neutral (0, 0).
const DEFAULT_PRESETS: &[(&str, f64, f64)] = &[
    ("anger", -2.0, 2.0),
    ("fear", -2.0, 2.0),
    ("sadness", -2.0, -2.0),
    ("boredom", -2.0, -2.0),
    ("relaxation", 2.0, -2.0),
    ("contentment", 2.0, -2.0),
    ("amusement", 2.0, 2.0),
    ("excitement", 2.0, 2.0),
    ("neutral", 0.0, 0.0),
];

impl PresetTable {
    pub fn shipped() -> Self {
        let presets = DEFAULT_PRESETS
            .iter()
            .map(|&(name, v, a)| {
                (
                    name.to_string(),
                    VAPoint::new(v, a).expect("shipped preset in range"),
                )
            })
            .collect();
        Self { presets }
    }

    /// Loads a table from a plain-text key-value file: one `name = v, a` per
    /// line, `#` comments and blank lines skipped.
    pub fn load(path: &Path) -> Result<Self, VaError> {
        let text = std::fs::read_to_string(path).map_err(|e| VaError::BadPresetTable {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text).map_err(|reason| VaError::BadPresetTable {
            path: path.display().to_string(),
            reason,
        })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut presets = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, rest) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `name = v, a`", lineno + 1))?;
            let name = name.trim().to_lowercase();
            let coords: Vec<&str> = rest.split(',').map(str::trim).collect();
            if coords.len() != 2 {
                return Err(format!("line {}: expected two coordinates", lineno + 1));
            }
            let v: f64 = coords[0]
                .parse()
                .map_err(|_| format!("line {}: bad valence {:?}", lineno + 1, coords[0]))?;
            let a: f64 = coords[1]
                .parse()
                .map_err(|_| format!("line {}: bad arousal {:?}", lineno + 1, coords[1]))?;
            let point = VAPoint::new(v, a)
                .map_err(|e| format!("line {}: {}", lineno + 1, e))?;
            if presets.insert(name.clone(), point).is_some() {
                return Err(format!("line {}: duplicate preset {:?}", lineno + 1, name));
            }
        }
        if presets.is_empty() {
            return Err("no presets defined".to_string());
        }
        Ok(Self { presets })
    }

    pub fn get(&self, name: &str) -> Result<VAPoint, VaError> {
        let key = name.to_lowercase();
        self.presets
            .get(&key)
            .copied()
            .ok_or_else(|| VaError::UnknownEmotion {
                name: name.to_string(),
                available: self
                    .presets
                    .keys()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(", "),
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = EmotionPreset> + '_ {
        self.presets.iter().map(|(name, &point)| EmotionPreset {
            name: name.clone(),
            point,
        })
    }
}

/// Looks up a discrete emotion in the shipped preset table.
pub fn preset_emotion(name: &str) -> Result<VAPoint, VaError> {
    PresetTable::shipped().get(name)
}
