//! The ten scored affect axes and their legal ranges.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A score map keyed by dimension. Iteration follows canonical dimension order.
pub type Scores = BTreeMap<Dimension, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DimensionKind {
    Emotion,
    Valence,
    Arousal,
}

/// One scored axis. Declaration order is the canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dimension {
    Anger,
    Anxiety,
    Fear,
    Sadness,
    Disgust,
    Optimism,
    Excitement,
    Surprise,
    Valence,
    Arousal,
}

impl Dimension {
    pub const ALL: [Dimension; 10] = [
        Dimension::Anger,
        Dimension::Anxiety,
        Dimension::Fear,
        Dimension::Sadness,
        Dimension::Disgust,
        Dimension::Optimism,
        Dimension::Excitement,
        Dimension::Surprise,
        Dimension::Valence,
        Dimension::Arousal,
    ];

    pub const EMOTIONS: [Dimension; 8] = [
        Dimension::Anger,
        Dimension::Anxiety,
        Dimension::Fear,
        Dimension::Sadness,
        Dimension::Disgust,
        Dimension::Optimism,
        Dimension::Excitement,
        Dimension::Surprise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Anger => "Anger",
            Dimension::Anxiety => "Anxiety",
            Dimension::Fear => "Fear",
            Dimension::Sadness => "Sadness",
            Dimension::Disgust => "Disgust",
            Dimension::Optimism => "Optimism",
            Dimension::Excitement => "Excitement",
            Dimension::Surprise => "Surprise",
            Dimension::Valence => "Valence",
            Dimension::Arousal => "Arousal",
        }
    }

    pub fn kind(self) -> DimensionKind {
        match self {
            Dimension::Valence => DimensionKind::Valence,
            Dimension::Arousal => DimensionKind::Arousal,
            _ => DimensionKind::Emotion,
        }
    }

    pub fn is_emotion(self) -> bool {
        self.kind() == DimensionKind::Emotion
    }

    /// Position in [`Dimension::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// Closed legal interval `(low, high)`.
    pub fn range(self) -> (f64, f64) {
        match self {
            Dimension::Valence => (-100.0, 100.0),
            _ => (0.0, 100.0),
        }
    }

    pub fn contains(self, value: f64) -> bool {
        let (lo, hi) = self.range();
        value >= lo && value <= hi
    }

    /// Clamp into range; the flag is true when the value moved.
    pub fn clamp(self, value: f64) -> (f64, bool) {
        let (lo, hi) = self.range();
        if value < lo {
            (lo, true)
        } else if value > hi {
            (hi, true)
        } else {
            (value, false)
        }
    }

    /// Case-insensitive lookup of a canonical name. Surrounding whitespace is ignored.
    pub fn from_name(name: &str) -> Option<Dimension> {
        let name = name.trim();
        Dimension::ALL
            .iter()
            .copied()
            .find(|d| d.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown dimension name `{0}`")]
pub struct UnknownDimension(pub String);

impl FromStr for Dimension {
    type Err = UnknownDimension;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::from_name(s).ok_or_else(|| UnknownDimension(s.to_string()))
    }
}

impl Serialize for Dimension {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Dimension {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parse a comma-separated dimension list, e.g. `"Anger,fear,Valence"`.
/// The keywords `all` and `emotions` expand to the canonical sets.
pub fn parse_dimension_list(list: &str) -> Result<Vec<Dimension>, UnknownDimension> {
    let mut out: Vec<Dimension> = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let expanded: Vec<Dimension> = match part.to_ascii_lowercase().as_str() {
            "all" => Dimension::ALL.to_vec(),
            "emotions" => Dimension::EMOTIONS.to_vec(),
            _ => vec![part.parse()?],
        };
        for d in expanded {
            if !out.contains(&d) {
                out.push(d);
            }
        }
    }
    Ok(out)
}

/// Render a score as a plain decimal: shortest round-trip form, never exponent notation.
pub fn format_score(value: f64) -> String {
    // Display for f64 never emits an exponent; normalise -0 so output is canonical.
    if value == 0.0 {
        "0".to_string()
    } else {
        format!("{value}")
    }
}
