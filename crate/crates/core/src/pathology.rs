//! The fixed set of 14 CheXpert observation labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const NUM_PATHOLOGIES: usize = 14;

/// Observation names in canonical column order.
pub const PATHOLOGY_NAMES: [&str; NUM_PATHOLOGIES] = [
    "No Finding",
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Opacity",
    "Lung Lesion",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
];

/// Index into [`PATHOLOGY_NAMES`]. Serialized as the pathology name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathologyId(u8);

impl PathologyId {
    pub fn new(index: usize) -> Result<Self> {
        if index < NUM_PATHOLOGIES {
            Ok(PathologyId(index as u8))
        } else {
            Err(Error::UnknownPathology(index.to_string()))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        PATHOLOGY_NAMES[self.index()]
    }

    pub fn all() -> impl Iterator<Item = PathologyId> + Clone {
        (0..NUM_PATHOLOGIES as u8).map(PathologyId)
    }
}

impl fmt::Display for PathologyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Accepts the full name (case-insensitive), a bare index (`"2"`) or the
/// short form `P2`.
impl FromStr for PathologyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim();
        if let Some(i) = PATHOLOGY_NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(trimmed))
        {
            return Ok(PathologyId(i as u8));
        }
        let digits = trimmed
            .strip_prefix('P')
            .or_else(|| trimmed.strip_prefix('p'))
            .unwrap_or(trimmed);
        digits
            .parse::<usize>()
            .ok()
            .and_then(|i| PathologyId::new(i).ok())
            .ok_or_else(|| Error::UnknownPathology(trimmed.to_string()))
    }
}

impl Serialize for PathologyId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for PathologyId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
