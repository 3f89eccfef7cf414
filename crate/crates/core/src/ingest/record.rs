use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pathology::{PathologyId, NUM_PATHOLOGIES};

/// Ternary ground truth as found in the manifest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
    Uncertain,
}

impl Label {
    /// Binary truth. Records produced by the loaders never carry `Uncertain`
    /// (the policy has already been applied); if one does, it counts as negative.
    pub fn is_positive(self) -> bool {
        matches!(self, Label::Positive)
    }
}

/// A 3-channel image in CHW layout, values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl PixelTensor {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != Self::CHANNELS * height * width {
            return Err(Error::DimensionMismatch(format!(
                "pixel buffer has {} values, expected 3x{height}x{width}",
                data.len()
            )));
        }
        Ok(PixelTensor { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        PixelTensor { height, width, data: vec![0.0; Self::CHANNELS * height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, channel: usize, y: usize, x: usize) -> f32 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Raw little-endian bytes, used for hashing and determinism checks.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    /// File path or synthetic spec reference.
    pub source: String,
    /// One entry per pathology, in canonical order.
    pub labels: Vec<Label>,
    pub pixels: PixelTensor,
}

impl ImageRecord {
    pub fn new(image_id: String, source: String, labels: Vec<Label>, pixels: PixelTensor) -> Result<Self> {
        if labels.len() != NUM_PATHOLOGIES {
            return Err(Error::DimensionMismatch(format!(
                "record `{image_id}` has {} labels, expected {NUM_PATHOLOGIES}",
                labels.len()
            )));
        }
        Ok(ImageRecord { image_id, source, labels, pixels })
    }

    pub fn truth(&self, pathology: PathologyId) -> bool {
        self.labels[pathology.index()].is_positive()
    }
}

/// Records indexed by image id.
#[derive(Clone, Debug, Default)]
pub struct ImageStore {
    records: Vec<ImageRecord>,
    by_id: HashMap<String, usize>,
}

impl ImageStore {
    pub fn new(records: Vec<ImageRecord>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if by_id.insert(r.image_id.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate image id `{}`", r.image_id)));
            }
        }
        Ok(ImageStore { records, by_id })
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.by_id.get(image_id).map(|&i| &self.records[i])
    }

    pub fn pixels(&self, image_id: &str) -> Result<&PixelTensor> {
        self.get(image_id)
            .map(|r| &r.pixels)
            .ok_or_else(|| Error::UnknownImage(image_id.to_string()))
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
