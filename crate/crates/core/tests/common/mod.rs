#![allow(dead_code)]

use fsl_core::eval::{Cell, InferenceRecord, Outcome};
use fsl_core::ingest::{ImageRecord, Label, PixelTensor};
use fsl_core::model::{build_classifier, BackboneConfig, ClassifierHead, ClassifierModel, ConvBackbone};
use fsl_core::ingest::PreprocessConfig;
use fsl_core::{PathologyId, NUM_PATHOLOGIES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn p(i: usize) -> PathologyId {
    PathologyId::new(i).unwrap()
}

pub fn noise_image(seed: u64, size: usize) -> PixelTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PixelTensor::new(size, size, (0..3 * size * size).map(|_| rng.random::<f32>()).collect()).unwrap()
}

pub fn record(id: &str, seed: u64, size: usize) -> ImageRecord {
    ImageRecord::new(id.to_string(), id.to_string(), vec![Label::Negative; NUM_PATHOLOGIES], noise_image(seed, size)).unwrap()
}

pub fn small_classifier(seed: u64, size: u32) -> ClassifierModel {
    let bb = ConvBackbone::new(BackboneConfig::default(), seed).unwrap();
    let head = ClassifierHead::new(bb.feature_dim(), seed + 1);
    build_classifier(bb, head, PreprocessConfig::identity(size)).unwrap()
}

/// Inference records for pathology `p` with the given cell per image id.
pub fn records_with_cells(p: PathologyId, cells: &[(String, Cell)]) -> Vec<InferenceRecord> {
    cells
        .iter()
        .map(|(id, c)| InferenceRecord {
            image_id: id.clone(),
            pathology: p,
            probability: if c.decision() == Outcome::Positive { 0.9 } else { 0.1 },
            decision: c.decision(),
            truth: c.truth(),
            cell: *c,
        })
        .collect()
}

pub const CELLS: [Cell; 4] = [Cell::TP, Cell::FP, Cell::TN, Cell::FN];
