use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::ImageRecord;
use crate::error::{Error, Result};

/// Deterministic `(train, eval)` split. Records are sorted by id before the
/// seeded shuffle, so the result does not depend on input order.
pub fn split_dataset(
    mut records: Vec<ImageRecord>,
    fractions: (f64, f64),
    seed: u64,
) -> Result<(Vec<ImageRecord>, Vec<ImageRecord>)> {
    if records.is_empty() {
        return Err(Error::Empty("cannot split an empty dataset".into()));
    }
    let (train_frac, eval_frac) = fractions;
    if train_frac < 0.0 || eval_frac < 0.0 || ((train_frac + eval_frac) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {fractions:?} must be non-negative and sum to 1")));
    }
    records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records.shuffle(&mut rng);
    let n_train = ((records.len() as f64) * train_frac).round() as usize;
    let eval = records.split_off(n_train.min(records.len()));
    Ok((records, eval))
}

/// Stable identifier for a set of image ids (order-insensitive).
pub fn split_id(records: &[ImageRecord]) -> String {
    let mut ids: Vec<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
    ids.sort_unstable();
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())[..16].to_string()
}
