//! Image triplets: (failed inference, TP reference, TN reference) plus the
//! checking label that tells the ranking loss which reference the anchor
//! belongs with.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{read_jsonl, write_jsonl, Cell, CellSets, ConfusionPartition};
use crate::pathology::PathologyId;

/// Training-set sizes that were swept.
pub const TRIPLET_SWEEP: [usize; 3] = [50, 100, 150];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageTriplet {
    pub anchor_id: String,
    pub tp_id: String,
    pub tn_id: String,
    pub pathology: PathologyId,
    /// −1 for a false-negative anchor, +1 for a false-positive anchor.
    pub checking_label: i8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripletSet {
    Train,
    Val,
}

/// One line of the triplet JSON-lines file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletRow {
    #[serde(flatten)]
    pub triplet: ImageTriplet,
    pub set: TripletSet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletDatasetConfig {
    pub n_train: usize,
    pub seed: u64,
}

impl Default for TripletDatasetConfig {
    fn default() -> Self {
        TripletDatasetConfig { n_train: 150, seed: 0 }
    }
}

pub fn checking_label_for(cell: Cell) -> Result<i8> {
    match cell {
        Cell::FN => Ok(-1),
        Cell::FP => Ok(1),
        other => Err(Error::InvalidArgument(format!("{other:?} is not a failed inference and cannot anchor a triplet"))),
    }
}

fn rng_for(seed: u64, pathology: PathologyId, set: TripletSet) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * pathology.index() as u64 + matches!(set, TripletSet::Val) as u64);
    rng
}

fn reference_pools(sets: &CellSets, pathology: PathologyId) -> Result<(Vec<&String>, Vec<&String>)> {
    let tp: Vec<&String> = sets.tp.iter().collect();
    let tn: Vec<&String> = sets.tn.iter().collect();
    if tp.is_empty() {
        return Err(Error::UnsatisfiableTriplet { pathology, pool: "TP" });
    }
    if tn.is_empty() {
        return Err(Error::UnsatisfiableTriplet { pathology, pool: "TN" });
    }
    Ok((tp, tn))
}

fn make_triplets<R: Rng>(
    anchors: &[String],
    sets: &CellSets,
    pathology: PathologyId,
    rng: &mut R,
) -> Result<Vec<ImageTriplet>> {
    let (tp, tn) = reference_pools(sets, pathology)?;
    anchors
        .iter()
        .map(|a| {
            let cell = sets
                .cell_of(a)
                .ok_or_else(|| Error::NotAFailure { image_id: a.clone(), pathology })?;
            let checking_label = checking_label_for(cell)
                .map_err(|_| Error::NotAFailure { image_id: a.clone(), pathology })?;
            Ok(ImageTriplet {
                anchor_id: a.clone(),
                tp_id: tp[rng.random_range(0..tp.len())].clone(),
                tn_id: tn[rng.random_range(0..tn.len())].clone(),
                pathology,
                checking_label,
            })
        })
        .collect()
}

/// Sample `min(n_train, |FP ∪ FN|)` anchors without replacement; TP/TN
/// references are drawn uniformly with replacement for each triplet.
pub fn build_training_triplets(
    partition: &ConfusionPartition,
    pathology: PathologyId,
    cfg: &TripletDatasetConfig,
) -> Result<Vec<ImageTriplet>> {
    if cfg.n_train == 0 {
        return Err(Error::Config("n_train must be at least 1".into()));
    }
    let sets = partition.pathology(pathology);
    let mut failed: Vec<String> = sets.failed().into_iter().collect();
    if failed.is_empty() {
        return Err(Error::Empty(format!("no failed inferences for {pathology}")));
    }
    reference_pools(sets, pathology)?;
    let mut rng = rng_for(cfg.seed, pathology, TripletSet::Train);
    failed.shuffle(&mut rng);
    failed.truncate(cfg.n_train);
    make_triplets(&failed, sets, pathology, &mut rng)
}

/// One triplet for every failed inference not used for training.
pub fn build_validation_triplets(
    partition: &ConfusionPartition,
    pathology: PathologyId,
    training_anchor_ids: &BTreeSet<String>,
    cfg: &TripletDatasetConfig,
) -> Result<Vec<ImageTriplet>> {
    let sets = partition.pathology(pathology);
    let failed = sets.failed();
    if failed.is_empty() {
        return Err(Error::Empty(format!("no failed inferences for {pathology}")));
    }
    let remaining: Vec<String> = failed.difference(training_anchor_ids).cloned().collect();
    if remaining.is_empty() {
        return Ok(Vec::new());
    }
    let mut rng = rng_for(cfg.seed, pathology, TripletSet::Val);
    make_triplets(&remaining, sets, pathology, &mut rng)
}

/// Training and validation triplets for one pathology.
pub fn build_triplet_sets(
    partition: &ConfusionPartition,
    pathology: PathologyId,
    cfg: &TripletDatasetConfig,
) -> Result<(Vec<ImageTriplet>, Vec<ImageTriplet>)> {
    let train = build_training_triplets(partition, pathology, cfg)?;
    let used: BTreeSet<String> = train.iter().map(|t| t.anchor_id.clone()).collect();
    let val = build_validation_triplets(partition, pathology, &used, cfg)?;
    Ok((train, val))
}

pub fn write_triplets(path: &Path, rows: &[TripletRow]) -> Result<()> {
    write_jsonl(path, rows)
}

pub fn read_triplets(path: &Path) -> Result<Vec<TripletRow>> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{partition_confusion, InferenceRecord};

    fn partition(n_tp: usize, n_fp: usize, n_tn: usize, n_fn: usize) -> ConfusionPartition {
        let mut recs = Vec::new();
        let mut push = |prefix: &str, n: usize, cell: Cell| {
            for i in 0..n {
                recs.push(InferenceRecord {
                    image_id: format!("{prefix}{i:04}"),
                    pathology: PathologyId::new(0).unwrap(),
                    probability: 0.5,
                    decision: cell.decision(),
                    truth: cell.truth(),
                    cell,
                });
            }
        };
        push("tp", n_tp, Cell::TP);
        push("fp", n_fp, Cell::FP);
        push("tn", n_tn, Cell::TN);
        push("fn", n_fn, Cell::FN);
        partition_confusion(&recs).unwrap()
    }

    fn p0() -> PathologyId {
        PathologyId::new(0).unwrap()
    }

    #[test]
    fn labels() {
        assert_eq!(checking_label_for(Cell::FN).unwrap(), -1);
        assert_eq!(checking_label_for(Cell::FP).unwrap(), 1);
        assert!(checking_label_for(Cell::TP).is_err());
        assert!(checking_label_for(Cell::TN).is_err());
    }

    #[test]
    fn takes_150_distinct_anchors_from_200_failures() {
        let part = partition(30, 80, 40, 120);
        let cfg = TripletDatasetConfig::default();
        let (train, val) = build_triplet_sets(&part, p0(), &cfg).unwrap();
        assert_eq!(train.len(), 150);
        let anchors: BTreeSet<_> = train.iter().map(|t| t.anchor_id.clone()).collect();
        assert_eq!(anchors.len(), 150);
        assert_eq!(val.len(), 50);
        let val_anchors: BTreeSet<_> = val.iter().map(|t| t.anchor_id.clone()).collect();
        assert!(anchors.is_disjoint(&val_anchors));
        assert_eq!(anchors.union(&val_anchors).count(), 200);
    }

    #[test]
    fn single_failure() {
        let part = partition(3, 0, 3, 1);
        let (train, val) = build_triplet_sets(&part, p0(), &TripletDatasetConfig::default()).unwrap();
        assert_eq!(train.len(), 1);
        assert_eq!(train[0].checking_label, -1);
        assert!(val.is_empty());
    }

    #[test]
    fn empty_pools_are_unsatisfiable() {
        let part = partition(0, 2, 3, 2);
        match build_training_triplets(&part, p0(), &TripletDatasetConfig::default()) {
            Err(Error::UnsatisfiableTriplet { pathology, pool }) => {
                assert_eq!(pathology, p0());
                assert_eq!(pool, "TP");
            }
            other => panic!("{other:?}"),
        }
        let part = partition(2, 2, 0, 2);
        assert!(matches!(
            build_training_triplets(&part, p0(), &TripletDatasetConfig::default()),
            Err(Error::UnsatisfiableTriplet { pool: "TN", .. })
        ));
        let part = partition(2, 0, 2, 0);
        assert!(matches!(
            build_training_triplets(&part, p0(), &TripletDatasetConfig::default()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let part = partition(20, 40, 20, 40);
        let cfg = TripletDatasetConfig { n_train: 50, seed: 4 };
        assert_eq!(build_triplet_sets(&part, p0(), &cfg).unwrap(), build_triplet_sets(&part, p0(), &cfg).unwrap());
        let other = TripletDatasetConfig { seed: 5, ..cfg };
        assert_ne!(build_triplet_sets(&part, p0(), &cfg).unwrap(), build_triplet_sets(&part, p0(), &other).unwrap());
    }

    #[test]
    fn jsonl_round_trip() {
        let part = partition(5, 5, 5, 5);
        let (train, val) = build_triplet_sets(&part, p0(), &TripletDatasetConfig { n_train: 6, seed: 1 }).unwrap();
        let rows: Vec<TripletRow> = train
            .into_iter()
            .map(|t| TripletRow { triplet: t, set: TripletSet::Train })
            .chain(val.into_iter().map(|t| TripletRow { triplet: t, set: TripletSet::Val }))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_triplets(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().next().unwrap().contains("\"set\":\"train\""));
        assert_eq!(read_triplets(&path).unwrap(), rows);
    }
}
