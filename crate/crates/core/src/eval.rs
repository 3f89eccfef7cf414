//! Baseline inference, confusion-cell bookkeeping and PPV/NPV reports.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ImageRecord;
use crate::model::{classify_image, ClassifierModel};
use crate::pathology::{PathologyId, NUM_PATHOLOGIES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Positive,
    Negative,
}

impl Outcome {
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Outcome::Positive
        } else {
            Outcome::Negative
        }
    }

    pub fn is_positive(self) -> bool {
        self == Outcome::Positive
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cell {
    TP,
    FP,
    TN,
    FN,
}

impl Cell {
    pub fn of(decision: Outcome, truth: Outcome) -> Cell {
        match (decision, truth) {
            (Outcome::Positive, Outcome::Positive) => Cell::TP,
            (Outcome::Positive, Outcome::Negative) => Cell::FP,
            (Outcome::Negative, Outcome::Negative) => Cell::TN,
            (Outcome::Negative, Outcome::Positive) => Cell::FN,
        }
    }

    pub fn is_failure(self) -> bool {
        matches!(self, Cell::FP | Cell::FN)
    }

    pub fn truth(self) -> Outcome {
        Outcome::from_bool(matches!(self, Cell::TP | Cell::FN))
    }

    pub fn decision(self) -> Outcome {
        Outcome::from_bool(matches!(self, Cell::TP | Cell::FP))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub image_id: String,
    pub pathology: PathologyId,
    pub probability: f64,
    pub decision: Outcome,
    pub truth: Outcome,
    pub cell: Cell,
}

/// One record per (image, pathology), in image order then pathology order.
pub fn run_inference(model: &ClassifierModel, records: &[ImageRecord], threshold: f64) -> Result<Vec<InferenceRecord>> {
    let mut out = Vec::with_capacity(records.len() * NUM_PATHOLOGIES);
    for rec in records {
        let c = classify_image(model, &rec.pixels, threshold)?;
        for p in PathologyId::all() {
            let decision = Outcome::from_bool(c.decisions[p.index()]);
            let truth = Outcome::from_bool(rec.truth(p));
            out.push(InferenceRecord {
                image_id: rec.image_id.clone(),
                pathology: p,
                probability: c.probabilities[p.index()],
                decision,
                truth,
                cell: Cell::of(decision, truth),
            });
        }
    }
    Ok(out)
}

pub fn write_inference_log(path: &Path, records: &[InferenceRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_inference_log(path: &Path) -> Result<Vec<InferenceRecord>> {
    read_jsonl(path)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    Error::create_parent(path)?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// The four disjoint id sets for one pathology.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSets {
    pub tp: BTreeSet<String>,
    pub fp: BTreeSet<String>,
    pub tn: BTreeSet<String>,
    #[serde(rename = "fn")]
    pub fn_: BTreeSet<String>,
}

impl CellSets {
    pub fn set(&self, cell: Cell) -> &BTreeSet<String> {
        match cell {
            Cell::TP => &self.tp,
            Cell::FP => &self.fp,
            Cell::TN => &self.tn,
            Cell::FN => &self.fn_,
        }
    }

    fn set_mut(&mut self, cell: Cell) -> &mut BTreeSet<String> {
        match cell {
            Cell::TP => &mut self.tp,
            Cell::FP => &mut self.fp,
            Cell::TN => &mut self.tn,
            Cell::FN => &mut self.fn_,
        }
    }

    pub fn cell_of(&self, image_id: &str) -> Option<Cell> {
        [Cell::TP, Cell::FP, Cell::TN, Cell::FN].into_iter().find(|&c| self.set(c).contains(image_id))
    }

    /// FP ∪ FN
    pub fn failed(&self) -> BTreeSet<String> {
        self.fp.union(&self.fn_).cloned().collect()
    }

    pub fn counts(&self) -> Counts {
        Counts {
            tp: self.tp.len() as u64,
            fp: self.fp.len() as u64,
            tn: self.tn.len() as u64,
            fn_: self.fn_.len() as u64,
        }
    }

    pub fn len(&self) -> usize {
        self.tp.len() + self.fp.len() + self.tn.len() + self.fn_.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-pathology assignment of every evaluated image to one confusion cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionPartition {
    cells: Vec<CellSets>,
}

impl Default for ConfusionPartition {
    fn default() -> Self {
        ConfusionPartition { cells: vec![CellSets::default(); NUM_PATHOLOGIES] }
    }
}

impl ConfusionPartition {
    pub fn pathology(&self, p: PathologyId) -> &CellSets {
        &self.cells[p.index()]
    }

    pub fn failed(&self, p: PathologyId) -> BTreeSet<String> {
        self.cells[p.index()].failed()
    }

    pub fn counts(&self, p: PathologyId) -> Counts {
        self.cells[p.index()].counts()
    }

    pub fn cell_of(&self, p: PathologyId, image_id: &str) -> Option<Cell> {
        self.cells[p.index()].cell_of(image_id)
    }

    /// Place `image_id` in `cell`, removing it from whichever cell held it.
    pub fn assign(&mut self, p: PathologyId, image_id: &str, cell: Cell) {
        let sets = &mut self.cells[p.index()];
        for c in [Cell::TP, Cell::FP, Cell::TN, Cell::FN] {
            sets.set_mut(c).remove(image_id);
        }
        sets.set_mut(cell).insert(image_id.to_string());
    }

    pub fn replace_pathology(&mut self, p: PathologyId, sets: CellSets) {
        self.cells[p.index()] = sets;
    }

    /// Drop an image from one pathology's bookkeeping. Returns its old cell.
    pub fn remove(&mut self, p: PathologyId, image_id: &str) -> Option<Cell> {
        let sets = &mut self.cells[p.index()];
        let cell = sets.cell_of(image_id)?;
        sets.set_mut(cell).remove(image_id);
        Some(cell)
    }
}

pub fn partition_confusion(records: &[InferenceRecord]) -> Result<ConfusionPartition> {
    let mut part = ConfusionPartition::default();
    for r in records {
        let sets = &mut part.cells[r.pathology.index()];
        if sets.cell_of(&r.image_id).is_some() {
            return Err(Error::DuplicateRecord { image_id: r.image_id.clone(), pathology: r.pathology });
        }
        sets.set_mut(r.cell).insert(r.image_id.clone());
    }
    Ok(part)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    /// Build from signed inputs, rejecting negatives.
    pub fn from_signed(tp: i64, fp: i64, tn: i64, fn_: i64) -> Result<Self> {
        let conv = |v: i64, name: &str| {
            u64::try_from(v).map_err(|_| Error::InvalidArgument(format!("negative {name} count {v}")))
        };
        Ok(Counts { tp: conv(tp, "TP")?, fp: conv(fp, "FP")?, tn: conv(tn, "TN")?, fn_: conv(fn_, "FN")? })
    }
}

/// A percentage that may be undefined (zero denominator → value 0.0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub undefined: bool,
}

fn ratio(num: u64, other: u64) -> Metric {
    let den = num + other;
    if den == 0 {
        Metric { value: 0.0, undefined: true }
    } else {
        Metric { value: 100.0 * num as f64 / den as f64, undefined: false }
    }
}

/// 100·TP/(TP+FP)
pub fn compute_ppv(c: &Counts) -> Metric {
    ratio(c.tp, c.fp)
}

/// 100·TN/(TN+FN)
pub fn compute_npv(c: &Counts) -> Metric {
    ratio(c.tn, c.fn_)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathologyMetrics {
    pub pathology: PathologyId,
    pub counts: Counts,
    pub ppv: Metric,
    pub npv: Metric,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub checkpoint_id: String,
    pub split_id: String,
    /// RFC 3339
    pub timestamp: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<PathologyMetrics>,
    pub provenance: Provenance,
}

pub fn build_report(partition: &ConfusionPartition, provenance: Provenance) -> MetricsReport {
    let rows = PathologyId::all()
        .map(|p| {
            let counts = partition.counts(p);
            PathologyMetrics { pathology: p, counts, ppv: compute_ppv(&counts), npv: compute_npv(&counts) }
        })
        .collect();
    MetricsReport { rows, provenance }
}

impl MetricsReport {
    pub fn row(&self, p: PathologyId) -> Option<&PathologyMetrics> {
        self.rows.iter().find(|r| r.pathology == p)
    }

    /// Fixed-width table, metrics to two decimals; undefined cells print `-`.
    pub fn render_table(&self) -> String {
        let fmt = |m: &Metric| if m.undefined { "-".to_string() } else { format!("{:.2}", m.value) };
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<28} {:>8} {:>8} {:>7} {:>7} {:>7} {:>7}",
            "Pathology", "PPV", "NPV", "TP", "FP", "TN", "FN"
        );
        for r in &self.rows {
            let c = r.counts;
            let _ = writeln!(
                s,
                "{:<28} {:>8} {:>8} {:>7} {:>7} {:>7} {:>7}",
                r.pathology.name(),
                fmt(&r.ppv),
                fmt(&r.npv),
                c.tp,
                c.fp,
                c.tn,
                c.fn_
            );
        }
        s
    }
}
