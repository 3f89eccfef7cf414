use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{preprocess_image, ImageRecord, Label, PreprocessConfig};
use crate::error::{Error, Result};
use crate::pathology::{NUM_PATHOLOGIES, PATHOLOGY_NAMES};

/// How `-1.0` (uncertain) cells are resolved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UncertainPolicy {
    #[default]
    TreatAsNegative,
    TreatAsPositive,
}

impl UncertainPolicy {
    fn resolve(self, label: Label) -> Label {
        match (label, self) {
            (Label::Uncertain, UncertainPolicy::TreatAsNegative) => Label::Negative,
            (Label::Uncertain, UncertainPolicy::TreatAsPositive) => Label::Positive,
            (l, _) => l,
        }
    }
}

/// One manifest row before its image is loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub labels: Vec<Label>,
}

fn parse_cell(cell: &str) -> Option<Label> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Some(Label::Negative);
    }
    match cell.parse::<f64>().ok()? {
        v if v == 1.0 => Some(Label::Positive),
        v if v == 0.0 => Some(Label::Negative),
        v if v == -1.0 => Some(Label::Uncertain),
        _ => None,
    }
}

/// Parse a CheXpert-style CSV. Extra columns (Sex, Age, ...) are ignored.
/// Row numbers in errors count data rows from 1.
pub fn read_manifest(path: &Path, policy: UncertainPolicy) -> Result<Vec<ManifestEntry>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(file);
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);

    let path_col = find("Path").ok_or_else(|| Error::ManifestSchema("missing column `Path`".into()))?;
    let mut label_cols = Vec::with_capacity(NUM_PATHOLOGIES);
    for name in PATHOLOGY_NAMES {
        let col = find(name).ok_or_else(|| Error::ManifestSchema(format!("missing column `{name}`")))?;
        label_cols.push(col);
    }

    let mut entries = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::ManifestRow { row: row_no, message: e.to_string() })?;
        let path = row.get(path_col).unwrap_or_default().to_string();
        if path.is_empty() {
            return Err(Error::ManifestRow { row: row_no, message: "empty Path".into() });
        }
        let labels = label_cols
            .iter()
            .zip(PATHOLOGY_NAMES)
            .map(|(&col, name)| {
                let cell = row.get(col).unwrap_or_default();
                parse_cell(cell).map(|l| policy.resolve(l)).ok_or_else(|| Error::ManifestRow {
                    row: row_no,
                    message: format!("unparseable label `{cell}` in column `{name}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        entries.push(ManifestEntry { path, labels });
    }
    Ok(entries)
}

/// Read a manifest and load every image it references. Relative paths are
/// resolved against the manifest's directory; the `Path` string is the image id.
pub fn load_manifest(path: &Path, policy: UncertainPolicy, cfg: &PreprocessConfig) -> Result<Vec<ImageRecord>> {
    cfg.validate()?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    read_manifest(path, policy)?
        .into_iter()
        .map(|entry| {
            let file = base.join(&entry.path);
            let raw = std::fs::read(&file).map_err(|e| Error::io(&file, e))?;
            let pixels = preprocess_image(&raw, cfg)?;
            ImageRecord::new(entry.path.clone(), file.display().to_string(), entry.labels, pixels)
        })
        .collect()
}

/// Write entries in the same schema `read_manifest` accepts.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    let mut header = vec!["Path"];
    header.extend(PATHOLOGY_NAMES);
    writer.write_record(&header)?;
    for entry in entries {
        let mut row = vec![entry.path.clone()];
        row.extend(entry.labels.iter().map(|l| {
            match l {
                Label::Positive => "1.0",
                Label::Negative => "0.0",
                Label::Uncertain => "-1.0",
            }
            .to_string()
        }));
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
