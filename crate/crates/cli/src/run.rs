use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use fsl_core::artifacts::{read_json, DatasetConfig, RunDir};
use fsl_core::PathologyId;

use crate::error::{CliError, CliResult};
use crate::Common;

/// Run directory named by the wall-clock time and the seed.
pub fn create_run(common: &Common, seed: u64) -> CliResult<RunDir> {
    if let Some(dir) = &common.run {
        if dir.exists() && std::fs::read_dir(dir)?.next().is_some() && !common.force {
            return Err(CliError::Exists(dir.clone()));
        }
        std::fs::create_dir_all(dir)?;
        return Ok(RunDir::open(dir)?);
    }
    let stamp = Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
    Ok(RunDir::create(&common.runs_dir, &stamp, seed)?)
}

pub fn open_run(common: &Common) -> CliResult<RunDir> {
    match &common.run {
        Some(dir) => Ok(RunDir::open(dir)?),
        None => RunDir::latest(&common.runs_dir).map_err(|_| CliError::Missing {
            what: "run directory",
            path: common.runs_dir.join(fsl_core::artifacts::LATEST_FILE),
        }),
    }
}

/// `--seed` if given, else the seed the run was created with.
pub fn seed_for(common: &Common, run: &RunDir) -> CliResult<u64> {
    if let Some(s) = common.seed {
        return Ok(s);
    }
    let dataset: DatasetConfig = read_json(&require(run.dataset_config(), "dataset config")?)?;
    Ok(dataset.split_seed)
}

pub fn require(path: PathBuf, what: &'static str) -> CliResult<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Missing { what, path })
    }
}

/// Refuse to replace an output unless `--force` was given.
pub fn guard(common: &Common, path: &Path) -> CliResult<()> {
    if path.exists() && !common.force {
        return Err(CliError::Exists(path.to_path_buf()));
    }
    Ok(())
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// `None` for `all`.
pub fn parse_pathology(arg: &str) -> CliResult<Option<PathologyId>> {
    if arg.eq_ignore_ascii_case("all") {
        return Ok(None);
    }
    Ok(Some(arg.parse::<PathologyId>()?))
}

/// Remove artifacts built from outputs that are about to be replaced.
pub fn clear_stale(paths: &[PathBuf]) -> CliResult<()> {
    for p in paths {
        if p.is_dir() {
            std::fs::remove_dir_all(p)?;
        } else if p.exists() {
            std::fs::remove_file(p)?;
        }
    }
    Ok(())
}
