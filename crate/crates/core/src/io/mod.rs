//! File formats: run configs, checkpoints and run-directory bundles.

pub mod bundle;
pub mod checkpoint;
pub mod config;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub use bundle::*;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, Checkpoint, CHECKPOINT_HEADER};
pub use config::{parse_config, MemorySection, ModelSection, OutputSection, RunConfigFile, TrainSection};

/// Writes through a sibling temp file and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Creates `dir` for output. An existing non-empty directory is refused unless `overwrite`.
pub fn prepare_output_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::Argument(format!("{} exists and is not a directory", dir.display())));
        }
        if !overwrite && fs::read_dir(dir)?.next().is_some() {
            return Err(Error::Argument(format!(
                "{} is not empty; pass --overwrite to replace its contents",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Argument(format!("cannot read {}: {e}", path.display())))
}
