//! Single-file snapshots written with write-temp-then-rename.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::broker::PersistentState;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("cannot write snapshot {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("cannot read snapshot {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("corrupt snapshot {path}: {source}")]
    Corrupt { path: PathBuf, source: serde_json::Error },
}

pub fn save_snapshot(path: &Path, state: &PersistentState) -> Result<(), PersistError> {
    let wrap = |source| PersistError::Write { path: path.to_path_buf(), source };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);

    let file = File::create(&tmp).map_err(wrap)?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, state)
        .map_err(|e| wrap(std::io::Error::other(e)))?;
    writer.flush().map_err(wrap)?;
    writer.get_ref().sync_all().map_err(wrap)?;
    fs::rename(&tmp, path).map_err(wrap)
}

/// `Ok(None)` when no snapshot exists yet.
pub fn load_snapshot(path: &Path) -> Result<Option<PersistentState>, PersistError> {
    let text = match fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(source) => return Err(PersistError::Read { path: path.to_path_buf(), source }),
    };
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|source| PersistError::Corrupt { path: path.to_path_buf(), source })
}
