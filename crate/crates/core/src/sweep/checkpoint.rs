use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CellRecord, SCHEMA_VERSION};
use crate::error::{Error, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.jsonl";

/// One line of the append-only checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CheckpointLine {
    Header {
        schema_version: u32,
        fingerprint: String,
        cells: usize,
    },
    Cell {
        schema_version: u32,
        cell: Box<CellRecord>,
    },
}

pub(super) struct CheckpointWriter {
    file: File,
    path: PathBuf,
}

impl CheckpointWriter {
    pub(super) fn append(&mut self, cell: &CellRecord) -> Result<()> {
        let line = CheckpointLine::Cell {
            schema_version: SCHEMA_VERSION,
            cell: Box::new(cell.clone()),
        };
        write_line(&mut self.file, &self.path, &line)
    }
}

fn write_line(file: &mut File, path: &Path, line: &CheckpointLine) -> Result<()> {
    let mut text = serde_json::to_string(line)
        .map_err(|e| Error::Checkpoint(format!("cannot serialize checkpoint line: {e}")))?;
    text.push('\n');
    file.write_all(text.as_bytes())
        .and_then(|_| file.flush())
        .map_err(|e| Error::Checkpoint(format!("cannot write {}: {e}", path.display())))
}

fn corrupt(path: &Path, line: usize, why: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!(
        "{} line {line} is unreadable ({why}); delete the file to start over, \
         or remove line {line} and everything after it to resume from the intact prefix",
        path.display()
    ))
}

/// Reads the cells stored in a checkpoint, checking its header against
/// `fingerprint`. A final line without a trailing newline is an interrupted
/// write and is dropped.
pub fn load_checkpoint(path: &Path, fingerprint: &str) -> Result<(Vec<CellRecord>, u64)> {
    let file =
        File::open(path).map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = BufReader::new(file);
    let mut cells: Vec<CellRecord> = Vec::new();
    let mut good_len = 0u64;
    let mut number = 0;
    let mut buf = String::new();
    loop {
        buf.clear();
        let read = reader
            .read_line(&mut buf)
            .map_err(|e| corrupt(path, number + 1, e))?;
        if read == 0 {
            break;
        }
        number += 1;
        if !buf.ends_with('\n') {
            log::warn!("dropping incomplete final line {number} of {}", path.display());
            break;
        }
        let line: CheckpointLine =
            serde_json::from_str(buf.trim_end()).map_err(|e| corrupt(path, number, e))?;
        match (number, line) {
            (
                1,
                CheckpointLine::Header {
                    schema_version,
                    fingerprint: fp,
                    ..
                },
            ) => {
                if schema_version != SCHEMA_VERSION {
                    return Err(Error::Checkpoint(format!(
                        "{} has schema version {schema_version}, expected {SCHEMA_VERSION}; \
                         delete it or use a different output directory",
                        path.display()
                    )));
                }
                if fp != fingerprint {
                    return Err(Error::Checkpoint(format!(
                        "{} was written for a different grid or configuration; \
                         delete it or use a different output directory",
                        path.display()
                    )));
                }
            }
            (1, _) => return Err(corrupt(path, 1, "missing header")),
            (_, CheckpointLine::Header { .. }) => return Err(corrupt(path, number, "repeated header")),
            (_, CheckpointLine::Cell { schema_version, cell }) => {
                if schema_version != SCHEMA_VERSION {
                    return Err(corrupt(path, number, format!("schema version {schema_version}")));
                }
                if !cells.iter().any(|c| c.i == cell.i && c.j == cell.j) {
                    cells.push(*cell);
                }
            }
        }
        good_len += read as u64;
    }
    if number == 0 {
        return Err(corrupt(path, 1, "empty file"));
    }
    Ok((cells, good_len))
}

/// Opens or creates the checkpoint at `path` for appending.
pub(super) fn open(
    path: &Path,
    fingerprint: &str,
    total: usize,
) -> Result<(Vec<CellRecord>, CheckpointWriter)> {
    let exists = path.metadata().map(|m| m.len() > 0).unwrap_or(false);
    if exists {
        let (cells, good_len) = load_checkpoint(path, fingerprint)?;
        if good_len == 0 {
            return create(path, fingerprint, total);
        }
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::Checkpoint(format!("cannot append to {}: {e}", path.display())))?;
        file.set_len(good_len)
            .map_err(|e| Error::Checkpoint(format!("cannot trim {}: {e}", path.display())))?;
        return Ok((
            cells,
            CheckpointWriter {
                file,
                path: path.to_path_buf(),
            },
        ));
    }
    create(path, fingerprint, total)
}

fn create(path: &Path, fingerprint: &str, total: usize) -> Result<(Vec<CellRecord>, CheckpointWriter)> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = File::create(path)
        .map_err(|e| Error::Checkpoint(format!("cannot create {}: {e}", path.display())))?;
    let header = CheckpointLine::Header {
        schema_version: SCHEMA_VERSION,
        fingerprint: fingerprint.to_string(),
        cells: total,
    };
    write_line(&mut file, path, &header)?;
    Ok((
        Vec::new(),
        CheckpointWriter {
            file,
            path: path.to_path_buf(),
        },
    ))
}
