//! JSONL manifest: a header line, then one record per line.
//!
//! Appending a newer copy of a record supersedes the older one, so stages
//! can checkpoint by appending. A torn final line (crash mid-write) is
//! dropped on read. Paths are stored relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Component, Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::DatasetRecord;

pub const MANIFEST_SCHEMA: &str = "synthseg.manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported manifest schema {schema} version {version}")]
    Version { schema: String, version: u32 },
    #[error("manifest has no header line")]
    MissingHeader,
    #[error("manifest line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
}

fn header_line() -> String {
    let h = Header {
        schema: MANIFEST_SCHEMA.into(),
        version: MANIFEST_VERSION,
    };
    serde_json::to_string(&h).expect("header serializes")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ManifestError + '_ {
    move |source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Removes `.` and resolves `..` without touching the filesystem.
fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other.as_os_str()),
        }
    }
    out
}

fn absolute(path: &Path) -> PathBuf {
    if path.is_absolute() {
        normalize(path)
    } else {
        let cwd = std::env::current_dir().unwrap_or_default();
        normalize(&cwd.join(path))
    }
}

fn base_dir(manifest: &Path) -> PathBuf {
    absolute(manifest.parent().unwrap_or(Path::new("")))
}

fn to_stored(record: &DatasetRecord, base: &Path) -> DatasetRecord {
    let mut r = record.clone();
    r.map_paths(|p| {
        let abs = absolute(p);
        pathdiff::diff_paths(&abs, base).unwrap_or(abs)
    });
    r
}

fn from_stored(mut record: DatasetRecord, base: &Path) -> DatasetRecord {
    record.map_paths(|p| normalize(&base.join(p)));
    record
}

fn check_header(line: &str) -> Result<(), ManifestError> {
    let h: Header = serde_json::from_str(line).map_err(|_| ManifestError::MissingHeader)?;
    if h.schema != MANIFEST_SCHEMA || h.version != MANIFEST_VERSION {
        return Err(ManifestError::Version {
            schema: h.schema,
            version: h.version,
        });
    }
    Ok(())
}

/// Writes a compacted manifest (one line per record, sorted by id).
/// The file is replaced atomically.
pub fn write_manifest(records: &[DatasetRecord], path: &Path) -> Result<(), ManifestError> {
    let base = base_dir(path);
    let latest: BTreeMap<&str, &DatasetRecord> = records.iter().map(|r| (r.record_id.as_str(), r)).collect();
    let mut text = header_line();
    text.push('\n');
    for record in latest.values() {
        text.push_str(&serde_json::to_string(&to_stored(record, &base)).expect("record serializes"));
        text.push('\n');
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    std::fs::write(&tmp, text).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

/// Reads a manifest, keeping the last copy of each record, sorted by id.
pub fn read_manifest(path: &Path) -> Result<Vec<DatasetRecord>, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let base = base_dir(path);
    let torn_tail = !text.is_empty() && !text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let Some(first) = lines.first() else {
        return Err(ManifestError::MissingHeader);
    };
    check_header(first)?;
    let mut latest = BTreeMap::new();
    for (n, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<DatasetRecord>(line) {
            Ok(r) => {
                latest.insert(r.record_id.clone(), from_stored(r, &base));
            }
            Err(_) if torn_tail && n == lines.len() - 1 => {
                log::warn!("{}: dropping torn final line", path.display());
            }
            Err(e) => {
                return Err(ManifestError::Parse {
                    line: n + 1,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(latest.into_values().collect())
}

/// Single writer for checkpoints; share it behind an `Arc` between workers.
pub struct ManifestAppender {
    path: PathBuf,
    base: PathBuf,
    file: Mutex<File>,
}

impl ManifestAppender {
    /// Opens (or creates) `path`, dropping any torn final line first.
    pub fn open(path: &Path) -> Result<Self, ManifestError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let existing = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io_err(path)(e)),
        };
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .write(true)
            .truncate(false)
            .open(path)
            .map_err(io_err(path))?;
        let keep = existing.rfind('\n').map_or(0, |i| i + 1);
        if keep == 0 {
            file.set_len(0).map_err(io_err(path))?;
            file.write_all(format!("{}\n", header_line()).as_bytes())
                .map_err(io_err(path))?;
        } else {
            check_header(existing.lines().next().unwrap_or(""))?;
            if keep < existing.len() {
                log::warn!("{}: dropping torn final line", path.display());
                file.set_len(keep as u64).map_err(io_err(path))?;
            }
            file.seek(SeekFrom::End(0)).map_err(io_err(path))?;
        }
        file.sync_data().map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            base: base_dir(path),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &DatasetRecord) -> Result<(), ManifestError> {
        let mut line = serde_json::to_string(&to_stored(record, &self.base)).expect("record serializes");
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        file.flush().map_err(io_err(&self.path))
    }
}
