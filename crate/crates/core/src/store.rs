//! JSONL persistence: generic readers/writers and the append-only
//! pseudo-demonstration store that doubles as the resume journal.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::annotate::{Journal, Outcome, SkipRecord};
use crate::error::{Error, Result};
use crate::types::PseudoDemonstration;

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn to_jsonl<'a, T: Serialize + 'a>(items: impl IntoIterator<Item = &'a T>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

/// Writes `bytes` through a temporary sibling and a rename, so readers never
/// see a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
    write_atomic(path, &to_jsonl(items)?)
}

/// Hex SHA-256 of a file's contents.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(crate::util::sha256_hex(&bytes))
}

/// `pseudo.jsonl` -> `pseudo.skips.jsonl`.
pub fn skips_path_for(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("store");
    path.with_file_name(format!("{stem}.skips.jsonl"))
}

/// Drops a trailing partial line left by an interrupted append. Returns the
/// number of bytes removed.
fn repair_tail(path: &Path) -> Result<u64> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(0);
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let f = OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, e))?;
    f.set_len(keep as u64).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))?;
    let dropped = (bytes.len() - keep) as u64;
    log::warn!("{}: dropped {dropped} bytes of an incomplete trailing record", path.display());
    Ok(dropped)
}

fn open_append(path: &Path) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

/// Append-only store of pseudo-demonstrations with a sibling skip file.
///
/// Opening an existing store loads everything already committed, which is
/// what makes interrupted runs resumable: the annotators find those ids in
/// the journal and only process the rest.
pub struct PsdStore {
    path: PathBuf,
    skips_path: PathBuf,
    pseudo_file: File,
    skips_file: File,
    pseudo: Vec<PseudoDemonstration>,
    skips: Vec<SkipRecord>,
    index: HashMap<String, Outcome>,
}

impl PsdStore {
    pub fn open(path: &Path) -> Result<Self> {
        let skips_path = skips_path_for(path);
        let pseudo_file = open_append(path)?;
        let skips_file = open_append(&skips_path)?;
        repair_tail(path)?;
        repair_tail(&skips_path)?;
        let pseudo: Vec<PseudoDemonstration> = read_jsonl(path)?;
        let skips: Vec<SkipRecord> = read_jsonl(&skips_path)?;
        let mut index = HashMap::new();
        for p in &pseudo {
            p.validate()?;
            index.insert(p.example_id.clone(), Outcome::Annotated(p.clone()));
        }
        for s in &skips {
            index.insert(s.example_id.clone(), Outcome::Skipped(s.clone()));
        }
        if !index.is_empty() {
            log::info!(
                "{}: resuming with {} annotated and {} skipped examples",
                path.display(),
                pseudo.len(),
                skips.len()
            );
        }
        Ok(PsdStore {
            path: path.to_path_buf(),
            skips_path,
            pseudo_file,
            skips_file,
            pseudo,
            skips,
            index,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn skips_path(&self) -> &Path {
        &self.skips_path
    }

    pub fn pseudo(&self) -> &[PseudoDemonstration] {
        &self.pseudo
    }

    pub fn skips(&self) -> &[SkipRecord] {
        &self.skips
    }
}

impl Journal for PsdStore {
    fn lookup(&self, example_id: &str) -> Option<Outcome> {
        self.index.get(example_id).cloned()
    }

    fn commit(&mut self, batch: &[Outcome]) -> Result<()> {
        let mut pseudo = Vec::new();
        let mut skips = Vec::new();
        for o in batch {
            match o {
                Outcome::Annotated(p) => pseudo.push(p),
                Outcome::Skipped(s) => skips.push(s),
            }
        }
        for (file, path, bytes) in [
            (&mut self.pseudo_file, &self.path, to_jsonl(pseudo.iter().copied())?),
            (&mut self.skips_file, &self.skips_path, to_jsonl(skips.iter().copied())?),
        ] {
            if !bytes.is_empty() {
                file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
                file.sync_data().map_err(|e| Error::io(path, e))?;
            }
        }
        for o in batch {
            self.index.insert(o.example_id().to_string(), o.clone());
            match o {
                Outcome::Annotated(p) => self.pseudo.push(p.clone()),
                Outcome::Skipped(s) => self.skips.push(s.clone()),
            }
        }
        Ok(())
    }
}
