use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CorpusError, CueBundle};

/// A finalized dataset entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardRecord {
    pub clip_id: String,
    pub caption: String,
    pub ambiguities: Vec<String>,
    pub cosine: f64,
    pub kept: bool,
    pub cue_bundle: CueBundle,
}

/// Append-only writer for a set of `shard-NNNNN.jsonl` files.
///
/// Each shard is written under a `.partial` name and renamed once it is
/// full or the writer is finished. A clip id may appear only once across
/// the whole set.
pub struct ShardWriter {
    dir: PathBuf,
    shard_size: usize,
    seen: HashSet<String>,
    current: Option<(usize, BufWriter<File>)>,
    in_current: usize,
    next_index: usize,
    finished: Vec<PathBuf>,
}

impl ShardWriter {
    /// Creates `dir` and removes any shard files left from an earlier run.
    pub fn create(dir: impl Into<PathBuf>, shard_size: usize) -> Result<Self, CorpusError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| CorpusError::storage(&dir, e))?;
        for entry in fs::read_dir(&dir).map_err(|e| CorpusError::storage(&dir, e))?.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with("shard-") {
                fs::remove_file(entry.path()).map_err(|e| CorpusError::storage(&entry.path(), e))?;
            }
        }
        Ok(Self {
            dir,
            shard_size: shard_size.max(1),
            seen: HashSet::new(),
            current: None,
            in_current: 0,
            next_index: 0,
            finished: Vec::new(),
        })
    }

    fn shard_path(&self, index: usize) -> PathBuf {
        self.dir.join(format!("shard-{index:05}.jsonl"))
    }

    pub fn append(&mut self, record: &ShardRecord) -> Result<(), CorpusError> {
        if !self.seen.insert(record.clip_id.clone()) {
            return Err(CorpusError::DuplicateShardRecord(record.clip_id.clone()));
        }
        if self.current.is_none() {
            let index = self.next_index;
            self.next_index += 1;
            let partial = self.shard_path(index).with_extension("jsonl.partial");
            let file = File::create(&partial).map_err(|e| CorpusError::storage(&partial, e))?;
            self.current = Some((index, BufWriter::new(file)));
            self.in_current = 0;
        }
        let (index, writer) = self.current.as_mut().expect("opened above");
        let mut line = serde_json::to_vec(record).expect("shard record serialises");
        line.push(b'\n');
        let path = self.dir.join(format!("shard-{index:05}.jsonl.partial"));
        writer.write_all(&line).map_err(|e| CorpusError::storage(&path, e))?;
        self.in_current += 1;
        if self.in_current >= self.shard_size {
            self.seal()?;
        }
        Ok(())
    }

    fn seal(&mut self) -> Result<(), CorpusError> {
        if let Some((index, mut writer)) = self.current.take() {
            let final_path = self.shard_path(index);
            let partial = final_path.with_extension("jsonl.partial");
            writer.flush().map_err(|e| CorpusError::storage(&partial, e))?;
            writer
                .get_ref()
                .sync_all()
                .map_err(|e| CorpusError::storage(&partial, e))?;
            drop(writer);
            fs::rename(&partial, &final_path).map_err(|e| CorpusError::storage(&final_path, e))?;
            self.finished.push(final_path);
        }
        Ok(())
    }

    /// Seals the open shard and returns every shard path in order.
    pub fn finish(mut self) -> Result<Vec<PathBuf>, CorpusError> {
        self.seal()?;
        Ok(std::mem::take(&mut self.finished))
    }
}

/// Reads all `shard-*.jsonl` files in `dir` in name order.
pub fn read_shards(dir: &Path) -> Result<Vec<ShardRecord>, CorpusError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CorpusError::storage(dir, e))?
        .flatten()
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("shard-") && n.ends_with(".jsonl"))
        })
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let rows: Vec<ShardRecord> = crate::jsonl::read(&p).map_err(|e| CorpusError::Malformed {
            line: 0,
            message: e.to_string(),
        })?;
        out.extend(rows);
    }
    Ok(out)
}
