use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use super::{CorpusError, Stage};

const HEADER: &[u8] = b"capfuse-cache v1\n";

/// Digest of everything that determines a stage's output besides the clip
/// itself: backend identity, prompt template, parameters and upstream inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fingerprint([u8; 32]);

impl Fingerprint {
    /// Hashes `parts` with length prefixes so that part boundaries matter.
    pub fn of<I, P>(parts: I) -> Self
    where
        I: IntoIterator<Item = P>,
        P: AsRef<[u8]>,
    {
        let mut h = Sha256::new();
        for part in parts {
            let part = part.as_ref();
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        Self(h.finalize().into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Content-derived address of a stage result.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn derive(clip_id: &str, stage: Stage, fingerprint: &Fingerprint) -> Self {
        let fp = Fingerprint::of([clip_id.as_bytes(), stage.name().as_bytes(), &fingerprint.0]);
        Self(fp.to_hex())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Directory-backed stage result store.
///
/// Objects live at `objects/<2 hex>/<62 hex>` and carry a digest of their
/// payload; an object whose digest does not verify reads as absent. Writes
/// go to `tmp/` first and are renamed into place.
#[derive(Debug)]
pub struct StageCache {
    root: PathBuf,
    tmp_seq: AtomicU64,
}

impl StageCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CorpusError> {
        let root = root.into();
        for sub in ["objects", "tmp"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| CorpusError::storage(&dir, e))?;
        }
        Ok(Self {
            root,
            tmp_seq: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn object_path(&self, key: &CacheKey) -> PathBuf {
        let (prefix, rest) = key.0.split_at(2);
        self.root.join("objects").join(prefix).join(rest)
    }

    /// Stores `payload` for `(clip_id, stage, fingerprint)` and returns its
    /// key. Storing identical inputs again is a no-op.
    pub fn put_stage_result(
        &self,
        clip_id: &str,
        stage: Stage,
        payload: &[u8],
        fingerprint: &Fingerprint,
    ) -> Result<CacheKey, CorpusError> {
        let key = CacheKey::derive(clip_id, stage, fingerprint);
        self.put(&key, payload)?;
        Ok(key)
    }

    pub fn get_stage_result(
        &self,
        clip_id: &str,
        stage: Stage,
        fingerprint: &Fingerprint,
    ) -> Result<Option<Vec<u8>>, CorpusError> {
        self.get(&CacheKey::derive(clip_id, stage, fingerprint))
    }

    pub fn put(&self, key: &CacheKey, payload: &[u8]) -> Result<(), CorpusError> {
        let target = self.object_path(key);
        if self.get(key)?.as_deref() == Some(payload) {
            return Ok(());
        }
        let parent = target.parent().expect("object path has a parent");
        fs::create_dir_all(parent).map_err(|e| CorpusError::storage(parent, e))?;

        let tmp = self.root.join("tmp").join(format!(
            "{}.{}.{}",
            key.as_str(),
            std::process::id(),
            self.tmp_seq.fetch_add(1, Ordering::Relaxed)
        ));
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(HEADER)?;
            f.write_all(hex::encode(Sha256::digest(payload)).as_bytes())?;
            f.write_all(b"\n")?;
            f.write_all(payload)?;
            f.sync_all()?;
            fs::rename(&tmp, &target)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            CorpusError::storage(&target, e)
        })
    }

    /// Returns the payload for `key`, or `None` when it is missing or fails
    /// its integrity check.
    pub fn get(&self, key: &CacheKey) -> Result<Option<Vec<u8>>, CorpusError> {
        let path = self.object_path(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(CorpusError::storage(&path, e)),
        };
        Ok(decode_object(&bytes))
    }

    /// Number of stored objects (valid or not).
    pub fn object_count(&self) -> usize {
        let Ok(prefixes) = fs::read_dir(self.root.join("objects")) else {
            return 0;
        };
        prefixes
            .flatten()
            .filter_map(|d| fs::read_dir(d.path()).ok())
            .map(|entries| entries.count())
            .sum()
    }

    /// True when the cache holds no objects.
    pub fn is_empty(&self) -> bool {
        self.object_count() == 0
    }
}

fn decode_object(bytes: &[u8]) -> Option<Vec<u8>> {
    let rest = bytes.strip_prefix(HEADER)?;
    if rest.len() < 65 || rest[64] != b'\n' {
        return None;
    }
    let (digest, payload) = (&rest[..64], &rest[65..]);
    (hex::encode(Sha256::digest(payload)).as_bytes() == digest).then(|| payload.to_vec())
}
