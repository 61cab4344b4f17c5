//! An object store with named buckets and S3-style key semantics.
//!
//! Objects live in memory; a store opened with [`BlobStore::with_root`] also
//! writes each object through to `<root>/<bucket>/<url-encoded-key>` and
//! reloads them on startup. Puts are last-writer-wins, deletes are
//! idempotent, and `list` returns a sorted snapshot.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use thiserror::Error;

use crate::clock::Clock;
use crate::time::Timestamp;

/// Bucket holding uploaded images, created at system bootstrap.
pub const INPUT_BUCKET: &str = "input";
/// Bucket holding per-image result documents, created at system bootstrap.
pub const OUTPUT_BUCKET: &str = "output";

const FILE_SAFE: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'.');

#[derive(Debug, Error)]
pub enum BlobError {
    #[error("no such bucket: {0}")]
    NoSuchBucket(String),
    #[error("no such key in bucket {bucket}: {key}")]
    NoSuchKey { bucket: String, key: String },
    #[error("object key must be non-empty")]
    EmptyKey,
    #[error("bucket already exists: {0}")]
    BucketExists(String),
    #[error("store i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug)]
pub struct BlobObject {
    bytes: Arc<[u8]>,
    last_modified: Timestamp,
}

impl BlobObject {
    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Always equal to the stored byte length.
    pub fn content_length(&self) -> u64 {
        self.bytes.len() as u64
    }

    pub fn last_modified(&self) -> Timestamp {
        self.last_modified
    }
}

pub struct BlobStore {
    clock: Arc<Clock>,
    buckets: Mutex<BTreeMap<String, BTreeMap<String, BlobObject>>>,
    root: Option<PathBuf>,
}

impl BlobStore {
    /// An empty in-memory store. Buckets are created explicitly.
    pub fn new(clock: Arc<Clock>) -> Self {
        BlobStore {
            clock,
            buckets: Mutex::new(BTreeMap::new()),
            root: None,
        }
    }

    /// A store that persists objects under `root`, one file per object,
    /// reloading anything already on disk.
    pub fn with_root(clock: Arc<Clock>, root: PathBuf) -> Result<Self, BlobError> {
        let store = BlobStore {
            clock,
            buckets: Mutex::new(BTreeMap::new()),
            root: Some(root.clone()),
        };
        fs::create_dir_all(&root)?;
        for entry in fs::read_dir(&root)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let bucket = entry.file_name().to_string_lossy().into_owned();
            let mut objects = BTreeMap::new();
            let now = store.clock.now();
            for file in fs::read_dir(entry.path())? {
                let file = file?;
                let encoded = file.file_name().to_string_lossy().into_owned();
                let key = percent_decode_str(&encoded)
                    .decode_utf8_lossy()
                    .into_owned();
                let bytes = fs::read(file.path())?;
                objects.insert(
                    key,
                    BlobObject {
                        bytes: bytes.into(),
                        last_modified: now,
                    },
                );
            }
            store.buckets.lock().unwrap().insert(bucket, objects);
        }
        Ok(store)
    }

    pub fn create_bucket(&self, name: &str) -> Result<(), BlobError> {
        let mut buckets = self.buckets.lock().unwrap();
        if buckets.contains_key(name) {
            return Err(BlobError::BucketExists(name.to_string()));
        }
        if let Some(root) = &self.root {
            fs::create_dir_all(root.join(name))?;
        }
        buckets.insert(name.to_string(), BTreeMap::new());
        Ok(())
    }

    /// Stores `bytes` under `key`, replacing any existing object.
    pub fn put(&self, bucket: &str, key: &str, bytes: Vec<u8>) -> Result<(), BlobError> {
        if key.is_empty() {
            return Err(BlobError::EmptyKey);
        }
        let object = BlobObject {
            bytes: bytes.into(),
            last_modified: self.clock.now(),
        };
        let mut buckets = self.buckets.lock().unwrap();
        let objects = buckets
            .get_mut(bucket)
            .ok_or_else(|| BlobError::NoSuchBucket(bucket.to_string()))?;
        if let Some(root) = &self.root {
            let path = root.join(bucket).join(self.encode_key(key));
            fs::write(path, object.bytes())?;
        }
        objects.insert(key.to_string(), object);
        Ok(())
    }

    pub fn get(&self, bucket: &str, key: &str) -> Result<Arc<[u8]>, BlobError> {
        let buckets = self.buckets.lock().unwrap();
        let objects = buckets
            .get(bucket)
            .ok_or_else(|| BlobError::NoSuchBucket(bucket.to_string()))?;
        objects
            .get(key)
            .map(|o| Arc::clone(&o.bytes))
            .ok_or_else(|| BlobError::NoSuchKey {
                bucket: bucket.to_string(),
                key: key.to_string(),
            })
    }

    pub fn stat(&self, bucket: &str, key: &str) -> Result<BlobObject, BlobError> {
        let buckets = self.buckets.lock().unwrap();
        let objects = buckets
            .get(bucket)
            .ok_or_else(|| BlobError::NoSuchBucket(bucket.to_string()))?;
        objects.get(key).cloned().ok_or_else(|| BlobError::NoSuchKey {
            bucket: bucket.to_string(),
            key: key.to_string(),
        })
    }

    /// All keys with the given prefix, lexicographically sorted. An empty
    /// prefix lists the whole bucket.
    pub fn list(&self, bucket: &str, prefix: &str) -> Result<Vec<String>, BlobError> {
        let buckets = self.buckets.lock().unwrap();
        let objects = buckets
            .get(bucket)
            .ok_or_else(|| BlobError::NoSuchBucket(bucket.to_string()))?;
        Ok(objects
            .range(prefix.to_string()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, _)| k.clone())
            .collect())
    }

    /// Removes `key` if present; deleting an absent key is a no-op.
    pub fn delete(&self, bucket: &str, key: &str) -> Result<(), BlobError> {
        let mut buckets = self.buckets.lock().unwrap();
        let objects = buckets
            .get_mut(bucket)
            .ok_or_else(|| BlobError::NoSuchBucket(bucket.to_string()))?;
        if objects.remove(key).is_some() {
            if let Some(root) = &self.root {
                let path = root.join(bucket).join(self.encode_key(key));
                match fs::remove_file(path) {
                    Ok(()) => {}
                    Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                    Err(e) => return Err(e.into()),
                }
            }
        }
        Ok(())
    }

    fn encode_key(&self, key: &str) -> String {
        utf8_percent_encode(key, FILE_SAFE).to_string()
    }
}
