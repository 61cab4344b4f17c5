//! Pluggable image classification.
//!
//! The shipped implementation is a deterministic stub: a seeded 64-bit
//! FNV-1a hash of the image bytes indexes a fixed 1000-entry label table.
//! Identical bytes map to identical labels across processes, runs, and
//! languages, which is what the rest of the pipeline actually depends on.
//! A real model can be swapped in behind the same trait.

use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClassifyError {
    #[error("cannot classify an empty image")]
    EmptyImage,
}

pub trait Classifier: Send + Sync {
    fn classify(&self, bytes: &[u8]) -> Result<String, ClassifyError>;
}

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Seeded FNV-1a 64. Seed 0 is the textbook function.
fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET_BASIS ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hash-based stand-in for a pretrained model.
pub struct StubClassifier {
    label_table: Arc<[String]>,
    hash_seed: u64,
}

impl StubClassifier {
    /// Stub over the default label table.
    pub fn new(hash_seed: u64) -> Self {
        StubClassifier {
            label_table: default_label_table().into(),
            hash_seed,
        }
    }

    pub fn with_table(label_table: Vec<String>, hash_seed: u64) -> Self {
        assert!(!label_table.is_empty(), "label table must be non-empty");
        StubClassifier {
            label_table: label_table.into(),
            hash_seed,
        }
    }
}

impl Classifier for StubClassifier {
    fn classify(&self, bytes: &[u8]) -> Result<String, ClassifyError> {
        if bytes.is_empty() {
            return Err(ClassifyError::EmptyImage);
        }
        let h = fnv1a64(self.hash_seed, bytes);
        let idx = (h % self.label_table.len() as u64) as usize;
        Ok(self.label_table[idx].clone())
    }
}

/// The shipped 1000-entry table: synthetic `label_NNN` names, with the
/// literal `hair_spray` at index 0 so the canonical sample output renders.
pub fn default_label_table() -> Vec<String> {
    (0..1000)
        .map(|i| {
            if i == 0 {
                "hair_spray".to_string()
            } else {
                format!("label_{i:03}")
            }
        })
        .collect()
}
