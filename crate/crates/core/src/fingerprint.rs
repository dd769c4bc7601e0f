//! Content hashes recorded in dataset and model metadata.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of raw bytes.
pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Hash of the JSON serialization of a value. serde_json output is
/// deterministic for the types used here (no hash maps, shortest float repr).
pub fn of_json<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes: Vec<u8> = serde_json::to_vec(value).expect("serializable config");
    hex_digest(&bytes)
}

/// Incremental hasher for numeric tables.
#[derive(Default)]
pub struct TableHasher {
    inner: Sha256,
}

impl TableHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.inner.update(bytes);
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.inner.update(v.to_bits().to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.inner.update(v.to_le_bytes());
        self
    }

    pub fn finish(self) -> String {
        let digest = self.inner.finalize();
        let mut out = String::with_capacity(64);
        for b in digest.iter() {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}
