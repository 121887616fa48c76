//! Seeded RNG construction and output provenance records.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Every random draw in the toolkit comes from one of these, keyed by the run seed.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Attached to every JSON artifact the toolkit writes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub seed: u64,
    /// Input path as given -> hex SHA-256 of its contents.
    pub input_hashes: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(seed: u64) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            seed,
            input_hashes: BTreeMap::new(),
        }
    }

    pub fn with_input(mut self, path: impl AsRef<Path>) -> Result<Self> {
        self.add_input(path)?;
        Ok(self)
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let hash = hash_file(path)?;
        self.input_hashes.insert(path.display().to_string(), hash);
        Ok(())
    }
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
