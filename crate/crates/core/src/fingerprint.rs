use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// SHA-256 digest identifying the set of training rows an artifact was fitted on.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(String);

impl Fingerprint {
    /// Fingerprint of a set of row indices. Order of `indices` does not matter.
    pub fn of_indices(indices: &[usize]) -> Self {
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        let mut hasher = Sha256::new();
        hasher.update((sorted.len() as u64).to_le_bytes());
        for i in sorted {
            hasher.update((i as u64).to_le_bytes());
        }
        Fingerprint(hex::encode(hasher.finalize()))
    }

    pub fn from_hex(s: impl Into<String>) -> Self {
        Fingerprint(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Hex SHA-256 of a byte buffer.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_independent() {
        assert_eq!(
            Fingerprint::of_indices(&[3, 1, 2]),
            Fingerprint::of_indices(&[1, 2, 3])
        );
        assert_ne!(
            Fingerprint::of_indices(&[1, 2]),
            Fingerprint::of_indices(&[1, 2, 3])
        );
    }
}
