//! Per-stage seeds derived from the root seed.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// First eight bytes, little-endian, of SHA-256 over the root seed's
/// little-endian bytes followed by the UTF-8 stage name.
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub root: u64,
    pub cluster: u64,
    pub dedup: u64,
    pub summary_graph: u64,
    pub review: u64,
}

impl StageSeeds {
    pub fn derive(root: u64) -> Self {
        Self {
            root,
            cluster: stage_seed(root, "cluster"),
            dedup: stage_seed(root, "dedup"),
            summary_graph: stage_seed(root, "summary-graph"),
            review: stage_seed(root, "review"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_a_hand_built_digest() {
        let mut bytes = 7u64.to_le_bytes().to_vec();
        bytes.extend_from_slice(b"cluster");
        let d = Sha256::digest(&bytes);
        let mut expect = 0u64;
        for (i, b) in d[..8].iter().enumerate() {
            expect |= (*b as u64) << (8 * i);
        }
        assert_eq!(stage_seed(7, "cluster"), expect);
    }

    #[test]
    fn stages_and_roots_differ() {
        let s = StageSeeds::derive(0);
        let all = [s.cluster, s.dedup, s.summary_graph, s.review];
        let unique: std::collections::HashSet<u64> = all.iter().copied().collect();
        assert_eq!(unique.len(), 4);
        assert_ne!(StageSeeds::derive(1).cluster, s.cluster);
        assert_eq!(StageSeeds::derive(0), s);
    }
}
