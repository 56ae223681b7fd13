use sha2::{Digest, Sha256};

use super::{SimError, SimState};

pub const SNAPSHOT_VERSION: u32 = 1;

const MAGIC: &[u8; 8] = b"DPRASNAP";
const HEADER: usize = 8 + 4 + 8;

/// Serialized [`SimState`]: magic, format version, checksum, JSON body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot(Vec<u8>);

impl Snapshot {
    pub fn capture(s: &SimState) -> Snapshot {
        let body = serde_json::to_vec(s).expect("state serializes");
        let mut bytes = Vec::with_capacity(HEADER + body.len());
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&checksum(&body));
        bytes.extend_from_slice(&body);
        Snapshot(bytes)
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Snapshot {
        Snapshot(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn restore(&self) -> Result<SimState, SimError> {
        let b = &self.0;
        if b.len() < HEADER || &b[..8] != MAGIC {
            return Err(SimError::CorruptSnapshot("missing header".into()));
        }
        let version = u32::from_le_bytes(b[8..12].try_into().expect("4 bytes"));
        if version != SNAPSHOT_VERSION {
            return Err(SimError::SnapshotVersion { found: version, expected: SNAPSHOT_VERSION });
        }
        let body = &b[HEADER..];
        if b[12..HEADER] != checksum(body) {
            return Err(SimError::CorruptSnapshot("checksum mismatch".into()));
        }
        serde_json::from_slice(body).map_err(|e| SimError::CorruptSnapshot(e.to_string()))
    }
}

fn checksum(body: &[u8]) -> [u8; 8] {
    let digest = Sha256::digest(body);
    digest[..8].try_into().expect("8 bytes")
}
