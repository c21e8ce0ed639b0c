use sha2::{Digest, Sha256};

/// 64-bit digest of raw bytes (first 8 bytes of SHA-256, big-endian).
pub fn hash64(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_be_bytes(d[..8].try_into().unwrap())
}

/// Full SHA-256 hex digest.
pub fn hex256(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in d {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
