//! Whole-session snapshot: a one-line header with format version and a
//! SHA-256 of the payload, then the session as JSON.

use sha2::{Digest, Sha256};

use super::session::Session;
use super::ContextError;

pub const IMAGE_VERSION: u32 = 1;
const MAGIC: &str = "laneward-hibernate";

fn digest(payload: &[u8]) -> String {
    hex::encode(Sha256::digest(payload))
}

pub fn hibernate(session: &Session) -> Vec<u8> {
    let payload = serde_json::to_vec(session).expect("session state serializes");
    let mut out = format!("{MAGIC} v{IMAGE_VERSION} sha256:{}\n", digest(&payload)).into_bytes();
    out.extend_from_slice(&payload);
    out
}

pub fn restore(image: &[u8]) -> Result<Session, ContextError> {
    let malformed = |why: &str| ContextError::Malformed(why.to_string());
    let nl = image.iter().position(|&b| b == b'\n').ok_or_else(|| malformed("missing header"))?;
    let header = std::str::from_utf8(&image[..nl]).map_err(|_| malformed("header is not text"))?;
    let payload = &image[nl + 1..];
    let mut parts = header.split(' ');
    if parts.next() != Some(MAGIC) {
        return Err(malformed("not a hibernation image"));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.strip_prefix('v'))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| malformed("bad version field"))?;
    if version != IMAGE_VERSION {
        return Err(ContextError::VersionUnsupported(version));
    }
    let sum = parts.next().and_then(|s| s.strip_prefix("sha256:")).ok_or_else(|| malformed("bad checksum field"))?;
    if sum != digest(payload) {
        return Err(ContextError::ChecksumMismatch);
    }
    serde_json::from_slice(payload).map_err(|e| ContextError::Malformed(e.to_string()))
}
