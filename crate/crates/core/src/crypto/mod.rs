//! Hash kernels: SHA-1 (generic and hardware-accelerated), MD5 and SM3,
//! plus the fixed-width benchmark message generator.
//!
//! All functions are pure; batch helpers here are serial. The parallel
//! batch driver lives in the runtime crate.

mod md5;
mod messages;
mod sha1;
#[cfg(target_arch = "x86_64")]
mod sha1_x86;
mod sm3;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

pub use messages::{gen_messages, MessageBatch};

/// Default message width used by the benchmark workload.
pub const DEFAULT_MSG_WIDTH: u32 = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum HashAlg {
    Sha1,
    Md5,
    Sm3,
}

impl HashAlg {
    pub const ALL: [HashAlg; 3] = [HashAlg::Sha1, HashAlg::Md5, HashAlg::Sm3];

    pub fn name(self) -> &'static str {
        match self {
            HashAlg::Sha1 => "sha1",
            HashAlg::Md5 => "md5",
            HashAlg::Sm3 => "sm3",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }

    pub fn digest_len(self) -> usize {
        match self {
            HashAlg::Sha1 => 20,
            HashAlg::Md5 => 16,
            HashAlg::Sm3 => 32,
        }
    }
}

impl fmt::Display for HashAlg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("message width must be between 1 and 19 digits, got {0}")]
    BadWidth(u32),
    #[error("messages {start}..{start}+{count} exceed the {width}-digit range")]
    RangeOverflow { start: u64, count: u64, width: u32 },
    #[error("batch data length {len} is not {count} x {msg_len}")]
    BadLayout { len: usize, count: usize, msg_len: usize },
}

/// A hash value; its length always matches the algorithm.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Digest {
    alg: HashAlg,
    bytes: [u8; 32],
}

impl Digest {
    pub fn from_slice(alg: HashAlg, bytes: &[u8]) -> Option<Self> {
        if bytes.len() != alg.digest_len() {
            return None;
        }
        let mut buf = [0u8; 32];
        buf[..bytes.len()].copy_from_slice(bytes);
        Some(Digest { alg, bytes: buf })
    }

    pub fn alg(&self) -> HashAlg {
        self.alg
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes[..self.alg.digest_len()]
    }

    pub fn to_hex(&self) -> String {
        use core::fmt::Write;
        let mut s = String::with_capacity(self.alg.digest_len() * 2);
        for b in self.as_bytes() {
            let _ = write!(s, "{b:02x}");
        }
        s
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.alg, self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Runs Merkle-Damgard padding over `msg`, feeding every 64-byte block to
/// `compress`. The bit length is appended big- or little-endian.
pub(crate) fn md_blocks(msg: &[u8], big_endian_len: bool, mut compress: impl FnMut(&[u8; 64])) {
    let mut chunks = msg.chunks_exact(64);
    for block in &mut chunks {
        compress(block.try_into().expect("64-byte chunk"));
    }
    let rest = chunks.remainder();
    let bit_len = (msg.len() as u64).wrapping_mul(8);
    let len_bytes = if big_endian_len {
        bit_len.to_be_bytes()
    } else {
        bit_len.to_le_bytes()
    };
    let mut tail = [0u8; 128];
    tail[..rest.len()].copy_from_slice(rest);
    tail[rest.len()] = 0x80;
    let total = if rest.len() < 56 { 64 } else { 128 };
    tail[total - 8..total].copy_from_slice(&len_bytes);
    for block in tail[..total].chunks_exact(64) {
        compress(block.try_into().expect("64-byte chunk"));
    }
}

/// Computes the digest of one message with the portable kernel.
pub fn digest(alg: HashAlg, message: &[u8]) -> Digest {
    let mut out = [0u8; 32];
    digest_into(alg, message, &mut out);
    Digest { alg, bytes: out }
}

/// Writes the digest of `message` into the first `alg.digest_len()` bytes
/// of `out`.
pub fn digest_into(alg: HashAlg, message: &[u8], out: &mut [u8]) {
    match alg {
        HashAlg::Sha1 => sha1::digest(message, out),
        HashAlg::Md5 => md5::digest(message, out),
        HashAlg::Sm3 => sm3::digest(message, out),
    }
}

/// Whether the hardware SHA-1 path can run on this machine.
pub fn sha1_accel_available() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        sha1_x86::available()
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// SHA-1 through the hardware SHA extension when present; otherwise the
/// portable kernel. Output is bit-identical to `digest(Sha1, ..)`.
pub fn digest_sha1_accel(message: &[u8]) -> Digest {
    let mut out = [0u8; 32];
    sha1_accel_into(message, &mut out);
    Digest {
        alg: HashAlg::Sha1,
        bytes: out,
    }
}

pub fn sha1_accel_into(message: &[u8], out: &mut [u8]) {
    #[cfg(target_arch = "x86_64")]
    if sha1_x86::available() {
        let mut state = sha1::IV;
        md_blocks(message, true, |block| {
            // SAFETY: `available()` confirmed the required CPU features.
            unsafe { sha1_x86::compress(&mut state, block) }
        });
        sha1::write_state(&state, out);
        return;
    }
    sha1::digest(message, out)
}

/// Serial reference batch hash: `out[i] = digest(alg, message i)`.
pub fn hash_batch_serial(alg: HashAlg, batch: &MessageBatch) -> Vec<Digest> {
    batch.iter().map(|m| digest(alg, m)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hex(alg: HashAlg, msg: &[u8]) -> String {
        digest(alg, msg).to_hex()
    }

    #[test]
    fn sha1_published_vectors() {
        assert_eq!(hex(HashAlg::Sha1, b"abc"), "a9993e364706816aba3e25717850c26c9cd0d89d");
        assert_eq!(hex(HashAlg::Sha1, b""), "da39a3ee5e6b4b0d3255bfef95601890afd80709");
        assert_eq!(
            hex(HashAlg::Sha1, b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq"),
            "84983e441c3bd26ebaae4aa1f95129e5e54670f1"
        );
    }

    #[test]
    fn md5_published_vectors() {
        assert_eq!(hex(HashAlg::Md5, b""), "d41d8cd98f00b204e9800998ecf8427e");
        assert_eq!(hex(HashAlg::Md5, b"a"), "0cc175b9c0f1b6a831c399e269772661");
        assert_eq!(hex(HashAlg::Md5, b"abc"), "900150983cd24fb0d6963f7d28e17f72");
        assert_eq!(hex(HashAlg::Md5, b"message digest"), "f96b697d7cb7938d525a2f31aaf161d0");
    }

    #[test]
    fn sm3_published_vectors() {
        assert_eq!(
            hex(HashAlg::Sm3, b"abc"),
            "66c7f0f462eeedd9d1f2d46bdc10e4e24167c4875cf2f7a2297da02b8f4ba8e0"
        );
        let abcd16 = b"abcd".repeat(16);
        assert_eq!(
            hex(HashAlg::Sm3, &abcd16),
            "debe9ff92275b8a138604889c18e5a4d6fdb70e5387e5765293dcba39c0c5732"
        );
    }

    #[cfg(target_arch = "x86_64")]
    #[test]
    fn accel_path_is_detected_when_present() {
        if std::is_x86_feature_detected!("sha") {
            assert!(sha1_accel_available());
        }
    }

    #[test]
    fn accel_matches_generic_on_vectors() {
        assert_eq!(digest_sha1_accel(b"abc"), digest(HashAlg::Sha1, b"abc"));
        assert_eq!(
            digest_sha1_accel(b"").to_hex(),
            "da39a3ee5e6b4b0d3255bfef95601890afd80709"
        );
        for len in 0..200usize {
            let msg: Vec<u8> = (0..len).map(|i| (i * 31 + len) as u8).collect();
            assert_eq!(digest_sha1_accel(&msg), digest(HashAlg::Sha1, &msg), "len {len}");
        }
    }

    #[test]
    fn digest_lengths_match_algorithms() {
        for alg in HashAlg::ALL {
            for len in [0usize, 1, 55, 56, 63, 64, 65, 1000] {
                assert_eq!(digest(alg, &alloc::vec![7u8; len]).as_bytes().len(), alg.digest_len());
            }
        }
    }

    #[test]
    fn from_slice_rejects_wrong_length() {
        assert!(Digest::from_slice(HashAlg::Md5, &[0u8; 20]).is_none());
        assert!(Digest::from_slice(HashAlg::Sha1, &[0u8; 20]).is_some());
    }
}
