// SPDX-License-Identifier: (Apache-2.0 OR MIT)

//! Host-side packaging of offload programs.
//!
//! Programs travel to the device as `.zbpf` images:
//!
//! ```text
//! offset     size  field
//! 0          4     magic "ZBPF"
//! 4          2     version (1)
//! 6          2     flags (reserved, 0)
//! 8          4     insn_count
//! 12         8*n   code, one 8-byte slot per instruction
//! 12+8n      32    SHA-256 over bytes [0, 12+8n)
//! ```
//!
//! All integers are little-endian.

mod filter;

pub use filter::{
    build_filter_program, filter_budget, filter_instructions, match_filter_program, FilterParams,
    FILTER_MAX_BLOCK_SIZE,
};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::vm::{DecodeError, Instruction, Program};

pub const IMAGE_MAGIC: [u8; 4] = *b"ZBPF";
pub const IMAGE_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 12;
pub const DIGEST_LEN: usize = 32;
/// File extension for on-disk images.
pub const IMAGE_EXTENSION: &str = "zbpf";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("program has no instructions")]
    EmptyProgram,
    #[error("bad magic, not a ZBPF image")]
    BadMagic,
    #[error("unsupported image version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported image flags {0:#06x}")]
    UnsupportedFlags(u16),
    #[error("image digest does not match its contents")]
    DigestMismatch,
    #[error("image is truncated or its length disagrees with its header ({0} bytes)")]
    TruncatedImage(usize),
    #[error("program too large: instruction budget overflows")]
    ProgramTooLarge,
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// A parsed and integrity-checked image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramImage {
    pub version: u16,
    pub flags: u16,
    pub program: Program,
    pub digest: [u8; DIGEST_LEN],
}

impl ProgramImage {
    pub fn insn_count(&self) -> u32 {
        self.program.len() as u32
    }

    pub fn code(&self) -> &[Instruction] {
        self.program.instructions()
    }

    /// Re-serializes the image. Identical to the bytes it was decoded from.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = header_and_code(self.version, self.flags, self.code());
        out.extend_from_slice(&self.digest);
        out
    }
}

fn header_and_code(version: u16, flags: u16, code: &[Instruction]) -> Vec<u8> {
    let mut out = Vec::with_capacity(image_len(code.len()));
    out.extend_from_slice(&IMAGE_MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(code.len() as u32).to_le_bytes());
    for insn in code {
        out.extend_from_slice(&insn.encode());
    }
    out
}

/// Total image length for `insn_count` instructions.
pub const fn image_len(insn_count: usize) -> usize {
    HEADER_LEN + 8 * insn_count + DIGEST_LEN
}

pub fn encode_image(instructions: &[Instruction]) -> Result<Vec<u8>, ImageError> {
    if instructions.is_empty() {
        return Err(ImageError::EmptyProgram);
    }
    let mut out = header_and_code(IMAGE_VERSION, 0, instructions);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode_image(bytes: &[u8]) -> Result<ProgramImage, ImageError> {
    let truncated = || ImageError::TruncatedImage(bytes.len());
    if bytes.len() < image_len(0) {
        return Err(truncated());
    }
    if bytes[0..4] != IMAGE_MAGIC {
        return Err(ImageError::BadMagic);
    }
    let insn_count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if insn_count == 0 || insn_count.checked_mul(8).and_then(|n| n.checked_add(image_len(0))) != Some(bytes.len()) {
        return Err(truncated());
    }
    // The digest covers the version and flags, so check it before them: any
    // corrupted byte reports as a digest mismatch.
    let body_len = bytes.len() - DIGEST_LEN;
    let digest: [u8; DIGEST_LEN] = bytes[body_len..].try_into().unwrap();
    if Sha256::digest(&bytes[..body_len])[..] != digest {
        return Err(ImageError::DigestMismatch);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != IMAGE_VERSION {
        return Err(ImageError::UnsupportedVersion(version));
    }
    let flags = u16::from_le_bytes([bytes[6], bytes[7]]);
    if flags != 0 {
        return Err(ImageError::UnsupportedFlags(flags));
    }
    let program = Program::decode(&bytes[HEADER_LEN..body_len])?;
    Ok(ProgramImage {
        version,
        flags,
        program,
        digest,
    })
}

/// SHA-256 of the complete image bytes, the key native kernels are
/// registered under.
pub fn image_digest(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}
