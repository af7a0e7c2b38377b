//! The `.snic` container: a fixed little-endian header followed by one rANS
//! payload for the hyper-latent and one per latent slice.
//!
//! ```text
//! offset size field
//!      0    4 magic "SNIC"
//!      4    1 version
//!      5    1 model_id
//!      6    1 lambda_index
//!      7    4 orig_w            (u32 LE)
//!     11    4 orig_h            (u32 LE)
//!     15    4 z_payload_len     (u32 LE)
//!     19   40 slice_payload_len (10 x u32 LE)
//!     59    4 crc32 of all payload bytes, in order
//!     63    . z payload, then slice payloads 0..9
//! ```

use crate::error::{Result, SnicError};

pub const MAGIC: [u8; 4] = *b"SNIC";
pub const VERSION: u8 = 1;
pub const NUM_SLICES: usize = 10;
pub const HEADER_LEN: usize = 4 + 1 + 1 + 1 + 4 + 4 + 4 + 4 * NUM_SLICES + 4;
/// Largest accepted image side.
pub const MAX_SIDE: u32 = 1 << 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitstream {
    pub version: u8,
    pub model_id: u8,
    pub lambda_index: u8,
    pub orig_w: u32,
    pub orig_h: u32,
    pub z_payload: Vec<u8>,
    pub slice_payloads: Vec<Vec<u8>>,
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn checked_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| SnicError::Input(format!("payload of {n} bytes does not fit the container")))
}

impl Bitstream {
    fn payloads(&self) -> impl Iterator<Item = &Vec<u8>> {
        std::iter::once(&self.z_payload).chain(self.slice_payloads.iter())
    }

    pub fn payload_crc(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for p in self.payloads() {
            h.update(p);
        }
        h.finalize()
    }

    /// Total serialized size in bytes.
    pub fn byte_len(&self) -> usize {
        HEADER_LEN + self.payloads().map(Vec::len).sum::<usize>()
    }

    /// `8 * bytes / (orig_w * orig_h)`.
    pub fn bpp(&self) -> f64 {
        8.0 * self.byte_len() as f64 / (self.orig_w as f64 * self.orig_h as f64)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.slice_payloads.len() != NUM_SLICES {
            return Err(SnicError::Input(format!(
                "container holds exactly {NUM_SLICES} slice payloads, got {}",
                self.slice_payloads.len()
            )));
        }
        check_dims(self.orig_w, self.orig_h)?;
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&[self.version, self.model_id, self.lambda_index]);
        out.extend_from_slice(&self.orig_w.to_le_bytes());
        out.extend_from_slice(&self.orig_h.to_le_bytes());
        for p in self.payloads() {
            out.extend_from_slice(&checked_len(p.len())?.to_le_bytes());
        }
        out.extend_from_slice(&self.payload_crc().to_le_bytes());
        for p in self.payloads() {
            out.extend_from_slice(p);
        }
        Ok(out)
    }

    /// Parses and validates a container: magic, version, dimensions, declared
    /// lengths and the payload CRC.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(SnicError::Integrity(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if bytes[..4] != MAGIC {
            return Err(SnicError::Integrity("bad magic; not a .snic file".into()));
        }
        let version = bytes[4];
        if version != VERSION {
            return Err(SnicError::Integrity(format!("unsupported container version {version}")));
        }
        let (orig_w, orig_h) = (le_u32(bytes, 7), le_u32(bytes, 11));
        check_dims(orig_w, orig_h).map_err(|e| SnicError::Integrity(e.to_string()))?;
        let lens: Vec<usize> = (0..=NUM_SLICES).map(|i| le_u32(bytes, 15 + 4 * i) as usize).collect();
        let declared: u64 = lens.iter().map(|&l| l as u64).sum();
        let actual = (bytes.len() - HEADER_LEN) as u64;
        if declared != actual {
            return Err(SnicError::Integrity(format!("header declares {declared} payload bytes, found {actual}")));
        }
        let crc = le_u32(bytes, 15 + 4 * (NUM_SLICES + 1));
        let mut at = HEADER_LEN;
        let mut payloads = lens.iter().map(|&l| {
            let p = bytes[at..at + l].to_vec();
            at += l;
            p
        });
        let z_payload = payloads.next().unwrap();
        let slice_payloads: Vec<Vec<u8>> = payloads.collect();
        let b = Self { version, model_id: bytes[5], lambda_index: bytes[6], orig_w, orig_h, z_payload, slice_payloads };
        if b.payload_crc() != crc {
            return Err(SnicError::Integrity("payload CRC mismatch".into()));
        }
        Ok(b)
    }
}

/// Rejects empty images and sides that would overflow the container or the
/// padded latent geometry.
pub fn check_dims(w: u32, h: u32) -> Result<()> {
    if w == 0 || h == 0 {
        return Err(SnicError::Input("image has a zero dimension".into()));
    }
    if w > MAX_SIDE || h > MAX_SIDE {
        return Err(SnicError::Input(format!("{w}x{h} exceeds the maximum side of {MAX_SIDE}")));
    }
    Ok(())
}
