//! Binary grid snapshots.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset  size     field
//! 0       4        magic "SKS1"
//! 4       8        n (u64)
//! 12      8        half width L (f64)
//! 20      8        time t (f64)
//! 28      8        params digest (u64)
//! 36      8 n²     values, row-major (index j*n + i), f64
//! end     32       SHA-256 of everything before it
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::domain::{DomainSpec, Field, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SKS1";
const HEADER: usize = 36;
const TRAILER: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub params_digest: u64,
    pub field: Field,
}

/// First eight bytes of the SHA-256 of `(a, σ, χ, p)`.
pub fn params_digest(params: &ModelParams) -> u64 {
    let mut h = Sha256::new();
    for v in [params.a, params.sigma, params.chi, params.p] {
        h.update(v.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

impl Snapshot {
    pub fn new(t: f64, params: &ModelParams, field: Field) -> Self {
        Self {
            t,
            params_digest: params_digest(params),
            field,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.field.domain();
        let mut out = Vec::with_capacity(HEADER + 8 * d.len() + TRAILER);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(d.n() as u64).to_le_bytes());
        out.extend_from_slice(&d.half_width().to_le_bytes());
        out.extend_from_slice(&self.t.to_le_bytes());
        out.extend_from_slice(&self.params_digest.to_le_bytes());
        for v in self.field.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&sum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER + TRAILER || &bytes[..4] != MAGIC {
            return Err(Error::Snapshot("not an SKS1 snapshot".into()));
        }
        let word = |at: usize| -> [u8; 8] { bytes[at..at + 8].try_into().expect("8 bytes") };
        let n = u64::from_le_bytes(word(4));
        let cells = n
            .checked_mul(n)
            .and_then(|c| usize::try_from(c).ok())
            .filter(|c| c.checked_mul(8).and_then(|b| b.checked_add(HEADER + TRAILER)) == Some(bytes.len()))
            .ok_or_else(|| Error::Snapshot(format!("length {} does not match n = {n}", bytes.len())))?;
        let body = bytes.len() - TRAILER;
        if Sha256::digest(&bytes[..body]).as_slice() != &bytes[body..] {
            return Err(Error::Snapshot("checksum mismatch".into()));
        }
        let half_width = f64::from_le_bytes(word(12));
        let t = f64::from_le_bytes(word(20));
        let params_digest = u64::from_le_bytes(word(28));
        let values = (0..cells).map(|k| f64::from_le_bytes(word(HEADER + 8 * k))).collect();
        let domain = DomainSpec::new(half_width, n as usize).map_err(|e| Error::Snapshot(e.to_string()))?;
        let field = Field::new(domain, values).map_err(|e| Error::Snapshot(e.to_string()))?;
        Ok(Self { t, params_digest, field })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::make_gaussian_field;

    fn sample() -> Snapshot {
        let f = make_gaussian_field(DomainSpec::new(3.0, 16).unwrap(), 1.3, 0.4, (0.1, -0.2)).unwrap();
        Snapshot::new(0.125, &ModelParams::new(1.0, 0.5, 2.0, 4.0).unwrap(), f)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample();
        let back = Snapshot::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back.t.to_bits(), s.t.to_bits());
        assert_eq!(back.params_digest, s.params_digest);
        assert!(back.field.values().iter().zip(s.field.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.field.domain(), s.field.domain());
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = sample().to_bytes();
        let mut flipped = bytes.clone();
        flipped[HEADER + 40] ^= 1;
        assert!(matches!(Snapshot::from_bytes(&flipped), Err(Error::Snapshot(_))));
        assert!(Snapshot::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Snapshot::from_bytes(&magic).is_err());
        assert!(Snapshot::from_bytes(&[]).is_err());
    }

    #[test]
    fn digest_tracks_parameters() {
        let a = ModelParams::new(1.0, 0.5, 2.0, 4.0).unwrap();
        assert_eq!(params_digest(&a), params_digest(&a));
        assert_ne!(params_digest(&a), params_digest(&a.with_chi(2.5)));
    }
}
