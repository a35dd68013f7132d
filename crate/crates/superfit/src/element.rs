//! Scalar element abstraction. The engine runs in f32 for training, attacks
//! and evaluation (where exponent underflow is part of the behavior under
//! study) and in f64 for finite-difference verification.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign};

pub trait Element:
    Float + NumAssign + Sum + Send + Sync + Debug + Display + Default + 'static
{
    /// Dtype tag byte used in checkpoint files.
    const DTYPE_TAG: u8;
    /// Width of one element in bytes when serialized little-endian.
    const BYTE_WIDTH: usize;
    /// Short dtype name for error messages and reports.
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn append_le(self, out: &mut Vec<u8>);
    /// Reads one element from `bytes`; the caller guarantees `BYTE_WIDTH` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE_TAG: u8 = 1;
    const BYTE_WIDTH: usize = 4;
    const NAME: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn append_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Element for f64 {
    const DTYPE_TAG: u8 = 2;
    const BYTE_WIDTH: usize = 8;
    const NAME: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn append_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Sign with a hard zero: -1 for negative, +1 for positive, 0 for ±0.
///
/// `Float::signum` maps +0 to +1, which would turn a vanished gradient into a
/// full-size attack step; every attack in this crate goes through this
/// function instead.
pub fn sign<T: Element>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0f32), 0.0);
        assert_eq!(sign(-0.0f32), 0.0);
        assert_eq!(sign(3.5f32), 1.0);
        assert_eq!(sign(-0.001f64), -1.0);
        // The std behavior this guards against.
        assert_eq!((0.0f32).signum(), 1.0);
    }

    #[test]
    fn le_round_trip() {
        let mut buf = Vec::new();
        0.1f32.append_le(&mut buf);
        (-7.25f64).append_le(&mut buf);
        assert_eq!(f32::read_le(&buf[..4]), 0.1f32);
        assert_eq!(f64::read_le(&buf[4..]), -7.25f64);
    }
}
