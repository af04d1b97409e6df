//! Elias-gamma codes over a simple MSB-first bit stream.

use crate::error::{Error, Result};

/// Length in bits of the Elias-gamma code of `x >= 1`.
pub fn gamma_len(x: u64) -> u64 {
    assert!(x >= 1, "Elias-gamma is defined for x >= 1");
    2 * u64::from(63 - x.leading_zeros()) + 1
}

/// Append-only bit buffer, most significant bit first within each byte.
#[derive(Clone, Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_bit(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.last_mut().expect("byte pushed above");
            *last |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    /// Writes the low `width` bits of `value`, high bit first.
    pub fn push_bits(&mut self, value: u64, width: u32) {
        for i in (0..width).rev() {
            self.push_bit((value >> i) & 1 == 1);
        }
    }

    /// `floor(log2 x)` zeros followed by `x` in binary.
    pub fn push_gamma(&mut self, x: u64) {
        assert!(x >= 1, "Elias-gamma is defined for x >= 1");
        let width = 64 - x.leading_zeros();
        for _ in 1..width {
            self.push_bit(false);
        }
        self.push_bits(x, width);
    }

    pub fn len_bits(&self) -> u64 {
        self.len
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

/// Reader over bytes produced by [`BitWriter`].
#[derive(Clone, Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        let byte = self
            .bytes
            .get((self.pos / 8) as usize)
            .ok_or_else(|| Error::InvalidArgument("bit stream exhausted".into()))?;
        let bit = byte & (0x80 >> (self.pos % 8)) != 0;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, width: u32) -> Result<u64> {
        let mut v = 0;
        for _ in 0..width {
            v = (v << 1) | u64::from(self.read_bit()?);
        }
        Ok(v)
    }

    pub fn read_gamma(&mut self) -> Result<u64> {
        let mut zeros = 0;
        while !self.read_bit()? {
            zeros += 1;
            if zeros > 63 {
                return Err(Error::InvalidArgument("malformed gamma code".into()));
            }
        }
        Ok((1 << zeros) | self.read_bits(zeros)?)
    }
}
