//! Binary-reflected Gray code, most-significant bit first.

use crate::{Error, Result};

/// Gray code of `n` on `bits` bits.
pub fn gray_encode(n: u64, bits: u32) -> Result<Vec<u8>> {
    if bits == 0 || bits > 63 {
        return Err(Error::domain(format!("bit width {bits} outside 1..=63")));
    }
    if n >= 1u64 << bits {
        return Err(Error::domain(format!("{n} does not fit in {bits} bits")));
    }
    let g = n ^ (n >> 1);
    Ok((0..bits).rev().map(|b| ((g >> b) & 1) as u8).collect())
}

/// Integer whose Gray code is `code`.
pub fn gray_decode(code: &[u8]) -> Result<u64> {
    if code.is_empty() {
        return Err(Error::domain("empty Gray code"));
    }
    if code.len() > 63 {
        return Err(Error::domain("Gray code longer than 63 bits"));
    }
    // Binary bit i is the running XOR of Gray bits 0..=i.
    let mut n = 0u64;
    let mut acc = 0u8;
    for &bit in code {
        if bit > 1 {
            return Err(Error::domain(format!("non-binary digit {bit} in Gray code")));
        }
        acc ^= bit;
        n = (n << 1) | acc as u64;
    }
    Ok(n)
}
