//! Bit-packed ±1 codes and Hamming distance.
//!
//! Bit `c` of a code lives in word `c / 64` at position `c % 64`; a set bit
//! means +1, a clear bit −1. Padding bits past `k` are always zero.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{EshError, Result};

const CODES_MAGIC: &[u8; 4] = b"ESHB";
const CODES_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    count: usize,
    bits: usize,
    words_per_code: usize,
    words: Vec<u64>,
}

pub fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

fn padding_mask(bits: usize) -> u64 {
    match bits % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

impl PackedCodes {
    pub fn zeros(count: usize, bits: usize) -> Result<Self> {
        if bits == 0 {
            return Err(EshError::InvalidArgument("codes need at least one bit".into()));
        }
        let wpc = words_for(bits);
        Ok(Self { count, bits, words_per_code: wpc, words: vec![0; count * wpc] })
    }

    /// Wraps raw words, rejecting nonzero padding.
    pub fn from_words(count: usize, bits: usize, words: Vec<u64>) -> Result<Self> {
        let mut codes = Self::zeros(0, bits)?;
        if words.len() != count * codes.words_per_code {
            return Err(EshError::Shape(format!(
                "{count} codes of {bits} bits need {} words, got {}",
                count * codes.words_per_code,
                words.len()
            )));
        }
        let mask = padding_mask(bits);
        let wpc = codes.words_per_code;
        if words.chunks_exact(wpc).any(|c| c[wpc - 1] & !mask != 0) {
            return Err(EshError::Corrupt("padding bits are set".into()));
        }
        codes.count = count;
        codes.words = words;
        Ok(codes)
    }

    /// Packs the signs of an n×k matrix; `v >= 0` becomes a set bit.
    pub fn from_signs(m: &DMatrix<f64>) -> Result<Self> {
        let (n, k) = m.shape();
        let mut codes = Self::zeros(n, k)?;
        for i in 0..n {
            let code = codes.code_mut(i);
            for c in 0..k {
                if m[(i, c)] >= 0.0 {
                    code[c / 64] |= 1 << (c % 64);
                }
            }
        }
        Ok(codes)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words_per_code(&self) -> usize {
        self.words_per_code
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn code(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_code..(i + 1) * self.words_per_code]
    }

    fn code_mut(&mut self, i: usize) -> &mut [u64] {
        &mut self.words[i * self.words_per_code..(i + 1) * self.words_per_code]
    }

    pub fn push(&mut self, code: &[u64]) -> Result<()> {
        if code.len() != self.words_per_code {
            return Err(EshError::DimensionMismatch { expected: self.words_per_code, actual: code.len() });
        }
        if code[self.words_per_code - 1] & !padding_mask(self.bits) != 0 {
            return Err(EshError::InvalidArgument("padding bits are set".into()));
        }
        self.words.extend_from_slice(code);
        self.count += 1;
        Ok(())
    }

    /// `+1` or `-1` for bit `c` of code `i`.
    pub fn sign(&self, i: usize, c: usize) -> f64 {
        if self.code(i)[c / 64] >> (c % 64) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    /// n×k matrix of ±1.
    pub fn unpack(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.count, self.bits, |i, c| self.sign(i, c))
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut words = Vec::with_capacity(indices.len() * self.words_per_code);
        for &i in indices {
            words.extend_from_slice(self.code(i));
        }
        Self { count: indices.len(), bits: self.bits, words_per_code: self.words_per_code, words }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(21 + self.words.len() * 8);
        out.extend_from_slice(CODES_MAGIC);
        out.push(CODES_VERSION);
        out.extend_from_slice(&(self.count as u64).to_le_bytes());
        out.extend_from_slice(&(self.bits as u64).to_le_bytes());
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        if buf.len() < 21 || &buf[..4] != CODES_MAGIC {
            return Err(EshError::Corrupt("missing ESHB header".into()));
        }
        if buf[4] != CODES_VERSION {
            return Err(EshError::Version(buf[4]));
        }
        let n = u64::from_le_bytes(buf[5..13].try_into().unwrap()) as usize;
        let k = u64::from_le_bytes(buf[13..21].try_into().unwrap()) as usize;
        if k == 0 {
            return Err(EshError::Corrupt("zero-bit codes".into()));
        }
        let body = &buf[21..];
        let expected = n.checked_mul(words_for(k)).and_then(|w| w.checked_mul(8));
        if expected != Some(body.len()) {
            return Err(EshError::Corrupt(format!("body of {} bytes does not hold {n} codes of {k} bits", body.len())));
        }
        let words = body.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::from_words(n, k, words)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| EshError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        File::open(path)
            .and_then(|f| BufReader::new(f).read_to_end(&mut buf))
            .map_err(|e| EshError::io(path, e))?;
        Self::decode(&buf)
    }

    /// One line per code, `k` comma-separated `1`/`-1` values.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for i in 0..self.count {
            let line: Vec<&str> = (0..self.bits).map(|c| if self.sign(i, c) > 0.0 { "1" } else { "-1" }).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| EshError::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| EshError::io(path, e))
    }

    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| EshError::Parse { line: lineno + 1, message: e.to_string() })?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|f| match f.trim() {
                    "1" | "+1" => Ok(1.0),
                    "-1" => Ok(-1.0),
                    other => Err(EshError::Parse { line: lineno + 1, message: format!("bad code value {other:?}") }),
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(EshError::Shape("ragged code rows".into()));
        }
        Self::from_signs(&DMatrix::from_fn(rows.len(), k, |i, c| rows[i][c]))
    }
}

/// Number of differing bits between two packed codes.
pub fn hamming_distance(a: &[u64], b: &[u64]) -> Result<u32> {
    if a.len() != b.len() {
        return Err(EshError::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    Ok(hamming_unchecked(a, b))
}

#[inline]
pub(crate) fn hamming_unchecked(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sign_matrix(n: usize, k: usize, bits: &[bool]) -> DMatrix<f64> {
        DMatrix::from_fn(n, k, |i, c| if bits[i * k + c] { 1.0 } else { -1.0 })
    }

    #[test]
    fn packing_layout() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 0.0]);
        let codes = PackedCodes::from_signs(&m).unwrap();
        assert_eq!(codes.words(), &[0b101]);
    }

    #[test]
    fn padding_is_checked() {
        assert!(PackedCodes::from_words(1, 3, vec![0b1000]).is_err());
        assert!(PackedCodes::from_words(1, 64, vec![u64::MAX]).is_ok());
    }

    #[test]
    fn hamming_extremes() {
        let a = [0xDEAD_BEEFu64, 0x3];
        assert_eq!(hamming_distance(&a, &a).unwrap(), 0);
        let comp = [!a[0], !a[1] & 0x3];
        assert_eq!(hamming_distance(&a, &comp).unwrap(), 66);
        assert!(hamming_distance(&a, &a[..1]).is_err());
    }

    #[test]
    fn binary_file_rejects_truncation() {
        let codes = PackedCodes::from_signs(&DMatrix::from_element(3, 70, 1.0)).unwrap();
        let buf = codes.encode();
        assert_eq!(PackedCodes::decode(&buf).unwrap(), codes);
        assert!(PackedCodes::decode(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn csv_export_reads_back() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 1.0, -1.0, -1.0, 1.0]);
        let codes = PackedCodes::from_signs(&m).unwrap();
        let mut buf = Vec::new();
        codes.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "1,-1,1\n-1,-1,1\n");
        assert_eq!(PackedCodes::read_csv(&buf[..]).unwrap(), codes);
    }

    proptest! {
        #[test]
        fn pack_unpack_bijection(n in 1usize..6, k in 1usize..150, seed in any::<u64>()) {
            let bits: Vec<bool> = (0..n * k).map(|i| (seed.rotate_left((i % 64) as u32) ^ (i as u64 * 0x9E37_79B9)) & 1 == 1).collect();
            let m = sign_matrix(n, k, &bits);
            let codes = PackedCodes::from_signs(&m).unwrap();
            prop_assert_eq!(codes.unpack(), m);
            prop_assert_eq!(PackedCodes::decode(&codes.encode()).unwrap(), codes);
        }

        #[test]
        fn hamming_matches_bit_loop(k in 1usize..200, a in proptest::collection::vec(any::<bool>(), 200), b in proptest::collection::vec(any::<bool>(), 200)) {
            let m = sign_matrix(2, k, &a[..k].iter().chain(&b[..k]).copied().collect::<Vec<_>>());
            let codes = PackedCodes::from_signs(&m).unwrap();
            let naive = (0..k).filter(|&c| a[c] != b[c]).count() as u32;
            prop_assert_eq!(hamming_distance(codes.code(0), codes.code(1)).unwrap(), naive);
        }
    }
}
