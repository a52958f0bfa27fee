//! Bit-packed binary codes, 64 bits per machine word.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Row-major matrix of binary codes. Bit `j` of a row lives in word `j / 64`
/// at position `j % 64` (LSB first). Bits past `bits` in the last word of a
/// row are always zero, so packed words can be compared and hashed directly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    bits: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

/// Borrowed view of one packed code row.
#[derive(Debug, Clone, Copy)]
pub struct BitCodeRef<'a> {
    pub(crate) bits: usize,
    pub(crate) words: &'a [u64],
}

impl BitMatrix {
    pub fn zeros(rows: usize, bits: usize) -> Self {
        let words_per_row = bits.div_ceil(64);
        BitMatrix {
            rows,
            bits,
            words_per_row,
            words: vec![0u64; rows * words_per_row],
        }
    }

    /// Reassemble from raw packed words (e.g. read from a file).
    /// Rejects payloads of the wrong length or with nonzero tail bits.
    pub fn from_words(rows: usize, bits: usize, words: Vec<u64>) -> Result<Self> {
        let words_per_row = bits.div_ceil(64);
        if words.len() != rows * words_per_row {
            return Err(Error::invalid(format!(
                "bit matrix payload: expected {} words, found {}",
                rows * words_per_row,
                words.len()
            )));
        }
        let m = BitMatrix {
            rows,
            bits,
            words_per_row,
            words,
        };
        if !m.tail_bits_zero() {
            return Err(Error::invalid(
                "bit matrix payload has nonzero bits past the declared width",
            ));
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, row: usize, bit: usize) -> bool {
        debug_assert!(row < self.rows && bit < self.bits);
        let w = self.words[row * self.words_per_row + bit / 64];
        (w >> (bit % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, row: usize, bit: usize, value: bool) {
        assert!(row < self.rows && bit < self.bits);
        let w = &mut self.words[row * self.words_per_row + bit / 64];
        if value {
            *w |= 1u64 << (bit % 64);
        } else {
            *w &= !(1u64 << (bit % 64));
        }
    }

    #[inline]
    pub fn row_words(&self, row: usize) -> &[u64] {
        let start = row * self.words_per_row;
        &self.words[start..start + self.words_per_row]
    }

    pub fn row(&self, row: usize) -> BitCodeRef<'_> {
        BitCodeRef {
            bits: self.bits,
            words: self.row_words(row),
        }
    }

    /// Copy the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> BitMatrix {
        let mut out = BitMatrix::zeros(indices.len(), self.bits);
        for (dst, &src) in indices.iter().enumerate() {
            let s = src * self.words_per_row;
            let d = dst * self.words_per_row;
            out.words[d..d + self.words_per_row]
                .copy_from_slice(&self.words[s..s + self.words_per_row]);
        }
        out
    }

    /// Expand to a dense 0.0/1.0 matrix for use as network input.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.bits));
        for i in 0..self.rows {
            let words = self.row_words(i);
            for j in 0..self.bits {
                if (words[j / 64] >> (j % 64)) & 1 == 1 {
                    out[[i, j]] = 1.0;
                }
            }
        }
        out
    }

    pub fn count_ones_in_row(&self, row: usize) -> u32 {
        self.row_words(row).iter().map(|w| w.count_ones()).sum()
    }

    /// Fraction of rows with bit `j` set.
    pub fn column_mean(&self, bit: usize) -> f64 {
        if self.rows == 0 {
            return 0.0;
        }
        let ones = (0..self.rows).filter(|&i| self.get(i, bit)).count();
        ones as f64 / self.rows as f64
    }

    pub fn tail_bits_zero(&self) -> bool {
        let used = self.bits % 64;
        if used == 0 || self.words_per_row == 0 {
            return true;
        }
        let mask = !((1u64 << used) - 1);
        (0..self.rows).all(|i| self.row_words(i)[self.words_per_row - 1] & mask == 0)
    }
}

impl<'a> BitCodeRef<'a> {
    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words(&self) -> &'a [u64] {
        self.words
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_get_roundtrip() {
        let mut m = BitMatrix::zeros(3, 70);
        m.set(0, 0, true);
        m.set(1, 63, true);
        m.set(2, 69, true);
        assert!(m.get(0, 0));
        assert!(m.get(1, 63));
        assert!(m.get(2, 69));
        assert!(!m.get(0, 1));
        assert!(m.tail_bits_zero());
    }

    #[test]
    fn from_words_rejects_dirty_tail() {
        // 65 bits -> 2 words per row; bit 65 of word 1 is out of range.
        let words = vec![0u64, 1u64 << 2];
        let err = BitMatrix::from_words(1, 65, words).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn from_words_rejects_bad_length() {
        assert!(BitMatrix::from_words(2, 64, vec![0u64; 3]).is_err());
    }

    #[test]
    fn dense_matches_bits() {
        let mut m = BitMatrix::zeros(2, 5);
        m.set(0, 1, true);
        m.set(1, 4, true);
        let d = m.to_dense();
        assert_eq!(d[[0, 1]], 1.0);
        assert_eq!(d[[1, 4]], 1.0);
        assert_eq!(d.sum(), 2.0);
    }

    #[test]
    fn select_rows_copies_in_order() {
        let mut m = BitMatrix::zeros(3, 8);
        m.set(0, 0, true);
        m.set(1, 1, true);
        m.set(2, 2, true);
        let s = m.select_rows(&[2, 0]);
        assert_eq!(s.rows(), 2);
        assert!(s.get(0, 2));
        assert!(s.get(1, 0));
    }
}
