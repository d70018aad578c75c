//! Byte-packed bit vectors with rank/select, plus unary-coded integer streams.
//!
//! This is the substrate for every payload bit-string in the 2-sided index.
//! The rank directory is two-level (superblock totals plus per-word offsets)
//! and select uses sampled hints narrowing a superblock search; the whole
//! directory stays under 0.5 bits per data bit.

use thiserror::Error;

const WORD: usize = 64;
/// Bits per superblock; one u64 cumulative count each (0.125 bits/bit).
const SUPER: usize = 512;
/// One select hint per this many occurrences, per side.
const SELECT_SAMPLE: usize = 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BitsError {
    #[error("byte buffer too short: need {need}, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("declared bit length {bits} does not fit {words} words")]
    LengthMismatch { bits: u64, words: usize },
    #[error("nonzero padding past the declared bit length")]
    DirtyPadding,
    #[error("unary stream does not terminate with a 1 bit")]
    UnaryOverrun,
}

/// Append-only bit buffer; freeze into a [`BitVector`] when done.
#[derive(Debug, Default, Clone)]
pub struct BitBuf {
    words: Vec<u64>,
    len: usize,
}

impl BitBuf {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bit: bool) {
        if self.len % WORD == 0 {
            self.words.push(0);
        }
        if bit {
            *self.words.last_mut().unwrap() |= 1u64 << (self.len % WORD);
        }
        self.len += 1;
    }

    /// Append `k` zeros followed by a one: the unary code of `k`.
    pub fn push_unary(&mut self, k: u64) {
        for _ in 0..k {
            self.push(false);
        }
        self.push(true);
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn freeze(self) -> BitVector {
        BitVector::from_words(self.words, self.len)
    }
}

/// Immutable bit vector with O(1) rank and near-O(1) select on both sides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitVector {
    words: Vec<u64>,
    len: usize,
    // rank1 at each superblock boundary, plus a final total
    super_ranks: Vec<u64>,
    // rank1 at each word boundary relative to its superblock
    word_ranks: Vec<u16>,
    // position of every SELECT_SAMPLE-th 1 (resp. 0), as superblock index
    hints1: Vec<u32>,
    hints0: Vec<u32>,
}

impl BitVector {
    pub fn from_bools(bits: &[bool]) -> Self {
        let mut buf = BitBuf::new();
        for &b in bits {
            buf.push(b);
        }
        buf.freeze()
    }

    pub fn from_words(mut words: Vec<u64>, len: usize) -> Self {
        let needed = len.div_ceil(WORD);
        assert!(words.len() == needed, "word count {} for {} bits", words.len(), len);
        // mask tail so equality and serialization are canonical
        if len % WORD != 0 {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << (len % WORD)) - 1;
            }
        }
        let wps = SUPER / WORD;
        let n_super = words.len().div_ceil(wps);
        let mut super_ranks = vec![0u64; n_super + 1];
        let mut word_ranks = vec![0u16; words.len()];
        let mut total: u64 = 0;
        for (w, &word) in words.iter().enumerate() {
            if w % wps == 0 {
                super_ranks[w / wps] = total;
            }
            word_ranks[w] = (total - super_ranks[w / wps]) as u16;
            total += word.count_ones() as u64;
        }
        super_ranks[n_super] = total;

        // hints{1,0}[t] = superblock holding the (t * SELECT_SAMPLE + 1)-th occurrence
        let mut hints1 = Vec::new();
        let mut hints0 = Vec::new();
        for s in 0..n_super {
            let end = ((s + 1) * SUPER).min(len) as u64;
            let ones_end = super_ranks[s + 1];
            let zeros_end = end - ones_end;
            while (hints1.len() * SELECT_SAMPLE + 1) as u64 <= ones_end {
                hints1.push(s as u32);
            }
            while (hints0.len() * SELECT_SAMPLE + 1) as u64 <= zeros_end {
                hints0.push(s as u32);
            }
        }
        BitVector {
            words,
            len,
            super_ranks,
            word_ranks,
            hints1,
            hints0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.words[i / WORD] >> (i % WORD)) & 1 == 1
    }

    /// Number of `side` bits strictly before position `i`.
    pub fn rank(&self, side: bool, i: usize) -> usize {
        assert!(i <= self.len, "rank position {i} out of range {}", self.len);
        let r1 = self.rank1(i);
        if side {
            r1
        } else {
            i - r1
        }
    }

    fn rank1(&self, i: usize) -> usize {
        let w = i / WORD;
        if w == self.words.len() {
            return *self.super_ranks.last().unwrap() as usize;
        }
        let base = self.super_ranks[w / (SUPER / WORD)] as usize + self.word_ranks[w] as usize;
        let partial = if i % WORD == 0 {
            0
        } else {
            (self.words[w] & ((1u64 << (i % WORD)) - 1)).count_ones() as usize
        };
        base + partial
    }

    /// Total number of `side` bits.
    pub fn count(&self, side: bool) -> usize {
        self.rank(side, self.len)
    }

    /// Position of the `j`-th (1-based) `side` bit, or `None` past the end.
    pub fn select(&self, side: bool, j: usize) -> Option<usize> {
        if j == 0 || j > self.count(side) {
            return None;
        }
        let target = j - 1; // rank strictly before the answer
        let hints = if side { &self.hints1 } else { &self.hints0 };
        let mut lo = hints.get(target / SELECT_SAMPLE).map_or(0, |&h| h as usize);
        let mut hi = hints
            .get(target / SELECT_SAMPLE + 1)
            .map_or(self.super_ranks.len() - 1, |&h| h as usize + 1);
        hi = hi.min(self.super_ranks.len() - 1);
        // superblock binary search: last block whose prefix rank is <= target
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            let r = self.side_rank_at_super(side, mid);
            if r <= target {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        let mut rank = self.side_rank_at_super(side, lo);
        let first_word = lo * (SUPER / WORD);
        let last_word = ((lo + 1) * (SUPER / WORD)).min(self.words.len());
        for w in first_word..last_word {
            let word = if side { self.words[w] } else { !self.words[w] };
            let cnt = word.count_ones() as usize;
            if rank + cnt > target {
                return Some(w * WORD + select_in_word(word, target - rank));
            }
            rank += cnt;
        }
        None
    }

    fn side_rank_at_super(&self, side: bool, s: usize) -> usize {
        let ones = self.super_ranks[s] as usize;
        if side {
            ones
        } else {
            (s * SUPER).min(self.len) - ones
        }
    }

    /// Bits of auxiliary directory per the space report.
    pub fn directory_bits(&self) -> usize {
        self.super_ranks.len() * 64
            + self.word_ranks.len() * 16
            + (self.hints1.len() + self.hints0.len()) * 32
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Little-endian serialization: bit length prefix, then 64-bit words.
    pub fn to_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.len as u64).to_le_bytes());
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }

    pub fn serialized_len(&self) -> usize {
        8 + self.words.len() * 8
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), BitsError> {
        if bytes.len() < 8 {
            return Err(BitsError::Truncated { need: 8, have: bytes.len() });
        }
        let bits = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        if bits > (usize::MAX / 2) as u64 {
            return Err(BitsError::LengthMismatch { bits, words: 0 });
        }
        let n_words = (bits as usize).div_ceil(WORD);
        let need = 8 + n_words * 8;
        if bytes.len() < need {
            return Err(BitsError::Truncated { need, have: bytes.len() });
        }
        let mut words = Vec::with_capacity(n_words);
        for i in 0..n_words {
            words.push(u64::from_le_bytes(bytes[8 + i * 8..16 + i * 8].try_into().unwrap()));
        }
        // reject non-canonical padding so serialization is bijective
        let len = bits as usize;
        if len % WORD != 0 {
            if let Some(&last) = words.last() {
                if last & !((1u64 << (len % WORD)) - 1) != 0 {
                    return Err(BitsError::DirtyPadding);
                }
            }
        }
        Ok((BitVector::from_words(words, len), need))
    }
}

/// Position of the `r`-th (0-based) set bit within `word`; caller must know it exists.
fn select_in_word(word: u64, r: usize) -> usize {
    let mut seen = 0usize;
    for byte in 0..8 {
        let b = (word >> (byte * 8)) & 0xff;
        let cnt = b.count_ones() as usize;
        if seen + cnt > r {
            let mut rem = r - seen;
            for bit in 0..8 {
                if (b >> bit) & 1 == 1 {
                    if rem == 0 {
                        return byte * 8 + bit;
                    }
                    rem -= 1;
                }
            }
        }
        seen += cnt;
    }
    unreachable!("select_in_word past popcount");
}

/// Nonnegative integers coded as `0^k 1` each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnaryStream {
    bits: BitVector,
}

impl UnaryStream {
    pub fn encode(ks: &[u64]) -> Self {
        let mut buf = BitBuf::new();
        for &k in ks {
            buf.push_unary(k);
        }
        UnaryStream { bits: buf.freeze() }
    }

    pub fn from_bits(bits: BitVector) -> Self {
        UnaryStream { bits }
    }

    pub fn bits(&self) -> &BitVector {
        &self.bits
    }

    /// Number of encoded integers.
    pub fn count(&self) -> usize {
        self.bits.count(true)
    }

    pub fn bit_len(&self) -> usize {
        self.bits.len()
    }

    pub fn decode(&self) -> Result<Vec<u64>, BitsError> {
        let mut out = Vec::with_capacity(self.count());
        let mut run = 0u64;
        for i in 0..self.bits.len() {
            if self.bits.get(i) {
                out.push(run);
                run = 0;
            } else {
                run += 1;
            }
        }
        if run != 0 {
            return Err(BitsError::UnaryOverrun);
        }
        Ok(out)
    }

    /// `j`-th (1-based) encoded value, via two selects.
    pub fn value(&self, j: usize) -> Option<u64> {
        let end = self.bits.select(true, j)?;
        let start = if j == 1 {
            0
        } else {
            self.bits.select(true, j - 1)? + 1
        };
        Some((end - start) as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn bv(s: &str) -> BitVector {
        BitVector::from_bools(&s.chars().map(|c| c == '1').collect::<Vec<_>>())
    }

    #[test]
    fn empty_vector() {
        let v = BitVector::from_bools(&[]);
        assert_eq!(v.len(), 0);
        assert_eq!(v.rank(true, 0), 0);
        assert_eq!(v.select(true, 1), None);
    }

    #[test]
    fn small_examples() {
        let v = bv("101101");
        assert_eq!(v.rank(true, 6), 4);
        assert_eq!(v.rank(true, 3), 2);
        assert_eq!(v.select(true, 3), Some(3));
        assert_eq!(bv("0001").select(true, 1), Some(3));
        for i in 0..=6 {
            assert_eq!(v.rank(false, i) + v.rank(true, i), i);
        }
    }

    #[test]
    fn rank_select_match_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &n in &[1usize, 63, 64, 65, 511, 512, 513, 4097] {
            let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.37)).collect();
            let v = BitVector::from_bools(&bits);
            for side in [false, true] {
                let mut count = 0;
                for i in 0..n {
                    assert_eq!(v.rank(side, i), count, "rank({side},{i}) n={n}");
                    if bits[i] == side {
                        count += 1;
                        assert_eq!(v.select(side, count), Some(i), "select({side},{count}) n={n}");
                    }
                }
                assert_eq!(v.count(side), count);
                assert_eq!(v.select(side, count + 1), None);
            }
        }
    }

    #[test]
    fn million_bit_popcount() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bits: Vec<bool> = (0..1_000_000).map(|_| rng.random_bool(0.5)).collect();
        let v = BitVector::from_bools(&bits);
        let direct = bits.iter().filter(|&&b| b).count();
        assert_eq!(v.rank(true, v.len()), direct);
        // spot-check select against true positions
        let mut ones = 0;
        for (i, &b) in bits.iter().enumerate() {
            if b {
                ones += 1;
                if ones % 4999 == 0 {
                    assert_eq!(v.select(true, ones), Some(i));
                }
            }
        }
    }

    #[test]
    fn directory_overhead_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &n in &[64usize, 1000, 10_000, 1_000_000] {
            let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let v = BitVector::from_bools(&bits);
            assert!(
                v.directory_bits() * 2 <= n + 512,
                "directory {} bits for {} data bits",
                v.directory_bits(),
                n
            );
        }
    }

    #[test]
    fn unary_examples_and_roundtrip() {
        assert_eq!(UnaryStream::encode(&[]).bit_len(), 0);
        let s = UnaryStream::encode(&[0, 2, 1]);
        assert_eq!(s.bit_len(), 6);
        let got: Vec<bool> = s.bits().iter().collect();
        assert_eq!(got, vec![true, false, false, true, false, true]);
        assert_eq!(s.decode().unwrap(), vec![0, 2, 1]);
        assert_eq!(s.value(1), Some(0));
        assert_eq!(s.value(2), Some(2));
        assert_eq!(s.value(3), Some(1));

        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..1000 {
            let ks: Vec<u64> = (0..rng.random_range(0..50)).map(|_| rng.random_range(0..20)).collect();
            let s = UnaryStream::encode(&ks);
            assert_eq!(s.bit_len() as u64, ks.iter().sum::<u64>() + ks.len() as u64);
            assert_eq!(s.decode().unwrap(), ks);
        }
    }

    #[test]
    fn unary_overrun_detected() {
        let s = UnaryStream::from_bits(bv("0100"));
        assert_eq!(s.decode(), Err(BitsError::UnaryOverrun));
    }

    #[test]
    fn serialization_roundtrip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &n in &[0usize, 1, 64, 65, 130] {
            let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let v = BitVector::from_bools(&bits);
            let mut bytes = Vec::new();
            v.to_bytes(&mut bytes);
            assert_eq!(bytes.len(), v.serialized_len());
            let (back, used) = BitVector::from_bytes(&bytes).unwrap();
            assert_eq!(used, bytes.len());
            assert_eq!(back, v);
        }
        assert!(matches!(
            BitVector::from_bytes(&[1, 2, 3]),
            Err(BitsError::Truncated { .. })
        ));
        let mut bytes = Vec::new();
        bv("1").to_bytes(&mut bytes);
        bytes.truncate(9);
        assert!(matches!(BitVector::from_bytes(&bytes), Err(BitsError::Truncated { .. })));
        // dirty padding: declare 1 bit but set bit 5
        let mut bad = 1u64.to_le_bytes().to_vec();
        bad.extend_from_slice(&(1u64 << 5 | 1).to_le_bytes());
        assert_eq!(BitVector::from_bytes(&bad).unwrap_err(), BitsError::DirtyPadding);
    }

    proptest::proptest! {
        #[test]
        fn rank_select_inverse_laws(bits in proptest::collection::vec(proptest::bool::ANY, 0..600)) {
            let v = BitVector::from_bools(&bits);
            for side in [false, true] {
                let total = v.count(side);
                for j in 1..=total {
                    let pos = v.select(side, j).unwrap();
                    proptest::prop_assert_eq!(v.rank(side, pos), j - 1);
                    proptest::prop_assert_eq!(v.get(pos), side);
                }
                for i in 0..bits.len() {
                    if v.get(i) == side {
                        let r = v.rank(side, i);
                        proptest::prop_assert_eq!(v.select(side, r + 1), Some(i));
                    }
                }
            }
        }
    }
}
