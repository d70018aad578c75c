//! The four shared structures every recursive sub-problem maps through:
//! the arrays `X` (y-coordinates in x order) and `Y` (x-coordinates in y
//! order), and a hierarchical bit-partition over `X` answering range
//! counting, range reporting, and range selection.
//!
//! One structure serves all three queries: the y-value range is halved per
//! level (most significant bit first) with a stable partition, one bit
//! vector per level. Counting and per-point reporting cost O(log n); axis-Y
//! selection runs a binary search over counts.

use crate::bits::{BitVector, BitsError};
use crate::points::{Coord, PointSet, QueryRect};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone)]
pub struct Globals {
    /// `X[i]` = y-coordinate of the point with x-coordinate `i`.
    x_to_y: Vec<Coord>,
    /// `Y[j]` = x-coordinate of the point with y-coordinate `j`.
    y_to_x: Vec<Coord>,
    /// One bit vector per value level, most significant bit first.
    levels: Vec<BitVector>,
    /// Zeros per level (stable partition boundary).
    zeros: Vec<usize>,
}

pub fn build_globals(ps: &PointSet) -> Globals {
    Globals::new(ps)
}

impl Globals {
    pub fn new(ps: &PointSet) -> Self {
        let x_to_y = ps.upsilon().to_vec();
        let y_to_x = ps.upsilon_inverse();
        let n = x_to_y.len();
        let bits_per_value = if n <= 1 { 0 } else { (usize::BITS - (n - 1).leading_zeros()) as usize };
        let mut levels = Vec::with_capacity(bits_per_value);
        let mut zeros = Vec::with_capacity(bits_per_value);
        let mut cur: Vec<Coord> = x_to_y.clone();
        for level in 0..bits_per_value {
            let mask = 1 << (bits_per_value - 1 - level);
            let bools: Vec<bool> = cur.iter().map(|&v| v & mask != 0).collect();
            let mut lows: Vec<Coord> = Vec::with_capacity(n);
            let mut highs: Vec<Coord> = Vec::new();
            for &v in &cur {
                if v & mask == 0 {
                    lows.push(v);
                } else {
                    highs.push(v);
                }
            }
            zeros.push(lows.len());
            lows.extend_from_slice(&highs);
            cur = lows;
            levels.push(BitVector::from_bools(&bools));
        }
        Globals {
            x_to_y,
            y_to_x,
            levels,
            zeros,
        }
    }

    pub fn n(&self) -> usize {
        self.x_to_y.len()
    }

    pub fn x_array(&self) -> &[Coord] {
        &self.x_to_y
    }

    pub fn y_array(&self) -> &[Coord] {
        &self.y_to_x
    }

    /// Count of values `< v` among positions `[l, r)`.
    fn count_less(&self, mut l: usize, mut r: usize, v: u64) -> usize {
        if l >= r {
            return 0;
        }
        if v >= 1u64 << self.levels.len() {
            return r - l;
        }
        let mut cnt = 0;
        for (level, bv) in self.levels.iter().enumerate() {
            let bit = (v >> (self.levels.len() - 1 - level)) & 1;
            let l0 = bv.rank(false, l);
            let r0 = bv.rank(false, r);
            if bit == 1 {
                cnt += r0 - l0;
                let z = self.zeros[level];
                l = z + (l - l0);
                r = z + (r - r0);
            } else {
                l = l0;
                r = r0;
            }
            if l >= r {
                break;
            }
        }
        cnt
    }

    /// Exact number of points inside `r` (inclusive bounds, sentinels allowed).
    pub fn range_count(&self, r: &QueryRect) -> usize {
        let n = self.n() as i64;
        let xl = r.x_lo.max(0);
        let xr = (r.x_hi + 1).min(n);
        let yl = r.y_lo.max(0);
        let yr = (r.y_hi + 1).min(n);
        if xl >= xr || yl >= yr {
            return 0;
        }
        self.count_less(xl as usize, xr as usize, yr as u64)
            - self.count_less(xl as usize, xr as usize, yl as u64)
    }

    /// Exactly the points inside `r`, in increasing x order.
    pub fn range_report(&self, r: &QueryRect) -> Vec<(Coord, Coord)> {
        let n = self.n() as i64;
        let xl = r.x_lo.max(0);
        let xr = (r.x_hi + 1).min(n);
        let yl = r.y_lo.max(0);
        let yr = (r.y_hi + 1).min(n);
        if xl >= xr || yl >= yr {
            return Vec::new();
        }
        let mut ys = Vec::new();
        if self.levels.is_empty() {
            // n == 1: the single point is (0, 0)
            ys.push(0 as Coord);
        } else {
            self.report_values(0, xl as usize, xr as usize, 0, yl as u64, yr as u64, &mut ys);
        }
        let mut out: Vec<(Coord, Coord)> = ys
            .into_iter()
            .map(|y| (self.y_to_x[y as usize], y))
            .collect();
        out.sort_unstable();
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn report_values(
        &self,
        level: usize,
        l: usize,
        r: usize,
        prefix: u64,
        v_lo: u64,
        v_hi: u64,
        out: &mut Vec<Coord>,
    ) {
        if l >= r {
            return;
        }
        let width = self.levels.len() - level;
        let node_lo = prefix << width;
        let node_hi = node_lo + (1u64 << width);
        if node_hi <= v_lo || node_lo >= v_hi {
            return;
        }
        if level == self.levels.len() {
            debug_assert_eq!(r - l, 1);
            out.push(node_lo as Coord);
            return;
        }
        let bv = &self.levels[level];
        let l0 = bv.rank(false, l);
        let r0 = bv.rank(false, r);
        let z = self.zeros[level];
        self.report_values(level + 1, l0, r0, prefix << 1, v_lo, v_hi, out);
        self.report_values(level + 1, z + (l - l0), z + (r - r0), (prefix << 1) | 1, v_lo, v_hi, out);
    }

    /// k-th smallest value (1-based) among `X[l..r)`.
    fn quantile_x(&self, mut l: usize, mut r: usize, mut k: usize) -> Option<u64> {
        if k == 0 || k > r.saturating_sub(l) {
            return None;
        }
        if self.levels.is_empty() {
            return Some(0);
        }
        let mut v = 0u64;
        for (level, bv) in self.levels.iter().enumerate() {
            let l0 = bv.rank(false, l);
            let r0 = bv.rank(false, r);
            let z0 = r0 - l0;
            if k <= z0 {
                l = l0;
                r = r0;
            } else {
                k -= z0;
                v |= 1u64 << (self.levels.len() - 1 - level);
                let z = self.zeros[level];
                l = z + (l - l0);
                r = z + (r - r0);
            }
        }
        Some(v)
    }

    /// Index `i1` in `[i, j]` such that `A[i1]` is the k-th smallest of
    /// `A[i..=j]`, where `A` is the axis array. `k` is 1-based; out-of-range
    /// indices or ordinals yield `None`.
    pub fn range_select(&self, axis: Axis, i: usize, j: usize, k: usize) -> Option<usize> {
        let n = self.n();
        if i > j || j >= n || k == 0 || k > j - i + 1 {
            return None;
        }
        match axis {
            Axis::X => {
                let v = self.quantile_x(i, j + 1, k)?;
                Some(self.y_to_x[v as usize] as usize)
            }
            Axis::Y => {
                // k-th smallest x among points with y in [i, j]: binary
                // search the x threshold by counting.
                let rect = |t: i64| QueryRect {
                    x_lo: 0,
                    x_hi: t,
                    y_lo: i as i64,
                    y_hi: j as i64,
                };
                let (mut lo, mut hi) = (0i64, n as i64 - 1);
                while lo < hi {
                    let mid = (lo + hi) / 2;
                    if self.range_count(&rect(mid)) >= k {
                        hi = mid;
                    } else {
                        lo = mid + 1;
                    }
                }
                Some(self.x_to_y[lo as usize] as usize)
            }
        }
    }

    pub fn to_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.n() as u64).to_le_bytes());
        for &y in &self.x_to_y {
            out.extend_from_slice(&y.to_le_bytes());
        }
        for &z in &self.zeros {
            out.extend_from_slice(&(z as u64).to_le_bytes());
        }
        for bv in &self.levels {
            bv.to_bytes(out);
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), BitsError> {
        let take = |at: usize| -> Result<u64, BitsError> {
            bytes
                .get(at..at + 8)
                .map(|s| u64::from_le_bytes(s.try_into().unwrap()))
                .ok_or(BitsError::Truncated { need: at + 8, have: bytes.len() })
        };
        let n = take(0)? as usize;
        // the x array alone needs 4n bytes; reject counts the input cannot hold
        if n > u32::MAX as usize || bytes.len() < 8 + 4 * n {
            return Err(BitsError::Truncated { need: 8 + 4 * n, have: bytes.len() });
        }
        let mut at = 8;
        let mut x_to_y = Vec::with_capacity(n);
        for _ in 0..n {
            let v = bytes
                .get(at..at + 4)
                .map(|s| u32::from_le_bytes(s.try_into().unwrap()))
                .ok_or(BitsError::Truncated { need: at + 4, have: bytes.len() })?;
            if v as usize >= n {
                return Err(BitsError::LengthMismatch { bits: v as u64, words: n });
            }
            x_to_y.push(v);
            at += 4;
        }
        let bits_per_value = if n <= 1 { 0 } else { (usize::BITS - (n - 1).leading_zeros()) as usize };
        let mut zeros = Vec::with_capacity(bits_per_value);
        for _ in 0..bits_per_value {
            zeros.push(take(at)? as usize);
            at += 8;
        }
        let mut levels = Vec::with_capacity(bits_per_value);
        for _ in 0..bits_per_value {
            let (bv, used) = BitVector::from_bytes(&bytes[at..])?;
            at += used;
            levels.push(bv);
        }
        // rebuild Y from X, validating X is a permutation as we go
        let mut y_to_x = vec![u32::MAX; n];
        for (x, &y) in x_to_y.iter().enumerate() {
            if y_to_x[y as usize] != u32::MAX {
                return Err(BitsError::LengthMismatch { bits: y as u64, words: n });
            }
            y_to_x[y as usize] = x as u32;
        }
        Ok((
            Globals {
                x_to_y,
                y_to_x,
                levels,
                zeros,
            },
            at,
        ))
    }

    pub fn serialized_len(&self) -> usize {
        8 + self.x_to_y.len() * 4
            + self.zeros.len() * 8
            + self.levels.iter().map(|b| b.serialized_len()).sum::<usize>()
    }

    /// Bits of the level vectors plus their directories (space report).
    pub fn structure_bits(&self) -> usize {
        self.levels
            .iter()
            .map(|b| b.len() + b.directory_bits())
            .sum()
    }
}
