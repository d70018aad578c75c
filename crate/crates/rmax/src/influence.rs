//! Lines of influence for 2-sided range maxima.
//!
//! In the canonical orientation (query open to the top and left, closed
//! corner at the bottom right) every point `p` owns a horizontal semi-open
//! segment starting at `p`: the set of query corners on `p`'s row whose
//! answer is `p`. A 2-sided query then reduces to shooting a vertical ray
//! upward and taking the first segment hit. The segment geometry can be
//! rebuilt from the points alone plus a short bit code: one case bit per
//! point and a unary kill count per non-empty point.
//!
//! Segments cover the half-open column range `[x_start, x_end)`.

use std::collections::BTreeMap;

use crate::bits::{BitBuf, BitVector, BitsError, UnaryStream};
use crate::points::{Coord, PointSet};
use thiserror::Error;

/// Sentinel x_end for a segment that is never terminated.
pub const X_END_INF: Coord = Coord::MAX;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InfluenceError {
    #[error("case bits carry {got} points, expected {expected}")]
    CaseBitCountMismatch { expected: usize, got: usize },
    #[error("unary stream holds {got} kill counts, expected {expected}")]
    KillCountMismatch { expected: usize, got: usize },
    #[error("kill count {k} at x={x} exceeds the {live} live segments below")]
    KillTooDeep { x: Coord, k: u64, live: usize },
    #[error("points must arrive in strictly increasing x order")]
    UnsortedPoints,
    #[error("duplicate y coordinate {0}")]
    DuplicateY(Coord),
    #[error(transparent)]
    Bits(#[from] BitsError),
}

/// One horizontal line of influence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InfluenceSegment {
    /// Owning point's x-coordinate (its index in x order).
    pub owner: Coord,
    pub y: Coord,
    pub x_start: Coord,
    /// One past the last covered column; [`X_END_INF`] if never terminated.
    pub x_end: Coord,
    pub empty: bool,
}

impl InfluenceSegment {
    pub fn covers(&self, x: Coord) -> bool {
        !self.empty && self.x_start <= x && x < self.x_end
    }
}

/// All influence segments of an instance, ordered by `x_start`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfluenceSet {
    segments: Vec<InfluenceSegment>,
    redundant: usize,
}

impl InfluenceSet {
    pub fn segments(&self) -> &[InfluenceSegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Number of redundant points (empty segments).
    pub fn redundant(&self) -> usize {
        self.redundant
    }
}

/// Count of redundant points, for symmetry with the other operations.
pub fn count_redundant(inf: &InfluenceSet) -> usize {
    inf.redundant()
}

/// Internal sweep shared by build, encode, and decode. Priorities drive the
/// build/encode sweep; the decode sweep replays recorded decisions instead.
struct Sweep {
    // live segments keyed by y; value is the segment index
    live: BTreeMap<Coord, usize>,
    segments: Vec<InfluenceSegment>,
    redundant: usize,
}

impl Sweep {
    fn new() -> Self {
        Sweep {
            live: BTreeMap::new(),
            segments: Vec::new(),
            redundant: 0,
        }
    }

    fn push_empty(&mut self, x: Coord, y: Coord) {
        self.segments.push(InfluenceSegment {
            owner: x,
            y,
            x_start: x,
            x_end: x,
            empty: true,
        });
        self.redundant += 1;
    }

    /// Terminate the `kills` live segments immediately below y, then start a
    /// segment at (x, y).
    fn push_alive(&mut self, x: Coord, y: Coord, kills: u64) -> Result<(), InfluenceError> {
        for _ in 0..kills {
            let below = self.live.range(..y).next_back();
            let (&ky, &idx) = below.ok_or(InfluenceError::KillTooDeep {
                x,
                k: kills,
                live: 0,
            })?;
            self.segments[idx].x_end = x;
            self.live.remove(&ky);
        }
        let idx = self.segments.len();
        self.segments.push(InfluenceSegment {
            owner: x,
            y,
            x_start: x,
            x_end: X_END_INF,
            empty: false,
        });
        self.live.insert(y, idx);
        Ok(())
    }

    fn finish(self) -> InfluenceSet {
        InfluenceSet {
            segments: self.segments,
            redundant: self.redundant,
        }
    }
}

/// Decision the priority-driven sweep makes at one point: whether its
/// influence is non-empty, and how many live segments it terminates.
fn sweep_step(ps: &PointSet, sweep: &Sweep, x: Coord) -> (bool, u64) {
    let y = ps.y_of(x);
    let p = ps.priority_of(x);
    // lowest live segment above y: the only candidate that can beat p at its corner
    if let Some((_, &up_idx)) = sweep.live.range(y + 1..).next() {
        let up_owner = sweep.segments[up_idx].owner;
        if ps.priority_of(up_owner) > p {
            return (false, 0);
        }
    }
    // non-empty: the consecutive run below with lower priority dies
    let mut kills = 0u64;
    for (_, &idx) in sweep.live.range(..y).rev() {
        if ps.priority_of(sweep.segments[idx].owner) < p {
            kills += 1;
        } else {
            break;
        }
    }
    (true, kills)
}

/// Computes the influence segments of `ps` by a left-to-right sweep.
pub fn build_influence(ps: &PointSet) -> InfluenceSet {
    let mut sweep = Sweep::new();
    for x in 0..ps.len() as Coord {
        let (alive, kills) = sweep_step(ps, &sweep, x);
        let y = ps.y_of(x);
        if alive {
            sweep.push_alive(x, y, kills).expect("kill run within live set");
        } else {
            sweep.push_empty(x, y);
        }
    }
    sweep.finish()
}

/// Owner of the lowest segment at or above `q` covering `q`'s column, i.e.
/// the 2-sided answer with closed corner `q` (open to the top and left).
pub fn ray_shoot(inf: &InfluenceSet, qx: Coord, qy: Coord) -> Option<Coord> {
    inf.segments
        .iter()
        .filter(|s| s.y >= qy && s.covers(qx))
        .min_by_key(|s| s.y)
        .map(|s| s.owner)
}

/// The per-point code from which the segment geometry can be rebuilt: one
/// case bit per point in x order, and a unary kill count per non-empty point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntropyCode {
    n: usize,
    redundant: usize,
    /// true = the point's influence is non-empty.
    case_bits: BitVector,
    kills: UnaryStream,
}

impl EntropyCode {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn redundant(&self) -> usize {
        self.redundant
    }

    pub fn case_bits(&self) -> &BitVector {
        &self.case_bits
    }

    pub fn kills(&self) -> &UnaryStream {
        &self.kills
    }

    /// Stored length: n case bits plus sum(k)+1 unary bits per non-empty point.
    pub fn bit_len(&self) -> usize {
        self.case_bits.len() + self.kills.bit_len()
    }

    /// Analytic size of the enumerative form, `2(n-r) + ceil(log2 C(n, r))`.
    pub fn enumerative_bits(&self) -> usize {
        2 * (self.n - self.redundant) + log2_binomial_ceil(self.n, self.redundant)
    }

    pub fn to_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.n as u64).to_le_bytes());
        out.extend_from_slice(&(self.redundant as u64).to_le_bytes());
        self.case_bits.to_bytes(out);
        self.kills.bits().to_bytes(out);
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), InfluenceError> {
        let need = |at: usize| BitsError::Truncated { need: at, have: bytes.len() };
        let n = u64::from_le_bytes(bytes.get(0..8).ok_or(need(8))?.try_into().unwrap()) as usize;
        let redundant =
            u64::from_le_bytes(bytes.get(8..16).ok_or(need(16))?.try_into().unwrap()) as usize;
        let (case_bits, used1) = BitVector::from_bytes(&bytes[16..])?;
        let (kill_bits, used2) = BitVector::from_bytes(&bytes[16 + used1..])?;
        if case_bits.len() != n {
            return Err(InfluenceError::CaseBitCountMismatch { expected: n, got: case_bits.len() });
        }
        if redundant > n || case_bits.count(false) != redundant {
            return Err(InfluenceError::CaseBitCountMismatch {
                expected: redundant,
                got: case_bits.count(false),
            });
        }
        Ok((
            EntropyCode {
                n,
                redundant,
                case_bits,
                kills: UnaryStream::from_bits(kill_bits),
            },
            16 + used1 + used2,
        ))
    }
}

fn log2_binomial_ceil(n: usize, r: usize) -> usize {
    let mut bits = 0.0f64;
    for i in 0..r.min(n - r) {
        bits += ((n - i) as f64).log2() - ((i + 1) as f64).log2();
    }
    bits.max(0.0).ceil() as usize
}

/// Runs the sweep and records its decisions as an [`EntropyCode`].
pub fn encode_priorities(ps: &PointSet) -> EntropyCode {
    let mut sweep = Sweep::new();
    let mut case_buf = BitBuf::new();
    let mut kill_buf = BitBuf::new();
    for x in 0..ps.len() as Coord {
        let (alive, kills) = sweep_step(ps, &sweep, x);
        let y = ps.y_of(x);
        case_buf.push(alive);
        if alive {
            kill_buf.push_unary(kills);
            sweep.push_alive(x, y, kills).expect("kill run within live set");
        } else {
            sweep.push_empty(x, y);
        }
    }
    let inf = sweep.finish();
    EntropyCode {
        n: inf.segments.len(),
        redundant: inf.redundant,
        case_bits: case_buf.freeze(),
        kills: UnaryStream::from_bits(kill_buf.freeze()),
    }
}

/// Rebuilds the segment set from coordinates alone plus the code. Points are
/// given in strictly increasing x order; priorities are not recovered, only
/// the geometry needed for ray shooting.
pub fn decode_influence(
    points_by_x: &[(Coord, Coord)],
    code: &EntropyCode,
) -> Result<InfluenceSet, InfluenceError> {
    if code.case_bits.len() != points_by_x.len() {
        return Err(InfluenceError::CaseBitCountMismatch {
            expected: points_by_x.len(),
            got: code.case_bits.len(),
        });
    }
    let ks = code.kills.decode()?;
    let alive_total = code.case_bits.count(true);
    if ks.len() != alive_total {
        return Err(InfluenceError::KillCountMismatch {
            expected: alive_total,
            got: ks.len(),
        });
    }
    let mut sweep = Sweep::new();
    let mut next_kill = 0usize;
    let mut prev_x: Option<Coord> = None;
    let mut seen_y = std::collections::BTreeSet::new();
    for (i, &(x, y)) in points_by_x.iter().enumerate() {
        if prev_x.is_some_and(|p| p >= x) {
            return Err(InfluenceError::UnsortedPoints);
        }
        prev_x = Some(x);
        if !seen_y.insert(y) {
            return Err(InfluenceError::DuplicateY(y));
        }
        if code.case_bits.get(i) {
            let k = ks[next_kill];
            next_kill += 1;
            let live_below = sweep.live.range(..y).count();
            if k as usize > live_below {
                return Err(InfluenceError::KillTooDeep { x, k, live: live_below });
            }
            sweep.push_alive(x, y, k)?;
        } else {
            sweep.push_empty(x, y);
        }
    }
    Ok(sweep.finish())
}

/// Builds the point set that reduces 1D range maxima with redundant entries
/// to 2-sided queries: the values sit on an ascending diagonal, redundant
/// entries get the lowest priorities, and a dominating point `z` at the top
/// left separates them from the live entries.
pub fn build_rmq_gadget(values: &[i64], redundant_mask: &[bool]) -> PointSet {
    assert_eq!(values.len(), redundant_mask.len());
    let n = values.len();
    // z at x=0, y=n; diagonal entry t at (t+1, t)
    let mut upsilon = vec![0 as Coord; n + 1];
    upsilon[0] = n as Coord;
    for t in 0..n {
        upsilon[t + 1] = t as Coord;
    }
    let mut pi = vec![0 as Coord; n + 1];
    let mut next = 0 as Coord;
    // redundant entries first (lowest priorities), in input order
    for t in 0..n {
        if redundant_mask[t] {
            pi[t + 1] = next;
            next += 1;
        }
    }
    // then z
    pi[0] = next;
    next += 1;
    // then live entries by increasing value
    let mut live: Vec<usize> = (0..n).filter(|&t| !redundant_mask[t]).collect();
    live.sort_by_key(|&t| values[t]);
    for t in live {
        pi[t + 1] = next;
        next += 1;
    }
    PointSet::new(upsilon, pi).expect("gadget coordinates are permutations")
}
