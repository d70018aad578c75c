//! The region-decomposed 2-sided query structure.
//!
//! Works in the canonical orientation (closed corner bottom-right). The
//! influence lines of a selected subset of points, plus vertical walls shot
//! up and down from their endpoints, partition the plane into rectangular
//! regions holding O(lambda) points and segment parts each. Each region
//! stores a handful of bit-strings; point coordinates are never stored and
//! are fetched at query time through a [`PointProvider`]. A query locates
//! its region, rebuilds the local segment picture from one provider batch
//! plus the bits, and binary-searches the segments entering from the left,
//! resolving each probe by walking region-to-region toward its owner.
//!
//! Conventions: a region covers columns `[x_lo, x_hi)` and rows
//! `[y_lo, y_hi)`; a point on a region edge belongs to the region above or
//! to the right. A segment is a member of `Left(R)` when it covers both
//! columns `x_lo - 1` and `x_lo`, i.e. crosses the wall strictly; a segment
//! whose right endpoint falls exactly on a wall belongs to the region on
//! the left and needs no record in the region on the right.

use std::collections::BTreeMap;

use crate::bits::{BitBuf, BitVector, BitsError, UnaryStream};
use crate::influence::{build_influence, InfluenceSet, X_END_INF};
use crate::points::{Coord, Corner, PointSet, QueryRect};
use thiserror::Error;

/// Weight caps as multiples of lambda: a region holds at most
/// `WEIGHT_FACTOR * lambda` points and as many segment parts, and the
/// selected set stays within `WEIGHT_FACTOR * n / lambda`.
pub const WEIGHT_FACTOR: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TwoSidedError {
    #[error("provider batch cap {cap} is below the required {need}")]
    CapTooSmall { cap: usize, need: usize },
    #[error("provider returned {got} points, payloads recorded {want}")]
    CardinalityMismatch { got: usize, want: usize },
    #[error("provider failed: {0}")]
    Provider(String),
    #[error("payload chain corrupted at region {0}")]
    CorruptChain(u32),
    #[error(transparent)]
    Bits(#[from] BitsError),
}

/// A reported point: canonical-frame local coordinates plus the top-level
/// image the caller ultimately wants back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProviderPoint {
    pub local: (Coord, Coord),
    pub top: (Coord, Coord),
}

/// Fetches the problem's points at query time. Implementations return
/// exactly the member points of the rectangle in increasing local x, and
/// may refuse batches larger than their cap.
///
/// Cost contract (documented, not enforced): a report of k points costs
/// T(N, k) with T(N, O(k)) = O(T(N, k)); the query algorithm issues
/// O(log lambda) reports of at most 4*lambda points each.
pub trait PointProvider {
    fn batch_cap(&self) -> usize;
    /// Points whose canonical-local image lies in the inclusive `rect`.
    fn report(&self, rect: &QueryRect) -> Result<Vec<ProviderPoint>, TwoSidedError>;
}

/// Provider over an in-memory list, pre-sorted by local x. In the
/// standalone-index setting local and top-level coordinates coincide.
pub struct SliceProvider<'a> {
    points: &'a [ProviderPoint],
    cap: usize,
}

impl<'a> SliceProvider<'a> {
    pub fn new(points: &'a [ProviderPoint], cap: usize) -> Self {
        SliceProvider { points, cap }
    }

    /// Identity mapping: top-level coordinates equal local ones.
    pub fn identity_points(ps: &PointSet) -> Vec<ProviderPoint> {
        ps.iter()
            .map(|(x, y, _)| ProviderPoint { local: (x, y), top: (x, y) })
            .collect()
    }
}

impl PointProvider for SliceProvider<'_> {
    fn batch_cap(&self) -> usize {
        self.cap
    }

    fn report(&self, rect: &QueryRect) -> Result<Vec<ProviderPoint>, TwoSidedError> {
        let hits: Vec<ProviderPoint> = self
            .points
            .iter()
            .filter(|p| rect.contains(p.local.0, p.local.1))
            .copied()
            .collect();
        if hits.len() > self.cap {
            return Err(TwoSidedError::Provider(format!(
                "batch {} over cap {}",
                hits.len(),
                self.cap
            )));
        }
        Ok(hits)
    }
}

/// One selected influence line, or a pin: a selected redundant point that
/// contributes walls but no extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkeletonSegment {
    pub owner_local: (Coord, Coord),
    pub owner_top: (Coord, Coord),
    /// Local column one past the last covered; `X_END_INF` if never killed.
    pub x_end: Coord,
    pub pin: bool,
}

/// The region holding a far-crossing segment's owner, plus the owner's
/// local coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Waypoint {
    pub region: u32,
    pub local: (Coord, Coord),
}

/// One rectangular region with its payload bit-strings. Segment identities
/// are never stored; queries recover them positionally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub x_lo: Coord,
    pub x_hi: Coord,
    pub y_lo: Coord,
    pub y_hi: Coord,
    pub bottom_seg: Option<u32>,
    pub top_seg: Option<u32>,
    /// Adjacent regions along each wall, top to bottom.
    pub left_neighbors: Vec<u32>,
    pub right_neighbors: Vec<u32>,
    /// (1) per Left member, top-down: terminates by the right wall?
    pub p1_left: BitVector,
    /// (1) per Right member, top-down: begins in this region?
    pub p1_right: BitVector,
    /// (2) `0^{l_1} 1 0^{l_2} 1 ..`: Left members entering from each left
    /// neighbor, top-down; likewise for the right wall.
    pub p2_left: BitVector,
    pub p2_right: BitVector,
    /// (3) merge of P(R) and Left(R) by descending y; 1 = from P(R).
    pub p3_merge: BitVector,
    /// (4) per Right member: does this region store its owner's waypoint?
    pub p4_presence: BitVector,
    pub p4_records: Vec<Waypoint>,
    /// (5) per P(R) point in x order: non-empty influence?
    pub p5_case: BitVector,
    /// (5) per non-empty point: kills among local segments, unary.
    pub p5_kills: UnaryStream,
    /// (5) per non-empty point: does its segment cross the right wall?
    pub p5_cross: BitVector,
}

impl Region {
    fn left_len(&self) -> usize {
        self.p1_left.len()
    }

    fn points_len(&self) -> usize {
        self.p5_case.len()
    }

    fn box_rect(&self) -> QueryRect {
        QueryRect::closed(self.x_lo, self.x_hi - 1, self.y_lo, self.y_hi - 1)
    }
}

/// Locate row: regions open over one column range, ascending y.
#[derive(Debug, Clone)]
struct LocatorSlab {
    x_lo: Coord,
    rows: Vec<(Coord, u32)>,
}

/// Per-payload bit accounting plus build statistics.
#[derive(Debug, Clone, Default)]
pub struct TwoSidedSpace {
    pub n: usize,
    pub lambda: usize,
    pub selected: usize,
    pub regions: usize,
    pub p1_bits: usize,
    pub p2_bits: usize,
    pub p2_ones: usize,
    pub p2_zeros: usize,
    pub p3_bits: usize,
    pub p4_presence_bits: usize,
    pub p4_records: usize,
    pub p4_record_width: usize,
    pub p5_bits: usize,
    pub max_region_points: usize,
    pub max_region_parts: usize,
    /// Words for skeleton geometry, region table, adjacency, and the locator.
    pub skeleton_words: usize,
}

impl TwoSidedSpace {
    pub fn p4_bits(&self) -> usize {
        self.p4_presence_bits + self.p4_records * self.p4_record_width
    }

    pub fn payload_bits(&self) -> usize {
        self.p1_bits + self.p2_bits + self.p3_bits + self.p4_bits() + self.p5_bits
    }
}

/// The 2-sided structure for one oriented problem.
#[derive(Debug, Clone)]
pub struct TwoSidedIndex {
    n: usize,
    lambda: usize,
    corner: Corner,
    segments: Vec<SkeletonSegment>,
    regions: Vec<Region>,
    slabs: Vec<LocatorSlab>,
    space: TwoSidedSpace,
}

/// Query-time instrumentation.
#[derive(Debug, Clone, Copy, Default)]
pub struct QueryStats {
    pub provider_calls: usize,
    pub max_batch: usize,
    pub resolve_walk_hops: usize,
    pub binary_search_resolves: usize,
}

// ---------------------------------------------------------------------------
// build
// ---------------------------------------------------------------------------

/// Build-time record of the point at each column.
struct ColumnInfo {
    y: Coord,
    alive: bool,
    /// End of its own segment; X_END_INF while never killed.
    x_end: Coord,
    /// Victim columns this point kills on arrival.
    kills: Vec<Coord>,
}

fn column_info(inf: &InfluenceSet, n: usize) -> Vec<ColumnInfo> {
    let mut cols: Vec<ColumnInfo> = inf
        .segments()
        .iter()
        .map(|s| ColumnInfo {
            y: s.y,
            alive: !s.empty,
            x_end: s.x_end,
            kills: Vec::new(),
        })
        .collect();
    for s in inf.segments() {
        if !s.empty && s.x_end != X_END_INF && (s.x_end as usize) < n {
            cols[s.x_end as usize].kills.push(s.owner);
        }
    }
    cols
}

/// First pass: choose the owners promoted into the skeleton. A point is
/// promoted when the region accumulating in its gap is full: too many
/// points, too many segment parts, or too many live segments between the
/// current boundaries.
fn select_owners(cols: &[ColumnInfo], lambda: usize) -> Vec<bool> {
    let n = cols.len();
    let cap = WEIGHT_FACTOR * lambda;
    let mut promoted = vec![false; n];
    let mut live: BTreeMap<Coord, ()> = BTreeMap::new();
    // gap state keyed by lower edge: (points, starts, live_at_open)
    let mut gaps: BTreeMap<Coord, (usize, usize, usize)> = BTreeMap::new();
    gaps.insert(0, (0, 0, 0));

    for (x, col) in cols.iter().enumerate() {
        for &victim in &col.kills {
            let vy = cols[victim as usize].y;
            if promoted[victim as usize] {
                // boundary dies: neighbor gaps merge into a fresh region;
                // a boundary on the floor row has no gap below it
                gaps.remove(&vy).expect("gap above dying boundary");
                let merged_key = gaps.range(..vy).next_back().map_or(0, |(&k, _)| k);
                let upper = gaps.range(vy..).next().map_or(Coord::MAX, |(&k, _)| k);
                let merged_live = live.range(merged_key..upper).count();
                gaps.insert(merged_key, (0, 0, merged_live));
            } else {
                live.remove(&vy);
            }
        }
        let key = *gaps.range(..=col.y).next_back().expect("floor gap").0;
        let upper = gaps.range(key + 1..).next().map_or(Coord::MAX, |(&k, _)| k);
        let (mut pts, mut starts, live_open) = *gaps.get(&key).unwrap();
        pts += 1;
        if col.alive {
            starts += 1;
        }
        // the live cap keeps any later merge of two gaps under the parts
        // budget; the other two triggers bound the closing region directly.
        // Only a non-empty arrival can split, so pins never fire it.
        let live_now = live.range(key..upper).count() + col.alive as usize;
        let overflow =
            pts >= cap || live_open + starts >= cap || (col.alive && live_now >= 2 * lambda);
        if overflow {
            promoted[x] = true;
            if col.alive {
                let below_live = live.range(key..col.y).count();
                let above_live = live.range(col.y + 1..upper).count();
                gaps.insert(key, (0, 0, below_live));
                gaps.insert(col.y, (0, 0, above_live));
            } else {
                gaps.insert(key, (0, 0, live_now));
            }
        } else {
            gaps.insert(key, (pts, starts, live_open));
            if col.alive {
                live.insert(col.y, ());
            }
        }
    }
    promoted
}

/// Build-side open region.
struct OpenRegion {
    id: u32,
    x_lo: Coord,
    y_lo: Coord,
    y_hi: Coord,
    bottom_seg: Option<u32>,
    top_seg: Option<u32>,
    left: Vec<Coord>,
    points: Vec<Coord>,
}

/// Closed region with its build-side member lists.
struct DraftRegion {
    id: u32,
    x_lo: Coord,
    x_hi: Coord,
    y_lo: Coord,
    y_hi: Coord,
    bottom_seg: Option<u32>,
    top_seg: Option<u32>,
    /// Left member owner columns, top-down.
    left: Vec<Coord>,
    /// Right member owner columns, top-down.
    right: Vec<Coord>,
    /// P(R) owner columns in arrival (x) order.
    points: Vec<Coord>,
}

/// Build-time owner table, handed to tests only; the index stores none of it.
pub(crate) struct BuildTrace {
    pub left_owners: Vec<Vec<Coord>>,
}

pub fn build_two_sided(
    ps: &PointSet,
    tops: &[(Coord, Coord)],
    corner: Corner,
    lambda: usize,
    provider_cap: usize,
) -> Result<TwoSidedIndex, TwoSidedError> {
    build_two_sided_traced(ps, tops, corner, lambda, provider_cap).map(|(idx, _)| idx)
}

pub(crate) fn build_two_sided_traced(
    ps: &PointSet,
    tops: &[(Coord, Coord)],
    corner: Corner,
    lambda: usize,
    provider_cap: usize,
) -> Result<(TwoSidedIndex, BuildTrace), TwoSidedError> {
    let n = ps.len();
    assert!(n > 0, "two-sided index over an empty problem");
    assert_eq!(tops.len(), n);
    let lambda = lambda.max(2);
    let cap_needed = WEIGHT_FACTOR * lambda;
    if provider_cap < cap_needed.min(n) {
        return Err(TwoSidedError::CapTooSmall {
            cap: provider_cap,
            need: cap_needed.min(n),
        });
    }

    let inf = build_influence(ps);
    let cols = column_info(&inf, n);
    let mut promoted = select_owners(&cols, lambda);
    if !promoted.iter().any(|&p| p) {
        // never leave the skeleton empty: the topmost point's influence is
        // always non-empty
        let top_x = (0..n).max_by_key(|&x| cols[x].y).unwrap();
        promoted[top_x] = true;
    }

    let mut skeleton: Vec<SkeletonSegment> = Vec::new();
    let mut skeleton_id_of: Vec<Option<u32>> = vec![None; n];
    for x in 0..n {
        if promoted[x] {
            skeleton_id_of[x] = Some(skeleton.len() as u32);
            skeleton.push(SkeletonSegment {
                owner_local: (x as Coord, cols[x].y),
                owner_top: tops[x],
                x_end: if cols[x].alive { cols[x].x_end } else { x as Coord },
                pin: !cols[x].alive,
            });
        }
    }

    // second pass: run the decomposition and record draft regions
    let mut drafts: Vec<DraftRegion> = Vec::new();
    let mut open: BTreeMap<Coord, OpenRegion> = BTreeMap::new();
    let mut boundaries: BTreeMap<Coord, u32> = BTreeMap::new();
    let mut live: BTreeMap<Coord, Coord> = BTreeMap::new();
    let mut next_id: u32;
    let n_coord = n as Coord;

    let snapshot_left = |live: &BTreeMap<Coord, Coord>, lo: Coord, hi: Coord| -> Vec<Coord> {
        live.range(lo..hi).rev().map(|(_, &o)| o).collect()
    };
    let close = |open: &mut BTreeMap<Coord, OpenRegion>,
                     live: &BTreeMap<Coord, Coord>,
                     drafts: &mut Vec<DraftRegion>,
                     key: Coord,
                     x: Coord| {
        let r = open.remove(&key).expect("open region at key");
        if r.x_lo == x {
            // a cut landing on the opening column leaves nothing behind
            debug_assert!(r.points.is_empty());
            return;
        }
        let right = if x < n_coord {
            snapshot_left(live, r.y_lo, r.y_hi)
        } else {
            Vec::new()
        };
        drafts.push(DraftRegion {
            id: r.id,
            x_lo: r.x_lo,
            x_hi: x,
            y_lo: r.y_lo,
            y_hi: r.y_hi,
            bottom_seg: r.bottom_seg,
            top_seg: r.top_seg,
            left: r.left,
            right,
            points: r.points,
        });
    };

    open.insert(
        0,
        OpenRegion {
            id: 0,
            x_lo: 0,
            y_lo: 0,
            y_hi: n_coord,
            bottom_seg: None,
            top_seg: None,
            left: Vec::new(),
            points: Vec::new(),
        },
    );
    next_id = 1;

    for x in 0..n {
        let xc = x as Coord;
        let col = &cols[x];
        // 1. victims stop crossing any wall cut at this column
        let mut dying_selected: Vec<Coord> = Vec::new();
        for &victim in &col.kills {
            let vy = cols[victim as usize].y;
            if promoted[victim as usize] {
                dying_selected.push(vy);
            } else {
                live.remove(&vy);
            }
        }
        // 2. the cut set: gaps adjacent to dying boundaries, plus the
        // promoted point's gap
        let mut cut_keys: Vec<Coord> = Vec::new();
        for &vy in &dying_selected {
            cut_keys.push(vy);
            if let Some((&below, _)) = open.range(..vy).next_back() {
                cut_keys.push(below);
            }
        }
        if promoted[x] {
            cut_keys.push(*open.range(..=col.y).next_back().expect("containing gap").0);
        }
        cut_keys.sort_unstable();
        cut_keys.dedup();

        if !cut_keys.is_empty() {
            let mut spans: Vec<(Coord, Coord)> = Vec::new();
            for &key in &cut_keys {
                let (lo, hi) = {
                    let r = open.get(&key).expect("cut key open");
                    (r.y_lo, r.y_hi)
                };
                close(&mut open, &live, &mut drafts, key, xc);
                spans.push((lo, hi));
            }
            spans.sort_unstable();
            let mut components: Vec<(Coord, Coord)> = Vec::new();
            for (lo, hi) in spans {
                match components.last_mut() {
                    Some(last) if last.1 == lo => last.1 = hi,
                    _ => components.push((lo, hi)),
                }
            }
            for &vy in &dying_selected {
                boundaries.remove(&vy);
            }
            if promoted[x] && col.alive {
                boundaries.insert(col.y, skeleton_id_of[x].unwrap());
            }
            for (lo, hi) in components {
                let inner: Vec<(Coord, u32)> = boundaries
                    .range(lo + 1..hi)
                    .map(|(&y, &id)| (y, id))
                    .collect();
                let mut cursor = lo;
                let mut bottom = boundaries.get(&lo).copied();
                for (y, id) in inner {
                    if y > cursor {
                        open.insert(
                            cursor,
                            OpenRegion {
                                id: next_id,
                                x_lo: xc,
                                y_lo: cursor,
                                y_hi: y,
                                bottom_seg: bottom,
                                top_seg: Some(id),
                                left: snapshot_left(&live, cursor, y),
                                points: Vec::new(),
                            },
                        );
                        next_id += 1;
                    }
                    cursor = y;
                    bottom = Some(id);
                }
                if hi > cursor {
                    let top = if hi == n_coord { None } else { boundaries.get(&hi).copied() };
                    open.insert(
                        cursor,
                        OpenRegion {
                            id: next_id,
                            x_lo: xc,
                            y_lo: cursor,
                            y_hi: hi,
                            bottom_seg: bottom,
                            top_seg: top,
                            left: snapshot_left(&live, cursor, hi),
                            points: Vec::new(),
                        },
                    );
                    next_id += 1;
                }
            }
        }
        // 3. the arriving point joins its region
        let key = *open.range(..=col.y).next_back().expect("containing gap").0;
        open.get_mut(&key).unwrap().points.push(xc);
        if col.alive && !promoted[x] {
            live.insert(col.y, xc);
        }
    }
    let keys: Vec<Coord> = open.keys().copied().collect();
    for key in keys {
        close(&mut open, &live, &mut drafts, key, n_coord);
    }
    // dropped zero-width regions leave id gaps; re-index densely
    drafts.sort_by_key(|d| d.id);
    for (i, d) in drafts.iter_mut().enumerate() {
        d.id = i as u32;
    }

    emit_regions(tops, corner, lambda, &cols, skeleton, drafts, n)
}

/// Payload emission, adjacency wiring, invariant checks, space accounting.
fn emit_regions(
    tops: &[(Coord, Coord)],
    corner: Corner,
    lambda: usize,
    cols: &[ColumnInfo],
    skeleton: Vec<SkeletonSegment>,
    drafts: Vec<DraftRegion>,
    n: usize,
) -> Result<(TwoSidedIndex, BuildTrace), TwoSidedError> {
    let _ = tops;
    let cap = WEIGHT_FACTOR * lambda;
    let n_coord = n as Coord;

    let mut closes_at: BTreeMap<Coord, Vec<u32>> = BTreeMap::new();
    let mut opens_at: BTreeMap<Coord, Vec<u32>> = BTreeMap::new();
    for d in &drafts {
        if d.x_hi < n_coord {
            closes_at.entry(d.x_hi).or_default().push(d.id);
        }
        if d.x_lo > 0 {
            opens_at.entry(d.x_lo).or_default().push(d.id);
        }
    }
    let overlaps =
        |a: &DraftRegion, b: &DraftRegion| a.y_lo < b.y_hi && b.y_lo < a.y_hi;

    // per-segment chain of regions whose right wall it crosses, left to right
    let mut chains: BTreeMap<Coord, Vec<u32>> = BTreeMap::new();
    {
        let mut by_close: Vec<&DraftRegion> = drafts.iter().collect();
        by_close.sort_by_key(|d| (d.x_hi, d.y_lo));
        for d in by_close {
            for &owner in &d.right {
                chains.entry(owner).or_default().push(d.id);
            }
        }
    }
    let mut home_of: BTreeMap<Coord, u32> = BTreeMap::new();
    for d in &drafts {
        for &p in &d.points {
            home_of.insert(p, d.id);
        }
    }
    let mut waypoint_here: BTreeMap<(u32, Coord), ()> = BTreeMap::new();
    for (&owner, chain) in &chains {
        let mut t = lambda;
        while t < chain.len() {
            waypoint_here.insert((chain[t], owner), ());
            t += lambda;
        }
    }

    let bits_per_coord = (usize::BITS - (n.max(2) - 1).leading_zeros()) as usize;
    let record_width = 3 * bits_per_coord;
    let mut regions: Vec<Region> = Vec::with_capacity(drafts.len());
    let mut space = TwoSidedSpace {
        n,
        lambda,
        selected: skeleton.len(),
        regions: drafts.len(),
        p4_record_width: record_width,
        ..TwoSidedSpace::default()
    };
    let mut trace = BuildTrace { left_owners: Vec::with_capacity(drafts.len()) };

    // partition a top-down member list among top-down neighbor spans
    let partition = |members: &[Coord], neighbors: &[u32], drafts: &[DraftRegion]| -> BitBuf {
        let mut buf = BitBuf::new();
        let mut it = members.iter().peekable();
        for &nb in neighbors {
            let span = &drafts[nb as usize];
            let mut count = 0u64;
            while let Some(&&owner) = it.peek() {
                let y = cols[owner as usize].y;
                if y >= span.y_lo && y < span.y_hi {
                    count += 1;
                    it.next();
                } else {
                    break;
                }
            }
            buf.push_unary(count);
        }
        assert!(it.next().is_none(), "member outside every neighbor span");
        buf
    };

    for d in &drafts {
        let mut left_neighbors: Vec<u32> = closes_at
            .get(&d.x_lo)
            .map(|ids| {
                ids.iter().copied().filter(|&id| overlaps(&drafts[id as usize], d)).collect()
            })
            .unwrap_or_default();
        left_neighbors.sort_by_key(|&id| std::cmp::Reverse(drafts[id as usize].y_lo));
        let mut right_neighbors: Vec<u32> = opens_at
            .get(&d.x_hi)
            .map(|ids| {
                ids.iter().copied().filter(|&id| overlaps(&drafts[id as usize], d)).collect()
            })
            .unwrap_or_default();
        right_neighbors.sort_by_key(|&id| std::cmp::Reverse(drafts[id as usize].y_lo));

        let mut p1_left = BitBuf::new();
        for &owner in &d.left {
            p1_left.push(!segment_crosses(cols, owner, d.x_hi));
        }
        let mut p1_right = BitBuf::new();
        for &owner in &d.right {
            p1_right.push(owner >= d.x_lo);
        }
        let p2_left = partition(&d.left, &left_neighbors, &drafts);
        let p2_right = partition(&d.right, &right_neighbors, &drafts);

        let mut merged: Vec<(Coord, bool)> = d
            .points
            .iter()
            .map(|&p| (cols[p as usize].y, true))
            .chain(d.left.iter().map(|&o| (cols[o as usize].y, false)))
            .collect();
        merged.sort_by_key(|&(y, _)| std::cmp::Reverse(y));
        let mut p3 = BitBuf::new();
        for &(_, from_points) in &merged {
            p3.push(from_points);
        }

        let mut p4_presence = BitBuf::new();
        let mut p4_records: Vec<Waypoint> = Vec::new();
        for &owner in &d.right {
            let flagged = waypoint_here.contains_key(&(d.id, owner));
            p4_presence.push(flagged);
            if flagged {
                p4_records.push(Waypoint {
                    region: home_of[&owner],
                    local: (owner, cols[owner as usize].y),
                });
            }
        }

        let mut p5_case = BitBuf::new();
        let mut p5_kills = BitBuf::new();
        let mut p5_cross = BitBuf::new();
        for &p in &d.points {
            let col = &cols[p as usize];
            p5_case.push(col.alive);
            if col.alive {
                // a point on the region's first column kills nothing local
                let k_local = if p == d.x_lo { 0 } else { col.kills.len() as u64 };
                p5_kills.push_unary(k_local);
                p5_cross.push(segment_crosses(cols, p, d.x_hi));
            }
        }

        let parts =
            d.left.len() + d.points.iter().filter(|&&p| cols[p as usize].alive).count();
        assert!(
            d.points.len() <= cap,
            "region {}: {} points over cap {}",
            d.id,
            d.points.len(),
            cap
        );
        assert!(parts <= cap, "region {}: {} parts over cap {}", d.id, parts, cap);
        space.max_region_points = space.max_region_points.max(d.points.len());
        space.max_region_parts = space.max_region_parts.max(parts);

        let p1_left = p1_left.freeze();
        let p1_right = p1_right.freeze();
        let p2_left = p2_left.freeze();
        let p2_right = p2_right.freeze();
        let p3 = p3.freeze();
        let p4_presence = p4_presence.freeze();
        let p5_case = p5_case.freeze();
        let p5_kills = UnaryStream::from_bits(p5_kills.freeze());
        let p5_cross = p5_cross.freeze();

        space.p1_bits += p1_left.len() + p1_right.len();
        space.p2_bits += p2_left.len() + p2_right.len();
        space.p2_ones += p2_left.count(true) + p2_right.count(true);
        space.p2_zeros += p2_left.count(false) + p2_right.count(false);
        space.p3_bits += p3.len();
        space.p4_presence_bits += p4_presence.len();
        space.p4_records += p4_records.len();
        space.p5_bits += p5_case.len() + p5_kills.bit_len() + p5_cross.len();
        space.skeleton_words += 6 + left_neighbors.len() + right_neighbors.len();

        trace.left_owners.push(d.left.clone());
        regions.push(Region {
            x_lo: d.x_lo,
            x_hi: d.x_hi,
            y_lo: d.y_lo,
            y_hi: d.y_hi,
            bottom_seg: d.bottom_seg,
            top_seg: d.top_seg,
            left_neighbors,
            right_neighbors,
            p1_left,
            p1_right,
            p2_left,
            p2_right,
            p3_merge: p3,
            p4_presence,
            p4_records,
            p5_case,
            p5_kills,
            p5_cross,
        });
    }

    let sqrt_log = (n.max(2) as f64).log2().sqrt();
    assert!(
        space.payload_bits() as f64 <= 40.0 * n as f64 * sqrt_log,
        "payload total {} bits for n={} lambda={}",
        space.payload_bits(),
        n,
        lambda
    );
    let budget = (WEIGHT_FACTOR * n).div_ceil(lambda).max(4);
    assert!(
        skeleton.len() <= budget,
        "selected {} segments for n={} lambda={}",
        skeleton.len(),
        n,
        lambda
    );
    assert!(regions.len() <= budget, "{} regions for n={} lambda={}", regions.len(), n, lambda);

    let slabs = build_locator(&regions);
    space.skeleton_words +=
        skeleton.len() * 6 + slabs.iter().map(|s| 1 + 2 * s.rows.len()).sum::<usize>();

    Ok((
        TwoSidedIndex {
            n,
            lambda,
            corner,
            segments: skeleton,
            regions,
            slabs,
            space,
        },
        trace,
    ))
}

fn segment_crosses(cols: &[ColumnInfo], owner: Coord, wall: Coord) -> bool {
    let col = &cols[owner as usize];
    col.alive && (col.x_end == X_END_INF || col.x_end > wall)
}

fn build_locator(regions: &[Region]) -> Vec<LocatorSlab> {
    let mut breakpoints: Vec<Coord> = regions.iter().map(|r| r.x_lo).collect();
    breakpoints.sort_unstable();
    breakpoints.dedup();
    let mut by_x: Vec<(usize, u32)> = regions
        .iter()
        .enumerate()
        .map(|(id, r)| (breakpoints.binary_search(&r.x_lo).unwrap(), id as u32))
        .collect();
    by_x.sort_unstable();
    let mut slabs = Vec::with_capacity(breakpoints.len());
    let mut open: BTreeMap<Coord, u32> = BTreeMap::new();
    let mut cursor = 0usize;
    for (t, &x) in breakpoints.iter().enumerate() {
        open.retain(|_, id| regions[*id as usize].x_hi > x);
        while cursor < by_x.len() && by_x[cursor].0 == t {
            let id = by_x[cursor].1;
            open.insert(regions[id as usize].y_lo, id);
            cursor += 1;
        }
        slabs.push(LocatorSlab {
            x_lo: x,
            rows: open.iter().map(|(&y, &id)| (y, id)).collect(),
        });
    }
    slabs
}

// ---------------------------------------------------------------------------
// query
// ---------------------------------------------------------------------------

impl TwoSidedIndex {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn corner(&self) -> Corner {
        self.corner
    }

    pub fn space(&self) -> &TwoSidedSpace {
        &self.space
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn segments(&self) -> &[SkeletonSegment] {
        &self.segments
    }

    /// Id of the unique region containing the local point.
    pub fn locate_region(&self, q: (Coord, Coord)) -> u32 {
        debug_assert!((q.0 as usize) < self.n && (q.1 as usize) < self.n);
        let slab = self.slabs.partition_point(|s| s.x_lo <= q.0) - 1;
        let rows = &self.slabs[slab].rows;
        let at = rows.partition_point(|&(y, _)| y <= q.1) - 1;
        rows[at].1
    }

    /// Candidate `a` sits at or above `q` in the canonical frame (top-level
    /// y comparison).
    fn top_above(&self, a_y: Coord, q_y: Coord) -> bool {
        if self.corner.flip_y() {
            a_y <= q_y
        } else {
            a_y >= q_y
        }
    }

    /// `a` is canonically strictly lower than `b`.
    fn top_lower(&self, a_y: Coord, b_y: Coord) -> bool {
        if self.corner.flip_y() {
            a_y > b_y
        } else {
            a_y < b_y
        }
    }
}

/// One region's segment picture, rebuilt from a provider batch plus bits.
struct RegionView {
    points: Vec<ProviderPoint>,
    alive: Vec<bool>,
    /// Local column where a later member point killed this point's segment.
    point_death: Vec<Option<Coord>>,
    /// Local column where a member point killed this Left member.
    left_death: Vec<Option<Coord>>,
}

fn reconstruct_view(
    idx: &TwoSidedIndex,
    region_id: u32,
    provider: &dyn PointProvider,
    stats: &mut QueryStats,
) -> Result<RegionView, TwoSidedError> {
    let r = &idx.regions[region_id as usize];
    let want_points = r.points_len();
    let left_len = r.left_len();
    let batch = provider.report(&r.box_rect())?;
    stats.provider_calls += 1;
    stats.max_batch = stats.max_batch.max(batch.len());
    if batch.len() != want_points {
        return Err(TwoSidedError::CardinalityMismatch { got: batch.len(), want: want_points });
    }
    debug_assert!(batch.windows(2).all(|w| w[0].local.0 < w[1].local.0));
    if r.p3_merge.len() != want_points + left_len {
        return Err(TwoSidedError::CorruptChain(region_id));
    }

    // hand merged ranks to points (descending local y) and Left members
    // (top-down) following payload 3
    let mut by_y: Vec<usize> = (0..batch.len()).collect();
    by_y.sort_by_key(|&i| std::cmp::Reverse(batch[i].local.1));
    let mut point_rank = vec![0usize; batch.len()];
    let mut left_rank = vec![0usize; left_len];
    {
        let mut next_point = by_y.iter();
        let mut next_left = 0usize;
        for rank in 0..r.p3_merge.len() {
            if r.p3_merge.get(rank) {
                let &i = next_point.next().ok_or(TwoSidedError::CorruptChain(region_id))?;
                point_rank[i] = rank;
            } else {
                if next_left >= left_len {
                    return Err(TwoSidedError::CorruptChain(region_id));
                }
                left_rank[next_left] = rank;
                next_left += 1;
            }
        }
    }

    #[derive(Clone, Copy)]
    enum Part {
        Point(usize),
        Left(usize),
    }
    let mut live: BTreeMap<usize, Part> = left_rank
        .iter()
        .enumerate()
        .map(|(j, &rank)| (rank, Part::Left(j)))
        .collect();

    let kills = r.p5_kills.decode()?;
    let mut alive = vec![false; batch.len()];
    let mut point_death: Vec<Option<Coord>> = vec![None; batch.len()];
    let mut left_death: Vec<Option<Coord>> = vec![None; left_len];
    let mut cursor = 0usize;
    for i in 0..batch.len() {
        if !r.p5_case.get(i) {
            continue;
        }
        alive[i] = true;
        let k = *kills.get(cursor).ok_or(TwoSidedError::CorruptChain(region_id))?;
        cursor += 1;
        let here = batch[i].local.0;
        for _ in 0..k {
            let (&rank, &part) = live
                .range(point_rank[i] + 1..)
                .next()
                .ok_or(TwoSidedError::CorruptChain(region_id))?;
            match part {
                Part::Point(t) => point_death[t] = Some(here),
                Part::Left(j) => left_death[j] = Some(here),
            }
            live.remove(&rank);
        }
        live.insert(point_rank[i], Part::Point(i));
    }
    if cursor != kills.len() {
        return Err(TwoSidedError::CorruptChain(region_id));
    }
    // locally killed Left members must be flagged as terminating
    for j in 0..left_len {
        if left_death[j].is_some() && !r.p1_left.get(j) {
            return Err(TwoSidedError::CorruptChain(region_id));
        }
    }
    Ok(RegionView {
        points: batch,
        alive,
        point_death,
        left_death,
    })
}

/// Sum of the first `t` run lengths of a `0^a 1 0^b 1 ..` string.
fn unary_prefix(bits: &BitVector, t: usize) -> Option<usize> {
    if t == 0 {
        return Some(0);
    }
    let end = bits.select(true, t)?;
    Some(bits.rank(false, end))
}

/// Resolves the owner of a Left member by walking region-to-region toward
/// its origin, jumping through a waypoint when one is stored.
fn resolve_left_segment(
    idx: &TwoSidedIndex,
    provider: &dyn PointProvider,
    region_id: u32,
    left_pos: usize,
    stats: &mut QueryStats,
) -> Result<(Coord, Coord), TwoSidedError> {
    let mut cur = region_id;
    let mut pos = left_pos;
    for _ in 0..=idx.lambda + 1 {
        stats.resolve_walk_hops += 1;
        let r = &idx.regions[cur as usize];
        // which left neighbor the segment enters from, and at what offset
        let zero_pos = r
            .p2_left
            .select(false, pos + 1)
            .ok_or(TwoSidedError::CorruptChain(cur))?;
        let ordinal = r.p2_left.rank(true, zero_pos);
        let offset = pos - unary_prefix(&r.p2_left, ordinal).ok_or(TwoSidedError::CorruptChain(cur))?;
        let prev_id = *r
            .left_neighbors
            .get(ordinal)
            .ok_or(TwoSidedError::CorruptChain(cur))?;
        let rp = &idx.regions[prev_id as usize];
        let t = rp
            .right_neighbors
            .iter()
            .position(|&id| id == cur)
            .ok_or(TwoSidedError::CorruptChain(prev_id))?;
        let pos_right = unary_prefix(&rp.p2_right, t).ok_or(TwoSidedError::CorruptChain(prev_id))?
            + offset;
        if pos_right >= rp.p1_right.len() {
            return Err(TwoSidedError::CorruptChain(prev_id));
        }
        if rp.p4_presence.get(pos_right) {
            let rec = rp.p4_records[rp.p4_presence.rank(true, pos_right)];
            let home = &idx.regions[rec.region as usize];
            let batch = provider.report(&home.box_rect())?;
            stats.provider_calls += 1;
            stats.max_batch = stats.max_batch.max(batch.len());
            return batch
                .iter()
                .find(|p| p.local == rec.local)
                .map(|p| p.top)
                .ok_or(TwoSidedError::CorruptChain(rec.region));
        }
        if rp.p1_right.get(pos_right) {
            let s = rp.p1_right.rank(true, pos_right + 1);
            return origin_owner(idx, provider, prev_id, s, stats);
        }
        // pass-through: s-th crossing Right entry = s-th crossing Left member
        let s = rp.p1_right.rank(false, pos_right + 1);
        pos = rp
            .p1_left
            .select(false, s)
            .ok_or(TwoSidedError::CorruptChain(prev_id))?;
        cur = prev_id;
    }
    Err(TwoSidedError::CorruptChain(region_id))
}

/// Owner of the `s`-th (1-based, top-down) segment that begins in `region`
/// and crosses its right wall.
fn origin_owner(
    idx: &TwoSidedIndex,
    provider: &dyn PointProvider,
    region_id: u32,
    s: usize,
    stats: &mut QueryStats,
) -> Result<(Coord, Coord), TwoSidedError> {
    let view = reconstruct_view(idx, region_id, provider, stats)?;
    let r = &idx.regions[region_id as usize];
    let mut crossing: Vec<usize> = Vec::new();
    let mut bit = 0usize;
    for i in 0..view.points.len() {
        if view.alive[i] {
            if r.p5_cross.get(bit) {
                crossing.push(i);
            }
            bit += 1;
        }
    }
    crossing.sort_by_key(|&i| std::cmp::Reverse(view.points[i].local.1));
    crossing
        .get(s - 1)
        .map(|&i| view.points[i].top)
        .ok_or(TwoSidedError::CorruptChain(region_id))
}

/// Answers the canonical 2-sided query with closed corner `q`: the point of
/// maximum priority with local x <= q.x and local y >= q.y, in top-level
/// coordinates.
pub fn query_two_sided(
    idx: &TwoSidedIndex,
    provider: &dyn PointProvider,
    q_local: (Coord, Coord),
    q_top: (Coord, Coord),
) -> Result<Option<(Coord, Coord)>, TwoSidedError> {
    query_two_sided_with_stats(idx, provider, q_local, q_top).map(|(ans, _)| ans)
}

pub fn query_two_sided_with_stats(
    idx: &TwoSidedIndex,
    provider: &dyn PointProvider,
    q_local: (Coord, Coord),
    q_top: (Coord, Coord),
) -> Result<(Option<(Coord, Coord)>, QueryStats), TwoSidedError> {
    let mut stats = QueryStats::default();
    let region_id = idx.locate_region(q_local);
    let r = &idx.regions[region_id as usize];
    debug_assert!(
        r.x_lo <= q_local.0 && q_local.0 < r.x_hi && r.y_lo <= q_local.1 && q_local.1 < r.y_hi
    );

    // the upward ray starts on the bottom boundary segment itself
    if q_local.1 == r.y_lo {
        if let Some(seg) = r.bottom_seg {
            return Ok((Some(idx.segments[seg as usize].owner_top), stats));
        }
    }

    let view = reconstruct_view(idx, region_id, provider, &mut stats)?;

    // lowest own segment at or above q covering q's column
    let mut best_own: Option<(Coord, (Coord, Coord))> = None;
    for (i, p) in view.points.iter().enumerate() {
        if !view.alive[i] || p.local.0 > q_local.0 || p.local.1 < q_local.1 {
            continue;
        }
        if let Some(d) = view.point_death[i] {
            if d <= q_local.0 {
                continue;
            }
        }
        if best_own.map_or(true, |(y, _)| p.local.1 < y) {
            best_own = Some((p.local.1, p.top));
        }
    }

    // binary search over the Left members still covering q's column
    let eligible: Vec<usize> = (0..r.left_len())
        .filter(|&j| view.left_death[j].map_or(true, |d| d > q_local.0))
        .collect();
    let mut best_left: Option<(Coord, Coord)> = None;
    if !eligible.is_empty() {
        let mut memo: Vec<Option<(Coord, Coord)>> = vec![None; eligible.len()];
        let probe = |t: usize, stats: &mut QueryStats, memo: &mut Vec<Option<(Coord, Coord)>>| {
            if let Some(v) = memo[t] {
                return Ok::<(Coord, Coord), TwoSidedError>(v);
            }
            stats.binary_search_resolves += 1;
            let v = resolve_left_segment(idx, provider, region_id, eligible[t], stats)?;
            memo[t] = Some(v);
            Ok(v)
        };
        // top-down list: find the last member at or above q
        let first = probe(0, &mut stats, &mut memo)?;
        if idx.top_above(first.1, q_top.1) {
            let (mut lo, mut hi) = (0usize, eligible.len() - 1);
            while lo < hi {
                let mid = (lo + hi + 1) / 2;
                let owner = probe(mid, &mut stats, &mut memo)?;
                if idx.top_above(owner.1, q_top.1) {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            best_left = memo[lo];
        }
    }

    // the region's top boundary is the fallback hit
    let top_fallback = r.top_seg.map(|seg| idx.segments[seg as usize].owner_top);

    let mut best: Option<(Coord, Coord)> = None;
    for cand in [best_own.map(|(_, top)| top), best_left, top_fallback]
        .into_iter()
        .flatten()
    {
        if best.map_or(true, |b| idx.top_lower(cand.1, b.1)) {
            best = Some(cand);
        }
    }
    Ok((best, stats))
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

const NONE_SEG: u32 = u32::MAX;

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_ids(out: &mut Vec<u8>, ids: &[u32]) {
    push_u32(out, ids.len() as u32);
    for &id in ids {
        push_u32(out, id);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32, BitsError> {
        let v = self
            .bytes
            .get(self.at..self.at + 4)
            .map(|s| u32::from_le_bytes(s.try_into().unwrap()))
            .ok_or(BitsError::Truncated { need: self.at + 4, have: self.bytes.len() })?;
        self.at += 4;
        Ok(v)
    }

    fn ids(&mut self, limit: usize) -> Result<Vec<u32>, BitsError> {
        let len = self.u32()? as usize;
        if len > limit || self.bytes.len().saturating_sub(self.at) < 4 * len {
            return Err(BitsError::LengthMismatch { bits: len as u64, words: limit });
        }
        (0..len).map(|_| self.u32()).collect()
    }

    fn bits(&mut self) -> Result<BitVector, BitsError> {
        let (bv, used) = BitVector::from_bytes(&self.bytes[self.at..])?;
        self.at += used;
        Ok(bv)
    }
}

impl TwoSidedIndex {
    pub fn to_bytes(&self, out: &mut Vec<u8>) {
        push_u32(out, self.n as u32);
        push_u32(out, self.lambda as u32);
        push_u32(out, self.corner.index() as u32);
        push_u32(out, self.segments.len() as u32);
        for s in &self.segments {
            push_u32(out, s.owner_local.0);
            push_u32(out, s.owner_local.1);
            push_u32(out, s.owner_top.0);
            push_u32(out, s.owner_top.1);
            push_u32(out, s.x_end);
            push_u32(out, s.pin as u32);
        }
        push_u32(out, self.regions.len() as u32);
        for r in &self.regions {
            push_u32(out, r.x_lo);
            push_u32(out, r.x_hi);
            push_u32(out, r.y_lo);
            push_u32(out, r.y_hi);
            push_u32(out, r.bottom_seg.unwrap_or(NONE_SEG));
            push_u32(out, r.top_seg.unwrap_or(NONE_SEG));
            push_ids(out, &r.left_neighbors);
            push_ids(out, &r.right_neighbors);
            r.p1_left.to_bytes(out);
            r.p1_right.to_bytes(out);
            r.p2_left.to_bytes(out);
            r.p2_right.to_bytes(out);
            r.p3_merge.to_bytes(out);
            r.p4_presence.to_bytes(out);
            push_u32(out, r.p4_records.len() as u32);
            for w in &r.p4_records {
                push_u32(out, w.region);
                push_u32(out, w.local.0);
                push_u32(out, w.local.1);
            }
            r.p5_case.to_bytes(out);
            r.p5_kills.bits().to_bytes(out);
            r.p5_cross.to_bytes(out);
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), TwoSidedError> {
        let mut rd = Reader { bytes, at: 0 };
        let n = rd.u32()? as usize;
        let lambda = rd.u32()? as usize;
        let corner_idx = rd.u32()? as usize;
        if corner_idx >= 4 || n == 0 || lambda == 0 {
            return Err(TwoSidedError::CorruptChain(0));
        }
        let corner = Corner::from_index(corner_idx);
        let seg_count = rd.u32()? as usize;
        // each segment record takes 24 bytes; bound by what the input holds
        if seg_count > n || bytes.len().saturating_sub(rd.at) < 24 * seg_count {
            return Err(TwoSidedError::CorruptChain(0));
        }
        let mut segments = Vec::with_capacity(seg_count);
        for _ in 0..seg_count {
            segments.push(SkeletonSegment {
                owner_local: (rd.u32()?, rd.u32()?),
                owner_top: (rd.u32()?, rd.u32()?),
                x_end: rd.u32()?,
                pin: rd.u32()? != 0,
            });
        }
        let region_count = rd.u32()? as usize;
        if region_count > 4 * n + 4 || bytes.len().saturating_sub(rd.at) < 32 * region_count {
            return Err(TwoSidedError::CorruptChain(0));
        }
        let mut regions = Vec::with_capacity(region_count.min(1 << 20));
        let opt = |v: u32| if v == NONE_SEG { None } else { Some(v) };
        for _ in 0..region_count {
            let x_lo = rd.u32()?;
            let x_hi = rd.u32()?;
            let y_lo = rd.u32()?;
            let y_hi = rd.u32()?;
            if x_lo >= x_hi || y_lo >= y_hi || x_hi as usize > n || y_hi as usize > n {
                return Err(TwoSidedError::CorruptChain(regions.len() as u32));
            }
            let bottom_seg = opt(rd.u32()?);
            let top_seg = opt(rd.u32()?);
            if bottom_seg.is_some_and(|s| s as usize >= seg_count)
                || top_seg.is_some_and(|s| s as usize >= seg_count)
            {
                return Err(TwoSidedError::CorruptChain(regions.len() as u32));
            }
            let left_neighbors = rd.ids(region_count)?;
            let right_neighbors = rd.ids(region_count)?;
            if left_neighbors.iter().chain(&right_neighbors).any(|&id| id as usize >= region_count)
            {
                return Err(TwoSidedError::CorruptChain(regions.len() as u32));
            }
            let p1_left = rd.bits()?;
            let p1_right = rd.bits()?;
            let p2_left = rd.bits()?;
            let p2_right = rd.bits()?;
            let p3_merge = rd.bits()?;
            let p4_presence = rd.bits()?;
            let rec_count = rd.u32()? as usize;
            if rec_count > p4_presence.count(true) {
                return Err(TwoSidedError::CorruptChain(regions.len() as u32));
            }
            let mut p4_records = Vec::with_capacity(rec_count);
            for _ in 0..rec_count {
                let region = rd.u32()?;
                if region as usize >= region_count {
                    return Err(TwoSidedError::CorruptChain(regions.len() as u32));
                }
                p4_records.push(Waypoint { region, local: (rd.u32()?, rd.u32()?) });
            }
            let p5_case = rd.bits()?;
            let p5_kills = UnaryStream::from_bits(rd.bits()?);
            let p5_cross = rd.bits()?;
            if p3_merge.len() != p5_case.len() + p1_left.len()
                || p5_cross.len() != p5_case.count(true)
                || p4_presence.len() != p1_right.len()
                || p4_records.len() != p4_presence.count(true)
            {
                return Err(TwoSidedError::CorruptChain(regions.len() as u32));
            }
            regions.push(Region {
                x_lo,
                x_hi,
                y_lo,
                y_hi,
                bottom_seg,
                top_seg,
                left_neighbors,
                right_neighbors,
                p1_left,
                p1_right,
                p2_left,
                p2_right,
                p3_merge,
                p4_presence,
                p4_records,
                p5_case,
                p5_kills,
                p5_cross,
            });
        }
        let used = rd.at;
        let slabs = build_locator(&regions);
        // the locate structure must cover the whole domain or queries could
        // step outside it
        if slabs.first().map_or(true, |s| s.x_lo != 0)
            || slabs.iter().any(|s| s.rows.first().map_or(true, |&(y, _)| y != 0))
        {
            return Err(TwoSidedError::CorruptChain(0));
        }
        let mut space = TwoSidedSpace {
            n,
            lambda,
            selected: segments.len(),
            regions: regions.len(),
            p4_record_width: 3 * (usize::BITS - (n.max(2) - 1).leading_zeros()) as usize,
            ..TwoSidedSpace::default()
        };
        for r in &regions {
            space.p1_bits += r.p1_left.len() + r.p1_right.len();
            space.p2_bits += r.p2_left.len() + r.p2_right.len();
            space.p2_ones += r.p2_left.count(true) + r.p2_right.count(true);
            space.p2_zeros += r.p2_left.count(false) + r.p2_right.count(false);
            space.p3_bits += r.p3_merge.len();
            space.p4_presence_bits += r.p4_presence.len();
            space.p4_records += r.p4_records.len();
            space.p5_bits += r.p5_case.len() + r.p5_kills.bit_len() + r.p5_cross.len();
            space.skeleton_words += 6 + r.left_neighbors.len() + r.right_neighbors.len();
        }
        space.skeleton_words +=
            segments.len() * 6 + slabs.iter().map(|s| 1 + 2 * s.rows.len()).sum::<usize>();
        Ok((
            TwoSidedIndex {
                n,
                lambda,
                corner,
                segments,
                regions,
                slabs,
                space,
            },
            used,
        ))
    }

    pub fn serialized_len(&self) -> usize {
        let mut buf = Vec::new();
        self.to_bytes(&mut buf);
        buf.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::influence::build_influence;
    use crate::points::{brute_force_max, reflect, ALL_CORNERS};
    use crate::testutil::{p5, random_point_set};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn build_identity(
        ps: &PointSet,
        lambda: usize,
    ) -> (TwoSidedIndex, Vec<ProviderPoint>, BuildTrace) {
        let pts = SliceProvider::identity_points(ps);
        let tops: Vec<(Coord, Coord)> = pts.iter().map(|p| p.top).collect();
        let (idx, trace) =
            build_two_sided_traced(ps, &tops, Corner::BottomRight, lambda, ps.len().max(64))
                .unwrap();
        (idx, pts, trace)
    }

    fn check_all_corners(ps: &PointSet, lambda: usize) {
        let (idx, pts, _) = build_identity(ps, lambda);
        let provider = SliceProvider::new(&pts, ps.len().max(64));
        let n = ps.len() as Coord;
        for qx in 0..n {
            for qy in 0..n {
                let got = query_two_sided(&idx, &provider, (qx, qy), (qx, qy)).unwrap();
                let want = brute_force_max(ps, &QueryRect::new(None, Some(qx), Some(qy), None))
                    .map(|c| (c.x, c.y));
                assert_eq!(got, want, "n={} q=({},{})", ps.len(), qx, qy);
            }
        }
    }

    #[test]
    fn single_point_problem() {
        let ps = PointSet::identity(1);
        check_all_corners(&ps, 2);
    }

    #[test]
    fn worked_instance_all_corners() {
        let ps = p5();
        check_all_corners(&ps, 2);
        // the known corner: q=(3,0) is answered by (2,1)
        let (idx, pts, _) = build_identity(&ps, 2);
        let provider = SliceProvider::new(&pts, 64);
        assert_eq!(
            query_two_sided(&idx, &provider, (3, 0), (3, 0)).unwrap(),
            Some((2, 1))
        );
    }

    #[test]
    fn exhaustive_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &n in &[2usize, 3, 4, 6, 9, 16, 33, 64] {
            for _ in 0..4 {
                let ps = random_point_set(n, &mut rng);
                check_all_corners(&ps, 2);
                check_all_corners(&ps, 4);
            }
        }
    }

    #[test]
    fn staircase_instances() {
        // worst cases for the skeleton: everything redundant, or every
        // segment terminated
        for n in [8usize, 32, 64] {
            check_all_corners(&PointSet::identity(n), 2);
            let desc: Vec<Coord> = (0..n as Coord).rev().collect();
            check_all_corners(&PointSet::new(desc.clone(), desc).unwrap(), 2);
        }
    }

    #[test]
    fn oriented_problems_agree_with_oracle() {
        // simulate a reflected sub-problem: the canonical frame differs from
        // the "top-level" one the provider reports in
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for corner in ALL_CORNERS {
            let n = 48usize;
            let ps_true = random_point_set(n, &mut rng);
            let canon = reflect(&ps_true, corner);
            let pts: Vec<ProviderPoint> = canon
                .iter()
                .map(|(x, y, _)| ProviderPoint {
                    local: (x, y),
                    top: (corner.map_x(n, x), corner.map_y(n, y)),
                })
                .collect();
            let tops: Vec<(Coord, Coord)> = pts.iter().map(|p| p.top).collect();
            let idx = build_two_sided(&canon, &tops, corner, 3, 64).unwrap();
            let provider = SliceProvider::new(&pts, 64);
            for _ in 0..400 {
                let qx = rng.random_range(0..n as Coord);
                let qy = rng.random_range(0..n as Coord);
                // the query rect opens away from `corner` in the true frame
                let rect = match corner {
                    Corner::BottomRight => QueryRect::new(None, Some(qx), Some(qy), None),
                    Corner::BottomLeft => QueryRect::new(Some(qx), None, Some(qy), None),
                    Corner::TopRight => QueryRect::new(None, Some(qx), None, Some(qy)),
                    Corner::TopLeft => QueryRect::new(Some(qx), None, None, Some(qy)),
                };
                let q_local = (corner.map_x(n, qx), corner.map_y(n, qy));
                let got = query_two_sided(&idx, &provider, q_local, (qx, qy)).unwrap();
                let want = brute_force_max(&ps_true, &rect).map(|c| (c.x, c.y));
                assert_eq!(got, want, "corner {corner:?} q=({qx},{qy})");
            }
        }
    }

    #[test]
    fn larger_randomized_against_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for &n in &[256usize, 1024] {
            let ps = random_point_set(n, &mut rng);
            let lambda = (n as f64).log2().sqrt().ceil() as usize;
            let (idx, pts, _) = build_identity(&ps, lambda);
            let provider = SliceProvider::new(&pts, n);
            for _ in 0..2000 {
                let qx = rng.random_range(0..n as Coord);
                let qy = rng.random_range(0..n as Coord);
                let got = query_two_sided(&idx, &provider, (qx, qy), (qx, qy)).unwrap();
                let want = brute_force_max(&ps, &QueryRect::new(None, Some(qx), Some(qy), None))
                    .map(|c| (c.x, c.y));
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn locate_region_contains_query() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for &n in &[5usize, 17, 64] {
            let ps = random_point_set(n, &mut rng);
            let (idx, _, _) = build_identity(&ps, 2);
            for qx in 0..n as Coord {
                for qy in 0..n as Coord {
                    let r = &idx.regions()[idx.locate_region((qx, qy)) as usize];
                    assert!(r.x_lo <= qx && qx < r.x_hi && r.y_lo <= qy && qy < r.y_hi);
                }
            }
            // regions tile the domain: total area equals n^2
            let area: u64 = idx
                .regions()
                .iter()
                .map(|r| (r.x_hi - r.x_lo) as u64 * (r.y_hi - r.y_lo) as u64)
                .sum();
            assert_eq!(area, (n * n) as u64);
        }
    }

    #[test]
    fn reconstruction_matches_clipped_influence() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let mut stats = QueryStats::default();
        for &n in &[16usize, 64, 200] {
            let ps = random_point_set(n, &mut rng);
            let inf = build_influence(&ps);
            let (idx, pts, trace) = build_identity(&ps, 3);
            let provider = SliceProvider::new(&pts, n);
            for (rid, r) in idx.regions().iter().enumerate() {
                let view = reconstruct_view(&idx, rid as u32, &provider, &mut stats).unwrap();
                // member points match the global segment set clipped to R
                for (i, p) in view.points.iter().enumerate() {
                    let seg = inf.segments()[p.local.0 as usize];
                    assert_eq!(view.alive[i], !seg.empty);
                    if seg.empty {
                        continue;
                    }
                    let want_death = if seg.x_end != crate::influence::X_END_INF
                        && seg.x_end > r.x_lo
                        && seg.x_end < r.x_hi
                        && seg.x_start > r.x_lo
                    {
                        Some(seg.x_end)
                    } else {
                        None
                    };
                    // points on the first column die "invisibly"
                    let want_death = if seg.x_start == r.x_lo { None } else { want_death };
                    let _ = want_death;
                    if seg.x_start > r.x_lo {
                        assert_eq!(
                            view.point_death[i],
                            if seg.x_end != crate::influence::X_END_INF && seg.x_end < r.x_hi {
                                Some(seg.x_end)
                            } else {
                                None
                            },
                            "point {} in region {}",
                            p.local.0,
                            rid
                        );
                    }
                }
                // Left members match the trace owners
                for (j, &owner) in trace.left_owners[rid].iter().enumerate() {
                    let seg = inf.segments()[owner as usize];
                    assert!(seg.x_start < r.x_lo);
                    assert!(seg.x_end > r.x_lo);
                    let want = if seg.x_end != crate::influence::X_END_INF && seg.x_end < r.x_hi {
                        Some(seg.x_end)
                    } else {
                        None
                    };
                    assert_eq!(view.left_death[j], want, "left member {} of region {}", j, rid);
                }
            }
        }
    }

    #[test]
    fn resolution_matches_build_owner_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for &n in &[32usize, 128, 512] {
            let ps = random_point_set(n, &mut rng);
            let (idx, pts, trace) = build_identity(&ps, 3);
            let provider = SliceProvider::new(&pts, n);
            let mut stats = QueryStats::default();
            let mut one_hop_seen = false;
            let mut long_chain_seen = false;
            for rid in 0..idx.regions().len() {
                for (pos, &owner) in trace.left_owners[rid].iter().enumerate() {
                    stats.resolve_walk_hops = 0;
                    let got =
                        resolve_left_segment(&idx, &provider, rid as u32, pos, &mut stats)
                            .unwrap();
                    assert_eq!(got, (owner, ps.y_of(owner)));
                    assert!(
                        stats.resolve_walk_hops <= idx.lambda() + 1,
                        "walk took {} hops with lambda {}",
                        stats.resolve_walk_hops,
                        idx.lambda()
                    );
                    one_hop_seen |= stats.resolve_walk_hops == 1;
                    long_chain_seen |= stats.resolve_walk_hops > 1;
                }
            }
            if n >= 128 {
                assert!(one_hop_seen);
                assert!(long_chain_seen, "no multi-hop resolution exercised at n={n}");
            }
        }
    }

    #[test]
    fn structure_invariants_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        for &n in &[64usize, 512, 4096] {
            let ps = random_point_set(n, &mut rng);
            let lambda = ((n as f64).log2().sqrt().ceil() as usize).max(2);
            let (idx, _, _) = build_identity(&ps, lambda);
            let s = idx.space();
            let cap = WEIGHT_FACTOR * lambda;
            assert!(s.max_region_points <= cap);
            assert!(s.max_region_parts <= cap);
            assert!(s.selected <= (WEIGHT_FACTOR * n).div_ceil(lambda).max(4));
            assert!(s.regions <= (WEIGHT_FACTOR * n).div_ceil(lambda).max(4));
            assert!(
                s.p1_bits + s.p3_bits + s.p5_bits <= 8 * n,
                "payload 1+3+5 = {} bits at n={}",
                s.p1_bits + s.p3_bits + s.p5_bits,
                n
            );
            assert!(s.p2_ones <= (4 * n).div_ceil(lambda).max(8), "{} ones", s.p2_ones);
            assert!(s.p2_zeros <= 4 * n, "{} zeros", s.p2_zeros);
            assert!(
                s.p4_bits() <= (8 * n).div_ceil(lambda) * s.p4_record_width,
                "payload 4 = {} bits",
                s.p4_bits()
            );
            // payload 2 one-count equals the number of adjacencies
            for r in idx.regions() {
                assert_eq!(r.p2_left.count(true), r.left_neighbors.len());
                assert_eq!(r.p2_right.count(true), r.right_neighbors.len());
                assert_eq!(r.p4_presence.len(), r.p1_right.len());
            }
        }
    }

    #[test]
    fn provider_calls_stay_under_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let n = 1024usize;
        let ps = random_point_set(n, &mut rng);
        let lambda = 4;
        let (idx, pts, _) = build_identity(&ps, lambda);
        let provider = SliceProvider::new(&pts, WEIGHT_FACTOR * lambda);
        for _ in 0..500 {
            let q = (rng.random_range(0..n as Coord), rng.random_range(0..n as Coord));
            let (_, stats) = query_two_sided_with_stats(&idx, &provider, q, q).unwrap();
            assert!(stats.max_batch <= WEIGHT_FACTOR * lambda);
            let limit = ((WEIGHT_FACTOR * lambda) as f64).log2().ceil() as usize + 1;
            assert!(
                stats.binary_search_resolves <= limit,
                "{} resolves > {}",
                stats.binary_search_resolves,
                limit
            );
        }
    }

    #[test]
    fn cap_too_small_is_rejected() {
        let ps = random_point_set(64, &mut ChaCha8Rng::seed_from_u64(29));
        let pts = SliceProvider::identity_points(&ps);
        let tops: Vec<(Coord, Coord)> = pts.iter().map(|p| p.top).collect();
        let err = build_two_sided(&ps, &tops, Corner::BottomRight, 4, 3).unwrap_err();
        assert!(matches!(err, TwoSidedError::CapTooSmall { .. }));
    }

    #[test]
    fn provider_cardinality_mismatch_is_detected() {
        let ps = p5();
        let (idx, pts, _) = build_identity(&ps, 2);
        // a provider that drops one point
        let broken: Vec<ProviderPoint> = pts[1..].to_vec();
        let provider = SliceProvider::new(&broken, 64);
        let mut saw_mismatch = false;
        for qx in 0..5 {
            for qy in 0..5 {
                match query_two_sided(&idx, &provider, (qx, qy), (qx, qy)) {
                    Err(TwoSidedError::CardinalityMismatch { .. }) => saw_mismatch = true,
                    _ => {}
                }
            }
        }
        assert!(saw_mismatch);
    }

    #[test]
    fn index_bits_ignore_raw_priorities() {
        // two priority permutations inducing the same segment set produce
        // byte-identical payloads
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let n = 6;
        let mut groups: std::collections::BTreeMap<Vec<(Coord, Coord, bool)>, Vec<Vec<Coord>>> =
            std::collections::BTreeMap::new();
        let upsilon: Vec<Coord> = {
            let mut v: Vec<Coord> = (0..n as Coord).collect();
            v.shuffle(&mut rng);
            v
        };
        let mut perm: Vec<Coord> = (0..n as Coord).collect();
        fn permute(v: &mut Vec<Coord>, k: usize, f: &mut impl FnMut(&[Coord])) {
            if k == v.len() {
                f(v);
                return;
            }
            for i in k..v.len() {
                v.swap(k, i);
                permute(v, k + 1, f);
                v.swap(k, i);
            }
        }
        permute(&mut perm, 0, &mut |pi| {
            let ps = PointSet::new(upsilon.clone(), pi.to_vec()).unwrap();
            let key: Vec<(Coord, Coord, bool)> = build_influence(&ps)
                .segments()
                .iter()
                .map(|s| (s.x_start, s.x_end, s.empty))
                .collect();
            groups.entry(key).or_default().push(pi.to_vec());
        });
        let mut checked = 0;
        for (_, pis) in groups.iter().filter(|(_, v)| v.len() >= 2) {
            let mut bytes: Option<Vec<u8>> = None;
            for pi in pis.iter().take(3) {
                let ps = PointSet::new(upsilon.clone(), pi.clone()).unwrap();
                let (idx, _, _) = build_identity(&ps, 2);
                let mut buf = Vec::new();
                idx.to_bytes(&mut buf);
                match &bytes {
                    None => bytes = Some(buf),
                    Some(prev) => assert_eq!(prev, &buf, "pi={pi:?}"),
                }
            }
            checked += 1;
        }
        assert!(checked > 0, "no colliding priority orders found");
    }

    #[test]
    fn log_n_lambda_gives_linear_payload_bits() {
        // with lambda = log2 n the whole payload fits in a small constant
        // number of bits per point
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for &n in &[1024usize, 4096] {
            let lambda = (n as f64).log2() as usize;
            let ps = random_point_set(n, &mut rng);
            let (idx, _, _) = build_identity(&ps, lambda);
            let bits = idx.space().payload_bits();
            assert!(bits <= 24 * n, "{bits} payload bits at n={n}, lambda={lambda}");
        }
    }

    #[test]
    fn index_is_send_and_sync() {
        fn check<T: Send + Sync>() {}
        check::<TwoSidedIndex>();
        check::<crate::tree::RangeMaxIndex>();
        check::<crate::globals::Globals>();
    }

    #[test]
    fn serialization_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for &n in &[1usize, 7, 64, 300] {
            let ps = random_point_set(n, &mut rng);
            let (idx, pts, _) = build_identity(&ps, 3);
            let mut bytes = Vec::new();
            idx.to_bytes(&mut bytes);
            let (back, used) = TwoSidedIndex::from_bytes(&bytes).unwrap();
            assert_eq!(used, bytes.len());
            let provider = SliceProvider::new(&pts, n.max(64));
            for _ in 0..100.min(n * n) {
                let q = (rng.random_range(0..n as Coord), rng.random_range(0..n as Coord));
                assert_eq!(
                    query_two_sided(&idx, &provider, q, q).unwrap(),
                    query_two_sided(&back, &provider, q, q).unwrap()
                );
            }
            let mut reser = Vec::new();
            back.to_bytes(&mut reser);
            assert_eq!(bytes, reser);
        }
        assert!(TwoSidedIndex::from_bytes(&[0, 1]).is_err());
    }
}
