//! The recursive slab decomposition answering 2-, 3- and 4-sided queries.
//!
//! A problem of size n splits into n/k vertical and n/k horizontal slabs of
//! k points each (k a power of two near sqrt(n log N)), every slab a child
//! problem in its own rank space. A query decomposes into side strips
//! handed to child slabs, a square-aligned middle answered from the matrix
//! of per-square maxima, and 2-sided pieces answered by the children's
//! oriented 2-sided structures. All candidates carry top-level coordinates;
//! the best one wins.
//!
//! Instances are padded to a power of two with low-priority points in the
//! top-right corner; padding never reaches an answer.

use crate::bits::BitsError;
use crate::globals::Globals;
use crate::points::{Candidate, Coord, Corner, PointSet, QueryRect, ALL_CORNERS};
use crate::slab::{local_coords, slab_select, NodeHeader, SlabAxis};
use crate::two_sided::{
    build_two_sided, query_two_sided_with_stats, PointProvider, ProviderPoint, TwoSidedError,
    TwoSidedIndex, TwoSidedSpace, WEIGHT_FACTOR,
};

/// Size rules of the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildConfig {
    pub n_original: usize,
    pub n_padded: usize,
    /// Nodes of at most this many points become leaves.
    pub base_threshold: usize,
    /// Fixed lambda for every 2-sided structure; None uses ceil(sqrt(log2 n)).
    pub lambda_override: Option<usize>,
}

impl BuildConfig {
    pub fn new(n: usize) -> Self {
        Self::with_overrides(n, None, None)
    }

    pub fn with_overrides(
        n: usize,
        lambda_override: Option<usize>,
        base_threshold: Option<usize>,
    ) -> Self {
        assert!(n > 0);
        let n_padded = n.next_power_of_two();
        let base_threshold = base_threshold.unwrap_or_else(|| default_threshold(n_padded));
        BuildConfig {
            n_original: n,
            n_padded,
            base_threshold: base_threshold.max(2),
            lambda_override,
        }
    }

    /// Global L = log2 of the padded instance size.
    pub fn big_l(&self) -> usize {
        self.n_padded.trailing_zeros() as usize
    }

    /// Slab size for a problem of size `n`: the power of two at or below
    /// sqrt(n * L).
    pub fn k_of(&self, n: usize) -> usize {
        let l = self.big_l().max(1);
        let target = ((n * l) as f64).sqrt();
        let k = 1usize << (target.log2().floor() as u32);
        k.min(n / 2).max(1)
    }

    pub fn lambda_of(&self, n: usize) -> usize {
        self.lambda_override
            .unwrap_or_else(|| (n.max(2) as f64).log2().sqrt().ceil() as usize)
            .max(2)
    }

    pub fn is_leaf(&self, n: usize) -> bool {
        n <= self.base_threshold || self.k_of(n) < 2 || n / self.k_of(n) < 2
    }
}

/// Leaves appear at the first level r with 2^r >= L / log2(L); this follows
/// the size sequence n -> k(n) down to that level.
fn default_threshold(n_padded: usize) -> usize {
    let l = n_padded.trailing_zeros() as usize;
    if l <= 2 {
        return n_padded;
    }
    let levels = {
        let bound = l as f64 / (l as f64).log2();
        let mut r = 0u32;
        while (1usize << r) < bound.ceil() as usize {
            r += 1;
        }
        r
    };
    let cfg = BuildConfig {
        n_original: n_padded,
        n_padded,
        base_threshold: 0,
        lambda_override: None,
    };
    let mut size = n_padded;
    for _ in 0..levels {
        let k = cfg.k_of(size);
        if k < 2 || size / k < 2 {
            break;
        }
        size = k;
    }
    size
}

/// One point as a leaf stores it: local coordinates plus top-level image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LeafPoint {
    local: (Coord, Coord),
    top: (Coord, Coord),
}

/// Per-square maxima of an internal node, in top-level coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SquareMatrix {
    m: usize,
    cells: Vec<Option<(Coord, Coord, Coord)>>,
}

impl SquareMatrix {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn cell(&self, a: usize, b: usize) -> Option<(Coord, Coord, Coord)> {
        self.cells[b * self.m + a]
    }
}

/// Doubling table over the cell matrix answering max-priority on any cell
/// rectangle in O(1).
#[derive(Debug, Clone)]
struct MatrixRmq {
    m: usize,
    levels: usize,
    /// tables[li][lj] flattened; entry (a, b) covers [a, a+2^li) x [b, b+2^lj).
    tables: Vec<Vec<Option<(Coord, Coord, Coord)>>>,
}

fn better(
    a: Option<(Coord, Coord, Coord)>,
    b: Option<(Coord, Coord, Coord)>,
) -> Option<(Coord, Coord, Coord)> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if x.2 >= y.2 { x } else { y }),
        (x, None) => x,
        (None, y) => y,
    }
}

impl MatrixRmq {
    fn new(matrix: &SquareMatrix) -> Self {
        let m = matrix.m;
        let levels = (usize::BITS - m.leading_zeros()) as usize; // floor(log2 m) + 1
        let mut tables: Vec<Vec<Option<(Coord, Coord, Coord)>>> = Vec::with_capacity(levels * levels);
        for li in 0..levels {
            for lj in 0..levels {
                let wa = m + 1 - (1 << li);
                let wb = m + 1 - (1 << lj);
                let mut t = vec![None; wa * wb];
                for b in 0..wb {
                    for a in 0..wa {
                        t[b * wa + a] = if li == 0 && lj == 0 {
                            matrix.cells[b * m + a]
                        } else if li > 0 {
                            let prev = &tables[(li - 1) * levels + lj];
                            let pw = m + 1 - (1 << (li - 1));
                            better(prev[b * pw + a], prev[b * pw + a + (1 << (li - 1))])
                        } else {
                            let prev = &tables[li * levels + (lj - 1)];
                            let pw = wa;
                            better(prev[b * pw + a], prev[(b + (1 << (lj - 1))) * pw + a])
                        };
                    }
                }
                tables.push(t);
            }
        }
        MatrixRmq { m, levels, tables }
    }

    fn query(&self, a_lo: usize, a_hi: usize, b_lo: usize, b_hi: usize) -> Option<(Coord, Coord, Coord)> {
        if a_lo > a_hi || b_lo > b_hi || a_hi >= self.m || b_hi >= self.m {
            return None;
        }
        let li = (usize::BITS - 1 - (a_hi - a_lo + 1).leading_zeros()) as usize;
        let lj = (usize::BITS - 1 - (b_hi - b_lo + 1).leading_zeros()) as usize;
        let t = &self.tables[li * self.levels + lj];
        let wa = self.m + 1 - (1 << li);
        let a2 = a_hi + 1 - (1 << li);
        let b2 = b_hi + 1 - (1 << lj);
        better(
            better(t[b_lo * wa + a_lo], t[b_lo * wa + a2]),
            better(t[b2 * wa + a_lo], t[b2 * wa + a2]),
        )
    }
}

enum NodeKind {
    Leaf {
        points: Vec<LeafPoint>,
    },
    Internal {
        k: usize,
        vertical: Vec<Node>,
        horizontal: Vec<Node>,
        matrix: SquareMatrix,
        rmq: MatrixRmq,
        /// Oriented 2-sided structures, indexed by [`Corner::index`].
        two_sided: Vec<TwoSidedIndex>,
    },
}

pub struct Node {
    header: NodeHeader,
    level: u32,
    kind: NodeKind,
}

impl Node {
    pub fn header(&self) -> NodeHeader {
        self.header
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }

    pub fn k(&self) -> usize {
        match &self.kind {
            NodeKind::Leaf { .. } => self.header.n,
            NodeKind::Internal { k, .. } => *k,
        }
    }

    pub fn matrix(&self) -> Option<&SquareMatrix> {
        match &self.kind {
            NodeKind::Leaf { .. } => None,
            NodeKind::Internal { matrix, .. } => Some(matrix),
        }
    }

    /// Max-priority square maximum inside the inclusive cell rectangle.
    pub fn matrix_rmq(
        &self,
        a_lo: usize,
        a_hi: usize,
        b_lo: usize,
        b_hi: usize,
    ) -> Option<(Coord, Coord, Coord)> {
        match &self.kind {
            NodeKind::Leaf { .. } => None,
            NodeKind::Internal { rmq, .. } => rmq.query(a_lo, a_hi, b_lo, b_hi),
        }
    }
}

/// A sub-query in a node's local coordinates: closed clamped bounds, flags
/// marking which bounds actually constrain, and the top-level image of each
/// constraining bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubQuery {
    pub x_lo: Coord,
    pub x_hi: Coord,
    pub y_lo: Coord,
    pub y_hi: Coord,
    pub x_lo_in: bool,
    pub x_hi_in: bool,
    pub y_lo_in: bool,
    pub y_hi_in: bool,
    pub tx_lo: Coord,
    pub tx_hi: Coord,
    pub ty_lo: Coord,
    pub ty_hi: Coord,
}

impl SubQuery {
    /// Root sub-query of a rank-space rectangle over a size-n instance
    /// (local = top-level there). Returns None for empty ranges.
    pub fn from_rect(rect: &QueryRect, n: usize) -> Option<SubQuery> {
        let hi = n as i64 - 1;
        if rect.is_empty_range() || rect.x_hi < 0 || rect.y_hi < 0 || rect.x_lo > hi || rect.y_lo > hi {
            return None;
        }
        let x_lo = rect.x_lo.clamp(0, hi) as Coord;
        let x_hi = rect.x_hi.clamp(0, hi) as Coord;
        let y_lo = rect.y_lo.clamp(0, hi) as Coord;
        let y_hi = rect.y_hi.clamp(0, hi) as Coord;
        Some(SubQuery {
            x_lo,
            x_hi,
            y_lo,
            y_hi,
            x_lo_in: rect.x_lo > 0,
            x_hi_in: rect.x_hi < hi,
            y_lo_in: rect.y_lo > 0,
            y_hi_in: rect.y_hi < hi,
            tx_lo: x_lo,
            tx_hi: x_hi,
            ty_lo: y_lo,
            ty_hi: y_hi,
        })
    }

    fn inside_count(&self) -> usize {
        self.x_lo_in as usize + self.x_hi_in as usize + self.y_lo_in as usize + self.y_hi_in as usize
    }

    /// The piece is 2-sided: exactly one constraining bound per axis.
    fn two_sided_corner(&self) -> Option<Corner> {
        match (self.x_lo_in, self.x_hi_in, self.y_lo_in, self.y_hi_in) {
            (true, false, true, false) => Some(Corner::BottomLeft),
            (true, false, false, true) => Some(Corner::TopLeft),
            (false, true, true, false) => Some(Corner::BottomRight),
            (false, true, false, true) => Some(Corner::TopRight),
            _ => None,
        }
    }

    /// Local closed rectangle, for audits.
    pub fn rect(&self) -> QueryRect {
        QueryRect::closed(self.x_lo, self.x_hi, self.y_lo, self.y_hi)
    }
}

/// One piece of a decomposed query, in the node's own coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryPiece {
    /// Recurse into the child slab with the given sub-query (slab-axis
    /// coordinates still the node's own; mapping happens on descent).
    Recurse {
        axis: SlabAxis,
        index: usize,
        sub: SubQuery,
    },
    /// Square-aligned middle: answered from the matrix.
    Matrix {
        a_lo: usize,
        a_hi: usize,
        b_lo: usize,
        b_hi: usize,
    },
}

/// Splits `sub` over a problem of size `n` with slab size `k` into disjoint
/// covering pieces per the slab grid. Requires `sub` to be neither 2-sided
/// nor unconstrained (those are terminal).
pub fn decompose_query(n: usize, k: usize, sub: &SubQuery, headers: DecomposeHeaders) -> Vec<QueryPiece> {
    let m = n / k;
    let kc = k as Coord;
    let a_lo = (sub.x_lo / kc) as usize;
    let a_hi = (sub.x_hi / kc) as usize;
    let b_lo = (sub.y_lo / kc) as usize;
    let b_hi = (sub.y_hi / kc) as usize;
    let mut pieces = Vec::new();
    if a_lo == a_hi {
        pieces.push(QueryPiece::Recurse { axis: SlabAxis::Vertical, index: a_lo, sub: *sub });
        return pieces;
    }
    if b_lo == b_hi {
        pieces.push(QueryPiece::Recurse { axis: SlabAxis::Horizontal, index: b_lo, sub: *sub });
        return pieces;
    }
    // side strips own their slab's full share of the query
    let strip_lo_x = sub.x_lo_in && sub.x_lo % kc != 0;
    let strip_hi_x = sub.x_hi_in && sub.x_hi % kc != kc - 1;
    let strip_lo_y = sub.y_lo_in && sub.y_lo % kc != 0;
    let strip_hi_y = sub.y_hi_in && sub.y_hi % kc != kc - 1;
    let mid_a_lo = if strip_lo_x { a_lo + 1 } else { a_lo };
    let mid_a_hi = if strip_hi_x { a_hi - 1 } else { a_hi };
    let mid_b_lo = if strip_lo_y { b_lo + 1 } else { b_lo };
    let mid_b_hi = if strip_hi_y { b_hi - 1 } else { b_hi };

    if strip_lo_x {
        let mut s = *sub;
        s.x_hi = (a_lo as Coord + 1) * kc - 1;
        s.x_hi_in = false;
        pieces.push(QueryPiece::Recurse { axis: SlabAxis::Vertical, index: a_lo, sub: s });
    }
    if strip_hi_x {
        let mut s = *sub;
        s.x_lo = a_hi as Coord * kc;
        s.x_lo_in = false;
        pieces.push(QueryPiece::Recurse { axis: SlabAxis::Vertical, index: a_hi, sub: s });
    }
    if mid_a_lo <= mid_a_hi {
        let mid_x_lo = mid_a_lo as Coord * kc;
        let mid_x_hi = (mid_a_hi as Coord + 1) * kc - 1;
        // the middle's x bounds constrain unless they sit on the domain edge
        let x_lo_in = mid_a_lo > 0;
        let x_hi_in = mid_a_hi < m - 1;
        let (tx_lo, tx_hi) = headers.strip_tops(mid_a_lo, mid_a_hi);
        if strip_lo_y {
            let mut s = *sub;
            s.x_lo = mid_x_lo;
            s.x_hi = mid_x_hi;
            s.x_lo_in = x_lo_in;
            s.x_hi_in = x_hi_in;
            s.tx_lo = tx_lo;
            s.tx_hi = tx_hi;
            s.y_hi = (b_lo as Coord + 1) * kc - 1;
            s.y_hi_in = false;
            pieces.push(QueryPiece::Recurse { axis: SlabAxis::Horizontal, index: b_lo, sub: s });
        }
        if strip_hi_y {
            let mut s = *sub;
            s.x_lo = mid_x_lo;
            s.x_hi = mid_x_hi;
            s.x_lo_in = x_lo_in;
            s.x_hi_in = x_hi_in;
            s.tx_lo = tx_lo;
            s.tx_hi = tx_hi;
            s.y_lo = b_hi as Coord * kc;
            s.y_lo_in = false;
            pieces.push(QueryPiece::Recurse { axis: SlabAxis::Horizontal, index: b_hi, sub: s });
        }
        if mid_b_lo <= mid_b_hi {
            pieces.push(QueryPiece::Matrix {
                a_lo: mid_a_lo,
                a_hi: mid_a_hi,
                b_lo: mid_b_lo,
                b_hi: mid_b_hi,
            });
        }
    }
    pieces
}

/// Top-level x images of the slab-aligned middle bounds, read from the
/// vertical children's headers.
#[derive(Clone, Copy)]
pub struct DecomposeHeaders<'a> {
    vertical: Option<&'a [Node]>,
}

impl<'a> DecomposeHeaders<'a> {
    /// For audits that never execute pieces.
    pub fn detached() -> DecomposeHeaders<'static> {
        DecomposeHeaders { vertical: None }
    }

    fn strip_tops(&self, a_lo: usize, a_hi: usize) -> (Coord, Coord) {
        match self.vertical {
            Some(children) => (children[a_lo].header.x_lo, children[a_hi].header.x_hi),
            None => (0, 0),
        }
    }
}

/// Per-query instrumentation.
#[derive(Debug, Clone, Copy, Default)]
pub struct TreeStats {
    pub visited: usize,
    pub candidates: usize,
    pub two_sided_queries: usize,
    pub max_provider_batch: usize,
}

/// Space summary used by the report; bit counts are of serialized payloads.
#[derive(Debug, Clone, Default)]
pub struct TreeSpace {
    pub nodes: usize,
    pub leaves: usize,
    pub leaf_point_records: usize,
    pub matrix_cells: usize,
    pub two_sided: Vec<TwoSidedSpace>,
    pub depth: u32,
}

/// The whole preprocessed instance.
pub struct RangeMaxIndex {
    cfg: BuildConfig,
    globals: Globals,
    /// Padded priorities by padded x.
    pi: Vec<Coord>,
    root: Node,
    depth: u32,
}

/// Pads to a power of two: extra points go on the top-right diagonal with
/// the lowest priorities, so no padding point ever beats an original.
fn pad_point_set(ps: &PointSet) -> PointSet {
    let n = ps.len();
    let n_pad = n.next_power_of_two();
    if n_pad == n {
        return ps.clone();
    }
    let pad = (n_pad - n) as Coord;
    let mut upsilon: Vec<Coord> = Vec::with_capacity(n_pad);
    let mut pi: Vec<Coord> = Vec::with_capacity(n_pad);
    for (_, y, p) in ps.iter() {
        upsilon.push(y);
        pi.push(p + pad);
    }
    for i in n..n_pad {
        upsilon.push(i as Coord);
        pi.push((i - n) as Coord);
    }
    PointSet::new(upsilon, pi).expect("padded permutations")
}

struct BuildPoint {
    local: (Coord, Coord),
    top: (Coord, Coord),
    priority: Coord,
}

fn build_node(cfg: &BuildConfig, header: NodeHeader, level: u32, pts: Vec<BuildPoint>) -> Node {
    let n = pts.len();
    debug_assert_eq!(n, header.n);
    if cfg.is_leaf(n) {
        return Node {
            header,
            level,
            kind: NodeKind::Leaf {
                points: pts
                    .into_iter()
                    .map(|p| LeafPoint { local: p.local, top: p.top })
                    .collect(),
            },
        };
    }
    let k = cfg.k_of(n);
    let m = n / k;
    let kc = k as Coord;

    // per-square maxima
    let mut cells: Vec<Option<(Coord, Coord, Coord)>> = vec![None; m * m];
    for p in &pts {
        let a = (p.local.0 / kc) as usize;
        let b = (p.local.1 / kc) as usize;
        let cell = &mut cells[b * m + a];
        if cell.map_or(true, |(_, _, q)| p.priority > q) {
            *cell = Some((p.top.0, p.top.1, p.priority));
        }
    }
    let matrix = SquareMatrix { m, cells };
    let rmq = MatrixRmq::new(&matrix);

    // oriented 2-sided structures over this node's own points
    let local_ps = {
        let mut upsilon = vec![0 as Coord; n];
        let mut pr = vec![0 as Coord; n];
        let mut prio_rank: Vec<usize> = (0..n).collect();
        prio_rank.sort_by_key(|&i| pts[i].priority);
        let mut rank_of = vec![0 as Coord; n];
        for (r, &i) in prio_rank.iter().enumerate() {
            rank_of[i] = r as Coord;
        }
        for (i, p) in pts.iter().enumerate() {
            debug_assert_eq!(p.local.0 as usize, i);
            upsilon[i] = p.local.1;
            pr[i] = rank_of[i];
        }
        PointSet::new(upsilon, pr).expect("local problem is in rank space")
    };
    let lambda = cfg.lambda_of(n);
    let cap = WEIGHT_FACTOR * lambda.max(2);
    let two_sided: Vec<TwoSidedIndex> = ALL_CORNERS
        .iter()
        .map(|&corner| {
            let canon = crate::points::reflect(&local_ps, corner);
            let mut tops = vec![(0 as Coord, 0 as Coord); n];
            for p in &pts {
                tops[corner.map_x(n, p.local.0) as usize] = p.top;
            }
            build_two_sided(&canon, &tops, corner, lambda, cap).expect("two-sided build")
        })
        .collect();

    // children: vertical slabs by local x, horizontal slabs by local y
    let mut vertical = Vec::with_capacity(m);
    let mut horizontal = Vec::with_capacity(m);
    for index in 0..m {
        let lo = index as Coord * kc;
        let hi = lo + kc;
        // vertical slab: local x in [lo, hi)
        let mut members: Vec<&BuildPoint> =
            pts.iter().filter(|p| p.local.0 >= lo && p.local.0 < hi).collect();
        members.sort_by_key(|p| p.local.0);
        let mut ys: Vec<Coord> = members.iter().map(|p| p.local.1).collect();
        ys.sort_unstable();
        let child_pts: Vec<BuildPoint> = members
            .iter()
            .map(|p| BuildPoint {
                local: (p.local.0 - lo, ys.binary_search(&p.local.1).unwrap() as Coord),
                top: p.top,
                priority: p.priority,
            })
            .collect();
        let child_header = NodeHeader {
            x_lo: members.iter().map(|p| p.top.0).min().unwrap(),
            x_hi: members.iter().map(|p| p.top.0).max().unwrap(),
            y_lo: header.y_lo,
            y_hi: header.y_hi,
            n: k,
        };
        vertical.push(build_node(cfg, child_header, level + 1, child_pts));

        // horizontal slab: local y in [lo, hi)
        let mut members: Vec<&BuildPoint> =
            pts.iter().filter(|p| p.local.1 >= lo && p.local.1 < hi).collect();
        members.sort_by_key(|p| p.local.0);
        let child_pts: Vec<BuildPoint> = members
            .iter()
            .enumerate()
            .map(|(xr, p)| BuildPoint {
                local: (xr as Coord, p.local.1 - lo),
                top: p.top,
                priority: p.priority,
            })
            .collect();
        let child_header = NodeHeader {
            x_lo: header.x_lo,
            x_hi: header.x_hi,
            y_lo: members.iter().map(|p| p.top.1).min().unwrap(),
            y_hi: members.iter().map(|p| p.top.1).max().unwrap(),
            n: k,
        };
        horizontal.push(build_node(cfg, child_header, level + 1, child_pts));
    }

    Node {
        header,
        level,
        kind: NodeKind::Internal {
            k,
            vertical,
            horizontal,
            matrix,
            rmq,
            two_sided,
        },
    }
}

/// Provider backing a node's 2-sided queries with slab-select.
struct NodeProvider<'a> {
    globals: &'a Globals,
    header: NodeHeader,
    corner: Corner,
    cap: usize,
}

impl PointProvider for NodeProvider<'_> {
    fn batch_cap(&self) -> usize {
        self.cap
    }

    fn report(&self, rect: &QueryRect) -> Result<Vec<ProviderPoint>, TwoSidedError> {
        let true_rect = crate::points::reflect_rect(rect, self.corner, self.header.n);
        let tops = slab_select(self.globals, &self.header, &true_rect, Some(self.cap))
            .map_err(|e| TwoSidedError::Provider(e.to_string()))?;
        let n = self.header.n;
        let mut out: Vec<ProviderPoint> = tops
            .into_iter()
            .map(|top| {
                let local = local_coords(self.globals, &self.header, top);
                ProviderPoint {
                    local: (self.corner.map_x(n, local.0), self.corner.map_y(n, local.1)),
                    top,
                }
            })
            .collect();
        out.sort_by_key(|p| p.local.0);
        Ok(out)
    }
}

impl RangeMaxIndex {
    pub fn build(ps: &PointSet, cfg: BuildConfig) -> Self {
        assert_eq!(cfg.n_original, ps.len());
        let padded = pad_point_set(ps);
        let globals = Globals::new(&padded);
        let n_pad = padded.len();
        let pts: Vec<BuildPoint> = padded
            .iter()
            .map(|(x, y, p)| BuildPoint { local: (x, y), top: (x, y), priority: p })
            .collect();
        let root = build_node(&cfg, NodeHeader::top_level(n_pad), 0, pts);
        let mut depth = 0;
        fn walk(node: &Node, depth: &mut u32) {
            *depth = (*depth).max(node.level);
            if let NodeKind::Internal { vertical, horizontal, .. } = &node.kind {
                for c in vertical.iter().chain(horizontal) {
                    walk(c, depth);
                }
            }
        }
        walk(&root, &mut depth);
        RangeMaxIndex {
            cfg,
            pi: padded.pi().to_vec(),
            globals,
            root,
            depth,
        }
    }

    pub fn config(&self) -> &BuildConfig {
        &self.cfg
    }

    pub fn globals(&self) -> &Globals {
        &self.globals
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub(crate) fn padded_pi(&self) -> &[Coord] {
        &self.pi
    }

    pub(crate) fn from_parts(cfg: BuildConfig, globals: Globals, pi: Vec<Coord>, root: Node) -> Self {
        let mut depth = 0;
        fn walk(node: &Node, depth: &mut u32) {
            *depth = (*depth).max(node.level);
            if let NodeKind::Internal { vertical, horizontal, .. } = &node.kind {
                for c in vertical.iter().chain(horizontal) {
                    walk(c, depth);
                }
            }
        }
        walk(&root, &mut depth);
        RangeMaxIndex { cfg, globals, pi, root, depth }
    }

    /// Levels below the root at the deepest leaf.
    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Answers a query in the original rank space.
    pub fn query(&self, rect: &QueryRect) -> Option<Candidate> {
        self.query_with_stats(rect).0
    }

    pub fn query_with_stats(&self, rect: &QueryRect) -> (Option<Candidate>, TreeStats) {
        let mut stats = TreeStats::default();
        let Some(sub) = SubQuery::from_rect(rect, self.cfg.n_padded) else {
            return (None, stats);
        };
        let mut candidates: Vec<(Coord, Coord, Coord)> = Vec::new();
        self.exec(&self.root, sub, &mut candidates, &mut stats);
        stats.candidates = candidates.len();
        let pad = (self.cfg.n_padded - self.cfg.n_original) as Coord;
        let best = candidates
            .into_iter()
            .filter(|&(x, _, _)| (x as usize) < self.cfg.n_original)
            .max_by_key(|&(_, _, p)| p)
            .map(|(x, y, p)| Candidate { x, y, priority: p - pad });
        (best, stats)
    }

    fn exec(&self, node: &Node, sub: SubQuery, out: &mut Vec<(Coord, Coord, Coord)>, stats: &mut TreeStats) {
        stats.visited += 1;
        match &node.kind {
            NodeKind::Leaf { points } => {
                let rect = sub.rect();
                let mut best: Option<(Coord, Coord, Coord)> = None;
                for p in points {
                    if rect.contains(p.local.0, p.local.1) {
                        let prio = self.pi[p.top.0 as usize];
                        if best.map_or(true, |(_, _, q)| prio > q) {
                            best = Some((p.top.0, p.top.1, prio));
                        }
                    }
                }
                if let Some(c) = best {
                    out.push(c);
                }
            }
            NodeKind::Internal { k, vertical, horizontal, two_sided, .. } => {
                let n = node.header.n;
                if sub.inside_count() == 0 {
                    let m = n / k;
                    if let Some(c) = node.matrix_rmq(0, m - 1, 0, m - 1) {
                        out.push(c);
                    }
                    return;
                }
                if let Some(corner) = sub.two_sided_corner() {
                    let qx = if sub.x_lo_in { sub.x_lo } else { sub.x_hi };
                    let qy = if sub.y_lo_in { sub.y_lo } else { sub.y_hi };
                    let q_top = (
                        if sub.x_lo_in { sub.tx_lo } else { sub.tx_hi },
                        if sub.y_lo_in { sub.ty_lo } else { sub.ty_hi },
                    );
                    let idx = &two_sided[corner.index()];
                    let provider = NodeProvider {
                        globals: &self.globals,
                        header: node.header,
                        corner,
                        cap: WEIGHT_FACTOR * idx.lambda(),
                    };
                    let q_local = (corner.map_x(n, qx), corner.map_y(n, qy));
                    let (ans, qs) = query_two_sided_with_stats(idx, &provider, q_local, q_top)
                        .expect("consistent 2-sided structure");
                    stats.two_sided_queries += 1;
                    stats.max_provider_batch = stats.max_provider_batch.max(qs.max_batch);
                    if let Some((tx, ty)) = ans {
                        out.push((tx, ty, self.pi[tx as usize]));
                    }
                    return;
                }
                let headers = DecomposeHeaders { vertical: Some(vertical) };
                for piece in decompose_query(n, *k, &sub, headers) {
                    match piece {
                        QueryPiece::Matrix { a_lo, a_hi, b_lo, b_hi } => {
                            if let Some(c) = node.matrix_rmq(a_lo, a_hi, b_lo, b_hi) {
                                out.push(c);
                            }
                        }
                        QueryPiece::Recurse { axis, index, sub: piece_sub } => {
                            let child = match axis {
                                SlabAxis::Vertical => &vertical[index],
                                SlabAxis::Horizontal => &horizontal[index],
                            };
                            if let Some(mapped) =
                                self.map_into_child(child, axis, index, *k, &piece_sub)
                            {
                                self.exec(child, mapped, out, stats);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Translates a piece into the child's local coordinates: arithmetic on
    /// the sliced axis, counting against the child's header on the other.
    fn map_into_child(
        &self,
        child: &Node,
        axis: SlabAxis,
        index: usize,
        k: usize,
        sub: &SubQuery,
    ) -> Option<SubQuery> {
        let g = &self.globals;
        let h = child.header;
        let kc = k as Coord;
        let base = index as Coord * kc;
        let mut out = *sub;
        match axis {
            SlabAxis::Vertical => {
                out.x_lo = sub.x_lo.max(base) - base;
                out.x_hi = sub.x_hi.min(base + kc - 1) - base;
                // y bounds translate by counting below the top-level bound
                if sub.y_lo_in {
                    let below = g.range_count(&QueryRect {
                        x_lo: h.x_lo as i64,
                        x_hi: h.x_hi as i64,
                        y_lo: h.y_lo as i64,
                        y_hi: sub.ty_lo as i64 - 1,
                    }) as Coord;
                    if below as usize >= k {
                        return None;
                    }
                    out.y_lo = below;
                } else {
                    out.y_lo = 0;
                }
                if sub.y_hi_in {
                    let through = g.range_count(&QueryRect {
                        x_lo: h.x_lo as i64,
                        x_hi: h.x_hi as i64,
                        y_lo: h.y_lo as i64,
                        y_hi: sub.ty_hi as i64,
                    }) as Coord;
                    if through == 0 {
                        return None;
                    }
                    out.y_hi = through - 1;
                } else {
                    out.y_hi = kc - 1;
                }
            }
            SlabAxis::Horizontal => {
                out.y_lo = sub.y_lo.max(base) - base;
                out.y_hi = sub.y_hi.min(base + kc - 1) - base;
                if sub.x_lo_in {
                    let left = g.range_count(&QueryRect {
                        x_lo: h.x_lo as i64,
                        x_hi: sub.tx_lo as i64 - 1,
                        y_lo: h.y_lo as i64,
                        y_hi: h.y_hi as i64,
                    }) as Coord;
                    if left as usize >= k {
                        return None;
                    }
                    out.x_lo = left;
                } else {
                    out.x_lo = 0;
                }
                if sub.x_hi_in {
                    let through = g.range_count(&QueryRect {
                        x_lo: h.x_lo as i64,
                        x_hi: sub.tx_hi as i64,
                        y_lo: h.y_lo as i64,
                        y_hi: h.y_hi as i64,
                    }) as Coord;
                    if through == 0 {
                        return None;
                    }
                    out.x_hi = through - 1;
                } else {
                    out.x_hi = kc - 1;
                }
            }
        }
        if out.x_lo > out.x_hi || out.y_lo > out.y_hi {
            return None;
        }
        Some(out)
    }

    /// Space summary across the tree.
    pub fn space(&self) -> TreeSpace {
        let mut space = TreeSpace { depth: self.depth, ..TreeSpace::default() };
        fn walk(node: &Node, space: &mut TreeSpace) {
            space.nodes += 1;
            match &node.kind {
                NodeKind::Leaf { points } => {
                    space.leaves += 1;
                    space.leaf_point_records += points.len();
                }
                NodeKind::Internal { vertical, horizontal, matrix, two_sided, .. } => {
                    space.matrix_cells += matrix.cells.len();
                    for t in two_sided {
                        space.two_sided.push(t.space().clone());
                    }
                    for c in vertical.iter().chain(horizontal) {
                        walk(c, space);
                    }
                }
            }
        }
        walk(&self.root, &mut space);
        space
    }
}

// ---------------------------------------------------------------------------
// serialization of nodes (the file layer lives in `format`)
// ---------------------------------------------------------------------------

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn u32_at(bytes: &[u8], at: &mut usize) -> Result<u32, BitsError> {
    let v = bytes
        .get(*at..*at + 4)
        .map(|s| u32::from_le_bytes(s.try_into().unwrap()))
        .ok_or(BitsError::Truncated { need: *at + 4, have: bytes.len() })?;
    *at += 4;
    Ok(v)
}

/// Byte streams of the three index-file sections touched by the tree, in
/// node pre-order (vertical children before horizontal).
impl Node {
    pub(crate) fn write(&self, tree: &mut Vec<u8>, matrices: &mut Vec<u8>, two: &mut Vec<u8>) {
        push_u32(tree, self.header.x_lo);
        push_u32(tree, self.header.x_hi);
        push_u32(tree, self.header.y_lo);
        push_u32(tree, self.header.y_hi);
        push_u32(tree, self.header.n as u32);
        push_u32(tree, self.level);
        match &self.kind {
            NodeKind::Leaf { points } => {
                push_u32(tree, 0);
                for p in points {
                    push_u32(tree, p.local.0);
                    push_u32(tree, p.local.1);
                    push_u32(tree, p.top.0);
                    push_u32(tree, p.top.1);
                }
            }
            NodeKind::Internal { k, vertical, horizontal, matrix, two_sided, .. } => {
                push_u32(tree, 1);
                push_u32(tree, *k as u32);
                for cell in &matrix.cells {
                    match cell {
                        None => push_u32(matrices, 0),
                        Some((x, y, p)) => {
                            push_u32(matrices, 1);
                            push_u32(matrices, *x);
                            push_u32(matrices, *y);
                            push_u32(matrices, *p);
                        }
                    }
                }
                for t in two_sided {
                    t.to_bytes(two);
                }
                for c in vertical.iter().chain(horizontal) {
                    c.write(tree, matrices, two);
                }
            }
        }
    }

    pub(crate) fn read(
        tree: &[u8],
        matrices: &[u8],
        two: &[u8],
        at_tree: &mut usize,
        at_matrix: &mut usize,
        at_two: &mut usize,
    ) -> Result<Node, BitsError> {
        let x_lo = u32_at(tree, at_tree)?;
        let x_hi = u32_at(tree, at_tree)?;
        let y_lo = u32_at(tree, at_tree)?;
        let y_hi = u32_at(tree, at_tree)?;
        let n = u32_at(tree, at_tree)? as usize;
        let level = u32_at(tree, at_tree)?;
        // a node of n points needs at least 4n tree bytes in either kind
        if n == 0 || level > 64 || tree.len().saturating_sub(*at_tree) < 4 * n {
            return Err(BitsError::LengthMismatch { bits: n as u64, words: level as usize });
        }
        let header = NodeHeader { x_lo, x_hi, y_lo, y_hi, n };
        let tag = u32_at(tree, at_tree)?;
        match tag {
            0 => {
                let mut points = Vec::with_capacity(n.min(1 << 20));
                for _ in 0..n {
                    points.push(LeafPoint {
                        local: (u32_at(tree, at_tree)?, u32_at(tree, at_tree)?),
                        top: (u32_at(tree, at_tree)?, u32_at(tree, at_tree)?),
                    });
                }
                Ok(Node { header, level, kind: NodeKind::Leaf { points } })
            }
            1 => {
                let k = u32_at(tree, at_tree)? as usize;
                if k == 0 || n % k != 0 || n / k < 2 {
                    return Err(BitsError::LengthMismatch { bits: k as u64, words: n });
                }
                let m = n / k;
                if matrices.len().saturating_sub(*at_matrix) < 4 * m * m {
                    return Err(BitsError::Truncated { need: 4 * m * m, have: matrices.len() });
                }
                let mut cells = Vec::with_capacity(m * m);
                for _ in 0..m * m {
                    let present = u32_at(matrices, at_matrix)?;
                    cells.push(match present {
                        0 => None,
                        1 => Some((
                            u32_at(matrices, at_matrix)?,
                            u32_at(matrices, at_matrix)?,
                            u32_at(matrices, at_matrix)?,
                        )),
                        other => {
                            return Err(BitsError::LengthMismatch { bits: other as u64, words: 1 })
                        }
                    });
                }
                let matrix = SquareMatrix { m, cells };
                let rmq = MatrixRmq::new(&matrix);
                let mut two_sided = Vec::with_capacity(4);
                for _ in 0..4 {
                    let (t, used) = TwoSidedIndex::from_bytes(&two[*at_two..])
                        .map_err(|_| BitsError::Truncated { need: *at_two, have: two.len() })?;
                    *at_two += used;
                    two_sided.push(t);
                }
                let mut vertical = Vec::with_capacity(m);
                for _ in 0..m {
                    vertical.push(Node::read(tree, matrices, two, at_tree, at_matrix, at_two)?);
                }
                let mut horizontal = Vec::with_capacity(m);
                for _ in 0..m {
                    horizontal.push(Node::read(tree, matrices, two, at_tree, at_matrix, at_two)?);
                }
                Ok(Node {
                    header,
                    level,
                    kind: NodeKind::Internal { k, vertical, horizontal, matrix, rmq, two_sided },
                })
            }
            other => Err(BitsError::LengthMismatch { bits: other as u64, words: 2 }),
        }
    }

    /// Serialized byte size of the leaf point records below this node.
    pub(crate) fn leaf_bytes(&self) -> usize {
        match &self.kind {
            NodeKind::Leaf { points } => 16 * points.len(),
            NodeKind::Internal { vertical, horizontal, .. } => {
                vertical.iter().chain(horizontal).map(|c| c.leaf_bytes()).sum()
            }
        }
    }
}
