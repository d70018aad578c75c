//! Points in rank space, query rectangles, and the brute-force oracle.
//!
//! A point set holds two permutations: `upsilon` maps an x-coordinate to the
//! y-coordinate of the point in that column, and `pi` maps an x-coordinate to
//! the priority of that point. All coordinates and priorities are distinct by
//! construction, so every structure downstream may assume general position.

use thiserror::Error;

/// Rank coordinate. Desk-scale instances fit comfortably in 32 bits.
pub type Coord = u32;

#[derive(Debug, Error, PartialEq)]
pub enum PointError {
    #[error("column {0} is not a permutation: value {1} out of range or repeated")]
    NotAPermutation(&'static str, u64),
    #[error("permutation lengths differ: upsilon has {0}, pi has {1}")]
    LengthMismatch(usize, usize),
    #[error("duplicate {axis} value {value} at input rows {first} and {second}")]
    Duplicate {
        axis: &'static str,
        value: f64,
        first: usize,
        second: usize,
    },
}

fn check_permutation(name: &'static str, perm: &[Coord]) -> Result<(), PointError> {
    let n = perm.len();
    let mut seen = vec![false; n];
    for &v in perm {
        let v = v as usize;
        if v >= n || seen[v] {
            return Err(PointError::NotAPermutation(name, v as u64));
        }
        seen[v] = true;
    }
    Ok(())
}

/// `n` points in rank space: point `i` is `(i, upsilon(i))` with priority `pi(i)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointSet {
    upsilon: Vec<Coord>,
    pi: Vec<Coord>,
}

impl PointSet {
    pub fn new(upsilon: Vec<Coord>, pi: Vec<Coord>) -> Result<Self, PointError> {
        if upsilon.len() != pi.len() {
            return Err(PointError::LengthMismatch(upsilon.len(), pi.len()));
        }
        check_permutation("upsilon", &upsilon)?;
        check_permutation("pi", &pi)?;
        Ok(PointSet { upsilon, pi })
    }

    /// The identity instance: points on the diagonal with increasing priorities.
    pub fn identity(n: usize) -> Self {
        let id: Vec<Coord> = (0..n as Coord).collect();
        PointSet {
            upsilon: id.clone(),
            pi: id,
        }
    }

    pub fn len(&self) -> usize {
        self.upsilon.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upsilon.is_empty()
    }

    /// y-coordinate of the point in column `x`.
    pub fn y_of(&self, x: Coord) -> Coord {
        self.upsilon[x as usize]
    }

    /// Priority of the point in column `x`.
    pub fn priority_of(&self, x: Coord) -> Coord {
        self.pi[x as usize]
    }

    pub fn upsilon(&self) -> &[Coord] {
        &self.upsilon
    }

    pub fn pi(&self) -> &[Coord] {
        &self.pi
    }

    /// Inverse of `upsilon`: x-coordinate of the point in row `y`.
    pub fn upsilon_inverse(&self) -> Vec<Coord> {
        let mut inv = vec![0; self.len()];
        for (x, &y) in self.upsilon.iter().enumerate() {
            inv[y as usize] = x as Coord;
        }
        inv
    }

    pub fn iter(&self) -> impl Iterator<Item = (Coord, Coord, Coord)> + '_ {
        (0..self.len() as Coord).map(move |x| (x, self.upsilon[x as usize], self.pi[x as usize]))
    }
}

/// A query rectangle in rank coordinates, inclusive on bounded sides.
///
/// Open sides are sentinels outside `[0, n-1]` (negative for a low bound,
/// `i64::MAX / 2` for a high bound) so that containment tests and rectangle
/// intersection stay branch-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QueryRect {
    pub x_lo: i64,
    pub x_hi: i64,
    pub y_lo: i64,
    pub y_hi: i64,
}

/// Sentinel for an open low side.
pub const OPEN_LO: i64 = -1;
/// Sentinel for an open high side.
pub const OPEN_HI: i64 = i64::MAX / 2;

impl QueryRect {
    pub fn new(x_lo: Option<Coord>, x_hi: Option<Coord>, y_lo: Option<Coord>, y_hi: Option<Coord>) -> Self {
        QueryRect {
            x_lo: x_lo.map_or(OPEN_LO, |v| v as i64),
            x_hi: x_hi.map_or(OPEN_HI, |v| v as i64),
            y_lo: y_lo.map_or(OPEN_LO, |v| v as i64),
            y_hi: y_hi.map_or(OPEN_HI, |v| v as i64),
        }
    }

    pub fn closed(x_lo: Coord, x_hi: Coord, y_lo: Coord, y_hi: Coord) -> Self {
        QueryRect {
            x_lo: x_lo as i64,
            x_hi: x_hi as i64,
            y_lo: y_lo as i64,
            y_hi: y_hi as i64,
        }
    }

    /// The whole plane.
    pub fn full() -> Self {
        QueryRect {
            x_lo: OPEN_LO,
            x_hi: OPEN_HI,
            y_lo: OPEN_LO,
            y_hi: OPEN_HI,
        }
    }

    pub fn contains(&self, x: Coord, y: Coord) -> bool {
        let (x, y) = (x as i64, y as i64);
        self.x_lo <= x && x <= self.x_hi && self.y_lo <= y && y <= self.y_hi
    }

    /// Number of sides that actually constrain points of a size-`n` instance.
    pub fn sidedness(&self, n: usize) -> u8 {
        let n = n as i64;
        (self.x_lo > 0) as u8
            + (self.x_hi < n - 1) as u8
            + (self.y_lo > 0) as u8
            + (self.y_hi < n - 1) as u8
    }

    /// True when the rank range is empty on either axis.
    pub fn is_empty_range(&self) -> bool {
        self.x_lo > self.x_hi || self.y_lo > self.y_hi
    }
}

/// A point in top-level rank coordinates together with its priority rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub x: Coord,
    pub y: Coord,
    pub priority: Coord,
}

/// Maps real-valued inputs to rank space and real query rectangles to rank
/// rectangles.
#[derive(Debug, Clone)]
pub struct CoordMaps {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl CoordMaps {
    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    /// Smallest rank rectangle containing exactly the points inside the real
    /// rectangle. Empty rank ranges (`x_lo > x_hi`) are legal.
    pub fn map_rect(&self, x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64) -> QueryRect {
        let lo = |vals: &[f64], v: f64| vals.partition_point(|&t| t < v) as i64;
        let hi = |vals: &[f64], v: f64| vals.partition_point(|&t| t <= v) as i64 - 1;
        QueryRect {
            x_lo: lo(&self.xs, x_lo),
            x_hi: hi(&self.xs, x_hi),
            y_lo: lo(&self.ys, y_lo),
            y_hi: hi(&self.ys, y_hi),
        }
    }
}

/// Reduces real-valued triples `(x, y, priority)` to rank space, preserving
/// all coordinate and priority orders.
pub fn rank_reduce(raw: &[(f64, f64, f64)]) -> Result<(PointSet, CoordMaps), PointError> {
    fn ranks(axis: &'static str, vals: impl Iterator<Item = f64> + Clone, n: usize) -> Result<Vec<usize>, PointError> {
        let mut order: Vec<usize> = (0..n).collect();
        let v: Vec<f64> = vals.collect();
        order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("non-finite input"));
        for w in order.windows(2) {
            if v[w[0]] == v[w[1]] {
                return Err(PointError::Duplicate {
                    axis,
                    value: v[w[0]],
                    first: w[0].min(w[1]),
                    second: w[0].max(w[1]),
                });
            }
        }
        let mut rank = vec![0usize; n];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r;
        }
        Ok(rank)
    }

    let n = raw.len();
    let x_rank = ranks("x", raw.iter().map(|t| t.0), n)?;
    let y_rank = ranks("y", raw.iter().map(|t| t.1), n)?;
    let p_rank = ranks("priority", raw.iter().map(|t| t.2), n)?;

    let mut upsilon = vec![0 as Coord; n];
    let mut pi = vec![0 as Coord; n];
    for i in 0..n {
        upsilon[x_rank[i]] = y_rank[i] as Coord;
        pi[x_rank[i]] = p_rank[i] as Coord;
    }
    let ps = PointSet { upsilon, pi };

    let mut xs: Vec<f64> = raw.iter().map(|t| t.0).collect();
    let mut ys: Vec<f64> = raw.iter().map(|t| t.1).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok((ps, CoordMaps { xs, ys }))
}

/// The oracle: maximum-priority point inside `r`, scanning every point.
pub fn brute_force_max(ps: &PointSet, r: &QueryRect) -> Option<Candidate> {
    let mut best: Option<Candidate> = None;
    for (x, y, p) in ps.iter() {
        if r.contains(x, y) && best.map_or(true, |b| p > b.priority) {
            best = Some(Candidate { x, y, priority: p });
        }
    }
    best
}

/// Closed corner of a 2-sided query; the region opens away from it.
///
/// `BottomRight` is the canonical orientation (region open to the top and
/// left); the other three are obtained by reflecting the point set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Corner {
    BottomRight,
    BottomLeft,
    TopRight,
    TopLeft,
}

pub const ALL_CORNERS: [Corner; 4] = [
    Corner::BottomRight,
    Corner::BottomLeft,
    Corner::TopRight,
    Corner::TopLeft,
];

impl Corner {
    /// Whether mapping to the canonical orientation reverses the x-axis.
    pub fn flip_x(self) -> bool {
        matches!(self, Corner::BottomLeft | Corner::TopLeft)
    }

    /// Whether mapping to the canonical orientation reverses the y-axis.
    pub fn flip_y(self) -> bool {
        matches!(self, Corner::TopRight | Corner::TopLeft)
    }

    pub fn index(self) -> usize {
        match self {
            Corner::BottomRight => 0,
            Corner::BottomLeft => 1,
            Corner::TopRight => 2,
            Corner::TopLeft => 3,
        }
    }

    pub fn from_index(i: usize) -> Corner {
        ALL_CORNERS[i]
    }

    /// Map a coordinate into the canonical frame (an involution).
    pub fn map_x(self, n: usize, x: Coord) -> Coord {
        if self.flip_x() {
            (n as Coord) - 1 - x
        } else {
            x
        }
    }

    pub fn map_y(self, n: usize, y: Coord) -> Coord {
        if self.flip_y() {
            (n as Coord) - 1 - y
        } else {
            y
        }
    }
}

/// Reflects the point set so a query with the given closed corner becomes a
/// canonical bottom-right-corner query. Priorities are unchanged; reflecting
/// twice is the identity.
pub fn reflect(ps: &PointSet, corner: Corner) -> PointSet {
    let n = ps.len();
    let mut upsilon = vec![0 as Coord; n];
    let mut pi = vec![0 as Coord; n];
    for (x, y, p) in ps.iter() {
        let nx = corner.map_x(n, x) as usize;
        upsilon[nx] = corner.map_y(n, y);
        pi[nx] = p;
    }
    PointSet { upsilon, pi }
}

/// Reflects a rectangle with the same mapping as [`reflect`].
pub fn reflect_rect(r: &QueryRect, corner: Corner, n: usize) -> QueryRect {
    let n = n as i64;
    let flip = |lo: i64, hi: i64| (n - 1 - hi.min(n - 1), n - 1 - lo.max(0));
    let (x_lo, x_hi) = if corner.flip_x() {
        flip(r.x_lo, r.x_hi)
    } else {
        (r.x_lo, r.x_hi)
    };
    let (y_lo, y_hi) = if corner.flip_y() {
        flip(r.y_lo, r.y_hi)
    } else {
        (r.y_lo, r.y_hi)
    };
    QueryRect { x_lo, x_hi, y_lo, y_hi }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{p5, random_point_set};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn p5_shape() {
        let ps = p5();
        assert_eq!(ps.len(), 5);
        assert_eq!(ps.upsilon(), &[2, 4, 1, 0, 3]);
        assert_eq!(ps.pi(), &[3, 0, 4, 2, 1]);
        assert_eq!(ps.upsilon_inverse(), vec![3, 2, 0, 4, 1]);
    }

    #[test]
    fn rejects_non_permutations() {
        assert!(PointSet::new(vec![0, 0], vec![0, 1]).is_err());
        assert!(PointSet::new(vec![0, 2], vec![0, 1]).is_err());
        assert!(PointSet::new(vec![0, 1], vec![1, 0, 2]).is_err());
    }

    #[test]
    fn rank_reduce_two_points() {
        let (ps, _) = rank_reduce(&[(0.5, 20.0, 7.0), (1.5, 10.0, 3.0)]).unwrap();
        assert_eq!(ps.upsilon(), &[1, 0]);
        assert_eq!(ps.pi(), &[1, 0]);
    }

    #[test]
    fn rank_reduce_identity_case() {
        let raw: Vec<(f64, f64, f64)> = (0..6).map(|i| (i as f64, i as f64, i as f64)).collect();
        let (ps, _) = rank_reduce(&raw).unwrap();
        assert_eq!(ps, PointSet::identity(6));
    }

    #[test]
    fn rank_reduce_rejects_duplicates() {
        let err = rank_reduce(&[(1.0, 2.0, 3.0), (1.0, 4.0, 5.0)]).unwrap_err();
        match err {
            PointError::Duplicate { axis, first, second, .. } => {
                assert_eq!(axis, "x");
                assert_eq!((first, second), (0, 1));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rank_reduce_is_order_isomorphic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw: Vec<(f64, f64, f64)> = (0..100)
            .map(|_| {
                (
                    rng.random::<f64>() * 1e3 - 500.0,
                    rng.random::<f64>() * 2e2,
                    rng.random::<f64>(),
                )
            })
            .collect();
        let (ps, _) = rank_reduce(&raw).unwrap();
        // y-rank of column i must order exactly like the raw y of the i-th
        // smallest raw x, pairwise; same for priorities.
        let mut by_x: Vec<&(f64, f64, f64)> = raw.iter().collect();
        by_x.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for i in 0..100 {
            for j in 0..100 {
                assert_eq!(
                    ps.y_of(i as Coord) < ps.y_of(j as Coord),
                    by_x[i].1 < by_x[j].1
                );
                assert_eq!(
                    ps.priority_of(i as Coord) < ps.priority_of(j as Coord),
                    by_x[i].2 < by_x[j].2
                );
            }
        }
    }

    #[test]
    fn map_rect_full_plane_and_gaps() {
        let raw: Vec<(f64, f64, f64)> = (0..5).map(|i| (i as f64, i as f64, i as f64)).collect();
        let (_, maps) = rank_reduce(&raw).unwrap();
        let full = maps.map_rect(f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
        assert_eq!(full, QueryRect::closed(0, 4, 0, 4));
        // Strictly between x = 1 and x = 2 on both axes: no points.
        let empty = maps.map_rect(1.25, 1.75, 1.25, 1.75);
        assert!(empty.is_empty_range());
    }

    #[test]
    fn map_rect_p5_x_window() {
        let raw: Vec<(f64, f64, f64)> = p5()
            .iter()
            .map(|(x, y, p)| (x as f64, y as f64, p as f64))
            .collect();
        let (_, maps) = rank_reduce(&raw).unwrap();
        let r = maps.map_rect(0.5, 2.5, f64::NEG_INFINITY, f64::INFINITY);
        assert_eq!((r.x_lo, r.x_hi), (1, 2));
    }

    #[test]
    fn oracle_on_p5() {
        let ps = p5();
        let hit = brute_force_max(&ps, &QueryRect::closed(0, 2, 0, 2)).unwrap();
        assert_eq!(hit, Candidate { x: 2, y: 1, priority: 4 });
        let global = brute_force_max(&ps, &QueryRect::full()).unwrap();
        assert_eq!(global, Candidate { x: 2, y: 1, priority: 4 });
        assert_eq!(brute_force_max(&ps, &QueryRect::closed(0, 0, 0, 0)), None);
    }

    #[test]
    fn oracle_is_monotone_under_enlargement() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ps = random_point_set(48, &mut rng);
        for _ in 0..500 {
            let x_lo = rng.random_range(0..48);
            let x_hi = rng.random_range(x_lo..48);
            let y_lo = rng.random_range(0..48);
            let y_hi = rng.random_range(y_lo..48);
            let inner = QueryRect::closed(x_lo, x_hi, y_lo, y_hi);
            let outer = QueryRect::closed(
                x_lo.saturating_sub(rng.random_range(0..3)),
                (x_hi + rng.random_range(0..3)).min(47),
                y_lo.saturating_sub(rng.random_range(0..3)),
                (y_hi + rng.random_range(0..3)).min(47),
            );
            let a = brute_force_max(&ps, &inner).map(|c| c.priority);
            let b = brute_force_max(&ps, &outer).map(|c| c.priority);
            assert!(b >= a);
        }
    }

    #[test]
    fn reflect_identity_and_involution() {
        let ps = p5();
        assert_eq!(reflect(&ps, Corner::BottomRight), ps);
        for corner in ALL_CORNERS {
            assert_eq!(reflect(&reflect(&ps, corner), corner), ps);
        }
    }

    #[test]
    fn reflect_p5_in_x() {
        let got = reflect(&p5(), Corner::BottomLeft);
        assert_eq!(got.upsilon(), &[3, 0, 1, 4, 2]);
        assert_eq!(got.pi(), &[1, 2, 4, 0, 3]);
    }

    #[test]
    fn reflect_conjugates_the_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..1000 {
            let n = 1 + (trial % 32);
            let ps = random_point_set(n, &mut rng);
            let corner = ALL_CORNERS[rng.random_range(0..4)];
            let reflected = reflect(&ps, corner);
            let x_lo = rng.random_range(0..n as Coord);
            let x_hi = rng.random_range(x_lo..n as Coord);
            let y_lo = rng.random_range(0..n as Coord);
            let y_hi = rng.random_range(y_lo..n as Coord);
            let rect = QueryRect::closed(x_lo, x_hi, y_lo, y_hi);
            let mirrored = reflect_rect(&rect, corner, n);
            let a = brute_force_max(&ps, &rect);
            let b = brute_force_max(&reflected, &mirrored);
            match (a, b) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    assert_eq!(a.priority, b.priority);
                    assert_eq!(corner.map_x(n, a.x), b.x);
                    assert_eq!(corner.map_y(n, a.y), b.y);
                }
                other => panic!("oracle commutation mismatch: {other:?}"),
            }
        }
    }

    #[test]
    fn sidedness_counts_constraining_sides() {
        let n = 8;
        assert_eq!(QueryRect::full().sidedness(n), 0);
        assert_eq!(QueryRect::new(Some(1), None, Some(2), None).sidedness(n), 2);
        assert_eq!(QueryRect::new(Some(1), Some(6), Some(2), None).sidedness(n), 3);
        assert_eq!(QueryRect::closed(1, 6, 2, 5).sidedness(n), 4);
        // A bound at the domain edge does not constrain anything.
        assert_eq!(QueryRect::closed(0, 7, 2, 5).sidedness(n), 2);
    }
}
