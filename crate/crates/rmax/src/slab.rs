//! Slab-rank and slab-select: moving between a recursive problem's local
//! coordinates and top-level coordinates using only the shared structures
//! and the problem's O(1)-word header, never a stored per-problem map.
//!
//! A recursive problem's points are exactly the top-level points inside its
//! bounding box, so local ranks are range counts and local-to-top boundary
//! images are order statistics within the box strips.

use crate::globals::{Axis, Globals};
use crate::points::{Coord, QueryRect};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SlabError {
    #[error("local point ({x}, {y}) lies outside slab {index}")]
    OutsideSlab { x: Coord, y: Coord, index: usize },
    #[error("rectangle holds {found} points, over the {cap}-point cap")]
    CapExceeded { found: usize, cap: usize },
}

/// Top-level bounding box of a recursive problem and its size: the header
/// every node stores, and all these operations may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeHeader {
    pub x_lo: Coord,
    pub x_hi: Coord,
    pub y_lo: Coord,
    pub y_hi: Coord,
    pub n: usize,
}

impl NodeHeader {
    pub fn top_level(n: usize) -> Self {
        NodeHeader {
            x_lo: 0,
            x_hi: (n as Coord).saturating_sub(1),
            y_lo: 0,
            y_hi: (n as Coord).saturating_sub(1),
            n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlabAxis {
    /// Full x-extent of the parent, one band of k local y values.
    Horizontal,
    /// Full y-extent of the parent, one band of k local x values.
    Vertical,
}

/// One slab of a recursive problem, viewed as a child problem of size `k`.
#[derive(Debug, Clone, Copy)]
pub struct SlabRef {
    pub parent: NodeHeader,
    pub axis: SlabAxis,
    pub index: usize,
    pub k: usize,
    /// The slab's own header; derivable from the parent header (see
    /// [`SlabRef::derive`]) and stored in the child node.
    pub child: NodeHeader,
}

impl SlabRef {
    /// Computes the slab's top-level bounding box from the parent header via
    /// counting and selection; no per-slab state is consulted.
    pub fn derive(g: &Globals, parent: NodeHeader, axis: SlabAxis, index: usize, k: usize) -> SlabRef {
        let lo_ord = index * k; // 0-based local rank of the slab's low edge
        let hi_ord = lo_ord + k - 1;
        let child = match axis {
            SlabAxis::Horizontal => {
                let below = g.range_count(&QueryRect {
                    x_lo: parent.x_lo as i64,
                    x_hi: parent.x_hi as i64,
                    y_lo: 0,
                    y_hi: parent.y_lo as i64 - 1,
                });
                let y_lo = top_y_of_local(g, &parent, below, lo_ord);
                let y_hi = top_y_of_local(g, &parent, below, hi_ord);
                NodeHeader {
                    x_lo: parent.x_lo,
                    x_hi: parent.x_hi,
                    y_lo,
                    y_hi,
                    n: k,
                }
            }
            SlabAxis::Vertical => {
                let left = g.range_count(&QueryRect {
                    x_lo: 0,
                    x_hi: parent.x_lo as i64 - 1,
                    y_lo: parent.y_lo as i64,
                    y_hi: parent.y_hi as i64,
                });
                let x_lo = top_x_of_local(g, &parent, left, lo_ord);
                let x_hi = top_x_of_local(g, &parent, left, hi_ord);
                NodeHeader {
                    x_lo,
                    x_hi,
                    y_lo: parent.y_lo,
                    y_hi: parent.y_hi,
                    n: k,
                }
            }
        };
        SlabRef {
            parent,
            axis,
            index,
            k,
            child,
        }
    }

    fn contains_local(&self, i: Coord, j: Coord) -> bool {
        let lo = (self.index * self.k) as Coord;
        let hi = lo + self.k as Coord;
        match self.axis {
            SlabAxis::Horizontal => lo <= j && j < hi,
            SlabAxis::Vertical => lo <= i && i < hi,
        }
    }
}

/// Top-level y of the `ord`-th (0-based) point of a problem in y order.
fn top_y_of_local(g: &Globals, node: &NodeHeader, below: usize, ord: usize) -> Coord {
    let idx = g
        .range_select(Axis::X, node.x_lo as usize, node.x_hi as usize, below + ord + 1)
        .expect("ordinal within the node's strip");
    g.x_array()[idx]
}

/// Top-level x of the `ord`-th (0-based) point of a problem in x order.
fn top_x_of_local(g: &Globals, node: &NodeHeader, left: usize, ord: usize) -> Coord {
    let idx = g
        .range_select(Axis::Y, node.y_lo as usize, node.y_hi as usize, left + ord + 1)
        .expect("ordinal within the node's strip");
    g.y_array()[idx]
}

/// Local coordinates of a member point from its top-level image: two range
/// counts against the node's box.
pub fn local_coords(g: &Globals, node: &NodeHeader, top: (Coord, Coord)) -> (Coord, Coord) {
    let lx = g.range_count(&QueryRect {
        x_lo: node.x_lo as i64,
        x_hi: top.0 as i64 - 1,
        y_lo: node.y_lo as i64,
        y_hi: node.y_hi as i64,
    }) as Coord;
    let ly = g.range_count(&QueryRect {
        x_lo: node.x_lo as i64,
        x_hi: node.x_hi as i64,
        y_lo: node.y_lo as i64,
        y_hi: top.1 as i64 - 1,
    }) as Coord;
    (lx, ly)
}

/// Maps a point of the parent problem into the slab's local coordinates.
///
/// `p_top` is the point's top-level image (known to every caller), `p_local`
/// its coordinates in the parent problem. One coordinate translates by
/// arithmetic, the other by a range count over top-level coordinates.
pub fn slab_rank(
    g: &Globals,
    slab: &SlabRef,
    p_top: (Coord, Coord),
    p_local: (Coord, Coord),
) -> Result<(Coord, Coord), SlabError> {
    let (i, j) = p_local;
    if !slab.contains_local(i, j) {
        return Err(SlabError::OutsideSlab { x: i, y: j, index: slab.index });
    }
    let base = (slab.index * slab.k) as Coord;
    match slab.axis {
        SlabAxis::Horizontal => {
            let j2 = j - base;
            let i2 = g.range_count(&QueryRect {
                x_lo: slab.child.x_lo as i64,
                x_hi: p_top.0 as i64 - 1,
                y_lo: slab.child.y_lo as i64,
                y_hi: slab.child.y_hi as i64,
            }) as Coord;
            Ok((i2, j2))
        }
        SlabAxis::Vertical => {
            let i2 = i - base;
            let j2 = g.range_count(&QueryRect {
                x_lo: slab.child.x_lo as i64,
                x_hi: slab.child.x_hi as i64,
                y_lo: slab.child.y_lo as i64,
                y_hi: p_top.1 as i64 - 1,
            }) as Coord;
            Ok((i2, j2))
        }
    }
}

/// Recovers the top-level coordinates of exactly the points whose local
/// image in `node` lies in `local_rect`, in increasing x order.
///
/// The count below the node's box offsets local y ordinals into the box
/// strip's y-sorted sequence; two selections per axis recover the top-level
/// boundary, and a report inside the recovered rectangle finishes. `cap`
/// bounds how many points the caller may request.
pub fn slab_select(
    g: &Globals,
    node: &NodeHeader,
    local_rect: &QueryRect,
    cap: Option<usize>,
) -> Result<Vec<(Coord, Coord)>, SlabError> {
    let n = node.n as i64;
    let x_l = local_rect.x_lo.max(0);
    let x_r = local_rect.x_hi.min(n - 1);
    let y_b = local_rect.y_lo.max(0);
    let y_t = local_rect.y_hi.min(n - 1);
    if x_l > x_r || y_b > y_t {
        return Ok(Vec::new());
    }
    let below = g.range_count(&QueryRect {
        x_lo: node.x_lo as i64,
        x_hi: node.x_hi as i64,
        y_lo: 0,
        y_hi: node.y_lo as i64 - 1,
    });
    let left = g.range_count(&QueryRect {
        x_lo: 0,
        x_hi: node.x_lo as i64 - 1,
        y_lo: node.y_lo as i64,
        y_hi: node.y_hi as i64,
    });
    let top_rect = QueryRect::closed(
        top_x_of_local(g, node, left, x_l as usize),
        top_x_of_local(g, node, left, x_r as usize),
        top_y_of_local(g, node, below, y_b as usize),
        top_y_of_local(g, node, below, y_t as usize),
    );
    if let Some(cap) = cap {
        let found = g.range_count(&top_rect);
        if found > cap {
            return Err(SlabError::CapExceeded { found, cap });
        }
    }
    Ok(g.range_report(&top_rect))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::globals::Globals;
    use crate::points::{Coord, PointSet};
    use crate::testutil::random_point_set;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn four_point_instance() -> PointSet {
        // (0,1),(1,3),(2,0),(3,2)
        PointSet::new(vec![1, 3, 0, 2], vec![0, 1, 2, 3]).unwrap()
    }

    #[test]
    fn whole_problem_slab_is_identity() {
        let ps = random_point_set(16, &mut ChaCha8Rng::seed_from_u64(1));
        let g = Globals::new(&ps);
        let top = NodeHeader::top_level(16);
        let slab = SlabRef::derive(&g, top, SlabAxis::Vertical, 0, 16);
        assert_eq!(slab.child, top);
        for (x, y, _) in ps.iter() {
            assert_eq!(slab_rank(&g, &slab, (x, y), (x, y)).unwrap(), (x, y));
        }
        let all = slab_select(&g, &top, &QueryRect::closed(0, 15, 0, 15), None).unwrap();
        assert_eq!(all.len(), 16);
    }

    #[test]
    fn four_point_vertical_slab() {
        let ps = four_point_instance();
        let g = Globals::new(&ps);
        let top = NodeHeader::top_level(4);
        let slab = SlabRef::derive(&g, top, SlabAxis::Vertical, 0, 2);
        assert_eq!(slab.child, NodeHeader { x_lo: 0, x_hi: 1, y_lo: 0, y_hi: 3, n: 2 });
        assert_eq!(slab_rank(&g, &slab, (1, 3), (1, 3)).unwrap(), (1, 1));
        assert_eq!(
            slab_rank(&g, &slab, (2, 0), (2, 0)),
            Err(SlabError::OutsideSlab { x: 2, y: 0, index: 0 })
        );
    }

    #[test]
    fn four_point_horizontal_slab() {
        let ps = four_point_instance();
        let g = Globals::new(&ps);
        let top = NodeHeader::top_level(4);
        let slab = SlabRef::derive(&g, top, SlabAxis::Horizontal, 0, 2);
        // slab 0 holds y in {0,1}: points (0,1) and (2,0); its box keeps the
        // parent's full x-extent
        assert_eq!(slab.child, NodeHeader { x_lo: 0, x_hi: 3, y_lo: 0, y_hi: 1, n: 2 });
        assert_eq!(slab_rank(&g, &slab, (2, 0), (2, 0)).unwrap(), (1, 0));
        // select the slab-local rect [0,1]x[0,0]: only (2,0) has local y 0
        let got = slab_select(&g, &slab.child, &QueryRect::closed(0, 1, 0, 0), None).unwrap();
        assert_eq!(got, vec![(2, 0)]);
    }

    #[test]
    fn select_cap_is_enforced() {
        let ps = random_point_set(32, &mut ChaCha8Rng::seed_from_u64(2));
        let g = Globals::new(&ps);
        let top = NodeHeader::top_level(32);
        let err = slab_select(&g, &top, &QueryRect::closed(0, 31, 0, 31), Some(5)).unwrap_err();
        assert_eq!(err, SlabError::CapExceeded { found: 32, cap: 5 });
        assert!(slab_select(&g, &top, &QueryRect::closed(0, 4, 0, 31), Some(5)).is_ok());
    }

    /// Oracle: local coordinates of all node points by sorting, used to
    /// validate both directions.
    fn local_images(ps: &PointSet, node: &NodeHeader) -> Vec<((Coord, Coord), (Coord, Coord))> {
        let mut members: Vec<(Coord, Coord)> = ps
            .iter()
            .filter(|&(x, y, _)| {
                node.x_lo <= x && x <= node.x_hi && node.y_lo <= y && y <= node.y_hi
            })
            .map(|(x, y, _)| (x, y))
            .collect();
        members.sort_unstable();
        let mut ys: Vec<Coord> = members.iter().map(|&(_, y)| y).collect();
        ys.sort_unstable();
        members
            .iter()
            .enumerate()
            .map(|(xr, &(x, y))| {
                let yr = ys.binary_search(&y).unwrap();
                ((x, y), (xr as Coord, yr as Coord))
            })
            .collect()
    }

    #[test]
    fn rank_is_order_preserving_and_injective() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ps = random_point_set(64, &mut rng);
        let g = Globals::new(&ps);
        let top = NodeHeader::top_level(64);
        for axis in [SlabAxis::Horizontal, SlabAxis::Vertical] {
            let k = 16;
            for index in 0..4 {
                let slab = SlabRef::derive(&g, top, axis, index, k);
                let mut images = Vec::new();
                for ((x, y), _) in local_images(&ps, &slab.child) {
                    images.push(slab_rank(&g, &slab, (x, y), (x, y)).unwrap());
                }
                // order-preserving in x (inputs arrive x-sorted), injective,
                // and onto [k] x [k]
                assert!(images.windows(2).all(|w| w[0].0 < w[1].0));
                let mut xs: Vec<Coord> = images.iter().map(|p| p.0).collect();
                let mut ys: Vec<Coord> = images.iter().map(|p| p.1).collect();
                xs.sort_unstable();
                ys.sort_unstable();
                assert_eq!(xs, (0..k as Coord).collect::<Vec<_>>());
                assert_eq!(ys, (0..k as Coord).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn select_matches_membership_oracle_on_random_subnodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let n = 64;
            let ps = random_point_set(n, &mut rng);
            let g = Globals::new(&ps);
            let top = NodeHeader::top_level(n);
            // nest two levels: a vertical slab of the root, then a
            // horizontal slab of that child
            let k1 = 16;
            let v = SlabRef::derive(&g, top, SlabAxis::Vertical, rng.random_range(0..n / k1), k1);
            let k2 = 4;
            let h = SlabRef::derive(&g, v.child, SlabAxis::Horizontal, rng.random_range(0..k1 / k2), k2);
            for (node, k) in [(v.child, k1), (h.child, k2)] {
                let images = local_images(&ps, &node);
                assert_eq!(images.len(), k);
                let x_lo = rng.random_range(0..k as Coord);
                let x_hi = rng.random_range(x_lo..k as Coord);
                let y_lo = rng.random_range(0..k as Coord);
                let y_hi = rng.random_range(y_lo..k as Coord);
                let rect = QueryRect::closed(x_lo, x_hi, y_lo, y_hi);
                let got = slab_select(&g, &node, &rect, None).unwrap();
                let mut want: Vec<(Coord, Coord)> = images
                    .iter()
                    .filter(|&&(_, (lx, ly))| rect.contains(lx, ly))
                    .map(|&(top, _)| top)
                    .collect();
                want.sort_unstable();
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn select_after_rank_recovers_every_point_exhaustively() {
        // roundtrip on every point of every slab, nested two levels deep
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &n in &[4usize, 16, 64, 256] {
            let ps = random_point_set(n, &mut rng);
            let g = Globals::new(&ps);
            let top = NodeHeader::top_level(n);
            let k = n / 4;
            for axis in [SlabAxis::Horizontal, SlabAxis::Vertical] {
                for index in 0..4 {
                    let slab = SlabRef::derive(&g, top, axis, index, k);
                    for ((x, y), _) in local_images(&ps, &slab.child) {
                        let (li, lj) = slab_rank(&g, &slab, (x, y), (x, y)).unwrap();
                        let back = slab_select(
                            &g,
                            &slab.child,
                            &QueryRect::closed(li, li, lj, lj),
                            Some(1),
                        )
                        .unwrap();
                        assert_eq!(back, vec![(x, y)]);
                    }
                }
            }
        }
    }
}
