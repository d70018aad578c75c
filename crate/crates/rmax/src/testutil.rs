//! Shared fixtures for unit tests.

use crate::points::{Coord, PointSet};
use rand::prelude::*;

/// The worked five-point instance: (0,2,3),(1,4,0),(2,1,4),(3,0,2),(4,3,1).
pub fn p5() -> PointSet {
    PointSet::new(vec![2, 4, 1, 0, 3], vec![3, 0, 4, 2, 1]).unwrap()
}

pub fn random_point_set(n: usize, rng: &mut impl Rng) -> PointSet {
    let mut upsilon: Vec<Coord> = (0..n as Coord).collect();
    let mut pi: Vec<Coord> = (0..n as Coord).collect();
    upsilon.shuffle(rng);
    pi.shuffle(rng);
    PointSet::new(upsilon, pi).unwrap()
}
