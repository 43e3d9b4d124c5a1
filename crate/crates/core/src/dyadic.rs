//! Dyadic intervals of `[0, 1)` at a fixed finest resolution.
//!
//! A grid of depth `L` has `N = 2^L` finest cells. Every cube is a half-open
//! interval `[i 2^-k, (i+1) 2^-k)` with `k <= L`, so the cells of a cube form
//! the contiguous range `i 2^(L-k) .. (i+1) 2^(L-k)`.
//!
//! All sums over cells are reduced in the same fixed binary-tree order, so
//! results do not depend on the number of worker threads.

use bitvec::prelude::*;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Levels with at least this many nodes are combined in parallel.
const PAR_LEVEL: usize = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicCube {
    pub level: u32,
    pub index: u64,
}

impl DyadicCube {
    pub const ROOT: DyadicCube = DyadicCube { level: 0, index: 0 };

    pub fn new(level: u32, index: u64) -> Self {
        debug_assert!(level < 64 && index < (1u64 << level));
        DyadicCube { level, index }
    }

    /// Side length `2^-level`.
    pub fn side(&self) -> f64 {
        exp2i(-(self.level as i32))
    }

    pub fn start(&self) -> f64 {
        self.index as f64 * self.side()
    }

    pub fn end(&self) -> f64 {
        (self.index + 1) as f64 * self.side()
    }

    pub fn parent(&self) -> Option<DyadicCube> {
        (self.level > 0).then(|| DyadicCube::new(self.level - 1, self.index / 2))
    }

    /// Children without a depth check; see [`DyadicGrid::children`].
    pub fn split(&self) -> (DyadicCube, DyadicCube) {
        (
            DyadicCube::new(self.level + 1, 2 * self.index),
            DyadicCube::new(self.level + 1, 2 * self.index + 1),
        )
    }

    /// Whether `other` is a (not necessarily strict) subcube of `self`.
    pub fn contains(&self, other: &DyadicCube) -> bool {
        other.level >= self.level && (other.index >> (other.level - self.level)) == self.index
    }

    pub fn strictly_contains(&self, other: &DyadicCube) -> bool {
        other.level > self.level && self.contains(other)
    }

    /// The ancestor of `self` at `level` (itself when the levels agree).
    pub fn ancestor(&self, level: u32) -> DyadicCube {
        debug_assert!(level <= self.level);
        DyadicCube::new(level, self.index >> (self.level - level))
    }

    /// Finest cells covered by this cube on a grid of the given depth.
    pub fn cell_range(&self, depth: u32) -> std::ops::Range<usize> {
        let shift = depth - self.level;
        let lo = (self.index << shift) as usize;
        lo..lo + (1usize << shift)
    }
}

/// `2^k` for small integer `k`, exact.
pub(crate) fn exp2i(k: i32) -> f64 {
    f64::powi(2.0, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyadicGrid {
    depth: u32,
}

impl DyadicGrid {
    pub fn new(depth: u32) -> Result<Self> {
        if !(1..=30).contains(&depth) {
            return Err(Error::OutOfRange {
                what: "grid depth",
                value: depth as f64,
                range: "[1, 30]",
            });
        }
        Ok(DyadicGrid { depth })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn cells(&self) -> usize {
        1usize << self.depth
    }

    pub fn cell_measure(&self) -> f64 {
        exp2i(-(self.depth as i32))
    }

    /// Number of cubes with level `<= depth`, i.e. `2^(L+1) - 1`.
    pub fn cube_count(&self) -> usize {
        (1usize << (self.depth + 1)) - 1
    }

    pub fn check(&self, q: DyadicCube) -> Result<()> {
        if q.level > self.depth || q.index >= (1u64 << q.level) {
            return Err(Error::CubeOutOfGrid {
                level: q.level,
                index: q.index,
                depth: self.depth,
            });
        }
        Ok(())
    }

    pub fn children(&self, q: DyadicCube) -> Result<(DyadicCube, DyadicCube)> {
        self.check(q)?;
        if q.level == self.depth {
            return Err(Error::LevelOverflow {
                level: q.level,
                depth: self.depth,
            });
        }
        Ok(q.split())
    }

    /// The finest cell containing cell index `cell` as a cube.
    pub fn cell_cube(&self, cell: usize) -> DyadicCube {
        DyadicCube::new(self.depth, cell as u64)
    }

    /// All cubes, coarse to fine, left to right.
    pub fn cubes(&self) -> impl Iterator<Item = DyadicCube> + '_ {
        (0..=self.depth).flat_map(|k| (0..1u64 << k).map(move |i| DyadicCube::new(k, i)))
    }

    /// Per-cube totals of `values` for every cube of the grid.
    pub fn aggregate(&self, values: &[f64]) -> Result<CubeTree> {
        if values.len() != self.cells() {
            return Err(Error::WrongLength {
                expected: self.cells(),
                actual: values.len(),
            });
        }
        Ok(CubeTree::sums(self.depth, values.to_vec()))
    }
}

/// One value per dyadic cube, stored level by level.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeTree {
    levels: Vec<Vec<f64>>,
}

impl CubeTree {
    /// Builds totals bottom-up: `total(parent) = total(left) + total(right)`.
    pub(crate) fn sums(depth: u32, leaves: Vec<f64>) -> Self {
        debug_assert_eq!(leaves.len(), 1usize << depth);
        let mut levels = vec![Vec::new(); depth as usize + 1];
        levels[depth as usize] = leaves;
        for k in (0..depth as usize).rev() {
            let below = &levels[k + 1];
            let combined: Vec<f64> = if below.len() >= PAR_LEVEL {
                below.par_chunks_exact(2).map(|p| p[0] + p[1]).collect()
            } else {
                below.chunks_exact(2).map(|p| p[0] + p[1]).collect()
            };
            levels[k] = combined;
        }
        CubeTree { levels }
    }

    /// Fills every cube independently with `f(cube)`.
    pub(crate) fn from_fn<F>(depth: u32, f: F) -> Self
    where
        F: Fn(DyadicCube) -> f64 + Sync,
    {
        let levels = (0..=depth)
            .map(|k| {
                let n = 1u64 << k;
                if n as usize >= PAR_LEVEL {
                    (0..n).into_par_iter().map(|i| f(DyadicCube::new(k, i))).collect()
                } else {
                    (0..n).map(|i| f(DyadicCube::new(k, i))).collect()
                }
            })
            .collect();
        CubeTree { levels }
    }

    pub fn depth(&self) -> u32 {
        (self.levels.len() - 1) as u32
    }

    pub fn get(&self, q: DyadicCube) -> f64 {
        self.levels[q.level as usize][q.index as usize]
    }

    pub fn level(&self, k: u32) -> &[f64] {
        &self.levels[k as usize]
    }

    pub fn map<F: Fn(DyadicCube, f64) -> f64>(&self, f: F) -> CubeTree {
        let levels = self
            .levels
            .iter()
            .enumerate()
            .map(|(k, row)| {
                row.iter()
                    .enumerate()
                    .map(|(i, &v)| f(DyadicCube::new(k as u32, i as u64), v))
                    .collect()
            })
            .collect();
        CubeTree { levels }
    }

    /// Converts per-cube totals of cell averages into per-cube averages.
    pub(crate) fn into_means(mut self) -> CubeTree {
        let depth = self.depth();
        for (k, row) in self.levels.iter_mut().enumerate() {
            let scale = exp2i(-((depth as usize - k) as i32));
            row.iter_mut().for_each(|v| *v *= scale);
        }
        self
    }

    /// Largest value and the cube attaining it. Ties go to the smaller
    /// level, then the smaller index.
    pub fn argmax(&self) -> (f64, DyadicCube) {
        let mut best = (f64::NEG_INFINITY, DyadicCube::ROOT);
        for (k, row) in self.levels.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                if v > best.0 {
                    best = (v, DyadicCube::new(k as u32, i as u64));
                }
            }
        }
        best
    }
}

/// Sum in the same binary-tree order used by [`CubeTree`].
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// A subset of the finest cells of a grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellSet {
    depth: u32,
    bits: BitVec,
}

impl CellSet {
    pub fn empty(grid: DyadicGrid) -> Self {
        CellSet {
            depth: grid.depth(),
            bits: bitvec![0; grid.cells()],
        }
    }

    pub fn full(grid: DyadicGrid) -> Self {
        CellSet {
            depth: grid.depth(),
            bits: bitvec![1; grid.cells()],
        }
    }

    pub fn from_cube(grid: DyadicGrid, q: DyadicCube) -> Self {
        let mut s = CellSet::empty(grid);
        s.insert_range(q.cell_range(grid.depth()));
        s
    }

    pub fn from_mask(grid: DyadicGrid, mask: &[bool]) -> Result<Self> {
        if mask.len() != grid.cells() {
            return Err(Error::WrongLength {
                expected: grid.cells(),
                actual: mask.len(),
            });
        }
        Ok(CellSet {
            depth: grid.depth(),
            bits: mask.iter().copied().collect(),
        })
    }

    /// Builds a set from half-open cell ranges `[start, end)`.
    pub fn from_ranges(grid: DyadicGrid, ranges: &[(usize, usize)]) -> Result<Self> {
        let mut s = CellSet::empty(grid);
        for &(a, b) in ranges {
            if a > b || b > grid.cells() {
                return Err(Error::Parse(format!("bad cell range [{a}, {b})")));
            }
            s.insert_range(a..b);
        }
        Ok(s)
    }

    pub fn grid(&self) -> DyadicGrid {
        DyadicGrid { depth: self.depth }
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.bits[cell]
    }

    pub fn insert(&mut self, cell: usize) {
        self.bits.set(cell, true);
    }

    pub fn remove(&mut self, cell: usize) {
        self.bits.set(cell, false);
    }

    pub fn insert_range(&mut self, r: std::ops::Range<usize>) {
        self.bits[r].fill(true);
    }

    pub fn remove_range(&mut self, r: std::ops::Range<usize>) {
        self.bits[r].fill(false);
    }

    /// Number of member cells.
    pub fn count(&self) -> usize {
        self.bits.count_ones()
    }

    pub fn count_in(&self, q: DyadicCube) -> usize {
        self.bits[q.cell_range(self.depth)].count_ones()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.not_any()
    }

    /// Lebesgue measure.
    pub fn measure(&self) -> f64 {
        self.count() as f64 * exp2i(-(self.depth as i32))
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter_ones()
    }

    pub fn as_mask(&self) -> Vec<bool> {
        self.bits.iter().by_vals().collect()
    }

    /// Maximal runs of member cells as half-open ranges.
    pub fn ranges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for c in self.bits.iter_ones() {
            match out.last_mut() {
                Some(last) if last.1 == c => last.1 = c + 1,
                _ => out.push((c, c + 1)),
            }
        }
        out
    }

    pub fn is_subset_of(&self, other: &CellSet) -> bool {
        (self.bits.clone() & !other.bits.clone()).not_any()
    }

    pub fn within(&self, q: DyadicCube) -> bool {
        let r = q.cell_range(self.depth);
        self.bits[..r.start].not_any() && self.bits[r.end..].not_any()
    }

    pub fn intersects(&self, other: &CellSet) -> bool {
        (self.bits.clone() & other.bits.clone()).any()
    }

    pub fn intersection(&self, other: &CellSet) -> CellSet {
        CellSet {
            depth: self.depth,
            bits: self.bits.clone() & other.bits.clone(),
        }
    }

    pub fn difference(&self, other: &CellSet) -> CellSet {
        CellSet {
            depth: self.depth,
            bits: self.bits.clone() & !other.bits.clone(),
        }
    }

    pub fn restricted_to(&self, q: DyadicCube) -> CellSet {
        let mut s = self.clone();
        let r = q.cell_range(self.depth);
        s.remove_range(0..r.start);
        let n = s.bits.len();
        s.remove_range(r.end..n);
        s
    }
}
