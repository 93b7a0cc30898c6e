//! Hexagonal cell grid with one mobile support station per cell.
//!
//! Cells use axial `(q, r)` coordinates. The grid is the hexagon of all
//! cells within `radius` steps of the origin. Station ids are assigned in
//! `(q, r)` order, so the same radius always yields the same numbering.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

/// Axial coordinate of a hexagonal cell.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CellCoord {
    pub q: i32,
    pub r: i32,
}

impl CellCoord {
    pub const ORIGIN: CellCoord = CellCoord { q: 0, r: 0 };

    pub const fn new(q: i32, r: i32) -> Self {
        CellCoord { q, r }
    }

    /// The six axial neighbors, in a fixed order (east, then counter-clockwise).
    pub fn adjacent(self) -> [CellCoord; 6] {
        let CellCoord { q, r } = self;
        [
            CellCoord::new(q + 1, r),
            CellCoord::new(q + 1, r - 1),
            CellCoord::new(q, r - 1),
            CellCoord::new(q - 1, r),
            CellCoord::new(q - 1, r + 1),
            CellCoord::new(q, r + 1),
        ]
    }
}

impl fmt::Display for CellCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.q, self.r)
    }
}

/// Identifier of a mobile support station. Doubles as an index into the
/// station table.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct MssId(pub u32);

impl MssId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for MssId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.0)
    }
}

/// Minimum number of adjacent-cell steps between two cells.
pub fn hex_distance(a: CellCoord, b: CellCoord) -> u32 {
    let dq = a.q - b.q;
    let dr = a.r - b.r;
    (dq.unsigned_abs() + dr.unsigned_abs() + (dq + dr).unsigned_abs()) / 2
}

/// The static cell layout of one run.
#[derive(Clone, Debug)]
pub struct Grid {
    radius: u32,
    cells: Vec<CellCoord>,
    index: HashMap<CellCoord, MssId>,
}

impl Grid {
    /// All cells within `radius` of the origin, one station per cell.
    pub fn new(radius: u32) -> Self {
        let r = radius as i32;
        let mut cells = Vec::with_capacity(Self::cell_count(radius));
        for q in -r..=r {
            for s in -r..=r {
                let c = CellCoord::new(q, s);
                if hex_distance(CellCoord::ORIGIN, c) <= radius {
                    cells.push(c);
                }
            }
        }
        cells.sort();
        let index = cells
            .iter()
            .enumerate()
            .map(|(i, c)| (*c, MssId(i as u32)))
            .collect();
        Grid {
            radius,
            cells,
            index,
        }
    }

    /// Closed-form cell count of a hexagon of the given radius.
    pub fn cell_count(radius: u32) -> usize {
        let r = radius as usize;
        1 + 3 * r * (r + 1)
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[CellCoord] {
        &self.cells
    }

    pub fn contains(&self, c: CellCoord) -> bool {
        hex_distance(CellCoord::ORIGIN, c) <= self.radius
    }

    pub fn mss_of(&self, c: CellCoord) -> Option<MssId> {
        self.index.get(&c).copied()
    }

    pub fn cell_of(&self, mss: MssId) -> CellCoord {
        self.cells[mss.index()]
    }

    pub fn stations(&self) -> impl Iterator<Item = (MssId, CellCoord)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .map(|(i, c)| (MssId(i as u32), *c))
    }

    /// In-grid neighbors of `c`, in the order of [`CellCoord::adjacent`].
    pub fn neighbors(&self, c: CellCoord) -> Vec<CellCoord> {
        c.adjacent()
            .into_iter()
            .filter(|n| self.contains(*n))
            .collect()
    }
}

/// Hop distance between every ordered pair of stations.
#[derive(Clone, Debug)]
pub struct DistanceTable {
    n: usize,
    entries: Vec<u32>,
}

impl DistanceTable {
    pub fn build(grid: &Grid) -> Self {
        let n = grid.len();
        let mut entries = Vec::with_capacity(n * n);
        for a in grid.cells() {
            for b in grid.cells() {
                entries.push(hex_distance(*a, *b));
            }
        }
        DistanceTable { n, entries }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, p: MssId, q: MssId) -> u32 {
        self.entries[p.index() * self.n + q.index()]
    }
}
