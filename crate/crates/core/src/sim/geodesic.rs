use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use super::FloorplanWorld;
use crate::error::{Error, Result};

/// Free cells whose centres keep at least `clearance` from every wall.
#[derive(Clone, Debug)]
pub struct InflatedGrid {
    rows: usize,
    cols: usize,
    cell_size: f64,
    free: Vec<bool>,
}

impl InflatedGrid {
    pub fn new(world: &FloorplanWorld, clearance: f64) -> Self {
        let (rows, cols) = (world.rows(), world.cols());
        let mut free = vec![false; rows * cols];
        for (r, c) in world.free_cells() {
            let (x, y) = world.cell_center(r, c);
            free[r as usize * cols + c as usize] =
                world.wall_distance(x, y, clearance + world.cell_size) >= clearance;
        }
        InflatedGrid {
            rows,
            cols,
            cell_size: world.cell_size,
            free,
        }
    }

    #[inline]
    pub fn is_free(&self, r: i64, c: i64) -> bool {
        r >= 0
            && c >= 0
            && (r as usize) < self.rows
            && (c as usize) < self.cols
            && self.free[r as usize * self.cols + c as usize]
    }

    #[inline]
    fn idx(&self, r: i64, c: i64) -> usize {
        r as usize * self.cols + c as usize
    }

    pub fn free_count(&self) -> usize {
        self.free.iter().filter(|f| **f).count()
    }

    pub fn cell_center(&self, r: i64, c: i64) -> (f64, f64) {
        (
            (c as f64 + 0.5) * self.cell_size,
            (r as f64 + 0.5) * self.cell_size,
        )
    }

    /// Nearest free cell centre to `(x, y)` within two cells (Chebyshev).
    pub fn snap(&self, x: f64, y: f64) -> Result<(i64, i64)> {
        let r0 = (y / self.cell_size).floor() as i64;
        let c0 = (x / self.cell_size).floor() as i64;
        if self.is_free(r0, c0) {
            return Ok((r0, c0));
        }
        let mut best: Option<((i64, i64), f64)> = None;
        for r in r0 - 2..=r0 + 2 {
            for c in c0 - 2..=c0 + 2 {
                if !self.is_free(r, c) {
                    continue;
                }
                let (cx, cy) = self.cell_center(r, c);
                let d = (cx - x).hypot(cy - y);
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some(((r, c), d));
                }
            }
        }
        best.map(|(rc, _)| rc).ok_or_else(|| {
            Error::Unreachable(format!("({x:.3}, {y:.3}) is inside inflated obstacles"))
        })
    }

    /// Dijkstra distance field from `(x, y)` over the 8-connected grid.
    /// Diagonal moves require both adjacent axial cells to be free.
    pub fn distance_field(self: &Arc<Self>, x: f64, y: f64) -> Result<DistanceField> {
        let src = self.snap(x, y)?;
        let mut dist = vec![f64::INFINITY; self.rows * self.cols];
        let mut heap = BinaryHeap::new();
        let s = self.cell_size;
        let diag = s * std::f64::consts::SQRT_2;
        dist[self.idx(src.0, src.1)] = 0.0;
        heap.push(Entry(0.0, src.0, src.1));
        while let Some(Entry(d, r, c)) = heap.pop() {
            if d > dist[self.idx(r, c)] {
                continue;
            }
            for dr in -1..=1i64 {
                for dc in -1..=1i64 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (r + dr, c + dc);
                    if !self.is_free(nr, nc) {
                        continue;
                    }
                    let step = if dr != 0 && dc != 0 {
                        if !self.is_free(r + dr, c) || !self.is_free(r, c + dc) {
                            continue;
                        }
                        diag
                    } else {
                        s
                    };
                    let nd = d + step;
                    let k = self.idx(nr, nc);
                    if nd < dist[k] {
                        dist[k] = nd;
                        heap.push(Entry(nd, nr, nc));
                    }
                }
            }
        }
        Ok(DistanceField {
            grid: Arc::clone(self),
            dist,
            source: src,
        })
    }
}

#[derive(PartialEq)]
struct Entry(f64, i64, i64);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| (other.1, other.2).cmp(&(self.1, self.2)))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest-path lengths from one source to every inflated-free cell.
#[derive(Clone, Debug)]
pub struct DistanceField {
    grid: Arc<InflatedGrid>,
    dist: Vec<f64>,
    source: (i64, i64),
}

impl DistanceField {
    /// Geodesic distance from `(x, y)` to the field's source; infinite when
    /// the two lie in disconnected regions.
    pub fn distance(&self, x: f64, y: f64) -> Result<f64> {
        let (r, c) = self.grid.snap(x, y)?;
        Ok(self.dist[self.grid.idx(r, c)])
    }

    /// Continuous geodesic: the smallest `field + straight-line offset` over
    /// free cells within two cells of `(x, y)`. Agrees with the cell value at
    /// cell centres and is exact along straight unobstructed approaches.
    pub fn distance_interp(&self, x: f64, y: f64) -> Result<f64> {
        let s = self.grid.cell_size;
        let (r0, c0) = ((y / s).floor() as i64, (x / s).floor() as i64);
        let mut best = f64::INFINITY;
        let mut any = false;
        for r in r0 - 2..=r0 + 2 {
            for c in c0 - 2..=c0 + 2 {
                if !self.grid.is_free(r, c) {
                    continue;
                }
                any = true;
                let (cx, cy) = self.grid.cell_center(r, c);
                best = best.min(self.dist[self.grid.idx(r, c)] + (cx - x).hypot(cy - y));
            }
        }
        if !any {
            return Err(Error::Unreachable(format!("({x:.3}, {y:.3}) is inside inflated obstacles")));
        }
        Ok(best)
    }

    pub fn cell_distance(&self, r: i64, c: i64) -> f64 {
        if self.grid.is_free(r, c) {
            self.dist[self.grid.idx(r, c)]
        } else {
            f64::INFINITY
        }
    }

    pub fn grid(&self) -> &InflatedGrid {
        &self.grid
    }

    pub fn source(&self) -> (i64, i64) {
        self.source
    }

    /// Largest finite distance in the field.
    pub fn max_finite(&self) -> f64 {
        self.dist
            .iter()
            .copied()
            .filter(|d| d.is_finite())
            .fold(0.0, f64::max)
    }

    /// Cell-centre waypoints of a shortest path from `(x, y)` to the source.
    pub fn path_from(&self, x: f64, y: f64) -> Result<Vec<(f64, f64)>> {
        let (mut r, mut c) = self.grid.snap(x, y)?;
        if !self.cell_distance(r, c).is_finite() {
            return Err(Error::Unreachable("no path to the goal".into()));
        }
        let mut path = vec![self.grid.cell_center(r, c)];
        while (r, c) != self.source {
            let here = self.cell_distance(r, c);
            let mut best = (here, r, c);
            for dr in -1..=1i64 {
                for dc in -1..=1i64 {
                    let (nr, nc) = (r + dr, c + dc);
                    if (dr == 0 && dc == 0) || !self.grid.is_free(nr, nc) {
                        continue;
                    }
                    if dr != 0 && dc != 0 && (!self.grid.is_free(r + dr, c) || !self.grid.is_free(r, c + dc)) {
                        continue;
                    }
                    let d = self.cell_distance(nr, nc);
                    if d < best.0 {
                        best = (d, nr, nc);
                    }
                }
            }
            if (best.1, best.2) == (r, c) {
                break;
            }
            (r, c) = (best.1, best.2);
            path.push(self.grid.cell_center(r, c));
        }
        Ok(path)
    }
}

/// Shortest obstacle-respecting path length between two points for a body of
/// radius `clearance`. Returns `f64::INFINITY` when no path exists.
pub fn geodesic_distance(
    world: &FloorplanWorld,
    from: (f64, f64),
    to: (f64, f64),
    clearance: f64,
) -> Result<f64> {
    let grid = Arc::new(InflatedGrid::new(world, clearance));
    grid.snap(from.0, from.1)?;
    grid.distance_field(to.0, to.1)?.distance(from.0, from.1)
}
