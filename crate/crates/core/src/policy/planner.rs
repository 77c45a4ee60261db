//! 8-connected grid shortest paths with exact costs and deterministic ties.
//!
//! Straight moves cost 1 and diagonal moves cost sqrt(2) (in cells). Costs
//! are kept as `(straight, diagonal)` counts and compared exactly, so ties are
//! real ties and are broken by heading-change count, then cell index.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use crate::error::NavError;
use crate::world::{OccupancyGrid, CELL_M};

pub type Cell = (usize, usize);

/// Move directions in screen coordinates (y down), clockwise from east.
pub const DIRS: [(i64, i64); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

/// Exact path cost `straight + diagonal * sqrt(2)` in cell units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct GridCost {
    pub straight: u32,
    pub diagonal: u32,
}

impl GridCost {
    pub fn cells(self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * std::f64::consts::SQRT_2
    }

    pub fn meters(self) -> f64 {
        self.cells() * CELL_M
    }

    fn step(self, diagonal: bool) -> Self {
        if diagonal {
            Self {
                diagonal: self.diagonal + 1,
                ..self
            }
        } else {
            Self {
                straight: self.straight + 1,
                ..self
            }
        }
    }
}

impl Ord for GridCost {
    fn cmp(&self, other: &Self) -> Ordering {
        // sign of x - y*sqrt(2)
        let x = self.straight as i64 - other.straight as i64;
        let y = other.diagonal as i64 - self.diagonal as i64;
        match (x.signum(), y.signum()) {
            (0, 0) => Ordering::Equal,
            (sx, sy) if sx >= 0 && sy <= 0 => Ordering::Greater,
            (sx, sy) if sx <= 0 && sy >= 0 => Ordering::Less,
            (1, 1) => (x * x).cmp(&(2 * y * y)),
            _ => (2 * y * y).cmp(&(x * x)),
        }
    }
}

impl PartialOrd for GridCost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Traversability mask: a cell is free when a disc of the planning clearance
/// centred on it touches no occupied cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NavGrid {
    width: usize,
    height: usize,
    free: Vec<bool>,
}

impl NavGrid {
    pub fn from_occupancy(grid: &OccupancyGrid, clearance: f64) -> Self {
        let (width, height) = (grid.width(), grid.height());
        let mut free = vec![false; width * height];
        for y in 0..height {
            for x in 0..width {
                let (cx, cy) = grid.cell_center((x, y));
                free[y * width + x] = !grid.disc_hits_wall(cx, cy, clearance);
            }
        }
        Self { width, height, free }
    }

    pub fn from_mask(width: usize, height: usize, free: Vec<bool>) -> Self {
        assert_eq!(free.len(), width * height);
        Self { width, height, free }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn index(&self, c: Cell) -> usize {
        c.1 * self.width + c.0
    }

    pub fn cell(&self, index: usize) -> Cell {
        (index % self.width, index / self.width)
    }

    pub fn is_free(&self, c: Cell) -> bool {
        c.0 < self.width && c.1 < self.height && self.free[self.index(c)]
    }

    fn free_at(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && self.is_free((x as usize, y as usize))
    }

    pub fn set_free(&mut self, c: Cell, free: bool) {
        let i = self.index(c);
        self.free[i] = free;
    }

    /// Free neighbours as `(cell, direction index, diagonal)`; diagonals may not cut corners.
    pub fn neighbors(&self, c: Cell) -> impl Iterator<Item = (Cell, usize, bool)> + '_ {
        DIRS.iter().enumerate().filter_map(move |(d, &(dx, dy))| {
            let (nx, ny) = (c.0 as i64 + dx, c.1 as i64 + dy);
            if !self.free_at(nx, ny) {
                return None;
            }
            let diagonal = dx != 0 && dy != 0;
            if diagonal && !(self.free_at(c.0 as i64 + dx, c.1 as i64) && self.free_at(c.0 as i64, c.1 as i64 + dy)) {
                return None;
            }
            Some(((nx as usize, ny as usize), d, diagonal))
        })
    }

    /// Closest free cell by 8-neighbour ring distance, ties to lowest index.
    pub fn nearest_free(&self, c: Cell) -> Option<Cell> {
        if self.is_free(c) {
            return Some(c);
        }
        let max_r = self.width.max(self.height) as i64;
        for r in 1..=max_r {
            let mut best: Option<(f64, usize)> = None;
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx.abs() != r && dy.abs() != r {
                        continue;
                    }
                    let (x, y) = (c.0 as i64 + dx, c.1 as i64 + dy);
                    if !self.free_at(x, y) {
                        continue;
                    }
                    let d = ((dx * dx + dy * dy) as f64).sqrt();
                    let idx = self.index((x as usize, y as usize));
                    if best.is_none_or(|(bd, bi)| d < bd || (d == bd && idx < bi)) {
                        best = Some((d, idx));
                    }
                }
            }
            if let Some((_, idx)) = best {
                return Some(self.cell(idx));
            }
        }
        None
    }

    /// Exact geodesic cost from the nearest source to every cell (`None` = unreachable).
    pub fn distance_field(&self, sources: &[Cell]) -> Vec<Option<GridCost>> {
        let mut dist: Vec<Option<GridCost>> = vec![None; self.free.len()];
        let mut heap = BinaryHeap::new();
        for &s in sources {
            if self.is_free(s) {
                let i = self.index(s);
                dist[i] = Some(GridCost::default());
                heap.push(Reverse((GridCost::default(), i)));
            }
        }
        while let Some(Reverse((cost, i))) = heap.pop() {
            if dist[i].is_some_and(|d| d < cost) {
                continue;
            }
            for (n, _, diag) in self.neighbors(self.cell(i)) {
                let ni = self.index(n);
                let nc = cost.step(diag);
                if dist[ni].is_none_or(|d| nc < d) {
                    dist[ni] = Some(nc);
                    heap.push(Reverse((nc, ni)));
                }
            }
        }
        dist
    }

    /// Cells reachable from `start` (including it), as a mask.
    pub fn component(&self, start: Cell) -> Vec<bool> {
        let mut seen = vec![false; self.free.len()];
        if !self.is_free(start) {
            return seen;
        }
        let mut queue = VecDeque::from([start]);
        seen[self.index(start)] = true;
        while let Some(c) = queue.pop_front() {
            for (n, _, _) in self.neighbors(c) {
                let ni = self.index(n);
                if !seen[ni] {
                    seen[ni] = true;
                    queue.push_back(n);
                }
            }
        }
        seen
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridPath {
    /// Cells after the start, ending at the goal. Empty when start == goal.
    pub cells: Vec<Cell>,
    pub cost: GridCost,
    pub turns: u32,
}

impl GridPath {
    pub fn length_m(&self) -> f64 {
        self.cost.meters()
    }
}

/// Minimal-cost path, ties broken by fewer heading changes, then lower cell index.
pub fn plan_shortest_path(nav: &NavGrid, from: Cell, to: Cell) -> Result<GridPath, NavError> {
    let unreachable = || NavError::Unreachable { from, to };
    if !nav.is_free(from) || !nav.is_free(to) {
        return Err(unreachable());
    }
    if from == to {
        return Ok(GridPath {
            cells: Vec::new(),
            cost: GridCost::default(),
            turns: 0,
        });
    }
    // state = cell * 9 + incoming direction (8 = none)
    const NONE: usize = 8;
    let n_states = nav.free.len() * 9;
    let mut best: Vec<Option<(GridCost, u32)>> = vec![None; n_states];
    let mut prev: Vec<usize> = vec![usize::MAX; n_states];
    let mut done = vec![false; n_states];
    let mut heap = BinaryHeap::new();
    let s0 = nav.index(from) * 9 + NONE;
    best[s0] = Some((GridCost::default(), 0));
    heap.push(Reverse((GridCost::default(), 0u32, nav.index(from), NONE)));
    let goal = nav.index(to);
    while let Some(Reverse((cost, turns, ci, dir))) = heap.pop() {
        let s = ci * 9 + dir;
        if done[s] {
            continue;
        }
        done[s] = true;
        if ci == goal {
            let mut cells = Vec::new();
            let mut cur = s;
            while cur != s0 {
                cells.push(nav.cell(cur / 9));
                cur = prev[cur];
            }
            cells.reverse();
            return Ok(GridPath { cells, cost, turns });
        }
        for (n, d, diag) in nav.neighbors(nav.cell(ci)) {
            let ns = nav.index(n) * 9 + d;
            if done[ns] {
                continue;
            }
            let key = (cost.step(diag), turns + u32::from(dir != NONE && dir != d));
            if best[ns].is_none_or(|b| key < b) {
                best[ns] = Some(key);
                prev[ns] = s;
                heap.push(Reverse((key.0, key.1, nav.index(n), d)));
            }
        }
    }
    Err(unreachable())
}
