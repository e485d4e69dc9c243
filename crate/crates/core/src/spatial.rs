//! Exact nearest-neighbour queries: brute force and a uniform hash grid.
//!
//! Both paths compute the same squared distances with the same expression and
//! break ties by the lowest point index, so their answers are identical.

use std::collections::HashMap;

use crate::math::Vec3;
use crate::scalar::Real;

/// Point count at which [`NnStrategy::Auto`] switches to the hash grid.
pub const GRID_THRESHOLD: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NnStrategy {
    #[default]
    Auto,
    BruteForce,
    HashGrid,
}

type Cell = (i64, i64, i64);

struct Grid {
    origin: [f64; 3],
    cell: f64,
    cells: HashMap<Cell, Vec<usize>>,
    lo: Cell,
    hi: Cell,
}

pub struct NearestIndex<'a, T> {
    points: &'a [Vec3<T>],
    grid: Option<Grid>,
}

impl<'a, T: Real> NearestIndex<'a, T> {
    pub fn new(points: &'a [Vec3<T>], strategy: NnStrategy) -> Self {
        let use_grid = match strategy {
            NnStrategy::Auto => points.len() >= GRID_THRESHOLD,
            NnStrategy::BruteForce => false,
            NnStrategy::HashGrid => true,
        };
        let grid = (use_grid && !points.is_empty()).then(|| build_grid(points));
        Self { points, grid }
    }

    /// Index and squared distance of the nearest point; `None` when empty.
    pub fn nearest(&self, q: &Vec3<T>) -> Option<(usize, T)> {
        if self.points.is_empty() {
            return None;
        }
        match &self.grid {
            None => Some(self.brute(q)),
            Some(g) => Some(self.grid_query(g, q)),
        }
    }

    fn brute(&self, q: &Vec3<T>) -> (usize, T) {
        let mut best = (0usize, (self.points[0] - *q).norm_squared());
        for (i, p) in self.points.iter().enumerate().skip(1) {
            let d = (*p - *q).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    fn grid_query(&self, g: &Grid, q: &Vec3<T>) -> (usize, T) {
        let c = cell_of(g, q);
        let max_r = [
            (c.0 - g.lo.0).abs().max((g.hi.0 - c.0).abs()),
            (c.1 - g.lo.1).abs().max((g.hi.1 - c.1).abs()),
            (c.2 - g.lo.2).abs().max((g.hi.2 - c.2).abs()),
        ]
        .into_iter()
        .max()
        .unwrap();
        let mut best: Option<(usize, T)> = None;
        let consider = |i: usize, best: &mut Option<(usize, T)>| {
            let d = (self.points[i] - *q).norm_squared();
            match best {
                Some((bi, bd)) if d > *bd || (d == *bd && i > *bi) => {}
                _ => *best = Some((i, d)),
            }
        };
        for r in 0..=max_r {
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        if let Some(list) = g.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                            for &i in list {
                                consider(i, &mut best);
                            }
                        }
                    }
                }
            }
            if let Some((_, bd)) = best {
                // anything in shells beyond r lies at least (r - ½)·cell away
                let bound = ((r as f64) - 0.5).max(0.0) * g.cell;
                if bd.as_f64() < bound * bound {
                    break;
                }
            }
        }
        best.expect("non-empty grid")
    }
}

fn cell_of<T: Real>(g: &Grid, p: &Vec3<T>) -> Cell {
    let f = |a: usize| ((p[a].as_f64() - g.origin[a]) / g.cell).floor() as i64;
    (f(0), f(1), f(2))
}

fn build_grid<T: Real>(points: &[Vec3<T>]) -> Grid {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a].as_f64());
            hi[a] = hi[a].max(p[a].as_f64());
        }
    }
    let extent: Vec<f64> = (0..3).map(|a| (hi[a] - lo[a]).max(1e-9)).collect();
    let volume = extent[0] * extent[1] * extent[2];
    let max_extent = extent.iter().cloned().fold(0.0, f64::max);
    // aim for a handful of points per cell, never finer than 1/256 of the box
    let cell = (2.0 * (volume / points.len() as f64).cbrt()).max(max_extent / 256.0).max(1e-9);
    let mut g = Grid { origin: lo, cell, cells: HashMap::new(), lo: (0, 0, 0), hi: (0, 0, 0) };
    let mut clo = (i64::MAX, i64::MAX, i64::MAX);
    let mut chi = (i64::MIN, i64::MIN, i64::MIN);
    for (i, p) in points.iter().enumerate() {
        let c = cell_of(&g, p);
        clo = (clo.0.min(c.0), clo.1.min(c.1), clo.2.min(c.2));
        chi = (chi.0.max(c.0), chi.1.max(c.1), chi.2.max(c.2));
        g.cells.entry(c).or_default().push(i);
    }
    g.lo = clo;
    g.hi = chi;
    g
}
