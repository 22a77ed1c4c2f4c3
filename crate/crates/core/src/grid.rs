//! Uniform grids in one and two space dimensions, plus the time grid.
//!
//! All downstream operators share these: fields are nodal values, the time
//! axis is uniform with `nt * dt = horizon` exactly, and the spatial box is
//! large enough that waves never reach its boundary (see
//! [`crate::solver::padded_box`]).

use crate::error::{BcError, Result};

pub const MAX_DIM: usize = 2;

/// Uniform node-centered grid on an axis-aligned box, `n` in {1, 2}.
///
/// Extent per axis is exactly `(count - 1) * h`; node coordinates are
/// `lo[a] + i * h`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    n: usize,
    lo: [f64; MAX_DIM],
    h: f64,
    counts: [usize; MAX_DIM],
}

impl SpatialGrid {
    pub fn new(n: usize, lo: [f64; MAX_DIM], h: f64, counts: [usize; MAX_DIM]) -> Result<Self> {
        if n == 0 || n > MAX_DIM {
            return Err(BcError::Geometry(format!("dimension {n} not in {{1,2}}")));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(BcError::Geometry(format!("spacing h = {h} must be positive")));
        }
        for a in 0..n {
            if counts[a] < 3 {
                return Err(BcError::Geometry(format!(
                    "axis {a} has {} nodes, need at least 3",
                    counts[a]
                )));
            }
        }
        let mut counts = counts;
        let mut lo = lo;
        for a in n..MAX_DIM {
            counts[a] = 1;
            lo[a] = 0.0;
        }
        Ok(Self { n, lo, h, counts })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn counts(&self) -> [usize; MAX_DIM] {
        self.counts
    }

    pub fn lower(&self) -> [f64; MAX_DIM] {
        self.lo
    }

    pub fn upper(&self) -> [f64; MAX_DIM] {
        let mut up = self.lo;
        for a in 0..self.n {
            up[a] = self.lo[a] + (self.counts[a] - 1) as f64 * self.h;
        }
        up
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.counts[0] * self.counts[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat index of the node with per-axis indices `(ix, iy)`; `iy = 0` in 1D.
    #[inline]
    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.counts[0] && iy < self.counts[1]);
        iy * self.counts[0] + ix
    }

    #[inline]
    pub fn multi(&self, id: usize) -> (usize, usize) {
        (id % self.counts[0], id / self.counts[0])
    }

    #[inline]
    pub fn coord(&self, id: usize) -> [f64; MAX_DIM] {
        let (ix, iy) = self.multi(id);
        [
            self.lo[0] + ix as f64 * self.h,
            self.lo[1] + iy as f64 * self.h,
        ]
    }

    /// Nearest node to a point (clamped to the box).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut id = [0usize; MAX_DIM];
        for a in 0..self.n {
            let i = ((x[a] - self.lo[a]) / self.h).round();
            id[a] = i.clamp(0.0, (self.counts[a] - 1) as f64) as usize;
        }
        self.idx(id[0], id[1])
    }

    /// Volume weight of one cell, `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.n as i32)
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self == other
    }
}

/// Uniform time grid on `(0, T)` with `nt * dt = T` exactly.
///
/// `nt` is forced even so that `T/2` lies on the grid; the step satisfies
/// the CFL constraint `dt <= h / sqrt(n)` of the explicit scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    nt: usize,
}

impl TimeGrid {
    /// Choose the largest even `nt` step count with `dt <= cfl * h / sqrt(n)`.
    pub fn from_cfl(horizon: f64, h: f64, cfl: f64, n: usize) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(BcError::Geometry(format!("horizon T = {horizon} must be positive")));
        }
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(BcError::Geometry(format!("cfl = {cfl} must lie in (0, 1]")));
        }
        let dt_max = cfl * h / (n as f64).sqrt();
        let mut nt = (horizon / dt_max).ceil() as usize;
        if nt % 2 == 1 {
            nt += 1;
        }
        let tg = Self { horizon, nt };
        tg.check_cfl(h, n)?;
        Ok(tg)
    }

    pub fn with_steps(horizon: f64, nt: usize, h: f64, n: usize) -> Result<Self> {
        if nt < 2 || nt % 2 == 1 {
            return Err(BcError::Geometry(format!(
                "step count nt = {nt} must be even and at least 2"
            )));
        }
        let tg = Self { horizon, nt };
        tg.check_cfl(h, n)?;
        Ok(tg)
    }

    fn check_cfl(&self, h: f64, n: usize) -> Result<()> {
        let limit = h / (n as f64).sqrt();
        let dt = self.dt();
        // Tiny slack for the rounding in from_cfl.
        if dt > limit * (1.0 + 1e-12) {
            return Err(BcError::CflViolation { dt, limit });
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.nt
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.nt as f64
    }

    /// Step index of a grid time, erroring when `t` is off the grid.
    pub fn step_of(&self, t: f64) -> Result<usize> {
        let k = t / self.dt();
        let kr = k.round();
        if (k - kr).abs() > 1e-6 || kr < 0.0 || kr > self.nt as f64 {
            return Err(BcError::WindowOffGrid(format!(
                "t = {t} is not a grid time (dt = {:.6e})",
                self.dt()
            )));
        }
        Ok(kr as usize)
    }

    pub fn half_step(&self) -> usize {
        self.nt / 2
    }
}
