//! Complex-valued fields: spatial snapshots, space-time stacks, and the
//! observation-supported space-time data that all operators exchange.
//!
//! Inner products use trapezoid weights in both space and time, matching
//! the order of the wave scheme so adjoint identities degrade at the same
//! rate as the discretization.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{BcError, Result};
use crate::grid::{SpatialGrid, TimeGrid};
use crate::region::Region;

/// One complex value per grid node.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<SpatialGrid>,
    values: Vec<Complex64>,
}

impl ScalarField {
    pub fn zeros(grid: Arc<SpatialGrid>) -> Self {
        let n = grid.len();
        Self { grid, values: vec![Complex64::ZERO; n] }
    }

    pub fn from_values(grid: Arc<SpatialGrid>, values: Vec<Complex64>) -> Self {
        assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn from_real(grid: Arc<SpatialGrid>, re: Vec<f64>) -> Self {
        assert_eq!(re.len(), grid.len());
        let values = re.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        Self { grid, values }
    }

    pub fn from_fn(grid: Arc<SpatialGrid>, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let values = (0..grid.len())
            .map(|id| {
                let c = grid.coord(id);
                f(&c[..grid.dim()])
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<SpatialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    /// Real parts, copied out (used where fields are known real).
    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    /// Zero the field outside `r`.
    pub fn restricted(&self, r: &Region) -> ScalarField {
        let mut out = ScalarField::zeros(self.grid.clone());
        for &id in r.nodes() {
            out.values[id] = self.values[id];
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

fn check_same_grid(a: &ScalarField, b: &ScalarField) -> Result<()> {
    if !a.grid.same_layout(&b.grid) {
        return Err(BcError::GridMismatch(
            "scalar fields live on different grids".into(),
        ));
    }
    Ok(())
}

/// Trapezoid-weighted inner product over a region: sum of
/// `w_i a_i conj(b_i)` with `w_i` the region quadrature weights.
pub fn l2_inner(a: &ScalarField, b: &ScalarField, r: &Region) -> Result<Complex64> {
    check_same_grid(a, b)?;
    if !a.grid.same_layout(r.grid()) {
        return Err(BcError::GridMismatch("region grid differs from field grid".into()));
    }
    let mut acc = Complex64::ZERO;
    for (&id, &w) in r.nodes().iter().zip(r.weights()) {
        acc += a.values[id] * b.values[id].conj() * w;
    }
    Ok(acc)
}

pub fn l2_norm(a: &ScalarField, r: &Region) -> Result<f64> {
    Ok(l2_inner(a, a, r)?.re.max(0.0).sqrt())
}

/// Discrete H1 norm on a region: L2 part plus centered-difference gradient
/// (one-sided at mask edges).
pub fn h1_norm(a: &ScalarField, r: &Region) -> Result<f64> {
    let grid = r.grid();
    let n = grid.dim();
    let h = grid.spacing();
    let (cx, _cy) = (grid.counts()[0], grid.counts()[1]);
    // Require 3 nodes along each axis through some member node.
    let wide_enough = (0..n).all(|a_| {
        r.nodes().iter().any(|&id| {
            let (ix, iy) = grid.multi(id);
            let i = if a_ == 0 { ix } else { iy };
            let stride = if a_ == 0 { 1 } else { cx };
            let lim = grid.counts()[a_];
            i > 0 && i + 1 < lim && r.contains(id - stride) && r.contains(id + stride)
        })
    });
    if !wide_enough {
        return Err(BcError::RegionTooThin(format!(
            "{:?} region needs 3 nodes along every axis",
            r.kind()
        )));
    }
    let mut acc = 0.0f64;
    for (&id, &w) in r.nodes().iter().zip(r.weights()) {
        let v = a.values[id];
        let mut grad2 = 0.0f64;
        for a_ in 0..n {
            let stride = if a_ == 0 { 1 } else { cx };
            let (ix, iy) = grid.multi(id);
            let i = if a_ == 0 { ix } else { iy };
            let lim = grid.counts()[a_];
            let has_m = i > 0 && r.contains(id - stride);
            let has_p = i + 1 < lim && r.contains(id + stride);
            let d = if has_m && has_p {
                (a.values[id + stride] - a.values[id - stride]) / (2.0 * h)
            } else if has_p {
                (a.values[id + stride] - v) / h
            } else if has_m {
                (v - a.values[id - stride]) / h
            } else {
                Complex64::ZERO
            };
            grad2 += d.norm_sqr();
        }
        acc += w * (v.norm_sqr() + grad2);
    }
    Ok(acc.max(0.0).sqrt())
}

/// Space-time data supported on (a window of) `(0,T) x omega`: the common
/// currency of sources, measurements and controls.
///
/// Values are stored densely as `[step][omega-node]` over all `nt + 1`
/// steps; the window `(k0, k1)` declares where they may be nonzero and is
/// enforced on construction.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    region: Arc<Region>,
    time: Arc<TimeGrid>,
    window: (usize, usize),
    values: Vec<Complex64>,
}

impl BoundaryData {
    pub fn zeros(region: Arc<Region>, time: Arc<TimeGrid>) -> Self {
        let len = (time.steps() + 1) * region.len();
        let window = (0, time.steps());
        Self { region, time, window, values: vec![Complex64::ZERO; len] }
    }

    /// Build from a function of `(t, x)`, restricted to the given window.
    pub fn from_fn(
        region: Arc<Region>,
        time: Arc<TimeGrid>,
        window: (usize, usize),
        f: impl Fn(f64, &[f64]) -> Complex64,
    ) -> Result<Self> {
        if window.1 > time.steps() || window.0 > window.1 {
            return Err(BcError::WindowOffGrid(format!(
                "window steps {window:?} outside 0..={}",
                time.steps()
            )));
        }
        let mut out = Self::zeros(region.clone(), time);
        out.window = window;
        let grid = region.grid().clone();
        let nw = region.len();
        for k in window.0..=window.1 {
            let t = out.time.time(k);
            for (j, &id) in region.nodes().iter().enumerate() {
                let c = grid.coord(id);
                out.values[k * nw + j] = f(t, &c[..grid.dim()]);
            }
        }
        Ok(out)
    }

    pub fn region(&self) -> &Arc<Region> {
        &self.region
    }

    pub fn time(&self) -> &Arc<TimeGrid> {
        &self.time
    }

    /// Window as step indices `(k0, k1)`, inclusive.
    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, step: usize, node_idx: usize) -> Complex64 {
        self.values[step * self.region.len() + node_idx]
    }

    #[inline]
    pub fn slice(&self, step: usize) -> &[Complex64] {
        let nw = self.region.len();
        &self.values[step * nw..(step + 1) * nw]
    }

    pub fn slice_mut(&mut self, step: usize) -> &mut [Complex64] {
        let nw = self.region.len();
        &mut self.values[step * nw..(step + 1) * nw]
    }

    /// Shrink the declared window to the support actually present.
    pub fn tighten_window(&mut self) {
        let nw = self.region.len();
        let nt = self.time.steps();
        let nonzero = |k: usize| self.values[k * nw..(k + 1) * nw].iter().any(|v| v.norm_sqr() > 0.0);
        let mut k0 = 0;
        while k0 < nt && !nonzero(k0) {
            k0 += 1;
        }
        let mut k1 = nt;
        while k1 > k0 && !nonzero(k1) {
            k1 -= 1;
        }
        self.window = (k0, k1);
    }

    /// Zero everything outside the window (enforces the support invariant
    /// after in-place edits).
    pub fn clamp_to_window(&mut self) {
        let nw = self.region.len();
        for k in 0..self.window.0 {
            self.values[k * nw..(k + 1) * nw].fill(Complex64::ZERO);
        }
        for k in (self.window.1 + 1)..=self.time.steps() {
            self.values[k * nw..(k + 1) * nw].fill(Complex64::ZERO);
        }
    }

    pub fn set_window(&mut self, window: (usize, usize)) {
        self.window = window;
        self.clamp_to_window();
    }

    /// Restrict to a window (zero outside), returning a copy.
    pub fn restricted_to(&self, window: (usize, usize)) -> BoundaryData {
        let mut out = self.clone();
        let k0 = window.0.max(self.window.0);
        let k1 = window.1.min(self.window.1);
        if k0 > k1 {
            out.values.fill(Complex64::ZERO);
            out.window = (0, 0);
        } else {
            out.window = window;
            let nw = self.region.len();
            for k in 0..=self.time.steps() {
                if k < k0 || k > k1 {
                    out.values[k * nw..(k + 1) * nw].fill(Complex64::ZERO);
                }
            }
        }
        out
    }

    /// Restrict spatially to a sub-region mask (zero outside), same layout.
    pub fn masked_to(&self, sub: &Region) -> BoundaryData {
        let mut out = self.clone();
        let nw = self.region.len();
        let keep: Vec<bool> = self.region.nodes().iter().map(|&id| sub.contains(id)).collect();
        for k in 0..=self.time.steps() {
            for j in 0..nw {
                if !keep[j] {
                    out.values[k * nw + j] = Complex64::ZERO;
                }
            }
        }
        out
    }

    pub fn scale(&mut self, c: Complex64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn axpy(&mut self, c: Complex64, other: &BoundaryData) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += c * o;
        }
        self.window = (self.window.0.min(other.window.0), self.window.1.max(other.window.1));
    }

    pub fn compatible(&self, other: &BoundaryData) -> bool {
        self.region.same_grid(&other.region)
            && self.region.len() == other.region.len()
            && self.time == other.time
    }
}

/// Space-time inner product over `window x omega`, trapezoid in both.
pub fn boundary_inner(
    f: &BoundaryData,
    g: &BoundaryData,
    window: (usize, usize),
) -> Result<Complex64> {
    if !f.compatible(g) {
        return Err(BcError::GridMismatch("boundary data on different grids".into()));
    }
    let nt = f.time.steps();
    if window.1 > nt || window.0 > window.1 {
        return Err(BcError::WindowOffGrid(format!("window {window:?} outside 0..={nt}")));
    }
    let dt = f.time.dt();
    let w = f.region.weights();
    let nw = f.region.len();
    let mut acc = Complex64::ZERO;
    for k in window.0..=window.1 {
        let tw = if k == window.0 || k == window.1 { 0.5 * dt } else { dt };
        let fs = &f.values[k * nw..(k + 1) * nw];
        let gs = &g.values[k * nw..(k + 1) * nw];
        let mut s = Complex64::ZERO;
        for j in 0..nw {
            s += fs[j] * gs[j].conj() * w[j];
        }
        acc += s * tw;
    }
    Ok(acc)
}

/// Inner product over the full `(0,T)` window.
pub fn boundary_inner_full(f: &BoundaryData, g: &BoundaryData) -> Result<Complex64> {
    let nt = f.time().steps();
    boundary_inner(f, g, (0, nt))
}

pub fn boundary_norm(f: &BoundaryData) -> f64 {
    boundary_inner_full(f, f).map(|v| v.re.max(0.0).sqrt()).unwrap_or(0.0)
}

/// A stack of snapshots at selected time steps.
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    grid: Arc<SpatialGrid>,
    time: Arc<TimeGrid>,
    steps: Vec<usize>,
    snaps: Vec<ScalarField>,
}

impl SpaceTimeField {
    pub fn new(
        grid: Arc<SpatialGrid>,
        time: Arc<TimeGrid>,
        steps: Vec<usize>,
        snaps: Vec<ScalarField>,
    ) -> Self {
        assert_eq!(steps.len(), snaps.len());
        debug_assert!(steps.windows(2).all(|w| w[0] < w[1]), "steps must be sorted");
        Self { grid, time, steps, snaps }
    }

    pub fn grid(&self) -> &Arc<SpatialGrid> {
        &self.grid
    }

    pub fn time(&self) -> &Arc<TimeGrid> {
        &self.time
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn snapshot(&self, step: usize) -> Option<&ScalarField> {
        self.steps.binary_search(&step).ok().map(|i| &self.snaps[i])
    }

    pub fn snapshots(&self) -> &[ScalarField] {
        &self.snaps
    }
}
