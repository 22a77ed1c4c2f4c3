//! Node-mask regions: observation sets, target sets, domains of influence,
//! and the thin cap sets used for point-value extraction.

use std::sync::Arc;

use crate::error::{BcError, Result};
use crate::field::ScalarField;
use crate::grid::{SpatialGrid, MAX_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionKind {
    Omega,
    TargetK,
    Influence,
    Cap,
}

/// Geometric primitives used to realize regions on a grid.
#[derive(Debug, Clone, PartialEq)]
pub enum GeomSpec {
    /// Axis-aligned box `[lo, hi]` (an interval in 1D). Open in spirit:
    /// nodes strictly inside are included, with a half-cell tolerance.
    Box { lo: [f64; MAX_DIM], hi: [f64; MAX_DIM] },
    /// Euclidean ball of center `c` and radius `r`.
    Ball { c: [f64; MAX_DIM], r: f64 },
}

impl GeomSpec {
    pub fn contains(&self, x: &[f64; MAX_DIM], n: usize, tol: f64) -> bool {
        match self {
            GeomSpec::Box { lo, hi } => (0..n).all(|a| x[a] >= lo[a] - tol && x[a] <= hi[a] + tol),
            GeomSpec::Ball { c, r } => {
                let mut d2 = 0.0;
                for a in 0..n {
                    d2 += (x[a] - c[a]) * (x[a] - c[a]);
                }
                d2.sqrt() <= r + tol
            }
        }
    }

    /// Bounding box of the primitive.
    pub fn hull(&self, n: usize) -> ([f64; MAX_DIM], [f64; MAX_DIM]) {
        match self {
            GeomSpec::Box { lo, hi } => (*lo, *hi),
            GeomSpec::Ball { c, r } => {
                let mut lo = *c;
                let mut hi = *c;
                for a in 0..n {
                    lo[a] -= r;
                    hi[a] += r;
                }
                (lo, hi)
            }
        }
    }
}

/// A set of grid nodes with trapezoid quadrature weights.
///
/// Weights are `h^n` scaled by 1/2 per axis on one-sided mask boundary
/// nodes, so box-shaped regions integrate with trapezoid accuracy.
#[derive(Debug, Clone)]
pub struct Region {
    grid: Arc<SpatialGrid>,
    kind: RegionKind,
    mask: Vec<bool>,
    nodes: Vec<usize>,
    weights: Vec<f64>,
}

impl Region {
    pub fn from_mask(grid: Arc<SpatialGrid>, kind: RegionKind, mask: Vec<bool>) -> Result<Self> {
        assert_eq!(mask.len(), grid.len());
        let nodes: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if nodes.is_empty() && matches!(kind, RegionKind::Omega | RegionKind::TargetK) {
            return Err(BcError::EmptyRegion(format!("{kind:?} mask is empty")));
        }
        let weights = trapezoid_weights(&grid, &mask, &nodes);
        Ok(Self { grid, kind, mask, nodes, weights })
    }

    pub fn from_geom(grid: Arc<SpatialGrid>, kind: RegionKind, geom: &GeomSpec) -> Result<Self> {
        let n = grid.dim();
        let tol = 1e-9 * grid.spacing();
        let mask: Vec<bool> = (0..grid.len())
            .map(|id| geom.contains(&grid.coord(id), n, tol))
            .collect();
        Self::from_mask(grid, kind, mask)
    }

    pub fn grid(&self) -> &Arc<SpatialGrid> {
        &self.grid
    }

    pub fn kind(&self) -> RegionKind {
        self.kind
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn contains(&self, id: usize) -> bool {
        self.mask[id]
    }

    /// Sorted flat indices of the member nodes.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Quadrature weight (including the `h^n` factor) per member node,
    /// aligned with `nodes()`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Members whose stencil neighborhood leaves the mask; the discrete
    /// boundary layer.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let g = &self.grid;
        let (cx, cy) = (g.counts()[0], g.counts()[1]);
        self.nodes
            .iter()
            .copied()
            .filter(|&id| {
                let (ix, iy) = g.multi(id);
                let mut open = false;
                if ix == 0 || !self.mask[id - 1] {
                    open = true;
                }
                if ix + 1 >= cx || !self.mask[id + 1] {
                    open = true;
                }
                if g.dim() == 2 {
                    if iy == 0 || !self.mask[id - cx] {
                        open = true;
                    }
                    if iy + 1 >= cy || !self.mask[id + cx] {
                        open = true;
                    }
                }
                open
            })
            .collect()
    }

    /// Node-counting volume `count * h^n` (used for cap sets).
    pub fn counted_volume(&self) -> f64 {
        self.nodes.len() as f64 * self.grid.cell_volume()
    }

    /// Trapezoid-weighted volume.
    pub fn weighted_volume(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn same_grid(&self, other: &Region) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid.same_layout(&other.grid)
    }
}

fn trapezoid_weights(grid: &SpatialGrid, mask: &[bool], nodes: &[usize]) -> Vec<f64> {
    let (cx, cy) = (grid.counts()[0], grid.counts()[1]);
    let vol = grid.cell_volume();
    nodes
        .iter()
        .map(|&id| {
            let (ix, iy) = grid.multi(id);
            let mut w = vol;
            let left = ix > 0 && mask[id - 1];
            let right = ix + 1 < cx && mask[id + 1];
            if left != right {
                w *= 0.5;
            }
            if grid.dim() == 2 {
                let down = iy > 0 && mask[id - cx];
                let up = iy + 1 < cy && mask[id + cx];
                if down != up {
                    w *= 0.5;
                }
            }
            w
        })
        .collect()
}

/// Exact Euclidean distance from every grid node to the nearest node of `r`.
///
/// Brute force over the member nodes, so the result is exact node-to-node;
/// adequate at desk scale and trivially correct.
pub fn distance_field(r: &Region) -> Result<ScalarField> {
    if r.is_empty() {
        return Err(BcError::EmptyRegion("distance_field of empty region".into()));
    }
    let grid = r.grid().clone();
    let n = grid.dim();
    let member_coords: Vec<[f64; MAX_DIM]> = r.nodes().iter().map(|&id| grid.coord(id)).collect();
    let mut vals = vec![0.0f64; grid.len()];
    // 1D masks are unions of intervals; a sorted scan is exact and fast.
    if n == 1 {
        let xs: Vec<f64> = member_coords.iter().map(|c| c[0]).collect();
        for id in 0..grid.len() {
            let x = grid.coord(id)[0];
            let pos = xs.partition_point(|&m| m < x);
            let mut best = f64::INFINITY;
            if pos < xs.len() {
                best = best.min((xs[pos] - x).abs());
            }
            if pos > 0 {
                best = best.min((x - xs[pos - 1]).abs());
            }
            vals[id] = best;
        }
    } else {
        for id in 0..grid.len() {
            let x = grid.coord(id);
            let mut best = f64::INFINITY;
            for m in &member_coords {
                let dx = x[0] - m[0];
                let dy = x[1] - m[1];
                let d2 = dx * dx + dy * dy;
                if d2 < best {
                    best = d2;
                }
            }
            vals[id] = best.sqrt();
        }
    }
    Ok(ScalarField::from_real(grid, vals))
}

/// Domain of influence: nodes within distance `s` of `omega`, with a
/// half-cell membership tolerance.
pub fn influence_region(omega: &Region, s: f64) -> Result<Region> {
    assert!(s >= 0.0, "influence time must be nonnegative");
    let dist = distance_field(omega)?;
    let tol = s + 0.5 * omega.grid().spacing();
    let mask: Vec<bool> = dist.re().iter().map(|&d| d <= tol).collect();
    Region::from_mask(omega.grid().clone(), RegionKind::Influence, mask)
}

/// Largest distance from a point of `target` to `omega`; the travel time a
/// measurement scheme must budget for (doubled) to see all of `target`.
pub fn max_distance(target: &Region, omega: &Region) -> Result<f64> {
    let dist = distance_field(omega)?;
    Ok(target
        .nodes()
        .iter()
        .map(|&id| dist.re()[id])
        .fold(0.0f64, f64::max))
}

/// Shortest distance between two regions (zero if they overlap).
pub fn min_distance(a: &Region, b: &Region) -> Result<f64> {
    let dist = distance_field(b)?;
    Ok(a.nodes()
        .iter()
        .map(|&id| dist.re()[id])
        .fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_1d() -> Arc<SpatialGrid> {
        Arc::new(SpatialGrid::new(1, [-4.0, 0.0], 0.1, [101, 1]).unwrap())
    }

    #[test]
    fn empty_omega_rejected() {
        let g = grid_1d();
        let mask = vec![false; g.len()];
        assert!(Region::from_mask(g, RegionKind::Omega, mask).is_err());
    }

    #[test]
    fn interval_weights_sum_to_extent() {
        let g = grid_1d();
        let omega = Region::from_geom(
            g,
            RegionKind::Omega,
            &GeomSpec::Box { lo: [2.0, 0.0], hi: [3.0, 0.0] },
        )
        .unwrap();
        // Trapezoid: extent (count-1)*h exactly.
        let vol = omega.weighted_volume();
        assert!((vol - 1.0).abs() < 1e-12, "vol = {vol}");
    }

    #[test]
    fn distance_node_inside_is_zero_and_line_distance() {
        let g = grid_1d();
        let omega = Region::from_geom(
            g.clone(),
            RegionKind::Omega,
            &GeomSpec::Box { lo: [0.0, 0.0], hi: [1.0, 0.0] },
        )
        .unwrap();
        let d = distance_field(&omega).unwrap();
        let inside = g.nearest_node(&[0.5]);
        assert_eq!(d.re()[inside], 0.0);
        let far = g.nearest_node(&[2.5]);
        assert!((d.re()[far] - 1.5).abs() <= g.spacing());
    }

    #[test]
    fn distance_2d_pythagoras() {
        let g = Arc::new(SpatialGrid::new(2, [0.0, 0.0], 0.1, [61, 61]).unwrap());
        let origin = g.idx(0, 0);
        let mut mask = vec![false; g.len()];
        mask[origin] = true;
        let r = Region::from_mask(g.clone(), RegionKind::Omega, mask).unwrap();
        let d = distance_field(&r).unwrap();
        let probe = g.idx(30, 40); // (3, 4) scaled by h -> distance 5h*10
        assert!((d.re()[probe] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn influence_zero_is_closure_and_dilation() {
        let g = grid_1d();
        let omega = Region::from_geom(
            g.clone(),
            RegionKind::Omega,
            &GeomSpec::Box { lo: [2.0, 0.0], hi: [3.0, 0.0] },
        )
        .unwrap();
        let m0 = influence_region(&omega, 0.0).unwrap();
        assert_eq!(m0.nodes(), omega.nodes());

        let m1 = influence_region(&omega, 1.0).unwrap();
        let h = g.spacing();
        for &id in m1.nodes() {
            let x = g.coord(id)[0];
            assert!(x >= 1.0 - h && x <= 4.0 + h);
        }
        let lo = g.coord(*m1.nodes().first().unwrap())[0];
        let hi = g.coord(*m1.nodes().last().unwrap())[0];
        assert!((lo - 1.0).abs() <= h && (hi - 4.0).abs() <= h);
    }

    #[test]
    fn max_distance_matches_interval_arithmetic() {
        let g = grid_1d();
        let omega = Region::from_geom(
            g.clone(),
            RegionKind::Omega,
            &GeomSpec::Box { lo: [2.0, 0.0], hi: [3.0, 0.0] },
        )
        .unwrap();
        let k = Region::from_geom(
            g,
            RegionKind::TargetK,
            &GeomSpec::Box { lo: [-1.0, 0.0], hi: [0.0, 0.0] },
        )
        .unwrap();
        let l = max_distance(&k, &omega).unwrap();
        assert!((l - 3.0).abs() <= 0.1);
        assert!(min_distance(&k, &omega).unwrap() > 0.0);
    }
}
