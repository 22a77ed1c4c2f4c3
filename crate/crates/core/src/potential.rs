//! Time-independent real potentials on the grid.

use std::sync::Arc;

use crate::error::{BcError, Result};
use crate::grid::{SpatialGrid, MAX_DIM};

/// A smooth Gaussian bump `amplitude * exp(-|x - center|^2 / (2 width^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBump {
    pub center: [f64; MAX_DIM],
    pub width: f64,
    pub amplitude: f64,
}

impl GaussianBump {
    pub fn eval(&self, x: &[f64], n: usize) -> f64 {
        let mut d2 = 0.0;
        for a in 0..n {
            let d = x[a] - self.center[a];
            d2 += d * d;
        }
        self.amplitude * (-d2 / (2.0 * self.width * self.width)).exp()
    }
}

/// Real nodal potential, optionally backed by an analytic bump sum so that
/// probe transport integrals can evaluate it off-grid.
///
/// The smoothness metadata `(m, M)` mirrors an a-priori `C^m` bound and is
/// informational except for the sup-norm check at construction.
#[derive(Debug, Clone)]
pub struct Potential {
    grid: Arc<SpatialGrid>,
    values: Vec<f64>,
    bumps: Option<Vec<GaussianBump>>,
    smoothness: Option<(u32, f64)>,
}

impl Potential {
    pub fn zero(grid: Arc<SpatialGrid>) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n], bumps: Some(Vec::new()), smoothness: None }
    }

    pub fn from_values(
        grid: Arc<SpatialGrid>,
        values: Vec<f64>,
        smoothness: Option<(u32, f64)>,
    ) -> Result<Self> {
        assert_eq!(values.len(), grid.len());
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BcError::Geometry("potential has non-finite values".into()));
        }
        let p = Self { grid, values, bumps: None, smoothness };
        p.check_bound()?;
        Ok(p)
    }

    pub fn from_bumps(
        grid: Arc<SpatialGrid>,
        bumps: Vec<GaussianBump>,
        smoothness: Option<(u32, f64)>,
    ) -> Result<Self> {
        let n = grid.dim();
        let values: Vec<f64> = (0..grid.len())
            .map(|id| {
                let c = grid.coord(id);
                bumps.iter().map(|b| b.eval(&c, n)).sum()
            })
            .collect();
        let p = Self { grid, values, bumps: Some(bumps), smoothness };
        p.check_bound()?;
        Ok(p)
    }

    fn check_bound(&self) -> Result<()> {
        if let Some((_, m_bound)) = self.smoothness {
            let sup = self.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if sup > m_bound * (1.0 + 1e-12) {
                return Err(BcError::Geometry(format!(
                    "potential sup-norm {sup:.6e} exceeds declared bound {m_bound:.6e}"
                )));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> &Arc<SpatialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn smoothness(&self) -> Option<(u32, f64)> {
        self.smoothness
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// Point evaluation: analytic when bump-backed, multilinear otherwise.
    pub fn eval_at(&self, x: &[f64]) -> f64 {
        if let Some(bumps) = &self.bumps {
            let n = self.grid.dim();
            return bumps.iter().map(|b| b.eval(x, n)).sum();
        }
        self.interp(x)
    }

    fn interp(&self, x: &[f64]) -> f64 {
        let g = &self.grid;
        let h = g.spacing();
        let lo = g.lower();
        let counts = g.counts();
        let mut i0 = [0usize; MAX_DIM];
        let mut frac = [0.0f64; MAX_DIM];
        for a in 0..g.dim() {
            let s = ((x[a] - lo[a]) / h).clamp(0.0, (counts[a] - 1) as f64);
            let i = (s.floor() as usize).min(counts[a] - 2);
            i0[a] = i;
            frac[a] = s - i as f64;
        }
        if g.dim() == 1 {
            let v0 = self.values[g.idx(i0[0], 0)];
            let v1 = self.values[g.idx(i0[0] + 1, 0)];
            v0 + frac[0] * (v1 - v0)
        } else {
            let v00 = self.values[g.idx(i0[0], i0[1])];
            let v10 = self.values[g.idx(i0[0] + 1, i0[1])];
            let v01 = self.values[g.idx(i0[0], i0[1] + 1)];
            let v11 = self.values[g.idx(i0[0] + 1, i0[1] + 1)];
            let a0 = v00 + frac[0] * (v10 - v00);
            let a1 = v01 + frac[0] * (v11 - v01);
            a0 + frac[1] * (a1 - a0)
        }
    }

    /// L2 difference over a region's nodes with its quadrature weights.
    pub fn l2_diff(&self, other: &Potential, region: &crate::region::Region) -> f64 {
        region
            .nodes()
            .iter()
            .zip(region.weights())
            .map(|(&id, &w)| {
                let d = self.values[id] - other.values[id];
                w * d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_bound_enforced() {
        let grid = Arc::new(SpatialGrid::new(1, [-2.0, 0.0], 0.05, [81, 1]).unwrap());
        let bumps = vec![GaussianBump { center: [0.0, 0.0], width: 0.3, amplitude: 2.0 }];
        assert!(Potential::from_bumps(grid.clone(), bumps.clone(), Some((3, 1.0))).is_err());
        assert!(Potential::from_bumps(grid, bumps, Some((3, 2.5))).is_ok());
    }

    #[test]
    fn analytic_matches_grid_nodes() {
        let grid = Arc::new(SpatialGrid::new(1, [-2.0, 0.0], 0.05, [81, 1]).unwrap());
        let q = Potential::from_bumps(
            grid.clone(),
            vec![GaussianBump { center: [-0.5, 0.0], width: 0.2, amplitude: 1.0 }],
            None,
        )
        .unwrap();
        for id in (0..grid.len()).step_by(7) {
            let c = grid.coord(id);
            assert!((q.eval_at(&c) - q.values()[id]).abs() < 1e-14);
        }
    }
}
