//! Coarse tensor bases of space-time hat functions on an observation
//! region, orthonormalized against the trapezoid inner product.
//!
//! Full nodal dense operators are far too large at desk scale; exact small
//! dense algebra (spectra, direct solves, SVD oracles) happens on these
//! bases instead. Orthonormal coordinates make the correspondence between
//! boundary data restricted to the span and Euclidean vectors an isometry,
//! so matrix singular values are restricted operator norms.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{BcError, Result};
use crate::field::BoundaryData;
use crate::grid::TimeGrid;
use crate::region::Region;

const DEFAULT_CAP: usize = 600;

#[derive(Debug, Clone)]
struct SparseVec {
    idx: Vec<usize>,
    val: Vec<f64>,
}

/// Piecewise-linear hats in time (step index) tensor hats in space (mask
/// ordinal positions per axis), restricted to the region mask.
#[derive(Debug)]
pub struct TensorHatBasis {
    region: Arc<Region>,
    time: Arc<TimeGrid>,
    window: (usize, usize),
    time_hats: Vec<SparseVec>,
    space_hats: Vec<SparseVec>,
    chol_l: DMatrix<f64>,
    n_time: usize,
    n_space: usize,
}

fn hat_centers(lo: usize, hi: usize, count: usize) -> Vec<f64> {
    // Interior centers, excluding the window endpoints so synthesized data
    // vanishes at the window edges.
    let span = (hi - lo) as f64;
    (1..=count).map(|i| lo as f64 + span * i as f64 / (count + 1) as f64).collect()
}

fn hat_value(center: f64, halfwidth: f64, x: f64) -> f64 {
    let d = (x - center).abs() / halfwidth;
    if d >= 1.0 {
        0.0
    } else {
        1.0 - d
    }
}

impl TensorHatBasis {
    /// Build `n_time x n_space` hats over `window x region`, capped.
    pub fn new(
        region: Arc<Region>,
        time: Arc<TimeGrid>,
        window: (usize, usize),
        n_time: usize,
        n_space: usize,
        cap: Option<usize>,
    ) -> Result<Self> {
        let cap = cap.unwrap_or(DEFAULT_CAP);
        let size = n_time * n_space;
        if size > cap {
            return Err(BcError::BasisCapExceeded { size, cap });
        }
        if size == 0 {
            return Err(BcError::Geometry("empty basis".into()));
        }
        if window.1 > time.steps() || window.0 >= window.1 {
            return Err(BcError::WindowOffGrid(format!(
                "basis window {window:?} invalid for {} steps",
                time.steps()
            )));
        }
        if (window.1 - window.0) < 2 * (n_time + 1) {
            return Err(BcError::Geometry(format!(
                "window of {} steps cannot host {n_time} time hats",
                window.1 - window.0
            )));
        }

        let tcenters = hat_centers(window.0, window.1, n_time);
        let thw = (window.1 - window.0) as f64 / (n_time + 1) as f64;
        let time_hats: Vec<SparseVec> = tcenters
            .iter()
            .map(|&c| {
                let mut idx = Vec::new();
                let mut val = Vec::new();
                let k0 = (c - thw).floor().max(window.0 as f64) as usize;
                let k1 = (c + thw).ceil().min(window.1 as f64) as usize;
                for k in k0..=k1 {
                    let v = hat_value(c, thw, k as f64);
                    if v > 0.0 {
                        idx.push(k);
                        val.push(v);
                    }
                }
                SparseVec { idx, val }
            })
            .collect();

        let space_hats = Self::space_hats(&region, n_space)?;

        let mut basis = Self {
            region,
            time,
            window,
            time_hats,
            space_hats,
            chol_l: DMatrix::zeros(0, 0),
            n_time,
            n_space,
        };
        basis.factor_gram()?;
        Ok(basis)
    }

    fn space_hats(region: &Arc<Region>, n_space: usize) -> Result<Vec<SparseVec>> {
        let grid = region.grid();
        let nodes = region.nodes();
        if grid.dim() == 1 {
            // Hats over the ordinal positions of the (contiguous) mask.
            let m = nodes.len();
            if n_space == 1 && m < 4 {
                // Tiny regions (down to a single node) carry one flat hat.
                return Ok(vec![SparseVec { idx: (0..m).collect(), val: vec![1.0; m] }]);
            }
            if m < 2 * (n_space + 1) {
                return Err(BcError::Geometry(format!(
                    "region of {m} nodes cannot host {n_space} space hats"
                )));
            }
            let centers = hat_centers(0, m - 1, n_space);
            let shw = (m - 1) as f64 / (n_space + 1) as f64;
            Ok(centers
                .iter()
                .map(|&c| {
                    let mut idx = Vec::new();
                    let mut val = Vec::new();
                    for j in 0..m {
                        let v = hat_value(c, shw, j as f64);
                        if v > 0.0 {
                            idx.push(j);
                            val.push(v);
                        }
                    }
                    SparseVec { idx, val }
                })
                .collect())
        } else {
            // Tensor hats over the per-axis index ranges of the mask's
            // bounding box, restricted to the mask; near-degenerate hats
            // are dropped before factorization.
            let mut ix_lo = usize::MAX;
            let mut ix_hi = 0usize;
            let mut iy_lo = usize::MAX;
            let mut iy_hi = 0usize;
            for &id in nodes {
                let (ix, iy) = grid.multi(id);
                ix_lo = ix_lo.min(ix);
                ix_hi = ix_hi.max(ix);
                iy_lo = iy_lo.min(iy);
                iy_hi = iy_hi.max(iy);
            }
            let per_axis = (n_space as f64).sqrt().round().max(1.0) as usize;
            let cx = hat_centers(ix_lo, ix_hi, per_axis);
            let cy = hat_centers(iy_lo, iy_hi, per_axis);
            let hwx = (ix_hi - ix_lo) as f64 / (per_axis + 1) as f64;
            let hwy = (iy_hi - iy_lo) as f64 / (per_axis + 1) as f64;
            let mut hats = Vec::new();
            for &cxi in &cx {
                for &cyi in &cy {
                    let mut idx = Vec::new();
                    let mut val = Vec::new();
                    for (j, &id) in nodes.iter().enumerate() {
                        let (ix, iy) = grid.multi(id);
                        let v = hat_value(cxi, hwx, ix as f64) * hat_value(cyi, hwy, iy as f64);
                        if v > 0.0 {
                            idx.push(j);
                            val.push(v);
                        }
                    }
                    let norm2: f64 = idx
                        .iter()
                        .zip(&val)
                        .map(|(&j, &v)| region.weights()[j] * v * v)
                        .sum();
                    if norm2 > 1e-10 {
                        hats.push(SparseVec { idx, val });
                    }
                }
            }
            if hats.is_empty() {
                return Err(BcError::EmptyRegion("no space hats survive the mask".into()));
            }
            Ok(hats)
        }
    }

    fn factor_gram(&mut self) -> Result<()> {
        self.n_space = self.space_hats.len();
        let dt = self.time.dt();
        let nt = self.time.steps();
        let tdots = gram_pairs(&self.time_hats, |k| {
            if k == 0 || k == nt {
                0.5 * dt
            } else {
                dt
            }
        });
        let w = self.region.weights();
        let sdots = gram_pairs(&self.space_hats, |j| w[j]);
        let m = self.len();
        let mut g = DMatrix::zeros(m, m);
        for it in 0..self.n_time {
            for jt in 0..self.n_time {
                let tv = tdots[(it, jt)];
                if tv == 0.0 {
                    continue;
                }
                for is in 0..self.n_space {
                    for js in 0..self.n_space {
                        g[(self.flat(it, is), self.flat(jt, js))] = tv * sdots[(is, js)];
                    }
                }
            }
        }
        let chol = g
            .clone()
            .cholesky()
            .ok_or_else(|| BcError::DenseFactorization("basis Gram not SPD".into()))?;
        self.chol_l = chol.l();
        Ok(())
    }

    #[inline]
    fn flat(&self, it: usize, is: usize) -> usize {
        it * self.n_space + is
    }

    pub fn len(&self) -> usize {
        self.n_time * self.n_space
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn region(&self) -> &Arc<Region> {
        &self.region
    }

    pub fn time(&self) -> &Arc<TimeGrid> {
        &self.time
    }

    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    /// The i-th raw (non-orthonormalized) hat as boundary data.
    pub fn function(&self, i: usize) -> BoundaryData {
        let it = i / self.n_space;
        let is = i % self.n_space;
        let mut out = BoundaryData::zeros(self.region.clone(), self.time.clone());
        let nw = self.region.len();
        let th = &self.time_hats[it];
        let sh = &self.space_hats[is];
        for (ki, &k) in th.idx.iter().enumerate() {
            let tv = th.val[ki];
            let row = &mut out.values_mut()[k * nw..(k + 1) * nw];
            for (ji, &j) in sh.idx.iter().enumerate() {
                row[j] = Complex64::new(tv * sh.val[ji], 0.0);
            }
        }
        out.tighten_window();
        out
    }

    /// Weighted moments `<f, b_i>` for all i.
    fn moments(&self, f: &BoundaryData) -> DVector<Complex64> {
        let nw = self.region.len();
        let w = self.region.weights();
        let dt = self.time.dt();
        let nt = self.time.steps();
        // Space dots per needed step, then time contraction.
        let mut needed: Vec<usize> = self.time_hats.iter().flat_map(|h| h.idx.clone()).collect();
        needed.sort_unstable();
        needed.dedup();
        let mut sdot = vec![Complex64::ZERO; needed.len() * self.n_space];
        for (ni, &k) in needed.iter().enumerate() {
            let row = &f.values()[k * nw..(k + 1) * nw];
            for (is, sh) in self.space_hats.iter().enumerate() {
                let mut acc = Complex64::ZERO;
                for (ji, &j) in sh.idx.iter().enumerate() {
                    acc += row[j] * (w[j] * sh.val[ji]);
                }
                sdot[ni * self.n_space + is] = acc;
            }
        }
        let mut m = DVector::from_element(self.len(), Complex64::ZERO);
        for (it, th) in self.time_hats.iter().enumerate() {
            for (ki, &k) in th.idx.iter().enumerate() {
                let tw = if k == 0 || k == nt { 0.5 * dt } else { dt };
                let ni = needed.binary_search(&k).unwrap();
                let fac = tw * th.val[ki];
                for is in 0..self.n_space {
                    m[self.flat(it, is)] += sdot[ni * self.n_space + is] * fac;
                }
            }
        }
        m
    }

    /// Orthonormal coordinates of the projection of `f` onto the span.
    pub fn analyze(&self, f: &BoundaryData) -> DVector<Complex64> {
        let m = self.moments(f);
        solve_lower_c(&self.chol_l, &m)
    }

    /// Boundary data with the given orthonormal coordinates.
    pub fn synthesize(&self, c: &DVector<Complex64>) -> BoundaryData {
        let a = solve_upper_transpose_c(&self.chol_l, c);
        let mut out = BoundaryData::zeros(self.region.clone(), self.time.clone());
        let nw = self.region.len();
        for it in 0..self.n_time {
            let th = &self.time_hats[it];
            for (ki, &k) in th.idx.iter().enumerate() {
                let tv = th.val[ki];
                let row_base = k * nw;
                for is in 0..self.n_space {
                    let coef = a[self.flat(it, is)] * tv;
                    if coef.norm_sqr() == 0.0 {
                        continue;
                    }
                    let sh = &self.space_hats[is];
                    for (ji, &j) in sh.idx.iter().enumerate() {
                        out.values_mut()[row_base + j] += coef * sh.val[ji];
                    }
                }
            }
        }
        out.set_window(self.window);
        out
    }

    /// Raw pairing matrix `M_ij = <Op b_j, b_i>` over the (non-normalized)
    /// hats, with quadrature weights. Columns in parallel.
    pub fn assemble_pairing<F>(&self, op: F) -> Result<DMatrix<f64>>
    where
        F: Fn(&BoundaryData) -> Result<BoundaryData> + Sync,
    {
        let m = self.len();
        let cols: Vec<Result<Vec<f64>>> = (0..m)
            .into_par_iter()
            .map(|j| {
                let bj = self.function(j);
                let out = op(&bj)?;
                let mom = self.moments(&out);
                Ok(mom.iter().map(|v| v.re).collect())
            })
            .collect();
        let mut raw = DMatrix::zeros(m, m);
        for (j, col) in cols.into_iter().enumerate() {
            let col = col?;
            for i in 0..m {
                raw[(i, j)] = col[i];
            }
        }
        Ok(raw)
    }

    /// Matrix of an operator in orthonormal coordinates:
    /// `L^{-1} M L^{-T}` with `M_ij = <Op b_j, b_i>`. Restricted to the
    /// span this represents the operator isometrically, so its singular
    /// values are restricted operator norms.
    pub fn assemble_ortho<F>(&self, op: F) -> Result<DMatrix<f64>>
    where
        F: Fn(&BoundaryData) -> Result<BoundaryData> + Sync,
    {
        let raw = self.assemble_pairing(op)?;
        let li = solve_lower_mat(&self.chol_l, &raw);
        let lit = solve_lower_mat(&self.chol_l, &li.transpose());
        Ok(lit.transpose())
    }

    /// Gram matrix of the raw hats (needed to interpret pairing matrices).
    pub fn gram(&self) -> DMatrix<f64> {
        &self.chol_l * self.chol_l.transpose()
    }
}

fn gram_pairs(hats: &[SparseVec], weight: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let n = hats.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            let (a, b) = (&hats[i], &hats[j]);
            let mut ai = 0;
            let mut bi = 0;
            while ai < a.idx.len() && bi < b.idx.len() {
                match a.idx[ai].cmp(&b.idx[bi]) {
                    std::cmp::Ordering::Less => ai += 1,
                    std::cmp::Ordering::Greater => bi += 1,
                    std::cmp::Ordering::Equal => {
                        acc += weight(a.idx[ai]) * a.val[ai] * b.val[bi];
                        ai += 1;
                        bi += 1;
                    }
                }
            }
            g[(i, j)] = acc;
            g[(j, i)] = acc;
        }
    }
    g
}

fn solve_lower_c(l: &DMatrix<f64>, b: &DVector<Complex64>) -> DVector<Complex64> {
    let n = b.len();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for j in 0..i {
            s -= x[j] * l[(i, j)];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

fn solve_upper_transpose_c(l: &DMatrix<f64>, b: &DVector<Complex64>) -> DVector<Complex64> {
    // Solve L^T x = b.
    let n = b.len();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s -= x[j] * l[(j, i)];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

fn solve_lower_mat(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = b.nrows();
    let mut x = b.clone();
    for col in 0..b.ncols() {
        for i in 0..n {
            let mut s = x[(i, col)];
            for j in 0..i {
                s -= x[(j, col)] * l[(i, j)];
            }
            x[(i, col)] = s / l[(i, i)];
        }
    }
    x
}

/// Apply a real matrix to complex coordinates.
pub fn apply_real_matrix(m: &DMatrix<f64>, c: &DVector<Complex64>) -> DVector<Complex64> {
    let n = m.nrows();
    let mut out = DVector::from_element(n, Complex64::ZERO);
    for i in 0..n {
        let mut acc = Complex64::ZERO;
        for j in 0..m.ncols() {
            acc += c[j] * m[(i, j)];
        }
        out[i] = acc;
    }
    out
}
