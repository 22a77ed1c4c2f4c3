//! Explicit leapfrog solution of `(d_tt - Lap + q) u = f` with zero initial
//! data on a padded box.
//!
//! The box is enlarged so the discrete domain of dependence never touches
//! its boundary within the horizon: truncation of free space is then exact
//! by finite speed of propagation, with no absorbing-boundary artifacts.
//! The scheme is the standard order-2 leapfrog,
//! `u^{n+1} = 2 u^n - u^{n-1} + dt^2 (Lap_h u^n - q u^n + f^n)`,
//! started with `u^0 = 0`, `u^1 = dt^2 f^0 / 2`, whose time symmetry is what
//! the adjoint identity tests rely on.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{BcError, Result};
use crate::field::{BoundaryData, ScalarField, SpaceTimeField};
use crate::grid::{SpatialGrid, TimeGrid};
use crate::potential::Potential;
use crate::region::{GeomSpec, Region};

/// Right-hand sides accepted by the solver.
pub enum Source<'a> {
    Zero,
    /// Supported on an observation region; the common case for the
    /// measurement operator.
    Boundary(&'a BoundaryData),
    /// Arbitrary space-time source, evaluated lazily (oracles, manufactured
    /// solutions, probe fields).
    Volume(&'a (dyn Fn(f64, &[f64]) -> Complex64 + Sync)),
}

impl Source<'_> {
    fn has_imag(&self) -> bool {
        match self {
            Source::Zero => false,
            Source::Boundary(bd) => bd.values().iter().any(|v| v.im != 0.0),
            Source::Volume(_) => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Re,
    Im,
}

/// Snapshot retention: everything, or a declared sorted subset of steps.
#[derive(Debug, Clone)]
pub enum StorePolicy {
    Full,
    Steps(Vec<usize>),
}

/// Values sampled at selected `(step, node)` pairs, row-major over
/// `steps x nodes`.
#[derive(Debug, Clone)]
pub struct StencilSamples {
    pub steps: Vec<usize>,
    pub nodes: Vec<usize>,
    pub values: Vec<Complex64>,
}

impl StencilSamples {
    pub fn at(&self, step: usize, node: usize) -> Option<Complex64> {
        let si = self.steps.iter().position(|&s| s == step)?;
        let ni = self.nodes.iter().position(|&n| n == node)?;
        Some(self.values[si * self.nodes.len() + ni])
    }
}

/// The padded computational box: the hull of the target and observation
/// geometry dilated by one cell per time step plus a 4-cell margin, so the
/// outermost layers stay identically zero for the whole run.
pub fn padded_box(
    target: &GeomSpec,
    omega: &GeomSpec,
    time: &TimeGrid,
    h: f64,
    n: usize,
) -> Result<SpatialGrid> {
    let (tlo, thi) = target.hull(n);
    let (olo, ohi) = omega.hull(n);
    let pad = (time.steps() + 4) as f64 * h;
    let mut lo = [0.0; 2];
    let mut counts = [1usize; 2];
    for a in 0..n {
        let lo_snap = ((tlo[a].min(olo[a])) / h).floor() * h;
        let hi_snap = ((thi[a].max(ohi[a])) / h).ceil() * h;
        lo[a] = lo_snap - pad;
        let extent = (hi_snap + pad) - lo[a];
        counts[a] = (extent / h).round() as usize + 1;
    }
    SpatialGrid::new(n, lo, h, counts)
}

struct Workspace {
    u_prev: Vec<f64>,
    u_cur: Vec<f64>,
    u_next: Vec<f64>,
}

fn leapfrog_pass<FSrc, FRec>(
    q: &Potential,
    grid: &SpatialGrid,
    time: &TimeGrid,
    mut add_source: FSrc,
    mut record: FRec,
) where
    FSrc: FnMut(usize, f64, &mut [f64]),
    FRec: FnMut(usize, &[f64]),
{
    let n = grid.len();
    let nt = time.steps();
    let dt = time.dt();
    let dt2 = dt * dt;
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    let qs = q.values();
    let mut w = Workspace {
        u_prev: vec![0.0; n],
        u_cur: vec![0.0; n],
        u_next: vec![0.0; n],
    };

    record(0, &w.u_prev);
    if nt == 0 {
        return;
    }

    // First step consistent with zero Cauchy data to second order.
    add_source(0, 0.5 * dt2, &mut w.u_cur);
    record(1, &w.u_cur);

    let (cx, cy) = (grid.counts()[0], grid.counts()[1]);
    for k in 1..nt {
        w.u_next.fill(0.0);
        if grid.dim() == 1 {
            for i in 1..cx - 1 {
                let lap = (w.u_cur[i - 1] - 2.0 * w.u_cur[i] + w.u_cur[i + 1]) * inv_h2;
                w.u_next[i] =
                    2.0 * w.u_cur[i] - w.u_prev[i] + dt2 * (lap - qs[i] * w.u_cur[i]);
            }
        } else {
            for iy in 1..cy - 1 {
                let row = iy * cx;
                for ix in 1..cx - 1 {
                    let id = row + ix;
                    let lap = (w.u_cur[id - 1] + w.u_cur[id + 1] + w.u_cur[id - cx]
                        + w.u_cur[id + cx]
                        - 4.0 * w.u_cur[id])
                        * inv_h2;
                    w.u_next[id] =
                        2.0 * w.u_cur[id] - w.u_prev[id] + dt2 * (lap - qs[id] * w.u_cur[id]);
                }
            }
        }
        add_source(k, dt2, &mut w.u_next);
        record(k + 1, &w.u_next);
        std::mem::swap(&mut w.u_prev, &mut w.u_cur);
        std::mem::swap(&mut w.u_cur, &mut w.u_next);
    }
}

fn make_adder<'a>(
    src: &'a Source<'a>,
    part: Part,
    grid: &'a SpatialGrid,
    time: &'a TimeGrid,
) -> Box<dyn FnMut(usize, f64, &mut [f64]) + 'a> {
    match src {
        Source::Zero => Box::new(|_, _, _| {}),
        Source::Boundary(bd) => {
            let nodes = bd.region().nodes();
            let (k0, k1) = bd.window();
            Box::new(move |k, scale, buf| {
                if k < k0 || k > k1 {
                    return;
                }
                let vals = bd.slice(k);
                match part {
                    Part::Re => {
                        for (j, &id) in nodes.iter().enumerate() {
                            buf[id] += scale * vals[j].re;
                        }
                    }
                    Part::Im => {
                        for (j, &id) in nodes.iter().enumerate() {
                            buf[id] += scale * vals[j].im;
                        }
                    }
                }
            })
        }
        Source::Volume(f) => Box::new(move |k, scale, buf| {
            let t = time.time(k);
            for id in 0..grid.len() {
                let c = grid.coord(id);
                let v = f(t, &c[..grid.dim()]);
                buf[id] += scale * if part == Part::Re { v.re } else { v.im };
            }
        }),
    }
}

fn validate(q: &Potential, grid: &Arc<SpatialGrid>, time: &TimeGrid, src: &Source) -> Result<()> {
    if !q.grid().same_layout(grid) {
        return Err(BcError::GridMismatch("potential grid differs from solver grid".into()));
    }
    let limit = grid.spacing() / (grid.dim() as f64).sqrt();
    if time.dt() > limit * (1.0 + 1e-12) {
        return Err(BcError::CflViolation { dt: time.dt(), limit });
    }
    if let Source::Boundary(bd) = src {
        if !bd.region().grid().same_layout(grid) {
            return Err(BcError::SupportViolation(
                "source region lives on a different grid".into(),
            ));
        }
    }
    Ok(())
}

/// Check the outermost two layers are untouched (exact zeros). A wave that
/// reached the box boundary would leave a residue there.
fn boundary_untouched(grid: &SpatialGrid, u: &[f64]) -> bool {
    let (cx, cy) = (grid.counts()[0], grid.counts()[1]);
    if grid.dim() == 1 {
        u[0] == 0.0 && u[1] == 0.0 && u[cx - 1] == 0.0 && u[cx - 2] == 0.0
    } else {
        let mut ok = true;
        for ix in 0..cx {
            for iy in [0, 1, cy - 2, cy - 1] {
                ok &= u[iy * cx + ix] == 0.0;
            }
        }
        for iy in 0..cy {
            for ix in [0, 1, cx - 2, cx - 1] {
                ok &= u[iy * cx + ix] == 0.0;
            }
        }
        ok
    }
}

/// Forward solve retaining snapshots per the storage policy.
pub fn solve_forward(
    q: &Potential,
    src: &Source,
    grid: &Arc<SpatialGrid>,
    time: &Arc<TimeGrid>,
    store: &StorePolicy,
) -> Result<SpaceTimeField> {
    validate(q, grid, time, src)?;
    let keep: Vec<usize> = match store {
        StorePolicy::Full => (0..=time.steps()).collect(),
        StorePolicy::Steps(s) => {
            let mut s = s.clone();
            s.sort_unstable();
            s.dedup();
            if s.iter().any(|&k| k > time.steps()) {
                return Err(BcError::WindowOffGrid("stored step beyond horizon".into()));
            }
            s
        }
    };
    let n = grid.len();
    let mut planes_re: Vec<Vec<f64>> = Vec::with_capacity(keep.len());
    let mut planes_im: Vec<Vec<f64>> = Vec::new();
    {
        let adder = make_adder(src, Part::Re, grid, time);
        let keep_ref = &keep;
        leapfrog_pass(q, grid, time, adder, |k, u| {
            if keep_ref.binary_search(&k).is_ok() {
                planes_re.push(u.to_vec());
            }
        });
    }
    let has_imag = src.has_imag();
    if has_imag {
        let adder = make_adder(src, Part::Im, grid, time);
        let keep_ref = &keep;
        leapfrog_pass(q, grid, time, adder, |k, u| {
            if keep_ref.binary_search(&k).is_ok() {
                planes_im.push(u.to_vec());
            }
        });
    }
    if matches!(src, Source::Boundary(_)) {
        let last_re = planes_re.last().map(|p| boundary_untouched(grid, p)).unwrap_or(true);
        let last_im = planes_im.last().map(|p| boundary_untouched(grid, p)).unwrap_or(true);
        if !(last_re && last_im) {
            return Err(BcError::SupportViolation(
                "wave reached the padded box boundary; enlarge the box".into(),
            ));
        }
    }
    let snaps: Vec<ScalarField> = (0..keep.len())
        .map(|i| {
            let vals: Vec<Complex64> = (0..n)
                .map(|j| {
                    Complex64::new(
                        planes_re[i][j],
                        if has_imag { planes_im[i][j] } else { 0.0 },
                    )
                })
                .collect();
            ScalarField::from_values(grid.clone(), vals)
        })
        .collect();
    Ok(SpaceTimeField::new(grid.clone(), time.clone(), keep, snaps))
}

/// Forward solve recording only the trace on an observation region
/// (the memory-lean path used by the measurement operator).
pub fn solve_trace(
    q: &Potential,
    src: &Source,
    obs: &Arc<Region>,
    grid: &Arc<SpatialGrid>,
    time: &Arc<TimeGrid>,
) -> Result<BoundaryData> {
    let (bd, _) = solve_trace_and_samples(q, src, obs, &[], &[], grid, time)?;
    Ok(bd)
}

/// Trace plus point samples in one pass.
pub fn solve_trace_and_samples(
    q: &Potential,
    src: &Source,
    obs: &Arc<Region>,
    sample_steps: &[usize],
    sample_nodes: &[usize],
    grid: &Arc<SpatialGrid>,
    time: &Arc<TimeGrid>,
) -> Result<(BoundaryData, StencilSamples)> {
    validate(q, grid, time, src)?;
    if !obs.grid().same_layout(grid) {
        return Err(BcError::GridMismatch("observation region on a different grid".into()));
    }
    let mut steps = sample_steps.to_vec();
    steps.sort_unstable();
    steps.dedup();
    if steps.iter().any(|&k| k > time.steps()) {
        return Err(BcError::WindowOffGrid("sample step beyond horizon".into()));
    }
    let nw = obs.len();
    let nsn = sample_nodes.len();
    let mut trace_re = vec![0.0f64; (time.steps() + 1) * nw];
    let mut trace_im = vec![0.0f64; (time.steps() + 1) * nw];
    let mut samp_re = vec![0.0f64; steps.len() * nsn];
    let mut samp_im = vec![0.0f64; steps.len() * nsn];
    let mut final_ok = true;

    {
        let nodes = obs.nodes();
        let adder = make_adder(src, Part::Re, grid, time);
        let steps_ref = &steps;
        leapfrog_pass(q, grid, time, adder, |k, u| {
            let row = &mut trace_re[k * nw..(k + 1) * nw];
            for (j, &id) in nodes.iter().enumerate() {
                row[j] = u[id];
            }
            if let Ok(si) = steps_ref.binary_search(&k) {
                for (j, &id) in sample_nodes.iter().enumerate() {
                    samp_re[si * nsn + j] = u[id];
                }
            }
            if k == time.steps() {
                final_ok &= boundary_untouched(grid, u);
            }
        });
    }
    if src.has_imag() {
        let nodes = obs.nodes();
        let adder = make_adder(src, Part::Im, grid, time);
        let steps_ref = &steps;
        leapfrog_pass(q, grid, time, adder, |k, u| {
            let row = &mut trace_im[k * nw..(k + 1) * nw];
            for (j, &id) in nodes.iter().enumerate() {
                row[j] = u[id];
            }
            if let Ok(si) = steps_ref.binary_search(&k) {
                for (j, &id) in sample_nodes.iter().enumerate() {
                    samp_im[si * nsn + j] = u[id];
                }
            }
            if k == time.steps() {
                final_ok &= boundary_untouched(grid, u);
            }
        });
    }
    if matches!(src, Source::Boundary(_)) && !final_ok {
        return Err(BcError::SupportViolation(
            "wave reached the padded box boundary; enlarge the box".into(),
        ));
    }

    let mut bd = BoundaryData::zeros(obs.clone(), time.clone());
    for (v, (re, im)) in bd
        .values_mut()
        .iter_mut()
        .zip(trace_re.iter().zip(trace_im.iter()))
    {
        *v = Complex64::new(*re, *im);
    }
    bd.tighten_window();
    let samples = StencilSamples {
        steps,
        nodes: sample_nodes.to_vec(),
        values: samp_re
            .iter()
            .zip(samp_im.iter())
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect(),
    };
    Ok((bd, samples))
}

/// Duhamel quadrature for the 1D free wave equation: the independent oracle
/// against which the scheme is verified. No time stepping is involved.
///
/// `u(t,x) = 1/2 int_0^t int_{x-(t-tau)}^{x+(t-tau)} f(tau,y) dy dtau`,
/// with the inner integral exact for the piecewise-linear interpolant of
/// the nodal source and the outer integral by trapezoid.
pub fn dalembert_oracle_1d(
    f: &BoundaryData,
    eval_time_step: usize,
    grid: &Arc<SpatialGrid>,
) -> Result<ScalarField> {
    if grid.dim() != 1 {
        return Err(BcError::Geometry("the Duhamel oracle is one-dimensional".into()));
    }
    let time = f.time().clone();
    if eval_time_step > time.steps() {
        return Err(BcError::WindowOffGrid("evaluation step beyond horizon".into()));
    }
    let h = grid.spacing();
    let nx = grid.len();
    let x0 = grid.lower()[0];
    // Scatter the source to the full line per step and build prefix
    // integrals S_k(y) = int_{x_min}^{y} f(tau_k, .) (piecewise quadratic).
    let m = eval_time_step;
    let nodes = f.region().nodes();
    let mut fk = vec![0.0f64; nx];

    let mut prefix: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut slices: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    for k in 0..=m {
        fk.fill(0.0);
        let row = f.slice(k);
        for (j, &id) in nodes.iter().enumerate() {
            fk[id] = row[j].re;
        }
        let mut s = vec![0.0f64; nx];
        for i in 1..nx {
            s[i] = s[i - 1] + 0.5 * h * (fk[i - 1] + fk[i]);
        }
        prefix.push(s);
        slices.push(fk.clone());
    }

    // Exact integral of the piecewise-linear interpolant up to y.
    let integral_to = |k: usize, y: f64| -> f64 {
        let s = &prefix[k];
        let fv = &slices[k];
        let pos = (y - x0) / h;
        if pos <= 0.0 {
            return 0.0;
        }
        if pos >= (nx - 1) as f64 {
            return s[nx - 1];
        }
        let j = pos.floor() as usize;
        let xi = (pos - j as f64) * h;
        let slope = (fv[j + 1] - fv[j]) / h;
        s[j] + fv[j] * xi + 0.5 * slope * xi * xi
    };

    let dt = time.dt();
    let t = time.time(m);
    let vals: Vec<Complex64> = (0..nx)
        .map(|i| {
            let x = grid.coord(i)[0];
            let mut acc = 0.0f64;
            for k in 0..=m {
                let r = t - time.time(k);
                let inner = integral_to(k, x + r) - integral_to(k, x - r);
                let w = if k == 0 || k == m { 0.5 } else { 1.0 };
                acc += w * inner;
            }
            Complex64::new(0.5 * acc * dt, 0.0)
        })
        .collect();
    Ok(ScalarField::from_values(grid.clone(), vals))
}

/// Discrete leapfrog shadow energy at the half step `step + 1/2`:
/// `1/2 [ ||(u^{n+1}-u^n)/dt||^2 + a(u^{n+1}, u^n) ]` with
/// `a(v,w) = <grad v, grad w> + <q v, w>`. Exactly conserved between source
/// activity for the homogeneous scheme.
pub fn energy(u: &SpaceTimeField, q: &Potential, step: usize) -> Result<f64> {
    let (a, b) = match (u.snapshot(step), u.snapshot(step + 1)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(BcError::WindowOffGrid(format!(
                "energy needs snapshots {step} and {}",
                step + 1
            )))
        }
    };
    let grid = u.grid();
    let dt = u.time().dt();
    let h = grid.spacing();
    let voln = grid.cell_volume();
    let (cx, cy) = (grid.counts()[0], grid.counts()[1]);
    let av = a.values();
    let bv = b.values();
    let qs = q.values();

    let mut kinetic = 0.0f64;
    let mut potential = 0.0f64;
    for id in 0..grid.len() {
        let d = (bv[id] - av[id]) / dt;
        kinetic += d.norm_sqr();
        potential += qs[id] * (bv[id] * av[id].conj()).re;
    }
    let mut gradform = 0.0f64;
    for iy in 0..cy {
        for ix in 0..cx - 1 {
            let id = iy * cx + ix;
            let db = (bv[id + 1] - bv[id]) / h;
            let da = (av[id + 1] - av[id]) / h;
            gradform += (db * da.conj()).re;
        }
    }
    if grid.dim() == 2 {
        for iy in 0..cy - 1 {
            for ix in 0..cx {
                let id = iy * cx + ix;
                let db = (bv[id + cx] - bv[id]) / h;
                let da = (av[id + cx] - av[id]) / h;
                gradform += (db * da.conj()).re;
            }
        }
    }
    Ok(0.5 * voln * (kinetic + gradform + potential))
}
