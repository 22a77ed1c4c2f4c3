//! Regularized approximate-control solves and everything built on them:
//! influence-domain indicator estimates, their intersections, cap-averaged
//! point values, and the cost-of-control sweep.
//!
//! The control minimizing `||u^g(t) - u^f(t)||^2 + alpha ||g||^2` over
//! sources `g` supported in `(t-s, t) x control-region` solves the normal
//! equation `(P K_t P + alpha) g = P K_t f`, all of which is computable
//! from measurement data through the connecting operator. Its wave at time
//! `t` approaches the influence-domain restriction of `u^f(t)`, which is
//! what lets indicator functions enter inner products.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::connect::ConnectingOperator;
use crate::error::{BcError, Result};
use crate::field::{boundary_inner, boundary_norm, BoundaryData};
use crate::grid::MAX_DIM;
use crate::lambda::translate_steps;
use crate::region::{distance_field, GeomSpec, Region, RegionKind};

/// Spatial/temporal window of one control problem, with the shifted-frame
/// bookkeeping and an operator-scale estimate amortized across solves.
pub struct ControlContext {
    control_region: Arc<Region>,
    eval_step: usize,
    influence_time: f64,
    /// Window in unshifted step indices, `(kt - s_steps, kt)`.
    window: (usize, usize),
    /// Same window shifted so the evaluation time sits at `T'/2`.
    shifted_window: (usize, usize),
    shift: i64,
    /// Estimated norm of the windowed operator (sets the alpha scale).
    k_scale: f64,
}

impl ControlContext {
    /// Build the window for controlling at grid step `eval_step` with
    /// influence time `s`, sources restricted to `control_region`.
    pub fn new(
        k: &ConnectingOperator,
        control_region: Arc<Region>,
        s: f64,
        eval_step: usize,
    ) -> Result<Self> {
        let time = k.map().time();
        let half = k.half_step();
        let dt = time.dt();
        if eval_step == 0 || eval_step > half {
            return Err(BcError::WindowOffGrid(format!(
                "evaluation step {eval_step} must lie in (0, {half}]"
            )));
        }
        let t = time.time(eval_step);
        if !(s > 0.0 && s < t) {
            return Err(BcError::Geometry(format!(
                "influence time s = {s} must satisfy 0 < s < t = {t}"
            )));
        }
        let s_steps = (s / dt).round() as usize;
        // Open interval (t-s, t): the endpoint steps are excluded (a kick
        // at the evaluation step is causally inert anyway, and the sharp
        // window edges are where iterated projections breed grid-scale
        // roughness that degrades the pairing quadrature).
        let w0 = eval_step.saturating_sub(s_steps) + 1;
        let w1 = eval_step - 1;
        if w0 >= w1 {
            return Err(BcError::WindowOffGrid(format!(
                "control window ({w0},{w1}) has no interior steps"
            )));
        }
        let shift = (half - eval_step) as i64;
        let mut ctx = Self {
            control_region,
            eval_step,
            influence_time: s,
            window: (w0, w1),
            shifted_window: (w0 + shift as usize, w1 + shift as usize),
            shift,
            k_scale: 0.0,
        };
        ctx.k_scale = ctx.estimate_scale(k, 10, 0x5eed)?;
        Ok(ctx)
    }

    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    pub fn eval_step(&self) -> usize {
        self.eval_step
    }

    pub fn influence_time(&self) -> f64 {
        self.influence_time
    }

    pub fn control_region(&self) -> &Arc<Region> {
        &self.control_region
    }

    pub fn k_scale(&self) -> f64 {
        self.k_scale
    }

    fn project(&self, bd: &BoundaryData) -> BoundaryData {
        let mut out = bd.masked_to(&self.control_region);
        out.set_window(self.shifted_window);
        out
    }

    /// `P K P + alpha` in the shifted frame.
    fn apply_regularized(
        &self,
        k: &ConnectingOperator,
        g: &BoundaryData,
        alpha: f64,
    ) -> Result<BoundaryData> {
        let kg = k.apply_k(g)?;
        let mut out = self.project(&kg);
        out.axpy(Complex64::new(alpha, 0.0), g);
        Ok(out)
    }

    fn estimate_scale(&self, k: &ConnectingOperator, iters: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = BoundaryData::zeros(
            k.map().omega().clone(),
            k.map().time().clone(),
        );
        for val in v.values_mut() {
            *val = Complex64::new(rng.gen_range(-1.0..1.0), 0.0);
        }
        let mut v = self.project(&v);
        let n0 = boundary_norm(&v);
        if n0 == 0.0 {
            return Err(BcError::EmptyRegion("control window projects to nothing".into()));
        }
        v.scale(Complex64::new(1.0 / n0, 0.0));
        let mut lam = 0.0f64;
        for _ in 0..iters {
            let w = self.project(&k.apply_k(&v)?);
            let nw = boundary_norm(&w);
            if nw < 1e-300 {
                return Ok(1e-300);
            }
            lam = nw;
            v = w;
            v.scale(Complex64::new(1.0 / nw, 0.0));
        }
        Ok(lam.max(1e-300))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgReport {
    pub iters: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

/// A solved control problem with its data-side diagnostics.
#[derive(Clone)]
pub struct ControlSolution {
    /// The regularized control, supported on the window (unshifted frame).
    pub g: BoundaryData,
    /// Relative regularization weight and the absolute value used.
    pub alpha_rel: f64,
    pub alpha_abs: f64,
    /// `A(g) = ||u^g(t) - u^f(t)||^2` evaluated from data.
    pub a_value: f64,
    /// `A(g) + alpha ||g||^2`.
    pub a_alpha: f64,
    /// Data-only estimate of the mass left outside the influence domain.
    pub gamma_hat: f64,
    pub g_norm: f64,
    pub cg: CgReport,
}

/// Solve `(P K_t P + alpha) g = P K_t f` by conjugate gradients in the
/// shifted frame. Non-convergence is reported, not fatal: the partial
/// iterate is returned with the flag cleared.
pub fn solve_control(
    k: &ConnectingOperator,
    ctx: &ControlContext,
    f: &BoundaryData,
    alpha_rel: f64,
    max_iters: usize,
) -> Result<ControlSolution> {
    assert!(alpha_rel > 0.0, "regularization must be positive");
    let alpha = alpha_rel * ctx.k_scale;
    let half = k.half_step();

    // Shift the (causally truncated) source to the canonical frame.
    let f_t = f.restricted_to((0, ctx.eval_step));
    let sf = translate_steps(&f_t, ctx.shift)?;
    let kf = k.apply_k(&sf)?;
    let b = ctx.project(&kf);
    let b_norm = boundary_norm(&b);

    let mut g = BoundaryData::zeros(f.region().clone(), f.time().clone());
    g.set_window(ctx.shifted_window);
    let mut cg = CgReport { iters: 0, rel_residual: 1.0, converged: true };

    if b_norm > 0.0 {
        let tol = (alpha_rel / 100.0).min(1e-8);
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rs = boundary_inner(&r, &r, (0, half)).map(|v| v.re)?;
        let mut converged = false;
        for it in 1..=max_iters {
            let ap = ctx.apply_regularized(k, &p, alpha)?;
            let pap = boundary_inner(&p, &ap, (0, half))?.re;
            if pap.abs() < 1e-300 {
                break;
            }
            let step = rs / pap;
            g.axpy(Complex64::new(step, 0.0), &p);
            r.axpy(Complex64::new(-step, 0.0), &ap);
            let rs_new = boundary_inner(&r, &r, (0, half))?.re;
            cg.iters = it;
            cg.rel_residual = rs_new.max(0.0).sqrt() / b_norm;
            if cg.rel_residual <= tol {
                converged = true;
                break;
            }
            let beta = rs_new / rs;
            let mut p_next = r.clone();
            p_next.axpy(Complex64::new(beta, 0.0), &p);
            p = p_next;
            rs = rs_new;
        }
        cg.converged = converged || cg.rel_residual <= 1e-6;
    } else {
        cg.rel_residual = 0.0;
    }

    // Quadratic form of A(g) from data, in the shifted frame:
    // <g,Kg> - 2 Re<g,Kf> + <f,Kf>.
    let kg = k.apply_k(&g)?;
    let g_kg = boundary_inner(&g, &kg, (0, half))?.re;
    let g_kf = boundary_inner(&g, &kf, (0, half))?.re;
    let f_kf = boundary_inner(&sf, &kf, (0, half))?.re;
    let a_value = g_kg - 2.0 * g_kf + f_kf;
    let g_norm = boundary_norm(&g);
    let a_alpha = a_value + alpha * g_norm * g_norm;
    let gamma_hat = a_value.max(0.0);

    // Back to the unshifted frame.
    let g_back = translate_steps(&g, -ctx.shift)?;
    Ok(ControlSolution {
        g: g_back,
        alpha_rel,
        alpha_abs: alpha,
        a_value,
        a_alpha,
        gamma_hat,
        g_norm,
        cg,
    })
}

/// The influence-domain mass estimate: the minimum value of the
/// regularized functional minus its penalty term, clipped at zero
/// (the target is a squared norm; negative values are discretization
/// noise).
pub fn gamma_estimate(sol: &ControlSolution) -> f64 {
    (sol.a_alpha - sol.alpha_abs * sol.g_norm * sol.g_norm).max(0.0)
}

/// Index of the L-curve knee over a descending-alpha schedule: the point
/// of maximum discrete curvature of `(log residual, log control norm)`.
pub fn l_curve_knee(solutions: &[ControlSolution]) -> usize {
    if solutions.len() < 3 {
        return solutions.len().saturating_sub(1);
    }
    let pts: Vec<(f64, f64)> = solutions
        .iter()
        .map(|s| {
            (
                0.5 * s.a_value.max(1e-300).ln(),
                s.g_norm.max(1e-300).ln(),
            )
        })
        .collect();
    let mut best = 1usize;
    let mut best_curv = f64::NEG_INFINITY;
    for i in 1..pts.len() - 1 {
        let (x0, y0) = pts[i - 1];
        let (x1, y1) = pts[i];
        let (x2, y2) = pts[i + 1];
        let a = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
        let b = ((x2 - x1).powi(2) + (y2 - y1).powi(2)).sqrt();
        let c = ((x2 - x0).powi(2) + (y2 - y0).powi(2)).sqrt();
        if a * b * c == 0.0 {
            continue;
        }
        let cross = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0);
        let curv = 2.0 * cross.abs() / (a * b * c);
        if curv > best_curv {
            best_curv = curv;
            best = i;
        }
    }
    best
}

/// Run a descending alpha schedule for one geometry.
pub fn run_alpha_schedule(
    k: &ConnectingOperator,
    ctx: &ControlContext,
    f: &BoundaryData,
    alphas: &[f64],
    max_iters: usize,
) -> Result<Vec<ControlSolution>> {
    alphas.iter().map(|&a| solve_control(k, ctx, f, a, max_iters)).collect()
}

/// Data-only estimate of the indicator-weighted inner product
/// `(1_{M(region,s)} u^f(t), u^h(t'))`: control `f` on the window, then
/// pair the control (as a source) against `h` at `(t, t')`.
pub fn indicator_inner(
    k: &ConnectingOperator,
    f: &BoundaryData,
    h: &BoundaryData,
    kt: usize,
    kt2: usize,
    s: f64,
    alpha_rel: f64,
    control_region: &Arc<Region>,
    max_iters: usize,
) -> Result<(Complex64, ControlSolution)> {
    let ctx = ControlContext::new(k, control_region.clone(), s, kt)?;
    let sol = solve_control(k, &ctx, f, alpha_rel, max_iters)?;
    let value = k.inner_product_at_times(&sol.g, h, kt, kt2)?;
    Ok((value, sol))
}

/// Two-stage variant for the intersection of two influence domains
/// `M(outer region, s)` and `M(inner region, s')` with the inner control
/// region contained in the outer one: first control `f` toward the inner
/// indicator, then estimate the outer indicator for the resulting control
/// as a source.
#[allow(clippy::too_many_arguments)]
pub fn indicator_inner_intersection(
    k: &ConnectingOperator,
    f: &BoundaryData,
    h: &BoundaryData,
    kt: usize,
    kt2: usize,
    outer: (&Arc<Region>, f64),
    inner: (&Arc<Region>, f64),
    alpha_rel: f64,
    max_iters: usize,
) -> Result<(Complex64, ControlSolution, ControlSolution)> {
    let (outer_region, s_outer) = outer;
    let (inner_region, s_inner) = inner;
    if !inner_region.nodes().iter().all(|&id| outer_region.contains(id)) {
        return Err(BcError::Geometry(
            "inner control region must be contained in the outer one".into(),
        ));
    }
    let ctx1 = ControlContext::new(k, inner_region.clone(), s_inner, kt)?;
    let stage1 = solve_control(k, &ctx1, f, alpha_rel, max_iters)?;
    let (value, stage2) = indicator_inner(
        k,
        &stage1.g,
        h,
        kt,
        kt2,
        s_outer,
        alpha_rel,
        outer_region,
        max_iters,
    )?;
    Ok((value, stage1, stage2))
}

/// A thin shell between two influence domains collapsing onto a target
/// point; averaging over it turns indicator inner products into point
/// values.
pub struct CapRegion {
    /// Nearest boundary node of the observation set to the target point.
    pub y: [f64; MAX_DIM],
    /// Outward unit normal at `y`.
    pub normal: [f64; MAX_DIM],
    pub r: f64,
    pub s: f64,
    pub eta: f64,
    /// Inner tangent ball (control region for the outer influence domain).
    pub ball_inner: Arc<Region>,
    /// Twice-radius tangent ball (control region for the subtracted term).
    pub ball_outer: Arc<Region>,
    pub region: Region,
    /// Node-counting volume `count * h^n`.
    pub volume: f64,
}

/// Build the cap set around `x0`: the difference of the influence domains
/// `M(B(y - r nu, r), s + eta) \ M(B(y - 2r nu, 2r), 2r + s - eta)`, which
/// equals the ball difference `B(c1, r+s+eta) \ B(c2, 2r+s-eta)`.
pub fn cap_build(
    x0: &[f64],
    omega: &Arc<Region>,
    r: f64,
    eta: f64,
) -> Result<CapRegion> {
    let grid = omega.grid().clone();
    let n = grid.dim();
    let h = grid.spacing();
    if !(eta > 0.0 && eta < r) {
        return Err(BcError::Geometry(format!("need 0 < eta = {eta} < r = {r}")));
    }
    let dist = distance_field(omega)?;
    let x0_node = grid.nearest_node(x0);
    let s = dist.re()[x0_node];
    if s <= 0.0 {
        return Err(BcError::Geometry("target point lies inside the observation set".into()));
    }

    // Nearest boundary node of the observation set.
    let x0c = grid.coord(x0_node);
    let boundary = omega.boundary_nodes();
    let y_id = boundary
        .iter()
        .copied()
        .min_by(|&a, &b| {
            let da = sqdist(&grid.coord(a), &x0c, n);
            let db = sqdist(&grid.coord(b), &x0c, n);
            da.partial_cmp(&db).unwrap()
        })
        .ok_or_else(|| BcError::EmptyRegion("observation set has no boundary".into()))?;
    let y = grid.coord(y_id);

    // Outward normal: centered differences of the distance field at y,
    // normalized; falls back to the chord direction when degenerate.
    let mut normal = [0.0f64; MAX_DIM];
    {
        let d = dist.re();
        let counts = grid.counts();
        let (ix, iy) = grid.multi(y_id);
        let strides = [1usize, counts[0]];
        let pos = [ix, iy];
        for a in 0..n {
            let st = strides[a];
            if pos[a] > 0 && pos[a] + 1 < counts[a] {
                normal[a] = (d[y_id + st] - d[y_id - st]) / (2.0 * h);
            }
        }
        let norm = (normal[0] * normal[0] + normal[1] * normal[1]).sqrt();
        if norm < 1e-9 {
            for a in 0..n {
                normal[a] = x0c[a] - y[a];
            }
        }
        let norm = (normal[0] * normal[0] + normal[1] * normal[1]).sqrt();
        for v in normal.iter_mut() {
            *v /= norm;
        }
    }

    let mut c1 = [0.0f64; MAX_DIM];
    let mut c2 = [0.0f64; MAX_DIM];
    for a in 0..n {
        c1[a] = y[a] - r * normal[a];
        c2[a] = y[a] - 2.0 * r * normal[a];
    }

    // The tangent ball must fit in the observation set.
    let tol = 0.5 * h;
    for id in 0..grid.len() {
        let c = grid.coord(id);
        if sqdist(&c, &c1, n).sqrt() <= r - tol && !omega.contains(id) {
            return Err(BcError::Geometry(format!(
                "ball of radius {r} at the boundary normal does not fit in the observation set"
            )));
        }
    }

    let ball_inner = Arc::new(Region::from_geom(
        grid.clone(),
        RegionKind::Omega,
        &GeomSpec::Ball { c: c1, r },
    )?);
    let ball_outer = Arc::new(Region::from_geom(
        grid.clone(),
        RegionKind::Omega,
        &GeomSpec::Ball { c: c2, r: 2.0 * r },
    )?);

    // Cap mask with the half-cell membership tolerance on both shells.
    let r_out = r + s + eta;
    let r_in = 2.0 * r + s - eta;
    let mask: Vec<bool> = (0..grid.len())
        .map(|id| {
            let c = grid.coord(id);
            let d1 = sqdist(&c, &c1, n).sqrt();
            let d2 = sqdist(&c, &c2, n).sqrt();
            d1 <= r_out + tol && d2 > r_in + tol
        })
        .collect();
    let region = Region::from_mask(grid.clone(), RegionKind::Cap, mask)?;
    if region.is_empty() {
        return Err(BcError::EmptyRegion("cap set has no nodes".into()));
    }
    if !region.contains(x0_node) {
        return Err(BcError::Geometry("cap set does not contain the target point".into()));
    }
    let volume = region.counted_volume();
    Ok(CapRegion {
        y,
        normal,
        r,
        s,
        eta,
        ball_inner,
        ball_outer,
        region,
        volume,
    })
}

fn sqdist(a: &[f64; MAX_DIM], b: &[f64; MAX_DIM], n: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        acc += (a[i] - b[i]) * (a[i] - b[i]);
    }
    acc
}

/// One refinement step of the schedule in [`point_value_product`].
#[derive(Debug, Clone, Copy)]
pub struct PointValueStep {
    pub eta: f64,
    pub alpha_rel: f64,
    pub estimate: Complex64,
}

#[derive(Debug, Clone)]
pub struct PointValueEstimate {
    pub value: Complex64,
    pub converged: bool,
    pub steps: Vec<PointValueStep>,
}

/// Data-only estimate of `u^f(t, x0) conj(u^h(t', x0))` by cap averaging:
/// the difference of the outer indicator estimate and its intersection
/// with the subtracted influence domain, divided by the cap volume,
/// refined along an `(eta, alpha)` schedule until two successive
/// estimates agree to `tol` (relative) or the schedule is exhausted
/// (flagged).
#[allow(clippy::too_many_arguments)]
pub fn point_value_product(
    k: &ConnectingOperator,
    f: &BoundaryData,
    h: &BoundaryData,
    kt: usize,
    kt2: usize,
    x0: &[f64],
    r: f64,
    schedule: &[(f64, f64)],
    tol: f64,
    max_iters: usize,
) -> Result<PointValueEstimate> {
    assert!(!schedule.is_empty(), "empty point-value schedule");
    let mut steps = Vec::new();
    let mut last: Option<Complex64> = None;
    let mut converged = false;
    for &(eta, alpha_rel) in schedule {
        let cap = cap_build(x0, k.map().omega(), r, eta)?;
        let est = cap_average(k, f, h, kt, kt2, &cap, alpha_rel, max_iters)?;
        steps.push(PointValueStep { eta, alpha_rel, estimate: est });
        if let Some(prev) = last {
            let scale = est.norm().max(prev.norm()).max(1e-300);
            if (est - prev).norm() <= tol * scale {
                converged = true;
                last = Some(est);
                break;
            }
        }
        last = Some(est);
    }
    Ok(PointValueEstimate { value: last.unwrap(), converged, steps })
}

/// The raw cap-averaged estimate at one `(eta, alpha)`.
pub fn cap_average(
    k: &ConnectingOperator,
    f: &BoundaryData,
    h: &BoundaryData,
    kt: usize,
    kt2: usize,
    cap: &CapRegion,
    alpha_rel: f64,
    max_iters: usize,
) -> Result<Complex64> {
    let s_outer = cap.r + cap.s + cap.eta - cap.r; // influence time for ball_inner
    let s_sub = 2.0 * cap.r + cap.s - cap.eta - 2.0 * cap.r;
    // Influence times measured from the ball surfaces: M(B(c1,r), s+eta)
    // and M(B(c2,2r), s-eta).
    let s1 = cap.s + cap.eta;
    let s2 = cap.s - cap.eta;
    debug_assert!((s_outer - s1).abs() < 1e-12 && (s_sub - s2).abs() < 1e-12);
    let (outer_est, _) =
        indicator_inner(k, f, h, kt, kt2, s1, alpha_rel, &cap.ball_inner, max_iters)?;
    let (both_est, _, _) = indicator_inner_intersection(
        k,
        f,
        h,
        kt,
        kt2,
        (&cap.ball_outer, s2),
        (&cap.ball_inner, s1),
        alpha_rel,
        max_iters,
    )?;
    Ok((outer_est - both_est) / cap.volume)
}

/// One row of the cost-of-control table.
#[derive(Debug, Clone, Copy)]
pub struct CostRow {
    pub eps: f64,
    /// `||g|| / ||v||_{H1}`, the measured cost factor.
    pub cost: f64,
    pub achieved_err: f64,
    pub alpha_rel: f64,
    /// Set when no alpha in the bracket reaches the requested precision.
    pub unreachable: bool,
}

/// Empirical cost of approximate control: for each requested precision,
/// the smallest-norm control (largest alpha) meeting it, found by
/// bisection in log alpha. The error is evaluated against the
/// direct-solver target `1_M u^f(t)` supplied by the caller as a closure
/// mapping a control to its achieved relative error.
pub fn cost_of_control_estimate(
    k: &ConnectingOperator,
    ctx: &ControlContext,
    f: &BoundaryData,
    eps_schedule: &[f64],
    alpha_bracket: (f64, f64),
    rel_err_of: &dyn Fn(&ControlSolution) -> Result<f64>,
    v_h1_norm: f64,
    v_l2_norm: f64,
    max_iters: usize,
) -> Result<Vec<CostRow>> {
    let (a_lo, a_hi) = alpha_bracket;
    assert!(a_lo < a_hi && a_lo > 0.0);
    let mut rows = Vec::with_capacity(eps_schedule.len());
    for &eps in eps_schedule {
        // Zero control suffices when the budget exceeds the target mass.
        if eps * v_h1_norm >= v_l2_norm {
            rows.push(CostRow {
                eps,
                cost: 0.0,
                achieved_err: v_l2_norm / v_h1_norm,
                alpha_rel: f64::INFINITY,
                unreachable: false,
            });
            continue;
        }
        let solve_at = |alpha: f64| -> Result<(ControlSolution, f64)> {
            let sol = solve_control(k, ctx, f, alpha, max_iters)?;
            let err = rel_err_of(&sol)?;
            Ok((sol, err))
        };
        let (lo_sol, lo_err) = solve_at(a_lo)?;
        if lo_err > eps {
            rows.push(CostRow {
                eps,
                cost: lo_sol.g_norm / v_h1_norm,
                achieved_err: lo_err,
                alpha_rel: a_lo,
                unreachable: true,
            });
            continue;
        }
        let (_, hi_err) = solve_at(a_hi)?;
        if hi_err <= eps {
            let (sol, err) = (solve_at(a_hi)?.0, hi_err);
            rows.push(CostRow {
                eps,
                cost: sol.g_norm / v_h1_norm,
                achieved_err: err,
                alpha_rel: a_hi,
                unreachable: false,
            });
            continue;
        }
        // Bisection in log alpha for the largest feasible alpha.
        let mut lo = a_lo.ln();
        let mut hi = a_hi.ln();
        let mut best = (lo_sol, lo_err, a_lo);
        for _ in 0..12 {
            let mid = 0.5 * (lo + hi);
            let alpha = mid.exp();
            let (sol, err) = solve_at(alpha)?;
            if err <= eps {
                best = (sol, err, alpha);
                lo = mid;
            } else {
                hi = mid;
            }
        }
        rows.push(CostRow {
            eps,
            cost: best.0.g_norm / v_h1_norm,
            achieved_err: best.1,
            alpha_rel: best.2,
            unreachable: false,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{l2_inner, l2_norm, ScalarField};
    use crate::grid::{SpatialGrid, TimeGrid};
    use crate::lambda::SourceToSolutionMap;
    use crate::potential::Potential;
    use crate::region::influence_region;
    use crate::solver::{padded_box, solve_forward, Source, StorePolicy};

    struct Setup {
        grid: Arc<SpatialGrid>,
        time: Arc<TimeGrid>,
        omega: Arc<Region>,
        all: Arc<Region>,
        q: Arc<Potential>,
        k: ConnectingOperator,
    }

    fn setup(h: f64, horizon: f64) -> Setup {
        let omega = GeomSpec::Box { lo: [2.0, 0.0], hi: [3.0, 0.0] };
        let target = GeomSpec::Box { lo: [0.5, 0.0], hi: [1.5, 0.0] };
        let time = Arc::new(TimeGrid::from_cfl(horizon, h, 0.8, 1).unwrap());
        let grid = Arc::new(padded_box(&target, &omega, &time, h, 1).unwrap());
        let omega_r =
            Arc::new(Region::from_geom(grid.clone(), RegionKind::Omega, &omega).unwrap());
        let all = Arc::new(
            Region::from_mask(grid.clone(), RegionKind::Influence, vec![true; grid.len()])
                .unwrap(),
        );
        let q = Arc::new(Potential::zero(grid.clone()));
        let map = Arc::new(
            SourceToSolutionMap::new(q.clone(), omega_r.clone(), grid.clone(), time.clone())
                .unwrap(),
        );
        let k = ConnectingOperator::new(map).unwrap();
        Setup { grid, time, omega: omega_r, all, q, k }
    }

    fn pulse(s: &Setup, frac: f64) -> BoundaryData {
        let nt = s.time.steps();
        let k1 = ((nt as f64) * frac) as usize;
        let t1 = s.time.time(k1);
        BoundaryData::from_fn(s.omega.clone(), s.time.clone(), (0, k1), move |t, x| {
            let env = (std::f64::consts::PI * t / t1).sin().powi(2);
            let sp = (-((x[0] - 2.35) / 0.12).powi(2) / 2.0).exp()
                * ((x[0] - 2.0) * std::f64::consts::PI).sin();
            Complex64::new(env * sp, 0.0)
        })
        .unwrap()
    }

    fn field_at(s: &Setup, src: &BoundaryData, step: usize) -> ScalarField {
        solve_forward(
            &s.q,
            &Source::Boundary(src),
            &s.grid,
            &s.time,
            &StorePolicy::Steps(vec![step]),
        )
        .unwrap()
        .snapshot(step)
        .unwrap()
        .clone()
    }

    #[test]
    fn zero_source_gives_zero_control() {
        let s = setup(0.05, 4.0);
        let kt = s.time.steps() / 2 - 10;
        let ctx = ControlContext::new(&s.k, s.omega.clone(), 0.8, kt).unwrap();
        let z = BoundaryData::zeros(s.omega.clone(), s.time.clone());
        let sol = solve_control(&s.k, &ctx, &z, 1e-2, 50).unwrap();
        assert_eq!(sol.g_norm, 0.0);
        assert_eq!(sol.a_value, 0.0);
        assert_eq!(gamma_estimate(&sol), 0.0);
    }

    #[test]
    fn control_reduces_target_mismatch_and_a_matches_direct() {
        let s = setup(0.04, 4.0);
        let half = s.time.steps() / 2;
        let kt = half - 5;
        let f = pulse(&s, 0.45);
        let svals = 0.9;
        let ctx = ControlContext::new(&s.k, s.omega.clone(), svals, kt).unwrap();
        let sol = solve_control(&s.k, &ctx, &f, 1e-3, 200).unwrap();
        assert!(sol.cg.iters > 0);

        // Direct evaluation of A(g): the quadratic form from data must
        // match the solver within discretization error.
        let uf = field_at(&s, &f, kt);
        let ug = field_at(&s, &sol.g, kt);
        let mut diff = ug.clone();
        for (d, u) in diff.values_mut().iter_mut().zip(uf.values()) {
            *d -= u;
        }
        let a_direct = l2_norm(&diff, &s.all).unwrap().powi(2);
        let scale = boundary_norm(&f).powi(2);
        assert!(
            (sol.a_value - a_direct).abs() <= 2e-2 * scale.max(a_direct),
            "A from data {} vs direct {a_direct}",
            sol.a_value
        );

        // The control actually helps: A(g) is well below A(0) = ||u^f||^2.
        let a0 = l2_norm(&uf, &s.all).unwrap().powi(2);
        assert!(a_direct < 0.8 * a0, "control ineffective: {a_direct} vs {a0}");
    }

    #[test]
    fn minimality_against_random_competitors() {
        let s = setup(0.05, 4.0);
        let half = s.time.steps() / 2;
        let kt = half - 4;
        let f = pulse(&s, 0.45);
        let ctx = ControlContext::new(&s.k, s.omega.clone(), 0.8, kt).unwrap();
        let alpha_rel = 1e-2;
        let sol = solve_control(&s.k, &ctx, &f, alpha_rel, 150).unwrap();

        // Evaluate A_alpha for competitors through the same data route.
        let a_alpha_of = |g: &BoundaryData| -> f64 {
            let f_t = f.restricted_to((0, kt));
            let sf = translate_steps(&f_t, (half - kt) as i64).unwrap();
            let sg = translate_steps(&g.restricted_to((0, kt)), (half - kt) as i64).unwrap();
            let kg = s.k.apply_k(&sg).unwrap();
            let kf = s.k.apply_k(&sf).unwrap();
            let g_kg = boundary_inner(&sg, &kg, (0, half)).unwrap().re;
            let g_kf = boundary_inner(&sg, &kf, (0, half)).unwrap().re;
            let f_kf = boundary_inner(&sf, &kf, (0, half)).unwrap().re;
            let n = boundary_norm(&sg);
            g_kg - 2.0 * g_kf + f_kf + sol.alpha_abs * n * n
        };

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a_star = a_alpha_of(&sol.g);
        for _ in 0..5 {
            let mut comp = sol.g.clone();
            for v in comp.values_mut() {
                *v *= Complex64::new(1.0 + 0.2 * rng.gen_range(-1.0..1.0), 0.0);
                *v += Complex64::new(0.01 * rng.gen_range(-1.0..1.0), 0.0);
            }
            let mut comp = comp.masked_to(&s.omega);
            comp.set_window(ctx.window());
            let a_comp = a_alpha_of(&comp);
            assert!(
                a_star <= a_comp * (1.0 + 1e-6),
                "competitor beat the minimizer: {a_star} vs {a_comp}"
            );
        }
    }

    #[test]
    fn gamma_full_coverage_is_small_and_monotone_in_s() {
        let s = setup(0.04, 4.8);
        let half = s.time.steps() / 2;
        let f = pulse(&s, 0.3);
        let kt = half - 5;
        let t = s.time.time(kt);

        // s >= t - onset: the influence domain covers the whole wave
        // support, so almost no mass is left outside.
        let alphas = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
        let mut gammas = Vec::new();
        for s_val in [0.95 * t, 0.55 * t, 0.3 * t] {
            let ctx = ControlContext::new(&s.k, s.omega.clone(), s_val, kt).unwrap();
            let sols = run_alpha_schedule(&s.k, &ctx, &f, &alphas, 200).unwrap();
            let knee = l_curve_knee(&sols);
            gammas.push(gamma_estimate(&sols[knee]));
        }
        let uf = field_at(&s, &f, kt);
        let u_mass = l2_norm(&uf, &s.all).unwrap().powi(2);
        assert!(
            gammas[0] <= 1e-3 * u_mass + 1e-12,
            "full coverage should leave nothing outside: {} vs mass {u_mass}",
            gammas[0]
        );
        assert!(
            gammas[2] >= gammas[0] - 1e-3 * u_mass,
            "gamma should grow as the influence domain shrinks: {gammas:?}"
        );
    }

    #[test]
    fn gamma_matches_direct_indicator_mass() {
        let s = setup(0.04, 4.8);
        let half = s.time.steps() / 2;
        let f = pulse(&s, 0.3);
        let kt = half - 5;
        let t = s.time.time(kt);
        let sval = 0.55 * t;
        let ctx = ControlContext::new(&s.k, s.omega.clone(), sval, kt).unwrap();
        let alphas = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4];
        let sols = run_alpha_schedule(&s.k, &ctx, &f, &alphas, 300).unwrap();
        let knee = l_curve_knee(&sols);
        let gamma_hat = gamma_estimate(&sols[knee]);

        let uf = field_at(&s, &f, kt);
        let m = influence_region(&s.omega, sval).unwrap();
        let mut outside = uf.clone();
        for &id in m.nodes() {
            outside.values_mut()[id] = Complex64::ZERO;
        }
        let gamma_direct = l2_norm(&outside, &s.all).unwrap().powi(2);
        let u_mass = l2_norm(&uf, &s.all).unwrap().powi(2);
        assert!(
            (gamma_hat - gamma_direct).abs() <= 0.1 * u_mass,
            "gamma_hat {gamma_hat} vs direct {gamma_direct} (mass {u_mass})"
        );
    }

    #[test]
    fn indicator_full_support_reduces_to_plain_inner() {
        let s = setup(0.04, 4.8);
        let half = s.time.steps() / 2;
        let f = pulse(&s, 0.3);
        let h = pulse(&s, 0.35);
        let kt = half - 5;
        let kt2 = half - 20;
        let t = s.time.time(kt);
        // s close to t: the influence domain swallows the whole support.
        let sval = 0.97 * t;
        let (est, _) =
            indicator_inner(&s.k, &f, &h, kt, kt2, sval, 1e-3, &s.omega, 300).unwrap();
        let plain = s.k.inner_product_at_times(&f, &h, kt, kt2).unwrap();
        assert!(
            (est - plain).norm() <= 0.05 * plain.norm().max(1e-12),
            "full-support indicator {est} vs plain {plain}"
        );
    }

    #[test]
    fn cap_build_1d_geometry() {
        let s = setup(0.02, 4.0);
        let x0 = [1.0, 0.0];
        let r = 0.3;
        let h = s.grid.spacing();
        let cap = cap_build(&x0, &s.omega, r, 0.1).unwrap();
        // Outward normal points from the observation set toward the target.
        assert!((cap.normal[0] + 1.0).abs() < 1e-12);
        assert!((cap.s - 1.0).abs() <= h);
        // The 1D cap is a single interval of length 2 eta around x0.
        let lo = s.grid.coord(*cap.region.nodes().first().unwrap())[0];
        let hi = s.grid.coord(*cap.region.nodes().last().unwrap())[0];
        assert!((hi - lo - 0.2).abs() <= 2.0 * h, "cap [{lo},{hi}]");
        assert!(lo <= 1.0 && 1.0 <= hi);
        assert!((cap.volume - (hi - lo + h)).abs() < 1e-12);
        // Volume grows with eta.
        let cap2 = cap_build(&x0, &s.omega, r, 0.15).unwrap();
        assert!(cap2.volume > cap.volume);
        // x0 in the cap for all eta.
        assert!(cap2.region.contains(s.grid.nearest_node(&x0)));
        // Degenerate eta rejected.
        assert!(cap_build(&x0, &s.omega, r, 0.0).is_err());
        assert!(cap_build(&x0, &s.omega, r, r).is_err());
    }

    #[test]
    fn cost_table_trivial_and_monotone() {
        let s = setup(0.05, 4.0);
        let half = s.time.steps() / 2;
        let kt = half - 4;
        let t = s.time.time(kt);
        let f = pulse(&s, 0.4);
        let sval = 0.6 * t;
        let ctx = ControlContext::new(&s.k, s.omega.clone(), sval, kt).unwrap();

        let uf = field_at(&s, &f, kt);
        let m = influence_region(&s.omega, sval).unwrap();
        let v = uf.restricted(&m);
        let v_l2 = l2_norm(&v, &s.all).unwrap();
        let v_h1 = crate::field::h1_norm(&uf, &m).unwrap();
        let rel_err = |sol: &ControlSolution| -> Result<f64> {
            let ug = field_at(&s, &sol.g, kt);
            let mut d = ug;
            for (dv, vv) in d.values_mut().iter_mut().zip(v.values()) {
                *dv -= vv;
            }
            Ok(l2_norm(&d, &s.all)? / v_h1)
        };
        let eps = [1.5, 0.9, 0.5, 0.35];
        let rows = cost_of_control_estimate(
            &s.k,
            &ctx,
            &f,
            &eps,
            (1e-5, 0.3),
            &rel_err,
            v_h1,
            v_l2,
            200,
        )
        .unwrap();
        // eps >= ||v||_L2 / ||v||_H1 (and in particular eps >= 1): zero control.
        assert_eq!(rows[0].cost, 0.0);
        assert!(!rows[0].unreachable);
        // Cost is nondecreasing as eps decreases, over reachable rows.
        let reachable: Vec<&CostRow> = rows.iter().filter(|r| !r.unreachable).collect();
        for w in reachable.windows(2) {
            assert!(
                w[1].cost >= w[0].cost - 1e-12,
                "cost not monotone: {rows:?}"
            );
        }
    }
}
