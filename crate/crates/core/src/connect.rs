//! Data-only recovery of interior inner products of wave snapshots.
//!
//! With `R` the time reversal and `J` the window integration
//! `Jf(s) = 1/2 int_s^{T-s} f`, the composite `K = J Lambda - R Lambda R J`
//! pairs two sources into the inner product of their waves at time `T/2`:
//! `(u^f(T/2), u^h(T/2)) = (f, K h)` over `(0,T/2) x omega`. Everything
//! downstream (controls, indicators, point values) reduces to this pairing
//! and exact time translations of it.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{BcError, Result};
use crate::field::{boundary_inner, BoundaryData};
use crate::lambda::{apply_r, translate_steps, SourceToSolutionMap};

/// The data-only pairing operator for one measurement map, at an effective
/// horizon `T'` (an even number of steps at or below the measurement
/// horizon; translated instances realize evaluation times other than
/// `T'/2`).
pub struct ConnectingOperator {
    map: Arc<SourceToSolutionMap>,
    horizon_steps: usize,
}

impl ConnectingOperator {
    pub fn new(map: Arc<SourceToSolutionMap>) -> Result<Self> {
        let nt = map.time().steps();
        Self::with_horizon_steps(map, nt)
    }

    pub fn with_horizon_steps(
        map: Arc<SourceToSolutionMap>,
        horizon_steps: usize,
    ) -> Result<Self> {
        if horizon_steps % 2 != 0 || horizon_steps == 0 || horizon_steps > map.time().steps() {
            return Err(BcError::WindowOffGrid(format!(
                "effective horizon of {horizon_steps} steps must be even and within the time grid"
            )));
        }
        Ok(Self { map, horizon_steps })
    }

    pub fn map(&self) -> &Arc<SourceToSolutionMap> {
        &self.map
    }

    pub fn horizon_steps(&self) -> usize {
        self.horizon_steps
    }

    /// Half-horizon step (the evaluation time of the untranslated pairing).
    pub fn half_step(&self) -> usize {
        self.horizon_steps / 2
    }

    /// Apply `K = J Lambda - R Lambda R J`; two measurement-map
    /// applications. The output is supported in `(0, T/2)`.
    pub fn apply_k(&self, h: &BoundaryData) -> Result<BoundaryData> {
        let lh = self.map.apply(h)?;
        let mut out = apply_j(&lh);
        let jh = apply_j(h);
        let lrjh = self.map.apply(&apply_r(&jh))?;
        let second = apply_r(&lrjh);
        out.axpy(Complex64::new(-1.0, 0.0), &second);
        out.tighten_window();
        Ok(out)
    }

    /// The pairing `(u^f(T/2), u^h(T/2)) = (f, K h)_{(0,T/2) x omega}`,
    /// computed from measurement data alone.
    pub fn blago_inner(&self, f: &BoundaryData, h: &BoundaryData) -> Result<Complex64> {
        let kh = self.apply_k(h)?;
        boundary_inner(f, &kh, (0, self.map.time().steps() / 2))
    }

    /// `K` realized at an arbitrary evaluation step `kt <= T'/2` through
    /// exact source translation: the quadratic form of
    /// `h |-> (g |-> (u^g(t), u^h(t)))` for window-supported sources.
    pub fn apply_k_at(&self, h: &BoundaryData, kt: usize) -> Result<BoundaryData> {
        let half = self.half_step();
        if kt > half {
            return Err(BcError::WindowOffGrid(format!(
                "evaluation step {kt} beyond half horizon {half}"
            )));
        }
        let shift = (half - kt) as i64;
        // Causality: the wave at step kt only sees the source before kt.
        let h_t = h.restricted_to((0, kt));
        let sh = translate_steps(&h_t, shift)?;
        let ksh = self.apply_k(&sh)?;
        // Back-shift; content pushed below step 0 cannot pair against
        // window-supported data and is discarded.
        let ksh_tail = ksh.restricted_to((half - kt, self.map.time().steps()));
        translate_steps(&ksh_tail, -shift)
    }

    /// `(u^f(t1), u^h(t2))` for grid times below the half horizon, by
    /// translating both sources so their evaluation times land on `T'/2`.
    pub fn inner_product_at_times(
        &self,
        f: &BoundaryData,
        h: &BoundaryData,
        kt1: usize,
        kt2: usize,
    ) -> Result<Complex64> {
        let half = self.half_step();
        if kt1 > half || kt2 > half {
            return Err(BcError::WindowOffGrid(format!(
                "evaluation steps ({kt1},{kt2}) beyond half horizon {half}"
            )));
        }
        let f_t = f.restricted_to((0, kt1));
        let h_t = h.restricted_to((0, kt2));
        let sf = translate_steps(&f_t, (half - kt1) as i64)?;
        let sh = translate_steps(&h_t, (half - kt2) as i64)?;
        let kh = self.apply_k(&sh)?;
        boundary_inner(&sf, &kh, (0, self.map.time().steps() / 2))
    }
}

/// `J f(s) = 1/2 int_s^{T-s} f(s') ds'` for `s < T/2`, zero beyond (all
/// pairings happen on `(0, T/2)`). Trapezoid in time, per node.
pub fn apply_j(f: &BoundaryData) -> BoundaryData {
    let nt = f.time().steps();
    let nw = f.region().len();
    let dt = f.time().dt();
    let mut out = BoundaryData::zeros(f.region().clone(), f.time().clone());
    // Running trapezoid of f over [k, nt-k], updated incrementally:
    // moving k -> k+1 removes the two edge trapezoids.
    let mut acc: Vec<Complex64> = vec![Complex64::ZERO; nw];
    for k in 0..nt {
        let lo = f.slice(k);
        let hi = f.slice(k + 1);
        for j in 0..nw {
            acc[j] += (lo[j] + hi[j]) * 0.5 * dt;
        }
    }
    let half = nt / 2;
    for k in 0..half {
        {
            let row = out.slice_mut(k);
            for j in 0..nw {
                row[j] = acc[j] * 0.5;
            }
        }
        // Shrink [k, nt-k] to [k+1, nt-k-1].
        let lo0 = f.slice(k).to_vec();
        let lo1 = f.slice(k + 1).to_vec();
        let hi0 = f.slice(nt - k).to_vec();
        let hi1 = f.slice(nt - k - 1).to_vec();
        {
            let acc = &mut acc;
            for j in 0..nw {
                acc[j] -= (lo0[j] + lo1[j]) * 0.5 * dt;
                acc[j] -= (hi0[j] + hi1[j]) * 0.5 * dt;
            }
        }
    }
    out.set_window((0, half.saturating_sub(1)));
    out
}

/// The correlation diagnostic: `W(t,s) = (u^f(t), u^h(s))` recovered from
/// data by quadrature of the explicit line-wave solution formula
/// `W(t,s) = 1/2 int_0^t int_{s-r}^{s+r} F(t-r,y) dy dr` on the wedge
/// `s >= t`, extended to `s < t` by conjugate symmetry (where the plain
/// formula would be contaminated by boundary reflections).
#[derive(Debug, Clone)]
pub struct CorrelationField {
    pub t_steps: Vec<usize>,
    pub s_steps: Vec<usize>,
    /// Row-major over `t_steps x s_steps`.
    pub values: Vec<Complex64>,
}

impl CorrelationField {
    pub fn at(&self, kt: usize, ks: usize) -> Option<Complex64> {
        let i = self.t_steps.iter().position(|&k| k == kt)?;
        let j = self.s_steps.iter().position(|&k| k == ks)?;
        Some(self.values[i * self.s_steps.len() + j])
    }
}

/// The data-side source term `F(t,s) = (f(t), (Lh)(s)) - ((Lf)(t), h(s))`
/// over the full time square (spatial inner products on the observation
/// region).
pub fn correlation_source(
    f: &BoundaryData,
    h: &BoundaryData,
    lf: &BoundaryData,
    lh: &BoundaryData,
) -> Vec<Complex64> {
    let nt = f.time().steps();
    let nw = f.region().len();
    let w = f.region().weights();
    let sp_inner = |a: &[Complex64], b: &[Complex64]| -> Complex64 {
        let mut acc = Complex64::ZERO;
        for j in 0..nw {
            acc += a[j] * b[j].conj() * w[j];
        }
        acc
    };
    let mut fmat = vec![Complex64::ZERO; (nt + 1) * (nt + 1)];
    for kt in 0..=nt {
        let frow = f.slice(kt);
        let lfrow = lf.slice(kt);
        for ks in 0..=nt {
            fmat[kt * (nt + 1) + ks] = sp_inner(frow, lh.slice(ks)) - sp_inner(lfrow, h.slice(ks));
        }
    }
    fmat
}

/// Evaluate the correlation field on a subsampled step lattice.
pub fn correlation_solve(
    f: &BoundaryData,
    h: &BoundaryData,
    lf: &BoundaryData,
    lh: &BoundaryData,
    stride: usize,
) -> Result<CorrelationField> {
    if !f.compatible(h) || !f.compatible(lf) || !f.compatible(lh) {
        return Err(BcError::GridMismatch("correlation inputs incompatible".into()));
    }
    let nt = f.time().steps();
    let dt = f.time().dt();
    let fmat = correlation_source(f, h, lf, lh);
    let n1 = nt + 1;

    // Prefix integrals of F along its second argument (trapezoid), flat
    // beyond the horizon (zero extension).
    let mut prefix = vec![Complex64::ZERO; n1 * n1];
    for kt in 0..=nt {
        let mut acc = Complex64::ZERO;
        for ks in 1..=nt {
            acc += (fmat[kt * n1 + ks - 1] + fmat[kt * n1 + ks]) * 0.5 * dt;
            prefix[kt * n1 + ks] = acc;
        }
    }
    let seg = |kt: usize, lo: i64, hi: i64| -> Complex64 {
        let lo = lo.clamp(0, nt as i64) as usize;
        let hi = hi.clamp(0, nt as i64) as usize;
        prefix[kt * n1 + hi] - prefix[kt * n1 + lo]
    };
    // Plain wedge evaluation (valid for s >= t).
    let w0 = |kt: usize, ks: usize| -> Complex64 {
        let mut acc = Complex64::ZERO;
        for r in 0..=kt {
            let inner = seg(kt - r, ks as i64 - r as i64, ks as i64 + r as i64);
            let wr = if r == 0 || r == kt { 0.5 } else { 1.0 };
            acc += inner * wr;
        }
        acc * 0.5 * dt
    };

    let steps: Vec<usize> = (0..=nt).step_by(stride.max(1)).collect();
    let mut values = Vec::with_capacity(steps.len() * steps.len());
    for &kt in &steps {
        for &ks in &steps {
            let v = if ks >= kt { w0(kt, ks) } else { w0(ks, kt).conj() };
            values.push(v);
        }
    }
    Ok(CorrelationField { t_steps: steps.clone(), s_steps: steps, values })
}
