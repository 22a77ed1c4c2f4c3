use std::sync::Arc;

use bclab_core::connect::ConnectingOperator;
use bclab_core::control::{solve_control, ControlContext};
use bclab_core::field::{boundary_norm, l2_inner, l2_norm, BoundaryData};
use bclab_core::grid::TimeGrid;
use bclab_core::lambda::SourceToSolutionMap;
use bclab_core::potential::Potential;
use bclab_core::region::{GeomSpec, Region, RegionKind};
use bclab_core::solver::{padded_box, solve_forward, Source, StorePolicy};
use num_complex::Complex64;

fn main() {
    let h = 0.04;
    let horizon = 4.0;
    let omega = GeomSpec::Box { lo: [2.0, 0.0], hi: [3.0, 0.0] };
    let target = GeomSpec::Box { lo: [0.5, 0.0], hi: [1.5, 0.0] };
    let time = Arc::new(TimeGrid::from_cfl(horizon, h, 0.8, 1).unwrap());
    let grid = Arc::new(padded_box(&target, &omega, &time, h, 1).unwrap());
    let omega_r = Arc::new(Region::from_geom(grid.clone(), RegionKind::Omega, &omega).unwrap());
    let all = Arc::new(
        Region::from_mask(grid.clone(), RegionKind::Influence, vec![true; grid.len()]).unwrap(),
    );
    let q = Arc::new(Potential::zero(grid.clone()));
    let map = Arc::new(
        SourceToSolutionMap::new(q.clone(), omega_r.clone(), grid.clone(), time.clone()).unwrap(),
    );
    let k = ConnectingOperator::new(map).unwrap();

    let nt = time.steps();
    let half = nt / 2;
    let kt = half - 5;
    let k1 = ((nt as f64) * 0.45) as usize;
    let t1 = time.time(k1);
    let f = BoundaryData::from_fn(omega_r.clone(), time.clone(), (0, k1), move |t, x| {
        let env = (std::f64::consts::PI * t / t1).sin().powi(2);
        let sp = (-((x[0] - 2.35_f64) / 0.12).powi(2) / 2.0).exp()
            * ((x[0] - 2.0) * std::f64::consts::PI).sin();
        Complex64::new(env * sp, 0.0)
    })
    .unwrap();

    let field = |src: &BoundaryData| {
        solve_forward(&q, &Source::Boundary(src), &grid, &time, &StorePolicy::Steps(vec![kt]))
            .unwrap()
            .snapshot(kt)
            .unwrap()
            .clone()
    };
    let uf = field(&f);
    let ff = l2_inner(&uf, &uf, &all).unwrap();
    println!("f_norm {:.4e}, (uf,uf) {:.6e}", boundary_norm(&f), ff.re);

    let ctx = ControlContext::new(&k, omega_r.clone(), 0.9, kt).unwrap();
    for alpha in [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4] {
        let sol = solve_control(&k, &ctx, &f, alpha, 400).unwrap();
        let ug = field(&sol.g);
        let gg = l2_inner(&ug, &ug, &all).unwrap();
        let p_gg = k.inner_product_at_times(&sol.g, &sol.g, kt, kt).unwrap();
        let mut d = ug.clone();
        for (dv, u) in d.values_mut().iter_mut().zip(uf.values()) {
            *dv -= u;
        }
        let a_direct = l2_norm(&d, &all).unwrap().powi(2);
        println!(
            "alpha {alpha:.0e}: iters {:3} |g| {:.3e} A_data {:.4e} A_dir {:.4e} (ug,ug) data {:.4e} dir {:.4e} relerr {:.2e}",
            sol.cg.iters,
            sol.g_norm,
            sol.a_value,
            a_direct,
            p_gg.re,
            gg.re,
            (p_gg.re - gg.re).abs() / gg.re
        );
    }
}
