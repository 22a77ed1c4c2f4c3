use std::sync::Arc;

use bclab_core::field::{boundary_inner_full, boundary_norm, BoundaryData};
use bclab_core::grid::TimeGrid;
use bclab_core::lambda::SourceToSolutionMap;
use bclab_core::potential::{GaussianBump, Potential};
use bclab_core::region::{GeomSpec, Region, RegionKind};
use bclab_core::solver::padded_box;
use num_complex::Complex64;

fn main() {
    for &edge_window in &[false, true] {
        println!("--- spatially windowed to vanish at boundary: {edge_window}");
        for &h in &[0.04f64, 0.02, 0.01] {
            let omega = GeomSpec::Box { lo: [2.0, 0.0], hi: [3.0, 0.0] };
            let target = GeomSpec::Box { lo: [-1.0, 0.0], hi: [0.0, 0.0] };
            let time = Arc::new(TimeGrid::from_cfl(2.0, h, 0.8, 1).unwrap());
            let grid = Arc::new(padded_box(&target, &omega, &time, h, 1).unwrap());
            let reg =
                Arc::new(Region::from_geom(grid.clone(), RegionKind::Omega, &omega).unwrap());
            let q = Arc::new(
                Potential::from_bumps(
                    grid.clone(),
                    vec![GaussianBump { center: [1.5, 0.0], width: 0.2, amplitude: 0.8 }],
                    None,
                )
                .unwrap(),
            );
            let map =
                SourceToSolutionMap::new(q, reg.clone(), grid.clone(), time.clone()).unwrap();
            let horizon = time.horizon();
            let nt = time.steps();
            let mk = |a: f64, b: f64, c: f64| {
                BoundaryData::from_fn(reg.clone(), time.clone(), (0, nt), move |t, x| {
                    let env = (std::f64::consts::PI * t / horizon).sin().powi(2);
                    let sp = if edge_window {
                        ((x[0] - 2.0) * std::f64::consts::PI).sin()
                    } else {
                        1.0
                    };
                    Complex64::new(
                        a * env * (b * t).cos() * sp * (-((x[0] - 2.5) / c * 2.0).powi(2)).exp(),
                        0.0,
                    )
                })
                .unwrap()
            };
            let f = mk(1.0, 2.0, 0.8);
            let g = mk(0.7, 3.0, 0.6);
            let lf = map.apply(&f).unwrap();
            let lsg = map.apply_adjoint(&g).unwrap();
            let lhs = boundary_inner_full(&lf, &g).unwrap();
            let rhs = boundary_inner_full(&f, &lsg).unwrap();
            let rel = (lhs - rhs).norm() / (boundary_norm(&f) * boundary_norm(&g));
            println!("h = {h}: residual = {rel:.4e}");
        }
    }
}
