//! Timing probes for the box solver at acceptance-scale resolutions.
//! Ignored by default; run with `cargo test --test solver_scaling -- --ignored --nocapture`.

use shomog::coeff::{make_coefficient, FamilySpec};
use shomog::stokes_bvp::{solve_stokes, BoxDomain, CoeffSource, StokesProblem, VectorData};
use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

fn trig_problem(d: usize, n: usize, eps: f64) -> StokesProblem {
    let dom = BoxDomain::unit(d, n);
    let field = Arc::new(make_coefficient(&FamilySpec::trig(0.5), d).unwrap());
    let mut prob = StokesProblem::new(dom, CoeffSource::Oscillating { field, eps });
    prob.body_force = VectorData::new(|p, out| {
        out[0] = (2.0 * PI * p[1]).sin();
        out[1] = (2.0 * PI * p[0]).cos();
        out[2] = 0.5;
    });
    prob
}

#[test]
#[ignore]
fn timing_2d() {
    for n in [128usize, 256, 512] {
        let prob = trig_problem(2, n, 8.0 / n as f64);
        let t0 = Instant::now();
        let sol = solve_stokes(&prob, 1e-9).unwrap();
        println!(
            "d=2 n={n}: {:.2}s, {} iterations ({}), residual {:.2e}",
            t0.elapsed().as_secs_f64(),
            sol.stats.iterations,
            sol.stats.method,
            sol.stats.residual
        );
    }
}

#[test]
#[ignore]
fn timing_3d() {
    for n in [32usize, 48] {
        let prob = trig_problem(3, n, 0.125);
        let t0 = Instant::now();
        let sol = solve_stokes(&prob, 1e-9).unwrap();
        println!(
            "d=3 n={n}: {:.2}s, {} iterations ({}), residual {:.2e}",
            t0.elapsed().as_secs_f64(),
            sol.stats.iterations,
            sol.stats.method,
            sol.stats.residual
        );
    }
}
