//! Fixed-step and adaptive solvers on x' = -x.
use kuramoto_gnn::integrate::{integrate, SolverConfig};
use ndarray::{array, Array2};

fn main() -> kuramoto_gnn::Result<()> {
    let x0 = array![[1.0]];
    let exact = (-1.0f64).exp();
    let rhs = |x: &Array2<f64>| Ok(-x);

    for dt in [0.1, 0.05, 0.025] {
        let e = integrate(&x0, rhs, &SolverConfig::euler(dt, 1.0), false)?;
        let r = integrate(&x0, rhs, &SolverConfig::rk4(dt, 1.0), false)?;
        println!(
            "dt {dt:<6} euler err {:.3e}  rk4 err {:.3e}",
            (e.final_state()[[0, 0]] - exact).abs(),
            (r.final_state()[[0, 0]] - exact).abs()
        );
    }
    for tol in [1e-4, 1e-6, 1e-8] {
        let d = integrate(&x0, rhs, &SolverConfig::dopri5(tol, tol, 1.0), false)?;
        println!(
            "dopri5 tol {tol:.0e}: err {:.3e}, {}",
            (d.final_state()[[0, 0]] - exact).abs(),
            d.stats_json()
        );
    }
    Ok(())
}
