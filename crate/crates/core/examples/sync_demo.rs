//! Identical frequencies drive a random graph of oscillators to phase
//! synchronization; perturbed frequencies keep the phases apart.
use kuramoto_gnn::coupling::adjacency_coupling;
use kuramoto_gnn::dynamics::{energy_u, Dynamics, DynamicsSpec};
use kuramoto_gnn::graph::{generate_synthetic, SyntheticKind};
use kuramoto_gnn::integrate::{integrate, SolverConfig};
use kuramoto_gnn::syncdiag::{fit_decay_rate, sync_report};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> kuramoto_gnn::Result<()> {
    let g = generate_synthetic(SyntheticKind::ErdosRenyi(0.3), 20, 1, 7)?;
    let a = adjacency_coupling(&g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x0 = Array2::from_shape_simple_fn((20, 1), || rng.random_range(-1.0..1.0));
    let solver = SolverConfig::euler(0.01, 50.0);

    for spread in [0.0, 0.1] {
        let omega = Array2::from_shape_simple_fn((20, 1), || 0.3 + spread * rng.random_range(-1.0..1.0));
        let spec = DynamicsSpec::new(Dynamics::Kuramoto { k: 1.0, omega }, a.clone())?;
        let traj = integrate(&x0, |x: &Array2<f64>| spec.rhs(x), &solver, true)?;
        let report = sync_report(traj.final_state(), Some(&spec), Some(&traj))?;
        let u: f64 = energy_u(traj.final_state(), &a).iter().sum();
        println!(
            "spread {spread}: max pairwise {:.3e}, r {:.6}, U {:.3e}, decay rate {:?}",
            report.max_pairwise,
            report.r[0],
            u,
            fit_decay_rate(&traj).ok()
        );
    }
    Ok(())
}
