//! Adaptive-solver cost of the Kuramoto field against linear diffusion
//! from the same encoded state and attention coupling.
use kuramoto_gnn::experiments::nfe_compare;
use kuramoto_gnn::graph::{generate_synthetic, SyntheticKind};
use kuramoto_gnn::integrate::SolverConfig;
use kuramoto_gnn::model::{ModelConfig, ModelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> kuramoto_gnn::Result<()> {
    let g = generate_synthetic(SyntheticKind::ErdosRenyi(0.05), 300, 16, 2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = ModelParams::init(ModelConfig::default(), g.feature_dim(), g.num_classes(), &mut rng)?;
    for tol in [1e-5, 1e-7] {
        let (kura, diff) = nfe_compare(&g, &p, &SolverConfig::dopri5(tol, tol, 12.0))?;
        let (kura, diff) = (kura?, diff?);
        println!(
            "tol {tol:.0e}: kuramoto nfe {}, grand_linear nfe {}",
            kura.nfe, diff.nfe
        );
    }
    Ok(())
}
