//! Analytic gradients of the unrolled model against central differences.
use kuramoto_gnn::dynamics::DynamicsKind;
use kuramoto_gnn::graph::{generate_synthetic, make_split, SyntheticKind};
use kuramoto_gnn::model::{finite_difference_check, ModelConfig, ModelParams, PreparedGraph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> kuramoto_gnn::Result<()> {
    let g = generate_synthetic(SyntheticKind::ErdosRenyi(0.4), 8, 3, 3)?;
    let split = make_split(&g, 1, 2, 3)?;
    let prepared = PreparedGraph::new(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    for dynamics in [
        DynamicsKind::Kuramoto,
        DynamicsKind::GrandLinear,
        DynamicsKind::GrandModified,
    ] {
        let config = ModelConfig {
            dynamics,
            t_end: 1.0,
            hidden: 3,
            heads: 2,
            d_k: 2,
            ..ModelConfig::default()
        };
        let p = ModelParams::init(config, g.feature_dim(), g.num_classes(), &mut rng)?;
        let report = finite_difference_check(&prepared, &p, &split.train_indices(), None, 1e-5)?;
        println!(
            "{dynamics}: {} entries, max rel err {:.2e} at {:?}",
            report.checked, report.max_rel_err, report.worst
        );
    }
    Ok(())
}
