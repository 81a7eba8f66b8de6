//! Accuracy and final pairwise spread as the terminal time grows.
use kuramoto_gnn::dynamics::DynamicsKind;
use kuramoto_gnn::graph::{generate_synthetic, SyntheticKind};
use kuramoto_gnn::model::ModelConfig;
use kuramoto_gnn::train::{run_seeded, TrainConfig};

fn main() -> kuramoto_gnn::Result<()> {
    let g = generate_synthetic(SyntheticKind::ErdosRenyi(0.08), 120, 8, 5)?;
    for dynamics in [DynamicsKind::Kuramoto, DynamicsKind::GrandLinear] {
        for t_end in [1.0, 4.0, 16.0] {
            let cfg = TrainConfig {
                max_epochs: 60,
                patience: 20,
                per_class: 5,
                val_size: 30,
                model: ModelConfig {
                    dynamics,
                    t_end,
                    hidden: 8,
                    heads: 1,
                    d_k: 4,
                    ..ModelConfig::default()
                },
                ..TrainConfig::default()
            };
            let s = run_seeded(&g, &cfg, 2, 1, 1)?;
            let spread: f64 = s
                .runs
                .iter()
                .filter_map(|r| r.result.as_ref())
                .map(|r| r.sync.max_pairwise)
                .sum::<f64>()
                / s.runs.len() as f64;
            println!(
                "{dynamics:<13} T {t_end:>4}: acc {:.3} ± {:.3}, max pairwise {spread:.3}",
                s.mean_acc, s.std_acc
            );
        }
    }
    Ok(())
}
