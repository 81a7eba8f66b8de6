//! Train on a graph bundle (default data/cora) for one split.
//!
//!     cargo run --release --example train_cora -- [BUNDLE_DIR] [EPOCHS]
use kuramoto_gnn::graph::{largest_connected_component, load_bundle, make_split};
use kuramoto_gnn::model::ModelConfig;
use kuramoto_gnn::train::{train_node_classifier, TrainConfig};

fn main() -> kuramoto_gnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/cora").into());
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);

    let (g, _) = largest_connected_component(&load_bundle(&dir)?)?;
    let split = make_split(&g, 20, 500, 0)?;
    let cfg = TrainConfig {
        max_epochs: epochs,
        patience: 50,
        model: ModelConfig {
            hidden: 16,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    let (_, r) = train_node_classifier(&g, &split, &cfg)?;
    for e in r.log.iter().step_by(10) {
        println!("epoch {:>3}  loss {:.4}  val {:.3}", e.epoch, e.train_loss, e.val_acc);
    }
    println!(
        "{}: best val {:.3} at epoch {}, test {:.3}, {:.1}s",
        g.name(),
        r.best_val_acc,
        r.best_epoch,
        r.test_acc_at_best_val,
        r.wall_time
    );
    Ok(())
}
