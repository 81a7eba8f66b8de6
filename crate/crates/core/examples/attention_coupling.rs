//! Multi-head attention coupling on a small random graph.
use kuramoto_gnn::coupling::{compute_attention, row_stochastic_check, AttentionParams, LogitScale};
use kuramoto_gnn::graph::{generate_synthetic, SyntheticKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> kuramoto_gnn::Result<()> {
    let g = generate_synthetic(SyntheticKind::ErdosRenyi(0.3), 8, 4, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = AttentionParams::init(2, 4, g.feature_dim(), LogitScale::Dk, &mut rng);
    let a = compute_attention(g.features(), &params, &g)?;

    println!(
        "nnz {} (edges {} + self loops), row stochastic: {}",
        a.nnz(),
        g.num_edges(),
        row_stochastic_check(&a, 1e-12)
    );
    a.write_csv(std::io::stdout().lock()).expect("write to stdout");
    Ok(())
}
