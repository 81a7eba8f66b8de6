//! Write a synthetic graph as a bundle, read it back and take its largest
//! connected component.
use kuramoto_gnn::graph::{generate_synthetic, largest_connected_component, load_bundle, save_bundle, SyntheticKind};

fn main() -> kuramoto_gnn::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "synthetic_bundle".into());
    let g = generate_synthetic(SyntheticKind::ErdosRenyi(0.03), 100, 6, 9)?;
    save_bundle(&g, &dir)?;

    let back = load_bundle(&dir)?;
    let (lcc, kept) = largest_connected_component(&back)?;
    println!(
        "{}: {} nodes, {} edges, {} components; lcc keeps {} nodes (first ids {:?})",
        dir,
        back.num_nodes(),
        back.num_undirected_edges(),
        back.components().len(),
        lcc.num_nodes(),
        &kept[..kept.len().min(5)]
    );
    Ok(())
}
