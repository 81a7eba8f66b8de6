//! Gradient of the toy unrolled diffusion against its analytic bound, and
//! the gradient norm as depth grows.
use kuramoto_gnn::model::{gradient_bound_check, vanishing_gradient_probe, ToyInstance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> kuramoto_gnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [2, 4, 8] {
        for steps in [10, 100, 1000] {
            let inst = ToyInstance::random(n, 5, steps, 0.01, &mut rng);
            let b = gradient_bound_check(&inst)?;
            println!(
                "n {n} M {steps:>4}: |dJ/dW| {:.4e} <= {:.4e} {}",
                b.actual, b.bound, b.holds
            );
        }
    }
    let inst = ToyInstance::random(4, 5, 10, 0.01, &mut rng);
    let probe = vanishing_gradient_probe(&inst, &[10, 50, 100, 500, 1000])?;
    println!("norms {:?}\nrate per layer {:.3e}", probe.norms, probe.rate);
    Ok(())
}
