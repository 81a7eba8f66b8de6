use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::unroll::{cross_entropy, forward_with, loss_and_grad, PreparedGraph};
use super::ModelParams;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// Number of parameter entries compared.
    pub checked: usize,
    /// Largest `|analytic − fd| / (1e-8 + |fd|)`.
    pub max_rel_err: f64,
    /// Block name and flat index of the worst entry.
    pub worst: (String, usize),
    pub worst_analytic: f64,
    pub worst_fd: f64,
}

/// Compares every analytic gradient entry of the masked cross-entropy with
/// a central difference of step `h`.
pub fn finite_difference_check(
    prepared: &PreparedGraph<'_>,
    p: &ModelParams,
    mask: &[usize],
    dropout_mask: Option<&Array2<f64>>,
    h: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_grad(prepared, p, mask, dropout_mask)?;
    let labels = prepared.graph.labels();
    let loss_at = |q: &ModelParams| -> Result<f64> {
        let tape = forward_with(prepared, q, dropout_mask, false)?;
        cross_entropy(tape.logits(), labels, mask)
    };
    let mut grads = grads;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .blocks_mut()
        .into_iter()
        .map(|(name, b)| (name, b.to_vec()))
        .collect();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: (String::new(), 0),
        worst_analytic: 0.0,
        worst_fd: 0.0,
    };
    let mut probe = p.clone();
    for (block, (name, values)) in analytic.iter().enumerate() {
        for (idx, &a) in values.iter().enumerate() {
            let original = probe.blocks_mut()[block].1[idx];
            probe.blocks_mut()[block].1[idx] = original + h;
            let up = loss_at(&probe)?;
            probe.blocks_mut()[block].1[idx] = original - h;
            let down = loss_at(&probe)?;
            probe.blocks_mut()[block].1[idx] = original;
            let fd = (up - down) / (2.0 * h);
            let rel = (a - fd).abs() / (1e-8 + fd.abs());
            report.checked += 1;
            if rel > report.max_rel_err || report.worst.0.is_empty() {
                report.max_rel_err = rel.max(report.max_rel_err);
                report.worst = (name.clone(), idx);
                report.worst_analytic = a;
                report.worst_fd = fd;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DynamicsKind;
    use crate::graph::{generate_synthetic, SyntheticKind};
    use crate::model::{CouplingMode, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check(cfg: ModelConfig, dropout: bool) -> GradCheckReport {
        let g = generate_synthetic(SyntheticKind::ErdosRenyi(0.5), 6, 4, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ModelParams::init(cfg, 4, 2, &mut rng).unwrap();
        let mask = dropout.then(|| {
            Array2::from_shape_simple_fn(
                (6, cfg.hidden),
                || if rng.random::<f64>() < 0.3 { 0.0 } else { 1.0 / 0.7 },
            )
        });
        let prepared = PreparedGraph::new(&g);
        finite_difference_check(&prepared, &p, &[0, 1, 2, 3], mask.as_ref(), 1e-5).unwrap()
    }

    #[test]
    fn every_dynamics_passes() {
        let base = ModelConfig {
            hidden: 3,
            heads: 2,
            d_k: 2,
            t_end: 1.0,
            dt: 0.1,
            ..ModelConfig::default()
        };
        let cases = [
            base,
            ModelConfig { k: 2.5, ..base },
            ModelConfig {
                dynamics: DynamicsKind::KuramotoIdentical,
                ..base
            },
            ModelConfig {
                dynamics: DynamicsKind::GrandLinear,
                ..base
            },
            ModelConfig {
                dynamics: DynamicsKind::GrandModified,
                ..base
            },
            ModelConfig {
                tied_omega: false,
                ..base
            },
            ModelConfig {
                coupling: CouplingMode::Uniform,
                ..base
            },
            ModelConfig {
                checkpoint_stride: Some(3),
                ..base
            },
        ];
        for (i, cfg) in cases.into_iter().enumerate() {
            let r = check(cfg, i % 2 == 0);
            assert!(r.max_rel_err <= 1e-4, "case {i}: {r:?}");
        }
    }
}
