//! Node classifier: affine encoder, ODE propagation with frozen attention
//! coupling, linear decoder, and exact reverse-mode gradients through the
//! Euler unroll.

mod gradcheck;
mod toy;
mod unroll;

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::{AttentionParams, CouplingMatrix, LogitScale};
use crate::dynamics::DynamicsKind;
use crate::error::{Error, Result};
use crate::graph::Graph;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use toy::{
    gradient_bound_check, toy_gradient, toy_unroll, vanishing_gradient_probe, BoundCheck, ToyInstance, VanishingProbe,
};
pub use unroll::{
    accuracy, backward, cross_entropy, cross_entropy_grad, encode, forward, forward_with, loss_and_grad, softmax_rows,
    LossReport, PreparedGraph, SparseRows, UnrollTape,
};

/// How the coupling matrix is obtained from the encoded state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    /// Multi-head softmax attention over edges and self-loops.
    #[default]
    Attention,
    /// Uniform weights over edges and self-loops; no attention parameters.
    Uniform,
}

/// Architecture and integration settings. Nothing in here is trained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dynamics: DynamicsKind,
    /// Coupling strength K.
    pub k: f64,
    /// Terminal time T.
    pub t_end: f64,
    /// Euler step used for training.
    pub dt: f64,
    /// Hidden width d.
    pub hidden: usize,
    pub heads: usize,
    pub d_k: usize,
    pub logit_scale: LogitScale,
    pub coupling: CouplingMode,
    /// When false, natural frequencies come from a second encoder.
    pub tied_omega: bool,
    /// Initial source weight of the modified diffusion; 0 removes X(0).
    pub beta_init: f64,
    pub beta_trainable: bool,
    /// Keep every `stride`-th state during the unroll and recompute the rest
    /// in the backward pass. `None` picks `ceil(sqrt(M))` once M exceeds 200.
    pub checkpoint_stride: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dynamics: DynamicsKind::Kuramoto,
            k: 1.0,
            t_end: 12.0,
            dt: 0.1,
            hidden: 64,
            heads: 4,
            d_k: 16,
            logit_scale: LogitScale::Dk,
            coupling: CouplingMode::Attention,
            tied_omega: true,
            beta_init: 1.0,
            beta_trainable: true,
            checkpoint_stride: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("T must be >= 0, got {}", self.t_end));
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if matches!(self.dynamics, DynamicsKind::Kuramoto | DynamicsKind::KuramotoIdentical) && !(self.k >= 0.0) {
            return bad(format!("K must be >= 0, got {}", self.k));
        }
        if self.hidden == 0 || self.heads == 0 || self.d_k == 0 {
            return bad("hidden, heads and d_k must be >= 1".into());
        }
        if self.checkpoint_stride == Some(0) {
            return bad("checkpoint stride must be >= 1".into());
        }
        Ok(())
    }

    /// Number of Euler steps; the last one is shortened if `dt` does not
    /// divide T.
    pub fn steps(&self) -> usize {
        if self.t_end == 0.0 {
            0
        } else {
            crate::integrate::fixed_step_count(self.t_end, self.dt)
        }
    }

    pub(crate) fn step_sizes(&self) -> Vec<f64> {
        let m = self.steps();
        (0..m)
            .map(|i| {
                if i + 1 == m {
                    self.t_end - i as f64 * self.dt
                } else {
                    self.dt
                }
            })
            .collect()
    }

    pub(crate) fn stride(&self) -> usize {
        let m = self.steps();
        self.checkpoint_stride
            .unwrap_or(if m > 200 { (m as f64).sqrt().ceil() as usize } else { 1 })
    }
}

/// Trainable parameters plus the configuration they were built for.
///
/// The same type doubles as the gradient container: [`ModelParams::zeros_like`]
/// gives a structure whose blocks line up with [`ModelParams::blocks_mut`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// Encoder weights, d × f.
    pub enc_w: Array2<f64>,
    pub enc_b: Array1<f64>,
    pub attn: AttentionParams,
    /// Decoder weights, c × d.
    pub dec_w: Array2<f64>,
    pub dec_b: Array1<f64>,
    /// Frequency encoder when Ω is untied from X(0).
    pub omega_w: Option<Array2<f64>>,
    pub omega_b: Option<Array1<f64>>,
    /// Modified diffusion: α = sigmoid(alpha_raw).
    pub alpha_raw: f64,
    pub beta: f64,
}

fn uniform_fan_in<R: Rng>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Array2<f64> {
    let b = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-b..b))
}

impl ModelParams {
    /// Fresh parameters for `f` input features and `c` classes.
    pub fn init<R: Rng>(config: ModelConfig, f: usize, c: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.hidden;
        let enc_w = uniform_fan_in(d, f, f, rng);
        let enc_b = uniform_fan_in(1, d, f, rng).into_shape_with_order(d).expect("1×d");
        let attn = match config.coupling {
            CouplingMode::Attention => AttentionParams::init(config.heads, config.d_k, d, config.logit_scale, rng),
            CouplingMode::Uniform => AttentionParams {
                w_k: Vec::new(),
                w_q: Vec::new(),
                scale: config.logit_scale,
            },
        };
        let (omega_w, omega_b) = if !config.tied_omega && config.dynamics == DynamicsKind::Kuramoto {
            let w = uniform_fan_in(d, f, f, rng);
            let b = uniform_fan_in(1, d, f, rng).into_shape_with_order(d).expect("1×d");
            (Some(w), Some(b))
        } else {
            (None, None)
        };
        let dec_w = uniform_fan_in(c, d, d, rng);
        let dec_b = uniform_fan_in(1, c, d, rng).into_shape_with_order(c).expect("1×c");
        Ok(Self {
            config,
            enc_w,
            enc_b,
            attn,
            dec_w,
            dec_b,
            omega_w,
            omega_b,
            alpha_raw: 0.0,
            beta: config.beta_init,
        })
    }

    pub fn hidden(&self) -> usize {
        self.enc_w.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.enc_w.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.dec_w.nrows()
    }

    /// α of the modified diffusion.
    pub fn alpha(&self) -> f64 {
        1.0 / (1.0 + (-self.alpha_raw).exp())
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let d = self.hidden();
        let f = self.input_dim();
        let dim = |m: String| Err(Error::Dimension(m));
        if self.enc_b.len() != d {
            return dim(format!("enc_b has {} entries, expected {d}", self.enc_b.len()));
        }
        if self.dec_w.ncols() != d || self.dec_b.len() != self.dec_w.nrows() {
            return dim(format!(
                "decoder {:?} does not match hidden width {d}",
                self.dec_w.dim()
            ));
        }
        if self.config.coupling == CouplingMode::Attention {
            self.attn.validate()?;
            if self.attn.input_dim() != d {
                return dim(format!(
                    "attention expects width {}, encoder gives {d}",
                    self.attn.input_dim()
                ));
            }
        }
        match (&self.omega_w, &self.omega_b) {
            (Some(w), Some(b)) if w.dim() != (d, f) || b.len() != d => {
                return dim("frequency encoder shape mismatch".into());
            }
            (Some(_), None) | (None, Some(_)) => return dim("frequency encoder half present".into()),
            _ => {}
        }
        let finite = self
            .enc_w
            .iter()
            .chain(&self.enc_b)
            .chain(&self.dec_w)
            .chain(&self.dec_b)
            .chain(self.attn.w_k.iter().chain(&self.attn.w_q).flatten())
            .chain([&self.alpha_raw, &self.beta])
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Same shapes and configuration, all trainable entries zero.
    pub fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<f64>| Array1::zeros(a.raw_dim());
        Self {
            config: self.config,
            enc_w: z2(&self.enc_w),
            enc_b: z1(&self.enc_b),
            attn: AttentionParams {
                w_k: self.attn.w_k.iter().map(z2).collect(),
                w_q: self.attn.w_q.iter().map(z2).collect(),
                scale: self.attn.scale,
            },
            dec_w: z2(&self.dec_w),
            dec_b: z1(&self.dec_b),
            omega_w: self.omega_w.as_ref().map(z2),
            omega_b: self.omega_b.as_ref().map(z1),
            alpha_raw: 0.0,
            beta: 0.0,
        }
    }

    /// Named mutable views of every trainable block, in a fixed order.
    pub fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let cfg = self.config;
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        out.push(("enc_w".into(), self.enc_w.as_slice_mut().expect("standard layout")));
        out.push(("enc_b".into(), self.enc_b.as_slice_mut().expect("contiguous")));
        if cfg.coupling == CouplingMode::Attention {
            for (l, w) in self.attn.w_k.iter_mut().enumerate() {
                out.push((format!("attn.w_k[{l}]"), w.as_slice_mut().expect("standard layout")));
            }
            for (l, w) in self.attn.w_q.iter_mut().enumerate() {
                out.push((format!("attn.w_q[{l}]"), w.as_slice_mut().expect("standard layout")));
            }
        }
        out.push(("dec_w".into(), self.dec_w.as_slice_mut().expect("standard layout")));
        out.push(("dec_b".into(), self.dec_b.as_slice_mut().expect("contiguous")));
        if let (Some(w), Some(b)) = (self.omega_w.as_mut(), self.omega_b.as_mut()) {
            out.push(("omega_w".into(), w.as_slice_mut().expect("standard layout")));
            out.push(("omega_b".into(), b.as_slice_mut().expect("contiguous")));
        }
        if cfg.dynamics == DynamicsKind::GrandModified {
            out.push(("alpha_raw".into(), std::slice::from_mut(&mut self.alpha_raw)));
            if cfg.beta_trainable {
                out.push(("beta".into(), std::slice::from_mut(&mut self.beta)));
            }
        }
        out
    }

    /// All trainable entries concatenated in [`ModelParams::blocks_mut`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut copy = self.clone();
        copy.blocks_mut().into_iter().flat_map(|(_, b)| b.to_vec()).collect()
    }

    /// Inverse of [`ModelParams::flatten`].
    pub fn assign(&mut self, values: &[f64]) -> Result<()> {
        let total: usize = self.blocks_mut().iter().map(|(_, b)| b.len()).sum();
        if total != values.len() {
            return Err(Error::Dimension(format!(
                "{} values for {total} parameters",
                values.len()
            )));
        }
        let mut at = 0;
        for (_, b) in self.blocks_mut() {
            b.copy_from_slice(&values[at..at + b.len()]);
            at += b.len();
        }
        Ok(())
    }

    pub fn num_trainable(&self) -> usize {
        self.flatten().len()
    }

    /// Writes the checkpoint as JSON. Arrays are stored as
    /// `{"v": 1, "dim": [rows, cols], "data": [...]}` in row-major order.
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Self = serde_json::from_str(&text)?;
        p.validate()?;
        Ok(p)
    }
}

/// Coupling used by the model for a prepared graph, without gradients.
pub fn model_coupling(g: &Graph, p: &ModelParams) -> Result<CouplingMatrix> {
    let prepared = PreparedGraph::new(g);
    let tape = forward_with(&prepared, p, None, false)?;
    Ok(tape.coupling().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flatten_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = ModelConfig {
            hidden: 3,
            heads: 2,
            d_k: 2,
            dynamics: DynamicsKind::GrandModified,
            ..ModelConfig::default()
        };
        let p = ModelParams::init(cfg, 5, 2, &mut rng).unwrap();
        let flat = p.flatten();
        assert_eq!(flat.len(), 15 + 3 + 2 * 2 * 6 + 6 + 2 + 2);
        let mut q = p.zeros_like();
        q.config = p.config;
        q.assign(&flat).unwrap();
        assert_eq!(q.flatten(), flat);
        assert!(q.assign(&flat[1..]).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ModelParams::init(
            ModelConfig {
                hidden: 4,
                ..ModelConfig::default()
            },
            6,
            3,
            &mut rng,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        p.save_json(&path).unwrap();
        assert_eq!(ModelParams::load_json(&path).unwrap(), p);
    }

    #[test]
    fn step_sizes_reach_t() {
        let cfg = ModelConfig {
            t_end: 1.05,
            dt: 0.1,
            ..ModelConfig::default()
        };
        let h = cfg.step_sizes();
        assert_eq!(h.len(), 11);
        assert!((h.iter().sum::<f64>() - 1.05).abs() < 1e-12);
        assert_eq!(ModelConfig { t_end: 0.0, ..cfg }.steps(), 0);
        assert_eq!(ModelConfig { t_end: 100.0, ..cfg }.stride(), 32);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(ModelConfig {
            dt: 0.0,
            ..ModelConfig::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            t_end: -1.0,
            ..ModelConfig::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            hidden: 0,
            ..ModelConfig::default()
        }
        .validate()
        .is_err());
    }
}
