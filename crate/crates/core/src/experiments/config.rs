use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coupling::LogitScale;
use crate::dynamics::DynamicsKind;
use crate::error::{Error, Result};
use crate::graph::SyntheticKind;
use crate::integrate::{Method, SolverConfig};
use crate::model::{CouplingMode, ModelConfig};
use crate::train::{Optimizer, TrainConfig};

/// Where the graph comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Bundle(PathBuf),
    Synthetic {
        kind: SyntheticKind,
        n: usize,
        f: usize,
        seed: u64,
    },
}

impl DatasetSpec {
    /// `synthetic:KIND[:key=value,...]` with KIND in `ring`, `complete`,
    /// `er`; keys `n`, `f`, `p` (er only), `seed`. Anything else is a path.
    pub fn parse(s: &str) -> Result<Self> {
        let Some(rest) = s.strip_prefix("synthetic:") else {
            return Ok(DatasetSpec::Bundle(PathBuf::from(s)));
        };
        let (kind, params) = rest.split_once(':').unwrap_or((rest, ""));
        let (mut n, mut f, mut p, mut seed) = (20usize, 8usize, 0.3f64, 0u64);
        for kv in params.split(',').filter(|kv| !kv.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("dataset: expected key=value, got {kv:?}")))?;
            let bad = |_| Error::Config(format!("dataset: bad value for {k}: {v:?}"));
            match k {
                "n" => n = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "f" => f = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "seed" => seed = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "p" => p = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                other => return Err(Error::Config(format!("dataset: unknown key {other:?}"))),
            }
        }
        let kind = match kind {
            "ring" => SyntheticKind::Ring,
            "complete" => SyntheticKind::Complete,
            "er" => SyntheticKind::ErdosRenyi(p),
            other => return Err(Error::Config(format!("dataset: unknown synthetic kind {other:?}"))),
        };
        Ok(DatasetSpec::Synthetic { kind, n, f, seed })
    }

    pub fn label(&self) -> String {
        match self {
            DatasetSpec::Bundle(p) => p
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
            DatasetSpec::Synthetic { kind, n, .. } => match kind {
                SyntheticKind::Ring => format!("ring{n}"),
                SyntheticKind::Complete => format!("complete{n}"),
                SyntheticKind::ErdosRenyi(p) => format!("er{n}_p{p}"),
            },
        }
    }
}

/// Propagation variant selected by name. `grand_modified_no_x0` is the
/// modified diffusion with the source term removed (β fixed at 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DynamicsChoice {
    pub kind: DynamicsKind,
    pub without_source: bool,
}

impl DynamicsChoice {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "grand_modified_no_x0" {
            return Ok(Self {
                kind: DynamicsKind::GrandModified,
                without_source: true,
            });
        }
        let kind = s
            .parse::<DynamicsKind>()
            .map_err(|_| Error::Config(format!("dynamics: unknown name {s:?}")))?;
        Ok(Self {
            kind,
            without_source: false,
        })
    }

    pub fn name(&self) -> String {
        if self.without_source {
            "grand_modified_no_x0".into()
        } else {
            self.kind.name().into()
        }
    }

    pub fn apply(&self, model: &mut ModelConfig) {
        model.dynamics = self.kind;
        if self.without_source {
            model.beta_init = 0.0;
            model.beta_trainable = false;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    T,
    K,
    #[serde(rename = "per_class")]
    PerClass,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "T" | "t" => Ok(SweepAxis::T),
            "K" | "k" => Ok(SweepAxis::K),
            "per_class" => Ok(SweepAxis::PerClass),
            other => Err(Error::Config(format!(
                "sweep.axis: unknown axis {other:?} (expected T, K or per_class)"
            ))),
        }
    }
}

/// On-disk configuration. Every field is optional; sections mirror the
/// command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub sync: SyncSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub dataset: Option<String>,
    /// Restrict to the largest connected component (default true).
    pub lcc: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub dynamics: Option<String>,
    #[serde(rename = "K")]
    pub k: Option<f64>,
    #[serde(rename = "T")]
    pub t: Option<f64>,
    pub dt: Option<f64>,
    pub hidden: Option<usize>,
    pub heads: Option<usize>,
    pub d_k: Option<usize>,
    /// `d_k` or `sqrt_d_k`.
    pub logit_scale: Option<String>,
    /// `attention` or `uniform`.
    pub coupling: Option<String>,
    pub tied_omega: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub patience: Option<usize>,
    pub dropout: Option<f64>,
    pub per_class: Option<usize>,
    pub val_size: Option<usize>,
    pub seed: Option<u64>,
    /// `adam` or `sgd`.
    pub optimizer: Option<String>,
    pub momentum: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub method: Option<String>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub max_nfe: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub splits: Option<usize>,
    pub seeds: Option<usize>,
    pub workers: Option<usize>,
    pub out: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: Option<String>,
    pub values: Option<Vec<f64>>,
    /// Dynamics compared by `depth-sweep`.
    pub dynamics: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncSection {
    /// Half-width of the uniform perturbation of the distinct frequencies.
    pub spread: Option<f64>,
    /// Coupling strength for the frequency-synchronization run.
    pub k_strong: Option<f64>,
    /// `metropolis` or `uniform`.
    pub coupling: Option<String>,
    pub record_every: Option<usize>,
}

impl FileConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config sections serialize")
    }
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub lcc: bool,
    pub dynamics: DynamicsChoice,
    pub train: TrainConfig,
    pub solver: SolverConfig,
    pub splits: usize,
    pub seeds: usize,
    pub workers: usize,
    pub out: PathBuf,
    pub sweep_axis: Option<SweepAxis>,
    pub sweep_values: Vec<f64>,
    pub sweep_dynamics: Vec<DynamicsChoice>,
    pub sync_spread: f64,
    pub sync_k_strong: f64,
    pub sync_coupling: String,
    pub sync_record_every: usize,
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("{name}: must be > 0, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn resolve(fc: &FileConfig) -> Result<Self> {
        let dataset = DatasetSpec::parse(
            fc.data
                .dataset
                .as_deref()
                .unwrap_or("synthetic:er:n=60,p=0.1,f=8,seed=0"),
        )?;
        let dynamics = DynamicsChoice::parse(fc.model.dynamics.as_deref().unwrap_or("kuramoto"))?;

        let mut model = ModelConfig::default();
        let m = &fc.model;
        if let Some(k) = m.k {
            model.k = positive("model.K", k)?;
        }
        if let Some(t) = m.t {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("model.T: must be >= 0, got {t}")));
            }
            model.t_end = t;
        }
        if let Some(dt) = m.dt {
            model.dt = positive("model.dt", dt)?;
        }
        model.hidden = m.hidden.unwrap_or(model.hidden);
        model.heads = m.heads.unwrap_or(model.heads);
        model.d_k = m.d_k.unwrap_or(model.d_k);
        model.tied_omega = m.tied_omega.unwrap_or(model.tied_omega);
        if let Some(s) = &m.logit_scale {
            model.logit_scale = match s.as_str() {
                "d_k" => LogitScale::Dk,
                "sqrt_d_k" => LogitScale::SqrtDk,
                other => return Err(Error::Config(format!("model.logit_scale: unknown value {other:?}"))),
            };
        }
        if let Some(c) = &m.coupling {
            model.coupling = match c.as_str() {
                "attention" => CouplingMode::Attention,
                "uniform" => CouplingMode::Uniform,
                other => return Err(Error::Config(format!("model.coupling: unknown value {other:?}"))),
            };
        }
        dynamics.apply(&mut model);
        model.validate().map_err(|e| Error::Config(format!("model: {e}")))?;

        let mut train = TrainConfig {
            model,
            ..TrainConfig::default()
        };
        let t = &fc.train;
        train.max_epochs = t.epochs.unwrap_or(train.max_epochs);
        train.lr = t.lr.unwrap_or(train.lr);
        train.weight_decay = t.weight_decay.unwrap_or(train.weight_decay);
        train.patience = t.patience.unwrap_or(train.patience);
        train.dropout = t.dropout.unwrap_or(train.dropout);
        train.per_class = t.per_class.unwrap_or(train.per_class);
        train.val_size = t.val_size.unwrap_or(train.val_size);
        train.seed = t.seed.unwrap_or(train.seed);
        match t.optimizer.as_deref() {
            None | Some("adam") => {}
            Some("sgd") => {
                train.optimizer = Optimizer::SgdMomentum {
                    momentum: t.momentum.unwrap_or(0.9),
                }
            }
            Some(other) => return Err(Error::Config(format!("train.optimizer: unknown value {other:?}"))),
        }
        train.validate().map_err(|e| Error::Config(format!("train: {e}")))?;

        let s = &fc.solver;
        let method = match s.method.as_deref() {
            None => Method::Euler,
            Some(name) => name
                .parse::<Method>()
                .map_err(|_| Error::Config(format!("solver.method: unknown value {name:?}")))?,
        };
        let solver = SolverConfig {
            method,
            dt: model.dt,
            t_end: model.t_end,
            rtol: positive("solver.rtol", s.rtol.unwrap_or(1e-7))?,
            atol: positive("solver.atol", s.atol.unwrap_or(1e-7))?,
            max_nfe: s.max_nfe.unwrap_or(1_000_000),
        };

        let r = &fc.run;
        let splits = r.splits.unwrap_or(1);
        let seeds = r.seeds.unwrap_or(1);
        if splits == 0 || seeds == 0 {
            return Err(Error::Config("run.splits and run.seeds must be >= 1".into()));
        }
        let workers = r
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1);
        let out = PathBuf::from(r.out.as_deref().unwrap_or("out"));

        let sw = &fc.sweep;
        let sweep_axis = sw.axis.as_deref().map(SweepAxis::parse).transpose()?;
        let sweep_values = sw.values.clone().unwrap_or_default();
        if sweep_axis.is_some() && sweep_values.is_empty() {
            return Err(Error::Config("sweep.values: must be nonempty".into()));
        }
        let sweep_dynamics = match &sw.dynamics {
            Some(names) => names
                .iter()
                .map(|n| DynamicsChoice::parse(n))
                .collect::<Result<Vec<_>>>()?,
            None if fc.model.dynamics.is_some() => vec![dynamics],
            None => ["kuramoto", "grand_linear", "grand_modified_no_x0"]
                .iter()
                .map(|n| DynamicsChoice::parse(n))
                .collect::<Result<Vec<_>>>()?,
        };

        let y = &fc.sync;
        let sync_coupling = y.coupling.clone().unwrap_or_else(|| "adjacency".into());
        if !matches!(sync_coupling.as_str(), "adjacency" | "metropolis" | "uniform") {
            return Err(Error::Config(format!("sync.coupling: unknown value {sync_coupling:?}")));
        }
        Ok(Self {
            dataset,
            lcc: fc.data.lcc.unwrap_or(true),
            dynamics,
            train,
            solver,
            splits,
            seeds,
            workers,
            out,
            sweep_axis,
            sweep_values,
            sweep_dynamics,
            sync_spread: y.spread.unwrap_or(0.1),
            sync_k_strong: positive("sync.k_strong", y.k_strong.unwrap_or(5.0))?,
            sync_coupling,
            sync_record_every: y.record_every.unwrap_or(10).max(1),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_specs() {
        assert_eq!(
            DatasetSpec::parse("synthetic:ring:n=12,f=3,seed=4").unwrap(),
            DatasetSpec::Synthetic {
                kind: SyntheticKind::Ring,
                n: 12,
                f: 3,
                seed: 4
            }
        );
        assert!(matches!(
            DatasetSpec::parse("synthetic:er:p=0.5").unwrap(),
            DatasetSpec::Synthetic {
                kind: SyntheticKind::ErdosRenyi(p),
                ..
            } if p == 0.5
        ));
        assert_eq!(
            DatasetSpec::parse("data/cora").unwrap(),
            DatasetSpec::Bundle("data/cora".into())
        );
        assert!(DatasetSpec::parse("synthetic:torus").is_err());
        assert!(DatasetSpec::parse("synthetic:ring:q=1").is_err());
    }

    #[test]
    fn bad_axis_names_field() {
        let fc = FileConfig::from_toml("[sweep]\naxis = \"depth\"\nvalues = [1.0]\n").unwrap();
        let err = ExperimentConfig::resolve(&fc).unwrap_err().to_string();
        assert!(err.contains("sweep.axis"), "{err}");
    }

    #[test]
    fn unknown_field_rejected() {
        let err = FileConfig::from_toml("[model]\nwidth = 3\n").unwrap_err().to_string();
        assert!(err.contains("width"), "{err}");
    }

    #[test]
    fn toml_roundtrip() {
        let text = "[model]\nK = 2.0\nT = 4.0\ndynamics = \"grand_modified_no_x0\"\n[sweep]\naxis = \"K\"\nvalues = [0.5, 1.0]\n";
        let fc = FileConfig::from_toml(text).unwrap();
        assert_eq!(FileConfig::from_toml(&fc.to_toml()).unwrap(), fc);
        let cfg = ExperimentConfig::resolve(&fc).unwrap();
        assert_eq!(cfg.train.model.k, 2.0);
        assert_eq!(cfg.train.model.beta_init, 0.0);
        assert!(!cfg.train.model.beta_trainable);
        assert_eq!(cfg.sweep_axis, Some(SweepAxis::K));
    }
}
