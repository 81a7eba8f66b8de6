//! Experiment harness behind the command-line verbs. Each command writes
//! CSV (plus JSON lines for per-run logs) into the output directory and
//! echoes the effective configuration as `config.toml`.

mod cli;
mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coupling::{adjacency_coupling, metropolis_coupling, uniform_coupling, CouplingMatrix};
use crate::dynamics::{energy_u, Dynamics, DynamicsKind, DynamicsSpec};
use crate::error::{Error, Result};
use crate::graph::{generate_synthetic, largest_connected_component, load_bundle, save_bundle, Graph};
use crate::integrate::{integrate, integrate_dopri5, SolverConfig, Trajectory};
use crate::model::{forward_with, ModelParams, PreparedGraph};
use crate::syncdiag::{frequency_sync_residual, order_parameter, pairwise_distance_stats};
use crate::train::{run_seeded, SeededSummary, TrainConfig};

pub use cli::{cli_main, Cli, Command};
pub use config::{
    DataSection, DatasetSpec, DynamicsChoice, ExperimentConfig, FileConfig, ModelSection, RunSection, SolverSection,
    SweepAxis, SweepSection, SyncSection, TrainSection,
};

/// Version of every CSV schema written by this module.
pub const SCHEMA_VERSION: u32 = 1;

/// Loads or generates the graph named by `spec`, optionally restricted to
/// its largest connected component.
pub fn load_dataset(spec: &DatasetSpec, lcc: bool) -> Result<Graph> {
    let g = match spec {
        DatasetSpec::Bundle(path) => load_bundle(path)?,
        DatasetSpec::Synthetic { kind, n, f, seed } => generate_synthetic(*kind, *n, *f, *seed)?,
    };
    if lcc && !g.is_connected() {
        Ok(largest_connected_component(&g)?.0)
    } else {
        Ok(g)
    }
}

/// Shrinks labels per class and the validation size so every mask is
/// nonempty on small graphs: at most a third of the smallest class is used
/// for training and at most half of the remainder for validation.
pub fn fit_split_sizes(mut train: TrainConfig, g: &Graph) -> TrainConfig {
    let mut counts = vec![0usize; g.num_classes()];
    for &l in g.labels() {
        counts[l] += 1;
    }
    let smallest = counts.iter().copied().min().unwrap_or(0);
    let per_class = train.per_class.min((smallest / 3).max(1));
    let n_train: usize = counts.iter().map(|&c| c.min(per_class)).sum();
    let val = train.val_size.min(g.num_nodes().saturating_sub(n_train) / 2);
    if per_class != train.per_class || val != train.val_size {
        eprintln!(
            "note: split sizes reduced to per_class={per_class} val={val} for a {}-node graph",
            g.num_nodes()
        );
    }
    train.per_class = per_class;
    train.val_size = val;
    train
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?))
}

fn write_csv_rows<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<()> {
    let path = dir.join(name);
    let w = create(dir, name)?;
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r).map_err(|e| Error::io(&path, e.into()))?;
    }
    csv.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn write_run_logs(dir: &Path, name: &str, summary: &SeededSummary) -> Result<()> {
    let mut w = create(dir, name)?;
    for run in &summary.runs {
        let line = serde_json::json!({
            "split": run.split,
            "seed": run.seed,
            "diverged": run.result.is_none(),
        });
        writeln!(w, "{line}").map_err(|e| Error::io(dir.join(name), e))?;
        if let Some(res) = &run.result {
            res.write_jsonl(&mut w, None)?;
        }
    }
    w.flush().map_err(|e| Error::io(dir.join(name), e))
}

/// Row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub schema_version: u32,
    pub dataset: String,
    pub dynamics: String,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub dt: f64,
    pub splits: usize,
    pub seeds: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
}

/// Row of the sweep outputs: a result row plus synchronization statistics
/// of X(T) averaged over runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub schema_version: u32,
    pub dataset: String,
    pub dynamics: String,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub dt: f64,
    pub splits: usize,
    pub seeds: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub per_class: usize,
    pub excluded: usize,
    pub max_pairwise: f64,
    pub r_mean: f64,
}

fn result_row(cfg: &ExperimentConfig, train: &TrainConfig, name: String, s: &SeededSummary) -> ResultRow {
    ResultRow {
        schema_version: SCHEMA_VERSION,
        dataset: cfg.dataset.label(),
        dynamics: name,
        k: train.model.k,
        t: train.model.t_end,
        dt: train.model.dt,
        splits: cfg.splits,
        seeds: cfg.seeds,
        mean_acc: s.mean_acc,
        std_acc: s.std_acc,
    }
}

fn sweep_row(cfg: &ExperimentConfig, train: &TrainConfig, name: String, s: &SeededSummary) -> SweepRow {
    let ok: Vec<_> = s.runs.iter().filter_map(|r| r.result.as_ref()).collect();
    let k = ok.len().max(1) as f64;
    let max_pairwise = ok.iter().map(|r| r.sync.max_pairwise).sum::<f64>() / k;
    let r_mean = ok
        .iter()
        .map(|r| r.sync.r.iter().sum::<f64>() / r.sync.r.len().max(1) as f64)
        .sum::<f64>()
        / k;
    let r = result_row(cfg, train, name, s);
    SweepRow {
        schema_version: r.schema_version,
        dataset: r.dataset,
        dynamics: r.dynamics,
        k: r.k,
        t: r.t,
        dt: r.dt,
        splits: r.splits,
        seeds: r.seeds,
        mean_acc: r.mean_acc,
        std_acc: r.std_acc,
        per_class: train.per_class,
        excluded: s.excluded,
        max_pairwise,
        r_mean,
    }
}

pub(crate) fn write_effective_config(cfg: &ExperimentConfig, fc: &FileConfig) -> Result<()> {
    let mut w = create(&cfg.out, "config.toml")?;
    w.write_all(fc.to_toml().as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(cfg.out.join("config.toml"), e))
}

/// Seeded training at one configuration; writes `results.csv` and
/// `runs.jsonl`.
pub fn cmd_run(cfg: &ExperimentConfig, g: &Graph) -> Result<ResultRow> {
    let train = fit_split_sizes(cfg.train, g);
    let summary = run_seeded(g, &train, cfg.splits, cfg.seeds, cfg.workers)?;
    let row = result_row(cfg, &train, cfg.dynamics.name(), &summary);
    write_csv_rows(&cfg.out, "results.csv", std::slice::from_ref(&row))?;
    write_run_logs(&cfg.out, "runs.jsonl", &summary)?;
    Ok(row)
}

/// Accuracy against terminal time for every dynamics in
/// `cfg.sweep_dynamics`; writes `depth_sweep.csv`.
pub fn cmd_depth_sweep(cfg: &ExperimentConfig, g: &Graph) -> Result<Vec<SweepRow>> {
    if cfg.sweep_axis.is_some_and(|a| a != SweepAxis::T) {
        return Err(Error::Config("sweep.axis: depth-sweep sweeps T".into()));
    }
    let values = if cfg.sweep_values.is_empty() {
        vec![1.0, 4.0, 8.0, 16.0, 32.0, 64.0, 80.0, 100.0]
    } else {
        cfg.sweep_values.clone()
    };
    let mut rows = Vec::new();
    for choice in &cfg.sweep_dynamics {
        for &t in &values {
            let mut train = cfg.train;
            choice.apply(&mut train.model);
            train.model.t_end = t;
            let train = fit_split_sizes(train, g);
            let summary = run_seeded(g, &train, cfg.splits, cfg.seeds, cfg.workers)?;
            rows.push(sweep_row(cfg, &train, choice.name(), &summary));
        }
    }
    write_csv_rows(&cfg.out, "depth_sweep.csv", &rows)?;
    Ok(rows)
}

/// Sweeps K (or labels per class) for the configured dynamics; writes
/// `coupling_sweep.csv`.
pub fn cmd_coupling_sweep(cfg: &ExperimentConfig, g: &Graph) -> Result<Vec<SweepRow>> {
    let axis = cfg.sweep_axis.unwrap_or(SweepAxis::K);
    if axis == SweepAxis::T {
        return Err(Error::Config("sweep.axis: coupling-sweep sweeps K or per_class".into()));
    }
    if axis == SweepAxis::K && cfg.dynamics.kind != DynamicsKind::Kuramoto {
        return Err(Error::Config("model.dynamics: coupling-sweep needs kuramoto".into()));
    }
    let values = if cfg.sweep_values.is_empty() {
        vec![0.4, 0.6, 0.8, 1.0, 1.5, 2.0, 3.0]
    } else {
        cfg.sweep_values.clone()
    };
    let mut rows = Vec::new();
    for &v in &values {
        let mut train = cfg.train;
        match axis {
            SweepAxis::K => train.model.k = v,
            _ => train.per_class = v as usize,
        }
        let train = fit_split_sizes(train, g);
        let summary = run_seeded(g, &train, cfg.splits, cfg.seeds, cfg.workers)?;
        rows.push(sweep_row(cfg, &train, cfg.dynamics.name(), &summary));
    }
    write_csv_rows(&cfg.out, "coupling_sweep.csv", &rows)?;
    Ok(rows)
}

/// Row of `nfe_compare.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NfeRow {
    pub schema_version: u32,
    pub dataset: String,
    pub dynamics: String,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Empty when the solver failed.
    pub nfe: Option<usize>,
    pub accepted: Option<usize>,
    pub rejected: Option<usize>,
    pub status: String,
    /// NFE(kuramoto) / NFE(grand_linear) on both rows.
    pub ratio: Option<f64>,
}

/// Integrates the Kuramoto and linear-diffusion fields from the same X(0)
/// and attention coupling of a freshly initialised model.
pub fn nfe_compare(
    g: &Graph,
    p: &ModelParams,
    solver: &SolverConfig,
) -> Result<(Result<Trajectory>, Result<Trajectory>)> {
    let prepared = PreparedGraph::new(g);
    let unroll = ModelParams {
        config: crate::model::ModelConfig { t_end: 0.0, ..p.config },
        ..p.clone()
    };
    let tape = forward_with(&prepared, &unroll, None, false)?;
    let x0 = tape.initial_state().clone();
    let a = tape.coupling().clone();
    let kura = DynamicsSpec::new(
        Dynamics::Kuramoto {
            k: p.config.k,
            omega: x0.clone(),
        },
        a.clone(),
    )?;
    let diff = DynamicsSpec::new(Dynamics::GrandLinear, a)?;
    let cfg = SolverConfig {
        method: crate::integrate::Method::Dopri5,
        ..*solver
    };
    let run_k = integrate_dopri5(&x0, |x: &Array2<f64>| kura.rhs(x), &cfg);
    let run_d = integrate_dopri5(&x0, |x: &Array2<f64>| diff.rhs(x), &cfg);
    Ok((run_k, run_d))
}

/// Writes `nfe_compare.csv` with one row per dynamics.
pub fn cmd_nfe_compare(cfg: &ExperimentConfig, g: &Graph) -> Result<Vec<NfeRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut model = cfg.train.model;
    model.dynamics = DynamicsKind::Kuramoto;
    let p = ModelParams::init(model, g.feature_dim(), g.num_classes(), &mut rng)?;
    let (k, d) = nfe_compare(g, &p, &cfg.solver)?;
    let ratio = match (&k, &d) {
        (Ok(a), Ok(b)) => Some(a.nfe as f64 / b.nfe as f64),
        _ => None,
    };
    let row = |name: &str, r: &Result<Trajectory>| NfeRow {
        schema_version: SCHEMA_VERSION,
        dataset: cfg.dataset.label(),
        dynamics: name.into(),
        k: model.k,
        t: model.t_end,
        rtol: cfg.solver.rtol,
        atol: cfg.solver.atol,
        nfe: r.as_ref().ok().map(|t| t.nfe),
        accepted: r.as_ref().ok().map(|t| t.accepted),
        rejected: r.as_ref().ok().map(|t| t.rejected),
        status: match r {
            Ok(_) => "ok".into(),
            Err(e) => e.to_string(),
        },
        ratio,
    };
    let rows = vec![row("kuramoto", &k), row("grand_linear", &d)];
    write_csv_rows(&cfg.out, "nfe_compare.csv", &rows)?;
    Ok(rows)
}

/// Row of `sync_demo.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyncRow {
    pub schema_version: u32,
    pub case: String,
    #[serde(rename = "K")]
    pub k: f64,
    pub time: f64,
    pub max_pairwise: f64,
    pub r_mean: f64,
    pub energy: f64,
    pub freq_residual: f64,
}

/// The three runs of the synchronization demonstration.
#[derive(Debug, Clone)]
pub struct SyncDemo {
    /// Identical frequencies at the configured K.
    pub identical: Trajectory,
    /// Perturbed frequencies at the configured K.
    pub distinct: Trajectory,
    /// Perturbed frequencies at the strong coupling.
    pub distinct_strong: Trajectory,
    pub coupling: CouplingMatrix,
    pub specs: [DynamicsSpec; 3],
}

/// Runs identical- and distinct-frequency Kuramoto systems from the same
/// initial state. Initial phases and the shared frequency row are drawn
/// from U(−1, 1); the distinct case adds U(−spread, spread) per entry.
pub fn sync_demo(
    coupling: CouplingMatrix,
    d: usize,
    k: f64,
    k_strong: f64,
    spread: f64,
    solver: &SolverConfig,
    seed: u64,
) -> Result<SyncDemo> {
    let n = coupling.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0));
    let base: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let same = Array2::from_shape_fn((n, d), |(_, c)| base[c]);
    let perturbed = Array2::from_shape_fn((n, d), |(_, c)| base[c] + rng.random_range(-spread..=spread));
    let spec = |k: f64, omega: &Array2<f64>| {
        DynamicsSpec::new(
            Dynamics::Kuramoto {
                k,
                omega: omega.clone(),
            },
            coupling.clone(),
        )
    };
    let specs = [spec(k, &same)?, spec(k, &perturbed)?, spec(k_strong, &perturbed)?];
    let run = |s: &DynamicsSpec| integrate(&x0, |x: &Array2<f64>| s.rhs(x), solver, true);
    Ok(SyncDemo {
        identical: run(&specs[0])?,
        distinct: run(&specs[1])?,
        distinct_strong: run(&specs[2])?,
        coupling,
        specs,
    })
}

fn sync_rows(case: &str, spec: &DynamicsSpec, traj: &Trajectory, every: usize) -> Result<Vec<SyncRow>> {
    let k = match &spec.dynamics {
        Dynamics::Kuramoto { k, .. } => *k,
        _ => f64::NAN,
    };
    let last = traj.states.len() - 1;
    let mut rows = Vec::new();
    for (idx, (t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
        if idx % every != 0 && idx != last {
            continue;
        }
        let (max_pairwise, _) = pairwise_distance_stats(x)?;
        let r_mean = (0..x.ncols())
            .map(|c| order_parameter(x, c).map(|v| v.0))
            .sum::<Result<f64>>()?
            / x.ncols() as f64;
        rows.push(SyncRow {
            schema_version: SCHEMA_VERSION,
            case: case.into(),
            k,
            time: *t,
            max_pairwise,
            r_mean,
            energy: energy_u(x, &spec.coupling).iter().sum(),
            freq_residual: frequency_sync_residual(x, spec)?,
        });
    }
    Ok(rows)
}

/// Writes `sync_demo.csv`: time series of max pairwise distance, mean
/// order parameter, energy and frequency residual for the three cases.
pub fn cmd_sync_demo(cfg: &ExperimentConfig, g: &Graph) -> Result<Vec<SyncRow>> {
    let coupling = match cfg.sync_coupling.as_str() {
        "uniform" => uniform_coupling(g, true)?,
        "metropolis" => metropolis_coupling(&g.symmetrized())?,
        _ => adjacency_coupling(&g.symmetrized())?,
    };
    let solver = SolverConfig {
        dt: cfg.train.model.dt,
        t_end: cfg.train.model.t_end,
        ..cfg.solver
    };
    let demo = sync_demo(
        coupling,
        g.feature_dim().clamp(1, 4),
        cfg.train.model.k,
        cfg.sync_k_strong,
        cfg.sync_spread,
        &solver,
        cfg.train.seed,
    )?;
    let every = cfg.sync_record_every;
    let mut rows = sync_rows("identical", &demo.specs[0], &demo.identical, every)?;
    rows.extend(sync_rows("distinct", &demo.specs[1], &demo.distinct, every)?);
    rows.extend(sync_rows(
        "distinct_strong",
        &demo.specs[2],
        &demo.distinct_strong,
        every,
    )?);
    write_csv_rows(&cfg.out, "sync_demo.csv", &rows)?;
    Ok(rows)
}

/// Writes the configured synthetic graph as a bundle under `cfg.out`.
pub fn cmd_make_bundle(cfg: &ExperimentConfig) -> Result<Graph> {
    if !matches!(cfg.dataset, DatasetSpec::Synthetic { .. }) {
        return Err(Error::Config(
            "data.dataset: make-bundle needs a synthetic:SPEC dataset".into(),
        ));
    }
    let g = load_dataset(&cfg.dataset, false)?;
    save_bundle(&g, &cfg.out)?;
    Ok(g)
}
