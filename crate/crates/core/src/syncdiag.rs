//! Synchronization and over-smoothing diagnostics.

use std::io::Write;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsSpec, OscillatorState};
use crate::error::{Error, Result};
use crate::integrate::Trajectory;

/// Distances at or below this are excluded from the log-linear decay fit.
pub const DECAY_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    /// Order-parameter magnitude per channel.
    pub r: Vec<f64>,
    /// Mean phase per channel.
    pub phi: Vec<f64>,
    pub max_pairwise: f64,
    pub mean_pairwise: f64,
    pub freq_residual: Option<f64>,
    pub decay_rate: Option<f64>,
}

/// `r e^{iφ} = (1/N) Σ_j e^{i x_j}` for one channel.
pub fn order_parameter(x: &OscillatorState, channel: usize) -> Result<(f64, f64)> {
    if channel >= x.ncols() {
        return Err(Error::IndexOutOfRange {
            index: channel,
            n: x.ncols(),
        });
    }
    if x.nrows() == 0 {
        return Err(Error::EmptyGraph);
    }
    let n = x.nrows() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for &v in x.column(channel) {
        re += v.cos();
        im += v.sin();
    }
    let (re, im) = (re / n, im / n);
    Ok((re.hypot(im).min(1.0), im.atan2(re)))
}

fn row_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

fn max_mean_row_distance(x: &Array2<f64>) -> Result<(f64, f64)> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 nodes, got {n}")));
    }
    let (mut max, mut sum) = (0.0f64, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let d = row_distance(x.row(i), x.row(j));
            max = max.max(d);
            sum += d;
        }
    }
    Ok((max, sum / (n * (n - 1) / 2) as f64))
}

/// Max and mean Euclidean distance over unordered row pairs.
pub fn pairwise_distance_stats(x: &OscillatorState) -> Result<(f64, f64)> {
    max_mean_row_distance(x)
}

/// Largest row spread `max_{i,j} ‖ẋ_i − ẋ_j‖₂` of the field at `x_final`.
pub fn frequency_sync_residual(x_final: &OscillatorState, spec: &DynamicsSpec) -> Result<f64> {
    let dx = spec.rhs(x_final)?;
    if dx.nrows() < 2 {
        return Ok(0.0);
    }
    Ok(max_mean_row_distance(&dx)?.0)
}

/// `max_pairwise` at every recorded time.
pub fn max_pairwise_series(traj: &Trajectory) -> Result<Vec<f64>> {
    traj.states
        .iter()
        .map(|x| pairwise_distance_stats(x).map(|(m, _)| m))
        .collect()
}

fn least_squares_slope(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in t.iter().zip(y) {
        sxy += (a - tm) * (b - ym);
        sxx += (a - tm).powi(2);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Slope of `log max_pairwise(t)` over the recorded states whose distance
/// exceeds [`DECAY_FLOOR`].
pub fn fit_decay_rate(traj: &Trajectory) -> Result<f64> {
    fit_decay_rate_from(traj, 0.0)
}

/// As [`fit_decay_rate`], restricted to times `t ≥ t_from`.
pub fn fit_decay_rate_from(traj: &Trajectory, t_from: f64) -> Result<f64> {
    if traj.states.len() < 10 {
        return Err(Error::DegenerateWindow(format!(
            "need at least 10 recorded states, got {}",
            traj.states.len()
        )));
    }
    let series = max_pairwise_series(traj)?;
    let (mut ts, mut ys) = (Vec::new(), Vec::new());
    for (&t, &m) in traj.times.iter().zip(&series) {
        if t >= t_from && m > DECAY_FLOOR {
            ts.push(t);
            ys.push(m.ln());
        }
    }
    if ts.len() < 2 {
        return Err(Error::DegenerateWindow(format!(
            "{} points above the {DECAY_FLOOR:e} floor",
            ts.len()
        )));
    }
    Ok(least_squares_slope(&ts, &ys))
}

/// Builds a report for `x`; the residual needs a field and the decay rate a
/// recorded trajectory.
pub fn sync_report(x: &OscillatorState, spec: Option<&DynamicsSpec>, traj: Option<&Trajectory>) -> Result<SyncReport> {
    let (mut r, mut phi) = (Vec::new(), Vec::new());
    for k in 0..x.ncols() {
        let (a, b) = order_parameter(x, k)?;
        r.push(a);
        phi.push(b);
    }
    let (max_pairwise, mean_pairwise) = pairwise_distance_stats(x)?;
    let freq_residual = spec.map(|s| frequency_sync_residual(x, s)).transpose()?;
    let decay_rate = match traj {
        Some(t) => match fit_decay_rate(t) {
            Ok(v) => Some(v),
            Err(Error::DegenerateWindow(_)) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    Ok(SyncReport {
        r,
        phi,
        max_pairwise,
        mean_pairwise,
        freq_residual,
        decay_rate,
    })
}

/// Thresholds for declaring over-smoothing: features must be both close
/// together and still contracting exponentially.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OversmoothingCriterion {
    pub max_distance: f64,
    pub max_rate: f64,
}

impl Default for OversmoothingCriterion {
    fn default() -> Self {
        Self {
            max_distance: 1e-6,
            max_rate: -0.01,
        }
    }
}

impl OversmoothingCriterion {
    pub fn is_oversmoothed(&self, report: &SyncReport) -> bool {
        match report.decay_rate {
            Some(rate) => report.max_pairwise < self.max_distance && rate < self.max_rate,
            None => false,
        }
    }
}

/// One row per (time, channel): `time,channel,r,phi,max_pairwise,mean_pairwise`.
pub fn write_sync_csv<W: Write>(traj: &Trajectory, mut w: W) -> Result<()> {
    let io = |e| Error::io("<sync csv>", e);
    writeln!(w, "time,channel,r,phi,max_pairwise,mean_pairwise").map_err(io)?;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let (max, mean) = pairwise_distance_stats(x)?;
        for k in 0..x.ncols() {
            let (r, phi) = order_parameter(x, k)?;
            writeln!(w, "{t},{k},{r},{phi},{max},{mean}").map_err(io)?;
        }
    }
    Ok(())
}
