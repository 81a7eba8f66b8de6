//! Explicit ODE integrators for autonomous systems `Ẋ = f(X)` over
//! matrix-valued states: forward Euler, classic RK4 and the Dormand–Prince
//! 5(4) embedded pair with PI step-size control.

use std::io::Write;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    Rk4,
    Dopri5,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Method::Euler),
            "rk4" => Ok(Method::Rk4),
            "dopri5" => Ok(Method::Dopri5),
            other => Err(Error::InvalidArgument(format!("unknown solver {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    /// Step size for the fixed-step methods.
    pub dt: f64,
    /// Terminal time.
    pub t_end: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Budget of right-hand-side evaluations for the adaptive method.
    pub max_nfe: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Euler,
            dt: 0.1,
            t_end: 1.0,
            rtol: 1e-7,
            atol: 1e-7,
            max_nfe: 1_000_000,
        }
    }
}

impl SolverConfig {
    pub fn euler(dt: f64, t_end: f64) -> Self {
        Self {
            method: Method::Euler,
            dt,
            t_end,
            ..Self::default()
        }
    }

    pub fn rk4(dt: f64, t_end: f64) -> Self {
        Self {
            method: Method::Rk4,
            dt,
            t_end,
            ..Self::default()
        }
    }

    pub fn dopri5(rtol: f64, atol: f64, t_end: f64) -> Self {
        Self {
            method: Method::Dopri5,
            rtol,
            atol,
            t_end,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0) {
            return Err(Error::InvalidArgument(format!("T must be > 0, got {}", self.t_end)));
        }
        match self.method {
            Method::Euler | Method::Rk4 if !(self.dt > 0.0) => {
                Err(Error::InvalidArgument(format!("dt must be > 0, got {}", self.dt)))
            }
            Method::Dopri5 if !(self.rtol > 0.0 && self.atol > 0.0) => {
                Err(Error::InvalidArgument("rtol and atol must be > 0".into()))
            }
            _ => Ok(()),
        }
    }

    /// Number of fixed steps needed to reach `t_end`; the last one may be
    /// shorter than `dt`.
    pub fn fixed_steps(&self) -> usize {
        fixed_step_count(self.t_end, self.dt)
    }
}

/// `ceil(T / dt)` with a relative guard against round-off, so that
/// `T = 1, dt = 0.1` gives 10.
pub fn fixed_step_count(t_end: f64, dt: f64) -> usize {
    let ratio = t_end / dt;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * ratio.max(1.0) {
        nearest as usize
    } else {
        ratio.ceil() as usize
    }
}

/// Time-stamped states plus solver statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Array2<f64>>,
    pub nfe: usize,
    pub accepted: usize,
    pub rejected: usize,
}

/// One-line solver statistics record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverStats {
    pub nfe: usize,
    pub accepted: usize,
    pub rejected: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &Array2<f64> {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory holds at least the initial time")
    }

    pub fn stats(&self) -> SolverStats {
        SolverStats {
            nfe: self.nfe,
            accepted: self.accepted,
            rejected: self.rejected,
        }
    }

    /// Long-format CSV: `time,node,channel,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,node,channel,value")?;
        for (t, x) in self.times.iter().zip(&self.states) {
            for ((i, k), v) in x.indexed_iter() {
                writeln!(w, "{t:?},{i},{k},{v:?}")?;
            }
        }
        Ok(())
    }

    pub fn stats_json(&self) -> String {
        serde_json::to_string(&self.stats()).expect("plain struct serializes")
    }
}

fn all_finite(x: &Array2<f64>) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// `x + dt · f(x)`; exactly one evaluation of `f`.
pub fn step_euler<F>(x: &Array2<f64>, rhs: &mut F, dt: f64) -> Result<Array2<f64>>
where
    F: FnMut(&Array2<f64>) -> Result<Array2<f64>>,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    let mut out = rhs(x)?;
    out *= dt;
    out += x;
    if !all_finite(&out) {
        return Err(Error::NonFinite { step: 0 });
    }
    Ok(out)
}

fn step_rk4<F>(x: &Array2<f64>, rhs: &mut F, h: f64) -> Result<Array2<f64>>
where
    F: FnMut(&Array2<f64>) -> Result<Array2<f64>>,
{
    let k1 = rhs(x)?;
    let k2 = rhs(&(x + &(&k1 * (h / 2.0))))?;
    let k3 = rhs(&(x + &(&k2 * (h / 2.0))))?;
    let k4 = rhs(&(x + &(&k3 * h)))?;
    let mut out = x.clone();
    Zip::from(&mut out)
        .and(&k1)
        .and(&k2)
        .and(&k3)
        .and(&k4)
        .for_each(|o, &a, &b, &c, &d| *o += h / 6.0 * (a + 2.0 * b + 2.0 * c + d));
    Ok(out)
}

/// Fixed-step Euler or RK4 from 0 to `cfg.t_end`. With `record`, every
/// intermediate state is kept; otherwise only the endpoints.
pub fn integrate_fixed<F>(x0: &Array2<f64>, mut rhs: F, cfg: &SolverConfig, record: bool) -> Result<Trajectory>
where
    F: FnMut(&Array2<f64>) -> Result<Array2<f64>>,
{
    cfg.validate()?;
    let per_step = match cfg.method {
        Method::Euler => 1,
        Method::Rk4 => 4,
        Method::Dopri5 => {
            return Err(Error::InvalidArgument("integrate_fixed needs euler or rk4".into()));
        }
    };
    let steps = cfg.fixed_steps();
    let mut times = vec![0.0];
    let mut states = vec![x0.clone()];
    let mut x = x0.clone();
    for m in 0..steps {
        let t = m as f64 * cfg.dt;
        let h = if m + 1 == steps { cfg.t_end - t } else { cfg.dt };
        x = match cfg.method {
            Method::Euler => {
                let mut out = rhs(&x)?;
                out *= h;
                out += &x;
                out
            }
            _ => step_rk4(&x, &mut rhs, h)?,
        };
        if !all_finite(&x) {
            return Err(Error::NonFinite { step: m + 1 });
        }
        let t_next = if m + 1 == steps {
            cfg.t_end
        } else {
            (m + 1) as f64 * cfg.dt
        };
        if record || m + 1 == steps {
            times.push(t_next);
            states.push(x.clone());
        }
    }
    Ok(Trajectory {
        times,
        states,
        nfe: per_step * steps,
        accepted: steps,
        rejected: 0,
    })
}

/// Dispatches on `cfg.method`.
pub fn integrate<F>(x0: &Array2<f64>, rhs: F, cfg: &SolverConfig, record: bool) -> Result<Trajectory>
where
    F: FnMut(&Array2<f64>) -> Result<Array2<f64>>,
{
    match cfg.method {
        Method::Dopri5 => dopri5(x0, rhs, cfg, record),
        _ => integrate_fixed(x0, rhs, cfg, record),
    }
}

// Dormand–Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// fifth-order weights minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;
const PI_BETA: f64 = 0.04;
const PI_ALPHA: f64 = 0.2 - PI_BETA * 0.75;

fn combine(x: &Array2<f64>, h: f64, terms: &[(f64, &Array2<f64>)]) -> Array2<f64> {
    let mut out = x.clone();
    for &(c, k) in terms {
        if c != 0.0 {
            out.scaled_add(h * c, k);
        }
    }
    out
}

fn scaled_rms(v: &Array2<f64>, x: &Array2<f64>, cfg: &SolverConfig) -> f64 {
    let n = v.len().max(1) as f64;
    let sum: f64 = v
        .iter()
        .zip(x)
        .map(|(&v, &x)| {
            let s = cfg.atol + cfg.rtol * x.abs();
            (v / s).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

/// Adaptive Dormand–Prince 5(4) integration to exactly `cfg.t_end`.
///
/// NFE accounting: one evaluation at the initial state, one probe for the
/// starting step size, then six per attempted step (the seventh stage is
/// reused as the first stage of the next step). Hence
/// `nfe = 6 · (accepted + rejected) + 2`.
pub fn integrate_dopri5<F>(x0: &Array2<f64>, rhs: F, cfg: &SolverConfig) -> Result<Trajectory>
where
    F: FnMut(&Array2<f64>) -> Result<Array2<f64>>,
{
    dopri5(x0, rhs, cfg, false)
}

fn dopri5<F>(x0: &Array2<f64>, mut rhs: F, cfg: &SolverConfig, record: bool) -> Result<Trajectory>
where
    F: FnMut(&Array2<f64>) -> Result<Array2<f64>>,
{
    cfg.validate()?;
    let t_end = cfg.t_end;
    let mut nfe = 0usize;
    let mut eval = |x: &Array2<f64>, nfe: &mut usize, t: f64| -> Result<Array2<f64>> {
        if *nfe >= cfg.max_nfe {
            return Err(Error::MaxNfeExceeded {
                max_nfe: cfg.max_nfe,
                t,
            });
        }
        *nfe += 1;
        rhs(x)
    };

    let mut x = x0.clone();
    let mut k1 = eval(&x, &mut nfe, 0.0)?;

    // starting step (Hairer, Nørsett & Wanner, II.4)
    let d0 = scaled_rms(&x, &x, cfg);
    let d1 = scaled_rms(&k1, &x, cfg);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let probe = combine(&x, h0, &[(1.0, &k1)]);
    let f1 = eval(&probe, &mut nfe, 0.0)?;
    let d2 = scaled_rms(&(&f1 - &k1), &x, cfg) / h0;
    let mut h = if d1.max(d2) <= 1e-15 {
        // field vanishes around x0: nothing to resolve
        t_end
    } else {
        let h1 = (0.01 / d1.max(d2)).powf(0.2);
        (100.0 * h0).min(h1).min(t_end / 100.0)
    };

    let mut t = 0.0;
    let mut times = vec![0.0];
    let mut states = vec![x0.clone()];
    let (mut accepted, mut rejected) = (0usize, 0usize);
    let mut err_old = 1e-4_f64;
    let h_min = 1e-12 * t_end;

    while t < t_end {
        if h < h_min {
            return Err(Error::StepUnderflow { h, t });
        }
        let last = t + h >= t_end * (1.0 - 1e-12);
        if last {
            h = t_end - t;
        }
        let k2 = eval(&combine(&x, h, &[(A21, &k1)]), &mut nfe, t)?;
        let k3 = eval(&combine(&x, h, &[(A31, &k1), (A32, &k2)]), &mut nfe, t)?;
        let k4 = eval(&combine(&x, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]), &mut nfe, t)?;
        let k5 = eval(
            &combine(&x, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            &mut nfe,
            t,
        )?;
        let k6 = eval(
            &combine(&x, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
            &mut nfe,
            t,
        )?;
        let x_new = combine(&x, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let k7 = eval(&x_new, &mut nfe, t)?;
        let err_vec = combine(
            &Array2::zeros(x.raw_dim()),
            h,
            &[(E1, &k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)],
        );
        let n = x.len().max(1) as f64;
        let sum: f64 = err_vec
            .iter()
            .zip(x.iter().zip(&x_new))
            .map(|(&e, (&a, &b))| (e / (cfg.atol + cfg.rtol * a.abs().max(b.abs()))).powi(2))
            .sum();
        let err = (sum / n).sqrt();

        if err <= 1.0 && err.is_finite() {
            if !all_finite(&x_new) {
                return Err(Error::NonFinite { step: accepted + 1 });
            }
            accepted += 1;
            t = if last { t_end } else { t + h };
            x = x_new;
            k1 = k7;
            if record || t >= t_end {
                times.push(t);
                states.push(x.clone());
            }
            let fac = if err == 0.0 {
                FAC_MAX
            } else {
                (SAFETY * err.powf(-PI_ALPHA) * err_old.powf(PI_BETA)).clamp(FAC_MIN, FAC_MAX)
            };
            err_old = err.max(1e-4);
            h *= fac;
        } else {
            rejected += 1;
            let fac = if err.is_finite() {
                (SAFETY * err.powf(-PI_ALPHA)).clamp(FAC_MIN, 1.0)
            } else {
                FAC_MIN
            };
            h *= fac;
        }
    }

    Ok(Trajectory {
        times,
        states,
        nfe,
        accepted,
        rejected,
    })
}
