//! Right-hand sides of the node dynamics: Kuramoto with natural
//! frequencies, identical-frequency Kuramoto, linear graph diffusion and
//! diffusion with a source term, plus the phase-coupling energy.
//!
//! All interactions act channel by channel; states are plain reals and are
//! never wrapped modulo 2π.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::coupling::CouplingMatrix;
use crate::error::{Error, Result};

/// Node feature matrix `X(t)`, n × d.
pub type OscillatorState = Array2<f64>;
/// Per-node natural frequencies `Ω`, same shape as the state.
pub type NaturalFrequencies = Array2<f64>;

/// Which vector field to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsKind {
    Kuramoto,
    KuramotoIdentical,
    GrandLinear,
    GrandModified,
}

impl DynamicsKind {
    pub fn name(self) -> &'static str {
        match self {
            DynamicsKind::Kuramoto => "kuramoto",
            DynamicsKind::KuramotoIdentical => "kuramoto_identical",
            DynamicsKind::GrandLinear => "grand_linear",
            DynamicsKind::GrandModified => "grand_modified",
        }
    }
}

impl std::str::FromStr for DynamicsKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kuramoto" => Ok(DynamicsKind::Kuramoto),
            "kuramoto_identical" => Ok(DynamicsKind::KuramotoIdentical),
            "grand_linear" => Ok(DynamicsKind::GrandLinear),
            "grand_modified" => Ok(DynamicsKind::GrandModified),
            other => Err(Error::InvalidArgument(format!("unknown dynamics {other:?}"))),
        }
    }
}

impl std::fmt::Display for DynamicsKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Vector field parameters. Each variant carries exactly the data its
/// right-hand side needs.
#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    /// `ẋ_i = ω_i + K Σ_j a_ij sin(x_j − x_i)`
    Kuramoto { k: f64, omega: NaturalFrequencies },
    /// `ẋ_i = K Σ_j a_ij sin(x_j − x_i)`
    KuramotoIdentical { k: f64 },
    /// `Ẋ = (Â − I) X`
    GrandLinear,
    /// `Ẋ = α (Â − I) X + β X(0)`
    GrandModified { alpha: f64, beta: f64, x0: OscillatorState },
}

impl Dynamics {
    pub fn kind(&self) -> DynamicsKind {
        match self {
            Dynamics::Kuramoto { .. } => DynamicsKind::Kuramoto,
            Dynamics::KuramotoIdentical { .. } => DynamicsKind::KuramotoIdentical,
            Dynamics::GrandLinear => DynamicsKind::GrandLinear,
            Dynamics::GrandModified { .. } => DynamicsKind::GrandModified,
        }
    }
}

/// A vector field together with its (frozen) coupling matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsSpec {
    pub dynamics: Dynamics,
    pub coupling: CouplingMatrix,
}

impl DynamicsSpec {
    pub fn new(dynamics: Dynamics, coupling: CouplingMatrix) -> Result<Self> {
        let n = coupling.n();
        match &dynamics {
            Dynamics::Kuramoto { k, omega } => {
                check_k(*k)?;
                if omega.nrows() != n {
                    return Err(Error::Dimension(format!(
                        "omega has {} rows for {n} nodes",
                        omega.nrows()
                    )));
                }
                if omega.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument("non-finite natural frequency".into()));
                }
            }
            Dynamics::KuramotoIdentical { k } => check_k(*k)?,
            Dynamics::GrandLinear => {}
            Dynamics::GrandModified { x0, .. } => {
                if x0.nrows() != n {
                    return Err(Error::Dimension(format!("x0 has {} rows for {n} nodes", x0.nrows())));
                }
            }
        }
        Ok(Self { dynamics, coupling })
    }

    pub fn kind(&self) -> DynamicsKind {
        self.dynamics.kind()
    }

    /// Time derivative at `x`, dispatching on the dynamics kind.
    pub fn rhs(&self, x: &OscillatorState) -> Result<OscillatorState> {
        match self.kind() {
            DynamicsKind::Kuramoto => rhs_kuramoto(x, self),
            DynamicsKind::KuramotoIdentical => rhs_identical(x, self),
            DynamicsKind::GrandLinear => rhs_grand_linear(x, self),
            DynamicsKind::GrandModified => rhs_grand_modified(x, self),
        }
    }
}

fn check_k(k: f64) -> Result<()> {
    if k > 0.0 && k.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "coupling strength must be > 0, got {k}"
        )))
    }
}

fn wrong(spec: &DynamicsSpec, wanted: &'static str) -> Error {
    Error::WrongDynamics {
        got: spec.kind().name(),
        wanted,
    }
}

fn check_state(x: &OscillatorState, a: &CouplingMatrix) -> Result<()> {
    if x.nrows() != a.n() {
        return Err(Error::Dimension(format!(
            "state has {} rows, coupling is {}x{}",
            x.nrows(),
            a.n(),
            a.n()
        )));
    }
    Ok(())
}

/// Element-wise `(sin X, cos X)`.
pub fn sin_cos(x: &OscillatorState) -> (Array2<f64>, Array2<f64>) {
    let mut s = Array2::zeros(x.raw_dim());
    let mut c = Array2::zeros(x.raw_dim());
    let x = x.as_standard_layout();
    crate::fastmath::sin_cos_slice(
        x.as_slice().expect("standard layout"),
        s.as_slice_mut().expect("fresh array"),
        c.as_slice_mut().expect("fresh array"),
    );
    (s, c)
}

/// `(Â sin X, Â cos X)` in one pass over the nonzeros.
pub(crate) fn weighted_phasors(a: &CouplingMatrix, s: &Array2<f64>, c: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (n, d) = s.dim();
    let mut p = Array2::zeros((n, d));
    let mut q = Array2::zeros((n, d));
    let ss = s.as_slice().expect("standard layout");
    let cs = c.as_slice().expect("standard layout");
    let ps = p.as_slice_mut().expect("fresh array");
    let qs = q.as_slice_mut().expect("fresh array");
    for i in 0..n {
        let (cols, vals) = a.row(i);
        let pi = &mut ps[i * d..(i + 1) * d];
        let qi = &mut qs[i * d..(i + 1) * d];
        for (&j, &w) in cols.iter().zip(vals) {
            let sj = &ss[j * d..(j + 1) * d];
            let cj = &cs[j * d..(j + 1) * d];
            for k in 0..d {
                pi[k] += w * sj[k];
                qi[k] += w * cj[k];
            }
        }
    }
    (p, q)
}

/// `Σ_j a_ij sin(x_j − x_i)` per channel, evaluated through
/// `sin(x_j − x_i) = sin x_j cos x_i − cos x_j sin x_i` so that only n·d
/// trigonometric evaluations are needed.
pub fn sine_coupling(a: &CouplingMatrix, x: &OscillatorState) -> Result<Array2<f64>> {
    check_state(x, a)?;
    let x = x.as_standard_layout().into_owned();
    let (s, c) = sin_cos(&x);
    Ok(sine_coupling_from(a, &s, &c))
}

pub(crate) fn sine_coupling_from(a: &CouplingMatrix, s: &Array2<f64>, c: &Array2<f64>) -> Array2<f64> {
    let (n, d) = s.dim();
    let mut out = Array2::zeros((n, d));
    let ss = s.as_slice().expect("standard layout");
    let cs = c.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("fresh array");
    let mut p = vec![0.0; d];
    let mut q = vec![0.0; d];
    for i in 0..n {
        p.fill(0.0);
        q.fill(0.0);
        let (cols, vals) = a.row(i);
        for (&j, &w) in cols.iter().zip(vals) {
            let sj = &ss[j * d..(j + 1) * d];
            let cj = &cs[j * d..(j + 1) * d];
            for k in 0..d {
                p[k] += w * sj[k];
                q[k] += w * cj[k];
            }
        }
        let si = &ss[i * d..(i + 1) * d];
        let ci = &cs[i * d..(i + 1) * d];
        for (k, o) in os[i * d..(i + 1) * d].iter_mut().enumerate() {
            *o = ci[k] * p[k] - si[k] * q[k];
        }
    }
    out
}

/// KuramotoGNN vector field `ω_i + K Σ_j a_ij sin(x_j − x_i)`.
pub fn rhs_kuramoto(x: &OscillatorState, spec: &DynamicsSpec) -> Result<OscillatorState> {
    let Dynamics::Kuramoto { k, omega } = &spec.dynamics else {
        return Err(wrong(spec, "rhs_kuramoto"));
    };
    if omega.dim() != x.dim() {
        return Err(Error::Dimension(format!(
            "omega is {:?}, state is {:?}",
            omega.dim(),
            x.dim()
        )));
    }
    let mut out = sine_coupling(&spec.coupling, x)?;
    out *= *k;
    out += omega;
    Ok(out)
}

/// The same field written with the local order parameter
/// `r_i e^{iφ_i} = Σ_j a_ij e^{i x_j}`: `ẋ_i = ω_i + K r_i sin(φ_i − x_i)`.
pub fn rhs_kuramoto_local_order(x: &OscillatorState, spec: &DynamicsSpec) -> Result<OscillatorState> {
    let Dynamics::Kuramoto { k, omega } = &spec.dynamics else {
        return Err(wrong(spec, "rhs_kuramoto_local_order"));
    };
    if omega.dim() != x.dim() {
        return Err(Error::Dimension(format!(
            "omega is {:?}, state is {:?}",
            omega.dim(),
            x.dim()
        )));
    }
    check_state(x, &spec.coupling)?;
    let x = x.as_standard_layout().into_owned();
    let (r, phi) = local_order_parameter(&spec.coupling, &x);
    let mut out = omega.clone();
    Zip::from(&mut out)
        .and(&r)
        .and(&phi)
        .and(&x)
        .for_each(|o, &r, &phi, &x| *o += k * r * (phi - x).sin());
    Ok(out)
}

/// Per-node, per-channel local order parameter `(r, φ)` of
/// `Σ_j a_ij e^{i x_j}`.
pub fn local_order_parameter(a: &CouplingMatrix, x: &OscillatorState) -> (Array2<f64>, Array2<f64>) {
    let x = x.as_standard_layout().into_owned();
    let (s, c) = sin_cos(&x);
    let (im, re) = weighted_phasors(a, &s, &c);
    let r = Zip::from(&re).and(&im).map_collect(|&re, &im| re.hypot(im));
    let phi = Zip::from(&re).and(&im).map_collect(|&re, &im| im.atan2(re));
    (r, phi)
}

/// Identical-frequency Kuramoto field `K Σ_j a_ij sin(x_j − x_i)`.
pub fn rhs_identical(x: &OscillatorState, spec: &DynamicsSpec) -> Result<OscillatorState> {
    let Dynamics::KuramotoIdentical { k } = &spec.dynamics else {
        return Err(wrong(spec, "rhs_identical"));
    };
    let mut out = sine_coupling(&spec.coupling, x)?;
    out *= *k;
    Ok(out)
}

/// Linear diffusion `(Â − I) X`.
pub fn rhs_grand_linear(x: &OscillatorState, spec: &DynamicsSpec) -> Result<OscillatorState> {
    if spec.kind() != DynamicsKind::GrandLinear {
        return Err(wrong(spec, "rhs_grand_linear"));
    }
    check_state(x, &spec.coupling)?;
    Ok(spec.coupling.matmul(x.view()) - x)
}

/// Diffusion with source `α (Â − I) X + β X(0)`.
pub fn rhs_grand_modified(x: &OscillatorState, spec: &DynamicsSpec) -> Result<OscillatorState> {
    let Dynamics::GrandModified { alpha, beta, x0 } = &spec.dynamics else {
        return Err(wrong(spec, "rhs_grand_modified"));
    };
    check_state(x, &spec.coupling)?;
    if x0.dim() != x.dim() {
        return Err(Error::Dimension(format!(
            "x0 is {:?}, state is {:?}",
            x0.dim(),
            x.dim()
        )));
    }
    let mut out = spec.coupling.matmul(x.view()) - x;
    out *= *alpha;
    out.scaled_add(*beta, x0);
    Ok(out)
}

/// Phase-coupling energy `U = Σ_i Σ_j a_ij (1 − cos(x_i − x_j))` for every
/// channel, summed over ordered pairs on the support.
pub fn energy_u(x: &OscillatorState, a: &CouplingMatrix) -> Vec<f64> {
    let d = x.ncols();
    let mut u = vec![0.0; d];
    for i in 0..a.n() {
        let (cols, vals) = a.row(i);
        for (&j, &w) in cols.iter().zip(vals) {
            for (k, uk) in u.iter_mut().enumerate() {
                *uk += w * (1.0 - (x[[i, k]] - x[[j, k]]).cos());
            }
        }
    }
    u
}

/// Outcome of [`energy_gradient_identity_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientIdentity {
    /// `max |½ ∂U/∂x − (−Ẋ/K)|` over all entries.
    pub residual: f64,
    /// Whether the coupling is symmetric, the hypothesis under which the
    /// residual is expected to vanish.
    pub symmetric: bool,
}

/// Compares a central finite-difference gradient of the energy with the
/// identical-Kuramoto field. Because [`energy_u`] sums over ordered pairs,
/// each unordered pair appears twice and the identity reads
/// `½ ∇U = −Ẋ / K` for symmetric weights.
pub fn energy_gradient_identity_check(x: &OscillatorState, spec: &DynamicsSpec, h: f64) -> Result<GradientIdentity> {
    let Dynamics::KuramotoIdentical { k } = &spec.dynamics else {
        return Err(wrong(spec, "energy_gradient_identity_check"));
    };
    let xdot = rhs_identical(x, spec)?;
    let total = |x: &OscillatorState| energy_u(x, &spec.coupling).iter().sum::<f64>();
    let mut probe = x.to_owned();
    let mut residual = 0.0_f64;
    for ((i, kk), &v) in x.indexed_iter() {
        probe[[i, kk]] = v + h;
        let up = total(&probe);
        probe[[i, kk]] = v - h;
        let down = total(&probe);
        probe[[i, kk]] = v;
        let half_grad = 0.5 * (up - down) / (2.0 * h);
        residual = residual.max((half_grad + xdot[[i, kk]] / k).abs());
    }
    Ok(GradientIdentity {
        residual,
        symmetric: spec.coupling.is_symmetric(1e-12),
    })
}
