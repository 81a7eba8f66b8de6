//! Scalar, fully connected unroll used to study gradient growth with depth:
//! `x_i^t = x_i^{t−1} + Δt (x_i^0 + (1/n) Σ_j sin(x_j^{t−1} − x_i^{t−1}))`,
//! `X^0 = V W`, loss `J = (1/2n) Σ_i (x_i^M − x̂_i)²`.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyInstance {
    /// Inputs, n × f.
    pub v: Array2<f64>,
    /// Encoder column, length f.
    pub w: Array1<f64>,
    /// Regression targets, length n.
    pub x_hat: Array1<f64>,
    pub dt: f64,
    pub steps: usize,
}

impl ToyInstance {
    /// Entries of V, W and x̂ drawn from U(−1, 1).
    pub fn random<R: Rng>(n: usize, f: usize, steps: usize, dt: f64, rng: &mut R) -> Self {
        let mut u = || rng.random_range(-1.0..1.0);
        let v = Array2::from_shape_simple_fn((n, f), &mut u);
        let w = Array1::from_shape_simple_fn(f, &mut u);
        let x_hat = Array1::from_shape_simple_fn(n, &mut u);
        Self { v, w, x_hat, dt, steps }
    }

    pub fn n(&self) -> usize {
        self.v.nrows()
    }

    pub fn x0(&self) -> Array1<f64> {
        self.v.dot(&self.w)
    }

    fn validate(&self) -> Result<()> {
        if self.v.nrows() == 0 || self.v.ncols() != self.w.len() || self.x_hat.len() != self.v.nrows() {
            return Err(Error::Dimension(format!(
                "V {:?}, W {}, x̂ {}",
                self.v.dim(),
                self.w.len(),
                self.x_hat.len()
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be > 0, got {}", self.dt)));
        }
        Ok(())
    }

    /// `J(W)` at the current encoder column.
    pub fn loss(&self) -> Result<f64> {
        self.validate()?;
        let states = toy_unroll(self.x0().as_slice().expect("contiguous"), self.dt, self.steps);
        let last = states.last().expect("initial state present");
        let n = self.n() as f64;
        Ok(last.iter().zip(&self.x_hat).map(|(x, t)| (x - t).powi(2)).sum::<f64>() / (2.0 * n))
    }
}

fn mean_field_sums(x: &[f64]) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let s: Vec<f64> = x.iter().map(|v| v.sin()).collect();
    let c: Vec<f64> = x.iter().map(|v| v.cos()).collect();
    let (ss, cs) = (s.iter().sum(), c.iter().sum());
    (s, c, ss, cs)
}

/// States `x^0 … x^M` of the scalar recursion.
pub fn toy_unroll(x0: &[f64], dt: f64, steps: usize) -> Vec<Vec<f64>> {
    let n = x0.len() as f64;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.to_vec());
    for _ in 0..steps {
        let x = out.last().expect("nonempty");
        let (s, c, ss, cs) = mean_field_sums(x);
        let next = (0..x.len())
            .map(|i| x[i] + dt * (x0[i] + (c[i] * ss - s[i] * cs) / n))
            .collect();
        out.push(next);
    }
    out
}

/// Exact `∂J/∂W` by reverse accumulation over the recursion. Both the
/// state path and the frequency path (x^0 enters every step) are included.
pub fn toy_gradient(inst: &ToyInstance) -> Result<Array1<f64>> {
    inst.validate()?;
    let x0 = inst.x0();
    let states = toy_unroll(x0.as_slice().expect("contiguous"), inst.dt, inst.steps);
    let n = inst.n() as f64;
    let dt = inst.dt;
    let mut g: Vec<f64> = states[inst.steps]
        .iter()
        .zip(&inst.x_hat)
        .map(|(x, t)| (x - t) / n)
        .collect();
    let mut g_x0 = vec![0.0; g.len()];
    for t in (0..inst.steps).rev() {
        let (s, c, ss, cs) = mean_field_sums(&states[t]);
        let gc: f64 = g.iter().zip(&c).map(|(a, b)| a * b).sum();
        let gsum: f64 = g.iter().zip(&s).map(|(a, b)| a * b).sum();
        for (acc, &gk) in g_x0.iter_mut().zip(&g) {
            *acc += dt * gk;
        }
        g = (0..g.len())
            .map(|k| g[k] + dt / n * (-g[k] * (c[k] * cs + s[k] * ss) + c[k] * gc + s[k] * gsum))
            .collect();
    }
    let total: Array1<f64> = g.iter().zip(&g_x0).map(|(a, b)| a + b).collect();
    Ok(inst.v.t().dot(&total))
}

/// Measured gradient norm against the closed-form depth bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    /// `max_k |∂J/∂W_k|`.
    pub actual: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Evaluates `(1/n)[α(max|x_i^0| + 1) + max|x̂_i|](β + α) β ‖V‖∞` with
/// `α = M Δt`, `β = 1 + Δt/n`, where `‖V‖∞` is the maximum absolute row sum,
/// and compares it with the exact gradient.
pub fn gradient_bound_check(inst: &ToyInstance) -> Result<BoundCheck> {
    let grad = toy_gradient(inst)?;
    let actual = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let n = inst.n() as f64;
    let alpha = inst.steps as f64 * inst.dt;
    let beta = 1.0 + inst.dt / n;
    let max_x0 = inst.x0().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_hat = inst.x_hat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let v_norm = inst
        .v
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let bound = (alpha * (max_x0 + 1.0) + max_hat) * (beta + alpha) * beta * v_norm / n;
    Ok(BoundCheck {
        actual,
        bound,
        holds: actual <= bound * (1.0 + 1e-9),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanishingProbe {
    pub steps: Vec<usize>,
    pub norms: Vec<f64>,
    /// Least-squares slope of `ln norm` against M (per layer).
    pub rate: f64,
}

/// Gradient ∞-norm for each depth in `steps`, keeping V, W, x̂ and Δt fixed.
pub fn vanishing_gradient_probe(inst: &ToyInstance, steps: &[usize]) -> Result<VanishingProbe> {
    if steps.len() < 2 {
        return Err(Error::InvalidArgument("need at least two depths".into()));
    }
    let mut norms = Vec::with_capacity(steps.len());
    for &m in steps {
        let g = toy_gradient(&ToyInstance {
            steps: m,
            ..inst.clone()
        })?;
        norms.push(g.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    }
    let xs: Vec<f64> = steps.iter().map(|&m| m as f64).collect();
    let ys: Vec<f64> = norms.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let k = xs.len() as f64;
    let (xm, ym) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    Ok(VanishingProbe {
        steps: steps.to_vec(),
        norms,
        rate: if sxx > 0.0 { sxy / sxx } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_start_drifts() {
        let states = toy_unroll(&[0.3, 0.3, 0.3], 0.1, 5);
        for (t, x) in states.iter().enumerate() {
            for v in x {
                assert!((v - 0.3 * (1.0 + t as f64 * 0.1)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn hand_step() {
        let states = toy_unroll(&[0.0, 0.1], 0.1, 1);
        let e0 = 0.1 * (0.1f64.sin() / 2.0);
        let e1 = 0.1 + 0.1 * (0.1 + (-0.1f64).sin() / 2.0);
        assert!((states[1][0] - e0).abs() < 1e-15);
        assert!((states[1][1] - e1).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inst = ToyInstance::random(4, 3, 30, 0.05, &mut rng);
        let g = toy_gradient(&inst).unwrap();
        for k in 0..3 {
            let h = 1e-6;
            let mut up = inst.clone();
            up.w[k] += h;
            let mut dn = inst.clone();
            dn.w[k] -= h;
            let fd = (up.loss().unwrap() - dn.loss().unwrap()) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-7 * (1.0 + fd.abs()), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn zero_w_holds() {
        let inst = ToyInstance {
            v: array![[0.5, -1.0], [0.2, 0.3]],
            w: array![0.0, 0.0],
            x_hat: array![0.4, -0.7],
            dt: 0.01,
            steps: 20,
        };
        let b = gradient_bound_check(&inst).unwrap();
        assert!(b.actual.is_finite() && b.bound > 0.0 && b.holds);
    }

    #[test]
    fn zero_v_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut inst = ToyInstance::random(3, 2, 10, 0.01, &mut rng);
        inst.v.fill(0.0);
        let probe = vanishing_gradient_probe(&inst, &[1, 5, 10]).unwrap();
        assert!(probe.norms.iter().all(|&v| v == 0.0));
    }
}
