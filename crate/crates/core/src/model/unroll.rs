use ndarray::{Array1, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::{CouplingMode, ModelConfig, ModelParams};
use crate::coupling::{
    attention_backward, attention_support, compute_attention_cached, standard, uniform_coupling, AttentionCache,
    CouplingMatrix,
};
use crate::dynamics::{sin_cos, sine_coupling_from, DynamicsKind};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Row-compressed copy of a (typically sparse, binary) feature matrix.
#[derive(Debug, Clone)]
pub struct SparseRows {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    ncols: usize,
}

impl SparseRows {
    pub fn from_dense(v: &Array2<f64>) -> Self {
        let mut offsets = vec![0];
        let (mut cols, mut vals) = (Vec::new(), Vec::new());
        for row in v.rows() {
            for (j, &x) in row.iter().enumerate() {
                if x != 0.0 {
                    cols.push(j);
                    vals.push(x);
                }
            }
            offsets.push(cols.len());
        }
        Self {
            offsets,
            cols,
            vals,
            ncols: v.ncols(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `V Wᵀ + b` for `W` of shape d × f.
    pub fn affine(&self, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
        let d = w.nrows();
        let wt = w.t().as_standard_layout().into_owned();
        let ws = wt.as_slice().expect("standard layout");
        let mut out = Array2::zeros((self.nrows(), d));
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let r = row.as_slice_mut().expect("standard layout");
            r.copy_from_slice(b.as_slice().expect("contiguous"));
            for e in self.offsets[i]..self.offsets[i + 1] {
                let (j, v) = (self.cols[e], self.vals[e]);
                for (o, &x) in r.iter_mut().zip(&ws[j * d..(j + 1) * d]) {
                    *o += v * x;
                }
            }
        }
        out
    }

    /// Gradients of [`SparseRows::affine`]: `(Gᵀ V, column sums of G)`.
    pub fn affine_backward(&self, g: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
        let d = g.ncols();
        let mut gwt = Array2::<f64>::zeros((self.ncols, d));
        let gs = gwt.as_slice_mut().expect("fresh array");
        for (i, row) in g.rows().into_iter().enumerate() {
            for e in self.offsets[i]..self.offsets[i + 1] {
                let (j, v) = (self.cols[e], self.vals[e]);
                for (o, &x) in gs[j * d..(j + 1) * d].iter_mut().zip(row) {
                    *o += v * x;
                }
            }
        }
        (gwt.t().as_standard_layout().into_owned(), g.sum_axis(Axis(0)))
    }
}

/// Per-graph data reused across forward passes.
#[derive(Debug, Clone)]
pub struct PreparedGraph<'a> {
    pub graph: &'a Graph,
    pub features: SparseRows,
    pub support: CouplingMatrix,
    uniform: CouplingMatrix,
}

impl<'a> PreparedGraph<'a> {
    pub fn new(graph: &'a Graph) -> Self {
        Self {
            graph,
            features: SparseRows::from_dense(graph.features()),
            support: attention_support(graph),
            uniform: uniform_coupling(graph, true).expect("self-loops keep every row nonempty"),
        }
    }
}

/// Loss, logits and accuracy over one mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss: f64,
    pub logits: Array2<f64>,
    pub accuracy: f64,
}

/// Everything the backward pass needs from one forward unroll.
#[derive(Debug, Clone)]
pub struct UnrollTape {
    config: ModelConfig,
    x0: Array2<f64>,
    omega: Option<Array2<f64>>,
    dropout: Option<Array2<f64>>,
    coupling: CouplingMatrix,
    attn_cache: Option<AttentionCache>,
    steps: Vec<f64>,
    stride: usize,
    checkpoints: Vec<Array2<f64>>,
    complete: bool,
    x_final: Array2<f64>,
    logits: Array2<f64>,
}

impl UnrollTape {
    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn coupling(&self) -> &CouplingMatrix {
        &self.coupling
    }

    /// X(0) after dropout; also the natural frequencies when tied.
    pub fn initial_state(&self) -> &Array2<f64> {
        &self.x0
    }

    pub fn final_state(&self) -> &Array2<f64> {
        &self.x_final
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    /// All states `Z^0 … Z^M` with their times, when the unroll kept every
    /// step.
    pub fn states(&self) -> Option<(Vec<f64>, Vec<Array2<f64>>)> {
        if !self.complete || self.stride != 1 {
            return None;
        }
        let mut times = vec![0.0];
        let mut t = 0.0;
        for h in &self.steps {
            t += h;
            times.push(t);
        }
        if !self.steps.is_empty() {
            *times.last_mut().expect("nonempty") = self.config.t_end;
        }
        let mut states = self.checkpoints.clone();
        states.push(self.x_final.clone());
        Some((times, states))
    }
}

struct Field<'p> {
    kind: DynamicsKind,
    k: f64,
    alpha: f64,
    beta: f64,
    omega: &'p Array2<f64>,
    x0: &'p Array2<f64>,
    coupling: &'p CouplingMatrix,
}

impl Field<'_> {
    fn eval(&self, x: &Array2<f64>) -> Array2<f64> {
        match self.kind {
            DynamicsKind::Kuramoto | DynamicsKind::KuramotoIdentical => {
                let (s, c) = sin_cos(x);
                let mut out = sine_coupling_from(self.coupling, &s, &c);
                out *= self.k;
                if self.kind == DynamicsKind::Kuramoto {
                    out += self.omega;
                }
                out
            }
            DynamicsKind::GrandLinear => self.coupling.matmul(x.view()) - x,
            DynamicsKind::GrandModified => {
                let mut out = self.coupling.matmul(x.view()) - x;
                out *= self.alpha;
                out.scaled_add(self.beta, self.x0);
                out
            }
        }
    }

    fn step(&self, x: &Array2<f64>, h: f64) -> Array2<f64> {
        let mut next = self.eval(x);
        next *= h;
        next += x;
        next
    }
}

/// Accumulators filled while walking the tape backwards.
struct Adjoint {
    coupling_values: Vec<f64>,
    omega: Array2<f64>,
    x0: Array2<f64>,
    alpha: f64,
    beta: f64,
}

impl Field<'_> {
    /// Maps ∂L/∂X^{m+1} to ∂L/∂X^m through one Euler step from `x`.
    fn step_backward(&self, x: &Array2<f64>, g: &Array2<f64>, h: f64, adj: &mut Adjoint) -> Array2<f64> {
        let a = self.coupling;
        let (n, d) = x.dim();
        match self.kind {
            DynamicsKind::Kuramoto | DynamicsKind::KuramotoIdentical => {
                let (s, c) = sin_cos(x);
                let hk = h * self.k;
                let mut out = g.clone();
                let mut t1 = Array2::<f64>::zeros((n, d));
                let mut t2 = Array2::<f64>::zeros((n, d));
                let (ss, cs) = (s.as_slice().expect("fresh"), c.as_slice().expect("fresh"));
                let gs = g.as_slice().expect("standard layout");
                let os = out.as_slice_mut().expect("fresh");
                let t1s = t1.as_slice_mut().expect("fresh");
                let t2s = t2.as_slice_mut().expect("fresh");
                let (mut gci, mut gsi) = (vec![0.0; d], vec![0.0; d]);
                let (mut p, mut q) = (vec![0.0; d], vec![0.0; d]);
                for i in 0..n {
                    let (si, ci, gi) = (
                        &ss[i * d..(i + 1) * d],
                        &cs[i * d..(i + 1) * d],
                        &gs[i * d..(i + 1) * d],
                    );
                    for k in 0..d {
                        gci[k] = gi[k] * ci[k];
                        gsi[k] = gi[k] * si[k];
                    }
                    p.fill(0.0);
                    q.fill(0.0);
                    let (cols, vals) = a.row(i);
                    let base = a.offsets()[i];
                    for (e, (&j, &w)) in cols.iter().zip(vals).enumerate() {
                        let sj = &ss[j * d..][..d];
                        let cj = &cs[j * d..][..d];
                        let t1j = &mut t1s[j * d..][..d];
                        let t2j = &mut t2s[j * d..][..d];
                        let (p, q) = (&mut p[..d], &mut q[..d]);
                        let (gci, gsi) = (&gci[..d], &gsi[..d]);
                        let mut acc = 0.0;
                        for k in 0..d {
                            p[k] += w * sj[k];
                            q[k] += w * cj[k];
                            t1j[k] += w * gci[k];
                            t2j[k] += w * gsi[k];
                            acc += gci[k] * sj[k] - gsi[k] * cj[k];
                        }
                        adj.coupling_values[base + e] += hk * acc;
                    }
                    for (k, o) in os[i * d..(i + 1) * d].iter_mut().enumerate() {
                        *o -= hk * (gci[k] * q[k] + gsi[k] * p[k]);
                    }
                }
                if self.kind == DynamicsKind::Kuramoto {
                    adj.omega.scaled_add(h, g);
                }
                for (((o, &s), &c), (&t1, &t2)) in os.iter_mut().zip(ss).zip(cs).zip(t1s.iter().zip(t2s.iter())) {
                    *o += hk * (c * t1 + s * t2);
                }
                out
            }
            DynamicsKind::GrandLinear | DynamicsKind::GrandModified => {
                let scale = if self.kind == DynamicsKind::GrandModified {
                    self.alpha
                } else {
                    1.0
                };
                let xs = x.as_slice().expect("standard layout");
                let gs = g.as_slice().expect("standard layout");
                for i in 0..n {
                    let gi = &gs[i * d..(i + 1) * d];
                    let (cols, _) = a.row(i);
                    let base = a.offsets()[i];
                    for (e, &j) in cols.iter().enumerate() {
                        let xj = &xs[j * d..(j + 1) * d];
                        let acc: f64 = gi.iter().zip(xj).map(|(u, v)| u * v).sum();
                        adj.coupling_values[base + e] += h * scale * acc;
                    }
                }
                if self.kind == DynamicsKind::GrandModified {
                    let diff = a.matmul(x.view()) - x;
                    adj.alpha += h * (g * &diff).sum();
                    adj.beta += h * (g * self.x0).sum();
                    adj.x0.scaled_add(h * self.beta, g);
                }
                let t = a.matmul_transpose(g.view());
                let mut out = g.clone();
                Zip::from(&mut out).and(&t).for_each(|o, &t| *o += h * scale * (t - *o));
                out
            }
        }
    }
}

fn check_graph(prepared: &PreparedGraph<'_>, p: &ModelParams) -> Result<()> {
    if prepared.features.ncols() != p.input_dim() {
        return Err(Error::Dimension(format!(
            "graph has {} features, encoder expects {}",
            prepared.features.ncols(),
            p.input_dim()
        )));
    }
    Ok(())
}

/// `X(0) = Ω = V W_encᵀ + b_enc`.
pub fn encode(g: &Graph, p: &ModelParams) -> Result<Array2<f64>> {
    let prepared = PreparedGraph::new(g);
    check_graph(&prepared, p)?;
    Ok(prepared.features.affine(&p.enc_w, &p.enc_b))
}

/// Forward unroll keeping the tape needed by [`backward`].
pub fn forward(g: &Graph, p: &ModelParams, dropout_mask: Option<&Array2<f64>>) -> Result<UnrollTape> {
    forward_with(&PreparedGraph::new(g), p, dropout_mask, true)
}

/// Forward unroll on a prepared graph. With `keep_tape = false` only the
/// final state and logits are retained (inference).
pub fn forward_with(
    prepared: &PreparedGraph<'_>,
    p: &ModelParams,
    dropout_mask: Option<&Array2<f64>>,
    keep_tape: bool,
) -> Result<UnrollTape> {
    p.validate()?;
    check_graph(prepared, p)?;
    let cfg = p.config;
    let mut x0 = prepared.features.affine(&p.enc_w, &p.enc_b);
    if let Some(mask) = dropout_mask {
        if mask.dim() != x0.dim() {
            return Err(Error::Dimension(format!(
                "dropout mask {:?} vs state {:?}",
                mask.dim(),
                x0.dim()
            )));
        }
        x0 *= mask;
    }
    let (coupling, attn_cache) = match cfg.coupling {
        CouplingMode::Attention => {
            let (a, cache) = compute_attention_cached(&x0, &p.attn, &prepared.support)?;
            (a, Some(cache))
        }
        CouplingMode::Uniform => (prepared.uniform.clone(), None),
    };
    let omega = match (&p.omega_w, &p.omega_b) {
        (Some(w), Some(b)) if cfg.dynamics == DynamicsKind::Kuramoto => Some(prepared.features.affine(w, b)),
        _ => None,
    };
    let steps = cfg.step_sizes();
    let stride = cfg.stride();
    let field = Field {
        kind: cfg.dynamics,
        k: cfg.k,
        alpha: p.alpha(),
        beta: p.beta,
        omega: omega.as_ref().unwrap_or(&x0),
        x0: &x0,
        coupling: &coupling,
    };
    let mut checkpoints = Vec::new();
    let mut x = x0.clone();
    for (m, &h) in steps.iter().enumerate() {
        if keep_tape && m % stride == 0 {
            checkpoints.push(x.clone());
        }
        x = field.step(&x, h);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: m + 1 });
        }
    }
    let logits = standard(x.dot(&p.dec_w.t())) + &p.dec_b;
    Ok(UnrollTape {
        config: cfg,
        x0,
        omega,
        dropout: dropout_mask.cloned(),
        coupling,
        attn_cache,
        steps,
        stride,
        checkpoints,
        complete: keep_tape,
        x_final: x,
        logits,
    })
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row /= total;
    }
    out
}

fn check_mask(labels: &[usize], mask: &[usize], logits: &Array2<f64>) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    if labels.len() != logits.nrows() {
        return Err(Error::RowMismatch {
            what: "labels",
            got: labels.len(),
            expected: logits.nrows(),
        });
    }
    for &i in mask {
        if i >= logits.nrows() {
            return Err(Error::IndexOutOfRange {
                index: i,
                n: logits.nrows(),
            });
        }
        if labels[i] >= logits.ncols() {
            return Err(Error::IndexOutOfRange {
                index: labels[i],
                n: logits.ncols(),
            });
        }
    }
    Ok(())
}

/// Mean negative log-likelihood of the true class over `mask`.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize], mask: &[usize]) -> Result<f64> {
    check_mask(labels, mask, logits)?;
    let mut total = 0.0;
    for &i in mask {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[labels[i]];
    }
    Ok(total / mask.len() as f64)
}

/// Loss and `∂loss/∂logits` (zero outside the mask).
pub fn cross_entropy_grad(logits: &Array2<f64>, labels: &[usize], mask: &[usize]) -> Result<(f64, Array2<f64>)> {
    let loss = cross_entropy(logits, labels, mask)?;
    let probs = softmax_rows(logits);
    let mut grad = Array2::zeros(logits.raw_dim());
    let scale = 1.0 / mask.len() as f64;
    for &i in mask {
        let mut row = grad.row_mut(i);
        row.assign(&probs.row(i));
        row[labels[i]] -= 1.0;
        row *= scale;
    }
    Ok((loss, grad))
}

/// Fraction of `mask` whose argmax (lowest index on ties) equals the label.
pub fn accuracy(logits: &Array2<f64>, labels: &[usize], mask: &[usize]) -> Result<f64> {
    check_mask(labels, mask, logits)?;
    let hits = mask
        .iter()
        .filter(|&&i| {
            let row = logits.row(i);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best == labels[i]
        })
        .count();
    Ok(hits as f64 / mask.len() as f64)
}

/// Exact gradients of the discrete computation given `∂L/∂logits`.
pub fn backward(
    tape: &UnrollTape,
    prepared: &PreparedGraph<'_>,
    p: &ModelParams,
    grad_logits: &Array2<f64>,
) -> Result<ModelParams> {
    if !tape.complete {
        return Err(Error::IncompleteTape("forward ran without keeping the tape".into()));
    }
    if grad_logits.dim() != tape.logits.dim() {
        return Err(Error::Dimension(format!(
            "logit gradient {:?} vs logits {:?}",
            grad_logits.dim(),
            tape.logits.dim()
        )));
    }
    let cfg = tape.config;
    let mut grads = p.zeros_like();
    grads.dec_w = standard(grad_logits.t().dot(&tape.x_final));
    grads.dec_b = grad_logits.sum_axis(Axis(0));
    let mut g = standard(grad_logits.dot(&p.dec_w));

    let field = Field {
        kind: cfg.dynamics,
        k: cfg.k,
        alpha: p.alpha(),
        beta: p.beta,
        omega: tape.omega.as_ref().unwrap_or(&tape.x0),
        x0: &tape.x0,
        coupling: &tape.coupling,
    };
    let mut adj = Adjoint {
        coupling_values: vec![0.0; tape.coupling.nnz()],
        omega: Array2::zeros(tape.x0.raw_dim()),
        x0: Array2::zeros(tape.x0.raw_dim()),
        alpha: 0.0,
        beta: 0.0,
    };
    let m_total = tape.steps.len();
    let stride = tape.stride;
    for (seg, start) in tape.checkpoints.iter().enumerate().rev() {
        let lo = seg * stride;
        let hi = (lo + stride).min(m_total);
        let mut states = Vec::with_capacity(hi - lo);
        states.push(start.clone());
        for m in lo..hi.saturating_sub(1) {
            let next = field.step(states.last().expect("nonempty"), tape.steps[m]);
            states.push(next);
        }
        for m in (lo..hi).rev() {
            g = field.step_backward(&states[m - lo], &g, tape.steps[m], &mut adj);
        }
    }

    let mut g_x0 = g + &adj.x0;
    match (&p.omega_w, &p.omega_b) {
        (Some(_), Some(_)) if cfg.dynamics == DynamicsKind::Kuramoto => {
            let (w, b) = prepared.features.affine_backward(&adj.omega);
            grads.omega_w = Some(w);
            grads.omega_b = Some(b);
        }
        _ => g_x0 += &adj.omega,
    }
    if let Some(cache) = &tape.attn_cache {
        let ag = attention_backward(&tape.x0, &p.attn, &prepared.support, cache, &adj.coupling_values);
        g_x0 += &ag.x0;
        grads.attn.w_k = ag.w_k;
        grads.attn.w_q = ag.w_q;
    }
    if let Some(mask) = &tape.dropout {
        g_x0 *= mask;
    }
    let (w, b) = prepared.features.affine_backward(&g_x0);
    grads.enc_w = w;
    grads.enc_b = b;
    if cfg.dynamics == DynamicsKind::GrandModified {
        let a = p.alpha();
        grads.alpha_raw = adj.alpha * a * (1.0 - a);
        grads.beta = if cfg.beta_trainable { adj.beta } else { 0.0 };
    }
    Ok(grads)
}

/// Forward, cross-entropy over `mask`, and backward in one call.
pub fn loss_and_grad(
    prepared: &PreparedGraph<'_>,
    p: &ModelParams,
    mask: &[usize],
    dropout_mask: Option<&Array2<f64>>,
) -> Result<(LossReport, ModelParams)> {
    let tape = forward_with(prepared, p, dropout_mask, true)?;
    let labels = prepared.graph.labels();
    let (loss, grad_logits) = cross_entropy_grad(&tape.logits, labels, mask)?;
    let grads = backward(&tape, prepared, p, &grad_logits)?;
    let acc = accuracy(&tape.logits, labels, mask)?;
    Ok((
        LossReport {
            loss,
            logits: tape.logits,
            accuracy: acc,
        },
        grads,
    ))
}
