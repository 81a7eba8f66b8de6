//! Right-stochastic coupling matrices: multi-head scaled dot-product
//! attention over the graph support, plus fixed uniform and Metropolis
//! couplings for pure-oscillator experiments.

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Sparse n×n matrix in CSR form. Rows are sorted by column.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl CouplingMatrix {
    /// Builds a matrix from per-row `(col, value)` lists.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::InvalidArgument(format!("duplicate column {}", w[0].0)));
                }
            }
            for (c, v) in row {
                if c >= n {
                    return Err(Error::IndexOutOfRange { index: c, n });
                }
                cols.push(c);
                values.push(v);
            }
            offsets.push(cols.len());
        }
        Ok(Self { offsets, cols, values })
    }

    /// Same sparsity pattern as `self` with new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} nonzeros",
                values.len(),
                self.values.len()
            )));
        }
        Ok(Self {
            offsets: self.offsets.clone(),
            cols: self.cols.clone(),
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.cols[r.clone()], &self.values[r])
    }

    /// Entry `(i, j)`, zero off the support.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n();
        let mut out = Array2::zeros((n, n));
        for i in 0..n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out[[i, j]] = v;
            }
        }
        out
    }

    /// True when `a_ij == a_ji` within `tol` on the union of both supports.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n()).all(|i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).all(|(&j, &v)| (self.get(j, i) - v).abs() <= tol)
        })
    }

    /// `self · x` for a dense n×d right-hand side.
    pub fn matmul(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let (n, d) = x.dim();
        assert_eq!(n, self.n(), "coupling/state row mismatch");
        let mut out = Array2::zeros((n, d));
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        let os = out.as_slice_mut().expect("fresh array");
        for i in 0..n {
            let acc = &mut os[i * d..(i + 1) * d];
            let (cols, vals) = self.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                let xj = &xs[j * d..(j + 1) * d];
                for (o, &v) in acc.iter_mut().zip(xj) {
                    *o += a * v;
                }
            }
        }
        out
    }

    /// `selfᵀ · x` for a dense n×d right-hand side.
    pub fn matmul_transpose(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let (n, d) = x.dim();
        assert_eq!(n, self.n(), "coupling/state row mismatch");
        let mut out = Array2::zeros((n, d));
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        let os = out.as_slice_mut().expect("fresh array");
        for i in 0..n {
            let xi = &xs[i * d..(i + 1) * d];
            let (cols, vals) = self.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                for (o, &v) in os[j * d..(j + 1) * d].iter_mut().zip(xi) {
                    *o += a * v;
                }
            }
        }
        out
    }

    /// Writes `row,col,value` triples.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "row,col,value")?;
        for i in 0..self.n() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                writeln!(w, "{i},{j},{v:?}")?;
            }
        }
        Ok(())
    }
}

/// True iff every row sums to one within `tol` and no entry is below `-tol`.
/// Rows with empty support fail.
pub fn row_stochastic_check(a: &CouplingMatrix, tol: f64) -> bool {
    (0..a.n()).all(|i| {
        let (_, vals) = a.row(i);
        !vals.is_empty() && vals.iter().all(|&v| v >= -tol) && (vals.iter().sum::<f64>() - 1.0).abs() <= tol
    })
}

/// Divisor applied to attention logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LogitScale {
    /// Divide by `d_k`.
    #[default]
    Dk,
    /// Divide by `sqrt(d_k)`.
    SqrtDk,
}

impl LogitScale {
    pub fn divisor(self, d_k: usize) -> f64 {
        match self {
            LogitScale::Dk => d_k as f64,
            LogitScale::SqrtDk => (d_k as f64).sqrt(),
        }
    }
}

/// Key/query projections for every attention head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    /// Per-head key projections, each `d_k × d`.
    pub w_k: Vec<Array2<f64>>,
    /// Per-head query projections, each `d_k × d`.
    pub w_q: Vec<Array2<f64>>,
    #[serde(default)]
    pub scale: LogitScale,
}

impl AttentionParams {
    /// Glorot-uniform initialisation.
    pub fn init<R: Rng>(heads: usize, d_k: usize, d: usize, scale: LogitScale, rng: &mut R) -> Self {
        let bound = (6.0 / (d_k + d) as f64).sqrt();
        let mut draw = || Array2::from_shape_simple_fn((d_k, d), || rng.random_range(-bound..bound));
        let w_k = (0..heads).map(|_| draw()).collect();
        let w_q = (0..heads).map(|_| draw()).collect();
        Self { w_k, w_q, scale }
    }

    pub fn heads(&self) -> usize {
        self.w_k.len()
    }

    pub fn d_k(&self) -> usize {
        self.w_k.first().map_or(0, |w| w.nrows())
    }

    pub fn input_dim(&self) -> usize {
        self.w_k.first().map_or(0, |w| w.ncols())
    }

    pub fn validate(&self) -> Result<()> {
        if self.w_k.is_empty() || self.w_k.len() != self.w_q.len() {
            return Err(Error::Dimension(format!(
                "{} key heads vs {} query heads",
                self.w_k.len(),
                self.w_q.len()
            )));
        }
        let shape = self.w_k[0].dim();
        if shape.0 == 0 {
            return Err(Error::Dimension("d_k must be >= 1".into()));
        }
        if self.w_k.iter().chain(&self.w_q).any(|w| w.dim() != shape) {
            return Err(Error::Dimension("attention heads differ in shape".into()));
        }
        Ok(())
    }
}

/// Sparsity pattern used for attention: graph out-edges plus a self-loop on
/// every node.
pub fn attention_support(g: &Graph) -> CouplingMatrix {
    let rows = (0..g.num_nodes())
        .map(|i| {
            let mut row: Vec<(usize, f64)> = g.neighbors(i).iter().map(|&j| (j, 0.0)).collect();
            if !g.has_edge(i, i) {
                row.push((i, 0.0));
            }
            row
        })
        .collect();
    CouplingMatrix::from_rows(rows).expect("graph edges are in range and unique")
}

/// Intermediate values kept for differentiating the attention map.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    /// Per-head softmax weights over the support, aligned with nonzeros.
    pub head_weights: Vec<Vec<f64>>,
    /// Per-head keys `X W_Kᵀ` (n × d_k).
    pub keys: Vec<Array2<f64>>,
    /// Per-head queries `X W_Qᵀ` (n × d_k).
    pub queries: Vec<Array2<f64>>,
}

/// Head-averaged softmax attention over each row's support.
pub fn compute_attention(x0: &Array2<f64>, params: &AttentionParams, g: &Graph) -> Result<CouplingMatrix> {
    compute_attention_cached(x0, params, &attention_support(g)).map(|(a, _)| a)
}

/// Attention on an explicit support, returning the cache for the backward
/// pass.
pub fn compute_attention_cached(
    x0: &Array2<f64>,
    params: &AttentionParams,
    support: &CouplingMatrix,
) -> Result<(CouplingMatrix, AttentionCache)> {
    params.validate()?;
    let n = support.n();
    if x0.nrows() != n || x0.ncols() != params.input_dim() {
        return Err(Error::Dimension(format!(
            "state is {}x{}, attention expects {}x{}",
            x0.nrows(),
            x0.ncols(),
            n,
            params.input_dim()
        )));
    }
    let d_k = params.d_k();
    let divisor = params.scale.divisor(d_k);
    let h = params.heads();
    let mut mean = vec![0.0; support.nnz()];
    let mut cache = AttentionCache {
        head_weights: Vec::with_capacity(h),
        keys: Vec::with_capacity(h),
        queries: Vec::with_capacity(h),
    };
    for (w_k, w_q) in params.w_k.iter().zip(&params.w_q) {
        let keys = standard(x0.dot(&w_k.t()));
        let queries = standard(x0.dot(&w_q.t()));
        let ks = keys.as_slice().expect("fresh array");
        let qs = queries.as_slice().expect("fresh array");
        let mut weights = vec![0.0; support.nnz()];
        for i in 0..n {
            let range = support.offsets()[i]..support.offsets()[i + 1];
            if range.is_empty() {
                return Err(Error::EmptySupport(i));
            }
            let ki = &ks[i * d_k..(i + 1) * d_k];
            let mut max = f64::NEG_INFINITY;
            for e in range.clone() {
                let j = support.cols()[e];
                let qj = &qs[j * d_k..(j + 1) * d_k];
                let logit = ki.iter().zip(qj).map(|(a, b)| a * b).sum::<f64>() / divisor;
                weights[e] = logit;
                max = max.max(logit);
            }
            let mut total = 0.0;
            for w in &mut weights[range.clone()] {
                *w = (*w - max).exp();
                total += *w;
            }
            for w in &mut weights[range] {
                *w /= total;
            }
        }
        for (m, w) in mean.iter_mut().zip(&weights) {
            *m += w;
        }
        cache.head_weights.push(weights);
        cache.keys.push(keys);
        cache.queries.push(queries);
    }
    for m in &mut mean {
        *m /= h as f64;
    }
    Ok((support.with_values(mean)?, cache))
}

/// Gradients of a scalar loss through [`compute_attention_cached`].
#[derive(Debug, Clone)]
pub struct AttentionGrad {
    pub x0: Array2<f64>,
    pub w_k: Vec<Array2<f64>>,
    pub w_q: Vec<Array2<f64>>,
}

/// Back-propagates `grad_values` (∂L/∂Â on the nonzeros of `support`)
/// through the head-averaged softmax attention.
pub fn attention_backward(
    x0: &Array2<f64>,
    params: &AttentionParams,
    support: &CouplingMatrix,
    cache: &AttentionCache,
    grad_values: &[f64],
) -> AttentionGrad {
    let n = support.n();
    let d_k = params.d_k();
    let h = params.heads() as f64;
    let divisor = params.scale.divisor(d_k);
    let mut grad_x0 = Array2::zeros(x0.raw_dim());
    let mut g_wk = Vec::with_capacity(params.heads());
    let mut g_wq = Vec::with_capacity(params.heads());
    for l in 0..params.heads() {
        let weights = &cache.head_weights[l];
        let ks = cache.keys[l].as_slice().expect("fresh array");
        let qs = cache.queries[l].as_slice().expect("fresh array");
        let mut g_keys = Array2::<f64>::zeros((n, d_k));
        let mut g_queries = Array2::<f64>::zeros((n, d_k));
        {
            let gk = g_keys.as_slice_mut().expect("fresh array");
            let gq = g_queries.as_slice_mut().expect("fresh array");
            for i in 0..n {
                let range = support.offsets()[i]..support.offsets()[i + 1];
                let dot: f64 = range.clone().map(|e| weights[e] * grad_values[e] / h).sum();
                for e in range {
                    let j = support.cols()[e];
                    let g_logit = weights[e] * (grad_values[e] / h - dot) / divisor;
                    if g_logit == 0.0 {
                        continue;
                    }
                    for k in 0..d_k {
                        gk[i * d_k + k] += g_logit * qs[j * d_k + k];
                        gq[j * d_k + k] += g_logit * ks[i * d_k + k];
                    }
                }
            }
        }
        grad_x0 += &g_keys.dot(&params.w_k[l]);
        grad_x0 += &g_queries.dot(&params.w_q[l]);
        g_wk.push(standard(g_keys.t().dot(x0)));
        g_wq.push(standard(g_queries.t().dot(x0)));
    }
    AttentionGrad {
        x0: grad_x0,
        w_k: g_wk,
        w_q: g_wq,
    }
}

/// Matrix products come back column-major when both operands are; the
/// kernels here index rows as slices.
pub(crate) fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Uniform weights over each row's support (graph out-edges, optionally
/// with self-loops).
pub fn uniform_coupling(g: &Graph, with_self_loops: bool) -> Result<CouplingMatrix> {
    let rows = (0..g.num_nodes())
        .map(|i| {
            let mut cols: Vec<usize> = g.neighbors(i).iter().copied().filter(|&j| j != i).collect();
            if with_self_loops {
                cols.push(i);
            }
            if cols.is_empty() {
                return Err(Error::EmptySupport(i));
            }
            let w = 1.0 / cols.len() as f64;
            Ok(cols.into_iter().map(|j| (j, w)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    CouplingMatrix::from_rows(rows)
}

/// Unit weight on every graph edge, no self-loops: the unnormalised
/// network Kuramoto coupling.
pub fn adjacency_coupling(g: &Graph) -> Result<CouplingMatrix> {
    let rows = (0..g.num_nodes())
        .map(|i| g.neighbors(i).iter().filter(|&&j| j != i).map(|&j| (j, 1.0)).collect())
        .collect();
    CouplingMatrix::from_rows(rows)
}

/// Symmetric, doubly stochastic Metropolis weights
/// `a_ij = 1 / (1 + max(deg_i, deg_j))` with the remaining mass on the
/// diagonal. Requires a symmetric graph.
pub fn metropolis_coupling(g: &Graph) -> Result<CouplingMatrix> {
    if !g.is_symmetric() {
        return Err(Error::InvalidArgument(
            "metropolis weights need a symmetric graph".into(),
        ));
    }
    let n = g.num_nodes();
    let deg: Vec<usize> = (0..n)
        .map(|i| g.neighbors(i).iter().filter(|&&j| j != i).count())
        .collect();
    let rows = (0..n)
        .map(|i| {
            let mut row: Vec<(usize, f64)> = g
                .neighbors(i)
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (j, 1.0 / (1 + deg[i].max(deg[j])) as f64))
                .collect();
            let off: f64 = row.iter().map(|&(_, w)| w).sum();
            row.push((i, 1.0 - off));
            row
        })
        .collect();
    CouplingMatrix::from_rows(rows)
}
