//! A small reverse-mode automatic differentiation tape over dense row-major
//! matrices.
//!
//! Parameters are borrowed from a flat parameter vector and their gradients
//! are accumulated straight into a caller-provided buffer of the same length,
//! so several tapes (one per problem instance) can add into one gradient.
//! Operations are coarse (matmul, fused multi-head attention, layer norm,
//! masked log-softmax, divergences) to keep the tape short.

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape does not match data");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Divergence direction for [`Tape::divergence`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceKind {
    /// Σ q (log q − log p): current policy q against buffered p.
    Reverse,
    /// Σ p (log p − log q).
    Forward,
}

enum Value {
    Owned(Tensor),
    Param { offset: usize, rows: usize, cols: usize },
}

enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddOuter { x: Var, col: Vec<f64>, row: Var },
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<f64> },
    MeanRows(Var),
    GatherRows(Var, Vec<usize>),
    ClipTanh(Var, f64),
    MaskedLogSoftmax { x: Var, mask: Vec<bool> },
    PickWeighted { x: Var, idx: Vec<usize>, w: Vec<f64> },
    Divergence { logq: Var, target: Vec<f64>, log_target: Vec<f64>, mask: Vec<bool>, w: Vec<f64>, kind: DivergenceKind },
    SumSquares(Var),
    SumScalars(Vec<(Var, f64)>),
}

struct Node {
    value: Value,
    op: Op,
    name: Option<String>,
}

pub struct Tape<'a> {
    params: &'a [f64],
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// out(m×n) += a(m×k) · b(k×n)
fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            if aip != 0.0 {
                axpy(aip, &b[p * n..(p + 1) * n], orow);
            }
        }
    }
}

/// out(m×n) += a(m×k) · b(n×k)ᵀ
fn matmul_t_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// out(k×n) += a(m×k)ᵀ · b(m×n)
fn matmul_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != 0.0 {
                axpy(aip, brow, &mut out[p * n..(p + 1) * n]);
            }
        }
    }
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a [f64]) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node created after the first `len`.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        match &self.nodes[v.0].value {
            Value::Owned(t) => (t.rows, t.cols),
            Value::Param { rows, cols, .. } => (*rows, *cols),
        }
    }

    pub fn data(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].value {
            Value::Owned(t) => &t.data,
            Value::Param { offset, rows, cols } => &self.params[*offset..*offset + rows * cols],
        }
    }

    pub fn value(&self, v: Var) -> Tensor {
        let (r, c) = self.shape(v);
        Tensor::from_vec(r, c, self.data(v).to_vec())
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let d = self.data(v);
        debug_assert_eq!(d.len(), 1);
        d[0]
    }

    /// Attach a name used in diagnostics.
    pub fn set_name(&mut self, v: Var, name: impl Into<String>) {
        self.nodes[v.0].name = Some(name.into());
    }

    fn label(&self, idx: usize) -> String {
        let node = &self.nodes[idx];
        if let Some(n) = &node.name {
            return n.clone();
        }
        let kind = match node.op {
            Op::Constant => "constant",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::AddOuter { .. } => "add_outer",
            Op::Scale(..) => "scale",
            Op::Gelu(..) => "gelu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Attention { .. } => "attention",
            Op::MeanRows(..) => "mean_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::ClipTanh(..) => "clip_tanh",
            Op::MaskedLogSoftmax { .. } => "masked_log_softmax",
            Op::PickWeighted { .. } => "pick_weighted",
            Op::Divergence { .. } => "divergence",
            Op::SumSquares(..) => "sum_squares",
            Op::SumScalars(..) => "sum",
        };
        format!("{kind}#{idx}")
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    /// A `rows × cols` view of the parameter vector starting at `offset`.
    pub fn param(&mut self, offset: usize, rows: usize, cols: usize, name: &str) -> Var {
        assert!(offset + rows * cols <= self.params.len(), "parameter view out of range");
        self.nodes.push(Node {
            value: Value::Param { offset, rows, cols },
            op: Op::Param,
            name: Some(name.to_string()),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimensions differ");
        let mut out = vec![0.0; m * n];
        matmul_acc(self.data(a), self.data(b), &mut out, m, k, n);
        self.push(Tensor::from_vec(m, n, out), Op::MatMul(a, b))
    }

    /// a · bᵀ
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_t inner dimensions differ");
        let mut out = vec![0.0; m * n];
        matmul_t_acc(self.data(a), self.data(b), &mut out, m, k, n);
        self.push(Tensor::from_vec(m, n, out), Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes differ");
        let (r, c) = self.shape(a);
        let out: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        self.push(Tensor::from_vec(r, c, out), Op::Add(a, b))
    }

    /// Adds the 1×c row vector `row` to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(row), (1, c), "add_row expects a 1×cols row");
        let rv = self.data(row);
        let mut out = self.data(x).to_vec();
        for chunk in out.chunks_exact_mut(c) {
            for (o, b) in chunk.iter_mut().zip(rv) {
                *o += b;
            }
        }
        self.push(Tensor::from_vec(r, c, out), Op::AddRow(x, row))
    }

    /// x + col ⊗ row, with `col` a constant column (one entry per row of x).
    pub fn add_outer(&mut self, x: Var, col: Vec<f64>, row: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(col.len(), r);
        assert_eq!(self.shape(row), (1, c));
        let rv = self.data(row);
        let mut out = self.data(x).to_vec();
        for (chunk, &s) in out.chunks_exact_mut(c).zip(&col) {
            axpy(s, rv, chunk);
        }
        self.push(Tensor::from_vec(r, c, out), Op::AddOuter { x, col, row })
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let (r, c) = self.shape(x);
        let out: Vec<f64> = self.data(x).iter().map(|v| v * s).collect();
        self.push(Tensor::from_vec(r, c, out), Op::Scale(x, s))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let out: Vec<f64> = self
            .data(x)
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
            .collect();
        self.push(Tensor::from_vec(r, c, out), Op::Gelu(x))
    }

    /// Per-row normalization followed by an elementwise gain and bias (both 1×c).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (r, c) = self.shape(x);
        let xs = self.data(x);
        let g = self.data(gain);
        let b = self.data(bias);
        let mut out = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        self.push(
            Tensor::from_vec(r, c, out),
            Op::LayerNorm { x, gain, bias, xhat, inv_std },
        )
    }

    /// Unmasked multi-head scaled dot-product attention over the rows of q, k, v.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (n, d) = self.shape(q);
        assert_eq!(self.shape(k), (n, d));
        assert_eq!(self.shape(v), (n, d));
        assert_eq!(d % heads, 0, "embedding dim must divide into heads");
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut probs = vec![0.0; heads * n * n];
        let mut out = vec![0.0; n * d];
        for h in 0..heads {
            let off = h * dk;
            let p = &mut probs[h * n * n..(h + 1) * n * n];
            for i in 0..n {
                let qi = &qd[i * d + off..i * d + off + dk];
                let row = &mut p[i * n..(i + 1) * n];
                let mut mx = f64::NEG_INFINITY;
                for j in 0..n {
                    let s = dot(qi, &kd[j * d + off..j * d + off + dk]) * scale;
                    row[j] = s;
                    mx = mx.max(s);
                }
                let mut z = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - mx).exp();
                    z += *s;
                }
                for s in row.iter_mut() {
                    *s /= z;
                }
                let orow = &mut out[i * d + off..i * d + off + dk];
                for j in 0..n {
                    axpy(row[j], &vd[j * d + off..j * d + off + dk], orow);
                }
            }
        }
        self.push(Tensor::from_vec(n, d, out), Op::Attention { q, k, v, heads, probs })
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let mut out = vec![0.0; c];
        for chunk in self.data(x).chunks_exact(c) {
            for (o, v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        let inv = 1.0 / r as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        self.push(Tensor::from_vec(1, c, out), Op::MeanRows(x))
    }

    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let (r, c) = self.shape(x);
        let xs = self.data(x);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            assert!(i < r, "gather index out of range");
            out.extend_from_slice(&xs[i * c..(i + 1) * c]);
        }
        self.push(Tensor::from_vec(idx.len(), c, out), Op::GatherRows(x, idx))
    }

    /// c · tanh(x)
    pub fn clip_tanh(&mut self, x: Var, c: f64) -> Var {
        let (r, cc) = self.shape(x);
        let out: Vec<f64> = self.data(x).iter().map(|v| c * v.tanh()).collect();
        self.push(Tensor::from_vec(r, cc, out), Op::ClipTanh(x, c))
    }

    /// Row-wise log-softmax restricted to `mask`; masked entries are set to 0
    /// in the output and receive no gradient. Every row needs a true entry.
    pub fn masked_log_softmax(&mut self, x: Var, mask: Vec<bool>) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(mask.len(), r * c);
        let xs = self.data(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let m = &mask[i * c..(i + 1) * c];
            let mx = row
                .iter()
                .zip(m)
                .filter(|(_, &k)| k)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(mx.is_finite() || mx == f64::NEG_INFINITY);
            assert!(m.iter().any(|&k| k), "row {i} has no feasible entry");
            let z: f64 = row.iter().zip(m).filter(|(_, &k)| k).map(|(v, _)| (v - mx).exp()).sum();
            let lz = mx + z.ln();
            for j in 0..c {
                if m[j] {
                    out[i * c + j] = row[j] - lz;
                }
            }
        }
        self.push(Tensor::from_vec(r, c, out), Op::MaskedLogSoftmax { x, mask })
    }

    /// Σ_r w_r · x[r, idx_r] as a 1×1 scalar.
    pub fn pick_weighted(&mut self, x: Var, idx: Vec<usize>, w: Vec<f64>) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(idx.len(), r);
        assert_eq!(w.len(), r);
        let xs = self.data(x);
        let s: f64 = (0..r).map(|i| w[i] * xs[i * c + idx[i]]).sum();
        self.push(Tensor::from_vec(1, 1, vec![s]), Op::PickWeighted { x, idx, w })
    }

    /// Weighted sum over rows of the divergence between the distribution
    /// exp(logq) and the fixed `target`, taken over unmasked entries only.
    /// `target` must already be floored away from zero on unmasked entries.
    pub fn divergence(
        &mut self,
        logq: Var,
        target: Vec<f64>,
        mask: Vec<bool>,
        w: Vec<f64>,
        kind: DivergenceKind,
    ) -> Var {
        let (r, c) = self.shape(logq);
        assert_eq!(target.len(), r * c);
        assert_eq!(mask.len(), r * c);
        assert_eq!(w.len(), r);
        let lq = self.data(logq);
        let log_target: Vec<f64> = target
            .iter()
            .zip(&mask)
            .map(|(&p, &m)| if m { p.ln() } else { 0.0 })
            .collect();
        let mut total = 0.0;
        for i in 0..r {
            let mut d = 0.0;
            for j in 0..c {
                let k = i * c + j;
                if !mask[k] {
                    continue;
                }
                d += match kind {
                    DivergenceKind::Reverse => lq[k].exp() * (lq[k] - log_target[k]),
                    DivergenceKind::Forward => target[k] * (log_target[k] - lq[k]),
                };
            }
            total += w[i] * d;
        }
        self.push(
            Tensor::from_vec(1, 1, vec![total]),
            Op::Divergence { logq, target, log_target, mask, w, kind },
        )
    }

    /// Σ x², a 1×1 scalar.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().map(|v| v * v).sum();
        self.push(Tensor::from_vec(1, 1, vec![s]), Op::SumSquares(x))
    }

    /// Σ c_i · s_i over 1×1 scalars.
    pub fn sum_scalars(&mut self, terms: Vec<(Var, f64)>) -> Var {
        let s = terms.iter().map(|&(v, c)| c * self.scalar(v)).sum();
        self.push(Tensor::from_vec(1, 1, vec![s]), Op::SumScalars(terms))
    }

    /// Fails with the name of the first node holding a non-finite value.
    pub fn check_finite(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Value::Owned(t) = &node.value {
                if t.data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical { tensor: self.label(i) });
                }
            }
        }
        Ok(())
    }

    /// Back-propagates d(loss)/d(loss) = 1 and adds parameter gradients into
    /// `grad` (same length as the parameter vector).
    pub fn backward(&self, loss: Var, grad: &mut [f64]) -> Result<()> {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer length");
        assert_eq!(self.shape(loss), (1, 1), "loss must be a scalar");
        self.check_finite()?;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], v: Var, len: usize) -> &'g mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let (rows, cols) = self.shape(Var(idx));
            match &node.op {
                Op::Constant => {}
                Op::Param => {
                    if let Value::Param { offset, .. } = node.value {
                        for (o, v) in grad[offset..offset + g.len()].iter_mut().zip(&g) {
                            *o += v;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = cols;
                    let ad = self.data(*a);
                    let bd = self.data(*b);
                    if self.needs_grad(*a) {
                        let ga = acc(&mut grads, *a, m * k);
                        // dA = dC · Bᵀ
                        matmul_t_acc(&g, bd, ga, m, n, k);
                    }
                    if self.needs_grad(*b) {
                        let gb = acc(&mut grads, *b, k * n);
                        matmul_tn_acc(ad, &g, gb, m, k, n);
                    }
                }
                Op::MatMulT(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = cols;
                    let ad = self.data(*a);
                    let bd = self.data(*b);
                    if self.needs_grad(*a) {
                        let ga = acc(&mut grads, *a, m * k);
                        // dA = dC · B
                        matmul_acc(&g, bd, ga, m, n, k);
                    }
                    if self.needs_grad(*b) {
                        let gb = acc(&mut grads, *b, n * k);
                        // dB = dCᵀ · A
                        matmul_tn_acc(&g, ad, gb, m, n, k);
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.needs_grad(v) {
                            let gv = acc(&mut grads, v, g.len());
                            axpy(1.0, &g, gv);
                        }
                    }
                }
                Op::AddRow(x, row) => {
                    if self.needs_grad(*x) {
                        axpy(1.0, &g, acc(&mut grads, *x, g.len()));
                    }
                    if self.needs_grad(*row) {
                        let gr = acc(&mut grads, *row, cols);
                        for chunk in g.chunks_exact(cols) {
                            axpy(1.0, chunk, gr);
                        }
                    }
                }
                Op::AddOuter { x, col, row } => {
                    if self.needs_grad(*x) {
                        axpy(1.0, &g, acc(&mut grads, *x, g.len()));
                    }
                    if self.needs_grad(*row) {
                        let gr = acc(&mut grads, *row, cols);
                        for (chunk, &s) in g.chunks_exact(cols).zip(col) {
                            axpy(s, chunk, gr);
                        }
                    }
                }
                Op::Scale(x, s) => {
                    if self.needs_grad(*x) {
                        axpy(*s, &g, acc(&mut grads, *x, g.len()));
                    }
                }
                Op::Gelu(x) => {
                    if self.needs_grad(*x) {
                        let xd = self.data(*x);
                        let gx = acc(&mut grads, *x, g.len());
                        for ((o, &v), &gi) in gx.iter_mut().zip(xd).zip(&g) {
                            let u = GELU_C * (v + GELU_A * v * v * v);
                            let t = u.tanh();
                            let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                            *o += gi * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let gd = self.data(*gain);
                    if self.needs_grad(*gain) {
                        let gg = acc(&mut grads, *gain, cols);
                        for i in 0..rows {
                            for j in 0..cols {
                                gg[j] += g[i * cols + j] * xhat[i * cols + j];
                            }
                        }
                    }
                    if self.needs_grad(*bias) {
                        let gb = acc(&mut grads, *bias, cols);
                        for chunk in g.chunks_exact(cols) {
                            axpy(1.0, chunk, gb);
                        }
                    }
                    if self.needs_grad(*x) {
                        let gx = acc(&mut grads, *x, rows * cols);
                        let c = cols as f64;
                        let mut dxhat = vec![0.0; cols];
                        for i in 0..rows {
                            let mut s1 = 0.0;
                            let mut s2 = 0.0;
                            for j in 0..cols {
                                let d = g[i * cols + j] * gd[j];
                                dxhat[j] = d;
                                s1 += d;
                                s2 += d * xhat[i * cols + j];
                            }
                            let inv = inv_std[i];
                            for j in 0..cols {
                                gx[i * cols + j] +=
                                    inv / c * (c * dxhat[j] - s1 - xhat[i * cols + j] * s2);
                            }
                        }
                    }
                }
                Op::Attention { q, k, v, heads, probs } => {
                    let n = rows;
                    let d = cols;
                    let dk = d / heads;
                    let scale = 1.0 / (dk as f64).sqrt();
                    let (qd, kd, vd) = (self.data(*q), self.data(*k), self.data(*v));
                    let mut gq = vec![0.0; n * d];
                    let mut gk = vec![0.0; n * d];
                    let mut gv = vec![0.0; n * d];
                    let mut dp = vec![0.0; n];
                    for h in 0..*heads {
                        let off = h * dk;
                        let p = &probs[h * n * n..(h + 1) * n * n];
                        for i in 0..n {
                            let go = &g[i * d + off..i * d + off + dk];
                            let prow = &p[i * n..(i + 1) * n];
                            // dP_ij = dO_i · V_j ; dV_j += P_ij dO_i
                            let mut sum = 0.0;
                            for j in 0..n {
                                dp[j] = dot(go, &vd[j * d + off..j * d + off + dk]);
                                sum += dp[j] * prow[j];
                                axpy(prow[j], go, &mut gv[j * d + off..j * d + off + dk]);
                            }
                            // dS_ij = P_ij (dP_ij − Σ_l P_il dP_il)
                            for j in 0..n {
                                let ds = prow[j] * (dp[j] - sum) * scale;
                                if ds != 0.0 {
                                    axpy(ds, &kd[j * d + off..j * d + off + dk], &mut gq[i * d + off..i * d + off + dk]);
                                    axpy(ds, &qd[i * d + off..i * d + off + dk], &mut gk[j * d + off..j * d + off + dk]);
                                }
                            }
                        }
                    }
                    for (var, gvec) in [(*q, gq), (*k, gk), (*v, gv)] {
                        if self.needs_grad(var) {
                            axpy(1.0, &gvec, acc(&mut grads, var, n * d));
                        }
                    }
                }
                Op::MeanRows(x) => {
                    if self.needs_grad(*x) {
                        let (r, c) = self.shape(*x);
                        let inv = 1.0 / r as f64;
                        let gx = acc(&mut grads, *x, r * c);
                        for chunk in gx.chunks_exact_mut(c) {
                            axpy(inv, &g, chunk);
                        }
                    }
                }
                Op::GatherRows(x, idx) => {
                    if self.needs_grad(*x) {
                        let (r, c) = self.shape(*x);
                        let gx = acc(&mut grads, *x, r * c);
                        for (k, &i) in idx.iter().enumerate() {
                            axpy(1.0, &g[k * c..(k + 1) * c], &mut gx[i * c..(i + 1) * c]);
                        }
                    }
                }
                Op::ClipTanh(x, c) => {
                    if self.needs_grad(*x) {
                        let out = self.data(Var(idx));
                        let gx = acc(&mut grads, *x, g.len());
                        for ((o, &y), &gi) in gx.iter_mut().zip(out).zip(&g) {
                            let t = y / c;
                            *o += gi * c * (1.0 - t * t);
                        }
                    }
                }
                Op::MaskedLogSoftmax { x, mask } => {
                    if self.needs_grad(*x) {
                        let out = self.data(Var(idx));
                        let gx = acc(&mut grads, *x, rows * cols);
                        for i in 0..rows {
                            let range = i * cols..(i + 1) * cols;
                            let gs: f64 = g[range.clone()]
                                .iter()
                                .zip(&mask[range.clone()])
                                .filter(|(_, &m)| m)
                                .map(|(v, _)| *v)
                                .sum();
                            for k in range {
                                if mask[k] {
                                    gx[k] += g[k] - out[k].exp() * gs;
                                }
                            }
                        }
                    }
                }
                Op::PickWeighted { x, idx: picks, w } => {
                    if self.needs_grad(*x) {
                        let (r, c) = self.shape(*x);
                        let gx = acc(&mut grads, *x, r * c);
                        for i in 0..r {
                            gx[i * c + picks[i]] += g[0] * w[i];
                        }
                    }
                }
                Op::Divergence { logq, target, log_target, mask, w, kind } => {
                    if self.needs_grad(*logq) {
                        let (r, c) = self.shape(*logq);
                        let lq = self.data(*logq);
                        let gx = acc(&mut grads, *logq, r * c);
                        for i in 0..r {
                            let s = g[0] * w[i];
                            for j in 0..c {
                                let k = i * c + j;
                                if !mask[k] {
                                    continue;
                                }
                                gx[k] += s * match kind {
                                    DivergenceKind::Reverse => lq[k].exp() * (lq[k] - log_target[k] + 1.0),
                                    DivergenceKind::Forward => -target[k],
                                };
                            }
                        }
                    }
                }
                Op::SumSquares(x) => {
                    if self.needs_grad(*x) {
                        let xd = self.data(*x);
                        let gx = acc(&mut grads, *x, xd.len());
                        axpy(2.0 * g[0], xd, gx);
                    }
                }
                Op::SumScalars(terms) => {
                    for &(v, c) in terms {
                        if self.needs_grad(v) {
                            acc(&mut grads, v, 1)[0] += c * g[0];
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Constant)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Checks the tape gradient of `build` against central differences.
    fn check(nparams: usize, seed: u64, build: impl Fn(&mut Tape) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = rand_vec(nparams, &mut rng);
        let mut grad = vec![0.0; nparams];
        {
            let mut tape = Tape::new(&theta);
            let loss = build(&mut tape);
            tape.backward(loss, &mut grad).unwrap();
        }
        let h = 1e-5;
        for i in 0..nparams {
            let mut tp = theta.clone();
            tp[i] += h;
            let mut tm = theta.clone();
            tm[i] -= h;
            let fp = {
                let mut t = Tape::new(&tp);
                let l = build(&mut t);
                t.scalar(l)
            };
            let fm = {
                let mut t = Tape::new(&tm);
                let l = build(&mut t);
                t.scalar(l)
            };
            let fd = (fp - fm) / (2.0 * h);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            assert!(err < 1e-6, "param {i}: analytic {} vs fd {fd}", grad[i]);
        }
    }

    fn weights(rows: usize) -> Vec<f64> {
        (0..rows).map(|i| 0.3 + 0.1 * i as f64).collect()
    }

    #[test]
    fn quadratic_probe_gradient_is_theta() {
        let theta = vec![0.5, -1.5, 2.0];
        let mut grad = vec![0.0; 3];
        let mut t = Tape::new(&theta);
        let p = t.param(0, 1, 3, "theta");
        let s = t.sum_squares(p);
        let half = t.sum_scalars(vec![(s, 0.5)]);
        t.backward(half, &mut grad).unwrap();
        assert_eq!(grad, theta);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let theta = vec![1.0, 2.0];
        let mut grad = vec![0.0; 2];
        let mut t = Tape::new(&theta);
        let _p = t.param(0, 1, 2, "theta");
        let c = t.constant(Tensor::from_vec(1, 1, vec![3.0]));
        let l = t.sum_scalars(vec![(c, 1.0)]);
        t.backward(l, &mut grad).unwrap();
        assert_eq!(grad, vec![0.0, 0.0]);
    }

    #[test]
    fn matmul_family_gradients() {
        check(6 + 12 + 8, 1, |t| {
            let a = t.param(0, 2, 3, "a");
            let b = t.param(6, 3, 4, "b");
            let c = t.param(18, 2, 4, "c");
            let ab = t.matmul(a, b);
            let abt = t.matmul_t(ab, c); // 2x2
            let s = t.scale(abt, 0.7);
            let sq = t.sum_squares(s);
            t.sum_scalars(vec![(sq, 1.0)])
        });
    }

    #[test]
    fn elementwise_and_row_ops_gradients() {
        check(12 + 4 + 4 + 4 + 4, 2, |t| {
            let x = t.param(0, 3, 4, "x");
            let r = t.param(12, 1, 4, "r");
            let g = t.param(16, 1, 4, "g");
            let b = t.param(20, 1, 4, "b");
            let w = t.param(24, 1, 4, "w");
            let y = t.add_row(x, r);
            let y = t.gelu(y);
            let y = t.layer_norm(y, g, b);
            let y = t.add_outer(y, vec![0.5, -1.0, 2.0], w);
            let y2 = t.add(y, x);
            let m = t.mean_rows(y2);
            let gsel = t.gather_rows(y2, vec![2, 0, 2]);
            let ct = t.clip_tanh(gsel, 3.0);
            let s1 = t.sum_squares(m);
            let s2 = t.sum_squares(ct);
            t.sum_scalars(vec![(s1, 1.0), (s2, 0.25)])
        });
    }

    #[test]
    fn attention_gradient() {
        let n = 4;
        let d = 8;
        check(3 * n * d, 3, move |t| {
            let q = t.param(0, n, d, "q");
            let k = t.param(n * d, n, d, "k");
            let v = t.param(2 * n * d, n, d, "v");
            let o = t.attention(q, k, v, 2);
            let s = t.sum_squares(o);
            t.sum_scalars(vec![(s, 1.0)])
        });
    }

    #[test]
    fn log_softmax_pick_and_divergence_gradients() {
        let mask = vec![true, false, true, true, true, true, false, true, false, false, true, true];
        for kind in [DivergenceKind::Reverse, DivergenceKind::Forward] {
            let mask = mask.clone();
            check(12, 4, move |t| {
                let x = t.param(0, 3, 4, "x");
                let lp = t.masked_log_softmax(x, mask.clone());
                let pick = t.pick_weighted(lp, vec![2, 1, 3], weights(3));
                let target: Vec<f64> = [0.2, 0.0, 0.5, 0.3, 0.1, 0.6, 0.0, 0.3, 0.0, 0.0, 0.9, 0.1].to_vec();
                let div = t.divergence(lp, target, mask.clone(), weights(3), kind);
                t.sum_scalars(vec![(pick, -1.0), (div, 2.0)])
            });
        }
    }

    #[test]
    fn masked_entries_are_exactly_zero_probability() {
        let theta = vec![5.0, -3.0, 1.0, 100.0];
        let mut t = Tape::new(&theta);
        let x = t.param(0, 1, 4, "x");
        let lp = t.masked_log_softmax(x, vec![true, true, true, false]);
        let d = t.data(lp);
        let total: f64 = d[..3].iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(d[3], 0.0);
    }

    #[test]
    fn non_finite_values_are_reported_by_name() {
        let theta = vec![f64::MAX, f64::MAX];
        let mut t = Tape::new(&theta);
        let p = t.param(0, 1, 2, "big");
        let s = t.sum_squares(p);
        t.set_name(s, "overflowing");
        let mut g = vec![0.0; 2];
        match t.backward(s, &mut g) {
            Err(Error::Numerical { tensor }) => assert_eq!(tensor, "overflowing"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
