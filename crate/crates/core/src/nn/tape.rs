//! A small reverse-mode differentiation tape over dense matrices.
//!
//! Each operation appends a node holding its forward value. [`Tape::backward`]
//! walks the nodes in reverse, so every node's gradient is complete before it
//! is propagated to its inputs. Sparse operators are constants: multiplying by
//! `S` differentiates to multiplying by `Sᵀ`, blockwise over the batch.

use crate::dense::Matrix;
use crate::nn::params::{BufferId, ModelParams, ParamId};
use crate::sparse::SparseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Deliberately wrong backward rules, used to confirm that gradient checks
/// catch a broken derivative.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackwardFault {
    /// ReLU passes the upstream gradient through without masking.
    ReluIgnoresMask,
    /// Sparse products back-propagate through `S` instead of `Sᵀ`.
    SparseSkipsTranspose,
}

/// Batch-norm running statistics observed in a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct RunningStatUpdate {
    pub mean: BufferId,
    pub var: BufferId,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub momentum: f64,
}

enum Op<'a> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    SparseMul {
        s: &'a SparseMatrix,
        x: Var,
        blocks: usize,
    },
    AddRowBias(Var, Var),
    Concat(Vec<Var>),
    Relu(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    FlattenBlocks {
        x: Var,
        blocks: usize,
    },
    CrossEntropy {
        logits: Var,
        probs: Matrix,
        labels: Vec<usize>,
    },
    Sum(Var),
}

struct Node<'a> {
    value: Option<Matrix>,
    op: Op<'a>,
}

pub struct Tape<'a> {
    params: Option<&'a ModelParams>,
    nodes: Vec<Node<'a>>,
    updates: Vec<RunningStatUpdate>,
    fault: Option<BackwardFault>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            updates: Vec::new(),
            fault: None,
        }
    }

    /// A tape whose parameter leaves read from `params`.
    pub fn with_params(params: &'a ModelParams) -> Self {
        Self {
            params: Some(params),
            ..Self::new()
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: BackwardFault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op<'a>) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => &self.params.expect("parameter tape").param(*id).value,
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// Running statistics recorded by training-mode batch norms.
    pub fn running_stat_updates(&self) -> &[RunningStatUpdate] {
        &self.updates
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        assert!(self.params.is_some(), "tape has no parameter store");
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        self.push(out, Op::MatMulT(a, b))
    }

    /// Applies `s` to each of `blocks` stacked row blocks of `x`.
    pub fn sparse_mul(&mut self, s: &'a SparseMatrix, x: Var, blocks: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(
            xv.rows(),
            blocks * s.n_cols(),
            "sparse_mul: {} rows is not {} blocks of {}",
            xv.rows(),
            blocks,
            s.n_cols()
        );
        let width = xv.cols();
        let mut out = Matrix::zeros(blocks * s.n_rows(), width);
        let (src, dst) = (s.n_cols() * width, s.n_rows() * width);
        for b in 0..blocks {
            s.mul_dense_into(
                &xv.as_slice()[b * src..(b + 1) * src],
                width,
                &mut out.as_mut_slice()[b * dst..(b + 1) * dst],
            );
        }
        self.push(out, Op::SparseMul { s, x, blocks })
    }

    /// Adds the `1 × cols` row `bias` to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "bias must be a row vector");
        let mut out = self.value(x).clone();
        assert_eq!(out.cols(), b.cols(), "bias width");
        for i in 0..out.rows() {
            for (o, &bv) in out.row_mut(i).iter_mut().zip(b.row(0)) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRowBias(x, bias))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        if parts.len() == 1 {
            return parts[0];
        }
        let values: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::hconcat(&values).expect("concat_cols: row counts differ");
        self.push(out, Op::Concat(parts.to_vec()))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    /// Inverted dropout with a precomputed mask (entries `0` or `1/(1-p)`).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let xv = self.value(x);
        assert_eq!(mask.len(), xv.rows() * xv.cols(), "dropout mask size");
        let data = xv.as_slice().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let out = Matrix::from_vec(xv.rows(), xv.cols(), data).expect("dropout shape");
        self.push(out, Op::Dropout { x, mask })
    }

    /// Per-column batch normalization.
    ///
    /// In training mode (with more than one row) the batch statistics are
    /// used and recorded for the running averages; otherwise the running
    /// statistics are used.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (BufferId, BufferId),
        mode: Mode,
        momentum: f64,
        eps: f64,
    ) -> Var {
        let params = self.params.expect("batch_norm needs a parameter store");
        let xv = self.value(x);
        let use_batch = mode == Mode::Train && xv.rows() > 1;
        let stats = if use_batch {
            let s = batch_statistics(xv);
            self.updates.push(RunningStatUpdate {
                mean: running.0,
                var: running.1,
                batch_mean: s.mean.clone(),
                batch_var: s.unbiased_var.clone(),
                momentum,
            });
            s.mean
                .iter()
                .zip(&s.var)
                .map(|(&m, &v)| (m, 1.0 / (v + eps).sqrt()))
                .collect::<Vec<_>>()
        } else {
            let mean = &params.buffer(running.0).value;
            let var = &params.buffer(running.1).value;
            mean.iter()
                .zip(var)
                .map(|(&m, &v)| (m, 1.0 / (v + eps).sqrt()))
                .collect()
        };
        let (y, xhat) = normalize(self.value(x), self.value(gamma), self.value(beta), &stats);
        let inv_std = stats.iter().map(|s| s.1).collect();
        self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: use_batch,
            },
        )
    }

    /// Reshapes `(blocks·n) × c` into `blocks × (c·n)`, channel-major within
    /// each block: output `[b][ch·n + i]` is input `[b·n + i][ch]`.
    pub fn flatten_blocks(&mut self, x: Var, blocks: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows() % blocks.max(1), 0, "flatten_blocks: rows not divisible");
        let n = xv.rows() / blocks.max(1);
        let c = xv.cols();
        let mut out = Matrix::zeros(blocks, c * n);
        for b in 0..blocks {
            let row = out.row_mut(b);
            for i in 0..n {
                for (ch, &v) in xv.row(b * n + i).iter().enumerate() {
                    row[ch * n + i] = v;
                }
            }
        }
        self.push(out, Op::FlattenBlocks { x, blocks })
    }

    /// Mean softmax cross-entropy over the rows of `logits`; a `1 × 1` node.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), labels.len(), "one label per row");
        let mut probs = Matrix::zeros(lv.rows(), lv.cols());
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let (p, loss) = softmax_cross_entropy(lv.row(i), label);
            probs.row_mut(i).copy_from_slice(&p);
            total += loss;
        }
        let out = Matrix::filled(1, 1, total / labels.len().max(1) as f64);
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(x))
    }

    /// Back-propagates from `root`, seeding its gradient with ones.
    pub fn backward(&self, root: Var) -> Gradients {
        let (r, c) = self.shape(root);
        self.backward_with(root, Matrix::filled(r, c, 1.0))
    }

    pub fn backward_with(&self, root: Var, seed: Matrix) -> Gradients {
        assert_eq!(seed.shape(), self.shape(root), "seed shape");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut accumulate = |v: Var, delta: Matrix| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                accumulate(*a, g.matmul_t(self.value(*b)));
                accumulate(*b, self.value(*a).t_matmul(g));
            }
            Op::MatMulT(a, b) => {
                accumulate(*a, g.matmul(self.value(*b)));
                accumulate(*b, g.t_matmul(self.value(*a)));
            }
            Op::SparseMul { s, x, blocks } => {
                let width = g.cols();
                let (src, dst) = (s.n_cols() * width, s.n_rows() * width);
                let mut gx = Matrix::zeros(blocks * s.n_cols(), width);
                for b in 0..*blocks {
                    let g_block = &g.as_slice()[b * dst..(b + 1) * dst];
                    let out = &mut gx.as_mut_slice()[b * src..(b + 1) * src];
                    if self.fault == Some(BackwardFault::SparseSkipsTranspose) && s.n_rows() == s.n_cols() {
                        s.mul_dense_into(g_block, width, out);
                    } else {
                        t_mul_dense_into(s, g_block, width, out);
                    }
                }
                accumulate(*x, gx);
            }
            Op::AddRowBias(x, bias) => {
                let mut gb = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (o, &v) in gb.row_mut(0).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                accumulate(*x, g.clone());
                accumulate(*bias, gb);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    accumulate(p, g.column_slice(offset, w));
                    offset += w;
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let gx = if self.fault == Some(BackwardFault::ReluIgnoresMask) {
                    g.clone()
                } else {
                    let data = g
                        .as_slice()
                        .iter()
                        .zip(xv.as_slice())
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    Matrix::from_vec(g.rows(), g.cols(), data).expect("relu shape")
                };
                accumulate(*x, gx);
            }
            Op::Dropout { x, mask } => {
                let data = g.as_slice().iter().zip(mask).map(|(a, m)| a * m).collect();
                accumulate(*x, Matrix::from_vec(g.rows(), g.cols(), data).expect("dropout shape"));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let gam = self.value(*gamma);
                let (n, c) = g.shape();
                let mut g_gamma = Matrix::zeros(1, c);
                let mut g_beta = Matrix::zeros(1, c);
                for i in 0..n {
                    for j in 0..c {
                        g_gamma[(0, j)] += g[(i, j)] * xhat[(i, j)];
                        g_beta[(0, j)] += g[(i, j)];
                    }
                }
                let mut gx = Matrix::zeros(n, c);
                let nf = n as f64;
                for i in 0..n {
                    for j in 0..c {
                        let scale = gam[(0, j)] * inv_std[j];
                        gx[(i, j)] = if *batch_stats {
                            scale * (g[(i, j)] - g_beta[(0, j)] / nf - xhat[(i, j)] * g_gamma[(0, j)] / nf)
                        } else {
                            scale * g[(i, j)]
                        };
                    }
                }
                accumulate(*x, gx);
                accumulate(*gamma, g_gamma);
                accumulate(*beta, g_beta);
            }
            Op::FlattenBlocks { x, blocks } => {
                let (rows, c) = self.shape(*x);
                let n = rows / (*blocks).max(1);
                let mut gx = Matrix::zeros(rows, c);
                for b in 0..*blocks {
                    let grow = g.row(b);
                    for i in 0..n {
                        for (ch, o) in gx.row_mut(b * n + i).iter_mut().enumerate() {
                            *o = grow[ch * n + i];
                        }
                    }
                }
                accumulate(*x, gx);
            }
            Op::CrossEntropy { logits, probs, labels } => {
                let scale = g[(0, 0)] / labels.len().max(1) as f64;
                let mut gl = probs.clone();
                for (i, &label) in labels.iter().enumerate() {
                    gl[(i, label)] -= 1.0;
                }
                gl.scale(scale);
                accumulate(*logits, gl);
            }
            Op::Sum(x) => {
                let (r, c) = self.shape(*x);
                accumulate(*x, Matrix::filled(r, c, g[(0, 0)]));
            }
        }
    }

    /// Parameter leaves on this tape, in creation order.
    pub fn param_leaves(&self) -> impl Iterator<Item = (Var, ParamId)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => Some((Var(i), id)),
            _ => None,
        })
    }
}

/// `out += sᵀ · g` for row-major blocks of width `width`.
fn t_mul_dense_into(s: &SparseMatrix, g: &[f64], width: usize, out: &mut [f64]) {
    for i in 0..s.n_rows() {
        let g_row = &g[i * width..(i + 1) * width];
        let (cols, vals) = s.row(i);
        for (&k, &a) in cols.iter().zip(vals) {
            for (o, &gv) in out[k * width..(k + 1) * width].iter_mut().zip(g_row) {
                *o += a * gv;
            }
        }
    }
}

pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if `v` does not reach the root.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of every parameter leaf on `tape`, summed per parameter.
    pub fn param_grads(&self, tape: &Tape<'_>) -> Vec<(ParamId, Matrix)> {
        let mut out: Vec<(ParamId, Matrix)> = Vec::new();
        for (var, id) in tape.param_leaves() {
            let Some(g) = self.wrt(var) else { continue };
            match out.iter_mut().find(|(existing, _)| *existing == id) {
                Some((_, acc)) => acc.add_assign(g),
                None => out.push((id, g.clone())),
            }
        }
        out
    }
}

pub(crate) struct BatchStatistics {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub unbiased_var: Vec<f64>,
}

/// Column means and variances (biased and unbiased).
pub(crate) fn batch_statistics(x: &Matrix) -> BatchStatistics {
    let (n, c) = x.shape();
    let nf = n as f64;
    let mut mean = vec![0.0; c];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut ss = vec![0.0; c];
    for i in 0..n {
        for ((s, &v), &m) in ss.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let var = ss.iter().map(|s| s / nf).collect();
    let unbiased_var = ss.iter().map(|s| if n > 1 { s / (nf - 1.0) } else { 0.0 }).collect();
    BatchStatistics {
        mean,
        var,
        unbiased_var,
    }
}

/// `y = γ·(x − μ)·inv_std + β`; also returns the standardized `x̂`.
pub(crate) fn normalize(x: &Matrix, gamma: &Matrix, beta: &Matrix, stats: &[(f64, f64)]) -> (Matrix, Matrix) {
    let (n, c) = x.shape();
    assert_eq!(gamma.shape(), (1, c), "batch norm scale shape");
    assert_eq!(beta.shape(), (1, c), "batch norm shift shape");
    let mut xhat = Matrix::zeros(n, c);
    let mut y = Matrix::zeros(n, c);
    for i in 0..n {
        for j in 0..c {
            let (mean, inv_std) = stats[j];
            let h = (x[(i, j)] - mean) * inv_std;
            xhat[(i, j)] = h;
            y[(i, j)] = gamma[(0, j)] * h + beta[(0, j)];
        }
    }
    (y, xhat)
}

/// Softmax probabilities and `−log p[label]`, computed after subtracting the
/// maximum logit.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (Vec<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| e / z).collect();
    let loss = z.ln() - (logits[label] - max);
    (probs, loss)
}
