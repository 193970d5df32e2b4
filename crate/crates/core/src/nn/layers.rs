//! Layer definitions.
//!
//! The tape-level functions ([`scconv`], [`gconv`]) are what models use; the
//! `*_forward` functions evaluate a single layer on plain matrices.

use rand::Rng;

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::nn::tape::{batch_statistics, normalize, softmax_cross_entropy, Mode, Tape, Var};
use crate::nn::FeatureSet;
use crate::operators::OperatorSet;
use crate::sparse::SparseMatrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape<'_>, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
        }
    }
}

/// Feature matrices on a tape, each stacking `batch` samples by rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureVars {
    pub levels: [Option<Var>; 3],
}

/// The seven SCCONV weights on a tape. `w_ij` maps level-`i` features into
/// level `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScConvVars {
    pub w00: Var,
    pub w10: Var,
    pub w01: Var,
    pub w11: Var,
    pub w21: Var,
    pub w12: Var,
    pub w22: Var,
}

impl ScConvVars {
    fn get(&self, from: usize, to: usize) -> (Var, &'static str) {
        match (from, to) {
            (0, 0) => (self.w00, "W00"),
            (1, 0) => (self.w10, "W10"),
            (0, 1) => (self.w01, "W01"),
            (1, 1) => (self.w11, "W11"),
            (2, 1) => (self.w21, "W21"),
            (1, 2) => (self.w12, "W12"),
            (2, 2) => (self.w22, "W22"),
            _ => unreachable!("no weight from level {from} to {to}"),
        }
    }
}

/// `S · X · W`, with `S` applied per sample.
fn propagate<'a>(tape: &mut Tape<'a>, s: &'a SparseMatrix, x: Var, w: Var, batch: usize) -> Var {
    let xw = tape.matmul(x, w);
    tape.sparse_mul(s, xw, batch)
}

/// Propagation matrix for the block reading level `from` into level `to`.
fn block_operator(ops: &OperatorSet, from: usize, to: usize) -> &SparseMatrix {
    match (from, to) {
        (0, 0) => &ops.adjacency.a0_up_tilde,
        (1, 0) => &ops.p10,
        (0, 1) => &ops.p01,
        (1, 1) => &ops.a1_sum,
        (2, 1) => &ops.p21,
        (1, 2) => &ops.p12,
        (2, 2) => &ops.adjacency.a2_down_tilde,
        _ => unreachable!(),
    }
}

const BLOCKS: [&[usize]; 3] = [&[0, 1], &[0, 1, 2], &[1, 2]];

/// One simplicial 2-complex convolution:
///
/// ```text
/// X₀' = σ(Ã₀ᵘX₀W₀₀ ∥ D₁⁻¹B₁X₁W₁₀)
/// X₁' = σ(D₂B₁ᵀD₁⁻¹X₀W₀₁ ∥ (Ã₁ᵈ+Ã₁ᵘ)X₁W₁₁ ∥ B₂D₃X₂W₂₁)
/// X₂' = σ(D₄B₂ᵀD₅⁺X₁W₁₂ ∥ Ã₂ᵈX₂W₂₂)
/// ```
///
/// A block is omitted when its input features are absent or either of its
/// face dimensions is empty; a level with no remaining block is absent in
/// the output.
pub fn scconv<'a>(
    tape: &mut Tape<'a>,
    ops: &'a OperatorSet,
    x: &FeatureVars,
    w: &ScConvVars,
    batch: usize,
    activation: Activation,
) -> Result<FeatureVars> {
    let n = ops.counts;
    for (k, level) in x.levels.iter().enumerate() {
        if let Some(v) = level {
            let rows = tape.shape(*v).0;
            if rows != batch * n[k] {
                return Err(Error::shape(format!("X{k}"), format!("{} rows", batch * n[k]), rows));
            }
        }
    }
    let mut out = [None; 3];
    for (to, sources) in BLOCKS.iter().enumerate() {
        let mut parts = Vec::new();
        for &from in *sources {
            let Some(xv) = x.levels[from] else { continue };
            if n[from] == 0 || n[to] == 0 {
                continue;
            }
            let (wv, name) = w.get(from, to);
            let f_in = tape.shape(xv).1;
            let w_rows = tape.shape(wv).0;
            if w_rows != f_in {
                return Err(Error::shape(name, format!("{f_in} input rows"), w_rows));
            }
            parts.push(propagate(tape, block_operator(ops, from, to), xv, wv, batch));
        }
        if !parts.is_empty() {
            let joined = tape.concat_cols(&parts);
            out[to] = Some(activation.apply(tape, joined));
        }
    }
    Ok(FeatureVars { levels: out })
}

/// Graph convolution `σ(Ã₀ᵘX₀W)`.
pub fn gconv<'a>(
    tape: &mut Tape<'a>,
    ops: &'a OperatorSet,
    x0: Var,
    w: Var,
    batch: usize,
    activation: Activation,
) -> Result<Var> {
    let rows = tape.shape(x0).0;
    if rows != batch * ops.counts[0] {
        return Err(Error::shape("X0", format!("{} rows", batch * ops.counts[0]), rows));
    }
    if tape.shape(w).0 != tape.shape(x0).1 {
        return Err(Error::shape(
            "W",
            format!("{} input rows", tape.shape(x0).1),
            tape.shape(w).0,
        ));
    }
    let h = propagate(tape, &ops.adjacency.a0_up_tilde, x0, w, batch);
    Ok(activation.apply(tape, h))
}

/// Dense SCCONV weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SCConvWeights {
    pub w00: Matrix,
    pub w10: Matrix,
    pub w01: Matrix,
    pub w11: Matrix,
    pub w21: Matrix,
    pub w12: Matrix,
    pub w22: Matrix,
}

impl SCConvWeights {
    /// Glorot-uniform weights mapping input widths `f` to embedding widths `e`.
    pub fn glorot<R: Rng>(f: [usize; 3], e: [usize; 3], rng: &mut R) -> Self {
        let mut init = |from: usize, to: usize| {
            let bound = crate::nn::glorot_bound(f[from], e[to]);
            Matrix::from_fn(f[from], e[to], |_, _| rng.gen_range(-bound..=bound))
        };
        Self {
            w00: init(0, 0),
            w10: init(1, 0),
            w01: init(0, 1),
            w11: init(1, 1),
            w21: init(2, 1),
            w12: init(1, 2),
            w22: init(2, 2),
        }
    }

    pub fn zeros(f: [usize; 3], e: [usize; 3]) -> Self {
        let z = |from: usize, to: usize| Matrix::zeros(f[from], e[to]);
        Self {
            w00: z(0, 0),
            w10: z(1, 0),
            w01: z(0, 1),
            w11: z(1, 1),
            w21: z(2, 1),
            w12: z(1, 2),
            w22: z(2, 2),
        }
    }

    fn on_tape(&self, tape: &mut Tape<'_>) -> ScConvVars {
        ScConvVars {
            w00: tape.constant(self.w00.clone()),
            w10: tape.constant(self.w10.clone()),
            w01: tape.constant(self.w01.clone()),
            w11: tape.constant(self.w11.clone()),
            w21: tape.constant(self.w21.clone()),
            w12: tape.constant(self.w12.clone()),
            w22: tape.constant(self.w22.clone()),
        }
    }
}

fn features_on_tape(tape: &mut Tape<'_>, x: &FeatureSet) -> FeatureVars {
    let mut levels = [None; 3];
    for (k, level) in levels.iter_mut().enumerate() {
        *level = x.get(k).map(|m| tape.constant(m.clone()));
    }
    FeatureVars { levels }
}

/// Evaluates one SCCONV layer on a single sample.
pub fn scconv_forward(
    ops: &OperatorSet,
    x: &FeatureSet,
    w: &SCConvWeights,
    activation: Activation,
) -> Result<FeatureSet> {
    let mut tape = Tape::new();
    let xv = features_on_tape(&mut tape, x);
    let wv = w.on_tape(&mut tape);
    let out = scconv(&mut tape, ops, &xv, &wv, 1, activation)?;
    let take = |v: Option<Var>| v.map(|v| tape.value(v).clone());
    let x0 = take(out.levels[0]).unwrap_or_else(|| Matrix::zeros(ops.counts[0], 0));
    let mut fs = FeatureSet::new(x0, take(out.levels[1]), take(out.levels[2]));
    fs.level = x.level + 1;
    Ok(fs)
}

/// Evaluates one graph convolution on a single sample.
pub fn gconv_forward(ops: &OperatorSet, x0: &Matrix, w: &Matrix, activation: Activation) -> Result<Matrix> {
    let mut tape = Tape::new();
    let xv = tape.constant(x0.clone());
    let wv = tape.constant(w.clone());
    let out = gconv(&mut tape, ops, xv, wv, 1, activation)?;
    Ok(tape.value(out).clone())
}

/// 1D convolution with kernel size and step `f` over a flattened `n × f`
/// feature matrix. `kernels` is `C × f`; the result is `C × n`.
pub fn conv1d_forward(x_flat: &[f64], kernels: &Matrix, bias: &[f64], f: usize) -> Result<Matrix> {
    if f == 0 || !x_flat.len().is_multiple_of(f) {
        return Err(Error::shape("conv1d input", format!("a multiple of {f}"), x_flat.len()));
    }
    if kernels.cols() != f {
        return Err(Error::shape("conv1d kernels", format!("{f} columns"), kernels.cols()));
    }
    if bias.len() != kernels.rows() {
        return Err(Error::shape("conv1d bias", kernels.rows(), bias.len()));
    }
    let n = x_flat.len() / f;
    Ok(Matrix::from_fn(kernels.rows(), n, |c, i| {
        bias[c] + crate::dense::dot(kernels.row(c), &x_flat[i * f..(i + 1) * f])
    }))
}

/// Weights of the one-hidden-layer classifier head.
#[derive(Clone, Debug, PartialEq)]
pub struct FcParams {
    /// `hidden × in`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `classes × hidden`
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Inverted-dropout mask: each entry is `0` with probability `rate`,
/// otherwise `1 / (1 − rate)`.
pub fn dropout_mask<R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// `W₂·dropout(relu(W₁x + b₁)) + b₂`. Dropout is applied only when `dropout`
/// is given.
pub fn fc_forward<R: Rng>(x: &[f64], p: &FcParams, dropout: Option<(f64, &mut R)>) -> Result<Vec<f64>> {
    if p.w1.cols() != x.len() {
        return Err(Error::shape("FC input", p.w1.cols(), x.len()));
    }
    if p.b1.len() != p.w1.rows() || p.w2.cols() != p.w1.rows() || p.b2.len() != p.w2.rows() {
        return Err(Error::shape("FC parameters", "consistent layer widths", "mismatch"));
    }
    let mut tape = Tape::new();
    let xv = tape.constant(Matrix::from_vec(1, x.len(), x.to_vec())?);
    let w1 = tape.constant(p.w1.clone());
    let b1 = tape.constant(Matrix::from_vec(1, p.b1.len(), p.b1.clone())?);
    let w2 = tape.constant(p.w2.clone());
    let b2 = tape.constant(Matrix::from_vec(1, p.b2.len(), p.b2.clone())?);
    let h = tape.matmul_t(xv, w1);
    let h = tape.add_row_bias(h, b1);
    let mut h = tape.relu(h);
    if let Some((rate, rng)) = dropout {
        let mask = dropout_mask(p.b1.len(), rate, rng);
        h = tape.dropout(h, mask);
    }
    let out = tape.matmul_t(h, w2);
    let out = tape.add_row_bias(out, b2);
    Ok(tape.value(out).as_slice().to_vec())
}

/// Horizontal concatenation of level `k` across layer depths.
pub fn readout_concat(history: &[FeatureSet], k: usize) -> Result<Matrix> {
    if history.is_empty() {
        return Err(Error::Empty("readout over an empty history".into()));
    }
    let parts = history
        .iter()
        .map(|fs| {
            fs.get(k)
                .ok_or_else(|| Error::Empty(format!("level {k} absent at depth {}", fs.level)))
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::hconcat(&parts)
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    softmax_cross_entropy(logits, label).1
}

/// Standalone batch-norm state over `gamma.len()` features.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Per-column batch normalization. Training mode with more than one row uses
/// batch statistics and updates the running averages; otherwise the running
/// statistics are used.
pub fn batch_norm(x: &Matrix, state: &mut BatchNormState, mode: Mode) -> Result<Matrix> {
    let c = state.gamma.len();
    if x.cols() != c {
        return Err(Error::shape("batch_norm input", format!("{c} columns"), x.cols()));
    }
    let stats: Vec<(f64, f64)> = if mode == Mode::Train && x.rows() > 1 {
        let s = batch_statistics(x);
        for j in 0..c {
            state.running_mean[j] = (1.0 - state.momentum) * state.running_mean[j] + state.momentum * s.mean[j];
            state.running_var[j] = (1.0 - state.momentum) * state.running_var[j] + state.momentum * s.unbiased_var[j];
        }
        s.mean
            .iter()
            .zip(&s.var)
            .map(|(&m, &v)| (m, 1.0 / (v + state.eps).sqrt()))
            .collect()
    } else {
        state
            .running_mean
            .iter()
            .zip(&state.running_var)
            .map(|(&m, &v)| (m, 1.0 / (v + state.eps).sqrt()))
            .collect()
    };
    let gamma = Matrix::from_vec(1, c, state.gamma.clone())?;
    let beta = Matrix::from_vec(1, c, state.beta.clone())?;
    Ok(normalize(x, &gamma, &beta, &stats).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::{build_complex, grid_complex, image_features};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triangle_ops() -> OperatorSet {
        OperatorSet::new(&build_complex(&[[0, 1, 2]], &[], &[]).unwrap()).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let (c, geom) = grid_complex(12, 12, 4, 4).unwrap();
        let ops = OperatorSet::new(&c).unwrap();
        let image = Matrix::from_fn(12, 12, |r, col| ((r * 7 + col * 3) % 11) as f64 / 10.0);
        let x = image_features(&image, &geom, &c).unwrap();
        let out = scconv_forward(&ops, &x, &SCConvWeights::zeros([16, 1, 1], [4, 4, 4]), Activation::Relu).unwrap();
        assert_eq!(out.level, 1);
        for k in 0..3 {
            assert!(out.get(k).unwrap().as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn triangle_layer_matches_dense_oracle() {
        let ops = triangle_ops();
        let x = FeatureSet::new(
            Matrix::filled(3, 1, 1.0),
            Some(Matrix::filled(3, 1, 1.0)),
            Some(Matrix::filled(1, 1, 1.0)),
        );
        let one = Matrix::filled(1, 1, 1.0);
        let w = SCConvWeights {
            w00: one.clone(),
            w10: one.clone(),
            w01: one.clone(),
            w11: one.clone(),
            w21: one.clone(),
            w12: one.clone(),
            w22: one,
        };
        let out = scconv_forward(&ops, &x, &w, Activation::Identity).unwrap();
        // Ã₀ᵘ = ⅓·𝟙𝟙ᵀ so Ã₀ᵘ𝟙 = 𝟙; D₁⁻¹B₁𝟙 = ¼·(−2, 0, 2)
        assert_eq!(out.x0(), &Matrix::from_rows(&[[1.0, -0.5], [1.0, 0.0], [1.0, 0.5]]));
        // D₂B₁ᵀD₁⁻¹𝟙 = 0 (each edge column sums to zero); B₂D₃𝟙 = ⅓(1, −1, 1)
        let x1 = out.x1().unwrap();
        assert_eq!(x1.shape(), (3, 3));
        let a1 = ops.a1_sum.to_dense();
        for e in 0..3 {
            assert_eq!(x1[(e, 0)], 0.0);
            assert!((x1[(e, 1)] - a1.row(e).iter().sum::<f64>()).abs() < 1e-15);
        }
        assert!((x1[(0, 2)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((x1[(1, 2)] + 1.0 / 3.0).abs() < 1e-15);
        // D₄B₂ᵀD₅⁺𝟙 = 1 − 1 + 1 = 1; Ã₂ᵈ = (1+1)(1 − 3 + 1) = −2
        assert_eq!(out.x2().unwrap(), &Matrix::from_rows(&[[1.0, -2.0]]));
    }

    #[test]
    fn shape_law_with_all_levels() {
        let (c, geom) = grid_complex(12, 12, 4, 4).unwrap();
        let ops = OperatorSet::new(&c).unwrap();
        let x = image_features(&Matrix::filled(12, 12, 0.5), &geom, &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = SCConvWeights::glorot([16, 1, 1], [5, 6, 7], &mut rng);
        let out = scconv_forward(&ops, &x, &w, Activation::Relu).unwrap();
        assert_eq!(out.x0().shape(), (9, 10));
        assert_eq!(out.x1().unwrap().shape(), (20, 18));
        assert_eq!(out.x2().unwrap().shape(), (16, 14));
    }

    #[test]
    fn mismatched_weight_is_named() {
        let ops = triangle_ops();
        let x = FeatureSet::new(Matrix::filled(3, 2, 1.0), Some(Matrix::filled(3, 1, 1.0)), None);
        let mut w = SCConvWeights::zeros([2, 1, 1], [2, 2, 2]);
        w.w01 = Matrix::zeros(3, 2);
        let err = scconv_forward(&ops, &x, &w, Activation::Relu).unwrap_err();
        assert!(err.to_string().contains("W01"), "{err}");
    }

    #[test]
    fn path_graph_gconv_matches_dense_oracle() {
        let c = build_complex(&[], &[[0, 1], [1, 2]], &[]).unwrap();
        let ops = OperatorSet::new(&c).unwrap();
        let x0 = Matrix::from_rows(&[[1.0], [0.0], [0.0]]);
        let out = gconv_forward(&ops, &x0, &Matrix::identity(1), Activation::Relu).unwrap();
        // A₀ᵘ + I = [[1,1,0],[1,1,1],[0,1,1]], (D̃₂ + I)⁻¹ = diag(½, ⅓, ½)
        let oracle = Matrix::from_rows(&[[0.5, 1.0 / 3.0, 0.0], [0.5, 1.0 / 3.0, 0.5], [0.0, 1.0 / 3.0, 0.5]]);
        assert_eq!(ops.adjacency.a0_up_tilde.to_dense(), oracle);
        assert_eq!(out, oracle.matmul(&x0).map(|v| v.max(0.0)));
    }

    #[test]
    fn gconv_on_isolated_vertices_is_activation_of_input() {
        let c = build_complex(&[], &[], &[2]).unwrap();
        let ops = OperatorSet::new(&c).unwrap();
        let x0 = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0], [-1.0, 0.0]]);
        let out = gconv_forward(&ops, &x0, &Matrix::identity(2), Activation::Relu).unwrap();
        assert_eq!(out, x0.map(|v| v.max(0.0)));
    }

    #[test]
    fn conv1d_examples() {
        let out = conv1d_forward(&[1.0, 2.0, 3.0, 4.0], &Matrix::from_rows(&[[1.0, -1.0]]), &[0.0], 2).unwrap();
        assert_eq!(out, Matrix::from_rows(&[[-1.0, -1.0]]));
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let sums = conv1d_forward(&x, &Matrix::filled(1, 3, 1.0), &[0.0], 3).unwrap();
        assert_eq!(sums, Matrix::from_rows(&[[6.0, 15.0]]));
        assert!(conv1d_forward(&x, &Matrix::filled(1, 4, 1.0), &[0.0], 4).is_err());
    }

    #[test]
    fn fc_zero_weights_give_uniform_softmax() {
        let p = FcParams {
            w1: Matrix::zeros(32, 5),
            b1: vec![0.0; 32],
            w2: Matrix::zeros(10, 32),
            b2: vec![0.0; 10],
        };
        let logits = fc_forward::<ChaCha8Rng>(&[1.0, 2.0, 3.0, 4.0, 5.0], &p, None).unwrap();
        assert_eq!(logits, vec![0.0; 10]);
        assert!((cross_entropy(&logits, 4) - 10f64.ln()).abs() < 1e-15);
        assert!(fc_forward::<ChaCha8Rng>(&[1.0], &p, None).is_err());
    }

    #[test]
    fn cross_entropy_values() {
        assert!((cross_entropy(&[0.0; 10], 0) - std::f64::consts::LN_10).abs() < 1e-12);
        let mut saturated = [0.0; 10];
        saturated[7] = 1000.0;
        assert!(cross_entropy(&saturated, 7) < 1e-300);
        // high-precision reference: ln Σ eˡ − l[label] for logits 1..=10
        let logits: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((cross_entropy(&logits, 0) - 9.458_629_744_426_71).abs() < 1e-12);
        assert!((cross_entropy(&logits, 3) - 6.458629744426711).abs() < 1e-12);
        assert!((cross_entropy(&logits, 9) - 0.4586297444267114).abs() < 1e-12);
    }

    #[test]
    fn readout_concatenates_depths() {
        let a = FeatureSet::new(Matrix::zeros(4, 16), None, None);
        let b = FeatureSet::new(Matrix::zeros(4, 64), None, None);
        assert_eq!(readout_concat(std::slice::from_ref(&a), 0).unwrap(), a.x0().clone());
        assert_eq!(readout_concat(&[a.clone(), b], 0).unwrap().cols(), 80);
        assert!(readout_concat(&[], 0).is_err());
        assert!(readout_concat(&[a], 1).is_err());
    }

    #[test]
    fn batch_norm_modes() {
        let x = Matrix::from_rows(&[[1.0, 10.0], [-1.0, 10.0], [1.0, 10.0], [-1.0, 10.0]]);
        let mut state = BatchNormState::new(2);
        let y = batch_norm(&x, &mut state, Mode::Train).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = (0..4).map(|i| y[(i, j)]).collect();
            let mean = col.iter().sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
        }
        let var0 = (0..4).map(|i| y[(i, 0)] * y[(i, 0)]).sum::<f64>() / 4.0;
        assert!((var0 - 1.0).abs() < 1e-4, "{var0}");
        assert!((state.running_mean[1] - 1.0).abs() < 1e-12);

        let mut frozen = BatchNormState::new(2);
        let id = batch_norm(&x, &mut frozen, Mode::Eval).unwrap();
        assert!(id.max_abs_diff(&x) < 1e-4);
        assert_eq!(id, batch_norm(&x, &mut frozen, Mode::Eval).unwrap());
    }
}
