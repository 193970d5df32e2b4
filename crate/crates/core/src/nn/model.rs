//! The three classifier variants: `CONV1D-FC`, `GCONV-CONV1D-FC` and
//! `SCCONV-CONV1D-FC`.
//!
//! Every variant ends in the same head: per face dimension a 1D convolution
//! with kernel and step equal to the feature width (an affine map per row),
//! batch norm and ReLU, then the flattened outputs are concatenated and fed to
//! a one-hidden-layer fully connected network with dropout on the hidden
//! activations.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::complex::SimplicialComplex2;
use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::nn::layers::{dropout_mask, gconv, scconv, Activation, FeatureVars, ScConvVars};
use crate::nn::optim::Adam;
use crate::nn::params::{BufferId, ModelParams, ParamId};
use crate::nn::tape::{BackwardFault, Mode, RunningStatUpdate, Tape, Var};
use crate::operators::OperatorSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Conv1dFc,
    GconvConv1dFc,
    ScconvConv1dFc,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Conv1dFc, Variant::GconvConv1dFc, Variant::ScconvConv1dFc];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Conv1dFc => "conv1d-fc",
            Variant::GconvConv1dFc => "gconv-conv1d-fc",
            Variant::ScconvConv1dFc => "scconv-conv1d-fc",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown variant {s:?} (expected conv1d-fc, gconv-conv1d-fc or scconv-conv1d-fc)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of the vertex input features (`k²` for image patches).
    pub input_features: usize,
    /// Embedding width per face dimension for SCCONV; `embed[0]` for GCONV.
    pub embed: [usize; 3],
    pub conv_channels: usize,
    pub hidden: usize,
    pub classes: usize,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_features: 16,
            embed: [32, 32, 32],
            conv_channels: 16,
            hidden: 32,
            classes: 10,
            dropout: 0.10,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

/// A mini-batch: vertex features of `labels.len()` samples stacked by rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x0: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(samples: &[&Matrix], labels: Vec<usize>) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::shape("batch labels", samples.len(), labels.len()));
        }
        Ok(Self {
            x0: Matrix::vconcat(samples)?,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
struct ScConvIds {
    w00: ParamId,
    w10: ParamId,
    w01: ParamId,
    w11: ParamId,
    w21: ParamId,
    w12: ParamId,
    w22: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct ConvHead {
    level: usize,
    kernel: ParamId,
    bias: ParamId,
    gamma: ParamId,
    beta: ParamId,
    running_mean: BufferId,
    running_var: BufferId,
}

#[derive(Debug)]
pub struct Model {
    variant: Variant,
    config: ModelConfig,
    ops: OperatorSet,
    scconv: Option<ScConvIds>,
    gconv: Option<ParamId>,
    heads: Vec<ConvHead>,
    fc1_w: ParamId,
    fc1_b: ParamId,
    fc2_w: ParamId,
    fc2_b: ParamId,
}

/// Loss, per-parameter gradients and batch-norm statistics from one pass.
pub struct PassResult {
    pub loss: f64,
    pub grads: Vec<(ParamId, Matrix)>,
    pub running_updates: Vec<RunningStatUpdate>,
}

impl Model {
    /// Builds the model for `complex` and draws its initial parameters.
    ///
    /// GCONV runs on the 1-skeleton of `complex`; SCCONV on the full complex.
    pub fn new<R: Rng>(
        variant: Variant,
        config: ModelConfig,
        complex: &SimplicialComplex2,
        rng: &mut R,
    ) -> Result<(Self, ModelParams)> {
        let ops = match variant {
            Variant::ScconvConv1dFc => OperatorSet::new(complex)?,
            _ => OperatorSet::new(&complex.skeleton(1))?,
        };
        let mut params = ModelParams::new();
        let f = [config.input_features, 1, 1];
        let e = config.embed;
        let n = ops.counts;

        let mut scconv_ids = None;
        let mut gconv_id = None;
        // (level, feature width) consumed by each conv head
        let levels: Vec<(usize, usize)> = match variant {
            Variant::Conv1dFc => vec![(0, f[0])],
            Variant::GconvConv1dFc => {
                gconv_id = Some(params.add_glorot("gconv.w", f[0], e[0], f[0], e[0], rng));
                vec![(0, e[0])]
            }
            Variant::ScconvConv1dFc => {
                let mut w = |name: &str, from: usize, to: usize| {
                    params.add_glorot(format!("scconv.{name}"), f[from], e[to], f[from], e[to], rng)
                };
                scconv_ids = Some(ScConvIds {
                    w00: w("w00", 0, 0),
                    w10: w("w10", 1, 0),
                    w01: w("w01", 0, 1),
                    w11: w("w11", 1, 1),
                    w21: w("w21", 2, 1),
                    w12: w("w12", 1, 2),
                    w22: w("w22", 2, 2),
                });
                let block_sources: [&[usize]; 3] = [&[0, 1], &[0, 1, 2], &[1, 2]];
                (0..3)
                    .filter_map(|to| {
                        let blocks = block_sources[to]
                            .iter()
                            .filter(|&&from| n[from] > 0 && n[to] > 0)
                            .count();
                        (blocks > 0).then_some((to, e[to] * blocks))
                    })
                    .collect()
            }
        };

        let c = config.conv_channels;
        let mut heads = Vec::new();
        let mut fc_in = 0;
        for (level, width) in levels {
            let kernel = params.add_glorot(format!("conv{level}.kernel"), c, width, width, c, rng);
            let bias = params.add(format!("conv{level}.bias"), uniform_bias(c, width, rng));
            let gamma = params.add(format!("bn{level}.gamma"), Matrix::filled(1, c, 1.0));
            let beta = params.add(format!("bn{level}.beta"), Matrix::zeros(1, c));
            let running_mean = params.add_buffer(format!("bn{level}.running_mean"), vec![0.0; c]);
            let running_var = params.add_buffer(format!("bn{level}.running_var"), vec![1.0; c]);
            heads.push(ConvHead {
                level,
                kernel,
                bias,
                gamma,
                beta,
                running_mean,
                running_var,
            });
            fc_in += c * n[level];
        }
        let fc1_w = params.add_glorot("fc1.w", config.hidden, fc_in, fc_in, config.hidden, rng);
        let fc1_b = params.add("fc1.b", uniform_bias(config.hidden, fc_in, rng));
        let fc2_w = params.add_glorot(
            "fc2.w",
            config.classes,
            config.hidden,
            config.hidden,
            config.classes,
            rng,
        );
        let fc2_b = params.add("fc2.b", uniform_bias(config.classes, config.hidden, rng));

        let model = Self {
            variant,
            config,
            ops,
            scconv: scconv_ids,
            gconv: gconv_id,
            heads,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
        };
        Ok((model, params))
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn operators(&self) -> &OperatorSet {
        &self.ops
    }

    /// Records the forward pass on `tape` and returns the `batch × classes`
    /// logits. Dropout is applied only in training mode when `rng` is given.
    pub fn forward<'a, R: Rng>(
        &'a self,
        tape: &mut Tape<'a>,
        batch: &Batch,
        mode: Mode,
        rng: Option<&mut R>,
    ) -> Result<Var> {
        let b = batch.len();
        let n = self.ops.counts;
        if batch.x0.shape() != (b * n[0], self.config.input_features) {
            return Err(Error::shape(
                "batch X0",
                format!("{}x{}", b * n[0], self.config.input_features),
                format!("{}x{}", batch.x0.rows(), batch.x0.cols()),
            ));
        }
        let x0 = tape.constant(batch.x0.clone());
        let levels: [Option<Var>; 3] = match self.variant {
            Variant::Conv1dFc => [Some(x0), None, None],
            Variant::GconvConv1dFc => {
                let w = tape.param(self.gconv.expect("gconv weight"));
                [Some(gconv(tape, &self.ops, x0, w, b, Activation::Relu)?), None, None]
            }
            Variant::ScconvConv1dFc => {
                let ids = self.scconv.expect("scconv weights");
                let x1 = tape.constant(Matrix::filled(b * n[1], 1, 1.0));
                let x2 = tape.constant(Matrix::filled(b * n[2], 1, 1.0));
                let w = ScConvVars {
                    w00: tape.param(ids.w00),
                    w10: tape.param(ids.w10),
                    w01: tape.param(ids.w01),
                    w11: tape.param(ids.w11),
                    w21: tape.param(ids.w21),
                    w12: tape.param(ids.w12),
                    w22: tape.param(ids.w22),
                };
                let input = FeatureVars {
                    levels: [Some(x0), Some(x1), Some(x2)],
                };
                scconv(tape, &self.ops, &input, &w, b, Activation::Relu)?.levels
            }
        };

        let mut flat = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let x = levels[head.level].expect("conv head on a present level");
            let kernel = tape.param(head.kernel);
            let bias = tape.param(head.bias);
            let h = tape.matmul_t(x, kernel);
            let h = tape.add_row_bias(h, bias);
            let gamma = tape.param(head.gamma);
            let beta = tape.param(head.beta);
            let h = tape.batch_norm(
                h,
                gamma,
                beta,
                (head.running_mean, head.running_var),
                mode,
                self.config.bn_momentum,
                self.config.bn_eps,
            );
            let h = tape.relu(h);
            flat.push(tape.flatten_blocks(h, b));
        }
        let features = tape.concat_cols(&flat);

        let w1 = tape.param(self.fc1_w);
        let b1 = tape.param(self.fc1_b);
        let h = tape.matmul_t(features, w1);
        let h = tape.add_row_bias(h, b1);
        let mut h = tape.relu(h);
        if let (Mode::Train, Some(rng)) = (mode, rng) {
            if self.config.dropout > 0.0 {
                let (r, c) = tape.shape(h);
                h = tape.dropout(h, dropout_mask(r * c, self.config.dropout, rng));
            }
        }
        let w2 = tape.param(self.fc2_w);
        let b2 = tape.param(self.fc2_b);
        let out = tape.matmul_t(h, w2);
        Ok(tape.add_row_bias(out, b2))
    }

    /// Forward and backward pass on one batch.
    pub fn pass<R: Rng>(
        &self,
        params: &ModelParams,
        batch: &Batch,
        mode: Mode,
        rng: Option<&mut R>,
        fault: Option<BackwardFault>,
    ) -> Result<PassResult> {
        let mut tape = Tape::with_params(params);
        if let Some(fault) = fault {
            tape.inject_fault(fault);
        }
        let logits = self.forward(&mut tape, batch, mode, rng)?;
        let loss = tape.cross_entropy(logits, &batch.labels);
        let grads = tape.backward(loss);
        Ok(PassResult {
            loss: tape.value(loss)[(0, 0)],
            grads: grads.param_grads(&tape),
            running_updates: tape.running_stat_updates().to_vec(),
        })
    }

    /// Mean cross-entropy on `batch` without recording gradients.
    pub fn loss(&self, params: &ModelParams, batch: &Batch, mode: Mode) -> Result<f64> {
        let mut tape = Tape::with_params(params);
        let logits = self.forward::<rand_chacha::ChaCha8Rng>(&mut tape, batch, mode, None)?;
        let loss = tape.cross_entropy(logits, &batch.labels);
        Ok(tape.value(loss)[(0, 0)])
    }

    /// Evaluation-mode logits, `batch × classes`.
    pub fn predict(&self, params: &ModelParams, batch: &Batch) -> Result<Matrix> {
        let mut tape = Tape::with_params(params);
        let logits = self.forward::<rand_chacha::ChaCha8Rng>(&mut tape, batch, Mode::Eval, None)?;
        Ok(tape.value(logits).clone())
    }

    /// One optimization step in training mode. Returns the batch loss.
    pub fn train_step<R: Rng>(&self, params: &mut ModelParams, batch: &Batch, adam: &Adam, rng: &mut R) -> Result<f64> {
        let pass = self.pass(params, batch, Mode::Train, Some(rng), None)?;
        params.zero_grad();
        for (id, g) in &pass.grads {
            params.param_mut(*id).grad.add_assign(g);
        }
        apply_running_updates(params, &pass.running_updates);
        adam.step(params);
        Ok(pass.loss)
    }
}

/// Bias row drawn from `U(−1/√fan_in, 1/√fan_in)`.
fn uniform_bias<R: Rng>(len: usize, fan_in: usize, rng: &mut R) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::from_fn(1, len, |_, _| rng.gen_range(-bound..=bound))
}

/// Folds batch statistics into the running averages.
pub fn apply_running_updates(params: &mut ModelParams, updates: &[RunningStatUpdate]) {
    for u in updates {
        let m = u.momentum;
        for (r, &b) in params.buffer_mut(u.mean).value.iter_mut().zip(&u.batch_mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in params.buffer_mut(u.var).value.iter_mut().zip(&u.batch_var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

/// Index of the largest logit in each row.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            logits
                .row(i)
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (j, &v)| if v > best.1 { (j, v) } else { best },
                )
                .0
        })
        .collect()
}
