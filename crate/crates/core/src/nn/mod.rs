//! Differentiable layers on simplicial 2-complexes and the models built
//! from them.

pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod optim;
pub mod params;
pub mod tape;

pub use layers::{
    batch_norm, conv1d_forward, cross_entropy, dropout_mask, fc_forward, gconv, gconv_forward, readout_concat, scconv,
    scconv_forward, Activation, BatchNormState, FcParams, FeatureVars, SCConvWeights, ScConvVars,
};
pub use model::{Batch, Model, ModelConfig, Variant};
pub use optim::Adam;
pub use params::{glorot_bound, BufferId, ModelParams, Param, ParamId};
pub use tape::{BackwardFault, Gradients, Mode, Tape, Var};

use crate::dense::Matrix;

/// Feature matrices on vertices, edges and triangles at one layer depth.
///
/// Edge and triangle features may be absent; a layer omits every block that
/// would read an absent matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    x0: Matrix,
    x1: Option<Matrix>,
    x2: Option<Matrix>,
    /// Layer depth `h` these features belong to.
    pub level: usize,
}

impl FeatureSet {
    pub fn new(x0: Matrix, x1: Option<Matrix>, x2: Option<Matrix>) -> Self {
        Self { x0, x1, x2, level: 0 }
    }

    pub fn x0(&self) -> &Matrix {
        &self.x0
    }

    pub fn x1(&self) -> Option<&Matrix> {
        self.x1.as_ref()
    }

    pub fn x2(&self) -> Option<&Matrix> {
        self.x2.as_ref()
    }

    pub fn get(&self, k: usize) -> Option<&Matrix> {
        match k {
            0 => Some(&self.x0),
            1 => self.x1.as_ref(),
            2 => self.x2.as_ref(),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        (0..3).filter_map(|k| self.get(k)).all(Matrix::is_finite)
    }
}
